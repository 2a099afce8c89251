//! The `scd` command line: one subcommand per pipeline stage plus the
//! end-to-end `curriculum`. Settings come from a TOML file (`--config` or
//! `SCD_CONFIG`) and flags override them.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error. On success the last line on standard output is a
//! single JSON object.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::corpus::{
    block_of, generate_synthetic_corpus, load_dataset, read_unlabeled_pool, save_dataset, Block, CorpusError, Dataset,
    SyntheticConfig,
};
use crate::curriculum::{load_manifest, run_curriculum, CurriculumConfig, CurriculumError, OpenMode, ProgressEvent, Run};
use crate::evaluate::{aggregate_runs, emit_plot_data, load_report, save_report};
use crate::langmix::{build_code_mixed_split, BilingualLexicon, Pos, SwitchPolicy, TransliterationTable};
use crate::translate::stub::{StubBehavior, StubServer};

#[derive(Debug, Parser)]
#[command(name = "scd", version, about = "Curriculum script distillation for cross-lingual VQA")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file; defaults to $SCD_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory holding examples.jsonl and features.jsonl.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub target_lang: Option<String>,
    #[arg(long, global = true, conflicts_with_all = ["select_n", "confidence_threshold"])]
    pub select_frac: Option<f64>,
    #[arg(long, global = true, conflicts_with = "confidence_threshold")]
    pub select_n: Option<usize>,
    #[arg(long, global = true)]
    pub confidence_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub sep: Option<String>,
    #[arg(long, global = true, value_parser = ["source-first", "target-first"])]
    pub order: Option<String>,
    #[arg(long, global = true, value_parser = ["union", "selected-only"])]
    pub augment: Option<String>,
    #[arg(long, global = true, value_parser = ["theta-prime", "theta"])]
    pub restart: Option<String>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true, value_parser = ["cross", "dual"])]
    pub arch: Option<String>,
    /// Skip stages whose inputs and outputs are unchanged.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Add a code-switched split for the target language to a dataset.
    Codeswitch {
        /// Romanize the swapped words.
        #[arg(long)]
        romanize: bool,
    },
    /// Translate the source training questions.
    Translate,
    /// Finetune θ′ on the source language, or φ with `--phi`.
    Finetune {
        #[arg(long)]
        phi: bool,
        #[arg(long, default_value_t = 1)]
        iter: usize,
    },
    /// Weakly label the translations from concatenated prompts.
    Weaklabel {
        #[arg(long, default_value_t = 1)]
        iter: usize,
    },
    /// Keep the most confident weak labels.
    Select {
        #[arg(long, default_value_t = 1)]
        iter: usize,
    },
    /// Evaluate θ′ and every φ and write metrics.
    Eval,
    /// Aggregate the reports of several run directories into one CSV.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "phi", value_parser = ["phi", "theta-prime"])]
        stage: String,
    },
    /// Run every stage end to end.
    Curriculum,
    /// Serve the translation wire protocol with a tagging stub.
    StubServer {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<CurriculumError> for CliError {
    fn from(e: CurriculumError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub examples: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Unlabeled target-language questions, one per line.
    pub unlabeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeSwitchConfig {
    /// Defaults to `builtin:<source>-<target>`.
    pub lexicon: Option<String>,
    /// Transliteration table for `--romanize`; chosen from the lexicon's
    /// script when unset.
    pub transliteration: Option<String>,
    pub pos: Vec<Pos>,
    pub p_swap: f64,
    pub romanize: bool,
}

impl Default for CodeSwitchConfig {
    fn default() -> Self {
        let p = SwitchPolicy::default();
        Self { lexicon: None, transliteration: None, pos: p.pos, p_swap: p.p_swap, romanize: false }
    }
}

/// The config file merged with command-line overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub synth: SyntheticConfig,
    pub codeswitch: CodeSwitchConfig,
    pub curriculum: CurriculumConfig,
    /// Directory relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn parse_choice<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(value.to_string())).map_err(|e| usage(format!("--{flag}: {e}")))
}

impl CliConfig {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        cfg.base_dir = base_dir.map(Path::to_path_buf);
        cfg.synth.base_dir = cfg.base_dir.clone();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    /// Reads the config named by `--config` or `SCD_CONFIG`, if any, and
    /// applies the flags.
    pub fn resolve(args: &GlobalArgs) -> Result<Self, CliError> {
        let path = args.config.clone().or_else(|| std::env::var_os("SCD_CONFIG").map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        cfg.apply(args)?;
        Ok(cfg)
    }

    fn rebase(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn rebase_spec(&self, spec: &str) -> String {
        if spec.starts_with("builtin:") {
            spec.to_string()
        } else {
            self.rebase(Path::new(spec)).display().to_string()
        }
    }

    fn apply(&mut self, a: &GlobalArgs) -> Result<(), CliError> {
        self.out = self.out.as_deref().map(|p| self.rebase(p));
        self.data.examples = self.data.examples.as_deref().map(|p| self.rebase(p));
        self.data.features = self.data.features.as_deref().map(|p| self.rebase(p));
        self.data.unlabeled = self.data.unlabeled.as_deref().map(|p| self.rebase(p));
        self.curriculum.translator.lexicon = self.curriculum.translator.lexicon.as_deref().map(|s| self.rebase_spec(s));
        self.codeswitch.lexicon = self.codeswitch.lexicon.as_deref().map(|s| self.rebase_spec(s));
        self.codeswitch.transliteration = self.codeswitch.transliteration.as_deref().map(|s| self.rebase_spec(s));

        if let Some(o) = &a.out {
            self.out = Some(o.clone());
        }
        if let Some(d) = &a.data {
            self.data.examples = Some(d.join("examples.jsonl"));
            self.data.features = Some(d.join("features.jsonl"));
        }
        if let Some(s) = a.seed.or(self.seed) {
            self.seed = Some(s);
            self.curriculum.seed = s;
        }
        let c = &mut self.curriculum;
        if let Some(t) = &a.target_lang {
            c.target_lang = t.clone();
        }
        if a.select_frac.is_some() || a.select_n.is_some() || a.confidence_threshold.is_some() {
            c.select_frac = a.select_frac;
            c.select_n = a.select_n;
            c.confidence_threshold = a.confidence_threshold;
        }
        if let Some(s) = &a.sep {
            c.sep = s.clone();
        }
        if let Some(o) = &a.order {
            c.order = parse_choice("order", o)?;
        }
        if let Some(v) = &a.augment {
            c.augment = parse_choice("augment", v)?;
        }
        if let Some(v) = &a.restart {
            c.restart = parse_choice("restart", v)?;
        }
        if let Some(n) = a.iterations {
            c.iterations = n;
        }
        if let Some(v) = &a.arch {
            c.model.arch = v.parse().map_err(usage)?;
        }
        c.validate().map_err(CliError::from)
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| usage("no output directory: pass --out or set `out` in the config"))
    }

    fn dataset(&self) -> Result<Dataset, CliError> {
        let examples = self.data.examples.as_deref().ok_or_else(|| usage("data.examples is not set (or pass --data)"))?;
        let features = self.data.features.as_deref().ok_or_else(|| usage("data.features is not set (or pass --data)"))?;
        let mut ds = load_dataset(examples, features).map_err(|e| match e {
            CorpusError::Io { .. } => usage(format!("data: {e}")),
            other => runtime(other),
        })?;
        if let Some(p) = &self.data.unlabeled {
            ds.unlabeled = read_unlabeled_pool(p).map_err(|e| usage(format!("data.unlabeled: {e}")))?;
        }
        Ok(ds)
    }
}

fn emit_line(stdout: &mut dyn Write, v: &Value) -> Result<(), CliError> {
    writeln!(stdout, "{v}").map_err(runtime)
}

fn synth(cfg: &CliConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let s = &cfg.synth;
    s.validate().map_err(|e| usage(format!("synth: {e}")))?;
    for (i, l) in s.languages.iter().enumerate() {
        BilingualLexicon::resolve(&l.lexicon, "en", &l.code, s.base_dir.as_deref())
            .map_err(|e| usage(format!("synth.languages[{i}].lexicon = {:?}: {e}", l.lexicon)))?;
    }
    let seed = cfg.seed.unwrap_or(0);
    let ds = generate_synthetic_corpus(s, seed).map_err(runtime)?;
    let (examples, features) = (out.join("examples.jsonl"), out.join("features.jsonl"));
    let hash = save_dataset(&ds, &examples, &features).map_err(runtime)?;
    let counts: serde_json::Map<String, Value> =
        ds.split_counts().into_iter().map(|(k, v)| (k.as_str().to_string(), json!(v))).collect();
    emit_line(
        stdout,
        &json!({"dataset_hash": hash, "seed": seed, "examples": examples, "features": features, "languages": ds.languages(), "splits": counts}),
    )
}

fn codeswitch(cfg: &CliConfig, romanize: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let ds = cfg.dataset()?;
    let c = &cfg.curriculum;
    let cs = &cfg.codeswitch;
    let spec = cs.lexicon.clone().unwrap_or_else(|| format!("builtin:{}-{}", c.source_lang, c.target_lang));
    let lexicon = BilingualLexicon::resolve(&spec, &c.source_lang, &c.target_lang, None)
        .map_err(|e| usage(format!("codeswitch.lexicon = {spec:?}: {e}")))?;
    let table = if romanize || cs.romanize {
        let spec = match &cs.transliteration {
            Some(s) => s.clone(),
            None => {
                let block = lexicon.iter().flat_map(|(_, e)| e.target.chars()).map(block_of).find(|b| *b != Block::Latin);
                match block {
                    Some(Block::Devanagari) => "builtin:devanagari".into(),
                    Some(Block::Bengali) => "builtin:bengali".into(),
                    _ => return Err(usage("codeswitch.transliteration is not set and the lexicon script has no builtin table")),
                }
            }
        };
        Some(TransliterationTable::resolve(&spec, None).map_err(|e| usage(format!("codeswitch.transliteration = {spec:?}: {e}")))?)
    } else {
        None
    };
    let policy = SwitchPolicy { pos: cs.pos.clone(), p_swap: cs.p_swap, seed: c.seed };
    let split = build_code_mixed_split(&ds, &lexicon, table.as_ref(), &policy).map_err(runtime)?;
    let language = split.dataset.languages().into_iter().next().unwrap_or_default();
    let added = split.dataset.examples.len();
    let merged = ds.merge(&split.dataset).map_err(runtime)?;
    let hash = save_dataset(&merged, &out.join("examples.jsonl"), &out.join("features.jsonl")).map_err(runtime)?;
    emit_line(
        stdout,
        &json!({"dataset_hash": hash, "language": language, "added": added, "excluded": split.excluded, "romanized": table.is_some()}),
    )
}

fn progress_to(stderr: &mut dyn Write) -> impl FnMut(&ProgressEvent) + '_ {
    move |e| {
        let _ = writeln!(stderr, "{e}");
    }
}

fn stage_command(cfg: &CliConfig, command: &Command, resume: bool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let ds = cfg.dataset()?;
    let mode = if resume { OpenMode::Resume } else { OpenMode::Continue };
    let mut run = Run::open(&out, cfg.curriculum.clone(), &ds, mode)?;
    run.on_progress(progress_to(stderr));
    let line = match command {
        Command::Translate => {
            let records = run.translate()?;
            json!({"stage": "translate", "translations": records.len(), "translator": run.manifest().translator})
        }
        Command::Finetune { phi: false, .. } => {
            if run.manifest().stage("init").is_none() || !out.join("checkpoints/theta.ckpt").exists() {
                run.init()?;
            }
            let tp = run.finetune_source()?;
            json!({"stage": "finetune_source", "final_loss": tp.final_loss, "training": run.manifest().training.get("theta_prime")})
        }
        Command::Finetune { phi: true, iter } => {
            let phi = run.finetune_target(*iter)?;
            json!({"stage": format!("finetune_iter{iter}"), "final_loss": phi.final_loss})
        }
        Command::Weaklabel { iter } => {
            let labels = run.weaklabel(*iter)?;
            let mean = labels.iter().map(|l| l.confidence).sum::<f64>() / labels.len().max(1) as f64;
            json!({"stage": format!("weaklabel_iter{iter}"), "labels": labels.len(), "mean_confidence": mean})
        }
        Command::Select { iter } => {
            let selected = run.select(*iter)?;
            let min = selected.last().map(|l| l.confidence);
            json!({"stage": format!("select_iter{iter}"), "selected": selected.len(), "min_confidence": min})
        }
        Command::Eval => serde_json::to_value(run.evaluate()?).map_err(runtime)?,
        _ => unreachable!("not a stage command"),
    };
    drop(run);
    emit_line(stdout, &line)
}

fn report(cfg: &CliConfig, runs: &[PathBuf], stage: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let mut reports = Vec::with_capacity(runs.len());
    for dir in runs {
        let file = match stage {
            "theta-prime" => "reports/theta_prime.json".to_string(),
            _ => {
                let m = load_manifest(dir)?;
                format!("reports/phi_iter{}.json", m.config.iterations)
            }
        };
        let path = dir.join(&file);
        if !path.exists() {
            return Err(usage(format!("missing artifact {}", path.display())));
        }
        reports.push(load_report(&path).map_err(runtime)?);
    }
    let agg = aggregate_runs(&reports).map_err(runtime)?;
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let csv = out.join("report.csv");
    emit_plot_data(&agg, &csv).map_err(runtime)?;
    save_report(&agg, &out.join("report.json")).map_err(runtime)?;
    emit_line(
        stdout,
        &json!({
            "runs": reports.len(),
            "csv": csv,
            "overall": agg.overall,
            "roman_gap": agg.roman_gap,
            "cs_gap": agg.cs_gap,
        }),
    )
}

fn curriculum(cfg: &CliConfig, resume: bool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?.to_path_buf();
    let ds = cfg.dataset()?;
    let manifest = run_curriculum(&ds, &cfg.curriculum, &out, resume, Some(Box::new(progress_to(stderr))))?;
    let mut line = serde_json::to_value(&manifest.metrics).map_err(runtime)?;
    if let Value::Object(m) = &mut line {
        m.insert("artifact_digest".into(), json!(manifest.artifact_digest));
        m.insert("out".into(), json!(out));
    }
    emit_line(stdout, &line)
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = CliConfig::resolve(&cli.global)?;
    match &cli.command {
        Command::Synth => synth(&cfg, stdout),
        Command::Codeswitch { romanize } => codeswitch(&cfg, *romanize, stdout),
        Command::Report { runs, stage } => report(&cfg, runs, stage, stdout),
        Command::Curriculum => curriculum(&cfg, cli.global.resume, stdout, stderr),
        Command::StubServer { addr } => {
            let server = StubServer::bind(addr, StubBehavior::default()).map_err(|e| usage(format!("--addr {addr}: {e}")))?;
            writeln!(stderr, "serving on {}", server.url()).map_err(runtime)?;
            server.join();
            Ok(())
        }
        stage => stage_command(&cfg, stage, cli.global.resume, stdout, stderr),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (mut stdout, mut stderr) = (std::io::stdout().lock(), std::io::stderr());
    match execute(&cli, &mut stdout, &mut stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
