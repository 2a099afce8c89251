use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    select_high_confidence, weak_annotate, AugmentMode, CurriculumConfig, CurriculumError, RestartMode,
    TranslatorKind, WeakLabel,
};
use crate::corpus::{id_stem, Dataset, QAExample, Split};
use crate::evaluate::{evaluate_report, save_report, vqa_accuracy, EvalReport};
use crate::langmix::BilingualLexicon;
use crate::model::{
    finetune, init_answerer, load_checkpoint, save_checkpoint, Stage, TrainExample, TrainReport,
};
use crate::translate::{
    translate_batch, MockTranslator, RemoteTranslator, TranslationCache, TranslationRequest, TranslatorBackend,
};
use crate::util::{derive_seed, sha256_hex};
use crate::Checkpoint;

pub const MANIFEST_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";
const THETA: &str = "checkpoints/theta.ckpt";
const THETA_PRIME: &str = "checkpoints/theta_prime.ckpt";
const TRANSLATIONS: &str = "translations.jsonl";
const METRICS: &str = "metrics.json";

fn phi_file(k: usize) -> String {
    format!("checkpoints/phi_iter{k}.ckpt")
}

fn weak_file(k: usize) -> String {
    if k == 1 {
        "weak_labels.jsonl".into()
    } else {
        format!("weak_labels_iter{k}.jsonl")
    }
}

fn train_set_file(k: usize) -> String {
    format!("train_set_iter{k}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of everything the stage's output depends on.
    pub key: String,
    /// Output file → SHA-256 as written by this stage.
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub source_lang: String,
    pub target_lang: String,
    pub arch: String,
    pub seed: u64,
    /// θ′ on the source-language evaluation split.
    pub source_accuracy: f64,
    /// θ′ on the target-language evaluation split.
    pub zero_shot_accuracy: f64,
    /// φ of each iteration on the target-language evaluation split.
    pub phi_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub lift: f64,
    /// θ′ on the translated training questions alone, no prompt.
    pub target_only_pool_accuracy: f64,
    /// Accuracy of every weak label, and of the selected ones, per iteration.
    pub weak_label_accuracy: Vec<f64>,
    pub selected_label_accuracy: Vec<Option<f64>>,
    pub selected: Vec<usize>,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub status: RunStatus,
    pub config: CurriculumConfig,
    pub dataset_hash: String,
    /// Hash of the unlabeled pool. It is recorded but no stage reads it.
    pub unlabeled_hash: Option<String>,
    pub translator: Option<String>,
    pub stages: Vec<StageRecord>,
    /// Latest SHA-256 of every artifact, keyed by path in the run directory.
    pub hashes: BTreeMap<String, String>,
    pub training: BTreeMap<String, TrainReport>,
    pub metrics: Option<Metrics>,
    /// Digest of everything above except wall times.
    pub artifact_digest: String,
}

impl RunManifest {
    fn new(config: CurriculumConfig, dataset: &Dataset) -> Self {
        let unlabeled_hash =
            (!dataset.unlabeled.is_empty()).then(|| sha256_hex(dataset.unlabeled.join("\n").as_bytes()));
        Self {
            format_version: MANIFEST_VERSION,
            status: RunStatus::Running,
            config,
            dataset_hash: dataset.content_hash(),
            unlabeled_hash,
            translator: None,
            stages: Vec::new(),
            hashes: BTreeMap::new(),
            training: BTreeMap::new(),
            metrics: None,
            artifact_digest: String::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn compute_digest(&self) -> String {
        let stages: Vec<_> = self.stages.iter().map(|s| json!({"name": s.name, "key": s.key, "outputs": s.outputs})).collect();
        let v = json!({
            "format_version": self.format_version,
            "status": self.status,
            "config": self.config,
            "dataset_hash": self.dataset_hash,
            "unlabeled_hash": self.unlabeled_hash,
            "translator": self.translator,
            "stages": stages,
            "hashes": self.hashes,
            "training": self.training,
            "metrics": self.metrics,
        });
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, CurriculumError> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|_| CurriculumError::MissingArtifact(p.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CurriculumError::Validation(format!("{}: {e}", p.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub example_id: String,
    pub source: String,
    pub translation: String,
}

/// Composition of a target finetuning set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub source_ids: Vec<String>,
    pub weak_ids: Vec<String>,
    pub weak_weight: f64,
    pub on_prompt: bool,
}

fn io_err(path: &Path, e: impl fmt::Display) -> CurriculumError {
    CurriculumError::Io(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CurriculumError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CurriculumError> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).map_err(|e| io_err(path, e))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CurriculumError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CurriculumError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CurriculumError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

/// Exclusive claim on a run directory, released on drop. A lock left by
/// a process that no longer exists is taken over.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CurriculumError> {
        let path = dir.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let alive = holder
                        .trim()
                        .parse::<u32>()
                        .map(|pid| !Path::new("/proc").exists() || Path::new(&format!("/proc/{pid}")).exists())
                        .unwrap_or(true);
                    if alive {
                        return Err(CurriculumError::Locked(format!("{} held by process {}", path.display(), holder.trim())));
                    }
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(io_err(&path, e)),
            }
        }
        Err(CurriculumError::Locked(path.display().to_string()))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    /// Start a new manifest and recompute every stage.
    Fresh,
    /// Keep the manifest; skip stages whose inputs and outputs are unchanged.
    Resume,
    /// Keep the manifest and recompute the stages that are called. Used for
    /// running stages one at a time.
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgressStatus {
    Start,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressEvent {
    pub stage: String,
    pub status: ProgressStatus,
    pub wall_ms: u64,
    /// The stage was skipped on resume.
    pub resumed: bool,
}

impl fmt::Display for ProgressEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            ProgressStatus::Start => "start",
            ProgressStatus::Done => "done",
        };
        write!(f, "stage={} status={status} wall_ms={}", self.stage, self.wall_ms)?;
        if self.resumed {
            f.write_str(" resumed=true")?;
        }
        Ok(())
    }
}

type Progress<'a> = Box<dyn FnMut(&ProgressEvent) + 'a>;

/// One run directory. Every stage reads its inputs from the directory and
/// writes its outputs back, so stages may run in one process or several.
pub struct Run<'a> {
    dir: PathBuf,
    config: CurriculumConfig,
    dataset: &'a Dataset,
    manifest: RunManifest,
    mode: OpenMode,
    progress: Option<Progress<'a>>,
    _lock: RunLock,
}

fn key_of(stage: &str, inputs: serde_json::Value) -> String {
    sha256_hex(json!({"stage": stage, "inputs": inputs}).to_string().as_bytes())
}

impl<'a> Run<'a> {
    pub fn open(dir: &Path, config: CurriculumConfig, dataset: &'a Dataset, mode: OpenMode) -> Result<Self, CurriculumError> {
        config.validate()?;
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let lock = RunLock::acquire(dir)?;
        let fresh = RunManifest::new(config.clone(), dataset);
        let manifest = match mode {
            OpenMode::Fresh => fresh,
            OpenMode::Resume | OpenMode::Continue => match load_manifest(dir) {
                Ok(mut m) => {
                    if mode == OpenMode::Continue && m.dataset_hash != fresh.dataset_hash {
                        return Err(CurriculumError::Config(format!(
                            "{} was built from a different dataset",
                            dir.display()
                        )));
                    }
                    m.config = config.clone();
                    m.dataset_hash = fresh.dataset_hash;
                    m.unlabeled_hash = fresh.unlabeled_hash;
                    m
                }
                Err(CurriculumError::MissingArtifact(_)) => fresh,
                Err(e) => return Err(e),
            },
        };
        if mode == OpenMode::Fresh {
            for stale in [MANIFEST, METRICS] {
                let _ = fs::remove_file(dir.join(stale));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), config, dataset, manifest, mode, progress: None, _lock: lock })
    }

    pub fn on_progress(&mut self, f: impl FnMut(&ProgressEvent) + 'a) {
        self.progress = Some(Box::new(f));
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn emit(&mut self, stage: &str, status: ProgressStatus, wall_ms: u64, resumed: bool) {
        if let Some(p) = self.progress.as_mut() {
            p(&ProgressEvent { stage: stage.to_string(), status, wall_ms, resumed });
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn save_manifest(&mut self) -> Result<(), CurriculumError> {
        self.manifest.artifact_digest = self.manifest.compute_digest();
        let p = self.path(MANIFEST);
        write_json(&p, &self.manifest)
    }

    /// Hash of an input artifact as produced by `stage`.
    fn upstream(&self, stage: &str, file: &str) -> Result<String, CurriculumError> {
        let missing = || CurriculumError::MissingArtifact(file.to_string());
        let recorded = self.manifest.stage(stage).and_then(|s| s.outputs.get(file)).ok_or_else(missing)?;
        if !self.path(file).exists() {
            return Err(missing());
        }
        Ok(recorded.clone())
    }

    fn reusable(&self, name: &str, key: &str) -> bool {
        let Some(rec) = self.manifest.stage(name) else { return false };
        rec.key == key
            && rec.outputs.keys().all(|f| {
                let current = file_hash(&self.path(f));
                current.is_some() && current.as_ref() == self.manifest.hashes.get(f)
            })
    }

    fn stage<T>(
        &mut self,
        name: &str,
        key: String,
        outputs: &[String],
        compute: impl FnOnce(&mut Self) -> Result<T, CurriculumError>,
        load: impl FnOnce(&Self) -> Result<T, CurriculumError>,
    ) -> Result<T, CurriculumError> {
        self.emit(name, ProgressStatus::Start, 0, false);
        let started = Instant::now();
        if self.mode == OpenMode::Resume && self.reusable(name, &key) {
            if let Ok(v) = load(self) {
                self.emit(name, ProgressStatus::Done, started.elapsed().as_millis() as u64, true);
                return Ok(v);
            }
        }
        self.manifest.status = RunStatus::Running;
        match compute(self) {
            Ok(v) => {
                let wall_ms = started.elapsed().as_millis() as u64;
                let mut hashes = BTreeMap::new();
                for f in outputs {
                    let h = file_hash(&self.path(f)).ok_or_else(|| CurriculumError::MissingArtifact(f.clone()))?;
                    self.manifest.hashes.insert(f.clone(), h.clone());
                    hashes.insert(f.clone(), h);
                }
                let rec = StageRecord { name: name.to_string(), key, outputs: hashes, wall_ms };
                match self.manifest.stages.iter_mut().find(|s| s.name == name) {
                    Some(existing) => *existing = rec,
                    None => self.manifest.stages.push(rec),
                }
                self.save_manifest()?;
                self.emit(name, ProgressStatus::Done, wall_ms, false);
                Ok(v)
            }
            Err(e) => {
                self.manifest.status = RunStatus::Failed { stage: name.to_string(), error: e.to_string() };
                let _ = self.save_manifest();
                Err(CurriculumError::StageFailed { stage: name.to_string(), source: Box::new(e) })
            }
        }
    }

    fn source_train(&self) -> Result<Vec<&'a QAExample>, CurriculumError> {
        let exs = self.dataset.select(&self.config.source_lang, Split::Train);
        if exs.is_empty() {
            return Err(CurriculumError::Validation(format!(
                "dataset has no {} training examples",
                self.config.source_lang
            )));
        }
        Ok(exs)
    }

    fn image(&self, ex: &QAExample) -> Result<&'a [f64], CurriculumError> {
        self.dataset
            .feature(&ex.image_id)
            .ok_or_else(|| CurriculumError::Validation(format!("{}: no feature for {}", ex.example_id, ex.image_id)))
    }

    /// Source training examples with a modal answer in the vocabulary.
    fn source_training_examples(&self) -> Result<(Vec<String>, Vec<TrainExample<'a>>), CurriculumError> {
        let mut ids = Vec::new();
        let mut out = Vec::new();
        for ex in self.source_train()? {
            if let Some(answer) = self.dataset.vocab.index_of(&ex.modal_answer()) {
                ids.push(ex.example_id.clone());
                out.push(TrainExample { question: ex.question.as_str().into(), image: self.image(ex)?, answer, weight: 1.0 });
            }
        }
        Ok((ids, out))
    }

    fn load_ckpt(&self, rel: &str) -> Result<Checkpoint, CurriculumError> {
        Ok(load_checkpoint(&self.path(rel))?)
    }

    /// Stage `init`: θ.
    pub fn init(&mut self) -> Result<Checkpoint, CurriculumError> {
        let dims = self.config.model.dims(self.dataset.features.dim(), self.dataset.vocab.len());
        let seed = derive_seed(self.config.seed, "init");
        let key = key_of("init", json!({"arch": self.config.model.arch, "dims": dims, "seed": seed}));
        let arch = self.config.model.arch;
        self.stage(
            "init",
            key,
            &[THETA.into()],
            |run| {
                let theta = init_answerer::<f64>(arch, dims, seed)?;
                save_checkpoint(&theta, &run.path(THETA))?;
                Ok(theta)
            },
            |run| run.load_ckpt(THETA),
        )
    }

    /// Stage `finetune_source`: θ′ from θ on the source training split.
    pub fn finetune_source(&mut self) -> Result<Checkpoint, CurriculumError> {
        let theta = self.upstream("init", THETA)?;
        let hyper = self.config.train.hyper(derive_seed(self.config.seed, "finetune_source"));
        let key = key_of(
            "finetune_source",
            json!({"theta": theta, "hyper": hyper, "dataset": self.manifest.dataset_hash, "source": self.config.source_lang}),
        );
        self.stage(
            "finetune_source",
            key,
            &[THETA_PRIME.into()],
            |run| {
                let theta = run.load_ckpt(THETA)?;
                let (_, examples) = run.source_training_examples()?;
                let (tp, report) = finetune(&theta, &examples, &hyper)?;
                let tp = tp.with_stage(Stage::ThetaPrime);
                save_checkpoint(&tp, &run.path(THETA_PRIME))?;
                run.manifest.training.insert("theta_prime".into(), report);
                Ok(tp)
            },
            |run| run.load_ckpt(THETA_PRIME),
        )
    }

    fn backend(&self) -> Result<Option<Box<dyn TranslatorBackend>>, CurriculumError> {
        let t = &self.config.translator;
        Ok(match t.kind {
            TranslatorKind::Mock => {
                let spec = t
                    .lexicon
                    .clone()
                    .unwrap_or_else(|| format!("builtin:{}-{}", self.config.source_lang, self.config.target_lang));
                let lexicon = BilingualLexicon::resolve(&spec, &self.config.source_lang, &self.config.target_lang, None)
                    .map_err(|e| CurriculumError::Config(format!("translator.lexicon: {e}")))?;
                let seed = derive_seed(self.config.seed, "translate");
                Some(Box::new(MockTranslator::new(lexicon, t.noise_rate, seed)?))
            }
            TranslatorKind::Remote => {
                let cfg = t.remote.clone().ok_or_else(|| CurriculumError::Config("translator.remote is not set".into()))?;
                Some(Box::new(RemoteTranslator::new(cfg)))
            }
            TranslatorKind::Parallel => None,
        })
    }

    fn parallel_translations(&self, sources: &[&QAExample]) -> Result<Vec<String>, CurriculumError> {
        let by_stem: HashMap<&str, &str> = self
            .dataset
            .select(&self.config.target_lang, Split::Train)
            .into_iter()
            .map(|e| (id_stem(&e.example_id), e.question.as_str()))
            .collect();
        sources
            .iter()
            .map(|s| {
                by_stem.get(id_stem(&s.example_id)).map(|q| q.to_string()).ok_or_else(|| {
                    CurriculumError::Validation(format!(
                        "no {} rendering of {} in the dataset",
                        self.config.target_lang, s.example_id
                    ))
                })
            })
            .collect()
    }

    /// Stage `translate`: W^t for the source training questions.
    pub fn translate(&mut self) -> Result<Vec<TranslationRecord>, CurriculumError> {
        let key = key_of(
            "translate",
            json!({
                "translator": self.config.translator,
                "source": self.config.source_lang,
                "target": self.config.target_lang,
                "seed": derive_seed(self.config.seed, "translate"),
                "dataset": self.manifest.dataset_hash,
            }),
        );
        self.stage(
            "translate",
            key,
            &[TRANSLATIONS.into()],
            |run| {
                let sources = run.source_train()?;
                let (translations, describe) = match run.backend()? {
                    Some(backend) => {
                        let describe = backend.describe();
                        let cache_path = run.path(&format!("cache/translations-{}.jsonl", &sha256_hex(describe.as_bytes())[..12]));
                        let cache = TranslationCache::open(&cache_path)?;
                        let requests = sources
                            .iter()
                            .map(|e| TranslationRequest::new(e.question.clone(), &run.config.source_lang, &run.config.target_lang))
                            .collect::<Result<Vec<_>, _>>()?;
                        (translate_batch(&requests, backend.as_ref(), &cache)?, describe)
                    }
                    None => (run.parallel_translations(&sources)?, "parallel(dataset)".to_string()),
                };
                let records: Vec<TranslationRecord> = sources
                    .iter()
                    .zip(translations)
                    .map(|(e, t)| TranslationRecord {
                        example_id: e.example_id.clone(),
                        source: e.question.clone(),
                        translation: t,
                    })
                    .collect();
                write_jsonl(&run.path(TRANSLATIONS), &records)?;
                run.manifest.translator = Some(describe);
                Ok(records)
            },
            |run| read_jsonl(&run.path(TRANSLATIONS)),
        )
    }

    fn annotator_file(k: usize) -> (String, String) {
        if k == 1 {
            ("finetune_source".into(), THETA_PRIME.into())
        } else {
            (format!("finetune_iter{}", k - 1), phi_file(k - 1))
        }
    }

    fn aligned_sources(&self, records: &[TranslationRecord]) -> Result<Vec<&'a QAExample>, CurriculumError> {
        let sources = self.source_train()?;
        if sources.len() != records.len()
            || sources.iter().zip(records).any(|(s, r)| s.example_id != r.example_id || s.question != r.source)
        {
            return Err(CurriculumError::Validation(format!(
                "{TRANSLATIONS} does not match the dataset's {} training split",
                self.config.source_lang
            )));
        }
        Ok(sources)
    }

    /// Stage `weaklabel_iterK`: weak labels from the previous model on the
    /// concatenated prompts.
    pub fn weaklabel(&mut self, k: usize) -> Result<Vec<WeakLabel>, CurriculumError> {
        let (model_stage, model_file) = Self::annotator_file(k);
        let model = self.upstream(&model_stage, &model_file)?;
        let translations = self.upstream("translate", TRANSLATIONS)?;
        let name = format!("weaklabel_iter{k}");
        let key = key_of(
            &name,
            json!({
                "model": model,
                "translations": translations,
                "sep": self.config.sep,
                "order": self.config.order,
                "dataset": self.manifest.dataset_hash,
            }),
        );
        let out = weak_file(k);
        let out2 = out.clone();
        self.stage(
            &name,
            key,
            &[out.clone()],
            |run| {
                let model = run.load_ckpt(&model_file)?;
                let records: Vec<TranslationRecord> = read_jsonl(&run.path(TRANSLATIONS))?;
                let sources = run.aligned_sources(&records)?;
                let translations: Vec<String> = records.into_iter().map(|r| r.translation).collect();
                let labels = weak_annotate(
                    &model,
                    &sources,
                    &translations,
                    &run.dataset.features,
                    &run.dataset.vocab,
                    &run.config.sep,
                    run.config.order,
                )?;
                write_jsonl(&run.path(&out), &labels)?;
                Ok(labels)
            },
            |run| {
                let mut labels: Vec<WeakLabel> = read_jsonl(&run.path(&out2))?;
                labels.iter_mut().for_each(|l| l.selected = false);
                Ok(labels)
            },
        )
    }

    /// Stage `select_iterK`: marks the most confident weak labels.
    pub fn select(&mut self, k: usize) -> Result<Vec<WeakLabel>, CurriculumError> {
        let file = weak_file(k);
        let labels_hash = self.upstream(&format!("weaklabel_iter{k}"), &file)?;
        let name = format!("select_iter{k}");
        let selection = self.config.selection();
        let key = key_of(&name, json!({"labels": labels_hash, "selection": format!("{selection:?}")}));
        let f2 = file.clone();
        self.stage(
            &name,
            key,
            &[file.clone()],
            |run| {
                let mut labels: Vec<WeakLabel> = read_jsonl(&run.path(&file))?;
                labels.iter_mut().for_each(|l| l.selected = false);
                let selected = select_high_confidence(&mut labels, selection)?;
                write_jsonl(&run.path(&file), &labels)?;
                Ok(selected)
            },
            |run| {
                let labels: Vec<WeakLabel> = read_jsonl(&run.path(&f2))?;
                let mut selected: Vec<WeakLabel> = labels.into_iter().filter(|l| l.selected).collect();
                selected.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.example_id.cmp(&b.example_id)));
                Ok(selected)
            },
        )
    }

    /// Stage `finetune_iterK`: φ from the restart checkpoint on the
    /// augmented training set.
    pub fn finetune_target(&mut self, k: usize) -> Result<Checkpoint, CurriculumError> {
        let (restart_stage, restart_file) = match self.config.restart {
            RestartMode::ThetaPrime => ("finetune_source", THETA_PRIME),
            RestartMode::Theta => ("init", THETA),
        };
        let restart = self.upstream(restart_stage, restart_file)?;
        let labels_file = weak_file(k);
        let labels = self.upstream(&format!("select_iter{k}"), &labels_file)?;
        let name = format!("finetune_iter{k}");
        let hyper = self.config.train.hyper(derive_seed(self.config.seed, &name));
        let key = key_of(
            &name,
            json!({
                "restart": restart,
                "labels": labels,
                "augment": self.config.augment,
                "weak_weight": self.config.weak_weight,
                "on_prompt": self.config.train_on_prompt,
                "hyper": hyper,
                "source": self.config.source_lang,
                "dataset": self.manifest.dataset_hash,
            }),
        );
        let ckpt_file = phi_file(k);
        let set_file = train_set_file(k);
        let ck2 = ckpt_file.clone();
        self.stage(
            &name,
            key,
            &[set_file.clone(), ckpt_file.clone()],
            |run| {
                let start = run.load_ckpt(restart_file)?;
                let weak: Vec<WeakLabel> =
                    read_jsonl::<WeakLabel>(&run.path(&labels_file))?.into_iter().filter(|l| l.selected).collect();
                let sources: HashMap<&str, &QAExample> =
                    run.source_train()?.into_iter().map(|e| (e.example_id.as_str(), e)).collect();
                let (mut source_ids, mut examples) = match run.config.augment {
                    AugmentMode::Union => run.source_training_examples()?,
                    AugmentMode::SelectedOnly => (Vec::new(), Vec::new()),
                };
                if run.config.augment == AugmentMode::SelectedOnly {
                    source_ids.clear();
                }
                let mut weak_ids = Vec::with_capacity(weak.len());
                for l in &weak {
                    let src = sources.get(l.example_id.as_str()).ok_or_else(|| {
                        CurriculumError::Validation(format!("weak label for unknown example {}", l.example_id))
                    })?;
                    let text = if run.config.train_on_prompt { l.prompt.clone() } else { l.question_t.clone() };
                    examples.push(TrainExample {
                        question: text.into(),
                        image: run.image(src)?,
                        answer: l.answer_index,
                        weight: run.config.weak_weight,
                    });
                    weak_ids.push(l.example_id.clone());
                }
                if examples.is_empty() {
                    return Err(CurriculumError::Validation(
                        "target finetuning set is empty (no labels selected in selected-only mode)".into(),
                    ));
                }
                let set = TrainingSet {
                    source_ids,
                    weak_ids,
                    weak_weight: run.config.weak_weight,
                    on_prompt: run.config.train_on_prompt,
                };
                write_json(&run.path(&set_file), &set)?;
                let (phi, report) = finetune(&start, &examples, &hyper)?;
                let phi = phi.with_stage(Stage::Phi);
                save_checkpoint(&phi, &run.path(&ckpt_file))?;
                run.manifest.training.insert(format!("phi_iter{k}"), report);
                Ok(phi)
            },
            |run| run.load_ckpt(&ck2),
        )
    }

    fn report(&self, model: &Checkpoint, languages: &[String], stage: &str) -> Result<EvalReport, CurriculumError> {
        let split = self.config.eval.split;
        let examples: Vec<&QAExample> = languages.iter().flat_map(|l| self.dataset.select(l, split)).collect();
        if examples.is_empty() {
            return Err(CurriculumError::Validation(format!("no {languages:?} examples in the {split} split")));
        }
        Ok(evaluate_report(
            model,
            &examples,
            &self.dataset.features,
            &self.dataset.vocab,
            Some(stage.to_string()),
            Some(self.config.seed),
        )?)
    }

    /// Stage `evaluate`: θ′ zero-shot and every φ on the evaluation split,
    /// plus weak-label diagnostics. Marks the run complete.
    pub fn evaluate(&mut self) -> Result<Metrics, CurriculumError> {
        let iterations = self.config.iterations;
        let mut inputs = vec![json!(self.upstream("finetune_source", THETA_PRIME)?)];
        inputs.push(json!(self.upstream("translate", TRANSLATIONS)?));
        for k in 1..=iterations {
            inputs.push(json!(self.upstream(&format!("finetune_iter{k}"), &phi_file(k))?));
            inputs.push(json!(self.upstream(&format!("select_iter{k}"), &weak_file(k))?));
        }
        let key = key_of(
            "evaluate",
            json!({"inputs": inputs, "eval": self.config.eval, "target": self.config.target_lang, "dataset": self.manifest.dataset_hash}),
        );
        let mut outputs = vec![METRICS.to_string(), "reports/theta_prime.json".to_string()];
        outputs.extend((1..=iterations).map(|k| format!("reports/phi_iter{k}.json")));
        let result = self.stage(
            "evaluate",
            key,
            &outputs,
            |run| {
                let langs = run.config.eval_languages();
                let target = run.config.target_lang.clone();
                let pick = |r: &EvalReport| r.mean_of(&target).or(r.overall.map(|o| o.mean)).unwrap_or(0.0);
                let tp = run.load_ckpt(THETA_PRIME)?;
                let zero = run.report(&tp, &langs, "theta_prime")?;
                let reports = run.path("reports");
                fs::create_dir_all(&reports).map_err(|e| io_err(&reports, e))?;
                save_report(&zero, &run.path("reports/theta_prime.json"))?;
                let source = run.report(&tp, std::slice::from_ref(&run.config.source_lang), "theta_prime")?;

                let records: Vec<TranslationRecord> = read_jsonl(&run.path(TRANSLATIONS))?;
                let sources = run.aligned_sources(&records)?;
                let mut hits = 0.0;
                for (s, r) in sources.iter().zip(&records) {
                    let p = tp.predict(&r.translation, run.image(s)?, &run.dataset.vocab)?;
                    hits += vqa_accuracy(&p.answer, &s.answers)?;
                }
                let target_only_pool_accuracy = hits / sources.len() as f64;
                let by_id: HashMap<&str, &QAExample> = sources.iter().map(|e| (e.example_id.as_str(), *e)).collect();

                let mut phi_accuracy = Vec::new();
                let mut weak_label_accuracy = Vec::new();
                let mut selected_label_accuracy = Vec::new();
                let mut selected = Vec::new();
                let mut pool = 0;
                for k in 1..=iterations {
                    let phi = run.load_ckpt(&phi_file(k))?;
                    let rep = run.report(&phi, &langs, &format!("phi_iter{k}"))?;
                    save_report(&rep, &run.path(&format!("reports/phi_iter{k}.json")))?;
                    phi_accuracy.push(pick(&rep));
                    let labels: Vec<WeakLabel> = read_jsonl(&run.path(&weak_file(k)))?;
                    pool = labels.len();
                    let mut all = 0.0;
                    let mut sel = 0.0;
                    let mut n_sel = 0;
                    for l in &labels {
                        let src = by_id
                            .get(l.example_id.as_str())
                            .ok_or_else(|| CurriculumError::Validation(format!("unknown example {}", l.example_id)))?;
                        let a = vqa_accuracy(&l.answer, &src.answers)?;
                        all += a;
                        if l.selected {
                            sel += a;
                            n_sel += 1;
                        }
                    }
                    weak_label_accuracy.push(all / labels.len().max(1) as f64);
                    selected_label_accuracy.push((n_sel > 0).then(|| sel / n_sel as f64));
                    selected.push(n_sel);
                }
                let zero_shot_accuracy = pick(&zero);
                let final_accuracy = *phi_accuracy.last().expect("at least one iteration");
                let metrics = Metrics {
                    source_lang: run.config.source_lang.clone(),
                    target_lang: target.clone(),
                    arch: run.config.model.arch.to_string(),
                    seed: run.config.seed,
                    source_accuracy: source.overall.map_or(0.0, |o| o.mean),
                    zero_shot_accuracy,
                    phi_accuracy,
                    final_accuracy,
                    lift: final_accuracy - zero_shot_accuracy,
                    target_only_pool_accuracy,
                    weak_label_accuracy,
                    selected_label_accuracy,
                    selected,
                    pool,
                };
                write_json(&run.path(METRICS), &metrics)?;
                run.manifest.metrics = Some(metrics.clone());
                run.manifest.status = RunStatus::Complete;
                Ok(metrics)
            },
            |run| {
                let text = fs::read_to_string(run.path(METRICS)).map_err(|e| io_err(&run.path(METRICS), e))?;
                serde_json::from_str(&text).map_err(|e| CurriculumError::Validation(e.to_string()))
            },
        )?;
        if self.manifest.status != RunStatus::Complete {
            self.manifest.status = RunStatus::Complete;
            self.manifest.metrics = Some(result.clone());
            self.save_manifest()?;
        }
        Ok(result)
    }

    pub fn into_manifest(self) -> RunManifest {
        self.manifest
    }
}

/// Runs every stage in order in `dir`. With `resume`, stages whose inputs
/// and recorded outputs are unchanged are loaded instead of recomputed.
pub fn run_curriculum<'a>(
    dataset: &'a Dataset,
    config: &CurriculumConfig,
    dir: &Path,
    resume: bool,
    progress: Option<Box<dyn FnMut(&ProgressEvent) + 'a>>,
) -> Result<RunManifest, CurriculumError> {
    let mode = if resume { OpenMode::Resume } else { OpenMode::Fresh };
    let mut run = Run::open(dir, config.clone(), dataset, mode)?;
    if let Some(p) = progress {
        run.progress = Some(p);
    }
    run.init()?;
    run.finetune_source()?;
    run.translate()?;
    for k in 1..=config.iterations {
        run.weaklabel(k)?;
        run.select(k)?;
        run.finetune_target(k)?;
    }
    run.evaluate()?;
    Ok(run.into_manifest())
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;

    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticConfig};
    use crate::translate::RemoteConfig;

    fn dataset() -> Dataset {
        let cfg = SyntheticConfig { scenes: 60, ..Default::default() };
        generate_synthetic_corpus(&cfg, 3).unwrap()
    }

    fn config() -> CurriculumConfig {
        let mut c = CurriculumConfig::default();
        c.model.buckets = 1 << 10;
        c.model.embed_dim = 8;
        c.model.hidden = 16;
        c.train.epochs = 3;
        c.train.batch_size = 8;
        c
    }

    #[test]
    fn full_run_writes_every_artifact() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let events = RefCell::new(Vec::new());
        let m = run_curriculum(&ds, &config(), dir.path(), false, Some(Box::new(|e: &ProgressEvent| events.borrow_mut().push(e.to_string())))).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        for f in [THETA, THETA_PRIME, TRANSLATIONS, "weak_labels.jsonl", "checkpoints/phi_iter1.ckpt", "train_set_iter1.json", METRICS, "reports/theta_prime.json", "reports/phi_iter1.json", MANIFEST] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(!dir.path().join(LOCK).exists());
        let names: Vec<_> = m.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["init", "finetune_source", "translate", "weaklabel_iter1", "select_iter1", "finetune_iter1", "evaluate"]);
        let events = events.into_inner();
        assert_eq!(events.len(), 14);
        assert!(events[0].starts_with("stage=init status=start wall_ms="));
        assert!(events.iter().all(|e| !e.contains("resumed")));

        let metrics = m.metrics.as_ref().unwrap();
        let pool = ds.select("en", Split::Train).len();
        assert_eq!(metrics.pool, pool);
        assert_eq!(metrics.selected, vec![pool / 4]);
        let labels: Vec<WeakLabel> = read_jsonl(&dir.path().join("weak_labels.jsonl")).unwrap();
        assert_eq!(labels.iter().filter(|l| l.selected).count(), pool / 4);
        let set: TrainingSet = serde_json::from_str(&fs::read_to_string(dir.path().join("train_set_iter1.json")).unwrap()).unwrap();
        assert_eq!(set.weak_ids.len(), pool / 4);
        assert!(!set.source_ids.is_empty());
        assert!((metrics.lift - (metrics.final_accuracy - metrics.zero_shot_accuracy)).abs() < 1e-15);
        // priming with the source question beats the translation alone
        assert!(metrics.weak_label_accuracy[0] >= metrics.target_only_pool_accuracy, "{metrics:?}");
        assert_eq!(load_manifest(dir.path()).unwrap(), m);
        assert_eq!(m.artifact_digest, m.compute_digest());
    }

    #[test]
    fn resume_after_failed_translation() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let mut broken = config();
        broken.translator.kind = TranslatorKind::Remote;
        broken.translator.remote =
            Some(RemoteConfig { endpoint: "http://127.0.0.1:9".into(), timeout_ms: 500, retries: 0, backoff_ms: 1 });
        let err = run_curriculum(&ds, &broken, dir.path(), false, None).unwrap_err();
        assert!(matches!(&err, CurriculumError::StageFailed { stage, .. } if stage == "translate"), "{err}");
        let m = load_manifest(dir.path()).unwrap();
        assert!(matches!(&m.status, RunStatus::Failed { stage, .. } if stage == "translate"));
        assert!(!dir.path().join(LOCK).exists());

        let events = RefCell::new(Vec::new());
        let m = run_curriculum(&ds, &config(), dir.path(), true, Some(Box::new(|e: &ProgressEvent| events.borrow_mut().push(e.clone())))).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        let resumed: Vec<_> = events.into_inner().into_iter().filter(|e| e.resumed).map(|e| e.stage).collect();
        assert_eq!(resumed, ["init", "finetune_source"]);

        let fresh_dir = tempfile::tempdir().unwrap();
        let fresh = run_curriculum(&ds, &config(), fresh_dir.path(), false, None).unwrap();
        assert_eq!(fresh.hashes, m.hashes);
        assert_eq!(fresh.metrics, m.metrics);
    }

    #[test]
    fn resume_reruns_stage_with_tampered_output() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        run_curriculum(&ds, &config(), dir.path(), false, None).unwrap();
        let mut records: Vec<TranslationRecord> = read_jsonl(&dir.path().join(TRANSLATIONS)).unwrap();
        records[0].translation = "tampered".into();
        write_jsonl(&dir.path().join(TRANSLATIONS), &records).unwrap();
        let events = RefCell::new(Vec::new());
        run_curriculum(&ds, &config(), dir.path(), true, Some(Box::new(|e: &ProgressEvent| events.borrow_mut().push(e.clone())))).unwrap();
        let resumed: Vec<_> = events.into_inner().into_iter().filter(|e| e.resumed).map(|e| e.stage).collect();
        // recomputed translations hash as before, so later stages are reused
        assert_eq!(resumed, ["init", "finetune_source", "weaklabel_iter1", "select_iter1", "finetune_iter1", "evaluate"]);
        let records: Vec<TranslationRecord> = read_jsonl(&dir.path().join(TRANSLATIONS)).unwrap();
        assert_ne!(records[0].translation, "tampered");
    }

    #[test]
    fn empty_selection_reduces_to_source_finetune() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let cfg = CurriculumConfig { confidence_threshold: Some(1.0), ..config() };
        let m = run_curriculum(&ds, &cfg, dir.path(), false, None).unwrap();
        assert_eq!(m.metrics.as_ref().unwrap().selected, vec![0]);

        let theta_prime: Checkpoint = load_checkpoint(&dir.path().join(THETA_PRIME)).unwrap();
        let examples: Vec<TrainExample> = ds
            .select("en", Split::Train)
            .into_iter()
            .filter_map(|e| {
                let answer = ds.vocab.index_of(&e.modal_answer())?;
                Some(TrainExample { question: e.question.as_str().into(), image: ds.feature(&e.image_id).unwrap(), answer, weight: 1.0 })
            })
            .collect();
        let hyper = cfg.train.hyper(derive_seed(cfg.seed, "finetune_iter1"));
        let (control, _) = finetune(&theta_prime, &examples, &hyper).unwrap();
        let phi: Checkpoint = load_checkpoint(&dir.path().join("checkpoints/phi_iter1.ckpt")).unwrap();
        assert_eq!(phi.tensors, control.tensors);

        let dir = tempfile::tempdir().unwrap();
        let cfg = CurriculumConfig { augment: AugmentMode::SelectedOnly, ..cfg };
        let err = run_curriculum(&ds, &cfg, dir.path(), false, None).unwrap_err();
        assert!(matches!(&err, CurriculumError::StageFailed { stage, .. } if stage == "finetune_iter1"), "{err}");
    }

    #[test]
    fn second_iteration_artifacts() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let cfg = CurriculumConfig { iterations: 2, select_n: Some(30), ..config() };
        let m = run_curriculum(&ds, &cfg, dir.path(), false, None).unwrap();
        for f in ["weak_labels_iter2.jsonl", "checkpoints/phi_iter2.ckpt", "train_set_iter2.json", "reports/phi_iter2.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let metrics = m.metrics.unwrap();
        assert_eq!(metrics.phi_accuracy.len(), 2);
        assert_eq!(metrics.selected, vec![30, 30]);
        assert_eq!(metrics.final_accuracy, metrics.phi_accuracy[1]);
        let k1 = &m.stages.iter().find(|s| s.name == "weaklabel_iter2").unwrap().key;
        assert_ne!(k1, &m.stages.iter().find(|s| s.name == "weaklabel_iter1").unwrap().key);
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = dataset();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = run_curriculum(&ds, &config(), a.path(), false, None).unwrap();
        let mb = run_curriculum(&ds, &config(), b.path(), false, None).unwrap();
        assert_eq!(ma.artifact_digest, mb.artifact_digest);
        let c = tempfile::tempdir().unwrap();
        let mc = run_curriculum(&ds, &CurriculumConfig { seed: 1, ..config() }, c.path(), false, None).unwrap();
        assert_ne!(ma.hashes[THETA_PRIME], mc.hashes[THETA_PRIME]);
    }

    #[test]
    fn stages_demand_their_inputs() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::open(dir.path(), config(), &ds, OpenMode::Continue).unwrap();
        let err = run.weaklabel(1).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains(THETA_PRIME), "{err}");
        assert!(matches!(Run::open(dir.path(), config(), &ds, OpenMode::Continue), Err(CurriculumError::Locked(_))));
        run.init().unwrap();
        run.finetune_source().unwrap();
        drop(run);

        let mut run = Run::open(dir.path(), config(), &ds, OpenMode::Continue).unwrap();
        run.translate().unwrap();
        assert_eq!(run.manifest().stages.len(), 3);
        drop(run);

        let other = generate_synthetic_corpus(&SyntheticConfig { scenes: 61, ..Default::default() }, 3).unwrap();
        let err = Run::open(dir.path(), config(), &other, OpenMode::Continue).err().unwrap();
        assert!(err.is_usage());
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOCK), "999999999").unwrap();
        assert!(Run::open(dir.path(), config(), &ds, OpenMode::Fresh).is_ok());
    }

    #[test]
    fn parallel_translator_uses_dataset_renderings() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config();
        cfg.translator.kind = TranslatorKind::Parallel;
        let mut run = Run::open(dir.path(), cfg, &ds, OpenMode::Fresh).unwrap();
        let records = run.translate().unwrap();
        let hi: HashMap<_, _> =
            ds.select("hi", Split::Train).into_iter().map(|e| (id_stem(&e.example_id).to_string(), e.question.clone())).collect();
        for r in &records {
            assert_eq!(hi[id_stem(&r.example_id)], r.translation);
        }
    }
}
