use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{vqa_accuracy, EvalError};
use crate::corpus::{is_code_mixed, AnswerVocabulary, ImageFeatureStore, QAExample, ScriptTag};
use crate::model::Answerer;
use crate::util::sha256_hex;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Roman-mono")]
    RomanMono,
    #[serde(rename = "nonRoman-mono")]
    NonRomanMono,
    #[serde(rename = "CS-mixed-script")]
    CsMixedScript,
    #[serde(rename = "CS-romanized")]
    CsRomanized,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::RomanMono, Category::NonRomanMono, Category::CsMixedScript, Category::CsRomanized];

    /// Code-switched languages carry an `-en` suffix. A code-switched
    /// question written wholly in Roman script is romanized; any other
    /// script makes it mixed-script. Monolingual questions split on Roman
    /// versus everything else.
    pub fn of(language: &str, script: ScriptTag) -> Self {
        match (is_code_mixed(language), script == ScriptTag::Roman) {
            (true, true) => Category::CsRomanized,
            (true, false) => Category::CsMixedScript,
            (false, true) => Category::RomanMono,
            (false, false) => Category::NonRomanMono,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::RomanMono => "Roman-mono",
            Category::NonRomanMono => "nonRoman-mono",
            Category::CsMixedScript => "CS-mixed-script",
            Category::CsRomanized => "CS-romanized",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| EvalError::Validation(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub example_id: String,
    pub language: String,
    pub category: Category,
    /// The exact text given to the model.
    pub input: String,
    pub prediction: String,
    pub accuracy: f64,
}

/// Mean over member examples; for aggregated reports, the mean and
/// population standard deviation of per-run means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub std: f64,
    /// Member examples, summed over runs.
    pub examples: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub stage: Option<String>,
    pub seeds: Vec<u64>,
    /// Hashes of the reports aggregated into this one; empty for a single run.
    pub source_runs: Vec<String>,
    pub examples: Vec<ExampleScore>,
    /// Absent when no example was evaluated.
    pub overall: Option<CellStat>,
    pub per_language: BTreeMap<String, CellStat>,
    pub per_category: BTreeMap<Category, CellStat>,
    pub per_language_category: BTreeMap<String, BTreeMap<Category, CellStat>>,
    /// mean(Roman-mono) − mean(nonRoman-mono); null when either is empty.
    pub roman_gap: Option<f64>,
    /// Per embedded language `xx`: acc(`xx-en`) − acc(`xx`); null when
    /// either side is missing.
    pub cs_gap: BTreeMap<String, Option<f64>>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn single(xs: &[f64]) -> CellStat {
    CellStat { mean: mean(xs), std: 0.0, examples: xs.len(), runs: 1 }
}

fn gaps(
    per_language: &BTreeMap<String, CellStat>,
    per_category: &BTreeMap<Category, CellStat>,
) -> (Option<f64>, BTreeMap<String, Option<f64>>) {
    let roman = match (per_category.get(&Category::RomanMono), per_category.get(&Category::NonRomanMono)) {
        (Some(r), Some(n)) => Some(r.mean - n.mean),
        _ => None,
    };
    let cs = per_language
        .iter()
        .filter(|(l, _)| is_code_mixed(l))
        .map(|(l, stat)| {
            let base = &l[..l.len() - 3];
            (base.to_string(), per_language.get(base).map(|b| stat.mean - b.mean))
        })
        .collect();
    (roman, cs)
}

impl EvalReport {
    /// Builds a single-run report from per-example scores.
    pub fn from_scores(examples: Vec<ExampleScore>, stage: Option<String>, seed: Option<u64>) -> Self {
        let mut by_lang: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut by_cat: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
        let mut by_cell: BTreeMap<String, BTreeMap<Category, Vec<f64>>> = BTreeMap::new();
        for e in &examples {
            by_lang.entry(e.language.clone()).or_default().push(e.accuracy);
            by_cat.entry(e.category).or_default().push(e.accuracy);
            by_cell.entry(e.language.clone()).or_default().entry(e.category).or_default().push(e.accuracy);
        }
        let all: Vec<f64> = examples.iter().map(|e| e.accuracy).collect();
        let overall = (!all.is_empty()).then(|| single(&all));
        let per_language: BTreeMap<_, _> = by_lang.into_iter().map(|(k, v)| (k, single(&v))).collect();
        let per_category: BTreeMap<_, _> = by_cat.into_iter().map(|(k, v)| (k, single(&v))).collect();
        let per_language_category = by_cell
            .into_iter()
            .map(|(l, cats)| (l, cats.into_iter().map(|(c, v)| (c, single(&v))).collect()))
            .collect();
        let (roman_gap, cs_gap) = gaps(&per_language, &per_category);
        Self {
            format_version: REPORT_VERSION,
            stage,
            seeds: seed.into_iter().collect(),
            source_runs: Vec::new(),
            examples,
            overall,
            per_language,
            per_category,
            per_language_category,
            roman_gap,
            cs_gap,
        }
    }

    pub fn mean_of(&self, language: &str) -> Option<f64> {
        self.per_language.get(language).map(|s| s.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("report serializes").as_bytes())
    }
}

/// Predicts every example from its own question (never a concatenated
/// prompt) and scores it against its annotator answers.
pub fn evaluate_model<A: Answerer>(
    model: &A,
    examples: &[&QAExample],
    features: &ImageFeatureStore,
    vocab: &AnswerVocabulary,
) -> Result<Vec<ExampleScore>, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Validation("evaluation split is empty".into()));
    }
    examples
        .iter()
        .map(|ex| {
            let image = features
                .get(&ex.image_id)
                .ok_or_else(|| EvalError::Validation(format!("{}: no feature for image {}", ex.example_id, ex.image_id)))?;
            let pred = model.predict(&ex.question, image, vocab)?;
            let accuracy = vqa_accuracy(&pred.answer, &ex.answers)?;
            Ok(ExampleScore {
                example_id: ex.example_id.clone(),
                language: ex.language.clone(),
                category: Category::of(&ex.language, ex.script),
                input: ex.question.clone(),
                prediction: pred.answer,
                accuracy,
            })
        })
        .collect()
}

/// Convenience wrapper building the report directly.
pub fn evaluate_report<A: Answerer>(
    model: &A,
    examples: &[&QAExample],
    features: &ImageFeatureStore,
    vocab: &AnswerVocabulary,
    stage: Option<String>,
    seed: Option<u64>,
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport::from_scores(evaluate_model(model, examples, features, vocab)?, stage, seed))
}

fn population(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    (m, var.sqrt())
}

fn combine(stats: &[&CellStat]) -> CellStat {
    let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    let (mean, std) = population(&means);
    CellStat { mean, std, examples: stats.iter().map(|s| s.examples).sum(), runs: stats.iter().map(|s| s.runs).sum() }
}

/// Unweighted mean and population standard deviation of each cell across
/// runs. Per-example scores are not carried over.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or_else(|| EvalError::Validation("no reports to aggregate".into()))?;
    let shape = |r: &EvalReport| {
        (
            r.per_language.keys().cloned().collect::<Vec<_>>(),
            r.per_category.keys().copied().collect::<Vec<_>>(),
            r.per_language_category
                .iter()
                .map(|(l, c)| (l.clone(), c.keys().copied().collect::<Vec<_>>()))
                .collect::<Vec<_>>(),
        )
    };
    let expected = shape(first);
    for (i, r) in reports.iter().enumerate() {
        if shape(r) != expected {
            return Err(EvalError::Validation(format!("report {i} has a different language/category structure")));
        }
    }
    if reports.len() == 1 {
        let mut out = first.clone();
        out.source_runs = vec![first.hash()];
        return Ok(out);
    }
    let overall = reports
        .iter()
        .map(|r| r.overall.as_ref())
        .collect::<Option<Vec<_>>>()
        .map(|stats| combine(&stats));
    let per_language: BTreeMap<_, _> = first
        .per_language
        .keys()
        .map(|l| (l.clone(), combine(&reports.iter().map(|r| &r.per_language[l]).collect::<Vec<_>>())))
        .collect();
    let per_category: BTreeMap<_, _> = first
        .per_category
        .keys()
        .map(|c| (*c, combine(&reports.iter().map(|r| &r.per_category[c]).collect::<Vec<_>>())))
        .collect();
    let per_language_category = first
        .per_language_category
        .iter()
        .map(|(l, cats)| {
            let cells = cats
                .keys()
                .map(|c| (*c, combine(&reports.iter().map(|r| &r.per_language_category[l][c]).collect::<Vec<_>>())))
                .collect();
            (l.clone(), cells)
        })
        .collect();
    let (roman_gap, cs_gap) = gaps(&per_language, &per_category);
    let stage = if reports.iter().all(|r| r.stage == first.stage) { first.stage.clone() } else { None };
    Ok(EvalReport {
        format_version: REPORT_VERSION,
        stage,
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        source_runs: reports.iter().map(EvalReport::hash).collect(),
        examples: Vec::new(),
        overall,
        per_language,
        per_category,
        per_language_category,
        roman_gap,
        cs_gap,
    })
}

pub const PLOT_HEADER: &str = "language,category,mean_accuracy,std";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub language: String,
    pub category: Category,
    pub mean_accuracy: f64,
    pub std: f64,
}

pub fn plot_rows(report: &EvalReport) -> Vec<PlotRow> {
    report
        .per_language_category
        .iter()
        .flat_map(|(l, cats)| {
            cats.iter().map(move |(c, s)| PlotRow { language: l.clone(), category: *c, mean_accuracy: s.mean, std: s.std })
        })
        .collect()
}

/// Writes the per-(language, category) table behind the accuracy figure.
pub fn emit_plot_data(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for r in plot_rows(report) {
        out.push_str(&format!("{},{},{},{}\n", r.language, r.category, r.mean_accuracy, r.std));
    }
    fs::write(path, out).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotRow>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(PLOT_HEADER) {
        return Err(EvalError::Validation(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || EvalError::Validation(format!("{} line {}: malformed row", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(PlotRow {
                language: f[0].to_string(),
                category: f[1].parse()?,
                mean_accuracy: f[2].parse().map_err(|_| bad())?,
                std: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    fs::write(path, report.to_json()).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| EvalError::Validation(format!("{}: {e}", path.display())))?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(REPORT_VERSION) => {}
        other => {
            return Err(EvalError::Validation(format!(
                "{}: report format version {other:?}, expected {REPORT_VERSION}",
                path.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| EvalError::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;
    use std::collections::HashMap;

    use super::*;
    use crate::corpus::{ExampleMeta, Split};
    use crate::model::{ModelError, Prediction, TrainExample, TrainHyper, TrainReport};

    fn example(id: &str, language: &str, script: ScriptTag, question: &str, answers: &[&str]) -> QAExample {
        QAExample {
            example_id: id.into(),
            image_id: "img".into(),
            question: question.into(),
            language: language.into(),
            script,
            answers: answers.iter().map(|a| a.to_string()).collect(),
            split: Split::Test,
            meta: ExampleMeta::default(),
        }
    }

    struct Lookup {
        answers: HashMap<String, String>,
        fallback: String,
        seen: RefCell<Vec<String>>,
    }

    impl Lookup {
        fn constant(answer: &str) -> Self {
            Self { answers: HashMap::new(), fallback: answer.into(), seen: RefCell::new(Vec::new()) }
        }
    }

    impl Answerer for Lookup {
        fn predict(&self, question: &str, _: &[f64], vocab: &AnswerVocabulary) -> Result<Prediction, ModelError> {
            self.seen.borrow_mut().push(question.to_string());
            let answer = self.answers.get(question).unwrap_or(&self.fallback).clone();
            Ok(Prediction { index: vocab.index_of(&answer).unwrap_or(0), answer, confidence: 1.0, probs: None })
        }

        fn finetune(&self, _: &[TrainExample<'_>], _: &TrainHyper) -> Result<(Self, TrainReport), ModelError> {
            Err(ModelError::InvalidArgument("fixed predictor".into()))
        }
    }

    fn features() -> ImageFeatureStore {
        let mut f = ImageFeatureStore::new(2).unwrap();
        f.insert("img".into(), vec![0.0, 1.0]).unwrap();
        f
    }

    fn vocab() -> AnswerVocabulary {
        AnswerVocabulary::from_answers(vec!["yes".into(), "no".into(), "2".into()]).unwrap()
    }

    fn ten(a: &str) -> Vec<&str> {
        vec![a; 10]
    }

    #[test]
    fn constant_predictor_fixture() {
        let exs: Vec<QAExample> = (0..10)
            .map(|i| {
                let a = if i < 4 { ten("yes") } else { ten("no") };
                example(&format!("e{i}.hi"), "hi", ScriptTag::Devanagari, &format!("प्रश्न {i}"), &a)
            })
            .collect();
        let refs: Vec<&QAExample> = exs.iter().collect();
        let model = Lookup::constant("yes");
        let r = evaluate_report(&model, &refs, &features(), &vocab(), None, Some(1)).unwrap();
        assert!((r.overall.unwrap().mean - 0.4).abs() < 1e-12);
        let seen = model.seen.borrow();
        assert_eq!(*seen, exs.iter().map(|e| e.question.clone()).collect::<Vec<_>>());
        assert!(r.examples.iter().zip(&exs).all(|(s, e)| s.input == e.question));
    }

    #[test]
    fn perfect_predictor_scores_one_everywhere() {
        let exs = vec![
            example("a.en", "en", ScriptTag::Roman, "q1", &ten("yes")),
            example("a.hi", "hi", ScriptTag::Devanagari, "क", &ten("no")),
            example("a.hi-en", "hi-en", ScriptTag::Mixed, "q क", &ten("2")),
            example("b.hi-en", "hi-en", ScriptTag::Roman, "q ka", &ten("no")),
        ];
        let answers = exs.iter().map(|e| (e.question.clone(), e.answers[0].clone())).collect();
        let model = Lookup { answers, fallback: String::new(), seen: RefCell::default() };
        let refs: Vec<&QAExample> = exs.iter().collect();
        let r = evaluate_report(&model, &refs, &features(), &vocab(), None, None).unwrap();
        assert!(r.per_language.values().chain(r.per_category.values()).all(|s| s.mean == 1.0));
        assert_eq!(r.per_category.len(), 4);
        assert_eq!(r.roman_gap, Some(0.0));
        assert_eq!(r.cs_gap.get("hi"), Some(&Some(0.0)));
    }

    #[test]
    fn category_mapping() {
        assert_eq!(Category::of("hi", ScriptTag::Devanagari), Category::NonRomanMono);
        assert_eq!(Category::of("hl", ScriptTag::Roman), Category::RomanMono);
        assert_eq!(Category::of("hi-en", ScriptTag::Roman), Category::CsRomanized);
        assert_eq!(Category::of("hi-en", ScriptTag::Mixed), Category::CsMixedScript);
        assert_eq!(Category::of("bn", ScriptTag::Mixed), Category::NonRomanMono);
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
    }

    fn scores(lang: &str, accs: &[f64]) -> Vec<ExampleScore> {
        let script = if lang == "hl" { ScriptTag::Roman } else { ScriptTag::Devanagari };
        accs.iter()
            .enumerate()
            .map(|(i, &a)| ExampleScore {
                example_id: format!("{i}.{lang}"),
                language: lang.into(),
                category: Category::of(lang, script),
                input: "q".into(),
                prediction: "yes".into(),
                accuracy: a,
            })
            .collect()
    }

    #[test]
    fn single_language_gaps_undefined() {
        let r = EvalReport::from_scores(scores("hi", &[1.0, 0.3]), None, None);
        assert_eq!(r.roman_gap, None);
        assert!(r.cs_gap.is_empty());
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json["roman_gap"].is_null());
    }

    #[test]
    fn stored_means_match_recomputation() {
        let mut s = scores("hi", &[1.0, 0.3, 0.6, 0.9, 0.0]);
        s.extend(scores("hl", &[0.3, 0.3, 1.0]));
        let r = EvalReport::from_scores(s, None, None);
        for (cat, stat) in &r.per_category {
            let member: Vec<f64> = r.examples.iter().filter(|e| e.category == *cat).map(|e| e.accuracy).collect();
            let m = member.iter().sum::<f64>() / member.len() as f64;
            assert!((m - stat.mean).abs() < 1e-12);
            assert_eq!(stat.examples, member.len());
        }
        let gap = (0.3 + 0.3 + 1.0) / 3.0 - (1.0 + 0.3 + 0.6 + 0.9) / 5.0;
        assert!((r.roman_gap.unwrap() - gap).abs() < 1e-12);
    }

    #[test]
    fn aggregation_statistics() {
        let one = EvalReport::from_scores(scores("hi", &[0.4]), None, Some(1));
        let agg = aggregate_runs(std::slice::from_ref(&one)).unwrap();
        assert_eq!(agg.per_category, one.per_category);
        assert!(agg.per_category.values().all(|s| s.std == 0.0));
        assert_eq!(agg.source_runs, vec![one.hash()]);

        let two = EvalReport::from_scores(scores("hi", &[0.6]), None, Some(2));
        let agg = aggregate_runs(&[one.clone(), two.clone()]).unwrap();
        let cell = agg.per_category[&Category::NonRomanMono];
        assert!((cell.mean - 0.5).abs() < 1e-12);
        assert!((cell.std - 0.1).abs() < 1e-12);
        assert_eq!(cell.runs, 2);
        assert_eq!(agg.seeds, vec![1, 2]);
        assert_eq!(agg.source_runs, vec![one.hash(), two.hash()]);

        let other = EvalReport::from_scores(scores("hl", &[0.6]), None, Some(3));
        assert!(matches!(aggregate_runs(&[one, other]), Err(EvalError::Validation(_))));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn plot_data_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = scores("hl", &[0.1, 0.7]);
        s.extend(scores("hi", &[1.0 / 3.0]));
        s.extend(scores("bn", &[0.9, 0.3, 0.3]));
        let r = EvalReport::from_scores(s, None, None);
        let p = dir.path().join("plot.csv");
        emit_plot_data(&r, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some(PLOT_HEADER));
        let rows = read_plot_data(&p).unwrap();
        assert_eq!(rows, plot_rows(&r));
        let langs: Vec<&str> = rows.iter().map(|r| r.language.as_str()).collect();
        assert_eq!(langs, vec!["bn", "hi", "hl"]);

        let empty = EvalReport::from_scores(Vec::new(), None, None);
        emit_plot_data(&empty, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{PLOT_HEADER}\n"));
        assert!(emit_plot_data(&r, &dir.path().join("missing/dir/x.csv")).is_err());
    }

    #[test]
    fn json_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = scores("hl", &[0.1, 0.7, 1.0 / 3.0]);
        s.extend(scores("hi", &[0.9]));
        let r = EvalReport::from_scores(s, Some("phi".into()), Some(4));
        let p = dir.path().join("r.json");
        save_report(&r, &p).unwrap();
        assert_eq!(load_report(&p).unwrap(), r);
        let bumped = r.to_json().replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        fs::write(&p, bumped).unwrap();
        assert!(load_report(&p).is_err());
    }
}
