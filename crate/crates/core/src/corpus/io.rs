use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    detect_script, pad_answers, CorpusError, Dataset, ExampleMeta, ImageFeatureStore, QAExample,
    Split,
};
use crate::evaluate::ANNOTATORS;

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Pad short answer lists with the majority answer instead of rejecting them.
    pub pad_answers: bool,
    /// Keep only the top-k training answers; `None` keeps all.
    pub vocab_size: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { pad_answers: true, vocab_size: None }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    example_id: String,
    image_id: String,
    question: String,
    language: String,
    answers: Vec<String>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    script: Option<String>,
    #[serde(default, skip_serializing_if = "ExampleMeta::is_empty")]
    meta: ExampleMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    image_id: String,
    feature: Vec<f64>,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> CorpusError {
    CorpusError::Parse { path: path.display().to_string(), line, message: message.to_string() }
}

pub fn load_dataset(path: &Path, feature_path: &Path) -> Result<Dataset, CorpusError> {
    load_dataset_with(path, feature_path, LoadOptions::default())
}

pub fn load_dataset_with(
    path: &Path,
    feature_path: &Path,
    opts: LoadOptions,
) -> Result<Dataset, CorpusError> {
    let features = load_features(feature_path)?;
    let text = read(path)?;
    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| parse_err(path, lineno, e))?;
        let mut answers = rec.answers;
        let mut meta = rec.meta;
        if answers.len() != ANNOTATORS {
            if opts.pad_answers && !answers.is_empty() && answers.len() < ANNOTATORS {
                meta.padded_answers += pad_answers(&mut answers);
            } else {
                return Err(CorpusError::Validation(format!(
                    "line {lineno}: example {} has {} answers, expected {ANNOTATORS}",
                    rec.example_id,
                    answers.len()
                )));
            }
        }
        let script = detect_script(&rec.question)
            .map_err(|e| parse_err(path, lineno, format!("question: {e}")))?;
        if let Some(declared) = &rec.script {
            if declared != script.as_str() {
                warnings.push(format!(
                    "line {lineno}: example {} declared script {declared} but question is {script}; recomputed",
                    rec.example_id
                ));
            }
        }
        examples.push(QAExample {
            example_id: rec.example_id,
            image_id: rec.image_id,
            question: rec.question,
            language: rec.language,
            script,
            answers,
            split: rec.split,
            meta,
        });
    }
    let mut ds = Dataset::new(examples, features, path.display().to_string())?;
    if let Some(k) = opts.vocab_size {
        ds.vocab = super::build_answer_vocab(&ds, k)?;
    }
    if ds.vocab.coverage() < 0.95 {
        warnings.push(format!("answer vocabulary covers only {:.4} of training answers", ds.vocab.coverage()));
    }
    ds.warnings = warnings;
    Ok(ds)
}

fn load_features(path: &Path) -> Result<ImageFeatureStore, CorpusError> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing {\"dim\": D} header"))?;
    let header: FeatureHeader = serde_json::from_str(header).map_err(|e| parse_err(path, 1, e))?;
    let mut store = ImageFeatureStore::new(header.dim).map_err(|e| parse_err(path, 1, e))?;
    for (i, line) in lines {
        let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e))?;
        store.insert(rec.image_id, rec.feature).map_err(|e| match e {
            CorpusError::Validation(m) => parse_err(path, i + 1, m),
            other => other,
        })?;
    }
    Ok(store)
}

/// Canonical (dataset JSONL, feature JSONL) text.
pub(crate) fn serialize(ds: &Dataset) -> (String, String) {
    let mut d = String::new();
    for e in &ds.examples {
        let rec = ExampleRecord {
            example_id: e.example_id.clone(),
            image_id: e.image_id.clone(),
            question: e.question.clone(),
            language: e.language.clone(),
            answers: e.answers.clone(),
            split: e.split,
            script: Some(e.script.as_str().to_string()),
            meta: e.meta.clone(),
        };
        d.push_str(&serde_json::to_string(&rec).expect("example record serializes"));
        d.push('\n');
    }
    let mut f = serde_json::to_string(&FeatureHeader { dim: ds.features.dim() }).expect("header serializes");
    f.push('\n');
    for (id, v) in ds.features.iter() {
        let rec = FeatureRecord { image_id: id.clone(), feature: v.clone() };
        f.push_str(&serde_json::to_string(&rec).expect("feature record serializes"));
        f.push('\n');
    }
    (d, f)
}

/// Writes the dataset and feature files; returns the content hash.
pub fn save_dataset(ds: &Dataset, path: &Path, feature_path: &Path) -> Result<String, CorpusError> {
    let (d, f) = serialize(ds);
    for (p, body) in [(path, d), (feature_path, f)] {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)
                .map_err(|source| CorpusError::Io { path: parent.display().to_string(), source })?;
        }
        fs::write(p, body).map_err(|source| CorpusError::Io { path: p.display().to_string(), source })?;
    }
    Ok(ds.content_hash())
}

/// One question per line; blank lines skipped.
pub fn read_unlabeled_pool(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ScriptTag;
    use std::io::Write;

    const FEATURES: &str = "{\"dim\": 2}\n{\"image_id\": \"i1\", \"feature\": [1.0, 0.5]}\n{\"image_id\": \"i2\", \"feature\": [0.0, 2.25]}\n";

    fn line(id: &str, q: &str, split: &str, extra: &str) -> String {
        format!(
            "{{\"example_id\": \"{id}\", \"image_id\": \"i1\", \"question\": \"{q}\", \"language\": \"en\", \"answers\": [\"yes\",\"yes\",\"yes\",\"yes\",\"yes\",\"yes\",\"yes\",\"yes\",\"yes\",\"no\"], \"split\": \"{split}\"{extra}}}"
        )
    }

    fn write_files(dir: &Path, data: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let d = dir.join("data.jsonl");
        let f = dir.join("features.jsonl");
        fs::File::create(&d).unwrap().write_all(data.as_bytes()).unwrap();
        fs::File::create(&f).unwrap().write_all(FEATURES.as_bytes()).unwrap();
        (d, f)
    }

    #[test]
    fn three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let data = [
            line("a", "is it red", "train", ""),
            line("b", "is it blue", "val", ""),
            line("c", "is it green", "test", ""),
        ]
        .join("\n");
        let (d, f) = write_files(dir.path(), &data);
        let ds = load_dataset(&d, &f).unwrap();
        assert_eq!(ds.examples.len(), 3);
        let counts = ds.split_counts();
        assert_eq!(counts[&Split::Train], 1);
        assert_eq!(counts[&Split::Val], 1);
        assert_eq!(counts[&Split::Test], 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = [line("a", "is it red", "train", ""), line("a", "is it blue", "test", "")].join("\n");
        let (d, f) = write_files(dir.path(), &data);
        assert!(matches!(load_dataset(&d, &f), Err(CorpusError::Referential(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let data = format!("{}\n{{not json\n", line("a", "is it red", "train", ""));
        let (d, f) = write_files(dir.path(), &data);
        match load_dataset(&d, &f) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_feature_is_referential_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = line("a", "is it red", "train", "").replace("\"i1\"", "\"i9\"");
        let (d, f) = write_files(dir.path(), &data);
        assert!(matches!(load_dataset(&d, &f), Err(CorpusError::Referential(_))));
    }

    #[test]
    fn declared_script_is_recomputed_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let q = "बस किस रंग की है";
        let data = line("a", q, "train", ", \"script\": \"Roman\"");
        let (d, f) = write_files(dir.path(), &data);
        let ds = load_dataset(&d, &f).unwrap();
        let expected = detect_script(q).unwrap();
        assert_eq!(expected, ScriptTag::Devanagari);
        assert_eq!(ds.examples[0].script, expected);
        assert_eq!(ds.warnings.len(), 1);
        assert!(ds.warnings[0].contains("declared script Roman"));
    }

    #[test]
    fn short_answer_lists_padded_or_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = "{\"example_id\": \"a\", \"image_id\": \"i1\", \"question\": \"what\", \"language\": \"en\", \"answers\": [\"red\", \"red\", \"blue\"], \"split\": \"train\"}";
        let (d, f) = write_files(dir.path(), data);
        let ds = load_dataset(&d, &f).unwrap();
        assert_eq!(ds.examples[0].answers.len(), 10);
        assert_eq!(ds.examples[0].meta.padded_answers, 7);
        let strict = LoadOptions { pad_answers: false, ..LoadOptions::default() };
        assert!(matches!(load_dataset_with(&d, &f, strict), Err(CorpusError::Validation(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = line("a", "is it red", "train", ", \"colour\": 1");
        let (d, f) = write_files(dir.path(), &data);
        assert!(matches!(load_dataset(&d, &f), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = "{\"example_id\": \"a\", \"image_id\": \"i2\", \"question\": \"what रंग\", \"language\": \"hi-en\", \"answers\": [\"red\", \"blue\"], \"split\": \"train\"}";
        let (d, f) = write_files(dir.path(), data);
        let ds = load_dataset(&d, &f).unwrap();
        let (d2, f2) = (dir.path().join("d2.jsonl"), dir.path().join("f2.jsonl"));
        let h = save_dataset(&ds, &d2, &f2).unwrap();
        let back = load_dataset(&d2, &f2).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.content_hash(), h);
        assert_eq!(back.examples[0].meta.padded_answers, 8);
    }
}
