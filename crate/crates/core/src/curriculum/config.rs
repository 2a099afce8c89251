use serde::{Deserialize, Serialize};

use super::CurriculumError;
use crate::corpus::{is_valid_language_code, Split};
use crate::model::{Arch, Dims, TrainHyper};
use crate::translate::RemoteConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConcatOrder {
    #[default]
    SourceFirst,
    TargetFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    /// English training data plus the selected weak labels.
    #[default]
    Union,
    SelectedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RestartMode {
    #[default]
    ThetaPrime,
    Theta,
}

/// How many weak labels survive selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// The `floor(fraction * pool)` most confident.
    Fraction(f64),
    TopN(usize),
    /// Every label with confidence strictly above the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub buckets: usize,
    pub ngram: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = Dims::new(1, 1);
        Self { arch: Arch::Cross, buckets: d.buckets, ngram: d.ngram, embed_dim: d.embed_dim, hidden: d.hidden }
    }
}

impl ModelConfig {
    pub fn dims(&self, image_dim: usize, answers: usize) -> Dims {
        Dims {
            buckets: self.buckets,
            ngram: self.ngram,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            image_dim,
            answers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self { epochs: h.epochs, learning_rate: h.learning_rate, batch_size: h.batch_size, momentum: h.momentum }
    }
}

impl TrainConfig {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            momentum: self.momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    #[default]
    Mock,
    Remote,
    /// Reuse the dataset's own target-language rendering of each question,
    /// matched by example id stem.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    pub kind: TranslatorKind,
    pub noise_rate: f64,
    /// Lexicon spec for the mock; defaults to `builtin:<source>-<target>`.
    pub lexicon: Option<String>,
    pub remote: Option<RemoteConfig>,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self { kind: TranslatorKind::Mock, noise_rate: 0.2, lexicon: None, remote: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    /// Languages scored on `split`; empty means the target language only.
    pub languages: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: Split::Test, languages: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub source_lang: String,
    pub target_lang: String,
    pub select_frac: Option<f64>,
    pub select_n: Option<usize>,
    pub confidence_threshold: Option<f64>,
    pub sep: String,
    pub order: ConcatOrder,
    pub augment: AugmentMode,
    pub restart: RestartMode,
    /// Loss weight of each selected weak label.
    pub weak_weight: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Train weak labels on the concatenated prompt instead of the target
    /// question alone.
    pub train_on_prompt: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub translator: TranslatorConfig,
    pub eval: EvalConfig,
}

pub const DEFAULT_SELECT_FRAC: f64 = 0.25;

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            source_lang: "en".into(),
            target_lang: "hi".into(),
            select_frac: None,
            select_n: None,
            confidence_threshold: None,
            sep: " [SEP] ".into(),
            order: ConcatOrder::SourceFirst,
            augment: AugmentMode::Union,
            restart: RestartMode::ThetaPrime,
            weak_weight: 1.0,
            iterations: 1,
            seed: 0,
            train_on_prompt: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            translator: TranslatorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn from_toml(text: &str) -> Result<Self, CurriculumError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CurriculumError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn selection(&self) -> Selection {
        match (self.select_frac, self.select_n, self.confidence_threshold) {
            (_, Some(n), _) => Selection::TopN(n),
            (_, _, Some(t)) => Selection::Threshold(t),
            (Some(f), _, _) => Selection::Fraction(f),
            _ => Selection::Fraction(DEFAULT_SELECT_FRAC),
        }
    }

    /// Languages scored by the evaluation stage.
    pub fn eval_languages(&self) -> Vec<String> {
        if self.eval.languages.is_empty() {
            vec![self.target_lang.clone()]
        } else {
            self.eval.languages.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        let bad = |m: String| Err(CurriculumError::Config(m));
        for (key, code) in [("source_lang", &self.source_lang), ("target_lang", &self.target_lang)] {
            if !is_valid_language_code(code) {
                return bad(format!("{key}: invalid language code {code:?}"));
            }
        }
        if self.source_lang == self.target_lang {
            return bad("target_lang must differ from source_lang".into());
        }
        let active = [self.select_frac.is_some(), self.select_n.is_some(), self.confidence_threshold.is_some()]
            .iter()
            .filter(|a| **a)
            .count();
        if active > 1 {
            return bad("set only one of select_frac, select_n, confidence_threshold".into());
        }
        if let Some(f) = self.select_frac {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("select_frac: {f} outside (0, 1]"));
            }
        }
        if let Some(t) = self.confidence_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("confidence_threshold: {t} outside [0, 1]"));
            }
        }
        if !(self.weak_weight > 0.0 && self.weak_weight <= 1.0) {
            return bad(format!("weak_weight: {} outside (0, 1]", self.weak_weight));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.sep.is_empty() {
            return bad("sep must not be empty".into());
        }
        if !(0.0..1.0).contains(&self.translator.noise_rate) {
            return bad(format!("translator.noise_rate: {} outside [0, 1)", self.translator.noise_rate));
        }
        if self.translator.kind == TranslatorKind::Remote && self.translator.remote.is_none() {
            return bad("translator.remote must be set for the remote translator".into());
        }
        self.train.hyper(0).validate().map_err(|e| CurriculumError::Config(format!("train: {e}")))?;
        self.model.dims(1, 1).validate().map_err(|e| CurriculumError::Config(format!("model: {e}")))?;
        for l in &self.eval.languages {
            if !is_valid_language_code(l) {
                return bad(format!("eval.languages: invalid language code {l:?}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = CurriculumConfig::default();
        c.validate().unwrap();
        assert_eq!(c.selection(), Selection::Fraction(0.25));
        assert_eq!(c.eval_languages(), vec!["hi".to_string()]);
    }

    #[test]
    fn toml_overrides_and_unknown_keys() {
        let c = CurriculumConfig::from_toml(
            "target_lang = \"hl\"\nselect_n = 40\norder = \"target-first\"\n[model]\narch = \"dual\"\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.selection(), Selection::TopN(40));
        assert_eq!(c.order, ConcatOrder::TargetFirst);
        assert_eq!(c.model.arch, Arch::Dual);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        let err = CurriculumConfig::from_toml("target_lang = \"hl\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn exactly_one_selection_mode() {
        let c = CurriculumConfig { select_n: Some(3), confidence_threshold: Some(0.5), ..Default::default() };
        assert!(c.validate().is_err());
        let c = CurriculumConfig { iterations: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = CurriculumConfig { weak_weight: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
