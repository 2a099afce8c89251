//! Desk-scale VQA answerers: a cross encoder and a dual encoder over hashed
//! character n-grams and dense image features, with weighted cross-entropy
//! finetuning and a checksummed checkpoint format.

mod checkpoint;
mod encoding;
mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint, FORMAT_VERSION};
pub use encoding::{TextEncoder, TextEncoding};
pub use net::{layout, softmax, Gradients, Tensor};
pub use train::{
    batch_loss, encode_examples, finetune, loss_and_gradients, EncodedExample, TrainExample, TrainHyper,
    TrainReport,
};

use crate::corpus::AnswerVocabulary;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u64, expected: u64 },
    #[error("i/o on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cross,
    Dual,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Cross => "cross",
            Arch::Dual => "dual",
        })
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross" => Ok(Arch::Cross),
            "dual" => Ok(Arch::Dual),
            other => Err(ModelError::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Hash buckets of the text encoding.
    pub buckets: usize,
    /// Character n-gram size.
    pub ngram: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub image_dim: usize,
    pub answers: usize,
}

impl Dims {
    pub fn new(image_dim: usize, answers: usize) -> Self {
        Self { buckets: 1 << 15, ngram: 3, embed_dim: 64, hidden: 128, image_dim, answers }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("buckets", self.buckets),
            ("ngram", self.ngram),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("image_dim", self.image_dim),
            ("answers", self.answers),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.buckets > u32::MAX as usize {
            return Err(ModelError::InvalidArgument("buckets must fit in 32 bits".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> TextEncoder {
        TextEncoder::new(self.ngram, self.buckets)
    }
}

/// Which parameter set a checkpoint holds in the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Initial parameters.
    Theta,
    /// Finetuned on the English task data.
    ThetaPrime,
    /// Finetuned again with selected weak labels.
    Phi,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Theta => "theta",
            Stage::ThetaPrime => "theta_prime",
            Stage::Phi => "phi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub stage: Stage,
    pub seed: u64,
    /// Hash of the training examples, empty for freshly initialized models.
    pub data_hash: String,
}

/// Architecture, dimensions, parameters and training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswererCheckpoint<T> {
    pub arch: Arch,
    pub dims: Dims,
    pub tensors: Vec<Tensor<T>>,
    pub provenance: Provenance,
    pub hyper: Option<TrainHyper>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub answer: String,
    /// Maximum softmax probability.
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

/// Seeded initialization: weights uniform in ±1/sqrt(fan-in), biases zero.
/// The embedding's fan-in is the bucket count.
pub fn init_answerer<T: Scalar>(arch: Arch, dims: Dims, seed: u64) -> Result<AnswererCheckpoint<T>, ModelError> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout(arch, &dims)
        .into_iter()
        .map(|(name, shape)| {
            let mut t = Tensor::<T>::zeros(name, &shape);
            if shape.len() == 2 {
                let fan_in = if name == "embed" { shape[0] } else { shape[1] };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in &mut t.data {
                    *v = T::from_f64_lossy(rng.random_range(-bound..bound));
                }
            }
            t
        })
        .collect();
    Ok(AnswererCheckpoint {
        arch,
        dims,
        tensors,
        provenance: Provenance { stage: Stage::Theta, seed, data_hash: String::new() },
        hyper: None,
        final_loss: None,
    })
}

impl<T: Scalar> AnswererCheckpoint<T> {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Output layer tensor indices (weights, bias).
    pub fn output_layer(&self) -> (usize, usize) {
        let n = self.tensors.len();
        (n - 2, n - 1)
    }

    /// Zeroes the final layer, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = self.output_layer();
        for i in [w, b] {
            self.tensors[i].data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.provenance.stage = stage;
        self
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Shapes match the architecture layout and every value is finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.dims.validate()?;
        let expected = layout(self.arch, &self.dims);
        if expected.len() != self.tensors.len() {
            return Err(ModelError::Shape(format!(
                "{} architecture has {} tensors, checkpoint has {}",
                self.arch,
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Shape(format!("tensor {} has shape {:?}, expected {name} {shape:?}", t.name, t.shape)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Integrity(format!("tensor {} holds non-finite values", t.name)));
            }
        }
        Ok(())
    }

    fn image_input(&self, image: &[f64]) -> Result<Vec<T>, ModelError> {
        if image.len() != self.dims.image_dim {
            return Err(ModelError::Shape(format!(
                "image feature has dimension {}, model expects {}",
                image.len(),
                self.dims.image_dim
            )));
        }
        Ok(image.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    /// Softmax over the answer vocabulary for one (question, image) pair.
    pub fn probabilities(&self, question: &str, image: &[f64]) -> Result<Vec<f64>, ModelError> {
        let img = self.image_input(image)?;
        let enc = self.dims.encoder().encode(question);
        let act = net::forward(self.arch, &self.tensors, &enc, &img);
        Ok(softmax(&act.logits).into_iter().map(Scalar::to_f64_lossy).collect())
    }

    pub fn predict(&self, question: &str, image: &[f64], vocab: &AnswerVocabulary) -> Result<Prediction, ModelError> {
        let mut p = self.predict_with_probs(question, image, vocab)?;
        p.probs = None;
        Ok(p)
    }

    /// Argmax with lowest-index tie-break; the probability vector is kept.
    pub fn predict_with_probs(
        &self,
        question: &str,
        image: &[f64],
        vocab: &AnswerVocabulary,
    ) -> Result<Prediction, ModelError> {
        if vocab.len() != self.dims.answers {
            return Err(ModelError::Shape(format!(
                "vocabulary has {} answers, model has {}",
                vocab.len(),
                self.dims.answers
            )));
        }
        let probs = self.probabilities(question, image)?;
        let (index, confidence) = probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        Ok(Prediction {
            index,
            answer: vocab.answer(index).unwrap_or_default().to_string(),
            confidence,
            probs: Some(probs),
        })
    }
}

/// The answerer interface the curriculum is written against. A wrapper
/// around a pretrained backbone would implement the same two calls.
pub trait Answerer: Sized {
    fn predict(&self, question: &str, image: &[f64], vocab: &AnswerVocabulary) -> Result<Prediction, ModelError>;

    /// Returns a new, trained answerer; `self` is left unmodified.
    fn finetune(&self, examples: &[TrainExample<'_>], hyper: &TrainHyper) -> Result<(Self, TrainReport), ModelError>;
}

impl<T: Scalar> Answerer for AnswererCheckpoint<T> {
    fn predict(&self, question: &str, image: &[f64], vocab: &AnswerVocabulary) -> Result<Prediction, ModelError> {
        AnswererCheckpoint::predict(self, question, image, vocab)
    }

    fn finetune(&self, examples: &[TrainExample<'_>], hyper: &TrainHyper) -> Result<(Self, TrainReport), ModelError> {
        finetune(self, examples, hyper)
    }
}
