use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{backward, forward, Gradients};
use super::{AnswererCheckpoint, ModelError, TextEncoding};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Heavy-ball momentum of the dense layers. Embedding rows take plain
    /// sparse SGD steps.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 0.05, batch_size: 32, seed: 0, momentum: default_momentum() }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidArgument("learning_rate must be a non-negative number".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One weighted training pair. Weight 0 excludes the example from the loss.
#[derive(Debug, Clone)]
pub struct TrainExample<'a> {
    pub question: Cow<'a, str>,
    pub image: &'a [f64],
    pub answer: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample<T> {
    pub encoding: TextEncoding,
    pub image: Vec<T>,
    pub answer: usize,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub examples: usize,
}

/// Validates and text-encodes a training set for `ckpt`.
pub fn encode_examples<T: Scalar>(
    ckpt: &AnswererCheckpoint<T>,
    examples: &[TrainExample<'_>],
) -> Result<Vec<EncodedExample<T>>, ModelError> {
    let encoder = ckpt.dims.encoder();
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            if ex.answer >= ckpt.dims.answers {
                return Err(ModelError::InvalidArgument(format!(
                    "example {i}: answer index {} out of range for {} answers",
                    ex.answer, ckpt.dims.answers
                )));
            }
            if !(ex.weight >= 0.0 && ex.weight.is_finite()) {
                return Err(ModelError::InvalidArgument(format!("example {i}: weight {} must be >= 0", ex.weight)));
            }
            if ex.image.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidArgument(format!("example {i}: non-finite image feature")));
            }
            if ex.image.len() != ckpt.dims.image_dim {
                return Err(ModelError::Shape(format!(
                    "example {i}: image dimension {}, expected {}",
                    ex.image.len(),
                    ckpt.dims.image_dim
                )));
            }
            Ok(EncodedExample {
                encoding: encoder.encode(&ex.question),
                image: ex.image.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                answer: ex.answer,
                weight: T::from_f64_lossy(ex.weight),
            })
        })
        .collect()
}

fn data_hash(examples: &[TrainExample<'_>]) -> String {
    let mut h = Sha256::new();
    for ex in examples {
        h.update(ex.question.as_bytes());
        h.update([0u8]);
        for v in ex.image {
            h.update(v.to_le_bytes());
        }
        h.update((ex.answer as u64).to_le_bytes());
        h.update(ex.weight.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).fold(T::zero(), |a, b| a + b).ln() + max;
    lse - logits[target]
}

fn total_weight<T: Scalar>(batch: &[EncodedExample<T>]) -> T {
    batch.iter().map(|e| e.weight).fold(T::zero(), |a, b| a + b)
}

/// Weighted mean cross-entropy, forward pass only.
pub fn batch_loss<T: Scalar>(ckpt: &AnswererCheckpoint<T>, batch: &[EncodedExample<T>]) -> T {
    let w = total_weight(batch);
    if w == T::zero() {
        return T::zero();
    }
    let sum = batch
        .iter()
        .filter(|e| e.weight > T::zero())
        .map(|e| e.weight * cross_entropy(&forward(ckpt.arch, &ckpt.tensors, &e.encoding, &e.image).logits, e.answer))
        .fold(T::zero(), |a, b| a + b);
    sum / w
}

/// Weighted mean cross-entropy and its analytic gradient.
pub fn loss_and_gradients<T: Scalar>(ckpt: &AnswererCheckpoint<T>, batch: &[EncodedExample<T>]) -> (T, Gradients<T>) {
    let mut grads = Gradients::zeros_like(&ckpt.tensors);
    let w = total_weight(batch);
    if w == T::zero() {
        return (T::zero(), grads);
    }
    let mut loss = T::zero();
    for e in batch.iter().filter(|e| e.weight > T::zero()) {
        let act = forward(ckpt.arch, &ckpt.tensors, &e.encoding, &e.image);
        loss += e.weight * cross_entropy(&act.logits, e.answer);
        let scale = e.weight / w;
        let mut dlogits = super::softmax(&act.logits);
        dlogits[e.answer] -= T::one();
        for d in &mut dlogits {
            *d *= scale;
        }
        backward(ckpt.arch, &ckpt.tensors, &e.encoding, &e.image, &act, &dlogits, &mut grads);
    }
    (loss / w, grads)
}

/// Mini-batch gradient descent on weighted cross-entropy with seeded
/// shuffling. Returns a new checkpoint; the input is not modified.
pub fn finetune<T: Scalar>(
    ckpt: &AnswererCheckpoint<T>,
    examples: &[TrainExample<'_>],
    hyper: &TrainHyper,
) -> Result<(AnswererCheckpoint<T>, TrainReport), ModelError> {
    hyper.validate()?;
    ckpt.validate()?;
    let data = encode_examples(ckpt, examples)?;
    let mut model = ckpt.clone();
    let initial = batch_loss(&model, &data).to_f64_lossy();
    if !initial.is_finite() {
        return Err(ModelError::Divergence { step: 0, loss: initial });
    }
    let lr = T::from_f64_lossy(hyper.learning_rate);
    let mu = T::from_f64_lossy(hyper.momentum);
    let mut velocity: Vec<Vec<T>> = model
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| if i == 0 { Vec::new() } else { vec![T::zero(); t.numel()] })
        .collect();
    let embed_dim = model.dims.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grads) = loss_and_gradients(&model, &batch);
            step += 1;
            let l = loss.to_f64_lossy();
            if !l.is_finite() {
                return Err(ModelError::Divergence { step, loss: l });
            }
            for (i, t) in model.tensors.iter_mut().enumerate().skip(1) {
                for ((p, v), &g) in t.data.iter_mut().zip(velocity[i].iter_mut()).zip(&grads.dense[i]) {
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
            let table = &mut model.tensors[0].data;
            for (&row, g) in &grads.embed_rows {
                let r = row as usize * embed_dim;
                for (p, &gv) in table[r..r + embed_dim].iter_mut().zip(g) {
                    *p -= lr * gv;
                }
            }
        }
    }
    let final_loss = batch_loss(&model, &data).to_f64_lossy();
    if !final_loss.is_finite() {
        return Err(ModelError::Divergence { step, loss: final_loss });
    }
    model.provenance.seed = hyper.seed;
    model.provenance.data_hash = data_hash(examples);
    model.hyper = Some(hyper.clone());
    model.final_loss = Some(final_loss);
    let report = TrainReport { initial_loss: initial, final_loss, steps: step, examples: data.len() };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{modal_answer, AnswerVocabulary};
    use crate::model::{init_answerer, Arch, Dims};

    fn dims() -> Dims {
        Dims { buckets: 512, ngram: 3, embed_dim: 8, hidden: 16, image_dim: 3, answers: 4 }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let m = init_answerer::<f64>(Arch::Dual, dims(), 2).unwrap();
        let img = [1.0, 0.0, 0.5];
        let ex: Vec<TrainExample> = (0..6)
            .map(|i| TrainExample { question: format!("q{i}").into(), image: &img, answer: i % 4, weight: 1.0 })
            .collect();
        let hyper = TrainHyper { epochs: 1, learning_rate: 0.0, batch_size: 4, ..TrainHyper::default() };
        let (out, report) = finetune(&m, &ex, &hyper).unwrap();
        assert_eq!(out.tensors, m.tensors);
        assert_eq!(report.final_loss, report.initial_loss);
        assert_eq!(report.steps, 2);
    }

    #[test]
    fn input_checkpoint_untouched_and_loss_drops() {
        let m = init_answerer::<f64>(Arch::Cross, dims(), 2).unwrap();
        let before = m.clone();
        let img = [1.0, 0.0, 0.5];
        let ex: Vec<TrainExample> = ["yes", "no", "maybe", "so"]
            .iter()
            .enumerate()
            .map(|(i, q)| TrainExample { question: (*q).into(), image: &img, answer: i, weight: 1.0 })
            .collect();
        let hyper = TrainHyper { epochs: 50, learning_rate: 0.1, batch_size: 2, ..TrainHyper::default() };
        let (out, report) = finetune(&m, &ex, &hyper).unwrap();
        assert_eq!(m, before);
        assert!(report.final_loss < report.initial_loss * 0.5, "{report:?}");
        assert_eq!(out.final_loss, Some(report.final_loss));
    }

    #[test]
    fn majority_target_rule() {
        let v = AnswerVocabulary::from_answers(vec!["yes".into(), "no".into()]).unwrap();
        let all_yes = vec!["yes".to_string(); 10];
        let mut split: Vec<String> = vec!["yes".to_string(); 3];
        split.extend(vec!["no".to_string(); 7]);
        assert_eq!(v.index_of(&modal_answer(&all_yes)), Some(0));
        assert_eq!(v.index_of(&modal_answer(&split)), Some(1));
    }

    #[test]
    fn invalid_examples_rejected() {
        let m = init_answerer::<f64>(Arch::Cross, dims(), 0).unwrap();
        let img = [0.0; 3];
        let bad_answer = [TrainExample { question: "q".into(), image: &img, answer: 9, weight: 1.0 }];
        assert!(finetune(&m, &bad_answer, &TrainHyper::default()).is_err());
        let bad_weight = [TrainExample { question: "q".into(), image: &img, answer: 0, weight: -1.0 }];
        assert!(finetune(&m, &bad_weight, &TrainHyper::default()).is_err());
    }

    #[test]
    fn divergence_reported() {
        let mut m = init_answerer::<f64>(Arch::Cross, dims(), 0).unwrap();
        let b2 = m.tensors.len() - 1;
        m.tensors[b2].data[0] = -1e308;
        m.tensors[b2].data[1] = 1e308;
        let img = [0.0; 3];
        let ex = [TrainExample { question: "q".into(), image: &img, answer: 0, weight: 1.0 }];
        let hyper = TrainHyper::default();
        assert!(matches!(finetune(&m, &ex, &hyper), Err(ModelError::Divergence { .. })));
    }

    #[test]
    fn deterministic_training() {
        let m = init_answerer::<f64>(Arch::Dual, dims(), 5).unwrap();
        let img = [0.2, 1.0, 0.0];
        let ex: Vec<TrainExample> = (0..10)
            .map(|i| TrainExample { question: format!("w{}", i % 3).into(), image: &img, answer: i % 3, weight: 0.5 })
            .collect();
        let h = TrainHyper { epochs: 3, batch_size: 3, seed: 7, ..TrainHyper::default() };
        let (a, _) = finetune(&m, &ex, &h).unwrap();
        let (b, _) = finetune(&m, &ex, &h).unwrap();
        assert_eq!(a, b);
    }

    fn finite_difference_check(arch: Arch) {
        let d = Dims { buckets: 97, ngram: 3, embed_dim: 5, hidden: 7, image_dim: 4, answers: 3 };
        let m = init_answerer::<f64>(arch, d, 21).unwrap();
        let imgs = [[0.5, -1.0, 0.25, 2.0], [1.0, 0.0, -0.5, 0.3]];
        let ex = vec![
            TrainExample { question: "how many stars".into(), image: &imgs[0], answer: 1, weight: 1.0 },
            TrainExample { question: "कितने तारे".into(), image: &imgs[1], answer: 2, weight: 0.3 },
        ];
        let data = encode_examples(&m, &ex).unwrap();
        let (_, g) = loss_and_gradients(&m, &data);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let used: Vec<usize> = data[0].encoding.indices.iter().map(|&i| i as usize).collect();
        for ti in 0..m.tensors.len() {
            for k in 0..10 {
                let flat = if ti == 0 {
                    let row = used[k % used.len()];
                    row * d.embed_dim + rand::Rng::random_range(&mut rng, 0..d.embed_dim)
                } else {
                    rand::Rng::random_range(&mut rng, 0..m.tensors[ti].numel())
                };
                let h = 1e-5;
                let mut plus = m.clone();
                plus.tensors[ti].data[flat] += h;
                let mut minus = m.clone();
                minus.tensors[ti].data[flat] -= h;
                let numeric = (batch_loss(&plus, &data) - batch_loss(&minus, &data)) / (2.0 * h);
                let analytic = g.get(ti, flat);
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(rel < 1e-4, "{arch} tensor {} index {flat}: {analytic} vs {numeric}", m.tensors[ti].name);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_cross() {
        finite_difference_check(Arch::Cross);
    }

    #[test]
    fn gradients_match_finite_differences_dual() {
        finite_difference_check(Arch::Dual);
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let v = AnswerVocabulary::from_answers(vec!["red".into(), "blue".into()]).unwrap();
        let imgs: Vec<[f64; 3]> = (0..20).map(|i| if i % 2 == 0 { [1.0, 0.0, 0.1] } else { [0.0, 1.0, -0.1] }).collect();
        let ex: Vec<TrainExample> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| TrainExample { question: "what color".into(), image: img, answer: i % 2, weight: 1.0 })
            .collect();
        let d = Dims { answers: 2, ..dims() };
        for arch in [Arch::Cross, Arch::Dual] {
            let m = init_answerer::<f64>(arch, d, 1).unwrap();
            let h = TrainHyper { epochs: 60, learning_rate: 0.1, batch_size: 4, ..TrainHyper::default() };
            let (out, _) = finetune(&m, &ex, &h).unwrap();
            let correct = ex.iter().filter(|e| out.predict(&e.question, e.image, &v).unwrap().index == e.answer).count();
            assert_eq!(correct, 20, "{arch}");
        }
    }
}
