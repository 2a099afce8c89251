use num_rational::Ratio;

use super::{normalize_answer, EvalError};
use crate::Scalar;

pub const ANNOTATORS: usize = 10;

/// Number of annotator answers equal to the prediction after normalization.
pub fn count_matches(prediction: &str, annotator_answers: &[String]) -> Result<usize, EvalError> {
    if annotator_answers.len() != ANNOTATORS {
        return Err(EvalError::Validation(format!(
            "expected {ANNOTATORS} annotator answers, got {}",
            annotator_answers.len()
        )));
    }
    let p = normalize_answer(prediction);
    Ok(annotator_answers.iter().filter(|a| normalize_answer(a) == p).count())
}

/// Accuracy with `matches` of the ten annotators agreeing, as an exact
/// fraction. Averages min(agreeing/3, 1) over the ten nine-annotator subsets:
/// leaving out a matching annotator leaves `matches - 1` agreeing, leaving out
/// any other leaves `matches`.
pub fn accuracy_for_matches(matches: usize) -> Ratio<u32> {
    assert!(matches <= ANNOTATORS, "at most ten annotators can match");
    let k = matches as u32;
    let capped = |m: u32| m.min(3);
    let numerator = k * capped(k.saturating_sub(1)) + (ANNOTATORS as u32 - k) * capped(k);
    Ratio::new(numerator, 3 * ANNOTATORS as u32)
}

pub fn vqa_accuracy_exact(prediction: &str, annotator_answers: &[String]) -> Result<Ratio<u32>, EvalError> {
    Ok(accuracy_for_matches(count_matches(prediction, annotator_answers)?))
}

/// VQA accuracy in any scalar type; a single rounding of the exact fraction.
pub fn vqa_accuracy_in<T: Scalar>(prediction: &str, annotator_answers: &[String]) -> Result<T, EvalError> {
    let r = vqa_accuracy_exact(prediction, annotator_answers)?;
    Ok(T::from_f64_lossy(f64::from(*r.numer())) / T::from_f64_lossy(f64::from(*r.denom())))
}

pub fn vqa_accuracy(prediction: &str, annotator_answers: &[String]) -> Result<f64, EvalError> {
    let r = vqa_accuracy_exact(prediction, annotator_answers)?;
    Ok(f64::from(*r.numer()) / f64::from(*r.denom()))
}
