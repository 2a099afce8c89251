use std::cmp::Ordering;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{ConcatOrder, CurriculumError, Selection};
use crate::corpus::{AnswerVocabulary, ImageFeatureStore, QAExample};
use crate::model::Answerer;

/// A weak answer to a translated question, produced on the concatenated
/// prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakLabel {
    /// Id of the source-language example the translation came from.
    pub example_id: String,
    pub question_t: String,
    pub prompt: String,
    pub answer_index: usize,
    pub answer: String,
    pub confidence: f64,
    pub selected: bool,
}

pub fn build_concat_prompt(q_source: &str, q_target: &str, sep: &str, order: ConcatOrder) -> Result<String, CurriculumError> {
    if q_source.is_empty() || q_target.is_empty() {
        return Err(CurriculumError::Validation("both prompt segments must be non-empty".into()));
    }
    Ok(match order {
        ConcatOrder::SourceFirst => format!("{q_source}{sep}{q_target}"),
        ConcatOrder::TargetFirst => format!("{q_target}{sep}{q_source}"),
    })
}

/// Predicts an answer for every translation from its concatenated prompt.
/// Work is split across threads; output order follows the input.
pub fn weak_annotate<A: Answerer + Sync>(
    model: &A,
    source_examples: &[&QAExample],
    translations: &[String],
    features: &ImageFeatureStore,
    vocab: &AnswerVocabulary,
    sep: &str,
    order: ConcatOrder,
) -> Result<Vec<WeakLabel>, CurriculumError> {
    if source_examples.len() != translations.len() {
        return Err(CurriculumError::Validation(format!(
            "{} source examples but {} translations",
            source_examples.len(),
            translations.len()
        )));
    }
    let label = |ex: &QAExample, t: &String| -> Result<WeakLabel, CurriculumError> {
        let prompt = build_concat_prompt(&ex.question, t, sep, order)?;
        let image = features
            .get(&ex.image_id)
            .ok_or_else(|| CurriculumError::Validation(format!("{}: no feature for {}", ex.example_id, ex.image_id)))?;
        let p = model.predict(&prompt, image, vocab)?;
        Ok(WeakLabel {
            example_id: ex.example_id.clone(),
            question_t: t.clone(),
            prompt,
            answer_index: p.index,
            answer: p.answer,
            confidence: p.confidence,
            selected: false,
        })
    };
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = source_examples.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<WeakLabel>, CurriculumError>> = thread::scope(|s| {
        let handles: Vec<_> = source_examples
            .chunks(chunk)
            .zip(translations.chunks(chunk))
            .map(|(exs, ts)| s.spawn(move || exs.iter().zip(ts).map(|(e, t)| label(e, t)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("annotation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(source_examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn rank(a: &WeakLabel, b: &WeakLabel) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then_with(|| a.example_id.cmp(&b.example_id))
}

/// Marks the selected labels in place and returns them, most confident
/// first. Ties in confidence go to the smaller example id.
pub fn select_high_confidence(labels: &mut [WeakLabel], selection: Selection) -> Result<Vec<WeakLabel>, CurriculumError> {
    if labels.is_empty() {
        return Err(CurriculumError::Validation("no weak labels to select from".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&i, &j| rank(&labels[i], &labels[j]));
    let take = match selection {
        Selection::TopN(n) => n.min(labels.len()),
        Selection::Fraction(f) => ((f * labels.len() as f64).floor() as usize).min(labels.len()),
        Selection::Threshold(t) => order.iter().take_while(|&&i| labels[i].confidence > t).count(),
    };
    for l in labels.iter_mut() {
        l.selected = false;
    }
    for &i in &order[..take] {
        labels[i].selected = true;
    }
    Ok(order[..take].iter().map(|&i| labels[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn label(id: &str, confidence: f64) -> WeakLabel {
        WeakLabel {
            example_id: id.into(),
            question_t: "q".into(),
            prompt: "p".into(),
            answer_index: 0,
            answer: "yes".into(),
            confidence,
            selected: false,
        }
    }

    #[test]
    fn prompt_orders() {
        let p = build_concat_prompt("what color is the bus", "बस किस रंग की है", " [SEP] ", ConcatOrder::SourceFirst).unwrap();
        assert_eq!(p, "what color is the bus [SEP] बस किस रंग की है");
        assert_eq!(crate::corpus::detect_script(&p).unwrap(), crate::corpus::ScriptTag::Mixed);
        let r = build_concat_prompt("a b", "c", "|", ConcatOrder::TargetFirst).unwrap();
        assert_eq!(r, "c|a b");
        assert!(build_concat_prompt("", "c", "|", ConcatOrder::SourceFirst).is_err());
    }

    #[test]
    fn selection_examples() {
        let mut ls = vec![label("x", 0.9), label("y", 0.5), label("z", 0.7)];
        let s = select_high_confidence(&mut ls, Selection::TopN(2)).unwrap();
        assert_eq!(s.iter().map(|l| l.example_id.as_str()).collect::<Vec<_>>(), vec!["x", "z"]);
        assert!(!ls[1].selected && ls[0].selected && ls[2].selected);
        assert_eq!(select_high_confidence(&mut ls, Selection::TopN(10)).unwrap().len(), 3);
        let mut tie = vec![label("b", 0.8), label("a", 0.8)];
        assert_eq!(select_high_confidence(&mut tie, Selection::TopN(1)).unwrap()[0].example_id, "a");
        assert!(select_high_confidence(&mut [], Selection::TopN(1)).is_err());
        let mut ls = vec![label("x", 0.9), label("y", 0.5)];
        assert!(select_high_confidence(&mut ls, Selection::Threshold(0.95)).unwrap().is_empty());
        assert_eq!(select_high_confidence(&mut ls, Selection::Fraction(0.5)).unwrap().len(), 1);
    }

    fn pool() -> impl Strategy<Value = Vec<WeakLabel>> {
        prop::collection::vec((0u32..50, 0u8..20), 1..60).prop_map(|v| {
            v.into_iter().enumerate().map(|(i, (id, c))| label(&format!("{id:03}-{i}"), f64::from(c) / 20.0)).collect()
        })
    }

    proptest! {
        #[test]
        fn top_n_invariants(mut labels in pool(), n in 0usize..80) {
            let selected = select_high_confidence(&mut labels, Selection::TopN(n)).unwrap();
            prop_assert_eq!(selected.len(), n.min(labels.len()));
            let min_sel = labels.iter().filter(|l| l.selected).map(|l| l.confidence).fold(f64::INFINITY, f64::min);
            let max_un = labels.iter().filter(|l| !l.selected).map(|l| l.confidence).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_sel >= max_un);
            // among equal-confidence boundary labels, smaller ids win
            for s in labels.iter().filter(|l| l.selected) {
                for u in labels.iter().filter(|l| !l.selected && l.confidence == s.confidence) {
                    prop_assert!(s.example_id < u.example_id);
                }
            }
            let mut again = labels.clone();
            prop_assert_eq!(select_high_confidence(&mut again, Selection::TopN(n)).unwrap(), selected);
        }

        #[test]
        fn threshold_selects_super_threshold_set(mut labels in pool(), t in 0.0f64..1.0) {
            select_high_confidence(&mut labels, Selection::Threshold(t)).unwrap();
            for l in &labels {
                prop_assert_eq!(l.selected, l.confidence > t);
            }
        }
    }
}
