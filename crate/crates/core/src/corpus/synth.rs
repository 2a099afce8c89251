use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{detect_script, CorpusError, Dataset, ExampleMeta, ImageFeatureStore, QAExample, Split};
use crate::evaluate::ANNOTATORS;
use crate::langmix::{word_spans, BilingualLexicon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// A parallel rendering of every question, produced by word-for-word
/// substitution through `lexicon` (`builtin:<name>` or a TSV path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSpec {
    pub code: String,
    pub lexicon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub scenes: usize,
    pub questions_per_scene: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    pub templates: Vec<String>,
    /// Standard deviation of the Gaussian noise added to every feature slot.
    pub feature_noise: f64,
    /// Per-slot probability of replacing an annotator answer with a distractor.
    pub annotator_noise: f64,
    pub splits: SplitFractions,
    pub languages: Vec<LanguageSpec>,
    /// Directory relative lexicon paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            scenes: 1200,
            questions_per_scene: 3,
            min_objects: 1,
            max_objects: 5,
            shapes: ["circle", "square", "triangle", "star"].map(String::from).to_vec(),
            colors: ["red", "blue", "green", "yellow", "purple"].map(String::from).to_vec(),
            templates: [
                "what color is the <shape>",
                "how many <shape>s are there",
                "is there a <color> <shape>",
            ]
            .map(String::from)
            .to_vec(),
            feature_noise: 0.1,
            annotator_noise: 0.0,
            splits: SplitFractions { train: 0.7, val: 0.1, test: 0.2 },
            languages: vec![
                LanguageSpec { code: "hi".into(), lexicon: "builtin:en-hi".into() },
                LanguageSpec { code: "hl".into(), lexicon: "builtin:en-hl".into() },
            ],
            base_dir: None,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, CorpusError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        cfg.base_dir = base_dir.map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidArgument(m.to_string()));
        if self.scenes == 0 || self.questions_per_scene == 0 {
            return bad("scenes and questions_per_scene must be positive");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("need 1 <= min_objects <= max_objects");
        }
        if self.shapes.is_empty() || self.colors.is_empty() || self.templates.is_empty() {
            return bad("shapes, colors and templates must be non-empty");
        }
        if self.colors.len() < 2 {
            return bad("at least two colors are needed for distractors");
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be a non-negative number");
        }
        if !(0.0..=1.0).contains(&self.annotator_noise) {
            return bad("annotator_noise must lie in [0, 1]");
        }
        let s = &self.splits;
        if [s.train, s.val, s.test].iter().any(|f| *f < 0.0) || ((s.train + s.val + s.test) - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        for t in &self.templates {
            TemplateKind::of(t)?;
        }
        for l in &self.languages {
            if l.code == "en" || !super::is_valid_language_code(&l.code) {
                return Err(CorpusError::InvalidArgument(format!("bad language code {:?}", l.code)));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes.len() * self.colors.len()
    }
}

/// Objects in a scene as (shape index, color index) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub objects: Vec<(usize, usize)>,
}

impl Scene {
    fn count(&self, shape: usize, color: Option<usize>) -> usize {
        self.objects
            .iter()
            .filter(|(s, c)| *s == shape && color.is_none_or(|col| col == *c))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TemplateKind {
    ColorOf,
    CountOf,
    Exists,
}

impl TemplateKind {
    fn of(template: &str) -> Result<Self, CorpusError> {
        let has_color = template.contains("<color>");
        let plural = template.contains("<shape>s");
        let has_shape = template.contains("<shape>");
        match (has_shape, has_color, plural) {
            (true, true, _) => Ok(Self::Exists),
            (true, false, true) => Ok(Self::CountOf),
            (true, false, false) => Ok(Self::ColorOf),
            _ => Err(CorpusError::InvalidArgument(format!(
                "template {template:?} needs a <shape> placeholder"
            ))),
        }
    }
}

struct Generated {
    question: String,
    answer: String,
    distractors: Vec<String>,
}

/// Instantiates one template against a scene. `None` when the template has
/// no well-defined answer here (a color question with no single-colored
/// shape).
pub fn question_for_template(
    cfg: &SyntheticConfig,
    scene: &Scene,
    template: &str,
    rng: &mut impl Rng,
) -> Result<Option<(String, String)>, CorpusError> {
    Ok(instantiate(cfg, scene, template, rng)?.map(|g| (g.question, g.answer)))
}

fn instantiate(
    cfg: &SyntheticConfig,
    scene: &Scene,
    template: &str,
    rng: &mut impl Rng,
) -> Result<Option<Generated>, CorpusError> {
    let fill = |shape: usize, color: Option<usize>| {
        let mut q = template.replace("<shape>", &cfg.shapes[shape]);
        if let Some(c) = color {
            q = q.replace("<color>", &cfg.colors[c]);
        }
        q
    };
    Ok(match TemplateKind::of(template)? {
        TemplateKind::ColorOf => {
            let single: Vec<(usize, usize)> = (0..cfg.shapes.len())
                .filter_map(|s| {
                    let colors: Vec<usize> =
                        scene.objects.iter().filter(|(os, _)| *os == s).map(|(_, c)| *c).collect();
                    (!colors.is_empty() && colors.iter().all(|c| *c == colors[0])).then(|| (s, colors[0]))
                })
                .collect();
            if single.is_empty() {
                return Ok(None);
            }
            let (shape, color) = single[rng.random_range(0..single.len())];
            Some(Generated {
                question: fill(shape, None),
                answer: cfg.colors[color].clone(),
                distractors: cfg.colors.iter().enumerate().filter(|(i, _)| *i != color).map(|(_, c)| c.clone()).collect(),
            })
        }
        TemplateKind::CountOf => {
            let shape = rng.random_range(0..cfg.shapes.len());
            let n = scene.count(shape, None);
            Some(Generated {
                question: fill(shape, None),
                answer: n.to_string(),
                distractors: (0..=cfg.max_objects).filter(|k| *k != n).map(|k| k.to_string()).collect(),
            })
        }
        TemplateKind::Exists => {
            let want_yes = rng.random_bool(0.5);
            let pairs: Vec<(usize, usize)> = (0..cfg.shapes.len())
                .flat_map(|s| (0..cfg.colors.len()).map(move |c| (s, c)))
                .filter(|&(s, c)| (scene.count(s, Some(c)) > 0) == want_yes)
                .collect();
            let (pairs, yes) = if pairs.is_empty() {
                // every pair present (or none): fall back to the other answer
                let all: Vec<(usize, usize)> = (0..cfg.shapes.len())
                    .flat_map(|s| (0..cfg.colors.len()).map(move |c| (s, c)))
                    .collect();
                (all, !want_yes)
            } else {
                (pairs, want_yes)
            };
            let (s, c) = pairs[rng.random_range(0..pairs.len())];
            let answer = if yes { "yes" } else { "no" };
            Some(Generated {
                question: fill(s, Some(c)),
                answer: answer.to_string(),
                distractors: vec![if yes { "no" } else { "yes" }.to_string()],
            })
        }
    })
}

/// Word-for-word rendering of an English question through a lexicon.
pub(crate) fn substitute(question: &str, lexicon: &BilingualLexicon) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(question.len() * 2);
    let mut cursor = 0;
    for (s, e) in word_spans(question) {
        let word = question[s..e].to_lowercase();
        let entry = lexicon.get(&word).ok_or_else(|| {
            CorpusError::Generation(format!(
                "lexicon {}-{} has no entry for template word {word:?}",
                lexicon.source, lexicon.target
            ))
        })?;
        out.push_str(&question[cursor..s]);
        out.push_str(&entry.target);
        cursor = e;
    }
    out.push_str(&question[cursor..]);
    Ok(out)
}

/// Seeded shapes-and-colors corpus: English questions plus one parallel
/// rendering per configured language, sharing example-id stems, images and
/// answers. Scenes, not questions, are assigned to splits.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let lexicons = cfg
        .languages
        .iter()
        .enumerate()
        .map(|(i, l)| {
            BilingualLexicon::resolve(&l.lexicon, "en", &l.code, cfg.base_dir.as_deref())
                .map_err(|e| CorpusError::InvalidArgument(format!("languages[{i}].lexicon: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.feature_noise).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;

    let scenes: Vec<Scene> = (0..cfg.scenes)
        .map(|_| {
            let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
            Scene {
                objects: (0..n)
                    .map(|_| (rng.random_range(0..cfg.shapes.len()), rng.random_range(0..cfg.colors.len())))
                    .collect(),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.scenes).collect();
    order.shuffle(&mut rng);
    let n_train = (cfg.splits.train * cfg.scenes as f64).round() as usize;
    let n_val = (cfg.splits.val * cfg.scenes as f64).round() as usize;
    let mut split_of = vec![Split::Test; cfg.scenes];
    for (rank, &s) in order.iter().enumerate() {
        split_of[s] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let dim = cfg.feature_dim();
    let mut features = ImageFeatureStore::new(dim)?;
    let mut examples = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let image_id = format!("img{si:05}");
        let mut f = vec![0.0; dim];
        for &(s, c) in &scene.objects {
            f[s * cfg.colors.len() + c] += 1.0;
        }
        for v in &mut f {
            *v += noise.sample(&mut rng);
        }
        features.insert(image_id.clone(), f)?;

        for q in 0..cfg.questions_per_scene {
            let mut generated = None;
            for k in 0..cfg.templates.len() {
                let t = &cfg.templates[(q + k) % cfg.templates.len()];
                if let Some(g) = instantiate(cfg, scene, t, &mut rng)? {
                    generated = Some(g);
                    break;
                }
            }
            let Some(g) = generated else { continue };
            let answers: Vec<String> = (0..ANNOTATORS)
                .map(|_| {
                    if cfg.annotator_noise > 0.0 && rng.random_bool(cfg.annotator_noise) {
                        g.distractors[rng.random_range(0..g.distractors.len())].clone()
                    } else {
                        g.answer.clone()
                    }
                })
                .collect();
            let stem = format!("{si:05}-{q}");
            examples.push(QAExample {
                example_id: format!("{stem}.en"),
                image_id: image_id.clone(),
                script: detect_script(&g.question)?,
                question: g.question.clone(),
                language: "en".into(),
                answers: answers.clone(),
                split: split_of[si],
                meta: ExampleMeta::default(),
            });
            for (spec, lex) in cfg.languages.iter().zip(&lexicons) {
                let question = substitute(&g.question, lex)?;
                examples.push(QAExample {
                    example_id: format!("{stem}.{}", spec.code),
                    image_id: image_id.clone(),
                    script: detect_script(&question)?,
                    question,
                    language: spec.code.clone(),
                    answers: answers.clone(),
                    split: split_of[si],
                    meta: ExampleMeta::default(),
                });
            }
        }
    }
    Dataset::new(examples, features, format!("synthetic:seed={seed}"))
}
