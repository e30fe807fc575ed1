//! Synthetic captioning world with a programmatic ground truth.
//!
//! Each context carries a few target content tokens; its features are a noisy
//! indicator vector of those targets. The true rating of a caption combines
//! content overlap with the targets (an F1 score over the caption's token
//! multiset, so repeats dilute precision) and a crude well-formedness bit
//! (no immediate token repeats, length within one of the target count).
//! Simulated raters vote on noisy copies of the true rating; their votes are
//! what training ever sees.
//!
//! The world is small enough that the caption space can be enumerated, which
//! is what makes exact expectations (and therefore exact tests) possible.

use serde::{Deserialize, Serialize};

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{
    Caption, CaptionDataset, Context, RatedCaption, RatingsDataset, RatingsEntry, Vocabulary,
    VOTES_PER_CAPTION,
};
use crate::error::{Error, Result};
use crate::model::{beam_search_list, sample, ModelParams};
use crate::rng::{fnv1a64, normal, rng_from, sub_seed};
use rand::Rng;

/// Feature jitter standard deviation.
const FEATURE_JITTER: f64 = 0.05;

/// Beam width used when pooling candidate captions for the ratings dataset.
const CANDIDATE_BEAM: usize = 8;

/// Content weight in the true rating; the remainder scores well-formedness.
pub const CONTENT_WEIGHT: f64 = 0.7;
pub const FORM_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Total vocabulary size including BOS and EOS.
    pub vocab_size: usize,
    pub l_max: usize,
    pub n_contexts: usize,
    pub targets_per_context: usize,
    /// Std dev of the noise raters add to the true rating before voting.
    pub rater_noise: f64,
    pub seed: u64,
    /// Distinct rated captions per context in the ratings dataset.
    pub candidates_per_context: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            vocab_size: 12,
            l_max: 4,
            n_contexts: 60,
            targets_per_context: 3,
            rater_noise: 0.1,
            seed: 17,
            candidates_per_context: 5,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no content tokens",
                self.vocab_size
            )));
        }
        let k = self.vocab_size - 2;
        if self.targets_per_context == 0 || self.targets_per_context > k {
            return Err(Error::Config(format!(
                "targets_per_context {} outside 1..={k}",
                self.targets_per_context
            )));
        }
        if self.l_max == 0 || self.n_contexts == 0 {
            return Err(Error::Config("l_max and n_contexts must be positive".into()));
        }
        // Distinct target sets per context require enough k-subsets.
        let mut sets: u128 = 1;
        for j in 0..self.targets_per_context {
            sets = sets.saturating_mul((k - j) as u128) / (j as u128 + 1);
            if sets > u64::MAX as u128 {
                break;
            }
        }
        if (self.n_contexts as u128) > sets {
            return Err(Error::Config(format!(
                "n_contexts {} exceeds the {sets} distinct target sets available",
                self.n_contexts
            )));
        }
        if !(self.rater_noise.is_finite() && self.rater_noise >= 0.0) {
            return Err(Error::Config(format!(
                "rater_noise {} invalid",
                self.rater_noise
            )));
        }
        if self.candidates_per_context < 2 {
            return Err(Error::Config(
                "candidates_per_context must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn n_content(&self) -> usize {
        self.vocab_size - 2
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub vocab: Vocabulary,
    /// Contexts that training data is built on.
    pub contexts: Vec<Context>,
    /// Held-out contexts for evaluation.
    pub eval_contexts: Vec<Context>,
}

const TAG_TRAIN_CTX: u64 = 0x11;
const TAG_EVAL_CTX: u64 = 0x12;
const TAG_VOTES: u64 = 0x13;
const TAG_DRAWS: u64 = 0x14;

fn make_contexts(
    spec: &WorldSpec,
    vocab: &Vocabulary,
    branch: u64,
    prefix: &str,
) -> Result<Vec<Context>> {
    let content = vocab.content_ids();
    let mut out = Vec::with_capacity(spec.n_contexts);
    let mut used: Vec<BTreeSet<usize>> = Vec::with_capacity(spec.n_contexts);
    for i in 0..spec.n_contexts {
        let mut rng = rng_from(sub_seed(sub_seed(spec.seed, branch), i as u64));
        // Target sets are sampled without replacement: redraw on collision
        // with an earlier context's set.
        let targets = loop {
            // Partial Fisher-Yates for distinct targets within the set.
            let mut pool = content.clone();
            for j in 0..spec.targets_per_context {
                let pick = j + rng.random_range(0..pool.len() - j);
                pool.swap(j, pick);
            }
            let set: BTreeSet<usize> =
                pool[..spec.targets_per_context].iter().copied().collect();
            if !used.contains(&set) {
                break set;
            }
        };
        used.push(targets.clone());
        let scale = 1.0 / (spec.targets_per_context as f64).sqrt();
        let features: Vec<f64> = (0..spec.vocab_size)
            .map(|t| {
                let base = if targets.contains(&t) { scale } else { 0.0 };
                base + normal(&mut rng, FEATURE_JITTER)
            })
            .collect();
        out.push(Context::new(format!("{prefix}{i:04}"), features, targets)?);
    }
    Ok(out)
}

/// Build the world deterministically from its spec.
pub fn gen_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let vocab = Vocabulary::synthetic(spec.n_content());
    let contexts = make_contexts(spec, &vocab, TAG_TRAIN_CTX, "ctx")?;
    let eval_contexts = make_contexts(spec, &vocab, TAG_EVAL_CTX, "eval")?;
    Ok(World {
        spec: *spec,
        vocab,
        contexts,
        eval_contexts,
    })
}

/// Per-dimension decomposition of the true rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingComponents {
    /// Fraction of caption tokens that are (distinct) targets.
    pub precision: f64,
    /// Fraction of targets mentioned.
    pub recall: f64,
    pub f1: f64,
    /// 1 when the caption is well-formed: non-empty, no immediate repeats,
    /// at most one token longer than the target count.
    pub grammar: f64,
}

pub fn rating_components(ctx: &Context, caption: &Caption) -> RatingComponents {
    let content = caption.content();
    if content.is_empty() {
        return RatingComponents {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            grammar: 0.0,
        };
    }
    let matched = ctx
        .target_tokens
        .iter()
        .filter(|t| content.contains(t))
        .count() as f64;
    let precision = matched / content.len() as f64;
    let recall = if ctx.target_tokens.is_empty() {
        0.0
    } else {
        matched / ctx.target_tokens.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let no_repeat = content.windows(2).all(|w| w[0] != w[1]);
    let fits = content.len() <= ctx.target_tokens.len() + 1;
    let grammar = if no_repeat && fits { 1.0 } else { 0.0 };
    RatingComponents {
        precision,
        recall,
        f1,
        grammar,
    }
}

/// True rating in [0, 1]: content F1 weighted against well-formedness.
pub fn true_rating(ctx: &Context, caption: &Caption) -> f64 {
    let c = rating_components(ctx, caption);
    (CONTENT_WEIGHT * c.f1 + FORM_WEIGHT * c.grammar).clamp(0.0, 1.0)
}

/// One binary vote per rater: each perceives the true rating plus Gaussian
/// noise (clamped to [0, 1]) and votes with that probability.
pub fn simulate_raters(r_star: f64, n_raters: usize, noise: f64, seed: u64) -> Vec<u8> {
    let mut rng = rng_from(seed);
    (0..n_raters)
        .map(|_| {
            let p = (r_star + normal(&mut rng, noise)).clamp(0.0, 1.0);
            u8::from(rng.random::<f64>() < p)
        })
        .collect()
}

/// The ground-truth caption for a context: its targets in ascending token
/// order. Rates exactly 1.0 under the true rating.
pub fn gt_caption(ctx: &Context, vocab: &Vocabulary) -> Result<Caption> {
    let toks: Vec<usize> = ctx.target_tokens.iter().copied().collect();
    Caption::from_content(&toks, vocab)
}

/// Build the supervised dataset (one ground-truth caption per context) and
/// the ratings dataset (distinct candidate captions pooled from the given
/// models' beam outputs and samples, voted on by simulated raters).
pub fn build_datasets(
    world: &World,
    candidates: &[ModelParams],
) -> Result<(CaptionDataset, RatingsDataset)> {
    if candidates.is_empty() {
        return Err(Error::Generation(
            "need at least one candidate model to pool rated captions".into(),
        ));
    }
    let spec = &world.spec;
    let vocab = &world.vocab;
    let mut gt_pairs = Vec::with_capacity(world.contexts.len());
    let mut entries = Vec::with_capacity(world.contexts.len());
    for ctx in &world.contexts {
        gt_pairs.push((ctx.clone(), gt_caption(ctx, vocab)?));

        let want = spec.candidates_per_context;
        let mut pool: Vec<Caption> = Vec::with_capacity(want);
        let beams: Vec<Vec<Caption>> = candidates
            .iter()
            .map(|m| beam_search_list(m, vocab, ctx, CANDIDATE_BEAM, spec.l_max))
            .collect::<Result<_>>()?;
        'fill: for rank in 0..CANDIDATE_BEAM {
            for list in &beams {
                if pool.len() >= want {
                    break 'fill;
                }
                if let Some(c) = list.get(rank) {
                    if !pool.contains(c) {
                        pool.push(c.clone());
                    }
                }
            }
        }
        let ctx_tag = fnv1a64(ctx.id.as_bytes());
        let max_attempts = 100 * want;
        let mut attempts = 0usize;
        while pool.len() < want && attempts < max_attempts {
            let m = &candidates[attempts % candidates.len()];
            let seed = sub_seed(sub_seed(spec.seed, TAG_DRAWS), ctx_tag ^ attempts as u64);
            let c = sample(m, vocab, ctx, spec.l_max, seed)?;
            if !pool.contains(&c) {
                pool.push(c);
            }
            attempts += 1;
        }
        if pool.len() < want {
            return Err(Error::Generation(format!(
                "context {}: only {} distinct candidate captions after {max_attempts} draws",
                ctx.id,
                pool.len()
            )));
        }
        let rated = pool
            .into_iter()
            .enumerate()
            .map(|(i, caption)| {
                let r_star = true_rating(ctx, &caption);
                let votes = simulate_raters(
                    r_star,
                    VOTES_PER_CAPTION,
                    spec.rater_noise,
                    sub_seed(sub_seed(spec.seed, TAG_VOTES), ctx_tag ^ i as u64),
                );
                RatedCaption::from_votes(caption, votes)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(RatingsEntry {
            context: ctx.clone(),
            rated,
        });
    }
    Ok((CaptionDataset::new(gt_pairs)?, RatingsDataset::new(entries)?))
}

// ---- world file -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    id: String,
    features: Vec<f64>,
    target_tokens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    spec: WorldSpec,
    contexts: Vec<ContextRecord>,
    eval_contexts: Vec<ContextRecord>,
}

fn to_records(contexts: &[Context]) -> Vec<ContextRecord> {
    contexts
        .iter()
        .map(|c| ContextRecord {
            id: c.id.clone(),
            features: c.features.clone(),
            target_tokens: c.target_tokens.iter().copied().collect(),
        })
        .collect()
}

fn from_records(records: Vec<ContextRecord>, vocab: &Vocabulary) -> Result<Vec<Context>> {
    records
        .into_iter()
        .map(|r| {
            if r.target_tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "context {}: no target tokens",
                    r.id
                )));
            }
            for &t in &r.target_tokens {
                if !vocab.is_content(t) {
                    return Err(Error::Validation(format!(
                        "context {}: target {t} is not a content token",
                        r.id
                    )));
                }
            }
            Context::new(r.id, r.features, r.target_tokens.into_iter().collect())
        })
        .collect()
}

pub fn save_world(path: &Path, world: &World) -> Result<()> {
    let file = WorldFile {
        spec: world.spec,
        contexts: to_records(&world.contexts),
        eval_contexts: to_records(&world.eval_contexts),
    };
    let s = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_world(path: &Path) -> Result<World> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WorldFile = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
    file.spec.validate()?;
    let vocab = Vocabulary::synthetic(file.spec.n_content());
    let contexts = from_records(file.contexts, &vocab)?;
    let eval_contexts = from_records(file.eval_contexts, &vocab)?;
    Ok(World {
        spec: file.spec,
        vocab,
        contexts,
        eval_contexts,
    })
}
