//! Evaluation protocols with simulated raters.
//!
//! Two protocols, both over beam-decoded captions on held-out contexts:
//!
//! - goodness: independent raters vote on each caption; reported as the mean
//!   vote rate ("average") and as per-caption majority decisions ("voting").
//! - side-by-side: a candidate model against a baseline, scored per quality
//!   dimension on a five-point scale {-1, -0.5, 0, 0.5, 1} derived from the
//!   difference in that dimension. Identical captions score exactly zero with
//!   no rater noise.
//!
//! All means come with percentile-bootstrap confidence intervals.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::data::{Caption, Context, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{beam_search, ModelParams};
use crate::rng::{fnv1a64, normal, rng_from, sub_seed};
use crate::synthworld::simulate_raters;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Raters per caption in the goodness protocol.
    pub n_raters: usize,
    /// Raters per comparison in the side-by-side protocol.
    pub sxs_raters: usize,
    /// Rater noise (std dev) for both protocols.
    pub noise: f64,
    pub beam: usize,
    pub resamples: usize,
    /// Confidence level of the bootstrap intervals.
    pub level: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_raters: 6,
            sxs_raters: 3,
            noise: 0.1,
            beam: 5,
            resamples: 1000,
            level: 0.95,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_raters == 0 || self.sxs_raters == 0 || self.beam == 0 || self.resamples == 0 {
            return Err(Error::Config(
                "raters, beam and resamples must all be positive".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level {} outside (0, 1)",
                self.level
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} invalid", self.noise)));
        }
        Ok(())
    }
}

/// Majority decision over binary votes: 1 for a majority of ones, 0 for a
/// majority of zeros, 0.5 on an exact tie.
pub fn majority_vote(votes: &[u8]) -> f64 {
    let ones = votes.iter().filter(|&&v| v == 1).count() * 2;
    match ones.cmp(&votes.len()) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodnessResult {
    pub n_contexts: usize,
    /// Mean vote rate over all (caption, rater) pairs.
    pub average: f64,
    pub average_ci: (f64, f64),
    /// Mean per-caption majority decision.
    pub voting: f64,
    pub voting_ci: (f64, f64),
}

const TAG_GOODNESS: u64 = 0x21;
const TAG_SXS: u64 = 0x22;
const TAG_BOOT_AVG: u64 = 0x23;
const TAG_BOOT_VOTE: u64 = 0x24;
const TAG_BOOT_DIM: u64 = 0x25;

/// Rate one model's beam captions with simulated raters.
pub fn goodness_eval(
    params: &ModelParams,
    vocab: &Vocabulary,
    contexts: &[Context],
    l_max: usize,
    rating: &dyn Fn(&Context, &Caption) -> f64,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<GoodnessResult> {
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts to evaluate".into()));
    }
    let mut avgs = Vec::with_capacity(contexts.len());
    let mut votes_maj = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let caption = beam_search(params, vocab, ctx, cfg.beam, l_max)?;
        let r = rating(ctx, &caption);
        if !r.is_finite() {
            return Err(Error::Numeric(format!(
                "rating for context {} is not finite",
                ctx.id
            )));
        }
        let votes = simulate_raters(
            r.clamp(0.0, 1.0),
            cfg.n_raters,
            cfg.noise,
            sub_seed(sub_seed(seed, TAG_GOODNESS), fnv1a64(ctx.id.as_bytes())),
        );
        avgs.push(votes.iter().map(|&v| v as f64).sum::<f64>() / votes.len() as f64);
        votes_maj.push(majority_vote(&votes));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(GoodnessResult {
        n_contexts: contexts.len(),
        average: mean(&avgs),
        average_ci: bootstrap_ci(&avgs, cfg.resamples, cfg.level, sub_seed(seed, TAG_BOOT_AVG))?,
        voting: mean(&votes_maj),
        voting_ci: bootstrap_ci(
            &votes_maj,
            cfg.resamples,
            cfg.level,
            sub_seed(seed, TAG_BOOT_VOTE),
        )?,
    })
}

/// Map a perceived quality difference to the five-point comparison scale.
pub fn sxs_score(delta: f64) -> f64 {
    if delta.abs() < 0.05 {
        0.0
    } else if delta.abs() < 0.25 {
        0.5 * delta.signum()
    } else {
        delta.signum()
    }
}

/// Index of a five-point score in a histogram laid out [-1, -0.5, 0, 0.5, 1].
pub fn score_bin(score: f64) -> usize {
    ((score + 1.0) * 2.0).round() as usize
}

pub const SXS_DIMENSIONS: [&str; 3] = ["informativeness", "correctness", "fluency"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SxsDim {
    pub name: String,
    pub mean: f64,
    pub ci: (f64, f64),
    /// Rater-level score counts for [-1, -0.5, 0, 0.5, 1].
    pub histogram: [usize; 5],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SxsResult {
    pub n_contexts: usize,
    pub dims: Vec<SxsDim>,
}

/// Compare two models per quality dimension; positive scores favor the first.
/// `components` maps a caption to one score per dimension (same order as
/// [`SXS_DIMENSIONS`]); raters perceive the per-dimension difference plus
/// noise and answer on the five-point scale.
pub fn sxs_eval(
    params_a: &ModelParams,
    params_b: &ModelParams,
    vocab: &Vocabulary,
    contexts: &[Context],
    l_max: usize,
    components: &dyn Fn(&Context, &Caption) -> [f64; 3],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<SxsResult> {
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts to evaluate".into()));
    }
    let mut item_scores: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut histograms = [[0usize; 5]; 3];
    for ctx in contexts {
        let cap_a = beam_search(params_a, vocab, ctx, cfg.beam, l_max)?;
        let cap_b = beam_search(params_b, vocab, ctx, cfg.beam, l_max)?;
        if cap_a == cap_b {
            // Identical captions: every rater scores an exact zero, no noise.
            for d in 0..3 {
                item_scores[d].push(0.0);
                histograms[d][score_bin(0.0)] += cfg.sxs_raters;
            }
            continue;
        }
        let comp_a = components(ctx, &cap_a);
        let comp_b = components(ctx, &cap_b);
        let mut rng = rng_from(sub_seed(
            sub_seed(seed, TAG_SXS),
            fnv1a64(ctx.id.as_bytes()),
        ));
        for d in 0..3 {
            let delta = comp_a[d] - comp_b[d];
            let mut sum = 0.0;
            for _ in 0..cfg.sxs_raters {
                let s = sxs_score(delta + normal(&mut rng, cfg.noise));
                histograms[d][score_bin(s)] += 1;
                sum += s;
            }
            item_scores[d].push(sum / cfg.sxs_raters as f64);
        }
    }
    let mut dims = Vec::with_capacity(3);
    for (d, name) in SXS_DIMENSIONS.iter().enumerate() {
        let xs = &item_scores[d];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let ci = bootstrap_ci(
            xs,
            cfg.resamples,
            cfg.level,
            sub_seed(seed, TAG_BOOT_DIM + d as u64),
        )?;
        dims.push(SxsDim {
            name: name.to_string(),
            mean,
            ci,
            histogram: histograms[d],
        });
    }
    Ok(SxsResult {
        n_contexts: contexts.len(),
        dims,
    })
}

/// Percentile bootstrap interval for the mean of `xs`.
pub fn bootstrap_ci(
    xs: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Domain("bootstrap over an empty sample".into()));
    }
    if resamples == 0 {
        return Err(Error::Domain("bootstrap needs at least one resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let n = xs.len();
    let mut rng = rng_from(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += xs[rng.random_range(0..n)];
        }
        means.push(s / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let q = |p: f64| -> f64 {
        let pos = p * (means.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        means[lo] * (1.0 - frac) + means[hi] * frac
    };
    let tail = (1.0 - level) / 2.0;
    Ok((q(tail), q(1.0 - tail)))
}
