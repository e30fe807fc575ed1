//! Training modes over one shared Adam loop.
//!
//! - `Baseline`: maximum likelihood on ground-truth captions.
//! - `BaselinePlus`: maximum likelihood after merging rated captions whose
//!   rating exceeds a threshold into the training set.
//! - `OnPg`: curriculum of MLE and on-policy policy gradient; rewards come
//!   from the learned estimator, the baseline is a moving average.
//! - `OffPg`: curriculum of MLE and off-policy policy gradient over the
//!   fixed ratings dataset; captions are drawn from an alternative
//!   distribution q (a mixture of the rated captions and a uniform over the
//!   caption space), every term is importance-weighted by eta = p/q, and
//!   unrated draws substitute reward := baseline so they contribute exact
//!   zeros. The baseline is the dataset mean rating.

pub mod adam;

pub use adam::{adam_step, lr_schedule, AdamState};

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Caption, CaptionDataset, Context, RatingsDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::estimator::{predict_rating, EstimatorParams};
use crate::model::{
    self, init_params, GradientVector, ModelDims, ModelParams,
};
use crate::oracle;
use crate::rng::{rng_from, sub_seed};

/// Importance weights are clipped here; clip events are counted in the trace.
pub const ETA_CLIP: f64 = 1e6;

/// Moving-average baseline start value.
pub const MA_INIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum TrainMode {
    #[serde(rename = "baseline")]
    #[value(name = "baseline")]
    Baseline,
    #[serde(rename = "baseline_plus")]
    #[value(name = "baseline_plus")]
    BaselinePlus,
    #[serde(rename = "onpg")]
    #[value(name = "onpg")]
    OnPg,
    #[serde(rename = "offpg")]
    #[value(name = "offpg")]
    OffPg,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrainMode::Baseline => "baseline",
            TrainMode::BaselinePlus => "baseline_plus",
            TrainMode::OnPg => "onpg",
            TrainMode::OffPg => "offpg",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    DatasetMean,
    MovingAverage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Curriculum weight on the policy-gradient part.
    pub alpha: f64,
    /// Uniform share of the alternative sampling distribution q.
    pub epsilon: f64,
    /// Rating threshold for merging rated captions (BaselinePlus).
    pub t_threshold: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub warmup_epochs: usize,
    pub steps: usize,
    pub seed: u64,
    pub b_mode: BaselineMode,
    /// Decay of the moving-average baseline (OnPg).
    pub ma_decay: f64,
    /// Steps per nominal epoch; converts epoch-based schedule knobs to steps.
    pub steps_per_epoch: usize,
    /// Evaluate the exact expected rating every this many steps (0 = never).
    pub exact_trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 10.0,
            epsilon: 0.1,
            t_threshold: 0.5,
            batch_size: 32,
            lr: 3e-3,
            lr_decay: 0.95,
            warmup_epochs: 20,
            steps: 2000,
            seed: 17,
            b_mode: BaselineMode::DatasetMean,
            ma_decay: 0.99,
            steps_per_epoch: 12,
            exact_trace_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, mode: TrainMode) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} invalid", self.alpha)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} invalid", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} invalid", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.ma_decay) {
            return Err(Error::Config(format!("ma_decay {} invalid", self.ma_decay)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "steps, batch_size and steps_per_epoch must be positive".into(),
            ));
        }
        match mode {
            TrainMode::BaselinePlus => {
                if !(0.0..=1.0).contains(&self.t_threshold) {
                    return Err(Error::Config(format!(
                        "threshold {} outside [0, 1]",
                        self.t_threshold
                    )));
                }
            }
            TrainMode::OffPg => {
                if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
                    return Err(Error::Config(format!(
                        "epsilon {} outside (0, 0.5]",
                        self.epsilon
                    )));
                }
                if self.batch_size % 2 != 0 {
                    return Err(Error::Config(format!(
                        "off-policy batch size {} must be even (half MLE, half PG)",
                        self.batch_size
                    )));
                }
                if self.b_mode != BaselineMode::DatasetMean {
                    return Err(Error::Config(
                        "off-policy training requires the dataset-mean baseline".into(),
                    ));
                }
            }
            TrainMode::OnPg => {
                if self.b_mode != BaselineMode::MovingAverage {
                    return Err(Error::Config(
                        "on-policy training requires the moving-average baseline".into(),
                    ));
                }
            }
            TrainMode::Baseline => {}
        }
        Ok(())
    }
}

/// Reward baseline. The dataset-mean variant is frozen at construction; the
/// moving-average variant folds in each batch's mean predicted reward.
#[derive(Debug, Clone)]
pub struct BaselineTracker {
    mode: BaselineMode,
    value: f64,
    ma_decay: f64,
}

impl BaselineTracker {
    pub fn dataset_mean(ratings: &RatingsDataset) -> Self {
        BaselineTracker {
            mode: BaselineMode::DatasetMean,
            value: ratings.mean_rating(),
            ma_decay: 0.0,
        }
    }

    pub fn moving_average(init: f64, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("ma decay {decay} outside [0, 1)")));
        }
        if !(0.0..=1.0).contains(&init) {
            return Err(Error::Config(format!("baseline init {init} outside [0, 1]")));
        }
        Ok(BaselineTracker {
            mode: BaselineMode::MovingAverage,
            value: init,
            ma_decay: decay,
        })
    }

    pub fn mode(&self) -> BaselineMode {
        self.mode
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn observe(&mut self, batch_mean_reward: f64) {
        if self.mode == BaselineMode::MovingAverage {
            self.value = self.ma_decay * self.value + (1.0 - self.ma_decay) * batch_mean_reward;
        }
    }
}

/// Append every rated caption with rating strictly above `t` to the caption
/// dataset (paired with its own context).
pub fn merge_positive(
    captions: &CaptionDataset,
    ratings: &RatingsDataset,
    t: f64,
) -> Result<CaptionDataset> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("threshold {t} outside [0, 1]")));
    }
    let mut pairs = captions.pairs().to_vec();
    for entry in ratings.entries() {
        for rc in &entry.rated {
            if rc.rating > t {
                pairs.push((entry.context.clone(), rc.caption.clone()));
            }
        }
    }
    CaptionDataset::new(pairs)
}

/// Probability of `caption` under the alternative sampling distribution
/// q(c|I) = (1 - epsilon) * p_rated(c|I) + epsilon * uniform(C_L), where
/// p_rated is uniform over the context's rated captions. The caller supplies
/// `space_size` = |C_L| and guarantees the caption lies in that space.
pub fn q_prob(
    ratings: &RatingsDataset,
    ctx: &Context,
    caption: &Caption,
    epsilon: f64,
    space_size: usize,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    if space_size == 0 {
        return Err(Error::Domain("caption space size is zero".into()));
    }
    let entry = ratings
        .entry(&ctx.id)
        .ok_or_else(|| Error::Domain(format!("context {} not in ratings dataset", ctx.id)))?;
    let hit = entry.rated.iter().any(|rc| &rc.caption == caption);
    let p_rated = if hit {
        1.0 / entry.rated.len() as f64
    } else {
        0.0
    };
    Ok((1.0 - epsilon) * p_rated + epsilon / space_size as f64)
}

/// One draw from q(c|I). Deterministic in `seed`.
pub fn q_sample(
    ratings: &RatingsDataset,
    ctx: &Context,
    vocab: &Vocabulary,
    l_max: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Caption> {
    check_epsilon(epsilon)?;
    let entry = ratings
        .entry(&ctx.id)
        .ok_or_else(|| Error::Domain(format!("context {} not in ratings dataset", ctx.id)))?;
    let mut rng = rng_from(seed);
    if rng.random::<f64>() >= epsilon {
        let i = rng.random_range(0..entry.rated.len());
        return Ok(entry.rated[i].caption.clone());
    }
    uniform_caption(vocab, l_max, &mut rng)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 1]")));
    }
    Ok(())
}

/// Uniform draw over all captions with 1..=l_max content tokens: pick the
/// length with probability proportional to the number of captions of that
/// length, then choose tokens independently.
fn uniform_caption(vocab: &Vocabulary, l_max: usize, rng: &mut ChaCha8Rng) -> Result<Caption> {
    let total = oracle::caption_space_size(vocab, l_max)?;
    let content = vocab.content_ids();
    let k = content.len();
    let m = rng.random_range(0..total);
    let mut cum = 0usize;
    let mut pow = 1usize;
    let mut len = l_max;
    for n in 1..=l_max {
        pow *= k;
        cum += pow;
        if m < cum {
            len = n;
            break;
        }
    }
    let toks: Vec<usize> = (0..len).map(|_| content[rng.random_range(0..k)]).collect();
    Caption::from_content(&toks, vocab)
}

#[derive(Debug, Clone)]
pub struct MleGradient {
    pub grad: GradientVector,
    pub mean_log_prob: f64,
}

/// Mean gradient of log-likelihood over a batch of (context, caption) pairs.
/// Errors if any caption has probability zero.
pub fn mle_gradient(
    params: &ModelParams,
    vocab: &Vocabulary,
    batch: &[(&Context, &Caption)],
    l_max: usize,
) -> Result<MleGradient> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut grad = vec![0.0; params.dims().param_len()];
    let mut lp_sum = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (ctx, cap) in batch {
        let (lp, g) = model::log_prob_with_grad(params, vocab, ctx, cap, l_max)?;
        lp_sum += lp;
        for (a, gi) in grad.iter_mut().zip(&g) {
            *a += scale * gi;
        }
    }
    Ok(MleGradient {
        grad,
        mean_log_prob: lp_sum * scale,
    })
}

#[derive(Debug, Clone)]
pub struct OnPgGradient {
    pub grad: GradientVector,
    /// Mean estimated reward of the sampled captions.
    pub mean_estimated_reward: f64,
}

/// On-policy REINFORCE with the learned reward estimator: sample one caption
/// per context from the current model, weight its score-function gradient by
/// (estimated reward - baseline). The baseline is read before and updated
/// after the batch.
pub fn onpg_gradient(
    params: &ModelParams,
    phi: &EstimatorParams,
    vocab: &Vocabulary,
    contexts: &[&Context],
    l_max: usize,
    baseline: &mut BaselineTracker,
    seed: u64,
) -> Result<OnPgGradient> {
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts for on-policy batch".into()));
    }
    if baseline.mode() != BaselineMode::MovingAverage {
        return Err(Error::Config(
            "on-policy gradient requires the moving-average baseline".into(),
        ));
    }
    let b = baseline.value();
    let mut rng = rng_from(seed);
    let mut grad = vec![0.0; params.dims().param_len()];
    let mut reward_sum = 0.0;
    let scale = 1.0 / contexts.len() as f64;
    for ctx in contexts {
        let cap = model::sample(params, vocab, ctx, l_max, rng.random::<u64>())?;
        let r_hat = predict_rating(phi, ctx, &cap, vocab, l_max)?;
        reward_sum += r_hat;
        let g = model::grad_log_prob(params, vocab, ctx, &cap, l_max)?;
        let w = (r_hat - b) * scale;
        for (a, gi) in grad.iter_mut().zip(&g) {
            *a += w * gi;
        }
    }
    let mean_reward = reward_sum * scale;
    baseline.observe(mean_reward);
    Ok(OnPgGradient {
        grad,
        mean_estimated_reward: mean_reward,
    })
}

#[derive(Debug, Clone)]
pub struct OffPgGradient {
    pub grad: GradientVector,
    /// Estimate of the expected true rating implied by the batch.
    pub pg_objective: f64,
    pub eta_clip_events: u64,
    /// Draws that were unrated and therefore contributed exact zeros.
    pub unrated_draws: u64,
}

/// Off-policy policy gradient over the ratings dataset. Draws
/// `config.batch_size / 2` (context, caption) samples from q, weights rated
/// ones by eta * (rating - baseline), and substitutes reward := baseline for
/// unrated ones, zeroing them exactly.
pub fn offpg_gradient(
    params: &ModelParams,
    vocab: &Vocabulary,
    ratings: &RatingsDataset,
    l_max: usize,
    config: &TrainConfig,
    baseline: &BaselineTracker,
    seed: u64,
) -> Result<OffPgGradient> {
    if baseline.mode() != BaselineMode::DatasetMean {
        return Err(Error::Config(
            "off-policy gradient requires the dataset-mean baseline".into(),
        ));
    }
    let n = (config.batch_size / 2).max(1);
    let space = oracle::caption_space_size(vocab, l_max)?;
    let b = baseline.value();
    let mut rng = rng_from(seed);
    let mut grad = vec![0.0; params.dims().param_len()];
    let mut weighted_advantage_sum = 0.0;
    let mut clips = 0u64;
    let mut unrated = 0u64;
    let entries = ratings.entries();
    for _ in 0..n {
        let entry = &entries[rng.random_range(0..entries.len())];
        let cap_seed = rng.random::<u64>();
        let cap = q_sample(ratings, &entry.context, vocab, l_max, config.epsilon, cap_seed)?;
        let rating = entry
            .rated
            .iter()
            .find(|rc| rc.caption == cap)
            .map(|rc| rc.rating);
        let Some(r) = rating else {
            // r := b makes eta * (r - b) an exact zero; the draw still
            // counts toward the batch mean.
            unrated += 1;
            continue;
        };
        let advantage = r - b;
        if advantage == 0.0 {
            continue;
        }
        let q = q_prob(ratings, &entry.context, &cap, config.epsilon, space)?;
        let (lp, g) = model::log_prob_with_grad(params, vocab, &entry.context, &cap, l_max)?;
        let mut eta = lp.exp() / q;
        if eta > ETA_CLIP {
            eta = ETA_CLIP;
            clips += 1;
        }
        let w = eta * advantage / n as f64;
        weighted_advantage_sum += eta * advantage;
        for (a, gi) in grad.iter_mut().zip(&g) {
            *a += w * gi;
        }
    }
    Ok(OffPgGradient {
        grad,
        pg_objective: b + weighted_advantage_sum / n as f64,
        eta_clip_events: clips,
        unrated_draws: unrated,
    })
}

/// Curriculum combination: alpha * pg + mle.
pub fn curriculum_gradient(
    pg: &[f64],
    mle: &[f64],
    alpha: f64,
) -> Result<GradientVector> {
    if pg.len() != mle.len() {
        return Err(Error::Domain(format!(
            "gradient length mismatch: {} vs {}",
            pg.len(),
            mle.len()
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha {alpha} invalid")));
    }
    Ok(pg
        .iter()
        .zip(mle)
        .map(|(p, m)| alpha * p + m)
        .collect())
}

// ---- the training loop -----------------------------------------------------

/// Optional exact-evaluation hook for the trace.
pub struct OracleAttach<'a> {
    pub contexts: &'a [Context],
    pub rating: &'a dyn Fn(&Context, &Caption) -> f64,
}

pub struct TrainInputs<'a> {
    pub captions: &'a CaptionDataset,
    pub ratings: Option<&'a RatingsDataset>,
    pub estimator: Option<&'a EstimatorParams>,
    pub init: Option<&'a ModelParams>,
    pub oracle: Option<OracleAttach<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub mle_obj: f64,
    pub pg_obj_estimate: Option<f64>,
    pub exact_expected_rating: Option<f64>,
    pub eta_clip_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("step,lr,mle_obj,pg_obj_estimate,exact_expected_rating,eta_clip_count\n");
        for r in &self.rows {
            let pg = r.pg_obj_estimate.map(|v| v.to_string()).unwrap_or_default();
            let ex = r
                .exact_expected_rating
                .map(|v| v.to_string())
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.lr, r.mle_obj, pg, ex, r.eta_clip_count
            ));
        }
        s
    }
}

const TAG_INIT: u64 = 0x01;
const TAG_MLE: u64 = 0x02;
const TAG_PG: u64 = 0x03;

fn sample_pairs<'a>(
    pairs: &'a [(Context, Caption)],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(&'a Context, &'a Caption)> {
    (0..k)
        .map(|_| {
            let i = rng.random_range(0..pairs.len());
            (&pairs[i].0, &pairs[i].1)
        })
        .collect()
}

/// Run `config.steps` optimizer steps of the given mode and return the final
/// parameters with a per-step trace. Fully deterministic in `config.seed`.
pub fn train(
    mode: TrainMode,
    dims: ModelDims,
    vocab: &Vocabulary,
    inputs: &TrainInputs,
    config: &TrainConfig,
    l_max: usize,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate(mode)?;
    dims.validate()?;
    if dims.vocab != vocab.size() {
        return Err(Error::Config(format!(
            "model vocab {} != vocabulary size {}",
            dims.vocab,
            vocab.size()
        )));
    }
    let needs_ratings = matches!(
        mode,
        TrainMode::BaselinePlus | TrainMode::OnPg | TrainMode::OffPg
    );
    if needs_ratings && inputs.ratings.is_none() {
        return Err(Error::Config(format!("{mode} training requires a ratings dataset")));
    }
    if mode == TrainMode::OnPg && inputs.estimator.is_none() {
        return Err(Error::Config("on-policy training requires a reward estimator".into()));
    }

    let mut params = match inputs.init {
        Some(p) => {
            if p.dims() != dims {
                return Err(Error::Config(
                    "initial checkpoint dimensions do not match the configured model".into(),
                ));
            }
            p.clone()
        }
        None => init_params(dims, sub_seed(config.seed, TAG_INIT))?,
    };

    // BaselinePlus owns a merged dataset; other modes borrow the input.
    let merged;
    let dataset: &CaptionDataset = match mode {
        TrainMode::BaselinePlus => {
            merged = merge_positive(
                inputs.captions,
                inputs.ratings.expect("checked above"),
                config.t_threshold,
            )?;
            &merged
        }
        _ => inputs.captions,
    };
    if dataset.feature_dim() != dims.ctx {
        return Err(Error::Config(format!(
            "dataset feature dim {} != model ctx dim {}",
            dataset.feature_dim(),
            dims.ctx
        )));
    }

    let mut baseline = match mode {
        TrainMode::OffPg => Some(BaselineTracker::dataset_mean(
            inputs.ratings.expect("checked above"),
        )),
        TrainMode::OnPg => Some(BaselineTracker::moving_average(MA_INIT, config.ma_decay)?),
        _ => None,
    };

    let mle_stream = sub_seed(config.seed, TAG_MLE);
    let pg_stream = sub_seed(config.seed, TAG_PG);
    let mut adam = AdamState::new(dims.param_len());
    let mut trace = TrainTrace::default();

    for step in 0..config.steps {
        let lr = lr_schedule(step, config);
        let mut mle_rng = rng_from(sub_seed(mle_stream, step as u64));
        let pg_seed = sub_seed(pg_stream, step as u64);

        let (grad, mle_obj, pg_obj, clips) = match mode {
            TrainMode::Baseline | TrainMode::BaselinePlus => {
                let batch = sample_pairs(dataset.pairs(), config.batch_size, &mut mle_rng);
                let m = mle_gradient(&params, vocab, &batch, l_max)?;
                (m.grad, m.mean_log_prob, None, 0)
            }
            TrainMode::OnPg => {
                let ratings = inputs.ratings.expect("checked above");
                let phi = inputs.estimator.expect("checked above");
                // Reward queries are costlier than likelihood updates, so
                // on-policy runs use a quarter of the configured batch.
                let eff = ((config.batch_size / 8) * 2).max(4);
                let half = eff / 2;
                let batch = sample_pairs(dataset.pairs(), half, &mut mle_rng);
                let m = mle_gradient(&params, vocab, &batch, l_max)?;
                let entries = ratings.entries();
                let contexts: Vec<&Context> = (0..half)
                    .map(|_| &entries[mle_rng.random_range(0..entries.len())].context)
                    .collect();
                let tracker = baseline.as_mut().expect("onpg baseline");
                let on = onpg_gradient(
                    &params, phi, vocab, &contexts, l_max, tracker, pg_seed,
                )?;
                let grad = curriculum_gradient(&on.grad, &m.grad, config.alpha)?;
                (grad, m.mean_log_prob, Some(on.mean_estimated_reward), 0)
            }
            TrainMode::OffPg => {
                let ratings = inputs.ratings.expect("checked above");
                let half = config.batch_size / 2;
                let batch = sample_pairs(dataset.pairs(), half, &mut mle_rng);
                let m = mle_gradient(&params, vocab, &batch, l_max)?;
                let tracker = baseline.as_ref().expect("offpg baseline");
                let off = offpg_gradient(
                    &params, vocab, ratings, l_max, config, tracker, pg_seed,
                )?;
                let grad = curriculum_gradient(&off.grad, &m.grad, config.alpha)?;
                (
                    grad,
                    m.mean_log_prob,
                    Some(off.pg_objective),
                    off.eta_clip_events,
                )
            }
        };

        adam.step(params.theta_mut(), &grad, lr)?;

        let exact = match &inputs.oracle {
            Some(or)
                if config.exact_trace_every > 0
                    && (step % config.exact_trace_every == 0 || step + 1 == config.steps) =>
            {
                Some(oracle::exact_objective(
                    &params,
                    vocab,
                    or.contexts,
                    l_max,
                    or.rating,
                )?)
            }
            _ => None,
        };

        trace.rows.push(TraceRow {
            step,
            lr,
            mle_obj,
            pg_obj_estimate: pg_obj,
            exact_expected_rating: exact,
            eta_clip_count: clips,
        });
    }

    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RatedCaption, RatingsEntry};
    use std::collections::{BTreeSet, HashMap};

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(2) // V=4, K=2
    }

    fn ctx(id: &str, f: Vec<f64>) -> Context {
        Context::new(id.into(), f, BTreeSet::new()).unwrap()
    }

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 4,
            embed: 3,
            hidden: 4,
            ctx: 2,
        }
    }

    fn tiny_ratings() -> RatingsDataset {
        let v = vocab();
        let c = ctx("r0", vec![0.2, -0.4]);
        let rated = vec![
            RatedCaption::from_votes(
                Caption::from_content(&[2], &v).unwrap(),
                vec![1; 10],
            )
            .unwrap(),
            RatedCaption::from_votes(
                Caption::from_content(&[3, 2], &v).unwrap(),
                vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 0],
            )
            .unwrap(),
        ];
        RatingsDataset::new(vec![RatingsEntry { context: c, rated }]).unwrap()
    }

    fn tiny_captions() -> CaptionDataset {
        let v = vocab();
        CaptionDataset::new(vec![
            (
                ctx("g0", vec![1.0, 0.0]),
                Caption::from_content(&[2, 3], &v).unwrap(),
            ),
            (
                ctx("g1", vec![0.0, 1.0]),
                Caption::from_content(&[3], &v).unwrap(),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn config_validation_rules() {
        let mut c = TrainConfig::default();
        assert!(c.validate(TrainMode::Baseline).is_ok());
        assert!(c.validate(TrainMode::OffPg).is_ok());
        c.epsilon = 0.0;
        assert!(c.validate(TrainMode::OffPg).is_err());
        assert!(c.validate(TrainMode::Baseline).is_ok(), "epsilon unused");
        c.epsilon = 0.7;
        assert!(c.validate(TrainMode::OffPg).is_err());
        c = TrainConfig {
            batch_size: 31,
            ..TrainConfig::default()
        };
        assert!(c.validate(TrainMode::OffPg).is_err(), "odd batch");
        c = TrainConfig::default();
        assert!(
            c.validate(TrainMode::OnPg).is_err(),
            "onpg needs moving-average baseline"
        );
        c.b_mode = BaselineMode::MovingAverage;
        assert!(c.validate(TrainMode::OnPg).is_ok());
        assert!(c.validate(TrainMode::OffPg).is_err());
        c = TrainConfig {
            t_threshold: 1.5,
            ..TrainConfig::default()
        };
        assert!(c.validate(TrainMode::BaselinePlus).is_err());
        c = TrainConfig {
            alpha: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(c.validate(TrainMode::Baseline).is_err());
    }

    #[test]
    fn q_prob_sums_to_one_over_caption_space() {
        let v = vocab();
        let ratings = tiny_ratings();
        let ctx = &ratings.entries()[0].context;
        let l_max = 2;
        let caps = oracle::enumerate_captions(&v, l_max).unwrap();
        for eps in [0.05, 0.25, 0.5, 1.0] {
            let total: f64 = caps
                .iter()
                .map(|c| q_prob(&ratings, ctx, c, eps, caps.len()).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "eps {eps}: total {total}");
        }
    }

    #[test]
    fn q_prob_support_levels() {
        let v = vocab();
        let ratings = tiny_ratings();
        let ctx = &ratings.entries()[0].context;
        let caps = oracle::enumerate_captions(&v, 2).unwrap();
        let eps = 0.2;
        let rated = Caption::from_content(&[2], &v).unwrap();
        let unrated = Caption::from_content(&[3], &v).unwrap();
        let qr = q_prob(&ratings, ctx, &rated, eps, caps.len()).unwrap();
        let qu = q_prob(&ratings, ctx, &unrated, eps, caps.len()).unwrap();
        assert!((qr - (0.8 * 0.5 + 0.2 / 6.0)).abs() < 1e-12);
        assert!((qu - 0.2 / 6.0).abs() < 1e-12);
        // unknown context is a domain error
        let other = ctx_clone_with_id(ctx, "nope");
        assert!(q_prob(&ratings, &other, &rated, eps, caps.len()).is_err());
    }

    fn ctx_clone_with_id(c: &Context, id: &str) -> Context {
        Context::new(id.into(), c.features.clone(), c.target_tokens.clone()).unwrap()
    }

    #[test]
    fn q_sample_matches_q_prob() {
        let v = vocab();
        let ratings = tiny_ratings();
        let ctx = &ratings.entries()[0].context;
        let l_max = 2;
        let caps = oracle::enumerate_captions(&v, l_max).unwrap();
        let eps = 0.4;
        let n = 30_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for i in 0..n {
            let c = q_sample(&ratings, ctx, &v, l_max, eps, 500 + i).unwrap();
            *counts.entry(c.token_ids().to_vec()).or_default() += 1;
        }
        for cap in &caps {
            let q = q_prob(&ratings, ctx, cap, eps, caps.len()).unwrap();
            let freq = *counts.get(cap.token_ids()).unwrap_or(&0) as f64 / n as f64;
            let sigma = (q * (1.0 - q) / n as f64).sqrt();
            assert!(
                (freq - q).abs() < 4.0 * sigma + 1e-3,
                "{:?}: freq {freq} vs q {q}",
                cap.token_ids()
            );
        }
        // determinism
        assert_eq!(
            q_sample(&ratings, ctx, &v, l_max, eps, 1).unwrap(),
            q_sample(&ratings, ctx, &v, l_max, eps, 1).unwrap()
        );
    }

    #[test]
    fn merge_positive_is_strict() {
        let v = vocab();
        let captions = tiny_captions();
        let ratings = tiny_ratings(); // ratings 1.0 and 0.25
        let merged = merge_positive(&captions, &ratings, 0.25).unwrap();
        assert_eq!(merged.len(), 3, "0.25 excluded at threshold 0.25");
        let merged = merge_positive(&captions, &ratings, 0.2).unwrap();
        assert_eq!(merged.len(), 4);
        // merged pairs appended after the base dataset, carrying the rated context
        assert_eq!(merged.pairs()[2].0.id, "r0");
        assert_eq!(
            merged.pairs()[2].1,
            Caption::from_content(&[2], &v).unwrap()
        );
        assert!(merge_positive(&captions, &ratings, 1.5).is_err());
    }

    #[test]
    fn curriculum_combines_linearly() {
        let pg = vec![1.0, -2.0];
        let mle = vec![0.5, 0.5];
        assert_eq!(curriculum_gradient(&pg, &mle, 0.0).unwrap(), mle);
        assert_eq!(
            curriculum_gradient(&pg, &mle, 2.0).unwrap(),
            vec![2.5, -3.5]
        );
        assert!(curriculum_gradient(&pg, &mle[..1], 1.0).is_err());
        assert!(curriculum_gradient(&pg, &mle, -1.0).is_err());
    }

    #[test]
    fn mle_gradient_points_uphill() {
        let v = vocab();
        let params = init_params(dims(), 3).unwrap();
        let ds = tiny_captions();
        let batch: Vec<(&Context, &Caption)> =
            ds.pairs().iter().map(|(c, cap)| (c, cap)).collect();
        let m = mle_gradient(&params, &v, &batch, 2).unwrap();
        let mut theta = params.theta().to_vec();
        for (t, g) in theta.iter_mut().zip(&m.grad) {
            *t += 1e-4 * g;
        }
        let moved = ModelParams::new(params.dims(), theta).unwrap();
        let after = mle_gradient(&moved, &v, &batch, 2).unwrap();
        assert!(
            after.mean_log_prob > m.mean_log_prob,
            "{} -> {}",
            m.mean_log_prob,
            after.mean_log_prob
        );
    }

    #[test]
    fn baseline_tracker_math() {
        let ratings = tiny_ratings();
        let t = BaselineTracker::dataset_mean(&ratings);
        assert!((t.value() - (1.0 + 0.25) / 2.0).abs() < 1e-12);
        let mut m = BaselineTracker::moving_average(0.5, 0.9).unwrap();
        m.observe(1.0);
        assert!((m.value() - 0.55).abs() < 1e-12);
        m.observe(1.0);
        assert!((m.value() - 0.595).abs() < 1e-12);
        // dataset-mean tracker ignores observations
        let mut t2 = BaselineTracker::dataset_mean(&ratings);
        let before = t2.value();
        t2.observe(0.0);
        assert_eq!(t2.value(), before);
        assert!(BaselineTracker::moving_average(0.5, 1.0).is_err());
    }

    #[test]
    fn offpg_all_ratings_at_baseline_gives_exact_zero() {
        // Every rating equals the dataset mean, so every advantage is exactly
        // zero and the gradient must be bitwise zero.
        let v = vocab();
        let c = ctx("r0", vec![0.3, 0.3]);
        let rated = vec![
            RatedCaption::from_votes(
                Caption::from_content(&[2], &v).unwrap(),
                vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            )
            .unwrap(),
            RatedCaption::from_votes(
                Caption::from_content(&[3], &v).unwrap(),
                vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
            )
            .unwrap(),
        ];
        let ratings = RatingsDataset::new(vec![RatingsEntry { context: c, rated }]).unwrap();
        let params = init_params(dims(), 10).unwrap();
        let config = TrainConfig {
            batch_size: 64,
            epsilon: 0.3,
            ..TrainConfig::default()
        };
        let baseline = BaselineTracker::dataset_mean(&ratings);
        let out = offpg_gradient(&params, &v, &ratings, 2, &config, &baseline, 7).unwrap();
        assert!(out.grad.iter().all(|&g| g == 0.0));
        assert_eq!(out.eta_clip_events, 0);
        assert_eq!(out.pg_objective, baseline.value());
    }

    #[test]
    fn offpg_rejects_wrong_baseline() {
        let v = vocab();
        let ratings = tiny_ratings();
        let params = init_params(dims(), 10).unwrap();
        let config = TrainConfig::default();
        let baseline = BaselineTracker::moving_average(0.5, 0.9).unwrap();
        assert!(matches!(
            offpg_gradient(&params, &v, &ratings, 2, &config, &baseline, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trace_csv_shape() {
        let trace = TrainTrace {
            rows: vec![
                TraceRow {
                    step: 0,
                    lr: 0.001,
                    mle_obj: -2.5,
                    pg_obj_estimate: None,
                    exact_expected_rating: Some(0.25),
                    eta_clip_count: 0,
                },
                TraceRow {
                    step: 1,
                    lr: 0.002,
                    mle_obj: -2.0,
                    pg_obj_estimate: Some(0.4),
                    exact_expected_rating: None,
                    eta_clip_count: 3,
                },
            ],
        };
        let csv = trace.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "step,lr,mle_obj,pg_obj_estimate,exact_expected_rating,eta_clip_count"
        );
        assert_eq!(lines[1], "0,0.001,-2.5,,0.25,0");
        assert_eq!(lines[2], "1,0.002,-2,0.4,,3");
    }

    #[test]
    fn baseline_training_improves_likelihood_and_is_deterministic() {
        let v = vocab();
        let config = TrainConfig {
            steps: 60,
            batch_size: 8,
            lr: 0.02,
            warmup_epochs: 2,
            steps_per_epoch: 2,
            exact_trace_every: 0,
            ..TrainConfig::default()
        };
        let inputs = TrainInputs {
            captions: &tiny_captions(),
            ratings: None,
            estimator: None,
            init: None,
            oracle: None,
        };
        let (p1, t1) = train(TrainMode::Baseline, dims(), &v, &inputs, &config, 2).unwrap();
        let (p2, t2) = train(TrainMode::Baseline, dims(), &v, &inputs, &config, 2).unwrap();
        assert_eq!(p1.theta(), p2.theta());
        assert_eq!(t1.to_csv_string(), t2.to_csv_string());
        let first = t1.rows.first().unwrap().mle_obj;
        let last = t1.rows.last().unwrap().mle_obj;
        assert!(last > first, "{first} -> {last}");
        // alpha has no effect on pure MLE
        let config_alpha = TrainConfig {
            alpha: 99.0,
            ..config.clone()
        };
        let (p3, _) = train(TrainMode::Baseline, dims(), &v, &inputs, &config_alpha, 2).unwrap();
        assert_eq!(p1.theta(), p3.theta());
    }

    #[test]
    fn train_mode_prerequisites_enforced() {
        let v = vocab();
        let captions = tiny_captions();
        let config = TrainConfig {
            steps: 2,
            ..TrainConfig::default()
        };
        let inputs = TrainInputs {
            captions: &captions,
            ratings: None,
            estimator: None,
            init: None,
            oracle: None,
        };
        assert!(matches!(
            train(TrainMode::OffPg, dims(), &v, &inputs, &config, 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(TrainMode::BaselinePlus, dims(), &v, &inputs, &config, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_checkpoint_dims_must_match() {
        let v = vocab();
        let captions = tiny_captions();
        let other = init_params(
            ModelDims {
                vocab: 4,
                embed: 2,
                hidden: 3,
                ctx: 2,
            },
            1,
        )
        .unwrap();
        let config = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let inputs = TrainInputs {
            captions: &captions,
            ratings: None,
            estimator: None,
            init: Some(&other),
            oracle: None,
        };
        assert!(matches!(
            train(TrainMode::Baseline, dims(), &v, &inputs, &config, 2),
            Err(Error::Config(_))
        ));
    }
}
