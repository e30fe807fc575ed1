//! Learned rating estimator used by on-policy training.
//!
//! A small MLP maps `[context features; bag-of-words; length fraction]` to a
//! predicted rating through a sigmoid. The feature set is deliberately blind
//! to token order, which is exactly the weakness the probe families exercise:
//! captions stuffed with target tokens look great to the estimator while the
//! true rating function scores them poorly.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::data::{Caption, Context, RatingsDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{read_flat, write_flat};
use crate::rng::{fnv1a64, rng_from};
use crate::trainers::adam::AdamState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorDims {
    /// Length of the featurized input: d_ctx + vocab size + 1.
    pub input: usize,
    pub hidden: usize,
}

impl EstimatorDims {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "invalid estimator dims: input={} hidden={}",
                self.input, self.hidden
            )));
        }
        Ok(())
    }

    /// W1 (hidden x input), b1, w2, b2.
    pub fn param_len(&self) -> usize {
        self.hidden * self.input + self.hidden + self.hidden + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    dims: EstimatorDims,
    phi: Vec<f64>,
}

impl EstimatorParams {
    pub fn new(dims: EstimatorDims, phi: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if phi.len() != dims.param_len() {
            return Err(Error::Domain(format!(
                "estimator parameter length {} != expected {}",
                phi.len(),
                dims.param_len()
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite estimator parameter".into()));
        }
        Ok(EstimatorParams { dims, phi })
    }

    pub fn dims(&self) -> EstimatorDims {
        self.dims
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
}

pub fn init_estimator(dims: EstimatorDims, seed: u64) -> Result<EstimatorParams> {
    dims.validate()?;
    let mut rng = rng_from(seed);
    let phi = (0..dims.param_len())
        .map(|_| rng.random::<f64>() * 0.16 - 0.08)
        .collect();
    Ok(EstimatorParams { dims, phi })
}

/// Input dimension for a given context feature length and vocabulary.
pub fn input_dim(d_ctx: usize, vocab: &Vocabulary) -> usize {
    d_ctx + vocab.size() + 1
}

/// `[context features; bag-of-words over content tokens; caption_len/l_max]`.
/// The bag-of-words is normalized to sum to 1 (all zeros for an EOS-only
/// caption); the length fraction counts the EOS token.
pub fn featurize(ctx: &Context, caption: &Caption, vocab: &Vocabulary, l_max: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(input_dim(ctx.features.len(), vocab));
    x.extend_from_slice(&ctx.features);
    let mut bow = vec![0.0; vocab.size()];
    let content = caption.content();
    if !content.is_empty() {
        let w = 1.0 / content.len() as f64;
        for &t in content {
            bow[t] += w;
        }
    }
    x.extend_from_slice(&bow);
    x.push(caption.len() as f64 / l_max as f64);
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass; optionally fills `grad` (same layout as phi) with
/// d pred / d phi and returns the hidden activations for reuse.
fn forward(params: &EstimatorParams, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
    let d = params.dims;
    if x.len() != d.input {
        return Err(Error::Domain(format!(
            "estimator input length {} != expected {}",
            x.len(),
            d.input
        )));
    }
    let phi = &params.phi;
    let o_b1 = d.hidden * d.input;
    let o_w2 = o_b1 + d.hidden;
    let o_b2 = o_w2 + d.hidden;
    let mut z = vec![0.0; d.hidden];
    for (i, zi) in z.iter_mut().enumerate() {
        let row = i * d.input;
        let mut a = phi[o_b1 + i];
        for (j, &xj) in x.iter().enumerate() {
            a += phi[row + j] * xj;
        }
        *zi = a.tanh();
    }
    let mut out = phi[o_b2];
    for i in 0..d.hidden {
        out += phi[o_w2 + i] * z[i];
    }
    let pred = sigmoid(out);
    if let Some(g) = grad {
        // d pred / d out
        let dout = pred * (1.0 - pred);
        g[o_b2] += dout;
        for i in 0..d.hidden {
            g[o_w2 + i] += dout * z[i];
            let da = dout * phi[o_w2 + i] * (1.0 - z[i] * z[i]);
            g[o_b1 + i] += da;
            let row = i * d.input;
            for (j, &xj) in x.iter().enumerate() {
                g[row + j] += da * xj;
            }
        }
    }
    Ok(pred)
}

/// Predicted rating in (0, 1).
pub fn predict_rating(
    params: &EstimatorParams,
    ctx: &Context,
    caption: &Caption,
    vocab: &Vocabulary,
    l_max: usize,
) -> Result<f64> {
    let x = featurize(ctx, caption, vocab, l_max);
    forward(params, &x, None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without val improvement.
    pub patience: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            hidden: 2,
            lr: 1e-3,
            epochs: 2000,
            patience: 200,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 {
            return Err(Error::Config("estimator hidden/epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("estimator lr {} invalid", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub n_train: usize,
    pub n_val: usize,
    /// Validation reused training examples because the split was degenerate.
    pub degenerate_split: bool,
    pub epochs_run: usize,
    pub train_mse_first: f64,
    pub train_mse_final: f64,
    pub best_val_mse: f64,
    /// Rank correlation between predictions and ratings on validation;
    /// absent when variance vanishes.
    pub val_spearman: Option<f64>,
}

struct Example {
    x: Vec<f64>,
    y: f64,
}

fn mse_and_grad(
    params: &EstimatorParams,
    examples: &[Example],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let n = examples.len() as f64;
    let mut loss = 0.0;
    let mut per_example = vec![0.0; params.dims.param_len()];
    for ex in examples {
        let g = if grad.is_some() {
            per_example.iter_mut().for_each(|v| *v = 0.0);
            Some(per_example.as_mut_slice())
        } else {
            None
        };
        let pred = forward(params, &ex.x, g)?;
        let err = pred - ex.y;
        loss += err * err;
        if let Some(acc) = grad.as_deref_mut() {
            let scale = 2.0 * err / n;
            for (a, p) in acc.iter_mut().zip(&per_example) {
                *a += scale * p;
            }
        }
    }
    Ok(loss / n)
}

/// Fit the estimator to a ratings dataset with a context-level train/val
/// split (all captions of a context land on the same side), full-batch Adam,
/// and early stopping on validation MSE.
pub fn train_estimator(
    ratings: &RatingsDataset,
    vocab: &Vocabulary,
    l_max: usize,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<(EstimatorParams, EstimatorReport)> {
    config.validate()?;
    let dims = EstimatorDims {
        input: input_dim(ratings.feature_dim(), vocab),
        hidden: config.hidden,
    };
    let mut train: Vec<Example> = Vec::new();
    let mut val: Vec<Example> = Vec::new();
    for entry in ratings.entries() {
        let is_val = fnv1a64(entry.context.id.as_bytes()) % 10 == 0;
        for rc in &entry.rated {
            let ex = Example {
                x: featurize(&entry.context, &rc.caption, vocab, l_max),
                y: rc.rating,
            };
            if is_val {
                val.push(ex);
            } else {
                train.push(ex);
            }
        }
    }
    let degenerate_split = train.is_empty() || val.is_empty();
    if degenerate_split {
        let mut all = train;
        all.extend(val);
        train = all;
        val = train
            .iter()
            .map(|e| Example {
                x: e.x.clone(),
                y: e.y,
            })
            .collect();
    }
    if train.is_empty() {
        return Err(Error::Domain("no rated captions to fit".into()));
    }

    let mut params = init_estimator(dims, seed)?;
    let mut adam = AdamState::new(dims.param_len());
    let mut grad = vec![0.0; dims.param_len()];
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut first_train = f64::NAN;
    let mut last_train = f64::NAN;
    let mut epochs_run = 0usize;
    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let train_mse = mse_and_grad(&params, &train, Some(&mut grad))?;
        if epoch == 0 {
            first_train = train_mse;
        }
        last_train = train_mse;
        // Adam is written for ascent; descend by negating the loss gradient.
        grad.iter_mut().for_each(|v| *v = -*v);
        adam.step(&mut params.phi, &grad, config.lr)?;
        let val_mse = mse_and_grad(&params, &val, None)?;
        if val_mse + 1e-15 < best_val {
            best_val = val_mse;
            best = params.clone();
            best_epoch = epoch;
        }
        epochs_run = epoch + 1;
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let preds: Vec<f64> = val
        .iter()
        .map(|e| forward(&best, &e.x, None))
        .collect::<Result<_>>()?;
    let ys: Vec<f64> = val.iter().map(|e| e.y).collect();
    let val_spearman = spearman(&preds, &ys).ok();
    let report = EstimatorReport {
        n_train: train.len(),
        n_val: val.len(),
        degenerate_split,
        epochs_run,
        train_mse_first: first_train,
        train_mse_final: last_train,
        best_val_mse: best_val,
        val_spearman,
    };
    Ok((best, report))
}

/// Average ranks (ties share the mean rank), then Pearson on the ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain("spearman inputs differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::Domain("spearman needs at least two points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Domain("spearman undefined: zero variance".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

// ---- probe families -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeFamilyReport {
    pub family: String,
    pub n: usize,
    pub mean_pred: f64,
    pub max_pred: f64,
    /// Fraction of probes in this family with predicted rating above 0.9.
    pub frac_high: f64,
    /// Mean true rating when a ground-truth rating function is available.
    pub mean_true: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub families: Vec<ProbeFamilyReport>,
}

/// Build one probe caption per (context, family). Families:
/// - `eos_only`: the empty caption.
/// - `repeated_target`: the first target token repeated to the length cap.
/// - `alternating_targets`: first two targets alternated to the length cap
///   (falls back to one target when the context has a single target).
/// - `off_target`: one content token that is not a target.
pub fn probe_captions(
    ctx: &Context,
    vocab: &Vocabulary,
    l_max: usize,
) -> Result<Vec<(&'static str, Caption)>> {
    let targets: Vec<usize> = ctx.target_tokens.iter().copied().collect();
    if targets.is_empty() {
        return Err(Error::Domain(format!(
            "context {} has no target tokens to probe",
            ctx.id
        )));
    }
    let mut out = Vec::new();
    out.push(("eos_only", Caption::from_content(&[], vocab)?));
    let t0 = targets[0];
    out.push((
        "repeated_target",
        Caption::from_content(&vec![t0; l_max], vocab)?,
    ));
    let t1 = if targets.len() > 1 { targets[1] } else { t0 };
    let alt: Vec<usize> = (0..l_max).map(|i| if i % 2 == 0 { t0 } else { t1 }).collect();
    out.push(("alternating_targets", Caption::from_content(&alt, vocab)?));
    if let Some(&off) = vocab
        .content_ids()
        .iter()
        .find(|t| !ctx.target_tokens.contains(t))
    {
        out.push(("off_target", Caption::from_content(&[off], vocab)?));
    }
    Ok(out)
}

/// Score each probe family across the given contexts.
pub fn probe_estimator(
    params: &EstimatorParams,
    contexts: &[Context],
    vocab: &Vocabulary,
    l_max: usize,
    truth: Option<&dyn Fn(&Context, &Caption) -> f64>,
) -> Result<ProbeReport> {
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts to probe".into()));
    }
    struct Acc {
        n: usize,
        pred_sum: f64,
        pred_max: f64,
        n_high: usize,
        true_sum: f64,
    }
    let mut acc: HashMap<&'static str, Acc> = HashMap::new();
    let mut order: Vec<&'static str> = Vec::new();
    for ctx in contexts {
        for (family, caption) in probe_captions(ctx, vocab, l_max)? {
            let pred = predict_rating(params, ctx, &caption, vocab, l_max)?;
            let entry = acc.entry(family).or_insert_with(|| {
                order.push(family);
                Acc {
                    n: 0,
                    pred_sum: 0.0,
                    pred_max: f64::NEG_INFINITY,
                    n_high: 0,
                    true_sum: 0.0,
                }
            });
            entry.n += 1;
            entry.pred_sum += pred;
            entry.pred_max = entry.pred_max.max(pred);
            if pred > 0.9 {
                entry.n_high += 1;
            }
            if let Some(f) = truth {
                entry.true_sum += f(ctx, &caption);
            }
        }
    }
    let families = order
        .into_iter()
        .map(|name| {
            let a = &acc[name];
            ProbeFamilyReport {
                family: name.to_string(),
                n: a.n,
                mean_pred: a.pred_sum / a.n as f64,
                max_pred: a.pred_max,
                frac_high: a.n_high as f64 / a.n as f64,
                mean_true: truth.map(|_| a.true_sum / a.n as f64),
            }
        })
        .collect();
    Ok(ProbeReport { families })
}

// ---- checkpointing --------------------------------------------------------

pub fn save_estimator(path: &Path, params: &EstimatorParams) -> Result<()> {
    let d = params.dims();
    write_flat(
        path,
        crate::model::KIND_ESTIMATOR,
        &[d.input as u64, d.hidden as u64],
        params.phi(),
    )
}

pub fn load_estimator(path: &Path) -> Result<EstimatorParams> {
    let (dims, data) = read_flat(path, crate::model::KIND_ESTIMATOR)?;
    if dims.len() != 2 {
        return Err(Error::Validation(format!(
            "checkpoint {}: expected 2 dims, got {}",
            path.display(),
            dims.len()
        )));
    }
    EstimatorParams::new(
        EstimatorDims {
            input: dims[0] as usize,
            hidden: dims[1] as usize,
        },
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RatedCaption, RatingsEntry};
    use std::collections::BTreeSet;

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(4) // V=6
    }

    fn ctx(id: &str, targets: &[usize]) -> Context {
        let v = vocab();
        let mut features = vec![0.0; v.size()];
        for &t in targets {
            features[t] = 1.0;
        }
        Context::new(id.into(), features, targets.iter().copied().collect()).unwrap()
    }

    #[test]
    fn featurize_layout() {
        let v = vocab();
        let c = ctx("a", &[2, 3]);
        let cap = Caption::from_content(&[2, 2, 4], &v).unwrap();
        let x = featurize(&c, &cap, &v, 4);
        assert_eq!(x.len(), v.size() + v.size() + 1);
        let bow = &x[v.size()..2 * v.size()];
        assert_eq!(bow[2], 2.0 / 3.0);
        assert_eq!(bow[4], 1.0 / 3.0);
        assert_eq!(bow[v.eos_id()], 0.0);
        assert_eq!(bow[v.bos_id()], 0.0);
        assert!((bow.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // 3 content tokens plus EOS over the cap of 4
        assert_eq!(x[2 * v.size()], 4.0 / 4.0);
    }

    #[test]
    fn featurize_order_invariant_and_one_hot() {
        let v = vocab();
        let c = ctx("a", &[2, 3]);
        let a = featurize(&c, &Caption::from_content(&[2, 4, 3], &v).unwrap(), &v, 8);
        let b = featurize(&c, &Caption::from_content(&[4, 3, 2], &v).unwrap(), &v, 8);
        assert_eq!(a[v.size()..2 * v.size()], b[v.size()..2 * v.size()]);
        let one = featurize(&c, &Caption::from_content(&[5], &v).unwrap(), &v, 8);
        let bow = &one[v.size()..2 * v.size()];
        assert!(bow.iter().enumerate().all(|(t, &w)| w == f64::from(t == 5)));
    }

    #[test]
    fn featurize_length_counts_eos() {
        let v = vocab();
        let c = ctx("a", &[2]);
        let cap = Caption::from_content(&[2, 3, 4, 5], &v).unwrap();
        let x = featurize(&c, &cap, &v, 8);
        assert_eq!(*x.last().unwrap(), 5.0 / 8.0);
        let empty = Caption::from_content(&[], &v).unwrap();
        let xe = featurize(&c, &empty, &v, 8);
        assert_eq!(*xe.last().unwrap(), 1.0 / 8.0);
        assert!(xe[v.size()..2 * v.size()].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = EstimatorDims { input: 5, hidden: 3 };
        let params = init_estimator(dims, 3).unwrap();
        let x = vec![0.3, -0.7, 1.1, 0.0, 0.5];
        let mut grad = vec![0.0; dims.param_len()];
        let pred = forward(&params, &x, Some(&mut grad)).unwrap();
        assert!((0.0..=1.0).contains(&pred));
        let fd = crate::oracle::finite_diff(
            |phi| {
                let p = EstimatorParams::new(dims, phi.to_vec())?;
                forward(&p, &x, None)
            },
            params.phi(),
            1e-5,
        )
        .unwrap();
        for (g, f) in grad.iter().zip(&fd) {
            assert!((g - f).abs() < 1e-8, "{g} vs {f}");
        }
    }

    fn toy_ratings() -> RatingsDataset {
        // Rating tracks how many of the context's targets appear.
        let v = vocab();
        let mut entries = Vec::new();
        for (i, targets) in [[2usize, 3], [3, 4], [4, 5], [2, 5], [2, 4], [3, 5]]
            .iter()
            .enumerate()
        {
            let c = ctx(&format!("c{i}"), targets);
            let both = Caption::from_content(&[targets[0], targets[1]], &v).unwrap();
            let one = Caption::from_content(&[targets[0]], &v).unwrap();
            let off = (2..=5).find(|t| !targets.contains(t)).unwrap();
            let miss = Caption::from_content(&[off], &v).unwrap();
            let rated = vec![
                RatedCaption::from_votes(both, vec![1; 10]).unwrap(),
                RatedCaption::from_votes(one, vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0]).unwrap(),
                RatedCaption::from_votes(miss, vec![0; 10]).unwrap(),
            ];
            entries.push(RatingsEntry { context: c, rated });
        }
        RatingsDataset::new(entries).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_orders_val() {
        let v = vocab();
        let cfg = EstimatorConfig {
            hidden: 8,
            lr: 5e-3,
            epochs: 400,
            patience: 400,
        };
        let (params, report) = train_estimator(&toy_ratings(), &v, 4, &cfg, 11).unwrap();
        assert!(
            report.train_mse_final < report.train_mse_first,
            "{report:?}"
        );
        assert!(report.best_val_mse.is_finite());
        // On this fully learnable toy set the fit should be decent.
        assert!(report.train_mse_final < 0.05, "{report:?}");
        let c = ctx("fresh", &[2, 3]);
        let hit = Caption::from_content(&[2, 3], &v).unwrap();
        let miss = Caption::from_content(&[4], &v).unwrap();
        let ph = predict_rating(&params, &c, &hit, &v, 4).unwrap();
        let pm = predict_rating(&params, &c, &miss, &v, 4).unwrap();
        assert!(ph > pm, "hit {ph} <= miss {pm}");
    }

    #[test]
    fn train_is_deterministic() {
        let v = vocab();
        let cfg = EstimatorConfig {
            hidden: 4,
            lr: 1e-2,
            epochs: 50,
            patience: 50,
        };
        let (a, ra) = train_estimator(&toy_ratings(), &v, 4, &cfg, 5).unwrap();
        let (b, rb) = train_estimator(&toy_ratings(), &v, 4, &cfg, 5).unwrap();
        assert_eq!(a.phi(), b.phi());
        assert_eq!(ra.best_val_mse, rb.best_val_mse);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]).unwrap(), -1.0);
        // Monotone but nonlinear is still rank-perfect.
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]).unwrap() - 1.0).abs()
                < 1e-12
        );
        // Ties share average ranks: identical tie structure correlates fully.
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[0.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
        assert!(spearman(&[1.0, 1.0], &[2.0, 3.0]).is_err(), "zero variance");
        assert!(spearman(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn probe_families_shapes() {
        let v = vocab();
        let contexts = vec![ctx("a", &[2, 3]), ctx("b", &[4, 5])];
        let dims = EstimatorDims {
            input: input_dim(v.size(), &v),
            hidden: 4,
        };
        let params = init_estimator(dims, 1).unwrap();
        let rep = probe_estimator(&params, &contexts, &v, 4, Some(&|_, c: &Caption| {
            if c.content_len() == 0 {
                0.0
            } else {
                0.5
            }
        }))
        .unwrap();
        assert_eq!(rep.families.len(), 4);
        let eos = rep
            .families
            .iter()
            .find(|f| f.family == "eos_only")
            .unwrap();
        assert_eq!(eos.n, 2);
        assert_eq!(eos.mean_true, Some(0.0));
        for f in &rep.families {
            assert!((0.0..=1.0).contains(&f.mean_pred), "{f:?}");
            assert!((0.0..=1.0).contains(&f.frac_high), "{f:?}");
            assert!(f.max_pred >= f.mean_pred);
        }
    }

    #[test]
    fn probe_requires_targets() {
        let v = vocab();
        let bare = Context::new("x".into(), vec![0.0; v.size()], BTreeSet::new()).unwrap();
        let dims = EstimatorDims {
            input: input_dim(v.size(), &v),
            hidden: 4,
        };
        let params = init_estimator(dims, 1).unwrap();
        assert!(probe_estimator(&params, &[bare], &v, 4, None).is_err());
    }

    #[test]
    fn estimator_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("est.ckpt");
        let dims = EstimatorDims { input: 7, hidden: 3 };
        let params = init_estimator(dims, 9).unwrap();
        save_estimator(&p, &params).unwrap();
        let back = load_estimator(&p).unwrap();
        assert_eq!(back.dims(), dims);
        assert_eq!(back.phi(), params.phi());
        // model loader must reject an estimator checkpoint
        assert!(crate::model::load_model(&p).is_err());
    }
}
