//! Conditional caption model: a single-layer tanh RNN over token embeddings,
//! conditioned on context features at every step.
//!
//! The model defines an exactly normalized distribution over the finite
//! caption space: BOS is never emitted, EOS is masked at the first position,
//! and EOS is forced once a caption reaches `l_max` content tokens. Every
//! consumer (log-probabilities, gradients, sampling, beam search) shares the
//! same masking rules, so probabilities over the enumeration space sum to one
//! to machine precision.
//!
//! Recurrence, for position t with previous token y_{t-1} (y_0 = BOS) and
//! context features x:
//!
//! ```text
//! h_t     = tanh(W_h h_{t-1} + W_e emb(y_{t-1}) + W_c x + b_h),  h_0 = 0
//! logits  = W_o h_t + b_o
//! ```
//!
//! Gradients are reverse-mode and exact; there is no autodiff framework here,
//! the backward pass is written out against the recurrence above.

mod checkpoint;

pub use checkpoint::{load_model, save_model};
pub(crate) use checkpoint::{read_flat, write_flat, KIND_ESTIMATOR};

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Caption, Context, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Architecture sizes. `vocab` counts all tokens including BOS/EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub ctx: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w_h: usize,
    w_e: usize,
    w_c: usize,
    b_h: usize,
    w_o: usize,
    b_o: usize,
    len: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 || self.embed == 0 || self.hidden == 0 || self.ctx == 0 {
            return Err(Error::Config(format!(
                "invalid model dims: vocab={} embed={} hidden={} ctx={}",
                self.vocab, self.embed, self.hidden, self.ctx
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let emb = 0;
        let w_h = emb + self.vocab * self.embed;
        let w_e = w_h + self.hidden * self.hidden;
        let w_c = w_e + self.hidden * self.embed;
        let b_h = w_c + self.hidden * self.ctx;
        let w_o = b_h + self.hidden;
        let b_o = w_o + self.vocab * self.hidden;
        Layout {
            emb,
            w_h,
            w_e,
            w_c,
            b_h,
            w_o,
            b_o,
            len: b_o + self.vocab,
        }
    }

    /// Total number of parameters in the flat vector.
    pub fn param_len(&self) -> usize {
        self.layout().len
    }
}

/// Flat parameter vector plus its dimensions. The flat layout (embeddings,
/// recurrent, input, context, hidden bias, output, output bias) is the
/// checkpoint format and the gradient coordinate system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    theta: Vec<f64>,
}

pub type GradientVector = Vec<f64>;

impl ModelParams {
    pub fn new(dims: ModelDims, theta: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if theta.len() != dims.param_len() {
            return Err(Error::Domain(format!(
                "parameter vector length {} != expected {}",
                theta.len(),
                dims.param_len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(ModelParams { dims, theta })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(ModelParams {
            theta: vec![0.0; dims.param_len()],
            dims,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

/// Fresh parameters, each coordinate uniform in [-0.08, 0.08].
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = rng_from(seed);
    let theta = (0..dims.param_len())
        .map(|_| rng.random::<f64>() * 0.16 - 0.08)
        .collect();
    Ok(ModelParams { dims, theta })
}

fn check_inputs(params: &ModelParams, vocab: &Vocabulary, ctx: &Context) -> Result<()> {
    if params.dims.vocab != vocab.size() {
        return Err(Error::Domain(format!(
            "model vocab {} != vocabulary size {}",
            params.dims.vocab,
            vocab.size()
        )));
    }
    if ctx.features.len() != params.dims.ctx {
        return Err(Error::Domain(format!(
            "context {} has {} features, model expects {}",
            ctx.id,
            ctx.features.len(),
            params.dims.ctx
        )));
    }
    Ok(())
}

/// h_next = tanh(W_h h + W_e emb(prev_tok) + W_c feats + b_h)
fn step_hidden(params: &ModelParams, h: &[f64], prev_tok: usize, feats: &[f64]) -> Vec<f64> {
    let d = params.dims;
    let lo = d.layout();
    let th = &params.theta;
    let emb_row = lo.emb + prev_tok * d.embed;
    let mut out = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        let mut a = th[lo.b_h + i];
        let wh = lo.w_h + i * d.hidden;
        for j in 0..d.hidden {
            a += th[wh + j] * h[j];
        }
        let we = lo.w_e + i * d.embed;
        for k in 0..d.embed {
            a += th[we + k] * th[emb_row + k];
        }
        let wc = lo.w_c + i * d.ctx;
        for (l, &x) in feats.iter().enumerate() {
            a += th[wc + l] * x;
        }
        out[i] = a.tanh();
    }
    out
}

fn step_logits(params: &ModelParams, h: &[f64]) -> Vec<f64> {
    let d = params.dims;
    let lo = d.layout();
    let th = &params.theta;
    let mut out = vec![0.0; d.vocab];
    for (v, o) in out.iter_mut().enumerate() {
        let mut a = th[lo.b_o + v];
        let row = lo.w_o + v * d.hidden;
        for (i, &hi) in h.iter().enumerate() {
            a += th[row + i] * hi;
        }
        *o = a;
    }
    out
}

/// Log-softmax restricted to the allowed token set; disallowed tokens get
/// -inf. BOS is never allowed; EOS only when `allow_eos`.
fn masked_log_softmax(logits: &[f64], vocab: &Vocabulary, allow_eos: bool) -> Vec<f64> {
    let allowed =
        |v: usize| v != vocab.bos_id() && (allow_eos || v != vocab.eos_id());
    let mut m = f64::NEG_INFINITY;
    for (v, &x) in logits.iter().enumerate() {
        if allowed(v) && x > m {
            m = x;
        }
    }
    let mut z = 0.0;
    for (v, &x) in logits.iter().enumerate() {
        if allowed(v) {
            z += (x - m).exp();
        }
    }
    let log_z = m + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(v, &x)| if allowed(v) { x - log_z } else { f64::NEG_INFINITY })
        .collect()
}

/// Log-distribution over the next token after `content` content tokens have
/// been emitted; the hidden state `h` already reflects that prefix. At the
/// length cap this is a point mass on EOS.
fn next_log_dist(
    params: &ModelParams,
    vocab: &Vocabulary,
    h: &[f64],
    content: usize,
    l_max: usize,
) -> Vec<f64> {
    if content == l_max {
        let mut d = vec![f64::NEG_INFINITY; params.dims.vocab];
        d[vocab.eos_id()] = 0.0;
        return d;
    }
    masked_log_softmax(&step_logits(params, h), vocab, content >= 1)
}

fn check_caption_len(caption: &Caption, l_max: usize) -> Result<()> {
    if caption.content_len() > l_max {
        return Err(Error::Validation(format!(
            "caption has {} content tokens, maximum is {l_max}",
            caption.content_len()
        )));
    }
    Ok(())
}

/// Exact log p(caption | context). Returns -inf for the EOS-only caption
/// (probability zero under the masking rules); errors if the caption exceeds
/// the length cap or the shapes disagree.
pub fn log_prob(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    caption: &Caption,
    l_max: usize,
) -> Result<f64> {
    check_inputs(params, vocab, ctx)?;
    check_caption_len(caption, l_max)?;
    let mut h = step_hidden(params, &vec![0.0; params.dims.hidden], vocab.bos_id(), &ctx.features);
    let mut content = 0usize;
    let mut lp = 0.0;
    for &y in caption.token_ids() {
        let dist = next_log_dist(params, vocab, &h, content, l_max);
        lp += dist[y];
        if y == vocab.eos_id() {
            break;
        }
        h = step_hidden(params, &h, y, &ctx.features);
        content += 1;
    }
    Ok(lp)
}

struct StepRecord {
    prev_h: Vec<f64>,
    prev_tok: usize,
    h: Vec<f64>,
    probs: Vec<f64>,
    chosen: usize,
}

/// Log-probability together with its exact gradient in the flat layout.
pub(crate) fn log_prob_with_grad(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    caption: &Caption,
    l_max: usize,
) -> Result<(f64, GradientVector)> {
    check_inputs(params, vocab, ctx)?;
    check_caption_len(caption, l_max)?;
    let d = params.dims;
    let lo = d.layout();
    let th = &params.theta;
    let feats = &ctx.features;

    // Forward, recording every softmax step. The forced-EOS step at the
    // length cap carries no parameter dependence and is skipped.
    let mut steps: Vec<StepRecord> = Vec::with_capacity(caption.len());
    let mut prev_h = vec![0.0; d.hidden];
    let mut prev_tok = vocab.bos_id();
    let mut content = 0usize;
    let mut lp = 0.0;
    for &y in caption.token_ids() {
        if content == l_max {
            break; // forced EOS, probability one
        }
        let h = step_hidden(params, &prev_h, prev_tok, feats);
        let dist = next_log_dist(params, vocab, &h, content, l_max);
        if dist[y] == f64::NEG_INFINITY {
            return Err(Error::Validation(
                "caption has probability zero under the model; no gradient exists".into(),
            ));
        }
        lp += dist[y];
        steps.push(StepRecord {
            prev_h: std::mem::take(&mut prev_h),
            prev_tok,
            h: h.clone(),
            probs: dist.iter().map(|&l| l.exp()).collect(),
            chosen: y,
        });
        if y == vocab.eos_id() {
            break;
        }
        prev_h = h;
        prev_tok = y;
        content += 1;
    }

    // Backward.
    let mut grad = vec![0.0; lo.len];
    let mut dh_next = vec![0.0; d.hidden];
    for step in steps.iter().rev() {
        // d log p / d logits = one_hot(chosen) - probs (masked entries are 0).
        let mut dh = dh_next;
        for v in 0..d.vocab {
            let mut dv = -step.probs[v];
            if v == step.chosen {
                dv += 1.0;
            }
            if dv == 0.0 {
                continue;
            }
            grad[lo.b_o + v] += dv;
            let row = lo.w_o + v * d.hidden;
            for i in 0..d.hidden {
                grad[row + i] += dv * step.h[i];
                dh[i] += dv * th[row + i];
            }
        }
        // Through tanh.
        let da: Vec<f64> = (0..d.hidden)
            .map(|i| dh[i] * (1.0 - step.h[i] * step.h[i]))
            .collect();
        let emb_row = lo.emb + step.prev_tok * d.embed;
        for i in 0..d.hidden {
            let g = da[i];
            grad[lo.b_h + i] += g;
            let wh = lo.w_h + i * d.hidden;
            for j in 0..d.hidden {
                grad[wh + j] += g * step.prev_h[j];
            }
            let we = lo.w_e + i * d.embed;
            for k in 0..d.embed {
                grad[we + k] += g * th[emb_row + k];
            }
            let wc = lo.w_c + i * d.ctx;
            for (l, &x) in feats.iter().enumerate() {
                grad[wc + l] += g * x;
            }
        }
        // Embedding of the input token.
        for k in 0..d.embed {
            let mut s = 0.0;
            for i in 0..d.hidden {
                s += th[lo.w_e + i * d.embed + k] * da[i];
            }
            grad[emb_row + k] += s;
        }
        // Recurrent flow into the previous hidden state.
        let mut dprev = vec![0.0; d.hidden];
        for (j, dp) in dprev.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..d.hidden {
                s += th[lo.w_h + i * d.hidden + j] * da[i];
            }
            *dp = s;
        }
        dh_next = dprev;
    }
    Ok((lp, grad))
}

/// Gradient of log p(caption | context) with respect to every parameter.
pub fn grad_log_prob(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    caption: &Caption,
    l_max: usize,
) -> Result<GradientVector> {
    log_prob_with_grad(params, vocab, ctx, caption, l_max).map(|(_, g)| g)
}

/// Ancestral sampling from the masked distribution. Deterministic in `seed`.
pub fn sample(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    l_max: usize,
    seed: u64,
) -> Result<Caption> {
    check_inputs(params, vocab, ctx)?;
    let mut rng = rng_from(seed);
    let mut h = step_hidden(params, &vec![0.0; params.dims.hidden], vocab.bos_id(), &ctx.features);
    let mut content = 0usize;
    let mut toks = Vec::with_capacity(l_max + 1);
    loop {
        let dist = next_log_dist(params, vocab, &h, content, l_max);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = vocab.eos_id();
        let mut found = false;
        for (v, &lp) in dist.iter().enumerate() {
            let p = lp.exp();
            if p > 0.0 {
                pick = v; // last positive-mass token absorbs rounding slack
                acc += p;
                if u < acc {
                    found = true;
                    break;
                }
            }
        }
        debug_assert!(found || acc > 1.0 - 1e-9);
        toks.push(pick);
        if pick == vocab.eos_id() {
            break;
        }
        h = step_hidden(params, &h, pick, &ctx.features);
        content += 1;
    }
    Caption::new(toks, vocab)
}

#[derive(Debug, Clone)]
struct Hypothesis {
    content: Vec<usize>,
    logp: f64,
    h: Vec<f64>,
    done: bool,
}

/// Lexicographic order on content with a virtual terminal EOS, so that a
/// finished caption and its extensions order the same way captions do.
fn seq_cmp(a: &[usize], b: &[usize], eos: usize) -> Ordering {
    a.iter()
        .chain(std::iter::once(&eos))
        .cmp(b.iter().chain(std::iter::once(&eos)))
}

/// Length-unnormalized beam search. Ranks hypotheses by total log-prob; ties
/// break toward the lexicographically smaller token sequence. With a beam at
/// least the size of the caption space this is exhaustive argmax.
pub fn beam_search(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    beam: usize,
    l_max: usize,
) -> Result<Caption> {
    let mut list = beam_search_list(params, vocab, ctx, beam, l_max)?;
    Ok(list.swap_remove(0))
}

/// Full beam list: up to `beam` finished hypotheses in score order.
pub fn beam_search_list(
    params: &ModelParams,
    vocab: &Vocabulary,
    ctx: &Context,
    beam: usize,
    l_max: usize,
) -> Result<Vec<Caption>> {
    check_inputs(params, vocab, ctx)?;
    if beam == 0 {
        return Err(Error::Domain("beam width must be at least 1".into()));
    }
    let eos = vocab.eos_id();
    let h1 = step_hidden(params, &vec![0.0; params.dims.hidden], vocab.bos_id(), &ctx.features);
    let mut live = vec![Hypothesis {
        content: Vec::new(),
        logp: 0.0,
        h: h1,
        done: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut pool = std::mem::take(&mut finished);
        for hyp in live.drain(..) {
            let dist = next_log_dist(params, vocab, &hyp.h, hyp.content.len(), l_max);
            for (v, &lp) in dist.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                if v == eos {
                    pool.push(Hypothesis {
                        content: hyp.content.clone(),
                        logp: hyp.logp + lp,
                        h: Vec::new(),
                        done: true,
                    });
                } else {
                    let mut content = hyp.content.clone();
                    content.push(v);
                    let h = step_hidden(params, &hyp.h, v, &ctx.features);
                    pool.push(Hypothesis {
                        content,
                        logp: hyp.logp + lp,
                        h,
                        done: false,
                    });
                }
            }
        }
        pool.sort_by(|a, b| {
            b.logp
                .total_cmp(&a.logp)
                .then_with(|| seq_cmp(&a.content, &b.content, eos))
        });
        pool.truncate(beam);
        for hyp in pool {
            if hyp.done {
                finished.push(hyp);
            } else {
                live.push(hyp);
            }
        }
    }
    finished.sort_by(|a, b| {
        b.logp
            .total_cmp(&a.logp)
            .then_with(|| seq_cmp(&a.content, &b.content, eos))
    });
    if finished.is_empty() {
        return Err(Error::Domain("beam search produced no finished hypothesis".into()));
    }
    finished.truncate(beam);
    finished
        .iter()
        .map(|h| Caption::from_content(&h.content, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;
    use std::collections::BTreeSet;
    use std::collections::HashMap;

    fn vocab(n_content: usize) -> Vocabulary {
        Vocabulary::synthetic(n_content)
    }

    fn ctx(d: usize) -> Context {
        let features = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
        Context::new("t0".into(), features, BTreeSet::new()).unwrap()
    }

    fn small_dims(v: usize) -> ModelDims {
        ModelDims {
            vocab: v,
            embed: 3,
            hidden: 4,
            ctx: 2,
        }
    }

    #[test]
    fn param_len_matches_block_sum() {
        let d = ModelDims {
            vocab: 5,
            embed: 4,
            hidden: 8,
            ctx: 3,
        };
        // emb 20 + W_h 64 + W_e 32 + W_c 24 + b_h 8 + W_o 40 + b_o 5
        assert_eq!(d.param_len(), 193);
    }

    #[test]
    fn zero_params_give_uniform_over_allowed() {
        let v = vocab(3); // V=5, K=3
        let params = ModelParams::zeros(small_dims(5)).unwrap();
        let c = ctx(2);
        let l_max = 3;
        // content length 2 < l_max: first step has K options, the next two
        // (second content token, then EOS) have K+1.
        let cap = Caption::from_content(&[2, 3], &v).unwrap();
        let lp = log_prob(&params, &v, &c, &cap, l_max).unwrap();
        let expect = -(3.0f64.ln()) - 2.0 * 4.0f64.ln();
        assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");
        // content length == l_max: the final EOS is forced and free.
        let cap = Caption::from_content(&[2, 3, 4], &v).unwrap();
        let lp = log_prob(&params, &v, &c, &cap, l_max).unwrap();
        let expect = -(3.0f64.ln()) - 2.0 * 4.0f64.ln();
        assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");
    }

    #[test]
    fn probabilities_sum_to_one_over_caption_space() {
        let v = vocab(2); // V=4, K=2
        let l_max = 2;
        let params = init_params(small_dims(4), 11).unwrap();
        let c = ctx(2);
        let mut total = 0.0;
        for cap in oracle::enumerate_captions(&v, l_max).unwrap() {
            total += log_prob(&params, &v, &c, &cap, l_max).unwrap().exp();
        }
        assert!((total - 1.0).abs() < 1e-12, "total mass {total}");
    }

    #[test]
    fn eos_only_caption_has_zero_probability() {
        let v = vocab(2);
        let params = init_params(small_dims(4), 3).unwrap();
        let c = ctx(2);
        let cap = Caption::from_content(&[], &v).unwrap();
        let lp = log_prob(&params, &v, &c, &cap, 2).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        assert!(grad_log_prob(&params, &v, &c, &cap, 2).is_err());
    }

    #[test]
    fn overlong_caption_rejected() {
        let v = vocab(2);
        let params = init_params(small_dims(4), 3).unwrap();
        let c = ctx(2);
        let cap = Caption::from_content(&[2, 3, 2], &v).unwrap();
        assert!(log_prob(&params, &v, &c, &cap, 2).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let v = vocab(3);
        let l_max = 3;
        let params = init_params(small_dims(5), 29).unwrap();
        let c = ctx(2);
        let cap = Caption::from_content(&[3, 2], &v).unwrap();
        let (lp, grad) = log_prob_with_grad(&params, &v, &c, &cap, l_max).unwrap();
        assert!(lp.is_finite());
        let fd = oracle::finite_diff(
            |theta| {
                let p = ModelParams::new(params.dims(), theta.to_vec())?;
                log_prob(&p, &v, &c, &cap, l_max)
            },
            params.theta(),
            1e-5,
        )
        .unwrap();
        for (i, (g, f)) in grad.iter().zip(fd.iter()).enumerate() {
            assert!(
                (g - f).abs() <= 1e-7 + 1e-5 * f.abs(),
                "coordinate {i}: analytic {g} vs fd {f}"
            );
        }
    }

    #[test]
    fn grad_at_forced_eos_matches_fd_too() {
        let v = vocab(3);
        let l_max = 2;
        let params = init_params(small_dims(5), 5).unwrap();
        let c = ctx(2);
        let cap = Caption::from_content(&[4, 4], &v).unwrap(); // hits the cap
        let grad = grad_log_prob(&params, &v, &c, &cap, l_max).unwrap();
        let fd = oracle::finite_diff(
            |theta| {
                let p = ModelParams::new(params.dims(), theta.to_vec())?;
                log_prob(&p, &v, &c, &cap, l_max)
            },
            params.theta(),
            1e-5,
        )
        .unwrap();
        for (g, f) in grad.iter().zip(fd.iter()) {
            assert!((g - f).abs() <= 1e-7 + 1e-5 * f.abs());
        }
    }

    #[test]
    fn sampling_matches_enumerated_distribution() {
        let v = vocab(2);
        let l_max = 2;
        let params = init_params(small_dims(4), 41).unwrap();
        let c = ctx(2);
        let space = oracle::enumerate_captions(&v, l_max).unwrap();
        let probs: Vec<f64> = space
            .iter()
            .map(|cap| log_prob(&params, &v, &c, cap, l_max).unwrap().exp())
            .collect();
        let n = 40_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for i in 0..n {
            let s = sample(&params, &v, &c, l_max, 1000 + i).unwrap();
            *counts.entry(s.token_ids().to_vec()).or_default() += 1;
        }
        for (cap, p) in space.iter().zip(probs.iter()) {
            let freq = *counts.get(cap.token_ids()).unwrap_or(&0) as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.0 * sigma + 1e-3,
                "caption {:?}: freq {freq} vs p {p}",
                cap.token_ids()
            );
        }
    }

    #[test]
    fn exhaustive_beam_is_global_argmax() {
        let v = vocab(3);
        let l_max = 2;
        let params = init_params(small_dims(5), 77).unwrap();
        let c = ctx(2);
        let space = oracle::enumerate_captions(&v, l_max).unwrap();
        let best_enum = space
            .iter()
            .map(|cap| (log_prob(&params, &v, &c, cap, l_max).unwrap(), cap))
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
            .map(|(_, cap)| cap.clone())
            .unwrap();
        let from_beam = beam_search(&params, &v, &c, space.len(), l_max).unwrap();
        assert_eq!(from_beam, best_enum);
    }

    #[test]
    fn beam_one_is_greedy_and_deterministic() {
        let v = vocab(3);
        let params = init_params(small_dims(5), 13).unwrap();
        let c = ctx(2);
        let a = beam_search(&params, &v, &c, 1, 3).unwrap();
        let b = beam_search(&params, &v, &c, 1, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.content_len() >= 1 && a.content_len() <= 3);
    }

    #[test]
    fn beam_ties_break_lexicographically() {
        // Zero parameters: every same-length caption has identical log-prob,
        // so the winner must be the lexicographically smallest sequence.
        let v = vocab(3);
        let params = ModelParams::zeros(small_dims(5)).unwrap();
        let c = ctx(2);
        let best = beam_search(&params, &v, &c, 64, 2).unwrap();
        // Length-1 captions (two softmax steps) beat length-2 ones (three);
        // among length-1 captions the smallest content token wins.
        assert_eq!(best.token_ids(), &[2, 1]);
    }

    #[test]
    fn sample_deterministic_in_seed() {
        let v = vocab(3);
        let params = init_params(small_dims(5), 99).unwrap();
        let c = ctx(2);
        let a = sample(&params, &v, &c, 3, 7).unwrap();
        let b = sample(&params, &v, &c, 3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatches_are_domain_errors() {
        let v = vocab(3);
        let params = init_params(small_dims(5), 1).unwrap();
        let bad_ctx = Context::new("x".into(), vec![1.0, 2.0, 3.0], BTreeSet::new()).unwrap();
        let cap = Caption::from_content(&[2], &v).unwrap();
        assert!(matches!(
            log_prob(&params, &v, &bad_ctx, &cap, 3),
            Err(Error::Domain(_))
        ));
        let wrong_vocab = vocab(4);
        let c = ctx(2);
        let cap2 = Caption::from_content(&[2], &wrong_vocab).unwrap();
        assert!(log_prob(&params, &wrong_vocab, &c, &cap2, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sampled_captions_are_always_valid(seed in 0u64..1_000_000, init in 0u64..64) {
            let v = vocab(3);
            let l_max = 3;
            let params = init_params(small_dims(5), init).unwrap();
            let c = ctx(2);
            let s = sample(&params, &v, &c, l_max, seed).unwrap();
            prop_assert!(s.content_len() >= 1);
            prop_assert!(s.content_len() <= l_max);
            prop_assert_eq!(*s.token_ids().last().unwrap(), v.eos_id());
            for &t in s.content() {
                prop_assert!(v.is_content(t));
            }
            // Round-trips through the model with finite log-prob.
            let lp = log_prob(&params, &v, &c, &s, l_max).unwrap();
            prop_assert!(lp.is_finite());
        }
    }
}
