//! Exact-enumeration reference implementations.
//!
//! The caption space is finite, so expectations under the model are sums, not
//! estimates. This module enumerates that space and computes the exact
//! objective, the exact policy gradient, and the exact value of the
//! importance-weighted off-policy expectation. Training code is then tested
//! against these references instead of against itself.
//!
//! `exact_objective` deliberately does not call the model's `log_prob`: it
//! walks the prefix tree with its own forward pass (plain probabilities, no
//! log-space accumulation), so agreement between the two is evidence, not
//! tautology.

use std::collections::HashMap;

use crate::data::{Caption, Context, RatingsDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{self, GradientVector, ModelParams};
use crate::trainers;

/// Enumeration refuses to build caption spaces larger than this.
pub const MAX_ENUM_CAPTIONS: usize = 1_000_000;

/// Number of captions with 1..=l_max content tokens over the content alphabet.
pub fn caption_space_size(vocab: &Vocabulary, l_max: usize) -> Result<usize> {
    if l_max == 0 {
        return Err(Error::Domain("l_max must be at least 1".into()));
    }
    let k = vocab.n_content();
    let mut total: usize = 0;
    let mut pow: usize = 1;
    for _ in 0..l_max {
        pow = pow
            .checked_mul(k)
            .filter(|&p| p <= MAX_ENUM_CAPTIONS)
            .ok_or_else(|| {
                Error::SizeGuard(format!(
                    "caption space for {k} content tokens, l_max {l_max} exceeds {MAX_ENUM_CAPTIONS}"
                ))
            })?;
        total = total.checked_add(pow).filter(|&t| t <= MAX_ENUM_CAPTIONS).ok_or_else(|| {
            Error::SizeGuard(format!(
                "caption space for {k} content tokens, l_max {l_max} exceeds {MAX_ENUM_CAPTIONS}"
            ))
        })?;
    }
    Ok(total)
}

/// Every valid caption (1..=l_max content tokens, EOS-terminated), sorted
/// lexicographically by token ids.
pub fn enumerate_captions(vocab: &Vocabulary, l_max: usize) -> Result<Vec<Caption>> {
    let total = caption_space_size(vocab, l_max)?;
    let content = vocab.content_ids();
    let mut out = Vec::with_capacity(total);
    let mut prefix = Vec::with_capacity(l_max);
    fn rec(
        content: &[usize],
        vocab: &Vocabulary,
        l_max: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Caption>,
    ) {
        for &t in content {
            prefix.push(t);
            out.push(Caption::from_content(prefix, vocab).expect("content tokens"));
            if prefix.len() < l_max {
                rec(content, vocab, l_max, prefix, out);
            }
            prefix.pop();
        }
    }
    rec(&content, vocab, l_max, &mut prefix, &mut out);
    debug_assert_eq!(out.len(), total);
    out.sort();
    Ok(out)
}

// ---- independent forward pass -------------------------------------------
//
// Same parameter layout as the model (that layout is the checkpoint contract)
// but a separate implementation: probabilities are multiplied along the
// prefix tree instead of summing log-probabilities per caption.

struct Flat<'a> {
    theta: &'a [f64],
    vocab: usize,
    embed: usize,
    hidden: usize,
    ctx: usize,
}

impl<'a> Flat<'a> {
    fn of(params: &'a ModelParams) -> Flat<'a> {
        let d = params.dims();
        Flat {
            theta: params.theta(),
            vocab: d.vocab,
            embed: d.embed,
            hidden: d.hidden,
            ctx: d.ctx,
        }
    }

    fn emb(&self, tok: usize) -> &[f64] {
        let start = tok * self.embed;
        &self.theta[start..start + self.embed]
    }

    fn hidden_next(&self, h: &[f64], tok: usize, feats: &[f64]) -> Vec<f64> {
        let o_wh = self.vocab * self.embed;
        let o_we = o_wh + self.hidden * self.hidden;
        let o_wc = o_we + self.hidden * self.embed;
        let o_bh = o_wc + self.hidden * self.ctx;
        let e = self.emb(tok);
        (0..self.hidden)
            .map(|i| {
                let rec: f64 = self.theta[o_wh + i * self.hidden..o_wh + (i + 1) * self.hidden]
                    .iter()
                    .zip(h)
                    .map(|(w, x)| w * x)
                    .sum();
                let inp: f64 = self.theta[o_we + i * self.embed..o_we + (i + 1) * self.embed]
                    .iter()
                    .zip(e)
                    .map(|(w, x)| w * x)
                    .sum();
                let cond: f64 = self.theta[o_wc + i * self.ctx..o_wc + (i + 1) * self.ctx]
                    .iter()
                    .zip(feats)
                    .map(|(w, x)| w * x)
                    .sum();
                (rec + inp + cond + self.theta[o_bh + i]).tanh()
            })
            .collect()
    }

    /// Normalized next-token probabilities over the allowed set; zero elsewhere.
    fn next_probs(&self, h: &[f64], vocab: &Vocabulary, allow_eos: bool) -> Vec<f64> {
        let o_wo = self.vocab * self.embed
            + self.hidden * self.hidden
            + self.hidden * self.embed
            + self.hidden * self.ctx
            + self.hidden;
        let o_bo = o_wo + self.vocab * self.hidden;
        let allowed =
            |v: usize| v != vocab.bos_id() && (allow_eos || v != vocab.eos_id());
        let logits: Vec<f64> = (0..self.vocab)
            .map(|v| {
                self.theta[o_wo + v * self.hidden..o_wo + (v + 1) * self.hidden]
                    .iter()
                    .zip(h)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.theta[o_bo + v]
            })
            .collect();
        let m = logits
            .iter()
            .enumerate()
            .filter(|&(v, _)| allowed(v))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(v, &x)| if allowed(v) { (x - m).exp() } else { 0.0 })
            .collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }
}

/// Exact E_{I ~ contexts} E_{c ~ p(.|I)} [ rating(I, c) ], by walking the
/// prefix tree of the caption space.
pub fn exact_objective(
    params: &ModelParams,
    vocab: &Vocabulary,
    contexts: &[Context],
    l_max: usize,
    rating: &dyn Fn(&Context, &Caption) -> f64,
) -> Result<f64> {
    caption_space_size(vocab, l_max)?; // size guard
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts".into()));
    }
    if params.dims().vocab != vocab.size() {
        return Err(Error::Domain("model/vocabulary size mismatch".into()));
    }
    let flat = Flat::of(params);
    let content = vocab.content_ids();
    let mut total = 0.0;
    for ctx in contexts {
        if ctx.features.len() != params.dims().ctx {
            return Err(Error::Domain(format!(
                "context {}: feature length mismatch",
                ctx.id
            )));
        }
        let h1 = flat.hidden_next(&vec![0.0; flat.hidden], vocab.bos_id(), &ctx.features);
        let mut prefix: Vec<usize> = Vec::with_capacity(l_max);
        // prob = probability of the prefix as emitted so far.
        fn walk(
            flat: &Flat,
            vocab: &Vocabulary,
            ctx: &Context,
            rating: &dyn Fn(&Context, &Caption) -> f64,
            h: &[f64],
            prefix: &mut Vec<usize>,
            prob: f64,
            l_max: usize,
            content: &[usize],
            acc: &mut f64,
        ) {
            if prefix.len() == l_max {
                // EOS forced with probability one.
                let cap = Caption::from_content(prefix, vocab).expect("content tokens");
                *acc += prob * rating(ctx, &cap);
                return;
            }
            let probs = flat.next_probs(h, vocab, !prefix.is_empty());
            if !prefix.is_empty() {
                let p_eos = probs[vocab.eos_id()];
                if p_eos > 0.0 {
                    let cap = Caption::from_content(prefix, vocab).expect("content tokens");
                    *acc += prob * p_eos * rating(ctx, &cap);
                }
            }
            for &t in content {
                let p = probs[t];
                if p == 0.0 {
                    continue;
                }
                let h2 = flat.hidden_next(h, t, &ctx.features);
                prefix.push(t);
                walk(flat, vocab, ctx, rating, &h2, prefix, prob * p, l_max, content, acc);
                prefix.pop();
            }
        }
        let mut acc = 0.0;
        walk(
            &flat, vocab, ctx, rating, &h1, &mut prefix, 1.0, l_max, &content, &mut acc,
        );
        total += acc;
    }
    Ok(total / contexts.len() as f64)
}

/// Exact policy gradient sum_c p(c|I) grad log p(c|I) (rating - baseline),
/// averaged over contexts. Identical for every baseline value by the
/// score-function identity.
pub fn exact_policy_gradient(
    params: &ModelParams,
    vocab: &Vocabulary,
    contexts: &[Context],
    l_max: usize,
    rating: &dyn Fn(&Context, &Caption) -> f64,
    baseline: f64,
) -> Result<GradientVector> {
    if contexts.is_empty() {
        return Err(Error::Domain("no contexts".into()));
    }
    let caps = enumerate_captions(vocab, l_max)?;
    let mut acc = vec![0.0; params.dims().param_len()];
    let scale = 1.0 / contexts.len() as f64;
    for ctx in contexts {
        for cap in &caps {
            let (lp, g) = model::log_prob_with_grad(params, vocab, ctx, cap, l_max)?;
            let w = lp.exp() * (rating(ctx, cap) - baseline) * scale;
            if w != 0.0 {
                for (a, gi) in acc.iter_mut().zip(&g) {
                    *a += w * gi;
                }
            }
        }
    }
    Ok(acc)
}

/// Exact value of the off-policy estimator's expectation,
/// E_{c ~ q} [ eta grad log p (r - b) ], with unrated captions substituted
/// r := b, averaged over the contexts of the ratings dataset. Computed
/// literally (q, eta and the substitution all appear; nothing is cancelled
/// algebraically), so agreement with the on-policy form is a real check.
pub fn exact_offpolicy_expectation(
    params: &ModelParams,
    vocab: &Vocabulary,
    ratings: &RatingsDataset,
    l_max: usize,
    epsilon: f64,
    baseline: f64,
) -> Result<GradientVector> {
    let caps = enumerate_captions(vocab, l_max)?;
    let space = caps.len();
    let mut acc = vec![0.0; params.dims().param_len()];
    let scale = 1.0 / ratings.n_contexts() as f64;
    for entry in ratings.entries() {
        let rated: HashMap<&[usize], f64> = entry
            .rated
            .iter()
            .map(|rc| (rc.caption.token_ids(), rc.rating))
            .collect();
        for cap in &caps {
            let r = match rated.get(cap.token_ids()) {
                Some(&r) => r,
                None => baseline, // substituted reward makes the term zero
            };
            let advantage = r - baseline;
            if advantage == 0.0 {
                continue;
            }
            let q = trainers::q_prob(ratings, &entry.context, cap, epsilon, space)?;
            let (lp, g) = model::log_prob_with_grad(params, vocab, &entry.context, cap, l_max)?;
            let eta = lp.exp() / q;
            let w = q * eta * advantage * scale;
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += w * gi;
            }
        }
    }
    Ok(acc)
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn finite_diff(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("finite-difference step {h} invalid")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
