//! Core dataset types: vocabulary, contexts, captions, rated captions, and the
//! nine-bin rating quantization shared by every consumer of votes.

mod io;

pub use io::{
    load_captions, load_ratings, load_vocab, save_captions, save_ratings, save_vocab,
};

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

/// Number of simulated raters behind every stored rating.
pub const VOTES_PER_CAPTION: usize = 10;

/// Token inventory with designated BOS/EOS specials.
///
/// Token ids are indices into `tokens`. Everything that is not BOS or EOS is a
/// content token and may appear in captions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    bos_id: usize,
    eos_id: usize,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, bos_id: usize, eos_id: usize) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::Validation(format!(
                "vocabulary needs BOS, EOS and at least one content token, got {} tokens",
                tokens.len()
            )));
        }
        if bos_id >= tokens.len() || eos_id >= tokens.len() {
            return Err(Error::Validation(format!(
                "special ids out of range: bos={bos_id} eos={eos_id} size={}",
                tokens.len()
            )));
        }
        if bos_id == eos_id {
            return Err(Error::Validation("BOS and EOS must differ".into()));
        }
        let mut seen = HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::Validation(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            bos_id,
            eos_id,
        })
    }

    /// Vocabulary `<bos>, <eos>, w00..w(n-1)` used by the synthetic world.
    pub fn synthetic(n_content: usize) -> Self {
        let mut tokens = vec!["<bos>".to_string(), "<eos>".to_string()];
        tokens.extend((0..n_content).map(|i| format!("w{i:02}")));
        Vocabulary {
            tokens,
            bos_id: 0,
            eos_id: 1,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos_id(&self) -> usize {
        self.bos_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_content(&self, id: usize) -> bool {
        id < self.tokens.len() && id != self.bos_id && id != self.eos_id
    }

    /// Content token ids in ascending order.
    pub fn content_ids(&self) -> Vec<usize> {
        (0..self.tokens.len())
            .filter(|&id| self.is_content(id))
            .collect()
    }

    pub fn n_content(&self) -> usize {
        self.tokens.len() - 2
    }
}

/// An EOS-terminated token sequence. Construction enforces the caption shape:
/// at least one token, exactly one EOS at the end, no BOS anywhere.
///
/// Ordering is lexicographic on token ids, which downstream code relies on for
/// deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Caption {
    token_ids: Vec<usize>,
}

impl Caption {
    pub fn new(token_ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(Error::Validation("caption is empty".into()));
        }
        match token_ids.last() {
            Some(&last) if last == vocab.eos_id() => {}
            _ => return Err(Error::Validation("caption must end with EOS".into())),
        }
        for (i, &t) in token_ids.iter().enumerate() {
            if t >= vocab.size() {
                return Err(Error::Validation(format!(
                    "unknown token id {t} (vocab size {})",
                    vocab.size()
                )));
            }
            if t == vocab.bos_id() {
                return Err(Error::Validation("BOS may not appear in a caption".into()));
            }
            if t == vocab.eos_id() && i + 1 != token_ids.len() {
                return Err(Error::Validation("EOS before end of caption".into()));
            }
        }
        Ok(Caption { token_ids })
    }

    /// Build from content tokens, appending EOS. Empty content is allowed here
    /// (it denotes the degenerate EOS-only sequence used by estimator probes);
    /// dataset loaders and the enumeration space never produce it.
    pub fn from_content(content: &[usize], vocab: &Vocabulary) -> Result<Self> {
        for &t in content {
            if !vocab.is_content(t) {
                return Err(Error::Validation(format!(
                    "token id {t} is not a content token"
                )));
            }
        }
        let mut token_ids = content.to_vec();
        token_ids.push(vocab.eos_id());
        Ok(Caption { token_ids })
    }

    /// All tokens including the terminal EOS.
    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    /// Content tokens (terminal EOS stripped).
    pub fn content(&self) -> &[usize] {
        &self.token_ids[..self.token_ids.len() - 1]
    }

    pub fn content_len(&self) -> usize {
        self.token_ids.len() - 1
    }

    /// Total stored length including EOS.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a caption always contains at least EOS
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.token_ids
            .iter()
            .filter_map(|&t| vocab.token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Conditioning input: a stable id, a fixed-length feature vector, and the
/// target content tokens the world considers correct for this context.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub id: String,
    pub features: Vec<f64>,
    pub target_tokens: BTreeSet<usize>,
}

impl Context {
    pub fn new(id: String, features: Vec<f64>, target_tokens: BTreeSet<usize>) -> Result<Self> {
        if id.is_empty() {
            return Err(Error::Validation("context id is empty".into()));
        }
        if features.is_empty() {
            return Err(Error::Validation(format!(
                "context {id}: feature vector is empty"
            )));
        }
        if let Some(bad) = features.iter().find(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "context {id}: non-finite feature {bad}"
            )));
        }
        Ok(Context {
            id,
            features,
            target_tokens,
        })
    }
}

/// Quantize a mean vote into the nine bins {0, 1/8, ..., 1}: nearest k/8 with
/// ties resolved toward the higher bin.
pub fn quantize_rating(x: f64) -> Result<f64> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "rating {x} outside [0, 1], cannot quantize"
        )));
    }
    Ok((x * 8.0 + 0.5).floor() / 8.0)
}

/// A caption with its raw rater votes and the quantized rating derived from
/// them. `rating` is always `quantize_rating(mean(votes))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedCaption {
    pub caption: Caption,
    pub votes: Vec<u8>,
    pub rating: f64,
}

impl RatedCaption {
    pub fn from_votes(caption: Caption, votes: Vec<u8>) -> Result<Self> {
        if votes.len() != VOTES_PER_CAPTION {
            return Err(Error::Validation(format!(
                "expected {VOTES_PER_CAPTION} votes, got {}",
                votes.len()
            )));
        }
        if let Some(&bad) = votes.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!(
                "votes must be 0 or 1, got {bad}"
            )));
        }
        let mean = votes.iter().map(|&v| v as f64).sum::<f64>() / votes.len() as f64;
        let rating = quantize_rating(mean)?;
        Ok(RatedCaption {
            caption,
            votes,
            rating,
        })
    }
}

/// All rated captions for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsEntry {
    pub context: Context,
    pub rated: Vec<RatedCaption>,
}

/// Ratings dataset: per-context lists of distinct rated captions.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    entries: Vec<RatingsEntry>,
    index: HashMap<String, usize>,
}

impl RatingsDataset {
    pub fn new(entries: Vec<RatingsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("ratings dataset has no contexts".into()));
        }
        let d = entries[0].context.features.len();
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.context.features.len() != d {
                return Err(Error::Validation(format!(
                    "context {}: feature length {} != {}",
                    e.context.id,
                    e.context.features.len(),
                    d
                )));
            }
            if e.rated.is_empty() {
                return Err(Error::Validation(format!(
                    "context {}: no rated captions",
                    e.context.id
                )));
            }
            let mut seen = HashSet::new();
            for rc in &e.rated {
                if !seen.insert(rc.caption.token_ids().to_vec()) {
                    return Err(Error::Validation(format!(
                        "context {}: duplicate rated caption",
                        e.context.id
                    )));
                }
            }
            if index.insert(e.context.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate context id {}",
                    e.context.id
                )));
            }
        }
        Ok(RatingsDataset { entries, index })
    }

    pub fn entries(&self) -> &[RatingsEntry] {
        &self.entries
    }

    pub fn entry(&self, context_id: &str) -> Option<&RatingsEntry> {
        self.index.get(context_id).map(|&i| &self.entries[i])
    }

    pub fn n_contexts(&self) -> usize {
        self.entries.len()
    }

    pub fn n_rated(&self) -> usize {
        self.entries.iter().map(|e| e.rated.len()).sum()
    }

    /// Mean rating over every rated caption; the off-policy baseline.
    pub fn mean_rating(&self) -> f64 {
        let n = self.n_rated();
        let s: f64 = self
            .entries
            .iter()
            .flat_map(|e| e.rated.iter().map(|rc| rc.rating))
            .sum();
        s / n as f64
    }

    pub fn feature_dim(&self) -> usize {
        self.entries[0].context.features.len()
    }
}

/// Supervised caption dataset: (context, ground-truth caption) pairs.
#[derive(Debug, Clone)]
pub struct CaptionDataset {
    pairs: Vec<(Context, Caption)>,
}

impl CaptionDataset {
    pub fn new(pairs: Vec<(Context, Caption)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Validation("caption dataset is empty".into()));
        }
        let d = pairs[0].0.features.len();
        for (ctx, c) in &pairs {
            if ctx.features.len() != d {
                return Err(Error::Validation(format!(
                    "context {}: feature length {} != {}",
                    ctx.id,
                    ctx.features.len(),
                    d
                )));
            }
            if c.content_len() == 0 {
                return Err(Error::Validation(format!(
                    "context {}: EOS-only caption not allowed in datasets",
                    ctx.id
                )));
            }
        }
        Ok(CaptionDataset { pairs })
    }

    pub fn pairs(&self) -> &[(Context, Caption)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.pairs[0].0.features.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab4() -> Vocabulary {
        Vocabulary::synthetic(2) // <bos> <eos> w00 w01
    }

    #[test]
    fn quantize_hits_every_bin_center() {
        for k in 0..=8 {
            let x = k as f64 / 8.0;
            assert_eq!(quantize_rating(x).unwrap(), x);
        }
    }

    #[test]
    fn quantize_ties_go_up() {
        // 1/16 is exactly between 0 and 1/8.
        assert_eq!(quantize_rating(1.0 / 16.0).unwrap(), 1.0 / 8.0);
        assert_eq!(quantize_rating(3.0 / 16.0).unwrap(), 2.0 / 8.0);
    }

    #[test]
    fn quantize_vote_means() {
        // Means of 10 binary votes: 0.3 -> 2/8 (since 2.9 rounds via floor(2.4+0.5)=2)...
        // spelled out: 0.3*8 = 2.4 -> bin 2; 0.35 would tie; 0.55*8 = 4.4 -> bin 4.
        assert_eq!(quantize_rating(0.3).unwrap(), 0.25);
        assert_eq!(quantize_rating(0.4).unwrap(), 3.0 / 8.0);
        assert_eq!(quantize_rating(0.5).unwrap(), 0.5);
        assert_eq!(quantize_rating(0.9).unwrap(), 7.0 / 8.0);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        assert!(quantize_rating(-0.01).is_err());
        assert!(quantize_rating(1.01).is_err());
        assert!(quantize_rating(f64::NAN).is_err());
    }

    #[test]
    fn caption_shape_enforced() {
        let v = vocab4();
        assert!(Caption::new(vec![], &v).is_err());
        assert!(Caption::new(vec![2, 3], &v).is_err(), "missing EOS");
        assert!(Caption::new(vec![2, 1, 3, 1], &v).is_err(), "EOS inside");
        assert!(Caption::new(vec![0, 2, 1], &v).is_err(), "BOS inside");
        assert!(Caption::new(vec![2, 9, 1], &v).is_err(), "unknown id");
        let c = Caption::new(vec![2, 3, 1], &v).unwrap();
        assert_eq!(c.content(), &[2, 3]);
        assert_eq!(c.content_len(), 2);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn caption_from_content_appends_eos() {
        let v = vocab4();
        let c = Caption::from_content(&[3, 2], &v).unwrap();
        assert_eq!(c.token_ids(), &[3, 2, 1]);
        // EOS-only construction is allowed for probes.
        let e = Caption::from_content(&[], &v).unwrap();
        assert_eq!(e.token_ids(), &[1]);
        assert_eq!(e.content_len(), 0);
        // but specials are not content
        assert!(Caption::from_content(&[1], &v).is_err());
    }

    #[test]
    fn caption_ordering_is_lexicographic() {
        let v = vocab4();
        let a = Caption::from_content(&[2], &v).unwrap();
        let b = Caption::from_content(&[2, 2], &v).unwrap();
        let c = Caption::from_content(&[3], &v).unwrap();
        // [2,1] < [2,2,1] because EOS id 1 < content id 2 at position 2.
        assert!(a < b);
        assert!(b < c);
    }

    #[test]
    fn rated_caption_votes_checked() {
        let v = vocab4();
        let c = Caption::from_content(&[2], &v).unwrap();
        assert!(RatedCaption::from_votes(c.clone(), vec![1; 9]).is_err());
        assert!(RatedCaption::from_votes(c.clone(), vec![2; 10]).is_err());
        let rc = RatedCaption::from_votes(c, vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(rc.rating, 0.25); // mean 0.3 -> bin 2/8
    }

    #[test]
    fn ratings_dataset_rejects_duplicates() {
        let v = vocab4();
        let ctx = Context::new("c0".into(), vec![0.0, 1.0], BTreeSet::new()).unwrap();
        let c = Caption::from_content(&[2], &v).unwrap();
        let rc = RatedCaption::from_votes(c, vec![1; 10]).unwrap();
        let entry = RatingsEntry {
            context: ctx,
            rated: vec![rc.clone(), rc],
        };
        assert!(RatingsDataset::new(vec![entry]).is_err());
    }

    #[test]
    fn ratings_dataset_mean() {
        let v = vocab4();
        let ctx = Context::new("c0".into(), vec![0.0], BTreeSet::new()).unwrap();
        let c1 = Caption::from_content(&[2], &v).unwrap();
        let c2 = Caption::from_content(&[3], &v).unwrap();
        let r1 = RatedCaption::from_votes(c1, vec![1; 10]).unwrap(); // rating 1.0
        let r2 = RatedCaption::from_votes(c2, vec![0; 10]).unwrap(); // rating 0.0
        let ds = RatingsDataset::new(vec![RatingsEntry {
            context: ctx,
            rated: vec![r1, r2],
        }])
        .unwrap();
        assert_eq!(ds.mean_rating(), 0.5);
        assert_eq!(ds.n_rated(), 2);
    }

    #[test]
    fn vocabulary_invariants() {
        assert!(Vocabulary::new(vec!["a".into(), "b".into()], 0, 1).is_err());
        assert!(
            Vocabulary::new(vec!["a".into(), "a".into(), "c".into()], 0, 1).is_err(),
            "duplicate tokens"
        );
        assert!(Vocabulary::new(vec!["a".into(), "b".into(), "c".into()], 0, 0).is_err());
        let v = Vocabulary::synthetic(10);
        assert_eq!(v.size(), 12);
        assert_eq!(v.n_content(), 10);
        assert_eq!(v.content_ids().len(), 10);
        assert!(!v.is_content(v.bos_id()));
        assert!(!v.is_content(v.eos_id()));
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent_and_nearest(x in 0.0f64..=1.0) {
            let q = quantize_rating(x).unwrap();
            // lands on a bin
            let k = (q * 8.0).round();
            prop_assert!((q - k / 8.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&q));
            // idempotent
            prop_assert_eq!(quantize_rating(q).unwrap(), q);
            // nearest bin: distance at most half a bin width
            prop_assert!((x - q).abs() <= 1.0 / 16.0 + 1e-12);
        }

        #[test]
        fn quantized_mean_of_votes_valid(votes in proptest::collection::vec(0u8..=1, 10)) {
            let mean = votes.iter().map(|&v| v as f64).sum::<f64>() / 10.0;
            let q = quantize_rating(mean).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }
}
