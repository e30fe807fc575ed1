//! JSONL dataset files and the vocabulary sidecar.
//!
//! One JSON object per line. Caption datasets carry
//! `{context_id, features, caption_tokens}`; ratings datasets additionally
//! carry `votes` (10 binary values). Ratings are never stored, they are
//! recomputed from votes on load. Features round-trip bit-exactly through
//! serde_json's shortest-roundtrip float encoding.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    Caption, CaptionDataset, Context, RatedCaption, RatingsDataset, RatingsEntry, Vocabulary,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    bos_id: usize,
    eos_id: usize,
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = VocabFile {
        tokens: vocab.tokens().to_vec(),
        bos_id: vocab.bos_id(),
        eos_id: vocab.eos_id(),
    };
    let s = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: VocabFile = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
    Vocabulary::new(file.tokens, file.bos_id, file.eos_id)
}

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    context_id: String,
    features: Vec<f64>,
    caption_tokens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RatingRecord {
    context_id: String,
    features: Vec<f64>,
    caption_tokens: Vec<usize>,
    votes: Vec<u8>,
}

fn write_lines<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| Error::json(path, e))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Parse each non-blank line as `T`, keeping 1-based line numbers for errors.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn validate_line<T>(path: &Path, line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Validation(msg) => {
            Error::Validation(format!("{}:{line}: {msg}", path.display()))
        }
        other => other,
    })
}

/// Check that repeated context ids always carry identical features.
fn check_features(
    path: &Path,
    line: usize,
    seen: &mut HashMap<String, Vec<f64>>,
    id: &str,
    features: &[f64],
) -> Result<()> {
    match seen.get(id) {
        Some(prev) if prev.as_slice() != features => Err(Error::Validation(format!(
            "{}:{line}: context {id} has conflicting features",
            path.display()
        ))),
        Some(_) => Ok(()),
        None => {
            seen.insert(id.to_string(), features.to_vec());
            Ok(())
        }
    }
}

pub fn save_captions(path: &Path, ds: &CaptionDataset) -> Result<()> {
    write_lines(
        path,
        ds.pairs().iter().map(|(ctx, c)| CaptionRecord {
            context_id: ctx.id.clone(),
            features: ctx.features.clone(),
            caption_tokens: c.token_ids().to_vec(),
        }),
    )
}

pub fn load_captions(path: &Path, vocab: &Vocabulary, l_max: usize) -> Result<CaptionDataset> {
    let rows: Vec<(usize, CaptionRecord)> = read_lines(path)?;
    let mut seen = HashMap::new();
    let mut pairs = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        check_features(path, line, &mut seen, &row.context_id, &row.features)?;
        let ctx = validate_line(
            path,
            line,
            Context::new(row.context_id, row.features, BTreeSet::new()),
        )?;
        let caption = validate_line(path, line, Caption::new(row.caption_tokens, vocab))?;
        if caption.content_len() > l_max {
            return Err(Error::Validation(format!(
                "{}:{line}: caption length {} exceeds maximum {l_max}",
                path.display(),
                caption.content_len()
            )));
        }
        pairs.push((ctx, caption));
    }
    CaptionDataset::new(pairs)
}

pub fn save_ratings(path: &Path, ds: &RatingsDataset) -> Result<()> {
    write_lines(
        path,
        ds.entries().iter().flat_map(|e| {
            e.rated.iter().map(|rc| RatingRecord {
                context_id: e.context.id.clone(),
                features: e.context.features.clone(),
                caption_tokens: rc.caption.token_ids().to_vec(),
                votes: rc.votes.clone(),
            })
        }),
    )
}

pub fn load_ratings(path: &Path, vocab: &Vocabulary, l_max: usize) -> Result<RatingsDataset> {
    let rows: Vec<(usize, RatingRecord)> = read_lines(path)?;
    let mut seen = HashMap::new();
    // Preserve first-appearance order of contexts.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, RatingsEntry> = HashMap::new();
    for (line, row) in rows {
        check_features(path, line, &mut seen, &row.context_id, &row.features)?;
        let caption = validate_line(path, line, Caption::new(row.caption_tokens, vocab))?;
        if caption.content_len() > l_max {
            return Err(Error::Validation(format!(
                "{}:{line}: caption length {} exceeds maximum {l_max}",
                path.display(),
                caption.content_len()
            )));
        }
        let rated = validate_line(path, line, RatedCaption::from_votes(caption, row.votes))?;
        let entry = grouped.entry(row.context_id.clone()).or_insert_with(|| {
            order.push(row.context_id.clone());
            RatingsEntry {
                context: Context {
                    id: row.context_id.clone(),
                    features: row.features.clone(),
                    target_tokens: BTreeSet::new(),
                },
                rated: Vec::new(),
            }
        });
        if entry
            .rated
            .iter()
            .any(|rc| rc.caption == rated.caption)
        {
            return Err(Error::Validation(format!(
                "{}:{line}: duplicate caption for context {}",
                path.display(),
                row.context_id
            )));
        }
        entry.rated.push(rated);
    }
    let entries = order
        .into_iter()
        .map(|id| grouped.remove(&id).expect("grouped by construction"))
        .collect();
    RatingsDataset::new(entries)
}
