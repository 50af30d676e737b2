//! JSON-lines embedding interchange, one sentence per line:
//!
//! ```text
//! {"id": str, "tokens": [str], "word_map": [[int]], "label": int?,
//!  "cls": [f32], "words": [[f32]],
//!  "layers": {"<l>": {"cls": [...], "words": [[...]]}}?,
//!  "meta": {"dim": int, "model": str}}
//! ```
//!
//! `words` may hold one vector per token (subword vectors are then averaged
//! into their word) or one per word. Unknown fields are ignored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::toy::mean_of;
use super::{validate_alignment, EmbeddingMeta, EmbeddingSet, LayerEmbedding};
use crate::error::{PlexError, Result};
use crate::numerics::Vector;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    cls: Vec<f32>,
    words: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    dim: usize,
    model: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    tokens: Vec<String>,
    word_map: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    cls: Vec<f32>,
    words: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<BTreeMap<String, LayerRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    meta: MetaRecord,
}

/// Streaming reader; validates each record and enforces one dimension per file.
pub struct EmbeddingReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    dim: Option<usize>,
}

impl<R: BufRead> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingSet>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

impl<R: BufRead> EmbeddingReader<R> {
    fn parse(&mut self, line: &str) -> Result<EmbeddingSet> {
        let record: Record =
            serde_json::from_str(line).map_err(|e| PlexError::MalformedRecord {
                line: self.line_no,
                message: e.to_string(),
            })?;
        let set = record_to_set(record)?;
        match self.dim {
            None => self.dim = Some(set.dim()),
            Some(d) if d != set.dim() => {
                let found = set.dim();
                return Err(PlexError::InvalidRecord {
                    id: set.id,
                    message: format!("dimension {found} differs from earlier records ({d})"),
                });
            }
            Some(_) => {}
        }
        Ok(set)
    }
}

pub fn read_embeddings<R: BufRead>(reader: R) -> EmbeddingReader<R> {
    EmbeddingReader {
        lines: reader.lines(),
        line_no: 0,
        dim: None,
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingReader<BufReader<File>>> {
    Ok(read_embeddings(BufReader::new(File::open(path)?)))
}

pub fn write_embeddings<'a, W: Write>(
    mut writer: W,
    sets: impl IntoIterator<Item = &'a EmbeddingSet>,
) -> Result<()> {
    for set in sets {
        serde_json::to_writer(&mut writer, &set_to_record(set))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_embeddings<'a>(
    path: impl AsRef<Path>,
    sets: impl IntoIterator<Item = &'a EmbeddingSet>,
) -> Result<()> {
    write_embeddings(BufWriter::new(File::create(path)?), sets)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn set_to_record(set: &EmbeddingSet) -> Record {
    let layers = (!set.layers.is_empty()).then(|| {
        set.layers
            .iter()
            .map(|(l, emb)| {
                (
                    l.to_string(),
                    LayerRecord {
                        cls: to_f32(&emb.cls),
                        words: emb.words.iter().map(|w| to_f32(w)).collect(),
                    },
                )
            })
            .collect()
    });
    Record {
        id: set.id.clone(),
        tokens: set.tokens.clone(),
        word_map: set.word_map.clone(),
        label: set.label,
        cls: to_f32(&set.cls),
        words: set.words.iter().map(|w| to_f32(w)).collect(),
        layers,
        probs: set.probs.clone(),
        meta: MetaRecord {
            dim: set.meta.dim,
            model: set.meta.model.clone(),
        },
    }
}

fn record_to_set(r: Record) -> Result<EmbeddingSet> {
    let id = r.id.clone();
    let invalid = |message: String| PlexError::InvalidRecord {
        id: id.clone(),
        message,
    };
    if r.tokens.is_empty() {
        return Err(invalid("record has no tokens".into()));
    }
    validate_alignment(&r.id, r.tokens.len(), &r.word_map)?;
    let dim = r.meta.dim;
    if dim == 0 {
        return Err(invalid("meta.dim must be positive".into()));
    }
    let vector = |v: &[f32], what: &str| -> Result<Vector> {
        if v.len() != dim {
            return Err(invalid(format!(
                "{what} has length {}, expected {dim}",
                v.len()
            )));
        }
        Vector::new(v.iter().map(|&x| x as f64).collect())
            .map_err(|_| invalid(format!("{what} contains a non-finite value")))
    };
    let words = |cls: &[f32], words: &[Vec<f32>], scope: &str| -> Result<LayerEmbedding> {
        let cls = vector(cls, &format!("{scope}cls"))?;
        let raw = words
            .iter()
            .enumerate()
            .map(|(i, w)| vector(w, &format!("{scope}words[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let words = if raw.len() == r.word_map.len() {
            raw
        } else if raw.len() == r.tokens.len() {
            r.word_map
                .iter()
                .map(|group| mean_of(group.iter().map(|&t| raw[t].as_slice()), dim))
                .collect()
        } else {
            return Err(invalid(format!(
                "{scope}words has {} vectors; expected {} (words) or {} (tokens)",
                raw.len(),
                r.word_map.len(),
                r.tokens.len()
            )));
        };
        Ok(LayerEmbedding { cls, words })
    };
    let last = words(&r.cls, &r.words, "")?;
    let mut layers = BTreeMap::new();
    for (key, layer) in r.layers.iter().flatten() {
        let index: usize = key
            .parse()
            .map_err(|_| invalid(format!("layer key {key:?} is not an integer")))?;
        layers.insert(
            index,
            words(&layer.cls, &layer.words, &format!("layers[{key}]."))?,
        );
    }
    if let Some(p) = &r.probs {
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("probs must be finite and non-negative".into()));
        }
    }
    Ok(EmbeddingSet {
        id: r.id,
        tokens: r.tokens,
        word_map: r.word_map,
        label: r.label,
        cls: last.cls,
        words: last.words,
        layers,
        probs: r.probs,
        meta: EmbeddingMeta {
            dim,
            model: r.meta.model,
        },
    })
}
