//! Masked predictions produced outside this process (e.g. by an exporter
//! running a full-size model), replayed as a [`MaskedModel`].
//!
//! File format, JSON lines: `{"id": str, "mask": [0|1, ...], "probs": [f64, ...]}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MaskedModel;
use crate::error::{PlexError, Result};
use crate::numerics::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedPrediction {
    pub id: String,
    pub mask: Vec<u8>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RecordedPredictions {
    by_sentence: HashMap<String, HashMap<Vec<bool>, Vec<f64>>>,
}

impl RecordedPredictions {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = RecordedPredictions::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MaskedPrediction =
                serde_json::from_str(&line).map_err(|e| PlexError::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            out.insert(rec).map_err(|e| match e {
                PlexError::InvalidRecord { message, .. } => PlexError::MalformedRecord {
                    line: i + 1,
                    message,
                },
                other => other,
            })?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        RecordedPredictions::from_reader(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn insert(&mut self, rec: MaskedPrediction) -> Result<()> {
        if rec.mask.iter().any(|&b| b > 1) {
            return Err(PlexError::InvalidRecord {
                id: rec.id,
                message: "mask entries must be 0 or 1".into(),
            });
        }
        if rec.probs.is_empty() || rec.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PlexError::InvalidRecord {
                id: rec.id,
                message: "probs must be a non-empty list of finite non-negative values".into(),
            });
        }
        let mask = rec.mask.iter().map(|&b| b == 1).collect();
        self.by_sentence
            .entry(rec.id)
            .or_default()
            .insert(mask, rec.probs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_sentence.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model for one sentence, targeting the class predicted on its full mask.
    pub fn model(&self, id: &str, n_words: usize) -> Result<RecordedModel<'_>> {
        let table = self.by_sentence.get(id).ok_or_else(|| {
            PlexError::InvalidInput(format!("no recorded predictions for sentence {id}"))
        })?;
        let full = table.get(&vec![true; n_words]).ok_or_else(|| {
            PlexError::InvalidInput(format!("sentence {id} has no full-mask prediction"))
        })?;
        Ok(RecordedModel {
            id: id.to_string(),
            n_words,
            class: argmax(full),
            table,
        })
    }
}

pub struct RecordedModel<'a> {
    id: String,
    n_words: usize,
    class: usize,
    table: &'a HashMap<Vec<bool>, Vec<f64>>,
}

impl RecordedModel<'_> {
    pub fn class(&self) -> usize {
        self.class
    }
}

impl MaskedModel for RecordedModel<'_> {
    fn n_words(&self) -> usize {
        self.n_words
    }

    fn eval(&self, keep: &[bool]) -> Result<f64> {
        let probs = self.table.get(keep).ok_or_else(|| {
            let bits: String = keep.iter().map(|&b| if b { '1' } else { '0' }).collect();
            PlexError::InvalidInput(format!(
                "sentence {}: mask {bits} was not recorded",
                self.id
            ))
        })?;
        probs
            .get(self.class)
            .copied()
            .ok_or_else(|| PlexError::shape("recorded probs", self.class + 1, probs.len()))
    }
}
