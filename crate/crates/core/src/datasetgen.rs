//! Turns a corpus into `(h_cls, h_w, fI_w)` training pairs by running a
//! perturbation explainer on every sentence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{HeadParams, PerturbationMode};
use crate::encoder::{EmbeddingSet, Encoder};
use crate::error::{PlexError, Result};
use crate::explainers::{attribute, ExplainConfig, ImportanceVector, Method, SentenceModel};
use crate::numerics::{mix_seed, seeded_rng};
use crate::plex::TrainingPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub method: Method,
    pub n_samples: usize,
    pub seed: u64,
    /// Replace removed words with `[mask]` instead of deleting them.
    pub substitute_mask: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            method: Method::Lime,
            n_samples: 1000,
            seed: 0,
            substitute_mask: false,
        }
    }
}

impl DatasetConfig {
    /// Explainer settings for sentence `index`; each sentence gets its own seed stream.
    pub fn explain_config(&self, index: usize) -> ExplainConfig {
        let mut cfg = ExplainConfig::default()
            .with_samples(self.n_samples)
            .with_seed(mix_seed(self.seed, index as u64));
        if self.substitute_mask {
            cfg.mode = PerturbationMode::mask_token();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSentence {
    pub id: String,
    pub error: String,
}

/// Sidecar describing how a pair file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub model: String,
    pub dim: usize,
    pub sentences: usize,
    pub explained: usize,
    pub pairs: usize,
    pub skipped: Vec<SkippedSentence>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    pub manifest: DatasetManifest,
    /// One explanation per successfully explained sentence, in corpus order.
    pub explanations: Vec<ImportanceVector>,
}

/// Pairs each word of `e` with its CLS and the matching score.
pub fn pairs_for(e: &EmbeddingSet, v: &ImportanceVector) -> Result<Vec<TrainingPair>> {
    if v.scores.len() != e.word_count() {
        return Err(PlexError::shape(
            "importance scores",
            e.word_count(),
            v.scores.len(),
        ));
    }
    Ok(e.words
        .iter()
        .zip(&v.scores)
        .enumerate()
        .map(|(widx, (w, &fi))| TrainingPair {
            sid: e.id.clone(),
            widx,
            cls: e.cls.to_vec(),
            word: w.to_vec(),
            fi,
            method: v.method,
        })
        .collect())
}

/// Explain every sentence with `explain(index, set)` (run in parallel) and
/// collect pairs in corpus order. Failing sentences are logged and skipped.
pub fn build_dataset_with<F>(
    corpus: &[EmbeddingSet],
    config: &DatasetConfig,
    explain: F,
) -> Result<Dataset>
where
    F: Fn(usize, &EmbeddingSet) -> Result<ImportanceVector> + Sync,
{
    let first = corpus.first().ok_or(PlexError::Empty("corpus"))?;
    if !matches!(config.method, Method::Lime | Method::Shap | Method::Exact) {
        return Err(PlexError::InvalidInput(format!(
            "dataset labels need a perturbation explainer, got {}",
            config.method
        )));
    }
    let results: Vec<Result<(ImportanceVector, Vec<TrainingPair>)>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let v = explain(i, e)?;
            if v.scores.iter().any(|s| !(-1.0..=1.0).contains(s)) {
                return Err(PlexError::InvalidRecord {
                    id: e.id.clone(),
                    message: "importance score outside [-1, 1]".into(),
                });
            }
            let pairs = pairs_for(e, &v)?;
            Ok((v, pairs))
        })
        .collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut explanations = Vec::new();
    for (e, r) in corpus.iter().zip(results) {
        match r {
            Ok((v, p)) => {
                explanations.push(v);
                pairs.extend(p);
            }
            Err(err) => {
                log::warn!("skipping sentence {}: {err}", e.id);
                skipped.push(SkippedSentence {
                    id: e.id.clone(),
                    error: err.to_string(),
                });
            }
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            config: config.clone(),
            model: first.meta.model.clone(),
            dim: first.dim(),
            sentences: corpus.len(),
            explained: corpus.len() - skipped.len(),
            pairs: pairs.len(),
            skipped,
        },
        pairs,
        explanations,
    })
}

/// Re-encode each sentence through `encoder`, explain the head's predicted
/// class, and pair the scores with the corpus embeddings.
pub fn build_dataset<E: Encoder + ?Sized>(
    corpus: &[EmbeddingSet],
    encoder: &E,
    head: &HeadParams,
    config: &DatasetConfig,
) -> Result<Dataset> {
    build_dataset_with(corpus, config, |i, e| {
        let sentence = e.sentence();
        let cfg = config.explain_config(i);
        let model = SentenceModel::new(&sentence, encoder, head)?.with_mode(cfg.mode.clone());
        attribute(config.method, &model, &cfg)?.to_importance(&e.id, model.class(), config.method)
    })
}

/// Seeded uniform permutation of `0..n`.
pub fn shuffle_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    idx
}

/// Shuffle then cut into batches; the last batch may be short.
pub fn shuffle_and_batch<T: Clone>(
    pairs: &[T],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if pairs.is_empty() {
        return Err(PlexError::Empty("pairs"));
    }
    if batch_size == 0 {
        return Err(PlexError::InvalidInput(
            "batch size must be at least 1".into(),
        ));
    }
    let order = shuffle_indices(pairs.len(), seed);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| pairs[i].clone()).collect())
        .collect())
}

pub fn write_pairs<W: Write>(w: W, pairs: &[TrainingPair]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[TrainingPair]) -> Result<()> {
    write_pairs(std::fs::File::create(path)?, pairs)
}

pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: TrainingPair =
            serde_json::from_str(&line).map_err(|e| PlexError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(PlexError::Empty("pair file"));
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    read_pairs(BufReader::new(std::fs::File::open(path)?))
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
