//! Perturbation-based word attribution: a LIME-style local surrogate,
//! KernelSHAP, and exact Shapley values by coalition enumeration.
//!
//! All three operate on a [`MaskedModel`], i.e. any function from a word keep-mask
//! to the target-class probability. [`SentenceModel`] wires that to an
//! encoder plus classifier head; tests plug in closed-form models.

mod lime;
mod recorded;
mod shap;

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_masked_with, predict, HeadParams, PerturbationMode};
use crate::encoder::{Encoder, TokenizedSentence};
use crate::error::{PlexError, Result};

pub use lime::{lime_attribution, LimeConfig};
pub use recorded::{MaskedPrediction, RecordedModel, RecordedPredictions};
pub use shap::{
    exact_shapley_attribution, shap_attribution, shapley_kernel_weight, ShapConfig,
    EXACT_MAX_WORDS, EXHAUSTIVE_MAX_WORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
    Exact,
    Plex,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lime => "lime",
            Method::Shap => "shap",
            Method::Exact => "exact",
            Method::Plex => "plex",
        })
    }
}

impl FromStr for Method {
    type Err = PlexError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lime" => Ok(Method::Lime),
            "shap" => Ok(Method::Shap),
            "exact" => Ok(Method::Exact),
            "plex" => Ok(Method::Plex),
            other => Err(PlexError::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Per-word importance toward one class, aligned with the sentence's words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub id: String,
    pub method: Method,
    pub class: usize,
    pub scores: Vec<f64>,
}

impl ImportanceVector {
    pub fn word_count(&self) -> usize {
        self.scores.len()
    }
}

pub fn write_importances<W: Write>(w: W, vectors: &[ImportanceVector]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for v in vectors {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_importances<R: BufRead>(r: R) -> Result<Vec<ImportanceVector>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: ImportanceVector =
            serde_json::from_str(&line).map_err(|e| PlexError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        if v.scores.iter().any(|s| !s.is_finite()) {
            return Err(PlexError::MalformedRecord {
                line: i + 1,
                message: "non-finite score".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn load_importances(path: impl AsRef<Path>) -> Result<Vec<ImportanceVector>> {
    read_importances(BufReader::new(std::fs::File::open(path)?))
}

/// Scale so the largest magnitude is 1. All-zero input passes through.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(PlexError::Empty("scores to normalize"));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(PlexError::NonFinite("scores to normalize"));
    }
    let max = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(raw.to_vec());
    }
    Ok(raw.iter().map(|x| x / max).collect())
}

/// Word indices ordered by descending `|score|`; ties keep the lower index first.
pub fn rank_by_magnitude(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    idx
}

/// A black box scored on subsets of a sentence's words.
pub trait MaskedModel: Sync {
    fn n_words(&self) -> usize;

    /// Target-class probability with only the `keep` words present.
    fn eval(&self, keep: &[bool]) -> Result<f64>;

    /// Value on the full sentence. Implementations that already know it
    /// (from the prediction pass) should not re-evaluate.
    fn full_value(&self) -> Result<f64> {
        self.eval(&vec![true; self.n_words()])
    }
}

/// Closure-backed model, mainly for synthetic tests.
pub struct FnModel<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[bool]) -> f64 + Sync> FnModel<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnModel { n, f }
    }
}

impl<F: Fn(&[bool]) -> f64 + Sync> MaskedModel for FnModel<F> {
    fn n_words(&self) -> usize {
        self.n
    }
    fn eval(&self, keep: &[bool]) -> Result<f64> {
        if keep.len() != self.n {
            return Err(PlexError::shape("keep mask", self.n, keep.len()));
        }
        Ok((self.f)(keep))
    }
}

/// Encoder + head, explained with respect to the class predicted on the
/// unperturbed sentence. Construction performs that one prediction pass.
pub struct SentenceModel<'a, E: ?Sized> {
    sentence: &'a TokenizedSentence,
    encoder: &'a E,
    head: &'a HeadParams,
    mode: PerturbationMode,
    class: usize,
    full: f64,
}

impl<'a, E: Encoder + ?Sized> SentenceModel<'a, E> {
    pub fn new(
        sentence: &'a TokenizedSentence,
        encoder: &'a E,
        head: &'a HeadParams,
    ) -> Result<Self> {
        let e = encoder.encode(sentence)?;
        let dist = predict(&e.cls, head)?;
        Ok(SentenceModel {
            sentence,
            encoder,
            head,
            mode: PerturbationMode::Delete,
            class: dist.class,
            full: dist.probs[dist.class],
        })
    }

    pub fn with_mode(mut self, mode: PerturbationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn class(&self) -> usize {
        self.class
    }
}

impl<E: Encoder + ?Sized> MaskedModel for SentenceModel<'_, E> {
    fn n_words(&self) -> usize {
        self.sentence.word_count()
    }

    fn eval(&self, keep: &[bool]) -> Result<f64> {
        Ok(
            classify_masked_with(self.sentence, keep, self.encoder, self.head, &self.mode)?.probs
                [self.class],
        )
    }

    fn full_value(&self) -> Result<f64> {
        Ok(self.full)
    }
}

/// Raw (unnormalized) attribution plus the values it was fitted against.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub raw: Vec<f64>,
    /// `f(∅)` for Shapley methods, the surrogate intercept for LIME.
    pub base_value: f64,
    pub full_value: f64,
    /// Masked evaluations performed (the full-sentence value excluded).
    pub evaluations: usize,
}

impl Attribution {
    pub fn to_importance(
        &self,
        id: &str,
        class: usize,
        method: Method,
    ) -> Result<ImportanceVector> {
        Ok(ImportanceVector {
            id: id.to_string(),
            method,
            class,
            scores: normalize_scores(&self.raw)?,
        })
    }
}

pub(crate) fn eval_all<M: MaskedModel + ?Sized>(
    model: &M,
    masks: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let values = masks
        .par_iter()
        .map(|m| model.eval(m))
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PlexError::NonFinite("model output"));
    }
    Ok(values)
}

pub(crate) fn mask_from_bits(bits: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

/// Single-word sentences skip fitting: all attribution goes to the one word.
pub(crate) fn single_word<M: MaskedModel + ?Sized>(model: &M) -> Result<Attribution> {
    let full = model.full_value()?;
    let empty = model.eval(&[false])?;
    Ok(Attribution {
        raw: vec![full - empty],
        base_value: empty,
        full_value: full,
        evaluations: 1,
    })
}

pub fn lime_explain<E: Encoder + ?Sized>(
    sentence: &TokenizedSentence,
    encoder: &E,
    head: &HeadParams,
    config: &LimeConfig,
) -> Result<ImportanceVector> {
    explain_with(
        Method::Lime,
        sentence,
        encoder,
        head,
        &ExplainConfig::lime(config.clone()),
    )
}

pub fn shap_explain<E: Encoder + ?Sized>(
    sentence: &TokenizedSentence,
    encoder: &E,
    head: &HeadParams,
    config: &ShapConfig,
) -> Result<ImportanceVector> {
    explain_with(
        Method::Shap,
        sentence,
        encoder,
        head,
        &ExplainConfig::shap(config.clone()),
    )
}

pub fn exact_shapley<E: Encoder + ?Sized>(
    sentence: &TokenizedSentence,
    encoder: &E,
    head: &HeadParams,
) -> Result<ImportanceVector> {
    explain_with(
        Method::Exact,
        sentence,
        encoder,
        head,
        &ExplainConfig::default(),
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplainConfig {
    pub lime: LimeConfig,
    pub shap: ShapConfig,
    pub mode: PerturbationMode,
}

impl ExplainConfig {
    pub fn lime(lime: LimeConfig) -> Self {
        ExplainConfig {
            lime,
            ..Default::default()
        }
    }

    pub fn shap(shap: ShapConfig) -> Self {
        ExplainConfig {
            shap,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.lime.seed = seed;
        self.shap.seed = seed;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.lime.n_samples = n;
        self.shap.n_samples = n;
        self
    }
}

/// Explain any [`MaskedModel`] with a perturbation method.
pub fn attribute<M: MaskedModel + ?Sized>(
    method: Method,
    model: &M,
    config: &ExplainConfig,
) -> Result<Attribution> {
    match method {
        Method::Lime => lime_attribution(model, &config.lime),
        Method::Shap => shap_attribution(model, &config.shap),
        Method::Exact => exact_shapley_attribution(model),
        Method::Plex => Err(PlexError::InvalidInput(
            "plex is not a perturbation method; use plex::plex_explain".into(),
        )),
    }
}

/// Encode, predict, and explain the predicted class with a perturbation method.
pub fn explain_with<E: Encoder + ?Sized>(
    method: Method,
    sentence: &TokenizedSentence,
    encoder: &E,
    head: &HeadParams,
    config: &ExplainConfig,
) -> Result<ImportanceVector> {
    let model = SentenceModel::new(sentence, encoder, head)?.with_mode(config.mode.clone());
    attribute(method, &model, config)?.to_importance(&sentence.id, model.class(), method)
}
