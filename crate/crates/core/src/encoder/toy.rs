use std::collections::BTreeMap;

use rand::Rng;

use super::{EmbeddingMeta, EmbeddingSet, Encoder, LayerEmbedding, TokenizedSentence};
use crate::error::{PlexError, Result};
use crate::numerics::{dot, matvec_into, mix_seed, seeded_rng, Matrix, Vector};

/// Token used by the substitution perturbation mode.
pub const MASK_TOKEN: &str = "[mask]";

const LN_EPS: f64 = 1e-5;
const POSITION_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEncoderConfig {
    pub seed: u64,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            seed: 0,
            dim: 32,
            heads: 2,
            layers: 2,
            ff: 64,
        }
    }
}

impl ToyEncoderConfig {
    pub fn with_seed(seed: u64) -> Self {
        ToyEncoderConfig {
            seed,
            ..Default::default()
        }
    }

    /// `toy:seed=7,dim=32,heads=2,layers=2,ff=64`
    pub fn model_tag(&self) -> String {
        format!(
            "toy:seed={},dim={},heads={},layers={},ff={}",
            self.seed, self.dim, self.heads, self.layers, self.ff
        )
    }

    pub fn from_model_tag(tag: &str) -> Option<Self> {
        let body = tag.strip_prefix("toy:")?;
        let mut cfg = ToyEncoderConfig::default();
        for kv in body.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=')?;
            match k {
                "seed" => cfg.seed = v.parse().ok()?,
                "dim" => cfg.dim = v.parse().ok()?,
                "heads" => cfg.heads = v.parse().ok()?,
                "layers" => cfg.layers = v.parse().ok()?,
                "ff" => cfg.ff = v.parse().ok()?,
                _ => return None,
            }
        }
        Some(cfg)
    }
}

#[derive(Debug, Clone)]
struct ToyLayer {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    ff_in: Matrix,
    ff_in_bias: Vec<f64>,
    ff_out: Matrix,
    ff_out_bias: Vec<f64>,
}

/// Small post-norm transformer encoder with seeded random weights.
///
/// Token vectors come from hashing the token string with a per-seed salt, so
/// the vocabulary is open. Position 0 is a seeded CLS vector.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: ToyEncoderConfig,
    salt: u64,
    cls: Vec<f64>,
    layers: Vec<ToyLayer>,
}

impl ToyEncoder {
    pub fn new(config: ToyEncoderConfig) -> Result<Self> {
        if config.dim == 0 || config.heads == 0 || config.dim % config.heads != 0 {
            return Err(PlexError::InvalidInput(format!(
                "toy encoder: heads ({}) must divide dim ({})",
                config.heads, config.dim
            )));
        }
        if config.layers == 0 || config.ff == 0 {
            return Err(PlexError::InvalidInput(
                "toy encoder: layers and ff width must be at least 1".into(),
            ));
        }
        let d = config.dim;
        let mut rng = seeded_rng(mix_seed(config.seed, 0));
        let cls = (0..d)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let proj_std = 1.0 / (d as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| ToyLayer {
                wq: Matrix::random_normal(d, d, proj_std, &mut rng),
                wk: Matrix::random_normal(d, d, proj_std, &mut rng),
                wv: Matrix::random_normal(d, d, proj_std, &mut rng),
                wo: Matrix::random_normal(d, d, proj_std, &mut rng),
                ff_in: Matrix::random_normal(config.ff, d, proj_std, &mut rng),
                ff_in_bias: vec![0.0; config.ff],
                ff_out: Matrix::random_normal(
                    d,
                    config.ff,
                    1.0 / (config.ff as f64).sqrt(),
                    &mut rng,
                ),
                ff_out_bias: vec![0.0; d],
            })
            .collect();
        Ok(ToyEncoder {
            config,
            salt: mix_seed(config.seed, 1),
            cls,
            layers,
        })
    }

    pub fn config(&self) -> &ToyEncoderConfig {
        &self.config
    }

    /// Input vector for a token: hashed identity plus a sinusoidal position.
    fn token_vector(&self, token: &str, position: usize, out: &mut [f64]) {
        let mut rng = seeded_rng(mix_seed(self.salt, fnv1a(token.as_bytes())));
        for v in out.iter_mut() {
            *v = rng.sample(rand_distr::StandardNormal);
        }
        add_position(position, out);
    }

    /// Estimated multiply-adds for one pass over `n_tokens` tokens (CLS added).
    pub fn mul_adds(&self, n_tokens: usize) -> u64 {
        let n = (n_tokens + 1) as u64;
        let d = self.config.dim as u64;
        let ff = self.config.ff as u64;
        let per_layer = 4 * n * d * d + 2 * n * n * d + 2 * n * d * ff;
        per_layer * self.config.layers as u64
    }

    fn run(&self, sentence: &TokenizedSentence) -> Vec<Vec<f64>> {
        let d = self.config.dim;
        let n = sentence.tokens.len() + 1;
        let mut x = vec![0.0; n * d];
        x[..d].copy_from_slice(&self.cls);
        add_position(0, &mut x[..d]);
        for (i, tok) in sentence.tokens.iter().enumerate() {
            self.token_vector(tok, i + 1, &mut x[(i + 1) * d..(i + 2) * d]);
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        let mut ctx = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut hidden = vec![0.0; self.config.ff];
        let mut scores = vec![0.0; n];
        for layer in &self.layers {
            for i in 0..n {
                let xi = &x[i * d..(i + 1) * d];
                matvec_into(&layer.wq, xi, &mut q[i * d..(i + 1) * d]);
                matvec_into(&layer.wk, xi, &mut k[i * d..(i + 1) * d]);
                matvec_into(&layer.wv, xi, &mut v[i * d..(i + 1) * d]);
            }
            let mut next = x.clone();
            for i in 0..n {
                for h in 0..heads {
                    let span = h * dh..(h + 1) * dh;
                    let qi = &q[i * d + span.start..i * d + span.end];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(qi, &k[j * d + span.start..j * d + span.end]) * scale;
                    }
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let c = &mut ctx[span.clone()];
                    c.fill(0.0);
                    for (j, s) in scores.iter().enumerate() {
                        let w = s / total;
                        for (cv, vv) in c.iter_mut().zip(&v[j * d + span.start..j * d + span.end]) {
                            *cv += w * vv;
                        }
                    }
                }
                matvec_into(&layer.wo, &ctx, &mut proj);
                let row = &mut next[i * d..(i + 1) * d];
                for (r, p) in row.iter_mut().zip(&proj) {
                    *r += p;
                }
                layer_norm(row);
                matvec_into(&layer.ff_in, row, &mut hidden);
                for (hv, b) in hidden.iter_mut().zip(&layer.ff_in_bias) {
                    *hv = (*hv + b).max(0.0);
                }
                matvec_into(&layer.ff_out, &hidden, &mut proj);
                for ((r, p), b) in row.iter_mut().zip(&proj).zip(&layer.ff_out_bias) {
                    *r += p + b;
                }
                layer_norm(row);
            }
            x = next;
            outputs.push(x.clone());
        }
        outputs
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn mul_adds_per_pass(&self, tokens: usize) -> Option<u64> {
        Some(self.mul_adds(tokens))
    }

    fn encode(&self, sentence: &TokenizedSentence) -> Result<EmbeddingSet> {
        let d = self.config.dim;
        let outputs = self.run(sentence);
        let split = |states: &[f64]| -> LayerEmbedding {
            let cls = Vector::from_raw(states[..d].to_vec());
            let tokens: Vec<&[f64]> = states[d..].chunks_exact(d).collect();
            let words = sentence
                .word_map
                .iter()
                .map(|group| mean_of(group.iter().map(|&t| tokens[t]), d))
                .collect();
            LayerEmbedding { cls, words }
        };
        let layers: BTreeMap<usize, LayerEmbedding> = outputs
            .iter()
            .enumerate()
            .map(|(l, s)| (l, split(s)))
            .collect();
        let last = layers[&self.config.layers].clone();
        Ok(EmbeddingSet {
            id: sentence.id.clone(),
            tokens: sentence.tokens.clone(),
            word_map: sentence.word_map.clone(),
            label: sentence.label,
            cls: last.cls,
            words: last.words,
            layers,
            probs: None,
            meta: EmbeddingMeta {
                dim: d,
                model: self.config.model_tag(),
            },
        })
    }
}

pub(crate) fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, d: usize) -> Vector {
    let mut acc = vec![0.0; d];
    let mut count = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count > 1 {
        let inv = count as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
    }
    Vector::from_raw(acc)
}

fn add_position(position: usize, out: &mut [f64]) {
    let d = out.len() as f64;
    for (i, v) in out.iter_mut().enumerate() {
        let pair = (i / 2) as f64;
        let angle = position as f64 / 10_000f64.powf(2.0 * pair / d);
        *v += POSITION_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

fn layer_norm(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tokenize;

    fn encoder() -> ToyEncoder {
        ToyEncoder::new(ToyEncoderConfig::with_seed(11)).unwrap()
    }

    #[test]
    fn deterministic() {
        let s = tokenize("the quick brown fox").unwrap();
        let a = encoder().encode(&s).unwrap();
        let b = encoder().encode(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_token_shapes() {
        let e = encoder().encode(&tokenize("hello").unwrap()).unwrap();
        assert_eq!(e.cls.len(), 32);
        assert_eq!(e.words.len(), 1);
        assert_eq!(e.words[0].len(), 32);
        assert_eq!(e.layers.len(), 3);
        assert!(e.layers.values().all(|l| l.cls.len() == 32));
    }

    #[test]
    fn contextual() {
        let enc = encoder();
        let a = enc.encode(&tokenize("the dark house").unwrap()).unwrap();
        let b = enc.encode(&tokenize("the bright house").unwrap()).unwrap();
        assert_ne!(a.words[2], b.words[2]);
        assert_ne!(a.cls, b.cls);
        // input layer is context-free apart from position
        assert_eq!(a.layers[&0].words[2], b.layers[&0].words[2]);
    }

    #[test]
    fn config_validation_and_tags() {
        let bad = ToyEncoderConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(ToyEncoder::new(bad).is_err());
        let cfg = ToyEncoderConfig {
            seed: 9,
            dim: 16,
            heads: 4,
            layers: 3,
            ff: 8,
        };
        assert_eq!(
            ToyEncoderConfig::from_model_tag(&cfg.model_tag()),
            Some(cfg)
        );
        assert_eq!(ToyEncoderConfig::from_model_tag("bert-base"), None);
    }

    #[test]
    fn single_subword_mean_is_identity() {
        let v = [0.1, -2.5, 3.25];
        let m = mean_of(std::iter::once(&v[..]), 3);
        assert_eq!(m.as_slice(), &v);
    }
}
