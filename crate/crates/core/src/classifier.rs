//! Linear softmax head over the CLS embedding, its cross-entropy trainer,
//! and masked re-classification for perturbation-based explainers.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingSet, Encoder, TokenizedSentence, MASK_TOKEN};
use crate::error::{PlexError, Result};
use crate::numerics::{argmax, matvec_into, seeded_rng, softmax, Matrix, Vector};
use crate::optim::{Optimizer, OptimizerState};
use crate::paramfile;

pub const HEAD_MAGIC: &[u8; 5] = b"HEAD1";

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    weight: Matrix,
    bias: Vector,
}

impl HeadParams {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.rows() < 2 {
            return Err(PlexError::InvalidInput(format!(
                "classifier head needs at least 2 classes, got {}",
                weight.rows()
            )));
        }
        if bias.len() != weight.rows() {
            return Err(PlexError::shape("head bias", weight.rows(), bias.len()));
        }
        Ok(HeadParams { weight, bias })
    }

    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        HeadParams::new(Matrix::zeros(classes, dim), Vector::zeros(classes))
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn logits(&self, cls: &[f64]) -> Result<Vec<f64>> {
        if cls.len() != self.dim() {
            return Err(PlexError::shape("head input", self.dim(), cls.len()));
        }
        let mut out = vec![0.0; self.classes()];
        matvec_into(&self.weight, cls, &mut out);
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o += b;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        paramfile::Writer::new(HEAD_MAGIC)
            .u32(self.classes())
            .u32(self.dim())
            .f64s(self.weight.data())
            .f64s(&self.bias)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = paramfile::Reader::open(bytes, HEAD_MAGIC)?;
        let classes = r.u32()?;
        let dim = r.u32()?;
        let weight = r.f64s(classes * dim)?;
        let bias = r.f64s(classes)?;
        r.finish()?;
        HeadParams::new(Matrix::new(classes, dim, weight)?, Vector::new(bias)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        HeadParams::from_bytes(&paramfile::read_file(path.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
    pub class: usize,
}

/// `softmax(W·cls + b)`.
pub fn predict(cls: &[f64], head: &HeadParams) -> Result<ClassDistribution> {
    let probs = softmax(&head.logits(cls)?)?.into_inner();
    let class = argmax(&probs);
    Ok(ClassDistribution { probs, class })
}

/// How masked-out words are removed before re-encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum PerturbationMode {
    /// Drop the word's tokens; survivors are re-encoded as a shorter sentence.
    #[default]
    Delete,
    /// Replace each token of the word with a fixed token.
    Substitute(String),
}

impl PerturbationMode {
    pub fn mask_token() -> Self {
        PerturbationMode::Substitute(MASK_TOKEN.to_string())
    }
}

pub fn classify_masked<E: Encoder + ?Sized>(
    sentence: &TokenizedSentence,
    keep: &[bool],
    encoder: &E,
    head: &HeadParams,
) -> Result<ClassDistribution> {
    classify_masked_with(sentence, keep, encoder, head, &PerturbationMode::Delete)
}

/// Re-classify the sentence with some words removed. With every word removed
/// the encoder sees a CLS-only sequence.
pub fn classify_masked_with<E: Encoder + ?Sized>(
    sentence: &TokenizedSentence,
    keep: &[bool],
    encoder: &E,
    head: &HeadParams,
    mode: &PerturbationMode,
) -> Result<ClassDistribution> {
    let perturbed = match mode {
        PerturbationMode::Delete => sentence.retain_words(keep)?,
        PerturbationMode::Substitute(tok) => sentence.substitute_words(keep, tok)?,
    };
    let e = encoder.encode(&perturbed)?;
    predict(&e.cls, head)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Stop once the epoch's mean loss falls below this.
    pub loss_threshold: f64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 300,
            batch: 32,
            optimizer: Optimizer::adam(1e-3),
            seed: 0,
            loss_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrainReport {
    pub params: HeadParams,
    /// Mean cross-entropy per epoch, measured during the epoch.
    pub losses: Vec<f64>,
}

/// Mean cross-entropy over a batch and its gradient w.r.t. (weight, bias).
pub fn cross_entropy_grad(
    head: &HeadParams,
    batch: &[(&[f64], usize)],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (classes, dim) = (head.classes(), head.dim());
    let mut gw = vec![0.0; classes * dim];
    let mut gb = vec![0.0; classes];
    let mut loss = 0.0;
    for &(x, label) in batch {
        let dist = predict(x, head)?;
        loss -= dist.probs[label].max(f64::MIN_POSITIVE).ln();
        for c in 0..classes {
            let delta = dist.probs[c] - if c == label { 1.0 } else { 0.0 };
            gb[c] += delta;
            for (g, xv) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *g += delta * xv;
            }
        }
    }
    let n = batch.len() as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    gb.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, gw, gb))
}

/// Mini-batch cross-entropy training from a zero initialization.
///
/// Examples are put into a canonical order before the seeded shuffle, so the
/// result does not depend on the order they were passed in.
pub fn train_head(
    examples: &[(EmbeddingSet, usize)],
    classes: usize,
    config: &HeadTrainConfig,
) -> Result<HeadTrainReport> {
    let first = examples
        .first()
        .ok_or(PlexError::Empty("head training set"))?;
    if config.batch == 0 {
        return Err(PlexError::InvalidInput(
            "batch size must be at least 1".into(),
        ));
    }
    let dim = first.0.dim();
    let mut seen = vec![false; classes];
    for (e, label) in examples {
        if e.cls.len() != dim {
            return Err(PlexError::shape("head training cls", dim, e.cls.len()));
        }
        if *label >= classes {
            return Err(PlexError::InvalidInput(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        seen[*label] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(PlexError::InvalidInput(format!(
            "class {missing} has no training examples"
        )));
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, la) = &examples[a];
        let (eb, lb) = &examples[b];
        ea.id.cmp(&eb.id).then(la.cmp(lb)).then_with(|| {
            let ka = ea.cls.iter().map(|x| x.to_bits());
            let kb = eb.cls.iter().map(|x| x.to_bits());
            ka.cmp(kb)
        })
    });

    let mut head = HeadParams::zeros(classes, dim)?;
    let mut opt = OptimizerState::new(config.optimizer, &[classes * dim, classes]);
    let mut rng = seeded_rng(config.seed);
    let mut losses = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (examples[i].0.cls.as_slice(), examples[i].1))
                .collect();
            let (loss, gw, gb) = cross_entropy_grad(&head, &batch)?;
            if !loss.is_finite() {
                return Err(PlexError::Divergence { epoch });
            }
            total += loss * chunk.len() as f64;
            let HeadParams { weight, bias } = &mut head;
            opt.apply(&mut [weight.data_mut(), &mut bias[..]], &[&gw, &gb]);
        }
        let mean = total / examples.len() as f64;
        losses.push(mean);
        if mean < config.loss_threshold {
            break;
        }
    }
    if head
        .weight
        .data()
        .iter()
        .chain(head.bias.iter())
        .any(|x| !x.is_finite())
    {
        return Err(PlexError::Divergence {
            epoch: losses.len(),
        });
    }
    Ok(HeadTrainReport {
        params: head,
        losses,
    })
}

/// Fraction of examples whose predicted class equals the given label.
pub fn accuracy(examples: &[(EmbeddingSet, usize)], head: &HeadParams) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (e, label) in examples {
        if predict(&e.cls, head)?.class == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{tokenize, EmbeddingMeta, ToyEncoder, ToyEncoderConfig};
    use crate::numerics::mix_seed;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn set(id: &str, cls: Vec<f64>) -> EmbeddingSet {
        EmbeddingSet {
            id: id.into(),
            tokens: vec!["w".into()],
            word_map: vec![vec![0]],
            label: None,
            words: vec![Vector::new(cls.clone()).unwrap()],
            cls: Vector::new(cls).unwrap(),
            layers: BTreeMap::new(),
            probs: None,
            meta: EmbeddingMeta {
                dim: 0,
                model: "test".into(),
            },
        }
        .with_dim()
    }

    trait WithDim {
        fn with_dim(self) -> Self;
    }
    impl WithDim for EmbeddingSet {
        fn with_dim(mut self) -> Self {
            self.meta.dim = self.cls.len();
            self
        }
    }

    fn clusters(n: usize, seed: u64) -> Vec<(EmbeddingSet, usize)> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let center = if label == 0 { -2.0 } else { 2.0 };
                let cls = (0..4)
                    .map(|_| center + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                (set(&format!("s{i}"), cls), label)
            })
            .collect()
    }

    #[test]
    fn predict_cases() {
        let head = HeadParams::zeros(2, 3).unwrap();
        let d = predict(&[1.0, 2.0, 3.0], &head).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);

        let w = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let head = HeadParams::new(w, Vector::new(vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        assert_eq!(predict(&[0.0, 5.0, 0.0], &head).unwrap().class, 1);

        let shifted = HeadParams::new(
            head.weight.clone(),
            Vector::new(vec![5.1, 5.2, 5.3]).unwrap(),
        )
        .unwrap();
        let a = predict(&[0.3, -0.2, 0.9], &head).unwrap();
        let b = predict(&[0.3, -0.2, 0.9], &shifted).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(predict(&[1.0], &head).is_err());
        assert!(HeadParams::zeros(1, 3).is_err());
    }

    #[test]
    fn separable_clusters_reach_full_accuracy() {
        let data = clusters(80, 3);
        let cfg = HeadTrainConfig {
            optimizer: Optimizer::adam(0.05),
            epochs: 100,
            ..Default::default()
        };
        let report = train_head(&data, 2, &cfg).unwrap();
        assert_eq!(accuracy(&data, &report.params).unwrap(), 1.0);
    }

    #[test]
    fn single_example_loss_decreases() {
        let data = vec![
            (set("only", vec![0.5, -1.0, 2.0]), 1),
            (set("other", vec![-0.5, 1.0, -2.0]), 0),
        ];
        let cfg = HeadTrainConfig {
            optimizer: Optimizer::adam(0.01),
            epochs: 400,
            loss_threshold: 0.0,
            ..Default::default()
        };
        let losses = train_head(&data, 2, &cfg).unwrap().losses;
        for w in losses.windows(6) {
            assert!(w[5] < w[0], "loss did not fall within a 5-epoch window");
        }
        assert!(*losses.last().unwrap() < 0.05);
    }

    #[test]
    fn order_independent_given_seed() {
        let data = clusters(50, 9);
        let mut reversed = data.clone();
        reversed.reverse();
        let cfg = HeadTrainConfig {
            epochs: 20,
            seed: 4,
            ..Default::default()
        };
        let a = train_head(&data, 2, &cfg).unwrap().params;
        let b = train_head(&reversed, 2, &cfg).unwrap().params;
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn missing_class_rejected() {
        let data = vec![(set("a", vec![1.0]), 0)];
        assert!(matches!(
            train_head(&data, 2, &HeadTrainConfig::default()),
            Err(PlexError::InvalidInput(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(mix_seed(77, 1));
        let (classes, dim) = (3, 5);
        let w = Matrix::random_normal(classes, dim, 1.0, &mut rng);
        let b = Vector::new((0..classes).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let head = HeadParams::new(w, b).unwrap();
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), i % classes))
            .collect();
        let (_, gw, gb) = cross_entropy_grad(&head, &batch).unwrap();
        let h = 1e-5;
        for idx in 0..classes * dim {
            let mut plus = head.clone();
            plus.weight.data_mut()[idx] += h;
            let mut minus = head.clone();
            minus.weight.data_mut()[idx] -= h;
            let fd = (cross_entropy_grad(&plus, &batch).unwrap().0
                - cross_entropy_grad(&minus, &batch).unwrap().0)
                / (2.0 * h);
            assert!((fd - gw[idx]).abs() < 1e-8, "w[{idx}]: {fd} vs {}", gw[idx]);
        }
        for c in 0..classes {
            let mut plus = head.clone();
            plus.bias[c] += h;
            let mut minus = head.clone();
            minus.bias[c] -= h;
            let fd = (cross_entropy_grad(&plus, &batch).unwrap().0
                - cross_entropy_grad(&minus, &batch).unwrap().0)
                / (2.0 * h);
            assert!((fd - gb[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn params_round_trip_and_errors() {
        let mut rng = seeded_rng(2);
        let head = HeadParams::new(
            Matrix::random_normal(3, 4, 1.0, &mut rng),
            Vector::new(vec![0.1, -0.2, 0.3]).unwrap(),
        )
        .unwrap();
        let bytes = head.to_bytes();
        assert_eq!(HeadParams::from_bytes(&bytes).unwrap(), head);
        assert!(matches!(
            HeadParams::from_bytes(&bytes[..bytes.len() - 3]),
            Err(PlexError::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(
            HeadParams::from_bytes(&v2),
            Err(PlexError::VersionMismatch { .. })
        ));
        let mut junk = bytes;
        junk[0] = b'X';
        assert!(matches!(
            HeadParams::from_bytes(&junk),
            Err(PlexError::Format(_))
        ));
    }

    #[test]
    fn masked_classification_contracts() {
        let enc = ToyEncoder::new(ToyEncoderConfig::with_seed(5)).unwrap();
        let mut rng = seeded_rng(8);
        let head = HeadParams::new(
            Matrix::random_normal(2, 32, 1.0, &mut rng),
            Vector::zeros(2),
        )
        .unwrap();
        let s = tokenize("the storm was frightening tonight").unwrap();
        let full = classify_masked(&s, &[true; 5], &enc, &head).unwrap();
        let direct = predict(&enc.encode(&s).unwrap().cls, &head).unwrap();
        assert_eq!(full, direct);
        let empty = classify_masked(&s, &[false; 5], &enc, &head).unwrap();
        assert!((empty.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(classify_masked(&s, &[true; 4], &enc, &head).is_err());
        let sub = classify_masked_with(
            &s,
            &[true, false, true, true, true],
            &enc,
            &head,
            &PerturbationMode::mask_token(),
        )
        .unwrap();
        let del = classify_masked(&s, &[true, false, true, true, true], &enc, &head).unwrap();
        assert_ne!(sub.probs, del.probs);
    }

    #[test]
    fn masking_is_position_sensitive() {
        // head reads the direction of one word's final-layer contribution
        let enc = ToyEncoder::new(ToyEncoderConfig::with_seed(5)).unwrap();
        let s = tokenize("alpha beta gamma").unwrap();
        let full = enc.encode(&s).unwrap();
        let without_beta = enc
            .encode(&s.retain_words(&[true, false, true]).unwrap())
            .unwrap();
        let dir: Vec<f64> = full
            .cls
            .iter()
            .zip(without_beta.cls.iter())
            .map(|(a, b)| a - b)
            .collect();
        let head = HeadParams::new(
            Matrix::from_rows(&[dir.iter().map(|x| -x).collect(), dir]).unwrap(),
            Vector::zeros(2),
        )
        .unwrap();
        let drop_beta = classify_masked(&s, &[true, false, true], &enc, &head).unwrap();
        let drop_alpha = classify_masked(&s, &[false, true, true], &enc, &head).unwrap();
        assert_ne!(drop_beta.probs, drop_alpha.probs);
    }
}
