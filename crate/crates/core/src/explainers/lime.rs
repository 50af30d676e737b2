use rand::seq::index::sample;
use rand::Rng;

use super::{eval_all, mask_from_bits, single_word, Attribution, MaskedModel};
use crate::error::{PlexError, Result};
use crate::numerics::{seeded_rng, solve_spd};

#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Kernel width; `None` means `0.25 * sqrt(M)`.
    pub kernel_width: Option<f64>,
    /// Ridge penalty on the coefficients (the intercept is not penalized).
    pub ridge: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            seed: 0,
            kernel_width: None,
            ridge: 1e-3,
        }
    }
}

impl LimeConfig {
    /// Unpenalized fit, for oracle comparisons.
    pub fn oracle(n_samples: usize) -> Self {
        LimeConfig {
            n_samples,
            ridge: 0.0,
            ..Default::default()
        }
    }

    pub(crate) fn exhaustive(&self, m: usize) -> bool {
        m < usize::BITS as usize - 1 && (1usize << m) <= self.n_samples
    }
}

/// Keep-masks to score. Exhaustive (every non-empty mask once) when `2^M`
/// fits the budget, otherwise the full mask followed by `n_samples - 1`
/// draws that each remove between 1 and `M - 1` words.
pub(crate) fn lime_masks(m: usize, config: &LimeConfig) -> Vec<Vec<bool>> {
    if config.exhaustive(m) {
        return (1..1usize << m)
            .rev()
            .map(|bits| mask_from_bits(bits, m))
            .collect();
    }
    let mut rng = seeded_rng(config.seed);
    let mut masks = Vec::with_capacity(config.n_samples);
    masks.push(vec![true; m]);
    while masks.len() < config.n_samples {
        let remove = rng.random_range(1..m);
        let mut mask = vec![true; m];
        for i in sample(&mut rng, m, remove) {
            mask[i] = false;
        }
        masks.push(mask);
    }
    masks
}

/// Cosine distance between a keep-mask and the all-ones mask.
fn mask_distance(mask: &[bool]) -> f64 {
    let kept = mask.iter().filter(|&&b| b).count() as f64;
    1.0 - (kept / mask.len() as f64).sqrt()
}

/// Weighted ridge regression of the model output on the mask bits.
pub fn lime_attribution<M: MaskedModel + ?Sized>(
    model: &M,
    config: &LimeConfig,
) -> Result<Attribution> {
    let m = model.n_words();
    if m == 0 {
        return Err(PlexError::Empty("sentence"));
    }
    if m == 1 {
        return single_word(model);
    }
    if config.n_samples < m + 2 {
        return Err(PlexError::InvalidInput(format!(
            "lime needs at least {} samples for {m} words, got {}",
            m + 2,
            config.n_samples
        )));
    }
    if !(config.ridge >= 0.0) {
        return Err(PlexError::InvalidInput(
            "ridge penalty must be non-negative".into(),
        ));
    }
    let masks = lime_masks(m, config);
    if masks.windows(2).all(|w| w[0] == w[1]) {
        return Err(PlexError::DegenerateDesign(
            "all perturbation masks are identical".into(),
        ));
    }
    let values = eval_all(model, &masks)?;
    let width = config.kernel_width.unwrap_or(0.25 * (m as f64).sqrt());
    let weights: Vec<f64> = masks
        .iter()
        .map(|mask| {
            let d = mask_distance(mask);
            (-(d * d) / (width * width)).exp()
        })
        .collect();

    let total_w: f64 = weights.iter().sum();
    let mut x_mean = vec![0.0; m];
    let mut y_mean = 0.0;
    for ((mask, &y), &w) in masks.iter().zip(&values).zip(&weights) {
        for (xm, &bit) in x_mean.iter_mut().zip(mask) {
            if bit {
                *xm += w;
            }
        }
        y_mean += w * y;
    }
    x_mean.iter_mut().for_each(|x| *x /= total_w);
    y_mean /= total_w;

    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut centered = vec![0.0; m];
    for ((mask, &y), &w) in masks.iter().zip(&values).zip(&weights) {
        for (c, (&bit, &mean)) in centered.iter_mut().zip(mask.iter().zip(&x_mean)) {
            *c = if bit { 1.0 } else { 0.0 } - mean;
        }
        let yc = y - y_mean;
        for i in 0..m {
            let wi = w * centered[i];
            rhs[i] += wi * yc;
            for j in 0..=i {
                gram[i * m + j] += wi * centered[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[j * m + i] = gram[i * m + j];
        }
        gram[i * m + i] += config.ridge;
    }
    let coef = solve_spd(&gram, &rhs, m).ok_or_else(|| {
        PlexError::DegenerateDesign("surrogate normal equations are singular".into())
    })?;
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, x)| c * x).sum::<f64>();
    Ok(Attribution {
        raw: coef,
        base_value: intercept,
        full_value: model.full_value()?,
        evaluations: masks.len(),
    })
}
