use rand::seq::index::sample;
use rand::Rng;

use super::{eval_all, mask_from_bits, single_word, Attribution, MaskedModel};
use crate::error::{PlexError, Result};
use crate::numerics::{seeded_rng, solve_spd};

/// Largest sentence `exact_shapley` will enumerate.
pub const EXACT_MAX_WORDS: usize = 12;
/// Largest sentence for which exhaustive KernelSHAP may be forced.
pub const EXHAUSTIVE_MAX_WORDS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Enumerate every coalition regardless of the sample budget.
    pub force_exhaustive: bool,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            n_samples: 1000,
            seed: 0,
            force_exhaustive: false,
        }
    }
}

impl ShapConfig {
    pub fn exhaustive() -> Self {
        ShapConfig {
            force_exhaustive: true,
            ..Default::default()
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `(M-1) / (C(M,s) * s * (M-s))` for a coalition of size
/// `s`, `0 < s < M`.
pub fn shapley_kernel_weight(m: usize, s: usize) -> f64 {
    assert!(s > 0 && s < m, "kernel weight is defined for 0 < s < M");
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

/// KernelSHAP: weighted least squares over coalitions with the efficiency
/// constraint `Σφ = f(x) - f(∅)` enforced exactly by eliminating the last
/// word's coefficient.
///
/// Every proper coalition is enumerated with its exact kernel weight when
/// `2^M <= n_samples` (or when forced); otherwise `n_samples - 1` coalitions
/// are drawn with size probability proportional to the kernel mass of that
/// size and weighted uniformly. The empty coalition is always evaluated.
pub fn shap_attribution<M: MaskedModel + ?Sized>(
    model: &M,
    config: &ShapConfig,
) -> Result<Attribution> {
    let m = model.n_words();
    if m == 0 {
        return Err(PlexError::Empty("sentence"));
    }
    if config.force_exhaustive && m > EXHAUSTIVE_MAX_WORDS {
        return Err(PlexError::Budget {
            what: "exhaustive KernelSHAP",
            words: m,
            limit: EXHAUSTIVE_MAX_WORDS,
        });
    }
    if m == 1 {
        return single_word(model);
    }
    let exhaustive = config.force_exhaustive
        || (m < usize::BITS as usize - 1 && (1usize << m) <= config.n_samples);
    if !exhaustive && config.n_samples < 2 * m {
        return Err(PlexError::InvalidInput(format!(
            "shap needs at least {} samples for {m} words, got {}",
            2 * m,
            config.n_samples
        )));
    }

    let (coalitions, weights) = if exhaustive {
        let masks: Vec<Vec<bool>> = (1..(1usize << m) - 1)
            .map(|bits| mask_from_bits(bits, m))
            .collect();
        let weights = masks
            .iter()
            .map(|z| shapley_kernel_weight(m, z.iter().filter(|&&b| b).count()))
            .collect();
        (masks, weights)
    } else {
        sample_coalitions(m, config.n_samples - 1, config.seed)
    };

    let empty = model.eval(&vec![false; m])?;
    let full = model.full_value()?;
    let values = eval_all(model, &coalitions)?;
    let delta = full - empty;

    // Regress y - z_last·Δ on (z_j - z_last), j < M-1.
    let k = m - 1;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut row = vec![0.0; k];
    for ((z, &v), &w) in coalitions.iter().zip(&values).zip(&weights) {
        let last = if z[k] { 1.0 } else { 0.0 };
        for (r, &bit) in row.iter_mut().zip(z) {
            *r = if bit { 1.0 } else { 0.0 } - last;
        }
        let target = (v - empty) - last * delta;
        for i in 0..k {
            let wi = w * row[i];
            if wi == 0.0 {
                continue;
            }
            rhs[i] += wi * target;
            for j in 0..=i {
                gram[i * k + j] += wi * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[j * k + i] = gram[i * k + j];
        }
    }
    let mut phi = solve_spd(&gram, &rhs, k).ok_or_else(|| {
        PlexError::DegenerateDesign("singular constrained KernelSHAP system".into())
    })?;
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(Attribution {
        raw: phi,
        base_value: empty,
        full_value: full,
        evaluations: coalitions.len() + 1,
    })
}

fn sample_coalitions(m: usize, n: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    // kernel mass per coalition size s: (M-1) / (s (M-s))
    let mass: Vec<f64> = (1..m)
        .map(|s| (m - 1) as f64 / (s * (m - s)) as f64)
        .collect();
    let total: f64 = mass.iter().sum();
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut size = m - 1;
        for (i, w) in mass.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for i in sample(&mut rng, m, size) {
            z[i] = true;
        }
        masks.push(z);
    }
    (masks, vec![1.0; n])
}

/// Exact Shapley values by evaluating all `2^M` coalitions.
pub fn exact_shapley_attribution<M: MaskedModel + ?Sized>(model: &M) -> Result<Attribution> {
    let m = model.n_words();
    if m == 0 {
        return Err(PlexError::Empty("sentence"));
    }
    if m > EXACT_MAX_WORDS {
        return Err(PlexError::Budget {
            what: "exact Shapley enumeration",
            words: m,
            limit: EXACT_MAX_WORDS,
        });
    }
    let full_bits = (1usize << m) - 1;
    let masks: Vec<Vec<bool>> = (0..full_bits).map(|bits| mask_from_bits(bits, m)).collect();
    let mut values = eval_all(model, &masks)?;
    values.push(model.full_value()?);

    // weight for a coalition of size s not containing i: s!(M-s-1)!/M! = 1 / (M·C(M-1, s))
    let weight: Vec<f64> = (0..m)
        .map(|s| 1.0 / (m as f64 * binomial(m - 1, s)))
        .collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for s in 0..=full_bits {
            if s & bit == 0 {
                acc += weight[s.count_ones() as usize] * (values[s | bit] - values[s]);
            }
        }
        *p = acc;
    }
    Ok(Attribution {
        raw: phi,
        base_value: values[0],
        full_value: values[full_bits],
        evaluations: masks.len(),
    })
}
