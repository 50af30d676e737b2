use plex_core::explainers::{
    exact_shapley_attribution, lime_attribution, normalize_scores, shap_attribution, FnModel,
    LimeConfig, ShapConfig,
};
use proptest::prelude::*;

fn table_game(m: usize, table: Vec<f64>) -> FnModel<impl Fn(&[bool]) -> f64 + Sync> {
    FnModel::new(m, move |z: &[bool]| {
        table[z
            .iter()
            .enumerate()
            .map(|(i, &b)| (b as usize) << i)
            .sum::<usize>()]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exhaustive_kernel_shap_is_exact(m in 1usize..8, seed in any::<u64>()) {
        let mut state = seed | 1;
        let table: Vec<f64> = (0..1usize << m).map(|_| {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            (state % 10_000) as f64 / 10_000.0
        }).collect();
        let game = table_game(m, table);
        let k = shap_attribution(&game, &ShapConfig::exhaustive()).unwrap();
        let e = exact_shapley_attribution(&game).unwrap();
        for (a, b) in k.raw.iter().zip(&e.raw) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let total: f64 = e.raw.iter().sum();
        prop_assert!((total - (e.full_value - e.base_value)).abs() < 1e-12);
    }

    #[test]
    fn lime_recovers_additive_models(coef in prop::collection::vec(-1.0f64..1.0, 2..8), bias in -1.0f64..1.0) {
        let m = coef.len();
        let c = coef.clone();
        let game = FnModel::new(m, move |z: &[bool]| bias + z.iter().zip(&c).filter(|(k, _)| **k).map(|(_, w)| w).sum::<f64>());
        let a = lime_attribution(&game, &LimeConfig::oracle(1 << m)).unwrap();
        for (x, w) in a.raw.iter().zip(&coef) {
            prop_assert!((x - w).abs() < 1e-8);
        }
    }

    #[test]
    fn normalized_scores_are_bounded(raw in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let s = normalize_scores(&raw).unwrap();
        prop_assert_eq!(s.len(), raw.len());
        prop_assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
