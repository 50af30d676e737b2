//! End-to-end acceptance checks. Runs without the test harness so the
//! criteria execute sequentially (timings are not disturbed by sibling tests)
//! and the PASS/FAIL lines are always shown; exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use plex_core::classifier::{cross_entropy_grad, train_head, HeadParams, HeadTrainConfig};
use plex_core::datasetgen::{build_dataset, DatasetConfig};
use plex_core::encoder::{
    Counted, EmbeddingSet, Encoder, TokenizedSentence, ToyEncoder, ToyEncoderConfig,
};
use plex_core::eval::{
    bench, encoder_passes, perturbation_count, polarity_stats, stress_test, BenchConfig,
};
use plex_core::explainers::{
    exact_shapley, exact_shapley_attribution, lime_attribution, lime_explain, rank_by_magnitude,
    shap_attribution, shap_explain, FnModel, LimeConfig, MaskedModel, SentenceModel, ShapConfig,
};
use plex_core::numerics::{mix_seed, seeded_rng, Matrix, Vector};
use plex_core::plex::{
    batch_loss_and_grad, plex_explain, plex_explain_sentence, train_plex, SiameseParams,
    TrainConfig, TrainingPair,
};
use plex_core::synthetic::{planted_labels, random_embeddings, TriggerTask};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_pairs(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| TrainingPair {
            sid: format!("g{i}"),
            widx: 0,
            cls: random_vec(rng, dim),
            word: random_vec(rng, dim),
            fi: rng.random_range(-1.0..1.0),
            method: plex_core::explainers::Method::Lime,
        })
        .collect()
}

/// Central differences over the coordinates in `coords`; `None` when a pair
/// is skipped as degenerate, where the loss is discontinuous.
fn siamese_point(params: &SiameseParams, pairs: &[TrainingPair], coords: &[usize]) -> Option<f64> {
    let refs: Vec<&TrainingPair> = pairs.iter().collect();
    let base = batch_loss_and_grad(params, &refs, 1.3, None).unwrap();
    if base.skipped > 0 {
        return None;
    }
    let analytic = base.gradient.flat();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(coords.len());
    let mut picked = Vec::with_capacity(coords.len());
    for &c in coords {
        let mut p = params.clone();
        *p.flat_mut(c) += h;
        let up = batch_loss_and_grad(&p, &refs, 1.3, None).unwrap().loss;
        *p.flat_mut(c) -= 2.0 * h;
        let down = batch_loss_and_grad(&p, &refs, 1.3, None).unwrap().loss;
        numeric.push((up - down) / (2.0 * h));
        picked.push(analytic[c]);
    }
    Some(rel_err(&picked, &numeric))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(101);
    let mut worst_siamese = 0.0f64;
    let (mut points, mut redrawn) = (0, 0);
    let mut seed = 1000;
    // small networks, every coordinate
    while points < 100 {
        let params = SiameseParams::with_dims(6, 10, 5, seed);
        seed += 1;
        let pairs = random_pairs(&mut rng, 4, 6);
        let all: Vec<usize> = (0..params.param_count()).collect();
        match siamese_point(&params, &pairs, &all) {
            Some(e) => {
                worst_siamese = worst_siamese.max(e);
                points += 1;
            }
            None => redrawn += 1,
        }
    }
    // full-size networks, sampled coordinates
    for p in 0..5 {
        let params = SiameseParams::new(32, 2000 + p);
        let pairs = random_pairs(&mut rng, 4, 32);
        let coords: Vec<usize> = (0..200)
            .map(|_| rng.random_range(0..params.param_count()))
            .collect();
        match siamese_point(&params, &pairs, &coords) {
            Some(e) => {
                worst_siamese = worst_siamese.max(e);
                points += 1;
            }
            None => redrawn += 1,
        }
    }

    let mut worst_head = 0.0f64;
    for p in 0..100 {
        let (classes, dim) = (3 + p % 3, 8);
        let w = Matrix::new(classes, dim, random_vec(&mut rng, classes * dim)).unwrap();
        let b = Vector::new(random_vec(&mut rng, classes)).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, dim)).collect();
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), i % classes))
            .collect();
        let head = HeadParams::new(w.clone(), b.clone()).unwrap();
        let (_, gw, gb) = cross_entropy_grad(&head, &batch).unwrap();
        let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
        let h = 1e-5;
        let mut flat: Vec<f64> = w.data().iter().chain(b.iter()).copied().collect();
        let loss_at = |flat: &[f64]| {
            let w = Matrix::new(classes, dim, flat[..classes * dim].to_vec()).unwrap();
            let b = Vector::new(flat[classes * dim..].to_vec()).unwrap();
            cross_entropy_grad(&HeadParams::new(w, b).unwrap(), &batch)
                .unwrap()
                .0
        };
        let mut numeric = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            let up = loss_at(&flat);
            flat[i] = orig - h;
            let down = loss_at(&flat);
            flat[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        worst_head = worst_head.max(rel_err(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    outcome(
        "gradient check",
        worst_siamese < 1e-4 && points >= 100 && worst_head < 1e-6 && elapsed < Duration::from_secs(30),
        format!(
            "siamese max rel err {worst_siamese:.2e} over {points} points (< 1e-4; {redrawn} degenerate draws redrawn), head max rel err {worst_head:.2e} over 100 points (< 1e-6), {} (< 30s)",
            secs(elapsed)
        ),
    )
}

fn shapley_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(202);
    let mut worst_diff = 0.0f64;
    let mut worst_eff = 0.0f64;
    let mut axioms = true;
    // arbitrary games given by random value tables
    for m in 1..=10usize {
        for _ in 0..5 {
            let table: Vec<f64> = (0..1usize << m)
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let model = FnModel::new(m, |z: &[bool]| {
                table[z
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| (b as usize) << i)
                    .sum::<usize>()]
            });
            let s = shap_attribution(&model, &ShapConfig::exhaustive()).unwrap();
            let e = exact_shapley_attribution(&model).unwrap();
            worst_diff = s
                .raw
                .iter()
                .zip(&e.raw)
                .fold(worst_diff, |w, (a, b)| w.max((a - b).abs()));
            for a in [&s, &e] {
                worst_eff = worst_eff
                    .max((a.raw.iter().sum::<f64>() - (a.full_value - a.base_value)).abs());
            }
        }
    }
    // dummy and symmetric players by construction
    for m in 3..=10usize {
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let model = FnModel::new(m, |z: &[bool]| {
            // word 0 is a dummy; words 1 and 2 are interchangeable
            let pair = (z[1] as u8 + z[2] as u8) as f64;
            let rest: f64 = (3..m).filter(|&i| z[i]).map(|i| c[i]).sum();
            0.1 + 0.2 * pair * pair + rest * (1.0 + 0.3 * pair)
        });
        for a in [
            shap_attribution(&model, &ShapConfig::exhaustive()).unwrap(),
            exact_shapley_attribution(&model).unwrap(),
        ] {
            axioms &= a.raw[0].abs() < 1e-9 && (a.raw[1] - a.raw[2]).abs() < 1e-9;
        }
    }
    // the real pipeline: toy encoder + head
    let enc = ToyEncoder::new(ToyEncoderConfig::with_seed(5)).unwrap();
    let head = HeadParams::new(
        Matrix::random_normal(3, 32, 1.0, &mut rng),
        Vector::zeros(3),
    )
    .unwrap();
    for s in &TriggerTask::default().corpus(6, "o", 7) {
        let model = SentenceModel::new(s, &enc, &head).unwrap();
        let a = shap_attribution(&model, &ShapConfig::exhaustive()).unwrap();
        let b = exact_shapley_attribution(&model).unwrap();
        worst_diff = a
            .raw
            .iter()
            .zip(&b.raw)
            .fold(worst_diff, |w, (x, y)| w.max((x - y).abs()));
        worst_eff =
            worst_eff.max((b.raw.iter().sum::<f64>() - (b.full_value - b.base_value)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        "shapley oracle equivalence",
        worst_diff < 1e-6 && worst_eff < 1e-12 && axioms && elapsed < Duration::from_secs(60),
        format!(
            "max |kernel - exact| {worst_diff:.2e} (< 1e-6), max efficiency gap {worst_eff:.2e} (< 1e-12), dummy/symmetry {}, {} (< 60s)",
            if axioms { "hold" } else { "VIOLATED" },
            secs(elapsed)
        ),
    )
}

fn lime_oracle() -> Outcome {
    let mut rng = seeded_rng(303);
    let mut worst = 0.0f64;
    let mut argmax_ok = 0;
    let trials = 200;
    for t in 0..trials {
        let m = 2 + t % 9;
        let coef: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = rng.random_range(-0.5..0.5);
        let model = FnModel::new(m, |z: &[bool]| {
            bias + z
                .iter()
                .zip(&coef)
                .filter(|(b, _)| **b)
                .map(|(_, c)| c)
                .sum::<f64>()
        });
        let a = lime_attribution(&model, &LimeConfig::oracle(1 << m)).unwrap();
        worst = a
            .raw
            .iter()
            .zip(&coef)
            .fold(worst, |w, (x, c)| w.max((x - c).abs()));
        if rank_by_magnitude(&a.raw)[0] == rank_by_magnitude(&coef)[0] {
            argmax_ok += 1;
        }
    }
    outcome(
        "lime oracle recovery",
        worst < 1e-6 && argmax_ok == trials,
        format!("max coefficient error {worst:.2e} (< 1e-6), top feature recovered {argmax_ok}/{trials}"),
    )
}

struct Planted {
    final_loss: f64,
    top1: f64,
    polarity: Vec<(f64, f64)>,
    elapsed: Duration,
}

fn planted_run() -> Planted {
    let start = Instant::now();
    let corpus = random_embeddings(1000, 10, 32, 1);
    let hidden = SiameseParams::new(32, 1001);
    let (pairs, labels) = planted_labels(&corpus, &hidden).unwrap();
    let cfg = TrainConfig {
        seed: 7,
        batch: 32,
        dropout: false,
        ..Default::default()
    };
    let report = train_plex(&pairs, &cfg).unwrap();
    let held_in = 200;
    let outputs: Vec<_> = corpus[..held_in]
        .iter()
        .map(|e| plex_explain(e, &report.params).unwrap())
        .collect();
    let hits = outputs
        .iter()
        .zip(&labels)
        .filter(|(a, b)| rank_by_magnitude(&a.scores)[0] == rank_by_magnitude(&b.scores)[0])
        .count();
    let aligned: Vec<_> = outputs.iter().zip(labels.iter()).collect();
    let polarity = [0.0, 0.01, 0.05]
        .iter()
        .map(|&t| (t, polarity_stats(&aligned, t).unwrap().mean))
        .collect();
    Planted {
        final_loss: report.final_loss,
        top1: hits as f64 / held_in as f64 * 100.0,
        polarity,
        elapsed: start.elapsed(),
    }
}

fn planted_convergence(p: &Planted) -> Outcome {
    outcome(
        "planted-network convergence",
        p.final_loss < 0.05 && p.top1 >= 90.0 && p.elapsed < Duration::from_secs(300),
        format!(
            "final mean loss {:.4} (< 0.05), top-1 overlap {:.1}% (>= 90%) over 200 sentences, {} (< 300s)",
            p.final_loss,
            p.top1,
            secs(p.elapsed)
        ),
    )
}

fn polarity_thresholds(p: &Planted) -> Outcome {
    let monotone = p.polarity.windows(2).all(|w| w[1].1 >= w[0].1);
    let at_005 = p.polarity[2].1;
    let listing: Vec<String> = p
        .polarity
        .iter()
        .map(|(t, v)| format!("{t}: {v:.2}%"))
        .collect();
    outcome(
        "polarity thresholds",
        monotone && at_005 >= 90.0,
        format!(
            "agreement {} (monotone, >= 90% at 0.05)",
            listing.join(", ")
        ),
    )
}

fn stress_faithfulness() -> Outcome {
    let start = Instant::now();
    let task = TriggerTask::default();
    let enc = ToyEncoder::new(ToyEncoderConfig {
        seed: 11,
        dim: 64,
        ff: 128,
        ..Default::default()
    })
    .unwrap();
    let encode = |c: &[TokenizedSentence]| -> Vec<EmbeddingSet> {
        c.iter().map(|s| enc.encode(s).unwrap()).collect()
    };
    let head_corpus = task.corpus(500, "h", 1);
    let examples: Vec<(EmbeddingSet, usize)> = encode(&head_corpus)
        .into_iter()
        .zip(head_corpus.iter().map(|s| s.label.unwrap()))
        .collect();
    let head = train_head(
        &examples,
        4,
        &HeadTrainConfig {
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap()
    .params;

    let samples = 300;
    let train = task.corpus(1000, "p", 3);
    let data = build_dataset(
        &encode(&train),
        &enc,
        &head,
        &DatasetConfig {
            n_samples: samples,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let plex = train_plex(
        &data.pairs,
        &TrainConfig {
            seed: 5,
            dropout: false,
            ..Default::default()
        },
    )
    .unwrap()
    .params;

    let test = task.corpus(500, "t", 2);
    let k_max = 4;
    let exact = stress_test(
        "exact",
        &test,
        |_, s| exact_shapley(s, &enc, &head),
        &enc,
        &head,
        k_max,
    )
    .unwrap();
    let lime_cfg = |i: usize| LimeConfig {
        n_samples: samples,
        seed: mix_seed(9, i as u64),
        ..Default::default()
    };
    let lime = stress_test(
        "lime",
        &test,
        |i, s| lime_explain(s, &enc, &head, &lime_cfg(i)),
        &enc,
        &head,
        k_max,
    )
    .unwrap();
    let plex_r = stress_test(
        "plex",
        &test,
        |_, s| plex_explain_sentence(s, &enc, &head, &plex),
        &enc,
        &head,
        k_max,
    )
    .unwrap();

    let drop = |r: &plex_core::eval::StressReport| (r.accuracy[0] - r.accuracy[1]) * 100.0;
    let gap = (1..=k_max)
        .map(|k| (plex_r.accuracy[k] - lime.accuracy[k]).abs() * 100.0)
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    let curve = |r: &plex_core::eval::StressReport| {
        r.accuracy
            .iter()
            .map(|a| format!("{:.1}", a * 100.0))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        "stress-test faithfulness",
        drop(&exact) >= 40.0 && drop(&lime) >= 40.0 && drop(&plex_r) >= 40.0 && gap <= 10.0 && elapsed < Duration::from_secs(600),
        format!(
            "top-1 drop exact {:.1} / lime {:.1} / plex {:.1} points (>= 40); max |plex - lime| over k=1..4 {gap:.1} points (<= 10); curves exact {} lime {} plex {}; {} (< 600s)",
            drop(&exact),
            drop(&lime),
            drop(&plex_r),
            curve(&exact),
            curve(&lime),
            curve(&plex_r),
            secs(elapsed)
        ),
    )
}

fn cost_invariant() -> Outcome {
    let task = TriggerTask {
        min_filler: 19,
        max_filler: 19,
        ..Default::default()
    };
    let sentences = task.corpus(12, "c", 21);
    let enc = ToyEncoder::new(ToyEncoderConfig::with_seed(8)).unwrap();
    let mut rng = seeded_rng(22);
    let head = HeadParams::new(
        Matrix::random_normal(4, 32, 1.0, &mut rng),
        Vector::zeros(4),
    )
    .unwrap();
    let siamese = SiameseParams::new(32, 23);
    let counted = Counted::new(&enc);
    let budgets = [256usize, 512, 1024];

    let mut passes_ok = true;
    for s in &sentences {
        counted.reset();
        plex_explain_sentence(s, &counted, &head, &siamese).unwrap();
        passes_ok &= counted.reset() == encoder_passes(plex_core::explainers::Method::Plex, 0);
        for &n in &budgets {
            let m = s.word_count();
            lime_explain(
                s,
                &counted,
                &head,
                &LimeConfig {
                    n_samples: n,
                    ..Default::default()
                },
            )
            .unwrap();
            let lime_passes = counted.reset();
            shap_explain(
                s,
                &counted,
                &head,
                &ShapConfig {
                    n_samples: n,
                    ..Default::default()
                },
            )
            .unwrap();
            let shap_passes = counted.reset();
            let lime_formula = encoder_passes(
                plex_core::explainers::Method::Lime,
                perturbation_count(plex_core::explainers::Method::Lime, m, n),
            );
            let shap_formula = encoder_passes(
                plex_core::explainers::Method::Shap,
                perturbation_count(plex_core::explainers::Method::Shap, m, n),
            );
            passes_ok &= lime_passes == n as u64 + 1 && shap_passes == n as u64 + 1;
            passes_ok &= lime_passes == lime_formula && shap_passes == shap_formula;
        }
    }
    // SentenceModel also honours the count for explicit evaluations
    counted.reset();
    let model = SentenceModel::new(&sentences[0], &counted, &head).unwrap();
    model.eval(&vec![true; sentences[0].word_count()]).unwrap();
    passes_ok &= counted.reset() == 2;

    let mut plex_times = Vec::new();
    let mut lime_times = Vec::new();
    let mut bench_passes_ok = true;
    for &n in &budgets {
        let cfg = BenchConfig {
            n_samples: n,
            repeats: 5,
            seed: 3,
        };
        let p = bench(
            plex_core::explainers::Method::Plex,
            &sentences,
            &enc,
            &head,
            Some(&siamese),
            &cfg,
        )
        .unwrap();
        let l = bench(
            plex_core::explainers::Method::Lime,
            &sentences,
            &enc,
            &head,
            None,
            &cfg,
        )
        .unwrap();
        for r in p.iter().chain(&l) {
            bench_passes_ok &= r.encoder_passes_counted == Some(r.encoder_passes);
        }
        plex_times.push(p[0].wall_time_s.unwrap());
        lime_times.push(l[0].wall_time_s.unwrap());
    }
    let plex_ratio = plex_times.iter().cloned().fold(0.0, f64::max)
        / plex_times.iter().cloned().fold(f64::INFINITY, f64::min);
    let lime_monotone = lime_times.windows(2).all(|w| w[1] > w[0]);
    let ms = |v: &[f64]| {
        v.iter()
            .map(|t| format!("{:.2}", t * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        "cost invariant",
        passes_ok && bench_passes_ok && plex_ratio < 1.5 && lime_monotone,
        format!(
            "encoder passes plex=1, lime/shap=n+1 {}; formula vs instrumentation {}; plex ms/sentence {} (max/min {plex_ratio:.2} < 1.5); lime ms/sentence {} (strictly increasing: {lime_monotone})",
            if passes_ok { "exact" } else { "MISMATCH" },
            if bench_passes_ok { "agree" } else { "DISAGREE" },
            ms(&plex_times),
            ms(&lime_times),
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_plex"))
        .args(args)
        .current_dir(dir)
        .env("PLEX_THREADS", threads)
        .output()
        .expect("run plex");
    assert!(
        out.status.success(),
        "plex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::write(dir.join(format!("{}.stdout", args[0])), &out.stdout).unwrap();
}

fn pipeline(dir: &Path, threads: &str) {
    let task = TriggerTask::default();
    let mut corpus = String::new();
    for s in task.corpus(40, "d", 31) {
        corpus.push_str(
            &serde_json::json!({ "id": s.id, "text": s.words().join(" "), "label": s.label })
                .to_string(),
        );
        corpus.push('\n');
    }
    std::fs::write(dir.join("corpus.jsonl"), corpus).unwrap();
    let steps: &[&[&str]] = &[
        &[
            "encode",
            "--in",
            "corpus.jsonl",
            "--out",
            "emb.jsonl",
            "--toy-seed",
            "4",
        ],
        &[
            "train-head",
            "--emb",
            "emb.jsonl",
            "--out",
            "head.bin",
            "--seed",
            "2",
            "--epochs",
            "60",
        ],
        &[
            "build-dataset",
            "--emb",
            "emb.jsonl",
            "--head",
            "head.bin",
            "--explainer",
            "lime",
            "--samples",
            "128",
            "--seed",
            "3",
            "--out",
            "pairs.jsonl",
        ],
        &[
            "train-plex",
            "--pairs",
            "pairs.jsonl",
            "--epochs",
            "15",
            "--seed",
            "5",
            "--out",
            "plex.bin",
            "--history",
            "history.csv",
        ],
        &[
            "explain",
            "--emb",
            "emb.jsonl",
            "--method",
            "plex",
            "--plex",
            "plex.bin",
            "--head",
            "head.bin",
            "--out",
            "plex.jsonl",
            "--html",
            "plex.html",
        ],
        &[
            "explain",
            "--emb",
            "emb.jsonl",
            "--method",
            "shap",
            "--head",
            "head.bin",
            "--samples",
            "64",
            "--seed",
            "6",
            "--out",
            "shap.jsonl",
        ],
        &[
            "stress",
            "--emb",
            "emb.jsonl",
            "--method",
            "plex",
            "--plex",
            "plex.bin",
            "--head",
            "head.bin",
            "--out",
            "stress.json",
            "--csv",
            "stress.csv",
        ],
        &[
            "agree",
            "--a",
            "plex.jsonl",
            "--b",
            "shap.jsonl",
            "--out",
            "agree.json",
        ],
        &[
            "polarity",
            "--a",
            "plex.jsonl",
            "--b",
            "shap.jsonl",
            "--threshold",
            "0.05",
            "--out",
            "polarity.json",
        ],
        &["layer-heatmap", "--emb", "emb.jsonl", "--out", "layers.csv"],
    ];
    for args in steps {
        run_cli(dir, args, threads);
    }
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "3");
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| {
            std::fs::read(a.path().join(n)).unwrap()
                != std::fs::read(b.path().join(n)).ok().unwrap_or_default()
        })
        .collect();
    outcome(
        "determinism",
        differing.is_empty() && names.len() >= 15,
        format!(
            "{} output files compared across two seeded runs (1 vs 3 worker threads); differing: {:?}",
            names.len(),
            differing
        ),
    )
}

fn main() {
    let planted = planted_run();
    let outcomes = vec![
        gradient_check(),
        shapley_oracle(),
        lime_oracle(),
        planted_convergence(&planted),
        stress_faithfulness(),
        polarity_thresholds(&planted),
        cost_invariant(),
        determinism(),
    ];
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria:\n{}", failed.join("\n"));
        std::process::exit(1);
    }
}
