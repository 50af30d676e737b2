use plex_core::classifier::{accuracy, train_head, HeadParams, HeadTrainConfig};
use plex_core::datasetgen::{build_dataset, load_pairs, save_pairs, DatasetConfig};
use plex_core::encoder::{Counted, EmbeddingSet, Encoder, ToyEncoder, ToyEncoderConfig};
use plex_core::eval::{agreement_report, encoder_passes, perturbation_count, stress_test};
use plex_core::explainers::{lime_explain, rank_by_magnitude, LimeConfig, Method};
use plex_core::plex::{
    plex_explain, plex_explain_sentence, train_plex, SiameseParams, TrainConfig,
};
use plex_core::synthetic::TriggerTask;

fn setup() -> (TriggerTask, ToyEncoder, HeadParams, Vec<EmbeddingSet>) {
    let task = TriggerTask::default();
    let enc = ToyEncoder::new(ToyEncoderConfig {
        seed: 3,
        dim: 64,
        ff: 128,
        ..Default::default()
    })
    .unwrap();
    let corpus = task.corpus(400, "s", 1);
    let embs: Vec<EmbeddingSet> = corpus.iter().map(|s| enc.encode(s).unwrap()).collect();
    let examples: Vec<(EmbeddingSet, usize)> = embs
        .iter()
        .cloned()
        .zip(corpus.iter().map(|s| s.label.unwrap()))
        .collect();
    let head = train_head(
        &examples,
        4,
        &HeadTrainConfig {
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap()
    .params;
    let acc = accuracy(&examples, &head).unwrap();
    assert!(acc > 0.9, "head accuracy {acc}");
    (task, enc, head, embs)
}

#[test]
fn end_to_end_pipeline_is_seeded_and_bounded() {
    let (task, enc, head, embs) = setup();
    let cfg = DatasetConfig {
        n_samples: 64,
        seed: 5,
        ..Default::default()
    };
    let data = build_dataset(&embs, &enc, &head, &cfg).unwrap();
    let again = build_dataset(&embs, &enc, &head, &cfg).unwrap();
    assert_eq!(data.pairs, again.pairs);
    let words: usize = embs.iter().map(|e| e.word_count()).sum();
    assert_eq!(data.pairs.len(), words);
    assert_eq!(data.manifest.pairs, words);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    save_pairs(&path, &data.pairs).unwrap();
    assert_eq!(load_pairs(&path).unwrap(), data.pairs);

    let train_cfg = TrainConfig {
        seed: 9,
        epochs: 20,
        ..Default::default()
    };
    let a = train_plex(&data.pairs, &train_cfg).unwrap();
    let b = train_plex(&data.pairs, &train_cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert!(a.final_loss.is_finite());

    let explanations: Vec<_> = embs
        .iter()
        .map(|e| plex_explain(e, &a.params).unwrap())
        .collect();
    for (x, e) in explanations.iter().zip(&embs) {
        assert_eq!(x.scores.len(), e.word_count());
        assert!(x.scores.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
    let report =
        agreement_report(&explanations, &data.explanations, &[1, 2], &[0.0, 0.05]).unwrap();
    assert_eq!(report.sentences, embs.len());

    let test = task.corpus(30, "t", 8);
    let stress = stress_test(
        "plex",
        &test,
        |_, s| plex_explain_sentence(s, &enc, &head, &a.params),
        &enc,
        &head,
        2,
    )
    .unwrap();
    assert_eq!(stress.accuracy[0], 1.0);
    assert!(stress.accuracy.windows(2).all(|w| w[1] <= w[0] + 1.0));
}

#[test]
fn lime_finds_the_trigger_word() {
    let (task, enc, head, _) = setup();
    let mut hits = 0;
    let test = task.corpus(20, "q", 4);
    for s in &test {
        let v = lime_explain(
            s,
            &enc,
            &head,
            &LimeConfig {
                n_samples: 1000,
                ..Default::default()
            },
        )
        .unwrap();
        let top = rank_by_magnitude(&v.scores)[0];
        if task.trigger_class(&s.words()[top]).is_some() {
            hits += 1;
        }
    }
    // the encoder mixes context, so fillers sometimes carry the decision
    assert!(hits >= 12, "trigger ranked first in {hits}/20");
}

#[test]
fn plex_needs_one_encoder_pass_per_sentence() {
    let (task, enc, head, _) = setup();
    let counted = Counted::new(&enc);
    let params = SiameseParams::new(64, 1);
    for s in task.corpus(10, "c", 6) {
        let v = plex_explain_sentence(&s, &counted, &head, &params).unwrap();
        assert_eq!(v.method, Method::Plex);
        assert_eq!(counted.reset(), 1);
        lime_explain(
            &s,
            &counted,
            &head,
            &LimeConfig {
                n_samples: 300,
                ..Default::default()
            },
        )
        .unwrap();
        let expected = encoder_passes(
            Method::Lime,
            perturbation_count(Method::Lime, s.word_count(), 300),
        );
        assert_eq!(counted.reset(), expected);
        assert!(expected <= 301);
    }
}
