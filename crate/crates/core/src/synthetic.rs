//! Synthetic workloads with known ground truth: random embeddings labelled
//! by a hidden Siamese network, and a trigger-word classification task.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::encoder::{EmbeddingMeta, EmbeddingSet, TokenizedSentence};
use crate::error::Result;
use crate::explainers::{ImportanceVector, Method};
use crate::numerics::{seeded_rng, Vector};
use crate::plex::{plex_explain_counted, SiameseParams, TrainingPair};

/// `n` sentences of `words` i.i.d. standard-normal word vectors plus a CLS vector.
pub fn random_embeddings(n: usize, words: usize, dim: usize, seed: u64) -> Vec<EmbeddingSet> {
    let mut rng = seeded_rng(seed);
    let gaussian = |rng: &mut rand_chacha::ChaCha8Rng| {
        Vector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect())
            .expect("finite normal draw")
    };
    (0..n)
        .map(|i| {
            let cls = gaussian(&mut rng);
            let word_vecs = (0..words).map(|_| gaussian(&mut rng)).collect();
            EmbeddingSet {
                id: format!("p{i}"),
                tokens: (0..words).map(|w| format!("w{w}")).collect(),
                word_map: (0..words).map(|w| vec![w]).collect(),
                label: None,
                cls,
                words: word_vecs,
                layers: Default::default(),
                probs: None,
                meta: EmbeddingMeta {
                    dim,
                    model: "random".into(),
                },
            }
        })
        .collect()
}

/// Labels every word of `corpus` with the hidden network's score.
pub fn planted_labels(
    corpus: &[EmbeddingSet],
    hidden: &SiameseParams,
) -> Result<(Vec<TrainingPair>, Vec<ImportanceVector>)> {
    let labels = corpus
        .par_iter()
        .map(|e| plex_explain_counted(e, hidden, 0, None))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (e, v) in corpus.iter().zip(&labels) {
        for (widx, (w, &fi)) in e.words.iter().zip(&v.scores).enumerate() {
            pairs.push(TrainingPair {
                sid: e.id.clone(),
                widx,
                cls: e.cls.to_vec(),
                word: w.to_vec(),
                fi,
                method: Method::Plex,
            });
        }
    }
    Ok((pairs, labels))
}

/// Classification task where each sentence holds exactly one trigger word
/// that determines its class, padded with class-neutral filler.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerTask {
    pub classes: usize,
    pub triggers: Vec<String>,
    pub filler: Vec<String>,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl Default for TriggerTask {
    fn default() -> Self {
        TriggerTask {
            classes: 4,
            triggers: ["excellent", "terrible", "football", "election"]
                .map(String::from)
                .to_vec(),
            filler: [
                "the", "a", "of", "and", "to", "in", "is", "was", "it", "for", "on", "with", "as",
                "at", "by", "this",
            ]
            .map(String::from)
            .to_vec(),
            min_filler: 5,
            max_filler: 9,
        }
    }
}

impl TriggerTask {
    pub fn trigger_class(&self, word: &str) -> Option<usize> {
        self.triggers.iter().position(|t| t == word)
    }

    /// `n` labelled sentences, balanced round-robin over classes.
    pub fn corpus(&self, n: usize, prefix: &str, seed: u64) -> Vec<TokenizedSentence> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|i| {
                let class = i % self.classes;
                let len = rng.random_range(self.min_filler..=self.max_filler);
                let mut words: Vec<String> = (0..len)
                    .map(|_| {
                        self.filler
                            .choose(&mut rng)
                            .expect("non-empty filler")
                            .clone()
                    })
                    .collect();
                let pos = rng.random_range(0..=len);
                words.insert(pos, self.triggers[class].clone());
                TokenizedSentence::from_words(format!("{prefix}{i}"), words)
                    .expect("non-empty sentence")
                    .with_label(class)
            })
            .collect()
    }
}
