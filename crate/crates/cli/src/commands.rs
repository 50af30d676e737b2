use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use plex_core::classifier::{accuracy, train_head as fit_head, HeadParams, HeadTrainConfig};
use plex_core::datasetgen::{self, DatasetConfig};
use plex_core::encoder::{
    layer_distance_matrix, load_embeddings, tokenize, write_embeddings, EmbeddingSet, Encoder,
    TokenizedSentence, ToyEncoder, ToyEncoderConfig,
};
use plex_core::eval::{self, BenchConfig, CostReport};
use plex_core::explainers::{
    attribute, explain_with, load_importances, write_importances, ExplainConfig, ImportanceVector,
    Method, RecordedPredictions,
};
use plex_core::numerics::mix_seed;
use plex_core::optim::Optimizer;
use plex_core::plex::{
    plex_explain, plex_explain_sentence, plex_explain_with_head, train_plex_from, SiameseParams,
    TrainConfig,
};
use plex_core::PlexError;

use crate::render::{ansi_line, html_page};
use crate::{
    AgreeArgs, BenchArgs, BuildDatasetArgs, CliResult, EncodeArgs, ExplainArgs, Failure,
    LayerHeatmapArgs, PolarityArgs, StressArgs, ToyArgs, TrainHeadArgs, TrainPlexArgs,
};

fn toy_encoder(args: &ToyArgs) -> CliResult<ToyEncoder> {
    let cfg = ToyEncoderConfig {
        seed: args.toy_seed,
        dim: args.toy_dim,
        ff: 2 * args.toy_dim,
        ..Default::default()
    };
    Ok(ToyEncoder::new(cfg)?)
}

/// Rebuild the encoder that produced `set` from its model tag.
fn encoder_for(set: &EmbeddingSet) -> CliResult<ToyEncoder> {
    let cfg = ToyEncoderConfig::from_model_tag(&set.meta.model).ok_or_else(|| Failure {
        code: 2,
        kind: "data",
        message: format!(
            "embeddings come from model {:?}, which cannot be re-run here; supply recorded masked predictions",
            set.meta.model
        ),
    })?;
    Ok(ToyEncoder::new(cfg)?)
}

fn load_sets(path: &Path) -> CliResult<Vec<EmbeddingSet>> {
    let sets = load_embeddings(path)?.collect::<plex_core::Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(PlexError::Empty("embedding file").into());
    }
    Ok(sets)
}

fn load_head(path: Option<&PathBuf>, method: &str) -> CliResult<HeadParams> {
    let path = path.ok_or_else(|| Failure::usage(format!("{method} needs --head")))?;
    Ok(HeadParams::load(path)?)
}

fn load_plex(path: Option<&PathBuf>) -> CliResult<SiameseParams> {
    let path = path.ok_or_else(|| Failure::usage("the plex method needs --plex"))?;
    Ok(SiameseParams::load(path)?)
}

fn write_json<T: serde::Serialize>(path: Option<&PathBuf>, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn print_summary(value: serde_json::Value) -> CliResult {
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: Option<String>,
    text: String,
    label: Option<usize>,
}

fn read_corpus(path: &Path) -> CliResult<Vec<TokenizedSentence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| PlexError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        let mut s = tokenize(&rec.text).map_err(|e| PlexError::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        s.id = rec.id.unwrap_or_else(|| format!("s{}", out.len()));
        s.label = rec.label;
        out.push(s);
    }
    if out.is_empty() {
        return Err(PlexError::Empty("corpus").into());
    }
    Ok(out)
}

pub fn encode(a: EncodeArgs) -> CliResult {
    let sets: Vec<EmbeddingSet> = if a.from_bridge {
        load_sets(&a.input)?
    } else {
        let enc = toy_encoder(&a.toy)?;
        read_corpus(&a.input)?
            .iter()
            .map(|s| enc.encode(s))
            .collect::<plex_core::Result<_>>()?
    };
    let sets: Vec<EmbeddingSet> = if a.no_layers {
        sets.into_iter().map(EmbeddingSet::without_layers).collect()
    } else {
        sets
    };
    write_embeddings(File::create(&a.out)?, &sets)?;
    print_summary(
        serde_json::json!({ "records": sets.len(), "dim": sets[0].dim(), "model": sets[0].meta.model }),
    )
}

pub fn train_head(a: TrainHeadArgs) -> CliResult {
    let sets = load_sets(&a.emb)?;
    let examples = sets
        .into_iter()
        .map(|s| match s.label {
            Some(l) => Ok((s, l)),
            None => Err(PlexError::InvalidRecord {
                id: s.id.clone(),
                message: "record has no label".into(),
            }),
        })
        .collect::<plex_core::Result<Vec<_>>>()?;
    let classes = a.classes.unwrap_or_else(|| {
        examples
            .iter()
            .map(|(_, l)| l + 1)
            .max()
            .unwrap_or(2)
            .max(2)
    });
    let cfg = HeadTrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        optimizer: Optimizer::adam(a.lr),
        seed: a.seed,
        ..Default::default()
    };
    let report = fit_head(&examples, classes, &cfg)?;
    report.params.save(&a.out)?;
    print_summary(serde_json::json!({
        "classes": classes,
        "examples": examples.len(),
        "epochs": report.losses.len(),
        "final_loss": report.losses.last(),
        "accuracy": accuracy(&examples, &report.params)?,
    }))
}

pub fn build_dataset(a: BuildDatasetArgs) -> CliResult {
    let sets = load_sets(&a.emb)?;
    let cfg = DatasetConfig {
        method: a.explainer,
        n_samples: a.samples,
        seed: a.seed,
        substitute_mask: a.mask_token,
    };
    let data = match &a.masked {
        Some(path) => {
            let recorded = RecordedPredictions::load(path)?;
            datasetgen::build_dataset_with(&sets, &cfg, |i, e| {
                let model = recorded.model(&e.id, e.word_count())?;
                attribute(cfg.method, &model, &cfg.explain_config(i))?.to_importance(
                    &e.id,
                    model.class(),
                    cfg.method,
                )
            })?
        }
        None => {
            let head = load_head(a.head.as_ref(), "build-dataset")?;
            let enc = encoder_for(&sets[0])?;
            datasetgen::build_dataset(&sets, &enc, &head, &cfg)?
        }
    };
    datasetgen::save_pairs(&a.out, &data.pairs)?;
    let manifest = a.manifest.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    datasetgen::save_manifest(&manifest, &data.manifest)?;
    print_summary(serde_json::json!({
        "pairs": data.manifest.pairs,
        "explained": data.manifest.explained,
        "skipped": data.manifest.skipped.len(),
    }))
}

pub fn train_plex(a: TrainPlexArgs) -> CliResult {
    if !(0.0..1.0).contains(&a.dropout) {
        return Err(Failure::usage("--dropout must be in [0, 1)"));
    }
    let pairs = datasetgen::load_pairs(&a.pairs)?;
    let cfg = TrainConfig {
        alpha: a.alpha,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        optimizer: Optimizer::adam(a.lr),
        dropout: a.dropout > 0.0,
        patience: (a.patience > 0).then_some(a.patience),
        ..Default::default()
    };
    let init = SiameseParams::new(pairs[0].cls.len(), mix_seed(a.seed, 0)).with_dropout(a.dropout);
    let report = train_plex_from(init, &pairs, &cfg)?;
    report.params.save(&a.out)?;
    if let Some(path) = &a.history {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (i, l) in report.history.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    print_summary(serde_json::json!({
        "pairs": pairs.len(),
        "epochs": report.history.len(),
        "stopped_early": report.stopped_early,
        "final_loss": report.final_loss,
        "skipped_pairs": report.skipped_pairs,
    }))
}

fn explain_config(a: &ExplainArgs, index: usize) -> ExplainConfig {
    ExplainConfig::default()
        .with_samples(a.samples)
        .with_seed(mix_seed(a.seed, index as u64))
}

pub fn explain(a: ExplainArgs) -> CliResult {
    let mut rows: Vec<(Vec<String>, ImportanceVector)> = Vec::new();
    match (&a.sentence, &a.emb) {
        (Some(text), None) => {
            let mut s = tokenize(text)?;
            s.id = "sentence".into();
            let enc = toy_encoder(&a.toy)?;
            let head = load_head(a.head.as_ref(), "explain")?;
            let v = match a.method {
                Method::Plex => {
                    plex_explain_sentence(&s, &enc, &head, &load_plex(a.plex.as_ref())?)?
                }
                m => explain_with(m, &s, &enc, &head, &explain_config(&a, 0))?,
            };
            rows.push((s.words(), v));
        }
        (None, Some(path)) => {
            let sets = load_sets(path)?;
            let recorded = a
                .masked
                .as_ref()
                .map(RecordedPredictions::load)
                .transpose()?;
            let plex = (a.method == Method::Plex)
                .then(|| load_plex(a.plex.as_ref()))
                .transpose()?;
            let head = match (&a.head, a.method, &recorded) {
                (Some(p), _, _) => Some(HeadParams::load(p)?),
                (None, Method::Plex, _) | (None, _, Some(_)) => None,
                (None, m, None) => return Err(Failure::usage(format!("{m} needs --head"))),
            };
            let enc = match (a.method, &recorded) {
                (Method::Plex, _) | (_, Some(_)) => None,
                _ => Some(encoder_for(&sets[0])?),
            };
            for (i, e) in sets.iter().enumerate() {
                let v = match (a.method, &plex, &recorded) {
                    (Method::Plex, Some(p), _) => match &head {
                        Some(h) => plex_explain_with_head(e, p, h)?,
                        None => plex_explain(e, p)?,
                    },
                    (m, _, Some(rec)) => {
                        let model = rec.model(&e.id, e.word_count())?;
                        attribute(m, &model, &explain_config(&a, i))?.to_importance(
                            &e.id,
                            model.class(),
                            m,
                        )?
                    }
                    (m, _, None) => {
                        let enc = enc
                            .as_ref()
                            .expect("encoder built for perturbation methods");
                        let head = head.as_ref().expect("head checked above");
                        explain_with(m, &e.sentence(), enc, head, &explain_config(&a, i))?
                    }
                };
                rows.push((e.word_strings(), v));
            }
        }
        _ => return Err(Failure::usage("give exactly one of --sentence or --emb")),
    }
    let vectors: Vec<ImportanceVector> = rows.iter().map(|(_, v)| v.clone()).collect();
    match &a.out {
        Some(p) => write_importances(File::create(p)?, &vectors)?,
        None if !a.ansi => write_importances(std::io::stdout().lock(), &vectors)?,
        None => {}
    }
    if let Some(p) = &a.html {
        std::fs::write(p, html_page(&rows))?;
    }
    if a.ansi {
        for (words, v) in &rows {
            println!("{}", ansi_line(words, v));
        }
    }
    Ok(())
}

pub fn stress(a: StressArgs) -> CliResult {
    let sets = load_sets(&a.emb)?;
    let enc = encoder_for(&sets[0])?;
    let head = HeadParams::load(&a.head)?;
    let sentences: Vec<TokenizedSentence> = sets.iter().map(EmbeddingSet::sentence).collect();
    let precomputed: Option<HashMap<String, ImportanceVector>> = a
        .scores
        .as_ref()
        .map(|p| load_importances(p).map(|vs| vs.into_iter().map(|v| (v.id.clone(), v)).collect()))
        .transpose()?;
    let plex = match (&precomputed, a.method) {
        (None, Method::Plex) => Some(load_plex(a.plex.as_ref())?),
        _ => None,
    };
    let report = eval::stress_test(
        &a.method.to_string(),
        &sentences,
        |i, s| {
            if let Some(map) = &precomputed {
                return map.get(&s.id).cloned().ok_or_else(|| {
                    PlexError::InvalidInput(format!("no scores for sentence {}", s.id))
                });
            }
            match &plex {
                Some(p) => plex_explain_with_head(&sets[i], p, &head),
                None => {
                    let cfg = ExplainConfig::default()
                        .with_samples(a.samples)
                        .with_seed(mix_seed(a.seed, i as u64));
                    explain_with(a.method, s, &enc, &head, &cfg)
                }
            }
        },
        &enc,
        &head,
        a.kmax,
    )?;
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv())?;
    }
    write_json(a.out.as_ref(), &report)
}

pub fn agree(a: AgreeArgs) -> CliResult {
    let x = load_importances(&a.a)?;
    let y = load_importances(&a.b)?;
    let report = eval::agreement_report(&x, &y, &a.k, &a.thresholds)?;
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv())?;
    }
    write_json(a.out.as_ref(), &report)
}

pub fn polarity(a: PolarityArgs) -> CliResult {
    let x = load_importances(&a.a)?;
    let y = load_importances(&a.b)?;
    let pairs = eval::align(&x, &y)?;
    let stats = eval::polarity_stats(&pairs, a.threshold)?;
    write_json(a.out.as_ref(), &stats)
}

pub fn bench(a: BenchArgs) -> CliResult {
    let sets = load_sets(&a.emb)?;
    let enc = encoder_for(&sets[0])?;
    let head = HeadParams::load(&a.head)?;
    let plex = match a.methods.contains(&Method::Plex) {
        true => Some(load_plex(a.plex.as_ref())?),
        false => None,
    };
    let sentences: Vec<TokenizedSentence> = sets.iter().map(EmbeddingSet::sentence).collect();
    let mut reports: Vec<(usize, CostReport)> = Vec::new();
    for &budget in &a.budgets {
        for &method in &a.methods {
            let cfg = BenchConfig {
                n_samples: budget,
                repeats: a.repeats,
                seed: a.seed,
            };
            for r in eval::bench(method, &sentences, &enc, &head, plex.as_ref(), &cfg)? {
                reports.push((budget, r));
            }
        }
    }
    let mut table = String::from("budget,");
    let header = CostReport::csv_header();
    let (comment, columns) = header.split_once('\n').expect("two-line header");
    table.insert_str(0, &format!("{comment}\n"));
    table.push_str(columns.trim_end());
    table.push('\n');
    for (budget, r) in &reports {
        table.push_str(&format!("{budget},{}", r.csv_row()));
    }
    match &a.out {
        Some(p) => std::fs::write(p, &table)?,
        None => print!("{table}"),
    }
    if let Some(p) = &a.json {
        let rows: Vec<serde_json::Value> = reports
            .iter()
            .map(|(b, r)| serde_json::json!({ "budget": b, "report": r }))
            .collect();
        write_json(Some(p), &rows)?;
    }
    Ok(())
}

pub fn layer_heatmap(a: LayerHeatmapArgs) -> CliResult {
    let sets = load_sets(&a.emb)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["id", "layer", "word_index", "word", "distance"])?;
    let mut written = 0;
    for e in sets
        .iter()
        .filter(|e| a.id.as_ref().is_none_or(|id| &e.id == id))
    {
        let m = layer_distance_matrix(e)?;
        let layers: Vec<usize> = e.layers.keys().copied().collect();
        let words = e.word_strings();
        for (row, layer) in layers.iter().enumerate() {
            for (wi, word) in words.iter().enumerate() {
                w.write_record([
                    e.id.clone(),
                    layer.to_string(),
                    wi.to_string(),
                    word.clone(),
                    m.get(row, wi).to_string(),
                ])?;
            }
        }
        written += 1;
    }
    w.flush()?;
    if written == 0 {
        return Err(PlexError::InvalidInput("no matching sentence".into()).into());
    }
    Ok(())
}
