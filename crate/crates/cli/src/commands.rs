//! Subcommand implementations. Every command writes only below its output
//! directory (or to stdout when none is given).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vccsa::data::{
    batch_from_records, label_distribution, read_comments, consistency_check, split_corpus, Corpus, Label,
    Opinion, Emotion, Part, SplitAssignment, TruncationReport,
};
use vccsa::encoders::{ExternalTextFeatures, Vocabulary};
use vccsa::model::{
    argmax_rows, load_model, save_checkpoint, Ablation, AnyModel, ModelKind, SentimentModel,
};
use vccsa::synthgen::{bayes_ceiling, generate_corpus};
use vccsa::trainer::{
    evaluate_part, format_table, run_once, seed_sweep, train_with_progress, write_history, Dataset,
    MetricsReport, SweepSummary, TableRow, TextData,
};

use crate::config::RunConfig;
use crate::CliError;

pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const CONFIG_FILE: &str = "config.toml";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializes") + "\n"))
}

/// `--data`, then the config key, then `CSMV_DATA_DIR`.
pub fn resolve_data_dir(flag: Option<&Path>, config: &RunConfig) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.data_dir.clone())
        .or_else(|| std::env::var_os("CSMV_DATA_DIR").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no data directory: pass --data, set data_dir or CSMV_DATA_DIR".into()))
}

fn load_split(data_dir: &Path, corpus: &Corpus, config: &RunConfig, explicit: Option<&Path>) -> Result<SplitAssignment, CliError> {
    let candidate = explicit
        .map(Path::to_path_buf)
        .or_else(|| config.split_file.clone())
        .or_else(|| Some(data_dir.join(SPLIT_FILE)).filter(|p| p.exists()));
    let split = match candidate {
        Some(p) => SplitAssignment::read(&p)?,
        None => split_corpus(&corpus.index, config.split_seed, config.granularity()?)?,
    };
    split.check_against(&corpus.index)?;
    Ok(split)
}

/// Loads the corpus, split and text representation. `vocab` forces a stored vocabulary.
pub fn load_dataset(
    data_dir: &Path,
    config: &RunConfig,
    split_path: Option<&Path>,
    vocab: Option<&Path>,
) -> Result<Dataset, CliError> {
    let corpus = Corpus::load(data_dir)?;
    let split = load_split(data_dir, &corpus, config, split_path)?;
    if let Some(index) = &config.text_features {
        let features = ExternalTextFeatures::open(index)?;
        return Ok(Dataset::with_external_text(corpus, split, features)?);
    }
    match vocab {
        Some(path) => {
            let v = Vocabulary::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok(Dataset {
                corpus,
                split,
                text: TextData::Tokens(v),
            })
        }
        None => Ok(Dataset::with_vocabulary(corpus, split)?),
    }
}

fn save_data_artifacts(out: &Path, data: &Dataset, config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    data.split.write(&out.join(SPLIT_FILE))?;
    if let Some(v) = data.vocabulary() {
        v.write(&out.join(VOCAB_FILE)).map_err(|e| io_err(&out.join(VOCAB_FILE), e))?;
    }
    write_text(&out.join(CONFIG_FILE), &config.to_toml())
}

pub fn cmd_gen(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let gen = config.generator();
    let synthetic = generate_corpus(&gen).map_err(|e| match e {
        vccsa::synthgen::SynthError::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    })?;
    synthetic.write(out).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "wrote {} videos, {} comments to {}",
        synthetic.corpus.index.videos.len(),
        synthetic.corpus.comments().len(),
        out.display()
    );
    println!("bayes_ceiling {:.2}", bayes_ceiling(&gen));
    Ok(())
}

pub fn cmd_train(config: &RunConfig, data_dir: &Path, out: &Path, seed: u64) -> Result<(), CliError> {
    let data = load_dataset(data_dir, config, None, None)?;
    save_data_artifacts(out, &data, config)?;
    let base = config.model_config(data.corpus.feature_dim())?;
    let model_config = data.configure(&base)?;
    let mut model = match config.model_kind()? {
        ModelKind::VcCsa => AnyModel::VcCsa(vccsa::VcCsa::new(model_config, seed)?),
        ModelKind::TextOnly => AnyModel::TextOnly(vccsa::TextOnlyModel::new(model_config, seed)?),
    };
    let train_config = config.train_config();
    let outcome = train_with_progress(&mut model, &data, &train_config, seed, &mut |r| {
        eprintln!(
            "epoch {:>3}  train_loss {:.4}  dev_loss {:.4}  dev_opinion_micro_f1 {:.4}  dev_emotion_micro_f1 {:.4}",
            r.epoch, r.train_loss, r.dev_loss, r.dev_opinion_micro_f1, r.dev_emotion_micro_f1
        );
    })?;
    write_history(&out.join(HISTORY_FILE), &outcome.history)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model)?;
    let dev = evaluate_part(&model, &data, Part::Dev, &train_config)?.report;
    let test = evaluate_part(&model, &data, Part::Test, &train_config)?.report;
    #[derive(Serialize)]
    struct TrainReport<'a> {
        seed: u64,
        model: &'a str,
        ablation: Ablation,
        best_epoch: usize,
        dev: &'a MetricsReport,
        test: &'a MetricsReport,
    }
    write_json(
        &out.join(REPORT_FILE),
        &TrainReport {
            seed,
            model: &config.model,
            ablation: model.config().ablation,
            best_epoch: outcome.best_epoch,
            dev: &dev,
            test: &test,
        },
    )?;
    let table = format_table(&[TableRow {
        method: method_name(config.model_kind()?, model.config().ablation),
        mean: &test,
        stdev: None,
    }]);
    write_text(&out.join(TABLE_FILE), &table)?;
    println!("best epoch {} (dev opinion micro-F1 {:.4})", outcome.best_epoch, outcome.best_dev_opinion_micro_f1);
    print!("{table}");
    Ok(())
}

fn method_name(kind: ModelKind, ablation: Ablation) -> String {
    match kind {
        ModelKind::TextOnly => "Text only".to_string(),
        ModelKind::VcCsa => ablation.display_name().to_string(),
    }
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_checkpoint_and_data(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
) -> Result<(AnyModel, Dataset), CliError> {
    let model = load_model(checkpoint, None)?;
    let vocab = sibling(checkpoint, VOCAB_FILE);
    let split = sibling(checkpoint, SPLIT_FILE);
    let data = load_dataset(
        data_dir,
        config,
        split.exists().then_some(split.as_path()),
        vocab.exists().then_some(vocab.as_path()),
    )?;
    data.check_config(model.config())?;
    Ok((model, data))
}

pub fn cmd_eval(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    part: Part,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (model, data) = load_checkpoint_and_data(config, data_dir, checkpoint)?;
    let eval = evaluate_part(&model, &data, part, &config.train_config())?;
    let table = format_table(&[TableRow {
        method: method_name(model.kind(), model.config().ablation),
        mean: &eval.report,
        stdev: None,
    }]);
    if let Some(out) = out {
        write_json(&out.join(REPORT_FILE), &eval.report)?;
        write_text(&out.join(TABLE_FILE), &table)?;
    }
    println!("{} comments in {} part, loss {:.4}", eval.report.n, part.name(), eval.loss);
    print!("{table}");
    Ok(())
}

fn sweep_rows<'a>(summaries: &'a [(String, SweepSummary)]) -> Vec<TableRow<'a>> {
    summaries
        .iter()
        .map(|(name, s)| TableRow {
            method: name.clone(),
            mean: &s.mean,
            stdev: Some(&s.stdev),
        })
        .collect()
}

fn write_summaries(out: Option<&Path>, summaries: &[(String, SweepSummary)]) -> Result<(), CliError> {
    let table = format_table(&sweep_rows(summaries));
    if let Some(out) = out {
        let json: Vec<_> = summaries
            .iter()
            .map(|(name, s)| serde_json::json!({ "method": name, "summary": s }))
            .collect();
        write_json(&out.join(REPORT_FILE), &json)?;
        write_text(&out.join(TABLE_FILE), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn sweep_one(
    data: &Dataset,
    config: &RunConfig,
    kind: ModelKind,
    ablation: Ablation,
) -> Result<SweepSummary, CliError> {
    let base = config.model_config(data.corpus.feature_dim())?.with_ablation(ablation);
    let train_config = config.train_config();
    Ok(seed_sweep(&train_config.seeds, |seed| {
        eprintln!("{} seed {seed}", method_name(kind, ablation));
        run_once(data, &base, &train_config, kind, seed).map(|(_, r)| r)
    })?)
}

/// `modes` empty means all four substitutions; the full model is always run as reference.
pub fn cmd_ablate(config: &RunConfig, data_dir: &Path, modes: &[Ablation], out: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(data_dir, config, None, None)?;
    if let Some(out) = out {
        save_data_artifacts(out, &data, config)?;
    }
    let modes: Vec<Ablation> = if modes.is_empty() { Ablation::MODES.to_vec() } else { modes.to_vec() };
    if let Some(bad) = modes.iter().find(|m| !Ablation::MODES.contains(m)) {
        return Err(CliError::Usage(format!("{} is not an ablation mode", bad.key())));
    }
    let mut summaries = vec![(
        Ablation::Full.display_name().to_string(),
        sweep_one(&data, config, ModelKind::VcCsa, Ablation::Full)?,
    )];
    for mode in modes {
        summaries.push((mode.display_name().to_string(), sweep_one(&data, config, ModelKind::VcCsa, mode)?));
    }
    write_summaries(out, &summaries)
}

pub fn cmd_sweep(config: &RunConfig, data_dir: &Path, with_baseline: bool, out: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(data_dir, config, None, None)?;
    if let Some(out) = out {
        save_data_artifacts(out, &data, config)?;
    }
    let ablation = config.model_config(data.corpus.feature_dim())?.ablation;
    let kind = config.model_kind()?;
    let mut summaries = Vec::new();
    if with_baseline && kind == ModelKind::VcCsa {
        summaries.push((
            method_name(ModelKind::TextOnly, Ablation::Full),
            sweep_one(&data, config, ModelKind::TextOnly, Ablation::Full)?,
        ));
    }
    summaries.push((method_name(kind, ablation), sweep_one(&data, config, kind, ablation)?));
    write_summaries(out, &summaries)
}

#[derive(Serialize)]
struct InspectDump {
    comment_id: String,
    video_id: String,
    text: String,
    gold: (Opinion, Emotion),
    predicted: (Opinion, Emotion),
    used_scales: Vec<usize>,
    frames: usize,
    tokens: usize,
    diagnostics: vccsa::model::RowDiagnostics,
}

pub fn cmd_inspect(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    comment_id: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (model, data) = load_checkpoint_and_data(config, data_dir, checkpoint)?;
    let AnyModel::VcCsa(model) = model else {
        return Err(CliError::Usage("inspect needs a VC-CSA checkpoint; this one is text-only".into()));
    };
    let record = data
        .corpus
        .index
        .comment(comment_id)
        .ok_or_else(|| vccsa::data::DataError::MissingComment {
            comment_id: comment_id.to_string(),
        })?;
    let batch = batch_from_records(
        &[record],
        &data.corpus,
        data.text_source(),
        config.v_cap,
        config.t_cap,
        &mut TruncationReport::default(),
    )?;
    let (opinion, emotion, mut diags) = model.forward(&batch)?;
    let dump = InspectDump {
        comment_id: record.comment_id.clone(),
        video_id: record.video_id.clone(),
        text: record.text.clone(),
        gold: (record.opinion, record.emotion),
        predicted: (
            Opinion::from_index(argmax_rows(&opinion)[0]).expect("3 opinion logits"),
            Emotion::from_index(argmax_rows(&emotion)[0]).expect("8 emotion logits"),
        ),
        used_scales: model.used_scales(),
        frames: batch.video_len(0),
        tokens: batch.text_len(0),
        diagnostics: diags.remove(0),
    };
    let json = serde_json::to_string_pretty(&dump).expect("serializes") + "\n";
    match out {
        Some(out) => write_text(&out.join(format!("inspect_{comment_id}.json")), &json)?,
        None => print!("{json}"),
    }
    Ok(())
}

pub fn cmd_stats(data_dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let corpus = Corpus::load(data_dir)?;
    let dist = label_distribution(corpus.comments())?;
    let frames: Vec<usize> = corpus.features.values().map(|v| v.len()).collect();
    let mut text = format!(
        "videos {}  comments {}  feature_dim {}  frames/video min {} max {} mean {:.1}\n",
        corpus.index.videos.len(),
        dist.total,
        corpus.feature_dim(),
        frames.iter().min().unwrap_or(&0),
        frames.iter().max().unwrap_or(&0),
        frames.iter().sum::<usize>() as f64 / frames.len().max(1) as f64
    );
    for (task, table) in [("opinion", &dist.opinion), ("emotion", &dist.emotion)] {
        text.push_str(&format!("{task}:\n"));
        for (label, frac) in table {
            text.push_str(&format!("  {label:<13} {:>6.2}%\n", 100.0 * frac));
        }
    }
    if let Some(out) = out {
        write_json(&out.join("stats.json"), &dist)?;
    }
    print!("{text}");
    Ok(())
}

/// Validates the corpus, an optional split file, and (given two validator
/// comment files) the annotation consistency rule.
pub fn cmd_check(data_dir: &Path, split: Option<&Path>, validators: &[PathBuf]) -> Result<(), CliError> {
    let corpus = Corpus::load(data_dir)?;
    if corpus.comments().is_empty() {
        return Err(vccsa::data::DataError::EmptyCorpus.into());
    }
    if let Some(path) = split {
        SplitAssignment::read(path)?.check_against(&corpus.index)?;
    }
    match validators {
        [] => {}
        [a, b] => {
            let align = |path: &Path| -> Result<Vec<(Opinion, Emotion)>, CliError> {
                let records = read_comments(path)?;
                let by_id: HashMap<&str, (Opinion, Emotion)> = records
                    .iter()
                    .map(|r| (r.comment_id.as_str(), (r.opinion, r.emotion)))
                    .collect();
                corpus
                    .comments()
                    .iter()
                    .map(|c| {
                        by_id.get(c.comment_id.as_str()).copied().ok_or_else(|| {
                            CliError::Data(format!("{}: no label for comment {}", path.display(), c.comment_id))
                        })
                    })
                    .collect()
            };
            let original: Vec<(Opinion, Emotion)> =
                corpus.comments().iter().map(|c| (c.opinion, c.emotion)).collect();
            let result = consistency_check(&original, &align(a)?, &align(b)?)?;
            println!(
                "consistency: {} of {} items disagree ({:.2}%), {}",
                result.disagreements,
                result.items,
                100.0 * result.rate,
                if result.flagged { "FLAGGED for re-annotation" } else { "within tolerance" }
            );
            if result.flagged {
                return Err(CliError::Data(format!(
                    "annotation disagreement {:.2}% exceeds {:.0}%",
                    100.0 * result.rate,
                    100.0 * vccsa::data::CONSISTENCY_THRESHOLD
                )));
            }
        }
        _ => return Err(CliError::Usage("--validators takes exactly two comment files".into())),
    }
    println!("OK");
    Ok(())
}
