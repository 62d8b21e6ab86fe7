//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! learnability and ablation criteria train 12 desk-size models on the default
//! synthetic corpus and take roughly half an hour on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use ndarray::{array, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use vccsa::data::{
    consistency_check, decode_matrix, encode_matrix, read_matrix, split_corpus, write_matrix, Emotion, Granularity,
    Label, Opinion,
};
use vccsa::model::layers::MultiHeadAttention;
use vccsa::model::temporal::TemporalConv;
use vccsa::model::{load_checkpoint, probabilities, Ablation, ModelKind, SentimentModel, VcCsa};
use vccsa::synthgen::{bayes_ceiling, generate_corpus, GeneratorConfig};
use vccsa::tape::{Graph, Matrix, ParamStore};
use vccsa::trainer::{metrics, read_history, run_once, Dataset, RunResult, TrainConfig};
use vccsa::{ModelConfig, PaddedBatch};

type Verdict = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn vccsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vccsa"))
        .args(args)
        .env_remove("CSMV_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = vccsa(args);
    ensure(out.status.success(), || {
        format!("`vccsa {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim())
    })?;
    Ok(out)
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criterion 1

fn paper_config_smoke(tmp: &Path) -> Verdict {
    let start = Instant::now();
    let data = tmp.join("c1_data");
    let run = tmp.join("c1_run");
    run_ok(&["gen", "--out", path(&data), "--set", "n_videos=25", "--set", "comments_per_video=4"])?;
    run_ok(&["train", "--data", path(&data), "--out", path(&run), "--set", "preset=paper", "--set", "epochs=1"])?;
    let ckpt = run.join("model.ckpt");
    run_ok(&["eval", "--data", path(&data), "--checkpoint", path(&ckpt)])?;
    let elapsed = start.elapsed();
    let c = load_checkpoint(&ckpt).map_err(|e| e.to_string())?.config;
    ensure(
        c.d_video == 768 && c.d_text == 768 && c.d_consensus == 768 && c.scales == 4,
        || format!("checkpoint config is not full width: {c:?}"),
    )?;
    ensure(c.consensus_layers == 1 && c.consensus_tokens == 1, || "expected one consensus layer and token".into())?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:.0?}, limit 10 min"))?;
    Ok(format!(
        "768-wide, 4 scales, 1 layer, 1 token trains and evaluates on 100 comments in {:.0} s (< 600 s); published figures are not reproducible at this scale and metrics are not gated",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 2

const D_RAW: usize = 6;
const VOCAB: usize = 25;

fn random_batch(lens: &[(usize, usize)], seed: u64) -> PaddedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = lens.len();
    let v_max = lens.iter().map(|l| l.0).max().unwrap();
    let t_max = lens.iter().map(|l| l.1).max().unwrap();
    let mut video = Array3::zeros((b, v_max, D_RAW));
    let mut video_mask = Array2::from_elem((b, v_max), false);
    let mut tokens = Array2::zeros((b, t_max));
    let mut token_mask = Array2::from_elem((b, t_max), false);
    for (row, &(v, t)) in lens.iter().enumerate() {
        for f in 0..v {
            video_mask[[row, f]] = true;
            for d in 0..D_RAW {
                video[[row, f, d]] = rng.random_range(-1.0..1.0);
            }
        }
        for j in 0..t {
            token_mask[[row, j]] = true;
            tokens[[row, j]] = rng.random_range(2..VOCAB);
        }
    }
    PaddedBatch {
        comment_ids: (0..b).map(|i| format!("c{i}")).collect(),
        video_ids: (0..b).map(|i| format!("v{i}")).collect(),
        video,
        video_mask,
        tokens,
        token_mask,
        text_features: None,
        opinion_labels: (0..b).map(|i| i % 3).collect(),
        emotion_labels: (0..b).map(|i| i % 8).collect(),
    }
}

fn tiny(ablation: Ablation) -> ModelConfig {
    ModelConfig::tiny(D_RAW, VOCAB).with_ablation(ablation)
}

fn mask_independence() -> Result<f64, String> {
    let model = VcCsa::new(tiny(Ablation::Full), 1).map_err(|e| e.to_string())?;
    let (v, t) = (7, 5);
    let batch = random_batch(&[(v, t)], 2);
    let mut text_changed = batch.clone();
    text_changed.tokens.mapv_inplace(|x| 2 + (x + 5) % (VOCAB - 2));
    let mut video_changed = batch.clone();
    video_changed.video.mapv_inplace(|x| 0.5 - 2.0 * x);
    let mut worst: f64 = 0.0;
    for branch in 0..model.used_scales().len() {
        let out = |b: &PaddedBatch| model.consensus_outputs(b, 0, branch).unwrap();
        let base = out(&batch);
        let rows = |m: &Matrix, r: std::ops::Range<usize>| m.slice(ndarray::s![r, ..]).to_owned();
        let n = base.nrows();
        worst = worst.max(max_abs_diff(&rows(&base, 0..v), &rows(&out(&text_changed), 0..v)));
        worst = worst.max(max_abs_diff(&rows(&base, v + 1..n), &rows(&out(&video_changed), v + 1..n)));
    }
    ensure(worst <= 1e-6, || format!("cross-modal leak {worst:e}"))?;
    Ok(worst)
}

fn normalisations() -> Result<(), String> {
    for ablation in Ablation::ALL {
        let model = VcCsa::new(tiny(ablation), 4).map_err(|e| e.to_string())?;
        let batch = random_batch(&[(9, 6), (3, 2), (12, 1)], 5);
        let (o, e, diags) = model.forward(&batch).map_err(|e| e.to_string())?;
        let close = |s: f64| (s - 1.0).abs() <= 1e-5;
        for p in [probabilities(&o), probabilities(&e)] {
            ensure(p.outer_iter().all(|r| close(r.sum())), || format!("{ablation}: class probabilities"))?;
        }
        for d in &diags {
            for s in &d.scales {
                ensure(s.attention.iter().all(|h| close(h.iter().sum())), || format!("{ablation}: frame attention"))?;
                ensure(s.grounding.iter().all(|&w| w >= 0.0), || format!("{ablation}: negative grounding weight"))?;
                if ablation == Ablation::RawAttentionWeight {
                    ensure(close(s.grounding.iter().sum()), || "raw attention weights do not sum to 1".into())?;
                }
            }
            ensure(d.attn_scale.iter().all(|r| close(r.iter().sum())), || format!("{ablation}: scale attention"))?;
        }
    }
    Ok(())
}

fn padding_invariance() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for ablation in Ablation::ALL {
        let model = VcCsa::new(tiny(ablation), 6).map_err(|e| e.to_string())?;
        let batch = random_batch(&[(8, 6), (5, 3)], 7);
        let (o1, e1) = model.predict(&batch).map_err(|e| e.to_string())?;
        let (o2, e2) = model.predict(&batch.with_extra_padding(9, 4)).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&o1, &o2)).max(max_abs_diff(&e1, &e2));
    }
    ensure(worst <= 1e-5, || format!("padding moved logits by {worst:e}"))?;
    Ok(worst)
}

fn receptive_fields() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let conv = TemporalConv::new(&mut store, "conv", 4, 4, &mut rng);
    for layer in &conv.layers {
        store.get_mut(layer.weight).mapv_inplace(f64::abs);
        store.get_mut(layer.bias.unwrap()).fill(0.1);
    }
    let n = 21;
    let frames = vec![true; n];
    let run = |x: &Matrix| {
        let mut g = Graph::new(&store);
        let v = g.input(x.clone());
        let outs = conv.forward(&mut g, v, &frames);
        outs.iter().map(|&o| g.value(o).clone()).collect::<Vec<_>>()
    };
    let x = Matrix::from_shape_fn((n, 4), |(i, j)| ((i * 5 + j) % 7) as f64 / 7.0);
    let mut bumped = x.clone();
    bumped.row_mut(10).mapv_inplace(|v| v + 0.5);
    for (i, (a, b)) in run(&x).iter().zip(&run(&bumped)).enumerate() {
        for f in 0..n {
            let moved = (0..4).any(|j| (a[[f, j]] - b[[f, j]]).abs() > 1e-12);
            ensure(moved == (f.abs_diff(10) <= i + 1), || format!("scale {} frame {f}", i + 1))?;
        }
    }
    Ok(())
}

fn shape_contracts() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = VcCsa::new(tiny(Ablation::Full), 0).map_err(|e| e.to_string())?;
    let mut lens = vec![(1, 1), (200, 64), (1, 64), (200, 1)];
    lens.extend((0..16).map(|_| (rng.random_range(1..=200), rng.random_range(1..=64))));
    for &(v, t) in &lens {
        let batch = random_batch(&[(v, t)], v as u64 * 100 + t as u64);
        let (o, e, d) = model.forward(&batch).map_err(|e| e.to_string())?;
        ensure(o.dim() == (1, 3) && e.dim() == (1, 8), || format!("logit shapes at ({v}, {t})"))?;
        ensure(o.iter().chain(e.iter()).all(|x| x.is_finite()), || format!("non-finite logits at ({v}, {t})"))?;
        ensure(
            d[0].scales.iter().all(|s| s.grounding.len() == v && s.golden.len() == 16) && d[0].attn_scale.len() == t,
            || format!("diagnostic shapes at ({v}, {t})"),
        )?;
    }
    Ok(lens.len())
}

fn property_suite() -> Verdict {
    let start = Instant::now();
    let leak = mask_independence()?;
    normalisations()?;
    let pad = padding_invariance()?;
    receptive_fields()?;
    let shapes = shape_contracts()?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.0?}, limit 2 min"))?;
    Ok(format!(
        "mask leak {leak:.1e} (<= 1e-6), softmaxes sum to 1, W_g >= 0, padding drift {pad:.1e} (<= 1e-5), 2i+1 windows at 4 scales, {shapes} shape cases up to (200, 64); {:.1} s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 3

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let batch = random_batch(&[(8, 6), (5, 4)], 12);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, ablation) in Ablation::ALL.into_iter().enumerate() {
        let mut model = VcCsa::new(tiny(ablation), 20 + i as u64).map_err(|e| e.to_string())?;
        let (_, grads) = model.loss_and_grad(&batch).map_err(|e| e.to_string())?;
        let ids: Vec<_> = model.params().ids().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(30 + i as u64);
        for _ in 0..24 {
            let id = ids[rng.random_range(0..ids.len())];
            let (rows, cols) = model.params().get(id).dim();
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let original = model.params().get(id)[[r, c]];
            let h = 1e-5;
            model.params_mut().get_mut(id)[[r, c]] = original + h;
            let up = model.loss(&batch).map_err(|e| e.to_string())?;
            model.params_mut().get_mut(id)[[r, c]] = original - h;
            let down = model.loss(&batch).map_err(|e| e.to_string())?;
            model.params_mut().get_mut(id)[[r, c]] = original;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id)[[r, c]];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-5, || format!("worst relative error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.0?}, limit 1 min"))?;
    Ok(format!(
        "{checked} parameters over 5 modes, worst relative error {worst:.1e} (<= 1e-5); {:.1} s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 4

fn brute_force_scores(pred: &[usize], gold: &[usize], c: usize) -> [f64; 4] {
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &g) in pred.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let safe = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = confusion[k][k] as f64;
        let p = safe(tp, (0..c).map(|g| confusion[g][k]).sum::<usize>() as f64);
        let r = safe(tp, confusion[k].iter().sum::<usize>() as f64);
        p_sum += p;
        r_sum += r;
        f_sum += safe(2.0 * p * r, p + r);
    }
    let diag: usize = (0..c).map(|k| confusion[k][k]).sum();
    [safe(diag as f64, pred.len() as f64), f_sum / c as f64, p_sum / c as f64, r_sum / c as f64]
}

fn oracle_equivalence(tmp: &Path) -> Verdict {
    const EXACT: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for names in [Opinion::names(), Emotion::names()] {
        let c = names.len();
        for _ in 0..50 {
            let n = rng.random_range(1..80);
            let used = rng.random_range(1..=c);
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..used)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let m = metrics(&pred, &gold, &names).map_err(|e| e.to_string())?;
            let want = brute_force_scores(&pred, &gold, c);
            let got = [m.micro_f1, m.macro_f1, m.macro_precision, m.macro_recall];
            ensure(got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= EXACT), || {
                format!("metrics {got:?} vs confusion oracle {want:?}")
            })?;
        }
    }

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 1, 1, &mut rng);
    for linear in [&mha.query, &mha.key, &mha.value, &mha.output] {
        *store.get_mut(linear.weight) = Matrix::eye(1);
        store.get_mut(linear.bias.unwrap()).fill(0.0);
    }
    let mut g = Graph::new(&store);
    let x = g.input(array![[0.0], [1.0]]);
    let out = mha.forward(&mut g, x, x, None);
    let e = std::f64::consts::E;
    let att = g.value(out).clone();
    ensure((att[[0, 0]] - 0.5).abs() <= EXACT && (att[[1, 0]] - e / (1.0 + e)).abs() <= EXACT, || {
        format!("attention {att:?} vs hand oracle [0.5, e/(1+e)]")
    })?;
    let logits = g.input(array![[1.0, 2.0, 3.0]]);
    let ce = g.softmax_cross_entropy(logits, 0);
    let want = (1.0 + e + e * e).ln();
    ensure((g.value(ce)[[0, 0]] - want).abs() <= EXACT, || "cross-entropy vs hand oracle".into())?;

    let dir = tmp.join("c4_features");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    for i in 0..20 {
        let (rows, cols) = (rng.random_range(1..40), rng.random_range(1..20));
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1e3f32..1e3));
        let file = dir.join(format!("{i}.csmv"));
        write_matrix(&file, &m).map_err(|e| e.to_string())?;
        let bytes = fs::read(&file).map_err(|e| e.to_string())?;
        let back = read_matrix(&file).map_err(|e| e.to_string())?;
        ensure(back == m && encode_matrix(&back) == bytes, || format!("feature file {i} did not round-trip"))?;
        ensure(decode_matrix(&bytes, "mem").map_err(|e| e.to_string())? == m, || "decode mismatch".into())?;
    }
    Ok("metrics equal the confusion-matrix oracle on 50 cases per schema, attention and cross-entropy match hand values to 1e-9, 20 feature files round-trip byte-identically".into())
}

// ---------------------------------------------------------- criteria 5 and 6

struct Runs {
    text: Vec<RunResult>,
    full: Vec<RunResult>,
    learnability_time: Duration,
    single: Vec<RunResult>,
    last: Vec<RunResult>,
}

fn mean_opinion(runs: &[RunResult]) -> f64 {
    runs.iter().map(|r| r.test.opinion.micro_f1).sum::<f64>() / runs.len() as f64
}

fn per_seed(runs: &[RunResult]) -> String {
    runs.iter().map(|r| format!("{:.3}", r.test.opinion.micro_f1)).collect::<Vec<_>>().join("/")
}

fn train_runs(gen: &GeneratorConfig) -> Result<Runs, String> {
    let synthetic = generate_corpus(gen).map_err(|e| e.to_string())?;
    let split = split_corpus(&synthetic.corpus.index, 0, Granularity::Comment).map_err(|e| e.to_string())?;
    let data = Dataset::with_vocabulary(synthetic.corpus, split).map_err(|e| e.to_string())?;
    let base = ModelConfig::desk(gen.d_raw, 2);
    let cfg = TrainConfig::default();
    let run = |config: &ModelConfig, kind: ModelKind, seed: u64| -> Result<RunResult, String> {
        let t = Instant::now();
        let (_, r) = run_once(&data, config, &cfg, kind, seed).map_err(|e| e.to_string())?;
        eprintln!(
            "  {:<18} seed {seed}: test opinion micro-F1 {:.4} ({:.0} s)",
            if kind == ModelKind::TextOnly { "text only" } else { config.ablation.key() },
            r.test.opinion.micro_f1,
            t.elapsed().as_secs_f64()
        );
        Ok(r)
    };
    let start = Instant::now();
    let text = SEEDS.iter().map(|&s| run(&base, ModelKind::TextOnly, s)).collect::<Result<Vec<_>, _>>()?;
    let full = SEEDS.iter().map(|&s| run(&base, ModelKind::VcCsa, s)).collect::<Result<Vec<_>, _>>()?;
    let learnability_time = start.elapsed();
    let ablated = |mode: Ablation| {
        let config = base.clone().with_ablation(mode);
        SEEDS.iter().map(|&s| run(&config, ModelKind::VcCsa, s)).collect::<Result<Vec<_>, _>>()
    };
    let single = ablated(Ablation::OnlySingleLayer)?;
    let last = ablated(Ablation::OnlyLastLayer)?;
    Ok(Runs {
        text,
        full,
        learnability_time,
        single,
        last,
    })
}

fn learnability(gen: &GeneratorConfig, runs: &Runs) -> Verdict {
    let ceiling = bayes_ceiling(gen);
    let text = mean_opinion(&runs.text);
    let full = mean_opinion(&runs.full);
    let minutes = runs.learnability_time.as_secs_f64() / 60.0;
    let summary = format!(
        "text-only {text:.4} [{}] (<= {:.2}), VC-CSA {full:.4} [{}] (>= 0.85), gap {:.4} (>= 0.12), {minutes:.1} min (<= 30)",
        per_seed(&runs.text),
        ceiling + 0.03,
        per_seed(&runs.full),
        full - text
    );
    let ok = text <= ceiling + 0.03 && full >= 0.85 && full - text >= 0.12 && minutes <= 30.0;
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn ablation_ordering(gen: &GeneratorConfig, runs: &Runs) -> Verdict {
    let full = mean_opinion(&runs.full);
    let single = mean_opinion(&runs.single);
    let last = mean_opinion(&runs.last);
    let summary = format!(
        "whole-video share {:.2}; full {full:.4} vs only single layer {single:.4} [{}] and only last layer {last:.4} [{}] (ties within 0.01)",
        gen.whole_video_fraction,
        per_seed(&runs.single),
        per_seed(&runs.last)
    );
    if gen.whole_video_fraction >= 0.2 && full >= single - 0.01 && full >= last - 0.01 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// ---------------------------------------------------------------- criterion 7

fn determinism(tmp: &Path) -> Verdict {
    let data = tmp.join("c7_data");
    run_ok(&["gen", "--out", path(&data), "--set", "n_videos=30", "--set", "comments_per_video=5"])?;
    let train = |name: &str| -> Result<PathBuf, String> {
        let out = tmp.join(name);
        run_ok(&[
            "train", "--data", path(&data), "--out", path(&out), "--seed", "7", "--set", "preset=tiny", "--set",
            "epochs=3",
        ])?;
        Ok(out.join("history.jsonl"))
    };
    let a = read_history(&train("c7_a")?).map_err(|e| e.to_string())?;
    let b = read_history(&train("c7_b")?).map_err(|e| e.to_string())?;
    ensure(a.len() == b.len() && a.len() == 3, || "history lengths differ".into())?;
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in [
            (x.train_loss, y.train_loss),
            (x.dev_loss, y.dev_loss),
            (x.dev_opinion_micro_f1, y.dev_opinion_micro_f1),
            (x.dev_opinion_macro_f1, y.dev_opinion_macro_f1),
            (x.dev_emotion_micro_f1, y.dev_emotion_micro_f1),
            (x.dev_emotion_macro_f1, y.dev_emotion_macro_f1),
        ] {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("dev histories differ by {worst:e}"))?;

    let gen_twice: Vec<PathBuf> = ["c7_g1", "c7_g2"].iter().map(|n| tmp.join(n)).collect();
    for dir in &gen_twice {
        run_ok(&["gen", "--out", path(dir), "--seed", "11", "--set", "n_videos=40"])?;
    }
    let files = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    };
    let (g1, g2) = (files(&gen_twice[0]), files(&gen_twice[1]));
    ensure(g1 == g2, || "generated corpora differ".into())?;
    Ok(format!(
        "two seeded trainings agree to {worst:.1e} over 3 epochs of dev metrics; two generations are byte-identical over {} files",
        g1.len()
    ))
}

// ---------------------------------------------------------------- criterion 8

fn dataset_qa(tmp: &Path) -> Verdict {
    let fresh = |name: &str| -> Result<PathBuf, String> {
        let dir = tmp.join(name);
        run_ok(&["gen", "--out", path(&dir), "--set", "n_videos=5", "--set", "comments_per_video=4"])?;
        Ok(dir)
    };
    let edit_line = |dir: &Path, line: usize, f: &dyn Fn(&mut serde_json::Value)| {
        let file = dir.join("comments.jsonl");
        let text = fs::read_to_string(&file).unwrap();
        let lines: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                if i == line {
                    f(&mut v);
                }
                v.to_string()
            })
            .collect();
        fs::write(&file, lines.join("\n") + "\n").unwrap();
    };
    let flagged = |dir: &Path, needles: &[&str]| -> Result<String, String> {
        let out = vccsa(&["check", "--data", path(dir)]);
        let err = String::from_utf8_lossy(&out.stderr).trim().to_string();
        ensure(out.status.code() == Some(3), || format!("check exited {:?}: {err}", out.status.code()))?;
        ensure(needles.iter().all(|n| err.contains(n)), || format!("offender not named in {err:?}"))?;
        Ok(err)
    };

    let dangling = fresh("c8_dangling")?;
    edit_line(&dangling, 6, &|v| v["video_id"] = "v77777".into());
    flagged(&dangling, &["v77777", "v00001_c02"])?;

    let label = fresh("c8_label")?;
    edit_line(&label, 3, &|v| v["opinion"] = "ambivalent".into());
    flagged(&label, &["ambivalent", "line 4"])?;

    let truncated = fresh("c8_truncated")?;
    let file = truncated.join("features").join("v00002.csmv");
    let bytes = fs::read(&file).map_err(|e| e.to_string())?;
    fs::write(&file, &bytes[..bytes.len() / 2]).map_err(|e| e.to_string())?;
    flagged(&truncated, &["v00002.csmv", "truncated"])?;

    let labels = |bad: usize| -> Vec<u8> { (0..20).map(|i| u8::from(i < bad)).collect() };
    let original = labels(0);
    let high = consistency_check(&original, &labels(3), &original).map_err(|e| e.to_string())?;
    let low = consistency_check(&original, &labels(2), &original).map_err(|e| e.to_string())?;
    ensure(high.flagged && (high.rate - 0.15).abs() < 1e-12, || format!("0.15 case: {high:?}"))?;
    ensure(!low.flagged && (low.rate - 0.10).abs() < 1e-12, || format!("0.10 case: {low:?}"))?;
    Ok("dangling video, unknown label and truncated feature file each exit 3 naming the offender; 3/20 disagreements (0.15) flagged, 2/20 (0.10) not".into())
}

// ------------------------------------------------------------------- driver

fn report(results: &mut Vec<(u8, bool, String)>, n: u8, verdict: Verdict) {
    let (ok, text) = match verdict {
        Ok(t) => (true, t),
        Err(t) => (false, t),
    };
    println!("[{}] criterion {n}: {text}", if ok { "PASS" } else { "FAIL" });
    results.push((n, ok, text));
}

fn main() -> ExitCode {
    // libtest-style arguments (filters, --list) are accepted and ignored except --list.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let tmp = TempDir::new().expect("temp dir");
    let mut results = Vec::new();
    report(&mut results, 2, property_suite());
    report(&mut results, 3, gradient_check());
    report(&mut results, 4, oracle_equivalence(tmp.path()));
    report(&mut results, 8, dataset_qa(tmp.path()));
    report(&mut results, 7, determinism(tmp.path()));
    report(&mut results, 1, paper_config_smoke(tmp.path()));
    let gen = GeneratorConfig::default();
    match train_runs(&gen) {
        Ok(runs) => {
            report(&mut results, 5, learnability(&gen, &runs));
            report(&mut results, 6, ablation_ordering(&gen, &runs));
        }
        Err(e) => {
            report(&mut results, 5, Err(e.clone()));
            report(&mut results, 6, Err(e));
        }
    }
    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (n, ok, _) in &results {
        println!("  criterion {n}: {}", if *ok { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|r| r.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
