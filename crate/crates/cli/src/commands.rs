//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use rfmsm_core::eval::{evaluate, export_embeddings, read_embeddings, sweep, write_embeddings, write_heatmap_csv, SweepSetup};
use rfmsm_core::fewshot::{load_canonical, prepare_domain_pair, sample_nshot, DatasetDescriptor, DomainPair, ShotSpec};
use rfmsm_core::iqcore::{decode_dataset, write_canonical, SignalDataset, DATASET_MAGIC};
use rfmsm_core::models::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
use rfmsm_core::siggen::generate_corpus;
use rfmsm_core::train::{finetune, pretrain, train_baseline, FinetuneOutcome, LogRecord};

use crate::config::ExperimentConfig;
use crate::{plot, Cli, Command, Global, Invalid};

struct Run {
    cfg: ExperimentConfig,
    hash: String,
    global: Global,
}

impl Run {
    fn new(global: Global) -> anyhow::Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = global.seed_override {
            cfg.override_seeds(seed);
        }
        let hash = cfg.hash();
        Ok(Self { cfg, hash, global })
    }

    fn out(&self) -> anyhow::Result<PathBuf> {
        self.global
            .out
            .clone()
            .or_else(|| self.cfg.paths.out.clone())
            .ok_or_else(|| Invalid("no output path: pass --out or set paths.out".into()).into())
    }
}

fn input(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    let path = flag
        .or_else(|| fallback.clone())
        .ok_or_else(|| Invalid(format!("no {what} given: pass --{what} or set paths.{what}")))?;
    if !path.exists() {
        return Err(Invalid(format!("{what} file {} does not exist", path.display())).into());
    }
    Ok(path)
}

fn load_dataset(path: &Path) -> anyhow::Result<SignalDataset> {
    load_canonical(path).with_context(|| format!("loading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    read_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// JSONL training log next to an output file.
struct TrainLog {
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl TrainLog {
    fn create(artifact: &Path) -> anyhow::Result<Self> {
        let path = with_suffix(artifact, ".log.jsonl");
        Ok(Self {
            out: BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?),
            error: None,
        })
    }

    fn record(&mut self, r: &LogRecord) {
        if self.error.is_none() {
            let line = serde_json::to_string(r).expect("plain record");
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
            }
        }
    }

    fn finish(mut self) -> anyhow::Result<()> {
        if let Some(e) = self.error {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let global = cli.global;
    match cli.command {
        Command::Plot { inputs } => {
            let out = global.out.clone().ok_or_else(|| Invalid("plot needs --out".into()))?;
            plot::run(&inputs, &out)
        }
        Command::Inspect { file } => inspect(&file),
        command => {
            let run = Run::new(global)?;
            match command {
                Command::Generate { set } => generate(&run, &set),
                Command::Pretrain { corpus } => pretrain_cmd(&run, corpus),
                Command::Finetune { checkpoint, pool } => finetune_cmd(&run, checkpoint, pool),
                Command::Baseline { pool } => baseline_cmd(&run, pool),
                Command::Evaluate { checkpoint, test } => evaluate_cmd(&run, checkpoint, test),
                Command::Sweep { corpus, pool, test } => sweep_cmd(&run, corpus, pool, test),
                Command::Embed { checkpoint, data } => embed_cmd(&run, checkpoint, data),
                Command::Plot { .. } | Command::Inspect { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn generate(run: &Run, set_name: &str) -> anyhow::Result<()> {
    let gen = &run.cfg.generator;
    let set = gen.sets.get(set_name).ok_or_else(|| {
        let known: Vec<_> = gen.sets.keys().cloned().collect();
        Invalid(format!("unknown set {set_name:?}; config defines {known:?}"))
    })?;
    let mut waveform = gen.waveform.clone();
    waveform.name = format!("{}-{set_name}", waveform.name);
    let mut ds = generate_corpus(set.n_frames_per_cell, &gen.snr_grid, set.seed, &waveform)?;
    if !set.labeled {
        ds = ds.unlabeled();
    }
    let out = run.out()?;
    ensure_parent(&out)?;
    let provenance = serde_json::json!({"config_hash": run.hash, "seed": set.seed, "set": set_name});
    write_canonical(&out, &ds, Some(provenance))?;
    println!("wrote {} frames of length {} to {}", ds.len(), ds.frame_len(), out.display());
    Ok(())
}

fn pretrain_cmd(run: &Run, corpus: Option<PathBuf>) -> anyhow::Result<()> {
    let corpus = load_dataset(&input(corpus, &run.cfg.paths.corpus, "corpus")?)?;
    let out = run.out()?;
    ensure_parent(&out)?;
    let mut log = TrainLog::create(&out)?;
    let result = pretrain(&corpus, &run.cfg.pretrain_config(), &run.hash, &mut |r| log.record(r))?;
    log.finish()?;
    write_checkpoint(&out, &result.checkpoint)?;
    let best = &result.history[result.best_epoch - 1];
    println!(
        "best epoch {} of {}: val loss {:.6}, test loss {:.6}; wrote {}",
        result.best_epoch,
        result.history.len(),
        best.val,
        result.test_loss,
        out.display()
    );
    Ok(())
}

/// Draws the n-shot set and keeps a copy next to the output for audit.
fn draw_shots(run: &Run, pool: Option<PathBuf>, out: &Path) -> anyhow::Result<SignalDataset> {
    let pool = load_dataset(&input(pool, &run.cfg.paths.pool, "pool")?)?;
    let shots = sample_nshot(&pool, &ShotSpec::new(run.cfg.finetune.n_shots, run.cfg.seeds.shots)?)?;
    let provenance = serde_json::json!({"config_hash": run.hash, "seed": run.cfg.seeds.shots, "n_shots": run.cfg.finetune.n_shots});
    write_canonical(with_suffix(out, ".shots.rfmsm"), &shots, Some(provenance))?;
    Ok(shots)
}

fn finish_classifier(out: &Path, result: FinetuneOutcome, log: TrainLog) -> anyhow::Result<()> {
    log.finish()?;
    write_checkpoint(out, &result.checkpoint)?;
    let last = result.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs: train loss {:.6}, train accuracy {:.4}; wrote {}",
        last.epoch,
        last.loss,
        last.accuracy,
        out.display()
    );
    Ok(())
}

fn finetune_cmd(run: &Run, checkpoint: Option<PathBuf>, pool: Option<PathBuf>) -> anyhow::Result<()> {
    let pre = load_checkpoint(&input(checkpoint, &run.cfg.paths.checkpoint, "checkpoint")?)?;
    let out = run.out()?;
    ensure_parent(&out)?;
    let shots = draw_shots(run, pool, &out)?;
    let extra = &pre.provenance.extra;
    let pair = DomainPair {
        source: DatasetDescriptor {
            name: extra["corpus"].as_str().unwrap_or("unknown").to_string(),
            frame_len: pre.frame_len.unwrap_or(0),
            t_res_us: extra["t_res_us"].as_f64().unwrap_or(f64::NAN),
            n_cls: 0,
        },
        target: DatasetDescriptor::from(shots.meta()),
    };
    let bundle = prepare_domain_pair(&pair, &pre, run.cfg.seeds.finetune)?;
    let mut log = TrainLog::create(&out)?;
    let mut result = finetune(&pre, &shots, &run.cfg.finetune_config(), &run.hash, &mut |r| log.record(r))?;
    result.checkpoint.provenance.extra["domains"] = bundle.provenance;
    finish_classifier(&out, result, log)
}

fn baseline_cmd(run: &Run, pool: Option<PathBuf>) -> anyhow::Result<()> {
    let out = run.out()?;
    ensure_parent(&out)?;
    let shots = draw_shots(run, pool, &out)?;
    let mut log = TrainLog::create(&out)?;
    let result = train_baseline(
        &shots,
        &run.cfg.finetune_config(),
        &run.cfg.pretrain.arch,
        &run.hash,
        &mut |r| log.record(r),
    )?;
    finish_classifier(&out, result, log)
}

fn evaluate_cmd(run: &Run, checkpoint: Option<PathBuf>, test: Option<PathBuf>) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&input(checkpoint, &run.cfg.paths.checkpoint, "checkpoint")?)?;
    let test = load_dataset(&input(test, &run.cfg.paths.test, "test")?)?;
    let report = evaluate(&ckpt, &test, &run.hash)?;
    let out = run.out()?;
    ensure_parent(&out)?;
    std::fs::write(&out, report.to_json()? + "\n")?;
    println!(
        "accuracy {:.4}, macro F1 {:.4} on {} frames; wrote {}",
        report.accuracy,
        report.macro_f1,
        report.n_frames,
        out.display()
    );
    Ok(())
}

fn sweep_cmd(
    run: &Run,
    corpus: Option<PathBuf>,
    pool: Option<PathBuf>,
    test: Option<PathBuf>,
) -> anyhow::Result<()> {
    let corpus = load_dataset(&input(corpus, &run.cfg.paths.corpus, "corpus")?)?;
    let pool = load_dataset(&input(pool, &run.cfg.paths.pool, "pool")?)?;
    let test = load_dataset(&input(test, &run.cfg.paths.test, "test")?)?;
    let out = run.out()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let setup = SweepSetup {
        source: &corpus,
        target_pool: &pool,
        test: &test,
        n_shots: run.cfg.finetune.n_shots,
        pretrain: run.cfg.pretrain.clone(),
        finetune: run.cfg.finetune.train.clone(),
        seeds: run.cfg.seeds.sweep.clone(),
        jobs: if run.global.deterministic { 1 } else { run.global.jobs },
        config_hash: run.hash.clone(),
    };
    let result = sweep(&setup, &run.cfg.sweep)?;
    std::fs::write(out.join("heatmap.csv"), write_heatmap_csv(&result))?;
    std::fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    match result.best {
        Some(b) => {
            let c = &result.cells[b];
            println!(
                "best cell {} / {}: mean accuracy {:.4}; {failed} failed cells",
                c.strategy,
                c.ratio,
                c.seed_mean.unwrap_or(f64::NAN)
            );
        }
        None => println!("every cell failed"),
    }
    if failed == result.cells.len() {
        anyhow::bail!("all {failed} sweep cells failed");
    }
    Ok(())
}

fn embed_cmd(run: &Run, checkpoint: Option<PathBuf>, data: PathBuf) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&input(checkpoint, &run.cfg.paths.checkpoint, "checkpoint")?)?;
    let ds = load_dataset(&input(Some(data), &None, "data")?)?;
    let emb = export_embeddings(&ckpt, &ds, run.cfg.eval.pca_dims, run.cfg.seeds.pretrain)?;
    let out = run.out()?;
    ensure_parent(&out)?;
    write_embeddings(&out, &emb)?;
    let kept: f64 = emb.explained_variance_ratio.iter().sum();
    println!(
        "{} rows x {} dims, {:.1}% variance kept; wrote {}",
        emb.rows,
        emb.dim,
        100.0 * kept,
        out.display()
    );
    Ok(())
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(Invalid(format!("{} does not exist", path.display())).into());
    }
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        let c = Checkpoint::decode(&bytes)?;
        let extra = &c.provenance.extra;
        println!("kind: {:?}", c.kind);
        println!("architecture: {}", serde_json::to_string(&c.arch)?);
        println!("epoch: {}", c.provenance.epoch);
        if let Some(v) = extra.get("val_loss").and_then(|v| v.as_f64()) {
            println!("val loss: {v}");
        }
        println!("parameters: {} tensors, {} values", c.params.len(), c.params.numel());
        if let Some(n) = c.n_cls() {
            println!("classes: {n}");
        }
        if let Some(len) = c.frame_len {
            println!("frame length: {len}");
        }
        println!("seed: {}", c.provenance.seed);
        println!("config hash: {}", c.provenance.config_hash);
    } else if bytes.starts_with(DATASET_MAGIC) {
        let (ds, header) = decode_dataset(&bytes)?;
        println!("dataset: {}", ds.meta().name);
        println!("frames: {} of length {}", ds.len(), ds.frame_len());
        println!("classes: {} {:?}", ds.meta().n_cls, ds.meta().class_names);
        println!("labeled: {}", ds.is_labeled());
        println!("sample spacing: {} us", ds.meta().t_res_us);
        if let Some(p) = header.provenance {
            println!("provenance: {p}");
        }
    } else {
        let e = read_embeddings(path).map_err(|_| Invalid(format!("{}: unrecognized file", path.display())))?;
        println!("embeddings: {} rows x {} dims", e.rows, e.dim);
        println!("explained variance: {:?}", e.explained_variance_ratio);
    }
    Ok(())
}
