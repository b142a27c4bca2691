use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gsfm::dataio::{load_davis_dir, read_label_png, write_davis_dir, write_label_png, DavisOptions, VideoSample};
use gsfm::experiment::{ablation_svg, default_jobs, grid, medians, parallel_map, predict_sequence, run_grid, write_rows_csv, Benchmark};
use gsfm::metrics::{evaluate, MetricsReport, SequenceLabels};
use gsfm::model::{load_checkpoint, save_checkpoint, CheckpointState, Gsfm, ModelError, TrainSample, Trainer};
use gsfm::tensor::{save_tensor, DType};
use gsfm::verify;
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::{self, write_json};
use crate::{fail, CliError, CliResult, ConfigArgs};

fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.overrides)
}

fn jobs_or_default(jobs: usize) -> usize {
    if jobs == 0 {
        default_jobs()
    } else {
        jobs
    }
}

// ------------------------------------------------------------------ gen-data

pub fn gen_data(out: &Path, force: bool, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    if out.exists() {
        if !force {
            return Err(CliError::Usage(format!("{} exists; pass --force to replace it", out.display())));
        }
        fs::remove_dir_all(out).map_err(fail)?;
    }
    let start = Instant::now();
    let bench = cfg.data.build().map_err(fail)?;
    let generator = serde_json::to_value(&cfg.data).map_err(fail)?;
    let train = write_davis_dir(&out.join("train"), &bench.train, "train", generator.clone()).map_err(fail)?;
    let val = write_davis_dir(&out.join("val"), &bench.eval, "val", generator).map_err(fail)?;
    write_json(&out.join("dataset.json"), &cfg.data)?;
    println!(
        "wrote {} training and {} validation sequences to {} in {:.1}s",
        train.sequences.len(),
        val.sequences.len(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// A split directory: `<data>/<split>` when present, `<data>` itself when it
/// is already a DAVIS root.
fn split_root(data: &Path, split: &str) -> CliResult<PathBuf> {
    let nested = data.join(split);
    if nested.join("JPEGImages").is_dir() {
        Ok(nested)
    } else if data.join("JPEGImages").is_dir() {
        Ok(data.to_path_buf())
    } else {
        Err(CliError::Usage(format!("{} holds neither {split}/JPEGImages nor JPEGImages", data.display())))
    }
}

/// Loads a split. With `resize`, sequences whose frames differ from `size`
/// are centre-cropped and resized (labels included); otherwise they load as stored.
fn load_split(data: &Path, split: &str, size: (usize, usize), resize: bool) -> CliResult<Vec<VideoSample>> {
    let root = split_root(data, split)?;
    let videos = load_davis_dir(&root, &DavisOptions::default()).map_err(fail)?;
    if !resize || videos.iter().all(|v| (v.height, v.width) == size) {
        return Ok(videos);
    }
    load_davis_dir(&root, &DavisOptions { resolution: Some(size) }).map_err(fail)
}

// --------------------------------------------------------------------- train

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub stop_at: Option<usize>,
    pub evaluate: bool,
    pub cfg: ConfigArgs,
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: Option<f64>,
    seconds: f64,
    validation: Option<MetricsReport>,
}

const LOG_HEADER: &str = "step,stage,lr,keep_fraction,loss,mask_loss,boundary_loss,seconds";

fn checkpoint(dir: &Path, trainer: &Trainer) -> CliResult {
    let state = CheckpointState {
        step: trainer.step,
        train_config: Some(trainer.config.clone()),
    };
    save_checkpoint(dir, &trainer.model, Some(trainer.optimizer.state()), &state, DType::Float64).map_err(fail)
}

/// Writes the batch of a failed step (usually a non-finite value) next to a short report.
fn dump_batch(dir: &Path, trainer: &Trainer, batch: &[TrainSample], error: &ModelError) -> CliResult {
    fs::create_dir_all(dir).map_err(fail)?;
    for (i, s) in batch.iter().enumerate() {
        for t in 0..3 {
            save_tensor(&dir.join(format!("sample{i}_frame{t}")), &s.frames[t], DType::Float64).map_err(fail)?;
            let (h, w) = (s.frames[t].shape()[1], s.frames[t].shape()[2]);
            write_label_png(&dir.join(format!("sample{i}_labels{t}.png")), h, w, &s.labels[t]).map_err(fail)?;
        }
    }
    let report = serde_json::json!({
        "step": trainer.step,
        "error": error.to_string(),
        "lr": trainer.config.lr_at(trainer.step),
        "keep_fraction": trainer.config.bootstrap.keep_fraction(trainer.step, trainer.config.total_steps()),
        "batch_size": batch.len(),
    });
    write_json(&dir.join("report.json"), &report)
}

pub fn train(args: &TrainArgs) -> CliResult {
    let mut cfg = load_config(&args.cfg)?;
    let mut trainer = match &args.resume {
        None => Trainer::new(Gsfm::new(cfg.seeded_model()).map_err(fail)?, cfg.seeded_train()).map_err(fail)?,
        Some(dir) => {
            let (model, optimizer, state) = load_checkpoint(dir).map_err(|e| CliError::Usage(format!("cannot resume from {}: {e}", dir.display())))?;
            let tc = state.train_config.unwrap_or_else(|| cfg.seeded_train());
            let mut t = Trainer::new(model, tc).map_err(fail)?;
            if let Some(o) = optimizer {
                t.optimizer.load_state(o).map_err(fail)?;
            }
            t.step = state.step;
            // The snapshot describes what actually runs.
            cfg.seed = t.config.seed;
            cfg.model = t.model.config.clone();
            cfg.train = t.config.clone();
            t
        }
    };
    let videos = load_split(&args.data, "train", cfg.model.input_size, true)?;
    if videos.is_empty() {
        return Err(CliError::Usage(format!("no training sequences under {}", args.data.display())));
    }
    rundir::init(&args.out, "train", &cfg)?;

    let log_path = args.out.join("train_log.csv");
    let fresh = !log_path.exists() || args.resume.is_none();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(fail)?;
    if fresh {
        writeln!(log, "{LOG_HEADER}").map_err(fail)?;
    }

    let total = trainer.config.total_steps();
    let end = args.stop_at.map_or(total, |s| s.min(total));
    println!(
        "training {} parameters on {} sequences, steps {}..{end} of {total}",
        gsfm::nn::Module::num_params(&trainer.model),
        videos.len(),
        trainer.step
    );
    let start = Instant::now();
    let mut last = None;
    while trainer.step < end {
        let step = trainer.step;
        let stage = if trainer.is_pretraining() { "pretrain" } else { "main" };
        let lr = trainer.config.lr_at(step);
        let kf = trainer.config.bootstrap.keep_fraction(step, total);
        let batch = trainer.make_batch(&videos).map_err(fail)?;
        let losses = match trainer.train_step(&batch) {
            Ok(l) => l,
            // Non-finite values can surface in the loss check or earlier, in
            // a memory read; either way the batch is kept for inspection.
            Err(e) => {
                let dump = args.out.join("nan_dump");
                dump_batch(&dump, &trainer, &batch, &e)?;
                return Err(CliError::Failure(format!("{e}; batch written to {}", dump.display())));
            }
        };
        writeln!(
            log,
            "{step},{stage},{lr},{kf},{},{},{},{:.3}",
            losses.total,
            losses.mask,
            losses.boundary,
            start.elapsed().as_secs_f64()
        )
        .map_err(fail)?;
        last = Some(losses.total);
        if step % 25 == 0 || trainer.step == end {
            println!("step {step:>6} {stage:<8} loss {:.5} (mask {:.5}, boundary {:.5})", losses.total, losses.mask, losses.boundary);
        }
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 && trainer.step < end {
            checkpoint(&args.out.join("checkpoints").join(format!("step_{:06}", trainer.step)), &trainer)?;
        }
    }
    log.flush().map_err(fail)?;
    checkpoint(&args.out.join("checkpoint"), &trainer)?;

    let validation = if args.evaluate && split_root(&args.data, "val").is_ok_and(|r| r != split_root(&args.data, "train").unwrap_or_default()) {
        let val = load_split(&args.data, "val", cfg.model.input_size, true)?;
        let preds = parallel_map(&val, jobs_or_default(cfg.eval.jobs), |v| predict_sequence(&trainer.model, v)).map_err(fail)?;
        let gts: Vec<SequenceLabels> = val.iter().map(VideoSample::to_sequence_labels).collect();
        let report = evaluate(&preds, &gts, cfg.eval.tolerance).map_err(fail)?;
        println!("validation J {:.4}  F {:.4}  J&F {:.4}", report.global.j, report.global.f, report.global.jf);
        Some(report)
    } else {
        None
    };
    write_json(
        &args.out.join("metrics.json"),
        &TrainSummary {
            steps: trainer.step,
            final_loss: last,
            seconds: start.elapsed().as_secs_f64(),
            validation,
        },
    )?;
    println!("run written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------- eval

pub struct EvalArgs {
    pub data: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub save_masks: bool,
    pub resize: bool,
    pub cfg: ConfigArgs,
}

fn load_model(dir: &Path) -> CliResult<Gsfm> {
    load_checkpoint(dir)
        .map(|(m, _, _)| m)
        .map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", dir.display())))
}

fn check_size(model: &Gsfm, videos: &[VideoSample]) -> CliResult {
    let (h, w) = model.config.input_size;
    match videos.iter().find(|v| (v.height, v.width) != (h, w)) {
        Some(v) => Err(CliError::Failure(format!("checkpoint expects {h}x{w} frames, sequence `{}` is {}x{}", v.name, v.height, v.width))),
        None => Ok(()),
    }
}

/// Label maps of `video` as written by `write_masks`: palette indices mapped back to object ids.
fn read_predictions(dir: &Path, video: &VideoSample) -> CliResult<SequenceLabels> {
    let mut lookup = [0u8; 256];
    for (k, &id) in video.palette_ids.iter().enumerate() {
        lookup[id as usize] = k as u8 + 1;
    }
    let frames = (0..video.len())
        .map(|t| {
            let path = dir.join(&video.name).join(format!("{t:05}.png"));
            let (h, w, raw) = read_label_png(&path).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
            if (h, w) != (video.height, video.width) {
                return Err(CliError::Failure(format!("{}: {h}x{w} mask for a {}x{} sequence", path.display(), video.height, video.width)));
            }
            Ok(Some(raw.into_iter().map(|v| lookup[v as usize]).collect()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SequenceLabels {
        name: video.name.clone(),
        height: video.height,
        width: video.width,
        frames,
    })
}

fn write_masks(dir: &Path, video: &VideoSample, pred: &SequenceLabels) -> CliResult {
    let seq = dir.join(&video.name);
    fs::create_dir_all(&seq).map_err(fail)?;
    for (t, labels) in pred.frames.iter().enumerate() {
        let Some(labels) = labels else { continue };
        let raw: Vec<u8> = labels
            .iter()
            .map(|&l| if l == 0 { 0 } else { video.palette_ids.get(l as usize - 1).copied().unwrap_or(l) })
            .collect();
        write_label_png(&seq.join(format!("{t:05}.png")), pred.height, pred.width, &raw).map_err(fail)?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let cfg = load_config(&args.cfg)?;
    let jobs = jobs_or_default(args.jobs.unwrap_or(cfg.eval.jobs));
    let start = Instant::now();
    let (videos, preds) = match (&args.checkpoint, &args.predictions) {
        (Some(ckpt), _) => {
            let model = load_model(ckpt)?;
            let videos = load_split(&args.data, "val", model.config.input_size, args.resize)?;
            check_size(&model, &videos)?;
            let preds = parallel_map(&videos, jobs, |v| predict_sequence(&model, v)).map_err(fail)?;
            (videos, preds)
        }
        (None, Some(dir)) => {
            let root = split_root(&args.data, "val")?;
            let videos = load_davis_dir(&root, &DavisOptions::default()).map_err(fail)?;
            let preds = videos.iter().map(|v| read_predictions(dir, v)).collect::<CliResult<Vec<_>>>()?;
            (videos, preds)
        }
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --predictions".into())),
    };
    if videos.is_empty() {
        return Err(CliError::Usage(format!("no sequences under {}", args.data.display())));
    }
    let gts: Vec<SequenceLabels> = videos.iter().map(VideoSample::to_sequence_labels).collect();
    let report = evaluate(&preds, &gts, cfg.eval.tolerance).map_err(fail)?;

    rundir::init(&args.out, "eval", &cfg)?;
    fs::write(args.out.join("metrics.json"), report.to_json() + "\n").map_err(fail)?;
    report.write_csv(fs::File::create(args.out.join("metrics.csv")).map_err(fail)?).map_err(fail)?;
    if args.save_masks || cfg.eval.save_masks {
        for (v, p) in videos.iter().zip(&preds) {
            write_masks(&args.out.join("masks"), v, p)?;
        }
    }
    println!(
        "{} sequences, {} objects: J {:.4}  F {:.4}  J&F {:.4}  ({:.1}s)",
        videos.len(),
        report.num_objects,
        report.global.j,
        report.global.f,
        report.global.jf,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

// --------------------------------------------------------------------- infer

pub fn infer(checkpoint: &Path, input: &Path, only: &[String], out: &Path, jobs: Option<usize>, resize: bool) -> CliResult {
    let model = load_model(checkpoint)?;
    let root = split_root(input, "val")?;
    let mut videos = load_split(input, "val", model.config.input_size, resize)?;
    if !only.is_empty() {
        if let Some(missing) = only.iter().find(|n| !videos.iter().any(|v| &v.name == *n)) {
            return Err(CliError::Usage(format!("no sequence `{missing}` under {}", root.display())));
        }
        videos.retain(|v| only.contains(&v.name));
    }
    check_size(&model, &videos)?;
    let preds = parallel_map(&videos, jobs_or_default(jobs.unwrap_or(0)), |v| predict_sequence(&model, v)).map_err(fail)?;
    for (v, p) in videos.iter().zip(&preds) {
        write_masks(out, v, p)?;
    }
    println!("wrote masks for {} sequences to {}", videos.len(), out.display());
    Ok(())
}

// -------------------------------------------------------------------- ablate

#[derive(Serialize)]
struct AblationSummary {
    rows: Vec<gsfm::experiment::AblationRow>,
    medians: std::collections::BTreeMap<String, gsfm::metrics::Scores>,
    failures: Vec<String>,
}

pub fn ablate(data: Option<&Path>, out: &Path, jobs: Option<usize>, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args)?;
    let variants = cfg.ablation.resolve_variants()?;
    let bench = match data {
        Some(d) => Benchmark {
            train: load_split(d, "train", cfg.model.input_size, true)?,
            eval: load_split(d, "val", cfg.model.input_size, true)?,
        },
        None => cfg.data.build().map_err(fail)?,
    };
    let cells = grid(&variants, &cfg.ablation.seeds);
    let jobs = jobs_or_default(jobs.unwrap_or(0));
    rundir::init(out, "ablate", &cfg)?;
    println!("{} variants x {} seeds on {jobs} thread(s)", variants.len(), cfg.ablation.seeds.len());
    let results = run_grid(&cells, &cfg.model, &cfg.ablation.train, &bench, jobs, |cell, r| match r {
        Ok(row) => println!("{:<14} seed {:<3} J {:.4}  F {:.4}  J&F {:.4}  ({:.0}s)", cell.variant.name, cell.seed, row.j, row.f, row.jf, row.seconds),
        Err(e) => println!("{:<14} seed {:<3} failed: {e}", cell.variant.name, cell.seed),
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(format!("{} seed {}: {e}", cell.variant.name, cell.seed)),
        }
    }
    write_rows_csv(&rows, fs::File::create(out.join("ablation.csv")).map_err(fail)?).map_err(fail)?;
    let order: Vec<String> = variants.iter().map(|v| v.name.clone()).collect();
    fs::write(out.join("ablation.svg"), ablation_svg(&rows, &order)).map_err(fail)?;
    let summary = AblationSummary {
        medians: medians(&rows),
        rows,
        failures,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    println!("\nmedian over seeds");
    for name in &order {
        if let Some(s) = summary.medians.get(name) {
            println!("{name:<14} J {:.4}  F {:.4}  J&F {:.4}", s.j, s.f, s.jf);
        }
    }
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{} grid cells failed", summary.failures.len())))
    }
}

// -------------------------------------------------------------------- verify

pub fn verify() -> CliResult {
    let checks = verify::run_all();
    println!("{:<10} {:<40} {:>10} {:>10}  result", "group", "check", "error", "tolerance");
    for c in &checks {
        let tol = if c.tolerance <= f64::MIN_POSITIVE {
            "exact".to_string()
        } else {
            format!("{:.0e}", c.tolerance)
        };
        println!("{:<10} {:<40} {:>10.2e} {:>10}  {}", c.group, c.name, c.error, tol, if c.passed() { "pass" } else { "FAIL" });
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("\n{} checks, {failed} failed", checks.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{failed} verification checks failed")))
    }
}
