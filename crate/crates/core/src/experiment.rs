//! Ablation runs on the synthetic benchmark: which frequency modules are
//! enabled, where, and how each variant scores after a fixed training budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{generate_sequence, SynthConfig, VideoSample};
use crate::metrics::{evaluate, MetricsReport, Scores, SequenceLabels};
use crate::model::{Gsfm, GsfmConfig, LossBreakdown, ModelError, Result, TrainConfig, Trainer};
use crate::spectral::FilterMode;

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub lfm: Option<FilterMode>,
    pub hfm: Option<FilterMode>,
    pub boundary_branch: bool,
}

impl Variant {
    pub fn new(name: &str, lfm: Option<FilterMode>, hfm: Option<FilterMode>, boundary_branch: bool) -> Variant {
        Variant {
            name: name.to_string(),
            lfm,
            hfm,
            boundary_branch,
        }
    }

    /// `base` with this variant's module switches.
    pub fn apply(&self, base: &GsfmConfig) -> GsfmConfig {
        GsfmConfig {
            lfm: self.lfm,
            hfm: self.hfm,
            boundary_branch: self.boundary_branch,
            ..base.clone()
        }
    }

    /// Looks a variant up among [`module_variants`] and [`placement_variants`].
    pub fn by_name(name: &str) -> Option<Variant> {
        module_variants().into_iter().chain(placement_variants()).find(|v| v.name == name)
    }
}

/// Module ablation: nothing, each filter module alone, each with the
/// boundary branch, and everything.
pub fn module_variants() -> Vec<Variant> {
    use FilterMode::{High, Low};
    vec![
        Variant::new("baseline", None, None, false),
        Variant::new("lfm", Some(Low), None, false),
        Variant::new("hfm", None, Some(High), false),
        Variant::new("lfm+boundary", Some(Low), None, true),
        Variant::new("hfm+boundary", None, Some(High), true),
        Variant::new("full", Some(Low), Some(High), true),
    ]
}

/// Filter placement swaps, named `<encoder>/<decoder>`. All keep the boundary branch.
pub fn placement_variants() -> Vec<Variant> {
    use FilterMode::{Full, High, Low};
    vec![
        Variant::new("low/low", Some(Low), Some(Low), true),
        Variant::new("high/high", Some(High), Some(High), true),
        Variant::new("full/high", Some(Full), Some(High), true),
        Variant::new("low/full", Some(Low), Some(Full), true),
    ]
}

/// Synthetic train/eval split. Evaluation sequences use seeds disjoint from
/// the training ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub length: usize,
    pub synth: SynthConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            train_sequences: 200,
            eval_sequences: 50,
            length: 12,
            synth: SynthConfig::default(),
        }
    }
}

/// Offset between the training and evaluation sequence seeds.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

pub struct Benchmark {
    pub train: Vec<VideoSample>,
    pub eval: Vec<VideoSample>,
}

impl BenchmarkConfig {
    fn sequences(&self, first_seed: u64, count: usize) -> Result<Vec<VideoSample>> {
        (0..count as u64)
            .map(|i| {
                let cfg = SynthConfig {
                    seed: first_seed + i,
                    ..self.synth.clone()
                };
                Ok(generate_sequence(&cfg, self.length)?)
            })
            .collect()
    }

    pub fn build(&self) -> Result<Benchmark> {
        Ok(Benchmark {
            train: self.sequences(self.synth.seed, self.train_sequences)?,
            eval: self.sequences(self.synth.seed + EVAL_SEED_OFFSET, self.eval_sequences)?,
        })
    }
}

/// Segments every video from its first-frame annotation and scores the result.
/// Sequences are spread over `jobs` threads; the report does not depend on `jobs`.
pub fn evaluate_model(model: &Gsfm, videos: &[VideoSample], jobs: usize) -> Result<MetricsReport> {
    let preds = parallel_map(videos, jobs, |v| predict_sequence(model, v))?;
    let gts: Vec<SequenceLabels> = videos.iter().map(VideoSample::to_sequence_labels).collect();
    Ok(evaluate(&preds, &gts, None)?)
}

/// Label maps predicted for every frame of `video`.
pub fn predict_sequence(model: &Gsfm, video: &VideoSample) -> Result<SequenceLabels> {
    let first = video.labels[0]
        .as_ref()
        .ok_or_else(|| crate::dataio::DataError::MissingFirstAnnotation(video.name.clone()))?;
    let frames = model.segment_video(&video.frames, first, video.num_objects)?;
    Ok(SequenceLabels {
        name: video.name.clone(),
        height: video.height,
        width: video.width,
        frames: frames.into_iter().map(Some).collect(),
    })
}

/// Applies `f` to every item on up to `jobs` threads, keeping the input order.
pub fn parallel_map<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        for w in workers {
            for (i, r) in w.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every item processed")).collect()
}

/// Default number of worker threads.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Score of one variant trained with one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub lfm: Option<FilterMode>,
    pub hfm: Option<FilterMode>,
    pub boundary_branch: bool,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

/// Trains `variant` from scratch with `seed` (used both for initialisation and
/// batch sampling) and evaluates it. `on_step` sees every step's losses.
pub fn run_variant(
    variant: &Variant,
    model_config: &GsfmConfig,
    train_config: &TrainConfig,
    seed: u64,
    bench: &Benchmark,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<(Gsfm, AblationRow)> {
    let start = Instant::now();
    let cfg = GsfmConfig {
        init_seed: seed,
        ..variant.apply(model_config)
    };
    let tc = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let mut trainer = Trainer::new(Gsfm::new(cfg)?, tc)?;
    let mut last = LossBreakdown::default();
    while trainer.step < trainer.config.total_steps() {
        let step = trainer.step;
        last = trainer.run_step(&bench.train)?;
        on_step(step, &last);
    }
    let report = evaluate_model(&trainer.model, &bench.eval, 1)?;
    let Scores { j, f, jf } = report.global;
    let row = AblationRow {
        variant: variant.name.clone(),
        lfm: variant.lfm,
        hfm: variant.hfm,
        boundary_branch: variant.boundary_branch,
        seed,
        j,
        f,
        jf,
        final_loss: last.total,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((trainer.model, row))
}

/// Training budget of the ablation grid: 50 warm-up and 250 sequence steps.
/// One run takes two to five minutes on a single core. A run can still end
/// in the all-background regime, which shows up as J near zero.
pub fn ablation_train_config() -> TrainConfig {
    TrainConfig {
        steps: 250,
        pretrain_steps: 50,
        ..TrainConfig::default()
    }
}

/// One grid cell: variant and seed.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub variant: Variant,
    pub seed: u64,
}

/// Every variant crossed with every seed, variant-major.
pub fn grid(variants: &[Variant], seeds: &[u64]) -> Vec<GridCell> {
    variants
        .iter()
        .flat_map(|v| seeds.iter().map(|&seed| GridCell { variant: v.clone(), seed }))
        .collect()
}

/// Trains and evaluates every cell, `jobs` cells at a time. `on_done` is
/// called as each cell finishes (from worker threads). Rows come back in
/// cell order; a failed cell (for example a non-finite loss) is returned as
/// its error.
pub fn run_grid(
    cells: &[GridCell],
    model_config: &GsfmConfig,
    train_config: &TrainConfig,
    bench: &Benchmark,
    jobs: usize,
    on_done: impl Fn(&GridCell, &Result<AblationRow>) + Sync,
) -> Vec<Result<AblationRow>> {
    let out = parallel_map(cells, jobs, |cell| {
        let r = run_variant(&cell.variant, model_config, train_config, cell.seed, bench, |_, _| {}).map(|(_, row)| row);
        on_done(cell, &r);
        Ok(r)
    });
    out.expect("cells report their own errors")
}

/// Median of a non-empty list; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Per-variant medians of J, F and J&F over seeds.
pub fn medians(rows: &[AblationRow]) -> BTreeMap<String, Scores> {
    let mut groups: BTreeMap<String, Vec<&AblationRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.variant.clone()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(name, rs)| {
            let pick = |f: fn(&AblationRow) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            (
                name,
                Scores {
                    j: pick(|r| r.j),
                    f: pick(|r| r.f),
                    jf: pick(|r| r.jf),
                },
            )
        })
        .collect()
}

pub fn write_rows_csv(rows: &[AblationRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "lfm", "hfm", "boundary_branch", "seed", "J", "F", "JF", "final_loss", "seconds"])
        .map_err(csv_err)?;
    let mode = |m: Option<FilterMode>| m.map_or("off".to_string(), |m| m.to_string());
    for r in rows {
        w.write_record([
            r.variant.clone(),
            mode(r.lfm),
            mode(r.hfm),
            r.boundary_branch.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.j),
            format!("{:.6}", r.f),
            format!("{:.6}", r.jf),
            format!("{:.6}", r.final_loss),
            format!("{:.2}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::Io(std::io::Error::other(e))
}

/// Bar chart of median J&F per variant (in `order`) with one dot per seed.
pub fn ablation_svg(rows: &[AblationRow], order: &[String]) -> String {
    let meds = medians(rows);
    let names: Vec<&String> = order.iter().filter(|n| meds.contains_key(*n)).collect();
    let (bar, gap, left, top, plot_h) = (48.0, 24.0, 56.0, 24.0, 240.0);
    let width = left + names.len() as f64 * (bar + gap) + gap;
    let height = top + plot_h + 80.0;
    let all: Vec<f64> = rows.iter().map(|r| r.jf).collect();
    let lo = (all.iter().copied().fold(f64::INFINITY, f64::min) - 0.05).clamp(0.0, 1.0);
    let lo = (lo * 10.0).floor() / 10.0;
    let y = |v: f64| top + plot_h * (1.0 - ((v - lo) / (1.0 - lo)).clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=5 {
        let v = lo + (1.0 - lo) * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/>"##, width - gap / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 6.0, yy + 4.0);
    }
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">J&amp;F</text>"#, top + plot_h / 2.0, top + plot_h / 2.0);
    for (i, name) in names.iter().enumerate() {
        let x = left + gap + i as f64 * (bar + gap);
        let m = meds[*name].jf;
        let _ = writeln!(s, r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{:.1}" fill="#6b8fb5"/>"##, y(m), top + plot_h - y(m));
        for r in rows.iter().filter(|r| &r.variant == *name) {
            let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#222"/>"##, x + bar / 2.0, y(r.jf));
        }
        let (cx, ly) = (x + bar / 2.0, top + plot_h + 14.0);
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-35 {cx:.1} {ly:.1})">{}</text>"#, xml_escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
