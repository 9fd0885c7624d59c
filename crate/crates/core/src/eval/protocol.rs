use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{random_subset, train_model, EvalContext, EvalError, Result, TrainSource, TrainSpec};
use crate::distill::{init_distilled, run_distillation, DistillConfig, DistilledSet, InitMode, StepReport};
use crate::textdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Full,
    Random,
    Distilled,
}

/// Shared schedule and seeds for every source of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// Class-balanced random baseline; otherwise uniform over the dataset.
    pub balanced_random: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            alpha: 0.1,
            seeds: vec![0, 1, 2],
            balanced_random: true,
        }
    }
}

impl CompareConfig {
    pub fn spec(&self, seed: u64) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < 3 {
            return Err(EvalError::InvalidConfig(format!(
                "at least 3 seeds are needed for dispersion, got {}",
                self.seeds.len()
            )));
        }
        self.spec(0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub source: Source,
    pub seed: u64,
    pub accuracy: f64,
    /// Accuracy relative to the full-data model of the same seed, in
    /// percent; absent when that model scored zero.
    pub relative_pct: Option<f64>,
    #[serde(skip)]
    pub protocol_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub source: Source,
    pub seed: u64,
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Mean and sample standard deviation of one source over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub source: Source,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    /// `mean / full mean` in percent.
    pub relative_pct: Option<f64>,
}

fn relative(acc: f64, full: f64) -> Option<f64> {
    (full > 0.0).then(|| 100.0 * (acc / full))
}

fn curve_rows(source: Source, seed: u64, curve: &[f64]) -> impl Iterator<Item = CurveRow> + '_ {
    curve.iter().enumerate().map(move |(e, &accuracy)| CurveRow {
        source,
        seed,
        epoch: e + 1,
        accuracy,
    })
}

/// Trains on full data, a size-matched random subset, and a distilled set
/// for every seed under one schedule. Seed `i` uses `distilled[i % len]`.
pub fn compare_protocol(
    ctx: &EvalContext,
    train: &Dataset,
    distilled: &[DistilledSet<f32>],
    config: &CompareConfig,
) -> Result<(Vec<ComparisonRow>, Vec<CurveRow>)> {
    config.validate()?;
    if distilled.is_empty() {
        return Err(EvalError::EmptySource);
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (i, &seed) in config.seeds.iter().enumerate() {
        let spec = config.spec(seed);
        let set = &distilled[i % distilled.len()];
        let subset = random_subset(train, set.per_class(), seed, config.balanced_random)?;
        let (_, full) = train_model(ctx, TrainSource::Real(train), &spec)?;
        let runs = [
            (Source::Full, full),
            (Source::Random, train_model(ctx, TrainSource::Real(&subset), &spec)?.1),
            (
                Source::Distilled,
                train_model(ctx, TrainSource::Distilled(set), &spec)?.1,
            ),
        ];
        let full_acc = runs[0].1.final_accuracy;
        for (source, report) in runs {
            curves.extend(curve_rows(source, seed, &report.epoch_accuracies));
            rows.push(ComparisonRow {
                source,
                seed,
                accuracy: report.final_accuracy,
                relative_pct: relative(report.final_accuracy, full_acc),
                protocol_hash: report.protocol_hash,
            });
        }
    }
    Ok((rows, curves))
}

pub fn summarize(rows: &[ComparisonRow]) -> Vec<SourceSummary> {
    let stats = |source: Source| {
        let accs: Vec<f64> = rows.iter().filter(|r| r.source == source).map(|r| r.accuracy).collect();
        let n = accs.len();
        let mean = if n == 0 {
            0.0
        } else {
            accs.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        (n, mean, std)
    };
    let (_, full_mean, _) = stats(Source::Full);
    [Source::Full, Source::Random, Source::Distilled]
        .into_iter()
        .filter_map(|source| {
            let (runs, mean, std) = stats(source);
            (runs > 0).then(|| SourceSummary {
                source,
                runs,
                mean,
                std,
                relative_pct: relative(mean, full_mean),
            })
        })
        .collect()
}

/// One training run of an accuracy-versus-epoch plot.
#[derive(Debug, Clone, Copy)]
pub struct CurveRun<'a> {
    pub source: Source,
    pub data: TrainSource<'a>,
    pub spec: TrainSpec,
}

pub fn epoch_curves(ctx: &EvalContext, runs: &[CurveRun<'_>]) -> Result<Vec<CurveRow>> {
    let mut out = Vec::new();
    for run in runs {
        let (_, report) = train_model(ctx, run.data, &run.spec)?;
        out.extend(curve_rows(run.source, run.spec.seed, &report.epoch_accuracies));
    }
    Ok(out)
}

/// First epoch (1-based) whose accuracy reaches `fraction` of the final
/// accuracy.
pub fn epochs_to_fraction(curve: &[f64], fraction: f64) -> usize {
    let Some(&last) = curve.last() else { return 0 };
    curve
        .iter()
        .position(|&a| a >= fraction * last)
        .map_or(curve.len(), |i| i + 1)
}

/// Distils once per `(m, seed)` and evaluates each set with the shared
/// schedule. `distill_config.per_class` and `.seed` are overridden.
pub fn size_sweep(
    ctx: &EvalContext,
    train: &Dataset,
    m_values: &[usize],
    distill_config: &DistillConfig,
    config: &CompareConfig,
    mut on_step: impl FnMut(usize, u64, &StepReport),
) -> Result<Vec<SweepRow>> {
    if m_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidConfig(format!("m values must ascend: {m_values:?}")));
    }
    config.validate()?;
    let mut rows = Vec::new();
    for &m in m_values {
        for &seed in &config.seeds {
            let dc = DistillConfig {
                per_class: m,
                seed,
                ..distill_config.clone()
            };
            let set = distill_dataset(ctx, train, &dc, |r| on_step(m, seed, r))?;
            let (_, report) = train_model(ctx, TrainSource::Distilled(&set), &config.spec(seed))?;
            rows.push(SweepRow {
                m,
                seed,
                accuracy: report.final_accuracy,
            });
        }
    }
    Ok(rows)
}

/// Validates `config` against the context's model, initializes, and runs a
/// full distillation over `train`.
pub fn distill_dataset(
    ctx: &EvalContext,
    train: &Dataset,
    config: &DistillConfig,
    on_step: impl FnMut(&StepReport),
) -> Result<DistilledSet<f32>> {
    config.validate(ctx.model.config())?;
    let real = (config.init_mode == InitMode::RealSample).then_some((train, &ctx.table));
    let init = init_distilled(
        config,
        ctx.model.config().num_classes,
        ctx.table.stats(),
        real,
        ctx.table.content_hash(),
    )?;
    Ok(run_distillation(&ctx.model, init, train, &ctx.table, config, on_step)?)
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman on different lengths");
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    crate::atomic_write(path, &bytes)?;
    Ok(())
}

/// `source,seed,accuracy,relative_pct`
pub fn write_comparison_csv(path: impl AsRef<Path>, rows: &[ComparisonRow]) -> Result<()> {
    write_rows(path.as_ref(), rows, &["source", "seed", "accuracy", "relative_pct"])
}

/// `source,seed,epoch,accuracy`
pub fn write_curves_csv(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    write_rows(path.as_ref(), rows, &["source", "seed", "epoch", "accuracy"])
}

/// `m,seed,accuracy`
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_rows(path.as_ref(), rows, &["m", "seed", "accuracy"])
}
