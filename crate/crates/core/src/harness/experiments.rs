//! Multi-seed runs, ablations, robustness curves and scaling benchmarks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;

use crate::data::{inject_drift, mask_channels, Dataset};
use crate::error::{invalid, Error, Result};
use crate::harness::metrics::MetricsReport;
use crate::harness::train::{evaluate_dataset, train, EpochRecord, Evaluation};
use crate::harness::TrainConfig;
use crate::model::{MedMamba, ModelConfig, Variant};
use crate::params::Rng;
use crate::tensor::Real;

/// Train, validation and test partitions.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// One trained model scored on the test partition.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: Evaluation,
}

impl RunRecord {
    pub fn metrics(&self) -> &MetricsReport {
        &self.test.metrics
    }
}

/// Trains `cfg` with model and training seed `seed` and evaluates on the test split.
pub fn run_single<F: Real>(cfg: &ModelConfig, train_cfg: &TrainConfig, splits: &Splits, seed: u64) -> Result<(MedMamba<F>, RunRecord)> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut model = MedMamba::<F>::init(&cfg)?;
    let outcome = train(&mut model, &splits.train, &splits.val, train_cfg, seed)?;
    let test = evaluate_dataset(&model, &splits.test)?;
    let record = RunRecord {
        variant: cfg.variant.clone(),
        seed,
        num_params: model.num_params(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        test,
    };
    Ok((model, record))
}

/// Sample mean and standard deviation of each metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

/// Mean and sample (n−1) standard deviation; the deviation of a single run is 0.
pub fn summarize(reports: &[&MetricsReport]) -> Summary {
    let n = reports.len();
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    if n == 0 {
        return Summary { n, mean, std };
    }
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n as f64;
        }
    }
    if n > 1 {
        for r in reports {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m) * (v - m) / (n - 1) as f64;
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    Summary { n, mean, std }
}

#[derive(Clone, Debug)]
pub struct VariantSummary {
    pub variant: Variant,
    pub summary: Summary,
    /// Mean of the full model minus mean of this variant.
    pub delta: [f64; 6],
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<RunRecord>,
    pub variants: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn runs_of<'a>(&'a self, variant: &'a Variant) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| &r.variant == variant)
    }

    pub fn summary_of(&self, variant: &Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| &v.variant == variant)
    }
}

/// Trains every variant for every seed. The full model is always included
/// so that each variant has a delta against it.
pub fn run_ablation_suite<F: Real>(
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    variants: &[Variant],
    mut progress: impl FnMut(&RunRecord),
) -> Result<AblationReport> {
    let mut list = vec![Variant::Full];
    list.extend(variants.iter().filter(|v| **v != Variant::Full).cloned());
    let mut runs = Vec::new();
    for variant in &list {
        for &seed in &train_cfg.seeds {
            let (_, record) = run_single::<F>(&cfg.with_variant(variant.clone()), train_cfg, splits, seed)?;
            progress(&record);
            runs.push(record);
        }
    }
    let summary_for = |v: &Variant| summarize(&runs.iter().filter(|r| &r.variant == v).map(|r| r.metrics()).collect::<Vec<_>>());
    let full = summary_for(&Variant::Full);
    let variants = list
        .iter()
        .map(|v| {
            let summary = summary_for(v);
            let mut delta = [0.0; 6];
            for (i, d) in delta.iter_mut().enumerate() {
                *d = full.mean[i] - summary.mean[i];
            }
            VariantSummary {
                variant: v.clone(),
                summary,
                delta,
            }
        })
        .collect();
    Ok(AblationReport { runs, variants })
}

/// Test-time corruption of the inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Perturbation {
    Drift,
    Missing,
}

impl Perturbation {
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            Perturbation::Drift => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            Perturbation::Missing => vec![0.0, 0.1, 0.2, 0.3, 0.4],
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Perturbation::Drift => "drift",
            Perturbation::Missing => "missing",
        })
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drift" => Ok(Perturbation::Drift),
            "missing" | "missing-channels" => Ok(Perturbation::Missing),
            other => Err(Error::InvalidArgument(format!("unknown perturbation '{other}'"))),
        }
    }
}

/// A copy of `ds` with every sample corrupted at `level` from a fixed seed.
pub fn perturb_dataset(ds: &Dataset, kind: Perturbation, level: f64, seed: u64) -> Result<Dataset> {
    let mut rng = Rng::seed_from_u64(seed);
    ds.map_x(|x| match kind {
        Perturbation::Drift => inject_drift(x, level, &mut rng),
        Perturbation::Missing => mask_channels(x, level, &mut rng),
    })
}

#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub level: f64,
    pub metrics: MetricsReport,
}

/// Scores `model` on perturbed copies of `test`, one per level.
pub fn run_robustness<F: Real>(model: &MedMamba<F>, test: &Dataset, kind: Perturbation, levels: &[f64], seed: u64) -> Result<Vec<CurvePoint>> {
    if levels.is_empty() {
        return Err(invalid("at least one perturbation level is required"));
    }
    levels
        .iter()
        .map(|&level| {
            let data = perturb_dataset(test, kind, level, seed)?;
            Ok(CurvePoint {
                level,
                metrics: evaluate_dataset(model, &data)?.metrics,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub seq_len: usize,
    pub median_seconds: f64,
    /// `time(T) / time(previous T)`; `None` for the first row.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `log time` against `log T`.
    pub slope: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Times `workload(T)` for every `T` in `grid`, after one untimed warm-up call.
pub fn bench_scaling(grid: &[usize], repeats: usize, mut workload: impl FnMut(usize) -> Result<()>) -> Result<BenchReport> {
    if grid.len() < 2 || repeats == 0 {
        return Err(invalid("scaling benchmark needs two lengths and one repeat"));
    }
    let mut rows: Vec<BenchRow> = Vec::with_capacity(grid.len());
    for &t in grid {
        workload(t)?;
        let mut times = (0..repeats)
            .map(|_| {
                let start = Instant::now();
                workload(t)?;
                Ok(start.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()?;
        let median_seconds = median(&mut times);
        let ratio = rows.last().map(|r| median_seconds / r.median_seconds);
        rows.push(BenchRow {
            seq_len: t,
            median_seconds,
            ratio,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.seq_len as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_seconds).collect();
    Ok(BenchReport {
        slope: loglog_slope(&xs, &ys),
        rows,
    })
}

/// One forward and backward pass of a freshly initialized model at length `T`.
pub fn model_workload<F: Real>(cfg: &ModelConfig) -> impl FnMut(usize) -> Result<()> + '_ {
    let mut cached: Option<(usize, MedMamba<F>, crate::tensor::Tensor<F>)> = None;
    move |t| {
        if cached.as_ref().is_none_or(|c| c.0 != t) {
            let mut c = cfg.clone();
            c.seq_len = t;
            let model = MedMamba::<F>::init(&c)?;
            let mut rng = Rng::seed_from_u64(c.seed);
            let x = crate::params::normal(&mut rng, [t, c.channels], 1.0);
            cached = Some((t, model, x));
        }
        let (_, model, x) = cached.as_ref().expect("cached model");
        model.loss_and_gradients(x, 0, None)?;
        Ok(())
    }
}
