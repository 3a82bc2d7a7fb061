//! CSV outputs of the experiment commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::fmt::g9;
use crate::harness::experiments::{summarize, AblationReport, BenchReport, CurvePoint, RunRecord};
use crate::harness::metrics::MetricsReport;
use crate::harness::Perturbation;
use crate::tensor::Tensor;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn row(out: &mut impl Write, fields: &[String]) -> Result<()> {
    writeln!(out, "{}", fields.join(","))?;
    Ok(())
}

fn metric_header() -> Vec<String> {
    MetricsReport::NAMES.iter().map(|s| s.to_string()).collect()
}

/// Per-epoch learning curves; contains no timings so reruns compare byte for byte.
pub fn write_run_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "variant,seed,epoch,lr,train_loss,val_loss,val_f1,val_accuracy")?;
    for r in runs {
        for e in &r.epochs {
            row(
                &mut out,
                &[
                    r.variant.to_string(),
                    r.seed.to_string(),
                    e.epoch.to_string(),
                    g9(e.lr),
                    g9(e.train_loss),
                    g9(e.val_loss),
                    g9(e.val_f1),
                    g9(e.val_accuracy),
                ],
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Wall-clock seconds per epoch.
pub fn write_timing_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "variant,seed,epoch,seconds")?;
    for r in runs {
        for e in &r.epochs {
            row(&mut out, &[r.variant.to_string(), r.seed.to_string(), e.epoch.to_string(), g9(e.seconds)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Test metrics per run followed by `mean` and `std` rows per variant.
pub fn write_metrics_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut out = create(path)?;
    let mut header = vec!["variant".to_string(), "seed".into(), "best_epoch".into(), "params".into()];
    header.extend(metric_header());
    row(&mut out, &header)?;
    let mut variants = Vec::new();
    for r in runs {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
        let mut f = vec![r.variant.to_string(), r.seed.to_string(), r.best_epoch.to_string(), r.num_params.to_string()];
        f.extend(r.metrics().values().iter().map(|&v| g9(v)));
        row(&mut out, &f)?;
    }
    for v in variants {
        let s = summarize(&runs.iter().filter(|r| r.variant == v).map(|r| r.metrics()).collect::<Vec<_>>());
        for (label, vals) in [("mean", s.mean), ("std", s.std)] {
            let mut f = vec![v.to_string(), label.to_string(), String::new(), String::new()];
            f.extend(vals.iter().map(|&x| g9(x)));
            row(&mut out, &f)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Single evaluation: one row of metrics.
pub fn write_eval_csv(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut out = create(path)?;
    row(&mut out, &metric_header())?;
    row(&mut out, &m.values().iter().map(|&v| g9(v)).collect::<Vec<_>>())?;
    out.flush()?;
    Ok(())
}

/// Square matrix with a leading row index column.
pub fn write_adjacency_csv(path: &Path, a: &Tensor<f64>) -> Result<()> {
    let c = a.shape()[0];
    let mut out = create(path)?;
    let mut header = vec!["row".to_string()];
    header.extend((0..c).map(|j| j.to_string()));
    row(&mut out, &header)?;
    for i in 0..c {
        let mut f = vec![i.to_string()];
        f.extend(a.data()[i * c..(i + 1) * c].iter().map(|&v| g9(v)));
        row(&mut out, &f)?;
    }
    out.flush()?;
    Ok(())
}

/// Summary per variant with deltas against the full model.
pub fn write_ablation_csv(path: &Path, report: &AblationReport) -> Result<()> {
    let mut out = create(path)?;
    let mut header = vec!["variant".to_string(), "n".into()];
    for name in MetricsReport::NAMES {
        header.extend([format!("{name}_mean"), format!("{name}_std"), format!("{name}_delta")]);
    }
    row(&mut out, &header)?;
    for v in &report.variants {
        let mut f = vec![v.variant.to_string(), v.summary.n.to_string()];
        for i in 0..6 {
            f.extend([g9(v.summary.mean[i]), g9(v.summary.std[i]), g9(v.delta[i])]);
        }
        row(&mut out, &f)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per (seed, level).
pub fn write_curve_csv(path: &Path, kind: Perturbation, curves: &[(u64, Vec<CurvePoint>)]) -> Result<()> {
    let mut out = create(path)?;
    let mut header = vec!["perturbation".to_string(), "seed".into(), "level".into()];
    header.extend(metric_header());
    row(&mut out, &header)?;
    for (seed, points) in curves {
        for p in points {
            let mut f = vec![kind.to_string(), seed.to_string(), g9(p.level)];
            f.extend(p.metrics.values().iter().map(|&v| g9(v)));
            row(&mut out, &f)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_bench_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "T,median_seconds,ratio")?;
    for r in &report.rows {
        row(
            &mut out,
            &[r.seq_len.to_string(), g9(r.median_seconds), r.ratio.map_or(String::new(), g9)],
        )?;
    }
    out.flush()?;
    Ok(())
}
