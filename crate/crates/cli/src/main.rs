//! `medmamba`: data generation, training, evaluation and experiment runs.

mod alloc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use medmamba::autodiff::gradcheck::DEFAULT_STEP;
use medmamba::data::{generate_synthetic, read_csv, split, write_csv, Protocol, SyntheticSpec};
use medmamba::harness::report::{
    write_ablation_csv, write_adjacency_csv, write_bench_csv, write_curve_csv, write_eval_csv, write_metrics_csv,
    write_run_csv, write_timing_csv,
};
use medmamba::harness::{
    bench_scaling, evaluate_dataset, model_grad_check, model_workload, parse_seeds, run_ablation_suite, run_robustness,
    run_single, summarize, tiny_config, ExperimentConfig, Perturbation, RunRecord, Splits,
};
use medmamba::{Dataset, MedMamba, Tensor, Variant};

#[global_allocator]
static ALLOC: alloc::Counting = alloc::Counting;

#[derive(Parser)]
#[command(name = "medmamba", version, about = "MedMamba experiments on multichannel time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// `default` or a key=value file overriding the default spec.
        #[arg(long, default_value = "default")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one variant over one or more seeds.
    Train(RunArgs),
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train every requested variant over every seed.
    Ablate(RunArgs),
    /// Robustness curve under drift or missing channels.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "drift")]
        protocol: Perturbation,
        /// Perturbation levels; defaults to the protocol's standard grid.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Seed of the perturbation draws.
        #[arg(long, default_value_t = 1234)]
        perturb_seed: u64,
    },
    /// Forward+backward wall-clock scaling over sequence lengths.
    Bench {
        #[arg(long = "T", value_delimiter = ',', default_values_t = [256usize, 512, 1024])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the full objective on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_STEP)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    split: Option<Protocol>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// Seed, comma list or inclusive range `a..b`.
    #[arg(long)]
    seed: Option<String>,
    /// Variant tag; `ablate` accepts a comma list or `all`.
    #[arg(long)]
    variant: Option<String>,
    #[command(flatten)]
    common: Common,
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = common.split {
        cfg.split.protocol = p;
    }
    Ok(cfg)
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    let ds = read_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ds.standardize())
}

/// Applies `--seed`/`--variant` and fits the model to the data geometry.
fn prepare(args: &RunArgs) -> anyhow::Result<(ExperimentConfig, Splits)> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = &args.seed {
        cfg.train.seeds = parse_seeds(s)?;
    }
    if let Some(v) = &args.variant {
        if !v.contains(',') && v != "all" {
            cfg.model.variant = v.parse()?;
        }
    }
    let ds = load_data(&args.data)?;
    cfg.model.seq_len = ds.seq_len();
    cfg.model.channels = ds.channels();
    cfg.model.n_classes = ds.n_classes();
    cfg.validate()?;
    let (train, val, test) = split(&ds, &cfg.split)?;
    println!(
        "data: {} samples, T={}, C={}, K={}; {} split {}/{}/{}",
        ds.len(),
        ds.seq_len(),
        ds.channels(),
        ds.n_classes(),
        cfg.split.protocol,
        train.len(),
        val.len(),
        test.len()
    );
    Ok((cfg, Splits { train, val, test }))
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_metrics_header() {
    println!("{:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "variant", "seed", "acc", "prec", "rec", "f1", "auroc", "auprc");
}

fn print_metrics(label: &str, seed: &str, m: &[f64; 6]) {
    println!(
        "{label:<16} {seed:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        m[0], m[1], m[2], m[3], m[4], m[5]
    );
}

fn print_run(r: &RunRecord) {
    print_metrics(&r.variant.to_string(), &r.seed.to_string(), &r.metrics().values());
}

fn print_summary(runs: &[RunRecord], variant: &Variant) {
    let s = summarize(&runs.iter().filter(|r| &r.variant == variant).map(|r| r.metrics()).collect::<Vec<_>>());
    print_metrics(&variant.to_string(), "mean", &s.mean);
    print_metrics(&variant.to_string(), "std", &s.std);
}

fn mean_adjacency(runs: &[RunRecord]) -> Vec<Option<Tensor<f64>>> {
    let layers = runs.first().map_or(0, |r| r.test.mean_adjacency.len());
    (0..layers)
        .map(|l| {
            let mats: Vec<&Tensor<f64>> = runs.iter().filter_map(|r| r.test.mean_adjacency[l].as_ref()).collect();
            let first = mats.first()?;
            let n = mats.len() as f64;
            let mut acc = Tensor::zeros(first.shape());
            for m in &mats {
                acc.data_mut().iter_mut().zip(m.data()).for_each(|(a, v)| *a += v / n);
            }
            Some(acc)
        })
        .collect()
}

fn cmd_train(args: RunArgs) -> anyhow::Result<()> {
    let (cfg, splits) = prepare(&args)?;
    let out = &args.common.out;
    create_out(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    print_metrics_header();
    let mut runs = Vec::new();
    for &seed in &cfg.train.seeds {
        let (model, record) = run_single::<f32>(&cfg.model, &cfg.train, &splits, seed)?;
        model.save(out.join(format!("model_seed{seed}.ckpt")))?;
        print_run(&record);
        runs.push(record);
    }
    if runs.len() > 1 {
        print_summary(&runs, &cfg.model.variant);
    }
    write_run_csv(&out.join("run.csv"), &runs)?;
    write_timing_csv(&out.join("timing.csv"), &runs)?;
    write_metrics_csv(&out.join("metrics.csv"), &runs)?;
    for (l, a) in mean_adjacency(&runs).into_iter().enumerate() {
        if let Some(a) = a {
            write_adjacency_csv(&out.join(format!("adjacency_{l}.csv")), &a)?;
        }
    }
    let epochs: usize = runs.iter().map(|r| r.epochs.len()).sum();
    let seconds: f64 = runs.iter().flat_map(|r| &r.epochs).map(|e| e.seconds).sum();
    println!(
        "params: {}; {:.2} s/epoch over {epochs} epochs; peak heap (allocator estimate): {:.1} MiB",
        runs[0].num_params,
        seconds / epochs.max(1) as f64,
        alloc::peak_bytes() as f64 / (1024.0 * 1024.0)
    );
    println!("wrote run.csv, timing.csv, metrics.csv and checkpoints to {}", out.display());
    Ok(())
}

fn cmd_eval(model: PathBuf, data: PathBuf, common: Common) -> anyhow::Result<()> {
    let net = MedMamba::<f32>::load(&model).with_context(|| format!("loading {}", model.display()))?;
    let ds = load_data(&data)?;
    let target = match common.split {
        Some(p) => {
            let mut cfg = load_config(&common)?;
            cfg.split.protocol = p;
            split(&ds, &cfg.split)?.2
        }
        None => ds,
    };
    let eval = evaluate_dataset(&net, &target)?;
    create_out(&common.out)?;
    write_eval_csv(&common.out.join("metrics.csv"), &eval.metrics)?;
    print_metrics_header();
    print_metrics(&net.cfg.variant.to_string(), "-", &eval.metrics.values());
    println!("confusion (rows = true class): {:?}", eval.metrics.confusion);
    Ok(())
}

fn cmd_ablate(args: RunArgs) -> anyhow::Result<()> {
    let variants: Vec<Variant> = match args.variant.as_deref() {
        None | Some("all") => Variant::all(),
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
    };
    let (cfg, splits) = prepare(&args)?;
    let out = &args.common.out;
    create_out(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    print_metrics_header();
    let report = run_ablation_suite::<f32>(&cfg.model, &cfg.train, &splits, &variants, print_run)?;
    println!();
    println!("{:<16} {:>8} {:>8} {:>8}", "variant", "f1", "std", "delta");
    for v in &report.variants {
        println!("{:<16} {:>8.4} {:>8.4} {:>+8.4}", v.variant.to_string(), v.summary.mean[3], v.summary.std[3], v.delta[3]);
    }
    write_run_csv(&out.join("run.csv"), &report.runs)?;
    write_timing_csv(&out.join("timing.csv"), &report.runs)?;
    write_metrics_csv(&out.join("metrics.csv"), &report.runs)?;
    write_ablation_csv(&out.join("ablation.csv"), &report)?;
    println!("wrote run.csv, metrics.csv and ablation.csv to {}", out.display());
    Ok(())
}

fn cmd_robustness(
    run: RunArgs,
    protocol: Perturbation,
    levels: Option<Vec<f64>>,
    model: Option<PathBuf>,
    perturb_seed: u64,
) -> anyhow::Result<()> {
    let levels = levels.unwrap_or_else(|| protocol.default_levels());
    let (cfg, splits) = prepare(&run)?;
    let out = &run.common.out;
    create_out(out)?;
    let mut curves = Vec::new();
    if let Some(path) = model {
        let net = MedMamba::<f32>::load(&path).with_context(|| format!("loading {}", path.display()))?;
        curves.push((net.cfg.seed, run_robustness(&net, &splits.test, protocol, &levels, perturb_seed)?));
    } else {
        for &seed in &cfg.train.seeds {
            let (net, _) = run_single::<f32>(&cfg.model, &cfg.train, &splits, seed)?;
            curves.push((seed, run_robustness(&net, &splits.test, protocol, &levels, perturb_seed)?));
        }
    }
    println!("{:<10} {:>6} {:>8} {:>8} {:>8}", protocol.to_string(), "seed", "level", "f1", "auroc");
    for (seed, points) in &curves {
        for p in points {
            println!("{:<10} {seed:>6} {:>8.3} {:>8.4} {:>8.4}", "", p.level, p.metrics.f1, p.metrics.auroc);
        }
    }
    write_curve_csv(&out.join("curve.csv"), protocol, &curves)?;
    println!("wrote curve.csv to {}", out.display());
    Ok(())
}

fn cmd_bench(lengths: Vec<usize>, repeats: usize, common: Common) -> anyhow::Result<()> {
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        bail!("--T must be strictly ascending");
    }
    let cfg = load_config(&common)?;
    let report = bench_scaling(&lengths, repeats, model_workload::<f32>(&cfg.model))?;
    create_out(&common.out)?;
    write_bench_csv(&common.out.join("bench.csv"), &report)?;
    println!("{:>8} {:>14} {:>8}", "T", "median_s", "ratio");
    for r in &report.rows {
        let ratio = r.ratio.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:>8} {:>14.6} {:>8}", r.seq_len, r.median_seconds, ratio);
    }
    println!("log-log slope: {:.3}", report.slope);
    println!("peak heap (allocator estimate): {:.1} MiB", alloc::peak_bytes() as f64 / (1024.0 * 1024.0));
    Ok(())
}

fn cmd_gradcheck(h: f64, tol: f64) -> anyhow::Result<bool> {
    let report = model_grad_check(&tiny_config(), h)?;
    println!("coordinates checked: {}", report.coordinates);
    println!("max relative error: {:e}", report.max_rel_error);
    println!(
        "worst coordinate: param {} index {} (analytic {:e}, numeric {:e})",
        report.param, report.index, report.analytic, report.numeric
    );
    println!("max relative error where |numeric| >= 1e-6: {:e}", report.max_rel_error_above(1e-6));
    let pass = report.max_rel_error < tol;
    println!("{} (tolerance {tol:e})", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn cmd_gen_data(spec: String, out: PathBuf, seed: Option<u64>) -> anyhow::Result<()> {
    let mut s = if spec == "default" {
        SyntheticSpec::default()
    } else {
        let text = std::fs::read_to_string(&spec).with_context(|| format!("reading spec {spec}"))?;
        SyntheticSpec::parse(&text)?
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let ds = generate_synthetic(&s)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_out(dir)?;
    }
    write_csv(&ds, &out)?;
    println!(
        "wrote {} samples ({} subjects, T={}, C={}, K={}) to {}",
        ds.len(),
        ds.subjects().len(),
        ds.seq_len(),
        ds.channels(),
        ds.n_classes(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData { spec, out, seed } => cmd_gen_data(spec, out, seed)?,
        Command::Train(args) => cmd_train(args)?,
        Command::Eval { model, data, common } => cmd_eval(model, data, common)?,
        Command::Ablate(args) => cmd_ablate(args)?,
        Command::Robustness {
            run,
            protocol,
            levels,
            model,
            perturb_seed,
        } => cmd_robustness(run, protocol, levels, model, perturb_seed)?,
        Command::Bench { lengths, repeats, common } => cmd_bench(lengths, repeats, common)?,
        Command::Gradcheck { h, tol } => return cmd_gradcheck(h, tol),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
