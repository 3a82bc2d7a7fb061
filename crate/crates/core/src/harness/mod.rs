//! Training, evaluation and experiment orchestration.

pub mod check;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod train;

pub use check::{model_grad_check, tiny_config};
pub use config::ExperimentConfig;
pub use experiments::{
    bench_scaling, loglog_slope, model_workload, perturb_dataset, run_ablation_suite, run_robustness, run_single, summarize,
    AblationReport, BenchReport, BenchRow, CurvePoint, Perturbation, RunRecord, Splits, Summary, VariantSummary,
};
pub use metrics::{auroc, average_precision, compute_metrics, ClassMetrics, MetricsReport};
pub use optim::{adam_update, cosine_lr, Adam, AdamConfig, EarlyStopper, StopDecision};
pub use train::{
    evaluate_dataset, evaluate_inputs, parse_seeds, train, train_with, EpochRecord, Evaluation, TrainConfig, TrainOutcome,
    ValScore,
};
