//! Training, adaptation, evaluation and the parameter sweeps.

mod benchmark;
mod config;
mod eval;
mod latent;
mod sweep;
mod train;
mod uda;

pub use config::TrainConfig;
pub use eval::{evaluate, mean_l1, score_case, Aggregates, CaseMetrics, EvalReport, Stat, DICE_CLASSES, PSNR_PEAK};
pub use latent::{
    decode_latent_sample, empirical_moments, latent_rows, sample_volumes, LatentGaussian, MIN_MEAN_VARIANCE, SHRINKAGE,
};
pub use train::{
    init_synth, supervised_da_finetune, target_volumes, train_svae, train_synth_supervised, train_vae3d, LossTrace,
    VaeTrace,
};
pub use uda::{
    adapt_uda, adapt_uda_vae3d, adapt_with_prior, continue_source_training, mixture_kl, mixture_moments, prior_kl, AdaptObjective,
    AdaptPrior, AdaptReference, UdaTrace,
};
pub use benchmark::{
    run_benchmark, run_benchmark_on, supervised_da_tag, Benchmark, BenchmarkOptions, NO_DA, NO_DA_AUG, NO_SHIFT, SVAE_UDA,
    VAE3D_UDA,
};
pub use sweep::{
    batch_row, histogram_distance, pooled_histogram, sweep_adapt_count, sweep_batch_size, BatchSweepRow, CountRow,
    CountSweep, ADAPT_COUNTS, BATCH_FRACTIONS, HIST_BINS,
};
