//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::nets::{read_checkpoint, write_checkpoint, SvaeModel, SynthModel, Vae3dModel};
use crate::phantom::volio::write_volume;
use crate::phantom::{make_control_sets, make_dataset, AugmentSpec, ControlSets, DatasetSplit};
use crate::pipeline::{
    adapt_uda, adapt_uda_vae3d, evaluate, run_benchmark_on, supervised_da_finetune, supervised_da_tag,
    sweep_adapt_count, sweep_batch_size, target_volumes, train_svae, train_synth_supervised, train_vae3d,
    EvalReport, LatentGaussian, ADAPT_COUNTS, BATCH_FRACTIONS, NO_DA, NO_DA_AUG, NO_SHIFT, SVAE_UDA, VAE3D_UDA,
};
use crate::report::images::{montage, slice_strip, sweep_plot};
use crate::report::tables::{emit_csv, format_sig6, json_number, summary_bytes, table_bytes, write_file};
use crate::report::RunConfig;
use crate::rng::stream;

#[derive(Parser, Debug)]
#[command(name = "uda3d", about = "3D synthesis with s-VAE domain adaptation on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the dataset splits to disk.
    #[command(name = "gen-data")]
    GenData(Flags),
    /// Supervised source training of the synthesis network.
    #[command(name = "train-syn")]
    TrainSyn(Flags),
    /// Train the slice VAE on source output volumes.
    #[command(name = "train-svae")]
    TrainSvae(Flags),
    /// Train the volumetric VAE on source output volumes.
    #[command(name = "train-vae3d")]
    TrainVae3d(Flags),
    /// Adapt a trained synthesis network to the target domain.
    Adapt(Flags),
    /// Fine-tune on paired target cases (supervised upper bound).
    Finetune(Flags),
    /// Evaluate a synthesis checkpoint.
    Eval(Flags),
    /// Sample volumes from the s-VAE latent Gaussian.
    Sample(Flags),
    /// Batch-size sweep of the s-VAE.
    #[command(name = "sweep-batch")]
    SweepBatch(Flags),
    /// Adaptation-count sweep.
    #[command(name = "sweep-count")]
    SweepCount(Flags),
    /// Full method comparison for one seed.
    Report(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    method: Option<String>,
    /// Epoch count of the stage the command trains.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    ada_weight: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    batch_fraction: Option<f64>,
    #[arg(long)]
    adapt_count: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Dataset directory from gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    svae: Option<PathBuf>,
    #[arg(long)]
    vae3d: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Data,
    Synth,
    Svae,
    Vae3d,
    Uda,
    Finetune,
    None,
}

fn resolve(flags: &Flags, stage: Stage) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(e) = flags.epochs {
        match stage {
            Stage::Synth => t.epochs_syn = e,
            Stage::Svae => t.epochs_svae = e,
            Stage::Vae3d => t.epochs_vae3d = e,
            Stage::Uda => t.epochs_uda = e,
            Stage::Finetune => t.epochs_finetune = e,
            Stage::Data | Stage::None => {}
        }
    }
    if let Some(v) = flags.kl_weight {
        t.kl_weight = v;
    }
    if let Some(v) = flags.ada_weight {
        t.ada_weight = v;
    }
    if let Some(v) = flags.latent_dim {
        t.svae.latent_dim = v;
    }
    if let Some(v) = flags.batch_fraction {
        t.svae_batch_fraction = v;
    }
    if flags.method.is_some() {
        cfg.method = flags.method.clone();
    }
    if flags.adapt_count.is_some() {
        cfg.adapt_count = flags.adapt_count;
    }
    if let Some(v) = flags.samples {
        cfg.samples = v;
    }
    let p = &mut cfg.paths;
    for (dst, src) in [(&mut p.data, &flags.data), (&mut p.synth, &flags.synth), (&mut p.svae, &flags.svae), (&mut p.vae3d, &flags.vae3d)] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    cfg.train_config().validate()?;
    Ok(cfg)
}

/// Dataset split and control sets, read from disk when a data directory is set.
fn load_data(cfg: &RunConfig) -> Result<(DatasetSplit, ControlSets)> {
    match &cfg.paths.data {
        Some(dir) => {
            let (split, manifest) = DatasetSplit::read(dir)?;
            let controls = make_control_sets(&manifest.config, manifest.master_seed)?;
            Ok((split, controls))
        }
        None => Ok((make_dataset(&cfg.data, cfg.seed)?, make_control_sets(&cfg.data, cfg.seed)?)),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::contract(format!("--{flag} is required for this command")))
}

fn trace_json(out: &Path, value: Value) -> Result<()> {
    let mut b = serde_json::to_vec_pretty(&value).expect("trace serializes");
    b.push(b'\n');
    write_file(&out.join("trace.json"), &b)
}

fn finish_reports(cfg: &RunConfig, out: &Path, reports: &mut [EvalReport], extra: Map<String, Value>) -> Result<()> {
    let hash = cfg.hash();
    for r in reports.iter_mut() {
        r.config_hash = hash.clone();
        r.seed = cfg.seed;
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    emit_csv(&refs, &out.join("metrics.csv"))?;
    write_file(&out.join("summary.json"), &summary_bytes(&refs, extra))
}

fn write_montage(out: &Path, name: &str, synth: &SynthModel, cases: &[crate::phantom::VolumeSample]) -> Result<()> {
    let truths: Vec<_> = cases.iter().map(|c| c.target_batch()).collect();
    let preds = cases.iter().map(|c| synth.forward(&c.input_batch())).collect::<Result<Vec<_>>>()?;
    montage(&truths, &preds)?.write(&out.join(name))
}

fn execute(command: Command) -> Result<()> {
    let (flags, stage) = match &command {
        Command::GenData(f) => (f, Stage::Data),
        Command::TrainSyn(f) => (f, Stage::Synth),
        Command::TrainSvae(f) | Command::SweepBatch(f) => (f, Stage::Svae),
        Command::TrainVae3d(f) => (f, Stage::Vae3d),
        Command::Adapt(f) | Command::SweepCount(f) => (f, Stage::Uda),
        Command::Finetune(f) => (f, Stage::Finetune),
        Command::Eval(f) | Command::Sample(f) => (f, Stage::None),
        Command::Report(f) => (f, Stage::Synth),
    };
    let cfg = resolve(flags, stage)?;
    let out = flags.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.json"))?;
    let tc = cfg.train_config();

    match command {
        Command::GenData(_) => {
            let split = make_dataset(&cfg.data, cfg.seed)?;
            split.write(&cfg.data, cfg.seed, out)?;
        }
        Command::TrainSyn(_) => {
            let (split, _) = load_data(&cfg)?;
            let tc = match cfg.method.as_deref() {
                Some(NO_DA_AUG) => {
                    crate::pipeline::TrainConfig { augment: AugmentSpec { intensity: true, ..tc.augment.clone() }, ..tc }
                }
                _ => tc,
            };
            let (m, trace) = train_synth_supervised(&split.source_train, &tc)?;
            write_checkpoint(&out.join("synth.ckpt"), &m, (tc.epochs_syn * split.source_train.len()) as u64)?;
            trace_json(out, json!({ "l1": trace.epochs }))?;
        }
        Command::TrainSvae(_) => {
            let (split, _) = load_data(&cfg)?;
            let (m, trace) = train_svae(&target_volumes(&split.source_train), &tc)?;
            write_checkpoint(&out.join("svae.ckpt"), &m, (tc.epochs_svae * split.source_train.len()) as u64)?;
            trace_json(out, json!({ "recon": trace.recon, "kl": trace.kl }))?;
        }
        Command::TrainVae3d(_) => {
            let (split, _) = load_data(&cfg)?;
            let (m, trace) = train_vae3d(&target_volumes(&split.source_train), &tc)?;
            write_checkpoint(&out.join("vae3d.ckpt"), &m, (tc.epochs_vae3d * split.source_train.len()) as u64)?;
            trace_json(out, json!({ "recon": trace.recon, "kl": trace.kl }))?;
        }
        Command::Adapt(_) => {
            let (split, _) = load_data(&cfg)?;
            let (synth, _) = read_checkpoint::<SynthModel>(required(&cfg.paths.synth, "synth")?)?;
            let target = match cfg.adapt_count {
                Some(k) => split.adapt_subset(k)?,
                None => split.target_adapt.clone(),
            };
            let (m, trace) = match cfg.method.as_deref().unwrap_or(SVAE_UDA) {
                SVAE_UDA => {
                    let (mut svae, _) = read_checkpoint::<SvaeModel>(required(&cfg.paths.svae, "svae")?)?;
                    svae.params.freeze();
                    adapt_uda(&synth, &svae, &split.source_train, &target, &tc)?
                }
                VAE3D_UDA => {
                    let (mut vae, _) = read_checkpoint::<Vae3dModel>(required(&cfg.paths.vae3d, "vae3d")?)?;
                    vae.params.freeze();
                    adapt_uda_vae3d(&synth, &vae, &split.source_train, &target, &tc)?
                }
                other => return Err(Error::contract(format!("adapt supports {SVAE_UDA} or {VAE3D_UDA}, got {other}"))),
            };
            write_checkpoint(&out.join("adapted.ckpt"), &m, 0)?;
            trace_json(out, json!({ "adapt_kl": trace.adapt_kl, "source_l1": trace.source_l1 }))?;
        }
        Command::Finetune(_) => {
            let (_, controls) = load_data(&cfg)?;
            let (synth, _) = read_checkpoint::<SynthModel>(required(&cfg.paths.synth, "synth")?)?;
            let k = cfg.adapt_count.unwrap_or(controls.target_labeled.len());
            if k == 0 || k > controls.target_labeled.len() {
                return Err(Error::contract(format!(
                    "fine-tuning count {k} outside 1..={}",
                    controls.target_labeled.len()
                )));
            }
            let (m, trace) = supervised_da_finetune(&synth, &controls.target_labeled[..k], &tc)?;
            write_checkpoint(&out.join("finetuned.ckpt"), &m, 0)?;
            trace_json(out, json!({ "l1": trace.epochs }))?;
        }
        Command::Eval(_) => {
            let (split, controls) = load_data(&cfg)?;
            let (synth, _) = read_checkpoint::<SynthModel>(required(&cfg.paths.synth, "synth")?)?;
            let method = cfg.method.clone().unwrap_or_else(|| NO_DA.to_string());
            let excluded = split.training_ids();
            let (cases, domain) = if method == NO_SHIFT {
                (&controls.source_test, &cfg.data.source)
            } else {
                (&split.target_test, &cfg.data.target)
            };
            let mut reports = vec![evaluate(&synth, cases, domain, &method, &excluded, &tc.ssim)?];
            finish_reports(&cfg, out, &mut reports, Map::new())?;
            write_montage(out, "montage.ppm", &synth, cases)?;
        }
        Command::Sample(_) => {
            let (split, _) = load_data(&cfg)?;
            let (svae, _) = read_checkpoint::<SvaeModel>(required(&cfg.paths.svae, "svae")?)?;
            let lg = LatentGaussian::fit(&svae, &target_volumes(&split.source_train))?;
            let mut rng = stream(cfg.seed, "cli/sample", 0);
            let samples = crate::pipeline::sample_volumes(&svae, &lg, cfg.samples.max(1), &mut rng)?;
            for (i, s) in samples.iter().enumerate() {
                write_volume(&out.join("samples").join(format!("sample-{i:03}.vol")), s)?;
            }
            slice_strip(&samples)?.write(&out.join("samples.ppm"))?;
        }
        Command::SweepBatch(_) => {
            let (split, _) = load_data(&cfg)?;
            let volumes = target_volumes(&split.source_train);
            let rows = sweep_batch_size(&volumes, &BATCH_FRACTIONS, cfg.samples.max(1), &tc)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![format_sig6(r.fraction), r.batch.to_string(), format_sig6(r.hist_distance), format_sig6(r.final_recon)]
                })
                .collect();
            write_file(
                &out.join("sweep_batch.csv"),
                &table_bytes(&["fraction", "batch", "hist_distance", "final_recon"], &table),
            )?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.batch as f64, r.hist_distance)).collect();
            sweep_plot(&pts, "s-VAE batch size vs histogram distance to real volumes")?
                .write(&out.join("sweep_batch.ppm"))?;
            for r in &rows {
                slice_strip(&r.samples)?.write(&out.join(format!("samples-batch-{:03}.ppm", r.batch)))?;
            }
        }
        Command::SweepCount(_) => {
            let (split, _) = load_data(&cfg)?;
            let (synth, _) = read_checkpoint::<SynthModel>(required(&cfg.paths.synth, "synth")?)?;
            let (mut svae, _) = read_checkpoint::<SvaeModel>(required(&cfg.paths.svae, "svae")?)?;
            svae.params.freeze();
            let counts: Vec<usize> = match cfg.adapt_count {
                Some(k) => vec![k],
                None => ADAPT_COUNTS.iter().copied().filter(|&c| c <= split.target_adapt.len()).collect(),
            };
            let sweep = sweep_adapt_count(&synth, &svae, &split, &cfg.data.target, &counts, &tc)?;
            let table: Vec<Vec<String>> = std::iter::once(&sweep.baseline)
                .chain(&sweep.rows)
                .map(|r| {
                    vec![
                        r.count.to_string(),
                        format_sig6(r.ssim.mean),
                        format_sig6(r.ssim.std),
                        format_sig6(r.psnr.mean),
                        format_sig6(r.psnr.std),
                    ]
                })
                .collect();
            write_file(
                &out.join("sweep_count.csv"),
                &table_bytes(&["count", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std"], &table),
            )?;
            if sweep.rows.len() >= 2 {
                let pts: Vec<(f64, f64)> = sweep.rows.iter().map(|r| (r.count as f64, r.ssim.mean)).collect();
                sweep_plot(&pts, "adaptation volumes vs target-test SSIM")?.write(&out.join("sweep_count.ppm"))?;
            }
        }
        Command::Report(_) => {
            let (split, controls) = load_data(&cfg)?;
            let b = run_benchmark_on(&split, &controls, &cfg.data, &tc, &cfg.benchmark)?;
            let mut extra = Map::new();
            extra.insert("svae_encoder_params".into(), json!(b.svae_encoder_params));
            if let Some(v) = b.vae3d_encoder_params {
                extra.insert("vae3d_encoder_params".into(), json!(v));
                extra.insert("encoder_param_ratio".into(), json_number(v as f64 / b.svae_encoder_params as f64));
            }
            extra.insert("source_l1_before".into(), json_number(b.source_l1_before));
            extra.insert("source_l1_after".into(), json_number(b.source_l1_after));
            extra.insert("adapt_kl".into(), json!(b.uda_trace.adapt_kl));
            let mut reports = b.reports.clone();
            finish_reports(&cfg, out, &mut reports, extra)?;
            write_montage(out, "montage-no-da.ppm", &b.synth, &split.target_test)?;
            write_montage(out, "montage-svae-uda.ppm", &b.adapted, &split.target_test)?;
            let k = cfg.benchmark.finetune_count;
            if k > 0 {
                let _ = supervised_da_tag(k);
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
