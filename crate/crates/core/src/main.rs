use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cfa::bank::{load_bank, save_bank, BankConfig, BankMeta, MemoryBank};
use cfa::descriptor::{load_checkpoint, reduced_dim, save_checkpoint, PatchDescriptor, TrainableDescriptor};
use cfa::eval::write_roc_csv;
use cfa::loss::{CfaHyperParams, RepMarginMode};
use cfa::manifest::{load_manifest, DatasetManifest};
use cfa::optim::AdamWConfig;
use cfa::pipeline::{build_bank, evaluate_class, score_samples, write_scores, ManifestSource};
use cfa::synthetic::{generate, load_spec, SyntheticSpec};
use cfa::train::{train, write_loss_csv, SampleSource};

#[derive(Parser)]
#[command(name = "cfa", version, about = "Patch-feature adaptation and anomaly localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature dataset with a manifest.
    GenSynthetic {
        /// JSON spec; the standard benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Model the memory bank from the training split.
    BuildBank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma_c: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma_d: f64,
        /// EMA weight of newly matched patches.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        kmeans_iters: usize,
        #[arg(long)]
        no_bias: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also save the initial descriptor as a checkpoint.
        #[arg(long)]
        init_out: Option<PathBuf>,
    },
    /// Adapt the descriptor against a fixed bank.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        /// Starting checkpoint; by default the descriptor the bank was built with.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 5e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write per-sample score maps and image scores for the test split.
    Score {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute image and pixel AUROC and the F1 threshold on the test split.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        report: PathBuf,
        /// Also write image and pixel ROC points.
        #[arg(long)]
        roc_csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    j: usize,
    #[arg(long, default_value_t = 1e-5)]
    r: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// `non-degenerate` or `as-written`.
    #[arg(long, default_value = "non-degenerate")]
    rep_margin_mode: RepMarginMode,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    desc: PathBuf,
    /// Neighbors used by the certainty-weighted score.
    #[arg(long, default_value_t = 3)]
    k: usize,
}

fn load_model(args: &ModelArgs) -> anyhow::Result<(DatasetManifest, MemoryBank<f32>, PatchDescriptor<f32>)> {
    let manifest = load_manifest(&args.manifest).context("loading manifest")?;
    let (bank, _) = load_bank(&args.bank).context("loading bank")?;
    let desc = load_checkpoint(&args.desc).context("loading descriptor")?.descriptor;
    if desc.out_dim() != bank.dim() {
        bail!("descriptor emits {} dims but the bank holds {}", desc.out_dim(), bank.dim());
    }
    Ok((manifest, bank, desc))
}

fn feature_dim(source: &ManifestSource) -> anyhow::Result<usize> {
    if source.is_empty() {
        bail!("manifest has no training samples");
    }
    Ok(source.load(0)?.dim())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenSynthetic { spec, out_dir } => {
            let spec = match spec {
                Some(p) => load_spec(&p).with_context(|| format!("reading {}", p.display()))?,
                None => SyntheticSpec::standard(),
            };
            let path = generate(&spec)?.write(&out_dir)?;
            println!("wrote {}", path.display());
        }
        Command::BuildBank {
            manifest,
            gamma_c,
            gamma_d,
            beta,
            seed,
            kmeans_iters,
            no_bias,
            out,
            init_out,
        } => {
            let manifest = load_manifest(&manifest).context("loading manifest")?;
            let source = ManifestSource::train(&manifest);
            let in_dim = feature_dim(&source)?;
            let config = BankConfig { gamma_c, gamma_d, ema_beta: beta, kmeans_iters, seed };
            config.validate()?;
            let desc = PatchDescriptor::<f32>::init(in_dim, reduced_dim(in_dim, gamma_d), seed, !no_bias)?;
            let bank = build_bank(&source, &desc, &config)?;
            ensure_parent(&out)?;
            let meta = BankMeta { config, in_dim, descriptor_seed: seed, use_bias: !no_bias };
            save_bank(&out, &bank, &meta)?;
            if let Some(p) = init_out {
                ensure_parent(&p)?;
                save_checkpoint(&p, &TrainableDescriptor::new(desc, AdamWConfig::default()))?;
            }
            println!("bank: {} centers x {} dims from {} samples", bank.len(), bank.dim(), source.len());
        }
        Command::Train {
            manifest,
            bank,
            init,
            epochs,
            batch,
            lr,
            weight_decay,
            seed,
            loss,
            out,
            log,
        } => {
            let manifest = load_manifest(&manifest).context("loading manifest")?;
            let (bank, meta) = load_bank(&bank).context("loading bank")?;
            let optim = AdamWConfig { lr, weight_decay, ..Default::default() };
            let mut model = match init {
                Some(p) => {
                    let mut m = load_checkpoint(&p).context("loading initial descriptor")?;
                    m.optimizer.config = optim;
                    m
                }
                None => TrainableDescriptor::new(
                    PatchDescriptor::init(meta.in_dim, bank.dim(), meta.descriptor_seed, meta.use_bias)?,
                    optim,
                ),
            };
            let hp = CfaHyperParams {
                r: loss.r,
                alpha: loss.alpha,
                k: loss.k,
                j: loss.j,
                epochs,
                batch_size: batch,
                rep_margin_mode: loss.rep_margin_mode,
            };
            let source = ManifestSource::train(&manifest);
            let history = train(&source, &mut model, &bank, &hp, seed)?;
            ensure_parent(&out)?;
            save_checkpoint(&out, &model)?;
            if let Some(p) = log {
                ensure_parent(&p)?;
                write_loss_csv(&p, &history)?;
            }
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: l_att {:.6} l_rep {:.6} l_total {:.6}",
                    last.epoch, last.losses.l_att, last.losses.l_rep, last.losses.l_total
                );
            }
        }
        Command::Score { model, out_dir } => {
            let (manifest, bank, desc) = load_model(&model)?;
            let source = ManifestSource::test(&manifest);
            let maps = score_samples(&source, &desc, &bank, model.k, manifest.input_resolution)?;
            write_scores(&out_dir, source.entries(), &maps)?;
            println!("scored {} samples into {}", maps.len(), out_dir.display());
        }
        Command::Eval { model, report, roc_csv } => {
            let (manifest, bank, desc) = load_model(&model)?;
            let hp = CfaHyperParams { k: model.k, ..Default::default() };
            let eval = evaluate_class(&manifest, &bank, &desc, &hp)?;
            ensure_parent(&report)?;
            eval.report.save(&report)?;
            if let Some(p) = roc_csv {
                ensure_parent(&p)?;
                write_roc_csv(&p, &[("image", &eval.image_roc), ("pixel", &eval.pixel_roc)])?;
            }
            let r = &eval.report;
            println!(
                "{}: I-AUROC {:.2} P-AUROC {:.2} F1 {:.4} at {:.6e}",
                r.class_name, r.i_auroc, r.p_auroc, r.f1, r.f1_threshold
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
