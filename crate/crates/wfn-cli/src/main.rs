use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use wfn_cli::{cmd_eval, cmd_infer, cmd_synth, cmd_train, cmd_verify, parse_range, parse_size, Ablation, Suite};

#[derive(Parser)]
#[command(name = "wfn", about = "Wavelet-transformer dehazing pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired hazy/clean PPM images from the scattering model.
    Synth {
        /// Output directory for `<id>_hazy.ppm` / `<id>_gt.ppm` + manifest.
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs.
        #[arg(long)]
        count: usize,
        /// Image size as HxW (even extents), e.g. 64x64.
        #[arg(long, default_value = "64x64")]
        size: String,
        /// Depth field kind: ramp | radial | blocks.
        #[arg(long, default_value = "ramp")]
        depth: String,
        /// Scattering coefficient range a..b, sampled per pair.
        #[arg(long, default_value = "0.4..1.2")]
        beta_range: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a paired directory.
    Train {
        /// `key = value` run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Directory of `<id>_hazy.ppm` / `<id>_gt.ppm` pairs.
        #[arg(long)]
        data: PathBuf,
        /// Run directory (config.resolved, metrics.log, checkpoints).
        #[arg(long)]
        out: PathBuf,
        /// Ablation variant: w/o-dwt | w/o-parallel | w/o-fam | w/o-aspp.
        #[arg(long)]
        ablate: Option<String>,
    },
    /// Restore one image with a trained checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare a prediction directory against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report file (`id psnr ssim entropy` per line plus MEAN).
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the property-oracle suites.
    Verify {
        /// wavelet | grad | metrics | asm | all
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { out, count, size, depth, beta_range, seed } => {
            let size = parse_size(&size)?;
            let kind = waveletformer::data::DepthKind::parse(&depth)?;
            let range = parse_range(&beta_range)?;
            cmd_synth(&out, count, size, kind, range, seed)
        }
        Command::Train { config, data, out, ablate } => {
            let ablate = ablate.as_deref().map(Ablation::parse).transpose()?;
            cmd_train(&config, &data, &out, ablate)
        }
        Command::Infer { ckpt, input, output } => cmd_infer(&ckpt, &input, &output),
        Command::Eval { pred, gt, report } => cmd_eval(&pred, &gt, &report),
        Command::Verify { suite } => cmd_verify(Suite::parse(&suite)?),
    }
}
