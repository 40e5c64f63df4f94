//! `splitseg`: build and inspect models, run the codec, segment images under
//! any of the four deployment topologies, and report complexity.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitseg::analysis::Resolution;
use splitseg::harness::Topology;

#[derive(Debug, Parser)]
#[command(
    name = "splitseg",
    version,
    about = "Split semantic segmentation with a joint feature decoder"
)]
struct Cli {
    /// Seed for weight initialisation and synthetic data.
    #[arg(long, global = true, env = "SPLITSEG_SEED", default_value_t = 0)]
    seed: u64,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Architecture flags; each overrides the matching key of `--config`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// `d` (baseline decoder) or `jd` (joint decoder).
    #[arg(long)]
    pub variant: Option<String>,
    /// Internal dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of classes S.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Downsampling factor k of the decoder input grid.
    #[arg(long)]
    pub downsample: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a freshly initialised weight file.
    Init {
        #[arg(long)]
        out: PathBuf,
        /// `key = value` file with decoder config fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Describe a weight, bitstream, segmentation map or tensor file.
    Inspect { file: PathBuf },
    /// Count parameters and multiply-accumulates.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Input resolution as HEIGHTxWIDTH.
        #[arg(long, default_value = "1024x2048")]
        res: Resolution,
        /// Also emit the baseline vs joint cloud comparison.
        #[arg(long)]
        table3: bool,
        /// Directory for CSV and JSON reports.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Entropy-code a latent tensor.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a bitstream back to the quantized latent.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode, decode and check the result equals the quantized input.
    Roundtrip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Keep the intermediate bitstream here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment a PPM image under one topology.
    Segment {
        #[arg(long)]
        topology: Topology,
        #[arg(long)]
        image: PathBuf,
        /// Weight file; seeded weights for the topology's variant otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        /// Server address for the distributed topologies.
        #[arg(long, env = "SPLITSEG_ADDR")]
        addr: Option<String>,
        /// Output segmentation map (SSMP).
        #[arg(long)]
        out: PathBuf,
        /// Also write the map as a PGM label image.
        #[arg(long)]
        pgm: Option<PathBuf>,
        /// Write channel statistics here instead of stdout.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run the cloud side of the distributed topologies.
    Serve {
        #[arg(long, env = "SPLITSEG_ADDR", default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        weights: PathBuf,
        /// Largest accepted frame payload in bytes.
        #[arg(long)]
        max_frame: Option<usize>,
    },
    /// Time the in-car and distributed paths on synthetic images.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "512x512")]
        res: Resolution,
        #[arg(long, default_value_t = 3)]
        iters: usize,
    },
    /// Write random test inputs.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Debug, Subcommand)]
enum SynthKind {
    /// Random RGB image as binary PPM.
    Image {
        #[arg(long)]
        res: Resolution,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random latent tensor, values uniform in `[-scale, scale]`.
    Tensor {
        /// Shape as `FxHxW`.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 10.0)]
        scale: f32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let seed = cli.seed;
    let result = match cli.command {
        Command::Init { out, config, model } => {
            commands::init(&out, config.as_deref(), &model, seed)
        }
        Command::Inspect { file } => commands::inspect(&file),
        Command::Analyze {
            model,
            res,
            table3,
            out_dir,
        } => commands::analyze(&model, res, table3, out_dir.as_deref()),
        Command::Encode {
            input,
            weights,
            out,
        } => commands::encode(&input, &weights, &out),
        Command::Decode {
            input,
            weights,
            out,
        } => commands::decode(&input, &weights, &out),
        Command::Roundtrip {
            input,
            weights,
            out,
        } => commands::roundtrip(&input, &weights, out.as_deref()),
        Command::Segment {
            topology,
            image,
            weights,
            model,
            addr,
            out,
            pgm,
            stats,
        } => commands::segment(commands::SegmentArgs {
            topology,
            image,
            weights,
            model,
            addr,
            out,
            pgm,
            stats,
            seed,
        }),
        Command::Serve {
            addr,
            weights,
            max_frame,
        } => commands::serve(&addr, &weights, max_frame),
        Command::Bench { model, res, iters } => commands::bench(&model, res, iters, seed),
        Command::Synth { kind } => match kind {
            SynthKind::Image { res, out } => commands::synth_image(res, &out, seed),
            SynthKind::Tensor { shape, scale, out } => {
                commands::synth_tensor(&shape, scale, &out, seed)
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
