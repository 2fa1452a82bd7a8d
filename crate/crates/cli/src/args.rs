use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Encrypts volumes into light-field images and decrypts them with a PSF key.
#[derive(Debug, Parser)]
#[command(name = "lfcrypt", version, arg_required_else_help = true)]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_defaults: bool,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a PSF key from the configured optics and mask.
    Keygen(KeygenArgs),
    /// Render a volume through the key onto the sensor.
    Encrypt(EncryptArgs),
    /// Recover a volume from a sensor image.
    Decrypt(DecryptArgs),
    /// Split a sensor image into binary bit planes.
    Digitize(DigitizeArgs),
    /// Rebuild a sensor image from bit planes.
    Reassemble(ReassembleArgs),
    /// Write one of the built-in scenes as a volume file.
    Demo(DemoArgs),
    /// Decrypt a scene under occlusion and key-perturbation attacks.
    Attack(AttackArgs),
    /// Per-plane normalized correlation between two volumes.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    /// Mask seed; overrides `mask.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncryptArgs {
    #[arg(short, long)]
    pub key: PathBuf,
    /// Input volume file.
    #[arg(long, conflicts_with = "stack", required_unless_present = "stack")]
    pub volume: Option<PathBuf>,
    /// Grayscale images, one per configured z-plane, used instead of a volume file.
    #[arg(long, num_args = 1..)]
    pub stack: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Camera bit depth; overrides `sensor.bits`.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Block this fraction of the image, anchored at the top-left corner.
    #[arg(long)]
    pub occlude: Option<f64>,
    /// Also write a normalized 16-bit PNG preview.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OcclusionArg {
    /// Blocked pixels are left out of the fit.
    Masked,
    /// Blocked pixels count as measured zeros.
    Zeros,
}

#[derive(Debug, Args)]
pub struct DecryptArgs {
    #[arg(short, long)]
    pub key: PathBuf,
    #[arg(short, long)]
    pub image: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overrides `deconv.iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Overrides `deconv.threshold`.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Overrides `deconv.occlusion`.
    #[arg(long, value_enum)]
    pub occlusion_mask: Option<OcclusionArg>,
    /// Write one JSON record per iteration to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DigitizeArgs {
    #[arg(short, long)]
    pub image: PathBuf,
    /// Number of bit planes N.
    #[arg(short = 'n', long)]
    pub levels: u32,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write one black/white PNG per plane plus a manifest into this directory.
    #[arg(long)]
    pub png_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReassembleArgs {
    /// Plane container, or a `.planes` PNG manifest.
    #[arg(short, long)]
    pub planes: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// sbu, multiplex, grayscale3 or grayscale4.
    #[arg(short, long)]
    pub scene: String,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(short, long)]
    pub key: PathBuf,
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    pub volume: Option<PathBuf>,
    /// Built-in scene rendered on the configured grid.
    #[arg(long)]
    pub scene: Option<String>,
    /// Directory for reconstructions and `report.jsonl`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Occluded image fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.375])]
    pub occlusion: Vec<f64>,
    /// Key perturbation fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05])]
    pub perturbation: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub perturbation_seed: u64,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(short, long)]
    pub reference: PathBuf,
    #[arg(short = 'c', long)]
    pub reconstruction: PathBuf,
}
