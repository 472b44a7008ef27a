use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "geotransfer",
    version,
    about = "Geometry-aware style transfer on voxel radiance fields",
    long_about = "Geometry-aware style transfer on voxel radiance fields.\n\n\
        Typical workflow: make-scene -> pretrain -> stylize -> render / evaluate.\n\
        On failure the last stderr line reads `error[<category>]: <message>`."
)]
pub struct Cli {
    /// Echo info-level log lines to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic posed dataset, its ground-truth field and a procedural style pair.
    MakeScene(MakeSceneArgs),
    /// Fit density and color grids to a dataset.
    Pretrain(PretrainArgs),
    /// Stylize a pretrained checkpoint with an RGB + depth style pair.
    Stylize(StylizeArgs),
    /// Render RGB and depth images from a checkpoint.
    Render(RenderArgs),
    /// SIFID of renders against a style pair (RGB, gray, depth).
    Evaluate(EvaluateArgs),
}

/// Training configuration sources, applied after the defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config file (any subset of the training configuration).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set stylize.iterations=50`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    TwoToneSphere,
    TexturedBox,
    TwoPlanes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Waves,
    Dots,
    Bricks,
}

#[derive(Debug, Args)]
pub struct MakeSceneArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Scene spec JSON; replaces the preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Voxel nodes per axis of the ground-truth field.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Image width and height.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_enum, default_value = "waves")]
    pub style: StyleArg,
    #[arg(long, default_value_t = 64)]
    pub style_size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory with cameras.json.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct StyleArgs {
    #[arg(long)]
    pub style_rgb: PathBuf,
    /// Style depth: 16-bit PNG or raw .depth sidecar. Required.
    #[arg(long)]
    pub style_depth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    /// Pretrained checkpoint, or an interrupted stylization to resume.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub style: StyleArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `stylizing.gtck` every N iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose cameras are rendered.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Render the canonical field, ignoring the deformation grid.
    #[arg(long)]
    pub no_deformation: bool,
    /// Also write side-by-side strips without | with deformation.
    #[arg(long)]
    pub compare: bool,
    /// Render N views on a camera arc instead of the dataset cameras.
    #[arg(long)]
    pub arc: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub style: StyleArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate only the first N dataset cameras.
    #[arg(long)]
    pub views: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}
