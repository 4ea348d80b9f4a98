use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "nif", version, about = "Direct-illumination renderer with BVH and neural visibility backends")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene and write PNG + PFM.
    Render(RenderArgs),
    /// Collect training rays from the camera and train a model.
    Train(TrainArgs),
    /// Compare two images: PSNR and an amplified error image.
    Eval(EvalArgs),
    /// Per-stage shadow-ray timings for a list of scenes.
    Bench(BenchArgs),
    /// Train and evaluate over a range of grid settings.
    Sweep(SweepArgs),
}

/// `WxH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
        match (parse(w), parse(h)) {
            (Some(width), Some(height)) => Ok(Resolution { width, height }),
            _ => Err(format!("expected positive WxH, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Bvh,
    Nif,
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Importance,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SharingArg {
    Shared,
    PerObject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Occlusion,
    Geometry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "R")]
    R,
    #[value(name = "N")]
    N,
}

/// Grid settings shared by commands that build a fresh model.
#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Resolution of every grid (default: 256 outer, 128 inner).
    #[arg(long)]
    pub grid_res: Option<usize>,
    /// Latent width of every grid (default: 3 outer, 5/3 inner).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = SharingArg::Shared)]
    pub sharing: SharingArg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub spp: u32,
    #[arg(long, value_enum, default_value_t = BackendArg::Bvh)]
    pub backend: BackendArg,
    /// Triangle count below which the hybrid backend keeps an object on its BVH.
    #[arg(long, default_value_t = nif_core::render::VisibilityBackend::DEFAULT_HYBRID_THRESHOLD)]
    pub threshold: usize,
    /// Checkpoint for the nif and hybrid backends.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output path; `.png` and `.pfm` siblings are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the scene file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the scene camera's resolution.
    #[arg(long)]
    pub res: Option<Resolution>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub train_spp: u32,
    #[arg(long, value_enum, default_value_t = SamplerArg::Importance)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = HeadArg::Occlusion)]
    pub head: HeadArg,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub res: Option<Resolution>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Error image path; `.png` and `.pfm` siblings are written.
    #[arg(long)]
    pub out_diff: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    pub amplify: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scene files, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenes: Vec<PathBuf>,
    /// Pixel samples whose shadow rays form the timed batch.
    #[arg(long, default_value_t = 1)]
    pub spp: u32,
    /// Directory holding `<scene stem>.nif` checkpoints; scenes without one
    /// get an untrained model of the default configuration.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub res: Option<Resolution>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub train_spp: u32,
    #[arg(long, value_enum, default_value_t = SamplerArg::Importance)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Evaluation samples per pixel.
    #[arg(long, default_value_t = 16)]
    pub spp: u32,
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV with `param,value,psnr,train_seconds,render_seconds`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub res: Option<Resolution>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_parses() {
        assert_eq!("512x288".parse(), Ok(Resolution { width: 512, height: 288 }));
        assert_eq!("4X3".parse(), Ok(Resolution { width: 4, height: 3 }));
        assert!("0x3".parse::<Resolution>().is_err());
        assert!("512".parse::<Resolution>().is_err());
        assert!("ax3".parse::<Resolution>().is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["nif", "sweep", "--param", "R", "--values", "16,64", "--scene", "s.toml", "--out", "o.csv"]).unwrap();
        match cli.command {
            Command::Sweep(s) => {
                assert_eq!(s.param, SweepParam::R);
                assert_eq!(s.values, vec![16, 64]);
            }
            _ => panic!(),
        }
        let cli = Cli::try_parse_from(["nif", "train", "--scene", "s", "--out", "m", "--sharing", "per-object", "--head", "geometry"]).unwrap();
        match cli.command {
            Command::Train(t) => {
                assert_eq!(t.model.sharing, SharingArg::PerObject);
                assert_eq!(t.head, HeadArg::Geometry);
                assert_eq!((t.train_spp, t.epochs), (4, 30));
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["nif", "render", "--scene", "s"]).is_err());
        assert!(Cli::try_parse_from(["nif", "render", "--scene", "s", "--out", "o", "--backend", "gpu"]).is_err());
    }
}
