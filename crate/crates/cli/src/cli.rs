use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tfce_core::prelude::{Connectivity, MassConvention, Tails};

#[derive(Debug, Parser)]
#[command(name = "exact-tfce", version, about = "Exact threshold-free cluster enhancement and permutation inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance one statistic map.
    Tfce(TfceArgs),
    /// Permutation inference on a group of subject maps.
    Infer(InferArgs),
    /// Supra-threshold clusters of one map.
    Cluster(ClusterArgs),
    /// Compare two corrected p-value maps.
    Compare(CompareArgs),
    /// Time the per-randomization pipeline on a synthetic phantom.
    Bench(BenchArgs),
    /// Write a synthetic 4D subject stack.
    Phantom(PhantomArgs),
}

pub fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    s.parse::<u32>()
        .ok()
        .and_then(Connectivity::from_neighbor_count)
        .ok_or_else(|| format!("{s:?} is not one of 4, 8 (2D) or 6, 18, 26 (3D)"))
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] if n > 0 => Ok([n, n, n]),
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("{s:?}: expected N or X,Y,Z with positive extents")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TailsArg {
    Positive,
    Negative,
    TwoSided,
}

impl From<TailsArg> for Tails {
    fn from(t: TailsArg) -> Self {
        match t {
            TailsArg::Positive => Tails::Positive,
            TailsArg::Negative => Tails::Negative,
            TailsArg::TwoSided => Tails::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MassArg {
    /// Sum of statistic values.
    Sum,
    /// Sum of values minus the threshold.
    Excess,
}

impl From<MassArg> for MassConvention {
    fn from(m: MassArg) -> Self {
        match m {
            MassArg::Sum => MassConvention::Sum,
            MassArg::Excess => MassConvention::ExcessAboveThreshold,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnhanceArgs {
    /// Extent exponent.
    #[arg(short = 'E', long = "extent-exponent", default_value_t = 0.5)]
    pub e: f64,
    /// Height exponent.
    #[arg(short = 'H', long = "height-exponent", default_value_t = 2.0)]
    pub h: f64,
    /// Lower integration limit.
    #[arg(long, default_value_t = 0.0)]
    pub h0: f64,
    /// Neighbor count: 6, 18, 26 (3D) or 4, 8 (2D).
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub conn: Connectivity,
}

#[derive(Debug, Clone, Args)]
pub struct TfceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    /// Use the fixed-step approximation with this many thresholds.
    #[arg(long, value_name = "STEPS")]
    pub discretized: Option<usize>,
    /// Enhance the negated map.
    #[arg(long)]
    pub negative: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// 4D stack with subjects along the fourth dimension.
    #[arg(long = "in", required_unless_present_any = ["in_list", "replay"], conflicts_with_all = ["in_list", "replay"])]
    pub input: Option<PathBuf>,
    /// Text file listing one 3D map per subject.
    #[arg(long, conflicts_with = "replay")]
    pub in_list: Option<PathBuf>,
    /// Rerun the configuration recorded in a manifest.json.
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub enhance: EnhanceArgs,
    /// Randomizations after the observed data.
    #[arg(long, default_value_t = 4999)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enumerate every sign pattern or label arrangement.
    #[arg(long)]
    pub exhaustive: bool,
    /// Group labels (1 = first group, 0 = second), one per subject, for a two-sample test.
    #[arg(long, value_name = "FILE")]
    pub groups: Option<PathBuf>,
    /// Sign-flip patterns (+1/-1 text, identity row first).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["groups", "exhaustive"])]
    pub perm_matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "positive")]
    pub tails: TailsArg,
    /// Skip voxel-wise TFCE.
    #[arg(long)]
    pub no_tfce: bool,
    /// Cluster-extent inference at this cluster-defining threshold.
    #[arg(long, value_name = "CDT")]
    pub cluster_extent: Option<f64>,
    /// Cluster-mass inference at this cluster-defining threshold.
    #[arg(long, value_name = "CDT")]
    pub cluster_mass: Option<f64>,
    #[arg(long, value_enum, default_value = "sum")]
    pub mass_convention: MassArg,
    /// Fixed-step TFCE with this many thresholds.
    #[arg(long, value_name = "STEPS")]
    pub discretized: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "TFCE_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Cluster-defining threshold (voxels with value >= cdt).
    #[arg(long)]
    pub cdt: f64,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub conn: Connectivity,
    #[arg(long, value_enum, default_value = "sum")]
    pub mass_convention: MassArg,
    /// Cluster the negated map.
    #[arg(long)]
    pub negative: bool,
    /// Cluster table JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label map: cluster number from 1, 0 elsewhere.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Reference p-value map (D > 0 where it is more significant).
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Restrict to this mask (default: voxels where both maps hold a p-value in (0, 1]).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Report JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-voxel CSV for plotting.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Grid: N for a cube or X,Y,Z.
    #[arg(long, default_value = "64", value_parser = parse_dims)]
    pub dims: [usize; 3],
    #[arg(long, default_value_t = 12)]
    pub subjects: usize,
    /// Timed randomizations.
    #[arg(long, default_value_t = 20)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub conn: Connectivity,
    /// Cluster-defining threshold for extent and mass.
    #[arg(long, default_value_t = 3.0)]
    pub cdt: f64,
    /// Thresholds of the fixed-step baseline (0 skips it).
    #[arg(long, default_value_t = 100)]
    pub discretized: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Machine-readable report.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value = "16,16,8", value_parser = parse_dims)]
    pub dims: [usize; 3],
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// Signal amplitude in noise standard deviations.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Signal sphere radius in voxels.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Leave the noise unsmoothed.
    #[arg(long)]
    pub white: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
