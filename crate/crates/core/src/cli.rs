//! The `lc` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::edit::{run_probe, ProbeSpec, SvdOptions, DEFAULT_SVD_BUDGET};
use crate::error::{Error, Result};
use crate::geom::DepthMap;
use crate::io::{load_scene, read_depth, read_segments, save_scene, write_depth, DepthFormat, EncodeParams, IntrinsicsFile};
use crate::pipeline::{
    box_proxy, boundary_proxy, check_boundary_with, check_boxes, check_exact_with, prepare_dataset, BoundaryOptions,
    BoxCheckOptions, BoxOptions, ConditionReport, DatasetOptions, FootprintMethod, ProxyMode, ScaleAlignment, DEFAULT_ETA, DEFAULT_IOU_THETA,
    DEFAULT_MIN_MASK_AREA, DEFAULT_TAU_REL,
};
use crate::service::{parse_box_list, serve, ServiceConfig, DEFAULT_BODY_LIMIT};

/// Environment variable overriding the default far plane.
pub const FAR_ENV: &str = "LC_FAR_M";

#[derive(Debug, Parser)]
#[command(name = "lc", version, about = "Boundary and box proxy depth conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract a boundary condition and editable scene from a depth map.
    Boundary(BoundaryArgs),
    /// Fit boxes to segments and render the box proxy condition.
    Boxes(BoxesArgs),
    /// Render a scene file.
    Render(RenderArgs),
    /// Check generated depth against a condition.
    Check(CheckArgs),
    /// Turn a directory of samples into conditions and a manifest.
    Dataset(DatasetArgs),
    /// Extract edit directions from a probe network.
    Directions(DirectionsArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Profile,
    Grid,
}

impl From<MethodArg> for FootprintMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Profile => FootprintMethod::Profile,
            MethodArg::Grid => FootprintMethod::Grid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Pfm,
    Png16,
    Png8inv,
}

impl From<FormatArg> for DepthFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pfm => DepthFormat::Pfm,
            FormatArg::Png16 => DepthFormat::Png16,
            FormatArg::Png8inv => DepthFormat::Png8inv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignArg {
    None,
    Median,
}

impl From<AlignArg> for ScaleAlignment {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::None => ScaleAlignment::None,
            AlignArg::Median => ScaleAlignment::MedianRatio,
        }
    }
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Horizontal field of view in degrees.
    #[arg(long, conflicts_with = "intrinsics")]
    pub fov: Option<f64>,
    /// JSON file with `fov_deg` or `fx`, `fy`, `cx`, `cy`.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
}

impl CameraArgs {
    fn resolve(&self, default_fov: Option<f64>) -> Result<IntrinsicsFile> {
        if let Some(p) = &self.intrinsics {
            return IntrinsicsFile::load(p);
        }
        self.fov
            .or(default_fov)
            .map(|fov_deg| IntrinsicsFile::Fov { fov_deg })
            .ok_or_else(|| Error::invalid("pass --fov or --intrinsics"))
    }
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Footprint recovery: per-column wall profile or occupancy grid.
    #[arg(long, value_enum, default_value_t = MethodArg::Profile)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.05)]
    pub cell_m: f64,
    #[arg(long, default_value_t = 3.0)]
    pub simplify_eps_cells: f64,
    /// Smallest wall bend in meters the profile method resolves.
    #[arg(long, default_value_t = 1e-3)]
    pub split_tol_m: f64,
    /// Leave out the floor plane.
    #[arg(long)]
    pub no_floor: bool,
    #[arg(long)]
    pub include_ceiling: bool,
    #[arg(long, default_value_t = 1.0)]
    pub y_low: f64,
    #[arg(long, default_value_t = 99.0)]
    pub y_high: f64,
    /// Background depth (default: twice the largest input depth, or LC_FAR_M).
    #[arg(long)]
    pub far_m: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub max_edge_jump: f64,
    /// Skip the grid method's edge refit after simplification.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Png16)]
    pub format: FormatArg,
    #[arg(long)]
    pub out_cond: PathBuf,
    #[arg(long)]
    pub out_scene: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoxesArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, default_value_t = DEFAULT_MIN_MASK_AREA)]
    pub min_area: usize,
    #[arg(long, default_value_t = 3.0)]
    pub k_mad: f64,
    #[arg(long)]
    pub far_m: Option<f64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Png16)]
    pub format: FormatArg,
    #[arg(long)]
    pub out_cond: PathBuf,
    #[arg(long)]
    pub out_boxes: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Png16)]
    pub format: FormatArg,
    /// Render at another width, keeping the field of view.
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(subcommand)]
    pub mode: CheckCommand,
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Generated depth must equal the condition up to scale.
    Exact(PairArgs),
    /// Generated depth must stay below the condition.
    Boundary(PairArgs),
    /// Generated objects must match the specified boxes.
    Boxes(BoxCheckArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub cond: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, default_value_t = DEFAULT_TAU_REL)]
    pub tau_rel: f64,
    /// Allowed violating fraction (boundary only).
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Scale alignment (default: median for exact, none for boundary).
    #[arg(long, value_enum)]
    pub align: Option<AlignArg>,
}

#[derive(Debug, Args)]
pub struct BoxCheckArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    /// JSON box list, scene file, or `boxes` output.
    #[arg(long)]
    pub boxes: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, default_value_t = DEFAULT_IOU_THETA)]
    pub iou_theta: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_MASK_AREA)]
    pub min_area: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: ProxyMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for condition files (default: `conditions` next to the manifest).
    #[arg(long)]
    pub cond_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Png16)]
    pub format: FormatArg,
    /// Fixed field of view instead of sampling.
    #[arg(long)]
    pub fov: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_MASK_AREA)]
    pub min_area: usize,
}

fn parse_mode(s: &str) -> std::result::Result<ProxyMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct DirectionsArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the randomized SVD path.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Jacobian entries above which the randomized SVD is used.
    #[arg(long, default_value_t = DEFAULT_SVD_BUDGET)]
    pub budget: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Restore scenes from, and snapshot them to, this directory.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BODY_LIMIT)]
    pub body_limit: usize,
}

fn env_far() -> Result<Option<f64>> {
    match std::env::var(FAR_ENV) {
        Ok(v) => v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|f| f.is_finite() && *f > 0.0)
            .map(Some)
            .ok_or_else(|| Error::invalid(format!("{FAR_ENV}='{v}' is not a positive number"))),
        Err(_) => Ok(None),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn report_and_status(report: &ConditionReport) -> Result<i32> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(if report.passed { 0 } else { 1 })
}

fn depth_pair(args: &PairArgs) -> Result<(DepthMap, DepthMap)> {
    let cam = args.camera.resolve(None)?;
    Ok((read_depth(&args.gen, cam)?, read_depth(&args.cond, cam)?))
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Boundary(a) => {
            let depth = read_depth(&a.depth, a.camera.resolve(None)?)?;
            let opts = BoundaryOptions {
                method: a.method.into(),
                cell_m: a.cell_m,
                simplify_eps_cells: a.simplify_eps_cells,
                include_floor: !a.no_floor,
                include_ceiling: a.include_ceiling,
                y_percentiles: (a.y_low, a.y_high),
                far_m: a.far_m.or(env_far()?),
                max_edge_jump: a.max_edge_jump,
                refine_edges: !a.no_refine,
                split_tol_m: a.split_tol_m,
            };
            let r = boundary_proxy(&depth, &opts)?;
            write_depth(&a.out_cond, &r.condition, a.format.into(), EncodeParams::default())?;
            save_scene(&r.scene, &a.out_scene)?;
            Ok(0)
        }
        Command::Boxes(a) => {
            let depth = read_depth(&a.depth, a.camera.resolve(None)?)?;
            let segments = read_segments(&a.segments)?;
            let opts = BoxOptions {
                min_mask_area: a.min_area,
                k_mad: a.k_mad,
                far_m: a.far_m.or(env_far()?),
            };
            let r = box_proxy(&depth, &segments, &opts)?;
            write_depth(&a.out_cond, &r.condition, a.format.into(), EncodeParams::default())?;
            write_json(&a.out_boxes, &r.boxes_json())?;
            Ok(0)
        }
        Command::Render(a) => {
            let loaded = load_scene(&a.scene)?;
            for note in &loaded.notes {
                log::warn!("{note}");
            }
            let size = match (a.width, a.height) {
                (None, None) => None,
                (w, h) => Some((
                    w.unwrap_or(loaded.scene.camera.width),
                    h.unwrap_or(loaded.scene.camera.height),
                )),
            };
            let depth = loaded.scene.render_depth(size)?;
            write_depth(&a.out, &depth, a.format.into(), EncodeParams::default())?;
            Ok(0)
        }
        Command::Check(c) => match c.mode {
            CheckCommand::Exact(a) => {
                let (gen, cond) = depth_pair(&a)?;
                let align = a.align.map(Into::into).unwrap_or(ScaleAlignment::MedianRatio);
                report_and_status(&check_exact_with(&gen, &cond, a.tau_rel, align)?)
            }
            CheckCommand::Boundary(a) => {
                let (gen, cond) = depth_pair(&a)?;
                let align = a.align.map(Into::into).unwrap_or(ScaleAlignment::None);
                report_and_status(&check_boundary_with(&gen, &cond, a.tau_rel, a.eta, align)?)
            }
            CheckCommand::Boxes(a) => {
                let gen = read_depth(&a.gen, a.camera.resolve(None)?)?;
                let segments = read_segments(&a.segments)?;
                let boxes = parse_box_list(&std::fs::read_to_string(&a.boxes)?)?;
                let opts = BoxCheckOptions {
                    iou_theta: a.iou_theta,
                    seed: a.seed,
                    proxy: BoxOptions {
                        min_mask_area: a.min_area,
                        ..BoxOptions::default()
                    },
                    ..BoxCheckOptions::default()
                };
                report_and_status(&check_boxes(&gen, &segments, &boxes, &opts)?)
            }
        },
        Command::Dataset(a) => {
            let far = env_far()?;
            let opts = DatasetOptions {
                boundary: BoundaryOptions {
                    far_m: far,
                    ..BoundaryOptions::default()
                },
                boxes: BoxOptions {
                    min_mask_area: a.min_area,
                    far_m: far,
                    ..BoxOptions::default()
                },
                format: a.format.into(),
                fov_deg: a.fov,
            };
            let cond_dir = a.cond_dir.clone().unwrap_or_else(|| {
                a.out
                    .parent()
                    .map(|p| p.join("conditions"))
                    .unwrap_or_else(|| PathBuf::from("conditions"))
            });
            let report = prepare_dataset(&a.input, &cond_dir, a.mode, a.seed, &opts)?;
            std::fs::write(&a.out, report.manifest_jsonl())?;
            eprintln!("{} sample(s) written, {} skipped", report.entries.len(), report.skipped.len());
            Ok(0)
        }
        Command::Directions(a) => {
            let probe: ProbeSpec = serde_json::from_slice(&std::fs::read(&a.probe)?)?;
            let svd = SvdOptions {
                budget: a.budget,
                seed: a.seed,
                ..SvdOptions::default()
            };
            let result = run_probe(&probe, a.n, &svd)?;
            write_json(&a.out, &json!(result))?;
            Ok(0)
        }
        Command::Serve(a) => {
            let config = ServiceConfig {
                body_limit: a.body_limit,
                snapshot_dir: a.snapshot_dir,
            };
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(serve(SocketAddr::new(a.host, a.port), config))?;
            Ok(0)
        }
    }
}

/// Parses `args`, runs the command and maps failures to exit codes:
/// 2 for usage errors, 1 for pipeline or validation failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
