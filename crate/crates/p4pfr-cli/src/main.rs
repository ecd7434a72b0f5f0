//! Command-line front end: solve correspondence files, run the synthetic
//! benchmark, or run robust estimation over larger correspondence sets.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use p4pfr_cli::format::{
    self, CorrespondenceFile, GroundTruthSidecar, RejectionRecord, SolutionRecord, SolveDocument,
    CORRESPONDENCE_FORMAT, RANSAC_FORMAT,
};
use nalgebra::Vector3;
use p4pfr::scene::{benchmark_histogram, random_instance, SceneConfig};
use p4pfr::solver::{
    reprojection_error, solve, ImagePoint, PoseSolution, SolveError, SolverConfig,
};
use p4pfr::{ransac_pose, RansacConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "p4pfr",
    about = "Absolute camera pose from four coplanar points with unknown focal length and radial distortion",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a four-point correspondence file.
    Solve {
        /// Correspondence file (TOML, format = "planar-p4pfr/1").
        input: PathBuf,
        /// Also write the solutions as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Run the synthetic stability and timing benchmark.
    Bench {
        /// Number of random instances.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Base seed; instance i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Histogram bin width in log10 units.
        #[arg(long, default_value_t = 0.2)]
        bins: f64,
        /// Histogram range as "lo,hi" in log10 units.
        #[arg(long, default_value = "-20,-3", allow_hyphen_values = true)]
        range: String,
        /// Write the histogram CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one instance as a correspondence file (plus a ground-truth
        /// sidecar next to it) and exit without benchmarking.
        #[arg(long)]
        emit_one: Option<PathBuf>,
    },
    /// Robust estimation over n >= 4 correspondences on one plane.
    Ransac {
        input: PathBuf,
        /// Inlier threshold on the reprojection error (input image units).
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        /// Maximum RANSAC iterations.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the Gauss-Newton refinement of the best model.
        #[arg(long)]
        no_refine: bool,
    },
}

fn main() -> ExitCode {
    // Flag errors exit 1 (clap's default of 2 is reserved for "no solution").
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { input, json_out } => cmd_solve(&input, json_out.as_deref()),
        Command::Bench {
            n,
            seed,
            bins,
            range,
            out,
            emit_one,
        } => cmd_bench(n, seed, bins, &range, out.as_deref(), emit_one.as_deref()),
        Command::Ransac {
            input,
            threshold,
            iters,
            seed,
            no_refine,
        } => cmd_ransac(&input, threshold, iters, seed, no_refine),
    }
}

/// Undo the `image_scale_hint` pre-scaling on a solved pose: coordinates were
/// multiplied by `h`, so `f -> f/h`, `k -> k·h²`; the pose is unaffected.
fn unscale_solution(mut sol: PoseSolution, h: f64) -> PoseSolution {
    if h != 1.0 {
        sol.f /= h;
        sol.k *= h * h;
        sol.max_reproj_err /= h;
    }
    sol
}

fn solve_error_kind(e: &SolveError) -> &'static str {
    match e {
        SolveError::NotCoplanar { .. } => "not-coplanar",
        SolveError::DegenerateScene(_)
        | SolveError::RankDeficient
        | SolveError::SingularC
        | SolveError::DegenerateInstance => "degenerate",
        SolveError::DeflationFailed { .. } | SolveError::Roots(_) => "numerical",
    }
}

fn cmd_solve(input: &Path, json_out: Option<&Path>) -> Result<ExitCode> {
    let file = CorrespondenceFile::load(input)?;
    if file.world.len() != 4 {
        bail!("input: need exactly 4 points, got {}", file.world.len());
    }
    let h = file.image_scale_hint.unwrap_or(1.0);
    let world: [Vector3<f64>; 4] = std::array::from_fn(|i| file.world_points()[i]);
    let image: [ImagePoint; 4] =
        std::array::from_fn(|i| ImagePoint::new(h * file.image[i][0], h * file.image[i][1]));
    let image_orig: [ImagePoint; 4] =
        std::array::from_fn(|i| ImagePoint::new(file.image[i][0], file.image[i][1]));

    let out = match solve(&world, &image, &SolverConfig::default()) {
        Ok(out) => out,
        Err(e) => bail!("{}: {e}", solve_error_kind(&e)),
    };

    let mut records = Vec::new();
    for sol in out.solutions {
        let sol = unscale_solution(sol, h);
        let errs = reprojection_error(&sol, &world, &image_orig)
            .unwrap_or_else(|_| vec![f64::NAN; 4]);
        records.push(SolutionRecord::from_solution(&sol, errs));
    }
    let doc = SolveDocument {
        format: format::SOLUTIONS_FORMAT.to_string(),
        solutions: records,
        rejections: out
            .rejections
            .iter()
            .map(RejectionRecord::from_rejection)
            .collect(),
    };
    print!("{}", format::render_solve_document(&doc));
    if let Some(path) = json_out {
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(if doc.solutions.is_empty() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_bench(
    n: usize,
    seed: u64,
    bins: f64,
    range: &str,
    out: Option<&Path>,
    emit_one: Option<&Path>,
) -> Result<ExitCode> {
    if n < 1 {
        bail!("n must be ≥ 1");
    }
    if !(bins.is_finite() && bins > 0.0) {
        bail!("bins must be a positive real");
    }
    let (lo, hi) = parse_range(range)?;
    let scene = SceneConfig {
        seed,
        ..SceneConfig::default()
    };

    if let Some(path) = emit_one {
        let gt = random_instance(&scene)?;
        let file = CorrespondenceFile {
            format: CORRESPONDENCE_FORMAT.to_string(),
            world: gt.world3d.iter().map(|w| [w.x, w.y, w.z]).collect(),
            image: gt.image.iter().map(|p| [p.x, p.y]).collect(),
            image_scale_hint: None,
        };
        file.save(path)?;
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = gt.r[(i, j)];
            }
        }
        let sidecar_path = sidecar_path(path);
        GroundTruthSidecar {
            r,
            t: [gt.t.x, gt.t.y, gt.t.z],
            f: gt.f,
            k: gt.k,
        }
        .save(&sidecar_path)?;
        println!("wrote {} and {}", path.display(), sidecar_path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let report = benchmark_histogram(n, &scene, &SolverConfig::default(), bins, [lo, hi])?;
    let mut csv = String::from("bin_left,fraction\n");
    for (left, frac) in &report.bins {
        let _ = writeln!(csv, "{},{}", format::fmt(*left), format::fmt(*frac));
    }
    match out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{csv}"),
    }
    println!("median_log10_err={:.6}", report.median_log10_err);
    println!("p99_log10_err={:.6}", report.p99_log10_err);
    println!("fail_rate={:.6}", report.fail_rate());
    println!("mean_solve_us={:.3}", report.mean_solve_us);
    println!("median_solve_us={:.3}", report.median_solve_us);
    Ok(ExitCode::SUCCESS)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".gt.toml");
    path.with_file_name(name)
}

fn parse_range(range: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = range.split(',').collect();
    if parts.len() != 2 {
        bail!("range must be \"lo,hi\"");
    }
    let lo: f64 = parts[0].trim().parse().context("range: bad lower bound")?;
    let hi: f64 = parts[1].trim().parse().context("range: bad upper bound")?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        bail!("range must satisfy lo < hi");
    }
    Ok((lo, hi))
}

fn cmd_ransac(
    input: &Path,
    threshold: f64,
    iters: usize,
    seed: u64,
    no_refine: bool,
) -> Result<ExitCode> {
    if iters < 1 {
        bail!("iters must be ≥ 1");
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        bail!("threshold must be a positive real");
    }
    let file = CorrespondenceFile::load(input)?;
    let h = file.image_scale_hint.unwrap_or(1.0);
    let world = file.world_points();
    let image: Vec<ImagePoint> = file
        .image
        .iter()
        .map(|p| ImagePoint::new(h * p[0], h * p[1]))
        .collect();
    let image_orig: Vec<ImagePoint> = file
        .image
        .iter()
        .map(|p| ImagePoint::new(p[0], p[1]))
        .collect();

    let config = RansacConfig {
        max_iters: iters,
        inlier_threshold: threshold * h,
        confidence: 0.999,
        seed,
        refine: !no_refine,
    };
    let result = match ransac_pose(&world, &image, &config, &SolverConfig::default()) {
        Ok(r) => r,
        Err(e) => bail!("{}: {e}", solve_error_kind(&e)),
    };
    let Some(result) = result else {
        println!("format: {RANSAC_FORMAT}");
        println!("no model found");
        return Ok(ExitCode::from(2));
    };

    let sol = unscale_solution(result.solution, h);
    let errs =
        reprojection_error(&sol, &world, &image_orig).unwrap_or_else(|_| vec![f64::NAN; world.len()]);
    let record = SolutionRecord::from_solution(&sol, errs);
    println!("format: {RANSAC_FORMAT}");
    println!("iterations: {}", result.iterations_run);
    println!(
        "inlier_count: {}",
        result.inlier_mask.iter().filter(|m| **m).count()
    );
    println!(
        "inlier_mask: {}",
        result
            .inlier_mask
            .iter()
            .map(|m| if *m { '1' } else { '0' })
            .collect::<String>()
    );
    let doc = SolveDocument {
        format: RANSAC_FORMAT.to_string(),
        solutions: vec![record],
        rejections: Vec::new(),
    };
    // Reuse the solution block rendering (skip its own header lines).
    let rendered = format::render_solve_document(&doc);
    for line in rendered.lines().skip(2) {
        println!("{line}");
    }
    Ok(ExitCode::SUCCESS)
}
