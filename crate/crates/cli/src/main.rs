//! `nrsfm`: synthetic scenes, batch and sequential reconstruction, prior
//! construction, compression and evaluation from the command line.
//!
//! Every subcommand prints `key=value` lines on stdout. Failures print
//! `error=<class>` and `message=<text>` on stderr and exit with the code of
//! the error class (see [`exit_code`]).

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3xX;

use nrsfm_core::codec::{self, CompressedStream};
use nrsfm_core::dcmdr::{build_adjacency, dcmdr_reconstruct, grid_layout, AdjacencyTable, Connectivity, DcmdrConfig};
use nrsfm_core::dsp::{build_dsp, canonicalize_states, dsp_cardinality_curve};
use nrsfm_core::dspr::{dspr_stream, DsprConfig, DsprWeights};
use nrsfm_core::eval::{
    align_shapes, center_frames, compression_ratio, convergence_pattern, corrective_rotation, quaternionic_error,
    AlignOptions,
};
use nrsfm_core::geom::{encode_axis_angle, rotation_to_quaternion};
use nrsfm_core::synth::{generate_scene, knockout_tracks, perturb_tracks, KnockoutFill, RotationSchedule, SceneConfig, ShapeSource};
use nrsfm_core::{io, CameraPose, Error, Result, ShapeSequence};

use config::{parse_grid, RunConfig};

#[derive(Parser)]
#[command(name = "nrsfm", version, about = "Dense non-rigid structure from motion with dynamic shape priors")]
struct Cli {
    /// key=value file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic deforming-sheet scene.
    Synth(SynthArgs),
    /// Batch reconstruction of a whole track file.
    Dcmdr(DcmdrArgs),
    /// Build a dynamic shape prior from reconstructed shapes.
    DspBuild(DspBuildArgs),
    /// Sequential reconstruction against a prior.
    Dspr(DsprArgs),
    /// Reconstruct against a prior and store the compressed stream.
    Compress(CompressArgs),
    /// Expand a compressed stream back into shapes.
    Decompress(DecompressArgs),
    /// Add uniform noise to every track entry.
    Perturb(PerturbArgs),
    /// Replace a fraction of point-frame pairs with erroneous values.
    Knockout(KnockoutArgs),
    /// Compare a reconstruction against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    frames: Option<usize>,
    /// Number of sheet points; laid out on the most square grid that fits.
    #[arg(long)]
    points: Option<usize>,
    /// Rotation schedule, `a` or `b`.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for tracks.nrsm, shapes.nrsm, poses.nrsm and ids.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DcmdrArgs {
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Trajectory basis size (default: ceil(F / 10), at most 32).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    /// Reference-frame layout `ROWSxCOLS` (row-major points) for the
    /// trajectory regularizer; without it the regularizer is off.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long = "out-shapes")]
    out_shapes: Option<PathBuf>,
    #[arg(long = "out-poses")]
    out_poses: Option<PathBuf>,
}

#[derive(Args)]
struct DspBuildArgs {
    #[arg(long)]
    shapes: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "out-dsp")]
    out_dsp: Option<PathBuf>,
    /// Comma-separated ascending thresholds; prints the prior size for each.
    #[arg(long = "mu-grid")]
    mu_grid: Option<String>,
}

#[derive(Args, Clone)]
struct DsprFlags {
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "max-alternations")]
    max_alternations: Option<usize>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
}

#[derive(Args)]
struct DsprArgs {
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    dsp: Option<PathBuf>,
    #[command(flatten)]
    flags: DsprFlags,
    /// Tab-separated per-frame records, written as frames complete.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "out-shapes")]
    out_shapes: Option<PathBuf>,
    #[arg(long = "out-poses")]
    out_poses: Option<PathBuf>,
    #[arg(long = "out-ids")]
    out_ids: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    dsp: Option<PathBuf>,
    #[command(flatten)]
    flags: DsprFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long = "out-shapes")]
    out_shapes: Option<PathBuf>,
    #[arg(long = "out-poses")]
    out_poses: Option<PathBuf>,
    #[arg(long = "out-ids")]
    out_ids: Option<PathBuf>,
    /// Also write the embedded prior.
    #[arg(long = "out-dsp")]
    out_dsp: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    magnitude: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KnockoutArgs {
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    /// `frozen` (first-frame position) or `zeros`.
    #[arg(long)]
    fill: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tab-separated `frame point` pairs that were altered.
    #[arg(long = "out-mask")]
    out_mask: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "gt-shapes")]
    gt_shapes: Option<PathBuf>,
    #[arg(long = "gt-poses")]
    gt_poses: Option<PathBuf>,
    #[arg(long = "gt-ids")]
    gt_ids: Option<PathBuf>,
    #[arg(long)]
    shapes: Option<PathBuf>,
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Prior used for the compression ratio and per-frame norm checks.
    #[arg(long)]
    dsp: Option<PathBuf>,
    /// The estimated shapes are posed in each camera frame; compare them
    /// with the ground truth rotated by its poses.
    #[arg(long = "camera-frame")]
    camera_frame: bool,
    /// Skip the global rotation/reflection alignment before e_3D.
    #[arg(long = "no-align")]
    no_align: bool,
    /// Tab-separated per-frame table.
    #[arg(long)]
    table: Option<PathBuf>,
}

/// Process exit code of an error class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 2,
        Error::DegenerateGeometry(_) => 3,
        Error::DegenerateMotion(_) => 4,
        Error::NumericalFailure(_) => 5,
        Error::IdWidthOverflow(_) => 6,
        Error::CorruptStream(_) => 7,
        Error::Io(_) => 8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error={}", e.class());
            eprintln!("message={e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Dcmdr(a) => dcmdr(a, &cfg),
        Command::DspBuild(a) => dsp_build(a, &cfg),
        Command::Dspr(a) => dspr(a, &cfg),
        Command::Compress(a) => compress(a, &cfg),
        Command::Decompress(a) => decompress(a),
        Command::Perturb(a) => perturb(a, &cfg),
        Command::Knockout(a) => knockout(a, &cfg),
        Command::Eval(a) => eval(a),
    }
}

fn required(flag: Option<PathBuf>, cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    cfg.pick_opt(flag, key).ok_or_else(|| Error::InvalidInput(format!("--{key} is required")))
}

fn check_nonneg(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("--{name} must be a nonnegative number, got {v}")))
    }
}

/// Most square `rows x cols` factorization of `points` with `rows >= 2`.
fn sheet_grid(points: usize) -> Result<(usize, usize)> {
    let mut rows = (points as f64).sqrt().floor() as usize;
    while rows >= 2 && !points.is_multiple_of(rows) {
        rows -= 1;
    }
    if rows < 2 {
        return Err(Error::InvalidInput(format!("{points} points do not form a grid with at least two rows")));
    }
    Ok((rows, points / rows))
}

fn synth(a: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let frames = cfg.pick(a.frames, "frames", 30);
    let points = cfg.pick(a.points, "points", 400);
    let schedule_name = cfg.pick(a.schedule, "schedule", "a".to_string());
    let seed = cfg.pick(a.seed, "seed", 0);
    let out = required(a.out, cfg, "out")?;
    let schedule = match schedule_name.as_str() {
        "a" => RotationSchedule::A,
        "b" => RotationSchedule::B,
        other => return Err(Error::InvalidInput(format!("unknown schedule {other:?}, expected a or b"))),
    };
    let (rows, cols) = sheet_grid(points)?;
    let scene = generate_scene(&SceneConfig { shapes: ShapeSource::Sheet { rows, cols }, frames, schedule, seed })?;
    std::fs::create_dir_all(&out)?;
    io::write_measurements(out.join("tracks.nrsm"), &scene.w_clean)?;
    io::write_shapes(out.join("shapes.nrsm"), &scene.gt_shapes)?;
    io::write_poses(out.join("poses.nrsm"), &scene.gt_poses)?;
    io::write_ids(out.join("ids.txt"), &scene.gt_state_ids)?;
    println!("frames={frames}");
    println!("points={points}");
    println!("grid={rows}x{cols}");
    println!("schedule={schedule_name}");
    println!("seed={seed}");
    println!("out={}", out.display());
    Ok(())
}

fn dcmdr(a: DcmdrArgs, cfg: &RunConfig) -> Result<()> {
    let tracks = required(a.tracks, cfg, "tracks")?;
    let w = io::read_measurements(&tracks)?;
    let mut config = DcmdrConfig { rank: cfg.pick_opt(a.k, "k"), ..Default::default() };
    let d = config.weights;
    config.weights.alpha = cfg.pick(a.alpha, "alpha", d.alpha);
    config.weights.beta = cfg.pick(a.beta, "beta", d.beta);
    config.weights.lambda_link = cfg.pick(a.lambda, "lambda", d.lambda_link);
    config.weights.rho = cfg.pick(a.rho, "rho", d.rho);
    config.weights.huber_epsilon = cfg.pick(a.epsilon, "epsilon", d.huber_epsilon);
    config.max_iterations = cfg.pick(a.max_iters, "max-iters", config.max_iterations);
    config.rel_tol = check_nonneg("rel-tol", cfg.pick(a.rel_tol, "rel-tol", config.rel_tol))?;
    let adj = match cfg.pick_opt(a.grid, "grid") {
        Some(g) => {
            let (rows, cols) = parse_grid(&g)?;
            if rows * cols != w.points() {
                return Err(Error::InvalidInput(format!("grid {rows}x{cols} does not cover {} points", w.points())));
            }
            build_adjacency(&grid_layout(rows, cols), &Connectivity::FourNeighborhood)?
        }
        None => AdjacencyTable::empty(w.points()),
    };
    let started = Instant::now();
    let res = dcmdr_reconstruct(&w, &config, &adj)?;
    let elapsed = started.elapsed().as_secs_f64();
    if let Some(p) = a.out_shapes {
        io::write_shapes(p, &res.shapes)?;
    }
    if let Some(p) = a.out_poses {
        io::write_poses(p, &res.poses)?;
    }
    println!("frames={}", w.frames());
    println!("points={}", w.points());
    println!("k={}", res.basis.rank());
    println!("iterations={}", res.trace.len() - 1);
    println!("energy_initial={}", res.trace[0]);
    println!("energy={}", res.trace.last().expect("trace starts with the initial energy"));
    println!("fit={}", res.terms.fit);
    println!("temp={}", res.terms.temp);
    println!("linking={}", res.terms.linking);
    println!("reg={}", res.terms.reg);
    println!("elapsed_s={elapsed:.3}");
    Ok(())
}

fn dsp_build(a: DspBuildArgs, cfg: &RunConfig) -> Result<()> {
    let shapes = io::read_shapes(required(a.shapes, cfg, "shapes")?)?;
    let poses = match cfg.pick_opt(a.poses, "poses") {
        Some(p) => io::read_poses(p)?,
        None => vec![CameraPose::identity(); shapes.frames()],
    };
    let states = canonicalize_states(&shapes, &poses, None)?;
    if let Some(grid) = a.mu_grid {
        let mus = grid
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad threshold {s:?} in --mu-grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        let curve = dsp_cardinality_curve(&states, &mus)?;
        let join = |f: &dyn Fn(&(f64, usize)) -> String| curve.iter().map(f).collect::<Vec<_>>().join(",");
        println!("mu_grid={}", join(&|c| c.0.to_string()));
        println!("q_curve={}", join(&|c| c.1.to_string()));
    }
    let mu = check_nonneg("mu", cfg.pick(a.mu, "mu", 0.0))?;
    let dsp = build_dsp(&states, mu)?;
    if let Some(p) = a.out_dsp {
        io::write_dsp(p, &dsp)?;
    }
    println!("mu={mu}");
    println!("q={}", dsp.len());
    println!("frames={}", shapes.frames());
    println!("ratio={}", compression_ratio(shapes.frames(), dsp.len())?);
    Ok(())
}

fn dspr_config(f: &DsprFlags, cfg: &RunConfig) -> Result<DsprConfig> {
    let d = DsprConfig::default();
    let config = DsprConfig {
        weights: DsprWeights {
            alpha: cfg.pick(f.alpha, "alpha", d.weights.alpha),
            beta: cfg.pick(f.beta, "beta", d.weights.beta),
            gamma: cfg.pick(f.gamma, "gamma", d.weights.gamma),
        },
        seeds: cfg.pick(f.seeds, "seeds", d.seeds),
        max_alternations: cfg.pick(f.max_alternations, "max-alternations", d.max_alternations),
        rel_tol: cfg.pick(f.rel_tol, "rel-tol", d.rel_tol),
    };
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn dspr(a: DsprArgs, cfg: &RunConfig) -> Result<()> {
    let w = io::read_measurements(required(a.tracks, cfg, "tracks")?)?;
    let dsp = io::read_dsp(required(a.dsp, cfg, "dsp")?)?;
    let config = dspr_config(&a.flags, cfg)?;
    let mut table = match &a.out {
        Some(p) => {
            let mut t = create(p)?;
            writeln!(t, "frame\tindex\tenergy\titerations\tlow_confidence\taa_x\taa_y\taa_z\telapsed_ms")?;
            Some(t)
        }
        None => None,
    };
    let mut frame = 0;
    let started = Instant::now();
    let results = dspr_stream(&w, &dsp, &config, |r| {
        if let Some(t) = table.as_mut() {
            let aa = encode_axis_angle(&r.pose);
            writeln!(
                t,
                "{frame}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
                r.index,
                r.energy,
                r.iterations,
                r.low_confidence as u8,
                aa.x,
                aa.y,
                aa.z,
                r.elapsed.as_secs_f64() * 1e3
            )?;
            t.flush()?;
        }
        frame += 1;
        Ok(())
    })?;
    let elapsed = started.elapsed().as_secs_f64();
    if let Some(p) = a.out_shapes {
        let shapes: Vec<Matrix3xX<f64>> = results.iter().map(|r| r.shape.clone()).collect();
        io::write_shapes(p, &ShapeSequence::from_frames(&shapes)?)?;
    }
    if let Some(p) = a.out_poses {
        io::write_poses(p, &results.iter().map(|r| r.pose).collect::<Vec<_>>())?;
    }
    if let Some(p) = a.out_ids {
        io::write_ids(p, &results.iter().map(|r| r.index).collect::<Vec<_>>())?;
    }
    let n = results.len() as f64;
    println!("frames={}", results.len());
    println!("q={}", dsp.len());
    println!("mean_energy={}", results.iter().map(|r| r.energy).sum::<f64>() / n);
    println!("low_confidence={}", results.iter().filter(|r| r.low_confidence).count());
    println!("elapsed_s={elapsed:.3}");
    println!("fps={:.2}", n / elapsed.max(1e-9));
    Ok(())
}

fn compress(a: CompressArgs, cfg: &RunConfig) -> Result<()> {
    let w = io::read_measurements(required(a.tracks, cfg, "tracks")?)?;
    let dsp = io::read_dsp(required(a.dsp, cfg, "dsp")?)?;
    let out = required(a.out, cfg, "out")?;
    let config = dspr_config(&a.flags, cfg)?;
    let stream = codec::compress(&w, &dsp, &config)?;
    let bytes = stream.to_bytes();
    std::fs::write(&out, &bytes)?;
    println!("frames={}", stream.frames());
    println!("q={}", dsp.len());
    println!("id_width={}", stream.id_width());
    println!("dsp_bytes={}", io::dsp_to_bytes(&dsp).len());
    println!("bytes={}", bytes.len());
    println!("ratio={}", stream.compression_ratio());
    Ok(())
}

fn decompress(a: DecompressArgs) -> Result<()> {
    let stream = CompressedStream::from_bytes(&std::fs::read(&a.stream)?)?;
    let shapes = codec::decompress(&stream)?;
    if let Some(p) = a.out_shapes {
        io::write_shapes(p, &shapes)?;
    }
    if let Some(p) = a.out_poses {
        io::write_poses(p, &stream.poses())?;
    }
    if let Some(p) = a.out_ids {
        io::write_ids(p, &stream.state_ids())?;
    }
    if let Some(p) = a.out_dsp {
        io::write_dsp(p, stream.dsp())?;
    }
    println!("frames={}", stream.frames());
    println!("q={}", stream.dsp().len());
    println!("ratio={}", stream.compression_ratio());
    Ok(())
}

fn perturb(a: PerturbArgs, cfg: &RunConfig) -> Result<()> {
    let w = io::read_measurements(required(a.tracks, cfg, "tracks")?)?;
    let magnitude = cfg.pick(a.magnitude, "magnitude", 0.0);
    let seed = cfg.pick(a.seed, "seed", 0);
    let out = required(a.out, cfg, "out")?;
    io::write_measurements(&out, &perturb_tracks(&w, magnitude, seed)?)?;
    println!("magnitude={magnitude}");
    println!("seed={seed}");
    Ok(())
}

fn knockout(a: KnockoutArgs, cfg: &RunConfig) -> Result<()> {
    let w = io::read_measurements(required(a.tracks, cfg, "tracks")?)?;
    let ratio = cfg.pick(a.ratio, "ratio", 0.0);
    let fill = match cfg.pick(a.fill, "fill", "frozen".to_string()).as_str() {
        "frozen" => KnockoutFill::FrozenReference,
        "zeros" => KnockoutFill::Zeros,
        other => return Err(Error::InvalidInput(format!("unknown fill {other:?}, expected frozen or zeros"))),
    };
    let seed = cfg.pick(a.seed, "seed", 0);
    let out = required(a.out, cfg, "out")?;
    let (corrupted, mask) = knockout_tracks(&w, ratio, fill, seed)?;
    io::write_measurements(&out, &corrupted)?;
    if let Some(p) = a.out_mask {
        let mut t = create(&p)?;
        for (f, n) in &mask {
            writeln!(t, "{f}\t{n}")?;
        }
        t.flush()?;
    }
    println!("ratio={ratio}");
    println!("altered={}", mask.len());
    println!("seed={seed}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let read_opt_shapes = |p: &Option<PathBuf>| p.as_ref().map(io::read_shapes).transpose();
    let read_opt_poses = |p: &Option<PathBuf>| p.as_ref().map(io::read_poses).transpose();
    let read_opt_ids = |p: &Option<PathBuf>| p.as_ref().map(io::read_ids).transpose();
    let gt_shapes = read_opt_shapes(&a.gt_shapes)?;
    let gt_poses = read_opt_poses(&a.gt_poses)?;
    let gt_ids = read_opt_ids(&a.gt_ids)?;
    let shapes = read_opt_shapes(&a.shapes)?;
    let poses = read_opt_poses(&a.poses)?;
    let ids = read_opt_ids(&a.ids)?;
    let dsp = a.dsp.as_ref().map(io::read_dsp).transpose()?;

    let frames = [shapes.as_ref().map(|s| s.frames()), poses.as_ref().map(Vec::len), ids.as_ref().map(Vec::len)]
        .into_iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::InvalidInput("nothing to evaluate: pass --shapes, --poses or --ids".into()))?;
    let mut columns: Vec<(&str, Vec<f64>)> = Vec::new();

    if let (Some(gt), Some(est)) = (&gt_shapes, &shapes) {
        let gt = if a.camera_frame {
            let gp = gt_poses
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("--camera-frame needs --gt-poses".into()))?;
            if gp.len() != gt.frames() {
                return Err(Error::InvalidInput("ground-truth poses and shapes differ in length".into()));
            }
            let posed: Vec<_> = (0..gt.frames()).map(|f| gp[f].matrix() * gt.frame(f)).collect();
            ShapeSequence::from_frames(&posed)?
        } else {
            gt.clone()
        };
        let gt = center_frames(&gt);
        let est = if a.no_align {
            center_frames(est)
        } else {
            align_shapes(&gt, est, AlignOptions::default())?.aligned
        };
        if gt.frames() != est.frames() || gt.points() != est.points() {
            return Err(Error::InvalidInput("estimated and ground-truth shapes differ in size".into()));
        }
        let per_frame: Vec<f64> = (0..gt.frames())
            .map(|f| {
                let g = gt.frame(f);
                (&g - est.frame(f)).norm() / g.norm()
            })
            .collect();
        if per_frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("a ground-truth frame has zero norm".into()));
        }
        println!("e3d={}", per_frame.iter().sum::<f64>() / per_frame.len() as f64);
        columns.push(("e3d", per_frame));
    }
    if let (Some(gt), Some(est)) = (&gt_poses, &poses) {
        let al = corrective_rotation(gt, est, 1.0)?;
        let aligned = al.apply(est);
        let qe = quaternionic_error(gt, &aligned, &CameraPose::identity())?;
        let per_frame = gt
            .iter()
            .zip(&aligned)
            .map(|(g, e)| (rotation_to_quaternion(g).coords - rotation_to_quaternion(e).coords).norm())
            .collect();
        println!("qe={qe}");
        println!("reflected={}", al.reflected);
        columns.push(("qe", per_frame));
    }
    if let (Some(gt), Some(est)) = (&gt_ids, &ids) {
        let eta = convergence_pattern(est, gt)?;
        let zero = eta.iter().filter(|&&e| e == 0).count();
        println!("eta_mean={}", eta.iter().sum::<usize>() as f64 / eta.len().max(1) as f64);
        println!("eta_zero_fraction={}", zero as f64 / eta.len().max(1) as f64);
        columns.push(("eta", eta.iter().map(|&e| e as f64).collect()));
    }
    if let Some(dsp) = &dsp {
        println!("q={}", dsp.len());
        println!("ratio={}", compression_ratio(frames, dsp.len())?);
        if let (Some(est), Some(ids)) = (&shapes, &ids) {
            if ids.len() != est.frames() || ids.iter().any(|&i| i >= dsp.len()) {
                return Err(Error::InvalidInput("state ids do not match the shapes or the prior".into()));
            }
            let diff: Vec<f64> = ids.iter().enumerate().map(|(f, &i)| (est.frame(f).norm() - dsp.norms()[i]).abs()).collect();
            println!("norm_mismatch_max={}", diff.iter().copied().fold(0.0, f64::max));
            columns.push(("norm_mismatch", diff));
        }
    }
    println!("frames={frames}");

    if let Some(p) = a.table {
        let mut t = create(&p)?;
        let header: Vec<&str> = std::iter::once("frame").chain(columns.iter().map(|c| c.0)).collect();
        writeln!(t, "{}", header.join("\t"))?;
        for f in 0..frames {
            let mut row = vec![f.to_string()];
            row.extend(columns.iter().map(|c| c.1.get(f).map_or(String::new(), |v| v.to_string())));
            writeln!(t, "{}", row.join("\t"))?;
        }
        t.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(sheet_grid(400).unwrap(), (20, 20));
        assert_eq!(sheet_grid(12).unwrap(), (3, 4));
        assert!(sheet_grid(13).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let errors = [
            Error::InvalidInput(String::new()),
            Error::DegenerateGeometry(String::new()),
            Error::DegenerateMotion(String::new()),
            Error::NumericalFailure(String::new()),
            Error::IdWidthOverflow(0),
            Error::CorruptStream(String::new()),
            Error::Io(std::io::Error::other("x")),
        ];
        let mut codes: Vec<u8> = errors.iter().map(exit_code).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), errors.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }
}
