use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bevpool::bench::{self, TimingConfig, SWEEP_RESOLUTIONS};
use bevpool::bevgrid::{build_cache, AssociationCache, BevGridSpec};
use bevpool::geometry::{FrustumSpec, RigCalibration};
use bevpool::lift::{normalize_depth, CameraFeatureMap};
use bevpool::pooling::{pool, Backend, BevFeatureMap, Reducer};
use bevpool::tensor::Tensor;
use bevpool::workload::{gen_workload, WorkloadSpec};

const CALIB_FILE: &str = "calib.json";
const FEATURES_FILE: &str = "features.bvpt";
const LOGITS_FILE: &str = "logits.bvpt";

#[derive(Parser)]
#[command(name = "bevpool", version, about = "Camera-to-BEV pooling: workloads, verification and benchmarks")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "BEVPOOL_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded workload (calib.json, features.bvpt, logits.bvpt) to a directory.
    GenWorkload {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool a workload with every backend and compare against the naive scatter.
    Verify {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value = "sum")]
        reducer: Reducer,
        /// Perturb this backend's output (for testing the checker).
        #[arg(long, hide = true)]
        corrupt_backend: Option<Backend>,
        /// Compare two BEV tensor files instead of running a workload.
        #[arg(long, num_args = 2, value_names = ["REFERENCE", "OTHER"])]
        compare: Option<Vec<PathBuf>>,
    },
    /// Time association and pooling.
    Bench {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Backends to time (repeat or comma-separate).
        #[arg(long = "backend", value_delimiter = ',', default_values = ["naive", "prefixsum", "interval"])]
        backends: Vec<Backend>,
        #[arg(long, default_value = "sum")]
        reducer: Reducer,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmups: usize,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Sweep feature resolutions 16x44, 32x88 and 64x176.
        #[arg(long)]
        sweep: bool,
    },
    /// Pool workload files into a BEV tensor file.
    Pool {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        /// Reuse a cache written by cache-build.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "interval")]
        backend: Backend,
        #[arg(long, default_value = "sum")]
        reducer: Reducer,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute the association cache for a calibration file.
    CacheBuild {
        #[arg(long)]
        calib: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Grid covers [-extent, extent) in x and y, meters.
    #[arg(long, default_value_t = 51.2)]
    grid_extent: f64,
    #[arg(long, default_value_t = 0.4)]
    cell_size: f64,
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    z_min: f64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    z_max: f64,
}

impl GridArgs {
    fn spec(&self) -> Result<BevGridSpec> {
        Ok(BevGridSpec::square(self.grid_extent, self.cell_size, [self.z_min, self.z_max])?)
    }
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    cameras: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 88)]
    width: usize,
    #[arg(long, default_value_t = 118)]
    depth_bins: usize,
    #[arg(long, default_value_t = 1.0)]
    depth_min: f64,
    #[arg(long, default_value_t = 0.5)]
    depth_step: f64,
    #[arg(long, default_value_t = 80)]
    channels: usize,
    #[command(flatten)]
    grid: GridArgs,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        Ok(WorkloadSpec {
            n_cameras: self.cameras,
            frustum: FrustumSpec::new(
                self.height,
                self.width,
                self.depth_min,
                self.depth_step,
                self.depth_bins,
            )?,
            grid: self.grid.spec()?,
            channels: self.channels,
            seed: self.seed,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = bench::thread_pool(cli.threads)
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| run(cli.command)));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenWorkload { workload, out } => gen_workload_cmd(&workload.spec()?, &out),
        Command::Verify {
            compare: Some(files),
            ..
        } => compare_files(&files[0], &files[1]),
        Command::Verify {
            workload,
            reducer,
            corrupt_backend,
            compare: None,
        } => verify_cmd(&workload.spec()?, reducer, corrupt_backend),
        Command::Bench {
            workload,
            backends,
            reducer,
            reps,
            warmups,
            csv,
            sweep,
        } => {
            if reps == 0 {
                bail!("--reps must be at least 1");
            }
            let config = TimingConfig { warmups, reps };
            let spec = workload.spec()?;
            let report = if sweep {
                bench::run_sweep(&spec, &SWEEP_RESOLUTIONS, &backends, reducer, config)?
            } else {
                bench::run_bench(&spec, &backends, reducer, config)?
            };
            print!("{}", report.render());
            if let Some(path) = csv {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                report.write_csv(BufWriter::new(file))?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Pool {
            calib,
            features,
            logits,
            cache,
            grid,
            backend,
            reducer,
            out,
        } => pool_cmd(&calib, &features, &logits, cache.as_deref(), &grid.spec()?, backend, reducer, &out),
        Command::CacheBuild { calib, grid, out } => {
            let rig = read_calibration(&calib)?;
            let grid = grid.spec()?;
            let cache = build_cache(&rig.cameras, &rig.frustum, &grid)?;
            write_file(&out, &cache.to_bytes())?;
            println!(
                "{} points, {} in range, {} intervals, fingerprint {:016x}",
                cache.n_points(),
                cache.ranks().len(),
                cache.n_intervals(),
                cache.fingerprint()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gen_workload_cmd(spec: &WorkloadSpec, out: &Path) -> Result<ExitCode> {
    let w = gen_workload(spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(CALIB_FILE), w.calibration().to_json().as_bytes())?;
    write_file(&out.join(FEATURES_FILE), &w.features.to_tensor().to_bytes())?;
    write_file(&out.join(LOGITS_FILE), &w.logits.to_bytes())?;
    println!(
        "{} cameras, {} frustum points, {} channels -> {}",
        spec.n_cameras,
        spec.n_points(),
        spec.channels,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(spec: &WorkloadSpec, reducer: Reducer, corrupt: Option<Backend>) -> Result<ExitCode> {
    let w = gen_workload(spec)?;
    let cache = build_cache(&w.rig, &w.frustum, &w.grid)?;
    let report = bench::verify_workload(&w, &cache, reducer, corrupt)?;
    print!("{}", report.render());
    if report.passed() {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(worst) = report.worst() {
            let (c, ix, iy) = report.unflatten(worst.worst_index);
            println!(
                "FAIL: {} deviates by {:.3e} (relative) at channel {c}, cell ({ix}, {iy})",
                worst.backend, worst.max_rel
            );
        }
        Ok(ExitCode::FAILURE)
    }
}

fn compare_files(reference: &Path, other: &Path) -> Result<ExitCode> {
    let a = read_tensor(reference)?;
    let b = read_tensor(other)?;
    if a.shape() != b.shape() {
        println!("FAIL: shapes differ ({:?} vs {:?})", a.shape(), b.shape());
        return Ok(ExitCode::FAILURE);
    }
    let (rel, at) = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| ((x as f64 - y as f64).abs() / (x.abs() as f64).max(1.0), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best });
    println!("max_rel {rel:.3e} at flat index {at}");
    if rel <= bench::VERIFY_TOLERANCE {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::FAILURE)
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_cmd(
    calib: &Path,
    features: &Path,
    logits: &Path,
    cache_path: Option<&Path>,
    grid: &BevGridSpec,
    backend: Backend,
    reducer: Reducer,
    out: &Path,
) -> Result<ExitCode> {
    let rig = read_calibration(calib)?;
    let features = CameraFeatureMap::from_tensor(read_tensor(features)?)
        .with_context(|| format!("in {}", features.display()))?;
    let dist = normalize_depth(&read_tensor(logits)?).with_context(|| format!("in {}", logits.display()))?;
    let cache = match cache_path {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            AssociationCache::read_from(std::io::BufReader::new(file), &rig.cameras, &rig.frustum, grid)
                .with_context(|| format!("in {}", path.display()))?
        }
        None => build_cache(&rig.cameras, &rig.frustum, grid)?,
    };
    let bev: BevFeatureMap = pool(&features, &dist, &cache, grid, reducer, backend)?;
    write_file(out, &bev.to_tensor().to_bytes())?;
    println!(
        "{backend}/{reducer}: {} x {} x {} -> {}",
        bev.channels(),
        grid.nx(),
        grid.ny(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_calibration(path: &Path) -> Result<RigCalibration> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RigCalibration::from_json(&text).with_context(|| format!("in {}", path.display()))
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Tensor::from_bytes(&bytes).with_context(|| format!("in {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}
