//! Timing harness, oracle verification and benchmark reports.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::bevgrid::{build_cache, AssociationCache};
use crate::error::{BevError, Result};
use crate::lift::normalize_depth;
use crate::pooling::{max_relative_deviation, pool, Backend, BevFeatureMap, Reducer};
use crate::workload::{gen_workload, Workload, WorkloadSpec};

/// Environment variable capping worker threads (0 or unset = all cores).
pub const THREADS_ENV: &str = "BEVPOOL_THREADS";

/// Relative tolerance of the oracle-equivalence check.
pub const VERIFY_TOLERANCE: f64 = 1e-4;

/// Published GPU latencies (RTX 3090) printed next to local results. They
/// are reference values only and are never compared against.
pub const GPU_REFERENCE: &[(&str, &str)] = &[
    ("grid association", "17 ms -> 4 ms (precomputed ranks)"),
    ("feature aggregation", "500 ms -> 2 ms (interval reduction)"),
    ("camera-to-BEV total", ">500 ms -> 12 ms"),
];

/// Reads [`THREADS_ENV`]; unset, empty or 0 means automatic.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| BevError::config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

/// A rayon pool with `threads` workers (0 = one per core).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BevError::config(format!("cannot build thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    pub warmups: usize,
    pub reps: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { warmups: 2, reps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub median_ms: f64,
    pub min_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Runs `f` `warmups` times untimed, then `reps` times under a monotonic
/// clock. Durations are floored at one nanosecond so they stay positive.
pub fn time_stage<R>(config: TimingConfig, mut f: impl FnMut() -> R) -> StageTiming {
    let reps = config.reps.max(1);
    for _ in 0..config.warmups {
        std::hint::black_box(f());
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            (start.elapsed().as_secs_f64() * 1e3).max(1e-6)
        })
        .collect();
    let recorded = samples.clone();
    samples.sort_by(f64::total_cmp);
    StageTiming {
        median_ms: median_sorted(&samples),
        min_ms: samples[0],
        samples_ms: recorded,
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// One line of a benchmark report and of its CSV export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub backend: String,
    pub n_points: usize,
    pub channels: usize,
    pub stage: String,
    pub median_ms: f64,
    pub min_ms: f64,
    pub speedup_vs_baseline: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub reps: usize,
    pub warmups: usize,
    pub threads: usize,
    pub machine_note: String,
}

impl BenchReport {
    pub fn row(&self, stage: &str, backend: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.stage == stage && r.backend == backend)
    }

    /// prefix-sum median / interval median, when both were measured.
    pub fn interval_speedup(&self) -> Option<f64> {
        let base = self.row(STAGE_POOL, Backend::PrefixSum.name())?;
        let fast = self.row(STAGE_POOL, Backend::Interval.name())?;
        Some(base.median_ms / fast.median_ms)
    }

    /// cold association median / cached association median.
    pub fn association_speedup(&self) -> Option<f64> {
        let cold = self.row(STAGE_ASSOCIATION, ASSOC_COLD)?;
        let cached = self.row(STAGE_ASSOCIATION, ASSOC_CACHED)?;
        Some(cold.median_ms / cached.median_ms)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(&self.rows, out)
    }

    /// Human-readable table with the GPU reference footer.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<10} {:>10} {:>8} {:<12} {:>11} {:>10} {:>9}\n",
            "backend", "points", "channels", "stage", "median_ms", "min_ms", "speedup"
        );
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>10} {:>8} {:<12} {:>11.3} {:>10.3} {:>8.2}x\n",
                r.backend, r.n_points, r.channels, r.stage, r.median_ms, r.min_ms, r.speedup_vs_baseline
            );
        }
        s += &format!(
            "\nmedian of {} runs after {} warmups, {} threads; {}\n",
            self.reps, self.warmups, self.threads, self.machine_note
        );
        if let Some(x) = self.interval_speedup() {
            s += &format!("interval vs prefixsum pooling: {x:.2}x\n");
        }
        if let Some(x) = self.association_speedup() {
            s += &format!("cached vs cold association:    {x:.2}x\n");
        }
        s += "\npublished GPU reference (RTX 3090, not measured here):\n";
        for (stage, value) in GPU_REFERENCE {
            s += &format!("  {stage:<20} {value}\n");
        }
        s
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> BevError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BevError::Io(io),
        other => BevError::validation(format!("csv: {other:?}")),
    }
}

pub const STAGE_ASSOCIATION: &str = "association";
pub const STAGE_POOL: &str = "pool";
pub const ASSOC_COLD: &str = "cold";
pub const ASSOC_CACHED: &str = "cached";

/// Short description of the host for report footers.
pub fn machine_note(threads: usize) -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} with {cores} logical cores, pool of {threads} threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Times association and pooling on one workload inside the current rayon
/// pool.
///
/// Stages:
/// - association/cold: project, quantize and sort every point, then gather
///   the sorted points;
/// - association/cached: gather the sorted points through cached ranks;
/// - pool/<backend>: each pooling backend with a prebuilt cache.
pub fn bench_workload(
    workload: &Workload,
    backends: &[Backend],
    reducer: Reducer,
    config: TimingConfig,
) -> Result<Vec<BenchRow>> {
    let dist = normalize_depth(&workload.logits)?;
    let cache = build_cache(&workload.rig, &workload.frustum, &workload.grid)?;
    let n_points = cache.n_points();
    let channels = workload.features.channels();
    let mut rows = Vec::new();

    let cold = time_stage(config, || {
        let cache = build_cache(&workload.rig, &workload.frustum, &workload.grid)
            .expect("geometry was validated above");
        cache.reorder(&dist).expect("shapes were validated above")
    });
    let cached = time_stage(config, || cache.reorder(&dist).expect("shapes were validated above"));
    for (name, t) in [(ASSOC_COLD, &cold), (ASSOC_CACHED, &cached)] {
        rows.push(BenchRow {
            backend: name.into(),
            n_points,
            channels,
            stage: STAGE_ASSOCIATION.into(),
            median_ms: t.median_ms,
            min_ms: t.min_ms,
            speedup_vs_baseline: cold.median_ms / t.median_ms,
        });
    }

    let mut pool_rows = Vec::new();
    for &backend in backends {
        if !backend.supports(reducer) {
            continue;
        }
        pool(&workload.features, &dist, &cache, &workload.grid, reducer, backend)?;
        let t = time_stage(config, || {
            pool(&workload.features, &dist, &cache, &workload.grid, reducer, backend)
                .expect("inputs were validated by the first call")
        });
        pool_rows.push((backend, t));
    }
    let baseline = pool_rows
        .iter()
        .find(|(b, _)| *b == Backend::PrefixSum)
        .or_else(|| pool_rows.first())
        .map(|(_, t)| t.median_ms);
    for (backend, t) in pool_rows {
        rows.push(BenchRow {
            backend: backend.name().into(),
            n_points,
            channels,
            stage: STAGE_POOL.into(),
            median_ms: t.median_ms,
            min_ms: t.min_ms,
            speedup_vs_baseline: baseline.map_or(1.0, |b| b / t.median_ms),
        });
    }
    Ok(rows)
}

/// Generates the workload and benchmarks it.
pub fn run_bench(
    spec: &WorkloadSpec,
    backends: &[Backend],
    reducer: Reducer,
    config: TimingConfig,
) -> Result<BenchReport> {
    let workload = gen_workload(spec)?;
    let rows = bench_workload(&workload, backends, reducer, config)?;
    let threads = rayon::current_num_threads();
    Ok(BenchReport {
        rows,
        reps: config.reps.max(1),
        warmups: config.warmups,
        threads,
        machine_note: machine_note(threads),
    })
}

/// Feature-map resolutions of the scaling sweep.
pub const SWEEP_RESOLUTIONS: [(usize, usize); 3] = [(16, 44), (32, 88), (64, 176)];

/// Benchmarks `spec` at each `(H, W)` in `resolutions`, keeping everything
/// else fixed.
pub fn run_sweep(
    spec: &WorkloadSpec,
    resolutions: &[(usize, usize)],
    backends: &[Backend],
    reducer: Reducer,
    config: TimingConfig,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &(h, w) in resolutions {
        let workload = gen_workload(&spec.with_resolution(h, w)?)?;
        rows.extend(bench_workload(&workload, backends, reducer, config)?);
    }
    let threads = rayon::current_num_threads();
    Ok(BenchReport {
        rows,
        reps: config.reps.max(1),
        warmups: config.warmups,
        threads,
        machine_note: machine_note(threads),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDeviation {
    pub backend: Backend,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Flat `(c, ix, iy)` index of the worst relative deviation.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub reducer: Reducer,
    pub tolerance: f64,
    pub deviations: Vec<BackendDeviation>,
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.deviations.iter().all(|d| d.max_rel <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&BackendDeviation> {
        self.deviations
            .iter()
            .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }

    /// Converts a flat map index to `(channel, ix, iy)`.
    pub fn unflatten(&self, index: usize) -> (usize, usize, usize) {
        let cells = self.nx * self.ny;
        (index / cells, (index % cells) / self.ny, index % self.ny)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "reducer {} | tolerance {:e} relative\n",
            self.reducer, self.tolerance
        );
        for d in &self.deviations {
            let (c, ix, iy) = self.unflatten(d.worst_index);
            let verdict = if d.max_rel <= self.tolerance { "ok" } else { "FAIL" };
            s += &format!(
                "{:<10} max_abs {:.3e} max_rel {:.3e} worst (c={c}, ix={ix}, iy={iy}) {verdict}\n",
                d.backend, d.max_abs, d.max_rel
            );
        }
        s
    }
}

/// Pools `workload` with every backend that supports `reducer` and compares
/// each against the naive scatter. `corrupt` perturbs one backend's output
/// before comparison, for exercising the checker itself.
pub fn verify_workload(
    workload: &Workload,
    cache: &AssociationCache,
    reducer: Reducer,
    corrupt: Option<Backend>,
) -> Result<VerifyReport> {
    let dist = normalize_depth(&workload.logits)?;
    let reference = pool(&workload.features, &dist, cache, &workload.grid, reducer, Backend::Naive)?;
    let mut deviations = Vec::new();
    for backend in [Backend::PrefixSum, Backend::Interval] {
        if !backend.supports(reducer) {
            continue;
        }
        let mut out = pool(&workload.features, &dist, cache, &workload.grid, reducer, backend)?;
        if corrupt == Some(backend) {
            out = corrupt_map(out);
        }
        deviations.push(deviation(backend, &reference, &out)?);
    }
    Ok(VerifyReport {
        reducer,
        tolerance: VERIFY_TOLERANCE,
        deviations,
        channels: reference.channels(),
        nx: workload.grid.nx(),
        ny: workload.grid.ny(),
    })
}

fn corrupt_map(map: BevFeatureMap) -> BevFeatureMap {
    let mut values = map.values().to_vec();
    let grid = *map.grid();
    let channels = map.channels();
    if let Some(v) = values.get_mut(grid.n_cells() / 2) {
        *v += 1.0;
    } else if let Some(v) = values.first_mut() {
        *v += 1.0;
    }
    BevFeatureMap::new(channels, grid, values).expect("still finite")
}

fn deviation(backend: Backend, reference: &BevFeatureMap, out: &BevFeatureMap) -> Result<BackendDeviation> {
    let (max_rel, worst_index) = max_relative_deviation(reference, out)?;
    let max_abs = reference
        .values()
        .iter()
        .zip(out.values())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .fold(0.0, f64::max);
    Ok(BackendDeviation {
        backend,
        max_abs,
        max_rel,
        worst_index,
    })
}
