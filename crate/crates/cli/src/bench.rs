//! Scaling benchmarks: timings always come with an accuracy proxy.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::{Args, Subcommand};
use rangesep::kernels::kernel_ray_error;
use rangesep::lattice::{
    assemble_lattice_potential, lattice_energy_constant, lattice_pair_sum, trace_to_lattice, LatticeSpec, PairKernel,
};
use rangesep::{Error, GridSpec, KernelSpec, QuadratureRule, ReferenceKernel};

use crate::config::RunConfig;

#[derive(Subcommand, Clone, Debug)]
pub enum BenchCommand {
    /// Kernel generation over a sweep of grid sizes.
    Kernel(KernelBenchArgs),
    /// Lattice assembly and energy over a sweep of lattice sizes.
    Lattice(LatticeBenchArgs),
}

#[derive(Args, Clone, Debug)]
pub struct KernelBenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192])]
    pub sizes: Vec<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct LatticeBenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
    pub sizes: Vec<usize>,
    /// Cells per lattice spacing; the mesh size is its inverse.
    #[arg(long, default_value_t = 16)]
    pub cells: usize,
    /// Largest L checked against the grouped pairwise sum.
    #[arg(long, default_value_t = 16)]
    pub oracle_max: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub time: Duration,
    pub rank: usize,
    /// Energy (lattice rows) or empty.
    pub value: Option<f64>,
    pub accuracy: Option<f64>,
    pub extra_time: Option<Duration>,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub title: &'static str,
    pub size_label: &'static str,
    pub rows: Vec<BenchRow>,
    pub threads: usize,
}

impl BenchReport {
    /// Ratio of consecutive timings.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].time.as_secs_f64() / w[0].time.as_secs_f64().max(1e-12))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},time_s,rank,value,accuracy,extra_time_s,ratio\n", self.size_label);
        let ratios = self.ratios();
        for (i, r) in self.rows.iter().enumerate() {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            let ratio = if i == 0 { String::new() } else { format!("{:.3}", ratios[i - 1]) };
            let _ = writeln!(
                s,
                "{},{:e},{},{},{},{},{ratio}",
                r.size,
                r.time.as_secs_f64(),
                r.rank,
                opt(r.value),
                opt(r.accuracy),
                opt(r.extra_time.map(|t| t.as_secs_f64()))
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{} (threads: {}, {} {})\n", self.title, self.threads, std::env::consts::OS, std::env::consts::ARCH);
        let ratios = self.ratios();
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "{}={:<6} time={:>10.3?} rank={:<4}", self.size_label, r.size, r.time, r.rank);
            if let Some(v) = r.value {
                let _ = write!(s, " value={v:.8e}");
            }
            if let Some(a) = r.accuracy {
                let _ = write!(s, " accuracy={a:.2e}");
            }
            if let Some(t) = r.extra_time {
                let _ = write!(s, " energy_time={t:.3?}");
            }
            if i > 0 {
                let _ = write!(s, " ratio={:.2}", ratios[i - 1]);
            }
            s.push('\n');
        }
        s
    }
}

fn median3<T>(mut f: impl FnMut() -> Result<T>) -> Result<(Duration, T)> {
    let mut times = Vec::with_capacity(3);
    let mut last = None;
    for _ in 0..3 {
        let start = Instant::now();
        let v = f()?;
        times.push(start.elapsed());
        last = Some(v);
    }
    times.sort();
    Ok((times[1], last.expect("three runs")))
}

fn sorted_sizes(sizes: &[usize]) -> Result<Vec<usize>> {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.is_empty() {
        return Err(Error::InvalidParameter("empty size sweep".into()).into());
    }
    Ok(s)
}

pub fn bench_kernel(cfg: &RunConfig, args: &KernelBenchArgs) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for n in sorted_sizes(&args.sizes)? {
        let grid = GridSpec::new(n, cfg.b)?;
        let (time, r) = median3(|| {
            let rule = QuadratureRule::for_grid(cfg.kernel, cfg.eps, &grid)?;
            Ok(ReferenceKernel::build(&grid, &rule, cfg.kernel)?)
        })?;
        let err = kernel_ray_error(r.tensor(), &grid, &cfg.kernel, 10.0 * grid.h())?;
        rows.push(BenchRow {
            size: n,
            time,
            rank: r.rank(),
            value: None,
            accuracy: Some(err),
            extra_time: None,
        });
    }
    Ok(BenchReport {
        title: "kernel generation",
        size_label: "n",
        rows,
        threads: cfg.threads,
    })
}

/// Lattice of `L³` unit charges with unit spacing; the grid has `cells`
/// cells per spacing and `16·L·cells` cells per axis.
pub fn bench_lattice(cfg: &RunConfig, args: &LatticeBenchArgs) -> Result<BenchReport> {
    if args.cells == 0 {
        return Err(Error::InvalidParameter("cells per spacing must be positive".into()).into());
    }
    let mut rows = Vec::new();
    for l in sorted_sizes(&args.sizes)? {
        if l == 0 {
            return Err(Error::InvalidParameter("lattice size must be positive".into()).into());
        }
        let n = 16 * l * args.cells;
        if n > 2 * crate::config::MAX_N {
            return Err(Error::ResourceGuard(format!("L={l} needs n={n} cells per axis")).into());
        }
        let base = GridSpec::with_mesh(n, 1.0 / args.cells as f64)?;
        let doubled = base.doubled();
        let rule = QuadratureRule::for_grid(KernelSpec::Newton, cfg.eps, &doubled)?;
        let r = ReferenceKernel::build(&doubled, &rule, KernelSpec::Newton)?;
        let lat = LatticeSpec::centered_cells(&base, &[l; 3], args.cells)?;
        let (time, p) = median3(|| Ok(assemble_lattice_potential(r.tensor(), &lat, 1.0)?))?;
        let (energy_time, e) = median3(|| Ok(lattice_energy_constant(&trace_to_lattice(&p, &lat)?, r.center_value(), 1.0)?))?;
        let accuracy = if l <= args.oracle_max {
            let table = r.vertex_table((l - 1) * args.cells)?;
            let o = lattice_pair_sum(&lat, 1.0, &PairKernel::Discrete { table: &table, h: base.h() })?;
            Some(if o == 0.0 { e.abs() } else { ((e - o) / o).abs() })
        } else {
            None
        };
        rows.push(BenchRow {
            size: l,
            time,
            rank: p.rank(),
            value: Some(e),
            accuracy,
            extra_time: Some(energy_time),
        });
    }
    Ok(BenchReport {
        title: "lattice assembly",
        size_label: "L",
        rows,
        threads: cfg.threads,
    })
}
