use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rangesep::dirac::{build_regularized_rhs, dirac_delta, dirac_delta_many, free_space_solve_check, SOLVE_GUARD};
use rangesep::io::{center_line_csv, cross_section_csv, forces_csv, mode_profiles_csv, parse_particles, particles_to_string, save_rstf, spectra_csv};
use rangesep::lattice::{
    assemble_defected, assemble_lattice_potential, assemble_weighted_lattice, brute_force_energy, lattice_energy_constant,
    lattice_energy_variable, trace_to_lattice, ChargeTensor, LatticeSpec, PairKernel, SubLattice, PAIRWISE_GUARD,
};
use rangesep::rs::{
    collective_potential, compress_long_range, default_batches, direct_force_oracle, rs_energy, rs_forces,
    separation_warning, split_reference, CompressStatus, GridField, Differencing, ForceConvention, ParticleSystem, RangeSplit,
    SplitSpec,
};
use rangesep::tensor::{rhosvd, Truncation};
use rangesep::{kernels::kernel_ray_error, CanonicalTensor, Error, GridSpec, QuadratureRule, ReferenceKernel};

use crate::config::RunConfig;

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn save(path: PathBuf, t: &CanonicalTensor) -> Result<()> {
    save_rstf(t, &path).with_context(|| format!("writing {}", path.display()))
}

pub fn reference(cfg: &RunConfig, grid: &GridSpec) -> Result<ReferenceKernel> {
    let rule = QuadratureRule::for_grid(cfg.kernel, cfg.eps, grid)?;
    Ok(ReferenceKernel::build(grid, &rule, cfg.kernel)?)
}

#[derive(Args, Clone, Debug)]
pub struct KernelArgs {
    /// Cell index of the z-plane for the cross-section (default: centre).
    #[arg(long)]
    pub plane: Option<usize>,
}

pub fn kernel(cfg: &RunConfig, args: &KernelArgs) -> Result<()> {
    let grid = cfg.grid()?;
    let r = reference(cfg, &grid)?;
    let rule = r.rule();
    let exclusion = 10.0 * grid.h();
    let err = kernel_ray_error(r.tensor(), &grid, &cfg.kernel, exclusion)?;
    println!("kernel: {}", cfg.kernel);
    println!("grid: n={} b={} h={}", grid.n(), grid.b(), grid.h());
    println!("quadrature: M={} step={:.6} design_error={:.3e}", rule.m(), rule.step(), rule.design_error());
    println!("rank: {} (raw {}, merged {})", rule.rank(), rule.raw_rank(), rule.merged());
    println!("pointwise_error(r>=10h): {err:.3e}");
    let plane = args.plane.unwrap_or(grid.n() / 2);
    save(cfg.out.join("kernel.rstf"), r.tensor())?;
    write(cfg.out.join("kernel_profiles.csv"), mode_profiles_csv(r.tensor(), 0, &grid))?;
    write(cfg.out.join("kernel_plane.csv"), cross_section_csv(r.tensor(), &grid, plane)?)?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChargeKind {
    Constant,
    Checkerboard,
    Dipole,
}

#[derive(Args, Clone, Debug)]
pub struct LatticeArgs {
    /// Nodes per axis.
    #[arg(long, default_value_t = 4)]
    pub l: usize,
    /// Lattice dimension.
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    /// Node spacing in grid cells (default: n / (l + 1)).
    #[arg(long)]
    pub spacing: Option<usize>,
    #[arg(long, value_enum, default_value_t = ChargeKind::Constant)]
    pub charges: ChargeKind,
    /// Charge magnitude.
    #[arg(long, default_value_t = 1.0)]
    pub z: f64,
    /// Compare with the pairwise sum of the same discrete kernel.
    #[arg(long)]
    pub oracle: bool,
    /// Extra sub-lattices, one per line: `origin… counts… spacing charge`
    /// (origins as vertex indices, `dim` values each).
    #[arg(long)]
    pub defects: Option<PathBuf>,
}

/// Parse sub-lattice lines `o_1..o_d c_1..c_d spacing q`.
pub fn parse_defects(text: &str, grid: &GridSpec, dim: usize) -> Result<Vec<SubLattice>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| -> anyhow::Error { Error::Parse { line: i + 1, msg }.into() };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 * dim + 2 {
            return Err(err(format!("expected {} fields, found {}", 2 * dim + 2, f.len())));
        }
        let ints = f[..2 * dim + 1]
            .iter()
            .map(|v| v.parse::<usize>().map_err(|e| err(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let q: f64 = f[2 * dim + 1].parse().map_err(|e| err(format!("`{}`: {e}", f[2 * dim + 1])))?;
        let lat = LatticeSpec::with_cells(grid, &ints[dim..2 * dim], ints[2 * dim], &ints[..dim]).map_err(|e| err(e.to_string()))?;
        out.push(SubLattice::constant(lat, q));
    }
    Ok(out)
}

/// `½ Σ q_i p(x_i) − ½ P(0) Σ q_i²` over the distinct charged vertices.
fn composite_energy(p: &CanonicalTensor, parts: &[SubLattice], self_term: f64, h: f64) -> f64 {
    let mut charges: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for part in parts {
        let counts = part.lattice.counts().to_vec();
        for k in node_indices(&counts) {
            let v: Vec<usize> = k.iter().enumerate().map(|(l, &kl)| part.lattice.vertex(l, kl)).collect();
            *charges.entry(v).or_insert(0.0) += part.charges.value(&k);
        }
    }
    let cross: f64 = charges.iter().map(|(v, &q)| q * p.point_value(v, h)).sum();
    let zz: f64 = charges.values().map(|q| q * q).sum();
    0.5 * cross - 0.5 * self_term * zz
}

pub fn lattice(cfg: &RunConfig, args: &LatticeArgs) -> Result<()> {
    if args.l == 0 || args.dim == 0 {
        return Err(Error::InvalidParameter("lattice needs l >= 1 and dim >= 1".into()).into());
    }
    let grid = cfg.grid()?;
    let doubled = grid.doubled();
    let rule = QuadratureRule::for_grid(cfg.kernel, cfg.eps, &doubled)?;
    let r = ReferenceKernel::build_nd(&doubled, &rule, cfg.kernel, args.dim)?;
    let spacing = args.spacing.unwrap_or(grid.n() / (args.l + 1)).max(1);
    let counts = vec![args.l; args.dim];
    let lat = LatticeSpec::centered_cells(&grid, &counts, spacing)?;
    let charges = match args.charges {
        ChargeKind::Constant => ChargeTensor::constant(&counts, args.z),
        ChargeKind::Checkerboard => ChargeTensor::new(ChargeTensor::checkerboard(&counts).tensor().scale(args.z)),
        ChargeKind::Dipole => ChargeTensor::dipole(&counts, args.z),
    };
    if let Some(path) = &args.defects {
        let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
        let mut parts = vec![SubLattice { lattice: lat.clone(), charges }];
        parts.extend(parse_defects(&text, &grid, args.dim).with_context(|| format!("in {}", path.display()))?);
        let p = assemble_defected(r.tensor(), &parts)?;
        let e = composite_energy(&p, &parts, r.center_value(), grid.h());
        println!("composite: {} sub-lattices", parts.len());
        println!("rank: {} (reference {})", p.rank(), r.rank());
        println!("energy: {e:.12e}");
        save(cfg.out.join("lattice.rstf"), &p)?;
        if args.dim == 3 {
            write(cfg.out.join("lattice_plane.csv"), cross_section_csv(&p, &grid, grid.n() / 2)?)?;
        }
        return Ok(());
    }
    let (p, energy) = if args.charges == ChargeKind::Constant {
        let p = assemble_lattice_potential(r.tensor(), &lat, 1.0)?;
        let e = lattice_energy_constant(&trace_to_lattice(&p, &lat)?, r.center_value(), args.z)?;
        (p.scale(args.z), e)
    } else {
        let p = assemble_weighted_lattice(r.tensor(), &lat, &charges)?;
        let e = lattice_energy_variable(&trace_to_lattice(&p, &lat)?, r.center_value(), &charges)?;
        (p, e)
    };
    println!("lattice: L={} d={} spacing={} cells ({})", args.l, args.dim, spacing, lat.spacing());
    println!("rank: {} (reference {})", p.rank(), r.rank());
    println!("energy: {energy:.12e}");
    if args.oracle {
        if lat.node_count() > PAIRWISE_GUARD {
            return Err(Error::ResourceGuard(format!("{} nodes exceed the pairwise guard", lat.node_count())).into());
        }
        let table = r.vertex_table((args.l - 1) * spacing)?;
        let centers = lat.node_coordinates();
        let q: Vec<f64> = node_indices(&counts).iter().map(|k| charges.value(k)).collect();
        let oracle = brute_force_energy(&centers, &q, &PairKernel::Discrete { table: &table, h: grid.h() })?;
        println!("oracle: {oracle:.12e} rel_error={:.3e}", ((energy - oracle) / oracle).abs());
    }
    save(cfg.out.join("lattice.rstf"), &p)?;
    if args.dim == 3 {
        write(cfg.out.join("lattice_plane.csv"), cross_section_csv(&p, &grid, grid.n() / 2)?)?;
    }
    Ok(())
}

/// Multi-indices in the order of `LatticeSpec::node_coordinates`.
fn node_indices(counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; counts.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(idx.clone());
        for (i, &c) in idx.iter_mut().zip(counts) {
            *i += 1;
            if *i < c {
                break;
            }
            *i = 0;
        }
    }
    out
}

#[derive(Args, Clone, Debug)]
pub struct SystemArgs {
    /// Particle file (`x y z q` per line); random particles otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Minimum separation of random particles.
    #[arg(long, default_value_t = 1.0)]
    pub min_sep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub qmin: f64,
    #[arg(long, default_value_t = 1.5)]
    pub qmax: f64,
}

impl SystemArgs {
    pub fn system(&self, cfg: &RunConfig, grid: &GridSpec) -> Result<ParticleSystem> {
        match &self.input {
            Some(path) => parse_particles(path, grid).with_context(|| format!("reading {}", path.display())),
            None => {
                if !(self.qmin <= self.qmax) {
                    return Err(Error::InvalidParameter(format!("qmin {} exceeds qmax {}", self.qmin, self.qmax)).into());
                }
                Ok(ParticleSystem::random(grid, self.count, self.min_sep, (self.qmin, self.qmax), cfg.seed)?)
            }
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct ParticlesArgs {
    #[command(flatten)]
    pub system: SystemArgs,
}

pub fn particles(cfg: &RunConfig, args: &ParticlesArgs) -> Result<()> {
    let grid = cfg.grid()?;
    let sys = args.system.system(cfg, &grid)?;
    println!("particles: {}", sys.len());
    println!("max_snap: {:.3e}", sys.max_snap());
    println!("min_separation: {:.6}", sys.min_separation());
    write(cfg.out.join("particles.txt"), particles_to_string(sys.positions(), sys.charges()))
}

#[derive(Args, Clone, Debug)]
pub struct SplitArgs {
    /// `interval`, `support:<sigma>` or `count:<r>`.
    #[arg(long, default_value = "interval")]
    pub split: String,
    /// Support threshold for short-range windows.
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
}

impl SplitArgs {
    pub fn spec(&self) -> Result<SplitSpec> {
        let bad = || Error::InvalidParameter(format!("unknown split `{}`", self.split));
        let s = self.split.trim();
        if s == "interval" {
            return Ok(SplitSpec::by_interval(self.delta));
        }
        let (name, arg) = s.split_once(':').ok_or_else(bad)?;
        match name {
            "support" => Ok(SplitSpec::by_support(arg.parse().map_err(|_| bad())?, self.delta)),
            "count" => Ok(SplitSpec::by_count(arg.parse().map_err(|_| bad())?, self.delta)),
            _ => Err(bad().into()),
        }
    }
}

fn split_for(cfg: &RunConfig, grid: &GridSpec, args: &SplitArgs) -> Result<RangeSplit> {
    let r = reference(cfg, &grid.doubled())?;
    Ok(split_reference(&r, &args.spec()?)?)
}

fn tolerance_check(what: &str, err: f64, tol: Option<f64>) -> Result<()> {
    match tol {
        Some(t) if !(err <= t) => Err(Error::Numerical(format!("{what} error {err:.3e} exceeds tolerance {t:.3e}")).into()),
        _ => Ok(()),
    }
}

#[derive(Args, Clone, Debug)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Compare with the exact pairwise sum.
    #[arg(long)]
    pub oracle: bool,
    /// Fail with a numerical error if the oracle error exceeds this.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn energy(cfg: &RunConfig, args: &EnergyArgs) -> Result<()> {
    let grid = cfg.grid()?;
    let sys = args.system.system(cfg, &grid)?;
    let split = split_for(cfg, &grid, &args.split)?;
    if let Some(w) = separation_warning(&sys, &split) {
        eprintln!("warning: {w}");
    }
    let rs = collective_potential(&sys, &split)?;
    let storage = rs.storage_report();
    let long = if sys.is_empty() {
        rs.long().clone()
    } else {
        let c = compress_long_range(rs.long(), cfg.eps, default_batches(sys.len()))?;
        if let CompressStatus::Uncompressed(msg) = &c.status {
            eprintln!("warning: {msg}");
        }
        println!("tucker_ranks: {:?}", c.tucker_ranks);
        c.tensor
    };
    let e = rs_energy(&sys, &long, split.long_center_value());
    println!("particles: {}", sys.len());
    println!("split: long={} short={} gamma={}", split.long_rank(), split.short_rank(), split.gamma());
    println!(
        "storage: long={} replicas={} short={} total={} bound={}",
        storage.long_entries,
        storage.replica_entries,
        storage.short_entries,
        storage.total(),
        storage.bound
    );
    println!("long_rank: uncompressed={} compressed={}", rs.long().rank(), long.rank());
    println!("energy: {e:.12e}");
    if args.oracle {
        let oracle = brute_force_energy(&sys.positions_vec(), sys.charges(), &PairKernel::Analytic(cfg.kernel))?;
        let rel = if oracle == 0.0 { (e - oracle).abs() } else { ((e - oracle) / oracle).abs() };
        println!("oracle: {oracle:.12e} rel_error={rel:.3e}");
        tolerance_check("energy", rel, args.tol)?;
    }
    save(cfg.out.join("long.rstf"), &long)?;
    if rs.long().rank() > 0 {
        let spectra = rhosvd(rs.long(), &Truncation::Relative(cfg.eps))?.singular_values;
        write(cfg.out.join("spectra.csv"), spectra_csv(&spectra))?;
    }
    write(cfg.out.join("long_plane.csv"), cross_section_csv(&long, &grid, grid.n() / 2)?)?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Backward,
    Central,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    Printed,
    Consistent,
}

#[derive(Args, Clone, Debug)]
pub struct ForcesArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Scheme::Backward)]
    pub scheme: Scheme,
    /// Compare with pairwise Coulomb forces (Newton kernel only).
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_enum, default_value_t = Convention::Consistent)]
    pub convention: Convention,
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn forces(cfg: &RunConfig, args: &ForcesArgs) -> Result<()> {
    let grid = cfg.grid()?;
    let sys = args.system.system(cfg, &grid)?;
    let split = split_for(cfg, &grid, &args.split)?;
    let rs = collective_potential(&sys, &split)?;
    let scheme = match args.scheme {
        Scheme::Backward => Differencing::Backward,
        Scheme::Central => Differencing::Central,
    };
    let f = rs_forces(&sys, rs.long(), &split, scheme)?;
    println!("particles: {}", sys.len());
    if args.oracle {
        if !cfg.kernel.is_newton() {
            return Err(Error::InvalidParameter("the force oracle is defined for the Newton kernel".into()).into());
        }
        let conv = match args.convention {
            Convention::Printed => ForceConvention::Printed,
            Convention::Consistent => ForceConvention::Consistent,
        };
        let o = direct_force_oracle(&sys, conv)?;
        let num: f64 = f.iter().zip(&o).map(|(a, b)| (0..3).map(|l| (a[l] - b[l]).powi(2)).sum::<f64>()).sum();
        let den: f64 = o.iter().map(|b| (0..3).map(|l| b[l].powi(2)).sum::<f64>()).sum();
        let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        println!("oracle_rel_error: {rel:.3e}");
        tolerance_check("force", rel, args.tol)?;
    }
    write(cfg.out.join("forces.csv"), forces_csv(&f))
}

#[derive(Args, Clone, Debug)]
pub struct DeltaArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Also build the regularized right-hand side and run the solve check.
    #[arg(long)]
    pub solve: bool,
    /// Dielectric constant of the regularized problem.
    #[arg(long, default_value_t = 1.0)]
    pub eps_m: f64,
}

pub fn delta(cfg: &RunConfig, args: &DeltaArgs) -> Result<()> {
    let grid = cfg.grid()?;
    let sys = args.system.system(cfg, &grid)?;
    let split = split_for(cfg, &grid, &args.split)?;
    let single = dirac_delta(&split)?;
    write(
        cfg.out.join("delta_profiles.csv"),
        center_line_csv(split.grid(), &[("delta_h", &single.full), ("delta_s", &single.short), ("delta_l", &single.long)])?,
    )?;
    let d = dirac_delta_many(&sys, &split, cfg.eps)?;
    println!("particles: {}", sys.len());
    println!("short_reference_rank: {}", d.short_reference.rank());
    println!("long_rank: uncompressed={} compressed={} tucker={:?}", d.uncompressed_rank, d.long.rank(), d.tucker_ranks);
    save(cfg.out.join("delta_long.rstf"), &d.long)?;
    save(cfg.out.join("delta_short_reference.rstf"), &d.short_reference)?;
    if args.solve {
        solve_check(cfg, &sys, &split, args.eps_m, &grid)?;
    }
    Ok(())
}

fn solve_check(cfg: &RunConfig, sys: &ParticleSystem, split: &RangeSplit, eps_m: f64, grid: &GridSpec) -> Result<()> {
    let reg = build_regularized_rhs(sys, split, eps_m, cfg.eps)?;
    if grid.n() > SOLVE_GUARD {
        return Err(Error::ResourceGuard(format!("solve check limited to n <= {SOLVE_GUARD}")).into());
    }
    let u = reg.u_long.full()?;
    let f = reg.rho_long.full()?.scale(-1.0 / eps_m);
    let sol = free_space_solve_check(&f, &u, grid.h(), SOLVE_GUARD)?;
    let err = sol.solution.rel_max_error(&u)?;
    let e_stored = rs_energy(sys, &reg.u_long, split.long_center_value());
    let e_solved = rs_energy(sys, &sol.solution, split.long_center_value());
    println!("solve: residual={:.3e} potential_error={err:.3e}", sol.residual);
    println!("energy: stored={e_stored:.12e} solved={e_solved:.12e}");
    save(cfg.out.join("rho_long.rstf"), &reg.rho_long)?;
    if err > 1e-8 {
        return Err(Error::Numerical(format!("solve check error {err:.3e}")).into());
    }
    Ok(())
}

/// Write the config echo with the command line that produced it.
pub fn echo(cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let mut text = format!("# {}\n", argv.join(" "));
    text.push_str(&cfg.echo());
    write(cfg.out.join("config.txt"), text)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))
}
