//! Global run settings: defaults, `key=value` config files and CLI overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rangesep::{Error, GridSpec, KernelSpec};

pub const DEFAULT_N: usize = 128;
pub const DEFAULT_B: f64 = 10.0;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const MAX_N: usize = 8192;

/// Global settings as given on the command line; `None` falls back to the
/// config file, then to the defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub n: Option<usize>,
    pub b: Option<f64>,
    pub kernel: Option<String>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub b: f64,
    pub kernel: KernelSpec,
    pub eps: f64,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

fn input(msg: String) -> anyhow::Error {
    Error::InvalidParameter(msg).into()
}

/// Parse `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Overrides> {
    let mut o = Overrides::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| -> anyhow::Error { Error::Parse { line: i + 1, msg }.into() };
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(format!("expected key=value, found `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| parse_err(format!("{key}: {e}"));
        match key {
            "n" => o.n = Some(value.parse().map_err(|e| bad(&e))?),
            "b" => o.b = Some(value.parse().map_err(|e| bad(&e))?),
            "kernel" => o.kernel = Some(value.to_string()),
            "eps" => o.eps = Some(value.parse().map_err(|e| bad(&e))?),
            "seed" => o.seed = Some(value.parse().map_err(|e| bad(&e))?),
            "threads" => o.threads = Some(value.parse().map_err(|e| bad(&e))?),
            "out" => o.out = Some(PathBuf::from(value)),
            other => return Err(parse_err(format!("unknown key `{other}`"))),
        }
    }
    Ok(o)
}

pub fn load_config(path: &Path) -> Result<Overrides> {
    let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    parse_config_text(&text).with_context(|| format!("in {}", path.display()))
}

impl RunConfig {
    /// Merge command-line values over file values over defaults, then
    /// validate everything before any computation starts.
    pub fn resolve(cli: &Overrides, file: &Overrides) -> Result<Self> {
        let n = cli.n.or(file.n).unwrap_or(DEFAULT_N);
        let b = cli.b.or(file.b).unwrap_or(DEFAULT_B);
        let kernel = cli.kernel.clone().or_else(|| file.kernel.clone()).unwrap_or_else(|| "newton".into());
        let eps = cli.eps.or(file.eps).unwrap_or(DEFAULT_EPS);
        let cfg = Self {
            n,
            b,
            kernel: KernelSpec::parse(&kernel)?,
            eps,
            seed: cli.seed.or(file.seed).unwrap_or(1),
            threads: cli.threads.or(file.threads).unwrap_or(1),
            out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(input(format!("n must be even and at least 4, got {}", self.n)));
        }
        if self.n > MAX_N {
            return Err(Error::ResourceGuard(format!("n = {} exceeds the per-axis cap {MAX_N}", self.n)).into());
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(input(format!("b must be positive, got {}", self.b)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(input(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.threads == 0 {
            return Err(input("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.n, self.b)?)
    }

    /// Effective settings in config-file syntax.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "b={}", self.b);
        let _ = writeln!(s, "kernel={}", self.kernel);
        let _ = writeln!(s, "eps={}", self.eps);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "out={}", self.out.display());
        s
    }
}
