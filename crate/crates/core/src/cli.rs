//! Command-line pipelines.
//!
//! Every command validates its configuration before computing anything,
//! writes its outputs under `--out`, and echoes the configuration next to
//! them as a `key=value` sidecar. Outputs of a failed command are removed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::eigensolver::{
    read_eigenpairs, solve_with, write_eigenpairs, EigenPair, SolveReport, SolverOptions, DEFAULT_TOL,
    MAX_EIGENPAIRS,
};
use crate::error::{Error, Result};
use crate::extrapolation::{extrapolate_values, label_mismatches, write_csv, DEFAULT_LEVELS};
use crate::laplacian::{BoundaryCondition, GhostScheme, Laplacian};
use crate::lattice::{expected_point_count, generate_grid, read_grid, write_grid, Grid, MAX_LEVEL};
use crate::render::{peak_positive, render_svg, RenderOptions};
use crate::symmetry::{
    build_permutations, classify_leading, write_classification, Classified, SymmetryLabel,
    DEFAULT_DEGENERACY_TOL,
};

#[derive(Parser, Debug)]
#[command(name = "snowflake", version, about = "Laplacian eigenproblems on the Koch snowflake")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(long, default_value = "dirichlet")]
    pub bc: BoundaryCondition,
    #[arg(long, default_value = "reflect")]
    pub scheme: GhostScheme,
    /// Residual tolerance relative to max(1, |λ|).
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Write the grid file for one level.
    Grid {
        #[arg(long)]
        level: u32,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute the smallest eigenpairs of the Laplacian.
    Solve {
        #[arg(long)]
        level: u32,
        #[arg(long, default_value_t = 10)]
        m: usize,
        /// Read the grid from this file instead of generating it.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Label eigenpairs with their symmetry class.
    Classify {
        #[arg(long)]
        level: u32,
        #[arg(long, default_value_t = 24)]
        m: usize,
        /// Classify the pairs in this file (it must hold more than m pairs).
        #[arg(long)]
        eigenpairs: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Richardson-extrapolate eigenvalues over several levels.
    Extrapolate {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<u32>,
        #[arg(long, alias = "m", default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Contour plots of eigenfunctions as SVG.
    Plot {
        #[arg(long)]
        level: u32,
        /// Eigenfunction indices, 1-based.
        #[arg(long, value_delimiter = ',', default_value = "6")]
        k: Vec<usize>,
        /// Number of contour levels (default: chosen from the extremum count).
        #[arg(long)]
        contours: Option<usize>,
        #[arg(long, default_value_t = 0.6)]
        dot_radius: f64,
        #[arg(long, default_value_t = 0.12)]
        stroke_width: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute the reference tables and compare against them.
    Reproduce {
        /// Also check the 100th eigenvalue.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Validated settings of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub levels: Vec<u32>,
    pub bc: Option<BoundaryCondition>,
    pub scheme: Option<GhostScheme>,
    pub m: Option<usize>,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Command-specific settings.
    pub options: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_command(cmd: &Command) -> Self {
        let mut cfg = Self {
            command: String::new(),
            levels: Vec::new(),
            bc: None,
            scheme: None,
            m: None,
            tol: DEFAULT_TOL,
            seed: 0,
            out: PathBuf::from("."),
            options: BTreeMap::new(),
        };
        let common = |cfg: &mut Self, c: &CommonArgs| {
            cfg.bc = Some(c.bc);
            cfg.scheme = Some(c.scheme);
            cfg.tol = c.tol;
            cfg.seed = c.seed;
            cfg.out = c.out.clone();
        };
        match cmd {
            Command::Grid { level, out } => {
                cfg.command = "grid".into();
                cfg.levels = vec![*level];
                cfg.out = out.clone();
            }
            Command::Solve { level, m, grid, common: c } => {
                cfg.command = "solve".into();
                common(&mut cfg, c);
                cfg.levels = vec![*level];
                cfg.m = Some(*m);
                if let Some(g) = grid {
                    cfg.options.insert("grid".into(), g.display().to_string());
                }
            }
            Command::Classify { level, m, eigenpairs, common: c } => {
                cfg.command = "classify".into();
                common(&mut cfg, c);
                cfg.levels = vec![*level];
                cfg.m = Some(*m);
                if let Some(e) = eigenpairs {
                    cfg.options.insert("eigenpairs".into(), e.display().to_string());
                }
            }
            Command::Extrapolate { levels, k, common: c } => {
                cfg.command = "extrapolate".into();
                common(&mut cfg, c);
                cfg.levels = levels.clone();
                cfg.m = Some(*k);
            }
            Command::Plot { level, k, contours, dot_radius, stroke_width, common: c } => {
                cfg.command = "plot".into();
                common(&mut cfg, c);
                cfg.levels = vec![*level];
                cfg.m = k.iter().copied().max();
                let ks: Vec<String> = k.iter().map(ToString::to_string).collect();
                cfg.options.insert("k".into(), ks.join(","));
                if let Some(n) = contours {
                    cfg.options.insert("contours".into(), n.to_string());
                }
                cfg.options.insert("dot_radius".into(), dot_radius.to_string());
                cfg.options.insert("stroke_width".into(), stroke_width.to_string());
            }
            Command::Reproduce { full, tol, seed, out } => {
                cfg.command = "reproduce".into();
                cfg.levels = DEFAULT_LEVELS.to_vec();
                cfg.m = Some(if *full { 100 } else { 24 });
                cfg.tol = *tol;
                cfg.seed = *seed;
                cfg.out = out.clone();
                cfg.options.insert("full".into(), full.to_string());
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        for &l in &self.levels {
            if !(1..=MAX_LEVEL).contains(&l) {
                return bad(format!("level must be in 1..={MAX_LEVEL}, got {l}"));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if let Some(m) = self.m {
            if m == 0 || m > MAX_EIGENPAIRS {
                return bad(format!("number of eigenpairs must be in 1..={MAX_EIGENPAIRS}, got {m}"));
            }
            let smallest = self.levels.iter().map(|&l| expected_point_count(l)).min().unwrap_or(0);
            // classify and plot solve two extra pairs to see past a degenerate pair
            let extra = if matches!(self.command.as_str(), "classify" | "plot" | "extrapolate") { 2 } else { 0 };
            if self.command != "reproduce" && (m + extra) as u64 > smallest {
                return bad(format!("{} eigenpairs requested but the grid has only {smallest} points", m + extra));
            }
        }
        if self.command == "extrapolate" {
            let mut l = self.levels.clone();
            l.sort_unstable();
            l.dedup();
            if l.len() != self.levels.len() || !(2..=5).contains(&l.len()) {
                return bad(format!("extrapolation needs 2 to 5 distinct levels, got {:?}", self.levels));
            }
        }
        if self.command == "plot" {
            let ks = self.options.get("k").map(String::as_str).unwrap_or("");
            if ks.is_empty() || ks.split(',').any(|k| k == "0") {
                return bad("plot indices are 1-based and at least one is required".into());
            }
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        let levels: Vec<String> = self.levels.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "levels={}", levels.join(","));
        if let Some(bc) = self.bc {
            let _ = writeln!(s, "bc={bc}");
        }
        if let Some(scheme) = self.scheme {
            let _ = writeln!(s, "scheme={scheme}");
        }
        if let Some(m) = self.m {
            let _ = writeln!(s, "m={m}");
        }
        let _ = writeln!(s, "tol={:e}", self.tol);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "out={}", self.out.display());
        for (k, v) in &self.options {
            let _ = writeln!(s, "option.{k}={v}");
        }
        s
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut cfg = Self::from_command(&Command::Grid { level: 1, out: ".".into() });
        cfg.levels.clear();
        cfg.command.clear();
        for (i, line) in text.lines().enumerate() {
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| perr(format!("expected key=value, got {line:?}")))?;
            let num = |what: &str| perr(format!("bad {what}: {v:?}"));
            match k {
                "command" => cfg.command = v.to_string(),
                "levels" => {
                    cfg.levels = v.split(',').map(|x| x.parse().map_err(|_| num("level"))).collect::<Result<_>>()?
                }
                "bc" => cfg.bc = Some(v.parse().map_err(|e: Error| perr(e.to_string()))?),
                "scheme" => cfg.scheme = Some(v.parse().map_err(|e: Error| perr(e.to_string()))?),
                "m" => cfg.m = Some(v.parse().map_err(|_| num("m"))?),
                "tol" => cfg.tol = v.parse().map_err(|_| num("tol"))?,
                "seed" => cfg.seed = v.parse().map_err(|_| num("seed"))?,
                "out" => cfg.out = PathBuf::from(v),
                _ => match k.strip_prefix("option.") {
                    Some(name) => {
                        cfg.options.insert(name.to_string(), v.to_string());
                    }
                    None => return Err(perr(format!("unknown key {k:?}"))),
                },
            }
        }
        if cfg.command.is_empty() {
            return Err(Error::Parse { line: 0, msg: "missing command".into() });
        }
        Ok(cfg)
    }
}

/// Files written by one command; removed again unless the command succeeds.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), keep: false })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    fn write_str(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.keep = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn stem(kind: &str, bc: BoundaryCondition, scheme: GhostScheme, level: u32) -> String {
    format!("{kind}_{bc}_{scheme}_l{level}")
}

fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions { tol: cfg.tol, seed: cfg.seed, ..SolverOptions::default() }
}

/// Parses the command line, runs it and maps the outcome to an exit status:
/// 0 on success, 1 when `reproduce` finds a failed check, 2 on errors.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one command; `Ok(false)` means it completed but a check failed.
pub fn run(cmd: &Command) -> Result<bool> {
    let cfg = RunConfig::from_command(cmd);
    cfg.validate()?;
    match cmd {
        Command::Grid { .. } => cmd_grid(&cfg).map(|_| true),
        Command::Solve { grid, .. } => cmd_solve(&cfg, grid.as_deref()).map(|_| true),
        Command::Classify { eigenpairs, .. } => cmd_classify(&cfg, eigenpairs.as_deref()).map(|_| true),
        Command::Extrapolate { .. } => cmd_extrapolate(&cfg).map(|_| true),
        Command::Plot { k, contours, dot_radius, stroke_width, .. } => {
            let opts = RenderOptions {
                levels: *contours,
                dot_radius: *dot_radius,
                stroke_width: *stroke_width,
                ..RenderOptions::default()
            };
            cmd_plot(&cfg, k, &opts).map(|_| true)
        }
        Command::Reproduce { full, .. } => cmd_reproduce(&cfg, *full).map(|r| r.passed()),
    }
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let level = cfg.levels[0];
    let grid = generate_grid(level)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write(&format!("grid_l{level}.txt"), |w| write_grid(&grid, w))?;
    out.write_str(&format!("grid_l{level}.config"), &cfg.to_sidecar())?;
    println!("level {level}: {} points, h = {}", grid.len(), grid.h());
    Ok(out.commit())
}

pub fn cmd_solve(cfg: &RunConfig, grid_file: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (level, bc, scheme, m) = (cfg.levels[0], cfg.bc.unwrap_or_default(), cfg.scheme.unwrap_or_default(), cfg.m.unwrap_or(10));
    let grid = match grid_file {
        Some(path) => {
            let g = read_grid(BufReader::new(File::open(path)?))?;
            if g.level() != level {
                return Err(Error::InvalidArgument(format!("grid file has level {}, expected {level}", g.level())));
            }
            g
        }
        None => generate_grid(level)?,
    };
    let op = Laplacian::new(&grid, bc, scheme);
    let (pairs, report) = solve_with(&op, m, &solver_options(cfg))?;
    let name = stem("eigenpairs", bc, scheme, level);
    let mut out = Outputs::new(&cfg.out)?;
    out.write(&format!("{name}.txt"), |w| write_eigenpairs(w, level, bc, scheme, &pairs))?;
    let text = solve_report(&pairs, &report);
    out.write_str(&format!("{name}.report"), &text)?;
    out.write_str(&format!("{name}.config"), &cfg.to_sidecar())?;
    print!("{text}");
    Ok(out.commit())
}

fn solve_report(pairs: &[EigenPair], report: &SolveReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "iterations {}", report.iterations);
    let _ = writeln!(s, "restarts {}", report.restarts);
    let _ = writeln!(s, "matvecs {}", report.matvecs);
    let _ = writeln!(s, "wall_time {:.3}", report.wall_time);
    let _ = writeln!(s, "k lambda residual");
    for (k, (p, r)) in pairs.iter().zip(&report.residuals).enumerate() {
        let _ = writeln!(s, "{} {:.6} {r:.2e}", k + 1, p.value);
    }
    s
}

/// Eigenpairs for `classify`/`plot`: from a file when given, otherwise a
/// fresh solve for two more pairs than needed.
fn pairs_for(cfg: &RunConfig, file: Option<&Path>, needed: usize) -> Result<(u32, BoundaryCondition, GhostScheme, Vec<EigenPair>)> {
    match file {
        Some(path) => {
            let f = read_eigenpairs(BufReader::new(File::open(path)?))?;
            if f.pairs.len() <= needed {
                return Err(Error::InvalidArgument(format!(
                    "{} holds {} pairs; more than {needed} are needed",
                    path.display(),
                    f.pairs.len()
                )));
            }
            Ok((f.level, f.bc, f.scheme, f.pairs))
        }
        None => {
            let (level, bc, scheme) = (cfg.levels[0], cfg.bc.unwrap_or_default(), cfg.scheme.unwrap_or_default());
            let grid = generate_grid(level)?;
            let op = Laplacian::new(&grid, bc, scheme);
            let (pairs, _) = solve_with(&op, needed + 2, &solver_options(cfg))?;
            Ok((level, bc, scheme, pairs))
        }
    }
}

fn classified(grid: &Grid, bc: BoundaryCondition, scheme: GhostScheme, pairs: &[EigenPair], count: usize) -> Result<Vec<Classified>> {
    if pairs.first().is_some_and(|p| p.vector.len() != grid.len()) {
        return Err(Error::InvalidArgument("eigenvectors do not match the grid size".into()));
    }
    let op = Laplacian::new(grid, bc, scheme);
    let perms = build_permutations(grid)?;
    classify_leading(&op, &perms, pairs, count, DEFAULT_DEGENERACY_TOL)
}

pub fn cmd_classify(cfg: &RunConfig, file: Option<&Path>) -> Result<Vec<PathBuf>> {
    let m = cfg.m.unwrap_or(24);
    let (level, bc, scheme, pairs) = pairs_for(cfg, file, m)?;
    let grid = generate_grid(level)?;
    let items = classified(&grid, bc, scheme, &pairs, m)?;
    let name = stem("classification", bc, scheme, level);
    let mut out = Outputs::new(&cfg.out)?;
    let path = out.write(&format!("{name}.txt"), |w| write_classification(w, &items))?;
    out.write_str(&format!("{name}.config"), &cfg.to_sidecar())?;
    print!("{}", fs::read_to_string(path)?);
    Ok(out.commit())
}

pub fn cmd_extrapolate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (bc, scheme, k) = (cfg.bc.unwrap_or_default(), cfg.scheme.unwrap_or_default(), cfg.m.unwrap_or(10));
    let mut values = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for &level in &cfg.levels {
        let start = Instant::now();
        let grid = generate_grid(level)?;
        let op = Laplacian::new(&grid, bc, scheme);
        let (pairs, _) = solve_with(&op, k + 2, &solver_options(cfg))?;
        eprintln!("level {level}: {} pairs in {:.1} s", pairs.len(), start.elapsed().as_secs_f64());
        match classified(&grid, bc, scheme, &pairs, k) {
            Ok(items) => {
                labels.insert(level, items.iter().map(|c| c.label).collect::<Vec<_>>());
            }
            Err(e) => eprintln!("warning: level {level}: labels unavailable: {e}"),
        }
        values.insert(level, pairs.iter().take(k).map(|p| p.value).collect::<Vec<_>>());
    }
    for w in label_mismatches(&labels, k) {
        eprintln!("warning: {w}");
    }
    let records = extrapolate_values(&values, k, &cfg.levels)?;
    let mut out = Outputs::new(&cfg.out)?;
    let name = format!("extrapolation_{bc}_{scheme}");
    let path = out.write(&format!("{name}.csv"), |w| write_csv(w, &records))?;
    out.write_str(&format!("{name}.config"), &cfg.to_sidecar())?;
    print!("{}", fs::read_to_string(path)?);
    Ok(out.commit())
}

pub fn cmd_plot(cfg: &RunConfig, ks: &[usize], opts: &RenderOptions) -> Result<Vec<PathBuf>> {
    let needed = ks.iter().copied().max().unwrap_or(1);
    let (level, bc, scheme, pairs) = pairs_for(cfg, None, needed)?;
    let grid = generate_grid(level)?;
    let vectors: Vec<Vec<f64>> = match classified(&grid, bc, scheme, &pairs, needed) {
        Ok(items) => items.into_iter().map(|c| c.pair.vector.into_inner()).collect(),
        Err(e) => {
            eprintln!("warning: plotting unclassified vectors: {e}");
            pairs.into_iter().map(|p| p.vector.into_inner()).collect()
        }
    };
    let mut out = Outputs::new(&cfg.out)?;
    for &k in ks {
        let svg = render_svg(&grid, &peak_positive(&vectors[k - 1]), opts)?;
        let path = out.write_str(&format!("{}.svg", stem(&format!("psi{k}"), bc, scheme, level)), &svg)?;
        println!("{}", path.display());
    }
    out.write_str(&format!("{}.config", stem("plot", bc, scheme, level)), &cfg.to_sidecar())?;
    Ok(out.commit())
}

#[derive(Debug, Clone, Deserialize)]
pub struct Tolerances {
    pub eigenvalue_rel: f64,
    pub lambda_100_rel: f64,
    pub kernel_abs: f64,
    pub rel_diff_fraction: f64,
    pub degeneracy_rel: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridReference {
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SpectrumReference {
    pub lambda: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub lambda_100: f64,
    pub lambda_100_r: f64,
    pub labels: Vec<String>,
    #[serde(default)]
    pub degenerate_pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub rel_diff: Vec<f64>,
    pub rel_diff_100: Option<f64>,
}

impl SpectrumReference {
    pub fn parsed_labels(&self) -> Result<Vec<SymmetryLabel>> {
        self.labels.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Reference {
    pub version: u32,
    pub tolerances: Tolerances,
    pub grid: GridReference,
    pub dirichlet: SpectrumReference,
    pub neumann: SpectrumReference,
}

impl Reference {
    pub fn spectrum(&self, bc: BoundaryCondition) -> &SpectrumReference {
        match bc {
            BoundaryCondition::Dirichlet => &self.dirichlet,
            BoundaryCondition::Neumann => &self.neumann,
        }
    }
}

/// The bundled reference dataset.
pub fn reference() -> Result<Reference> {
    let r: Reference = toml::from_str(include_str!("../data/reference.toml"))
        .map_err(|e| Error::Internal(format!("reference data: {e}")))?;
    for s in [&r.dirichlet, &r.neumann] {
        if s.lambda.len() != 10 || s.lambda_r.len() != 10 || s.labels.len() != 24 {
            return Err(Error::Internal("reference data: wrong table lengths".into()));
        }
        s.parsed_labels()?;
    }
    Ok(r)
}

pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

/// Decade of a relative difference, `round(log10 |r|)`.
pub fn decade(r: f64) -> i32 {
    r.abs().log10().round() as i32
}

/// Text of the reproduction report plus its pass/fail tally.
#[derive(Debug, Clone, Default)]
pub struct ReproduceReport {
    pub text: String,
    pub passed: usize,
    pub failed: usize,
}

impl ReproduceReport {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }

    fn section(&mut self, title: &str) {
        let _ = write!(self.text, "\n{title}\n");
    }

    fn row(&mut self, ok: bool, body: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        let _ = writeln!(self.text, "  {body}  {}", if ok { "PASS" } else { "FAIL" });
    }

    fn note(&mut self, body: String) {
        let _ = writeln!(self.text, "  {body}");
    }
}

/// Eigenvalues and level-5-style labels from one (level, bc) run.
struct LevelRun {
    values: Vec<f64>,
    labels: std::result::Result<Vec<SymmetryLabel>, String>,
}

fn run_level(level: u32, bc: BoundaryCondition, m: usize, labels: usize, cfg: &RunConfig) -> Result<LevelRun> {
    let start = Instant::now();
    let grid = generate_grid(level)?;
    let op = Laplacian::new(&grid, bc, GhostScheme::Reflect);
    let (pairs, report) = solve_with(&op, m, &solver_options(cfg))?;
    let labels = classified(&grid, bc, GhostScheme::Reflect, &pairs, labels)
        .map(|items| items.iter().map(|c| c.label).collect())
        .map_err(|e| e.to_string());
    eprintln!(
        "{bc} level {level}: {m} pairs, {} matvecs, {:.1} s",
        report.matvecs,
        start.elapsed().as_secs_f64()
    );
    Ok(LevelRun { values: pairs.iter().map(|p| p.value).collect(), labels })
}

/// Solves levels 3 to 6 for both boundary conditions and compares eigenvalues,
/// extrapolations, relative differences and symmetry labels with the bundled
/// reference data. The report is a deterministic function of the seed and
/// tolerance.
pub fn compute_reproduce(cfg: &RunConfig, full: bool) -> Result<ReproduceReport> {
    let refs = reference()?;
    let tols = &refs.tolerances;
    let count = if full { 100 } else { 24 };
    let mut rep = ReproduceReport::default();
    let _ = writeln!(
        rep.text,
        "snowflake reproduce: levels 4,5,6; {count} eigenpairs; seed {}; tol {:e}; reflect ghosts",
        cfg.seed, cfg.tol
    );

    rep.section("Grid point counts");
    for (i, &want) in refs.grid.counts.iter().enumerate() {
        let level = i as u32 + 1;
        let got = generate_grid(level)?.len() as u64;
        rep.row(got == want, format!("level {level}: N = {got:>7}  expected {want:>7}"));
    }

    let mut runs: BTreeMap<(BoundaryCondition, u32), LevelRun> = BTreeMap::new();
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let levels: &[u32] = if bc == BoundaryCondition::Dirichlet { &[3, 4, 5, 6] } else { &[4, 5, 6] };
        for &level in levels {
            runs.insert((bc, level), run_level(level, bc, count + 2, 24, cfg)?);
        }
    }

    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let sref = refs.spectrum(bc);
        let neumann = bc == BoundaryCondition::Neumann;
        let values: BTreeMap<u32, Vec<f64>> =
            DEFAULT_LEVELS.iter().map(|&l| (l, runs[&(bc, l)].values[..count].to_vec())).collect();
        let records = extrapolate_values(&values, count, &DEFAULT_LEVELS)?;
        let fine = &values[&6];

        let check_value = |rep: &mut ReproduceReport, k: usize, got: f64, want: f64, tol: f64| {
            if want == 0.0 {
                rep.row(got.abs() <= tols.kernel_abs, format!("k = {k:>3}: {got:>14.6e}  reference {want:<10}  |abs| ≤ {:.0e}", tols.kernel_abs));
            } else {
                let e = rel_err(got, want);
                rep.row(e <= tol, format!("k = {k:>3}: {got:>14.6}  reference {want:<10}  rel. error {e:.2e}"));
            }
        };

        rep.section(&format!("{bc}: eigenvalues at level 6"));
        for k in 1..=10 {
            check_value(&mut rep, k, fine[k - 1], sref.lambda[k - 1], tols.eigenvalue_rel);
        }
        if full {
            check_value(&mut rep, 100, fine[99], sref.lambda_100, tols.lambda_100_rel);
        }

        rep.section(&format!("{bc}: extrapolated eigenvalues (levels 4, 5, 6)"));
        for k in 1..=10 {
            check_value(&mut rep, k, records[k - 1].lambda_r, sref.lambda_r[k - 1], tols.eigenvalue_rel);
        }
        if full {
            check_value(&mut rep, 100, records[99].lambda_r, sref.lambda_100_r, tols.lambda_100_rel);
        }

        rep.section(&format!("{bc}: relative difference (λ_k(6) − λ_k^R)/λ_k^R"));
        for k in 1..=10 {
            let Some(r) = records[k - 1].rel_diff() else {
                rep.note(format!("k = {k:>3}: not defined (λ_R = 0)"));
                continue;
            };
            if neumann {
                let want = sref.rel_diff[k - 2];
                let ok = (r - want).abs() <= tols.rel_diff_fraction * want.abs();
                rep.row(ok, format!("k = {k:>3}: {r:>10.4}  reference {want:<8}  (±{:.0}%)", 100.0 * tols.rel_diff_fraction));
            } else {
                let d = decade(r);
                rep.row((-5..=-4).contains(&d), format!("k = {k:>3}: {r:>10.2e}  nearest decade 1e{d}  (1e-5 to 1e-4)"));
            }
        }
        if full {
            if let (Some(r), Some(want)) = (records[99].rel_diff(), sref.rel_diff_100) {
                let ok = (r - want).abs() <= tols.rel_diff_fraction * want.abs();
                rep.row(ok, format!("k = 100: {r:>10.4}  reference {want:<8}  (±{:.0}%)", 100.0 * tols.rel_diff_fraction));
            }
        }

        rep.section(&format!("{bc}: symmetry labels at level 5"));
        let want = sref.parsed_labels()?;
        match &runs[&(bc, 5)].labels {
            Ok(got) => {
                for (k, (g, w)) in got.iter().zip(&want).enumerate() {
                    rep.row(g == w, format!("k = {:>3}: {g}  reference {w}", k + 1));
                }
            }
            Err(e) => rep.row(false, format!("classification failed: {e}")),
        }

        let labels: BTreeMap<u32, Vec<SymmetryLabel>> = DEFAULT_LEVELS
            .iter()
            .filter_map(|&l| runs[&(bc, l)].labels.as_ref().ok().map(|v| (l, v.clone())))
            .collect();
        let warnings = label_mismatches(&labels, 24);
        rep.section(&format!("{bc}: label consistency across levels 4, 5, 6"));
        rep.row(warnings.is_empty() && labels.len() == DEFAULT_LEVELS.len(), format!("{} of 3 levels classified, {} mismatches", labels.len(), warnings.len()));
        for w in warnings {
            rep.note(w);
        }

        if !sref.degenerate_pairs.is_empty() {
            rep.section(&format!("{bc}: degenerate pairs at levels 4 and 5"));
            for level in [4, 5] {
                let run = &runs[&(bc, level)];
                for &[i, j] in &sref.degenerate_pairs {
                    let (a, b) = (run.values[i - 1], run.values[j - 1]);
                    let gap = (b - a).abs() / a.abs().max(b.abs());
                    let dims = run.labels.as_ref().map(|l| (l[i - 1].dim, l[j - 1].dim)).unwrap_or((0, 0));
                    rep.row(
                        gap <= tols.degeneracy_rel && dims == (2, 2),
                        format!("level {level}, ({i:>2}, {j:>2}): relative gap {gap:.1e}, d = {}, {}", dims.0, dims.1),
                    );
                }
            }
        }

        if bc == BoundaryCondition::Dirichlet {
            rep.section("dirichlet: |λ_1(ℓ) − λ_1^R| decreases with ℓ");
            let lr = records[0].lambda_r;
            let errs: Vec<(u32, f64)> = (3..=6).map(|l| (l, (runs[&(bc, l)].values[0] - lr).abs())).collect();
            for w in errs.windows(2) {
                rep.row(w[1].1 < w[0].1, format!("level {} → {}: {:.4e} → {:.4e}", w[0].0, w[1].0, w[0].1, w[1].1));
            }
        }
    }

    let _ = write!(
        rep.text,
        "\nSummary: {} checks passed, {} failed\nRESULT: {}\n",
        rep.passed,
        rep.failed,
        if rep.failed == 0 { "PASS" } else { "FAIL" }
    );
    Ok(rep)
}

pub fn cmd_reproduce(cfg: &RunConfig, full: bool) -> Result<ReproduceReport> {
    let rep = compute_reproduce(cfg, full)?;
    let mut out = Outputs::new(&cfg.out)?;
    out.write_str("reproduce_report.txt", &rep.text)?;
    out.write_str("reproduce_report.config", &cfg.to_sidecar())?;
    out.commit();
    print!("{}", rep.text);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        let mut full = vec!["snowflake"];
        full.extend_from_slice(args);
        Cli::try_parse_from(full).unwrap().command
    }

    #[test]
    fn flags_parse() {
        let cmd = parse(&["solve", "--level", "4", "--bc", "neumann", "--scheme", "average", "--m", "7", "--tol", "1e-9", "--seed", "3"]);
        let cfg = RunConfig::from_command(&cmd);
        assert_eq!(cfg.levels, vec![4]);
        assert_eq!(cfg.bc, Some(BoundaryCondition::Neumann));
        assert_eq!(cfg.scheme, Some(GhostScheme::Average));
        assert_eq!((cfg.m, cfg.tol, cfg.seed), (Some(7), 1e-9, 3));
        let cmd = parse(&["extrapolate", "--levels", "3,4,5", "--k", "12"]);
        let cfg = RunConfig::from_command(&cmd);
        assert_eq!(cfg.levels, vec![3, 4, 5]);
        assert_eq!(cfg.m, Some(12));
        assert!(Cli::try_parse_from(["snowflake", "solve", "--level", "3", "--bc", "robin"]).is_err());
    }

    #[test]
    fn validation() {
        let check = |args: &[&str]| RunConfig::from_command(&parse(args)).validate();
        assert!(check(&["grid", "--level", "3"]).is_ok());
        assert!(check(&["grid", "--level", "0"]).is_err());
        assert!(check(&["grid", "--level", "9"]).is_err());
        assert!(check(&["solve", "--level", "1", "--m", "2"]).is_err());
        assert!(check(&["solve", "--level", "2", "--m", "13"]).is_ok());
        assert!(check(&["classify", "--level", "2", "--m", "12"]).is_err());
        assert!(check(&["solve", "--level", "3", "--tol", "0"]).is_err());
        assert!(check(&["solve", "--level", "3", "--m", "0"]).is_err());
        assert!(check(&["extrapolate", "--levels", "4,4,5"]).is_err());
        assert!(check(&["extrapolate", "--levels", "4"]).is_err());
        assert!(check(&["plot", "--level", "3", "--k", "0"]).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let cmd = parse(&["plot", "--level", "3", "--k", "1,6", "--contours", "5", "--out", "/tmp/x"]);
        let cfg = RunConfig::from_command(&cmd);
        let text = cfg.to_sidecar();
        assert!(text.starts_with("command=plot\nlevels=3\nbc=dirichlet\nscheme=reflect\nm=6\ntol=1e-10\n"), "{text}");
        assert_eq!(RunConfig::parse_sidecar(&text).unwrap(), cfg);
        assert!(RunConfig::parse_sidecar("levels=3\n").is_err());
        assert!(RunConfig::parse_sidecar("command=grid\nbogus=1\n").is_err());
    }

    #[test]
    fn reference_data_loads() {
        let r = reference().unwrap();
        assert_eq!(r.version, 1);
        assert_eq!(r.grid.counts, vec![1, 13, 133, 1261, 11605, 105469]);
        assert_eq!(r.neumann.rel_diff.len(), 9);
        assert_eq!(r.dirichlet.parsed_labels().unwrap()[23].to_string(), "--1");
    }

    #[test]
    fn decades() {
        assert_eq!(decade(7.3e-6), -5);
        assert_eq!(decade(2.9e-4), -4);
        assert_eq!(decade(-3.2e-5), -4);
        assert_eq!(decade(-2.9e-5), -5);
        assert_eq!(decade(4e-4), -3);
    }

    #[test]
    fn failed_commands_leave_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(dir.path()).unwrap();
        out.write_str("a.txt", "x").unwrap();
        let err = out.write("b.txt", |_| Err(Error::Internal("boom".into())));
        assert!(err.is_err());
        drop(out);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
