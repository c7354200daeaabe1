//! Experiment configuration, orchestration and data emission.
//!
//! A run reads a flat `key=value` config, builds the wave, integrates the PDE
//! to `t_end`, evaluates diagnostics at every snapshot and writes
//!
//! - `profile.csv`: `xi,phi,dphi,d2phi`
//! - `snapshots.csv`: one row per snapshot, columns [`SNAPSHOT_COLUMNS`]
//! - `decay_report.csv`: `series,exponent,r2,theory_exponent,status`
//! - `plot/`: two-column `log10(1+t) log10(value)` files and a gnuplot script
//! - `manifest.txt`: run metadata followed by a `[config]` echo
//!
//! All CSV output depends only on the config, so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    build_perturbation, compute_shift, default_energy_weight, energy_functional, fit_decay, residuals,
    sandwich_holds, sobolev_norms, weighted_monitor, MonitorSample,
};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{check_admissible, Params, PressureModel, StructuralCheck};
use crate::solver::{init_state, DiffusionMode, Grid, InitPerturbation, SchemeConfig, Solver, SpatialOrder, State};
use crate::wave::{build_profile, default_xi_max, fmt17, WaveField, DEFAULT_N_PTS, DEFAULT_TOL};

/// Perturbation family added to the wave at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbationKind {
    #[default]
    None,
    Shift,
    Bump,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: Params,
    pub kappa: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub cfl: f64,
    pub diffusion: DiffusionMode,
    pub order: SpatialOrder,
    pub exec: Execution,
    pub t_end: f64,
    /// Number of snapshots, log-spaced in `1 + t`; ignored if `snapshot_times` is set.
    pub snapshots: usize,
    pub snapshot_times: Vec<f64>,
    pub perturbation: PerturbationKind,
    pub pert_amplitude: f64,
    pub pert_center: f64,
    pub pert_width: f64,
    pub pert_shift: f64,
    pub pert_zero_mass: bool,
    /// `None` selects [`default_xi_max`].
    pub xi_max: Option<f64>,
    pub n_pts: usize,
    pub profile_tol: f64,
    /// `None` selects `4/alpha + 1`.
    pub k_e: Option<f64>,
    /// `None` selects `t_end / 10`.
    pub fit_t_min: Option<f64>,
    /// `None` selects `t_end`.
    pub fit_t_max: Option<f64>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            params: Params::default(),
            kappa: 2.0,
            x_min: -400.0,
            x_max: 400.0,
            nx: 8192,
            cfl: 0.45,
            diffusion: DiffusionMode::Implicit,
            order: SpatialOrder::Second,
            exec: Execution::Parallel,
            t_end: 200.0,
            snapshots: 40,
            snapshot_times: Vec::new(),
            perturbation: PerturbationKind::None,
            pert_amplitude: 0.01,
            pert_center: 0.0,
            pert_width: 5.0,
            pert_shift: 0.0,
            pert_zero_mass: false,
            xi_max: None,
            n_pts: DEFAULT_N_PTS,
            profile_tol: DEFAULT_TOL,
            k_e: None,
            fit_t_min: None,
            fit_t_max: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Key reference printed by `--help`.
pub const CONFIG_KEYS: &str = "\
alpha=1 mu=1 a=1 b=1 d=1 rho_minus=0.8 rho_plus=1.2 kappa=2
x_min=-400 x_max=400 nx=8192 cfl=0.45 diffusion=implicit|explicit order=2|1 exec=parallel|sequential
t_end=200 snapshots=40 snapshot_times=t1,t2,... (overrides snapshots)
perturbation=none|shift|bump pert_amplitude=0.01 pert_center=0 pert_width=5 pert_shift=0 pert_zero_mass=false
xi_max=auto n_pts=4001 profile_tol=1e-10 k_e=auto(4/alpha+1) fit_t_min=auto(t_end/10) fit_t_max=auto(t_end)
out_dir=out seed=0";

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, col, msg: msg.into() }
}

fn invalid(field: &str, constraint: impl Into<String>) -> Error {
    Error::Validation { field: field.into(), constraint: constraint.into() }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses `key=value` lines over the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text, 0)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds the config from the `[config]` section of a manifest.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let start = text
            .lines()
            .position(|l| l.trim() == "[config]")
            .ok_or_else(|| parse_err(0, 0, "manifest has no [config] section"))?;
        let body: Vec<&str> = text.lines().skip(start + 1).collect();
        let mut cfg = Self::default();
        cfg.apply(&body.join("\n"), start + 1)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, text: &str, line_offset: usize) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1 + line_offset;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let eq = content
                .find('=')
                .ok_or_else(|| parse_err(line, 1, format!("expected key=value, got `{}`", content.trim())))?;
            let key = content[..eq].trim();
            let value = content[eq + 1..].trim();
            let key_col = content.len() - content.trim_start().len() + 1;
            let val_col = eq + 2 + (content[eq + 1..].len() - content[eq + 1..].trim_start().len());
            self.set(key, value).map_err(|msg| {
                let col = if msg.starts_with("unknown key") { key_col } else { val_col };
                parse_err(line, col, msg)
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num(v: &str) -> std::result::Result<f64, String> {
            v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"))
        }
        fn int<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse::<T>().map_err(|_| format!("`{v}` is not a non-negative integer"))
        }
        fn auto(v: &str) -> std::result::Result<Option<f64>, String> {
            if v == "auto" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        }
        let p = &mut self.params;
        match key {
            "alpha" => p.alpha = num(v)?,
            "mu" => p.mu = num(v)?,
            "a" => p.a = num(v)?,
            "b" => p.b = num(v)?,
            "d" => p.dd = num(v)?,
            "rho_minus" => p.rho_minus = num(v)?,
            "rho_plus" => p.rho_plus = num(v)?,
            "kappa" => self.kappa = num(v)?,
            "x_min" => self.x_min = num(v)?,
            "x_max" => self.x_max = num(v)?,
            "nx" => self.nx = int(v)?,
            "cfl" => self.cfl = num(v)?,
            "diffusion" => {
                self.diffusion = match v {
                    "implicit" => DiffusionMode::Implicit,
                    "explicit" => DiffusionMode::Explicit,
                    _ => return Err(format!("diffusion must be implicit or explicit, got `{v}`")),
                }
            }
            "order" => {
                self.order = match v {
                    "1" => SpatialOrder::First,
                    "2" => SpatialOrder::Second,
                    _ => return Err(format!("order must be 1 or 2, got `{v}`")),
                }
            }
            "exec" => {
                self.exec = match v {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(format!("exec must be parallel or sequential, got `{v}`")),
                }
            }
            "t_end" => self.t_end = num(v)?,
            "snapshots" => self.snapshots = int(v)?,
            "snapshot_times" => {
                self.snapshot_times = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| num(s.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            "perturbation" => {
                self.perturbation = match v {
                    "none" => PerturbationKind::None,
                    "shift" => PerturbationKind::Shift,
                    "bump" => PerturbationKind::Bump,
                    _ => return Err(format!("perturbation must be none, shift or bump, got `{v}`")),
                }
            }
            "pert_amplitude" => self.pert_amplitude = num(v)?,
            "pert_center" => self.pert_center = num(v)?,
            "pert_width" => self.pert_width = num(v)?,
            "pert_shift" => self.pert_shift = num(v)?,
            "pert_zero_mass" => {
                self.pert_zero_mass = v.parse::<bool>().map_err(|_| format!("`{v}` is not true or false"))?
            }
            "xi_max" => self.xi_max = auto(v)?,
            "n_pts" => self.n_pts = int(v)?,
            "profile_tol" => self.profile_tol = num(v)?,
            "k_e" => self.k_e = auto(v)?,
            "fit_t_min" => self.fit_t_min = auto(v)?,
            "fit_t_max" => self.fit_t_max = auto(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = int(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Checks every module-level invariant before any compute.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let positive = [("alpha", p.alpha), ("mu", p.mu), ("a", p.a), ("b", p.b), ("d", p.dd), ("rho_minus", p.rho_minus), ("rho_plus", p.rho_plus)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        let coupling = p.a * p.mu / p.b;
        if !(self.kappa > coupling) {
            return Err(invalid(
                "kappa",
                format!("admissibility requires kappa > a*mu/b = {coupling} so that p'(rho) - (a*mu/b)*rho > 0; got {}", self.kappa),
            ));
        }
        if !(self.x_max > self.x_min) {
            return Err(invalid("x_max", "must exceed x_min"));
        }
        if self.nx < crate::solver::MIN_CELLS {
            return Err(invalid("nx", format!("must be >= {}", crate::solver::MIN_CELLS)));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(invalid("cfl", "must lie in (0, 1)"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", "must be positive and finite"));
        }
        if self.snapshot_times.is_empty() && self.snapshots == 0 {
            return Err(invalid("snapshots", "must be >= 1"));
        }
        if self.snapshot_times.iter().any(|&t| !(t > 0.0 && t <= self.t_end)) {
            return Err(invalid("snapshot_times", "every time must lie in (0, t_end]"));
        }
        if !(self.pert_width > 0.0) {
            return Err(invalid("pert_width", "must be positive"));
        }
        if let Some(x) = self.xi_max {
            if !(x > 0.0) {
                return Err(invalid("xi_max", "must be positive"));
            }
        }
        if self.n_pts < 201 {
            return Err(invalid("n_pts", "must be >= 201"));
        }
        if !(self.profile_tol > 0.0) {
            return Err(invalid("profile_tol", "must be positive"));
        }
        if !(p.alpha * self.energy_weight() > 1.0) {
            return Err(invalid("k_e", "requires alpha*k_e > 1"));
        }
        let (lo, hi) = self.fit_window();
        if !(hi > lo && lo >= 0.0) {
            return Err(invalid("fit_t_min", "fit window must satisfy 0 <= fit_t_min < fit_t_max"));
        }
        if p.rho_minus != p.rho_plus {
            let half = (-self.x_min).min(self.x_max);
            let need = 10.0 * (1.0 + self.t_end).sqrt();
            if !(half >= need) {
                return Err(invalid("x_min", format!("domain half-width {half} is below 10*sqrt(1+t_end) = {need}")));
            }
        }
        Ok(())
    }

    pub fn energy_weight(&self) -> f64 {
        self.k_e.unwrap_or_else(|| default_energy_weight(self.params.alpha))
    }

    pub fn fit_window(&self) -> (f64, f64) {
        (self.fit_t_min.unwrap_or(self.t_end / 10.0), self.fit_t_max.unwrap_or(self.t_end))
    }

    pub fn pressure(&self) -> PressureModel {
        PressureModel::quadratic(self.kappa, &self.params)
    }

    /// Snapshot times in `(0, t_end]`.
    pub fn schedule(&self) -> Vec<f64> {
        if !self.snapshot_times.is_empty() {
            let mut ts = self.snapshot_times.clone();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ts.dedup();
            return ts;
        }
        let n = self.snapshots;
        let top = (1.0 + self.t_end).ln();
        let mut ts: Vec<f64> = (1..=n).map(|i| (top * i as f64 / n as f64).exp_m1()).collect();
        ts[n - 1] = self.t_end;
        ts
    }

    pub fn init_perturbation(&self) -> InitPerturbation {
        match self.perturbation {
            PerturbationKind::None => InitPerturbation::None,
            PerturbationKind::Shift => InitPerturbation::Shift { s: self.pert_shift },
            PerturbationKind::Bump => InitPerturbation::Bump {
                amplitude: self.pert_amplitude,
                center: self.pert_center,
                half_width: self.pert_width,
                zero_mass: self.pert_zero_mass,
            },
        }
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            cfl: self.cfl,
            diffusion: self.diffusion,
            order: self.order,
            snapshot_times: self.schedule(),
            exec: self.exec,
        }
    }

    /// Canonical `key=value` echo; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let times: Vec<String> = self.snapshot_times.iter().map(|t| t.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("alpha", p.alpha.to_string());
        kv("mu", p.mu.to_string());
        kv("a", p.a.to_string());
        kv("b", p.b.to_string());
        kv("d", p.dd.to_string());
        kv("rho_minus", p.rho_minus.to_string());
        kv("rho_plus", p.rho_plus.to_string());
        kv("kappa", self.kappa.to_string());
        kv("x_min", self.x_min.to_string());
        kv("x_max", self.x_max.to_string());
        kv("nx", self.nx.to_string());
        kv("cfl", self.cfl.to_string());
        kv("diffusion", match self.diffusion {
            DiffusionMode::Implicit => "implicit",
            DiffusionMode::Explicit => "explicit",
        }.into());
        kv("order", match self.order {
            SpatialOrder::First => "1",
            SpatialOrder::Second => "2",
        }.into());
        kv("exec", match self.exec {
            Execution::Parallel => "parallel",
            Execution::Sequential => "sequential",
        }.into());
        kv("t_end", self.t_end.to_string());
        kv("snapshots", self.snapshots.to_string());
        kv("snapshot_times", times.join(","));
        kv("perturbation", match self.perturbation {
            PerturbationKind::None => "none",
            PerturbationKind::Shift => "shift",
            PerturbationKind::Bump => "bump",
        }.into());
        kv("pert_amplitude", self.pert_amplitude.to_string());
        kv("pert_center", self.pert_center.to_string());
        kv("pert_width", self.pert_width.to_string());
        kv("pert_shift", self.pert_shift.to_string());
        kv("pert_zero_mass", self.pert_zero_mass.to_string());
        kv("xi_max", opt(self.xi_max));
        kv("n_pts", self.n_pts.to_string());
        kv("profile_tol", self.profile_tol.to_string());
        kv("k_e", opt(self.k_e));
        kv("fit_t_min", opt(self.fit_t_min));
        kv("fit_t_max", opt(self.fit_t_max));
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

/// Frozen column order of `snapshots.csv`.
///
/// `d*` columns are norms of the deviation from the shifted wave, `*_x_*` of
/// its first derivative. `v_h3`, `vt_h2`, `phi_h3` are Sobolev norms of `V`,
/// `V_t` and `Phi`; `n_sup` is the running sup of their sum. `w_*` are the
/// time-weighted monitors, `v_right` is `V` at the right boundary and
/// `interp_ratio_max` the largest `||f||_inf^2 / (2 ||f|| ||f_x||)` over the
/// three perturbation fields.
pub const SNAPSHOT_COLUMNS: [&str; 31] = [
    "t",
    "drho_linf",
    "drho_l2",
    "drho_x_linf",
    "drho_x_l2",
    "dm_linf",
    "dm_l2",
    "dm_x_linf",
    "dm_x_l2",
    "dphi_linf",
    "dphi_l2",
    "dphi_x_linf",
    "dphi_x_l2",
    "v_h3",
    "vt_h2",
    "phi_h3",
    "n_sup",
    "energy",
    "energy_ratio",
    "h_l2",
    "f_l2",
    "g_l2",
    "w_vxphi_k0",
    "w_vxphi_k1",
    "w_vxphi_k2",
    "w_vt_k0",
    "w_vt_k1",
    "w_vt_k2",
    "v_right",
    "band_violations",
    "interp_ratio_max",
];

/// Series fitted into `decay_report.csv` with their theoretical exponents.
pub const DECAY_SERIES: [(&str, f64); 12] = [
    ("drho_linf", -0.75),
    ("drho_x_linf", -1.25),
    ("dm_linf", -1.25),
    ("dm_x_linf", -1.75),
    ("dphi_linf", -0.75),
    ("dphi_x_linf", -1.25),
    ("drho_l2", -0.5),
    ("drho_x_l2", -1.0),
    ("dm_l2", -1.0),
    ("dm_x_l2", -1.5),
    ("dphi_l2", -0.5),
    ("dphi_x_l2", -1.0),
];

/// The six sup-norm decay claims, one plot file each.
pub const PLOT_SERIES: [&str; 6] = ["drho_linf", "drho_x_linf", "dm_linf", "dm_x_linf", "dphi_linf", "dphi_x_linf"];

/// Series whose maximum falls below this are reported as degenerate.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SnapshotTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    s.parse::<f64>()
                        .map_err(|_| parse_err(i + 2, j + 1, format!("`{s}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(SnapshotTable { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(|v| fmt17(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// One row of `decay_report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub series: String,
    pub exponent: f64,
    pub r2: f64,
    pub theory_exponent: f64,
    pub status: String,
}

/// Fits every [`DECAY_SERIES`] column over `window`.
pub fn decay_report(table: &SnapshotTable, window: (f64, f64)) -> Result<Vec<DecayRow>> {
    let t = table.column("t").ok_or_else(|| Error::MissingSeries("t".into()))?;
    let mut out = Vec::new();
    for (name, theory) in DECAY_SERIES {
        let vals = table.column(name).ok_or_else(|| Error::MissingSeries(name.into()))?;
        let peak = vals.iter().cloned().fold(0.0, f64::max);
        let (exponent, r2, status) = if !(peak >= DEGENERATE_FLOOR) {
            (f64::NAN, f64::NAN, Error::DegenerateFit(format!("{name} vanishes")).to_string())
        } else {
            match fit_decay(&t, &vals, window) {
                Ok(f) => (f.exponent, f.r2, "ok".to_string()),
                Err(e) => (f64::NAN, f64::NAN, e.to_string()),
            }
        };
        out.push(DecayRow { series: name.into(), exponent, r2, theory_exponent: theory, status });
    }
    Ok(out)
}

pub fn write_decay_report(rows: &[DecayRow], path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(["series", "exponent", "r2", "theory_exponent", "status"])?;
    for r in rows {
        wr.write_record([r.series.clone(), fmt17(r.exponent), fmt17(r.r2), fmt17(r.theory_exponent), r.status.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `plot/<series>.dat` for each of [`PLOT_SERIES`] plus `plot/decay.gp`.
/// Non-positive samples are skipped; a series left empty is an error.
pub fn emit_plotdata(table: &SnapshotTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let t = table.column("t").ok_or_else(|| Error::MissingSeries("t".into()))?;
    let mut data = Vec::new();
    for name in PLOT_SERIES {
        let vals = table.column(name).ok_or_else(|| Error::MissingSeries(name.into()))?;
        let pts: Vec<(f64, f64)> = t
            .iter()
            .zip(&vals)
            .filter(|(_, &v)| v > 0.0 && v.is_finite())
            .map(|(&t, &v)| ((1.0 + t).log10(), v.log10()))
            .collect();
        if pts.is_empty() {
            return Err(Error::MissingSeries(name.into()));
        }
        data.push((name, pts));
    }
    let dir = out_dir.join("plot");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut gp = String::from("set xlabel 'log10(1+t)'\nset ylabel 'log10 norm'\nset key left bottom\nplot \\\n");
    for (i, (name, pts)) in data.iter().enumerate() {
        let mut body = String::new();
        for (x, y) in pts {
            let _ = writeln!(body, "{} {}", fmt17(*x), fmt17(*y));
        }
        let path = dir.join(format!("{name}.dat"));
        fs::write(&path, body)?;
        files.push(path);
        let sep = if i + 1 < data.len() { ", \\\n" } else { "\n" };
        let _ = write!(gp, "  '{name}.dat' using 1:2 with linespoints title '{name}'{sep}");
    }
    let gp_path = dir.join("decay.gp");
    fs::write(&gp_path, gp)?;
    files.push(gp_path);
    Ok(files)
}

/// Run metadata; written before the run and finalized after it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub wall_seconds: Option<f64>,
    pub x0: Option<f64>,
    pub snapshot_rows: usize,
    pub files: Vec<String>,
    pub status: String,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version=chemowave {}", self.version);
        let _ = writeln!(s, "started_unix={}", self.started_unix);
        if let Some(f) = self.finished_unix {
            let _ = writeln!(s, "finished_unix={f}");
        }
        if let Some(w) = self.wall_seconds {
            let _ = writeln!(s, "wall_seconds={w:.3}");
        }
        if let Some(x0) = self.x0 {
            let _ = writeln!(s, "x0={}", fmt17(x0));
        }
        let _ = writeln!(s, "snapshot_rows={}", self.snapshot_rows);
        let _ = writeln!(s, "files={}", self.files.join(","));
        let _ = writeln!(s, "status={}", self.status);
        let _ = writeln!(s, "exit_code={}", self.exit_code);
        s.push_str("[config]\n");
        s.push_str(&self.config.to_text());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.txt"), self.to_text())?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Admissibility check, profile, shift and solver for a config.
pub struct Setup {
    pub check: StructuralCheck,
    pub wave: WaveField,
    pub grid: Grid,
    pub solver: Solver,
    pub state0: State,
    pub x0: f64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let p = cfg.params;
    let pm = cfg.pressure();
    let check = check_admissible(&p, &pm)?;
    let xi_max = cfg.xi_max.unwrap_or_else(|| default_xi_max(&p, &pm));
    let wave = WaveField::new(build_profile(&p, &pm, xi_max, cfg.n_pts, cfg.profile_tol)?);
    let grid = Grid::new(cfg.x_min, cfg.x_max, cfg.nx)?;
    let state0 = init_state(&grid, &wave, cfg.init_perturbation())?;
    let x0 = if p.rho_minus != p.rho_plus { compute_shift(&state0.rho, &grid, &wave)? } else { 0.0 };
    let solver = Solver::new(grid, p, pm, cfg.scheme())?;
    Ok(Setup { check, wave, grid, solver, state0, x0 })
}

struct RowParts {
    row: Vec<f64>,
    sample: MonitorSample,
    n_value: f64,
}

fn snapshot_parts(state: &State, setup: &Setup, k_e: f64) -> Result<RowParts> {
    let pert = build_perturbation(state, &setup.grid, &setup.wave, setup.x0);
    let dx = pert.dx;
    let nv = sobolev_norms(&pert.v_x, dx, 2);
    let nm = sobolev_norms(&pert.m, dx, 2);
    let np = sobolev_norms(&pert.phi, dx, 3);
    let v_h3 = sobolev_norms(&pert.v, dx, 3).hm(3);
    let vt_h2 = sobolev_norms(&pert.v_t, dx, 2).hm(2);
    let phi_h3 = np.hm(3);
    let energy = energy_functional(&pert, &setup.wave, setup.wave.pressure(), k_e)?;
    let res = residuals(&pert, &setup.wave);
    let interp = [&nv, &nm, &np].iter().map(|r| r.interpolation_ratio()).fold(0.0, f64::max);
    let sample = MonitorSample::from_perturbation(&pert);
    let row = vec![
        state.t,
        nv.linf[0],
        nv.l2[0],
        nv.linf[1],
        nv.l2[1],
        nm.linf[0],
        nm.l2[0],
        nm.linf[1],
        nm.l2[1],
        np.linf[0],
        np.l2[0],
        np.linf[1],
        np.l2[1],
        v_h3,
        vt_h2,
        phi_h3,
        f64::NAN, // n_sup, filled after all rows
        energy.e_t,
        energy.ratio.unwrap_or(f64::NAN),
        res.h_l2,
        res.f_l2,
        res.g_l2,
        f64::NAN,
        f64::NAN,
        f64::NAN,
        f64::NAN,
        f64::NAN,
        f64::NAN,
        *pert.v.last().unwrap(),
        res.band_violations as f64,
        interp,
    ];
    Ok(RowParts { row, sample, n_value: v_h3 + vt_h2 + phi_h3 })
}

/// Builds the snapshot table from states at increasing times.
pub fn snapshot_table(states: &[State], setup: &Setup, k_e: f64, exec: Execution) -> Result<SnapshotTable> {
    let parts: Vec<RowParts> = exec::map_collect(exec, states, |s| snapshot_parts(s, setup, k_e))
        .into_iter()
        .collect::<Result<_>>()?;
    let samples: Vec<MonitorSample> = parts.iter().map(|p| p.sample.clone()).collect();
    let t_last = states.last().map_or(0.0, |s| s.t);
    let monitors = weighted_monitor(&samples, 0.5 * t_last);
    let col = |name: &str| SNAPSHOT_COLUMNS.iter().position(|c| *c == name).unwrap();
    let n_col = col("n_sup");
    let w_col = col("w_vxphi_k0");
    let mut sup = 0.0f64;
    let rows = parts
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            sup = sup.max(p.n_value);
            p.row[n_col] = sup;
            for (j, m) in monitors.iter().enumerate() {
                p.row[w_col + j] = m.values[i];
            }
            p.row
        })
        .collect();
    Ok(SnapshotTable { header: SNAPSHOT_COLUMNS.iter().map(|s| s.to_string()).collect(), rows })
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub table: SnapshotTable,
    pub decay: Vec<DecayRow>,
}

/// Runs a full experiment into `cfg.out_dir`. Failures are recorded in the
/// manifest before being returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;
    let clock = Instant::now();
    let mut manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: unix_now(),
        finished_unix: None,
        wall_seconds: None,
        x0: None,
        snapshot_rows: 0,
        files: Vec::new(),
        status: "running".into(),
        exit_code: -1,
    };
    manifest.write(&dir)?;
    let result = execute(cfg, &dir, &mut manifest);
    manifest.finished_unix = Some(unix_now());
    manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
    match result {
        Ok((table, decay)) => {
            manifest.status = "ok".into();
            manifest.exit_code = 0;
            manifest.write(&dir)?;
            Ok(RunOutput { manifest, table, decay })
        }
        Err(e) => {
            manifest.status = format!("error: {e}");
            manifest.exit_code = e.exit_code();
            manifest.write(&dir)?;
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, dir: &Path, manifest: &mut RunManifest) -> Result<(SnapshotTable, Vec<DecayRow>)> {
    let setup = prepare(cfg)?;
    manifest.x0 = Some(setup.x0);
    setup.wave.profile().write_csv(fs::File::create(dir.join("profile.csv"))?)?;
    manifest.files.push("profile.csv".into());

    let mut states = vec![setup.state0.clone()];
    let mut sink = |s: &State| -> Result<()> {
        states.push(s.clone());
        Ok(())
    };
    setup.solver.run(&setup.state0, cfg.t_end, &mut sink)?;
    let table = snapshot_table(&states, &setup, cfg.energy_weight(), cfg.exec)?;
    table.write(&dir.join("snapshots.csv"))?;
    manifest.snapshot_rows = table.rows.len();
    manifest.files.push("snapshots.csv".into());

    let decay = decay_report(&table, cfg.fit_window())?;
    write_decay_report(&decay, &dir.join("decay_report.csv"))?;
    manifest.files.push("decay_report.csv".into());

    match emit_plotdata(&table, dir) {
        Ok(files) => {
            for f in files {
                manifest.files.push(f.strip_prefix(dir).unwrap_or(&f).display().to_string());
            }
        }
        Err(Error::MissingSeries(_)) => {}
        Err(e) => return Err(e),
    }
    Ok((table, decay))
}

/// Admissibility summary plus randomized quadratic-form probes.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub c1: f64,
    pub c2: f64,
    pub band: (f64, f64),
    pub min_dq: f64,
    pub probes: usize,
    pub violations: usize,
}

impl CheckReport {
    pub fn to_text(&self) -> String {
        format!(
            "status=admissible\nband={},{}\nmin_dq={}\nc1={}\nc2={}\nsandwich_probes={}\nsandwich_violations={}\n",
            fmt17(self.band.0),
            fmt17(self.band.1),
            fmt17(self.min_dq),
            fmt17(self.c1),
            fmt17(self.c2),
            self.probes,
            self.violations
        )
    }
}

/// Probes `C1 |x|^2 <= x^T A(rho) x <= C2 |x|^2` at `n` random `(rho, x1, x2)`
/// with `rho` uniform on the band and `x` uniform on `[-1, 1]^2`.
pub fn sandwich_probe(check: &StructuralCheck, n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = check.band;
    (0..n)
        .filter(|_| {
            let rho = rng.gen_range(lo..=hi);
            let x1 = rng.gen_range(-1.0..=1.0);
            let x2 = rng.gen_range(-1.0..=1.0);
            !sandwich_holds(check, rho, x1, x2)
        })
        .count()
}

pub const CHECK_PROBES: usize = 10_000;

pub fn run_check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let check = check_admissible(&cfg.params, &cfg.pressure())?;
    let violations = sandwich_probe(&check, CHECK_PROBES, cfg.seed);
    Ok(CheckReport {
        c1: check.c1,
        c2: check.c2,
        band: check.band,
        min_dq: check.min_dq,
        probes: CHECK_PROBES,
        violations,
    })
}
