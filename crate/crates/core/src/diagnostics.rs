//! Perturbation analysis around the shifted diffusion wave.
//!
//! Given a solver state, the perturbation is measured in antiderivative form
//!
//! ```text
//! V(x,t) = int_{-inf}^x (rho - rho_bar(. + x0, t)),   M = m - m_bar(. + x0),   Phi = phi - phi_bar(. + x0)
//! ```
//!
//! with the shift `x0` fixed by requiring the initial density perturbation to
//! carry no mass. This module provides the shift, the perturbation fields,
//! discrete Sobolev norms, the weighted energy functional, the residual
//! forcing terms, time-weighted monitors and log-log decay fits.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{PressureModel, StructuralCheck};
use crate::solver::{Grid, State};
use crate::wave::{linear_fit, norm_on_wave_support, NormIndex, WaveField};

/// Absolute tolerance on the residual mass after computing the shift.
pub const SHIFT_MASS_TOL: f64 = 1e-6;

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (f[0] + f[n - 1]))
}

/// `x0 = (1/(rho_+ - rho_-)) int (rho0 - rho_bar(., 0))`.
pub fn compute_shift(rho0: &[f64], grid: &Grid, wave: &WaveField) -> Result<f64> {
    let p = wave.params();
    if p.rho_plus == p.rho_minus {
        return Err(Error::DegenerateWave);
    }
    let dx = grid.dx();
    let diff: Vec<f64> = (0..grid.nx).map(|i| rho0[i] - wave.rho_bar(grid.x(i), 0.0)).collect();
    let x0 = trapezoid(&diff, dx) / (p.rho_plus - p.rho_minus);
    let resid: Vec<f64> = (0..grid.nx)
        .map(|i| rho0[i] - wave.rho_bar(grid.x(i) + x0, 0.0))
        .collect();
    let residual = trapezoid(&resid, dx).abs();
    if residual > SHIFT_MASS_TOL {
        return Err(Error::ResidualMassTooLarge { residual, tol: SHIFT_MASS_TOL });
    }
    Ok(x0)
}

/// Perturbation fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub t: f64,
    pub x0: f64,
    /// Antiderivative of the density perturbation, `V[0] = 0`.
    pub v: Vec<f64>,
    /// `rho - rho_bar(. + x0, t)`, i.e. `V_x`.
    pub v_x: Vec<f64>,
    /// Momentum perturbation `M`.
    pub m: Vec<f64>,
    /// Chemoattractant perturbation `Phi`.
    pub phi: Vec<f64>,
    /// `V_t = -M`.
    pub v_t: Vec<f64>,
    pub dx: f64,
    /// Cell centres shifted by `x0` (the wave is evaluated there).
    pub xs: Vec<f64>,
}

pub fn build_perturbation(state: &State, grid: &Grid, wave: &WaveField, x0: f64) -> Perturbation {
    let n = grid.nx;
    let t = state.t;
    let dx = grid.dx();
    let xs: Vec<f64> = (0..n).map(|i| grid.x(i) + x0).collect();
    let mut v_x = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut phi = vec![0.0; n];
    for i in 0..n {
        let w = wave.eval_unchecked(xs[i], t, 0, 0);
        v_x[i] = state.rho[i] - w.rho;
        m[i] = state.m[i] - w.m;
        phi[i] = state.phi[i] - w.phi;
    }
    let mut v = vec![0.0; n];
    for i in 1..n {
        v[i] = v[i - 1] + 0.5 * dx * (v_x[i - 1] + v_x[i]);
    }
    let v_t = m.iter().map(|x| -x).collect();
    Perturbation { t, x0, v, v_x, m, phi, v_t, dx, xs }
}

/// `k`-th derivative (1..=3) by centred differences, one-sided second order
/// at the ends. Needs at least five samples.
pub fn derivative(f: &[f64], dx: f64, order: usize) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "derivative needs at least 5 samples");
    let mut d = vec![0.0; n];
    match order {
        0 => d.copy_from_slice(f),
        1 => {
            let c = 1.0 / (2.0 * dx);
            d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * c;
            d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * c;
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - f[i - 1]) * c;
            }
        }
        2 => {
            let c = 1.0 / (dx * dx);
            d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) * c;
            d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) * c;
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) * c;
            }
        }
        3 => {
            let c = 1.0 / (2.0 * dx * dx * dx);
            let fwd = |i: usize| (-5.0 * f[i] + 18.0 * f[i + 1] - 24.0 * f[i + 2] + 14.0 * f[i + 3] - 3.0 * f[i + 4]) * c;
            let bwd = |i: usize| (5.0 * f[i] - 18.0 * f[i - 1] + 24.0 * f[i - 2] - 14.0 * f[i - 3] + 3.0 * f[i - 4]) * c;
            d[0] = fwd(0);
            d[1] = fwd(1);
            d[n - 2] = bwd(n - 2);
            d[n - 1] = bwd(n - 1);
            for i in 2..n - 2 {
                d[i] = (f[i + 2] - 2.0 * f[i + 1] + 2.0 * f[i - 1] - f[i - 2]) * c;
            }
        }
        _ => panic!("derivative order {order} not supported"),
    }
    d
}

fn l2(f: &[f64], dx: f64) -> f64 {
    let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
    trapezoid(&sq, dx).sqrt()
}

fn linf(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Discrete `L^2` norms of derivatives up to `k_max` and `L^inf` norms of the
/// field and its first derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    /// `||d^k f||_{L^2}`, `k = 0..=k_max`.
    pub l2: Vec<f64>,
    /// `||f||_inf`, `||f_x||_inf`.
    pub linf: [f64; 2],
}

impl NormReport {
    /// `H^m` norm, `m <= k_max`.
    pub fn hm(&self, m: usize) -> f64 {
        self.l2[..=m].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Slack in `||f||_inf^2 <= 2 ||f|| ||f_x||` relative to the right side.
    pub fn interpolation_ratio(&self) -> f64 {
        let rhs = 2.0 * self.l2[0] * self.l2.get(1).copied().unwrap_or(f64::NAN);
        if rhs == 0.0 {
            if self.linf[0] == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.linf[0] * self.linf[0] / rhs
        }
    }
}

pub fn sobolev_norms(field: &[f64], dx: f64, k_max: usize) -> NormReport {
    assert!(k_max <= 3, "k_max must be <= 3");
    let mut l2s = vec![l2(field, dx)];
    let d1 = derivative(field, dx, 1);
    for k in 1..=k_max {
        if k == 1 {
            l2s.push(l2(&d1, dx));
        } else {
            l2s.push(l2(&derivative(field, dx, k), dx));
        }
    }
    NormReport {
        l2: l2s,
        linf: [linf(field), linf(&d1)],
    }
}

/// Default energy weight `4/alpha + 1`.
pub fn default_energy_weight(alpha: f64) -> f64 {
    4.0 / alpha + 1.0
}

/// The weighted energy functional and its named parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub e_t: f64,
    /// `sum_k (alpha/2)||d^k V||^2 + int d^k V_t d^k V + (K/2)||d^k V_t||^2`.
    pub quadratic_part: f64,
    /// Wave-weighted forms in `(d^k V_x, d^k Phi)` and `d^k Phi_x`.
    pub weighted_part: f64,
    /// `(mu/b) int rho_bar_x Phi V` plus the two nonlinear corrections.
    pub cross_part: f64,
    /// `||V||_3^2 + ||V_t||_2^2 + ||Phi||_3^2`.
    pub equivalent_norm: f64,
    /// `e_t / equivalent_norm`, `None` for a zero perturbation.
    pub ratio: Option<f64>,
}

impl EnergyReport {
    /// Equivalence constant `max(ratio, 1/ratio)`.
    pub fn c_eq(&self) -> Option<f64> {
        self.ratio.map(|r| r.max(1.0 / r))
    }
}

/// Assembles the energy functional with weight `k_e` (requires `alpha k_e > 1`).
pub fn energy_functional(pert: &Perturbation, wave: &WaveField, pm: &PressureModel, k_e: f64) -> Result<EnergyReport> {
    let p = wave.params();
    let ak = p.alpha * k_e;
    if !(ak > 1.0) {
        return Err(Error::WeightTooSmall(ak));
    }
    let dx = pert.dx;
    let n = pert.v.len();
    let t = pert.t;
    let rb: Vec<f64> = pert.xs.iter().map(|&x| wave.rho_bar(x, t)).collect();
    let rb_x: Vec<f64> = pert.xs.iter().map(|&x| wave.eval_unchecked(x, t, 1, 0).rho).collect();
    // V_t + q(rho_bar)_x / alpha = -(M + m_bar) and V_x + rho_bar = rho
    let mb: Vec<f64> = pert.xs.iter().map(|&x| wave.m_bar(x, t)).collect();

    let dv: Vec<Vec<f64>> = (0..=3).map(|k| if k == 0 { pert.v.clone() } else { derivative(&pert.v_x, dx, k - 1) }).collect();
    let dvt: Vec<Vec<f64>> = (0..=2).map(|k| derivative(&pert.v_t, dx, k)).collect();
    let dphi: Vec<Vec<f64>> = (0..=3).map(|k| derivative(&pert.phi, dx, k)).collect();

    let int = |f: &dyn Fn(usize) -> f64| -> f64 {
        let vals: Vec<f64> = (0..n).map(f).collect();
        trapezoid(&vals, dx)
    };
    let (alpha, mu, a, b, dd) = (p.alpha, p.mu, p.a, p.b, p.dd);

    let mut quadratic = 0.0;
    let mut weighted = 0.0;
    let mut cross = 0.0;
    for k in 0..=2 {
        let (v, vt, vx, ph, phx) = (&dv[k], &dvt[k], &dv[k + 1], &dphi[k], &dphi[k + 1]);
        quadratic += int(&|i| 0.5 * alpha * v[i] * v[i] + vt[i] * v[i] + 0.5 * k_e * vt[i] * vt[i]);
        weighted += 0.5 * k_e
            * int(&|i| pm.dp(rb[i]) * vx[i] * vx[i] - 2.0 * mu * rb[i] * ph[i] * vx[i] + mu * b / a * rb[i] * ph[i] * ph[i]);
        weighted += int(&|i| mu / (2.0 * a) * rb[i] * ph[i] * ph[i] + mu * dd * k_e / (2.0 * a) * rb[i] * phx[i] * phx[i]);
        cross -= 0.5 * k_e
            * int(&|i| {
                let rho = pert.v_x[i] + rb[i];
                let mom = pert.m[i] + mb[i];
                mom * mom / (rho * rho) * vx[i] * vx[i]
            });
        cross += 0.5 * k_e * int(&|i| (pm.dp(pert.v_x[i] + rb[i]) - pm.dp(rb[i])) * vx[i] * vx[i]);
    }
    cross += mu / b * int(&|i| rb_x[i] * pert.phi[i] * pert.v[i]);

    let sq = |f: &[f64]| -> f64 { l2(f, dx).powi(2) };
    let equivalent = dv.iter().map(|f| sq(f)).sum::<f64>() + dvt.iter().map(|f| sq(f)).sum::<f64>() + dphi.iter().map(|f| sq(f)).sum::<f64>();
    let e_t = quadratic + weighted + cross;
    Ok(EnergyReport {
        e_t,
        quadratic_part: quadratic,
        weighted_part: weighted,
        cross_part: cross,
        equivalent_norm: equivalent,
        ratio: if equivalent > 0.0 { Some(e_t / equivalent) } else { None },
    })
}

/// Forcing terms `h`, `f`, `g` of the perturbation equations.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h_l2: f64,
    pub f_l2: f64,
    pub g_l2: f64,
    /// Cells where `V_x + rho_bar` leaves `[min(rho)/2, 3 max(rho)/2]`.
    pub band_violations: usize,
}

pub fn residuals(pert: &Perturbation, wave: &WaveField) -> ResidualReport {
    let p = wave.params();
    let pm = wave.pressure();
    let t = pert.t;
    let lo = 0.5 * p.rho_minus.min(p.rho_plus);
    let hi = 1.5 * p.rho_minus.max(p.rho_plus);
    let n = pert.v.len();
    let (mut h, mut f, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut band_violations = 0;
    let ab = p.a / p.b;
    for i in 0..n {
        let x = pert.xs[i];
        let r0 = wave.eval_unchecked(x, t, 0, 0);
        let rx = wave.eval_unchecked(x, t, 1, 0).rho;
        let rt = wave.eval_unchecked(x, t, 0, 1).rho;
        let rxx = wave.eval_unchecked(x, t, 2, 0).rho;
        let rb = r0.rho;
        let rho = pert.v_x[i] + rb;
        if rho < lo || rho > hi {
            band_violations += 1;
        }
        let dq = pm.dq(rb);
        let flux = pert.v_t[i] + dq * rx / p.alpha;
        h[i] = -flux * flux / rho;
        f[i] = dq * rt / p.alpha - (pm.p(rho) - pm.p(rb) - pm.dp(rb) * pert.v_x[i]);
        g[i] = ab * (-rt + p.dd * rxx);
    }
    let dx = pert.dx;
    ResidualReport {
        h_l2: l2(&h, dx),
        f_l2: l2(&f, dx),
        g_l2: l2(&g, dx),
        h,
        f,
        g,
        band_violations,
    }
}

/// `||g(t)||^2` of the wave-only forcing `g = -phi_bar_t + D phi_bar_xx`,
/// computed on the similarity support of the wave.
pub fn wave_source_norm_sq(wave: &WaveField, t: f64) -> f64 {
    let p = wave.params();
    let ab = p.a / p.b;
    let dd = p.dd;
    norm_on_wave_support(wave, t, NormIndex::L2, |x| {
        let rt = wave.eval_unchecked(x, t, 0, 1).rho;
        let rxx = wave.eval_unchecked(x, t, 2, 0).rho;
        ab * (-rt + dd * rxx)
    })
    .powi(2)
}

/// Decay fit of `||g(t)||^2` over `t_grid` (theory: `(1+t)^{-3/2}`).
pub fn source_decay(wave: &WaveField, t_grid: &[f64], exec: Execution) -> Result<(Vec<f64>, DecayFit)> {
    let vals = exec::map_collect(exec, t_grid, |&t| wave_source_norm_sq(wave, t));
    if vals.iter().any(|&v| !(v > 1e-300)) {
        return Err(Error::DegenerateFit("wave source vanishes".into()));
    }
    let lo = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fit = fit_decay(t_grid, &vals, (lo, hi))?;
    Ok((vals, fit))
}

/// `C1 |x|^2 <= x^T A(rho) x <= C2 |x|^2` up to roundoff.
pub fn sandwich_holds(check: &StructuralCheck, rho: f64, x1: f64, x2: f64) -> bool {
    let qf = check.quadratic_form(rho, x1, x2);
    let n2 = x1 * x1 + x2 * x2;
    let slack = 1e-12 * n2 * check.c2;
    qf >= check.c1 * n2 - slack && qf <= check.c2 * n2 + slack
}

/// Number of `(rho_bar, probe)` pairs violating [`sandwich_holds`].
pub fn quadratic_form_sandwich(check: &StructuralCheck, rho_bar: &[f64], probes: &[(f64, f64)]) -> usize {
    rho_bar
        .iter()
        .map(|&r| probes.iter().filter(|&&(x1, x2)| !sandwich_holds(check, r, x1, x2)).count())
        .sum()
}

/// Least-squares power law `values ~ C (1+t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Fits `log(values)` against `log(1+t)` over samples with `t` in `window`.
///
/// The window must span a decade (`hi >= 10 lo`, or start at `t = 0`) and
/// contain at least three samples.
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    if !(hi > lo) || (lo > 0.0 && hi < 10.0 * lo * (1.0 - 1e-9)) {
        return Err(Error::WindowTooNarrow(format!("[{lo}, {hi}] spans less than a decade")));
    }
    let eps = 1e-9 * hi.abs().max(1.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        if t < lo - eps || t > hi + eps {
            continue;
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonpositiveValues(i));
        }
        xs.push((1.0 + t).ln());
        ys.push(v.ln());
    }
    if xs.len() < 3 {
        return Err(Error::WindowTooNarrow(format!("{} samples in [{lo}, {hi}]", xs.len())));
    }
    let (exponent, intercept, r2) = linear_fit(&xs, &ys);
    Ok(DecayFit { exponent, intercept, r2, n: xs.len() })
}

/// Median of pairwise slopes.
pub fn theil_sen(xs: &[f64], ys: &[f64]) -> f64 {
    let mut slopes = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[j] != xs[i] {
                slopes.push((ys[j] - ys[i]) / (xs[j] - xs[i]));
            }
        }
    }
    if slopes.is_empty() {
        return 0.0;
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = slopes.len();
    if m % 2 == 1 {
        slopes[m / 2]
    } else {
        0.5 * (slopes[m / 2 - 1] + slopes[m / 2])
    }
}

/// Norms needed by the time-weighted monitors at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSample {
    pub t: f64,
    /// `||d^k V_x||`, `k = 0..=2`.
    pub v_x: [f64; 3],
    /// `||d^k V_t||`, `k = 0..=2`.
    pub v_t: [f64; 3],
    /// `||d^k Phi||`, `k = 0..=2`.
    pub phi: [f64; 3],
}

impl MonitorSample {
    pub fn from_perturbation(pert: &Perturbation) -> Self {
        let vx = sobolev_norms(&pert.v_x, pert.dx, 2);
        let vt = sobolev_norms(&pert.v_t, pert.dx, 2);
        let ph = sobolev_norms(&pert.phi, pert.dx, 2);
        MonitorSample {
            t: pert.t,
            v_x: [vx.l2[0], vx.l2[1], vx.l2[2]],
            v_t: [vt.l2[0], vt.l2[1], vt.l2[2]],
            phi: [ph.l2[0], ph.l2[1], ph.l2[2]],
        }
    }
}

/// One time-weighted quantity `(1+t)^w * norm^2` tracked over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub name: String,
    pub weight: f64,
    pub values: Vec<f64>,
    /// Running supremum after each sample.
    pub running_sup: Vec<f64>,
    /// Weighted value never increases over the tail samples.
    pub tail_non_increasing: bool,
    /// Theil-Sen slope of `log value` against `log(1+t)` over the tail.
    pub tail_slope: f64,
}

impl Monitor {
    pub fn sup(&self) -> f64 {
        self.running_sup.last().copied().unwrap_or(0.0)
    }
}

/// Monitor names and weights, `k = 0..=2`:
/// `(1+t)^{k+1} ||d^k [V_x, Phi]||^2` and `(1+t)^{k+2} ||d^k V_t||^2`,
/// where `||[A, B]|| = ||A|| + ||B||`.
pub fn weighted_monitor(samples: &[MonitorSample], tail_from: f64) -> Vec<Monitor> {
    let mut out = Vec::new();
    for k in 0..=2 {
        let w = (k + 1) as f64;
        let vals = samples
            .iter()
            .map(|s| (1.0 + s.t).powf(w) * (s.v_x[k] + s.phi[k]).powi(2))
            .collect();
        out.push(make_monitor(format!("w_vxphi_k{k}"), w, vals, samples, tail_from));
    }
    for k in 0..=2 {
        let w = (k + 2) as f64;
        let vals = samples.iter().map(|s| (1.0 + s.t).powf(w) * s.v_t[k].powi(2)).collect();
        out.push(make_monitor(format!("w_vt_k{k}"), w, vals, samples, tail_from));
    }
    out
}

fn make_monitor(name: String, weight: f64, values: Vec<f64>, samples: &[MonitorSample], tail_from: f64) -> Monitor {
    let mut sup = 0.0f64;
    let running_sup = values
        .iter()
        .map(|&v: &f64| {
            sup = sup.max(v);
            sup
        })
        .collect();
    let mut tail: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].t >= tail_from).collect();
    if tail.len() < 3 {
        tail = (samples.len() / 2..samples.len()).collect();
    }
    let tail_non_increasing = tail.windows(2).all(|w| values[w[1]] <= values[w[0]]);
    let pos: Vec<usize> = tail.iter().cloned().filter(|&i| values[i] > 0.0).collect();
    let tail_slope = if pos.len() < 2 {
        0.0
    } else {
        let xs: Vec<f64> = pos.iter().map(|&i| (1.0 + samples[i].t).ln()).collect();
        let ys: Vec<f64> = pos.iter().map(|&i| values[i].ln()).collect();
        theil_sen(&xs, &ys)
    };
    Monitor {
        name,
        weight,
        values,
        running_sup,
        tail_non_increasing,
        tail_slope,
    }
}
