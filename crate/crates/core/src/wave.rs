//! Self-similar nonlinear diffusion wave.
//!
//! The density of the limiting porous-medium equation is
//! `rho_bar(x, t) = phi(x / sqrt(1 + t))`, where the profile solves
//!
//! ```text
//! q'(phi) phi'' + q''(phi) phi'^2 + (alpha/2) xi phi' = 0,   phi(+-inf) = rho_+-
//! ```
//!
//! Momentum and chemoattractant follow as `m_bar = -(1/alpha) q(rho_bar)_x`
//! and `phi_bar = (a/b) rho_bar`. The profile is computed once on a truncated
//! similarity interval by shooting, then evaluated with cubic Hermite
//! interpolation; higher similarity derivatives come from the ODE itself.

use std::io::Write;

use crate::diagnostics::{fit_decay, DecayFit};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{Params, PressureModel};

/// Default node count of the similarity grid.
pub const DEFAULT_N_PTS: usize = 4001;
/// Default shooting tolerance on the right endpoint.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Truncation half-width giving Gaussian tails far below double precision:
/// eight standard widths of `exp(-alpha xi^2 / (4 q'))`, never below 8.
pub fn default_xi_max(params: &Params, pm: &PressureModel) -> f64 {
    let lo = params.rho_minus.min(params.rho_plus);
    let hi = params.rho_minus.max(params.rho_plus);
    let qp_max = (0..=64)
        .map(|i| pm.dq(lo + (hi - lo) * i as f64 / 64.0))
        .fold(0.0f64, f64::max);
    8.0 * (qp_max / params.alpha).sqrt().max(1.0)
}

/// Tabulated profile on a uniform similarity grid.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub xi_max: f64,
    pub n_pts: usize,
    pub xi: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    h: f64,
    params: Params,
    pm: PressureModel,
}

struct Rhs<'a> {
    alpha: f64,
    pm: &'a PressureModel,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, xi: f64, phi: f64, psi: f64) -> Option<(f64, f64)> {
        if !(phi > 0.0) {
            return None;
        }
        let [_, q1, q2, _, _] = self.pm.q_derivatives(phi);
        if !(q1 > 0.0) {
            return None;
        }
        Some((psi, -(0.5 * self.alpha * xi * psi + q2 * psi * psi) / q1))
    }

    /// Fixed-step RK4 from `xi0` with `(phi, psi)`; returns the final state or
    /// `None` if the trajectory leaves the admissible region.
    fn integrate(&self, xi0: f64, h: f64, steps: usize, y0: (f64, f64), mut out: Option<(&mut [f64], &mut [f64])>) -> Option<(f64, f64)> {
        let (mut phi, mut psi) = y0;
        if let Some((p, d)) = out.as_mut() {
            p[0] = phi;
            d[0] = psi;
        }
        for i in 0..steps {
            let xi = xi0 + h * i as f64;
            let k1 = self.eval(xi, phi, psi)?;
            let k2 = self.eval(xi + 0.5 * h, phi + 0.5 * h * k1.0, psi + 0.5 * h * k1.1)?;
            let k3 = self.eval(xi + 0.5 * h, phi + 0.5 * h * k2.0, psi + 0.5 * h * k2.1)?;
            let k4 = self.eval(xi + h, phi + h * k3.0, psi + h * k3.1)?;
            phi += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            psi += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            if !(phi.is_finite() && psi.is_finite()) {
                return None;
            }
            if let Some((p, d)) = out.as_mut() {
                p[i + 1] = phi;
                d[i + 1] = psi;
            }
        }
        Some((phi, psi))
    }
}

/// Builds the profile by shooting on the initial slope.
///
/// Integrates `(phi, phi')` from `-xi_max` with `phi = rho_-` and bisects on
/// `phi'(-xi_max)` until `phi(xi_max)` matches `rho_+` within `tol`. A
/// decreasing wave is solved with the endpoints swapped and reflected, using
/// the invariance of the profile equation under `xi -> -xi`.
pub fn build_profile(params: &Params, pm: &PressureModel, xi_max: f64, n_pts: usize, tol: f64) -> Result<WaveProfile> {
    params.validate()?;
    if !(xi_max > 0.0 && xi_max.is_finite()) {
        return Err(Error::InvalidParams(format!("xi_max must be > 0, got {xi_max}")));
    }
    if n_pts < 201 {
        return Err(Error::InvalidParams(format!("n_pts must be >= 201, got {n_pts}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tol must be > 0, got {tol}")));
    }
    let h = 2.0 * xi_max / (n_pts - 1) as f64;
    let xi: Vec<f64> = (0..n_pts).map(|i| -xi_max + h * i as f64).collect();
    let (lo, hi) = (params.rho_minus.min(params.rho_plus), params.rho_minus.max(params.rho_plus));

    for i in 0..=1000 {
        let rho = lo + (hi - lo) * i as f64 / 1000.0;
        let dq = pm.dq(rho);
        if !(dq > 0.0) {
            return Err(Error::AdmissibilityViolation { rho, dq });
        }
    }

    let mut phi = vec![lo; n_pts];
    let mut dphi = vec![0.0; n_pts];
    if hi > lo {
        let rhs = Rhs { alpha: params.alpha, pm };
        let steps = n_pts - 1;
        let miss = |s: f64| -> f64 {
            match rhs.integrate(-xi_max, h, steps, (lo, s), None) {
                Some((end, _)) => end - hi,
                None => f64::INFINITY,
            }
        };

        // bracket: grow the slope by decades until the right end overshoots
        let mut s_lo = 0.0;
        let mut s_hi = 1e-300 * (hi - lo);
        let mut f_hi = miss(s_hi);
        let mut tries = 0;
        while f_hi < 0.0 {
            s_lo = s_hi;
            s_hi *= 10.0;
            f_hi = miss(s_hi);
            tries += 1;
            if tries > 640 || !s_hi.is_finite() {
                return Err(Error::ShootingFailed(format!(
                    "no slope reaches rho = {hi} at xi = {xi_max}; widen xi_max or check admissibility"
                )));
            }
        }

        let mut best = (f_hi.abs(), s_hi);
        for _ in 0..400 {
            let mid = 0.5 * (s_lo + s_hi);
            if mid <= s_lo || mid >= s_hi {
                break;
            }
            let f = miss(mid);
            if f.abs() < best.0 {
                best = (f.abs(), mid);
            }
            if f.abs() <= 0.01 * tol {
                break;
            }
            if f < 0.0 {
                s_lo = mid;
            } else {
                s_hi = mid;
            }
        }
        if !(best.0 <= tol) {
            return Err(Error::ToleranceNotMet { achieved: best.0, tol });
        }
        rhs.integrate(-xi_max, h, steps, (lo, best.1), Some((&mut phi, &mut dphi)))
            .ok_or_else(|| Error::ShootingFailed("accepted slope left the admissible region".into()))?;
        // the right end misses rho_+ by at most tol
        phi.iter_mut().for_each(|v| *v = v.clamp(lo, hi));

        if params.rho_minus > params.rho_plus {
            phi.reverse();
            dphi.reverse();
            dphi.iter_mut().for_each(|d| *d = -*d);
        }
    }

    let d2phi = xi
        .iter()
        .zip(phi.iter().zip(&dphi))
        .map(|(&x, (&p, &d))| second_derivative(params.alpha, pm, x, p, d))
        .collect();

    let wp = WaveProfile {
        xi_max,
        n_pts,
        xi,
        phi,
        dphi,
        d2phi,
        h,
        params: *params,
        pm: pm.clone(),
    };
    let bound = tol * wp.max_dq().max(1.0);
    let res = wp.ode_residual();
    if !(res <= bound) {
        return Err(Error::ToleranceNotMet { achieved: res, tol: bound });
    }
    Ok(wp)
}

#[inline]
fn second_derivative(alpha: f64, pm: &PressureModel, xi: f64, phi: f64, dphi: f64) -> f64 {
    let [_, q1, q2, _, _] = pm.q_derivatives(phi);
    -(0.5 * alpha * xi * dphi + q2 * dphi * dphi) / q1
}

/// Result of fitting `log|phi - rho_+| ~ A - c xi^2` on the right tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub c_fit: f64,
    pub r2: f64,
    pub ok: bool,
}

/// Gaussian tail fit of `|phi(xi) - rho_plus|` against `-xi^2` for `xi` in `window`.
pub fn tail_fit(xi: &[f64], phi: &[f64], rho_plus: f64, window: (f64, f64)) -> Result<TailFit> {
    let floor = 64.0 * f64::EPSILON * rho_plus.abs().max(1.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&x, &p) in xi.iter().zip(phi) {
        if x < window.0 || x > window.1 {
            continue;
        }
        let dev = (p - rho_plus).abs();
        if !(dev > floor) {
            return Err(Error::InsufficientTail);
        }
        xs.push(-x * x);
        ys.push(dev.ln());
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientTail);
    }
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok(TailFit {
        c_fit: slope,
        r2,
        ok: slope > 0.0 && r2 > 0.99,
    })
}

/// Least squares `y = slope x + intercept`; returns `(slope, intercept, r2)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

impl WaveProfile {
    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn pressure(&self) -> &PressureModel {
        &self.pm
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    fn max_dq(&self) -> f64 {
        self.phi.iter().map(|&p| self.pm.dq(p)).fold(0.0, f64::max)
    }

    /// Max pointwise residual of the profile equation with the tabulated
    /// `(phi, phi', phi'')` at interior nodes.
    pub fn ode_residual(&self) -> f64 {
        let a = self.params.alpha;
        (1..self.n_pts - 1)
            .map(|i| {
                let [_, q1, q2, _, _] = self.pm.q_derivatives(self.phi[i]);
                let d = self.dphi[i];
                (q1 * self.d2phi[i] + q2 * d * d + 0.5 * a * self.xi[i] * d).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Residual of the profile equation with `phi''` replaced by a fourth-order
    /// central difference of the tabulated `phi'`. Independent of the ODE
    /// evaluation used to fill `d2phi`.
    pub fn collocation_residual(&self) -> f64 {
        let a = self.params.alpha;
        let h = self.h;
        let d = &self.dphi;
        (2..self.n_pts - 2)
            .map(|i| {
                let dd = (-d[i + 2] + 8.0 * d[i + 1] - 8.0 * d[i - 1] + d[i - 2]) / (12.0 * h);
                let [_, q1, q2, _, _] = self.pm.q_derivatives(self.phi[i]);
                (q1 * dd + q2 * d[i] * d[i] + 0.5 * a * self.xi[i] * d[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `true` if the profile is strictly monotone in the direction of `rho_+ - rho_-`.
    pub fn is_strictly_monotone(&self) -> bool {
        let sign = (self.params.rho_plus - self.params.rho_minus).signum();
        if sign == 0.0 {
            return self.phi.windows(2).all(|w| w[0] == w[1]);
        }
        self.phi.windows(2).all(|w| (w[1] - w[0]) * sign > 0.0)
    }

    /// Gaussian tail fit on `xi in [xi_max/2, 0.9 xi_max]`.
    pub fn tail_check(&self) -> Result<TailFit> {
        if self.xi_max < 6.0 {
            return Err(Error::InvalidParams(format!(
                "tail check needs xi_max >= 6, got {}",
                self.xi_max
            )));
        }
        tail_fit(
            &self.xi,
            &self.phi,
            self.params.rho_plus,
            (0.5 * self.xi_max, 0.9 * self.xi_max),
        )
    }

    /// Similarity derivatives `[phi, phi', phi'', phi''', phi'''']` at `xi`.
    /// Outside the table the far-field constant is returned.
    pub fn jet(&self, xi: f64) -> [f64; 5] {
        let n = self.n_pts;
        if xi <= -self.xi_max {
            return [self.phi[0], 0.0, 0.0, 0.0, 0.0];
        }
        if xi >= self.xi_max {
            return [self.phi[n - 1], 0.0, 0.0, 0.0, 0.0];
        }
        let u = (xi + self.xi_max) / self.h;
        let i = (u.floor() as usize).min(n - 2);
        let s = u - i as f64;
        let h = self.h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let p = h00 * self.phi[i] + h10 * h * self.dphi[i] + h01 * self.phi[i + 1] + h11 * h * self.dphi[i + 1];
        let d1 = h00 * self.dphi[i] + h10 * h * self.d2phi[i] + h01 * self.dphi[i + 1] + h11 * h * self.d2phi[i + 1];
        self.ode_jet(xi, p, d1)
    }

    /// Completes `(phi, phi')` to the full jet by differentiating the profile
    /// equation.
    fn ode_jet(&self, xi: f64, p: f64, d1: f64) -> [f64; 5] {
        let a = self.params.alpha;
        let [_, q, q1, q2, q3] = self.pm.q_derivatives(p);
        let d2 = -(0.5 * a * xi * d1 + q1 * d1 * d1) / q;
        let d3 = -(3.0 * q1 * d1 * d2 + q2 * d1 * d1 * d1 + 0.5 * a * (d1 + xi * d2)) / q;
        let d4 = -(4.0 * q1 * d1 * d3
            + 6.0 * q2 * d1 * d1 * d2
            + 3.0 * q1 * d2 * d2
            + q3 * d1.powi(4)
            + 0.5 * a * (2.0 * d2 + xi * d3))
            / q;
        [p, d1, d2, d3, d4]
    }

    /// Writes `xi,phi,dphi,d2phi` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["xi", "phi", "dphi", "d2phi"])?;
        for i in 0..self.n_pts {
            wr.write_record([
                fmt17(self.xi[i]),
                fmt17(self.phi[i]),
                fmt17(self.dphi[i]),
                fmt17(self.d2phi[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Partial derivatives of the wave triple at one `(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePartials {
    pub rho: f64,
    pub m: f64,
    pub phi: f64,
}

/// Evaluator of `(rho_bar, m_bar, phi_bar)` and their partials over `(x, t)`.
#[derive(Debug, Clone)]
pub struct WaveField {
    profile: WaveProfile,
}

/// Highest supported `x`-order.
pub const MAX_X_ORDER: usize = 3;
/// Highest supported `t`-order.
pub const MAX_T_ORDER: usize = 1;

impl WaveField {
    pub fn new(profile: WaveProfile) -> Self {
        WaveField { profile }
    }

    pub fn profile(&self) -> &WaveProfile {
        &self.profile
    }

    pub fn params(&self) -> &Params {
        &self.profile.params
    }

    pub fn pressure(&self) -> &PressureModel {
        &self.profile.pm
    }

    /// `d^k/dxi^k` of `mu(xi) = -(1/alpha) q'(phi) phi'`, for `k <= 3`.
    fn momentum_jet(&self, jet: &[f64; 5]) -> [f64; 4] {
        let inv = -1.0 / self.profile.params.alpha;
        let [p, d1, d2, d3, d4] = *jet;
        let [_, q, q1, q2, q3] = self.profile.pm.q_derivatives(p);
        [
            inv * q * d1,
            inv * (q1 * d1 * d1 + q * d2),
            inv * (q2 * d1.powi(3) + 3.0 * q1 * d1 * d2 + q * d3),
            inv * (q3 * d1.powi(4) + 6.0 * q2 * d1 * d1 * d2 + 3.0 * q1 * d2 * d2 + 4.0 * q1 * d1 * d3 + q * d4),
        ]
    }

    /// `d_t^l d_x^k` of `(rho_bar, m_bar, phi_bar)` at `(x, t)`.
    pub fn eval(&self, x: f64, t: f64, k: usize, l: usize) -> Result<WavePartials> {
        if k > MAX_X_ORDER || l > MAX_T_ORDER || k + l > 3 {
            return Err(Error::OrderUnsupported { k, l });
        }
        if !(t >= 0.0) {
            return Err(Error::InvalidParams(format!("t must be >= 0, got {t}")));
        }
        Ok(self.eval_unchecked(x, t, k, l))
    }

    pub(crate) fn eval_unchecked(&self, x: f64, t: f64, k: usize, l: usize) -> WavePartials {
        let s = (1.0 + t).sqrt();
        let xi = x / s;
        let jet = self.profile.jet(xi);
        let mj = self.momentum_jet(&jet);
        let mjet = [mj[0], mj[1], mj[2], mj[3], 0.0];
        let rho = scaled_partial(&jet, 0, xi, s, t, k, l);
        let m = scaled_partial(&mjet, 1, xi, s, t, k, l);
        let ab = self.profile.params.a / self.profile.params.b;
        WavePartials { rho, m, phi: ab * rho }
    }

    #[inline]
    pub fn rho_bar(&self, x: f64, t: f64) -> f64 {
        self.profile.jet(x / (1.0 + t).sqrt())[0]
    }

    #[inline]
    pub fn m_bar(&self, x: f64, t: f64) -> f64 {
        self.eval_unchecked(x, t, 0, 0).m
    }

    #[inline]
    pub fn phi_bar(&self, x: f64, t: f64) -> f64 {
        self.profile.params.a / self.profile.params.b * self.rho_bar(x, t)
    }
}

/// Partial of `F(x, t) = s^{-j} G(x/s)`, `s = sqrt(1+t)`, from the jet of `G`.
#[inline]
fn scaled_partial(g: &[f64; 5], j: i32, xi: f64, s: f64, t: f64, k: usize, l: usize) -> f64 {
    let n = j + k as i32;
    let base = s.powi(-n);
    if l == 0 {
        base * g[k]
    } else {
        -base / (2.0 * (1.0 + t)) * (n as f64 * g[k] + xi * g[k + 1])
    }
}

/// Which Lebesgue norm to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormIndex {
    L2,
    LInf,
}

impl NormIndex {
    /// `1/p` for the scaling exponent.
    pub fn inverse(self) -> f64 {
        match self {
            NormIndex::L2 => 0.5,
            NormIndex::LInf => 0.0,
        }
    }
}

/// Quadrature nodes per time level used by the scans.
pub const SCAN_NODES: usize = 8001;

/// `||d_t^l d_x^k rho_bar(., t)||_{L^p}` by quadrature on `x in [-xi_max s, xi_max s]`.
pub fn wave_norm(field: &WaveField, k: usize, l: usize, p: NormIndex, t: f64) -> f64 {
    norm_on_wave_support(field, t, p, |x| field.eval_unchecked(x, t, k, l).rho)
}

pub(crate) fn norm_on_wave_support<F: Fn(f64) -> f64>(field: &WaveField, t: f64, p: NormIndex, f: F) -> f64 {
    let half = field.profile.xi_max * (1.0 + t).sqrt();
    let dx = 2.0 * half / (SCAN_NODES - 1) as f64;
    match p {
        NormIndex::LInf => (0..SCAN_NODES)
            .map(|i| f(-half + dx * i as f64).abs())
            .fold(0.0, f64::max),
        NormIndex::L2 => {
            let mut acc = 0.0;
            for i in 0..SCAN_NODES {
                let v = f(-half + dx * i as f64);
                let w = if i == 0 || i == SCAN_NODES - 1 { 0.5 } else { 1.0 };
                acc += w * v * v;
            }
            (acc * dx).sqrt()
        }
    }
}

/// Fits the decay exponent of a wave derivative norm over `t_grid`.
///
/// By self-similarity the exact exponent is `-k/2 - l + 1/(2p)`.
pub fn profile_decay_scan(field: &WaveField, k: usize, l: usize, p: NormIndex, t_grid: &[f64], exec: Execution) -> Result<DecayFit> {
    if k + l == 0 || k + l > 3 || l > MAX_T_ORDER {
        return Err(Error::OrderUnsupported { k, l });
    }
    let norms = exec::map_collect(exec, t_grid, |&t| wave_norm(field, k, l, p, t));
    if norms.iter().any(|&v| !(v > 1e-300)) {
        return Err(Error::DegenerateFit("wave derivative norm vanishes".into()));
    }
    let lo = t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    fit_decay(t_grid, &norms, (lo, hi))
}

/// Exact self-similar exponent of `||d_t^l d_x^k rho_bar||_{L^p}`.
pub fn theory_exponent(k: usize, l: usize, p: NormIndex) -> f64 {
    -(k as f64) / 2.0 - l as f64 + 0.5 * p.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_admissible;

    fn default_profile(n: usize) -> WaveProfile {
        let p = Params::default();
        let pm = PressureModel::quadratic(2.0, &p);
        check_admissible(&p, &pm).unwrap();
        build_profile(&p, &pm, 8.0, n, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn constant_wave() {
        let p = Params { rho_minus: 1.0, rho_plus: 1.0, ..Params::default() };
        let pm = PressureModel::quadratic(2.0, &p);
        let wp = build_profile(&p, &pm, 8.0, 401, DEFAULT_TOL).unwrap();
        assert!(wp.phi.iter().all(|&v| v == 1.0));
        assert!(wp.dphi.iter().all(|&v| v == 0.0));
        assert_eq!(wp.ode_residual(), 0.0);
        assert!(matches!(wp.tail_check(), Err(Error::InsufficientTail)));
        let f = WaveField::new(wp);
        for (k, l) in [(1, 0), (2, 0), (3, 0), (0, 1), (1, 1), (2, 1)] {
            let e = f.eval(0.3, 2.0, k, l).unwrap();
            assert_eq!((e.rho, e.m, e.phi), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn default_profile_invariants() {
        let wp = default_profile(DEFAULT_N_PTS);
        assert!(wp.is_strictly_monotone());
        assert!((wp.phi[0] - 0.8).abs() < 1e-8);
        assert!((wp.phi[wp.n_pts - 1] - 1.2).abs() < 1e-8);
        assert!(wp.phi.iter().all(|&v| (0.8..=1.2).contains(&v)));
        assert!(wp.ode_residual() < 1e-10);
        assert!(wp.collocation_residual() < 1e-7);
        // integrating the profile equation over [-L, L]:
        // (alpha/2) int xi phi' = -[q'(phi) phi']_{-L}^{L}
        let moment: f64 = (0..wp.n_pts)
            .map(|i| {
                let w = if i == 0 || i == wp.n_pts - 1 { 0.5 } else { 1.0 };
                w * wp.xi[i] * wp.dphi[i]
            })
            .sum::<f64>()
            * wp.h;
        let n = wp.n_pts - 1;
        let pm = PressureModel::quadratic(2.0, &Params::default());
        let flux = pm.dq(wp.phi[n]) * wp.dphi[n] - pm.dq(wp.phi[0]) * wp.dphi[0];
        assert!((0.5 * moment + flux).abs() < 1e-9, "{moment} {flux}");
        // total variation equals the jump
        let tv: f64 = wp.dphi.iter().sum::<f64>() * wp.h;
        assert!((tv - 0.4).abs() < 1e-9, "{tv}");
    }

    #[test]
    fn decreasing_wave_is_mirror_image() {
        let p = Params::default();
        let q = Params { rho_minus: 1.2, rho_plus: 0.8, ..p };
        let pm = PressureModel::quadratic(2.0, &p);
        let up = build_profile(&p, &pm, 8.0, 801, DEFAULT_TOL).unwrap();
        let down = build_profile(&q, &pm, 8.0, 801, DEFAULT_TOL).unwrap();
        assert!(down.is_strictly_monotone());
        for i in 0..801 {
            assert_eq!(down.phi[i], up.phi[800 - i]);
        }
    }

    #[test]
    fn inadmissible_law_is_rejected() {
        // a cubic law whose q' vanishes at rho = 1: the interior is inadmissible
        let p = Params::default();
        let law = crate::model::FnPressure::new("degenerate", |r| {
            let d = r - 1.0;
            [0.5 * r * r + d.powi(3) / 3.0, r + d * d, 1.0 + 2.0 * d]
        });
        let pm = PressureModel::new(law, &p);
        assert!(matches!(build_profile(&p, &pm, 8.0, 401, DEFAULT_TOL), Err(Error::AdmissibilityViolation { .. })));
    }

    #[test]
    fn synthetic_tail() {
        let xi: Vec<f64> = (0..=800).map(|i| i as f64 * 0.01).collect();
        let phi: Vec<f64> = xi.iter().map(|&x| 1.2 - (-2.0 * x * x).exp()).collect();
        let fit = tail_fit(&xi, &phi, 1.2, (2.0, 3.6)).unwrap();
        assert!((fit.c_fit - 2.0).abs() < 1e-3);
        assert!(fit.ok);
    }

    #[test]
    fn default_tail_is_gaussian() {
        let fit = default_profile(DEFAULT_N_PTS).tail_check().unwrap();
        assert!(fit.ok, "{fit:?}");
        assert!(fit.c_fit > 0.0);
    }

    #[test]
    fn evaluator_basics() {
        let f = WaveField::new(default_profile(2001));
        let e = f.eval(0.0, 0.0, 0, 0).unwrap();
        assert_eq!(e.rho, f.profile().phi[1000]);
        assert_eq!(e.phi, e.rho);
        assert!(matches!(f.eval(0.0, 0.0, 4, 0), Err(Error::OrderUnsupported { .. })));
        assert!(matches!(f.eval(0.0, 0.0, 0, 2), Err(Error::OrderUnsupported { .. })));
        assert!(matches!(f.eval(0.0, 0.0, 3, 1), Err(Error::OrderUnsupported { .. })));
        // far field
        let e = f.eval(-1e4, 3.0, 0, 0).unwrap();
        assert_eq!(e.rho, 0.8);
        assert_eq!(f.eval(1e4, 3.0, 1, 1).unwrap().m, 0.0);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let wp = default_profile(4001);
        let h = 1e-3;
        for &xi in &[-2.3, -0.7, 0.0, 0.4, 1.9, 3.3] {
            let j = wp.jet(xi);
            let jp = wp.jet(xi + h);
            let jm = wp.jet(xi - h);
            for d in 0..4 {
                let fd = (jp[d] - jm[d]) / (2.0 * h);
                assert!((fd - j[d + 1]).abs() < 2e-6, "order {} at {xi}: {fd} vs {}", d + 1, j[d + 1]);
            }
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let f = WaveField::new(default_profile(4001));
        let h = 1e-3;
        for &(x, t) in &[(-1.5, 0.5), (0.3, 2.0), (2.2, 7.0)] {
            for k in 0..=2 {
                let c = f.eval(x, t, k, 0).unwrap();
                let xp = f.eval(x + h, t, k, 0).unwrap();
                let xm = f.eval(x - h, t, k, 0).unwrap();
                let dx = f.eval(x, t, k + 1, 0).unwrap();
                assert!(((xp.rho - xm.rho) / (2.0 * h) - dx.rho).abs() < 1e-6);
                assert!(((xp.m - xm.m) / (2.0 * h) - dx.m).abs() < 1e-6);
                let tp = f.eval(x, t + h, k, 0).unwrap();
                let tm = f.eval(x, t - h, k, 0).unwrap();
                let dt = f.eval(x, t, k, 1).unwrap();
                assert!(((tp.rho - tm.rho) / (2.0 * h) - dt.rho).abs() < 1e-6);
                assert!(((tp.m - tm.m) / (2.0 * h) - dt.m).abs() < 1e-6);
                let _ = c;
            }
        }
    }

    #[test]
    fn momentum_is_reduced_pressure_flux() {
        let f = WaveField::new(default_profile(4001));
        let pm = f.pressure().clone();
        let h = 1e-4;
        for &(x, t) in &[(-1.0, 0.0), (0.5, 1.0), (3.0, 4.0)] {
            let fd = (pm.q(f.rho_bar(x + h, t)) - pm.q(f.rho_bar(x - h, t))) / (2.0 * h);
            assert!((f.m_bar(x, t) + fd).abs() < 1e-7);
        }
    }

    #[test]
    fn continuity_residual_small() {
        let f = WaveField::new(default_profile(4001));
        let h = 1e-3;
        for i in 0..50 {
            let x = -6.0 + 0.25 * i as f64;
            let t = 0.1 * i as f64;
            let a = f.eval(x, t, 0, 1).unwrap().rho + f.eval(x, t, 1, 0).unwrap().m;
            assert!(a.abs() < 1e-10);
            // evaluator-only finite differences
            let rt = (f.rho_bar(x, t + h) - f.rho_bar(x, (t - h).max(0.0))) / (t + h - (t - h).max(0.0));
            let mx = (f.m_bar(x + h, t) - f.m_bar(x - h, t)) / (2.0 * h);
            assert!((rt + mx).abs() < 1e-5, "{x} {t}: {}", rt + mx);
        }
    }

    #[test]
    fn self_similar_consistency() {
        let f = WaveField::new(default_profile(4001));
        for &(x, t, t2) in &[(1.0, 0.0, 3.0), (-2.0, 1.0, 99.0), (0.5, 10.0, 0.0)] {
            let a = f.rho_bar(x, t);
            let b = f.rho_bar(x * ((1.0f64 + t2) / (1.0 + t)).sqrt(), t2);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_header() {
        let wp = default_profile(201);
        let mut buf = Vec::new();
        wp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("xi,phi,dphi,d2phi\n"));
        assert_eq!(text.lines().count(), 202);
    }
}
