//! Physical parameters, pressure law and the structural admissibility check.
//!
//! The reduced pressure `q(rho) = p(rho) - (a*mu/(2b)) rho^2` drives the
//! limiting porous-medium equation; `q' > 0` on the working band is the
//! stability hypothesis every other module relies on.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Physical constants and far-field states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    /// Damping rate.
    pub alpha: f64,
    /// Chemotactic sensitivity.
    pub mu: f64,
    /// Chemoattractant secretion rate.
    pub a: f64,
    /// Chemoattractant death rate.
    pub b: f64,
    /// Chemoattractant diffusivity.
    pub dd: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            alpha: 1.0,
            mu: 1.0,
            a: 1.0,
            b: 1.0,
            dd: 1.0,
            rho_minus: 0.8,
            rho_plus: 1.2,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("a", self.a),
            ("b", self.b),
            ("dd", self.dd),
            ("rho_minus", self.rho_minus),
            ("rho_plus", self.rho_plus),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn phi_minus(&self) -> f64 {
        self.a / self.b * self.rho_minus
    }

    pub fn phi_plus(&self) -> f64 {
        self.a / self.b * self.rho_plus
    }

    /// Wave strength `|rho_+ - rho_-|`.
    pub fn delta0(&self) -> f64 {
        (self.rho_plus - self.rho_minus).abs()
    }

    /// Coefficient `a*mu/b` linking the chemotactic force to the pressure.
    pub fn coupling(&self) -> f64 {
        self.a * self.mu / self.b
    }

    /// Band `[min(rho)/2, 2 max(rho)]` on which admissibility is checked.
    pub fn admissibility_band(&self) -> (f64, f64) {
        let lo = self.rho_minus.min(self.rho_plus);
        let hi = self.rho_minus.max(self.rho_plus);
        (0.5 * lo, 2.0 * hi)
    }
}

/// A pressure law with derivatives up to fourth order.
pub trait PressureLaw: Send + Sync + fmt::Debug {
    /// `[p, p', p'', p''', p'''']` at `rho`.
    fn derivatives(&self, rho: f64) -> [f64; 5];

    /// The stiffness constant of the quadratic law, if this is one.
    fn kappa(&self) -> Option<f64> {
        None
    }
}

/// `p(rho) = (kappa/2) rho^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPressure {
    pub kappa: f64,
}

impl PressureLaw for QuadraticPressure {
    fn derivatives(&self, rho: f64) -> [f64; 5] {
        let k = self.kappa;
        [0.5 * k * rho * rho, k * rho, k, 0.0, 0.0]
    }

    fn kappa(&self) -> Option<f64> {
        Some(self.kappa)
    }
}

type Triple = dyn Fn(f64) -> [f64; 3] + Send + Sync;

/// User-supplied `(p, p', p'')`; third and fourth derivatives are taken by
/// centred differences of `p''`.
#[derive(Clone)]
pub struct FnPressure {
    name: String,
    f: Arc<Triple>,
}

impl FnPressure {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        FnPressure {
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnPressure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPressure").field("name", &self.name).finish()
    }
}

impl PressureLaw for FnPressure {
    fn derivatives(&self, rho: f64) -> [f64; 5] {
        let [p, dp, d2p] = (self.f)(rho);
        let h = 1e-3 * rho.abs().max(1e-3);
        let pp = (self.f)(rho + h)[2];
        let pm = (self.f)(rho - h)[2];
        let d3p = (pp - pm) / (2.0 * h);
        let d4p = (pp - 2.0 * d2p + pm) / (h * h);
        [p, dp, d2p, d3p, d4p]
    }
}

/// Pressure values and the reduced pressure `q` at one density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureChain {
    pub p: f64,
    pub dp: f64,
    pub d2p: f64,
    pub q: f64,
    pub dq: f64,
    pub d2q: f64,
}

/// Pressure law bound to the coupling constant `a*mu/b`.
#[derive(Debug, Clone)]
pub struct PressureModel {
    law: Arc<dyn PressureLaw>,
    coupling: f64,
}

impl PressureModel {
    pub fn new(law: impl PressureLaw + 'static, params: &Params) -> Self {
        PressureModel {
            law: Arc::new(law),
            coupling: params.coupling(),
        }
    }

    pub fn quadratic(kappa: f64, params: &Params) -> Self {
        Self::new(QuadraticPressure { kappa }, params)
    }

    pub fn kappa(&self) -> Option<f64> {
        self.law.kappa()
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    #[inline]
    pub fn p(&self, rho: f64) -> f64 {
        self.law.derivatives(rho)[0]
    }

    #[inline]
    pub fn dp(&self, rho: f64) -> f64 {
        self.law.derivatives(rho)[1]
    }

    #[inline]
    pub fn q(&self, rho: f64) -> f64 {
        self.law.derivatives(rho)[0] - 0.5 * self.coupling * rho * rho
    }

    #[inline]
    pub fn dq(&self, rho: f64) -> f64 {
        self.law.derivatives(rho)[1] - self.coupling * rho
    }

    /// `[q, q', q'', q''', q'''']` at `rho`.
    pub fn q_derivatives(&self, rho: f64) -> [f64; 5] {
        let [p, dp, d2p, d3p, d4p] = self.law.derivatives(rho);
        let c = self.coupling;
        [p - 0.5 * c * rho * rho, dp - c * rho, d2p - c, d3p, d4p]
    }

    /// `(p, p', p'', q, q', q'')` at `rho > 0`.
    pub fn eval_pressure_chain(&self, rho: f64) -> Result<PressureChain> {
        if !(rho > 0.0) {
            return Err(Error::NonpositiveDensity(rho));
        }
        let [p, dp, d2p, _, _] = self.law.derivatives(rho);
        let c = self.coupling;
        Ok(PressureChain {
            p,
            dp,
            d2p,
            q: p - 0.5 * c * rho * rho,
            dq: dp - c * rho,
            d2q: d2p - c,
        })
    }
}

/// Positive-definiteness data for the matrix
/// `A(rho) = [[p'(rho), -mu rho], [-mu rho, b mu rho / a]]`.
#[derive(Debug, Clone)]
pub struct StructuralCheck {
    /// Lower quadratic-form bound over the band.
    pub c1: f64,
    /// Upper quadratic-form bound over the band.
    pub c2: f64,
    pub band: (f64, f64),
    /// Smallest sampled `q'`.
    pub min_dq: f64,
    params: Params,
    pm: PressureModel,
}

/// Number of interior sample points used on the admissibility band.
pub const BAND_SAMPLES: usize = 1000;

impl StructuralCheck {
    pub fn a_matrix(&self, rho: f64) -> [[f64; 2]; 2] {
        a_matrix(&self.params, &self.pm, rho)
    }

    /// Smaller eigenvalue of `A(rho)`.
    pub fn lambda1(&self, rho: f64) -> f64 {
        eigenvalues(self.a_matrix(rho)).0
    }

    /// Larger eigenvalue of `A(rho)`.
    pub fn lambda2(&self, rho: f64) -> f64 {
        eigenvalues(self.a_matrix(rho)).1
    }

    /// `p'(rho) x1^2 - 2 mu rho x1 x2 + (b mu rho / a) x2^2`.
    pub fn quadratic_form(&self, rho: f64, x1: f64, x2: f64) -> f64 {
        let m = self.a_matrix(rho);
        m[0][0] * x1 * x1 + 2.0 * m[0][1] * x1 * x2 + m[1][1] * x2 * x2
    }
}

pub fn a_matrix(params: &Params, pm: &PressureModel, rho: f64) -> [[f64; 2]; 2] {
    let off = -params.mu * rho;
    [
        [pm.dp(rho), off],
        [off, params.b * params.mu * rho / params.a],
    ]
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix.
pub fn eigenvalues(m: [[f64; 2]; 2]) -> (f64, f64) {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let r = half.hypot(m[0][1]);
    // the smaller root suffers cancellation; recover it from the determinant
    let big = mean + r;
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let small = if big != 0.0 { det / big } else { mean - r };
    (small.min(big), small.max(big))
}

/// Samples the admissibility band and returns the quadratic-form bounds.
///
/// Fails with [`Error::AdmissibilityViolation`] if `q' <= 0` at any sampled
/// density. The sampling is a heuristic check of the structural condition,
/// not a proof over the continuum.
pub fn check_admissible(params: &Params, pm: &PressureModel) -> Result<StructuralCheck> {
    params.validate()?;
    let band = params.admissibility_band();
    let (lo, hi) = band;
    let n = BAND_SAMPLES + 1;
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    let mut min_dq = f64::INFINITY;
    for i in 0..=n {
        let rho = if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 };
        let chain = pm.eval_pressure_chain(rho)?;
        if !(chain.dq > 0.0) {
            return Err(Error::AdmissibilityViolation { rho, dq: chain.dq });
        }
        min_dq = min_dq.min(chain.dq);
        // p'' must agree with the slope of p'
        let h = 1e-5 * rho;
        let fd = (pm.dp(rho + h) - pm.dp(rho - h)) / (2.0 * h);
        if (fd - chain.d2p).abs() > 1e-4 * (1.0 + chain.d2p.abs()) {
            return Err(Error::InvalidParams(format!(
                "pressure law: p''({rho}) = {} inconsistent with finite difference {fd}",
                chain.d2p
            )));
        }
        let (l1, l2) = eigenvalues(a_matrix(params, pm, rho));
        if !(l1 > 0.0) {
            return Err(Error::AdmissibilityViolation { rho, dq: chain.dq });
        }
        c1 = c1.min(l1);
        c2 = c2.max(l2);
    }
    Ok(StructuralCheck {
        c1,
        c2,
        band,
        min_dq,
        params: *params,
        pm: pm.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Params {
        Params::default()
    }

    #[test]
    fn default_quadratic_is_admissible() {
        let p = unit();
        let pm = PressureModel::quadratic(2.0, &p);
        let sc = check_admissible(&p, &pm).unwrap();
        assert_eq!(sc.band, (0.4, 2.4));
        // q'(rho) = rho for kappa = 2, a = b = mu = 1
        assert!((sc.min_dq - 0.4).abs() < 1e-15);
        assert!(sc.c1 > 0.0 && sc.c1 <= sc.c2);
    }

    #[test]
    fn boundary_kappa_is_rejected() {
        let p = unit();
        let pm = PressureModel::quadratic(p.coupling(), &p);
        assert!(matches!(
            check_admissible(&p, &pm),
            Err(Error::AdmissibilityViolation { .. })
        ));
    }

    #[test]
    fn nonpositive_constant_is_rejected() {
        let p = Params { b: 0.0, ..unit() };
        let pm = PressureModel::quadratic(2.0, &unit());
        assert!(matches!(check_admissible(&p, &pm), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn bounds_match_dense_eigen_sweep() {
        let p = unit();
        let pm = PressureModel::quadratic(2.0, &p);
        let sc = check_admissible(&p, &pm).unwrap();
        // oracle: 1e5-point sweep with the textbook eigenvalue formula
        let (lo, hi) = sc.band;
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=100_000 {
            let rho = lo + (hi - lo) * i as f64 / 100_000.0;
            let (a, b, c) = (2.0 * rho, -rho, rho);
            let disc = (((a - c) / 2.0f64).powi(2) + b * b).sqrt();
            mn = mn.min((a + c) / 2.0 - disc);
            mx = mx.max((a + c) / 2.0 + disc);
        }
        assert!((sc.c1 - mn).abs() < 1e-9, "{} vs {}", sc.c1, mn);
        assert!((sc.c2 - mx).abs() < 1e-9, "{} vs {}", sc.c2, mx);
    }

    #[test]
    fn chain_direct_substitution() {
        let p = unit();
        let pm = PressureModel::quadratic(2.0, &p);
        let c = pm.eval_pressure_chain(2.0).unwrap();
        assert_eq!((c.p, c.dp, c.d2p, c.q, c.dq, c.d2q), (4.0, 4.0, 2.0, 2.0, 2.0, 1.0));
        let pm = PressureModel::quadratic(p.coupling() + 1.0, &p);
        assert_eq!(pm.eval_pressure_chain(1.0).unwrap().dq, 1.0);
        assert!(matches!(pm.eval_pressure_chain(0.0), Err(Error::NonpositiveDensity(_))));
    }

    #[test]
    fn check_is_deterministic() {
        let p = unit();
        let pm = PressureModel::quadratic(3.7, &p);
        let a = check_admissible(&p, &pm).unwrap();
        let b = check_admissible(&p, &pm).unwrap();
        assert_eq!(a.c1.to_bits(), b.c1.to_bits());
        assert_eq!(a.c2.to_bits(), b.c2.to_bits());
    }

    #[test]
    fn custom_law_plugs_in() {
        let p = unit();
        let law = FnPressure::new("cubic", |r| [r * r * r, 3.0 * r * r, 6.0 * r]);
        let pm = PressureModel::new(law, &p);
        let d = pm.q_derivatives(1.5);
        assert!((d[3] - 6.0).abs() < 1e-8);
        assert!(d[4].abs() < 1e-4);
        check_admissible(&p, &pm).unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dq_matches_centred_difference(kappa in 1.1f64..10.0, rho in 0.1f64..5.0) {
                let p = unit();
                let pm = PressureModel::quadratic(kappa, &p);
                let h = 1e-5;
                let fd = (pm.q(rho + h) - pm.q(rho - h)) / (2.0 * h);
                prop_assert!((fd - pm.dq(rho)).abs() < 1e-8 * (1.0 + pm.dq(rho).abs()));
                let c = pm.eval_pressure_chain(rho).unwrap();
                let ident = c.p - 0.5 * p.coupling() * rho * rho;
                prop_assert!((c.q - ident).abs() <= 1e-12 * c.q.abs().max(1.0));
                prop_assert!((c.dq - (c.dp - p.coupling() * rho)).abs() <= 1e-12 * c.dq.abs().max(1.0));
            }

            #[test]
            fn determinant_is_eigen_product(kappa in 1.1f64..10.0, mu in 0.2f64..3.0, rho in 0.1f64..5.0) {
                let p = Params { mu, ..unit() };
                let pm = PressureModel::quadratic(kappa.max(p.coupling() + 0.05), &p);
                let m = a_matrix(&p, &pm, rho);
                let (l1, l2) = eigenvalues(m);
                let det = p.b * p.mu * rho / p.a * pm.dp(rho) - p.mu * p.mu * rho * rho;
                prop_assert!((l1 * l2 - det).abs() <= 1e-10 * det.abs().max(1.0));
                prop_assert!(det > 0.0);
            }
        }
    }
}
