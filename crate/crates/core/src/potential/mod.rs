//! Multi-well potentials, the convex function `Q`, its polar map, and the
//! sampled checks of the structural hypotheses (nondegeneracy, symmetry,
//! `Q`-monotonicity).

mod builtins;
mod polar;
mod qfunc;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

pub use builtins::{ClosureEvaluator, DoubleWell, QuadrupleWell, TripleWell};
pub use polar::{check_polar_form, eval_v, PolarDerivatives, PolarMap, VSample, SEED_EPS};
pub use qfunc::{AnisotropicQ, QFunction, RadialQ, FD_STEP};

use crate::coxeter::{Cone, ReflectionGroup};
use crate::sampling::{halton_directions, Sampler};
use crate::vecops::{dist, dot, norm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("unknown potential {0:?}")]
    UnknownPotential(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("potential needs at least one minimum")]
    NoMinima,
    #[error("minimum {0:?} is not a zero of W and W_u")]
    NotAMinimum(Vec<f64>),
    #[error("nondegeneracy fails at {0:?}: smallest Hessian eigenvalue is not positive")]
    Degenerate(Vec<f64>),
    #[error("bound radius {0} does not confine W: sphere minimum {1} below inner maximum {2}")]
    BoundRadius(f64, f64, f64),
    #[error("Q_u vanishes at {0:?}; polar integration aborted")]
    VanishingQGradient(Vec<f64>),
    #[error("polar integration failed: {0}")]
    PolarIntegration(String),
}

/// Smooth scalar field with analytic derivatives. Hessians are row-major.
pub trait Evaluator: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, u: &[f64]) -> f64;

    fn grad(&self, u: &[f64], out: &mut [f64]);

    fn hess(&self, u: &[f64], out: &mut [f64]);

    /// Value and gradient in one pass.
    fn value_grad(&self, u: &[f64], out: &mut [f64]) -> f64 {
        self.grad(u, out);
        self.value(u)
    }
}

/// Samples per shell used by [`estimate_c`].
const C_DIRECTIONS: usize = 96;
const C_SHELLS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
/// Resolution of the bisection for the nondegeneracy radius.
const R0_RESOLUTION: f64 = 1e-3;

/// Result of the nondegeneracy estimate around one minimum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NondegeneracyEstimate {
    pub r0: f64,
    /// Smallest sampled Hessian eigenvalue over `|u − a| ≤ r0` (may be negative).
    pub min_eigenvalue: f64,
    /// `sqrt(max(min_eigenvalue, 0))`.
    pub c: f64,
    /// Largest radius at which the minimum eigenvalue stays positive.
    pub r0_max: f64,
    /// True when `c = 0`.
    pub degenerate: bool,
}

fn min_eigenvalue(w: &dyn Evaluator, u: &[f64]) -> f64 {
    let n = u.len();
    let mut h = vec![0.0; n * n];
    w.hess(u, &mut h);
    let m = DMatrix::from_row_slice(n, n, &h);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn ball_min_eigenvalue(w: &dyn Evaluator, center: &[f64], r: f64, dirs: &[Vec<f64>]) -> f64 {
    let mut m = min_eigenvalue(w, center);
    if r <= 0.0 {
        return m;
    }
    for shell in C_SHELLS {
        for d in dirs {
            let u: Vec<f64> = center.iter().zip(d).map(|(a, x)| a + shell * r * x).collect();
            m = m.min(min_eigenvalue(w, &u));
        }
    }
    m
}

/// Nondegeneracy constant `c` with `∂²W ≥ c²` on the sampled ball `B(a, r0)`.
pub fn estimate_c(w: &dyn Evaluator, a: &[f64], r0: f64) -> NondegeneracyEstimate {
    let dirs = halton_directions(a.len(), C_DIRECTIONS);
    let min_eig = ball_min_eigenvalue(w, a, r0, &dirs);
    let positive = |r: f64| ball_min_eigenvalue(w, a, r, &dirs) > 0.0;
    let r0_max = if !positive(0.0) {
        0.0
    } else {
        let (mut lo, mut hi) = if positive(r0) {
            let mut lo = r0.max(R0_RESOLUTION);
            let mut hi = 2.0 * lo;
            while positive(hi) && hi < 1e3 {
                lo = hi;
                hi *= 2.0;
            }
            (lo, hi)
        } else {
            (0.0, r0)
        };
        while hi - lo > R0_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            if positive(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let degenerate = min_eig <= 1e-12;
    NondegeneracyEstimate {
        r0,
        min_eigenvalue: min_eig,
        c: if degenerate { 0.0 } else { min_eig.sqrt() },
        r0_max,
        degenerate,
    }
}

/// A potential together with its minima and the constants derived from them.
#[derive(Clone)]
pub struct Potential {
    name: String,
    evaluator: Arc<dyn Evaluator>,
    minima: Vec<Vec<f64>>,
    r0: f64,
    c: f64,
    bound_radius: f64,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Potential")
            .field("name", &self.name)
            .field("minima", &self.minima)
            .field("r0", &self.r0)
            .field("c", &self.c)
            .field("bound_radius", &self.bound_radius)
            .finish()
    }
}

type Factory = Arc<dyn Fn() -> (Arc<dyn Evaluator>, Vec<Vec<f64>>) + Send + Sync>;

fn registry() -> &'static Mutex<BTreeMap<String, Factory>> {
    static REGISTRY: OnceLock<Mutex<BTreeMap<String, Factory>>> = OnceLock::new();
    REGISTRY.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// Registers an externally supplied evaluator under `key`, making it
/// available to [`builtin_potential`].
pub fn register_potential(
    key: &str,
    factory: impl Fn() -> (Arc<dyn Evaluator>, Vec<Vec<f64>>) + Send + Sync + 'static,
) {
    registry()
        .lock()
        .expect("registry poisoned")
        .insert(key.to_string(), Arc::new(factory));
}

/// Built-in potentials by name, then registered ones.
pub fn builtin_potential(name: &str) -> Result<Potential, PotentialError> {
    let third = 1.0 / 3f64.sqrt();
    let s = (2.0f64 / 3.0).sqrt();
    let (evaluator, minima): (Arc<dyn Evaluator>, Vec<Vec<f64>>) = match name {
        "triple-well-2d" => {
            let h = 3f64.sqrt() / 2.0;
            (
                Arc::new(TripleWell),
                vec![vec![1.0, 0.0], vec![-0.5, h], vec![-0.5, -h]],
            )
        }
        "quadruple-well-3d" => (
            Arc::new(QuadrupleWell),
            vec![
                vec![s, 0.0, third],
                vec![-s, 0.0, third],
                vec![0.0, s, -third],
                vec![0.0, -s, -third],
            ],
        ),
        "double-well-1d" => (Arc::new(DoubleWell), vec![vec![1.0], vec![-1.0]]),
        _ => {
            let factory = registry()
                .lock()
                .expect("registry poisoned")
                .get(name)
                .cloned()
                .ok_or_else(|| PotentialError::UnknownPotential(name.to_string()))?;
            factory()
        }
    };
    Potential::new(name, evaluator, minima)
}

impl Potential {
    /// Derives `r0`, `c` and the bound radius `b` from the evaluator and minima.
    pub fn new(
        name: &str,
        evaluator: Arc<dyn Evaluator>,
        minima: Vec<Vec<f64>>,
    ) -> Result<Self, PotentialError> {
        let n = evaluator.dim();
        if minima.is_empty() {
            return Err(PotentialError::NoMinima);
        }
        let mut g = vec![0.0; n];
        for a in &minima {
            if a.len() != n {
                return Err(PotentialError::DimensionMismatch {
                    expected: n,
                    got: a.len(),
                });
            }
            evaluator.grad(a, &mut g);
            if evaluator.value(a).abs() > 1e-10 || norm(&g) > 1e-10 {
                return Err(PotentialError::NotAMinimum(a.clone()));
            }
        }
        let mut cap = f64::INFINITY;
        for i in 0..minima.len() {
            for j in (i + 1)..minima.len() {
                cap = cap.min(0.5 * dist(&minima[i], &minima[j]));
            }
        }
        if !cap.is_finite() {
            cap = 1.0;
        }
        let mut r0 = cap;
        for a in &minima {
            let est = estimate_c(evaluator.as_ref(), a, R0_RESOLUTION);
            if est.degenerate {
                return Err(PotentialError::Degenerate(a.clone()));
            }
            r0 = r0.min(est.r0_max);
        }
        let c = minima
            .iter()
            .map(|a| estimate_c(evaluator.as_ref(), a, r0).c)
            .fold(f64::INFINITY, f64::min);

        let amax = minima.iter().map(|a| norm(a)).fold(0.0, f64::max);
        let bound_radius = 1.0 + 1.5 * amax;
        let dirs = halton_directions(n, 512);
        let inner = dirs
            .iter()
            .map(|d| evaluator.value(&crate::vecops::scale(d, amax)))
            .fold(f64::NEG_INFINITY, f64::max);
        let outer = dirs
            .iter()
            .map(|d| evaluator.value(&crate::vecops::scale(d, bound_radius)))
            .fold(f64::INFINITY, f64::min);
        if outer <= inner {
            return Err(PotentialError::BoundRadius(bound_radius, outer, inner));
        }
        Ok(Self {
            name: name.to_string(),
            evaluator,
            minima,
            r0,
            c,
            bound_radius,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    pub fn evaluator(&self) -> &dyn Evaluator {
        self.evaluator.as_ref()
    }

    pub fn minima(&self) -> &[Vec<f64>] {
        &self.minima
    }

    /// Radius of the nondegeneracy ball.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Nondegeneracy constant valid on balls of radius [`Potential::r0`].
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `sqrt(λ_min(∂²W(a)))`, the `r0 → 0` limit of [`estimate_c`] at the
    /// first minimum.
    pub fn local_c(&self) -> f64 {
        min_eigenvalue(self.evaluator(), &self.minima[0]).max(0.0).sqrt()
    }

    /// Radius `b` with `|u| < b` along the flow.
    pub fn bound_radius(&self) -> f64 {
        self.bound_radius
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.evaluator.value(u)
    }

    pub fn grad(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        self.evaluator.grad(u, &mut g);
        g
    }

    pub fn hess(&self, u: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; u.len() * u.len()];
        self.evaluator.hess(u, &mut h);
        h
    }
}

impl Evaluator for Potential {
    fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.evaluator.value(u)
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        self.evaluator.grad(u, out)
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        self.evaluator.hess(u, out)
    }

    fn value_grad(&self, u: &[f64], out: &mut [f64]) -> f64 {
        self.evaluator.value_grad(u, out)
    }
}

/// `max |W(gu) − W(u)|` over samples and group elements.
pub fn check_invariance(w: &dyn Evaluator, group: &ReflectionGroup, samples: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for u in samples {
        let base = w.value(u);
        for g in group.elements() {
            worst = worst.max((w.value(&g.apply(u)) - base).abs());
        }
    }
    worst
}

/// Result of the sampled `Q`-monotonicity check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotonicityReport {
    pub min_dot: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Tolerance of the `Q`-monotonicity check.
pub const Q_MONOTONICITY_TOL: f64 = 1e-9;

/// `min ⟨Q_u(u), W_u(u)⟩` over samples in `D`, away from the base point.
pub fn check_q_monotonicity(
    w: &dyn Evaluator,
    q: &dyn QFunction,
    region: &Cone,
    samples: &[Vec<f64>],
) -> MonotonicityReport {
    let n = q.dim();
    let mut gw = vec![0.0; n];
    let mut gq = vec![0.0; n];
    let mut min_dot = f64::INFINITY;
    let mut count = 0;
    for u in samples {
        if !region.contains_strictly(u, 0.0) || dist(u, q.base()) <= 1e-8 {
            continue;
        }
        w.grad(u, &mut gw);
        q.grad(u, &mut gq);
        min_dot = min_dot.min(dot(&gq, &gw));
        count += 1;
    }
    MonotonicityReport {
        min_dot,
        samples: count,
        pass: min_dot >= -Q_MONOTONICITY_TOL,
    }
}

/// `count` uniform samples of `D ∩ B(center, radius)` minus a `1e−8` ball at the center.
pub fn sample_region_ball(
    region: &Cone,
    center: &[f64],
    radius: f64,
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut sampler = Sampler::new(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < 1000 * count.max(1) {
        tries += 1;
        let u = sampler.in_ball(center, radius);
        if region.contains_strictly(&u, 0.0) && dist(&u, center) > 1e-8 {
            out.push(u);
        }
    }
    out
}

/// Largest relative discrepancy between analytic and central-difference
/// derivatives (gradient vs value, Hessian vs gradient) at `step`.
pub fn fd_consistency(w: &dyn Evaluator, samples: &[Vec<f64>], step: f64) -> f64 {
    let n = w.dim();
    let mut worst: f64 = 0.0;
    let mut g = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    for u in samples {
        w.grad(u, &mut g);
        w.hess(u, &mut h);
        let gscale = norm(&g).max(1.0);
        let hscale = h.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
        let mut x = u.clone();
        for j in 0..n {
            x[j] = u[j] + step;
            let vp = w.value(&x);
            w.grad(&x, &mut gp);
            x[j] = u[j] - step;
            let vm = w.value(&x);
            w.grad(&x, &mut gm);
            x[j] = u[j];
            let fd = (vp - vm) / (2.0 * step);
            worst = worst.max((fd - g[j]).abs() / gscale);
            for i in 0..n {
                let fdh = (gp[i] - gm[i]) / (2.0 * step);
                worst = worst.max((fdh - h[i * n + j]).abs() / hscale);
            }
        }
    }
    worst
}

/// Worst violation of the midpoint convexity inequality over sample pairs.
pub fn check_q_convexity(q: &dyn QFunction, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (u, v) in pairs {
        let m: Vec<f64> = u.iter().zip(v).map(|(a, b)| 0.5 * (a + b)).collect();
        worst = worst.max(q.value(&m) - 0.5 * (q.value(u) + q.value(v)));
    }
    worst
}

/// Summary of the `V`-inequalities along polar rays.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VReport {
    /// `min V_q` over all samples.
    pub min_v_q: f64,
    /// `min (V_q − c²⟨ũ_q,ũ_q⟩q)` over samples with `q ≤ r0`.
    pub min_lower_bound_slack: f64,
    /// `max |V_q(FD) − ⟨W_u, ũ_q⟩|`.
    pub max_chain_error: f64,
    pub samples: usize,
}

/// Evaluates `V` on samples `(q, ν)` and checks `V_q ≥ 0` and the local
/// lower bound `V_q ≥ c²⟨ũ_q,ũ_q⟩q` for `q ≤ r0`.
pub fn check_v_conditions(
    w: &dyn Evaluator,
    polar: &PolarMap<'_>,
    c: f64,
    r0: f64,
    samples: &[(f64, Vec<f64>)],
) -> Result<VReport, PotentialError> {
    let mut report = VReport {
        min_v_q: f64::INFINITY,
        min_lower_bound_slack: f64::INFINITY,
        max_chain_error: 0.0,
        samples: samples.len(),
    };
    for (q, nu) in samples {
        let s = eval_v(w, polar, *q, nu)?;
        report.min_v_q = report.min_v_q.min(s.v_q);
        report.max_chain_error = report.max_chain_error.max((s.v_q - s.v_q_chain).abs());
        if *q <= r0 {
            report.min_lower_bound_slack = report
                .min_lower_bound_slack
                .min(s.v_q - c * c * s.u_q_sq * q);
        }
    }
    Ok(report)
}

/// Unit directions `ν` from `a₁` into `D` (for polar-ray sampling).
pub fn directions_into_region(region: &Cone, a1: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut sampler = Sampler::new(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 10_000 * count.max(1) {
        tries += 1;
        let nu = sampler.unit_vector(a1.len());
        let probe: Vec<f64> = a1.iter().zip(&nu).map(|(a, v)| a + 0.1 * v).collect();
        if region.contains_strictly(&probe, 0.0) {
            out.push(nu);
        }
    }
    out
}

/// Samples `(q, ν, t)` with `t ⟂ ν` for the polar-form check.
pub fn polar_form_samples(
    dim: usize,
    count: usize,
    q_range: (f64, f64),
    seed: u64,
) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let mut sampler = Sampler::new(seed);
    (0..count)
        .filter_map(|_| {
            let q = sampler.uniform(q_range.0, q_range.1);
            let nu = sampler.unit_vector(dim);
            let t = sampler.orthogonal_unit(&nu)?;
            Some((q, nu, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        assert!(builtin_potential("triple-well-2d").is_ok());
        assert!(matches!(
            builtin_potential("sextic"),
            Err(PotentialError::UnknownPotential(_))
        ));
    }

    #[test]
    fn triple_well_constants() {
        let p = builtin_potential("triple-well-2d").unwrap();
        assert!((p.local_c() - 6f64.sqrt()).abs() < 1e-12);
        assert!(p.r0() > 0.3 && p.r0() < 0.45, "r0 = {}", p.r0());
        assert!(p.c() > 0.0);
        assert!((p.bound_radius() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_quartic_flagged() {
        let w = ClosureEvaluator::new(
            2,
            |u| {
                let s = (u[0] - 1.0).powi(2) + u[1] * u[1];
                s * s
            },
            |u, g| {
                let s = (u[0] - 1.0).powi(2) + u[1] * u[1];
                g[0] = 4.0 * s * (u[0] - 1.0);
                g[1] = 4.0 * s * u[1];
            },
            |u, h| {
                let (x, y) = (u[0] - 1.0, u[1]);
                let s = x * x + y * y;
                h[0] = 4.0 * s + 8.0 * x * x;
                h[1] = 8.0 * x * y;
                h[2] = h[1];
                h[3] = 4.0 * s + 8.0 * y * y;
            },
        );
        let est = estimate_c(&w, &[1.0, 0.0], 0.1);
        assert!(est.degenerate);
        assert_eq!(est.c, 0.0);
        assert!(matches!(
            Potential::new("quartic", Arc::new(w), vec![vec![1.0, 0.0]]),
            Err(PotentialError::Degenerate(_))
        ));
    }

    #[test]
    fn registered_potential_is_found() {
        register_potential("wide-double-well", || {
            let w = ClosureEvaluator::new(
                1,
                |u| (u[0] * u[0] - 4.0).powi(2) / 16.0,
                |u, g| g[0] = (u[0] * u[0] - 4.0) * u[0] / 4.0,
                |u, h| h[0] = (3.0 * u[0] * u[0] - 4.0) / 4.0,
            );
            (Arc::new(w) as Arc<dyn Evaluator>, vec![vec![2.0], vec![-2.0]])
        });
        let p = builtin_potential("wide-double-well").unwrap();
        assert_eq!(p.minima().len(), 2);
        assert!((p.local_c() - 2f64.sqrt()).abs() < 1e-12);
    }
}
