//! Polar coordinates `(q, ν) ↦ ũ(q;ν)` attached to a convex `Q`.
//!
//! `ũ(·;ν)` solves `dũ/dq = Q_u/|Q_u|²` from a seed on the level `Q = ε`
//! along `ν`, so `Q(ũ(q;ν)) = q`. The variation `ũ_ν t` in a tangent
//! direction `t ⟂ ν` is carried along by the linearized equation.

use serde::Serialize;

use super::{Evaluator, PotentialError, QFunction};
use crate::vecops::{dot, norm};

/// Level of the seed point.
pub const SEED_EPS: f64 = 1e-6;
/// Local error bound of one accepted integration step.
const STEP_TOL: f64 = 1e-13;
/// Largest step as a fraction of the current level.
const MAX_REL_STEP: f64 = 0.25;
const MAX_STEPS: usize = 200_000;

/// Integrator for the polar map of a fixed `Q`.
pub struct PolarMap<'a> {
    q: &'a dyn QFunction,
    eps: f64,
}

/// `ũ` and its derivatives at one `(q, ν)` in one tangent direction `t`.
#[derive(Debug, Clone, Serialize)]
pub struct PolarDerivatives {
    pub u: Vec<f64>,
    pub u_q: Vec<f64>,
    pub u_qq: Vec<f64>,
    pub u_nu_t: Vec<f64>,
    pub u_q_nu_t: Vec<f64>,
    pub u_nu_nu_tt: Vec<f64>,
}

impl PolarDerivatives {
    /// Smallest eigenvalue of the form `ω(α,β)` restricted to `α² + β² = 1`.
    pub fn omega_min(&self) -> f64 {
        let a = -dot(&self.u_qq, &self.u_q);
        let c = dot(&self.u_q_nu_t, &self.u_nu_t);
        let b = dot(&self.u_q_nu_t, &self.u_q);
        // ω = aα² + cβ² − 2bαβ, matrix [[a, −b], [−b, c]].
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        mean - rad
    }

    /// `ω(α, β)` itself.
    pub fn omega(&self, alpha: f64, beta: f64) -> f64 {
        let a = -dot(&self.u_qq, &self.u_q);
        let c = dot(&self.u_q_nu_t, &self.u_nu_t);
        let b = dot(&self.u_q_nu_t, &self.u_q);
        a * alpha * alpha + c * beta * beta - 2.0 * b * alpha * beta
    }
}

/// `V(q, ν) = W(ũ(q;ν))` with its `q`-derivative.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VSample {
    pub q: f64,
    pub v: f64,
    /// Central finite difference in `q`.
    pub v_q: f64,
    /// `⟨W_u(ũ), ũ_q⟩`.
    pub v_q_chain: f64,
    /// `⟨ũ_q, ũ_q⟩`.
    pub u_q_sq: f64,
}

impl<'a> PolarMap<'a> {
    pub fn new(q: &'a dyn QFunction) -> Self {
        Self { q, eps: SEED_EPS }
    }

    pub fn q(&self) -> &dyn QFunction {
        self.q
    }

    /// `(Q_u/|Q_u|², Q_u, |Q_u|²)` at `u`.
    fn field(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64), PotentialError> {
        let mut g = vec![0.0; u.len()];
        self.q.grad(u, &mut g);
        let g2 = dot(&g, &g);
        if !(g2 > 1e-24) || !g2.is_finite() {
            return Err(PotentialError::VanishingQGradient(u.to_vec()));
        }
        Ok((g.iter().map(|x| x / g2).collect(), g, g2))
    }

    /// `Df(u)·w` for `f = Q_u/|Q_u|²`.
    fn df_apply(&self, u: &[f64], g: &[f64], g2: f64, w: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut h = vec![0.0; n * n];
        self.q.hess(u, &mut h);
        let hw: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| h[i * n + j] * w[j]).sum())
            .collect();
        let ghw = dot(g, &hw);
        (0..n)
            .map(|i| hw[i] / g2 - 2.0 * g[i] * ghw / (g2 * g2))
            .collect()
    }

    fn rhs(&self, y: &[f64], n: usize) -> Result<Vec<f64>, PotentialError> {
        let (f, g, g2) = self.field(&y[..n])?;
        let mut out = f;
        if y.len() > n {
            let dw = self.df_apply(&y[..n], &g, g2, &y[n..]);
            out.extend(dw);
        }
        Ok(out)
    }

    fn rk4(&self, y: &[f64], h: f64, n: usize) -> Result<Vec<f64>, PotentialError> {
        let k1 = self.rhs(y, n)?;
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
        let k2 = self.rhs(&y2, n)?;
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
        let k3 = self.rhs(&y3, n)?;
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
        let k4 = self.rhs(&y4, n)?;
        Ok((0..y.len())
            .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// Integrates the (augmented) state from level `q0` to level `q1` by
    /// step-doubling RK4.
    fn integrate(&self, mut y: Vec<f64>, q0: f64, q1: f64, n: usize) -> Result<Vec<f64>, PotentialError> {
        if q0 == q1 {
            return Ok(y);
        }
        let dir = (q1 - q0).signum();
        let mut q = q0;
        let mut h = 0.05 * q0.abs().max(1e-9);
        let mut steps = 0;
        while (q1 - q) * dir > 0.0 {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(PotentialError::PolarIntegration(format!(
                    "step budget exhausted at q = {q}"
                )));
            }
            h = h.min(MAX_REL_STEP * q.abs().max(1e-12)).min((q1 - q).abs());
            let full = self.rk4(&y, dir * h, n)?;
            let half = self.rk4(&y, dir * h / 2.0, n)?;
            let twice = self.rk4(&half, dir * h / 2.0, n)?;
            let scale = 1.0 + norm(&y[n..]);
            let err = (0..y.len())
                .map(|i| {
                    let e = (twice[i] - full[i]).abs() / 15.0;
                    if i < n { e } else { e / scale }
                })
                .fold(0.0, f64::max);
            if err <= STEP_TOL || h < 1e-14 {
                y = (0..y.len())
                    .map(|i| twice[i] + (twice[i] - full[i]) / 15.0)
                    .collect();
                q += dir * h;
                if (q1 - q) * dir < 1e-15 * q1.abs().max(1.0) {
                    q = q1;
                }
            }
            let factor = if err > 0.0 {
                (0.9 * (STEP_TOL / err).powf(0.2)).clamp(0.2, 4.0)
            } else {
                4.0
            };
            h *= factor;
        }
        Ok(y)
    }

    /// Point `a₁ + sν` on the level `Q = level`, with `s` found by Newton.
    fn seed_radius(&self, nu: &[f64], level: f64) -> Result<f64, PotentialError> {
        let a1 = self.q.base();
        let at = |s: f64| -> Vec<f64> { a1.iter().zip(nu).map(|(a, v)| a + s * v).collect() };
        if self.q.is_radial() {
            return Ok(level);
        }
        let probe = self.q.value(&at(level));
        let mut s = if probe > 0.0 { level * level / probe } else { level };
        let mut g = vec![0.0; nu.len()];
        for _ in 0..100 {
            let u = at(s);
            let phi = self.q.value(&u) - level;
            self.q.grad(&u, &mut g);
            let slope = dot(&g, nu);
            if slope <= 0.0 {
                return Err(PotentialError::VanishingQGradient(u));
            }
            let ds = phi / slope;
            s -= ds;
            if ds.abs() <= 1e-15 * s.abs() {
                break;
            }
        }
        Ok(s)
    }

    /// `ũ(q;ν)`.
    pub fn eval(&self, q: f64, nu: &[f64]) -> Result<Vec<f64>, PotentialError> {
        let n = nu.len();
        let level = self.eps.min(q);
        let s = self.seed_radius(nu, level)?;
        let y0: Vec<f64> = self.q.base().iter().zip(nu).map(|(a, v)| a + s * v).collect();
        if self.q.is_radial() {
            return Ok(self.q.base().iter().zip(nu).map(|(a, v)| a + q * v).collect());
        }
        let y = self.integrate(y0, level, q, n)?;
        Ok(y)
    }

    /// `ũ(q;ν)` at several increasing levels, integrating once.
    pub fn trajectory(&self, qs: &[f64], nu: &[f64]) -> Result<Vec<Vec<f64>>, PotentialError> {
        let n = nu.len();
        let mut out = Vec::with_capacity(qs.len());
        let mut level = self.eps.min(qs.first().copied().unwrap_or(self.eps));
        let s = self.seed_radius(nu, level)?;
        let mut y: Vec<f64> = self.q.base().iter().zip(nu).map(|(a, v)| a + s * v).collect();
        for &q in qs {
            y = self.integrate(y, level, q, n)?;
            level = q;
            out.push(y.clone());
        }
        Ok(out)
    }

    /// `ũ(q;ν)` and `ũ_ν t`.
    pub fn eval_with_tangent(
        &self,
        q: f64,
        nu: &[f64],
        t: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), PotentialError> {
        let n = nu.len();
        let level = self.eps.min(q);
        let s = self.seed_radius(nu, level)?;
        let a1 = self.q.base();
        let u0: Vec<f64> = a1.iter().zip(nu).map(|(a, v)| a + s * v).collect();
        let mut g = vec![0.0; n];
        self.q.grad(&u0, &mut g);
        // s(ν) keeps the seed on the level set: s' = −s⟨Q_u,t⟩/⟨Q_u,ν⟩.
        let s_prime = -s * dot(&g, t) / dot(&g, nu);
        let mut y = u0;
        y.extend((0..n).map(|i| s * t[i] + s_prime * nu[i]));
        let y = self.integrate(y, level, q, n)?;
        Ok((y[..n].to_vec(), y[n..].to_vec()))
    }

    /// Moves `u` along its polar trajectory from `Q(u)` to the level `target`.
    pub fn transport(&self, u: &[f64], target: f64) -> Result<Vec<f64>, PotentialError> {
        let level = self.q.value(u);
        if self.q.is_radial() {
            let a1 = self.q.base();
            let s = target / level;
            return Ok(a1.iter().zip(u).map(|(a, x)| a + s * (x - a)).collect());
        }
        self.integrate(u.to_vec(), level, target, u.len())
    }

    /// All derivatives entering the form `ω` at `(q, ν)` in direction `t ⟂ ν`.
    pub fn derivatives(&self, q: f64, nu: &[f64], t: &[f64]) -> Result<PolarDerivatives, PotentialError> {
        let (u, u_nu_t) = self.eval_with_tangent(q, nu, t)?;
        let (f, g, g2) = self.field(&u)?;
        let u_qq = self.df_apply(&u, &g, g2, &f);
        let u_q_nu_t = self.df_apply(&u, &g, g2, &u_nu_t);
        // Second variation along the great circle through ν in direction t.
        let tau = 1e-4;
        let rot = |a: f64| -> Vec<f64> {
            nu.iter().zip(t).map(|(v, w)| a.cos() * v + a.sin() * w).collect()
        };
        let up = self.eval(q, &rot(tau))?;
        let um = self.eval(q, &rot(-tau))?;
        let u_nu_nu_tt = (0..u.len())
            .map(|i| (up[i] - 2.0 * u[i] + um[i]) / (tau * tau))
            .collect();
        Ok(PolarDerivatives {
            u,
            u_q: f,
            u_qq,
            u_nu_t,
            u_q_nu_t,
            u_nu_nu_tt,
        })
    }
}

/// Minimum of `ω` over samples `(q, ν, t)` and unit `(α, β)`.
pub fn check_polar_form(
    polar: &PolarMap<'_>,
    samples: &[(f64, Vec<f64>, Vec<f64>)],
) -> Result<f64, PotentialError> {
    let mut worst = f64::INFINITY;
    for (q, nu, t) in samples {
        worst = worst.min(polar.derivatives(*q, nu, t)?.omega_min());
    }
    Ok(worst)
}

/// Evaluates `V(q,ν) = W(ũ(q;ν))` and `V_q`.
pub fn eval_v(
    w: &dyn Evaluator,
    polar: &PolarMap<'_>,
    q: f64,
    nu: &[f64],
) -> Result<VSample, PotentialError> {
    let eta = (1e-5 * q.max(1.0)).min(0.25 * q);
    let pts = polar.trajectory(&[q - eta, q, q + eta], nu)?;
    let v = w.value(&pts[1]);
    let v_q = (w.value(&pts[2]) - w.value(&pts[0])) / (2.0 * eta);
    let (f, _, _) = polar.field(&pts[1])?;
    let mut wu = vec![0.0; nu.len()];
    w.grad(&pts[1], &mut wu);
    Ok(VSample {
        q,
        v,
        v_q,
        v_q_chain: dot(&wu, &f),
        u_q_sq: dot(&f, &f),
    })
}
