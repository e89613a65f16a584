//! Radial comparison profiles `Ψ_I`, `Ψ_II`, `Ψ_III` around the constraint
//! ball and the search for the constants `L₀`, `δ` that make the derivative
//! chain `Ψ_II' ≤ Ψ_III' ≤ Ψ_I'` hold with a margin.
//!
//! The radial operator is `Ψ'' + (d−1)/r Ψ'` with an effective dimension
//! `d` (default: the spatial dimension).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// RK4 steps over `[0, L]`.
pub const ODE_STEPS: usize = 10_000;
/// Samples per profile written to CSV.
const EXPORT_SAMPLES: usize = 1001;
/// Largest `L` tried by [`find_step2_constants`].
pub const MAX_L: f64 = 1e4;

#[derive(Debug, Error, PartialEq)]
pub enum ComparisonError {
    #[error("c must be positive and finite (got {0})")]
    BadC(f64),
    #[error("need 0 < qbar < b (qbar = {qbar}, b = {b})")]
    BadLevels { qbar: f64, b: f64 },
    #[error("need positive lengths (L = {l}, l = {ll}, delta = {delta})")]
    BadLengths { l: f64, ll: f64, delta: f64 },
    #[error("d_eff must be >= 1 (got {0})")]
    BadDimension(f64),
    #[error("no L <= {max} satisfies both derivative chains with margin (c = {c}, qbar = {qbar}, b = {b}, d_eff = {d_eff}); qbar, b and c are inconsistent")]
    Regime {
        max: f64,
        c: f64,
        qbar: f64,
        b: f64,
        d_eff: f64,
    },
}

/// Boundary data of `Ψ_III` at `L + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Psi3Bc {
    /// `Ψ_III(L+δ) = Ψ_II(L−δ)`, as printed.
    #[default]
    Verbatim,
    /// `Ψ_III(L+δ) = Ψ_II(L+δ)`, the value that makes `Ψ_III'(L)` the mean
    /// of the two neighbouring slopes.
    Matched,
}

/// Radial harmonic `A + B·φ(r)` with `φ' = r^{1−d}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Harmonic {
    pub a: f64,
    pub b: f64,
    pub d_eff: f64,
}

/// `φ` with `φ'(r) = r^{1−d}`.
pub fn harmonic_phi(r: f64, d: f64) -> f64 {
    if (d - 2.0).abs() < 1e-12 {
        r.ln()
    } else {
        r.powf(2.0 - d) / (2.0 - d)
    }
}

impl Harmonic {
    /// Harmonic with `Ψ(r₀) = v₀`, `Ψ(r₁) = v₁`.
    pub fn through(r0: f64, v0: f64, r1: f64, v1: f64, d: f64) -> Self {
        let (p0, p1) = (harmonic_phi(r0, d), harmonic_phi(r1, d));
        let b = (v1 - v0) / (p1 - p0);
        Self {
            a: v0 - b * p0,
            b,
            d_eff: d,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.a + self.b * harmonic_phi(r, self.d_eff)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.b * r.powf(1.0 - self.d_eff)
    }
}

/// Which comparison problem a profile solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProfileKind {
    #[serde(rename = "psi_I")]
    PsiI,
    #[serde(rename = "psi_II")]
    PsiII,
    #[serde(rename = "psi_III")]
    PsiIII,
}

#[derive(Debug, Clone)]
enum Repr {
    /// RK4 nodes `(r, Ψ, Ψ')` with uniform spacing and the constant `c²`.
    Table {
        r0: f64,
        step: f64,
        psi: Vec<f64>,
        dpsi: Vec<f64>,
        c2: f64,
    },
    Harmonic(Harmonic),
}

/// Solution of one radial comparison problem on `[r_a, r_b]`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub kind: ProfileKind,
    pub d_eff: f64,
    pub interval: [f64; 2],
    /// `Ψ(r_a), Ψ(r_b)`.
    pub boundary: [f64; 2],
    /// Largest change in `Ψ` when the RK4 step is halved.
    pub refinement_change: f64,
    /// Largest gap to the closed form, when one exists for this `d_eff`.
    pub closed_form_error: Option<f64>,
    repr: Repr,
}

impl RadialProfile {
    /// `Ψ(r)`; table profiles are valid on their integrated range only.
    pub fn value(&self, r: f64) -> f64 {
        match &self.repr {
            Repr::Harmonic(h) => h.value(r),
            Repr::Table { .. } => self.hermite(r).0,
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match &self.repr {
            Repr::Harmonic(h) => h.derivative(r),
            Repr::Table { .. } => self.hermite(r).1,
        }
    }

    /// Cubic Hermite interpolation of `Ψ` (with `Ψ'`) and of `Ψ'` (with `Ψ''`
    /// from the equation).
    fn hermite(&self, r: f64) -> (f64, f64) {
        let Repr::Table {
            r0,
            step,
            psi,
            dpsi,
            c2,
        } = &self.repr
        else {
            unreachable!()
        };
        let last = psi.len() - 1;
        let s = ((r - r0) / step).clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last.saturating_sub(1));
        let t = s - k as f64;
        let (ra, rb) = (r0 + k as f64 * step, r0 + (k + 1) as f64 * step);
        let dd = |i: usize, ri: f64| {
            if ri == 0.0 {
                c2 * psi[i] / self.d_eff
            } else {
                c2 * psi[i] - (self.d_eff - 1.0) * dpsi[i] / ri
            }
        };
        let herm = |y0: f64, y1: f64, m0: f64, m1: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                + (t3 - 2.0 * t2 + t) * step * m0
                + (-2.0 * t3 + 3.0 * t2) * y1
                + (t3 - t2) * step * m1
        };
        (
            herm(psi[k], psi[k + 1], dpsi[k], dpsi[k + 1]),
            herm(dpsi[k], dpsi[k + 1], dd(k, ra), dd(k + 1, rb)),
        )
    }

    /// `(r, Ψ, Ψ')` at `count` evenly spaced radii.
    pub fn samples(&self, count: usize) -> Vec<[f64; 3]> {
        let [a, b] = self.interval;
        (0..count)
            .map(|i| {
                let r = a + (b - a) * i as f64 / (count - 1).max(1) as f64;
                [r, self.value(r), self.derivative(r)]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,psi,dpsi")?;
        for [r, v, d] in self.samples(EXPORT_SAMPLES) {
            writeln!(w, "{r:.16e},{v:.16e},{d:.16e}")?;
        }
        Ok(())
    }

    /// Smallest forward difference of `Ψ` over `count` samples.
    pub fn min_increment(&self, count: usize) -> f64 {
        self.samples(count)
            .windows(2)
            .map(|p| p[1][1] - p[0][1])
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_d(d: f64) -> Result<(), ComparisonError> {
    if d.is_finite() && d >= 1.0 {
        Ok(())
    } else {
        Err(ComparisonError::BadDimension(d))
    }
}

/// RK4 for `y = Ψ'/Ψ`, `y' = c² − y² − (d−1)y/r`, `y(0) = 0`, and
/// `ℓ = ∫₀^r y`, over `steps` steps of size `step`.
fn riccati(c2: f64, d: f64, step: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let f = |r: f64, y: f64| {
        if r == 0.0 {
            c2 / d
        } else {
            c2 - y * y - (d - 1.0) * y / r
        }
    };
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ls = Vec::with_capacity(steps + 1);
    let (mut y, mut l) = (0.0, 0.0);
    ys.push(y);
    ls.push(l);
    for k in 0..steps {
        let r = k as f64 * step;
        let k1 = f(r, y);
        let k2 = f(r + 0.5 * step, y + 0.5 * step * k1);
        let k3 = f(r + 0.5 * step, y + 0.5 * step * k2);
        let k4 = f(r + step, y + step * k3);
        // ℓ' = y, integrated with the same stages.
        let l1 = y;
        let l2 = y + 0.5 * step * k1;
        let l3 = y + 0.5 * step * k2;
        let l4 = y + step * k3;
        y += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        l += step / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        ys.push(y);
        ls.push(l);
    }
    (ys, ls)
}

/// Closed form of `Ψ_I` and `Ψ_I'` for `d ∈ {1, 3}`.
pub fn psi1_closed_form(c: f64, qbar: f64, l: f64, d: f64, r: f64) -> Option<(f64, f64)> {
    if (d - 1.0).abs() < 1e-12 {
        // cosh(cr)/cosh(cL) without overflow.
        let e = (-c * (l - r)).exp() * (1.0 + (-2.0 * c * r).exp()) / (1.0 + (-2.0 * c * l).exp());
        let s = (-c * (l - r)).exp() * (1.0 - (-2.0 * c * r).exp()) / (1.0 + (-2.0 * c * l).exp());
        Some((qbar * e, qbar * c * s))
    } else if (d - 3.0).abs() < 1e-12 {
        if r == 0.0 {
            let ratio = 2.0 * c * l * (-c * l).exp() / (1.0 - (-2.0 * c * l).exp());
            return Some((qbar * ratio, 0.0));
        }
        // sinh(cr)/r normalised at L.
        let g = |x: f64| (1.0 - (-2.0 * c * x).exp()) / x;
        let v = qbar * (-c * (l - r)).exp() * g(r) / g(l);
        let coth = (1.0 + (-2.0 * c * r).exp()) / (1.0 - (-2.0 * c * r).exp());
        Some((v, v * (c * coth - 1.0 / r)))
    } else {
        None
    }
}

/// `Ψ_I' (L)/(c q̄)` in closed form for `d ∈ {1, 3}`.
pub fn psi1_slope_ratio_closed(c: f64, l: f64, d: f64) -> Option<f64> {
    psi1_closed_form(c, 1.0, l, d, l).map(|(_, s)| s / c)
}

/// Steps of size `L/ODE_STEPS` needed to reach `r_max`.
fn psi1_steps(l: f64, r_max: f64) -> usize {
    let step = l / ODE_STEPS as f64;
    ((r_max / step) - 1e-9).ceil().max(ODE_STEPS as f64) as usize
}

fn psi1_table(c: f64, qbar: f64, l: f64, d: f64, per_l: usize, steps: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let step = l / per_l as f64;
    let (ys, ls) = riccati(c * c, d, step, steps);
    let l_at_l = ls[per_l];
    let psi: Vec<f64> = ls.iter().map(|v| qbar * (v - l_at_l).exp()).collect();
    let dpsi: Vec<f64> = ys.iter().zip(&psi).map(|(y, p)| y * p).collect();
    (psi, dpsi, step)
}

/// Regular solution of `Ψ'' + (d−1)Ψ'/r = c²Ψ` with `Ψ(L) = q̄`, integrated
/// on `[0, r_max]` with `r_max ≥ L`.
pub fn solve_psi1_extended(
    c: f64,
    qbar: f64,
    l: f64,
    d_eff: f64,
    r_max: f64,
) -> Result<RadialProfile, ComparisonError> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(ComparisonError::BadC(c));
    }
    check_d(d_eff)?;
    if !(l > 0.0) || !(r_max >= l) {
        return Err(ComparisonError::BadLengths {
            l,
            ll: r_max,
            delta: 0.0,
        });
    }
    let steps = psi1_steps(l, r_max);
    let (psi, dpsi, step) = psi1_table(c, qbar, l, d_eff, ODE_STEPS, steps);
    let (fine, _, _) = psi1_table(c, qbar, l, d_eff, 2 * ODE_STEPS, 2 * steps);
    let refinement_change = psi
        .iter()
        .enumerate()
        .map(|(k, v)| (v - fine[2 * k]).abs())
        .fold(0.0, f64::max);
    let closed_form_error = psi1_closed_form(c, qbar, l, d_eff, 0.0).map(|_| {
        psi.iter()
            .zip(&dpsi)
            .enumerate()
            .map(|(k, (v, dv))| {
                let (cv, cd) = psi1_closed_form(c, qbar, l, d_eff, k as f64 * step).unwrap();
                (v - cv).abs().max((dv - cd).abs())
            })
            .fold(0.0, f64::max)
    });
    let r_end = step * (psi.len() - 1) as f64;
    Ok(RadialProfile {
        kind: ProfileKind::PsiI,
        d_eff,
        interval: [0.0, r_end],
        boundary: [psi[0], *psi.last().unwrap()],
        refinement_change,
        closed_form_error,
        repr: Repr::Table {
            r0: 0.0,
            step,
            psi,
            dpsi,
            c2: c * c,
        },
    })
}

fn unchecked_psi1(c: f64, qbar: f64, l: f64, d_eff: f64, r_max: f64) -> RadialProfile {
    let (psi, dpsi, step) = psi1_table(c, qbar, l, d_eff, ODE_STEPS, psi1_steps(l, r_max));
    RadialProfile {
        kind: ProfileKind::PsiI,
        d_eff,
        interval: [0.0, step * (psi.len() - 1) as f64],
        boundary: [psi[0], *psi.last().unwrap()],
        refinement_change: 0.0,
        closed_form_error: None,
        repr: Repr::Table {
            r0: 0.0,
            step,
            psi,
            dpsi,
            c2: c * c,
        },
    }
}

pub fn solve_psi1(c: f64, qbar: f64, l: f64, d_eff: f64) -> Result<RadialProfile, ComparisonError> {
    solve_psi1_extended(c, qbar, l, d_eff, l)
}

/// RK4 for the harmonic basis `φ̃' = z`, `z' = −(d−1)z/r` from `φ̃(r_a) = 0`,
/// `z(r_a) = 1`; returns the gap to the exact `z = (r/r_a)^{1−d}` form after
/// fitting the boundary values.
fn harmonic_numeric_error(h: &Harmonic, ra: f64, rb: f64, steps: usize) -> f64 {
    let d = h.d_eff;
    let step = (rb - ra) / steps as f64;
    let f = |r: f64, z: f64| -(d - 1.0) * z / r;
    let (mut phi, mut z) = (0.0, 1.0);
    let mut table = vec![(ra, 0.0)];
    for k in 0..steps {
        let r = ra + k as f64 * step;
        let k1 = f(r, z);
        let k2 = f(r + 0.5 * step, z + 0.5 * step * k1);
        let k3 = f(r + 0.5 * step, z + 0.5 * step * k2);
        let k4 = f(r + step, z + step * k3);
        phi += step / 6.0 * (z + 2.0 * (z + 0.5 * step * k1) + 2.0 * (z + 0.5 * step * k2) + z + step * k3);
        z += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        table.push((r + step, phi));
    }
    let (va, vb) = (h.value(ra), h.value(rb));
    table
        .iter()
        .map(|&(r, p)| (va + (vb - va) * p / phi - h.value(r)).abs())
        .fold(0.0, f64::max)
}

fn harmonic_profile(kind: ProfileKind, h: Harmonic, ra: f64, rb: f64) -> RadialProfile {
    let coarse = harmonic_numeric_error(&h, ra, rb, ODE_STEPS);
    let fine = harmonic_numeric_error(&h, ra, rb, 2 * ODE_STEPS);
    RadialProfile {
        refinement_change: (coarse - fine).abs(),
        closed_form_error: Some(coarse),
        ..unchecked_harmonic(kind, h, ra, rb)
    }
}

fn unchecked_harmonic(kind: ProfileKind, h: Harmonic, ra: f64, rb: f64) -> RadialProfile {
    RadialProfile {
        kind,
        d_eff: h.d_eff,
        interval: [ra, rb],
        boundary: [h.value(ra), h.value(rb)],
        refinement_change: 0.0,
        closed_form_error: None,
        repr: Repr::Harmonic(h),
    }
}

/// Radial harmonic on `[L, L+l]` with `Ψ(L) = q̄`, `Ψ(L+l) = b`.
pub fn solve_psi2(
    qbar: f64,
    b: f64,
    l: f64,
    ll: f64,
    d_eff: f64,
) -> Result<RadialProfile, ComparisonError> {
    check_d(d_eff)?;
    if !(b > qbar) {
        return Err(ComparisonError::BadLevels { qbar, b });
    }
    if !(l > 0.0 && ll > 0.0) {
        return Err(ComparisonError::BadLengths { l, ll, delta: 0.0 });
    }
    let h = Harmonic::through(l, qbar, l + ll, b, d_eff);
    Ok(harmonic_profile(ProfileKind::PsiII, h, l, l + ll))
}

/// `(b−q̄)/l ≤ Ψ_II'(L) ≤ (b−q̄)(L+l)^{d−1}/(l L^{d−1})`.
pub fn psi2_slope_bounds(qbar: f64, b: f64, l: f64, ll: f64, d: f64) -> (f64, f64) {
    (
        (b - qbar) / ll,
        (b - qbar) * ((l + ll) / l).powf(d - 1.0) / ll,
    )
}

/// Radial harmonic on `[L−δ, L+δ]` with `Ψ(L−δ) = Ψ_I(L−δ)` and the
/// outer value chosen by `bc`.
pub fn solve_psi3(
    psi1: &RadialProfile,
    psi2: &RadialProfile,
    l: f64,
    delta: f64,
    d_eff: f64,
    bc: Psi3Bc,
) -> Result<RadialProfile, ComparisonError> {
    check_d(d_eff)?;
    if !(delta > 0.0 && delta < l) {
        return Err(ComparisonError::BadLengths { l, ll: 0.0, delta });
    }
    let inner = psi1.value(l - delta);
    let outer = match bc {
        Psi3Bc::Verbatim => psi2.value(l - delta),
        Psi3Bc::Matched => psi2.value(l + delta),
    };
    let h = Harmonic::through(l - delta, inner, l + delta, outer, d_eff);
    Ok(harmonic_profile(ProfileKind::PsiIII, h, l - delta, l + delta))
}

/// Search settings for [`find_step2_constants`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Step2Options {
    pub lambda: f64,
    pub bc: Psi3Bc,
    /// Radii sampled across the annulus for the pointwise chain check.
    pub annulus_samples: usize,
}

impl Default for Step2Options {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            bc: Psi3Bc::Verbatim,
            annulus_samples: 201,
        }
    }
}

/// Evaluation of the derivative chain at one `(L, δ)`.
#[derive(Debug, Clone, Serialize)]
pub struct ChainCheck {
    #[serde(rename = "L")]
    pub l: f64,
    pub delta: f64,
    /// `min (Ψ_I' − Ψ_III')` over the annulus.
    pub margin_upper: f64,
    /// `min (Ψ_III' − Ψ_II')` over the annulus.
    pub margin_lower: f64,
    pub target: f64,
    pub slope_psi1: f64,
    pub slope_psi2: f64,
    pub slope_psi3: f64,
    /// The two sufficient inequalities with `o(1)` and `O(δ)` replaced by
    /// the computed slopes.
    pub sufficient_lower: bool,
    pub sufficient_upper: bool,
    /// `q̄(1 − (½−λ)cδ)`.
    pub sandwich_bound: f64,
    /// `max Ψ_III` on `[L−δ, L]` and on `[L−δ, L+δ]`.
    pub sandwich_inner_max: f64,
    pub sandwich_annulus_max: f64,
    pub pass: bool,
}

impl ChainCheck {
    pub fn sandwich_inner_pass(&self) -> bool {
        self.sandwich_inner_max <= self.sandwich_bound
    }

    pub fn sandwich_annulus_pass(&self) -> bool {
        self.sandwich_annulus_max <= self.sandwich_bound
    }
}

/// Checks the chain at `(L, δ)` with `l = L`.
pub fn check_chain(
    c: f64,
    qbar: f64,
    b: f64,
    d_eff: f64,
    l: f64,
    delta: f64,
    opts: &Step2Options,
) -> Result<ChainCheck, ComparisonError> {
    let p1 = solve_psi1_extended(c, qbar, l, d_eff, l + delta)?;
    let p2 = solve_psi2(qbar, b, l, l, d_eff)?;
    let p3 = solve_psi3(&p1, &p2, l, delta, d_eff, opts.bc)?;
    Ok(chain_from_profiles(c, qbar, b, d_eff, l, delta, opts, &p1, &p2, &p3))
}

#[allow(clippy::too_many_arguments)]
fn chain_from_profiles(
    c: f64,
    qbar: f64,
    b: f64,
    d_eff: f64,
    l: f64,
    delta: f64,
    opts: &Step2Options,
    p1: &RadialProfile,
    p2: &RadialProfile,
    p3: &RadialProfile,
) -> ChainCheck {
    let target = (0.5 - opts.lambda) * c * qbar;
    let n = opts.annulus_samples.max(2);
    let mut upper = f64::INFINITY;
    let mut lower = f64::INFINITY;
    let mut inner_max = f64::NEG_INFINITY;
    let mut annulus_max = f64::NEG_INFINITY;
    for k in 0..n {
        let r = l - delta + 2.0 * delta * k as f64 / (n - 1) as f64;
        let (d1, d2, d3) = (p1.derivative(r), p2.derivative(r), p3.derivative(r));
        upper = upper.min(d1 - d3);
        lower = lower.min(d3 - d2);
        let v = p3.value(r);
        annulus_max = annulus_max.max(v);
        if r <= l * (1.0 + 1e-15) {
            inner_max = inner_max.max(v);
        }
    }
    let (s1, s2, s3) = (p1.derivative(l), p2.derivative(l), p3.derivative(l));
    let (_, s2_hi) = psi2_slope_bounds(qbar, b, l, l, d_eff);
    let lower_est = 0.5 * ((b - qbar) / l + s1) + (s3 - 0.5 * (s2 + s1));
    let upper_est = 0.5 * (s2_hi + s1) + (s3 - 0.5 * (s2 + s1));
    ChainCheck {
        l,
        delta,
        margin_upper: upper,
        margin_lower: lower,
        target,
        slope_psi1: s1,
        slope_psi2: s2,
        slope_psi3: s3,
        sufficient_lower: lower_est > s2_hi,
        sufficient_upper: upper_est < s1,
        sandwich_bound: qbar * (1.0 - target * delta / qbar),
        sandwich_inner_max: inner_max,
        sandwich_annulus_max: annulus_max,
        pass: upper >= target && lower >= target,
    }
}

/// Result of [`find_step2_constants`].
#[derive(Debug, Clone, Serialize)]
pub struct Step2Constants {
    pub c: f64,
    pub qbar: f64,
    pub b: f64,
    pub d_eff: f64,
    pub lambda: f64,
    pub bc: Psi3Bc,
    #[serde(rename = "L0")]
    pub l0: f64,
    /// `l = L`.
    pub l: f64,
    pub delta: f64,
    pub chain: ChainCheck,
}

fn delta_grid(l: f64) -> impl Iterator<Item = f64> {
    let top = (0.5 * l).min(1.0);
    (0..12).map(move |j| top * 0.5f64.powi(j))
}

/// Largest `δ` on the dyadic grid that passes at `L`, if any.
fn feasible(
    c: f64,
    qbar: f64,
    b: f64,
    d_eff: f64,
    l: f64,
    opts: &Step2Options,
) -> Result<Option<ChainCheck>, ComparisonError> {
    let top = (0.5 * l).min(1.0);
    let p1 = unchecked_psi1(c, qbar, l, d_eff, l + top);
    let p2 = unchecked_harmonic(
        ProfileKind::PsiII,
        Harmonic::through(l, qbar, 2.0 * l, b, d_eff),
        l,
        2.0 * l,
    );
    for delta in delta_grid(l) {
        let outer = match opts.bc {
            Psi3Bc::Verbatim => p2.value(l - delta),
            Psi3Bc::Matched => p2.value(l + delta),
        };
        let h3 = Harmonic::through(l - delta, p1.value(l - delta), l + delta, outer, d_eff);
        let p3 = unchecked_harmonic(ProfileKind::PsiIII, h3, l - delta, l + delta);
        let chk = chain_from_profiles(c, qbar, b, d_eff, l, delta, opts, &p1, &p2, &p3);
        if chk.pass {
            return Ok(Some(chk));
        }
    }
    Ok(None)
}

/// Smallest `L` (to relative resolution 1e-4) at which some `δ` makes both
/// chain margins at least `(½−λ)c q̄`, with `l = L`.
pub fn find_step2_constants(
    c: f64,
    qbar: f64,
    b: f64,
    d_eff: f64,
    opts: &Step2Options,
) -> Result<Step2Constants, ComparisonError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(ComparisonError::BadC(c));
    }
    if !(qbar > 0.0 && b > qbar) {
        return Err(ComparisonError::BadLevels { qbar, b });
    }
    check_d(d_eff)?;
    let regime = || ComparisonError::Regime {
        max: MAX_L,
        c,
        qbar,
        b,
        d_eff,
    };
    let mut prev = 0.0;
    let mut l = 0.1;
    let mut found = None;
    while l <= MAX_L {
        if let Some(chk) = feasible(c, qbar, b, d_eff, l, opts)? {
            found = Some((l, chk));
            break;
        }
        prev = l;
        l *= 1.1;
    }
    let (mut hi, mut best) = found.ok_or_else(regime)?;
    let mut lo = prev;
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        match feasible(c, qbar, b, d_eff, mid, opts)? {
            Some(chk) => {
                hi = mid;
                best = chk;
            }
            None => lo = mid,
        }
    }
    // Re-evaluate the reported chain with the checked profiles.
    let chain = check_chain(c, qbar, b, d_eff, hi, best.delta, opts)?;
    Ok(Step2Constants {
        c,
        qbar,
        b,
        d_eff,
        lambda: opts.lambda,
        bc: opts.bc,
        l0: hi,
        l: hi,
        delta: best.delta,
        chain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi1_one_dimensional_closed_form() {
        let p = solve_psi1(1.0, 0.3, 10.0, 1.0).unwrap();
        assert!(p.closed_form_error.unwrap() < 1e-9);
        assert!(p.refinement_change < 1e-8);
        assert!((p.derivative(10.0) - 0.3 * 10f64.tanh()).abs() < 1e-9);
        assert!((p.boundary[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn psi1_three_dimensional_closed_form() {
        let p = solve_psi1(2.0, 0.3, 7.0, 3.0).unwrap();
        assert!(p.closed_form_error.unwrap() < 1e-8, "{:?}", p.closed_form_error);
        let ratio = psi1_slope_ratio_closed(2.0, 7.0, 3.0).unwrap();
        assert!((p.derivative(7.0) / (2.0 * 0.3) - ratio).abs() < 1e-8);
    }

    #[test]
    fn psi1_harmonic_limit() {
        let p = solve_psi1(0.0, 0.3, 5.0, 2.0).unwrap();
        assert!(p.samples(11).iter().all(|s| (s[1] - 0.3).abs() < 1e-15 && s[2] == 0.0));
    }

    #[test]
    fn psi1_large_cl_is_finite() {
        let p = solve_psi1(100.0, 0.3, 10.0, 2.0).unwrap();
        assert!(p.samples(101).iter().all(|s| s[1].is_finite() && s[2].is_finite()));
        assert!((p.derivative(10.0) / 30.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn psi2_examples() {
        let p = solve_psi2(0.3, 1.5, 10.0, 10.0, 3.0).unwrap();
        assert!((p.derivative(10.0) - 0.24).abs() < 1e-12);
        assert!(p.closed_form_error.unwrap() < 1e-8);
        let line = solve_psi2(0.3, 1.5, 10.0, 4.0, 1.0).unwrap();
        assert!((line.derivative(10.0) - 1.2 / 4.0).abs() < 1e-15);
        let (lo, hi) = psi2_slope_bounds(0.3, 1.5, 10.0, 10.0, 3.0);
        assert!(lo <= 0.24 && 0.24 <= hi);
    }

    #[test]
    fn psi3_chord_in_one_dimension() {
        let p1 = solve_psi1_extended(1.0, 0.3, 10.0, 1.0, 11.0).unwrap();
        let p2 = solve_psi2(0.3, 1.5, 10.0, 10.0, 1.0).unwrap();
        let p3 = solve_psi3(&p1, &p2, 10.0, 0.5, 1.0, Psi3Bc::Verbatim).unwrap();
        let chord = (p2.value(9.5) - p1.value(9.5)) / 1.0;
        assert!((p3.derivative(10.0) - chord).abs() < 1e-12);
    }

    #[test]
    fn triple_well_bundle_has_constants() {
        let k = find_step2_constants(2.4, 0.3, 1.9, 2.0, &Step2Options::default()).unwrap();
        assert!(k.l0 > 1.0 && k.l0 < 100.0, "{k:?}");
        assert!(k.chain.margin_upper >= 0.25 * 2.4 * 0.3);
        assert!(k.chain.margin_lower >= 0.25 * 2.4 * 0.3);
        assert!(k.chain.sandwich_inner_pass());
    }

    #[test]
    fn degenerate_regimes_rejected() {
        let opts = Step2Options::default();
        assert_eq!(
            find_step2_constants(0.0, 0.3, 1.9, 2.0, &opts).unwrap_err(),
            ComparisonError::BadC(0.0)
        );
        assert!(matches!(
            find_step2_constants(1e-6, 0.3, 1.9, 2.0, &opts),
            Err(ComparisonError::Regime { .. })
        ));
    }
}
