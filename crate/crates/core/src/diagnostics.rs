//! Checks on computed fields: positivity, subharmonicity of `Q∘u`, the
//! exponential decay estimate, connection to the minima, the propagation
//! collar and the action.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::coxeter::{positivity_by_roots, Cone, OrbitData, ReflectionGroup};
use crate::flow::{discrete_action, euler_lagrange_residual, Problem, Symmetrizer};
use crate::grid::Field;
use crate::potential::{Evaluator, QFunction};
use crate::vecops::{dist, norm};

/// Fewest samples accepted by the decay fit.
pub const MIN_FIT_SAMPLES: usize = 30;
/// Smallest `q` kept by the decay fit.
pub const FIT_Q_FLOOR: f64 = 1e-8;
/// Default pass threshold for the subharmonicity minimum.
pub const SUBHARMONIC_TOL: f64 = 1e-4;
/// Fraction of `R` beyond which nodes are excluded from the decay fit.
pub const FIT_SHELL: f64 = 0.9;
/// Positivity threshold used as the subharmonicity precondition.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// `Q` values below this are excluded from subharmonicity (`Q` may be
/// nonsmooth at `a₁`).
pub const SUBHARMONIC_Q_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("decay fit needs at least {need} usable samples, found {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("connection check needs a1 != 0")]
    ZeroMinimum,
    #[error("lambda_frac must lie in (0, 1), got {0}")]
    LambdaFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `Σ` of edge and potential energies; see [`discrete_action`].
pub fn action(field: &Field, w: &dyn Evaluator) -> f64 {
    discrete_action(field, w)
}

/// Positivity in both forms: over all roots (`u(𝒫_r⁺) ⊂ 𝒫_r⁺`) and over
/// the walls of `D` restricted to `x ∈ D̄` (`u(D̄) ⊂ D̄`).
#[derive(Debug, Clone, Serialize)]
pub struct PositivitySummary {
    pub root_margin: f64,
    pub region_margin: f64,
    pub pass: bool,
}

pub fn positivity(field: &Field, group: &ReflectionGroup, region: &Cone) -> PositivitySummary {
    let grid = field.grid();
    let root_margin = positivity_by_roots(
        (0..grid.len()).map(|i| (grid.position(i), field.at(i))),
        group.roots(),
        0.0,
    )
    .margin;
    let mut region_margin = f64::INFINITY;
    for i in 0..grid.len() {
        if !region.contains(grid.position(i)) {
            continue;
        }
        let u = field.at(i);
        for w in region.walls() {
            region_margin = region_margin.min(w.dot(u));
        }
    }
    PositivitySummary {
        root_margin,
        region_margin,
        pass: root_margin.min(region_margin) >= -POSITIVITY_TOL,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubharmonicityReport {
    /// `min Δ_h Q(u)` over the evaluated nodes; absent when skipped.
    pub min: Option<f64>,
    pub nodes: usize,
    pub tol: f64,
    pub pass: bool,
    pub skipped: Option<String>,
}

/// Minimum of the discrete Laplacian of `x ↦ Q(f(x))` over interior nodes
/// of `D` where `Q > 1e-6`. Skipped when `f` is not positive.
pub fn check_subharmonicity(
    field: &Field,
    q: &dyn QFunction,
    group: &ReflectionGroup,
    region: &Cone,
    tol: f64,
) -> SubharmonicityReport {
    let pos = positivity(field, group, region);
    if !pos.pass {
        return SubharmonicityReport {
            min: None,
            nodes: 0,
            tol,
            pass: false,
            skipped: Some(format!(
                "positivity precondition fails (margin {:.3e}); ΔQ(u) ≥ 0 needs u(D̄) ⊂ D̄",
                pos.root_margin.min(pos.region_margin)
            )),
        };
    }
    let grid = field.grid();
    let qs: Vec<f64> = (0..grid.len()).map(|i| q.value(field.at(i))).collect();
    let scale = grid.laplacian_scale();
    let mut min = f64::INFINITY;
    let mut nodes = 0;
    for i in 0..grid.len() {
        if !grid.is_interior(i) || qs[i] <= SUBHARMONIC_Q_FLOOR {
            continue;
        }
        if !region.contains_strictly(grid.position(i), 0.0) {
            continue;
        }
        let lap: f64 = grid.neighbors(i).iter().map(|&j| qs[j as usize] - qs[i]).sum();
        min = min.min(lap * scale);
        nodes += 1;
    }
    let min = (nodes > 0).then_some(min);
    SubharmonicityReport {
        min,
        nodes,
        tol,
        pass: min.is_none_or(|m| m >= -tol),
        skipped: None,
    }
}

/// `q ≈ K e^{−k d}` fitted by least squares on `(d, ln q)`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub k: f64,
    #[serde(rename = "K")]
    pub amplitude: f64,
    pub r2: f64,
    /// `[min d, max d]` of the samples used.
    pub band: [f64; 2],
    pub samples: usize,
}

/// One `(d, q)` pair of the decay scatter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayPoint {
    pub d: f64,
    pub q: f64,
}

/// Least-squares fit on prepared samples.
pub fn fit_decay_samples(points: &[DecayPoint]) -> Result<DecayFit, DiagnosticsError> {
    if points.len() < MIN_FIT_SAMPLES {
        return Err(DiagnosticsError::InsufficientData {
            got: points.len(),
            need: MIN_FIT_SAMPLES,
        });
    }
    let m = points.len() as f64;
    let (mut sd, mut sy) = (0.0, 0.0);
    for p in points {
        sd += p.d;
        sy += p.q.ln();
    }
    let (md, my) = (sd / m, sy / m);
    let (mut sdd, mut sdy, mut syy) = (0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let dd = p.d - md;
        let dy = p.q.ln() - my;
        sdd += dd * dd;
        sdy += dd * dy;
        syy += dy * dy;
        lo = lo.min(p.d);
        hi = hi.max(p.d);
    }
    if sdd <= 0.0 {
        return Err(DiagnosticsError::InsufficientData {
            got: 1,
            need: MIN_FIT_SAMPLES,
        });
    }
    let slope = sdy / sdd;
    let intercept = my - slope * md;
    let r2 = if syy > 0.0 { sdy * sdy / (sdd * syy) } else { 1.0 };
    Ok(DecayFit {
        k: -slope,
        amplitude: intercept.exp(),
        r2,
        band: [lo, hi],
        samples: points.len(),
    })
}

/// Scatter `(d(x, ∂D_R), Q(f(x)))` used by [`fit_decay`]: nodes of `D`
/// with `|x| ≤ 0.9R` whose nearest boundary is a wall of `D`, `d ≥ eta`
/// and `Q ∈ [1e-8, qbar]`.
pub fn decay_points(
    field: &Field,
    q: &dyn QFunction,
    region: &Cone,
    eta: f64,
    qbar: f64,
) -> Vec<DecayPoint> {
    let grid = field.grid();
    let r = grid.radius();
    let mut out = Vec::new();
    for i in 0..grid.len() {
        let x = grid.position(i);
        let wd = region.wall_distance(x);
        if !wd.inside || norm(x) > FIT_SHELL * r {
            continue;
        }
        let rim = r - norm(x);
        if wd.distance > rim || wd.distance < eta {
            continue;
        }
        let qv = q.value(field.at(i));
        if (FIT_Q_FLOOR..=qbar).contains(&qv) {
            out.push(DecayPoint {
                d: wd.distance,
                q: qv,
            });
        }
    }
    out
}

pub fn fit_decay(
    field: &Field,
    q: &dyn QFunction,
    region: &Cone,
    eta: f64,
    qbar: f64,
) -> Result<DecayFit, DiagnosticsError> {
    fit_decay_samples(&decay_points(field, q, region, eta, qbar))
}

pub fn write_decay_csv<W: Write>(points: &[DecayPoint], mut w: W) -> Result<(), DiagnosticsError> {
    writeln!(w, "d,q,log_q")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.d, p.q, p.q.ln())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionSample {
    pub target: Vec<f64>,
    pub value: Vec<f64>,
    pub error: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionReport {
    pub lambda: f64,
    pub samples: Vec<ConnectionSample>,
    pub max_error: f64,
    /// `max_g |u(λ g a₁)|`; zero for the trivial solution.
    pub amplitude: f64,
}

/// `|u(λ g a₁/|a₁|) − g a₁|` for each orbit point, `λ = lambda_frac·R`.
pub fn check_connection(
    field: &Field,
    orbit: &OrbitData,
    lambda_frac: f64,
) -> Result<ConnectionReport, DiagnosticsError> {
    if !(lambda_frac > 0.0 && lambda_frac < 1.0) {
        return Err(DiagnosticsError::LambdaFraction(lambda_frac));
    }
    let scale = norm(&orbit.a1);
    if scale == 0.0 {
        return Err(DiagnosticsError::ZeroMinimum);
    }
    let lambda = lambda_frac * field.grid().radius() / scale;
    let mut samples = Vec::with_capacity(orbit.orbit.len());
    for target in &orbit.orbit {
        let x: Vec<f64> = target.iter().map(|v| lambda * v).collect();
        let (value, clipped) = field.sample(&x);
        samples.push(ConnectionSample {
            error: dist(&value, target),
            target: target.clone(),
            value,
            clipped,
        });
    }
    Ok(ConnectionReport {
        lambda,
        max_error: samples.iter().map(|s| s.error).fold(0.0, f64::max),
        amplitude: samples.iter().map(|s| norm(&s.value)).fold(0.0, f64::max),
        samples,
    })
}

/// Largest `d` among samples with `q > qbar`; zero when there are none.
pub fn propagation_collar_samples(points: &[DecayPoint], qbar: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.q > qbar)
        .map(|p| p.d)
        .fold(0.0, f64::max)
}

/// Smallest `w` with `Q(f(x)) ≤ qbar` on all nodes of `D ∩ B_R` at
/// distance at least `w` from `∂D_{B_R}`.
pub fn propagation_collar(field: &Field, q: &dyn QFunction, region: &Cone, qbar: f64) -> f64 {
    let grid = field.grid();
    let points: Vec<DecayPoint> = grid
        .node_wall_distances(region)
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| {
            d.map(|d| DecayPoint {
                d,
                q: q.value(field.at(i)),
            })
        })
        .collect();
    propagation_collar_samples(&points, qbar)
}

/// Options for [`diagnose`].
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsOptions {
    pub qbar: f64,
    pub lambda_frac: f64,
    pub subharmonic_tol: f64,
    /// Decay band offset; defaults to the collar width plus `2h`.
    pub eta: Option<f64>,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            qbar: 0.3,
            lambda_frac: 0.7,
            subharmonic_tol: SUBHARMONIC_TOL,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub positivity: PositivitySummary,
    pub equivariance_defect: f64,
    pub subharmonicity: SubharmonicityReport,
    pub decay: Option<DecayFit>,
    pub decay_error: Option<String>,
    pub eta: f64,
    pub action: f64,
    /// `J/Rⁿ⁻¹`.
    pub action_ratio: f64,
    pub connection: Option<ConnectionReport>,
    pub connection_error: Option<String>,
    pub collar_width: f64,
    pub residual: f64,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every check on `field`.
pub fn diagnose(field: &Field, problem: &Problem, opts: &DiagnosticsOptions) -> DiagnosticsReport {
    let q = problem.q.as_ref();
    let w = problem.potential.evaluator();
    let grid = field.grid();
    let collar = propagation_collar(field, q, &problem.region, opts.qbar);
    let eta = opts.eta.unwrap_or(collar + 2.0 * grid.spacing());
    let (decay, decay_error) = match fit_decay(field, q, &problem.region, eta, opts.qbar) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (connection, connection_error) =
        match check_connection(field, &problem.orbit, opts.lambda_frac) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let action = action(field, w);
    DiagnosticsReport {
        positivity: positivity(field, &problem.group, &problem.region),
        equivariance_defect: Symmetrizer::new(grid, &problem.group).defect(field),
        subharmonicity: check_subharmonicity(
            field,
            q,
            &problem.group,
            &problem.region,
            opts.subharmonic_tol,
        ),
        decay,
        decay_error,
        eta,
        action,
        action_ratio: action / grid.radius().powi(grid.dim() as i32 - 1),
        connection,
        connection_error,
        collar_width: collar,
        residual: euler_lagrange_residual(field, w),
    }
}
