//! Constrained gradient flow `u_t = Δu − W_u(u)` on the ball, started from
//! the equivariant map `u_aff`, with pointwise retraction on the ball
//! `C_R = B(x_R, L)`, periodic group averaging, and the final unconstrained
//! release.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coxeter::{positivity_by_roots, Cone, GroupError, OrbitData, Orthogonal, ReflectionGroup};
use crate::grid::{Field, Grid, GridError, Stencil};
use crate::potential::{Evaluator, PolarMap, Potential, PotentialError, QFunction, RadialQ};
use crate::vecops::{dist, norm};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("flow diverged at step {step}: |u| = {value} exceeds 10b")]
    Divergence { step: usize, value: f64 },
    #[error("Step-2 margin insufficient; increase L (max Q on C_R = {max_q}, qbar = {qbar})")]
    StepTwoMargin { max_q: f64, qbar: f64 },
}

/// Group, potential, placed minimum, `Q` and the cone `D`.
#[derive(Clone)]
pub struct Problem {
    pub group: ReflectionGroup,
    pub potential: Potential,
    pub q: Arc<dyn QFunction>,
    pub orbit: OrbitData,
    pub region: Cone,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("potential", &self.potential)
            .field("orbit", &self.orbit)
            .field("region", &self.region)
            .finish()
    }
}

impl Problem {
    /// Places `a1` (default: the first listed minimum) and uses `Q = |u − a₁|`.
    pub fn new(
        group: ReflectionGroup,
        potential: Potential,
        a1: Option<Vec<f64>>,
    ) -> Result<Self, FlowError> {
        let a1 = a1.unwrap_or_else(|| potential.minima()[0].clone());
        let q: Arc<dyn QFunction> = Arc::new(RadialQ::new(&a1));
        Self::with_q(group, potential, q)
    }

    /// Uses the base point of `q` as `a₁`.
    pub fn with_q(
        group: ReflectionGroup,
        potential: Potential,
        q: Arc<dyn QFunction>,
    ) -> Result<Self, FlowError> {
        let n = group.dim();
        if potential.dim() != n || q.dim() != n {
            return Err(FlowError::Config(format!(
                "dimensions disagree: group {n}, potential {}, Q {}",
                potential.dim(),
                q.dim()
            )));
        }
        let a1 = q.base().to_vec();
        let orbit = group.orbit_and_stabilizer(&a1)?;
        for p in &orbit.orbit {
            let g = potential.grad(p);
            if potential.value(p).abs() > 1e-10 || norm(&g) > 1e-10 {
                return Err(FlowError::Config(format!(
                    "orbit point {p:?} is not a zero of W"
                )));
            }
        }
        let region = group.region_d(&orbit)?;
        Ok(Self {
            group,
            potential,
            q,
            orbit,
            region,
        })
    }

    pub fn builtin(group: &str, potential: &str, a1: Option<Vec<f64>>) -> Result<Self, FlowError> {
        Self::new(
            ReflectionGroup::builtin(group)?,
            crate::potential::builtin_potential(potential)?,
            a1,
        )
    }

    pub fn a1(&self) -> &[f64] {
        &self.orbit.a1
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }
}

/// Parameters of one constrained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(rename = "R")]
    pub radius: f64,
    pub h: f64,
    pub dt: f64,
    pub qbar: f64,
    /// Radius `L` of the constraint ball `C_R`.
    #[serde(rename = "L")]
    pub ball_radius: f64,
    /// Unit direction `x₀` interior to `D`; `x_R = (R/2)·x₀`.
    pub x0: Vec<f64>,
    pub tol: f64,
    pub max_steps: usize,
    pub projection_period: usize,
    pub t_release: f64,
    pub log_every: usize,
    /// Zero disables checkpoints.
    pub checkpoint_every: usize,
}

impl FlowConfig {
    /// Defaults for radius `R` and spacing `h`.
    pub fn defaults(problem: &Problem, radius: f64, h: f64) -> Self {
        let n = problem.dim();
        let a1 = problem.a1();
        let x0: Vec<f64> = if norm(a1) > 0.0 {
            a1.iter().map(|v| v / norm(a1)).collect()
        } else {
            let t = problem.group.t();
            t.iter().map(|v| v / norm(t)).collect()
        };
        let dt = 0.2 * h * h / n as f64;
        let center: Vec<f64> = x0.iter().map(|v| 0.5 * radius * v).collect();
        let room = problem
            .region
            .wall_distance(&center)
            .distance
            .min(0.5 * radius);
        Self {
            radius,
            h,
            dt,
            qbar: 0.3f64.min(0.9 * problem.potential.r0()),
            ball_radius: (0.25 * radius).min(0.5 * room),
            x0,
            tol: 1e-6,
            max_steps: 5_000_000,
            projection_period: if n == 1 { 1 } else { 10 },
            t_release: 50.0 * dt,
            log_every: 1000,
            checkpoint_every: 0,
        }
    }

    /// `x_R = (R/2)·x₀`.
    pub fn center(&self) -> Vec<f64> {
        self.x0.iter().map(|v| 0.5 * self.radius * v).collect()
    }

    pub fn validate(&self, problem: &Problem) -> Result<(), FlowError> {
        let n = problem.dim();
        let bad = |m: String| Err(FlowError::Config(m));
        if self.x0.len() != n || (norm(&self.x0) - 1.0).abs() > 1e-9 {
            return bad(format!("x0 must be a unit vector in R^{n}"));
        }
        if !problem.region.contains_strictly(&self.x0, 0.0) {
            return bad("x0 must point into the interior of D".into());
        }
        if !(self.qbar > 0.0 && self.qbar < problem.potential.r0()) {
            return bad(format!(
                "need 0 < qbar < r0 (qbar = {}, r0 = {})",
                self.qbar,
                problem.potential.r0()
            ));
        }
        if !(self.h > 0.0) || !(self.radius / self.h >= 8.0) {
            return bad("need h > 0 and R/h >= 8".into());
        }
        if !(self.dt > 0.0) || self.dt > 0.25 * self.h * self.h / n as f64 * (1.0 + 1e-12) {
            return bad(format!("need 0 < dt <= h^2/(4n) (dt = {})", self.dt));
        }
        let c = self.center();
        let room = problem
            .region
            .wall_distance(&c)
            .distance
            .min(self.radius - norm(&c));
        if !(self.ball_radius > 0.0) || 2.0 * self.ball_radius > room * (1.0 + 1e-12) {
            return bad(format!(
                "ball B(x_R, 2L) must fit in D ∩ B_R (L = {}, room {room})",
                self.ball_radius
            ));
        }
        if !(self.tol > 0.0) || self.projection_period == 0 {
            return bad("tol and projection_period must be positive".into());
        }
        Ok(())
    }
}

/// Flag bits recorded per step.
pub mod step_flags {
    /// The retraction moved at least one node.
    pub const RETRACTED: u8 = 1;
    /// An interpolating group average was applied.
    pub const INTERPOLATED_PROJECTION: u8 = 2;
    /// An exact (lattice) group average was applied.
    pub const EXACT_PROJECTION: u8 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Constrained,
    Released,
}

/// Snapshot and histories of a run.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub stage: Stage,
    pub field: Field,
    /// `‖Δu − W_u(u)‖_∞` before each step (outside `C_R` while constrained).
    pub residual_history: Vec<f64>,
    /// Discrete action before each step.
    pub action_history: Vec<f64>,
    /// [`step_flags`] per step.
    pub step_flags: Vec<u8>,
    pub constraint_active_final: bool,
    pub max_constraint_q: f64,
    pub steps_taken: usize,
    /// Flow time at the end of the run (cumulative across stages).
    pub time: f64,
    pub converged: bool,
    pub final_residual: f64,
    /// Nodes where the polar retraction failed.
    pub retraction_failures: Vec<usize>,
}

/// Line record of the run log.
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub stage: Stage,
    pub step: usize,
    pub time: f64,
    pub residual: f64,
    pub action: f64,
    pub positivity_margin: f64,
}

/// Receives log records and checkpoints during a run.
pub trait FlowMonitor {
    fn on_log(&mut self, _record: &LogRecord) {}
    fn on_checkpoint(&mut self, _stage: Stage, _step: usize, _field: &Field) {}
}

/// Monitor that ignores everything.
pub struct Silent;

impl FlowMonitor for Silent {}

/// `u_aff(x) = g·min(d(gᵀx, ∂D), 1)·a₁` with `g` the chamber of `x`.
pub fn init_u_aff(grid: &Arc<Grid>, problem: &Problem) -> Field {
    let a1 = problem.a1().to_vec();
    let group = &problem.group;
    Field::from_fn(grid.clone(), grid.dim(), |x| {
        let g = &group.elements()[group.chamber_of(x)];
        let y = g.apply_transpose(x);
        let d = problem.region.wall_distance(&y).distance.min(1.0);
        g.apply(&a1.iter().map(|a| d * a).collect::<Vec<_>>())
    })
}

enum NodeMap {
    Permutation(Vec<u32>),
    Interpolated(Vec<Stencil>),
}

/// Group averaging `u ↦ |G|⁻¹ Σ_g g⁻¹ u(g·)` on a grid.
pub struct Symmetrizer {
    elements: Vec<Orthogonal>,
    inverses: Vec<Orthogonal>,
    maps: Vec<NodeMap>,
    lattice_count: usize,
}

impl Symmetrizer {
    pub fn new(grid: &Grid, group: &ReflectionGroup) -> Self {
        let mut maps = Vec::with_capacity(group.order());
        let mut lattice_count = 0;
        for g in group.elements() {
            match grid.lattice_permutation(g) {
                Some(p) => {
                    lattice_count += 1;
                    maps.push(NodeMap::Permutation(p));
                }
                None => maps.push(NodeMap::Interpolated(
                    (0..grid.len()).map(|i| grid.stencil(&g.apply(grid.position(i)))).collect(),
                )),
            }
        }
        Self {
            elements: group.elements().to_vec(),
            inverses: group.elements().iter().map(Orthogonal::transpose).collect(),
            maps,
            lattice_count,
        }
    }

    /// True when every element permutes the lattice.
    pub fn is_exact(&self) -> bool {
        self.lattice_count == self.elements.len()
    }

    pub fn lattice_count(&self) -> usize {
        self.lattice_count
    }

    /// Averages over all elements, or over the lattice subgroup only when
    /// `interpolate` is false.
    pub fn project_into(&self, values: &[f64], out: &mut [f64], interpolate: bool) {
        let n = self.elements[0].dim();
        let count = if interpolate {
            self.elements.len()
        } else {
            self.lattice_count
        };
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut tmp = vec![0.0; n];
        let mut back = vec![0.0; n];
        let nodes = values.len() / n;
        for (gt, map) in self.inverses.iter().zip(&self.maps) {
            match map {
                NodeMap::Permutation(p) => {
                    for (i, &j) in p.iter().enumerate() {
                        let j = j as usize;
                        gt.apply_into(&values[j * n..(j + 1) * n], &mut back);
                        for c in 0..n {
                            out[i * n + c] += inv * back[c];
                        }
                    }
                }
                NodeMap::Interpolated(_) if !interpolate => {}
                NodeMap::Interpolated(st) => {
                    for (i, s) in st.iter().enumerate().take(nodes) {
                        tmp.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..s.len {
                            let j = s.nodes[k] as usize;
                            for c in 0..n {
                                tmp[c] += s.weights[k] * values[j * n + c];
                            }
                        }
                        gt.apply_into(&tmp, &mut back);
                        for c in 0..n {
                            out[i * n + c] += inv * back[c];
                        }
                    }
                }
            }
        }
    }

    pub fn project(&self, field: &Field, interpolate: bool) -> Field {
        let mut out = vec![0.0; field.values().len()];
        self.project_into(field.values(), &mut out, interpolate);
        Field::new(field.grid().clone(), field.comps(), out).expect("same layout")
    }

    /// `max_{g,x} |u(g x) − g u(x)|` over nodes whose image sample is not clipped.
    pub fn defect(&self, field: &Field) -> f64 {
        let n = field.comps();
        let values = field.values();
        let mut worst: f64 = 0.0;
        let mut tmp = vec![0.0; n];
        let mut gu = vec![0.0; n];
        for (g, map) in self.elements.iter().zip(&self.maps) {
            for i in 0..field.grid().len() {
                match map {
                    NodeMap::Permutation(p) => {
                        tmp.copy_from_slice(field.at(p[i] as usize));
                    }
                    NodeMap::Interpolated(st) => {
                        let s = &st[i];
                        if s.clipped {
                            continue;
                        }
                        tmp.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..s.len {
                            let j = s.nodes[k] as usize;
                            for c in 0..n {
                                tmp[c] += s.weights[k] * values[j * n + c];
                            }
                        }
                    }
                }
                g.apply_into(field.at(i), &mut gu);
                worst = worst.max(dist(&tmp, &gu));
            }
        }
        worst
    }
}

/// One-shot group average with multilinear interpolation.
pub fn project_equivariant(field: &Field, group: &ReflectionGroup) -> Field {
    Symmetrizer::new(field.grid(), group).project(field, true)
}

/// Discrete action `Σ_edges ½ s|Δu|² V + Σ_nodes W(u) V` with `s` the
/// Laplacian scale and `V` the cell volume; its gradient flow is [`step`].
pub fn discrete_action(field: &Field, w: &dyn Evaluator) -> f64 {
    let grid = field.grid();
    let comps = field.comps();
    let scale = grid.laplacian_scale();
    let cell = grid.cell_volume();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let ui = field.at(i);
        let nb = grid.neighbors(i);
        let mut grad2 = 0.0;
        for &j in nb.iter().step_by(2) {
            let j = j as usize;
            let uj = field.at(j);
            for c in 0..comps {
                let d = uj[c] - ui[c];
                grad2 += d * d;
            }
        }
        total += (0.5 * grad2 * scale + w.value(ui)) * cell;
    }
    total
}

/// Min over roots `r` and nodes with `⟨x,r⟩ ≥ 0` of `⟨u(x), r⟩`.
pub fn positivity_margin(field: &Field, group: &ReflectionGroup) -> f64 {
    let grid = field.grid();
    positivity_by_roots(
        (0..grid.len()).map(|i| (grid.position(i), field.at(i))),
        group.roots(),
        0.0,
    )
    .margin
}

/// Moves `u` onto the level `{Q = qbar}` along its polar ray when `Q(u) > qbar`.
pub fn retract_point(q: &dyn QFunction, u: &[f64], qbar: f64) -> Result<Option<Vec<f64>>, PotentialError> {
    let level = q.value(u);
    if level <= qbar {
        return Ok(None);
    }
    PolarMap::new(q).transport(u, qbar).map(Some)
}

/// Retraction on the node set `nodes`; returns the largest displacement
/// and the nodes where the polar retraction failed.
pub fn retract_constraint(
    field: &mut Field,
    q: &dyn QFunction,
    qbar: f64,
    nodes: &[usize],
) -> (f64, Vec<usize>) {
    let n = field.comps();
    let mut moved: f64 = 0.0;
    let mut failed = Vec::new();
    for &i in nodes {
        if q.value(field.at(i)) <= qbar {
            continue;
        }
        let u = field.at(i).to_vec();
        match retract_point(q, &u, qbar) {
            Ok(Some(v)) => {
                moved = moved.max(dist(&u, &v));
                field.values_mut()[i * n..(i + 1) * n].copy_from_slice(&v);
            }
            Ok(None) => {}
            Err(_) => failed.push(i),
        }
    }
    (moved, failed)
}

/// Nodes of `C_R = B(x_R, L)`.
pub fn constraint_nodes(grid: &Grid, config: &FlowConfig) -> Vec<usize> {
    let c = config.center();
    (0..grid.len())
        .filter(|&i| dist(grid.position(i), &c) <= config.ball_radius * (1.0 + 1e-12))
        .collect()
}

struct StepOutput {
    residual: f64,
    action: f64,
    max_abs: f64,
}

/// One explicit step into `next`; residual is taken over nodes where `skip` is false.
fn euler_step<const N: usize>(
    grid: &Grid,
    w: &dyn Evaluator,
    u: &[f64],
    next: &mut [f64],
    dt: f64,
    skip: &[bool],
) -> StepOutput {
    let scale = grid.laplacian_scale();
    let cell = grid.cell_volume();
    let deg = grid.degree();
    let table = grid.neighbor_table();
    let mut residual: f64 = 0.0;
    let mut action = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut grad = [0.0; N];
    for i in 0..grid.len() {
        let mut ui = [0.0; N];
        ui.copy_from_slice(&u[i * N..(i + 1) * N]);
        let nb = &table[i * deg..(i + 1) * deg];
        let mut lap = [0.0; N];
        let mut edges = 0.0;
        for (k, &j) in nb.iter().enumerate() {
            let j = j as usize;
            for c in 0..N {
                let d = u[j * N + c] - ui[c];
                lap[c] += d;
                if k % 2 == 0 {
                    edges += d * d;
                }
            }
        }
        let wv = w.value_grad(&ui, &mut grad);
        action += (0.5 * edges * scale + wv) * cell;
        let mut r2 = 0.0;
        let mut m2 = 0.0;
        for c in 0..N {
            let r = lap[c] * scale - grad[c];
            r2 += r * r;
            let v = ui[c] + dt * r;
            next[i * N + c] = v;
            m2 += v * v;
        }
        if !skip[i] {
            residual = residual.max(r2.sqrt());
        }
        max_abs = max_abs.max(m2);
    }
    StepOutput {
        residual,
        action,
        max_abs: max_abs.sqrt(),
    }
}

fn step_dispatch(
    grid: &Grid,
    w: &dyn Evaluator,
    u: &[f64],
    next: &mut [f64],
    dt: f64,
    skip: &[bool],
) -> StepOutput {
    match grid.dim() {
        1 => euler_step::<1>(grid, w, u, next, dt, skip),
        2 => euler_step::<2>(grid, w, u, next, dt, skip),
        _ => euler_step::<3>(grid, w, u, next, dt, skip),
    }
}

/// Forward-Euler update `f + dt·(Δf − W_u(f))`.
pub fn step(field: &Field, w: &dyn Evaluator, dt: f64) -> Field {
    let mut next = vec![0.0; field.values().len()];
    let skip = vec![false; field.grid().len()];
    step_dispatch(field.grid(), w, field.values(), &mut next, dt, &skip);
    Field::new(field.grid().clone(), field.comps(), next).expect("same layout")
}

/// `‖Δu − W_u(u)‖_∞` over all nodes.
pub fn euler_lagrange_residual(field: &Field, w: &dyn Evaluator) -> f64 {
    let mut next = vec![0.0; field.values().len()];
    let skip = vec![false; field.grid().len()];
    step_dispatch(field.grid(), w, field.values(), &mut next, 0.0, &skip).residual
}

struct Runner<'a> {
    config: &'a FlowConfig,
    problem: &'a Problem,
    symmetrizer: Symmetrizer,
    cr: Vec<usize>,
    monitor: &'a mut dyn FlowMonitor,
}

impl Runner<'_> {
    /// Runs the flow from `field`; `constrained` toggles the retraction,
    /// `min_time` forces a minimum flow time before convergence is accepted.
    fn run(
        &mut self,
        mut field: Field,
        stage: Stage,
        start_time: f64,
        min_time: f64,
    ) -> Result<SolveResult, FlowError> {
        let cfg = self.config;
        let grid = field.grid().clone();
        let constrained = stage == Stage::Constrained;
        let w = self.problem.potential.evaluator();
        let q = self.problem.q.as_ref();
        let bound = 10.0 * self.problem.potential.bound_radius();
        let mut skip = vec![false; grid.len()];
        if constrained {
            for &i in &self.cr {
                skip[i] = true;
            }
        }
        let mut next = vec![0.0; field.values().len()];
        let mut residuals = Vec::new();
        let mut actions = Vec::new();
        let mut flags = Vec::new();
        let mut failures = Vec::new();
        let mut time = start_time;
        let mut converged = false;
        let mut last_residual = f64::INFINITY;
        let mut steps = 0;
        while steps < cfg.max_steps {
            let out = step_dispatch(&grid, w, field.values(), &mut next, cfg.dt, &skip);
            if !(out.max_abs <= bound) {
                return Err(FlowError::Divergence {
                    step: steps,
                    value: out.max_abs,
                });
            }
            field.swap_values(&mut next);
            time += cfg.dt;
            steps += 1;
            let mut flag = 0u8;
            let mut displacement = 0.0;
            if constrained {
                let (moved, failed) = retract_constraint(&mut field, q, cfg.qbar, &self.cr);
                displacement = moved;
                if moved > 0.0 {
                    flag |= step_flags::RETRACTED;
                }
                for f in failed {
                    if !failures.contains(&f) {
                        failures.push(f);
                    }
                }
            }
            if steps % cfg.projection_period == 0 {
                let interpolate = !self.symmetrizer.is_exact();
                self.symmetrizer.project_into(field.values(), &mut next, interpolate);
                field.swap_values(&mut next);
                flag |= if interpolate {
                    step_flags::INTERPOLATED_PROJECTION
                } else {
                    step_flags::EXACT_PROJECTION
                };
            }
            residuals.push(out.residual);
            actions.push(out.action);
            flags.push(flag);
            last_residual = out.residual;
            if cfg.log_every > 0 && (steps % cfg.log_every == 0 || steps == 1) {
                let record = LogRecord {
                    stage,
                    step: steps,
                    time,
                    residual: out.residual,
                    action: out.action,
                    positivity_margin: positivity_margin(&field, &self.problem.group),
                };
                self.monitor.on_log(&record);
            }
            if cfg.checkpoint_every > 0 && steps % cfg.checkpoint_every == 0 {
                self.monitor.on_checkpoint(stage, steps, &field);
            }
            if out.residual <= cfg.tol && displacement <= cfg.tol && time - start_time >= min_time {
                converged = true;
                break;
            }
        }
        let max_q = self
            .cr
            .iter()
            .map(|&i| q.value(field.at(i)))
            .fold(0.0, f64::max);
        let active = self
            .cr
            .iter()
            .any(|&i| q.value(field.at(i)) >= cfg.qbar - 1e-6);
        Ok(SolveResult {
            stage,
            field,
            residual_history: residuals,
            action_history: actions,
            step_flags: flags,
            constraint_active_final: active,
            max_constraint_q: max_q,
            steps_taken: steps,
            time,
            converged,
            final_residual: last_residual,
            retraction_failures: failures,
        })
    }
}

/// Constrained minimization by projected gradient flow from `u_aff`.
pub fn solve_constrained(
    config: &FlowConfig,
    problem: &Problem,
    monitor: &mut dyn FlowMonitor,
) -> Result<SolveResult, FlowError> {
    config.validate(problem)?;
    let grid = Arc::new(Grid::for_group(&problem.group, config.radius, config.h)?);
    let field = init_u_aff(&grid, problem);
    let mut runner = Runner {
        config,
        problem,
        symmetrizer: Symmetrizer::new(&grid, &problem.group),
        cr: constraint_nodes(&grid, config),
        monitor,
    };
    runner.run(field, Stage::Constrained, 0.0, 0.0)
}

/// Drops the constraint and flows for at least `t_release`, then until the
/// full residual meets the tolerance; the constraint must stay strictly
/// satisfied throughout.
pub fn release_and_flow(
    result: &SolveResult,
    config: &FlowConfig,
    problem: &Problem,
    monitor: &mut dyn FlowMonitor,
) -> Result<SolveResult, FlowError> {
    config.validate(problem)?;
    if result.max_constraint_q >= config.qbar {
        return Err(FlowError::StepTwoMargin {
            max_q: result.max_constraint_q,
            qbar: config.qbar,
        });
    }
    let grid = result.field.grid().clone();
    let mut runner = Runner {
        config,
        problem,
        symmetrizer: Symmetrizer::new(&grid, &problem.group),
        cr: constraint_nodes(&grid, config),
        monitor,
    };
    let out = runner.run(
        result.field.clone(),
        Stage::Released,
        result.time,
        config.t_release,
    )?;
    if out.max_constraint_q >= config.qbar {
        return Err(FlowError::StepTwoMargin {
            max_q: out.max_constraint_q,
            qbar: config.qbar,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple() -> Problem {
        Problem::builtin("dihedral-3", "triple-well-2d", None).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        for (g, p) in [
            ("Z2-line", "double-well-1d"),
            ("dihedral-3", "triple-well-2d"),
            ("A3-tetrahedral", "quadruple-well-3d"),
        ] {
            let problem = Problem::builtin(g, p, None).unwrap();
            let cfg = FlowConfig::defaults(&problem, 8.0, 0.25);
            cfg.validate(&problem).unwrap();
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let problem = triple();
        let base = FlowConfig::defaults(&problem, 8.0, 0.25);
        let mut c = base.clone();
        c.qbar = 0.5;
        assert!(c.validate(&problem).is_err());
        let mut c = base.clone();
        c.ball_radius = 2.0;
        assert!(c.validate(&problem).is_err());
        let mut c = base.clone();
        c.dt = 0.3 * c.h * c.h / 2.0;
        assert!(c.validate(&problem).is_err());
        let mut c = base;
        c.x0 = vec![0.0, 1.0];
        assert!(c.validate(&problem).is_err());
    }

    #[test]
    fn u_aff_values() {
        let problem = triple();
        let grid = Arc::new(Grid::new(2, 8.0, 0.25).unwrap());
        let f = init_u_aff(&grid, &problem);
        let deep = grid.node_at(&[20, 0]).unwrap();
        assert_eq!(f.at(deep), &[1.0, 0.0]);
        let origin = grid.node_at(&[0, 0]).unwrap();
        assert_eq!(f.at(origin), &[0.0, 0.0]);
        let west = grid.node_at(&[-20, 0]).unwrap();
        let v = f.at(west);
        // (−5, 0) lies deep in the a₂/a₃ interface region: on the mirror x₂ = 0.
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn minima_are_fixed_points() {
        let problem = triple();
        let grid = Arc::new(Grid::new(2, 4.0, 0.25).unwrap());
        for a in problem.potential.minima() {
            let f = Field::from_fn(grid.clone(), 2, |_| a.clone());
            let g = step(&f, problem.potential.evaluator(), 0.01);
            for (x, y) in f.values().iter().zip(g.values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let zero = Field::zeros(grid, 2);
        let g = step(&zero, problem.potential.evaluator(), 0.01);
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn retraction_examples() {
        let q = RadialQ::new(&[1.0, 0.0]);
        let grid = Arc::new(Grid::new(2, 2.0, 0.25).unwrap());
        let mut f = Field::from_fn(grid, 2, |x| if x[0] > 0.0 { vec![1.6, 0.0] } else { vec![1.1, 0.0] });
        let nodes: Vec<usize> = (0..f.grid().len()).collect();
        let (moved, failed) = retract_constraint(&mut f, &q, 0.3, &nodes);
        assert!(failed.is_empty());
        assert!((moved - 0.3).abs() < 1e-15);
        for i in 0..f.grid().len() {
            let qv = q.value(f.at(i));
            assert!(qv <= 0.3 + 1e-15);
        }
    }

    #[test]
    fn symmetrizer_averages_constants() {
        let problem = triple();
        let grid = Grid::new(2, 4.0, 0.25).unwrap();
        let sym = Symmetrizer::new(&grid, &problem.group);
        assert!(!sym.is_exact());
        let f = Field::from_fn(Arc::new(grid), 2, |_| vec![0.7, -0.2]);
        let p = sym.project(&f, true);
        // The D₃ average of a constant vector is zero.
        assert!(p.values().iter().all(|v| v.abs() < 1e-12));
        let half = sym.project(&f, false);
        // Lattice subgroup {Id, x₂ ↦ −x₂} keeps the first component only.
        assert!((half.at(0)[0] - 0.7).abs() < 1e-15 && half.at(0)[1].abs() < 1e-15);
    }
}
