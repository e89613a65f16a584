//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values underneath. Exits nonzero on failure only when
//! `ACCEPTANCE_STRICT=1`, so known-unattainable checks stay visible
//! without breaking the workspace test run.

use std::f64::consts::SQRT_2;
use std::time::Instant;

use equilab::commands::{run_solve, verify, SolveOutcome};
use equilab::config::{load, RunConfig};
use equilab_core::comparison::{
    find_step2_constants, psi1_closed_form, psi2_slope_bounds, solve_psi1, solve_psi2,
    Step2Options,
};
use equilab_core::flow::{release_and_flow, solve_constrained, FlowConfig, Problem, Silent};
use equilab_core::potential::{builtin_potential, check_q_monotonicity, sample_region_ball};
use equilab_core::ReflectionGroup;

struct Criterion {
    id: u32,
    title: &'static str,
    budget: f64,
    started: Instant,
    lines: Vec<(bool, String)>,
}

impl Criterion {
    fn new(id: u32, title: &'static str, budget: f64) -> Self {
        Self {
            id,
            title,
            budget,
            started: Instant::now(),
            lines: Vec::new(),
        }
    }

    fn check(&mut self, pass: bool, line: impl Into<String>) {
        self.lines.push((pass, line.into()));
    }

    fn finish(mut self) -> bool {
        let secs = self.started.elapsed().as_secs_f64();
        self.check(
            secs <= self.budget,
            format!("runtime {secs:.1} s (budget {} s)", self.budget),
        );
        let pass = self.lines.iter().all(|(p, _)| *p);
        println!("{} {}. {}", tag(pass), self.id, self.title);
        for (p, line) in &self.lines {
            println!("      {} {line}", tag(*p));
        }
        pass
    }
}

fn tag(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn preset(name: &str, overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    load(Some(name), None, &o).expect("preset loads")
}

fn solve_preset(cfg: &RunConfig, radius: f64) -> Result<SolveOutcome, String> {
    let problem = cfg.problem().map_err(|e| e.to_string())?;
    run_solve(cfg, &problem, radius, &mut Silent).map_err(|e| format!("{e:#}"))
}

fn group_algebra() -> bool {
    let mut c = Criterion::new(1, "Group algebra exactness", 1.0);
    for (key, order) in [("dihedral-3", 6), ("B3-cube", 48)] {
        let g = ReflectionGroup::builtin(key).unwrap();
        c.check(g.order() == order, format!("{key} order = {} (expected {order})", g.order()));
    }
    let cube = ReflectionGroup::builtin("B3-cube").unwrap();
    let placements: [(&str, [f64; 3], usize); 6] = [
        ("edge s3", [0.0, 0.0, 1.0], 6),
        ("edge s1", [1.0, 1.0, 1.0], 8),
        ("edge s2", [0.0, 1.0, 1.0], 12),
        ("face interior", [0.0, 1.0, 2.0], 24),
        ("region interior", [1.0, 2.0, 3.0], 48),
        ("origin", [0.0, 0.0, 0.0], 1),
    ];
    for (label, a1, n) in placements {
        let got = cube.orbit_and_stabilizer(&a1).map(|o| o.n_minima);
        c.check(got == Ok(n), format!("cube placement {label}: N = {got:?} (expected {n})"));
    }
    c.finish()
}

/// Smallest eigenvalue of a central-difference Hessian of `W` alone.
fn fd_min_eigenvalue(f: impl Fn(&[f64]) -> f64, a: &[f64]) -> f64 {
    let e = 1e-4;
    let v = |dx: f64, dy: f64| f(&[a[0] + dx, a[1] + dy]);
    let hxx = (v(e, 0.0) - 2.0 * v(0.0, 0.0) + v(-e, 0.0)) / (e * e);
    let hyy = (v(0.0, e) - 2.0 * v(0.0, 0.0) + v(0.0, -e)) / (e * e);
    let hxy = (v(e, e) - v(e, -e) - v(-e, e) + v(-e, -e)) / (4.0 * e * e);
    let mean = 0.5 * (hxx + hyy);
    let rad = (0.25 * (hxx - hyy).powi(2) + hxy * hxy).sqrt();
    mean - rad
}

fn hypotheses() -> bool {
    let mut c = Criterion::new(2, "Hypothesis verification", 10.0);
    for name in ["triple-junction-2d", "quadruple-junction-3d"] {
        let cfg = preset(name, &[]);
        let report = verify(&cfg).expect("verify runs");
        for key in ["orbit_zeros", "invariance"] {
            let chk = report.checks.iter().find(|k| k.name == key).unwrap();
            c.check(
                chk.pass,
                format!("{name}: {key} = {:.3e} (<= {:.0e})", chk.value, chk.threshold),
            );
        }
        let problem = cfg.problem().unwrap();
        let pts = sample_region_ball(&problem.region, problem.a1(), 3.0, 10_000, 11);
        let mono = check_q_monotonicity(
            problem.potential.evaluator(),
            problem.q.as_ref(),
            &problem.region,
            &pts,
        );
        c.check(
            mono.samples == 10_000 && mono.min_dot >= -1e-9,
            format!(
                "{name}: Q-monotonicity min dot = {:.3e} on {} samples (>= -1e-9)",
                mono.min_dot, mono.samples
            ),
        );
    }
    let w = builtin_potential("triple-well-2d").unwrap();
    let a1 = w.minima()[0].clone();
    let analytic = w.local_c().powi(2);
    let oracle = fd_min_eigenvalue(|u| w.value(u), &a1);
    c.check(
        (analytic - 6.0).abs() <= 1e-6 && (analytic - oracle).abs() <= 1e-6,
        format!("triple-well c^2 at a1 = {analytic:.9} (finite-difference oracle {oracle:.9}, expected 6 +- 1e-6)"),
    );
    c.finish()
}

fn heteroclinic() -> bool {
    let mut c = Criterion::new(3, "1D heteroclinic oracle", 60.0);
    let cfg = preset("heteroclinic-1d", &[]);
    match solve_preset(&cfg, cfg.flow.radius) {
        Ok(out) => {
            c.check(out.pass, format!("solve checks pass (residual {:.2e})", out.diagnostics.residual));
            let grid = out.field.grid().clone();
            let sup = (0..grid.len())
                .map(|i| (out.field.at(i)[0] - (grid.position(i)[0] / SQRT_2).tanh()).abs())
                .fold(0.0, f64::max);
            c.check(sup <= 1e-3, format!("sup |u - tanh(x/sqrt2)| = {sup:.3e} (<= 1e-3)"));
            match &out.diagnostics.decay {
                Some(fit) => {
                    let rel = (fit.k - SQRT_2).abs() / SQRT_2;
                    c.check(rel <= 0.05, format!("decay k = {:.5} ({:.2}% from sqrt2, <= 5%)", fit.k, 100.0 * rel));
                }
                None => c.check(false, "decay fit failed"),
            }
            let exact = 2.0 * SQRT_2 / 3.0;
            let j = out.diagnostics.action;
            c.check(
                (j - exact).abs() <= 1e-3,
                format!("action = {j:.7} (2sqrt2/3 = {exact:.7}, tol 1e-3)"),
            );
        }
        Err(e) => c.check(false, format!("solve failed: {e}")),
    }
    c.finish()
}

fn triple_junction(c4: &mut Criterion) -> Option<SolveOutcome> {
    let cfg = preset("triple-junction-2d", &[]);
    let out = match solve_preset(&cfg, 16.0) {
        Ok(o) => o,
        Err(e) => {
            c4.check(false, format!("solve failed: {e}"));
            return None;
        }
    };
    let d = &out.diagnostics;
    let released = out.released.as_ref();
    c4.check(
        released.is_some_and(|r| r.converged) && d.residual <= 1e-6,
        format!("converged, residual = {:.3e} (<= 1e-6)", d.residual),
    );
    let margin = d.positivity.root_margin.min(d.positivity.region_margin);
    c4.check(margin >= -1e-8, format!("positivity margin = {margin:.3e} (>= -1e-8)"));
    c4.check(
        released.is_some_and(|r| !r.constraint_active_final),
        format!(
            "constraint released: active_final = {:?}, max Q on C_R = {:?}",
            released.map(|r| r.constraint_active_final),
            released.map(|r| r.max_constraint_q)
        ),
    );
    let sub = d.subharmonicity.min;
    c4.check(
        sub.is_some_and(|m| m >= -1e-4),
        format!("subharmonicity min = {sub:?} (>= -1e-4)"),
    );
    match &d.decay {
        Some(fit) => c4.check(
            fit.k > 0.0 && fit.r2 >= 0.9,
            format!("decay k = {:.4}, K = {:.4}, r^2 = {:.5} (k > 0, r^2 >= 0.9)", fit.k, fit.amplitude, fit.r2),
        ),
        None => c4.check(false, format!("decay fit failed: {:?}", d.decay_error)),
    }
    match &d.connection {
        Some(conn) => {
            for s in &conn.samples {
                c4.check(
                    s.error <= 0.05,
                    format!("connection to {:?}: error {:.3e} (<= 0.05)", s.target, s.error),
                );
            }
            c4.check(
                conn.amplitude >= 0.5,
                format!("nontrivial: max_g |u(lambda g a1)| = {:.4} (>= 0.5)", conn.amplitude),
            );
        }
        None => c4.check(false, format!("connection check failed: {:?}", d.connection_error)),
    }
    Some(out)
}

fn action_scaling(r16: Option<&SolveOutcome>) -> bool {
    let mut c = Criterion::new(5, "Action scaling J/R^(n-1) over R in {8, 12, 16}", 45.0 * 60.0);
    let cfg = preset("triple-junction-2d", &[]);
    let mut ratios = Vec::new();
    for radius in [8.0, 12.0] {
        match solve_preset(&cfg, radius) {
            Ok(o) if o.pass => {
                c.check(true, format!("R = {radius}: J = {:.4}, J/R = {:.4}", o.diagnostics.action, o.diagnostics.action_ratio));
                ratios.push(o.diagnostics.action_ratio);
            }
            Ok(o) => c.check(false, format!("R = {radius}: run checks failed {:?}", equilab::commands::failures(&o.checks))),
            Err(e) => c.check(false, format!("R = {radius}: {e}")),
        }
    }
    match r16 {
        Some(o) if o.pass => {
            c.check(true, format!("R = 16: J = {:.4}, J/R = {:.4} (run of criterion 4)", o.diagnostics.action, o.diagnostics.action_ratio));
            ratios.push(o.diagnostics.action_ratio);
        }
        _ => c.check(false, "R = 16: run of criterion 4 unavailable"),
    }
    if ratios.len() == 3 {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        c.check(hi / lo <= 1.5, format!("spread max/min = {:.4} (<= 1.5)", hi / lo));
    }
    c.finish()
}

/// Constrained solve and release with `L` at least the comparison `L₀`.
fn release_cross_check(c: &mut Criterion, problem: &Problem, radius: f64, h: f64, l: f64, label: &str) {
    let mut cfg = FlowConfig::defaults(problem, radius, h);
    cfg.ball_radius = l;
    cfg.qbar = 0.3;
    cfg.log_every = 0;
    if let Err(e) = cfg.validate(problem) {
        c.check(false, format!("{label}: config rejected: {e}"));
        return;
    }
    let result = solve_constrained(&cfg, problem, &mut Silent)
        .and_then(|r| release_and_flow(&r, &cfg, problem, &mut Silent));
    match result {
        Ok(r) => c.check(
            r.converged && !r.constraint_active_final,
            format!(
                "{label}: R = {radius}, L = {l:.3}: converged = {}, constraint active after release = {}, max Q on C_R = {:.3e}",
                r.converged, r.constraint_active_final, r.max_constraint_q
            ),
        ),
        Err(e) => c.check(false, format!("{label}: {e}")),
    }
}

fn comparison() -> bool {
    let mut c = Criterion::new(6, "Comparison harness", 60.0);
    let (cc, qbar, b) = (2.4, 0.3, 1.9);
    let l = 10.0 / cc;
    for d in [1.0, 3.0] {
        let p = solve_psi1(cc, qbar, l, d).unwrap();
        let ratio = p.derivative(l) / (cc * qbar);
        let closed = psi1_closed_form(cc, qbar, l, d, l).unwrap().1 / (cc * qbar);
        c.check(
            (0.97..=1.03).contains(&ratio),
            format!("d_eff = {d}, cL = 10: Psi_I'(L)/(c qbar) = {ratio:.6} (in [0.97, 1.03])"),
        );
        c.check(
            (ratio - closed).abs() <= 1e-8,
            format!("d_eff = {d}: closed-form ratio {closed:.10}, gap {:.2e} (<= 1e-8)", (ratio - closed).abs()),
        );
    }
    match find_step2_constants(cc, qbar, b, 2.0, &Step2Options::default()) {
        Ok(k) => {
            let target = 0.25 * cc * qbar;
            c.check(
                k.l0.is_finite() && k.delta.is_finite() && k.delta > 0.0,
                format!("bundle (c, qbar, b) = (2.4, 0.3, 1.9), d_eff = 2: L0 = {:.4}, delta = {:.3e}", k.l0, k.delta),
            );
            c.check(
                k.chain.margin_upper >= target && k.chain.margin_lower >= target,
                format!(
                    "chain margins {:.4e} / {:.4e} (>= c qbar/4 = {target:.4e})",
                    k.chain.margin_upper, k.chain.margin_lower
                ),
            );
            let p2 = solve_psi2(qbar, b, k.l0, k.l, 2.0).unwrap();
            let slope = p2.derivative(k.l0);
            let (lo, hi) = psi2_slope_bounds(qbar, b, k.l0, k.l, 2.0);
            c.check(
                lo <= slope && slope <= hi,
                format!("Psi_II'(L) = {slope:.6e} within [{lo:.6e}, {hi:.6e}]"),
            );
            let problem = Problem::builtin("dihedral-3", "triple-well-2d", None).unwrap();
            release_cross_check(&mut c, &problem, 4.7 * k.l0, 0.5, k.l0, "2D triple-well");
        }
        Err(e) => c.check(false, format!("find_step2_constants failed: {e}")),
    }
    match find_step2_constants(SQRT_2, qbar, 1.7, 1.0, &Step2Options::default()) {
        Ok(k) => {
            let problem = Problem::builtin("Z2-line", "double-well-1d", None).unwrap();
            release_cross_check(&mut c, &problem, (4.0 * k.l0).ceil() + 1.0, 0.05, k.l0, "1D double-well");
        }
        Err(e) => c.check(false, format!("1D find_step2_constants failed: {e}")),
    }
    c.finish()
}

fn quadruple_junction() -> bool {
    let mut c = Criterion::new(7, "3D quadruple-junction smoke test", 30.0 * 60.0);
    let cfg = preset("quadruple-junction-3d", &[]);
    match solve_preset(&cfg, 8.0) {
        Ok(out) => {
            let d = &out.diagnostics;
            c.check(
                out.released.as_ref().is_some_and(|r| r.converged),
                format!("converged, residual = {:.3e}", d.residual),
            );
            let margin = d.positivity.root_margin.min(d.positivity.region_margin);
            c.check(margin >= -1e-6, format!("positivity margin = {margin:.3e} (>= -1e-6)"));
            match &d.connection {
                Some(conn) => {
                    for s in &conn.samples {
                        c.check(
                            s.error <= 0.15,
                            format!("connection to {:?}: error {:.3e} (<= 0.15)", s.target, s.error),
                        );
                    }
                }
                None => c.check(false, format!("connection check failed: {:?}", d.connection_error)),
            }
        }
        Err(e) => c.check(false, format!("solve failed: {e}")),
    }
    c.finish()
}

fn main() {
    let mut results = vec![group_algebra(), hypotheses(), heteroclinic()];
    let mut c4 = Criterion::new(4, "2D triple-junction (R = 16, h = 0.1)", 15.0 * 60.0);
    let r16 = triple_junction(&mut c4);
    results.push(c4.finish());
    results.push(action_scaling(r16.as_ref()));
    results.push(comparison());
    results.push(quadruple_junction());
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
