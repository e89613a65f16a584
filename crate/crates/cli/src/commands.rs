//! The four subcommands. Each returns a serializable report whose `pass`
//! flag decides the exit status; hard errors propagate as `anyhow` errors.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use equilab_core::comparison::{
    find_step2_constants, solve_psi1, solve_psi2, solve_psi3, Step2Constants, Step2Options,
};
use equilab_core::coxeter::ReflectionGroup;
use equilab_core::diagnostics::{
    decay_points, diagnose, write_decay_csv, DiagnosticsOptions, DiagnosticsReport,
};
use equilab_core::flow::{
    release_and_flow, solve_constrained, FlowConfig, FlowMonitor, LogRecord, Problem, SolveResult,
    Stage,
};
use equilab_core::potential::{
    builtin_potential, check_invariance, check_polar_form, check_q_monotonicity, estimate_c,
    polar_form_samples, sample_region_ball, PolarMap, Potential, RadialQ,
};
use equilab_core::sampling::Sampler;
use equilab_core::Field;

use crate::config::{CheckSet, RunConfig};

/// Orbit points must be zeros of `W` and `W_u` to this accuracy.
pub const ZERO_TOL: f64 = 1e-10;
pub const INVARIANCE_TOL: f64 = 1e-12;
pub const POLAR_TOL: f64 = 1e-9;

/// One named pass/fail check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
            detail: None,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
            detail: None,
        }
    }

    fn failed(name: &str, detail: String) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            threshold: f64::NAN,
            pass: false,
            detail: Some(detail),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

pub fn failures(checks: &[Check]) -> Vec<String> {
    checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub orbit: Vec<Vec<f64>>,
    pub c_squared: Option<f64>,
    pub r0: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn verify_with(cfg: &RunConfig, group: &ReflectionGroup, potential: &Potential) -> Vec<Check> {
    let w = potential.evaluator();
    let n = potential.dim();
    let opts = &cfg.verify;
    let mut checks = Vec::new();
    let a1 = cfg
        .problem
        .a1
        .clone()
        .unwrap_or_else(|| potential.minima()[0].clone());

    let placed = group.fundamental_region().contains_with(&a1, 1e-12);
    checks.push(Check {
        name: "a1_in_fundamental_region".into(),
        value: if placed { 1.0 } else { 0.0 },
        threshold: 1.0,
        pass: placed,
        detail: None,
    });

    let orbit = match group.orbit_and_stabilizer(&a1) {
        Ok(o) => o,
        Err(e) => {
            checks.push(Check::failed("orbit", e.to_string()));
            return checks;
        }
    };
    let mut worst: f64 = 0.0;
    let mut g = vec![0.0; n];
    for p in &orbit.orbit {
        w.grad(p, &mut g);
        worst = worst.max(w.value(p).abs());
        worst = worst.max(g.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    }
    checks.push(Check::at_most("orbit_zeros", worst, ZERO_TOL));

    let mut sampler = Sampler::new(opts.seed);
    let half = potential.bound_radius();
    let samples: Vec<Vec<f64>> = (0..opts.samples).map(|_| sampler.in_cube(n, half)).collect();
    checks.push(Check::at_most(
        "invariance",
        check_invariance(w, group, &samples),
        INVARIANCE_TOL,
    ));

    let nd = estimate_c(w, &a1, potential.r0());
    checks.push(
        Check::at_least("nondegeneracy", nd.min_eigenvalue, f64::MIN_POSITIVE)
            .with_detail(format!("c = {}, r0 = {}", nd.c, nd.r0)),
    );

    let q = RadialQ::new(&a1);
    match group.region_d(&orbit) {
        Ok(region) => {
            let pts = sample_region_ball(&region, &a1, opts.q_ball, opts.samples, opts.seed);
            let mono = check_q_monotonicity(w, &q, &region, &pts);
            checks.push(
                Check::at_least("q_monotonicity", mono.min_dot, -1e-9)
                    .with_detail(format!("{} samples", mono.samples)),
            );
        }
        Err(e) => checks.push(Check::failed("q_monotonicity", e.to_string())),
    }

    let polar = PolarMap::new(&q);
    let pts = polar_form_samples(n, opts.polar_samples, (1e-3, 3.0), opts.seed);
    match check_polar_form(&polar, &pts) {
        Ok(min) if pts.is_empty() => checks.push(
            Check::at_least("polar_form", 0.0, -POLAR_TOL)
                .with_detail(format!("no tangent directions in dimension {n} (min = {min})")),
        ),
        Ok(min) => checks.push(Check::at_least("polar_form", min, -POLAR_TOL)),
        Err(e) => checks.push(Check::failed("polar_form", e.to_string())),
    }

    let qbar = cfg.flow.qbar.unwrap_or(0.3f64.min(0.9 * potential.r0()));
    checks.push(Check {
        name: "qbar_below_r0".into(),
        value: qbar,
        threshold: potential.r0(),
        pass: qbar < potential.r0(),
        detail: None,
    });
    checks
}

/// Hypothesis checks; does not require the orbit to consist of minima.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let group = cfg.group()?;
    let potential = builtin_potential(cfg.potential_key()?)?;
    anyhow::ensure!(
        group.dim() == potential.dim(),
        "group acts on R^{} but the potential is defined on R^{}",
        group.dim(),
        potential.dim()
    );
    let checks = verify_with(cfg, &group, &potential);
    let a1 = cfg
        .problem
        .a1
        .clone()
        .unwrap_or_else(|| potential.minima()[0].clone());
    let orbit = group
        .orbit_and_stabilizer(&a1)
        .map(|o| o.orbit)
        .unwrap_or_default();
    let nd = estimate_c(potential.evaluator(), &a1, 1e-6);
    Ok(VerifyReport {
        config: cfg.clone(),
        orbit,
        c_squared: Some(nd.min_eigenvalue),
        r0: potential.r0(),
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<VerifyReport> {
    let report = verify(cfg)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("verify.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- solve

/// Writes log records as JSON lines and checkpoints as CSV.
pub struct FileMonitor {
    log: BufWriter<File>,
    checkpoint_dir: PathBuf,
    error: Option<anyhow::Error>,
}

impl FileMonitor {
    pub fn new(dir: &Path) -> Result<Self> {
        let checkpoint_dir = dir.join("checkpoints");
        Ok(Self {
            log: create(&dir.join("log.jsonl"))?,
            checkpoint_dir,
            error: None,
        })
    }

    fn record(&mut self, r: Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<()> {
        self.log.flush()?;
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl FlowMonitor for FileMonitor {
    fn on_log(&mut self, record: &LogRecord) {
        let r = serde_json::to_string(record)
            .map_err(anyhow::Error::from)
            .and_then(|line| Ok(writeln!(self.log, "{line}")?));
        self.record(r);
    }

    fn on_checkpoint(&mut self, stage: Stage, step: usize, field: &Field) {
        let stage = match stage {
            Stage::Constrained => "constrained",
            Stage::Released => "released",
        };
        let dir = self.checkpoint_dir.clone();
        let r = (|| {
            fs::create_dir_all(&dir)?;
            let mut f = create(&dir.join(format!("{stage}-{step:09}.csv")))?;
            field.write_csv(&mut f)?;
            f.flush()?;
            Ok(())
        })();
        self.record(r);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub steps: usize,
    pub time: f64,
    pub converged: bool,
    pub final_residual: f64,
    pub constraint_active_final: bool,
    pub max_constraint_q: f64,
    pub retraction_failures: usize,
}

impl From<&SolveResult> for StageSummary {
    fn from(r: &SolveResult) -> Self {
        Self {
            steps: r.steps_taken,
            time: r.time,
            converged: r.converged,
            final_residual: r.final_residual,
            constraint_active_final: r.constraint_active_final,
            max_constraint_q: r.max_constraint_q,
            retraction_failures: r.retraction_failures.len(),
        }
    }
}

/// Outcome of the constrained solve, the release and the diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SolveOutcome {
    pub flow: FlowConfig,
    pub constrained: StageSummary,
    pub released: Option<StageSummary>,
    pub release_error: Option<String>,
    pub diagnostics: DiagnosticsReport,
    pub checks: Vec<Check>,
    pub pass: bool,
    #[serde(skip)]
    pub field: Field,
}

pub fn diagnostic_checks(
    cfg: &RunConfig,
    report: &DiagnosticsReport,
    converged: bool,
    released: bool,
) -> Vec<Check> {
    let d = &cfg.diagnostics;
    let mut checks = vec![
        Check {
            name: "converged".into(),
            value: report.residual,
            threshold: f64::NAN,
            pass: converged,
            detail: None,
        },
        Check {
            name: "constraint_released".into(),
            value: if released { 1.0 } else { 0.0 },
            threshold: 1.0,
            pass: released,
            detail: None,
        },
        Check::at_least(
            "positivity",
            report.positivity.root_margin.min(report.positivity.region_margin),
            -d.positivity_tol,
        ),
    ];
    match &report.connection {
        Some(c) => {
            checks.push(Check::at_most("connection", c.max_error, d.connection_tol));
            checks.push(
                Check::at_least("nontrivial", c.amplitude, 0.5 * cfg_min_norm(c))
                    .with_detail("max_g |u(lambda g a1)| compared with |a1|/2"),
            );
        }
        None => checks.push(Check::failed(
            "connection",
            report.connection_error.clone().unwrap_or_default(),
        )),
    }
    if d.checks == CheckSet::Full {
        let sub = &report.subharmonicity;
        checks.push(match sub.min {
            Some(m) => Check::at_least("subharmonicity", m, -d.subharmonic_tol),
            None => Check::at_least("subharmonicity", 0.0, -d.subharmonic_tol)
                .with_detail(sub.skipped.clone().unwrap_or_default()),
        });
        match &report.decay {
            Some(fit) => {
                checks.push(Check::at_least("decay_k", fit.k, f64::MIN_POSITIVE));
                checks.push(Check::at_least("decay_r2", fit.r2, d.min_r2));
            }
            None => checks.push(Check::failed(
                "decay_fit",
                report.decay_error.clone().unwrap_or_default(),
            )),
        }
    }
    checks
}

fn cfg_min_norm(c: &equilab_core::diagnostics::ConnectionReport) -> f64 {
    c.samples
        .iter()
        .map(|s| s.target.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn diagnostics_options(cfg: &RunConfig, flow: &FlowConfig) -> DiagnosticsOptions {
    DiagnosticsOptions {
        qbar: flow.qbar,
        lambda_frac: cfg.diagnostics.lambda_frac,
        subharmonic_tol: cfg.diagnostics.subharmonic_tol,
        eta: cfg.diagnostics.eta,
    }
}

/// Constrained solve, release and diagnostics at radius `radius`.
pub fn run_solve(
    cfg: &RunConfig,
    problem: &Problem,
    radius: f64,
    monitor: &mut dyn FlowMonitor,
) -> Result<SolveOutcome> {
    let flow = cfg.flow_config_at(problem, radius)?;
    let constrained = solve_constrained(&flow, problem, monitor)?;
    let (last, released, release_error) = if constrained.converged {
        match release_and_flow(&constrained, &flow, problem, monitor) {
            Ok(r) => {
                let s = StageSummary::from(&r);
                (r, Some(s), None)
            }
            Err(e) => (constrained.clone(), None, Some(e.to_string())),
        }
    } else {
        let msg = format!(
            "constrained stage did not converge in {} steps",
            constrained.steps_taken
        );
        (constrained.clone(), None, Some(msg))
    };
    let diagnostics = diagnose(&last.field, problem, &diagnostics_options(cfg, &flow));
    let released_ok = released
        .as_ref()
        .is_some_and(|r| !r.constraint_active_final);
    let mut checks = diagnostic_checks(cfg, &diagnostics, last.converged && released.is_some(), released_ok);
    if let Some(e) = &release_error {
        checks.push(Check::failed("release", e.clone()));
    }
    Ok(SolveOutcome {
        flow,
        constrained: StageSummary::from(&constrained),
        released,
        release_error,
        pass: checks.iter().all(|c| c.pass),
        checks,
        diagnostics,
        field: last.field,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<'a> {
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub outcome: &'a SolveOutcome,
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<SolveOutcome> {
    let problem = cfg.problem()?;
    fs::create_dir_all(out)?;
    let mut monitor = FileMonitor::new(out)?;
    let outcome = run_solve(cfg, &problem, cfg.flow.radius, &mut monitor);
    monitor.finish()?;
    let outcome = outcome?;

    let mut f = create(&out.join("field.csv"))?;
    outcome.field.write_csv(&mut f)?;
    f.flush()?;
    write_json(&out.join("field.json"), &outcome.field.header())?;
    let points = decay_points(
        &outcome.field,
        problem.q.as_ref(),
        &problem.region,
        outcome.diagnostics.eta,
        outcome.flow.qbar,
    );
    let mut f = create(&out.join("decay.csv"))?;
    write_decay_csv(&points, &mut f)?;
    f.flush()?;
    write_json(
        &out.join("diagnostics.json"),
        &SolveReport {
            config: cfg,
            outcome: &outcome,
        },
    )?;
    Ok(outcome)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "J")]
    pub action: Option<f64>,
    pub ratio: Option<f64>,
    pub k: Option<f64>,
    #[serde(rename = "K")]
    pub amplitude: Option<f64>,
    pub collar: Option<f64>,
    pub converged: bool,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: RunConfig,
    pub rows: Vec<SweepRow>,
    /// `max/min` of `J/Rⁿ⁻¹` over rows that converged.
    pub spread: Option<f64>,
    pub pass: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "R,J,J_over_R_n_minus_1,k,K,collar,converged,status")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.radius,
            opt(r.action),
            opt(r.ratio),
            opt(r.k),
            opt(r.amplitude),
            opt(r.collar),
            r.converged,
            r.status
        )?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, monitor: &mut dyn FlowMonitor) -> Result<SweepReport> {
    let problem = cfg.problem()?;
    anyhow::ensure!(!cfg.sweep.radii.is_empty(), "sweep.radii is empty");
    let mut rows = Vec::new();
    for &radius in &cfg.sweep.radii {
        let row = match run_solve(cfg, &problem, radius, monitor) {
            Ok(o) => {
                let d = &o.diagnostics;
                let failed = failures(&o.checks);
                SweepRow {
                    radius,
                    action: Some(d.action),
                    ratio: Some(d.action_ratio),
                    k: d.decay.as_ref().map(|f| f.k),
                    amplitude: d.decay.as_ref().map(|f| f.amplitude),
                    collar: Some(d.collar_width),
                    converged: o.released.as_ref().is_some_and(|r| r.converged),
                    status: if failed.is_empty() {
                        "ok".into()
                    } else {
                        format!("failed: {}", failed.join(" "))
                    },
                }
            }
            Err(e) => SweepRow {
                radius,
                action: None,
                ratio: None,
                k: None,
                amplitude: None,
                collar: None,
                converged: false,
                status: format!("error: {e}").replace(',', ";"),
            },
        };
        rows.push(row);
    }
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.converged)
        .filter_map(|r| r.ratio)
        .collect();
    let spread = if ratios.is_empty() {
        None
    } else {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(hi / lo)
    };
    Ok(SweepReport {
        config: cfg.clone(),
        pass: rows.iter().all(|r| r.status == "ok"),
        rows,
        spread,
    })
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepReport> {
    fs::create_dir_all(out)?;
    let mut monitor = FileMonitor::new(out)?;
    let report = sweep(cfg, &mut monitor);
    monitor.finish()?;
    let report = report?;
    let mut f = create(&out.join("sweep.csv"))?;
    write_sweep_csv(&report.rows, &mut f)?;
    f.flush()?;
    write_json(&out.join("sweep.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub d_eff: f64,
    pub constants: Option<Step2Constants>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config: RunConfig,
    pub c: f64,
    pub qbar: f64,
    pub b: f64,
    pub entries: Vec<CompareEntry>,
    pub pass: bool,
}

/// `(c, q̄, b, d_eff list)` after defaults.
pub fn compare_inputs(cfg: &RunConfig) -> Result<(f64, f64, f64, Vec<f64>)> {
    let s = &cfg.compare;
    let need_potential = s.c.is_none() || s.b.is_none() || s.d_eff.is_none();
    let potential = if need_potential {
        Some(builtin_potential(cfg.potential_key()?)?)
    } else {
        None
    };
    let qbar = s.qbar.or(cfg.flow.qbar).unwrap_or(0.3);
    // Ψ_I compares on {Q ≤ q̄}, so c is the convexity constant on B(a₁, q̄).
    let c = s.c.unwrap_or_else(|| {
        let p = potential.as_ref().expect("loaded");
        let a1 = cfg.problem.a1.clone().unwrap_or_else(|| p.minima()[0].clone());
        estimate_c(p.evaluator(), &a1, qbar).c
    });
    let b = s
        .b
        .unwrap_or_else(|| potential.as_ref().expect("loaded").bound_radius());
    let d_eff = s
        .d_eff
        .clone()
        .unwrap_or_else(|| vec![potential.as_ref().expect("loaded").dim() as f64]);
    Ok((c, qbar, b, d_eff))
}

fn write_profiles(out: &Path, k: &Step2Constants) -> Result<()> {
    let tag = format!("d{}", k.d_eff);
    let p1 = solve_psi1(k.c, k.qbar, k.l0, k.d_eff)?;
    let p2 = solve_psi2(k.qbar, k.b, k.l0, k.l, k.d_eff)?;
    let p3 = solve_psi3(&p1, &p2, k.l0, k.delta, k.d_eff, k.bc)?;
    for (name, p) in [("psi1", &p1), ("psi2", &p2), ("psi3", &p3)] {
        let mut f = create(&out.join(format!("{name}_{tag}.csv")))?;
        p.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

pub fn compare(cfg: &RunConfig) -> Result<CompareReport> {
    let (c, qbar, b, d_eff) = compare_inputs(cfg)?;
    let opts = Step2Options {
        lambda: cfg.compare.lambda,
        bc: cfg.compare.psi3_bc,
        ..Step2Options::default()
    };
    let entries: Vec<CompareEntry> = d_eff
        .iter()
        .map(|&d| match find_step2_constants(c, qbar, b, d, &opts) {
            Ok(k) => CompareEntry {
                d_eff: d,
                constants: Some(k),
                error: None,
            },
            Err(e) => CompareEntry {
                d_eff: d,
                constants: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(CompareReport {
        config: cfg.clone(),
        c,
        qbar,
        b,
        pass: entries.iter().all(|e| e.constants.is_some()),
        entries,
    })
}

pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<CompareReport> {
    let report = compare(cfg)?;
    fs::create_dir_all(out)?;
    for k in report.entries.iter().filter_map(|e| e.constants.as_ref()) {
        write_profiles(out, k)?;
    }
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}
