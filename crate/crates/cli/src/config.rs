//! Run configuration: TOML with dotted sections, built-in presets and
//! `key=value` overrides, resolved into core problem and flow settings.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use equilab_core::comparison::Psi3Bc;
use equilab_core::flow::{FlowConfig, Problem};
use equilab_core::potential::builtin_potential;
use equilab_core::ReflectionGroup;

pub const PRESETS: [&str; 3] = ["heteroclinic-1d", "triple-junction-2d", "quadruple-junction-3d"];

const HETEROCLINIC_1D: &str = r#"
[problem]
group = "Z2-line"
potential = "double-well-1d"

[flow]
R = 10.0
h = 0.01
qbar = 0.3
L = 2.0
tol = 1e-8
"#;

const TRIPLE_JUNCTION_2D: &str = r#"
[problem]
group = "dihedral-3"
potential = "triple-well-2d"

[flow]
R = 16.0
h = 0.1
qbar = 0.3
"#;

const QUADRUPLE_JUNCTION_3D: &str = r#"
[problem]
group = "A3-tetrahedral"
potential = "quadruple-well-3d"

[flow]
R = 8.0
h = 0.25
qbar = 0.3

[diagnostics]
checks = "smoke"
connection_tol = 0.15
positivity_tol = 1e-6

[sweep]
radii = [6.0, 8.0]
"#;

pub fn preset_source(name: &str) -> Result<&'static str> {
    Ok(match name {
        "heteroclinic-1d" => HETEROCLINIC_1D,
        "triple-junction-2d" => TRIPLE_JUNCTION_2D,
        "quadruple-junction-3d" => QUADRUPLE_JUNCTION_3D,
        _ => bail!("unknown preset {name:?} (known: {})", PRESETS.join(", ")),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub group: Option<String>,
    /// Fundamental roots, used when `group` is absent.
    pub roots: Option<Vec<Vec<f64>>>,
    pub potential: Option<String>,
    pub a1: Option<Vec<f64>>,
    #[serde(default = "default_q")]
    pub q: String,
}

fn default_q() -> String {
    "radial".into()
}

/// Flow settings; absent entries take the solver defaults for the chosen `R`, `h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(rename = "R")]
    pub radius: f64,
    pub h: f64,
    pub dt: Option<f64>,
    pub qbar: Option<f64>,
    #[serde(rename = "L")]
    pub ball_radius: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub projection_period: Option<usize>,
    pub t_release: Option<f64>,
    pub log_every: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            radius: 16.0,
            h: 0.1,
            dt: None,
            qbar: None,
            ball_radius: None,
            x0: None,
            tol: None,
            max_steps: None,
            projection_period: None,
            t_release: None,
            log_every: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CheckSet {
    #[default]
    Full,
    /// Positivity and connection only.
    Smoke,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub checks: CheckSet,
    pub lambda_frac: f64,
    pub connection_tol: f64,
    pub positivity_tol: f64,
    pub subharmonic_tol: f64,
    pub min_r2: f64,
    pub eta: Option<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            checks: CheckSet::Full,
            lambda_frac: 0.7,
            connection_tol: 0.05,
            positivity_tol: 1e-8,
            subharmonic_tol: 1e-4,
            min_r2: 0.9,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub samples: usize,
    pub seed: u64,
    /// Radius of the ball around `a₁` sampled for `Q`-monotonicity.
    pub q_ball: f64,
    pub polar_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 1,
            q_ball: 3.0,
            polar_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub radii: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            radii: vec![8.0, 12.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Defaults to the nondegeneracy constant on `B(a₁, q̄)`.
    pub c: Option<f64>,
    /// Defaults to the flow's `qbar`.
    pub qbar: Option<f64>,
    /// Defaults to the potential's bound radius.
    pub b: Option<f64>,
    /// Defaults to the spatial dimension.
    pub d_eff: Option<Vec<f64>>,
    pub lambda: f64,
    pub psi3_bc: Psi3Bc,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            c: None,
            qbar: None,
            b: None,
            d_eff: None,
            lambda: 0.25,
            psi3_bc: Psi3Bc::Verbatim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub compare: CompareSection,
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Parses `section.key=value`; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {} crosses a non-table", path.join(".")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Preset, then file, then overrides.
pub fn load(preset: Option<&str>, file: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = Table::new();
    if let Some(name) = preset {
        merge(&mut table, preset_source(name)?.parse::<Table>()?);
    }
    if let Some(text) = file {
        merge(&mut table, text.parse::<Table>().context("config is not valid TOML")?);
    }
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        set_path(&mut table, &path, value)?;
    }
    Value::Table(table)
        .try_into()
        .context("config does not match the expected sections")
}

impl RunConfig {
    pub fn group(&self) -> Result<ReflectionGroup> {
        match (&self.problem.group, &self.problem.roots) {
            (Some(key), None) => Ok(ReflectionGroup::builtin(key)?),
            (None, Some(roots)) => Ok(ReflectionGroup::from_root_coordinates(roots)?),
            (Some(_), Some(_)) => bail!("give either problem.group or problem.roots, not both"),
            (None, None) => bail!("problem.group (or problem.roots) is required"),
        }
    }

    pub fn potential_key(&self) -> Result<&str> {
        self.problem
            .potential
            .as_deref()
            .ok_or_else(|| anyhow!("problem.potential is required"))
    }

    pub fn problem(&self) -> Result<Problem> {
        if self.problem.q != "radial" {
            bail!("problem.q = {:?} is not supported (known: radial)", self.problem.q);
        }
        let group = self.group()?;
        let potential = builtin_potential(self.potential_key()?)?;
        if group.dim() != potential.dim() {
            bail!(
                "group acts on R^{} but the potential is defined on R^{}",
                group.dim(),
                potential.dim()
            );
        }
        Ok(Problem::new(group, potential, self.problem.a1.clone())?)
    }

    /// Flow settings at radius `radius` (the sweep varies only `R`).
    pub fn flow_config_at(&self, problem: &Problem, radius: f64) -> Result<FlowConfig> {
        let f = &self.flow;
        let mut cfg = FlowConfig::defaults(problem, radius, f.h);
        if let Some(v) = f.dt {
            cfg.dt = v;
        }
        if let Some(v) = f.qbar {
            cfg.qbar = v;
        }
        if let Some(v) = f.ball_radius {
            cfg.ball_radius = v;
        }
        if let Some(v) = &f.x0 {
            cfg.x0 = v.clone();
        }
        if let Some(v) = f.tol {
            cfg.tol = v;
        }
        if let Some(v) = f.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = f.projection_period {
            cfg.projection_period = v;
        }
        if let Some(v) = f.t_release {
            cfg.t_release = v;
        } else {
            cfg.t_release = 50.0 * cfg.dt;
        }
        if let Some(v) = f.log_every {
            cfg.log_every = v;
        }
        if let Some(v) = f.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        cfg.validate(problem)?;
        Ok(cfg)
    }

    pub fn flow_config(&self, problem: &Problem) -> Result<FlowConfig> {
        self.flow_config_at(problem, self.flow.radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values() {
        let (p, v) = parse_override("flow.R=12").unwrap();
        assert_eq!(p, ["flow", "R"]);
        assert_eq!(v, Value::Integer(12));
        let (_, v) = parse_override("problem.group = dihedral-4").unwrap();
        assert_eq!(v, Value::String("dihedral-4".into()));
        let (_, v) = parse_override("sweep.radii=[8.0, 12.0]").unwrap();
        assert!(v.is_array());
        assert!(parse_override("flow.R").is_err());
    }

    #[test]
    fn preset_then_override() {
        let cfg = load(
            Some("triple-junction-2d"),
            Some("[flow]\nh = 0.2\n"),
            &["flow.R=8.0".into()],
        )
        .unwrap();
        assert_eq!(cfg.flow.radius, 8.0);
        assert_eq!(cfg.flow.h, 0.2);
        assert_eq!(cfg.problem.group.as_deref(), Some("dihedral-3"));
        let problem = cfg.problem().unwrap();
        let flow = cfg.flow_config(&problem).unwrap();
        assert_eq!(flow.qbar, 0.3);
    }

    #[test]
    fn bad_inputs() {
        assert!(load(Some("nope"), None, &[]).is_err());
        assert!(load(None, Some("[flow]\nwhatever = 1\n"), &[]).is_err());
        let cfg = load(None, None, &[]).unwrap();
        assert!(cfg.problem().is_err());
        let mismatch = load(
            Some("triple-junction-2d"),
            None,
            &["problem.potential=double-well-1d".into()],
        )
        .unwrap();
        assert!(mismatch.problem().is_err());
    }
}
