use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lpflow::energy::{power_law_model, EnergyModel, FlowParams};
use lpflow::experiments::{smooth_bump, StudyKind, StudySpec};
use lpflow::flow::{IntegratorSpec, Scheme, StepControl};
use lpflow::io::Table;
use lpflow::particles::{DomainSpec, DEFAULT_TIE_TOL};
use lpflow::pde::barenblatt_pme2;
use lpflow::transport::DensityProfile;
use lpflow::Execution;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub energy: EnergyConfig,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "default_family")]
    pub family: String,
    pub p: f64,
    pub gamma: f64,
}

fn default_family() -> String {
    "power_law".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    WholeLine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub kind: DomainKind,
    pub l: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            kind: DomainKind::Interval,
            l: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// Uniform on `[-l, l]`.
    Uniform,
    /// `(1 + cos(πx)/2)/2` on `[-1, 1]`.
    Bump,
    Linear { nodes: Vec<f64>, values: Vec<f64> },
    /// Unit-mass self-similar solution of `u_t = (u²)_xx` at time `t0`.
    Barenblatt { t0: f64 },
    /// Two-column CSV `x, rho`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub n: usize,
    pub density: Option<DensityConfig>,
    pub particles: Option<Vec<f64>>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            n: 50,
            density: Some(DensityConfig::Uniform),
            particles: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    ExplicitDescent,
    MinimizingMovement,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptName {
    Fixed,
    Adaptive,
}

impl From<AdaptName> for StepControl {
    fn from(a: AdaptName) -> Self {
        match a {
            AdaptName::Fixed => StepControl::Fixed,
            AdaptName::Adaptive => StepControl::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: SchemeName,
    pub dt: f64,
    pub t_end: f64,
    pub adapt: AdaptName,
    pub safety: f64,
    pub record_every: usize,
    pub pinned: bool,
    pub tie_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeName::ExplicitDescent,
            dt: 1e-4,
            t_end: 0.1,
            adapt: AdaptName::Fixed,
            safety: 0.5,
            record_every: 10,
            pinned: true,
            tie_tol: DEFAULT_TIE_TOL,
        }
    }
}

impl IntegratorConfig {
    pub fn spec(&self) -> IntegratorSpec {
        IntegratorSpec {
            scheme: match self.scheme {
                SchemeName::ExplicitDescent => Scheme::ExplicitDescent,
                SchemeName::MinimizingMovement => Scheme::MinimizingMovement,
            },
            dt: self.dt,
            t_end: self.t_end,
            adapt: self.adapt.into(),
            safety: self.safety,
            record_every: self.record_every,
            pinned: self.pinned,
            tie_tol: self.tie_tol,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    #[serde(rename = "M")]
    pub m: usize,
    pub safety: f64,
    pub t_samples: Vec<f64>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            m: 1024,
            safety: 0.4,
            t_samples: vec![0.01, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub name: Option<String>,
    pub n_list: Vec<usize>,
    pub t_end: f64,
    pub t_samples: Vec<f64>,
    pub dt: f64,
    pub adapt: AdaptName,
    pub trend_noise: f64,
    pub tol: f64,
    pub edi_levels: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            name: None,
            n_list: vec![25, 50, 100, 200],
            t_end: 0.1,
            t_samples: vec![0.01, 0.05, 0.1],
            dt: 1e-3,
            adapt: AdaptName::Adaptive,
            trend_noise: 0.1,
            tol: 0.02,
            edi_levels: 2,
            seed: 20240917,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            grid_min: 0.1,
            grid_max: 10.0,
            grid_points: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionName {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Worker threads; 0 keeps the default of one per core.
    pub workers: usize,
    pub execution: ExecutionName,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("lpflow-out"),
            workers: 0,
            execution: ExecutionName::Parallel,
        }
    }
}

/// Parse a config file, apply `key=value` overrides and check it.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg = from_table(table)?;
    cfg.check()?;
    Ok(cfg)
}

pub fn from_table(table: toml::Table) -> Result<RunConfig, CliError> {
    RunConfig::deserialize(toml::Value::Table(table.clone())).map_err(|e| diagnose(&table, e))
}

/// Turn a deserialization error into a message naming the full key.
fn diagnose(table: &toml::Table, e: toml::de::Error) -> CliError {
    let msg = e.message().to_string();
    if let Some(field) = msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
        let section = missing_section(table, field);
        let key = match section {
            Some(s) => format!("{s}.{field}"),
            None => field.to_string(),
        };
        return CliError::Config(format!("missing key `{key}`"));
    }
    CliError::Config(format!("invalid config: {}", msg.trim()))
}

/// Sections whose structs require `field`.
fn missing_section(table: &toml::Table, field: &str) -> Option<&'static str> {
    match field {
        "p" | "gamma" if table.contains_key("energy") => Some("energy"),
        "energy" => None,
        "nodes" | "values" | "t0" | "path" => Some("initial.density"),
        _ => None,
    }
}

fn apply_override(table: &mut toml::Table, o: &str) -> Result<(), CliError> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: `{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn check(&self) -> Result<(), CliError> {
        self.model()?;
        self.integrator.spec().validate().map_err(|e| CliError::Config(format!("integrator: {e}")))?;
        if !(self.domain.l > 0.0) {
            return Err(CliError::Config(format!("domain.l = {} must be positive", self.domain.l)));
        }
        if self.pde.m < 2 {
            return Err(CliError::Config("pde.M must be at least 2".into()));
        }
        if let Some(name) = &self.study.name {
            name.parse::<StudyKind>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn params(&self) -> Result<FlowParams, CliError> {
        FlowParams::new(self.energy.p, self.energy.gamma).map_err(|e| CliError::Config(format!("energy: {e}")))
    }

    pub fn model(&self) -> Result<EnergyModel, CliError> {
        if self.energy.family != "power_law" {
            return Err(CliError::Config(format!(
                "energy.family = {:?}; only \"power_law\" is available from config files",
                self.energy.family
            )));
        }
        power_law_model(self.params()?).map_err(|e| CliError::Config(format!("energy: {e}")))
    }

    pub fn execution(&self) -> Execution {
        match self.output.execution {
            ExecutionName::Parallel => Execution::Parallel,
            ExecutionName::Sequential => Execution::Sequential,
        }
    }

    pub fn domain_spec(&self, pinned: bool) -> DomainSpec {
        match self.domain.kind {
            DomainKind::Interval => DomainSpec::Interval { l: self.domain.l, pinned },
            DomainKind::WholeLine => DomainSpec::WholeLine,
        }
    }

    pub fn density(&self) -> Result<Option<DensityProfile>, CliError> {
        let l = self.domain.l;
        let bad = |e: lpflow::Error| CliError::Config(format!("initial.density: {e}"));
        let Some(d) = &self.initial.density else { return Ok(None) };
        let rho = match d {
            DensityConfig::Uniform => DensityProfile::uniform(-l, l).map_err(bad)?,
            DensityConfig::Bump => smooth_bump(),
            DensityConfig::Linear { nodes, values } => DensityProfile::linear(nodes.clone(), values.clone()).map_err(bad)?,
            DensityConfig::Barenblatt { t0 } => barenblatt(*t0).map_err(bad)?,
            DensityConfig::File { path } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let t = Table::read_csv("density", f).map_err(bad)?;
                let (Some(x), Some(r)) = (t.column("x"), t.column("rho")) else {
                    return Err(CliError::Config(format!("{} needs columns x and rho", path.display())));
                };
                DensityProfile::linear(x, r).map_err(bad)?
            }
        };
        Ok(Some(rho))
    }

    pub fn study_spec(&self) -> Result<StudySpec, CliError> {
        let name = self.study.name.as_deref().ok_or_else(|| {
            let names: Vec<&str> = StudyKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("missing key `study.name`; valid studies: {}", names.join(", ")))
        })?;
        let kind: StudyKind = name.parse().map_err(|e: lpflow::Error| CliError::Config(e.to_string()))?;
        let mut spec = StudySpec::new(kind, self.study.n_list.clone(), self.params()?);
        spec.t_end = self.study.t_end;
        spec.t_samples = self.study.t_samples.clone();
        spec.integrator.dt = self.study.dt;
        spec.integrator.adapt = self.study.adapt.into();
        spec.integrator.safety = self.integrator.safety;
        spec.integrator.tie_tol = self.integrator.tie_tol;
        spec.pde_m = self.pde.m;
        spec.pde_safety = self.pde.safety;
        spec.trend_noise = self.study.trend_noise;
        spec.tol = self.study.tol;
        spec.edi_levels = self.study.edi_levels;
        spec.seed = self.study.seed;
        spec.validate().map_err(|e| CliError::Config(format!("study: {e}")))?;
        Ok(spec)
    }
}

fn barenblatt(t0: f64) -> lpflow::Result<DensityProfile> {
    if !(t0 > 0.0) {
        return Err(lpflow::Error::InvalidParams(format!("t0 = {t0} must be positive")));
    }
    let c = (3.0 / (4.0 * 12f64.sqrt())).powf(2.0 / 3.0);
    let r = (12.0 * c).sqrt() * t0.powf(1.0 / 3.0);
    DensityProfile::analytic(
        Arc::new(move |x| barenblatt_pme2(x, t0)),
        Some(Arc::new(move |x: f64| {
            if x.abs() < r {
                -x / (6.0 * t0)
            } else {
                0.0
            }
        })),
        -r,
        r,
        &[],
    )
}
