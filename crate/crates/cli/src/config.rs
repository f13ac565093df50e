//! Analysis configuration: parsing, validation and conversion to core types.

use std::fs;
use std::path::{Path, PathBuf};

use oddlaw::{CertifyOptions, Disturbance, Gain, OddFunction, Plant, TauSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub plant: PlantSpec,
    pub gain: Vec<f64>,
    pub law: LawSpec,
    pub tau: TauSpec,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub options: CertifyOptions,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// Row-major `n × n`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Row-major `n × l`.
    pub d: Vec<Vec<f64>>,
    pub f_bar: f64,
}

/// The nonlinearity: one function for every channel, one per state, or a
/// two-column table read from a file (path relative to the config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<OddFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<OddFunction>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Uniform(f64),
    PerInterval(Vec<f64>),
}

impl TauSpec {
    pub fn schedule(&self) -> TauSchedule {
        match self {
            TauSpec::Uniform(t) => TauSchedule::Uniform(*t),
            TauSpec::PerInterval(ts) => TauSchedule::PerInterval(ts.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Componentwise law `u = Σ kᵢ φᵢ(xᵢ)`.
    #[default]
    Theorem1,
    /// Scalar-wrapped law `u = φ(Kx)`.
    Theorem2,
    Both,
}

impl Mode {
    pub fn componentwise(self) -> bool {
        matches!(self, Mode::Theorem1 | Mode::Both)
    }

    pub fn scalar(self) -> bool {
        matches!(self, Mode::Theorem2 | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Explicit initial states.
    pub x0: Vec<Vec<f64>>,
    /// Additional random initial states drawn uniformly from a ball.
    pub random_x0: Option<RandomX0>,
    pub dt: f64,
    pub t_end: f64,
    pub disturbances: Vec<Disturbance>,
    /// Ball radius for time-to-ball; when absent, `1.5·√(2χ̄f̄/(τ̲γ̲))` from the
    /// certificate is used.
    pub eps: Option<f64>,
    pub tail_fraction: f64,
    /// Also simulate the linear law `u = Kx`.
    pub include_linear: bool,
    /// Write one CSV per run.
    pub write_csv: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            x0: Vec::new(),
            random_x0: None,
            dt: 1e-3,
            t_end: 40.0,
            disturbances: vec![Disturbance::Zero],
            eps: None,
            tail_fraction: 0.25,
            include_linear: false,
            write_csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomX0 {
    pub count: usize,
    /// Ball radius; defaults to the certified initial radius.
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Mu,
    Sigma,
    Lambda,
    Theta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Core objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: Plant,
    pub gain: Gain,
    pub functions: Vec<OddFunction>,
    pub taus: TauSchedule,
}

impl Resolved {
    /// The function used by the scalar law and by sweeps.
    pub fn primary(&self) -> &OddFunction {
        &self.functions[0]
    }
}

fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

impl AnalysisConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
        if let Some(table) = &cfg.law.table_file {
            if table.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.law.table_file = Some(base.join(table));
            }
        }
        Ok(cfg)
    }

    /// Parses JSON; errors carry line and column.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| input(format!("config error: {e}")))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let p = &self.plant;
        let plant = Plant::from_rows(&p.a, &p.b, &p.d, p.f_bar).map_err(|e| input(format!("plant: {e}")))?;
        let n = plant.n();
        if self.gain.len() != n {
            return Err(input(format!("gain: expected {n} entries, got {}", self.gain.len())));
        }
        if self.gain.iter().any(|k| !k.is_finite()) {
            return Err(input("gain: entries must be finite"));
        }
        let gain = Gain::new(&self.gain);

        let set = [self.law.function.is_some(), self.law.functions.is_some(), self.law.table_file.is_some()];
        if set.iter().filter(|s| **s).count() != 1 {
            return Err(input("law: set exactly one of function, functions, table_file"));
        }
        let functions = if let Some(f) = &self.law.function {
            vec![f.clone(); n]
        } else if let Some(fs) = &self.law.functions {
            if fs.len() != n {
                return Err(input(format!("law.functions: expected {n} functions, got {}", fs.len())));
            }
            fs.clone()
        } else {
            let path = self.law.table_file.as_ref().expect("checked above");
            let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            vec![OddFunction::tabulated_from_text(&text).map_err(|e| input(format!("{}: {e}", path.display())))?; n]
        };
        for (i, f) in functions.iter().enumerate() {
            f.validate().map_err(|e| input(format!("law function {i}: {e}")))?;
        }
        if self.mode.scalar() && functions.iter().any(|f| f != &functions[0]) {
            return Err(input("theorem2 needs a single function"));
        }

        let taus = self.tau.schedule();
        let tau_ok = match &taus {
            TauSchedule::Uniform(t) => *t > 0.0 && t.is_finite(),
            TauSchedule::PerInterval(ts) => !ts.is_empty() && ts.iter().all(|t| *t > 0.0 && t.is_finite()),
        };
        if !tau_ok {
            return Err(input("tau: values must be positive and finite"));
        }

        let o = &self.options;
        if !(o.region_cap > 0.0) || !(o.verify_tol > 0.0) || !(o.search.rho_cap > 0.0) || !(o.search.growth > 1.0) {
            return Err(input("options: region_cap, verify_tol and rho_cap must be positive and growth > 1"));
        }

        let s = &self.simulation;
        if !(s.dt > 0.0) || !(s.t_end >= s.dt) || !(s.tail_fraction > 0.0 && s.tail_fraction <= 1.0) {
            return Err(input("simulation: need dt > 0, t_end >= dt and tail_fraction in (0, 1]"));
        }
        if let Some(e) = s.eps {
            if !(e > 0.0) {
                return Err(input("simulation.eps must be positive"));
            }
        }
        for (i, x0) in s.x0.iter().enumerate() {
            if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
                return Err(input(format!("simulation.x0[{i}]: expected {n} finite entries")));
            }
        }
        for (i, d) in s.disturbances.iter().enumerate() {
            d.validate(plant.l(), plant.f_bar).map_err(|e| input(format!("simulation.disturbances[{i}]: {e}")))?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.axes.is_empty() || sweep.axes.len() > 2 {
                return Err(input("sweep: one or two axes"));
            }
            for axis in &sweep.axes {
                if axis.values.is_empty() {
                    return Err(input("sweep: axis values must not be empty"));
                }
                set_parameter(&functions[0], axis.parameter, 1.0)
                    .ok_or_else(|| input(format!("sweep: {:?} does not apply to this function", axis.parameter)))?;
            }
        }
        Ok(Resolved { plant, gain, functions, taus })
    }
}

/// Copy of `f` with one parameter replaced, or `None` when the family has no
/// such parameter. The result is not validated.
pub fn set_parameter(f: &OddFunction, p: SweepParameter, v: f64) -> Option<OddFunction> {
    use OddFunction as F;
    use SweepParameter as S;
    Some(match (f, p) {
        (F::ScaledSaturation { sigma, .. }, S::Mu) => F::ScaledSaturation { mu: v, sigma: *sigma },
        (F::ScaledSaturation { mu, .. }, S::Sigma) => F::ScaledSaturation { mu: *mu, sigma: v },
        (F::ScaledArctan { sigma, .. }, S::Mu) => F::ScaledArctan { mu: v, sigma: *sigma },
        (F::ScaledArctan { mu, .. }, S::Sigma) => F::ScaledArctan { mu: *mu, sigma: v },
        (F::ScaledSigmoid { sigma, .. }, S::Mu) => F::ScaledSigmoid { mu: v, sigma: *sigma },
        (F::ScaledSigmoid { mu, .. }, S::Sigma) => F::ScaledSigmoid { mu: *mu, sigma: v },
        (F::Power { .. }, S::Lambda) => F::Power { lambda: v },
        (F::PowerSum { .. }, S::Lambda) => F::PowerSum { lambda: v },
        (F::VariablePower { .. }, S::Mu) => F::VariablePower { mu: v },
        (F::AffinePlus { base, .. }, S::Theta) => F::AffinePlus { base: base.clone(), theta: v },
        (F::AffinePlus { base, theta }, _) => F::AffinePlus { base: Box::new(set_parameter(base, p, v)?), theta: *theta },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn configs_dir() -> PathBuf {
        PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
    }

    #[test]
    fn shipped_configs_parse_and_resolve() {
        for entry in fs::read_dir(configs_dir()).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let cfg = AnalysisConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
                cfg.resolve().unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = fs::read_to_string(configs_dir().join("reference.json")).unwrap();
        let bad = text.replacen("\"tau\": 0.1,", "\"tau\": 0.1,\n  \"taux\": 1,", 1);
        let CliError::Input(msg) = AnalysisConfig::from_str(&bad).unwrap_err() else { panic!() };
        assert!(msg.contains("unknown field `taux`") && msg.contains("line"), "{msg}");
        let nested = text.replacen("\"mu\": 1.0", "\"mu\": 1.0, \"nu\": 2", 1);
        assert!(AnalysisConfig::from_str(&nested).is_err());
    }

    #[test]
    fn non_square_a_is_an_input_error() {
        let text = fs::read_to_string(configs_dir().join("reference.json")).unwrap();
        let bad = text.replacen("[[0.0, 1.0], [0.0, 0.0]]", "[[0.0, 1.0, 2.0], [0.0, 0.0, 1.0]]", 1);
        let cfg = AnalysisConfig::from_str(&bad).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Input(_))));
    }

    #[test]
    fn schema_lists_every_top_level_key() {
        let schema: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(configs_dir().join("../docs/config.schema.json")).unwrap()).unwrap();
        let keys: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
        let cfg = AnalysisConfig::from_path(&configs_dir().join("reference.json")).unwrap();
        let value = serde_json::to_value(&cfg).unwrap();
        for k in value.as_object().unwrap().keys() {
            assert!(keys.contains(&k), "schema misses {k}");
        }
        assert_eq!(keys.len(), value.as_object().unwrap().len());
        let options = &schema["properties"]["options"]["properties"];
        for k in value["options"].as_object().unwrap().keys() {
            assert!(options.get(k).is_some(), "schema misses options.{k}");
        }
    }

    #[test]
    fn sweep_parameters_map_onto_families() {
        let f = OddFunction::affine_plus(OddFunction::scaled_arctan(1.0, 1.0).unwrap(), 1.0).unwrap();
        let g = set_parameter(&f, SweepParameter::Sigma, 3.0).unwrap();
        assert_eq!(g, OddFunction::affine_plus(OddFunction::scaled_arctan(1.0, 3.0).unwrap(), 1.0).unwrap());
        assert!(set_parameter(&OddFunction::Identity, SweepParameter::Mu, 1.0).is_none());
        assert_eq!(set_parameter(&OddFunction::Power { lambda: 0.5 }, SweepParameter::Lambda, 0.3), Some(OddFunction::Power { lambda: 0.3 }));
    }
}
