//! Report structure written as JSON by every command.

use oddlaw::{Certificate, Comparison, ExtReal, VertexMode};
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Config after command-line overrides, with every default filled in.
    pub config: AnalysisConfig,
    pub certificates: Vec<ModeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub simulations: Vec<SimSummary>,
    /// How ambiguous parts of the method were read for this run.
    pub readings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: AnalysisConfig) -> Self {
        Self {
            tool: "oddlaw".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            certificates: Vec::new(),
            comparison: None,
            simulations: Vec::new(),
            readings: readings(&config),
            warnings: Vec::new(),
            config,
        }
    }
}

fn readings(config: &AnalysisConfig) -> Vec<String> {
    let mut out = vec![
        "each interval i uses its own decay rate tau_i in the tau*P_i term".to_string(),
        "the initial-ball radius keeps the n^2 factor in the denominator".to_string(),
    ];
    out.push(if config.options.literal_chi_eq_tau {
        "ultimate bound: the disturbance block is fixed at -tau*I".into()
    } else {
        "ultimate bound: the disturbance block uses a free chi with chi <= tau".into()
    });
    out.push(if config.options.strict_energy {
        "disturbance terms use f_bar^2".into()
    } else {
        "disturbance terms use f_bar".into()
    });
    if config.mode.scalar() {
        out.push("scalar-wrapped region is read symmetrically, |s| in [x_lo, x_hi], and measured along the diagonal".into());
    }
    out
}

/// Outcome of one certification mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeResult {
    pub mode: VertexMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settling: Option<Settling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<InitialSetAudit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Settling-time bound from the edge of the initial ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settling {
    pub x0_norm: f64,
    pub eps: f64,
    pub f_bar: f64,
    pub time_bound: ExtReal,
}

/// Both readings of the initial-ball relation, so the user can check which
/// one the radius follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSetAudit {
    pub radius_formula: String,
    /// The relation as printed alongside the radius formula.
    pub proof_line: String,
    /// `γ̲ n² x̄²`.
    pub proof_lhs: f64,
    /// `2χ̄f̄/τ̲ + ‖P̄‖x̄₀²`.
    pub proof_rhs: f64,
    /// The relation the radius formula actually satisfies.
    pub identity: String,
    /// `γ̲ x̄²`.
    pub identity_lhs: f64,
    /// `2χ̄f̄/τ̲ + n²‖P̄‖x̄₀²`.
    pub identity_rhs: f64,
    pub energy_term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRecord {
    pub comparison: Comparison,
    /// Tail maximum of `|x|` under a constant disturbance of size `f̄`.
    pub steady_state: SteadyState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyState {
    pub linear: f64,
    pub componentwise: f64,
    pub scalar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSummary {
    pub law: String,
    pub x0: Vec<f64>,
    pub disturbance: usize,
    pub diverged: bool,
    pub delta_emp: f64,
    pub eps: f64,
    pub t_star: Option<f64>,
    pub max_component: f64,
    /// Certificate checks, present when the run starts inside the certified ball.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<RunChecks>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunChecks {
    pub contained: bool,
    pub time_bound: ExtReal,
    pub time_ok: bool,
    pub delta: Option<f64>,
    pub delta_ok: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnalysisConfig;
    use oddlaw::{certify_componentwise, compare_report, CertifyOptions};

    fn reference() -> AnalysisConfig {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.json");
        AnalysisConfig::from_path(std::path::Path::new(path)).unwrap()
    }

    #[test]
    fn report_round_trips_through_json() {
        let cfg = reference();
        let r = cfg.resolve().unwrap();
        let cert = certify_componentwise(&r.plant, &r.gain, &r.functions, &r.taus, &CertifyOptions::default()).unwrap();
        let cmp = compare_report(&r.plant, &r.gain, r.primary(), &r.taus, &CertifyOptions::default()).unwrap();
        let mut report = Report::new("certify", cfg);
        report.certificates.push(ModeResult {
            mode: VertexMode::Componentwise,
            settling: Some(Settling { x0_norm: cert.x0_radius, eps: 0.5, f_bar: 0.1, time_bound: ExtReal::Infinite }),
            certificate: Some(cert),
            audit: None,
            error: None,
        });
        report.certificates.push(ModeResult { mode: VertexMode::Scalar, certificate: None, settling: None, audit: None, error: Some("x".into()) });
        report.comparison = Some(ComparisonRecord {
            comparison: cmp,
            steady_state: SteadyState { linear: 0.05, componentwise: 0.05, scalar: 0.05 },
        });
        report.simulations.push(SimSummary {
            law: "linear".into(),
            x0: vec![1.0, 0.0],
            disturbance: 0,
            diverged: false,
            delta_emp: 1e-9,
            eps: 0.1,
            t_star: None,
            max_component: 1.0,
            checks: Some(RunChecks { contained: true, time_bound: ExtReal::Finite(3.0), time_ok: true, delta: Some(0.4), delta_ok: true }),
            csv: Some("run.csv".into()),
        });
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
