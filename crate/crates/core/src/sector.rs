//! Odd scalar functions, their slope representation `φ(s) = ρ(s)·s`, and the
//! computation of the `|s|`-interval on which the slope stays inside a sector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::model::Gain;

/// Odd, continuous scalar function with `φ(0) = 0`.
///
/// Every family is evaluated on `|s|` and the sign is re-applied, so
/// `eval(-s) == -eval(s)` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OddFunction {
    Identity,
    /// `μ·sat(σs)`.
    ScaledSaturation { mu: f64, sigma: f64 },
    /// `μ·arctan(σs)`.
    ScaledArctan { mu: f64, sigma: f64 },
    /// `μ·(1 − e^{−σs/2})/(1 + e^{−σs/2})`.
    ScaledSigmoid { mu: f64, sigma: f64 },
    /// `sign(s)·|s|^λ`, `0 < λ < 1`.
    Power { lambda: f64 },
    /// `sign(s)·|s|^{ψ(s)}` with `ψ(s) = μ(s² + μ⁻²)/(s² + 1)`.
    VariablePower { mu: f64 },
    /// `sign(s)·(|s|^λ + |s|^{1/λ})`.
    PowerSum { lambda: f64 },
    /// `base(s) + ϑ·s`.
    AffinePlus { base: Box<OddFunction>, theta: f64 },
    /// Piecewise-linear table, antisymmetrized as `(T(s) − T(−s))/2`.
    Tabulated { s: Vec<f64>, phi: Vec<f64> },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be a positive finite number, got {v}")))
    }
}

impl OddFunction {
    pub fn scaled_saturation(mu: f64, sigma: f64) -> Result<Self> {
        Self::ScaledSaturation { mu, sigma }.validated()
    }

    pub fn scaled_arctan(mu: f64, sigma: f64) -> Result<Self> {
        Self::ScaledArctan { mu, sigma }.validated()
    }

    pub fn scaled_sigmoid(mu: f64, sigma: f64) -> Result<Self> {
        Self::ScaledSigmoid { mu, sigma }.validated()
    }

    pub fn power(lambda: f64) -> Result<Self> {
        Self::Power { lambda }.validated()
    }

    pub fn variable_power(mu: f64) -> Result<Self> {
        Self::VariablePower { mu }.validated()
    }

    pub fn power_sum(lambda: f64) -> Result<Self> {
        Self::PowerSum { lambda }.validated()
    }

    pub fn affine_plus(base: OddFunction, theta: f64) -> Result<Self> {
        Self::AffinePlus { base: Box::new(base), theta }.validated()
    }

    pub fn tabulated(s: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        Self::Tabulated { s, phi }.validated()
    }

    /// Parses a two-column `s φ(s)` table (whitespace or comma separated,
    /// `#` starts a comment).
    pub fn tabulated_from_text(text: &str) -> Result<Self> {
        let mut s = Vec::new();
        let mut phi = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
            if cols.len() != 2 {
                return Err(Error::InvalidParameter(format!(
                    "table line {}: expected 2 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse = |t: &str| {
                t.parse::<f64>().map_err(|e| {
                    Error::InvalidParameter(format!("table line {}: {t:?}: {e}", lineno + 1))
                })
            };
            s.push(parse(cols[0])?);
            phi.push(parse(cols[1])?);
        }
        Self::tabulated(s, phi)
    }

    /// One representative of every family, with the parameters used by the
    /// examples and acceptance runs.
    pub fn default_catalog() -> Vec<(&'static str, OddFunction)> {
        let grid: Vec<f64> = (-400..=400).map(|k| k as f64 * 0.025).collect();
        let table: Vec<f64> = grid.iter().map(|s| s.tanh()).collect();
        vec![
            ("identity", OddFunction::Identity),
            ("scaled_saturation", OddFunction::ScaledSaturation { mu: 1.0, sigma: 1.0 }),
            ("scaled_arctan", OddFunction::ScaledArctan { mu: 1.0, sigma: 1.0 }),
            ("scaled_sigmoid", OddFunction::ScaledSigmoid { mu: 1.0, sigma: 1.0 }),
            ("power", OddFunction::Power { lambda: 0.5 }),
            ("variable_power", OddFunction::VariablePower { mu: 2.0 }),
            ("power_sum", OddFunction::PowerSum { lambda: 0.5 }),
            (
                "affine_plus",
                OddFunction::AffinePlus {
                    base: Box::new(OddFunction::ScaledArctan { mu: 1.0, sigma: 1.0 }),
                    theta: 1.0,
                },
            ),
            ("tabulated", OddFunction::Tabulated { s: grid, phi: table }),
        ]
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OddFunction::Identity => Ok(()),
            OddFunction::ScaledSaturation { mu, sigma }
            | OddFunction::ScaledArctan { mu, sigma }
            | OddFunction::ScaledSigmoid { mu, sigma } => {
                positive("mu", *mu)?;
                positive("sigma", *sigma)
            }
            OddFunction::Power { lambda } | OddFunction::PowerSum { lambda } => {
                if *lambda > 0.0 && *lambda < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("lambda must lie in (0, 1), got {lambda}")))
                }
            }
            OddFunction::VariablePower { mu } => {
                positive("mu", *mu)?;
                let psi0 = variable_exponent(*mu, 0.0);
                if psi0 < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "variable power needs psi(0) < 1, got psi(0) = {psi0} for mu = {mu}"
                    )))
                }
            }
            OddFunction::AffinePlus { base, theta } => {
                if !(*theta >= 0.0 && theta.is_finite()) {
                    return Err(Error::InvalidParameter(format!("theta must be >= 0, got {theta}")));
                }
                base.validate()
            }
            OddFunction::Tabulated { s, phi } => {
                if s.len() != phi.len() {
                    return Err(Error::InvalidParameter("table columns differ in length".into()));
                }
                if s.len() < 2 {
                    return Err(Error::InvalidParameter("table needs at least 2 rows".into()));
                }
                if s.iter().chain(phi).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("table contains non-finite values".into()));
                }
                if s.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter("table s column must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    /// `φ(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            -self.eval_abs(-s)
        } else {
            self.eval_abs(s)
        }
    }

    /// `φ` on the non-negative half-line.
    fn eval_abs(&self, a: f64) -> f64 {
        match self {
            OddFunction::Identity => a,
            OddFunction::ScaledSaturation { mu, sigma } => mu * (sigma * a).min(1.0),
            OddFunction::ScaledArctan { mu, sigma } => mu * (sigma * a).atan(),
            // (1 − e^{−x})/(1 + e^{−x}) = tanh(x/2) with x = σa/2
            OddFunction::ScaledSigmoid { mu, sigma } => mu * (0.25 * sigma * a).tanh(),
            OddFunction::Power { lambda } => a.powf(*lambda),
            OddFunction::VariablePower { mu } => a.powf(variable_exponent(*mu, a)),
            OddFunction::PowerSum { lambda } => a.powf(*lambda) + a.powf(1.0 / lambda),
            OddFunction::AffinePlus { base, theta } => base.eval_abs(a) + theta * a,
            OddFunction::Tabulated { s, phi } => {
                0.5 * (interpolate(s, phi, a) - interpolate(s, phi, -a))
            }
        }
    }

    /// Exact `lim_{s→0} φ(s)/s`.
    pub fn slope_at_origin(&self) -> ExtReal {
        match self {
            OddFunction::Identity => ExtReal::Finite(1.0),
            OddFunction::ScaledSaturation { mu, sigma } | OddFunction::ScaledArctan { mu, sigma } => {
                ExtReal::Finite(mu * sigma)
            }
            OddFunction::ScaledSigmoid { mu, sigma } => ExtReal::Finite(0.25 * mu * sigma),
            OddFunction::Power { .. } | OddFunction::VariablePower { .. } | OddFunction::PowerSum { .. } => {
                ExtReal::Infinite
            }
            OddFunction::AffinePlus { base, theta } => match base.slope_at_origin() {
                ExtReal::Finite(v) => ExtReal::Finite(v + theta),
                ExtReal::Infinite => ExtReal::Infinite,
            },
            OddFunction::Tabulated { s, .. } => {
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&i, &j| s[i].abs().total_cmp(&s[j].abs()).then(i.cmp(&j)));
                let (sa, sb) = (s[idx[0]], s[idx[1]]);
                ExtReal::Finite((self.eval(sb) - self.eval(sa)) / (sb - sa))
            }
        }
    }
}

/// `ψ(s) = μ(s² + μ⁻²)/(s² + 1)`.
fn variable_exponent(mu: f64, s: f64) -> f64 {
    let s2 = s * s;
    mu * (s2 + 1.0 / (mu * mu)) / (s2 + 1.0)
}

/// Linear interpolation with linear extrapolation past the end rows.
fn interpolate(s: &[f64], phi: &[f64], x: f64) -> f64 {
    let last = s.len() - 1;
    let seg = if x <= s[0] {
        0
    } else if x >= s[last] {
        last - 1
    } else {
        s.partition_point(|&v| v <= x) - 1
    };
    let (x0, x1, y0, y1) = (s[seg], s[seg + 1], phi[seg], phi[seg + 1]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// An odd function together with its slope at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeProfile {
    pub func: OddFunction,
    pub rho_at_origin: ExtReal,
}

impl SlopeProfile {
    pub fn new(func: OddFunction) -> Self {
        let rho_at_origin = func.slope_at_origin();
        Self { func, rho_at_origin }
    }

    pub fn slope(&self, s: f64) -> ExtReal {
        if s == 0.0 {
            self.rho_at_origin
        } else {
            ExtReal::Finite(self.func.eval(s) / s)
        }
    }
}

pub fn eval_phi(func: &OddFunction, s: f64) -> f64 {
    func.eval(s)
}

/// `ρ(s) = φ(s)/s`, and the origin slope at `s = 0`.
pub fn slope(profile: &SlopeProfile, s: f64) -> ExtReal {
    profile.slope(s)
}

pub fn slope_at_origin(func: &OddFunction) -> ExtReal {
    func.slope_at_origin()
}

/// Band of `|s|` values on which the slope stays inside a sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorRegion {
    pub x_lo: f64,
    pub x_hi: ExtReal,
}

impl SectorRegion {
    pub fn contains_abs(&self, a: f64) -> bool {
        a >= self.x_lo && a <= self.x_hi.to_f64()
    }

    fn scaled(self, factor: f64) -> Self {
        SectorRegion {
            x_lo: self.x_lo * factor,
            x_hi: match self.x_hi {
                ExtReal::Finite(v) => ExtReal::Finite(v * factor),
                ExtReal::Infinite => ExtReal::Infinite,
            },
        }
    }
}

/// Log-spaced sampling density for the region search.
pub const POINTS_PER_DECADE: usize = 4096;
pub const GRID_MIN_EXP: i32 = -9;
pub const GRID_MAX_EXP: i32 = 9;
/// Bisection stopping rule `|Δs|/|s|` at each crossing.
pub const CROSSING_RTOL: f64 = 1e-10;
/// Relative slack on the sector test, to absorb rounding of `φ(s)/s`.
const MEMBERSHIP_RTOL: f64 = 1e-12;

fn in_sector(rho: f64, lo: f64, hi: f64) -> bool {
    rho >= lo * (1.0 - MEMBERSHIP_RTOL) && rho <= hi * (1.0 + MEMBERSHIP_RTOL)
}

/// Largest band `x_lo ≤ |s| ≤ x_hi` on which `rho_lo ≤ φ(s)/s ≤ rho_hi`.
///
/// `ρ` is sampled on a log grid over `[1e-9, 1e9]`; each sign change is refined
/// by bisection and the longest valid band is returned. A band reaching the
/// bottom of the grid extends to 0 when the origin slope is in the sector, and
/// a band reaching the top is reported as unbounded.
pub fn sector_region(profile: &SlopeProfile, rho_lo: f64, rho_hi: f64) -> Result<SectorRegion> {
    if !(rho_lo >= 0.0) || !(rho_hi > rho_lo) {
        return Err(Error::InvalidParameter(format!(
            "sector needs 0 <= rho_lo < rho_hi, got [{rho_lo}, {rho_hi}]"
        )));
    }
    let decades = (GRID_MAX_EXP - GRID_MIN_EXP) as usize;
    let last = decades * POINTS_PER_DECADE;
    let grid = |k: usize| 10f64.powf(GRID_MIN_EXP as f64 + k as f64 / POINTS_PER_DECADE as f64);
    let ok = |s: f64| in_sector(profile.func.eval(s) / s, rho_lo, rho_hi);

    // Valid runs as (first, last) grid indices.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..=last {
        let valid = ok(grid(k));
        match (valid, start) {
            (true, None) => start = Some(k),
            (false, Some(st)) => {
                runs.push((st, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        runs.push((st, last));
    }
    if runs.is_empty() {
        return Err(Error::EmptyRegion { rho_lo, rho_hi });
    }

    let origin_ok = match profile.rho_at_origin {
        ExtReal::Finite(r) => in_sector(r, rho_lo, rho_hi),
        ExtReal::Infinite => rho_hi == f64::INFINITY,
    };

    let mut best: Option<SectorRegion> = None;
    for (first, end) in runs {
        let x_lo = if first == 0 {
            if origin_ok {
                0.0
            } else {
                grid(0)
            }
        } else {
            refine_crossing(&ok, grid(first), grid(first - 1))
        };
        let x_hi = if end == last {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(refine_crossing(&ok, grid(end), grid(end + 1)))
        };
        let candidate = SectorRegion { x_lo, x_hi };
        let longer = match best {
            None => true,
            Some(b) => (candidate.x_hi.to_f64() - candidate.x_lo) > (b.x_hi.to_f64() - b.x_lo),
        };
        if longer {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Bisects between a valid point and an invalid one; returns the valid side.
fn refine_crossing(ok: &impl Fn(f64) -> bool, mut valid: f64, mut invalid: f64) -> f64 {
    for _ in 0..200 {
        if (invalid - valid).abs() <= CROSSING_RTOL * valid.abs().max(invalid.abs()) {
            break;
        }
        let mid = 0.5 * (valid + invalid);
        if ok(mid) {
            valid = mid;
        } else {
            invalid = mid;
        }
    }
    valid
}

/// Region for the scalar-wrapped law: the sector is tested on `φ(κs)/(κs)`
/// with `κ = Σ kᵢ`, and the bounds are returned in `s` units.
pub fn sector_region_scalar(
    profile: &SlopeProfile,
    gain: &Gain,
    rho_lo: f64,
    rho_hi: f64,
) -> Result<SectorRegion> {
    let kappa = gain.sum();
    if kappa == 0.0 {
        return Err(Error::ZeroGainSum);
    }
    // ρ is even, so only |κ| matters.
    Ok(sector_region(profile, rho_lo, rho_hi)?.scaled(1.0 / kappa.abs()))
}
