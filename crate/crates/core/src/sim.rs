//! Fixed-step RK4 integration of the closed loops, with bounded disturbance
//! generators and trajectory post-processing.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlLaw, Plant};
use crate::rng::SplitMix64;

/// Disturbance generators. Every variant satisfies `|f(t)| ≤ amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    Zero,
    Constant { value: Vec<f64> },
    /// `amplitude · sin(frequency·t + phase) · e` with `frequency` in rad per
    /// time unit and `e` the unit vector along `direction` (default
    /// `(1, …, 1)/√l`).
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Uniform knots in `[−1, 1]` from a seeded SplitMix64 stream, passed
    /// through a first-order low-pass with corner `cutoff` (rad per time
    /// unit), rescaled so the largest knot norm over the horizon equals
    /// `amplitude`, and linearly interpolated between knots.
    BoundedNoise { seed: u64, amplitude: f64, cutoff: f64 },
}

impl Disturbance {
    /// Largest norm the generator can produce.
    pub fn bound(&self) -> f64 {
        match self {
            Disturbance::Zero => 0.0,
            Disturbance::Constant { value } => value.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Disturbance::Sinusoid { amplitude, .. } | Disturbance::BoundedNoise { amplitude, .. } => *amplitude,
        }
    }

    pub fn validate(&self, l: usize, f_bar: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            Disturbance::Zero => {}
            Disturbance::Constant { value } => {
                if value.len() != l {
                    return Err(Error::DimensionMismatch(format!("constant disturbance has {} entries, D has {l} columns", value.len())));
                }
                if value.iter().any(|v| !v.is_finite()) {
                    return bad("constant disturbance must be finite".into());
                }
            }
            Disturbance::Sinusoid { amplitude, frequency, phase, direction } => {
                if !(*amplitude >= 0.0) || !frequency.is_finite() || !phase.is_finite() || !amplitude.is_finite() {
                    return bad("sinusoid amplitude must be >= 0 and all parameters finite".into());
                }
                if let Some(d) = direction {
                    if d.len() != l {
                        return Err(Error::DimensionMismatch(format!("direction has {} entries, D has {l} columns", d.len())));
                    }
                    if !(d.iter().map(|v| v * v).sum::<f64>() > 0.0) || d.iter().any(|v| !v.is_finite()) {
                        return bad("direction must be a finite nonzero vector".into());
                    }
                }
            }
            Disturbance::BoundedNoise { amplitude, cutoff, .. } => {
                if !(*amplitude >= 0.0) || !amplitude.is_finite() || !(*cutoff > 0.0) || !cutoff.is_finite() {
                    return bad("noise needs amplitude >= 0 and cutoff > 0".into());
                }
            }
        }
        let b = self.bound();
        if b > f_bar {
            return bad(format!("disturbance bound {b} exceeds f_bar = {f_bar}"));
        }
        Ok(())
    }

    /// Deterministic signal `t ↦ f(t)` over `[0, t_end]`.
    pub fn realize(&self, l: usize, t_end: f64) -> Signal {
        match self {
            Disturbance::Zero => Signal::Constant(DVector::zeros(l)),
            Disturbance::Constant { value } => Signal::Constant(DVector::from_column_slice(value)),
            Disturbance::Sinusoid { amplitude, frequency, phase, direction } => {
                let dir = match direction {
                    Some(d) => DVector::from_column_slice(d),
                    None => DVector::from_element(l, 1.0),
                };
                // shave a few ulps so |e| ≤ 1 survives rounding
                let unit = &dir / dir.norm() * (1.0 - 4.0 * f64::EPSILON);
                Signal::Sinusoid { unit: unit * *amplitude, omega: *frequency, phase: *phase }
            }
            Disturbance::BoundedNoise { seed, amplitude, cutoff } => {
                // ten knots per filter time constant, at most 0.01 apart
                let h = (0.1 / cutoff).min(0.01);
                let alpha = 1.0 - (-cutoff * h).exp();
                let knots_needed = (t_end.max(0.0) / h).ceil() as usize + 2;
                let mut rng = SplitMix64::new(*seed);
                let mut state = DVector::<f64>::zeros(l);
                let mut knots = Vec::with_capacity(knots_needed);
                knots.push(state.clone());
                for _ in 1..knots_needed {
                    for i in 0..l {
                        let u = rng.uniform(-1.0, 1.0);
                        state[i] += alpha * (u - state[i]);
                    }
                    knots.push(state.clone());
                }
                let peak = knots.iter().map(|k| k.norm()).fold(0.0, f64::max);
                let scale = if peak > 0.0 { amplitude / peak * (1.0 - 4.0 * f64::EPSILON) } else { 0.0 };
                Signal::Knots { h, knots: knots.into_iter().map(|k| k * scale).collect() }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Signal {
    Constant(DVector<f64>),
    Sinusoid { unit: DVector<f64>, omega: f64, phase: f64 },
    Knots { h: f64, knots: Vec<DVector<f64>> },
}

impl Signal {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            Signal::Constant(v) => v.clone(),
            Signal::Sinusoid { unit, omega, phase } => unit * (omega * t + phase).sin(),
            Signal::Knots { h, knots } => {
                let pos = (t / h).max(0.0);
                let i = (pos.floor() as usize).min(knots.len() - 2);
                let w = (pos - i as f64).clamp(0.0, 1.0);
                &knots[i] * (1.0 - w) + &knots[i + 1] * w
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Integration stops once `|x|` exceeds this.
    pub divergence_norm: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 20.0, divergence_norm: 1e12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<f64>,
    pub disturbances: Vec<DVector<f64>>,
    /// Set when integration stopped early because `|x|` blew up.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.norm()).collect()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Writes `t,x1..xn,u,f1..fl` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let l = self.disturbances.first().map_or(0, |f| f.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("u".into());
        header.extend((1..=l).map(|i| format!("f{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.push(self.controls[k].to_string());
            row.extend(self.disturbances[k].iter().map(f64::to_string));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates `ẋ = Ax + B·u(x) + D·f(t)` with classical RK4 on the uniform
/// grid `t_k = k·dt`.
pub fn simulate(
    plant: &Plant,
    law: &ControlLaw,
    disturbance: &Disturbance,
    x0: &[f64],
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = plant.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, plant has n = {n}", x0.len())));
    }
    law.gain.check_dim(n)?;
    if !(opts.dt > 0.0) || !opts.dt.is_finite() || !(opts.t_end >= opts.dt) || !opts.t_end.is_finite() {
        return Err(Error::InvalidParameter("need dt > 0 and t_end >= dt".into()));
    }
    disturbance.validate(plant.l(), plant.f_bar)?;

    let signal = disturbance.realize(plant.l(), opts.t_end);
    let steps = (opts.t_end / opts.dt).round() as usize;
    let rhs = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let mut dx = &plant.a * x + &plant.b * law.control(x);
        dx.gemv(1.0, &plant.d, &signal.at(t), 1.0);
        dx
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        disturbances: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    let mut x = DVector::from_column_slice(x0);
    let h = opts.dt;
    for k in 0..=steps {
        let t = k as f64 * h;
        traj.times.push(t);
        traj.controls.push(law.control(&x));
        traj.disturbances.push(signal.at(t));
        traj.states.push(x.clone());
        if !(x.norm() <= opts.divergence_norm) {
            traj.diverged = true;
            break;
        }
        if k == steps {
            break;
        }
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(traj)
}

/// `max |x(t)|` over the last `tail_fraction` of the horizon.
pub fn empirical_ultimate_bound(traj: &Trajectory, tail_fraction: f64) -> f64 {
    let Some(&t_end) = traj.times.last() else { return 0.0 };
    let start = t_end * (1.0 - tail_fraction.clamp(0.0, 1.0));
    traj.times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= start)
        .map(|(_, x)| x.norm())
        .fold(0.0, f64::max)
}

/// Earliest sample time after which every sample satisfies `|x| < ε`, or
/// `None` if the final sample is still outside.
pub fn time_to_ball(traj: &Trajectory, eps: f64) -> Option<f64> {
    match traj.states.iter().rposition(|x| x.norm() >= eps) {
        None => traj.times.first().copied(),
        Some(i) if i + 1 < traj.len() => Some(traj.times[i + 1]),
        Some(_) => None,
    }
}

/// `V(x(t)) = xᵀPx` along the trajectory.
pub fn lyapunov_trace(traj: &Trajectory, p: &DMatrix<f64>) -> Vec<f64> {
    traj.states.iter().map(|x| x.dot(&(p * x))).collect()
}

/// Residuals `V̇ + τV − χ|f|²` at interior samples, with `V̇` from central
/// differences. Non-positive values (up to discretization error) mean the
/// dissipation inequality holds along the run.
pub fn dissipation_residuals(traj: &Trajectory, p: &DMatrix<f64>, tau: f64, chi: f64) -> Vec<(usize, f64)> {
    let v = lyapunov_trace(traj, p);
    (1..traj.len().saturating_sub(1))
        .map(|k| {
            let dv = (v[k + 1] - v[k - 1]) / (traj.times[k + 1] - traj.times[k - 1]);
            (k, dv + tau * v[k] - chi * traj.disturbances[k].norm_squared())
        })
        .collect()
}
