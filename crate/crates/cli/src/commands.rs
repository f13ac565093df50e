//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use oddlaw::rng::SplitMix64;
use oddlaw::{
    certify_componentwise, certify_scalar, compare_report, empirical_ultimate_bound, settling_time, simulate,
    time_to_ball, Certificate, ControlLaw, Disturbance, Error, ExtReal, SimOptions, VertexMode,
};
use rayon::prelude::*;

use crate::config::{set_parameter, AnalysisConfig, Resolved, SweepParameter};
use crate::report::{ComparisonRecord, InitialSetAudit, ModeResult, Report, RunChecks, Settling, SimSummary, SteadyState};
use crate::CliError;

/// Discretization allowance when comparing simulations with certified bounds.
pub const SIM_CHECK_RTOL: f64 = 0.01;

pub struct Context {
    pub config: AnalysisConfig,
    pub resolved: Resolved,
    pub out: PathBuf,
    pub pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(config: AnalysisConfig, out: PathBuf, workers: usize) -> Result<Self, CliError> {
        let resolved = config.resolve()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| CliError::Input(format!("worker pool: {e}")))?;
        fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        Ok(Self { config, resolved, out, pool })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_report(&self, report: &Report) -> Result<PathBuf, CliError> {
        let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
        self.write("report.json", &json)
    }
}

/// Exit-code class of a core error.
fn classify(e: &Error) -> CliError {
    match e {
        Error::NoFeasibleInterval | Error::Infeasible(_) | Error::EmptyRegion { .. } | Error::NumericalFailure(_) => {
            CliError::Infeasible(e.to_string())
        }
        _ => CliError::Input(e.to_string()),
    }
}

fn certify_mode(ctx: &Context, mode: VertexMode) -> Result<Certificate, Error> {
    let r = &ctx.resolved;
    let opts = &ctx.config.options;
    match mode {
        VertexMode::Componentwise => certify_componentwise(&r.plant, &r.gain, &r.functions, &r.taus, opts),
        VertexMode::Scalar => certify_scalar(&r.plant, &r.gain, r.primary(), &r.taus, opts),
    }
}

fn requested_modes(ctx: &Context) -> Vec<VertexMode> {
    let mut modes = Vec::new();
    if ctx.config.mode.componentwise() {
        modes.push(VertexMode::Componentwise);
    }
    if ctx.config.mode.scalar() {
        modes.push(VertexMode::Scalar);
    }
    modes
}

/// `ε` used for time-to-ball: the configured value, or 1.5 times the smallest
/// radius the settling bound admits.
pub fn epsilon(ctx: &Context, cert: &Certificate) -> f64 {
    ctx.config.simulation.eps.unwrap_or_else(|| {
        let a = &cert.aggregates;
        let energy = ctx.config.options.energy_term(cert.f_bar);
        let floor = (2.0 * a.chi_max * energy / (a.tau_min * a.gamma_min)).sqrt();
        if floor > 0.0 {
            1.5 * floor
        } else {
            0.01 * cert.x_bar_used
        }
    })
}

fn mode_result(ctx: &Context, mode: VertexMode, outcome: Result<Certificate, Error>) -> ModeResult {
    match outcome {
        Err(e) => ModeResult { mode, certificate: None, settling: None, audit: None, error: Some(e.to_string()) },
        Ok(cert) => {
            let eps = epsilon(ctx, &cert);
            let settling = Settling {
                x0_norm: cert.x0_radius,
                eps,
                f_bar: cert.f_bar,
                time_bound: settling_time(&cert, cert.x0_radius, eps, cert.f_bar),
            };
            let a = &cert.aggregates;
            let n2 = (cert.n * cert.n) as f64;
            let energy = ctx.config.options.energy_term(cert.f_bar);
            let audit = InitialSetAudit {
                radius_formula: "x0 = sqrt((tau*gamma*xbar^2 - 2*chi*f_bar) / (n^2 * tau * |P|))".into(),
                proof_line: "gamma * n^2 * xbar^2 = 2*chi*f_bar/tau + |P| * x0^2".into(),
                proof_lhs: a.gamma_min * n2 * cert.x_bar_used * cert.x_bar_used,
                proof_rhs: 2.0 * a.chi_max * energy / a.tau_min + a.p_norm_max * cert.x0_radius * cert.x0_radius,
                identity: "gamma * xbar^2 = 2*chi*f_bar/tau + n^2 * |P| * x0^2".into(),
                identity_lhs: a.gamma_min * cert.x_bar_used * cert.x_bar_used,
                identity_rhs: 2.0 * a.chi_max * energy / a.tau_min + n2 * a.p_norm_max * cert.x0_radius * cert.x0_radius,
                energy_term: if cert.strict_energy { "f_bar^2".into() } else { "f_bar".into() },
            };
            ModeResult { mode, certificate: Some(cert), settling: Some(settling), audit: Some(audit), error: None }
        }
    }
}

/// Results per requested mode, plus the first failure (for the exit code).
fn run_certifications(ctx: &Context) -> (Vec<ModeResult>, Option<CliError>) {
    let modes = requested_modes(ctx);
    let outcomes: Vec<_> = ctx.pool.install(|| modes.par_iter().map(|&m| (m, certify_mode(ctx, m))).collect());
    let first = outcomes.iter().find_map(|(_, o)| o.as_ref().err()).map(classify);
    (outcomes.into_iter().map(|(m, o)| mode_result(ctx, m, o)).collect(), first)
}

fn describe(results: &[ModeResult]) -> String {
    let mut lines = Vec::new();
    for r in results {
        match (&r.certificate, &r.error) {
            (Some(c), _) => lines.push(format!(
                "{:?}: rho in [{:.6}, {:.6}] over {} intervals; region {} <= |x_i| <= {}; x0 radius {:.6}; T {}; delta {}",
                r.mode,
                c.rho_lo,
                c.rho_hi,
                c.intervals.len(),
                c.region.x_lo,
                c.region.x_hi,
                c.x0_radius,
                r.settling.as_ref().map_or("-".into(), |s| s.time_bound.to_string()),
                c.delta.map_or("-".into(), |d| format!("{d:.6}")),
            )),
            (None, Some(e)) => lines.push(format!("{:?}: not certified ({e})", r.mode)),
            _ => {}
        }
    }
    lines.join("\n")
}

pub fn certify(ctx: &Context) -> Result<Report, CliError> {
    let mut report = Report::new("certify", ctx.config.clone());
    let (results, first_error) = run_certifications(ctx);
    report.certificates = results;
    collect_warnings(&mut report);
    let path = ctx.write_report(&report)?;
    println!("{}\nreport: {}", describe(&report.certificates), path.display());
    match first_error {
        Some(e) if report.certificates.iter().all(|r| r.certificate.is_none()) => Err(e),
        _ => Ok(report),
    }
}

fn collect_warnings(report: &mut Report) {
    for r in &report.certificates {
        if let Some(c) = &r.certificate {
            for w in &c.warnings {
                report.warnings.push(format!("{:?}: {}", r.mode, serde_json::to_string(w).unwrap_or_default()));
            }
        }
    }
}

/// Constant disturbance of norm `f̄` along `(1, …, 1)/√l`.
fn constant_disturbance(l: usize, f_bar: f64) -> Disturbance {
    let v = if l == 1 { f_bar } else { f_bar / (l as f64).sqrt() * (1.0 - 4.0 * f64::EPSILON) };
    Disturbance::Constant { value: vec![v; l] }
}

pub fn compare(ctx: &Context) -> Result<Report, CliError> {
    let r = &ctx.resolved;
    let mut report = Report::new("compare", ctx.config.clone());
    let cmp = compare_report(&r.plant, &r.gain, r.primary(), &r.taus, &ctx.config.options);
    let cmp = match cmp {
        Ok(c) => c,
        Err(e) => {
            report.warnings.push(format!("comparison failed: {e}"));
            ctx.write_report(&report)?;
            return Err(classify(&e));
        }
    };
    let sim = &ctx.config.simulation;
    let opts = SimOptions { dt: sim.dt, t_end: sim.t_end, ..Default::default() };
    let dist = constant_disturbance(r.plant.l(), r.plant.f_bar);
    let x0 = vec![0.0; r.plant.n()];
    let laws = [
        ControlLaw::linear(r.gain.clone()),
        ControlLaw::componentwise(r.gain.clone(), r.functions.clone()).map_err(|e| classify(&e))?,
        ControlLaw::scalar_wrapped(r.gain.clone(), r.primary().clone()),
    ];
    let errors: Vec<f64> = ctx.pool.install(|| {
        laws.par_iter()
            .map(|law| {
                simulate(&r.plant, law, &dist, &x0, &opts)
                    .map(|t| empirical_ultimate_bound(&t, sim.tail_fraction))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    });
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(CliError::Diverged("steady-state simulation failed".into()));
    }
    println!("{:<14} {:>12} {:>12} {:>14}", "law", "gamma", "delta", "steady error");
    println!("{:<14} {:>12.6} {:>12.6} {:>14.6}", "linear", cmp.gamma_lin, cmp.delta_lin, errors[0]);
    println!("{:<14} {:>12.6} {:>12.6} {:>14.6}", "componentwise", cmp.gamma_nl, cmp.delta_nl, errors[1]);
    println!("{:<14} {:>12.6} {:>12.6} {:>14.6}", "scalar", cmp.gamma_nl, cmp.delta_nl, errors[2]);
    println!("rho_bar = {:.6}; delta_nl <= delta_lin: {}", cmp.rho_bar, cmp.nonlinear_not_worse);
    report.warnings.extend(cmp.notes.iter().cloned());
    report.comparison = Some(ComparisonRecord {
        comparison: cmp,
        steady_state: SteadyState { linear: errors[0], componentwise: errors[1], scalar: errors[2] },
    });
    let path = ctx.write_report(&report)?;
    println!("report: {}", path.display());
    Ok(report)
}

/// Uniform sample from the ball of radius `r` in `n` dimensions.
fn sample_ball(rng: &mut SplitMix64, n: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let radius = r * rng.next_f64().powf(1.0 / n as f64);
            return v.iter().map(|x| x / norm * radius).collect();
        }
    }
}

struct Job<'a> {
    name: &'static str,
    law: ControlLaw,
    cert: Option<&'a Certificate>,
}

pub fn simulate_cmd(ctx: &Context) -> Result<Report, CliError> {
    let r = &ctx.resolved;
    let sim = &ctx.config.simulation;
    let mut report = Report::new("simulate", ctx.config.clone());
    report.certificates = run_certifications(ctx).0;
    collect_warnings(&mut report);

    let cert_for = |mode: VertexMode| {
        report.certificates.iter().find(|m| m.mode == mode).and_then(|m| m.certificate.as_ref())
    };
    let mut jobs = Vec::new();
    if ctx.config.mode.componentwise() {
        let law = ControlLaw::componentwise(r.gain.clone(), r.functions.clone()).map_err(|e| classify(&e))?;
        jobs.push(Job { name: "componentwise", law, cert: cert_for(VertexMode::Componentwise) });
    }
    if ctx.config.mode.scalar() {
        jobs.push(Job { name: "scalar", law: ControlLaw::scalar_wrapped(r.gain.clone(), r.primary().clone()), cert: cert_for(VertexMode::Scalar) });
    }
    if sim.include_linear {
        jobs.push(Job { name: "linear", law: ControlLaw::linear(r.gain.clone()), cert: None });
    }

    let mut x0s = sim.x0.clone();
    if let Some(rand) = &sim.random_x0 {
        let radius = match rand.radius {
            Some(v) => v,
            None => jobs
                .iter()
                .filter_map(|j| j.cert.map(|c| c.x0_radius))
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
                .ok_or_else(|| CliError::Input("random_x0 needs a radius when no certificate is available".into()))?,
        };
        let mut rng = SplitMix64::new(ctx.config.seed);
        for _ in 0..rand.count {
            x0s.push(sample_ball(&mut rng, r.plant.n(), radius));
        }
    }
    if x0s.is_empty() {
        return Err(CliError::Input("simulation: no initial states (set x0 or random_x0)".into()));
    }

    let opts = SimOptions { dt: sim.dt, t_end: sim.t_end, ..Default::default() };
    let tasks: Vec<(usize, usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..x0s.len()).flat_map(move |i| (0..sim.disturbances.len()).map(move |d| (j, i, d))))
        .collect();
    let results: Vec<Result<SimSummary, CliError>> = ctx.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(j, i, d)| {
                let job = &jobs[j];
                let traj = simulate(&r.plant, &job.law, &sim.disturbances[d], &x0s[i], &opts).map_err(|e| classify(&e))?;
                let eps = job.cert.map_or(sim.eps.unwrap_or(0.01), |c| epsilon(ctx, c));
                let csv = if sim.write_csv {
                    let name = format!("run_{}_{i}_{d}.csv", job.name);
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
                    ctx.write(&name, &String::from_utf8_lossy(&buf))?;
                    Some(name)
                } else {
                    None
                };
                let t_star = time_to_ball(&traj, eps);
                let delta_emp = empirical_ultimate_bound(&traj, sim.tail_fraction);
                let max_component = traj.states.iter().map(|x| x.amax()).fold(0.0, f64::max);
                let x0_norm = x0s[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                let checks = job.cert.filter(|c| c.x0_radius > 0.0 && x0_norm <= c.x0_radius * (1.0 + 1e-12)).map(|c| {
                    let f_used = sim.disturbances[d].bound();
                    let time_bound = settling_time(c, x0_norm, eps, f_used);
                    let tol = 1.0 + SIM_CHECK_RTOL;
                    RunChecks {
                        contained: !traj.diverged && max_component <= c.x_bar_used * tol,
                        time_bound,
                        time_ok: match (t_star, time_bound) {
                            (_, ExtReal::Infinite) => true,
                            (Some(t), ExtReal::Finite(b)) => t <= b * tol,
                            (None, _) => false,
                        },
                        delta: c.delta,
                        delta_ok: c.delta.is_none_or(|dl| delta_emp <= dl * tol),
                    }
                });
                Ok(SimSummary {
                    law: job.name.into(),
                    x0: x0s[i].clone(),
                    disturbance: d,
                    diverged: traj.diverged,
                    delta_emp,
                    eps,
                    t_star,
                    max_component,
                    checks,
                    csv,
                })
            })
            .collect()
    });
    for res in results {
        report.simulations.push(res?);
    }
    let diverged = report.simulations.iter().filter(|s| s.diverged).count();
    let failed = report
        .simulations
        .iter()
        .filter(|s| s.checks.as_ref().is_some_and(|c| !(c.contained && c.time_ok && c.delta_ok)))
        .count();
    if failed > 0 {
        report.warnings.push(format!("{failed} runs violate a certified bound"));
    }
    let path = ctx.write_report(&report)?;
    println!(
        "{} runs ({} diverged, {} checked against certificates, {failed} violations); summary: {}",
        report.simulations.len(),
        diverged,
        report.simulations.iter().filter(|s| s.checks.is_some()).count(),
        path.display()
    );
    if diverged > 0 {
        return Err(CliError::Diverged(format!("{diverged} runs diverged")));
    }
    Ok(report)
}

fn parameter_name(p: SweepParameter) -> &'static str {
    match p {
        SweepParameter::Mu => "mu",
        SweepParameter::Sigma => "sigma",
        SweepParameter::Lambda => "lambda",
        SweepParameter::Theta => "theta",
    }
}

fn grid(axes: &[crate::config::SweepAxis]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| axis.values.iter().map(move |v| [p.clone(), vec![*v]].concat()))
            .collect();
    }
    points
}

pub fn sweep(ctx: &Context) -> Result<PathBuf, CliError> {
    let spec = ctx.config.sweep.as_ref().ok_or_else(|| CliError::Input("config has no sweep section".into()))?;
    let r = &ctx.resolved;
    let points = grid(&spec.axes);
    let modes = requested_modes(ctx);
    let tasks: Vec<(VertexMode, &Vec<f64>)> = modes.iter().flat_map(|&m| points.iter().map(move |p| (m, p))).collect();
    let rows: Vec<String> = ctx.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mode, values)| {
                let mut f = r.primary().clone();
                for (axis, v) in spec.axes.iter().zip(values) {
                    f = set_parameter(&f, axis.parameter, *v).expect("checked during validation");
                }
                let cells: Vec<String> = values.iter().map(f64::to_string).collect();
                let prefix = format!("{},{}", mode_name(mode), cells.join(","));
                if let Err(e) = f.validate() {
                    return format!("{prefix},invalid,,,,,,,,,{}", csv_text(&e.to_string()));
                }
                let opts = &ctx.config.options;
                let outcome = match mode {
                    VertexMode::Componentwise => certify_componentwise(&r.plant, &r.gain, std::slice::from_ref(&f), &r.taus, opts),
                    VertexMode::Scalar => certify_scalar(&r.plant, &r.gain, &f, &r.taus, opts),
                };
                match outcome {
                    Ok(c) => format!(
                        "{prefix},certified,{},{},{},{},{},{},{},{},",
                        c.rho_lo,
                        c.rho_hi,
                        c.region.x_lo,
                        c.region.x_hi,
                        c.x_bar_used,
                        c.x0_radius,
                        c.delta.map_or(String::new(), |d| d.to_string()),
                        c.intervals.len()
                    ),
                    Err(e) => {
                        let status = match classify(&e) {
                            CliError::Infeasible(_) => "infeasible",
                            _ => "error",
                        };
                        format!("{prefix},{status},,,,,,,,,{}", csv_text(&e.to_string()))
                    }
                }
            })
            .collect()
    });
    let names: Vec<&str> = spec.axes.iter().map(|a| parameter_name(a.parameter)).collect();
    let header = format!("mode,{},status,rho_lo,rho_hi,x_lo,x_hi,x_bar_used,x0_radius,delta,intervals,message", names.join(","));
    let body = std::iter::once(header).chain(rows).collect::<Vec<_>>().join("\n") + "\n";
    let path = ctx.write("sweep.csv", &body)?;
    let mut report = Report::new("sweep", ctx.config.clone());
    report.warnings.push(format!("sweep rows written to {}", path.display()));
    ctx.write_report(&report)?;
    println!("{} rows: {}", tasks.len(), path.display());
    Ok(path)
}

fn mode_name(mode: VertexMode) -> &'static str {
    match mode {
        VertexMode::Componentwise => "theorem1",
        VertexMode::Scalar => "theorem2",
    }
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

pub fn out_dir(cli_out: Option<&Path>, config: &AnalysisConfig) -> PathBuf {
    cli_out.map_or_else(|| config.output.dir.clone(), Path::to_path_buf)
}
