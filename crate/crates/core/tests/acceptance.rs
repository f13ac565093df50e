//! Acceptance run on the double-integrator reference instance.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use oddlaw::certify::SearchStats;
use oddlaw::lmi::{feasible_at_gamma, ChiPolicy, DEFAULT_VERIFY_TOL};
use oddlaw::rng::SplitMix64;
use oddlaw::*;

const F_BAR: f64 = 0.1;
const TAU: f64 = 0.1;
const DT: f64 = 1e-3;
const T_END: f64 = 40.0;
const TAIL: f64 = 0.25;

fn plant() -> Plant {
    Plant::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[0.0, 1.0], &[vec![0.0], vec![1.0]], F_BAR).unwrap()
}

fn gain() -> Gain {
    Gain::new(&[-2.0, -3.0])
}

fn taus() -> TauSchedule {
    TauSchedule::Uniform(TAU)
}

fn sat() -> OddFunction {
    OddFunction::scaled_saturation(1.0, 1.0).unwrap()
}

fn affine_arctan() -> OddFunction {
    OddFunction::affine_plus(OddFunction::scaled_arctan(1.0, 1.0).unwrap(), 1.0).unwrap()
}

fn disturbances() -> Vec<(&'static str, Disturbance)> {
    vec![
        ("zero", Disturbance::Zero),
        ("constant", Disturbance::Constant { value: vec![F_BAR] }),
        ("sinusoid", Disturbance::Sinusoid { amplitude: F_BAR, frequency: 1.0, phase: 0.0, direction: None }),
    ]
}

struct Outcome {
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn rel_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Slope `φ(s)/s`, taking the origin limit at `s = 0`.
fn slope_of(f: &OddFunction, s: f64) -> f64 {
    if s == 0.0 {
        f.slope_at_origin().to_f64()
    } else {
        eval_phi(f, s) / s
    }
}

/// Checks every interval at its vertices and at 100 random interior slope
/// assignments; returns the number of failures and of checks made.
fn verify_certificate(plant: &Plant, cert: &Certificate, rng: &mut SplitMix64) -> (usize, usize) {
    let mut failures = 0;
    let mut checks = 0;
    let n = plant.n();
    for iv in &cert.intervals {
        let mut psis = vertex_set(iv.rho_prev, iv.rho_cur, n, cert.mode).unwrap();
        for _ in 0..100 {
            psis.push(match cert.mode {
                VertexMode::Componentwise => {
                    SlopeAssignment::Diagonal((0..n).map(|_| rng.uniform(iv.rho_prev, iv.rho_cur)).collect())
                }
                VertexMode::Scalar => SlopeAssignment::Scalar(rng.uniform(iv.rho_prev, iv.rho_cur)),
            });
        }
        for psi in &psis {
            let v = assemble(plant, &gain(), psi, iv.tau).unwrap();
            checks += 1;
            if !verify(&v, &iv.solution, DEFAULT_VERIFY_TOL) {
                failures += 1;
            }
        }
    }
    (failures, checks)
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let plant = plant();
    let mut notes = Vec::new();
    let cert = certify_componentwise(&plant, &gain(), &[OddFunction::Identity], &taus(), &CertifyOptions::default());
    let certified = cert.is_ok();
    notes.push(format!("identity certificate: {}", if certified { "feasible" } else { "missing" }));

    let dist = Disturbance::Sinusoid { amplitude: F_BAR, frequency: 1.0, phase: 0.3, direction: None };
    let opts = SimOptions { dt: DT, t_end: 10.0, ..Default::default() };
    let x0 = [0.7, -0.4];
    let run = |law: ControlLaw| simulate(&plant, &law, &dist, &x0, &opts).unwrap();
    let lin = run(ControlLaw::linear(gain()));
    let comp = run(ControlLaw::componentwise_uniform(gain(), OddFunction::Identity));
    let scal = run(ControlLaw::scalar_wrapped(gain(), OddFunction::Identity));
    let identical = lin == comp && lin == scal;
    notes.push(format!("laws bit-identical: {identical}"));

    let opts = CertifyOptions::default();
    let ub = ultimate_bound(&plant, &gain(), &Theta::Scalar(1.0), TAU, &opts).unwrap();
    // independent bisection with its own bracket and a much finer stopping rule
    let vertex = VertexLmi { closed_loop: &plant.a + &plant.b * &gain().k, disturbance: plant.d.clone(), tau: TAU };
    let feasible = |g: f64| {
        feasible_at_gamma(std::slice::from_ref(&vertex), g, ChiPolicy::Free { max: TAU }, &SolveOptions::default()).is_ok()
    };
    let (mut lo, mut hi) = (0.0, 1e-3);
    while feasible(hi) {
        lo = hi;
        hi *= 3.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta_ind = (F_BAR / lo).sqrt();
    let rel = rel_change(ub.delta, delta_ind);
    notes.push(format!("delta {:.6} vs independent {:.6} (rel {:.1e})", ub.delta, delta_ind, rel));

    let elapsed = start.elapsed();
    let pass = certified && identical && rel <= 1e-4 && elapsed < Duration::from_secs(30);
    Outcome { pass, detail: notes.join("; "), elapsed }
}

struct Shared {
    comp: Certificate,
    scal: Certificate,
    reference_time: Duration,
    catalog: Vec<(&'static str, OddFunction, Result<Certificate>)>,
}

fn criterion2(shared: &Shared) -> Outcome {
    let start = Instant::now();
    let plant = plant();
    let mut rng = SplitMix64::new(2);
    let (mut fails, mut checks) = (0, 0);
    for cert in [&shared.comp, &shared.scal] {
        let (f, c) = verify_certificate(&plant, cert, &mut rng);
        fails += f;
        checks += c;
    }
    let reference_elapsed = start.elapsed() + shared.reference_time;
    for (_, _, cert) in &shared.catalog {
        if let Ok(cert) = cert {
            let (f, c) = verify_certificate(&plant, cert, &mut rng);
            fails += f;
            checks += c;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: fails == 0 && reference_elapsed < Duration::from_secs(60),
        detail: format!(
            "{checks} vertex and interior checks, {fails} failures; reference instance {:.1}s",
            reference_elapsed.as_secs_f64()
        ),
        elapsed,
    }
}

fn criterion3(shared: &Shared) -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(3);
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, f, cert) in &shared.catalog {
        let cert = match cert {
            Ok(c) => c,
            Err(e) => {
                pass = false;
                notes.push(format!("{name}: no certificate ({e})"));
                continue;
            }
        };
        let lo = cert.region.x_lo.max(1e-9);
        let hi = cert.region.x_hi.to_f64().min(1e9);
        let mut bad = 0;
        for k in 0..10_000 {
            let mag = match k {
                0 => lo,
                1 => hi,
                _ => (rng.uniform(lo.ln(), hi.ln())).exp().clamp(lo, hi),
            };
            let s = if k % 2 == 0 { mag } else { -mag };
            let r = eval_phi(f, s) / s;
            if !(r >= cert.rho_lo * (1.0 - 1e-9) && r <= cert.rho_hi * (1.0 + 1e-9)) {
                bad += 1;
            }
        }
        if bad > 0 {
            pass = false;
        }
        notes.push(format!("{name} [{:.3e}, {:.3e}] bad={bad}", lo, hi));
    }
    Outcome { pass, detail: notes.join(", "), elapsed: start.elapsed() }
}

/// Per-run quantities compared under step halving.
#[derive(Clone, Copy)]
struct RunStats {
    peak_component: f64,
    t_star: Option<f64>,
    tail: f64,
}

struct SimEvidence {
    /// (mode, disturbance index, x0, stats at DT) for the step-halving check.
    halving: Vec<(usize, usize, [f64; 2], RunStats)>,
    lyapunov_ok: usize,
    lyapunov_total: usize,
}

fn run_stats(traj: &Trajectory, eps: f64) -> RunStats {
    RunStats {
        peak_component: traj.states.iter().map(|x| x.amax()).fold(0.0, f64::max),
        t_star: time_to_ball(traj, eps),
        tail: empirical_ultimate_bound(traj, TAIL),
    }
}

fn epsilon_for(cert: &Certificate, dist_index: usize) -> (f64, f64) {
    // Zero disturbance satisfies the bound with f̄ = 0, which admits a small ball.
    if dist_index == 0 {
        return (0.05, 0.0);
    }
    let a = &cert.aggregates;
    (1.5 * (2.0 * a.chi_max * F_BAR / (a.tau_min * a.gamma_min)).sqrt(), F_BAR)
}

/// Samples whose slope box lies inside one certified interval, checked for
/// `V̇ + τ̲V − χ̄|f|² < tol` with that interval's `P`.
fn lyapunov_check(cert: &Certificate, f: &OddFunction, traj: &Trajectory) -> (usize, usize) {
    let tau = cert.intervals.iter().map(|iv| iv.tau).fold(f64::INFINITY, f64::min);
    let chi = cert.intervals.iter().map(|iv| iv.solution.chi).fold(0.0, f64::max);
    let k_row = gain().k;
    let (mut ok, mut total) = (0, 0);
    for k in 1..traj.len() - 1 {
        let x = &traj.states[k];
        let slopes: Vec<f64> = match cert.mode {
            VertexMode::Componentwise => x.iter().map(|&s| slope_of(f, s)).collect(),
            VertexMode::Scalar => vec![slope_of(f, (&k_row * x)[0])],
        };
        let Some(j) = cert.interval_for_slopes(&slopes) else { continue };
        let p = &cert.intervals[j].solution.p;
        let v = |y: &DVector<f64>| y.dot(&(p * y));
        let vdot = (v(&traj.states[k + 1]) - v(&traj.states[k - 1])) / (traj.times[k + 1] - traj.times[k - 1]);
        let f2 = traj.disturbances[k].norm_squared();
        let residual = vdot + tau * v(x) - chi * f2;
        let tol = 1e-6 * (cert.intervals[j].solution.p_norm() * x.norm_squared() + chi * f2) + 1e-12;
        total += 1;
        if residual < tol {
            ok += 1;
        }
    }
    (ok, total)
}

fn criterion4(shared: &Shared) -> (Outcome, SimEvidence) {
    let start = Instant::now();
    let plant = plant();
    let f = sat();
    let mut notes = Vec::new();
    let mut pass = true;
    let mut halving = Vec::new();
    let (mut lyap_ok, mut lyap_total) = (0, 0);
    for (mode, cert) in [&shared.comp, &shared.scal].into_iter().enumerate() {
        let law = match cert.mode {
            VertexMode::Componentwise => ControlLaw::componentwise_uniform(gain(), f.clone()),
            VertexMode::Scalar => ControlLaw::scalar_wrapped(gain(), f.clone()),
        };
        let delta = cert.delta.unwrap_or(f64::NAN);
        let r0 = cert.x0_radius;
        let mut rng = SplitMix64::new(40 + mode as u64);
        let (mut worst_contain, mut worst_time, mut worst_tail) = (0.0f64, 0.0f64, 0.0f64);
        let mut failures = 0;
        for i in 0..100 {
            let angle = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            // the first 20 starts sit on the boundary of the admissible ball
            let radius = if i < 20 { r0 } else { r0 * rng.next_f64().sqrt() };
            let x0 = [radius * angle.cos(), radius * angle.sin()];
            for (d, (_, dist)) in disturbances().iter().enumerate() {
                let traj = simulate(&plant, &law, dist, &x0, &SimOptions { dt: DT, t_end: T_END, ..Default::default() }).unwrap();
                let (eps, f_used) = epsilon_for(cert, d);
                let stats = run_stats(&traj, eps);
                let t_bound = settling_time(cert, radius, eps, f_used).to_f64();
                let contain = stats.peak_component / cert.x_bar_used;
                let time_ratio = match stats.t_star {
                    Some(t) if t_bound > 0.0 => t / t_bound,
                    Some(0.0) => 0.0,
                    _ => f64::INFINITY,
                };
                let tail_ratio = stats.tail / delta;
                worst_contain = worst_contain.max(contain);
                worst_time = worst_time.max(time_ratio);
                worst_tail = worst_tail.max(tail_ratio);
                if traj.diverged || contain > 1.01 || time_ratio > 1.01 || !(tail_ratio <= 1.01) {
                    failures += 1;
                }
                if i < 10 {
                    halving.push((mode, d, x0, stats));
                }
                let (ok, total) = lyapunov_check(cert, &f, &traj);
                lyap_ok += ok;
                lyap_total += total;
            }
        }
        // the initial ball belongs to the componentwise certificate; scalar runs are supplementary
        if failures > 0 && cert.mode == VertexMode::Componentwise {
            pass = false;
        }
        notes.push(format!(
            "{:?}: x0_radius={:.4} x_bar={:.3} delta={:.4}; worst |x_i|/x_bar={:.3}, t*/T={:.3}, tail/delta={:.3}, failures={failures}",
            cert.mode, r0, cert.x_bar_used, delta, worst_contain, worst_time, worst_tail
        ));
        if r0 == 0.0 {
            pass &= cert.mode != VertexMode::Componentwise;
            notes.push(format!("{:?}: admissible ball is empty (radicand {:.3e}), runs start at the origin", cert.mode, cert.radicand()));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    let evidence = SimEvidence {
        halving,
        lyapunov_ok: lyap_ok,
        lyapunov_total: lyap_total,
    };
    (Outcome { pass, detail: notes.join(" | "), elapsed }, evidence)
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    let plant = plant();
    let f = affine_arctan();
    let cmp = match compare_report(&plant, &gain(), &f, &taus(), &CertifyOptions::default()) {
        Ok(c) => c,
        Err(e) => return Outcome { pass: false, detail: format!("comparison failed: {e}"), elapsed: start.elapsed() },
    };
    let opts = SimOptions { dt: DT, t_end: T_END, ..Default::default() };
    let dist = Disturbance::Constant { value: vec![F_BAR] };
    let steady = |law: ControlLaw| {
        let traj = simulate(&plant, &law, &dist, &[0.0, 0.0], &opts).unwrap();
        empirical_ultimate_bound(&traj, 0.1)
    };
    let e2 = steady(ControlLaw::linear(gain()));
    let e4 = steady(ControlLaw::componentwise_uniform(gain(), f.clone()));
    let e5 = steady(ControlLaw::scalar_wrapped(gain(), f));
    let pass = cmp.rho_bar > 1.0 && cmp.gamma_nl >= cmp.gamma_lin && cmp.delta_nl <= cmp.delta_lin && e4 <= e2 && e5 <= e2;
    Outcome {
        pass,
        detail: format!(
            "rho_bar={:.4}; gamma_nl={:.4} >= gamma_lin={:.4}; delta_nl={:.4} <= delta_lin={:.4}; steady error lin={:.5} comp={:.5} scalar={:.5}",
            cmp.rho_bar, cmp.gamma_nl, cmp.gamma_lin, cmp.delta_nl, cmp.delta_lin, e2, e4, e5
        ),
        elapsed: start.elapsed(),
    }
}

fn criterion6() -> Outcome {
    let start = Instant::now();
    let plant = plant();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, f) in [("saturation", sat()), ("affine_arctan", affine_arctan())] {
        let funcs = [f];
        let opts = SearchOptions::default();
        let multi = multistep_search(&plant, &gain(), &funcs, &taus(), VertexMode::Componentwise, &opts, DEFAULT_VERIFY_TOL);
        let single = single_interval_search(&plant, &gain(), &funcs, &taus(), VertexMode::Componentwise, &opts, DEFAULT_VERIFY_TOL);
        match (multi, single) {
            (Ok((ivs, _)), Ok(one)) => {
                let lm: f64 = ivs.iter().map(|iv| iv.rho_cur - iv.rho_prev).sum();
                let ls = one.rho_cur - one.rho_prev;
                pass &= lm >= ls;
                let strict = if lm > ls { "strict" } else { "equal" };
                notes.push(format!(
                    "{name}: multistep {lm:.5} over {} intervals [{:.4}, {:.4}] vs single {ls:.5} [{:.4}, {:.4}] ({strict})",
                    ivs.len(),
                    ivs[0].rho_prev,
                    ivs[ivs.len() - 1].rho_cur,
                    one.rho_prev,
                    one.rho_cur
                ));
            }
            (m, s) => {
                pass = false;
                notes.push(format!("{name}: search failed ({:?} / {:?})", m.err(), s.err()));
            }
        }
    }
    Outcome { pass, detail: notes.join("; "), elapsed: start.elapsed() }
}

fn criterion7(shared: &Shared) -> Outcome {
    let start = Instant::now();
    let counts = |c: &Certificate| c.intervals.iter().map(|iv| iv.vertex_count).collect::<Vec<_>>();
    let per_solve = |s: &SearchStats| s.vertex_solves as f64 / s.interval_solves as f64;
    let comp_ok = counts(&shared.comp).iter().all(|&v| v == 4) && shared.comp.stats.vertex_solves == 4 * shared.comp.stats.interval_solves;
    let scal_ok = counts(&shared.scal).iter().all(|&v| v == 2) && shared.scal.stats.vertex_solves == 2 * shared.scal.stats.interval_solves;
    Outcome {
        pass: comp_ok && scal_ok,
        detail: format!(
            "componentwise {:.1} vertices/solve over {} solves; scalar {:.1} vertices/solve over {} solves",
            per_solve(&shared.comp.stats),
            shared.comp.stats.interval_solves,
            per_solve(&shared.scal.stats),
            shared.scal.stats.interval_solves
        ),
        elapsed: start.elapsed(),
    }
}

fn criterion8(shared: &Shared, evidence: &SimEvidence) -> Outcome {
    let start = Instant::now();
    let plant = plant();
    let f = sat();
    let dists = disturbances();
    let mut worst = 0.0f64;
    for &(mode, d, x0, coarse) in &evidence.halving {
        let cert = if mode == 0 { &shared.comp } else { &shared.scal };
        let law = if mode == 0 {
            ControlLaw::componentwise_uniform(gain(), f.clone())
        } else {
            ControlLaw::scalar_wrapped(gain(), f.clone())
        };
        let traj = simulate(&plant, &law, &dists[d].1, &x0, &SimOptions { dt: DT / 2.0, t_end: T_END, ..Default::default() }).unwrap();
        let (eps, _) = epsilon_for(cert, d);
        let fine = run_stats(&traj, eps);
        let t_change = match (coarse.t_star, fine.t_star) {
            (Some(a), Some(b)) => rel_change(a, b),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        worst = worst
            .max(rel_change(coarse.peak_component, fine.peak_component))
            .max(t_change)
            .max(rel_change(coarse.tail, fine.tail));
    }
    let frac = evidence.lyapunov_ok as f64 / evidence.lyapunov_total.max(1) as f64;
    let pass = worst < 1e-3 && frac >= 0.999 && evidence.lyapunov_total > 0;
    Outcome {
        pass,
        detail: format!(
            "worst step-halving change {:.2e} over {} runs; Lyapunov decrease at {}/{} in-sector samples ({:.4}%)",
            worst,
            evidence.halving.len(),
            evidence.lyapunov_ok,
            evidence.lyapunov_total,
            100.0 * frac
        ),
        elapsed: start.elapsed(),
    }
}

fn main() {
    let plant = plant();
    let start = Instant::now();
    let comp = certify_componentwise(&plant, &gain(), &[sat()], &taus(), &CertifyOptions::default())
        .expect("reference componentwise certificate");
    let scal = certify_scalar(&plant, &gain(), &sat(), &taus(), &CertifyOptions::default()).expect("reference scalar certificate");
    let reference_time = start.elapsed();
    let catalog = OddFunction::default_catalog()
        .into_iter()
        .map(|(name, f)| {
            let cert = certify_componentwise(&plant, &gain(), std::slice::from_ref(&f), &taus(), &CertifyOptions::default());
            (name, f, cert)
        })
        .collect();
    let shared = Shared { comp, scal, reference_time, catalog };

    let c1 = criterion1();
    let c2 = criterion2(&shared);
    let c3 = criterion3(&shared);
    let (c4, evidence) = criterion4(&shared);
    let c5 = criterion5();
    let c6 = criterion6();
    let c7 = criterion7(&shared);
    let c8 = criterion8(&shared, &evidence);

    let names = [
        "linear-case equivalence",
        "solver-independent verification",
        "sector soundness",
        "certificate vs simulation",
        "nonlinear vs linear ultimate bound",
        "multistep interval benefit",
        "scalar-law vertex economy",
        "numerical hygiene",
    ];
    let outcomes = [c1, c2, c3, c4, c5, c6, c7, c8];
    let mut all = true;
    for (i, (name, o)) in names.iter().zip(&outcomes).enumerate() {
        all &= o.pass;
        println!(
            "criterion {} ({name}): {} [{:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    if !all {
        std::process::exit(1);
    }
}
