use oddlaw::*;

fn plant() -> Plant {
    Plant::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[0.0, 1.0], &[vec![0.0], vec![1.0]], 0.1).unwrap()
}

fn gain() -> Gain {
    Gain::new(&[-2.0, -3.0])
}

fn sat() -> OddFunction {
    OddFunction::scaled_saturation(1.0, 1.0).unwrap()
}

fn certificate() -> Certificate {
    certify_componentwise(&plant(), &gain(), &[sat()], &TauSchedule::Uniform(0.1), &CertifyOptions::default()).unwrap()
}

#[test]
fn lyapunov_function_decays_at_certified_rate_without_disturbance() {
    let cert = certificate();
    let x0 = [cert.x0_radius * 0.8, -cert.x0_radius * 0.6];
    let law = ControlLaw::componentwise_uniform(gain(), sat());
    let opts = SimOptions { t_end: 20.0, ..Default::default() };
    let traj = simulate(&plant(), &law, &Disturbance::Zero, &x0, &opts).unwrap();
    let tau = cert.aggregates.tau_min;
    let decay = (-tau * opts.dt).exp();
    let mut checked = 0;
    for k in 0..traj.len() - 1 {
        let (a, b) = (&traj.states[k], &traj.states[k + 1]);
        let slopes: Vec<f64> = a.iter().map(|&s| if s == 0.0 { 1.0 } else { eval_phi(&sat(), s) / s }).collect();
        let Some(j) = cert.interval_for_slopes(&slopes) else { continue };
        let p = &cert.intervals[j].solution.p;
        let (va, vb) = (a.dot(&(p * a)), b.dot(&(p * b)));
        assert!(vb <= va * decay * (1.0 + 1e-9) + 1e-300, "step {k}: {vb} > {va}·e^(−τdt)");
        checked += 1;
    }
    assert!(checked > traj.len() / 2);
}

#[test]
fn sinusoidal_run_stays_below_certified_ultimate_bound() {
    let cert = certificate();
    let law = ControlLaw::componentwise_uniform(gain(), sat());
    let dist = Disturbance::Sinusoid { amplitude: 0.1, frequency: 1.0, phase: 0.0, direction: None };
    let traj = simulate(&plant(), &law, &dist, &[1.0, 0.0], &SimOptions { t_end: 40.0, ..Default::default() }).unwrap();
    let delta = cert.delta.unwrap();
    assert!(empirical_ultimate_bound(&traj, 0.25) <= delta);
}

#[test]
fn certified_run_enters_ball_before_bound() {
    let cert = certificate();
    let law = ControlLaw::componentwise_uniform(gain(), sat());
    let r = cert.x0_radius;
    let traj = simulate(&plant(), &law, &Disturbance::Zero, &[r, 0.0], &SimOptions { t_end: 40.0, ..Default::default() }).unwrap();
    let t_bound = settling_time(&cert, r, 0.01, 0.0).finite().unwrap();
    let t_star = time_to_ball(&traj, 0.01).unwrap();
    assert!(t_star <= t_bound, "{t_star} > {t_bound}");
}

#[test]
fn certificate_survives_json_round_trip() {
    let cert = certificate();
    let json = serde_json::to_string(&cert).unwrap();
    let back: Certificate = serde_json::from_str(&json).unwrap();
    assert_eq!(back.intervals.len(), cert.intervals.len());
    assert_eq!(back.rho_hi, cert.rho_hi);
    assert_eq!(back.x0_radius, cert.x0_radius);
    assert_eq!(back.aggregates, cert.aggregates);
    for (a, b) in back.intervals.iter().zip(&cert.intervals) {
        assert_eq!(a.solution.p, b.solution.p);
    }
}
