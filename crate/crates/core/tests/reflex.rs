use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tendon_core::linalg::Mat;
use tendon_core::plant::{distribute_tension, ArmPlant, ThermalPlant};
use tendon_core::reflex::*;
use tendon_core::Error;

fn pair(tau: f64, f_min: f64, w1: f64, w2: f64) -> RelaxProblem<f64> {
    RelaxProblem {
        tau_nec: vec![tau],
        g: Mat::from_rows(&[[0.02], [-0.02]]),
        f_min: vec![f_min; 2],
        w1: vec![w1; 2],
        w2: vec![w2],
    }
}

#[test]
fn symmetric_antagonists_sit_on_the_floor() {
    let x = solve_necessary_tension(&pair(0.0, 5.0, 1.0, 1e6)).unwrap();
    assert_eq!(x, vec![5.0, 5.0]);
}

#[test]
fn single_muscle_supplies_the_torque() {
    let prob = pair(-0.1, 0.0, 1e-6, 1e6);
    let x = solve_necessary_tension(&prob).unwrap();
    // coarse grid, then a fine grid around the best cell
    let search = |best: &mut (f64, f64, f64), lo: [f64; 2], step: f64, n: usize| {
        for i in 0..=n {
            for j in 0..=n {
                let p = [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
                if p[0] < 0.0 || p[1] < 0.0 {
                    continue;
                }
                let v = prob.objective(&p);
                if v < best.0 {
                    *best = (v, p[0], p[1]);
                }
            }
        }
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    search(&mut best, [0.0, 0.0], 0.01, 1000);
    let (b1, b2) = (best.1, best.2);
    search(&mut best, [b1 - 0.01, b2 - 0.01], 1e-5, 2000);
    assert!((best.1 - 5.0).abs() < 1e-3 && best.2 < 1e-3, "{best:?}");
    assert!((x[0] - best.1).abs() < 1e-3 && (x[1] - best.2).abs() < 1e-3, "{x:?} vs {best:?}");
    assert!(prob.objective(&x) <= best.0);
}

fn random_problem(rng: &mut ChaCha8Rng) -> RelaxProblem<f64> {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(n + 1..=8);
    let g = Mat::from_vec(m, n, (0..m * n).map(|_| rng.gen_range(-0.05..0.05)).collect());
    RelaxProblem {
        tau_nec: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        g,
        f_min: (0..m).map(|_| rng.gen_range(0.0..5.0)).collect(),
        w1: (0..m).map(|_| rng.gen_range(0.5..2.0)).collect(),
        w2: (0..n).map(|_| rng.gen_range(100.0..2000.0)).collect(),
    }
}

/// Accelerated projected gradient on the original objective, run far past
/// the tolerance of interest.
fn projected_gradient_oracle(p: &RelaxProblem<f64>) -> Vec<f64> {
    let m = p.g.rows();
    let n = p.g.cols();
    let grad = |x: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = (0..n).map(|k| (0..m).map(|i| p.g[(i, k)] * x[i]).sum::<f64>() + p.tau_nec[k]).collect();
        (0..m).map(|i| 2.0 * p.w1[i] * x[i] + (0..n).map(|k| 2.0 * p.g[(i, k)] * p.w2[k] * r[k]).sum::<f64>()).collect()
    };
    let mut lip = 0.0_f64;
    for i in 0..m {
        let mut row = 2.0 * p.w1[i];
        for j in 0..m {
            row += (0..n).map(|k| 2.0 * (p.g[(i, k)] * p.w2[k] * p.g[(j, k)]).abs()).sum::<f64>();
        }
        lip = lip.max(row);
    }
    let mut x = p.f_min.clone();
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..200_000 {
        let gy = grad(&y);
        let xn: Vec<f64> = (0..m).map(|i| (y[i] - gy[i] / lip).max(p.f_min[i])).collect();
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = (0..m).map(|i| xn[i] + (t - 1.0) / tn * (xn[i] - x[i])).collect();
        x = xn;
        t = tn;
        if moved < 1e-14 {
            break;
        }
    }
    x
}

#[test]
fn agrees_with_projected_gradient_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = random_problem(&mut rng);
        let x = solve_necessary_tension(&p).unwrap();
        let o = projected_gradient_oracle(&p);
        for (a, b) in x.iter().zip(&o) {
            worst = worst.max((a - b).abs());
        }
        assert!(relative_kkt_residual(&p, &x) < 1e-8);
        assert!(x.iter().zip(&p.f_min).all(|(a, b)| a >= b));
        let best = p.objective(&x);
        for _ in 0..1000 {
            let y: Vec<f64> = p.f_min.iter().map(|&lo| lo + rng.gen_range(0.0..20.0_f64).powi(2) / 20.0).collect();
            assert!(best <= p.objective(&y) + 1e-12 * best.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-4, "worst disagreement {worst} N");
}

#[test]
fn dimension_mismatch_is_a_usage_error() {
    let mut p = pair(0.0, 1.0, 1.0, 1.0);
    p.w2.push(1.0);
    assert!(matches!(solve_necessary_tension(&p), Err(Error::Usage(_))));
}

fn cocontracted(plant: &ArmPlant<f64>, theta: &[f64], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let tau: Vec<f64> = plant.gravity_torque(theta, 0.0).iter().map(|v| -v).collect();
    let f = distribute_tension(&plant.moment_arm_matrix(theta), &tau, &vec![floor; plant.n_muscles]).unwrap();
    let l = plant.lengths_for_tensions(theta, &f);
    let eq = plant.quasi_static_solve_from(theta, &l, &[0.0, 0.0], 0.0).unwrap();
    (eq.tensions, l)
}

#[test]
fn nothing_to_relax_gives_zero_offsets() {
    let plant = ArmPlant::default_arm();
    let th = [0.0, 0.0];
    let (f, l) = cocontracted(&plant, &th, 3.0);
    let nec = solve_necessary_tension(&RelaxProblem::for_posture(&plant, &th, 3.0, 1.0, 1e6)).unwrap();
    let off = relax_step(&plant, &th, &nec, &f, &l, &RelaxOptions::default()).unwrap();
    assert!(off.iter().all(|&o| o == 0.0));
}

#[test]
fn cocontraction_at_rest_is_bled_off() {
    let plant = ArmPlant::default_arm();
    let th = [0.0, 0.0];
    let (f, l) = cocontracted(&plant, &th, 40.0);
    let nec = solve_necessary_tension(&RelaxProblem::for_posture(&plant, &th, 1.0, 1.0, 1e6)).unwrap();
    let opts = RelaxOptions::default();
    let off = relax_step(&plant, &th, &nec, &f, &l, &opts).unwrap();
    assert!(off.iter().all(|&o| o >= 0.0));
    let cmd: Vec<f64> = l.iter().zip(&off).map(|(a, b)| a + b).collect();
    let eq = plant.quasi_static_solve_from(&th, &cmd, &[0.0, 0.0], 0.0).unwrap();
    let before: f64 = f.iter().sum();
    let after: f64 = eq.tensions.iter().sum();
    assert!(after <= 0.5 * before, "{before} -> {after}");
    assert!(eq.theta.iter().all(|v| v.abs() < 0.02), "{:?}", eq.theta);
    assert!(eq.tensions.iter().zip(&nec).all(|(t, n)| *t < n + 3.0 * opts.margin), "{:?}", eq.tensions);
}

#[test]
fn load_bearing_muscle_is_relaxed_last() {
    let plant = ArmPlant::default_arm();
    let th = [0.8, 0.5];
    let (f, l) = cocontracted(&plant, &th, 25.0);
    let nec = solve_necessary_tension(&RelaxProblem::for_posture(&plant, &th, 1.0, 1.0, 1e6)).unwrap();
    let heavy = (0..4).max_by(|&a, &b| nec[a].partial_cmp(&nec[b]).unwrap()).unwrap();
    let off = relax_step(&plant, &th, &nec, &f, &l, &RelaxOptions::default()).unwrap();
    let cmd: Vec<f64> = l.iter().zip(&off).map(|(a, b)| a + b).collect();
    let eq = plant.quasi_static_solve_from(&th, &cmd, &[0.0, 0.0], 0.0).unwrap();
    assert!(eq.theta.iter().zip(&th).all(|(a, b)| (a - b).abs() < 0.02));
    assert!(eq.tensions[heavy] >= nec[heavy] - 1e-6);
    assert!(eq.tensions.iter().sum::<f64>() < f.iter().sum::<f64>());
    // every lighter muscle was given its chance first: none is left far above its need
    for i in 0..4 {
        if i != heavy {
            assert!(off[i] > 0.0, "{off:?}");
        }
    }
}

#[test]
fn relaxation_and_variable_stiffness_exclude_each_other() {
    assert!(ReflexMode::Relaxation.check_command::<f64>(None).is_ok());
    assert!(matches!(ReflexMode::Relaxation.check_command(Some(2.0)), Err(Error::Usage(_))));
    assert!(ReflexMode::VariableStiffness.check_command(Some(2.0)).is_ok());
}

const TRUE_P: [f64; 5] = [1.0 / 15.0, 1.0 / 150.0, 0.5, 0.25, 1.0];

fn estimator() -> ThermalParams<f64> {
    let prior = [1.1, 0.9, 1.1, 0.92, 1.08];
    ThermalParams::new(std::array::from_fn(|i| TRUE_P[i] * prior[i]), 25.0, 100.0).unwrap()
}

fn profile(t: f64) -> f64 {
    let step = if ((t / 120.0).floor() as i64) % 2 == 1 { 1.0 } else { -1.0 };
    (2.5 + 1.5 * (2.0 * std::f64::consts::PI * t / 300.0).sin() + step).max(0.0)
}

#[test]
fn equilibrium_data_leaves_parameters_unchanged() {
    let mut est = estimator();
    let before = est.log_p;
    for _ in 0..100 {
        est.thermal_update(25.0, 0.0, 1.0).unwrap();
    }
    assert_eq!(est.log_p, before);
}

#[test]
fn constant_current_prediction_converges() {
    let plant = ThermalPlant::default();
    let mut est = estimator();
    let (mut c1, mut c2) = (25.0, 25.0);
    est.thermal_update(c2, 0.0, 1.0).unwrap();
    let mut last = 0.0;
    for _ in 0..600 {
        (c1, c2) = plant.thermal_step(c1, c2, 3.0, 1.0).unwrap();
        last = est.thermal_update(c2, 3.0, 1.0).unwrap();
    }
    assert!(last.abs() < 0.5, "{last}");
}

#[test]
fn hidden_core_temperature_is_tracked() {
    let plant = ThermalPlant::default();
    let mut est = estimator();
    let (mut c1, mut c2) = (25.0, 25.0);
    est.thermal_update(c2, 0.0, 1.0).unwrap();
    let mut worst_c2: f64 = 0.0;
    let mut worst_c1: f64 = 0.0;
    for t in 0..7200 {
        let i = profile(t as f64);
        (c1, c2) = plant.thermal_step(c1, c2, i, 1.0).unwrap();
        let e = est.thermal_update(c2, i, 1.0).unwrap();
        if t >= 5400 {
            worst_c2 = worst_c2.max(e.abs());
            worst_c1 = worst_c1.max((est.c1_est - c1).abs());
        }
    }
    assert!(worst_c2 < 0.5 && worst_c1 < 3.0, "c2 {worst_c2}, c1 {worst_c1}");
}

#[test]
fn limit_at_rated_is_the_holding_current() {
    let mut est = estimator();
    est.c1_est = 100.0;
    let [_, _, k12, k2a, _] = est.p();
    // housing at the steady state that belongs to a core at rated temperature
    let c2 = (k12 * 100.0 + k2a * 25.0) / (k12 + k2a);
    let hold = est.holding_current(100.0, c2);
    for horizon in [1.0, 10.0, 60.0] {
        let i = est.thermal_limit(c2, horizon).unwrap();
        assert!((i - hold).abs() < 1e-4 * hold, "{horizon}: {i} vs {hold}");
    }
}

#[test]
fn limit_is_monotone_in_horizon_and_core_estimate() {
    let mut est = estimator();
    let short = est.thermal_limit(25.0, 1.0).unwrap();
    let long = est.thermal_limit(25.0, 60.0).unwrap();
    assert!(short >= long && short > 10.0, "{short} {long}");
    let mut prev = f64::INFINITY;
    for c1 in [25.0, 50.0, 75.0, 95.0, 100.0, 110.0] {
        est.c1_est = c1;
        let i = est.thermal_limit(40.0, 10.0).unwrap();
        assert!(i <= prev && i >= 0.0);
        prev = i;
    }
    assert_eq!(prev, 0.0);
    let mut bad = estimator();
    bad.rated = 20.0;
    assert!(bad.thermal_limit(25.0, 10.0).is_err());
}

#[test]
fn running_at_the_limit_keeps_the_true_core_near_rated() {
    let plant = ThermalPlant::default();
    let mut est = estimator();
    let (mut c1, mut c2) = (25.0, 25.0);
    est.thermal_update(c2, 0.0, 1.0).unwrap();
    for t in 0..7200 {
        let i = profile(t as f64);
        (c1, c2) = plant.thermal_step(c1, c2, i, 1.0).unwrap();
        est.thermal_update(c2, i, 1.0).unwrap();
    }
    let mut peak: f64 = 0.0;
    for _ in 0..1800 {
        let i = est.thermal_limit(c2, 10.0).unwrap();
        (c1, c2) = plant.thermal_step(c1, c2, i, 1.0).unwrap();
        est.thermal_update(c2, i, 1.0).unwrap();
        peak = peak.max(c1);
    }
    assert!(peak <= 102.0, "{peak}");
    assert!(peak > 90.0, "the limiter should use the headroom: {peak}");
}

#[test]
fn log_has_one_row_per_snapshot() {
    let est = estimator();
    let mut log = ThermalLog::new(Vec::new()).unwrap();
    log.record(0.0, &est, 25.0, 0.0).unwrap();
    log.record(1.0, &est, 25.5, 2.0).unwrap();
    let text = String::from_utf8(log.into_inner().unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,p1,p2,p3,p4,p5,c1_est,c2,current");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2].split(',').count(), 9);
}

#[test]
fn bad_thermal_inputs_are_rejected() {
    let mut est = estimator();
    assert!(est.thermal_update(25.0, 1.0, 0.0).is_err());
    assert!(est.thermal_update(25.0, 1.0, 2.0).is_err());
    assert!(ThermalParams::new([1.0, 1.0, -1.0, 1.0, 1.0], 25.0, 100.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parameters_stay_positive(seq in proptest::collection::vec((0.0..200.0f64, 0.0..20.0f64, 0.05..1.0f64), 1..200)) {
        let mut est = estimator();
        for (c2, i, dt) in seq {
            est.thermal_update(c2, i, dt).unwrap();
            prop_assert!(est.p().iter().all(|&v| v > 0.0 && v.is_finite()));
            prop_assert!(est.c1_est >= c2.min(est.ambient) - 1.0);
        }
    }
}
