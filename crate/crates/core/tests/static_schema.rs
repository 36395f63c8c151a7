use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tendon_core::plant::ArmPlant;
use tendon_core::static_schema::*;
use tendon_core::Error;

struct Fixture {
    plant: ArmPlant<f64>,
    net: StaticNet<f64>,
    report: TrainReport,
    holdout: Vec<SensorTriple<f64>>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let plant = ArmPlant::default_arm();
        let cfg = StaticConfig::default();
        let t0 = std::time::Instant::now();
        let (net, report) = StaticNet::train_initial(&plant, 3600, &cfg, 7).unwrap();
        eprintln!("static training took {:?}: {:?}", t0.elapsed(), report.holdout);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let holdout = generate_samples(&plant, 300, &cfg, &mut rng).unwrap();
        Fixture { plant, net, report, holdout }
    })
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn holdout_completion_meets_thresholds() {
    let fx = fixture();
    let h = &fx.report.holdout;
    assert!(h.theta_rmse() < 0.05, "{h:?}");
    assert!(h.l_rmse() < 0.002, "{h:?}");
    assert!(h.f_rmse() < 3.0, "{h:?}");
    assert!(fx.report.loss_history[0] > *fx.report.loss_history.last().unwrap());
}

#[test]
fn masked_block_beats_mean_prediction() {
    let fx = fixture();
    let e = fx.net.evaluate(&fx.holdout);
    // a constant mean prediction scores about 1 in normalised units
    for (k, mask) in Mask::ALL.iter().enumerate() {
        assert!(e.per_mask_normalized[k][mask.hidden_block()] < 0.1, "{mask:?}: {e:?}");
    }
}

#[test]
fn posture_estimate_and_cycle_consistency() {
    let fx = fixture();
    let mut est = vec![];
    let mut truth = vec![];
    let mut cycle = vec![];
    for t in &fx.holdout[..100] {
        let from_fl = fx.net.complete(&t.with_mask(Mask::TensionsLengths)).unwrap();
        est.extend(from_fl.theta.clone());
        truth.extend(t.theta.clone());
        let f_pred = fx.net.complete(&t.with_mask(Mask::AnglesLengths)).unwrap().f;
        let back = SensorTriple { f: f_pred, ..t.with_mask(Mask::TensionsLengths) };
        cycle.extend(fx.net.complete(&back).unwrap().theta);
    }
    assert!(rms(&est, &truth) < 0.05);
    assert!(rms(&cycle, &truth) < 0.08);
}

#[test]
fn reference_posture_predicts_rest_lengths() {
    let fx = fixture();
    let p = &fx.plant;
    // hanging straight down with light, balanced co-contraction
    let l = p.lengths_for_tensions(&[0.0, 0.0], &[5.0; 4]);
    let triple = SensorTriple { theta: vec![0.0, 0.0], f: vec![5.0; 4], l: vec![0.0; 4], mask: [1, 1, 0] };
    let pred = fx.net.complete(&triple).unwrap();
    assert!(rms(&pred.l, &l) < 0.002);
    assert!(rms(&pred.l, &p.rest_lengths) < 0.02);
}

#[test]
fn unknown_mask_is_a_usage_error() {
    let fx = fixture();
    let t = fx.holdout[0].clone();
    assert!(matches!(fx.net.complete(&t), Err(Error::Usage(_))));
    let bad = SensorTriple { mask: [0, 0, 1], ..t };
    assert!(matches!(fx.net.complete(&bad), Err(Error::Usage(_))));
}

#[test]
fn latent_gradient_matches_finite_differences() {
    let fx = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = ControlOptions::default();
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let th = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let k = if trial % 2 == 0 { Some(rng.gen_range(0.5..4.0)) } else { None };
        let (_, g, _) = fx.net.control_loss_grad(&z, &th, k, &fx.plant, &opts);
        let h = 1e-6;
        for i in 0..8 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let lp = fx.net.control_loss_grad(&zp, &th, k, &fx.plant, &opts).0;
            let lm = fx.net.control_loss_grad(&zm, &th, k, &fx.plant, &opts).0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / (g[i].abs().max(fd.abs()).max(1e-6));
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn current_at(fx: &Fixture, rng: &mut ChaCha8Rng) -> SensorTriple<f64> {
    generate_samples(&fx.plant, 1, &StaticConfig::default(), rng).unwrap().remove(0)
}

#[test]
fn closed_loop_control_reaches_targets() {
    let fx = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = ControlOptions::default();
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let th = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let cur = current_at(fx, &mut rng);
        let res = fx.net.solve_control(&fx.plant, &th, None, &cur, &opts).unwrap();
        assert!(res.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.loss_history.last() <= res.loss_history.first());
        let eq = fx.plant.quasi_static_solve_from(&cur.theta, &res.l_ref, &[0.0, 0.0], 0.0).unwrap();
        let err = (eq.theta[0] - th[0]).abs().max((eq.theta[1] - th[1]).abs());
        worst = worst.max(err);
        if err < 0.05 {
            hits += 1;
        }
    }
    eprintln!("closed loop: {hits}/50, worst {worst}");
    assert!(hits >= 48);
}

#[test]
fn holding_posture_relaxes_cocontraction() {
    let fx = fixture();
    let p = &fx.plant;
    let th = [0.3, -0.4];
    // heavily co-contracted current state at the target posture
    let f0 = {
        let tau: Vec<f64> = p.gravity_torque(&th, 0.0).iter().map(|v| -v).collect();
        let g = p.moment_arm_matrix(&th);
        tendon_core::plant::distribute_tension(&g, &tau, &[35.0; 4]).unwrap()
    };
    let cur = SensorTriple::full(th.to_vec(), f0.clone(), p.lengths_for_tensions(&th, &f0));
    let res = fx.net.solve_control(p, &th, None, &cur, &ControlOptions::default()).unwrap();
    let eq = p.quasi_static_solve_from(&th, &res.l_ref, &[0.0, 0.0], 0.0).unwrap();
    assert!((eq.theta[0] - th[0]).abs() < 0.05 && (eq.theta[1] - th[1]).abs() < 0.05);
    let before = cocontraction(p, &th, &f0).unwrap();
    let after = cocontraction(p, &eq.theta, &eq.tensions).unwrap();
    assert!(after < before, "{after} vs {before}");
    // commanded lengths stay close to the current ones: same posture, slacker muscles
    assert!(res.l_ref.iter().zip(&cur.l).all(|(a, b)| a >= &(b - 0.002)));
}

#[test]
fn high_stiffness_target_raises_cocontraction_and_stiffness() {
    let fx = fixture();
    let p = &fx.plant;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for th in [[0.4, 0.3], [-0.5, 0.6], [0.0, -0.3]] {
        let cur = current_at(fx, &mut rng);
        let run = |k: f64| {
            let r = fx.net.solve_control(p, &th, Some(k), &cur, &ControlOptions::default()).unwrap();
            p.quasi_static_solve_from(&th, &r.l_ref, &[0.0, 0.0], 0.0).unwrap()
        };
        let (lo, hi) = (run(1.0), run(3.0));
        for j in 0..2 {
            assert!((lo.theta[j] - th[j]).abs() < 0.03 && (hi.theta[j] - th[j]).abs() < 0.03);
        }
        let c_lo = cocontraction(p, &lo.theta, &lo.tensions).unwrap();
        let c_hi = cocontraction(p, &hi.theta, &hi.tensions).unwrap();
        let e_lo = p.joint_stiffness(&lo.theta, &lo.tensions).sym_eigenvalues()[0];
        let e_hi = p.joint_stiffness(&hi.theta, &hi.tensions).sym_eigenvalues()[0];
        eprintln!("{th:?}: cocontraction {c_lo:.1} -> {c_hi:.1}, min eig {e_lo:.3} -> {e_hi:.3}");
        assert!(c_hi > c_lo && e_hi > e_lo);
    }
}

#[test]
fn control_rejects_bad_requests() {
    let fx = fixture();
    let cur = fx.holdout[0].clone();
    let zero = ControlOptions { iters: 0, ..Default::default() };
    assert!(matches!(fx.net.solve_control(&fx.plant, &[0.0, 0.0], None, &cur, &zero), Err(Error::Usage(_))));
    let far = fx.net.solve_control(&fx.plant, &[3.0, 0.0], None, &cur, &ControlOptions::default());
    assert!(matches!(far, Err(Error::Domain(_))));
}

#[test]
fn online_learning_adapts_to_stiffer_muscles_without_forgetting() {
    let fx = fixture();
    let mut real = fx.plant.clone();
    real.elastic_k = real.elastic_k.iter().map(|k| k * 1.3).collect();
    let cfg = StaticConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let session = generate_samples(&real, 200, &cfg, &mut rng).unwrap();
    let probe = generate_samples(&real, 200, &cfg, &mut rng).unwrap();
    let theta_err = |net: &StaticNet<f64>, data: &[SensorTriple<f64>]| {
        let mut e = vec![];
        let mut t = vec![];
        for s in data {
            e.extend(net.complete(&s.with_mask(Mask::TensionsLengths)).unwrap().theta);
            t.extend(s.theta.clone());
        }
        rms(&e, &t)
    };
    let mut net = fx.net.clone();
    let pre_real = theta_err(&net, &probe);
    let pre_nominal = theta_err(&net, &fx.holdout);
    let losses = net.train_online(&session, 20, 0.05).unwrap();
    let post_real = theta_err(&net, &probe);
    let post_nominal = theta_err(&net, &fx.holdout);
    eprintln!("online: real {pre_real:.4} -> {post_real:.4}, nominal {pre_nominal:.4} -> {post_nominal:.4}");
    assert!(losses.last() < losses.first());
    assert!(post_real < pre_real);
    assert!(post_nominal < 2.0 * pre_nominal);
}

#[test]
fn online_step_on_fitted_data_barely_moves_weights() {
    let fx = fixture();
    let mut net = fx.net.clone();
    let before = net.clone();
    let batch: Vec<_> = fx.holdout[..10].to_vec();
    net.train_online(&batch, 1, 1e-3).unwrap();
    use tendon_core::nn::Parameters;
    let change = net.encoder.distance(&before.encoder) + net.decoder.distance(&before.decoder);
    assert!(change < 1e-3, "{change}");
    assert!(net.train_online(&[], 1, 1e-3).is_err());
}

#[test]
fn save_and_load_round_trip() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("static.bin");
    fx.net.save(&path).unwrap();
    let back = StaticNet::<f64>::load(&path).unwrap();
    assert_eq!(back, fx.net);
    let as_f32 = StaticNet::<f32>::load(&path).unwrap();
    let t = fx.holdout[0].with_mask(Mask::TensionsLengths);
    let t32 = SensorTriple {
        theta: t.theta.iter().map(|&v| v as f32).collect(),
        f: t.f.iter().map(|&v| v as f32).collect(),
        l: t.l.iter().map(|&v| v as f32).collect(),
        mask: t.mask,
    };
    let a = fx.net.complete(&t).unwrap().theta;
    let b = as_f32.complete(&t32).unwrap().theta;
    assert!((a[0] - b[0] as f64).abs() < 1e-3);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(StaticNet::<f64>::load(&path), Err(Error::Format { .. })));
}

#[test]
fn each_block_is_reproduced_better_when_provided_than_when_masked() {
    let fx = fixture();
    let e = fx.net.evaluate(&fx.holdout).per_mask_normalized;
    for block in 0..3 {
        let masked = Mask::ALL.iter().position(|m| m.hidden_block() == block).unwrap();
        for k in 0..3 {
            if k != masked {
                assert!(e[k][block] < e[masked][block], "block {block}: {e:?}");
            }
        }
    }
}

#[test]
fn growth_keeps_old_channels_bit_equal() {
    let fx = fixture();
    let grown = fx.net.grow_dimensions(1, 3).unwrap();
    assert_eq!(grown.n_muscles, 5);
    assert_eq!(grown.encoder.sizes()[0], 2 + 10 + 3);
    assert_eq!(*grown.decoder.sizes().last().unwrap(), 12);
    let m = &grown.norm.mean;
    for t in &fx.holdout[..50] {
        for mask in Mask::ALL {
            let old = fx.net.complete(&t.with_mask(mask)).unwrap();
            // the new channels sit at their normalisation mean, i.e. zero after z-scoring
            let mut f = t.f.clone();
            f.push(m[2 + 4]);
            let mut l = t.l.clone();
            l.push(m[2 + 9]);
            let new = grown.complete(&SensorTriple { theta: t.theta.clone(), f, l, ..t.with_mask(mask) }).unwrap();
            assert_eq!(old.theta, new.theta);
            assert_eq!(old.f[..], new.f[..4]);
            assert_eq!(old.l[..], new.l[..4]);
        }
    }
    assert!(matches!(fx.net.grow_dimensions(0, 3), Err(Error::Usage(_))));
}
