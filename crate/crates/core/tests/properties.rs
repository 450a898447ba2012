use nldpc::autodiff::{grad_check, DenseMatrix, Tape};
use nldpc::dynamics::{double_integrator, pvtol, BoxSet, PvtolParams, SystemModel};
use nldpc::export::fmt_f64;
use nldpc::neural::{
    Activation, IcnnNet, InitScheme, Initializer, LyapunovNet, Parametric, PolicyNet,
};
use nldpc::objective::{box_penalty, penalty_lyapunov, ProblemConfig, Weight};
use nldpc::rollout::SimTrajectory;
use nldpc::trainer::{
    sample_initial_conditions, train, AdamWConfig, AdamWState, Distribution, TrainConfig,
};
use nldpc::verifier::{evaluate_indicator, hoeffding_bound, required_samples, IndicatorCriteria};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |d| DenseMatrix::new(rows, cols, d).unwrap())
}

fn state(n: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-range..range, n)
}

fn jensen_gap(net: &IcnnNet, a: &[f64], b: &[f64], t: f64) -> f64 {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
    let lhs = net.icnn_forward(&mid).unwrap();
    let rhs = t * net.icnn_forward(a).unwrap() + (1.0 - t) * net.icnn_forward(b).unwrap();
    lhs - rhs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polynomial_graph_gradients_are_tight(a in matrix(3, 2, 2.0), b in matrix(2, 2, 2.0)) {
        let q = DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let r = grad_check(
            |t: &mut Tape, ids| {
                let p = t.matmul(ids[0], ids[1])?;
                let s = t.sub(p, ids[0])?;
                let f = t.row_quad_form(s, &q)?;
                t.sum(f)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        prop_assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn smooth_graph_gradients_match(a in matrix(2, 3, 3.0), w in matrix(3, 2, 1.0)) {
        let r = grad_check(
            |t: &mut Tape, ids| {
                let z = t.matmul(ids[0], ids[1])?;
                let s = t.softplus(z, 2.0)?;
                let m = t.smooth_relu(s, 0.1)?;
                let n = t.row_l2norm(m)?;
                let c = t.concat_cols(n, s)?;
                let k = t.slice_cols(c, 1, 2)?;
                let x = t.l2norm(k)?;
                let y = t.sum(c)?;
                t.mean(&[x, y])
            },
            &[a, w],
            1e-5,
        )
        .unwrap();
        prop_assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn replay_is_bit_identical(a in matrix(4, 3, 5.0), w in matrix(3, 2, 1.0)) {
        let run = || {
            let mut t = Tape::new();
            let (x, p) = (t.param(a.clone()).unwrap(), t.param(w.clone()).unwrap());
            let z = t.matmul(x, p).unwrap();
            let r = t.relu(z).unwrap();
            let s = t.sum(r).unwrap();
            let g = t.backward(s).unwrap();
            (t.value(s).clone(), g.get(x).unwrap().clone(), g.get(p).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn adjoints_are_linear(a in matrix(2, 2, 3.0), alpha in -3.0f64..3.0) {
        let grads = |which: u8| {
            let mut t = Tape::new();
            let x = t.param(a.clone()).unwrap();
            let sq = t.row_quad_form(x, &DenseMatrix::identity(2)).unwrap();
            let l1 = t.sum(sq).unwrap();
            let sp = t.softplus(x, 1.0).unwrap();
            let l2 = t.sum(sp).unwrap();
            let out = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let s = t.scale(l1, alpha).unwrap();
                    t.add(s, l2).unwrap()
                }
            };
            t.backward(out).unwrap().get(x).unwrap().clone()
        };
        let (g1, g2, g) = (grads(1), grads(2), grads(0));
        for i in 0..4 {
            prop_assert!((g.data()[i] - (alpha * g1.data()[i] + g2.data()[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn relu_is_idempotent(a in matrix(3, 3, 10.0)) {
        let mut t = Tape::new();
        let x = t.constant(a).unwrap();
        let r1 = t.relu(x).unwrap();
        let r2 = t.relu(r1).unwrap();
        prop_assert_eq!(t.value(r1), t.value(r2));
    }

    #[test]
    fn icnn_is_convex(seed in 0u64..1000, a in state(3, 10.0), b in state(3, 10.0), t in 0.0f64..1.0) {
        let net = IcnnNet::new(3, &[8, 8, 8], 5.0, &mut Initializer::new(seed, InitScheme::UniformFanIn)).unwrap();
        prop_assert!(jensen_gap(&net, &a, &b, t) <= 1e-9);
    }

    #[test]
    fn lyapunov_is_positive_definite(seed in 0u64..1000, x in state(2, 10.0)) {
        let v = LyapunovNet::new(2, &[8, 8], 5.0, 0.01, &mut Initializer::new(seed, InitScheme::UniformFanIn)).unwrap();
        prop_assert!(v.lyapunov_forward(&[0.0, 0.0]).unwrap().abs() <= 1e-12);
        let floor = 0.01 * (x[0] * x[0] + x[1] * x[1]);
        prop_assert!(v.lyapunov_forward(&x).unwrap() - floor >= -1e-9);
    }

    #[test]
    fn lyapunov_gradient_matches_differences(seed in 0u64..1000, x in matrix(1, 2, 5.0)) {
        let v = LyapunovNet::new(2, &[6, 6], 5.0, 0.01, &mut Initializer::new(seed, InitScheme::UniformFanIn)).unwrap();
        let params: Vec<DenseMatrix> = v.parameters().into_iter().cloned().collect();
        let r = grad_check(
            |t: &mut Tape, ids| {
                let out = v.forward(t, &ids[1..], ids[0])?;
                t.sum(out)
            },
            &[vec![x], params].concat(),
            1e-5,
        )
        .unwrap();
        prop_assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn relu_policy_is_affine_within_a_region(seed in 0u64..1000, x1 in state(2, 5.0), dir in state(2, 1.0), alpha in 0.0f64..1.0) {
        let p = PolicyNet::new(2, &[10, 10], 2, 1, Activation::Relu, &mut Initializer::new(seed, InitScheme::UniformFanIn)).unwrap();
        // tiny segment: endpoints and the interior point share a pattern unless a kink is crossed
        let x2: Vec<f64> = x1.iter().zip(&dir).map(|(a, d)| a + 1e-6 * d).collect();
        let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let pattern = |x: &[f64]| {
            let mut t = Tape::new();
            let params = p.bind_frozen(&mut t).unwrap();
            let xi = t.constant(DenseMatrix::row_vector(x)).unwrap();
            p.forward(&mut t, &params, xi).unwrap();
            t.kink_signature()
        };
        prop_assume!(pattern(&x1) == pattern(&x2) && pattern(&mid) == pattern(&x1));
        let (f1, f2, fm) = (p.policy_forward(&x1).unwrap(), p.policy_forward(&x2).unwrap(), p.policy_forward(&mid).unwrap());
        for k in 0..2 {
            let lin = alpha * f1.data()[k] + (1.0 - alpha) * f2.data()[k];
            prop_assert!((fm.data()[k] - lin).abs() <= 1e-9);
        }
    }

    #[test]
    fn lti_step_is_linear(x1 in matrix(1, 6, 5.0), x2 in matrix(1, 6, 5.0), u1 in matrix(1, 2, 5.0), u2 in matrix(1, 2, 5.0), alpha in -2.0f64..2.0) {
        let m = pvtol(PvtolParams::default()).unwrap();
        let comb = |a: &DenseMatrix, b: &DenseMatrix| a.zip_map(b, |p, q| alpha * p + q);
        let lhs = m.step_values(&comb(&x1, &x2), &comb(&u1, &u2)).unwrap();
        let rhs = comb(&m.step_values(&x1, &u1).unwrap(), &m.step_values(&x2, &u2).unwrap());
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn box_penalty_is_zero_inside_and_monotone_outside(v in state(2, 3.0), i in 0usize..2, extra in 0.01f64..5.0) {
        let b = BoxSet::symmetric(2, 1.0);
        let eval = |v: &[f64]| {
            let mut t = Tape::new();
            let x = t.constant(DenseMatrix::row_vector(v)).unwrap();
            let p = box_penalty(&mut t, x, &b).unwrap();
            t.value(p).item()
        };
        let p = eval(&v);
        prop_assert!(p >= 0.0);
        prop_assert_eq!(p == 0.0, b.contains(&v));
        // push coordinate i further out along its own sign
        let mut w = v.clone();
        let s = if v[i] >= 0.0 { 1.0 } else { -1.0 };
        w[i] = s * (v[i].abs().max(1.0) + extra);
        let mut further = w.clone();
        further[i] += s * extra;
        prop_assert!(eval(&further) > eval(&w));
    }

    #[test]
    fn lyapunov_penalty_is_asymmetric(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut t = Tape::new();
        let (va, vb) = (t.constant(DenseMatrix::scalar(a)).unwrap(), t.constant(DenseMatrix::scalar(b)).unwrap());
        let p = penalty_lyapunov(&mut t, vb, va).unwrap();
        let q = penalty_lyapunov(&mut t, va, vb).unwrap();
        let (p, q) = (t.value(p).item(), t.value(q).item());
        prop_assert!(p >= 0.0 && q >= 0.0);
        prop_assert_eq!(p + q > 0.0, a != b);
    }

    #[test]
    fn adamw_descends_on_a_bowl(theta in matrix(1, 4, 10.0), lr in 1e-4f64..0.1) {
        prop_assume!(theta.max_abs() > 0.0);
        let f = |m: &DenseMatrix| m.data().iter().map(|v| v * v).sum::<f64>();
        let mut p = theta.clone();
        let g = p.map(|v| 2.0 * v);
        let mut st = AdamWState::new([&p]);
        st.step(&mut [&mut p], &[g], &AdamWConfig { lr, ..Default::default() }).unwrap();
        prop_assert!(f(&p) < f(&theta));
    }

    #[test]
    fn samples_stay_in_the_box(seed in 0u64..10_000, half in 0.1f64..20.0, uniform in any::<bool>()) {
        let b = BoxSet::symmetric(3, half);
        let dist = if uniform { Distribution::Uniform } else { Distribution::default() };
        let s = sample_initial_conditions(dist, 100, &b, seed).unwrap();
        for i in 0..100 {
            prop_assert!(b.contains(s.states.row(i)));
        }
    }

    #[test]
    fn hoeffding_bound_is_monotone(sigma in 0.0f64..0.99, delta in 0.001f64..0.5, m in 1usize..100_000) {
        let (_, k) = hoeffding_bound(sigma, delta, m).unwrap();
        prop_assert!(hoeffding_bound(sigma + 0.01, delta, m).unwrap().1 > k);
        prop_assert!(hoeffding_bound(sigma, delta, m + 1).unwrap().1 > k);
        prop_assert!(hoeffding_bound(sigma, delta / 2.0, m).unwrap().1 < k);
        prop_assert_eq!(hoeffding_bound(sigma, delta, m).unwrap(), hoeffding_bound(sigma, delta, m).unwrap());
    }

    #[test]
    fn required_samples_is_tight(sigma in 0.5f64..1.0, gap in 0.005f64..0.4, delta in 0.001f64..0.5) {
        let kappa = sigma - gap;
        let m = required_samples(sigma, kappa, delta).unwrap();
        prop_assert!(hoeffding_bound(sigma, delta, m).unwrap().1 >= kappa);
        if m > 1 {
            prop_assert!(hoeffding_bound(sigma, delta, m - 1).unwrap().1 < kappa);
        }
    }

    #[test]
    fn indicator_is_monotone(
        xs in prop::collection::vec(state(2, 4.0), 4),
        us in prop::collection::vec(state(1, 1.5), 3),
        shrink in 0.1f64..1.0,
        tau in 0.0f64..1.0,
    ) {
        let values = xs.iter().map(|x| x[0] * x[0] + x[1] * x[1]).collect();
        let traj = SimTrajectory {
            states: xs,
            controls: us,
            values,
            stage_losses: vec![0.0; 3],
            flags: vec![Default::default(); 3],
            terminal_violation: false,
            diverged: false,
        };
        let base = IndicatorCriteria {
            state_box: BoxSet::symmetric(2, 4.0),
            input_box: BoxSet::symmetric(1, 1.5),
            margin: 0.0,
            terminal_box: Some(BoxSet::symmetric(2, 3.0)),
            equilibrium_tol: Some(0.1),
        };
        let before = evaluate_indicator(&traj, &base).indicator();
        let variants = [
            IndicatorCriteria { state_box: BoxSet::symmetric(2, 4.0 * shrink), ..base.clone() },
            IndicatorCriteria { input_box: BoxSet::symmetric(1, 1.5 * shrink), ..base.clone() },
            IndicatorCriteria { terminal_box: Some(BoxSet::symmetric(2, 3.0 * shrink)), ..base.clone() },
            IndicatorCriteria { margin: tau, ..base.clone() },
        ];
        for c in &variants {
            prop_assert!(evaluate_indicator(&traj, c).indicator() <= before);
        }
    }

    #[test]
    fn csv_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

#[test]
fn icnn_jensen_triples_hold_for_many_draws() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for draw in 0..10 {
        let net = IcnnNet::new(2, &[16, 16], 5.0, &mut Initializer::new(draw, InitScheme::UniformFanIn)).unwrap();
        for _ in 0..1000 {
            let a = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let b = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            assert!(jensen_gap(&net, &a, &b, rng.random_range(0.0..1.0)) <= 1e-9);
        }
    }
}

#[test]
fn stage_cost_only_training_descends_early() {
    let model = double_integrator();
    let spec = ProblemConfig {
        q_x: Weight::Scalar(5.0),
        q_u: Weight::Scalar(0.5),
        q_v: 0.0,
        q_h: 0.0,
        q_g: 0.0,
        q_xf: 0.0,
        horizon: 4,
        terminal_box: None,
        margin: 0.0,
    }
    .resolve(&model)
    .unwrap();
    let mut init = Initializer::new(3, InitScheme::UniformFanIn);
    let policy = PolicyNet::new(2, &[20, 20], 4, 1, Activation::Relu, &mut init).unwrap();
    let lyap = LyapunovNet::new(2, &[8], 5.0, 0.01, &mut init).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 100,
        train_samples: 500,
        val_samples: 0,
        test_samples: 0,
        distribution: Distribution::default(),
        optimizer: AdamWConfig::default(),
        seed: 5,
    };
    let out = train(&model, &spec, policy, lyap, &cfg).unwrap();
    let h: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    for w in h.windows(2) {
        assert!(w[1] <= w[0], "loss went up: {h:?}");
    }
}

#[test]
fn pvtol_lyapunov_positivity_on_the_box() {
    let m = pvtol(PvtolParams::default()).unwrap();
    let v = LyapunovNet::new(6, &[16, 16], 5.0, 0.01, &mut Initializer::new(9, InitScheme::UniformFanIn)).unwrap();
    let xs = sample_initial_conditions(Distribution::Uniform, 2000, m.state_box(), 1).unwrap();
    for i in 0..xs.len() {
        let x = xs.states.row(i);
        let floor = 0.01 * x.iter().map(|a| a * a).sum::<f64>();
        assert!(v.lyapunov_forward(x).unwrap() - floor >= -1e-9);
    }
}
