use odelearn::autodiff::{backward, tape_forward, time_derivative, Real, Tape};
use odelearn::bioreactor::{fbr_rhs, haldane_mu, synthesize, FbrParams, Haldane};
use odelearn::eval::{compare_trajectories, extract_mu_curve};
use odelearn::nn::{mlp_eval, mlp_init, MlpModel};
use odelearn::ode::{multistep_residual, MultistepScheme, Trajectory};
use odelearn::train_continuous::{
    continuous_loss_dynamics, LossWeights, PinnPair,
};
use odelearn::train_discrete::discrete_loss_dynamics;
use odelearn::Target;
use proptest::prelude::*;

fn scaled(model: &MlpModel, scale: f64) -> MlpModel {
    let mut m = model.clone();
    for v in m.params_mut() {
        *v *= scale;
    }
    m
}

fn fd_grad(model: &MlpModel, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let mut m = model.clone();
    (0..model.param_count())
        .map(|i| {
            let p0 = model.params()[i];
            let h = 1e-6 * p0.abs().max(1.0);
            m.params_mut()[i] = p0 + h;
            let up = f(&m);
            m.params_mut()[i] = p0 - h;
            let down = f(&m);
            m.params_mut()[i] = p0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

fn short_fbr(ic: [f64; 3]) -> Trajectory {
    synthesize(&ic, 1.0, 0.05, &FbrParams::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reverse_mode_matches_finite_differences(
        hidden in prop::collection::vec(2usize..9, 1..4),
        seed in any::<u64>(),
        x in prop::array::uniform3(-2.0f64..2.0),
        out in 0usize..3,
    ) {
        let mut sizes = vec![3];
        sizes.extend(&hidden);
        sizes.push(3);
        let model = mlp_init(&sizes, seed).unwrap();
        let (_, rec) = tape_forward(&model, &x).unwrap();
        let g = backward(&rec, out).unwrap();
        let fd = fd_grad(&model, |m| mlp_eval(m, &x).unwrap()[out]);
        prop_assert!(rel_err(&g, &fd) < 1e-6, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn elementary_ops_match_finite_differences(a in 0.2f64..3.0, b in 0.2f64..3.0) {
        let f = |x: f64, y: f64| x * y - y / x + (-x).tanh() + (0.3 * y).exp() + (x - y).square();
        let tape = Tape::new();
        let (va, vb) = (tape.var(a), tape.var(b));
        let out = va * vb - vb / va + (-va).tanh() + (vb * tape.constant(0.3)).exp() + (va - vb).square();
        let g = tape.gradient(out, &[va, vb]);
        let h = 1e-6;
        let fa = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
        let fb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
        prop_assert!(rel_err(&g, &[fa, fb]) < 1e-6);
    }

    #[test]
    fn forward_tangent_matches_reverse_time_gradient(seed in any::<u64>(), t in -2.0f64..2.0) {
        let model = mlp_init(&[1, 8, 8, 3], seed).unwrap();
        let (_, dy) = time_derivative(&model, t).unwrap();
        for k in 0..3 {
            let tape = Tape::new();
            let tv = tape.var(t);
            let params: Vec<_> = model.params().iter().map(|&p| tape.constant(p)).collect();
            let y = model.forward_with(&params, &[tv]);
            let g = tape.gradient(y[k], &[tv])[0];
            prop_assert!((g - dy[k]).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }

    #[test]
    fn tape_gradients_are_deterministic(seed in any::<u64>(), x in prop::array::uniform3(-1.0f64..1.0)) {
        let model = mlp_init(&[3, 6, 2], seed).unwrap();
        let a = backward(&tape_forward(&model, &x).unwrap().1, 1).unwrap();
        let b = backward(&tape_forward(&model, &x).unwrap().1, 1).unwrap();
        prop_assert_eq!(a.0, b.0);
    }

    #[test]
    fn schemes_are_consistent(steps in 1usize..5) {
        let s = MultistepScheme::adams_moulton(steps).unwrap();
        prop_assert_eq!(s.alpha[0], 1.0);
        prop_assert!(s.alpha.iter().sum::<f64>().abs() < 1e-15);
        prop_assert!((s.beta.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        prop_assert!(s.validate().is_ok());
    }

    #[test]
    fn residual_is_linear_in_states(
        steps in 1usize..4,
        ya in prop::collection::vec(-5.0f64..5.0, 12),
        yb in prop::collection::vec(-5.0f64..5.0, 12),
        c in -3.0f64..3.0,
        dt in 0.01f64..0.5,
    ) {
        let s = MultistepScheme::adams_moulton(steps).unwrap();
        let n = steps + 1;
        let win = |v: &[f64]| -> Vec<Vec<f64>> { (0..n).map(|i| v[3 * i..3 * i + 3].to_vec()).collect() };
        let (wa, wb) = (win(&ya), win(&yb));
        let wc: Vec<Vec<f64>> = wa.iter().zip(&wb).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + c * y).collect()).collect();
        // fixed f evaluations, independent of the state
        let fixed = [0.3, -1.2, 0.7];
        let res = |w: &[Vec<f64>]| {
            let r: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
            multistep_residual(&s, &r, dt, |_| Ok(fixed.to_vec())).unwrap()
        };
        let (ra, rb, rc) = (res(&wa), res(&wb), res(&wc));
        let f_part: Vec<f64> = res(&vec![vec![0.0; 3]; n]);
        for k in 0..3 {
            let lin = (ra[k] - f_part[k]) + c * (rb[k] - f_part[k]) + f_part[k];
            prop_assert!((rc[k] - lin).abs() < 1e-11 * (1.0 + rc[k].abs()));
        }
    }

    #[test]
    fn haldane_mass_balance(x in 0.0f64..5.0, s in 0.0f64..5.0, v in 1.0f64..30.0) {
        let p = FbrParams::default();
        let d = fbr_rhs(&[x, s, v], 0.0, &p, &Haldane(p)).unwrap();
        let expected = p.feed * (p.s_in - s - x) / v;
        prop_assert!((d[0] + d[1] - expected).abs() < 1e-9);
        prop_assert_eq!(d[2], p.feed);
    }

    #[test]
    fn volume_is_exact_along_trajectories(x in 0.05f64..0.5, s in 0.5f64..3.0, v in 5.0f64..20.0) {
        let p = FbrParams::default();
        let tr = synthesize(&[x, s, v], 50.0, 0.05, &p).unwrap();
        for (t, y) in tr.times().iter().zip(tr.states()) {
            prop_assert!((y[2] - (v + p.feed * t)).abs() < 1e-10);
            prop_assert!(y[0] > 0.0 && y[1] > 0.0);
        }
    }

    #[test]
    fn discrete_loss_nonnegative_and_order_free(seed in any::<u64>(), ic in prop::array::uniform3(0.1f64..2.0)) {
        let model = mlp_init(&[3, 5, 3], seed).unwrap();
        let a = short_fbr([0.1, 1.0, 10.0]);
        let b = short_fbr([ic[0], ic[1], 10.0 * ic[2]]);
        let s = MultistepScheme::trapezoidal();
        let l1 = discrete_loss_dynamics(&model, &[a.clone(), b.clone()], &s).unwrap();
        let l2 = discrete_loss_dynamics(&model, &[b, a], &s).unwrap();
        prop_assert!(l1 >= 0.0);
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn continuous_loss_decomposes(seed in any::<u64>(), wd in 0.0f64..3.0, wr in 0.0f64..3.0) {
        let data = short_fbr([0.1, 1.0, 10.0]);
        let pair = PinnPair::new(
            mlp_init(&[1, 6, 3], seed).unwrap(),
            mlp_init(&[3, 6, 3], seed ^ 1).unwrap(),
            Target::Dynamics,
            (data.t0(), data.t_end()),
        ).unwrap();
        let colloc: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let w = LossWeights { data: wd, residual: wr };
        let l = continuous_loss_dynamics(&pair, &data, &colloc, w).unwrap();
        prop_assert!(l.data >= 0.0 && l.residual >= 0.0);
        prop_assert_eq!(l.total, wd * l.data + wr * l.residual);
    }

    #[test]
    fn state_derivative_matches_finite_differences(seed in any::<u64>(), t in -3.0f64..3.0) {
        let model = mlp_init(&[1, 16, 16, 3], seed).unwrap();
        let (_, dy) = time_derivative(&model, t).unwrap();
        let h = 1e-6;
        let up = mlp_eval(&model, &[t + h]).unwrap();
        let down = mlp_eval(&model, &[t - h]).unwrap();
        let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        prop_assert!(rel_err(&dy, &fd) < 1e-6);
    }

    #[test]
    fn metrics_symmetric_and_zero_on_self(ic in prop::array::uniform3(0.1f64..2.0), seed in any::<u64>()) {
        let a = short_fbr([ic[0], ic[1], 10.0]);
        let b = short_fbr([0.1, 1.0, 10.0 * ic[2]]);
        let ab = compare_trajectories(&a, &b).unwrap();
        let ba = compare_trajectories(&b, &a).unwrap();
        prop_assert_eq!(ab.rmse, ba.rmse);
        let aa = compare_trajectories(&a, &a).unwrap();
        prop_assert!(aa.rmse.iter().chain(&aa.rel_rmse).chain(&aa.max_abs).all(|v| *v == 0.0));
        let mu = scaled(&mlp_init(&[3, 4, 1], seed).unwrap(), 0.5);
        let curve = extract_mu_curve(&mu, &a, &FbrParams::default()).unwrap();
        for (s, m) in curve.s.iter().zip(&curve.mu_true) {
            prop_assert_eq!(m.to_bits(), haldane_mu(*s, &FbrParams::default()).unwrap().to_bits());
        }
    }
}

#[test]
fn haldane_unimodal_on_log_grid() {
    let p = FbrParams::default();
    let grid: Vec<f64> = (0..=1000).map(|i| 10f64.powf(-4.0 + i as f64 / 100.0)).collect();
    let mu: Vec<f64> = grid.iter().map(|&s| haldane_mu(s, &p).unwrap()).collect();
    let peak = (0..mu.len()).max_by(|&a, &b| mu[a].total_cmp(&mu[b])).unwrap();
    assert!((grid[peak] - (p.km * p.ki).sqrt()).abs() < 0.03);
    assert!(mu[..=peak].windows(2).all(|w| w[0] < w[1]));
    assert!(mu[peak..].windows(2).all(|w| w[0] > w[1]));
    assert!(mu[0] < 1e-4 && *mu.last().unwrap() < 1e-5);
}
