use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regionshop::factorize::{
    gradient, objective, predict, train, FactorModel, GradientMode, Hyperparams, RegularizerSpec, StopReason,
    Variant,
};
use regionshop::gravity::{combined_weights, neighbor_weights, InteractionMatrix};
use regionshop::grid::RegionGrid;
use regionshop::patterns::{MobilityPatternMatrix, ShoppingPatternMatrix};
use regionshop::seed;

struct Instance {
    grid: RegionGrid,
    shop: ShoppingPatternMatrix,
    mob: MobilityPatternMatrix,
    q_taxi: InteractionMatrix,
    q_bus: InteractionMatrix,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| hi * rng.random::<f64>())
}

fn instance(seed: u64, rows: usize, cols: usize, n: usize, m: usize) -> Instance {
    let mut rng = seed::rng(seed);
    let grid = RegionGrid::planar(1.0, rows, cols).unwrap();
    let r = grid.len();
    let mut mask = Array2::<f64>::ones((r, n));
    for i in 0..r {
        if rng.random::<f64>() < 0.4 {
            mask.row_mut(i).fill(0.0);
        }
    }
    mask.row_mut(0).fill(1.0);
    let values = uniform(&mut rng, r, n, 5.0) * &mask;
    let shop = ShoppingPatternMatrix::new(values, mask).unwrap();
    let mob = MobilityPatternMatrix::new(uniform(&mut rng, r, m, 3.0)).unwrap();
    let q_taxi = InteractionMatrix(uniform(&mut rng, r, r, 10.0));
    let q_bus = InteractionMatrix(uniform(&mut rng, r, r, 1.0));
    Instance {
        grid,
        shop,
        mob,
        q_taxi,
        q_bus,
    }
}

fn regularizer(inst: &Instance, variant: Variant) -> RegularizerSpec {
    match variant {
        Variant::Mf | Variant::Cmf => RegularizerSpec::none(),
        Variant::CmfN => RegularizerSpec::neighbor(neighbor_weights(&inst.grid).unwrap()).unwrap(),
        Variant::CmfI => {
            let w = combined_weights(&inst.q_taxi, &inst.q_bus, &inst.grid).unwrap();
            RegularizerSpec::interaction(w).unwrap()
        }
    }
}

fn random_model(rng: &mut ChaCha8Rng, r: usize, n: usize, m: usize, l: usize) -> FactorModel {
    let mut draw = |rows| Array2::from_shape_fn((rows, l), |_| rng.random_range(-1.0..1.0));
    let r_l = draw(r);
    let v1 = draw(n);
    let v2 = draw(m);
    FactorModel::new(r_l, v1, v2).unwrap()
}

/// Normwise relative error of the analytic gradient against central
/// differences of the objective.
fn fd_error(inst: &Instance, variant: Variant, h: &Hyperparams, model: &FactorModel) -> f64 {
    let reg = regularizer(inst, variant);
    let h = h.for_variant(variant);
    let g = gradient(model, &inst.shop, &inst.mob, &reg, &h, GradientMode::Exact).unwrap();
    let f = |m: &FactorModel| objective(m, &inst.shop, &inst.mob, &reg, &h).unwrap();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for block in 0..3 {
        let (rows, cols) = match block {
            0 => model.r_l.dim(),
            1 => model.v1.dim(),
            _ => model.v2.dim(),
        };
        for i in 0..rows {
            for j in 0..cols {
                let bump = |delta: f64| {
                    let mut p = model.clone();
                    match block {
                        0 => p.r_l[[i, j]] += delta,
                        1 => p.v1[[i, j]] += delta,
                        _ => p.v2[[i, j]] += delta,
                    }
                    f(&p)
                };
                let numeric = (bump(step) - bump(-step)) / (2.0 * step);
                let analytic = match block {
                    0 => g.r_l[[i, j]],
                    1 => g.v1[[i, j]],
                    _ => g.v2[[i, j]],
                };
                worst = worst.max((numeric - analytic).abs());
                scale = scale.max(analytic.abs());
            }
        }
    }
    worst / scale.max(f64::MIN_POSITIVE)
}

#[test]
fn exact_gradient_matches_finite_differences() {
    for k in 0..8 {
        let inst = instance(100 + k, 3, 4, 4, 3);
        let mut rng = seed::rng(200 + k);
        let h = Hyperparams {
            l: 3,
            lambda1: rng.random_range(0.1..2.0),
            lambda2: rng.random_range(0.0..0.1),
            alpha: rng.random_range(0.1..3.0),
            ..Hyperparams::default()
        };
        let model = random_model(&mut rng, 12, 4, 3, 3);
        for variant in Variant::ALL {
            let err = fd_error(&inst, variant, &h, &model);
            assert!(err < 1e-5, "instance {k} {variant}: relative error {err:e}");
        }
    }
}

#[test]
fn literal_gradient_differs_only_in_spatial_term() {
    let inst = instance(7, 3, 3, 3, 2);
    let mut rng = seed::rng(8);
    let model = random_model(&mut rng, 9, 3, 2, 2);
    let h = Hyperparams {
        l: 2,
        ..Hyperparams::default()
    };
    for variant in Variant::ALL {
        let reg = regularizer(&inst, variant);
        let hv = h.for_variant(variant);
        let exact = gradient(&model, &inst.shop, &inst.mob, &reg, &hv, GradientMode::Exact).unwrap();
        let literal = gradient(
            &model,
            &inst.shop,
            &inst.mob,
            &reg,
            &hv,
            GradientMode::PaperLiteral,
        )
        .unwrap();
        assert_eq!(exact.v1, literal.v1);
        assert_eq!(exact.v2, literal.v2);
        match variant {
            Variant::Mf | Variant::Cmf => assert_eq!(exact.r_l, literal.r_l),
            _ => assert_ne!(exact.r_l, literal.r_l),
        }
    }
}

#[test]
fn variants_nest() {
    let inst = instance(21, 4, 4, 3, 3);
    let mut rng = seed::rng(22);
    let model = random_model(&mut rng, 16, 3, 3, 2);
    let reg = regularizer(&inst, Variant::CmfI);
    let base = Hyperparams {
        l: 2,
        lambda1: 0.7,
        lambda2: 0.05,
        alpha: 0.0,
        ..Hyperparams::default()
    };
    let with_i = objective(&model, &inst.shop, &inst.mob, &reg, &base).unwrap();
    let cmf = objective(&model, &inst.shop, &inst.mob, &RegularizerSpec::none(), &base).unwrap();
    assert!((with_i - cmf).abs() <= 1e-12 * cmf.abs().max(1.0));

    let no_mob = Hyperparams { lambda1: 0.0, ..base };
    let with_i = objective(&model, &inst.shop, &inst.mob, &reg, &no_mob).unwrap();
    let mf = objective(&model, &inst.shop, &inst.mob, &RegularizerSpec::none(), &no_mob).unwrap();
    assert!((with_i - mf).abs() <= 1e-12 * mf.abs().max(1.0));
}

#[test]
fn planted_model_is_recovered() {
    let mut rng = seed::rng(31);
    let (r, n, m, l) = (30, 5, 6, 3);
    let r_l = uniform(&mut rng, r, l, 1.0);
    let v1 = uniform(&mut rng, n, l, 1.0);
    let v2 = uniform(&mut rng, m, l, 1.0);
    let shop = ShoppingPatternMatrix::dense(r_l.dot(&v1.t())).unwrap();
    let mob = MobilityPatternMatrix::new(r_l.dot(&v2.t())).unwrap();
    let h = Hyperparams {
        l,
        lambda2: 1e-6,
        seed: 5,
        ..Hyperparams::default()
    };
    let out = train(&shop, &mob, &RegularizerSpec::none(), &h, Variant::Cmf).unwrap();
    assert!(out.trace.is_strictly_decreasing());
    assert!(out.trace.last() < 1e-3 * out.trace.initial());
    let pred = predict(&out.model);
    let err = (&pred - &shop.values).mapv(|v| v * v).sum().sqrt() / shop.values.mapv(|v| v * v).sum().sqrt();
    assert!(err < 0.05, "relative reconstruction error {err}");
}

#[test]
fn training_is_deterministic() {
    let inst = instance(41, 4, 5, 4, 3);
    let h = Hyperparams {
        l: 3,
        max_iters: 200,
        seed: 9,
        ..Hyperparams::default()
    };
    for variant in Variant::ALL {
        let reg = regularizer(&inst, variant);
        let a = train(&inst.shop, &inst.mob, &reg, &h, variant).unwrap();
        let b = train(&inst.shop, &inst.mob, &reg, &h, variant).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn huge_epsilon_stops_after_first_step() {
    let inst = instance(51, 3, 3, 3, 3);
    let h = Hyperparams {
        l: 2,
        epsilon: 1e12,
        ..Hyperparams::default()
    };
    let out = train(&inst.shop, &inst.mob, &RegularizerSpec::none(), &h, Variant::Cmf).unwrap();
    assert_eq!(out.trace.accepted_steps(), 1);
    assert_eq!(out.stop, StopReason::Converged);
}

#[test]
fn stationary_start_underflows_cleanly() {
    // all-zero data: the zero model is optimal but training starts away
    // from it, so it converges or runs out of descent steps, never fails
    let shop = ShoppingPatternMatrix::dense(Array2::zeros((4, 2))).unwrap();
    let mob = MobilityPatternMatrix::new(Array2::zeros((4, 2))).unwrap();
    let h = Hyperparams {
        l: 1,
        epsilon: f64::MIN_POSITIVE,
        max_iters: 100_000,
        ..Hyperparams::default()
    };
    let out = train(&shop, &mob, &RegularizerSpec::none(), &h, Variant::Cmf).unwrap();
    assert!(out.trace.is_strictly_decreasing());
    assert_ne!(out.stop, StopReason::MaxIters);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_check_random(
        seed in any::<u64>(), rows in 2usize..4, cols in 2usize..4,
        n in 1usize..4, m in 1usize..4, l in 1usize..4,
        lambda1 in 0.0f64..2.0, lambda2 in 0.0f64..0.5, alpha in 0.0f64..3.0,
    ) {
        let inst = instance(seed, rows, cols, n, m);
        let mut rng = seed::rng(seed ^ 0xabc);
        let model = random_model(&mut rng, rows * cols, n, m, l);
        let h = Hyperparams { l, lambda1, lambda2, alpha, ..Hyperparams::default() };
        for variant in Variant::ALL {
            let err = fd_error(&inst, variant, &h, &model);
            prop_assert!(err < 1e-5, "{} relative error {:e}", variant, err);
        }
    }

    #[test]
    fn scaling_interactions_changes_nothing(seed in any::<u64>(), factor in 1e-6f64..1e6) {
        let inst = instance(seed, 3, 3, 3, 2);
        let w = combined_weights(&inst.q_taxi, &inst.q_bus, &inst.grid).unwrap();
        let ws = combined_weights(&inst.q_taxi.scaled(factor), &inst.q_bus.scaled(factor), &inst.grid).unwrap();
        prop_assert_eq!(&w, &ws);
        let h = Hyperparams { l: 2, max_iters: 50, seed, ..Hyperparams::default() };
        let a = train(&inst.shop, &inst.mob, &RegularizerSpec::interaction(w).unwrap(), &h, Variant::CmfI).unwrap();
        let b = train(&inst.shop, &inst.mob, &RegularizerSpec::interaction(ws).unwrap(), &h, Variant::CmfI).unwrap();
        prop_assert_eq!(a.model, b.model);
        prop_assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn accepted_steps_always_decrease(seed in any::<u64>(), variant in 0usize..4, alpha in 0.0f64..5.0) {
        let inst = instance(seed, 3, 4, 3, 3);
        let variant = Variant::ALL[variant];
        let h = Hyperparams { l: 2, alpha, max_iters: 150, seed, ..Hyperparams::default() };
        let out = train(&inst.shop, &inst.mob, &regularizer(&inst, variant), &h, variant).unwrap();
        prop_assert!(out.trace.is_strictly_decreasing());
        prop_assert!(out.trace.accepted_steps() <= 150);
        if out.stop == StopReason::MaxIters {
            prop_assert_eq!(out.trace.accepted_steps(), 150);
        }
    }
}
