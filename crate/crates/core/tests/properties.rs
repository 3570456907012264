use proptest::prelude::*;
use slcontrol::bellman::{sl_update, stencil_points, Operator, Scratch};
use slcontrol::benchmarks::{lq1d, LqParams};
use slcontrol::model::ActionSet;
use slcontrol::{Grid, Model, ValueField};

fn grid2() -> Grid {
    Grid::new(&[-1.0, 0.5], &[2.0, 1.5], &[7, 5]).unwrap()
}

fn switching_model() -> Model {
    Model::builder(1)
        .modes(3)
        .actions(ActionSet::uniform(-1.0, 1.0, 5))
        .drift(|x, q, a, out| out[0] = a[0] - 0.3 * x[0] * q as f64)
        .diffusion(|x, q, _, out| out[0] = 0.2 + 0.1 * q as f64 + 0.05 * x[0].abs())
        .running_cost(|x, q, a| x[0] * x[0] + 0.5 * a[0] * a[0] + q as f64)
        .discount(0.8)
        .uniform_switch_cost(0.3)
        .build()
        .unwrap()
}

proptest! {
    #[test]
    fn index_maps_are_bijective(flat in 0usize..35) {
        let g = grid2();
        let multi = g.to_multi(flat).unwrap();
        prop_assert_eq!(g.to_flat(&multi).unwrap(), flat);
    }

    #[test]
    fn interpolation_is_exact_for_affine(c0 in -3.0..3.0f64, c1 in -3.0..3.0f64, b in -3.0..3.0f64,
                                        x in -1.0..2.0f64, y in 0.5..1.5f64) {
        let g = grid2();
        let f = ValueField::from_fn(&g, 1, |p, _| c0 * p[0] + c1 * p[1] + b);
        let exact = c0 * x + c1 * y + b;
        prop_assert!((f.interpolate(0, &[x, y]) - exact).abs() < 1e-12);
    }

    #[test]
    fn interpolation_weights_form_convex_combination(x in -3.0..4.0f64, y in -1.0..3.0f64) {
        let g = grid2();
        let w = g.interpolation_weights(&[x, y]);
        prop_assert_eq!(w.len(), 4);
        prop_assert!(w.iter().all(|&(_, wi)| wi >= 0.0));
        prop_assert!((w.iter().map(|&(_, wi)| wi).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_queries_clamp(seed in 0u64..1000, x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let g = grid2();
        let f = ValueField::from_fn(&g, 1, |p, _| ((p[0] + 3.0 * p[1]) * (seed as f64 + 1.0)).sin());
        let clamped = g.project(&[x, y]);
        prop_assert_eq!(f.interpolate(0, &[x, y]), f.interpolate(0, &clamped));
    }

    #[test]
    fn interpolation_is_monotone(vals in prop::collection::vec(-10.0..10.0f64, 35),
                                 bumps in prop::collection::vec(0.0..5.0f64, 35),
                                 x in -1.0..2.0f64, y in 0.5..1.5f64) {
        let g = grid2();
        let a = ValueField::from_values(&g, 1, vals.clone()).unwrap();
        let b = ValueField::from_values(&g, 1, vals.iter().zip(&bumps).map(|(v, d)| v + d).collect()).unwrap();
        prop_assert!(a.interpolate(0, &[x, y]) <= b.interpolate(0, &[x, y]));
    }

    #[test]
    fn stencil_weights_positive_and_normalized(x in -2.0..2.0f64, a in 0usize..9, dt in 1e-4..1.0f64,
                                               sigma in 0.0..2.0f64) {
        let lq = lq1d(&LqParams { sigma, action_count: 9, ..Default::default() }).unwrap();
        let s = stencil_points(&lq.model, &[x], 0, a, dt).unwrap();
        prop_assert!(s.iter().all(|(_, w)| w > 0.0));
        prop_assert!((s.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-15);
        // weak consistency: mean displacement dt·f, second moment dt·σ²
        let mean: f64 = s.iter().map(|(p, w)| w * (p[0] - x)).sum();
        let drift = lq.model.actions().get(a)[0];
        prop_assert!((mean - dt * drift).abs() < 1e-12);
        let var: f64 = s.iter().map(|(p, w)| w * (p[0] - x - dt * drift).powi(2)).sum();
        prop_assert!((var - dt * sigma * sigma).abs() < 1e-12);
    }

    #[test]
    fn switching_operator_is_monotone_and_nonexpansive(
        a in prop::collection::vec(-5.0..5.0f64, 33),
        b in prop::collection::vec(-5.0..5.0f64, 33),
        bumps in prop::collection::vec(0.0..2.0f64, 33),
    ) {
        let g = Grid::new(&[-1.0], &[1.0], &[11]).unwrap();
        let m = switching_model();
        let dt = 0.2;
        let fa = ValueField::from_values(&g, 3, a.clone()).unwrap();
        let fb = ValueField::from_values(&g, 3, b).unwrap();
        let fc = ValueField::from_values(&g, 3, a.iter().zip(&bumps).map(|(v, d)| v + d).collect()).unwrap();
        let sup = fa.max_abs_diff(&fb);
        for q in 0..3 {
            for n in 0..g.len() {
                let ta = sl_update(&fa, &m, n, q, dt).unwrap().0;
                let tb = sl_update(&fb, &m, n, q, dt).unwrap().0;
                let tc = sl_update(&fc, &m, n, q, dt).unwrap().0;
                prop_assert!((ta - tb).abs() <= sup * (1.0 + 1e-12));
                prop_assert!(ta <= tc);
            }
        }
    }

    #[test]
    fn decisions_reproduce_their_values(vals in prop::collection::vec(-5.0..5.0f64, 33), x in -1.0..1.0f64) {
        let g = Grid::new(&[-1.0], &[1.0], &[11]).unwrap();
        let m = switching_model();
        let op = Operator::new(&m, 0.2).unwrap();
        let f = ValueField::from_values(&g, 3, vals).unwrap();
        let mut s = Scratch::new(1);
        for q in 0..3 {
            for n in 0..g.len() {
                let (v, d) = op.update_node(&f, n, q, &mut s).unwrap();
                prop_assert_eq!(op.evaluate_decision(&f, n, q, d, &mut s).unwrap(), v);
            }
            // off-node minimization agrees with its own branch as well
            let (v, d) = op.update_at(&f, &[x], q, &mut s).unwrap();
            let branch = match d {
                slcontrol::Decision::Continuous(a) => op.continuous_at(&f, &[x], q, a, &mut s).unwrap(),
                slcontrol::Decision::Switch(t) => f.interpolate(t, &[x]) + m.switch_cost(q, t),
            };
            prop_assert_eq!(branch, v);
        }
    }
}
