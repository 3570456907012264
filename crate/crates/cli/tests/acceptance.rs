//! Exit criteria, run in order on one thread so wall-clock limits are honest.
//! Prints one PASS/FAIL line per criterion and fails if any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slcontrol::bellman::{Operator, Scratch};
use slcontrol::benchmarks::{
    benchmark_family, constant_cost_fixed_point, inner_sup_error, lq1d, two_mode_switch, Benchmark,
    LqParams, TwoModeParams,
};
use slcontrol::solver::{solve, SolverConfig, SweepMode};
use slcontrol::synthesis::{monte_carlo, Lookup};
use slcontrol::{Grid, Model, Solution, ValueField};
use slcontrol_cli::{cmd_simulate, cmd_solve, Options};

const TOL: f64 = 1e-8;
const FIELD_TOL: f64 = 10.0 * TOL;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id} [{}] {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

/// A converged run kept for the policy self-consistency check.
struct Converged {
    label: String,
    model: Model,
    sol: Solution,
}

fn cfg(mode: SweepMode) -> SolverConfig {
    SolverConfig {
        tol: TOL,
        sweep_mode: mode,
        ..Default::default()
    }
}

fn constant_model(dim: usize, c: f64, lambda: f64) -> Model {
    Model::builder(dim)
        .running_cost(move |_, _, _| c)
        .discount(lambda)
        .build()
        .unwrap()
}

fn constant_grids() -> Vec<Grid> {
    vec![
        Grid::new(&[-1.0], &[1.0], &[5]).unwrap(),
        Grid::new(&[-1.0], &[1.0], &[33]).unwrap(),
        Grid::new(&[0.0], &[3.0], &[257]).unwrap(),
        Grid::new(&[-1.0, 0.0], &[1.0, 0.5], &[17, 9]).unwrap(),
        Grid::new(&[0.0, 0.0, 0.0], &[1.0, 2.0, 1.0], &[5, 7, 5]).unwrap(),
    ]
}

fn criterion_1(report: &mut Report, keep: &mut Vec<Converged>) {
    let (c, lambda) = (2.0, 1.0);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    for g in constant_grids() {
        let m = constant_model(g.dim(), c, lambda);
        let sol = solve(&m, &g, &cfg(SweepMode::GaussSeidel)).unwrap();
        all_converged &= sol.stats.converged;
        let exact = constant_cost_fixed_point(c, lambda, sol.stats.dt);
        for v in sol.field.values() {
            worst = worst.max((v - exact).abs());
        }
        keep.push(Converged {
            label: format!("constant {:?}", g.counts()),
            model: m,
            sol,
        });
    }
    let secs = start.elapsed().as_secs_f64();
    report.record(
        1,
        all_converged && worst <= FIELD_TOL && secs < 1.0,
        format!("constant-cost exactness: max |V - c*dt/(1-exp(-lambda*dt))| = {worst:.3e} (limit {FIELD_TOL:.0e}), {secs:.3}s (limit 1s)"),
    )
}

struct LqLevel {
    model: Model,
    sol: Solution,
    error: f64,
}

fn criterion_2(report: &mut Report) -> Vec<(f64, Vec<LqLevel>)> {
    let start = Instant::now();
    let mut out = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for sigma in [0.0, 0.5] {
        let bench = Benchmark::Lq1d(LqParams {
            sigma,
            r_ctl: 1.0,
            lambda: 1.0,
            radius: 2.0,
            counts: 65,
            action_count: 65,
        });
        let family = benchmark_family(&bench, &bench.default_grid().unwrap()).unwrap();
        let mut levels = Vec::new();
        for level in 0..3 {
            let case = family(level).unwrap();
            let sol = solve(&case.model, &case.grid, &cfg(SweepMode::GaussSeidel)).unwrap();
            let error = inner_sup_error(&sol.field, &case.oracle, sol.stats.dt);
            levels.push(LqLevel {
                model: case.model,
                sol,
                error,
            });
        }
        let errs: Vec<f64> = levels.iter().map(|l| l.error).collect();
        let monotone = errs.windows(2).all(|w| w[1] < w[0]);
        let halved = errs[2] < errs[0] / 2.0;
        pass &= monotone && halved;
        detail.push(format!(
            "sigma={sigma}: errors {:.4e}/{:.4e}/{:.4e} on [-1,1]",
            errs[0], errs[1], errs[2]
        ));
        out.push((sigma, levels));
    }
    let secs = start.elapsed().as_secs_f64();
    report.record(
        2,
        pass && secs < 30.0,
        format!(
            "LQ oracle, grids 65/129/257: {}; monotone decrease and finest < coarsest/2; {secs:.2}s (limit 30s)",
            detail.join("; ")
        ),
    );
    out
}

fn criterion_3(report: &mut Report, constant: &[Converged], lq: &[(f64, Vec<LqLevel>)], keep: &mut Vec<Converged>) {
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for run in constant {
        let g = run.sol.field.grid();
        let jac = solve(&run.model, g, &cfg(SweepMode::Jacobi)).unwrap();
        worst = worst.max(jac.field.max_abs_diff(&run.sol.field));
        runs += 1;
    }
    for (sigma, levels) in lq {
        for (i, l) in levels.iter().enumerate() {
            let g = l.sol.field.grid();
            let jac = solve(&l.model, g, &cfg(SweepMode::Jacobi)).unwrap();
            worst = worst.max(jac.field.max_abs_diff(&l.sol.field));
            runs += 1;
            keep.push(Converged {
                label: format!("lq jacobi sigma={sigma} level {i}"),
                model: l.model.clone(),
                sol: jac,
            });
        }
    }
    report.record(
        3,
        worst <= FIELD_TOL,
        format!("Gauss-Seidel vs Jacobi over {runs} runs: max nodewise diff {worst:.3e} (limit {FIELD_TOL:.0e})"),
    )
}

fn random_field(rng: &mut ChaCha8Rng, g: &Grid, lo: f64, hi: f64) -> ValueField {
    let values = (0..g.len()).map(|_| rng.random_range(lo..hi)).collect();
    ValueField::from_values(g, 1, values).unwrap()
}

fn lq33() -> (Model, Grid, f64) {
    let lq = lq1d(&LqParams {
        sigma: 0.5,
        counts: 33,
        action_count: 17,
        ..Default::default()
    })
    .unwrap();
    let g = lq.grid();
    let dt = SolverConfig::default().time_step(&g);
    (lq.model, g, dt)
}

fn criterion_4(report: &mut Report) {
    let (m, g, dt) = lq33();
    let op = Operator::new(&m, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = Scratch::new(1);
    let mut violations = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let a = random_field(&mut rng, &g, -5.0, 5.0);
        let b = random_field(&mut rng, &g, -5.0, 5.0);
        let bound = op.beta() * a.max_abs_diff(&b);
        for n in 0..g.len() {
            let ta = op.update_node(&a, n, 0, &mut s).unwrap().0;
            let tb = op.update_node(&b, n, 0, &mut s).unwrap().0;
            checks += 1;
            // slack covers floating-point rounding only
            if (ta - tb).abs() > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    report.record(
        4,
        violations == 0,
        format!("contraction |T(A)-T(B)| <= exp(-lambda*dt)*|A-B|: {violations} violations in {checks} node checks (100 pairs, 33 nodes)"),
    )
}

fn criterion_5(report: &mut Report) {
    let (m, g, dt) = lq33();
    let op = Operator::new(&m, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = Scratch::new(1);
    let mut violations = 0;
    for _ in 0..100 {
        let a = random_field(&mut rng, &g, -5.0, 5.0);
        let bumped: Vec<f64> = a.values().iter().map(|v| v + rng.random_range(0.0..3.0)).collect();
        let b = ValueField::from_values(&g, 1, bumped).unwrap();
        for n in 0..g.len() {
            if op.update_node(&a, n, 0, &mut s).unwrap().0 > op.update_node(&b, n, 0, &mut s).unwrap().0 {
                violations += 1;
            }
        }
    }
    let g3 = Grid::new(&[-1.0, 0.0, 2.0], &[1.0, 3.0, 2.5], &[5, 9, 4]).unwrap();
    let mut bad_weights = 0;
    for _ in 0..1000 {
        let x = [
            rng.random_range(-1.5..1.5),
            rng.random_range(-0.5..3.5),
            rng.random_range(1.9..2.6),
        ];
        let w = g3.interpolation_weights(&x);
        let sum: f64 = w.iter().map(|p| p.1).sum();
        if w.iter().any(|p| p.1 < 0.0) || (sum - 1.0).abs() > 1e-12 {
            bad_weights += 1;
        }
    }
    report.record(
        5,
        violations == 0 && bad_weights == 0,
        format!("monotonicity: {violations} violations over 100 ordered pairs; interpolation weights: {bad_weights} bad of 1000 queries"),
    )
}

fn criterion_6(report: &mut Report, keep: &mut Vec<Converged>) {
    let cases = [
        TwoModeParams::default(),
        TwoModeParams { k_sw: 1e6, ..Default::default() },
        TwoModeParams { c_low: 4.0, c_high: 4.0, ..Default::default() },
        TwoModeParams { c_low: 1.0, c_high: 3.0, k_sw: 0.5, lambda: 0.5, ..Default::default() },
        TwoModeParams { c_low: 1.0, c_high: 1.2, k_sw: 0.5, lambda: 0.5, ..Default::default() },
    ];
    let mut worst: f64 = 0.0;
    let mut policy_ok = true;
    let mut switching_cases = 0;
    for p in cases {
        let bench = two_mode_switch(&p).unwrap();
        let g = bench.grid();
        let sol = solve(&bench.model, &g, &cfg(SweepMode::GaussSeidel)).unwrap();
        let dt = sol.stats.dt;
        let switches = bench.switches(dt);
        switching_cases += switches as usize;
        for n in 0..g.len() {
            for q in 0..2 {
                worst = worst.max((sol.field.get(q, n) - bench.fixed_point(q, dt)).abs());
            }
            let is_switch = sol.policy.get(0, n) == slcontrol::Decision::Switch(1);
            policy_ok &= is_switch == switches;
            policy_ok &= matches!(sol.policy.get(1, n), slcontrol::Decision::Continuous(_));
        }
        keep.push(Converged {
            label: format!("two-mode {p:?}"),
            model: bench.model.clone(),
            sol,
        });
    }
    report.record(
        6,
        worst <= FIELD_TOL && policy_ok,
        format!("switch fixed point: max error {worst:.3e} (limit {FIELD_TOL:.0e}); mode-0 policy matches switch condition in all 5 cases ({switching_cases} switching)"),
    )
}

fn criterion_7(report: &mut Report, lq: &[(f64, Vec<LqLevel>)]) {
    let (_, levels) = lq.iter().find(|(s, _)| *s == 0.5).unwrap();
    let finest = levels.last().unwrap();
    let bench = lq1d(&LqParams {
        sigma: 0.5,
        ..Default::default()
    })
    .unwrap();
    let x0 = 1.0;
    let start = Instant::now();
    let r = monte_carlo(
        &finest.model,
        &finest.sol.field,
        &[x0],
        0,
        10_000,
        10.0,
        1e-3,
        0,
        Lookup::Tabular(&finest.sol.policy),
        finest.sol.stats.dt,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let target = bench.value(x0);
    let gap = (r.mean - target).abs();
    let allowance = 3.0 * r.std_err + finest.error + r.tail_bound;
    report.record(
        7,
        gap <= allowance && secs < 60.0,
        format!(
            "closed loop: MC mean {:.5} vs V(1)={target:.5}, gap {gap:.3e} <= 3*SE({:.2e}) + solver err({:.2e}) + tail({:.2e}) = {allowance:.3e}; {secs:.2}s (limit 60s)",
            r.mean, r.std_err, finest.error, r.tail_bound
        ),
    )
}

fn criterion_8(report: &mut Report) {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg_path = tmp.path().join("run.json");
    std::fs::write(
        &cfg_path,
        r#"{
          "model": {"name": "lq1d", "params": {"sigma": 0.5, "counts": 65, "action_count": 33}},
          "simulation": {"x0": [1.0], "n_runs": 200, "horizon": 2.0, "dt_sim": 0.002, "seed": 17, "lookup": "online"}
        }"#,
    )
    .unwrap();
    let run = |dir: &Path| {
        let opts = Options {
            output_dir: Some(dir.to_path_buf()),
            quiet: true,
        };
        assert_eq!(cmd_solve(&cfg_path, &opts).unwrap(), 0);
        assert_eq!(cmd_simulate(&cfg_path, &dir.join("value.json"), &opts).unwrap(), 0);
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a);
    run(&b);
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let value_same = same("value.json");
    let report_same = same("report.json");
    report.record(
        8,
        value_same && report_same,
        format!("determinism: value.json identical={value_same}, report.json identical={report_same}"),
    )
}

fn criterion_9(report: &mut Report, runs: &[Converged]) {
    let mut nodes = 0usize;
    let mut bad = 0usize;
    let mut worst: f64 = 0.0;
    let mut worst_label = String::new();
    for run in runs {
        let field = &run.sol.field;
        let op = Operator::new(&run.model, run.sol.stats.dt).unwrap();
        let mut s = Scratch::new(run.model.dim());
        for q in 0..field.num_modes() {
            for n in 0..field.grid().len() {
                let v = op
                    .evaluate_decision(field, n, q, run.sol.policy.get(q, n), &mut s)
                    .unwrap();
                let gap = (v - field.get(q, n)).abs();
                nodes += 1;
                if gap > FIELD_TOL {
                    bad += 1;
                }
                if gap > worst {
                    worst = gap;
                    worst_label = run.label.clone();
                }
            }
        }
    }
    report.record(
        9,
        bad == 0,
        format!("policy self-consistency over {} fields, {nodes} nodes: {bad} mismatches > {FIELD_TOL:.0e} (worst {worst:.3e} in {worst_label})", runs.len()),
    )
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    let mut converged = Vec::new();

    criterion_1(&mut report, &mut converged);
    let lq = criterion_2(&mut report);
    let constant_runs: Vec<Converged> = std::mem::take(&mut converged);
    criterion_3(&mut report, &constant_runs, &lq, &mut converged);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report, &mut converged);
    criterion_7(&mut report, &lq);
    criterion_8(&mut report);

    converged.extend(constant_runs);
    for (sigma, levels) in lq {
        for (i, l) in levels.into_iter().enumerate() {
            converged.push(Converged {
                label: format!("lq gauss-seidel sigma={sigma} level {i}"),
                model: l.model,
                sol: l.sol,
            });
        }
    }
    criterion_9(&mut report, &converged);

    let failed: Vec<usize> = report.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        report.lines.len() - failed.len(),
        report.lines.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
