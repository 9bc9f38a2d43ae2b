//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=4,7` to run a subset. Failing criteria are reported
//! but only change the exit status when `ACCEPTANCE_STRICT=1`.

use std::path::Path;
use std::time::Instant;

use fdmean::data::{DesignKind, FitMode};
use fdmean::estimator::{fit_common, penalized_objective, two_stage, SolveOptions, SplineEstimate};
use fdmean::harness::{
    default_lambda_grid, parse_plan, pooled_se, run_lambda_profile, run_sweep, run_transition_sweep, CellSpec,
    Regime, RegressionSpec, SelectionMode, SweepPlan, TransitionOverrides, AGREEMENT_SE_FACTOR,
};
use fdmean::kernel::{bernoulli_eval, kernel_eval, SobolevKernelConfig};
use fdmean::metrics::RatePredictor;
use fdmean::simulation::{generate, generate_replicate, DesignSpec, ProcessSpec, StreamRng, StreamTag};
use fdmean::{fit, Dataset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn grid_1001() -> Vec<f64> {
    (0..1001).map(|i| i as f64 / 1000.0).collect()
}

fn common(n: usize, m: usize, seed: u64) -> Dataset {
    generate(&DesignSpec::new(DesignKind::CommonFixed, n, m, seed), &ProcessSpec::default()).unwrap()
}

fn c1_two_stage_equivalence() -> Outcome {
    let cfg = SobolevKernelConfig::new(2).unwrap();
    let data = common(20, 15, 101);
    let ts = grid_1001();
    let mut worst: f64 = 0.0;
    for lambda in [1e-6, 1e-3, 0.1] {
        let opts = SolveOptions::new(lambda);
        let a = two_stage(&data, &opts, &cfg).unwrap().evaluate_grid(&ts, &cfg).unwrap();
        let b = fit_common(&data, &opts, &cfg).unwrap().evaluate_grid(&ts, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(worst <= 1e-8, format!("sup |two_stage - fit_common| = {worst:.3e} (limit 1e-8)"))
}

fn c2_interpolation_limit() -> Outcome {
    let cfg = SobolevKernelConfig::new(2).unwrap();
    let data = common(50, 10, 202);
    let est = fit_common(&data, &SolveOptions::new(0.0), &cfg).unwrap();
    let points = data.shared_points().unwrap();
    let means = data.column_means().unwrap();
    let worst = points
        .iter()
        .zip(&means)
        .map(|(&t, &y)| (est.evaluate(t, &cfg).unwrap() - y).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("max |g(T_j) - mean_j| = {worst:.3e} (limit 1e-6)"))
}

fn c3_kernel_suite() -> Outcome {
    let cfg = SobolevKernelConfig::new(2).unwrap();
    let b2: f64 = bernoulli_eval(2, 0.0).unwrap();
    let b4: f64 = bernoulli_eval(4, 0.0).unwrap();
    let k00: f64 = kernel_eval(&cfg, 0.0, 0.0).unwrap();
    let closed = (b2 - 1.0 / 6.0).abs().max((b4 + 1.0 / 30.0).abs()).max((k00 - 1.0 / 120.0).abs());
    let mut failures = 0;
    let mut min_eig = f64::INFINITY;
    for set in 0..20u64 {
        let mut rng = StreamRng::new(303, set, 0, StreamTag::Locations);
        let size = 5 + (set as usize * 7) % 40;
        let pts: Vec<f64> = (0..size).map(|_| rng.uniform()).collect();
        let g = cfg.gram_matrix(&pts).unwrap();
        let m = nalgebra::DMatrix::from_fn(size, size, |i, j| g[(i, j)] + if i == j { 1e-8 } else { 0.0 });
        if m.clone().cholesky().is_none() {
            failures += 1;
        }
        min_eig = min_eig.min(m.symmetric_eigenvalues().min());
    }
    outcome(
        closed <= 1e-12 && failures == 0 && min_eig > 0.0,
        format!("closed-form error {closed:.1e}; jittered Gram min eigenvalue {min_eig:.2e} over 20 sets, {failures} not PD"),
    )
}

fn c4_common_sparse() -> Outcome {
    let mut o = TransitionOverrides::new(vec![4096], vec![4, 6, 8, 12, 16]);
    o.seed = 404;
    o.workers = workers();
    let fit = run_transition_sweep(2, Regime::CommonSparse, &o).unwrap();
    let (lo, hi) = (-4.8, -3.2);
    outcome(
        (lo..=hi).contains(&fit.slope),
        format!("slope vs log m = {:.3} (band [{lo}, {hi}], r2 = {:.3})", fit.slope, fit.r_squared),
    )
}

fn c5_independent_sparse() -> Outcome {
    let mut o = TransitionOverrides::new(vec![64, 128, 256, 512, 1024], vec![2]);
    o.seed = 505;
    o.workers = workers();
    let fit = run_transition_sweep(2, Regime::IndependentSparse, &o).unwrap();
    let (lo, hi) = (-0.95, -0.65);
    outcome(
        (lo..=hi).contains(&fit.slope),
        format!("slope vs log nm = {:.3} (band [{lo}, {hi}], r2 = {:.3})", fit.slope, fit.r_squared),
    )
}

fn c6_dense_saturation() -> Outcome {
    let ns = [50, 100, 200, 400];
    let mut cells = Vec::new();
    for design in [DesignKind::CommonFixed, DesignKind::Independent] {
        for &n in &ns {
            cells.push(CellSpec::new(design, n, 64));
        }
    }
    let mut plan = SweepPlan::new(cells, 50, SelectionMode::Oracle(default_lambda_grid()), 606);
    for design in [DesignKind::CommonFixed, DesignKind::Independent] {
        plan.regressions.push(RegressionSpec {
            predictor: RatePredictor::LogN,
            design: Some(design),
        });
    }
    let res = run_sweep(&plan, workers()).unwrap();
    let mut pass = res.failures.is_empty();
    let mut parts = Vec::new();
    for s in &res.slopes {
        let f = s.fit.as_ref().unwrap();
        pass &= (-1.25..=-0.75).contains(&f.slope);
        parts.push(format!("{} slope {:.3}", s.spec.design.unwrap(), f.slope));
    }
    for &n in &ns {
        let a = res.cell(DesignKind::CommonFixed, n, 64).unwrap();
        let b = res.cell(DesignKind::Independent, n, 64).unwrap();
        let z = (a.mean_ise - b.mean_ise).abs() / pooled_se(a, b);
        pass &= z <= AGREEMENT_SE_FACTOR;
        parts.push(format!("n={n} |diff|/SE {z:.2}"));
    }
    outcome(pass, format!("{} (slopes in [-1.25, -0.75], diffs <= 3 SE)", parts.join(", ")))
}

fn figure3_plan() -> SweepPlan {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("plans/figure3.plan");
    parse_plan(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn c7_figure3() -> Outcome {
    let plan = figure3_plan();
    let res = run_sweep(&plan, workers()).unwrap();
    let c = res.cell(DesignKind::CommonFixed, 100, 10).unwrap();
    let i = res.cell(DesignKind::Independent, 100, 10).unwrap();
    let se = pooled_se(c, i);
    let gap = (c.mean_ise - i.mean_ise) / se;
    let c100 = res.cell(DesignKind::CommonFixed, 100, 100).unwrap();
    let i100 = res.cell(DesignKind::Independent, 100, 100).unwrap();
    let z100 = (c100.mean_ise - i100.mean_ise).abs() / pooled_se(c100, i100);
    outcome(
        res.failures.is_empty() && i.mean_ise < c.mean_ise - 2.0 * se,
        format!(
            "m=10: common {:.4e}, independent {:.4e}, gap {gap:.2} pooled SE (need > 2); m=100 |diff| {z100:.2} SE",
            c.mean_ise, i.mean_ise
        ),
    )
}

fn c8_lambda_profile() -> Outcome {
    let design = DesignSpec::new(DesignKind::CommonFixed, 50, 10, 808);
    let profile = run_lambda_profile(&design, &ProcessSpec::default(), &default_lambda_grid(), 2).unwrap();
    let base = profile.interpolation_ise;
    let worst = profile
        .points
        .iter()
        .filter(|p| p.0 <= 0.1 * (1.0 + 1e-12))
        .map(|p| (p.1 - base).abs() / base)
        .fold(0.0, f64::max);
    let min = profile.min_ise();
    outcome(
        worst <= 0.05 && min <= base,
        format!("max relative deviation for lambda <= 0.1: {worst:.4} (limit 0.05); min {min:.4e} vs interpolation {base:.4e}"),
    )
}

fn c9_optimality() -> Outcome {
    let cfg = SobolevKernelConfig::new(2).unwrap();
    let mut worst_drop: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = StreamRng::new(909, inst, 0, StreamTag::Frequency);
        let n = 1 + rng.below(10) as usize;
        let m = 2 + rng.below(7) as usize;
        let kind = [DesignKind::CommonFixed, DesignKind::CommonRandom, DesignKind::Independent][inst as usize % 3];
        let lambda = 10f64.powf(-6.0 + 5.0 * rng.uniform());
        let data = generate_replicate(&DesignSpec::new(kind, n, m, 9090 + inst), &ProcessSpec::default(), 0).unwrap();
        let est = fit(&data, FitMode::for_design(kind), &SolveOptions::new(lambda), &cfg).unwrap();
        let base = penalized_objective(&est, &data, &cfg).unwrap();
        let d = est.poly_coeffs().len();
        let k = est.kernel_coeffs().len();
        for coord in 0..d + k {
            for step in [1e-3, -1e-3, 1e-6, -1e-6] {
                let mut poly = est.poly_coeffs().to_vec();
                let mut kern = est.kernel_coeffs().to_vec();
                if coord < d {
                    poly[coord] += step;
                } else {
                    kern[coord - d] += step;
                }
                let moved = SplineEstimate::from_parts(
                    2,
                    est.lambda(),
                    est.lambda_effective(),
                    est.knots().to_vec(),
                    poly,
                    kern,
                    vec![],
                );
                let obj = penalized_objective(&moved, &data, &cfg).unwrap();
                worst_drop = worst_drop.max(base - obj);
            }
        }
    }
    outcome(worst_drop <= 1e-10, format!("largest objective decrease {worst_drop:.3e} (limit 1e-10)"))
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("plans/figure3.plan")).unwrap();
    let truncated = text.replace("replicates = 200", "replicates = 5");
    assert_ne!(truncated, text);
    let plan = dir.path().join("figure3_small.plan");
    std::fs::write(&plan, truncated).unwrap();
    let mut outputs = Vec::new();
    for w in ["1", "8"] {
        let out = dir.path().join(format!("w{w}.csv"));
        let code = fdmean::cli::run([
            "fdmean",
            "sweep",
            plan.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            w,
        ]);
        assert_eq!(code, 0);
        outputs.push(std::fs::read(&out).unwrap());
    }
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    outcome(
        outputs[0] == outputs[1] && rows == 50,
        format!("{rows} rows; workers 1 and 8 byte-identical: {}", outputs[0] == outputs[1]),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "two-stage equals pooled fit on a common design", c1_two_stage_equivalence),
        (2, "interpolation limit", c2_interpolation_limit),
        (3, "Bernoulli and kernel closed forms, Gram PSD", c3_kernel_suite),
        (4, "common-design sparse rate", c4_common_sparse),
        (5, "independent-design sparse rate", c5_independent_sparse),
        (6, "dense-regime saturation", c6_dense_saturation),
        (7, "independent beats common at m = 10", c7_figure3),
        (8, "lambda profile flat below 0.1", c8_lambda_profile),
        (9, "solver first-order optimality", c9_optimality),
        (10, "sweep determinism across worker counts", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} [{verdict}] {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    } else {
        println!("all criteria passed");
    }
}
