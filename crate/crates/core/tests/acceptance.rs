//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion; exits nonzero if any fail.

use std::time::Instant;

use exp4stab::diagnostics::{normality_summary, CoverageRow, Method};
use exp4stab::environment::{expected_loss, LinearEnv, NoiseLaw};
use exp4stab::exp4::bregman::{bregman_div_phi, bregman_div_phi_star, grad_phi};
use exp4stab::exp4::{
    ips_estimate, kl_project_eps_simplex, local_dual_norm_sq, master_inequality_slack, run_episode,
    smoothed_vertex, EtaDenominator, Exp4Params,
};
use exp4stab::experts::ExpertSet;
use exp4stab::harness::config::{ExpertFamily, Setting};
use exp4stab::harness::output::{coverage_csv, histogram_csv, regret_csv, stability_csv, trials_csv};
use exp4stab::harness::run::{build_setup, trial_rng};
use exp4stab::harness::{run_experiment, ExperimentConfig, ExperimentResult, Workers};
use exp4stab::inference::{ols, sigma_hat, GramAccumulator, SigmaNormalization};
use exp4stab::seeds::SimRng;
use rand::{Rng, SeedableRng};

struct Report {
    results: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.results.push((pass, line));
    }
}

fn config(setting: Setting) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_setting(setting);
    c.run.worker_count = Workers::Auto;
    c
}

fn row(result: &ExperimentResult, method: Method, alpha: f64) -> CoverageRow {
    *result
        .coverage
        .iter()
        .find(|r| r.method == method && r.alpha == alpha)
        .expect("alpha in grid")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn coverage_criteria(report: &mut Report, name: &str, result: &ExperimentResult, alphas: &[f64], tol: f64) {
    let mut pass = true;
    let mut detail = Vec::new();
    for &alpha in alphas {
        let r = row(result, Method::Wald, alpha);
        pass &= (r.coverage - (1.0 - alpha)).abs() <= tol;
        detail.push(format!("alpha={alpha} coverage={:.4} (se {:.4})", r.coverage, r.coverage_se));
    }
    report.record(name, pass, format!("{} [tolerance +-{tol}]", detail.join(", ")));
}

fn aps_criteria(report: &mut Report, name: &str, result: &ExperimentResult, min_ratio: f64) {
    let alphas = &result.config.inference.alphas;
    let min_cov = alphas
        .iter()
        .map(|&a| row(result, Method::Aps, a).coverage)
        .fold(f64::INFINITY, f64::min);
    let min_ratio_seen = alphas
        .iter()
        .map(|&a| row(result, Method::Aps, a).mean_width / row(result, Method::Wald, a).mean_width)
        .fold(f64::INFINITY, f64::min);
    report.record(
        name,
        min_cov >= 0.995 && min_ratio_seen >= min_ratio,
        format!(
            "min APS coverage {min_cov:.4} (>= 0.995), min width ratio {min_ratio_seen:.1} (>= {min_ratio})"
        ),
    );
}

fn normality_criteria(report: &mut Report, name: &str, result: &ExperimentResult) {
    let pivots: Vec<f64> = result.trials.iter().map(|t| t.pivot).collect();
    let s = normality_summary(&pivots).expect("enough pivots");
    let pass = s.mean.abs() <= 0.1 && (s.variance - 1.0).abs() <= 0.15 && s.ks_distance <= 0.06;
    report.record(
        name,
        pass,
        format!(
            "mean {:.4} (|.| <= 0.1), variance {:.4} (|. - 1| <= 0.15), KS {:.4} (<= 0.06), n = {}",
            s.mean, s.variance, s.ks_distance, s.n_trials
        ),
    );
}

fn softmax_main(report: &mut Report) -> ExperimentResult {
    let result = run_experiment(&config(Setting::Softmax)).expect("softmax experiment runs");
    coverage_criteria(report, "Wald coverage, softmax setting", &result, &[0.05, 0.10], 0.03);
    aps_criteria(report, "APS conservativeness and width gap, softmax setting", &result, 5.0);
    normality_criteria(report, "OLS pivot normality, softmax setting", &result);
    result
}

fn neural_ridge(report: &mut Report) {
    let mut cfg = config(Setting::Neural);
    cfg.experts.neural_weight_variance = 12.0;
    cfg.inference.estimator = exp4stab::harness::config::Estimator::Ridge;
    assert_eq!(cfg.experts.family, ExpertFamily::Neural);
    let result = run_experiment(&cfg).expect("neural experiment runs");
    aps_criteria(report, "APS conservativeness and width gap, neural setting", &result, 10.0);
    coverage_criteria(report, "Ridge Wald coverage, neural setting", &result, &[0.05], 0.04);
    normality_criteria(report, "Ridge pivot normality, neural setting", &result);
}

fn stability_trend(report: &mut Report) {
    let run = |t: usize| {
        let mut cfg = config(Setting::Softmax);
        cfg.problem.horizon = t;
        cfg.inference.lambda_rid = 1.0 / t as f64;
        cfg.run.n_runs = 50;
        run_experiment(&cfg).expect("stability run")
    };
    let (short, long) = (run(500), run(4000));
    let op = |r: &ExperimentResult| median(r.trials.iter().map(|t| t.stability_error).collect());
    let drift = |r: &ExperimentResult| median(r.trials.iter().map(|t| t.weight_drift).collect());
    let (o1, o2, d1, d2) = (op(&short), op(&long), drift(&short), drift(&long));
    report.record(
        "Stability trend T=500 -> T=4000",
        o2 < o1 && d2 < d1,
        format!("median op error {o1:.4} -> {o2:.4}, median weight drift {d1:.4} -> {d2:.4}"),
    );
}

fn regret(report: &mut Report) {
    let run = |t: usize| {
        let mut cfg = config(Setting::Softmax);
        cfg.problem.horizon = t;
        cfg.inference.lambda_rid = 1.0 / t as f64;
        cfg.run.n_runs = 100;
        run_experiment(&cfg).expect("regret run")
    };
    let (long, short) = (run(3000), run(500));
    let worst = long
        .mean_regret
        .iter()
        .zip(&long.regret_bound)
        .map(|(m, b)| m / b)
        .fold(f64::NEG_INFINITY, f64::max);
    let per_round = |r: &ExperimentResult| r.mean_regret.last().unwrap() / r.mean_regret.len() as f64;
    let (r500, r3000) = (per_round(&short), per_round(&long));
    report.record(
        "Regret below bound and sublinear",
        worst < 1.0 && r3000 < r500,
        format!(
            "max mean-regret/bound over t <= 3000 = {worst:.4}; Reg(T)/T: {r500:.5} at T=500, {r3000:.5} at T=3000"
        ),
    );
}

fn master_inequality(report: &mut Report) {
    let mut cfg = config(Setting::Softmax);
    cfg.problem.horizon = 1000;
    cfg.run.n_runs = 20;
    let setup = build_setup(&cfg).expect("setup");
    let ctx = setup.shared.as_ref().unwrap();
    let y = smoothed_vertex(0, ctx.experts.len(), setup.params.eps_floor);
    let (mut worst, mut bad_rounds) = (f64::NEG_INFINITY, 0usize);
    for i in 0..cfg.run.n_runs {
        let mut rng = trial_rng(&cfg, i);
        let traj = run_episode(&setup.env, &ctx.experts, &setup.params, &mut rng).unwrap();
        for s in master_inequality_slack(&traj, &setup.params, y.as_slice()).unwrap() {
            worst = worst.max(-s);
            bad_rounds += usize::from(-s > 1e-9);
        }
    }
    report.record(
        "Per-round mirror-descent inequality (20 x T=1000)",
        worst <= 1e-9,
        format!("largest violation {worst:.3e} (<= 1e-9), violating rounds {bad_rounds} of 20000"),
    );
}

// ---- Independent oracles -------------------------------------------------

/// Euclidean projection onto `{w >= eps, sum w = 1}` (sort-based simplex
/// projection after shifting by the floor).
fn euclid_project(v: &[f64], eps: f64) -> Vec<f64> {
    let k = v.len();
    let mass = 1.0 - k as f64 * eps;
    let u: Vec<f64> = v.iter().map(|x| x - eps).collect();
    let mut s = u.clone();
    s.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut theta) = (0.0, 0.0);
    for (i, si) in s.iter().enumerate() {
        cum += si;
        let t = (cum - mass) / (i + 1) as f64;
        if si - t > 0.0 {
            theta = t;
        }
    }
    u.iter().map(|x| (x - theta).max(0.0) + eps).collect()
}

/// Minimizes `D_phi(w, v)` over the floored simplex by projected gradient.
fn kl_projection_oracle(v: &[f64], eps: f64) -> Vec<f64> {
    let k = v.len();
    let lv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let mut w = vec![1.0 / k as f64; k];
    // The objective's curvature is 1/w <= 1/eps.
    let step = eps;
    for _ in 0..60_000 {
        let y: Vec<f64> = w.iter().zip(&lv).map(|(wk, l)| wk - step * (wk.ln() - l)).collect();
        w = euclid_project(&y, eps);
    }
    w
}

fn exact_oracles(report: &mut Report) {
    let mut rng = SimRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let eps = rng.random_range(0.01..1.0) / k as f64;
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0f64..2.0).exp()).collect();
        let ours = kl_project_eps_simplex(&v, eps).unwrap();
        let oracle = kl_projection_oracle(&v, eps);
        for (a, b) in ours.as_slice().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        let c = rng.random_range(-6.0f64..6.0).exp();
        let sv: Vec<f64> = v.iter().map(|x| x * c).collect();
        for (a, b) in ours.as_slice().iter().zip(kl_project_eps_simplex(&sv, eps).unwrap().as_slice()) {
            scale = scale.max((a - b).abs());
        }
    }
    report.record(
        "KL projection vs projected-gradient oracle",
        worst <= 1e-6,
        format!("max abs difference {worst:.3e} over 1000 instances (<= 1e-6)"),
    );
    report.record(
        "Projection scaling invariance",
        scale <= 1e-10,
        format!("max abs difference {scale:.3e} (<= 1e-10)"),
    );

    let (mut three, mut pyth, mut fen) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let mut pos = || -> Vec<f64> { (0..k).map(|_| rng.random_range(-4.0f64..2.0).exp()).collect() };
        let (x, xp, y) = (pos(), pos(), pos());
        let lhs: f64 = (0..k).map(|i| (x[i].ln() - xp[i].ln()) * (x[i] - y[i])).sum();
        let rhs = bregman_div_phi(&y, &x).unwrap() - bregman_div_phi(&y, &xp).unwrap()
            + bregman_div_phi(&x, &xp).unwrap();
        three = three.max((lhs - rhs).abs());

        let eps = rng.random_range(0.001..1.0) / k as f64;
        let u = kl_project_eps_simplex(&x, eps).unwrap();
        let p = kl_project_eps_simplex(&y, eps).unwrap();
        let gap = bregman_div_phi(u.as_slice(), p.as_slice()).unwrap() + bregman_div_phi(p.as_slice(), &y).unwrap()
            - bregman_div_phi(u.as_slice(), &y).unwrap();
        pyth = pyth.max(gap);

        let d = bregman_div_phi(&x, &y).unwrap();
        let dual = bregman_div_phi_star(&grad_phi(&y), &grad_phi(&x)).unwrap();
        fen = fen.max((d - dual).abs());
    }
    report.record(
        "Bregman identities (1000 instances)",
        three <= 1e-10 && pyth <= 1e-10 && fen <= 1e-10,
        format!("three-point {three:.3e}, Pythagorean excess {pyth:.3e}, Fenchel {fen:.3e} (all <= 1e-10)"),
    );

    // Enumeration over actions at 1000 sampled rounds.
    let mut cfg = config(Setting::Softmax);
    cfg.problem.horizon = 1000;
    cfg.run.n_moment_samples = 4096;
    let setup = build_setup(&cfg).unwrap();
    let ctx = setup.shared.as_ref().unwrap();
    let traj = run_episode(&setup.env, &ctx.experts, &setup.params, &mut trial_rng(&cfg, 0)).unwrap();
    let na = setup.env.num_actions();
    let (mut unbiased, mut local) = (0.0f64, f64::NEG_INFINITY);
    for r in traj.rounds() {
        let losses: Vec<f64> = (0..na).map(|a| expected_loss(&setup.env, &r.context, a).unwrap()).collect();
        let lmax = losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let mut mean = vec![0.0; r.w_before.len()];
        let mut second = 0.0;
        for a in 0..na {
            let g = ips_estimate(losses[a], &r.probs_at(a), r.mixture[a]).unwrap();
            for (m, gk) in mean.iter_mut().zip(&g) {
                *m += r.mixture[a] * gk;
            }
            second += r.mixture[a] * local_dual_norm_sq(&g, r.w_before.as_slice());
        }
        for (k, row) in r.per_expert_probs.chunks_exact(na).enumerate() {
            let exact: f64 = row.iter().zip(&losses).map(|(p, l)| p * l).sum();
            unbiased = unbiased.max((mean[k] - exact).abs());
        }
        local = local.max(second - na as f64 * lmax * lmax);
    }
    report.record(
        "IPS unbiasedness by enumeration (1000 rounds)",
        unbiased <= 1e-12,
        format!("max abs error {unbiased:.3e} (<= 1e-12)"),
    );
    report.record(
        "Local-norm bound (1000 rounds)",
        local <= 0.0,
        format!("max of E||g_hat||^2_w - A l_max^2 = {local:.3e} (<= 0)"),
    );
}

fn noiseless_recovery(report: &mut Report) {
    let mut rng = SimRng::seed_from_u64(77);
    let (na, dx, k) = (5, 10, 5);
    let env = LinearEnv::random(na, dx, NoiseLaw::Uniform { half_width: 0.0 }, 77, &mut rng).unwrap();
    let experts = ExpertSet::softmax(k, na, dx, 12.0, true, &mut rng).unwrap();
    let d = na * dx;
    let t = d + 50;
    let params = Exp4Params::defaults(k, na, t, EtaDenominator::A).unwrap();
    let traj = run_episode(&env, &experts, &params, &mut rng).unwrap();
    let mut acc = GramAccumulator::new(d);
    for r in traj.rounds() {
        acc.accumulate(&r.feature, r.loss).unwrap();
    }
    let est = ols(&acc).unwrap();
    let err = est
        .beta_hat
        .iter()
        .zip(env.beta_star())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let sigma = sigma_hat(
        traj.rounds().iter().map(|r| (&r.feature, r.loss)),
        &est.beta_hat,
        SigmaNormalization::N,
    )
    .unwrap();
    report.record(
        "Noiseless recovery (T = d + 50)",
        err <= 1e-8 && sigma <= 1e-8,
        format!("max |beta_hat - beta*| = {err:.3e}, sigma_hat = {sigma:.3e} (both <= 1e-8)"),
    );
}

fn reproducibility(report: &mut Report) {
    let render = |workers: usize| {
        let mut cfg = config(Setting::Softmax);
        cfg.run.n_runs = 300;
        cfg.run.worker_count = Workers::Count(workers);
        let r = run_experiment(&cfg).unwrap();
        [trials_csv(&r), coverage_csv(&r), histogram_csv(&r), regret_csv(&r), stability_csv(&r)]
    };
    let (a, b) = (render(1), render(8));
    report.record(
        "Reproducibility across worker counts {1, 8}",
        a == b,
        format!("{} of 5 CSV files byte-identical", a.iter().zip(&b).filter(|(x, y)| x == y).count()),
    );
}

fn main() {
    // Libtest flags such as `--nocapture` are accepted and ignored.
    let start = Instant::now();
    let mut report = Report { results: Vec::new() };
    println!("acceptance suite");
    exact_oracles(&mut report);
    noiseless_recovery(&mut report);
    master_inequality(&mut report);
    softmax_main(&mut report);
    regret(&mut report);
    stability_trend(&mut report);
    reproducibility(&mut report);
    neural_ridge(&mut report);
    let failed = report.results.iter().filter(|(p, _)| !p).count();
    println!(
        "acceptance: {} passed, {failed} failed ({:.1}s)",
        report.results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
