//! Runtime invariant checks behind the `selftest` command.
//!
//! Each check draws random instances from its own seeded stream and reports
//! the worst violation it saw.

use rand::Rng;
use rand::SeedableRng;

use crate::environment::{expected_loss, LinearEnv, NoiseLaw};
use crate::exp4::bregman::{bregman_div_phi, bregman_div_phi_star, grad_phi};
use crate::exp4::{
    grad_penalty, ips_estimate, kl_project_eps_simplex, local_dual_norm_sq, master_inequality_slack,
    penalized_opt_weight, run_episode, smoothed_vertex, EtaDenominator, Exp4Params,
};
use crate::experts::{mixture_probs, ExpertSet};
use crate::seeds::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed violation, in the check's own units.
    pub worst: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<34} worst {:.3e} (tolerance {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance
        )
    }
}

fn check(name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

fn positive_vec(rng: &mut SimRng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(lo..hi).exp()).collect()
}

fn random_instance(rng: &mut SimRng) -> (usize, f64, Vec<f64>) {
    let k = rng.random_range(2..=6);
    let eps = rng.random_range(1e-4..1.0) / k as f64;
    (k, eps, positive_vec(rng, k, -6.0, 3.0))
}

/// Violation of the optimality conditions of the water-filling solution
/// `w_k = max(eps, gamma v_k)`: unclamped coordinates share one ratio
/// `w_k / v_k`, clamped ones would fall below the floor at that ratio.
fn water_fill_kkt_violation(v: &[f64], w: &[f64], eps: f64) -> f64 {
    let mut viol = (w.iter().sum::<f64>() - 1.0).abs();
    viol = viol.max(w.iter().fold(0.0, |m, &x| m.max(eps - x)));
    let free: Vec<f64> = v
        .iter()
        .zip(w)
        .filter(|(_, &wk)| wk > eps * (1.0 + 1e-12))
        .map(|(vk, wk)| (wk / vk).ln())
        .collect();
    if let Some(&log_gamma) = free.first() {
        for lg in &free {
            viol = viol.max((lg - log_gamma).abs());
        }
        for (vk, wk) in v.iter().zip(w) {
            if *wk <= eps * (1.0 + 1e-12) {
                viol = viol.max(log_gamma + vk.ln() - eps.ln());
            }
        }
    }
    viol
}

fn small_problem(seed: u64) -> (LinearEnv, ExpertSet) {
    let mut rng = SimRng::seed_from_u64(seed);
    let env = LinearEnv::random(3, 4, NoiseLaw::Uniform { half_width: 0.1 }, seed, &mut rng)
        .expect("valid environment");
    let experts = ExpertSet::softmax(4, 3, 4, 12.0, true, &mut rng).expect("valid experts");
    (env, experts)
}

/// Runs every check on `instances` random instances.
pub fn run_selftest(seed: u64, instances: usize) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = SimRng::seed_from_u64(seed);

    let (mut kkt, mut scale) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (_, eps, v) = random_instance(&mut rng);
        let w = kl_project_eps_simplex(&v, eps).expect("feasible instance");
        kkt = kkt.max(water_fill_kkt_violation(&v, w.as_slice(), eps));
        let c = rng.random_range(-5.0f64..5.0).exp();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let ws = kl_project_eps_simplex(&scaled, eps).expect("feasible instance");
        for (a, b) in w.as_slice().iter().zip(ws.as_slice()) {
            scale = scale.max((a - b).abs());
        }
    }
    out.push(check("projection optimality conditions", kkt, 1e-9));
    out.push(check("projection scaling invariance", scale, 1e-10));

    let mut opt = 0.0f64;
    for _ in 0..instances {
        let (k, eps, _) = random_instance(&mut rng);
        let lambda = rng.random_range(0.01..2.0);
        let g: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = Exp4Params {
            eta: 0.1,
            lambda_pen: lambda,
            eps_floor: eps,
            num_experts: k,
            horizon: 1,
            gamma_t: 0.0,
            update_rule: Default::default(),
        };
        let w = penalized_opt_weight(&g, &params).expect("positive penalty");
        let v: Vec<f64> = g.iter().map(|gk| (-gk / lambda).exp()).collect();
        opt = opt.max(water_fill_kkt_violation(&v, w.as_slice(), eps));
    }
    out.push(check("penalized optimum conditions", opt, 1e-9));

    let (mut three, mut pyth, mut fenchel) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let k = rng.random_range(2..=6);
        let (x, xp, y) = (
            positive_vec(&mut rng, k, -4.0, 2.0),
            positive_vec(&mut rng, k, -4.0, 2.0),
            positive_vec(&mut rng, k, -4.0, 2.0),
        );
        let lhs: f64 = grad_phi(&x)
            .iter()
            .zip(grad_phi(&xp))
            .zip(x.iter().zip(&y))
            .map(|((gx, gxp), (xi, yi))| (gx - gxp) * (xi - yi))
            .sum();
        let rhs = bregman_div_phi(&y, &x).unwrap() - bregman_div_phi(&y, &xp).unwrap()
            + bregman_div_phi(&x, &xp).unwrap();
        three = three.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let eps = rng.random_range(1e-3..1.0) / k as f64;
        let u = kl_project_eps_simplex(&x, eps).unwrap();
        let p = kl_project_eps_simplex(&y, eps).unwrap();
        let gap = bregman_div_phi(u.as_slice(), p.as_slice()).unwrap()
            + bregman_div_phi(p.as_slice(), &y).unwrap()
            - bregman_div_phi(u.as_slice(), &y).unwrap();
        pyth = pyth.max(gap);

        let d = bregman_div_phi(&x, &y).unwrap();
        let dual = bregman_div_phi_star(&grad_phi(&y), &grad_phi(&x)).unwrap();
        fenchel = fenchel.max((d - dual).abs() / (1.0 + d.abs()));
    }
    out.push(check("three-point identity", three, 1e-10));
    out.push(check("Pythagorean inequality", pyth, 1e-10));
    out.push(check("Fenchel dual divergence", fenchel, 1e-10));

    // Exact enumeration over actions at rounds of a real trajectory.
    let (env, experts) = small_problem(seed ^ 0x5eed);
    let params = Exp4Params::defaults(experts.len(), env.num_actions(), 200, EtaDenominator::A)
        .expect("valid defaults");
    let traj = run_episode(&env, &experts, &params, &mut rng).expect("episode runs");
    let na = env.num_actions();
    let (mut unbiased, mut local, mut pen, mut mix) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for r in traj.rounds().iter().take(instances.max(1)) {
        let w = r.w_before.as_slice();
        let losses: Vec<f64> = (0..na).map(|a| expected_loss(&env, &r.context, a).unwrap()).collect();
        let lmax = losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let mut mean = vec![0.0; w.len()];
        let mut second = 0.0;
        for a in 0..na {
            let g = ips_estimate(losses[a], &r.probs_at(a), r.mixture[a]).unwrap();
            for (m, gk) in mean.iter_mut().zip(&g) {
                *m += r.mixture[a] * gk;
            }
            second += r.mixture[a] * local_dual_norm_sq(&g, w);
        }
        for (k, row) in r.per_expert_probs.chunks_exact(na).enumerate() {
            let exact: f64 = row.iter().zip(&losses).map(|(p, l)| p * l).sum();
            unbiased = unbiased.max((mean[k] - exact).abs());
        }
        local = local.max(second - na as f64 * lmax * lmax);
        let gr = grad_penalty(w, params.eps_floor);
        pen = pen.max(local_dual_norm_sq(&gr, w) - params.eps_floor.ln().powi(2));

        let per: Vec<Vec<f64>> = r.per_expert_probs.chunks_exact(na).map(<[f64]>::to_vec).collect();
        let q = mixture_probs(w, &per).unwrap();
        for (a, b) in q.iter().zip(&r.mixture) {
            mix = mix.max((a - b).abs());
        }
    }
    out.push(check("IPS unbiasedness", unbiased, 1e-12));
    out.push(check("local-norm bound", local, 1e-12));
    out.push(check("penalty gradient norm bound", pen, 1e-9));
    out.push(check("mixture policy consistency", mix, 1e-15));

    let y = smoothed_vertex(0, experts.len(), params.eps_floor);
    let slack = master_inequality_slack(&traj, &params, y.as_slice()).expect("trajectory is valid");
    let worst = slack.iter().fold(0.0f64, |m, s| m.max(-s));
    out.push(check("per-round mirror-descent inequality", worst, 1e-9));

    let again = run_episode(&env, &experts, &params, &mut SimRng::seed_from_u64(seed)).unwrap();
    let twice = run_episode(&env, &experts, &params, &mut SimRng::seed_from_u64(seed)).unwrap();
    out.push(check(
        "episode determinism",
        if again == twice { 0.0 } else { 1.0 },
        0.0,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for r in run_selftest(7, 200) {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn kkt_detects_wrong_answer() {
        assert!(water_fill_kkt_violation(&[0.99, 0.01], &[0.8, 0.2], 0.1) > 0.1);
        assert!(water_fill_kkt_violation(&[0.99, 0.01], &[0.9, 0.1], 0.1) < 1e-12);
    }
}
