//! End-to-end acceptance gates. Each test prints a single PASS/FAIL line
//! and enforces its own wall-clock budget.

use hfpd_ot::core::{
    kl_divergence_raw, CostMatrix, DiscreteDistribution, SimplexChart, TransportPlan,
};
use hfpd_ot::eot::{exact_ot_small, gibbs_kernel, sinkhorn, transport_cost, IdealDesign};
use hfpd_ot::fairness::{
    average_mass_threshold, compare_repair_schemes, diversity_index, frequency_map,
    sample_empirical_marginals, RepairConfig, RepairScheme,
};
use hfpd_ot::hyperprior::{
    expected_plan, gauss_legendre_on, grad_log_density, log_density, log_density_coords_2x2,
    marginal_density_grid_2x2, HyperpriorParams, KnowledgeConstraints, QuadratureSpec,
};
use hfpd_ot::potentials::{dual_gradient_estimate, solve_potentials};
use hfpd_ot::sampler::{effective_sample_size, hmc_sample, HmcConfig, PlanTarget};
use hfpd_ot::Result;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::time::{Duration, Instant};

struct Gate {
    name: &'static str,
    start: Instant,
    budget: Duration,
    failures: Vec<String>,
}

impl Gate {
    fn new(name: &'static str, budget_secs: u64) -> Self {
        Self {
            name,
            start: Instant::now(),
            budget: Duration::from_secs(budget_secs),
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        if !ok {
            self.failures.push(detail);
        }
    }

    fn finish(mut self) {
        let elapsed = self.start.elapsed();
        if elapsed > self.budget {
            self.failures.push(format!(
                "runtime {elapsed:.1?} exceeded budget {:?}",
                self.budget
            ));
        }
        let verdict = if self.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        println!("acceptance {}: {verdict} ({elapsed:.1?})", self.name);
        assert!(
            self.failures.is_empty(),
            "{}: {}",
            self.name,
            self.failures.join("; ")
        );
    }
}

fn quick_sampler(seed: u64) -> HmcConfig {
    HmcConfig {
        burn_in: 1500,
        adaptation_steps: 1200,
        seed,
        ..HmcConfig::default()
    }
}

fn random_interior(rng: &mut ChaCha12Rng, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len)
        .map(|_| -(rng.gen_range(1e-12..1.0_f64)).ln() + floor)
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// The 2x2 illustration setup: unit off-diagonal cost, skewed nominals.
fn small_constraints(eta: f64, zeta: f64) -> KnowledgeConstraints {
    let cost = CostMatrix::euclidean_squared_grid(2, 2);
    let ideal = gibbs_kernel(&cost, 1.0, None).unwrap();
    KnowledgeConstraints::new(
        DiscreteDistribution::new(vec![0.2, 0.8]).unwrap(),
        DiscreteDistribution::new(vec![0.9, 0.1]).unwrap(),
        eta,
        zeta,
        (0.0, 0.0),
        ideal,
        None,
    )
    .unwrap()
}

/// Precomputed nested Gauss-Legendre nodes over the 2x2 coordinate simplex:
/// for each node, the flat (lambda = 0) log density, the two marginal
/// KL moments, and the product weight.
struct QuadTable {
    log_tilde: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    w: Vec<f64>,
}

impl QuadTable {
    fn build(c: &KnowledgeConstraints, order: usize) -> Self {
        let flat = HyperpriorParams::new(c.clone(), (0.0, 0.0)).unwrap();
        let (mut log_tilde, mut r1, mut r2, mut w) = (vec![], vec![], vec![], vec![]);
        let (n1, w1) = gauss_legendre_on(order, 0.0, 1.0);
        for (&p11, &wa) in n1.iter().zip(&w1) {
            let (n2, w2) = gauss_legendre_on(order, 0.0, 1.0 - p11);
            for (&p12, &wb) in n2.iter().zip(&w2) {
                let (n3, w3) = gauss_legendre_on(order, 0.0, 1.0 - p11 - p12);
                for (&p21, &wc) in n3.iter().zip(&w3) {
                    let p22 = 1.0 - p11 - p12 - p21;
                    log_tilde.push(log_density_coords_2x2(p11, p12, p21, &flat).unwrap());
                    let mu = [p11 + p12, p21 + p22];
                    let nu = [p11 + p21, p12 + p22];
                    r1.push(kl_divergence_raw(&mu, c.mu0.weights()));
                    r2.push(kl_divergence_raw(&nu, c.nu0.weights()));
                    w.push(wa * wb * wc);
                }
            }
        }
        Self {
            log_tilde,
            r1,
            r2,
            w,
        }
    }

    /// Dual objective lambda . theta + ln Z(lambda); its stationary point is
    /// the optimum the stochastic solve targets.
    fn dual(&self, lambda: [f64; 2], theta: [f64; 2]) -> f64 {
        let mut peak = f64::NEG_INFINITY;
        let exponents: Vec<f64> = (0..self.w.len())
            .map(|i| {
                let e = self.log_tilde[i] - lambda[0] * self.r1[i] - lambda[1] * self.r2[i];
                peak = peak.max(e);
                e
            })
            .collect();
        let z: f64 = exponents
            .iter()
            .zip(&self.w)
            .map(|(e, w)| w * (e - peak).exp())
            .sum();
        lambda[0] * theta[0] + lambda[1] * theta[1] + peak + z.ln()
    }

    fn dual_gradient_fd(&self, lambda: [f64; 2], theta: [f64; 2], h: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..2 {
            let (mut lp, mut lm) = (lambda, lambda);
            lp[i] += h;
            lm[i] = (lm[i] - h).max(0.0);
            g[i] = (self.dual(lp, theta) - self.dual(lm, theta)) / (lp[i] - lm[i]);
        }
        g
    }

    /// Coarse-to-fine search for the dual's optimum over [0, hi]^2.
    fn grid_optimum(&self, theta: [f64; 2], hi: f64) -> [f64; 2] {
        let mut center = [hi / 2.0, hi / 2.0];
        let mut half = hi / 2.0;
        let mut best = center;
        loop {
            let mut best_val = f64::INFINITY;
            let steps = 25;
            for a in 0..=steps {
                for b in 0..=steps {
                    let l = [
                        (center[0] - half + 2.0 * half * a as f64 / steps as f64).clamp(0.0, hi),
                        (center[1] - half + 2.0 * half * b as f64 / steps as f64).clamp(0.0, hi),
                    ];
                    let v = self.dual(l, theta);
                    if v < best_val {
                        best_val = v;
                        best = l;
                    }
                }
            }
            if half < 0.01 {
                return best;
            }
            center = best;
            half = half * 2.0 / steps as f64 * 1.5;
        }
    }
}

#[test]
fn sinkhorn_matches_lp_oracle_on_random_instances() {
    let mut gate = Gate::new("sinkhorn vs exact LP (50 random 5x5)", 10);
    let mut rng = ChaCha12Rng::seed_from_u64(1001);
    for t in 0..50 {
        let mu0 = DiscreteDistribution::new(random_interior(&mut rng, 5, 0.1)).unwrap();
        let nu0 = DiscreteDistribution::new(random_interior(&mut rng, 5, 0.1)).unwrap();
        let costs: Vec<f64> = (0..25).map(|_| rng.gen_range(0.01..1.0)).collect();
        let cost = CostMatrix::new(costs, 5, 5).unwrap();
        let epsilon = 1e-3 * cost.max_cost();
        let ideal = gibbs_kernel(&cost, epsilon, None).unwrap();
        let sol = sinkhorn(&mu0, &nu0, &ideal, 5e-10, 200_000).unwrap();
        let (row, col) = sol.plan.marginal_sums();
        let err = row
            .iter()
            .zip(mu0.weights())
            .chain(col.iter().zip(nu0.weights()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        gate.check(err <= 1e-9, format!("instance {t}: marginal error {err:e}"));
        let lp = exact_ot_small(&mu0, &nu0, &cost).unwrap();
        let (c_s, c_lp) = (sol.cost(&cost), transport_cost(&lp, &cost));
        gate.check(
            c_s <= 1.01 * c_lp + 1e-12,
            format!("instance {t}: entropic cost {c_s} vs LP {c_lp}"),
        );
    }
    gate.finish();
}

#[test]
fn chart_gradient_matches_finite_differences() {
    let mut gate = Gate::new("chart gradient vs central differences (20 random 4x5)", 5);
    let (m, n) = (4, 5);
    let cost = CostMatrix::euclidean_squared_grid(m, n);
    let ideal = gibbs_kernel(&cost, 1.0, None).unwrap();
    let constraints = KnowledgeConstraints::new(
        DiscreteDistribution::from_unnormalized(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
        DiscreteDistribution::from_unnormalized(&[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(),
        0.5,
        0.5,
        (0.3, 0.7),
        ideal,
        None,
    )
    .unwrap();
    let params = HyperpriorParams::new(constraints, (1.2, 0.8)).unwrap();
    let chart = SimplexChart::new(m * n).unwrap();
    let eval = |z: &[f64]| -> f64 {
        let w = chart.inverse_weights(z).unwrap();
        let plan = TransportPlan::new(w, m, n).unwrap();
        log_density(&plan, &params).unwrap() + chart.log_jacobian(z).unwrap()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(2002);
    let h = 1e-6;
    for t in 0..20 {
        let entries = random_interior(&mut rng, m * n, 0.3);
        let plan = TransportPlan::new(entries.clone(), m, n).unwrap();
        let z = chart
            .forward(&DiscreteDistribution::new(entries).unwrap())
            .unwrap();
        let analytic = chart
            .pullback_gradient(&z, &grad_log_density(&plan, &params).unwrap())
            .unwrap();
        let mut num = 0.0_f64;
        let mut den = 0.0_f64;
        for k in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fd = (eval(&zp) - eval(&zm)) / (2.0 * h);
            num += (fd - analytic[k]).powi(2);
            den += fd * fd;
        }
        let rel = (num / den).sqrt();
        gate.check(rel < 1e-5, format!("plan {t}: relative error {rel:e}"));
    }
    gate.finish();
}

#[test]
fn sampled_dual_gradient_matches_quadrature() {
    let mut gate = Gate::new("sampled dual gradient vs quadrature (2x2)", 120);
    let theta = [0.1, 0.1];
    let c = small_constraints(theta[0], theta[1]);
    let est = dual_gradient_estimate([1.0, 1.0], &c, &quick_sampler(3003), 20_000).unwrap();
    let table = QuadTable::build(&c, 32);
    let fd = table.dual_gradient_fd([1.0, 1.0], theta, 1e-3);
    for i in 0..2 {
        gate.check(
            (est.grad[i] - fd[i]).abs() <= 3.0 * est.se[i],
            format!(
                "component {i}: sampled {} vs quadrature {} (se {})",
                est.grad[i], est.se[i], fd[i]
            ),
        );
    }
    gate.finish();
}

fn five_by_five_constraints(eta: f64, zeta: f64) -> KnowledgeConstraints {
    let cost = CostMatrix::euclidean_squared_grid(5, 5);
    let ideal = gibbs_kernel(&cost, 1.0, None).unwrap();
    KnowledgeConstraints::new(
        DiscreteDistribution::from_unnormalized(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
        DiscreteDistribution::from_unnormalized(&[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(),
        eta,
        zeta,
        (0.0, 0.0),
        ideal,
        None,
    )
    .unwrap()
}

#[test]
fn extremal_radii_drive_potentials_to_limits() {
    let mut gate = Gate::new("extremal radii limits (2x2 and 5x5)", 600);
    let cases: Vec<(&str, KnowledgeConstraints, KnowledgeConstraints)> = vec![
        ("2x2", small_constraints(10.0, 10.0), small_constraints(0.01, 0.01)),
        (
            "5x5",
            five_by_five_constraints(10.0, 10.0),
            five_by_five_constraints(0.01, 0.01),
        ),
    ];
    for (label, wide, tight) in cases {
        let (params, _) =
            solve_potentials(&wide, 0.02, &quick_sampler(4004), 1500, 40).unwrap();
        let sup = params.potentials.0.max(params.potentials.1);
        gate.check(
            sup < 0.1,
            format!("{label} wide radii: potentials {:?}", params.potentials),
        );

        // The tight-radius dual is nearly singular along the difference of
        // the two potentials; resolving that valley needs small gradient
        // noise, which the 2x2 case can afford.
        let (tight_tol, tight_samp) = if label == "2x2" { (1e-4, 300_000) } else { (2e-4, 30_000) };
        let tight_cfg = HmcConfig {
            burn_in: 6000,
            adaptation_steps: 4800,
            seed: 4005,
            ..HmcConfig::default()
        };
        let (params, _) =
            solve_potentials(&tight, tight_tol, &tight_cfg, tight_samp, 150).unwrap();
        let (l1, l2) = params.potentials;
        gate.check(
            l1 > 10.0 && l2 > 10.0,
            format!("{label} tight radii: potentials ({l1}, {l2})"),
        );
        let est = dual_gradient_estimate(
            [l1, l2],
            &tight,
            &HmcConfig { burn_in: 6000, adaptation_steps: 4800, seed: 4006, ..HmcConfig::default() },
            20_000,
        )
        .unwrap();
        for i in 0..2 {
            gate.check(
                est.expected_moments[i] <= 0.01 + 3.0 * est.se[i],
                format!(
                    "{label} tight radii: moment {i} = {} (se {})",
                    est.expected_moments[i], est.se[i]
                ),
            );
        }
        let (plans, _) = hmc_sample(&params, &quick_sampler(4007), 4000).unwrap();
        let mean = expected_plan(&plans).unwrap();
        let (row, col) = mean.marginal_sums();
        let kl_mu = kl_divergence_raw(&row, tight.mu0.weights());
        let kl_nu = kl_divergence_raw(&col, tight.nu0.weights());
        gate.check(
            kl_mu < 0.05 && kl_nu < 0.05,
            format!("{label} tight radii: expected-plan marginal KL ({kl_mu}, {kl_nu})"),
        );
    }
    gate.finish();
}

#[test]
fn solved_potentials_match_quadrature_grid_search() {
    let mut gate = Gate::new("potentials vs dense quadrature grid search (2x2)", 900);
    let theta = [0.05, 0.05];
    let c = small_constraints(theta[0], theta[1]);
    let table = QuadTable::build(&c, 32);
    let oracle = table.grid_optimum(theta, 50.0);
    let cfg = HmcConfig {
        burn_in: 3000,
        adaptation_steps: 2400,
        seed: 5005,
        ..HmcConfig::default()
    };
    let (params, report) = solve_potentials(&c, 5e-4, &cfg, 40_000, 60).unwrap();
    gate.check(report.converged, "dual solve did not converge".into());
    let solved = [params.potentials.0, params.potentials.1];
    for i in 0..2 {
        let tol = if oracle[i] < 1.0 {
            0.05
        } else {
            0.05 * oracle[i]
        };
        gate.check(
            (solved[i] - oracle[i]).abs() <= tol,
            format!(
                "component {i}: solved {} vs grid optimum {} (tol {tol})",
                solved[i], oracle[i]
            ),
        );
    }
    gate.finish();
}

#[test]
fn quadrature_marginal_is_order_stable() {
    let mut gate = Gate::new("quadrature marginal order 64 vs 128", 60);
    let params = HyperpriorParams::new(small_constraints(0.5, 0.5), (1.0, 1.0)).unwrap();
    let mut grid = Vec::new();
    let k = 30;
    for a in 0..k {
        for b in 0..k {
            let p11 = (a as f64 + 0.5) / k as f64;
            let p12 = (b as f64 + 0.5) / k as f64;
            if p11 + p12 < 1.0 {
                grid.push((p11, p12));
            }
        }
    }
    let lo = marginal_density_grid_2x2(&params, &grid, &QuadratureSpec::new(64).unwrap()).unwrap();
    let hi = marginal_density_grid_2x2(&params, &grid, &QuadratureSpec::new(128).unwrap()).unwrap();
    let max_diff = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    gate.check(
        max_diff < 1e-8,
        format!("max pointwise difference {max_diff:e}"),
    );
    gate.finish();
}

struct FlatTarget;

impl PlanTarget for FlatTarget {
    fn rows(&self) -> usize {
        2
    }
    fn cols(&self) -> usize {
        2
    }
    fn log_density(&self, _plan: &TransportPlan) -> Result<f64> {
        Ok(0.0)
    }
    fn grad_coords(&self, _plan: &TransportPlan) -> Result<Vec<f64>> {
        Ok(vec![0.0; 4])
    }
}

#[test]
fn hmc_is_calibrated() {
    let mut gate = Gate::new("HMC calibration (uniform target, histogram, acceptance)", 300);
    let cfg = HmcConfig {
        burn_in: 2000,
        adaptation_steps: 1600,
        seed: 7007,
        ..HmcConfig::default()
    };
    let (plans, diag) = hmc_sample(&FlatTarget, &cfg, 20_000).unwrap();
    for k in 0..4 {
        let series: Vec<f64> = plans.iter().map(|p| p.entries()[k]).collect();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (series.len() - 1) as f64;
        let se = (var / effective_sample_size(&series)).sqrt();
        gate.check(
            (mean - 0.25).abs() <= 3.0 * se,
            format!("uniform target coordinate {k}: mean {mean} (se {se})"),
        );
    }
    gate.check(
        diag.acceptance_rate >= 0.45 && diag.acceptance_rate <= 0.75,
        format!("uniform target acceptance {}", diag.acceptance_rate),
    );

    let params = HyperpriorParams::new(small_constraints(0.5, 0.5), (1.0, 1.0)).unwrap();
    let cfg = HmcConfig {
        burn_in: 2000,
        adaptation_steps: 1600,
        seed: 7008,
        ..HmcConfig::default()
    };
    let (plans, diag) = hmc_sample(&params, &cfg, 20_000).unwrap();
    gate.check(
        diag.acceptance_rate >= 0.45 && diag.acceptance_rate <= 0.75,
        format!("hyperprior acceptance {}", diag.acceptance_rate),
    );
    // Decile bin probabilities of pi_11, each bin integrated by its own
    // nested quadrature rule (a global rule cannot integrate indicators).
    let order = 24;
    let mut bins = [0.0_f64; 10];
    for (bin, mass) in bins.iter_mut().enumerate() {
        let (n1, w1) = gauss_legendre_on(order, bin as f64 / 10.0, (bin + 1) as f64 / 10.0);
        for (&p11, &wa) in n1.iter().zip(&w1) {
            let (n2, w2) = gauss_legendre_on(order, 0.0, 1.0 - p11);
            for (&p12, &wb) in n2.iter().zip(&w2) {
                let (n3, w3) = gauss_legendre_on(order, 0.0, 1.0 - p11 - p12);
                for (&p21, &wc) in n3.iter().zip(&w3) {
                    *mass += wa
                        * wb
                        * wc
                        * log_density_coords_2x2(p11, p12, p21, &params)
                            .unwrap()
                            .exp();
                }
            }
        }
    }
    let total: f64 = bins.iter().sum();
    for b in &mut bins {
        *b /= total;
    }
    let series: Vec<f64> = plans.iter().map(|p| p.get(0, 0)).collect();
    let ess = effective_sample_size(&series);
    for (b, &p_bin) in bins.iter().enumerate() {
        let lo = b as f64 / 10.0;
        let hi = lo + 0.1;
        let freq =
            series.iter().filter(|&&x| x >= lo && x < hi).count() as f64 / series.len() as f64;
        let se = (p_bin * (1.0 - p_bin) / ess).sqrt();
        gate.check(
            (freq - p_bin).abs() <= 3.0 * se,
            format!("histogram bin {b}: sampled {freq} vs quadrature {p_bin} (se {se})"),
        );
    }
    gate.finish();
}

fn uniform_ideal(m: usize, n: usize) -> IdealDesign {
    let cost = CostMatrix::new(vec![0.0; m * n], m, n).unwrap();
    gibbs_kernel(&cost, 1.0, None).unwrap()
}

#[test]
fn frequency_maps_reach_the_fair_regime() {
    let mut gate = Gate::new("frequency maps near one half (20x20, 100 plans)", 900);
    let (m, n) = (20, 20);
    // Weak potentials with a sharply annealed uniform ideal: the hyperprior
    // sits in its Gaussian regime around the uniform plan, where each
    // contract exceeds the average mass about half the time.
    let constraints = KnowledgeConstraints::new(
        DiscreteDistribution::uniform(m),
        DiscreteDistribution::uniform(n),
        1.0,
        1.0,
        (0.0, 0.0),
        uniform_ideal(m, n),
        Some(20_000.0),
    )
    .unwrap();
    let params = HyperpriorParams::new(constraints, (0.05, 0.05)).unwrap();
    let cfg = HmcConfig {
        burn_in: 2000,
        adaptation_steps: 1600,
        chains: 4,
        seed: 8008,
        ..HmcConfig::default()
    };
    let (plans, _) = hmc_sample(&params, &cfg, 100).unwrap();
    let plans = &plans[..100];
    let map = frequency_map(plans, average_mass_threshold(m, n)).unwrap();
    let mean = map.mean();
    gate.check(
        (0.45..=0.55).contains(&mean),
        format!("mean frequency {mean}"),
    );
    let nf = plans.len() as f64;
    let within = map
        .probabilities
        .iter()
        .filter(|&&p| {
            let se = (p * (1.0 - p) / nf).sqrt();
            se > 0.0 && (p - 0.5).abs() / se < 4.0
        })
        .count();
    let frac = within as f64 / map.probabilities.len() as f64;
    gate.check(
        frac >= 0.95,
        format!("only {frac:.3} of entries within 4 normalized deviations of 1/2"),
    );
    gate.finish();
}

fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    fn average_ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn diversity_decreases_with_potentials() {
    let mut gate = Gate::new("diversity index decreasing in potentials", 1200);
    let mut lam_col = Vec::new();
    let mut div_col = Vec::new();
    for (li, &lam) in [0.05, 1.0, 10.0, 100.0].iter().enumerate() {
        for run in 0..20u64 {
            let params =
                HyperpriorParams::new(small_constraints(0.5, 0.5), (lam, lam)).unwrap();
            let cfg = HmcConfig {
                burn_in: 1200,
                adaptation_steps: 1000,
                seed: 9000 + 100 * li as u64 + run,
                ..HmcConfig::default()
            };
            let (plans, _) = hmc_sample(&params, &cfg, 400).unwrap();
            let (mean, _) = diversity_index(&plans).unwrap();
            gate.check(
                (1.0..=4.0).contains(&mean),
                format!("lambda {lam} run {run}: diversity {mean} outside [1, mn]"),
            );
            lam_col.push(lam);
            div_col.push(mean);
        }
    }
    let rho = spearman_rho(&lam_col, &div_col);
    let nf = lam_col.len() as f64;
    let t = rho * ((nf - 2.0) / (1.0 - rho * rho)).sqrt();
    // One-sided p < 0.01 at 78 degrees of freedom needs t below -2.38.
    gate.check(
        rho < 0.0 && t < -2.38,
        format!("Spearman rho {rho} (t {t}) is not significantly negative"),
    );
    gate.finish();
}

#[test]
fn repair_schemes_compare_as_expected() {
    let mut gate = Gate::new("repair schemes (ICD and distortion, 50 pairs)", 1200);
    let d = 5;
    let support: Vec<f64> = (0..d).map(|i| i as f64 / (d - 1) as f64).collect();
    let epsilon = 0.05;
    let cost = CostMatrix::squared_from_supports(&support, &support).unwrap();
    let ideal = gibbs_kernel(&cost, epsilon, None).unwrap();
    let mu0 = DiscreteDistribution::uniform(d);
    let nu0 = DiscreteDistribution::uniform(d);
    let eta = 0.1;
    // Tight potentials pin the sampled marginals; the annealed ideal pins
    // the conditional shape, so draws concentrate near the nominal plan.
    let constraints = KnowledgeConstraints::new(
        mu0.clone(),
        nu0.clone(),
        eta,
        eta,
        (0.0, 0.0),
        ideal,
        Some(8.0),
    )
    .unwrap();
    let params = HyperpriorParams::new(constraints, (1000.0, 1000.0)).unwrap();
    let pairs: Vec<_> = (0..50u64)
        .map(|t| sample_empirical_marginals(&mu0, &nu0, eta, eta, 10_000 + t).unwrap())
        .collect();
    let config = RepairConfig {
        x_support: support.clone(),
        y_support: support,
        epsilon,
        sampler: HmcConfig {
            burn_in: 2000,
            adaptation_steps: 1600,
            seed: 10_101,
            ..HmcConfig::default()
        },
        w0: 0.5,
        w1: 0.5,
    };
    let schemes = [
        RepairScheme::DeterministicEot,
        RepairScheme::RandomizedHfpd,
        RepairScheme::NominalOt,
    ];
    let comparisons = compare_repair_schemes(&pairs, &schemes, &params, &config).unwrap();
    let mut stats = std::collections::HashMap::new();
    for comp in &comparisons {
        for (t, r) in comp.results.iter().enumerate() {
            gate.check(
                r.icd >= -1e-12 && r.distortion >= -1e-12,
                format!("{:?} pair {t}: icd {} distortion {}", comp.scheme, r.icd, r.distortion),
            );
        }
        let (icd_mean, icd_var) = comp.icd_mean_var();
        let dist_mean =
            comp.results.iter().map(|r| r.distortion).sum::<f64>() / comp.results.len() as f64;
        stats.insert(format!("{:?}", comp.scheme), (icd_mean, icd_var, dist_mean));
    }
    let det = stats["DeterministicEot"];
    let nom = stats["NominalOt"];
    let rand = stats["RandomizedHfpd"];
    gate.check(
        nom.1 < det.1,
        format!("ICD variance: nominal {} vs deterministic {}", nom.1, det.1),
    );
    gate.check(
        (rand.2 - det.2).abs() <= 0.25 * det.2,
        format!("distortion mean: randomized {} vs deterministic {}", rand.2, det.2),
    );
    // Reported for context; the randomized-vs-deterministic ICD variance
    // ordering is a metric, not a gate.
    println!(
        "repair ICD variance: randomized {} vs deterministic {}",
        rand.1, det.1
    );
    gate.finish();
}

#[test]
fn cli_reruns_are_byte_identical() {
    let mut gate = Gate::new("CLI determinism (byte-identical reruns)", 300);
    let bin = env!("CARGO_BIN_EXE_hfpd-ot");
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let config_path = tmp.path().join("config.json");
    let config = serde_json::json!({
        "problem": {
            "m": 2, "n": 2,
            "cost": {"kind": "euclidean-squared-grid"},
            "epsilon": 1.0,
            "mu0": {"kind": "weights", "values": [0.2, 0.8]},
            "nu0": {"kind": "weights", "values": [0.9, 0.1]},
            "eta": 10.0, "zeta": 10.0,
            "lambda_ideal": [0.0, 0.0],
            "potentials": [1.0, 1.0]
        },
        "sampler": {
            "step_size": 0.3, "leapfrog_steps": 6,
            "burn_in": 400, "adaptation_steps": 320,
            "target_accept": 0.6, "chains": 2
        },
        "solver": {"tol": 0.05, "n_samp": 300, "max_outer": 15},
        "output": {"directory": out_dir.display().to_string()},
        "seed": 13
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["sinkhorn"],
        vec!["sample"],
        vec!["sample", "--format", "json"],
        vec!["potentials"],
        vec!["fairness", "--experiment", "frequency"],
        vec!["fairness", "--experiment", "diversity"],
        vec!["fairness", "--experiment", "markov"],
        vec!["repair", "--pairs", "3"],
        vec!["grid2x2", "--grid-points", "11", "--quad-order", "16"],
    ];
    let run_all = |gate: &mut Gate| -> std::collections::BTreeMap<String, Vec<u8>> {
        for args in &commands {
            let status = std::process::Command::new(bin)
                .arg("--config")
                .arg(&config_path)
                .args(args)
                .stdout(std::process::Stdio::null())
                .status()
                .unwrap();
            gate.check(status.success(), format!("{args:?} exited with {status}"));
        }
        std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect()
    };
    let first = run_all(&mut gate);
    gate.check(!first.is_empty(), "no outputs produced".into());
    let second = run_all(&mut gate);
    gate.check(
        first.keys().eq(second.keys()),
        "rerun produced a different file set".into(),
    );
    for (name, bytes) in &first {
        gate.check(
            second.get(name) == Some(bytes),
            format!("{name} differs between reruns"),
        );
    }
    gate.finish();
}

