//! Fairness and data-repair applications: contract frequency maps, the
//! Markov cost bound, the diversity (perplexity) index, fixed-support
//! Wasserstein-barycentre repair, and scheme comparisons over sequences of
//! empirical marginals.

use crate::core::{
    kahan_sum, kl_divergence, plan_entropy, CostMatrix, DiscreteDistribution, TransportPlan,
};
use crate::eot::{gibbs_kernel, sinkhorn, wasserstein2_1d, SINKHORN_MAX_ITER, SINKHORN_TOL};
use crate::error::{HfpdError, Result};
use crate::hyperprior::HyperpriorParams;
use crate::sampler::{hmc_sample, HmcConfig};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::Gamma;

/// Per-entry activation frequencies over a plan sample.
#[derive(Debug, Clone)]
pub struct FrequencyMap {
    pub probabilities: Vec<f64>, // row-major
    pub rows: usize,
    pub cols: usize,
    pub sample_count: usize,
    pub threshold: f64,
}

impl FrequencyMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probabilities[i * self.cols + j]
    }

    pub fn mean(&self) -> f64 {
        kahan_sum(self.probabilities.iter().copied()) / self.probabilities.len() as f64
    }
}

/// The activity threshold the equal-treatment criterion is stated at: the
/// average mass per cell.
pub fn average_mass_threshold(m: usize, n: usize) -> f64 {
    1.0 / (m * n) as f64
}

/// Fraction of samples carrying more than `threshold` mass on each cell.
pub fn frequency_map(samples: &[TransportPlan], threshold: f64) -> Result<FrequencyMap> {
    let Some(first) = samples.first() else {
        return Err(HfpdError::Parameter("empty sample set".into()));
    };
    let (m, n) = (first.rows(), first.cols());
    let mut counts = vec![0usize; m * n];
    for s in samples {
        if s.rows() != m || s.cols() != n {
            return Err(HfpdError::Dimension("samples of mixed dimensions".into()));
        }
        for (c, &e) in counts.iter_mut().zip(s.entries()) {
            if e > threshold {
                *c += 1;
            }
        }
    }
    Ok(FrequencyMap {
        probabilities: counts
            .iter()
            .map(|&c| c as f64 / samples.len() as f64)
            .collect(),
        rows: m,
        cols: n,
        sample_count: samples.len(),
        threshold,
    })
}

/// Index pairs whose mass exceeds the activity threshold.
pub fn eligible_contracts(plan: &TransportPlan, activity_threshold: f64) -> Vec<(usize, usize)> {
    let n = plan.cols();
    plan.entries()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > activity_threshold)
        .map(|(t, _)| (t / n, t % n))
        .collect()
}

/// Markov bound on the probability that the conditional transport cost of
/// target `y_index` stays below `w2sq`, plus the empirical frequency.
pub fn markov_bound(
    samples: &[TransportPlan],
    y_index: usize,
    cost: &CostMatrix,
    w2sq: f64,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(HfpdError::Parameter("empty sample set".into()));
    }
    if !(w2sq > 0.0) {
        return Err(HfpdError::Parameter("w2sq must be positive".into()));
    }
    let mut costs = Vec::with_capacity(samples.len());
    for s in samples {
        if y_index >= s.cols() || s.rows() != cost.rows() || s.cols() != cost.cols() {
            return Err(HfpdError::Dimension(
                "sample, cost and column index disagree".into(),
            ));
        }
        let col_mass: f64 = (0..s.rows()).map(|i| s.get(i, y_index)).sum();
        if col_mass <= 0.0 {
            return Err(HfpdError::Degeneracy(format!(
                "column {y_index} carries no mass; conditional cost undefined"
            )));
        }
        let c: f64 = (0..s.rows())
            .map(|i| s.get(i, y_index) / col_mass * cost.get(i, y_index))
            .sum();
        costs.push(c);
    }
    let mean = kahan_sum(costs.iter().copied()) / costs.len() as f64;
    let bound = 1.0 - mean / w2sq;
    let empirical = costs.iter().filter(|&&c| c <= w2sq).count() as f64 / costs.len() as f64;
    Ok((bound, empirical))
}

/// Mean perplexity E[exp(H(pi))] with its standard error. Always falls in
/// [1, mn].
pub fn diversity_index(samples: &[TransportPlan]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(HfpdError::Parameter("empty sample set".into()));
    }
    let vals: Vec<f64> = samples.iter().map(|s| plan_entropy(s).exp()).collect();
    let n = vals.len() as f64;
    let mean = kahan_sum(vals.iter().copied()) / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RepairScheme {
    DeterministicEot,
    RandomizedHfpd,
    NominalOt,
}

#[derive(Debug, Clone)]
pub struct RepairResult {
    pub repaired_x: Vec<f64>,
    pub repaired_y: Vec<f64>,
    /// Inter-cluster Euclidean distance: sum of squared gaps between the
    /// repaired supports.
    pub icd: f64,
    /// Squared 2-Wasserstein distance between the original and repaired
    /// source support, both uniformly weighted.
    pub distortion: f64,
}

/// Fixed-support Wasserstein-barycentre repair of a 1D feature pair using
/// the given coupling.
pub fn repair_pair(
    x_support: &[f64],
    y_support: &[f64],
    plan: &TransportPlan,
    w0: f64,
    w1: f64,
) -> Result<RepairResult> {
    let d = x_support.len();
    if y_support.len() != d || plan.rows() != d || plan.cols() != d {
        return Err(HfpdError::Dimension(
            "repair assumes a common support size d on both sides".into(),
        ));
    }
    if !(w0 >= 0.0 && w1 >= 0.0) || (w0 + w1 - 1.0).abs() > 1e-12 {
        return Err(HfpdError::Parameter(
            "barycentre weights must be nonnegative and sum to 1".into(),
        ));
    }
    let df = d as f64;
    let repaired_x: Vec<f64> = (0..d)
        .map(|i| {
            let proj: f64 = (0..d).map(|j| plan.get(i, j) * y_support[j]).sum();
            w0 * x_support[i] + df * w1 * proj
        })
        .collect();
    let repaired_y: Vec<f64> = (0..d)
        .map(|j| {
            let proj: f64 = (0..d).map(|i| plan.get(i, j) * x_support[i]).sum();
            w1 * y_support[j] + df * w0 * proj
        })
        .collect();
    let icd = kahan_sum(
        repaired_x
            .iter()
            .zip(&repaired_y)
            .map(|(a, b)| (a - b) * (a - b)),
    );
    let uniform = DiscreteDistribution::uniform(d);
    let distortion = wasserstein2_1d(&uniform, &uniform, x_support, &repaired_x)?;
    Ok(RepairResult {
        repaired_x,
        repaired_y,
        icd,
        distortion,
    })
}

/// Draws one empirical marginal pair: Dirichlet proposals with uniformly
/// drawn concentration vectors, accepted when each marginal lies inside its
/// KL ball around the nominal.
pub fn sample_empirical_marginals(
    mu0: &DiscreteDistribution,
    nu0: &DiscreteDistribution,
    eta: f64,
    zeta: f64,
    seed: u64,
) -> Result<(DiscreteDistribution, DiscreteDistribution)> {
    if !(eta >= 0.0) || !(zeta >= 0.0) {
        return Err(HfpdError::Parameter("radii must be nonnegative".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mu = rejection_dirichlet(mu0, eta, &mut rng)?;
    let nu = rejection_dirichlet(nu0, zeta, &mut rng)?;
    Ok((mu, nu))
}

const MAX_PROPOSALS: usize = 1_000_000;

fn rejection_dirichlet(
    nominal: &DiscreteDistribution,
    radius: f64,
    rng: &mut ChaCha12Rng,
) -> Result<DiscreteDistribution> {
    let d = nominal.len();
    for _ in 0..MAX_PROPOSALS {
        let mut draw = Vec::with_capacity(d);
        for _ in 0..d {
            let conc: f64 = rng.gen_range(1e-6..d as f64);
            let g = Gamma::new(conc, 1.0)
                .map_err(|e| HfpdError::Parameter(format!("gamma shape: {e}")))?;
            draw.push(rng.sample(g).max(0.0));
        }
        let Ok(candidate) = DiscreteDistribution::from_unnormalized(&draw) else {
            continue;
        };
        match kl_divergence(&candidate, nominal) {
            Ok(kl) if kl <= radius => return Ok(candidate),
            _ => continue,
        }
    }
    Err(HfpdError::Domain(format!(
        "no Dirichlet draw entered the KL ball of radius {radius} \
         within {MAX_PROPOSALS} proposals"
    )))
}

/// Algorithm for distributional fairness proxies: S hyperprior draws, each
/// repairing the same support pair; the ICD values form the proxy
/// distribution.
pub fn run_distributional_fairness(
    params: &HyperpriorParams,
    x_support: &[f64],
    y_support: &[f64],
    scheme_count: usize,
    sampler_config: &HmcConfig,
) -> Result<Vec<RepairResult>> {
    if scheme_count == 0 {
        return Err(HfpdError::Parameter("scheme_count must be >= 1".into()));
    }
    let (plans, _) = hmc_sample(params, sampler_config, scheme_count)?;
    plans
        .iter()
        .map(|p| repair_pair(x_support, y_support, p, 0.5, 0.5))
        .collect()
}

/// Shared settings for the scheme comparison.
#[derive(Debug, Clone)]
pub struct RepairConfig {
    pub x_support: Vec<f64>,
    pub y_support: Vec<f64>,
    pub epsilon: f64,
    pub sampler: HmcConfig,
    pub w0: f64,
    pub w1: f64,
}

#[derive(Debug, Clone)]
pub struct SchemeComparison {
    pub scheme: RepairScheme,
    pub results: Vec<RepairResult>,
}

impl SchemeComparison {
    pub fn icd_mean_var(&self) -> (f64, f64) {
        let n = self.results.len() as f64;
        let mean = self.results.iter().map(|r| r.icd).sum::<f64>() / n;
        let var = if self.results.len() > 1 {
            self.results
                .iter()
                .map(|r| (r.icd - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        (mean, var)
    }
}

/// Repairs every observed marginal pair under each requested scheme:
/// per-pair Sinkhorn plans, fresh hyperprior draws, or the one nominal plan.
pub fn compare_repair_schemes(
    marginal_sequence: &[(DiscreteDistribution, DiscreteDistribution)],
    schemes: &[RepairScheme],
    params: &HyperpriorParams,
    config: &RepairConfig,
) -> Result<Vec<SchemeComparison>> {
    if marginal_sequence.is_empty() {
        return Err(HfpdError::Parameter("empty marginal sequence".into()));
    }
    let cost = CostMatrix::squared_from_supports(&config.x_support, &config.y_support)?;
    let kernel = gibbs_kernel(&cost, config.epsilon, None)?;
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let results: Vec<RepairResult> = match scheme {
            RepairScheme::DeterministicEot => marginal_sequence
                .iter()
                .map(|(mu, nu)| {
                    let sol = sinkhorn(mu, nu, &kernel, SINKHORN_TOL, SINKHORN_MAX_ITER)?;
                    repair_pair(
                        &config.x_support,
                        &config.y_support,
                        &sol.plan,
                        config.w0,
                        config.w1,
                    )
                })
                .collect::<Result<_>>()?,
            RepairScheme::NominalOt => {
                let sol = sinkhorn(
                    &params.constraints.mu0,
                    &params.constraints.nu0,
                    &kernel,
                    SINKHORN_TOL,
                    SINKHORN_MAX_ITER,
                )?;
                marginal_sequence
                    .iter()
                    .map(|_| {
                        repair_pair(
                            &config.x_support,
                            &config.y_support,
                            &sol.plan,
                            config.w0,
                            config.w1,
                        )
                    })
                    .collect::<Result<_>>()?
            }
            RepairScheme::RandomizedHfpd => {
                let (plans, _) =
                    hmc_sample(params, &config.sampler, marginal_sequence.len())?;
                plans
                    .iter()
                    .map(|p| {
                        repair_pair(
                            &config.x_support,
                            &config.y_support,
                            p,
                            config.w0,
                            config.w1,
                        )
                    })
                    .collect::<Result<_>>()?
            }
        };
        out.push(SchemeComparison { scheme, results });
    }
    Ok(out)
}
