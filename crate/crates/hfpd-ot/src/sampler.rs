//! Hamiltonian Monte Carlo over transport plans, run in the unconstrained
//! log-ratio chart. Dual-averaging step-size adaptation, divergence
//! accounting, and per-coordinate effective-sample-size diagnostics.

use crate::core::{SimplexChart, TransportPlan};
use crate::error::{HfpdError, Result};
use crate::hyperprior::{self, HyperpriorParams};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Maximum |energy error| before a trajectory counts as divergent.
pub const DIVERGENCE_ENERGY: f64 = 1000.0;
/// Fraction of divergent proposals above which the sampler is unhealthy.
pub const DIVERGENCE_BUDGET: f64 = 0.10;

/// An unnormalized log-density over transport plans, with its coordinate
/// gradient (entrywise, before chart correction). Must be callable from
/// multiple chains concurrently.
pub trait PlanTarget: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn log_density(&self, plan: &TransportPlan) -> Result<f64>;
    fn grad_coords(&self, plan: &TransportPlan) -> Result<Vec<f64>>;
}

impl PlanTarget for HyperpriorParams {
    fn rows(&self) -> usize {
        self.constraints.rows()
    }

    fn cols(&self) -> usize {
        self.constraints.cols()
    }

    fn log_density(&self, plan: &TransportPlan) -> Result<f64> {
        hyperprior::log_density(plan, self)
    }

    fn grad_coords(&self, plan: &TransportPlan) -> Result<Vec<f64>> {
        hyperprior::grad_log_density(plan, self)
    }
}

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub adaptation_steps: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub chains: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.3,
            leapfrog_steps: 6,
            burn_in: 8000,
            adaptation_steps: 6400,
            target_accept: 0.6,
            seed: 0,
            chains: 1,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(HfpdError::Parameter("step_size must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(HfpdError::Parameter("leapfrog_steps must be >= 1".into()));
        }
        if self.adaptation_steps > self.burn_in {
            return Err(HfpdError::Parameter(
                "adaptation_steps must not exceed burn_in".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(HfpdError::Parameter(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        if self.chains == 0 {
            return Err(HfpdError::Parameter("chains must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HmcDiagnostics {
    /// Post-adaptation acceptance rate, pooled over chains.
    pub acceptance_rate: f64,
    /// Mean adapted step size across chains.
    pub adapted_step_size: f64,
    /// Effective sample size per plan entry, summed over chains.
    pub ess: Vec<f64>,
    /// Divergent proposals (non-finite or runaway energy), all phases.
    pub divergences: usize,
    /// Total proposals, all phases.
    pub proposals: usize,
}

impl HmcDiagnostics {
    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Symplectic leapfrog for Hamiltonian dynamics with unit mass matrix.
/// `grad_potential` is the gradient of the potential U (negative target
/// log-density). The flag reports a non-finite gradient or state.
pub fn leapfrog<G: Fn(&[f64]) -> Vec<f64>>(
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
    grad_potential: G,
) -> (Vec<f64>, Vec<f64>, bool) {
    let mut q = position.to_vec();
    let mut p = momentum.to_vec();
    if steps == 0 {
        return (q, p, false);
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    let mut g = grad_potential(&q);
    if !finite(&g) {
        return (q, p, true);
    }
    for (pi, gi) in p.iter_mut().zip(&g) {
        *pi -= 0.5 * step_size * gi;
    }
    for step in 0..steps {
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        g = grad_potential(&q);
        if !finite(&g) || !finite(&q) {
            return (q, p, true);
        }
        let half = if step + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= half * step_size * gi;
        }
    }
    (q, p, false)
}

struct ChainOutput {
    samples: Vec<Vec<f64>>, // chart coordinates
    accepts: usize,
    kept: usize,
    adapted_step: f64,
    divergences: usize,
    proposals: usize,
}

fn run_chain<T: PlanTarget>(
    target: &T,
    chart: &SimplexChart,
    config: &HmcConfig,
    chain_index: u64,
    n_samples: usize,
) -> Result<ChainOutput> {
    let (m, n) = (target.rows(), target.cols());
    let dim = m * n - 1;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_index);

    // Log-density and chart-corrected gradient in unconstrained coordinates.
    let log_post = |z: &[f64]| -> f64 {
        let Ok(w) = chart.inverse_weights(z) else {
            return f64::NEG_INFINITY;
        };
        let Ok(plan) = TransportPlan::new(w, m, n) else {
            return f64::NEG_INFINITY;
        };
        match (target.log_density(&plan), chart.log_jacobian(z)) {
            (Ok(f), Ok(j)) => f + j,
            _ => f64::NEG_INFINITY,
        }
    };
    let grad_potential = |z: &[f64]| -> Vec<f64> {
        let bad = vec![f64::NAN; dim];
        let Ok(w) = chart.inverse_weights(z) else {
            return bad;
        };
        let Ok(plan) = TransportPlan::new(w, m, n) else {
            return bad;
        };
        let Ok(g) = target.grad_coords(&plan) else {
            return bad;
        };
        match chart.pullback_gradient(z, &g) {
            Ok(pg) => pg.iter().map(|x| -x).collect(),
            Err(_) => bad,
        }
    };

    let mut z = vec![0.0_f64; dim]; // uniform plan
    let mut log_p = log_post(&z);
    let mut eps = config.step_size;

    // Dual averaging state.
    let mu = (10.0 * config.step_size).ln();
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);
    let mut h_bar = 0.0;
    let mut log_eps_bar = eps.ln();

    let total = config.burn_in + n_samples;
    let mut samples = Vec::with_capacity(n_samples);
    let mut accepts = 0usize;
    let mut kept = 0usize;
    let mut divergences = 0usize;

    for iter in 0..total {
        let p0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let (z1, p1, bad_grad) = leapfrog(&z, &p0, eps, config.leapfrog_steps, grad_potential);
        let h0 = -log_p + 0.5 * p0.iter().map(|x| x * x).sum::<f64>();
        let log_p1 = log_post(&z1);
        let h1 = -log_p1 + 0.5 * p1.iter().map(|x| x * x).sum::<f64>();
        let delta = h1 - h0;
        let diverged = bad_grad || !delta.is_finite() || delta.abs() > DIVERGENCE_ENERGY;
        let alpha = if diverged { 0.0 } else { (-delta).exp().min(1.0) };
        if !diverged && rng.gen::<f64>() < alpha {
            z = z1;
            log_p = log_p1;
            if iter >= config.burn_in {
                accepts += 1;
            }
        }
        if diverged {
            divergences += 1;
        }
        if iter >= config.burn_in {
            kept += 1;
            samples.push(z.clone());
        }
        if iter < config.adaptation_steps {
            let t = (iter + 1) as f64;
            h_bar = (1.0 - 1.0 / (t + t0)) * h_bar
                + (config.target_accept - alpha) / (t + t0);
            let log_eps = mu - t.sqrt() / gamma * h_bar;
            let w = t.powf(-kappa);
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
            eps = log_eps.exp();
        } else if iter == config.adaptation_steps && config.adaptation_steps > 0 {
            eps = log_eps_bar.exp();
        }
    }
    Ok(ChainOutput {
        samples,
        accepts,
        kept,
        adapted_step: eps,
        divergences,
        proposals: total,
    })
}

/// Effective sample size of one scalar series by the initial positive
/// sequence estimator on autocorrelation pairs.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let auto = |lag: usize| -> f64 {
        series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n.min(2000) {
        let pair = auto(lag) + auto(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    (n as f64 / (1.0 + 2.0 * sum)).min(n as f64)
}

/// Draws `n_samples` plans (pooled over chains) from the chart-transformed
/// target. Deterministic for a fixed config.
pub fn hmc_sample<T: PlanTarget>(
    target: &T,
    config: &HmcConfig,
    n_samples: usize,
) -> Result<(Vec<TransportPlan>, HmcDiagnostics)> {
    config.validate()?;
    if n_samples == 0 {
        return Err(HfpdError::Parameter("n_samples must be >= 1".into()));
    }
    let (m, n) = (target.rows(), target.cols());
    let chart = SimplexChart::new(m * n)?;
    let per_chain = n_samples.div_ceil(config.chains);

    let outputs: Vec<Result<ChainOutput>> = (0..config.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(target, &chart, config, c, per_chain))
        .collect();
    let mut chains = Vec::with_capacity(config.chains);
    for o in outputs {
        chains.push(o?);
    }

    let divergences: usize = chains.iter().map(|c| c.divergences).sum();
    let proposals: usize = chains.iter().map(|c| c.proposals).sum();
    let accepts: usize = chains.iter().map(|c| c.accepts).sum();
    let kept: usize = chains.iter().map(|c| c.kept).sum();
    let acceptance_rate = accepts as f64 / kept as f64;
    let adapted_step_size =
        chains.iter().map(|c| c.adapted_step).sum::<f64>() / chains.len() as f64;

    if (divergences as f64) > DIVERGENCE_BUDGET * proposals as f64 {
        return Err(HfpdError::SamplerHealth(format!(
            "{divergences} divergent proposals out of {proposals} \
             (acceptance {acceptance_rate:.3}, step {adapted_step_size:.3e})"
        )));
    }

    // Map back to plans and compute per-entry ESS, summed across chains.
    let mut plans = Vec::with_capacity(n_samples);
    let mut per_chain_entries: Vec<Vec<Vec<f64>>> = Vec::new();
    for chain in &chains {
        let mut entries: Vec<Vec<f64>> = vec![Vec::with_capacity(chain.samples.len()); m * n];
        for z in &chain.samples {
            let w = chart.inverse_weights(z)?;
            for (t, &e) in w.iter().enumerate() {
                entries[t].push(e);
            }
            if plans.len() < n_samples {
                plans.push(TransportPlan::new(w, m, n)?);
            }
        }
        per_chain_entries.push(entries);
    }
    let ess: Vec<f64> = (0..m * n)
        .map(|t| {
            per_chain_entries
                .iter()
                .map(|e| effective_sample_size(&e[t]))
                .sum()
        })
        .collect();

    Ok((
        plans,
        HmcDiagnostics {
            acceptance_rate,
            adapted_step_size,
            ess,
            divergences,
            proposals,
        },
    ))
}
