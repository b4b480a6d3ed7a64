//! The parametric hyperprior over transport plans: unnormalized log-density
//! and coordinate gradient, the moment vector of marginal divergences, desk
//! scale quadrature marginals for 2x2 problems, and expected-plan estimation.

use crate::core::{
    kahan_sum, kl_divergence, kl_divergence_raw, marginals, DiscreteDistribution, TransportPlan,
    PROB_FLOOR,
};
use crate::eot::IdealDesign;
use crate::error::{HfpdError, Result};

/// Marginal knowledge: nominal marginals with KL uncertainty radii, the
/// hierarchical ideal weights, and the base ideal design.
#[derive(Debug, Clone)]
pub struct KnowledgeConstraints {
    pub mu0: DiscreteDistribution,
    pub nu0: DiscreteDistribution,
    /// KL radius around mu0, in nats.
    pub eta: f64,
    /// KL radius around nu0, in nats.
    pub zeta: f64,
    /// Weights of the conjugate hierarchical ideal on each marginal term.
    pub lambda_ideal: (f64, f64),
    pub ideal: IdealDesign,
    /// When set, replaces the conjugate hierarchical ideal with the annealed
    /// Gibbs form exp(-alpha * KL(pi || pi_I)).
    pub alpha: Option<f64>,
}

impl KnowledgeConstraints {
    pub fn new(
        mu0: DiscreteDistribution,
        nu0: DiscreteDistribution,
        eta: f64,
        zeta: f64,
        lambda_ideal: (f64, f64),
        ideal: IdealDesign,
        alpha: Option<f64>,
    ) -> Result<Self> {
        if mu0.len() != ideal.rows() || nu0.len() != ideal.cols() {
            return Err(HfpdError::Dimension(format!(
                "nominals {} x {} vs ideal {} x {}",
                mu0.len(),
                nu0.len(),
                ideal.rows(),
                ideal.cols()
            )));
        }
        if !(eta >= 0.0) || !(zeta >= 0.0) {
            return Err(HfpdError::Parameter("eta and zeta must be >= 0".into()));
        }
        if !(lambda_ideal.0 >= 0.0) || !(lambda_ideal.1 >= 0.0) {
            return Err(HfpdError::Parameter("lambda_ideal must be >= 0".into()));
        }
        if let Some(a) = alpha {
            if !(a > 0.0) {
                return Err(HfpdError::Parameter("alpha must be positive".into()));
            }
        }
        Ok(Self {
            mu0,
            nu0,
            eta,
            zeta,
            lambda_ideal,
            ideal,
            alpha,
        })
    }

    pub fn rows(&self) -> usize {
        self.ideal.rows()
    }

    pub fn cols(&self) -> usize {
        self.ideal.cols()
    }
}

/// Knowledge constraints together with the Kantorovitch potentials.
#[derive(Debug, Clone)]
pub struct HyperpriorParams {
    pub constraints: KnowledgeConstraints,
    pub potentials: (f64, f64),
}

impl HyperpriorParams {
    pub fn new(constraints: KnowledgeConstraints, potentials: (f64, f64)) -> Result<Self> {
        if !(potentials.0 >= 0.0) || !(potentials.1 >= 0.0) {
            return Err(HfpdError::Parameter(
                "potentials must be componentwise nonnegative".into(),
            ));
        }
        Ok(Self {
            constraints,
            potentials,
        })
    }
}

/// Gauss-Legendre quadrature resolution for the 2x2 marginal studies.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub order: usize,
}

impl QuadratureSpec {
    pub fn new(order: usize) -> Result<Self> {
        if order < 8 {
            return Err(HfpdError::Parameter(format!(
                "quadrature order must be >= 8, got {order}"
            )));
        }
        Ok(Self { order })
    }
}

/// Effective coefficients of the three KL terms in the unnormalized
/// log-density: marginal terms and the plan term.
fn coefficients(c: &KnowledgeConstraints, potentials: (f64, f64)) -> (f64, f64, f64) {
    match c.alpha {
        Some(a) => (potentials.0, potentials.1, a + 1.0),
        None => (
            c.lambda_ideal.0 + potentials.0,
            c.lambda_ideal.1 + potentials.1,
            1.0,
        ),
    }
}

fn check_dims(plan: &TransportPlan, c: &KnowledgeConstraints) -> Result<()> {
    if plan.rows() != c.rows() || plan.cols() != c.cols() {
        return Err(HfpdError::Dimension(format!(
            "plan {} x {} vs constraints {} x {}",
            plan.rows(),
            plan.cols(),
            c.rows(),
            c.cols()
        )));
    }
    Ok(())
}

/// KL(pi || pi_I) with pi_I given in log space.
fn kl_plan_vs_log_ideal(entries: &[f64], log_ideal: &[f64]) -> f64 {
    kahan_sum(entries.iter().zip(log_ideal).map(|(&p, &lq)| {
        if p <= 0.0 {
            0.0
        } else {
            p * (p.max(PROB_FLOOR).ln() - lq)
        }
    }))
}

fn raw_marginals(entries: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; m];
    let mut nu = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            mu[i] += entries[i * n + j];
            nu[j] += entries[i * n + j];
        }
    }
    (mu, nu)
}

/// Unnormalized log-density on raw entries, with the probability floor
/// applied before logs. Callers guarantee entries are nonnegative and sum
/// to 1 up to quadrature round-off.
fn log_density_raw(entries: &[f64], params: &HyperpriorParams) -> f64 {
    let c = &params.constraints;
    let (m, n) = (c.rows(), c.cols());
    let (mu, nu) = raw_marginals(entries, m, n);
    let (a1, a2, ap) = coefficients(c, params.potentials);
    let kl_mu = kl_divergence_raw(&mu, c.mu0.weights());
    let kl_nu = kl_divergence_raw(&nu, c.nu0.weights());
    let kl_plan = kl_plan_vs_log_ideal(entries, c.ideal.log_plan());
    -a1 * kl_mu - a2 * kl_nu - ap * kl_plan
}

/// log of the adapted ideal: the hierarchical ideal times the Gibbs term in
/// the base plan, up to an additive constant. Equals the hyperprior
/// log-density at zero potentials.
pub fn log_density_tilde(plan: &TransportPlan, constraints: &KnowledgeConstraints) -> Result<f64> {
    check_dims(plan, constraints)?;
    if !plan.is_interior() {
        return Err(HfpdError::Domain(
            "log-density requires a strictly interior plan".into(),
        ));
    }
    let params = HyperpriorParams {
        constraints: constraints.clone(),
        potentials: (0.0, 0.0),
    };
    Ok(log_density_raw(plan.entries(), &params))
}

/// Unnormalized log-density of the hyperprior at the given potentials.
pub fn log_density(plan: &TransportPlan, params: &HyperpriorParams) -> Result<f64> {
    check_dims(plan, &params.constraints)?;
    if !plan.is_interior() {
        return Err(HfpdError::Domain(
            "log-density requires a strictly interior plan".into(),
        ));
    }
    Ok(log_density_raw(plan.entries(), params))
}

/// Coordinate gradient of the unnormalized log-density, before any chart
/// correction: entry (k, l) differentiates with respect to pi_kl treating
/// all entries as free coordinates.
pub fn grad_log_density(plan: &TransportPlan, params: &HyperpriorParams) -> Result<Vec<f64>> {
    let c = &params.constraints;
    check_dims(plan, c)?;
    if !plan.is_interior() {
        return Err(HfpdError::Domain(
            "gradient requires a strictly interior plan".into(),
        ));
    }
    let (m, n) = (c.rows(), c.cols());
    let (mu, nu) = raw_marginals(plan.entries(), m, n);
    let (a1, a2, ap) = coefficients(c, params.potentials);
    let mu_term: Vec<f64> = (0..m)
        .map(|i| (mu[i] / c.mu0.weights()[i]).ln() + 1.0)
        .collect();
    let nu_term: Vec<f64> = (0..n)
        .map(|j| (nu[j] / c.nu0.weights()[j]).ln() + 1.0)
        .collect();
    let mut g = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let p = plan.get(i, j);
            let plan_term = p.ln() - c.ideal.log_entry(i, j) + 1.0;
            g[i * n + j] = -a1 * mu_term[i] - a2 * nu_term[j] - ap * plan_term;
        }
    }
    Ok(g)
}

/// The dual moment vector R(pi) = (KL(mu || mu0), KL(nu || nu0)).
pub fn moment_vector(
    plan: &TransportPlan,
    constraints: &KnowledgeConstraints,
) -> Result<(f64, f64)> {
    check_dims(plan, constraints)?;
    let (mu, nu) = marginals(plan);
    Ok((
        kl_divergence(&mu, &constraints.mu0)?,
        kl_divergence(&nu, &constraints.nu0)?,
    ))
}

/// Entrywise mean of a set of plans.
pub fn expected_plan(samples: &[TransportPlan]) -> Result<TransportPlan> {
    let Some(first) = samples.first() else {
        return Err(HfpdError::Parameter("empty sample set".into()));
    };
    let (m, n) = (first.rows(), first.cols());
    let mut acc = vec![0.0_f64; m * n];
    for s in samples {
        if s.rows() != m || s.cols() != n {
            return Err(HfpdError::Dimension("samples of mixed dimensions".into()));
        }
        for (a, e) in acc.iter_mut().zip(s.entries()) {
            *a += e;
        }
    }
    TransportPlan::from_unnormalized(&acc, m, n)
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // P_n(x) and derivative via the three-term recurrence.
            let (mut p0, mut p1) = (1.0_f64, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0_f64, x);
        for j in 2..=n {
            let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre_on(order: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        nodes.iter().map(|t| mid + half * t).collect(),
        weights.iter().map(|w| w * half).collect(),
    )
}

/// Unnormalized log-density of a 2x2 hyperprior at free coordinates
/// (pi11, pi12, pi21), with pi22 the dependent slack.
pub fn log_density_coords_2x2(
    pi11: f64,
    pi12: f64,
    pi21: f64,
    params: &HyperpriorParams,
) -> Result<f64> {
    let c = &params.constraints;
    if c.rows() != 2 || c.cols() != 2 {
        return Err(HfpdError::Capacity(
            "coordinate density is defined for 2 x 2 problems only".into(),
        ));
    }
    let pi22 = 1.0 - pi11 - pi12 - pi21;
    if pi11 < 0.0 || pi12 < 0.0 || pi21 < 0.0 || pi22 < -1e-12 {
        return Err(HfpdError::Domain("coordinates leave the simplex".into()));
    }
    let entries = [pi11, pi12, pi21, pi22.max(0.0)];
    Ok(log_density_raw(&entries, params))
}

/// Unnormalized marginal density of (pi11, pi12) on the given grid points,
/// integrating pi21 out by Gauss-Legendre quadrature. Points outside the
/// simplex get density zero.
pub fn marginal_density_grid_2x2(
    params: &HyperpriorParams,
    grid: &[(f64, f64)],
    quad: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let c = &params.constraints;
    if c.rows() * c.cols() != 4 {
        return Err(HfpdError::Capacity(
            "quadrature marginal is limited to 2 x 2 problems".into(),
        ));
    }
    let (base_nodes, base_weights) = gauss_legendre(quad.order);
    let mut out = Vec::with_capacity(grid.len());
    for &(pi11, pi12) in grid {
        let upper = 1.0 - pi11 - pi12;
        if pi11 < 0.0 || pi12 < 0.0 || upper <= 0.0 {
            out.push(0.0);
            continue;
        }
        let half = 0.5 * upper;
        let mut acc = Vec::with_capacity(quad.order);
        for (t, w) in base_nodes.iter().zip(&base_weights) {
            let pi21 = half + half * t;
            let ld = log_density_coords_2x2(pi11, pi12, pi21, params)?;
            acc.push(w * half * ld.exp());
        }
        out.push(kahan_sum(acc.into_iter()));
    }
    Ok(out)
}

/// A 1D slice of the hyperprior along entry (k, l), with the (m, n) entry
/// absorbing the slack and all other entries frozen.
#[derive(Debug, Clone)]
pub struct ConditionalSlice {
    frozen: Vec<f64>, // row-major, entries (k,l) and (m-1,n-1) ignored
    k: usize,
    l: usize,
    upper: f64,
    params: HyperpriorParams,
}

impl ConditionalSlice {
    /// Length of the open support (0, upper).
    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Unnormalized log-density of the conditional at pi_kl = t.
    pub fn log_density(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || t >= self.upper {
            return Err(HfpdError::Domain(format!(
                "slice point {t} outside (0, {})",
                self.upper
            )));
        }
        let c = &self.params.constraints;
        let (m, n) = (c.rows(), c.cols());
        let mut entries = self.frozen.clone();
        entries[self.k * n + self.l] = t;
        entries[(m - 1) * n + (n - 1)] = self.upper - t;
        Ok(log_density_raw(&entries, &self.params))
    }
}

/// Builds the full-conditional slice of the hyperprior along entry (k, l),
/// holding every other free entry of the plan fixed.
pub fn conditional_slice_log_density(
    plan: &TransportPlan,
    k: usize,
    l: usize,
    params: &HyperpriorParams,
) -> Result<ConditionalSlice> {
    let c = &params.constraints;
    check_dims(plan, c)?;
    let (m, n) = (plan.rows(), plan.cols());
    if k >= m || l >= n {
        return Err(HfpdError::Dimension(format!("index ({k}, {l}) out of range")));
    }
    if k == m - 1 && l == n - 1 {
        return Err(HfpdError::Parameter(
            "the last entry is the dependent slack coordinate, not a slice axis".into(),
        ));
    }
    let complement: f64 = kahan_sum(plan.entries().iter().enumerate().filter_map(|(t, &p)| {
        let (i, j) = (t / n, t % n);
        if (i, j) == (k, l) || (i, j) == (m - 1, n - 1) {
            None
        } else {
            Some(p)
        }
    }));
    let upper = 1.0 - complement;
    if upper <= 0.0 {
        return Err(HfpdError::Domain(format!(
            "frozen entries already carry mass {complement}; the slice is empty"
        )));
    }
    Ok(ConditionalSlice {
        frozen: plan.entries().to_vec(),
        k,
        l,
        upper,
        params: params.clone(),
    })
}
