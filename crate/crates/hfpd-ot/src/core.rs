//! Simplex-valued types, divergences, entropy, and the bijective chart
//! between the open probability simplex and unconstrained coordinates.

use crate::error::{HfpdError, Result};

/// Tolerance for simplex normalization invariants.
pub const SUM_TOL: f64 = 1e-12;
/// Round-trip tolerance of the simplex chart.
pub const CHART_TOL: f64 = 1e-10;
/// Probabilities produced by the inverse chart are clamped no lower than
/// this before logs are taken; the hyperprior log terms are singular at
/// the boundary.
pub const PROB_FLOOR: f64 = 1e-300;

/// Compensated (Kahan) summation.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(HfpdError::Parameter(
                "distribution needs at least 2 atoms".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(HfpdError::Domain(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let s = kahan_sum(weights.iter().copied());
        if (s - 1.0).abs() > SUM_TOL {
            return Err(HfpdError::Domain(format!(
                "weights sum to {s}, not 1 within {SUM_TOL:e}"
            )));
        }
        Ok(Self { weights })
    }

    /// Normalizes a nonnegative vector to the simplex.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(HfpdError::Domain(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let s = kahan_sum(raw.iter().copied());
        if s <= 0.0 {
            return Err(HfpdError::Domain("total mass must be positive".into()));
        }
        Self::new(raw.iter().map(|w| w / s).collect())
    }

    pub fn uniform(q: usize) -> Self {
        Self::from_unnormalized(&vec![1.0; q]).expect("uniform is valid")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|w| *w > 0.0)
    }
}

/// An m-by-n transport plan: nonnegative entries summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    entries: Vec<f64>, // row-major
    m: usize,
    n: usize,
}

impl TransportPlan {
    pub fn new(entries: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        if m < 2 || n < 2 || entries.len() != m * n {
            return Err(HfpdError::Dimension(format!(
                "plan must be m x n with m, n >= 2; got {m} x {n} with {} entries",
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(HfpdError::Domain(
                "plan entries must be finite and nonnegative".into(),
            ));
        }
        let s = kahan_sum(entries.iter().copied());
        if (s - 1.0).abs() > SUM_TOL {
            return Err(HfpdError::Domain(format!(
                "plan sums to {s}, not 1 within {SUM_TOL:e}"
            )));
        }
        Ok(Self { entries, m, n })
    }

    pub fn from_unnormalized(raw: &[f64], m: usize, n: usize) -> Result<Self> {
        if raw.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(HfpdError::Domain(
                "plan entries must be finite and nonnegative".into(),
            ));
        }
        let s = kahan_sum(raw.iter().copied());
        if s <= 0.0 {
            return Err(HfpdError::Domain("plan mass must be positive".into()));
        }
        Self::new(raw.iter().map(|e| e / s).collect(), m, n)
    }

    pub fn uniform(m: usize, n: usize) -> Self {
        Self::from_unnormalized(&vec![1.0; m * n], m, n).expect("uniform is valid")
    }

    /// Independence coupling of two marginals.
    pub fn outer(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Self {
        let mut entries = Vec::with_capacity(mu.len() * nu.len());
        for a in mu.weights() {
            for b in nu.weights() {
                entries.push(a * b);
            }
        }
        Self::from_unnormalized(&entries, mu.len(), nu.len()).expect("outer product is valid")
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn is_interior(&self) -> bool {
        self.entries.iter().all(|e| *e > 0.0)
    }

    /// Row and column sums as raw vectors (not validated as distributions).
    pub fn marginal_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mu = vec![0.0; self.m];
        let mut nu = vec![0.0; self.n];
        for i in 0..self.m {
            for j in 0..self.n {
                let p = self.entries[i * self.n + j];
                mu[i] += p;
                nu[j] += p;
            }
        }
        (mu, nu)
    }
}

/// Row-sum and column-sum marginals of a plan.
pub fn marginals(plan: &TransportPlan) -> (DiscreteDistribution, DiscreteDistribution) {
    let (mu, nu) = plan.marginal_sums();
    (
        DiscreteDistribution::from_unnormalized(&mu).expect("row sums of a valid plan"),
        DiscreteDistribution::from_unnormalized(&nu).expect("column sums of a valid plan"),
    )
}

/// An m-by-n matrix of nonnegative, finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    costs: Vec<f64>, // row-major
    m: usize,
    n: usize,
}

impl CostMatrix {
    pub fn new(costs: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        if m < 1 || n < 1 || costs.len() != m * n {
            return Err(HfpdError::Dimension(format!(
                "cost matrix must be {m} x {n}; got {} entries",
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(HfpdError::Domain(
                "costs must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { costs, m, n })
    }

    /// Squared distance cost on regular 1D grids {0, 1, ..., m-1} and
    /// {0, 1, ..., n-1}: C_ij = (i - j)^2.
    pub fn euclidean_squared_grid(m: usize, n: usize) -> Self {
        let mut costs = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let d = i as f64 - j as f64;
                costs.push(d * d);
            }
        }
        Self::new(costs, m, n).expect("grid cost is valid")
    }

    /// Squared distance cost between two explicit 1D supports.
    pub fn squared_from_supports(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let mut costs = Vec::with_capacity(xs.len() * ys.len());
        for &x in xs {
            for &y in ys {
                costs.push((x - y) * (x - y));
            }
        }
        Self::new(costs, xs.len(), ys.len())
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.n + j]
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().cloned().fold(0.0, f64::max)
    }
}

/// KL divergence sum p_i log(p_i / q_i), with the 0 log 0 = 0 convention;
/// +infinity when some q_i = 0 < p_i.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(HfpdError::Dimension(format!(
            "KL needs equal lengths, got {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_divergence_raw(p.weights(), q.weights()))
}

/// KL on raw weight slices (callers guarantee equal lengths).
pub fn kl_divergence_raw(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        terms.push(pi * (pi / qi).ln());
    }
    kahan_sum(terms)
}

/// Shannon entropy of a plan, -sum pi log pi, in nats.
pub fn plan_entropy(plan: &TransportPlan) -> f64 {
    kahan_sum(
        plan.entries()
            .iter()
            .filter(|e| **e > 0.0)
            .map(|e| -e * e.ln()),
    )
}

/// Anchored log-ratio chart between the interior of the simplex and
/// R^{q-1}: z_i = log(p_i / p_q), with the last coordinate as anchor.
#[derive(Debug, Clone, Copy)]
pub struct SimplexChart {
    dim: usize,
}

impl SimplexChart {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(HfpdError::Parameter("chart dimension must be >= 2".into()));
        }
        Ok(Self { dim })
    }

    /// Simplex dimension q (number of atoms).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unconstrained dimension q - 1.
    pub fn free_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn forward(&self, p: &DiscreteDistribution) -> Result<Vec<f64>> {
        if p.len() != self.dim {
            return Err(HfpdError::Dimension(format!(
                "chart dimension {} vs distribution length {}",
                self.dim,
                p.len()
            )));
        }
        if !p.is_interior() {
            return Err(HfpdError::Domain(
                "forward chart needs a strictly interior point".into(),
            ));
        }
        let w = p.weights();
        let log_last = w[self.dim - 1].ln();
        Ok(w[..self.dim - 1].iter().map(|x| x.ln() - log_last).collect())
    }

    /// Inverse map: anchored softmax, clamped away from the boundary.
    pub fn inverse(&self, z: &[f64]) -> Result<DiscreteDistribution> {
        Ok(DiscreteDistribution {
            weights: self.inverse_weights(z)?,
        })
    }

    pub fn inverse_weights(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim - 1 {
            return Err(HfpdError::Dimension(format!(
                "chart expects {} coordinates, got {}",
                self.dim - 1,
                z.len()
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(HfpdError::Domain("non-finite chart coordinates".into()));
        }
        let max = z.iter().cloned().fold(0.0_f64, f64::max);
        let mut w: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
        w.push((-max).exp());
        let s = kahan_sum(w.iter().copied());
        for x in &mut w {
            *x = (*x / s).max(PROB_FLOOR);
        }
        Ok(w)
    }

    /// Log absolute determinant of the Jacobian of the inverse map,
    /// sum_i log p_i over all q atoms.
    pub fn log_jacobian(&self, z: &[f64]) -> Result<f64> {
        let w = self.inverse_weights(z)?;
        Ok(kahan_sum(w.iter().map(|x| x.ln())))
    }

    /// Pulls a coordinate gradient (length q, taken with all atoms free)
    /// back through the chart, including the log-Jacobian correction.
    ///
    /// Returns the gradient of f(p(z)) + log_jacobian(z) w.r.t. z.
    pub fn pullback_gradient(&self, z: &[f64], coord_grad: &[f64]) -> Result<Vec<f64>> {
        if coord_grad.len() != self.dim {
            return Err(HfpdError::Dimension(format!(
                "coordinate gradient length {} vs chart dimension {}",
                coord_grad.len(),
                self.dim
            )));
        }
        let p = self.inverse_weights(z)?;
        let q = self.dim as f64;
        let g_last = coord_grad[self.dim - 1];
        // Reduced gradient on the free coordinates (last atom is dependent).
        let reduced: Vec<f64> = coord_grad[..self.dim - 1]
            .iter()
            .map(|g| g - g_last)
            .collect();
        let s = kahan_sum(reduced.iter().zip(&p).map(|(g, pi)| g * pi));
        Ok((0..self.dim - 1)
            .map(|j| p[j] * (reduced[j] - s) + 1.0 - q * p[j])
            .collect())
    }
}
