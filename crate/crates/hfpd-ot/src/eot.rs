//! Base-level (deterministic) transport: ideal Gibbs kernels, log-domain
//! Sinkhorn-Knopp, an exact small-instance LP oracle, and exact 1D
//! Wasserstein-2 distances.

use crate::core::{kahan_sum, CostMatrix, DiscreteDistribution, TransportPlan};
use crate::error::{HfpdError, Result};

/// Default Sinkhorn stopping tolerance (max-norm marginal violation).
pub const SINKHORN_TOL: f64 = 1e-9;
/// Default Sinkhorn iteration cap.
pub const SINKHORN_MAX_ITER: usize = 10_000;
/// Largest instance the exact LP oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 400;

/// The base ideal design pi_I proportional to exp(-C/eps) * phi.
///
/// Kept in log space: with eps as small as 1e-3 the entries underflow f64
/// when exponentiated, but every consumer (Sinkhorn, the hyperprior) only
/// needs log pi_I.
#[derive(Debug, Clone)]
pub struct IdealDesign {
    log_plan: Vec<f64>, // row-major, normalized in log space
    m: usize,
    n: usize,
    epsilon: f64,
}

impl IdealDesign {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Normalized log entries of pi_I.
    pub fn log_plan(&self) -> &[f64] {
        &self.log_plan
    }

    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_plan[i * self.n + j]
    }

    /// The ideal plan with entries exponentiated. Entries below f64 range
    /// flush to zero; use `log_plan` for computation.
    pub fn plan(&self) -> TransportPlan {
        let raw: Vec<f64> = self.log_plan.iter().map(|l| l.exp()).collect();
        TransportPlan::from_unnormalized(&raw, self.m, self.n).expect("normalized kernel")
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + kahan_sum(xs.map(|x| (x - max).exp())).ln()
}

/// Extended Gibbs kernel: plan entries proportional to exp(-C_ij/eps) * phi_ij.
pub fn gibbs_kernel(
    cost: &CostMatrix,
    epsilon: f64,
    phi: Option<&TransportPlan>,
) -> Result<IdealDesign> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(HfpdError::Parameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let (m, n) = (cost.rows(), cost.cols());
    let mut log_w: Vec<f64> = cost.costs().iter().map(|c| -c / epsilon).collect();
    if let Some(phi) = phi {
        if phi.rows() != m || phi.cols() != n {
            return Err(HfpdError::Dimension(
                "phi dimensions must match the cost matrix".into(),
            ));
        }
        if !phi.is_interior() {
            return Err(HfpdError::Domain(
                "phi must be strictly positive".into(),
            ));
        }
        for (lw, p) in log_w.iter_mut().zip(phi.entries()) {
            *lw += p.ln();
        }
    }
    let log_z = log_sum_exp(log_w.iter().copied());
    for lw in &mut log_w {
        *lw -= log_z;
    }
    Ok(IdealDesign {
        log_plan: log_w,
        m,
        n,
        epsilon,
    })
}

/// Result of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct EotSolution {
    pub plan: TransportPlan,
    pub iterations: usize,
    /// Max-norm deviation of the plan's marginals from the targets.
    pub marginal_error: f64,
}

impl EotSolution {
    /// Transport cost <C, pi>.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        transport_cost(&self.plan, cost)
    }
}

pub fn transport_cost(plan: &TransportPlan, cost: &CostMatrix) -> f64 {
    kahan_sum(
        plan.entries()
            .iter()
            .zip(cost.costs())
            .map(|(p, c)| p * c),
    )
}

/// Log-domain Sinkhorn-Knopp: minimizes KL(pi || pi_I) over Pi(mu0, nu0).
///
/// Convergence is measured by the max-norm marginal violation after each
/// full sweep.
pub fn sinkhorn(
    mu0: &DiscreteDistribution,
    nu0: &DiscreteDistribution,
    ideal: &IdealDesign,
    tol: f64,
    max_iter: usize,
) -> Result<EotSolution> {
    let (m, n) = (ideal.rows(), ideal.cols());
    if mu0.len() != m || nu0.len() != n {
        return Err(HfpdError::Dimension(format!(
            "marginals {} x {} vs kernel {m} x {n}",
            mu0.len(),
            nu0.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(HfpdError::Parameter("tol must be positive".into()));
    }
    if !mu0.is_interior() || !nu0.is_interior() {
        return Err(HfpdError::Degeneracy(
            "sinkhorn requires strictly positive marginals".into(),
        ));
    }
    let lk = ideal.log_plan();
    for i in 0..m {
        if lk[i * n..(i + 1) * n].iter().all(|l| *l == f64::NEG_INFINITY) {
            return Err(HfpdError::Degeneracy(format!("kernel row {i} is zero")));
        }
    }
    for j in 0..n {
        if (0..m).all(|i| lk[i * n + j] == f64::NEG_INFINITY) {
            return Err(HfpdError::Degeneracy(format!("kernel column {j} is zero")));
        }
    }

    let log_mu: Vec<f64> = mu0.weights().iter().map(|w| w.ln()).collect();
    let log_nu: Vec<f64> = nu0.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0_f64; m];
    let mut g = vec![0.0_f64; n];
    let mut err = f64::INFINITY;

    for iter in 1..=max_iter {
        for i in 0..m {
            f[i] = log_mu[i] - log_sum_exp((0..n).map(|j| lk[i * n + j] + g[j]));
        }
        for j in 0..n {
            g[j] = log_nu[j] - log_sum_exp((0..m).map(|i| lk[i * n + j] + f[i]));
        }
        // Column marginals are exact after the g-sweep; only rows can drift.
        err = 0.0;
        for i in 0..m {
            let row = kahan_sum((0..n).map(|j| (lk[i * n + j] + f[i] + g[j]).exp()));
            err = err.max((row - mu0.weights()[i]).abs());
        }
        if err <= tol {
            let raw: Vec<f64> = (0..m * n)
                .map(|k| (lk[k] + f[k / n] + g[k % n]).exp())
                .collect();
            return Ok(EotSolution {
                plan: TransportPlan::from_unnormalized(&raw, m, n)?,
                iterations: iter,
                marginal_error: err,
            });
        }
    }
    Err(HfpdError::Convergence(
        format!("sinkhorn did not reach tol {tol:e} in {max_iter} iterations"),
        err,
    ))
}

/// Exact discrete OT by the transportation simplex, for desk-scale oracles.
pub fn exact_ot_small(
    mu0: &DiscreteDistribution,
    nu0: &DiscreteDistribution,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
    let (m, n) = (mu0.len(), nu0.len());
    if cost.rows() != m || cost.cols() != n {
        return Err(HfpdError::Dimension(
            "cost dimensions must match the marginals".into(),
        ));
    }
    if m * n > ORACLE_MAX_CELLS {
        return Err(HfpdError::Capacity(format!(
            "exact oracle limited to {ORACLE_MAX_CELLS} cells, got {}",
            m * n
        )));
    }
    let flows = transportation_simplex(mu0.weights(), nu0.weights(), cost)?;
    let raw: Vec<f64> = flows.iter().map(|f| f.max(0.0)).collect();
    TransportPlan::from_unnormalized(&raw, m, n)
}

/// Transportation simplex with a northwest-corner start and a spanning-tree
/// basis. Returns row-major flows.
fn transportation_simplex(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    let idx = |i: usize, j: usize| i * n + j;

    let mut flow = vec![0.0_f64; m * n];
    let mut basic = vec![false; m * n];

    // Northwest-corner initial basis: exactly m + n - 1 cells.
    {
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let f = ra[i].min(rb[j]);
            flow[idx(i, j)] = f;
            basic[idx(i, j)] = true;
            ra[i] -= f;
            rb[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (ra[i] <= rb[j] && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let max_pivots = 200 * m * n;
    for _ in 0..max_pivots {
        // Potentials from the basis tree. Nodes: rows 0..m, cols m..m+n.
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        let mut stack = vec![0_usize]; // node ids
        while let Some(node) = stack.pop() {
            if node < m {
                let i = node;
                for j in 0..n {
                    if basic[idx(i, j)] && v[j].is_nan() {
                        v[j] = cost.get(i, j) - u[i];
                        stack.push(m + j);
                    }
                }
            } else {
                let j = node - m;
                for i in 0..m {
                    if basic[idx(i, j)] && u[i].is_nan() {
                        u[i] = cost.get(i, j) - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        if u.iter().any(|x| x.is_nan()) || v.iter().any(|x| x.is_nan()) {
            return Err(HfpdError::Degeneracy(
                "basis tree disconnected in transportation simplex".into(),
            ));
        }

        // Entering cell: most negative reduced cost.
        let mut enter = None;
        let mut best = -1e-11;
        for i in 0..m {
            for j in 0..n {
                if !basic[idx(i, j)] {
                    let rc = cost.get(i, j) - u[i] - v[j];
                    if rc < best {
                        best = rc;
                        enter = Some((i, j));
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else {
            return Ok(flow);
        };

        // Unique tree path from row node ei to col node m+ej.
        let total = m + n;
        let mut parent = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        seen[ei] = true;
        let mut queue = std::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == m + ej {
                break;
            }
            if node < m {
                let i = node;
                for j in 0..n {
                    if basic[idx(i, j)] && !seen[m + j] {
                        seen[m + j] = true;
                        parent[m + j] = node;
                        queue.push_back(m + j);
                    }
                }
            } else {
                let j = node - m;
                for i in 0..m {
                    if basic[idx(i, j)] && !seen[i] {
                        seen[i] = true;
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        if !seen[m + ej] {
            return Err(HfpdError::Degeneracy(
                "no cycle found for entering cell".into(),
            ));
        }
        // Cells along the path from ej's node back to ei; alternating signs
        // starting with minus for the cell adjacent to the entering cell's row.
        let mut path_cells = Vec::new();
        let mut node = m + ej;
        while node != ei {
            let p = parent[node];
            let (ri, cj) = if node < m { (node, p - m) } else { (p, node - m) };
            path_cells.push((ri, cj));
            node = p;
        }
        path_cells.reverse(); // now ordered from ei outwards to ej
        // Signs: entering (+), then alternate starting with minus.
        let mut theta = f64::INFINITY;
        let mut leave = None;
        for (k, &(i, j)) in path_cells.iter().enumerate() {
            if k % 2 == 0 {
                // minus cell
                if flow[idx(i, j)] < theta {
                    theta = flow[idx(i, j)];
                    leave = Some((i, j));
                }
            }
        }
        let (li, lj) = leave.expect("cycle has at least one minus cell");
        for (k, &(i, j)) in path_cells.iter().enumerate() {
            if k % 2 == 0 {
                flow[idx(i, j)] -= theta;
            } else {
                flow[idx(i, j)] += theta;
            }
        }
        flow[idx(ei, ej)] = theta;
        basic[idx(ei, ej)] = true;
        basic[idx(li, lj)] = false;
        flow[idx(li, lj)] = 0.0;
    }
    Err(HfpdError::Convergence(
        "transportation simplex pivot cap reached".into(),
        f64::NAN,
    ))
}

/// Exact squared 2-Wasserstein distance between two weighted 1D point sets,
/// by the quantile-function coupling.
pub fn wasserstein2_1d(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    support_x: &[f64],
    support_y: &[f64],
) -> Result<f64> {
    if mu.len() != support_x.len() || nu.len() != support_y.len() {
        return Err(HfpdError::Dimension(
            "support and weight lengths must match".into(),
        ));
    }
    if support_x.iter().chain(support_y).any(|x| !x.is_finite()) {
        return Err(HfpdError::Domain("supports must be finite".into()));
    }
    let sort_by_support = |support: &[f64], weights: &[f64]| -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> = support
            .iter()
            .zip(weights)
            .map(|(&x, &w)| (x, w))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pairs
    };
    let xs = sort_by_support(support_x, mu.weights());
    let ys = sort_by_support(support_y, nu.weights());

    let (mut i, mut j) = (0, 0);
    let mut rem_x = xs[0].1;
    let mut rem_y = ys[0].1;
    let mut acc = Vec::new();
    loop {
        let w = rem_x.min(rem_y);
        let d = xs[i].0 - ys[j].0;
        acc.push(w * d * d);
        rem_x -= w;
        rem_y -= w;
        if rem_x <= 0.0 {
            i += 1;
            if i == xs.len() {
                break;
            }
            rem_x = xs[i].1;
        }
        if rem_y <= 0.0 {
            j += 1;
            if j == ys.len() {
                break;
            }
            rem_y = ys[j].1;
        }
    }
    Ok(kahan_sum(acc.into_iter()))
}
