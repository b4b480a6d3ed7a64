//! Stochastic quasi-Newton solve for the optimal Kantorovitch potentials:
//! BFGS on the dual objective with HMC gradient estimates, a gradient-only
//! quadratic line search, and a Newton-decrement stopping rule.

use crate::error::{HfpdError, Result};
use crate::hyperprior::{moment_vector, HyperpriorParams, KnowledgeConstraints};
use crate::sampler::{hmc_sample, HmcConfig, HmcDiagnostics};

/// Curvature pairs below this relative threshold are rejected.
pub const CURVATURE_TOL: f64 = 1e-12;
/// Line-search step clamp.
pub const RHO_MAX: f64 = 1.0;

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn mat_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// One dual gradient estimate with its Monte-Carlo uncertainty.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// theta - mean R over the HMC sample.
    pub grad: Vec2,
    /// Standard errors of the two components, ESS-adjusted.
    pub se: Vec2,
    /// The sample mean of R(pi).
    pub expected_moments: Vec2,
    pub diagnostics: HmcDiagnostics,
}

/// Estimates the dual gradient theta - E[R(pi)] at the given potentials by
/// sampling the hyperprior.
pub fn dual_gradient_estimate(
    lambda: Vec2,
    constraints: &KnowledgeConstraints,
    sampler_config: &HmcConfig,
    n_samp: usize,
) -> Result<GradientEstimate> {
    if n_samp < 100 {
        return Err(HfpdError::Parameter(
            "gradient estimation needs n_samp >= 100".into(),
        ));
    }
    let params = HyperpriorParams::new(constraints.clone(), (lambda[0], lambda[1]))?;
    let (plans, diagnostics) = hmc_sample(&params, sampler_config, n_samp)?;
    let mut r1 = Vec::with_capacity(plans.len());
    let mut r2 = Vec::with_capacity(plans.len());
    for p in &plans {
        let (a, b) = moment_vector(p, constraints)?;
        r1.push(a);
        r2.push(b);
    }
    let stat = |xs: &[f64]| -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ess = crate::sampler::effective_sample_size(xs).max(1.0);
        (mean, (var / ess).sqrt())
    };
    let (m1, se1) = stat(&r1);
    let (m2, se2) = stat(&r2);
    Ok(GradientEstimate {
        grad: [constraints.eta - m1, constraints.zeta - m2],
        se: [se1, se2],
        expected_moments: [m1, m2],
        diagnostics,
    })
}

/// BFGS inverse-Hessian update. Returns None when the curvature pair is too
/// weak to be trusted (update skipped).
pub fn bfgs_update(h: &Mat2, s: Vec2, n: Vec2) -> Option<Mat2> {
    let nts = dot(n, s);
    let scale = (dot(n, n).sqrt() * dot(s, s).sqrt()).max(CURVATURE_TOL);
    if nts.abs() < CURVATURE_TOL * scale || nts.abs() < CURVATURE_TOL {
        return None;
    }
    let c = 1.0 / nts;
    // A = I - c * s n^T
    let a = [
        [1.0 - c * s[0] * n[0], -c * s[0] * n[1]],
        [-c * s[1] * n[0], 1.0 - c * s[1] * n[1]],
    ];
    // A H A^T + c s s^T
    let mut ah = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            ah[i][j] = a[i][0] * h[0][j] + a[i][1] * h[1][j];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = ah[i][0] * a[j][0] + ah[i][1] * a[j][1] + c * s[i] * s[j];
        }
    }
    // Symmetrize away round-off.
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    Some(out)
}

/// Locally-quadratic line search from two gradient evaluations:
/// rho = -d.g / d.(g(lambda + d) - g(lambda)), clamped to (0, RHO_MAX].
/// The flag reports the fallback path (unusable curvature).
pub fn quadratic_step_size(d: Vec2, grad_here: Vec2, grad_at_d: Vec2) -> (f64, bool) {
    let num = -dot(d, grad_here);
    let den = dot(d, [grad_at_d[0] - grad_here[0], grad_at_d[1] - grad_here[1]]);
    if den <= 1e-12 {
        return (RHO_MAX, true);
    }
    let rho = num / den;
    if rho <= 0.0 {
        return (RHO_MAX, true);
    }
    (rho.min(RHO_MAX), false)
}

/// Newton decrement g^T H g with the inverse-Hessian approximation H.
pub fn newton_decrement(grad: Vec2, h_inverse: &Mat2) -> Result<f64> {
    if (h_inverse[0][1] - h_inverse[1][0]).abs() > 1e-12 {
        return Err(HfpdError::Definiteness(
            "inverse Hessian must be symmetric".into(),
        ));
    }
    let det = h_inverse[0][0] * h_inverse[1][1] - h_inverse[0][1] * h_inverse[1][0];
    if h_inverse[0][0] <= 0.0 || det <= 0.0 {
        return Err(HfpdError::Definiteness(
            "inverse Hessian must be positive definite".into(),
        ));
    }
    Ok(dot(grad, mat_vec(h_inverse, grad)))
}

/// One accepted iterate of the dual solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DualState {
    pub lambda: Vec2,
    pub inverse_hessian: Mat2,
    pub gradient_estimate: Vec2,
    pub gradient_se: Vec2,
    pub expected_moments: Vec2,
    pub step_size: f64,
    pub newton_decrement: f64,
    pub iteration: usize,
    pub curvature_rejected: bool,
    pub step_fallback: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub trajectory: Vec<DualState>,
    pub sampler_diagnostics: Vec<HmcDiagnostics>,
    pub converged: bool,
    /// Wall-clock per outer iteration; not serialized (reruns must be
    /// byte-identical).
    #[serde(skip_serializing)]
    pub iteration_times: Vec<std::time::Duration>,
}

impl SolveReport {
    pub fn final_state(&self) -> Option<&DualState> {
        self.trajectory.last()
    }
}

fn project(lambda: Vec2) -> Vec2 {
    [lambda[0].max(0.0), lambda[1].max(0.0)]
}

/// Zeroes direction components that push a pinned (zero) coordinate further
/// out of the orthant.
fn pin_direction(lambda: Vec2, d: Vec2) -> Vec2 {
    let mut out = d;
    for i in 0..2 {
        if lambda[i] <= 0.0 && d[i] < 0.0 {
            out[i] = 0.0;
        }
    }
    out
}

/// Gradient with active-constraint components removed: at lambda_i = 0 with
/// an outward gradient the KKT conditions hold, so that component does not
/// count against convergence.
fn projected_gradient(lambda: Vec2, grad: Vec2) -> Vec2 {
    let mut out = grad;
    for i in 0..2 {
        if lambda[i] <= 0.0 && grad[i] > 0.0 {
            out[i] = 0.0;
        }
    }
    out
}

/// Quasi-Newton solve for the optimal potentials. Each outer iteration runs
/// two HMC sampling passes (at the current and tentative potentials), with
/// per-iteration derived seeds so the passes are independent but the whole
/// solve is deterministic.
pub fn solve_potentials(
    constraints: &KnowledgeConstraints,
    tol: f64,
    sampler_config: &HmcConfig,
    n_samp: usize,
    max_outer: usize,
) -> Result<(HyperpriorParams, SolveReport)> {
    if !(tol > 0.0) {
        return Err(HfpdError::Parameter("tol must be positive".into()));
    }
    if max_outer == 0 {
        return Err(HfpdError::Parameter("max_outer must be >= 1".into()));
    }
    let mut lambda: Vec2 = [1.0, 1.0];
    let mut h = IDENTITY;
    let mut h_scaled = false;
    let mut trajectory = Vec::new();
    let mut diagnostics = Vec::new();
    let mut times = Vec::new();
    let mut converged = false;

    for t in 0..max_outer {
        let started = std::time::Instant::now();
        let seed_a = sampler_config.seed.wrapping_add(2 * t as u64 + 1);
        let seed_b = sampler_config.seed.wrapping_add(2 * t as u64 + 2);
        let cfg_a = HmcConfig {
            seed: seed_a,
            ..sampler_config.clone()
        };
        let cfg_b = HmcConfig {
            seed: seed_b,
            ..sampler_config.clone()
        };

        let est = dual_gradient_estimate(lambda, constraints, &cfg_a, n_samp)?;
        let g = est.grad;

        let d = pin_direction(lambda, {
            let hg = mat_vec(&h, g);
            [-hg[0], -hg[1]]
        });
        let tentative = project([lambda[0] + d[0], lambda[1] + d[1]]);
        let moved = [tentative[0] - lambda[0], tentative[1] - lambda[1]];

        let (new_lambda, rho, fallback, curvature_rejected, est_b_diag) =
            if dot(moved, moved).sqrt() < 1e-15 {
                // Fully pinned: nothing to search along.
                (lambda, 0.0, false, false, None)
            } else {
                let est_b = dual_gradient_estimate(tentative, constraints, &cfg_b, n_samp)?;
                let (rho, fallback) = quadratic_step_size(moved, g, est_b.grad);
                let stepped = project([
                    lambda[0] + rho * moved[0],
                    lambda[1] + rho * moved[1],
                ]);
                let s = [stepped[0] - lambda[0], stepped[1] - lambda[1]];
                let n = [est_b.grad[0] - g[0], est_b.grad[1] - g[1]];
                let mut rejected = false;
                // Rescale the initial inverse Hessian from the first useful
                // curvature pair; the identity can be off by orders of
                // magnitude, which makes both steps and the decrement test
                // meaningless.
                if !h_scaled {
                    let (sn, nn) = (dot(s, n), dot(n, n));
                    if sn > 0.0 && nn > 0.0 {
                        let scale = sn / nn;
                        h = [[scale, 0.0], [0.0, scale]];
                        h_scaled = true;
                    }
                }
                match bfgs_update(&h, s, n) {
                    Some(updated) => {
                        // Only adopt curvature that keeps H positive definite;
                        // MC noise can produce indefinite pairs.
                        let det = updated[0][0] * updated[1][1] - updated[0][1] * updated[1][0];
                        if updated[0][0] > 0.0 && det > 0.0 {
                            h = updated;
                        } else {
                            rejected = true;
                        }
                    }
                    None => rejected = true,
                }
                (stepped, rho, fallback, rejected, Some(est_b))
            };

        // Convergence is judged on the latest available gradient, with
        // active-boundary components masked out.
        let latest_grad = est_b_diag.as_ref().map(|e| e.grad).unwrap_or(g);
        let masked = projected_gradient(new_lambda, latest_grad);
        let decrement = newton_decrement(masked, &h)?;

        trajectory.push(DualState {
            lambda: new_lambda,
            inverse_hessian: h,
            gradient_estimate: g,
            gradient_se: est.se,
            expected_moments: est.expected_moments,
            step_size: rho,
            newton_decrement: decrement,
            iteration: t + 1,
            curvature_rejected,
            step_fallback: fallback,
        });
        diagnostics.push(est.diagnostics);
        if let Some(eb) = est_b_diag {
            diagnostics.push(eb.diagnostics);
        }
        times.push(started.elapsed());
        lambda = new_lambda;

        if decrement <= tol {
            converged = true;
            break;
        }
    }

    let params = HyperpriorParams::new(constraints.clone(), (lambda[0], lambda[1]))?;
    Ok((
        params,
        SolveReport {
            trajectory,
            sampler_diagnostics: diagnostics,
            converged,
            iteration_times: times,
        },
    ))
}
