//! Linearized (kernel-regime) dynamics and the coupled harness that
//! compares them against actual gradient descent.
//!
//! Around a reference Jacobian `J` with SVD `U diag(lambda) V^T`, gradient
//! descent on the linearized model has the closed forms
//! `r~_tau = sum_s (1 - eta lambda_s^2)^tau a_s u_s` and
//! `v_s^T (theta~_tau - theta_0) = -a_s (1 - (1 - eta lambda_s^2)^tau) / lambda_s`
//! with `a = U^T r_0`. [`coupled_run`] drives the original network and the
//! closed form side by side and checks the tracking inequalities
//! `|r_tau - r~_tau| <= (3/5) (delta alpha / beta) |r_0|`,
//! `|theta_tau - theta_0| <= |J_I^+ r_0| + (Gamma/alpha)|Pi_N r_0| + delta (Gamma/alpha) |r_0|`,
//! and the early-stopped residual bound, together with the hypothesis
//! thresholds on the reference gap and the Jacobian Lipschitz constant.

use crate::shallownet::{ShallowNet, ShallowNetError};
use crate::spectral::{
    self, split_at_cutoff, SpectralDecomposition, SpectralError, Subspace,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LindynError {
    #[error("step size {eta} exceeds 1/lambda_1^2 = {limit}")]
    StepTooLarge { eta: f64, limit: f64 },
    #[error("spectral bound violated: |J| = {opnorm} > beta = {beta}")]
    BetaTooSmall { opnorm: f64, beta: f64 },
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("original iterates diverged at iteration {iter}")]
    Diverged { iter: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Net(#[from] ShallowNetError),
}

/// A fixed matrix standing in for the Jacobian at initialization, with a
/// certified spectral bound and its SVD.
#[derive(Debug, Clone)]
pub struct ReferenceJacobian {
    matrix: DMatrix<f64>,
    beta: f64,
    decomposition: Arc<SpectralDecomposition>,
}

impl ReferenceJacobian {
    /// Wrap `matrix` (m x p, zero-padded to p >= m) with spectral bound
    /// `beta`; fails if the operator norm exceeds `beta` beyond 1e-10
    /// relative slack.
    pub fn new(matrix: DMatrix<f64>, beta: f64) -> Result<Self, LindynError> {
        let decomposition = Arc::new(spectral::svd(&matrix)?);
        let opnorm = decomposition.top_singular_value();
        if opnorm > beta * (1.0 + 1e-10) {
            return Err(LindynError::BetaTooSmall { opnorm, beta });
        }
        let m = matrix.nrows();
        let padded = if matrix.ncols() < m {
            let mut p = DMatrix::zeros(m, m);
            p.view_mut((0, 0), (m, matrix.ncols())).copy_from(&matrix);
            p
        } else {
            matrix
        };
        Ok(ReferenceJacobian {
            matrix: padded,
            beta,
            decomposition,
        })
    }

    /// Use the matrix's own operator norm as the spectral bound.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self, LindynError> {
        let decomposition = Arc::new(spectral::svd(&matrix)?);
        let beta = decomposition.top_singular_value();
        let m = matrix.nrows();
        let padded = if matrix.ncols() < m {
            let mut p = DMatrix::zeros(m, m);
            p.view_mut((0, 0), (m, matrix.ncols())).copy_from(&matrix);
            p
        } else {
            matrix
        };
        Ok(ReferenceJacobian {
            matrix: padded,
            beta,
            decomposition,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn decomposition(&self) -> &Arc<SpectralDecomposition> {
        &self.decomposition
    }
}

fn check_step(decomp: &SpectralDecomposition, eta: f64) -> Result<(), LindynError> {
    let top = decomp.top_singular_value();
    let limit = if top > 0.0 { 1.0 / (top * top) } else { f64::INFINITY };
    if !(eta.is_finite() && eta >= 0.0) || eta > limit * (1.0 + 1e-12) {
        return Err(LindynError::StepTooLarge { eta, limit });
    }
    Ok(())
}

/// Closed-form linearized residual
/// `r~_tau = sum_s (1 - eta lambda_s^2)^tau a_s u_s`.
pub fn linearized_residual(
    decomp: &SpectralDecomposition,
    r0: &DVector<f64>,
    eta: f64,
    tau: usize,
) -> Result<DVector<f64>, LindynError> {
    check_step(decomp, eta)?;
    let a = decomp.left_coefficients(r0)?;
    let m = decomp.output_dim();
    let mut coeffs = DVector::zeros(m);
    for s in 0..m {
        let lam = decomp.singular_values()[s];
        let q = 1.0 - eta * lam * lam;
        coeffs[s] = q.powi(tau as i32) * a[s];
    }
    Ok(decomp.left_vectors() * coeffs)
}

/// Geometric sum `sum_{t=0}^{tau-1} q^t`, stable for q near 1.
fn geometric_sum(q: f64, tau: usize) -> f64 {
    if tau == 0 {
        return 0.0;
    }
    if (q - 1.0).abs() < 1e-300 {
        return tau as f64;
    }
    if q > 0.5 {
        // 1 - q^tau = -expm1(tau ln q), accurate when q^tau is near 1.
        (-(tau as f64 * q.ln()).exp_m1()) / (1.0 - q)
    } else {
        (1.0 - q.powi(tau as i32)) / (1.0 - q)
    }
}

/// Coefficients of `theta~_tau - theta_0` in the right singular basis:
/// entry s is `-a_s eta lambda_s sum_{t<tau} (1 - eta lambda_s^2)^t`,
/// the series-safe form of `-a_s (1 - (1-eta lambda_s^2)^tau)/lambda_s`.
pub fn linearized_param_coefficients(
    decomp: &SpectralDecomposition,
    r0: &DVector<f64>,
    eta: f64,
    tau: usize,
) -> Result<DVector<f64>, LindynError> {
    check_step(decomp, eta)?;
    let a = decomp.left_coefficients(r0)?;
    let m = decomp.output_dim();
    let mut coeffs = DVector::zeros(m);
    for s in 0..m {
        let lam = decomp.singular_values()[s];
        let q = 1.0 - eta * lam * lam;
        coeffs[s] = -a[s] * eta * lam * geometric_sum(q, tau);
    }
    Ok(coeffs)
}

/// `theta~_tau - theta_0` as a full parameter-space vector.
pub fn linearized_param_offset(
    decomp: &SpectralDecomposition,
    r0: &DVector<f64>,
    eta: f64,
    tau: usize,
) -> Result<DVector<f64>, LindynError> {
    let coeffs = linearized_param_coefficients(decomp, r0, eta, tau)?;
    Ok(decomp.right_vectors() * coeffs)
}

/// Reference-quality measure
/// `epsilon_0 = max(|Jbar_0 - J|, sqrt(|J_0 J_0^T - J J^T|))` for a
/// candidate initial Jacobian `j0` against the reference.
pub fn reference_epsilon(
    reference: &ReferenceJacobian,
    j0: &DMatrix<f64>,
) -> Result<f64, LindynError> {
    let m = reference.matrix.nrows();
    if j0.nrows() != m {
        return Err(LindynError::DimensionMismatch {
            context: "row count of initial Jacobian",
            expected: m,
            got: j0.nrows(),
        });
    }
    let width = reference.matrix.ncols();
    if j0.ncols().max(m) != width {
        return Err(LindynError::DimensionMismatch {
            context: "padded width of initial Jacobian",
            expected: width,
            got: j0.ncols().max(m),
        });
    }
    let mut padded = DMatrix::zeros(m, width);
    padded.view_mut((0, 0), (m, j0.ncols())).copy_from(j0);
    let direct = spectral::operator_norm(&(&padded - &reference.matrix));
    let gram_gap = spectral::symmetric_operator_norm(
        &(j0 * j0.transpose() - &reference.matrix * reference.matrix.transpose()),
    );
    Ok(direct.max(gram_gap.max(0.0).sqrt()))
}

/// Empirical lower bound on `sup |J(W) - J(W_0)|` over the Frobenius ball
/// of the given radius: the max over uniformly-directed probes placed on
/// the ball's boundary.
pub fn lipschitz_probe(
    net: &ShallowNet,
    x: &DMatrix<f64>,
    radius: f64,
    num_probes: usize,
    seed: u64,
) -> Result<f64, LindynError> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(LindynError::ParameterRange(format!(
            "probe radius must be nonnegative, got {radius}"
        )));
    }
    if radius == 0.0 || num_probes == 0 {
        return Ok(0.0);
    }
    if net.activation().is_linear() {
        return Ok(0.0);
    }
    let j0 = net.jacobian_dense(x)?;
    let (k, d) = (net.hidden_units(), net.input_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..num_probes {
        let mut dir = DMatrix::from_fn(k, d, |_, _| StandardNormal.sample(&mut rng));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir.scale_mut(radius / norm);
        let probed = net.with_input_weights(net.input_weights() + dir)?;
        let jp = probed.jacobian_dense(x)?;
        worst = worst.max(spectral::operator_norm(&(jp - &j0)));
    }
    Ok(worst)
}

/// One tracked inequality: the bound, the worst measured value, and the
/// remaining slack.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct InequalityCheck {
    pub bound: f64,
    pub worst: f64,
    pub slack: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(bound: f64, worst: f64) -> Self {
        InequalityCheck {
            bound,
            worst,
            slack: bound - worst,
            holds: worst <= bound,
        }
    }
}

/// Hypothesis measurements for the tracking guarantee: the reference gap
/// `epsilon_0`, the probed Lipschitz constant `epsilon` (a sampled lower
/// bound on the true supremum), and whether both sit below their
/// thresholds `min(delta alpha, sqrt(delta alpha^3 / (Gamma beta)))/5` and
/// `delta alpha^3 / (5 Gamma beta^2)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HypothesisReport {
    pub epsilon0: f64,
    pub epsilon0_threshold: f64,
    pub epsilon_probe: f64,
    pub epsilon_threshold: f64,
    pub probe_radius: f64,
    /// True when both measured quantities are below threshold; since the
    /// probe only lower-bounds the true constant this certifies the
    /// hypotheses only up to sampling.
    pub hypotheses_met_up_to_sampling: bool,
}

/// Per-iteration row of the coupled trajectory.
#[derive(Debug, Clone, Copy)]
pub struct CoupledRecord {
    pub iter: usize,
    pub residual_norm: f64,
    pub lin_residual_norm: f64,
    /// `|r_tau - r~_tau|`.
    pub coupling_gap: f64,
    /// `|thetabar_tau - theta~_tau|` in the padded parameter space.
    pub param_gap: f64,
    /// `|theta_tau - theta_0|`.
    pub dist_from_init: f64,
    pub info_residual_norm: f64,
    pub nuisance_residual_norm: f64,
}

/// Header + rows for a coupled original-vs-linearized run.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub eta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `ceil(Gamma / (eta alpha^2))`.
    pub t_iters: usize,
    pub epsilon0: f64,
    pub epsilon_probe: f64,
    pub records: Vec<CoupledRecord>,
}

/// Optional one-step recursion diagnostic: checks the measured gaps
/// against `|e_{tau+1}| <= eta (eps0^2 + eps beta)|r~_tau| + (1 + eta eps^2)|e_tau|`
/// with the trajectory-endpoint Lipschitz estimate. Reported, not
/// asserted: the estimate lower-bounds the true constant.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RecursionCheck {
    /// `2 max_tau |J(W_tau) - J(W_0)|` along the actual trajectory.
    pub epsilon_trajectory: f64,
    /// Worst violation `|e_{tau+1}| - rhs` (negative when the recursion
    /// holds everywhere).
    pub max_violation: f64,
    pub holds: bool,
}

/// Full report of a coupled run.
#[derive(Debug, Clone)]
pub struct MetaReport {
    /// `|r_tau - r~_tau| <= (3/5)(delta alpha / beta)|r_0|` over all tau.
    pub residual_tracking: InequalityCheck,
    /// `|thetabar_tau - theta~_tau| <= delta (Gamma/alpha)|r_0|`.
    pub param_tracking: InequalityCheck,
    /// `|theta_tau - theta_0| <= |J_I^+ r_0| + (Gamma/alpha)|Pi_N r_0| + delta(Gamma/alpha)|r_0|`.
    pub distance_bound: InequalityCheck,
    /// `|r_T| <= e^{-Gamma}|Pi_I r_0| + |Pi_N r_0| + (delta alpha/beta)|r_0|`.
    pub final_residual: InequalityCheck,
    pub hypotheses: HypothesisReport,
    pub recursion: Option<RecursionCheck>,
}

impl MetaReport {
    pub fn all_inequalities_hold(&self) -> bool {
        self.residual_tracking.holds
            && self.param_tracking.holds
            && self.distance_bound.holds
            && self.final_residual.holds
    }
}

/// Configuration for [`coupled_run`].
#[derive(Debug, Clone, Copy)]
pub struct CoupledRunConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
    pub delta: f64,
    /// Probes for the Lipschitz estimate (0 skips probing).
    pub lipschitz_probes: usize,
    pub probe_seed: u64,
    /// Evaluate the one-step recursion diagnostic (dense Jacobian per
    /// iteration; only sensible for small problems).
    pub check_recursion: bool,
}

/// Run `T = ceil(Gamma/(eta alpha^2))` gradient steps of the original
/// network and the closed-form linearized dynamics against the same
/// reference Jacobian, recording both trajectories and the tracking
/// report.
pub fn coupled_run(
    net: &ShallowNet,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    reference: &ReferenceJacobian,
    cfg: &CoupledRunConfig,
) -> Result<(CoupledTrajectory, MetaReport), LindynError> {
    let decomp = reference.decomposition();
    let beta = reference.beta();
    let m = decomp.output_dim();

    if cfg.gamma < 1.0 {
        return Err(LindynError::ParameterRange(format!(
            "gamma must be at least 1, got {}",
            cfg.gamma
        )));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= 1.0) {
        return Err(LindynError::ParameterRange(format!(
            "delta must lie in (0, 1], got {}",
            cfg.delta
        )));
    }
    let eta_limit = if beta > 0.0 { 1.0 / (beta * beta) } else { f64::INFINITY };
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) || cfg.eta > eta_limit * (1.0 + 1e-12) {
        return Err(LindynError::StepTooLarge {
            eta: cfg.eta,
            limit: eta_limit,
        });
    }
    if y.len() != m {
        return Err(LindynError::DimensionMismatch {
            context: "label vector vs reference output dim",
            expected: m,
            got: y.len(),
        });
    }

    let split = split_at_cutoff(decomp, cfg.alpha)?;
    let t_iters = (cfg.gamma / (cfg.eta * cfg.alpha * cfg.alpha)).ceil() as usize;

    let f0 = net.forward_concat(x)?;
    let r0 = &f0 - y;
    let r0_norm = r0.norm();
    let pi_i0 = split.projection_norm(&r0, Subspace::Information)?;
    let pi_n0 = split.projection_norm(&r0, Subspace::Nuisance)?;
    let pinv_r0 = split.truncated_pinv_norm(&r0)?;

    // Hypothesis measurements (Definition-level epsilon_0, probe-level
    // epsilon over the tracking radius R).
    let j_init = net.jacobian_dense(x)?;
    let epsilon0 = reference_epsilon(reference, &j_init)?;
    let radius = 2.0
        * (pinv_r0 + (cfg.gamma / cfg.alpha) * pi_n0 + cfg.delta * (cfg.gamma / cfg.alpha) * r0_norm);
    let epsilon_probe = if cfg.lipschitz_probes > 0 {
        2.0 * lipschitz_probe(net, x, radius, cfg.lipschitz_probes, cfg.probe_seed)?
    } else {
        0.0
    };
    let eps0_threshold =
        (cfg.delta * cfg.alpha).min((cfg.delta * cfg.alpha.powi(3) / (cfg.gamma * beta)).sqrt())
            / 5.0;
    let eps_threshold = cfg.delta * cfg.alpha.powi(3) / (5.0 * cfg.gamma * beta * beta);
    let hypotheses = HypothesisReport {
        epsilon0,
        epsilon0_threshold: eps0_threshold,
        epsilon_probe,
        epsilon_threshold: eps_threshold,
        probe_radius: radius,
        hypotheses_met_up_to_sampling: cfg.lipschitz_probes > 0
            && epsilon0 <= eps0_threshold
            && epsilon_probe <= eps_threshold,
    };

    // Closed-form pieces reused every iteration.
    let a = decomp.left_coefficients(&r0)?;
    let lambdas = decomp.singular_values().clone();
    let w0 = net.input_weights().clone();
    let (k, d) = (w0.nrows(), w0.ncols());
    let p = decomp.param_dim();
    if k * d > p {
        return Err(LindynError::DimensionMismatch {
            context: "parameter count vs reference width",
            expected: p,
            got: k * d,
        });
    }

    let mut current = net.clone();
    let mut records = Vec::with_capacity(t_iters + 1);
    let mut worst_coupling = 0.0f64;
    let mut worst_param = 0.0f64;
    let mut worst_dist = 0.0f64;
    let mut final_residual_norm = r0_norm;
    let mut recursion_worst = f64::NEG_INFINITY;
    let mut eps_traj = 0.0f64;
    let mut gaps: Vec<f64> = Vec::new();
    let mut lin_norms: Vec<f64> = Vec::new();

    for tau in 0..=t_iters {
        if tau > 0 {
            current = current.gd_step(x, y, cfg.eta)?;
        }
        let f = current.forward_concat(x)?;
        let r = &f - y;
        let rnorm = r.norm();
        if !rnorm.is_finite() || rnorm > 1e8 * r0_norm.max(f64::MIN_POSITIVE) {
            return Err(LindynError::Diverged { iter: tau });
        }

        // Linearized residual, closed form.
        let mut lin_coeffs = DVector::zeros(m);
        for s in 0..m {
            let q: f64 = 1.0 - cfg.eta * lambdas[s] * lambdas[s];
            lin_coeffs[s] = q.powi(tau as i32) * a[s];
        }
        let r_lin = decomp.left_vectors() * &lin_coeffs;
        let gap = (&r - &r_lin).norm();

        // Parameter gap in the padded space: vect(W_tau - W_0) against
        // V * closed-form coefficients.
        let w_diff = current.input_weights() - &w0;
        let mut theta_diff = DVector::zeros(p);
        for s in 0..k {
            for j in 0..d {
                theta_diff[s * d + j] = w_diff[(s, j)];
            }
        }
        let lin_off = linearized_param_coefficients(decomp, &r0, cfg.eta, tau)?;
        let cross = decomp.right_vectors().tr_mul(&theta_diff);
        let param_gap_sq = theta_diff.norm_squared() - 2.0 * cross.dot(&lin_off)
            + lin_off.norm_squared();
        let param_gap = param_gap_sq.max(0.0).sqrt();
        let dist = w_diff.norm();

        worst_coupling = worst_coupling.max(gap);
        worst_param = worst_param.max(param_gap);
        worst_dist = worst_dist.max(dist);
        final_residual_norm = rnorm;

        if cfg.check_recursion {
            let j_tau = current.jacobian_dense(x)?;
            eps_traj = eps_traj.max(2.0 * spectral::operator_norm(&(&j_tau - &j_init)));
        }
        gaps.push(gap);
        lin_norms.push(r_lin.norm());

        records.push(CoupledRecord {
            iter: tau,
            residual_norm: rnorm,
            lin_residual_norm: r_lin.norm(),
            coupling_gap: gap,
            param_gap,
            dist_from_init: dist,
            info_residual_norm: split.projection_norm(&r, Subspace::Information)?,
            nuisance_residual_norm: split.projection_norm(&r, Subspace::Nuisance)?,
        });
    }

    let recursion = if cfg.check_recursion {
        for tau in 0..t_iters {
            let rhs = cfg.eta * (epsilon0 * epsilon0 + eps_traj * beta) * lin_norms[tau]
                + (1.0 + cfg.eta * eps_traj * eps_traj) * gaps[tau];
            recursion_worst = recursion_worst.max(gaps[tau + 1] - rhs);
        }
        Some(RecursionCheck {
            epsilon_trajectory: eps_traj,
            max_violation: recursion_worst,
            holds: recursion_worst <= 1e-12 * r0_norm.max(1.0),
        })
    } else {
        None
    };

    let residual_bound = 0.6 * cfg.delta * cfg.alpha / beta * r0_norm;
    let param_bound = cfg.delta * cfg.gamma / cfg.alpha * r0_norm;
    let dist_bound = pinv_r0 + cfg.gamma / cfg.alpha * pi_n0 + cfg.delta * cfg.gamma / cfg.alpha * r0_norm;
    let final_bound = (-cfg.gamma).exp() * pi_i0 + pi_n0 + cfg.delta * cfg.alpha / beta * r0_norm;

    let report = MetaReport {
        residual_tracking: InequalityCheck::new(residual_bound, worst_coupling),
        param_tracking: InequalityCheck::new(param_bound, worst_param),
        distance_bound: InequalityCheck::new(dist_bound, worst_dist),
        final_residual: InequalityCheck::new(final_bound, final_residual_norm),
        hypotheses,
        recursion,
    };
    let trajectory = CoupledTrajectory {
        eta: cfg.eta,
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        delta: cfg.delta,
        t_iters,
        epsilon0,
        epsilon_probe,
        records,
    };
    Ok((trajectory, report))
}

/// Parameters of the scalar residual-perturbation growth bound.
///
/// For sequences obeying `r~_tau <= (1-eta alpha^2)^tau rho_plus + rho_minus`
/// and `e_tau <= (1+eta eps^2) e_{tau-1} + eta theta r~_{tau-1}` with
/// `e_0 = 0`, `eta <= 1/alpha^2`, and `alpha >= sqrt(2 Gamma) eps`, every
/// `e_tau` with `tau <= T = Gamma/(eta alpha^2)` is at most
/// `theta * 2 (Gamma rho_minus + rho_plus) / alpha^2`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthBoundParams {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub theta: f64,
}

/// Outcome of simulating the extremal sequences of the growth bound.
#[derive(Debug, Clone, Copy)]
pub struct GrowthBoundOutcome {
    pub max_e: f64,
    pub bound: f64,
    pub t_iters: usize,
    pub holds: bool,
}

/// Simulate the extremal (equality) sequences of the scalar recurrence and
/// compare against the closed-form bound.
pub fn growth_bound_check(p: &GrowthBoundParams) -> Result<GrowthBoundOutcome, LindynError> {
    if p.eta * p.alpha * p.alpha > 1.0 + 1e-12 {
        return Err(LindynError::ParameterRange(format!(
            "eta = {} exceeds 1/alpha^2",
            p.eta
        )));
    }
    if p.alpha + 1e-12 < (2.0 * p.gamma).sqrt() * p.epsilon {
        return Err(LindynError::ParameterRange(format!(
            "alpha = {} below sqrt(2 Gamma) epsilon",
            p.alpha
        )));
    }
    if p.gamma <= 0.0 || p.rho_plus < 0.0 || p.rho_minus < 0.0 || p.theta < 0.0 {
        return Err(LindynError::ParameterRange(
            "gamma must be positive and rho/theta nonnegative".into(),
        ));
    }
    let t_iters = (p.gamma / (p.eta * p.alpha * p.alpha)).floor() as usize;
    let contraction = 1.0 - p.eta * p.alpha * p.alpha;
    let growth = 1.0 + p.eta * p.epsilon * p.epsilon;
    let mut e = 0.0f64;
    let mut max_e = 0.0f64;
    let mut decay = 1.0f64;
    for _ in 0..t_iters {
        let r_lin = decay * p.rho_plus + p.rho_minus;
        e = growth * e + p.eta * p.theta * r_lin;
        decay *= contraction;
        max_e = max_e.max(e);
    }
    let bound = p.theta * 2.0 * (p.gamma * p.rho_minus + p.rho_plus) / (p.alpha * p.alpha);
    Ok(GrowthBoundOutcome {
        max_e,
        bound,
        t_iters,
        holds: max_e <= bound * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shallownet::{init_random_with, Activation};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn randn_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn linearized_residual_base_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let j = randn_matrix(&mut rng, 4, 6);
        let decomp = spectral::svd(&j).unwrap();
        let r0 = randn_vector(&mut rng, 4);
        let eta = 0.5 / decomp.top_singular_value().powi(2);

        // tau = 0 returns r0.
        let r = linearized_residual(&decomp, &r0, eta, 0).unwrap();
        assert!((r - &r0).norm() < 1e-12);

        // Scalar case: lambda = 1, eta = 1, tau = 1 kills the residual.
        let d1 = spectral::svd(&DMatrix::identity(1, 1)).unwrap();
        let out = linearized_residual(&d1, &DVector::from_vec(vec![3.0]), 1.0, 1).unwrap();
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn linearized_residual_matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let j = randn_matrix(&mut rng, 5, 8);
            let decomp = spectral::svd(&j).unwrap();
            let r0 = randn_vector(&mut rng, 5);
            let eta = (0.3 + 0.1 * trial as f64) / decomp.top_singular_value().powi(2);
            let gram = &j * j.transpose();
            let mut iter = r0.clone();
            for tau in 0..=50usize {
                let closed = linearized_residual(&decomp, &r0, eta, tau).unwrap();
                assert!(
                    (&closed - &iter).norm() <= 1e-10 * r0.norm(),
                    "tau {tau}: gap {}",
                    (&closed - &iter).norm()
                );
                iter = &iter - (&gram * &iter) * eta;
            }
        }
    }

    #[test]
    fn linearized_params_match_explicit_gd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..5 {
            let j = randn_matrix(&mut rng, 4, 7);
            let decomp = spectral::svd(&j).unwrap();
            let r0 = randn_vector(&mut rng, 4);
            let eta = 0.4 / decomp.top_singular_value().powi(2);
            // Explicit GD on the linearized least squares:
            // offset_{tau+1} = offset - eta J^T (J offset + r0).
            let jp = decomp.reconstruct();
            let mut offset = DVector::zeros(decomp.param_dim());
            for tau in 0..=50usize {
                let closed = linearized_param_offset(&decomp, &r0, eta, tau).unwrap();
                assert!(
                    (&closed - &offset).norm() <= 1e-10 * (offset.norm() + r0.norm()),
                    "tau {tau}"
                );
                offset = &offset - jp.transpose() * ((&jp * &offset) + &r0) * eta;
            }

            // tau = 0 -> 0; tau = 1 -> -eta J^T r0.
            let zero = linearized_param_offset(&decomp, &r0, eta, 0).unwrap();
            assert_eq!(zero.norm(), 0.0);
            let one = linearized_param_offset(&decomp, &r0, eta, 1).unwrap();
            let direct = jp.transpose() * &r0 * (-eta);
            assert!((one - direct).norm() < 1e-12 * r0.norm());
        }
    }

    #[test]
    fn linearized_param_offset_handles_zero_singulars() {
        // Rank-deficient reference: zero singular values contribute zero
        // offset (series-safe limit).
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let decomp = spectral::svd(&j).unwrap();
        let r0 = DVector::from_vec(vec![1.0, 1.0]);
        let off = linearized_param_offset(&decomp, &r0, 0.5, 10).unwrap();
        assert!(off.iter().all(|v| v.is_finite()));
        // theta-offset norm bound of the tracked form with r = 1:
        // sum_{s<=r} a_s^2/lambda_s^2 + tau^2 eta^2 sum_{s>r} lambda_s^2 a_s^2.
        assert!(off.norm_squared() <= 1.0 + 1e-12);
    }

    #[test]
    fn step_size_guard() {
        let decomp = spectral::svd(&(DMatrix::identity(2, 2) * 2.0)).unwrap();
        let r0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            linearized_residual(&decomp, &r0, 0.3, 1),
            Err(LindynError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn reference_epsilon_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let j0 = randn_matrix(&mut rng, 3, 5);
        let reference = ReferenceJacobian::from_matrix(j0.clone()).unwrap();
        assert!(reference_epsilon(&reference, &j0).unwrap() < 1e-10);

        // Scalar case J0 = (1), J = (2): max(1, sqrt(3)) = sqrt(3).
        let r = ReferenceJacobian::from_matrix(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let eps = reference_epsilon(&r, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((eps - 3.0f64.sqrt()).abs() < 1e-12);

        // J = psd_sqrt(J0 J0^T) (padded): Gram term vanishes, direct term
        // is measured.
        let gram_root = spectral::psd_sqrt(&(&j0 * j0.transpose())).unwrap();
        let mut padded = DMatrix::zeros(3, 5);
        padded.view_mut((0, 0), (3, 3)).copy_from(&gram_root);
        let r2 = ReferenceJacobian::from_matrix(padded.clone()).unwrap();
        let eps2 = reference_epsilon(&r2, &j0).unwrap();
        let direct = {
            let mut j0p = DMatrix::zeros(3, 5);
            j0p.view_mut((0, 0), (3, 5)).copy_from(&j0);
            spectral::operator_norm(&(j0p - &padded))
        };
        assert!((eps2 - direct).abs() <= 1e-7 * direct.max(1.0));
    }

    #[test]
    fn lipschitz_probe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut x = randn_matrix(&mut rng, 6, 4);
        for i in 0..6 {
            let norm = x.row(i).norm();
            x.row_mut(i).scale_mut(1.0 / norm);
        }
        let net = init_random_with(5, 4, 2, 0.8, 3, Activation::Softplus).unwrap();
        assert_eq!(lipschitz_probe(&net, &x, 0.0, 10, 1).unwrap(), 0.0);

        let lin = init_random_with(5, 4, 2, 0.8, 3, Activation::Identity).unwrap();
        assert_eq!(lipschitz_probe(&lin, &x, 2.0, 10, 1).unwrap(), 0.0);

        // Lipschitz bound: probe <= B sqrt(K) |V|_inf |X| * radius.
        let radius = 0.7;
        let probe = lipschitz_probe(&net, &x, radius, 50, 2).unwrap();
        let vinf = net
            .output_weights()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let bound = 1.0 * (2.0f64).sqrt() * vinf * spectral::operator_norm(&x) * radius;
        assert!(probe <= bound * (1.0 + 1e-9), "{probe} vs {bound}");
    }

    #[test]
    fn coupled_run_identity_activation_gaps_vanish() {
        // Linear model: the network is its own linearization, so residual
        // and parameter gaps vanish to roundoff when the reference is the
        // exact Jacobian.
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut x = randn_matrix(&mut rng, 6, 4);
        for i in 0..6 {
            let norm = x.row(i).norm();
            x.row_mut(i).scale_mut(1.0 / norm);
        }
        let net = init_random_with(8, 4, 2, 1.0, 5, Activation::Identity).unwrap();
        let y = randn_vector(&mut rng, 12);
        let jac = net.jacobian_dense(&x).unwrap();
        let reference = ReferenceJacobian::from_matrix(jac).unwrap();
        let beta = reference.beta();
        let lam = reference.decomposition().singular_values().clone();
        let alpha = lam[3];
        let cfg = CoupledRunConfig {
            alpha,
            gamma: 1.5,
            eta: 0.9 / (beta * beta),
            delta: 0.5,
            lipschitz_probes: 5,
            probe_seed: 1,
            check_recursion: true,
        };
        let (traj, report) = coupled_run(&net, &x, &y, &reference, &cfg).unwrap();
        let r0 = traj.records[0].residual_norm;
        for rec in &traj.records {
            assert!(rec.coupling_gap <= 1e-9 * r0, "gap {}", rec.coupling_gap);
            assert!(rec.param_gap <= 1e-8 * r0.max(1.0), "pgap {}", rec.param_gap);
        }
        assert!(report.all_inequalities_hold());
        assert_eq!(traj.epsilon0, 0.0);
        assert_eq!(traj.epsilon_probe, 0.0);
        assert!(report.hypotheses.hypotheses_met_up_to_sampling);
        let rec = report.recursion.unwrap();
        assert!(rec.holds, "recursion violation {}", rec.max_violation);
    }

    #[test]
    fn coupled_run_wide_softplus_tracks() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let n = 8;
        let mut x = randn_matrix(&mut rng, n, 5);
        for i in 0..n {
            let norm = x.row(i).norm();
            x.row_mut(i).scale_mut(1.0 / norm);
        }
        // One-hot labels for K = 2.
        let mut y = DVector::zeros(2 * n);
        for i in 0..n {
            let class = i % 2;
            y[class * n + i] = 1.0;
        }
        let net = init_random_with(600, 5, 2, 1.0, 7, Activation::Softplus).unwrap();
        let jac = net.jacobian_dense(&x).unwrap();
        let reference = ReferenceJacobian::from_matrix(jac).unwrap();
        let beta = reference.beta();
        let lam = reference.decomposition().singular_values();
        // Cutoff at the largest relative gap in the spectrum.
        let mut best = (0usize, 0.0f64);
        for s in 0..(2 * n - 1) {
            let ratio = lam[s] / lam[s + 1].max(1e-300);
            if ratio > best.1 {
                best = (s, ratio);
            }
        }
        let alpha = (lam[best.0] * lam[best.0 + 1]).sqrt();
        let cfg = CoupledRunConfig {
            alpha,
            gamma: 1.5,
            eta: 1.0 / (beta * beta),
            delta: 0.5,
            lipschitz_probes: 3,
            probe_seed: 9,
            check_recursion: false,
        };
        let (traj, report) = coupled_run(&net, &x, &y, &reference, &cfg).unwrap();
        assert!(
            report.final_residual.holds,
            "final residual {} vs bound {}",
            report.final_residual.worst,
            report.final_residual.bound
        );
        assert!(report.residual_tracking.holds);
        // Monotone residual shrinkage on the information space.
        let first = &traj.records[0];
        let last = traj.records.last().unwrap();
        assert!(last.info_residual_norm < 0.3 * first.info_residual_norm);
        // Nuisance projection of the linearized residual never grows
        // (checked via closed form).
        let decomp = reference.decomposition();
        let split = split_at_cutoff(decomp, alpha).unwrap();
        let r0 = net.forward_concat(&x).unwrap() - &y;
        let mut prev_info = f64::INFINITY;
        for tau in 0..=traj.t_iters {
            let lin = linearized_residual(decomp, &r0, cfg.eta, tau).unwrap();
            let info = split.projection_norm(&lin, Subspace::Information).unwrap();
            let nuis = split.projection_norm(&lin, Subspace::Nuisance).unwrap();
            let contraction = (1.0 - cfg.eta * alpha * alpha).powi(tau as i32);
            let info0 = split.projection_norm(&r0, Subspace::Information).unwrap();
            let nuis0 = split.projection_norm(&r0, Subspace::Nuisance).unwrap();
            assert!(info <= contraction * info0 + 1e-10);
            assert!(nuis <= nuis0 + 1e-10);
            assert!(info <= prev_info + 1e-12);
            prev_info = info;
        }
    }

    #[test]
    fn coupled_run_validates_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let x = randn_matrix(&mut rng, 3, 2);
        let net = init_random_with(4, 2, 1, 1.0, 1, Activation::Softplus).unwrap();
        let y = randn_vector(&mut rng, 3);
        let reference =
            ReferenceJacobian::from_matrix(net.jacobian_dense(&x).unwrap()).unwrap();
        let beta = reference.beta();
        let base = CoupledRunConfig {
            alpha: reference.decomposition().singular_values()[1],
            gamma: 2.0,
            eta: 0.5 / (beta * beta),
            delta: 0.1,
            lipschitz_probes: 0,
            probe_seed: 0,
            check_recursion: false,
        };
        let too_big = CoupledRunConfig { eta: 2.0 / (beta * beta), ..base };
        assert!(matches!(
            coupled_run(&net, &x, &y, &reference, &too_big),
            Err(LindynError::StepTooLarge { .. })
        ));
        let bad_gamma = CoupledRunConfig { gamma: 0.5, ..base };
        assert!(matches!(
            coupled_run(&net, &x, &y, &reference, &bad_gamma),
            Err(LindynError::ParameterRange(_))
        ));
        let bad_delta = CoupledRunConfig { delta: 0.0, ..base };
        assert!(matches!(
            coupled_run(&net, &x, &y, &reference, &bad_delta),
            Err(LindynError::ParameterRange(_))
        ));
    }

    #[test]
    fn growth_bound_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for _ in 0..1000 {
            let gamma: f64 = 1.0 + 4.0 * rng.random::<f64>();
            let alpha: f64 = 0.2 + rng.random::<f64>();
            let epsilon = alpha / (2.0 * gamma).sqrt() * rng.random::<f64>();
            let t = (gamma.ceil() as usize) + rng.random_range(0..200);
            let eta = gamma / (t as f64 * alpha * alpha);
            let p = GrowthBoundParams {
                gamma,
                alpha,
                epsilon,
                eta,
                rho_plus: rng.random::<f64>() * 3.0,
                rho_minus: rng.random::<f64>(),
                theta: rng.random::<f64>() * 2.0,
            };
            let out = growth_bound_check(&p).unwrap();
            assert!(
                out.holds,
                "growth bound violated: max_e {} > bound {} at {p:?}",
                out.max_e, out.bound
            );
        }
    }

    #[test]
    fn growth_bound_rejects_bad_hypotheses() {
        let p = GrowthBoundParams {
            gamma: 2.0,
            alpha: 0.1,
            epsilon: 0.5,
            eta: 1.0,
            rho_plus: 1.0,
            rho_minus: 1.0,
            theta: 1.0,
        };
        assert!(growth_bound_check(&p).is_err());
    }
}
