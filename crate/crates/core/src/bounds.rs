//! Evaluators for the classification-error bound formulas and the
//! alignment diagnostics they consume.
//!
//! Each evaluator reports a [`BoundReport`] with the bias term, the
//! variance term, named slack terms, and their exact sum. All
//! inequality-up-to-constant factors are evaluated with constant 1 and the
//! reports are formula evaluations, not certified probabilities; the
//! `lesssim_constants_set_to_one` flag in the echoed inputs records this.

use crate::spectral::{InfoNuisanceSplit, SpectralError, Subspace};
use nalgebra::DVector;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("zero-norm vector: {0}")]
    ZeroNorm(&'static str),
    #[error("residual bound C_r = {c_r} is below |r0|/sqrt(n) = {observed}")]
    CrTooSmall { c_r: f64, observed: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Alignment of a label and residual vector with an information/nuisance
/// split: the six ratios of the diagnostics table.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AlignmentMetrics {
    pub y_info_ratio: f64,
    pub y_nuisance_ratio: f64,
    pub y_pinv_ratio: f64,
    pub r0_info_ratio: f64,
    pub r0_nuisance_ratio: f64,
    pub r0_pinv_ratio: f64,
}

/// Compute `|Pi_I v|/|v|`, `|Pi_N v|/|v|`, `|J_I^+ v|/|v|` for the label
/// vector and the initial residual.
pub fn alignment_metrics(
    split: &InfoNuisanceSplit,
    y: &DVector<f64>,
    r0: &DVector<f64>,
) -> Result<AlignmentMetrics, BoundsError> {
    let y_norm = y.norm();
    let r0_norm = r0.norm();
    if y_norm == 0.0 {
        return Err(BoundsError::ZeroNorm("label vector"));
    }
    if r0_norm == 0.0 {
        return Err(BoundsError::ZeroNorm("initial residual"));
    }
    Ok(AlignmentMetrics {
        y_info_ratio: split.projection_norm(y, Subspace::Information)? / y_norm,
        y_nuisance_ratio: split.projection_norm(y, Subspace::Nuisance)? / y_norm,
        y_pinv_ratio: split.truncated_pinv_norm(y)? / y_norm,
        r0_info_ratio: split.projection_norm(r0, Subspace::Information)? / r0_norm,
        r0_nuisance_ratio: split.projection_norm(r0, Subspace::Nuisance)? / r0_norm,
        r0_pinv_ratio: split.truncated_pinv_norm(r0)? / r0_norm,
    })
}

/// A bound evaluation: bias + variance + named slack terms, with `total`
/// their exact sum, plus echoed inputs and named variant evaluations.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundReport {
    pub bias: f64,
    pub variance: f64,
    pub slack: BTreeMap<String, f64>,
    pub total: f64,
    pub inputs: BTreeMap<String, f64>,
    /// Alternative evaluations (simplified form, full-space form,
    /// early-stopping-distance variance).
    pub variants: BTreeMap<String, f64>,
}

impl BoundReport {
    fn assemble(
        bias: f64,
        variance: f64,
        slack: BTreeMap<String, f64>,
        inputs: BTreeMap<String, f64>,
        variants: BTreeMap<String, f64>,
    ) -> Self {
        let mut total = bias + variance;
        for v in slack.values() {
            total += v;
        }
        BoundReport {
            bias,
            variance,
            slack,
            total,
            inputs,
            variants,
        }
    }
}

/// Scalar summaries feeding the random-initialization bound; extracted
/// from a split + label vector or supplied directly for recomputation.
#[derive(Debug, Clone, Copy)]
pub struct RandomInitTerms {
    /// `|Pi_N(y)|`.
    pub pi_n_y: f64,
    /// `|Pi_I(y)|`.
    pub pi_i_y: f64,
    /// `|J_I^+ y|`.
    pub pinv_y: f64,
    /// Early stopping distance of y at (alpha_0, Gamma); used for the
    /// variance variant.
    pub early_stopping_distance: Option<f64>,
    /// Cutoff on the kernel-sqrt spectrum.
    pub alpha0: f64,
    /// Whether the information space is the whole output space.
    pub full_rank: bool,
}

/// Parameters of the random-initialization bound.
#[derive(Debug, Clone, Copy)]
pub struct RandomInitParams {
    pub n: usize,
    pub num_classes: usize,
    pub activation_bound: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub confidence_delta: f64,
    /// Normalized cutoff; when absent it is derived from its definition
    /// `alpha_bar = alpha_0 / (B sqrt(K |X|) n^{1/4})`.
    pub alpha_bar: Option<f64>,
    pub opnorm_x: f64,
}

fn validate_common(
    gamma: f64,
    zeta: f64,
    delta: f64,
    n: usize,
    b: f64,
) -> Result<(), BoundsError> {
    if !(0.0..=0.5).contains(&zeta) {
        return Err(BoundsError::ParameterRange(format!(
            "zeta must lie in [0, 1/2], got {zeta}"
        )));
    }
    if gamma < 1.0 {
        return Err(BoundsError::ParameterRange(format!(
            "gamma must be at least 1, got {gamma}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundsError::ParameterRange(format!(
            "confidence delta must lie in (0, 1), got {delta}"
        )));
    }
    if n == 0 {
        return Err(BoundsError::ParameterRange("n must be positive".into()));
    }
    if b <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "activation bound must be positive".into(),
        ));
    }
    Ok(())
}

/// Random-initialization classification-error bound from precomputed
/// scalar terms:
/// `2|Pi_N y|/sqrt(n) + (12 B sqrt(K)/sqrt(n)) (|J_I^+ y| + (Gamma/alpha_0)|Pi_N y|)
///  + 12 (1 + Gamma/(alpha_bar (n |X|^2)^{1/4})) zeta
///  + 5 sqrt(log(2/delta)/n) + 2 e^{-Gamma}`.
pub fn random_init_bound_from_terms(
    terms: &RandomInitTerms,
    params: &RandomInitParams,
) -> Result<BoundReport, BoundsError> {
    validate_common(
        params.gamma,
        params.zeta,
        params.confidence_delta,
        params.n,
        params.activation_bound,
    )?;
    if params.opnorm_x <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "feature operator norm must be positive".into(),
        ));
    }
    if terms.alpha0 <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "cutoff alpha_0 must be positive".into(),
        ));
    }
    let n = params.n as f64;
    let kk = params.num_classes as f64;
    let b = params.activation_bound;
    let alpha_bar = params.alpha_bar.unwrap_or_else(|| {
        terms.alpha0 / (b * (kk * params.opnorm_x).sqrt() * n.powf(0.25))
    });
    if alpha_bar <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "alpha_bar must be positive".into(),
        ));
    }

    let bias = 2.0 * terms.pi_n_y / n.sqrt();
    let variance = 12.0 * b * kk.sqrt() / n.sqrt()
        * (terms.pinv_y + params.gamma / terms.alpha0 * terms.pi_n_y);
    let quarter_root = (n * params.opnorm_x * params.opnorm_x).powf(0.25);
    let zeta_term = 12.0 * (1.0 + params.gamma / (alpha_bar * quarter_root)) * params.zeta;
    let confidence = 5.0 * ((2.0 / params.confidence_delta).ln() / n).sqrt();
    let early_stop = 2.0 * (-params.gamma).exp();

    let mut slack = BTreeMap::new();
    slack.insert("zeta_term".into(), zeta_term);
    slack.insert("confidence".into(), confidence);
    slack.insert("early_stop_tail".into(), early_stop);

    let mut inputs = BTreeMap::new();
    inputs.insert("n".into(), n);
    inputs.insert("num_classes".into(), kk);
    inputs.insert("activation_bound".into(), b);
    inputs.insert("gamma".into(), params.gamma);
    inputs.insert("zeta".into(), params.zeta);
    inputs.insert("confidence_delta".into(), params.confidence_delta);
    inputs.insert("alpha0".into(), terms.alpha0);
    inputs.insert("alpha_bar".into(), alpha_bar);
    inputs.insert("opnorm_x".into(), params.opnorm_x);
    inputs.insert("pi_n_y".into(), terms.pi_n_y);
    inputs.insert("pi_i_y".into(), terms.pi_i_y);
    inputs.insert("pinv_y".into(), terms.pinv_y);
    inputs.insert("lesssim_constants_set_to_one".into(), 1.0);

    // Simplified form: pinv term replaced by its |y|/alpha_0 bound folded
    // into 36 Gamma / (alpha_bar (n |X|^2)^{1/4}).
    let simplified = bias
        + 36.0 * params.gamma / (alpha_bar * quarter_root)
        + 12.0 * params.zeta
        + confidence
        + early_stop;
    let mut variants = BTreeMap::new();
    variants.insert("simplified_total".into(), simplified);
    if terms.full_rank {
        // Full information space: bias disappears and the bound reduces
        // to sqrt(K/n) |J^+ y| + confidence (constant 1).
        variants.insert(
            "full_space_total".into(),
            (kk / n).sqrt() * terms.pinv_y + (2.0f64 / params.confidence_delta).ln().sqrt() / n.sqrt(),
        );
    }
    if let Some(dist) = terms.early_stopping_distance {
        variants.insert(
            "variance_early_stopping".into(),
            12.0 * b * kk.sqrt() / n.sqrt() * dist,
        );
    }

    Ok(BoundReport::assemble(bias, variance, slack, inputs, variants))
}

/// Random-initialization bound from a split of the kernel square root at
/// `alpha_0` and the concatenated label vector.
pub fn random_init_bound(
    split: &InfoNuisanceSplit,
    y: &DVector<f64>,
    params: &RandomInitParams,
) -> Result<BoundReport, BoundsError> {
    if y.norm() == 0.0 {
        return Err(BoundsError::ZeroNorm("label vector"));
    }
    let terms = RandomInitTerms {
        pi_n_y: split.projection_norm(y, Subspace::Nuisance)?,
        pi_i_y: split.projection_norm(y, Subspace::Information)?,
        pinv_y: split.truncated_pinv_norm(y)?,
        early_stopping_distance: split.early_stopping_distance(y, params.gamma).ok(),
        alpha0: split.cutoff(),
        full_rank: split.rank() == split.output_dim(),
    };
    random_init_bound_from_terms(&terms, params)
}

/// Scalar summaries feeding the arbitrary-initialization bound.
#[derive(Debug, Clone, Copy)]
pub struct ArbitraryInitTerms {
    pub pi_n_r0: f64,
    pub pinv_r0: f64,
    pub r0_norm: f64,
    pub early_stopping_distance: Option<f64>,
    pub alpha: f64,
}

/// Parameters of the arbitrary-initialization bound.
#[derive(Debug, Clone, Copy)]
pub struct ArbitraryInitParams {
    pub n: usize,
    pub nu: f64,
    pub activation_bound: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub confidence_delta: f64,
    /// Residual scale bound, must dominate `|r0|/sqrt(n)`.
    pub c_r: f64,
}

/// Arbitrary-initialization classification-error bound from precomputed
/// terms:
/// `2|Pi_N r0|/sqrt(n) + (12 nu B/sqrt(n)) (|J_I^+ r0| + (Gamma/alpha)|Pi_N r0|)
///  + 5 sqrt(log(2/delta)/n) + 2 C_r (e^{-Gamma} + zeta)`.
pub fn arbitrary_init_bound_from_terms(
    terms: &ArbitraryInitTerms,
    params: &ArbitraryInitParams,
) -> Result<BoundReport, BoundsError> {
    validate_common(
        params.gamma,
        params.zeta,
        params.confidence_delta,
        params.n,
        params.activation_bound,
    )?;
    if params.nu <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "output scale nu must be positive".into(),
        ));
    }
    if terms.alpha <= 0.0 {
        return Err(BoundsError::ParameterRange(
            "cutoff alpha must be positive".into(),
        ));
    }
    let n = params.n as f64;
    let observed = terms.r0_norm / n.sqrt();
    if observed > params.c_r {
        return Err(BoundsError::CrTooSmall {
            c_r: params.c_r,
            observed,
        });
    }
    let b = params.activation_bound;
    let bias = 2.0 * terms.pi_n_r0 / n.sqrt();
    let variance = 12.0 * params.nu * b / n.sqrt()
        * (terms.pinv_r0 + params.gamma / terms.alpha * terms.pi_n_r0);
    let confidence = 5.0 * ((2.0 / params.confidence_delta).ln() / n).sqrt();
    let tail = 2.0 * params.c_r * ((-params.gamma).exp() + params.zeta);

    let mut slack = BTreeMap::new();
    slack.insert("confidence".into(), confidence);
    slack.insert("residual_tail".into(), tail);

    let mut inputs = BTreeMap::new();
    inputs.insert("n".into(), n);
    inputs.insert("nu".into(), params.nu);
    inputs.insert("activation_bound".into(), b);
    inputs.insert("gamma".into(), params.gamma);
    inputs.insert("zeta".into(), params.zeta);
    inputs.insert("confidence_delta".into(), params.confidence_delta);
    inputs.insert("c_r".into(), params.c_r);
    inputs.insert("alpha".into(), terms.alpha);
    inputs.insert("pi_n_r0".into(), terms.pi_n_r0);
    inputs.insert("pinv_r0".into(), terms.pinv_r0);
    inputs.insert("r0_norm".into(), terms.r0_norm);
    inputs.insert("lesssim_constants_set_to_one".into(), 1.0);

    let mut variants = BTreeMap::new();
    if let Some(dist) = terms.early_stopping_distance {
        variants.insert(
            "variance_early_stopping".into(),
            12.0 * params.nu * b / n.sqrt() * dist,
        );
    }

    Ok(BoundReport::assemble(bias, variance, slack, inputs, variants))
}

/// Arbitrary-initialization bound from a split of the initial Jacobian at
/// `alpha` and the initial residual.
pub fn arbitrary_init_bound(
    split: &InfoNuisanceSplit,
    r0: &DVector<f64>,
    params: &ArbitraryInitParams,
) -> Result<BoundReport, BoundsError> {
    let terms = ArbitraryInitTerms {
        pi_n_r0: split.projection_norm(r0, Subspace::Nuisance)?,
        pinv_r0: split.truncated_pinv_norm(r0)?,
        r0_norm: r0.norm(),
        early_stopping_distance: split.early_stopping_distance(r0, params.gamma).ok(),
        alpha: split.cutoff(),
    };
    arbitrary_init_bound_from_terms(&terms, params)
}

/// Mixture-model bound: error `Gamma sqrt(K^2 C / (n lambda_M))` after
/// `T = ceil(2 Gamma K^2 C / lambda_M)` iterations (constant 1).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GmmBound {
    pub error_bound: f64,
    pub t_iterations: usize,
}

pub fn gmm_bound(
    num_classes: usize,
    clusters_per_class: usize,
    n: usize,
    lambda_m: f64,
    gamma: f64,
) -> Result<GmmBound, BoundsError> {
    if lambda_m <= 0.0 {
        return Err(BoundsError::ParameterRange(format!(
            "lambda_M must be positive, got {lambda_m}"
        )));
    }
    if gamma < 1.0 {
        return Err(BoundsError::ParameterRange(format!(
            "gamma must be at least 1, got {gamma}"
        )));
    }
    if n == 0 || num_classes == 0 || clusters_per_class == 0 {
        return Err(BoundsError::ParameterRange(
            "n, K, and C must be positive".into(),
        ));
    }
    let kk = num_classes as f64;
    let c = clusters_per_class as f64;
    let error_bound = gamma * (kk * kk * c / (n as f64 * lambda_m)).sqrt();
    let t_iterations = (2.0 * gamma * kk * kk * c / lambda_m).ceil() as usize;
    Ok(GmmBound {
        error_bound,
        t_iterations,
    })
}

/// Which width-requirement formula to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum WidthMode {
    /// Order-level: `ceil(Gamma^4 log n / (zeta^4 alpha_bar^8))`.
    Order,
    /// Explicit-constant form:
    /// `ceil(12e7 Gamma^4 K^4 B^8 |X|^6 n log n / (c^4 zeta^4 alpha_0^8))`.
    Appendix {
        num_classes: usize,
        activation_bound: f64,
        opnorm_x: f64,
        info_alignment_c: f64,
        alpha0: f64,
    },
}

/// Minimum hidden width for the random-initialization guarantee: the
/// ceiling of the selected formula. Returned as f64 because the
/// explicit-constant form easily exceeds any integer type. `n` is
/// real-valued so the formula can be probed off the integers.
pub fn width_requirement(
    gamma: f64,
    zeta: f64,
    alpha_bar: f64,
    n: f64,
    mode: WidthMode,
) -> Result<f64, BoundsError> {
    if gamma <= 0.0 || zeta <= 0.0 || n <= 1.0 {
        return Err(BoundsError::ParameterRange(
            "gamma, zeta must be positive and n > 1".into(),
        ));
    }
    let value = match mode {
        WidthMode::Order => {
            if alpha_bar <= 0.0 {
                return Err(BoundsError::ParameterRange(
                    "alpha_bar must be positive".into(),
                ));
            }
            gamma.powi(4) * n.ln() / (zeta.powi(4) * alpha_bar.powi(8))
        }
        WidthMode::Appendix {
            num_classes,
            activation_bound,
            opnorm_x,
            info_alignment_c,
            alpha0,
        } => {
            if num_classes == 0
                || activation_bound <= 0.0
                || opnorm_x <= 0.0
                || info_alignment_c <= 0.0
                || alpha0 <= 0.0
            {
                return Err(BoundsError::ParameterRange(
                    "appendix mode requires positive K, B, |X|, c, alpha_0".into(),
                ));
            }
            let kk = num_classes as f64;
            12.0e7 * gamma.powi(4) * kk.powi(4) * activation_bound.powi(8) * opnorm_x.powi(6) * n
                * n.ln()
                / (info_alignment_c.powi(4) * zeta.powi(4) * alpha0.powi(8))
        }
    };
    if !value.is_finite() {
        return Err(BoundsError::ParameterRange(
            "width requirement overflowed".into(),
        ));
    }
    Ok(value.ceil())
}
