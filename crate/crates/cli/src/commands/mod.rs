//! The experiment commands. Each is a pure function of its config: it
//! validates, computes, and writes CSV/JSON into the output directory.

pub mod bound_eval;
pub mod corrupt_sweep;
pub mod gmm_spectrum;
pub mod kernel_check;
pub mod linear_demo;
pub mod meta_verify;
pub mod train_track;

use crate::config::{AlphaRule, MixtureBlock, SplitSource};
use crate::error::{from_data, from_net, from_ntk, from_spectral, CliError};
use nalgebra::{DMatrix, DVector};
use ntk_spectra_core::data::{
    classification_error, corrupt_labels, gen_gmm, ClassificationDataset, MixtureSpec,
};
use ntk_spectra_core::ntk::{empirical_kernel, mc_kernel, KernelMatrix};
use ntk_spectra_core::shallownet::{init_random, ShallowNet};
use ntk_spectra_core::spectral::{self, split_at_cutoff, InfoNuisanceSplit, SpectralDecomposition, Subspace};
use std::sync::Arc;

/// Deterministic sub-stream derivation so one config seed drives several
/// independent generators.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(tag)
}

pub const TAG_CENTERS: u64 = 1;
pub const TAG_DATA: u64 = 2;
pub const TAG_NET: u64 = 3;
pub const TAG_KERNEL: u64 = 4;
pub const TAG_HOLDOUT: u64 = 5;
pub const TAG_CORRUPT: u64 = 6;
pub const TAG_PROBE: u64 = 7;
pub const TAG_MC: u64 = 8;

/// Build the mixture spec (centers from the seed's center stream) and
/// sample a dataset of size `n`.
pub fn build_mixture(
    block: &MixtureBlock,
    n: usize,
    seed: u64,
) -> Result<(MixtureSpec, ClassificationDataset), CliError> {
    let spec = MixtureSpec::with_random_centers(
        block.num_classes,
        block.clusters_per_class,
        block.dim,
        block.sigma,
        block.min_center_distance,
        n,
        block.sampling,
        sub_seed(seed, TAG_CENTERS),
    )
    .map_err(from_data)?;
    let ds = gen_gmm(&spec, sub_seed(seed, TAG_DATA)).map_err(from_data)?;
    Ok((spec, ds))
}

/// Sample a held-out dataset from the same mixture (fresh data stream).
pub fn build_holdout(
    spec: &MixtureSpec,
    holdout_n: usize,
    seed: u64,
) -> Result<ClassificationDataset, CliError> {
    let mut holdout_spec = spec.clone();
    holdout_spec.n = holdout_n;
    // Held-out draws are always i.i.d.
    holdout_spec.sampling = ntk_spectra_core::data::MixtureSampling::Iid;
    gen_gmm(&holdout_spec, sub_seed(seed, TAG_HOLDOUT)).map_err(from_data)
}

/// The kernel-regime step size `1/(nu^2 B^2 |X|^2)`.
pub fn theorem_step_size(nu: f64, activation_bound: f64, opnorm_x: f64) -> f64 {
    1.0 / (nu * nu * activation_bound * activation_bound * opnorm_x * opnorm_x)
}

/// Descending eigenvalues of a symmetric matrix.
pub fn descending_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eigs: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Singular values of the network Jacobian via the empirical kernel
/// (eigenvalues of `J J^T`), avoiding the dense wide SVD.
pub fn jacobian_singular_values(
    net: &ShallowNet,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>, CliError> {
    let kernel = empirical_kernel(net, x).map_err(from_ntk)?;
    Ok(descending_eigenvalues(&kernel)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect())
}

/// A split together with the spectrum it was cut from.
pub struct ResolvedSplit {
    pub split: InfoNuisanceSplit,
    pub alpha: f64,
    /// Cutoff converted to the Jacobian scale (identical unless the split
    /// lives on the kernel square root).
    pub alpha_jacobian: f64,
}

/// Build the requested split source matrix, decompose it, and cut at the
/// resolved alpha.
pub fn resolve_split(
    source: SplitSource,
    rule: &AlphaRule,
    net: &ShallowNet,
    final_net: Option<&ShallowNet>,
    x: &DMatrix<f64>,
    kernel: Option<&KernelMatrix>,
    nu: f64,
) -> Result<ResolvedSplit, CliError> {
    let kk = net.num_outputs() as f64;
    // Jacobian splits come from the eigendecomposition of J J^T (the
    // empirical kernel): left vectors and singular values match the SVD
    // of J, and only those enter projections and pseudoinverse norms.
    let (decomp, kernel_scale): (Arc<SpectralDecomposition>, Option<f64>) = match source {
        SplitSource::InitialJacobian => {
            let gram = empirical_kernel(net, x).map_err(from_ntk)?;
            (
                Arc::new(spectral::gram_sqrt_decomposition(&gram).map_err(from_spectral)?),
                None,
            )
        }
        SplitSource::FinalJacobian => {
            let target = final_net.ok_or_else(|| {
                CliError::Validation("final-jacobian split requires a trained net".into())
            })?;
            let gram = empirical_kernel(target, x).map_err(from_ntk)?;
            (
                Arc::new(spectral::gram_sqrt_decomposition(&gram).map_err(from_spectral)?),
                None,
            )
        }
        SplitSource::KernelSqrt => {
            let km = kernel.ok_or_else(|| {
                CliError::Validation("kernel split requires a Monte-Carlo kernel".into())
            })?;
            (
                Arc::new(
                    spectral::gram_sqrt_decomposition(&km.multiclass()).map_err(from_spectral)?,
                ),
                Some(nu / kk.sqrt()),
            )
        }
    };
    let lambdas: Vec<f64> = decomp.singular_values().iter().copied().collect();
    let alpha = rule.resolve(&lambdas)?;
    let split = split_at_cutoff(&decomp, alpha).map_err(from_spectral)?;
    Ok(ResolvedSplit {
        split,
        alpha,
        alpha_jacobian: alpha * kernel_scale.unwrap_or(1.0),
    })
}

/// One per-iteration row of a tracked training run.
pub struct TrackedRow {
    pub iter: usize,
    pub loss: f64,
    pub residual_norm: f64,
    pub info_residual_norm: f64,
    pub nuisance_residual_norm: f64,
    pub dist_frobenius: f64,
    pub dist_row_max: f64,
    pub train_error: f64,
    pub test_error: f64,
}

pub struct TrackedTraining {
    pub rows: Vec<TrackedRow>,
    pub eta: f64,
    pub iters: usize,
    pub alpha: f64,
    /// Alignment of (y, r0) with the initial-Jacobian split.
    pub initial_alignment: ntk_spectra_core::bounds::AlignmentMetrics,
    /// Alignment of (y, r0) with the final-Jacobian split.
    pub final_alignment: ntk_spectra_core::bounds::AlignmentMetrics,
    /// Nuisance fraction of the label vector on both splits.
    pub nuisance_fraction_initial: f64,
    pub nuisance_fraction_final: f64,
}

pub struct TrackedTrainingParams<'a> {
    pub train_ds: &'a ClassificationDataset,
    pub holdout_ds: &'a ClassificationDataset,
    pub k: usize,
    pub nu: f64,
    pub gamma: f64,
    pub eta: Option<f64>,
    pub iters: Option<usize>,
    pub log_stride: usize,
    pub split_source: SplitSource,
    pub alpha_rule: &'a AlphaRule,
    pub kernel_samples: usize,
    pub net_seed: u64,
    pub kernel_seed: u64,
}

/// Train a freshly initialized net on the dataset, tracking residual
/// projections on the requested split plus train/test classification
/// error, and compute the alignment tables for the initial and final
/// Jacobians.
pub fn tracked_training(p: &TrackedTrainingParams<'_>) -> Result<TrackedTraining, CliError> {
    let ds = p.train_ds;
    let x = &ds.x;
    let y = ds.concat_y();
    let net = init_random(p.k, ds.dim(), ds.num_classes, p.nu, p.net_seed).map_err(from_net)?;
    let b = net.activation().bound_b();
    let opnorm_x = spectral::operator_norm(x);
    let eta = p.eta.unwrap_or_else(|| theorem_step_size(p.nu, b, opnorm_x));

    let kernel = if p.split_source == SplitSource::KernelSqrt {
        Some(
            mc_kernel(
                x,
                net.activation(),
                ds.num_classes,
                p.kernel_samples,
                p.kernel_seed,
            )
            .map_err(from_ntk)?,
        )
    } else {
        None
    };

    // Stopping time from the split-source spectrum unless given. For the
    // final-Jacobian split the initial spectrum sets the horizon.
    let horizon_split = if p.split_source == SplitSource::FinalJacobian {
        resolve_split(
            SplitSource::InitialJacobian,
            p.alpha_rule,
            &net,
            None,
            x,
            kernel.as_ref(),
            p.nu,
        )?
    } else {
        resolve_split(
            p.split_source,
            p.alpha_rule,
            &net,
            None,
            x,
            kernel.as_ref(),
            p.nu,
        )?
    };
    let alpha_jac = horizon_split.alpha_jacobian;
    let iters = p.iters.unwrap_or_else(|| {
        (p.gamma / (eta * alpha_jac * alpha_jac)).ceil().max(1.0) as usize
    });

    // Drive the loop directly: residual vectors are kept per logged
    // iteration so a final-Jacobian split can be applied after the fact.
    let stride = p.log_stride.max(1);
    let w0 = net.input_weights().clone();
    let mut current = net.clone();
    let mut logged: Vec<(usize, DVector<f64>, f64, f64, f64, f64)> = Vec::new();
    let mut r0_norm = 0.0;
    for tau in 0..=iters {
        if tau > 0 {
            current = current.gd_step(x, &y, eta).map_err(from_net)?;
        }
        if tau % stride == 0 || tau == iters {
            let f = current.forward_concat(x).map_err(from_net)?;
            let r = f - &y;
            let rnorm = r.norm();
            if tau == 0 {
                r0_norm = rnorm;
            } else if !rnorm.is_finite() || rnorm > 1e8 * r0_norm.max(f64::MIN_POSITIVE) {
                return Err(CliError::Numerical(format!(
                    "training diverged at iteration {tau}"
                )));
            }
            let diff = current.input_weights() - &w0;
            let row_max = (0..diff.nrows())
                .map(|i| diff.row(i).norm())
                .fold(0.0f64, f64::max);
            let train_err = classification_error(&current, ds).map_err(from_data)?;
            let test_err = classification_error(&current, p.holdout_ds).map_err(from_data)?;
            logged.push((tau, r, diff.norm(), row_max, train_err, test_err));
        }
    }

    let tracking_split = if p.split_source == SplitSource::FinalJacobian {
        resolve_split(
            SplitSource::FinalJacobian,
            p.alpha_rule,
            &net,
            Some(&current),
            x,
            kernel.as_ref(),
            p.nu,
        )?
    } else {
        horizon_split
    };

    let mut rows = Vec::with_capacity(logged.len());
    for (tau, r, dist_f, dist_row, train_err, test_err) in &logged {
        let info = tracking_split
            .split
            .projection_norm(r, Subspace::Information)
            .map_err(from_spectral)?;
        let nuis = tracking_split
            .split
            .projection_norm(r, Subspace::Nuisance)
            .map_err(from_spectral)?;
        rows.push(TrackedRow {
            iter: *tau,
            loss: 0.5 * r.norm_squared(),
            residual_norm: r.norm(),
            info_residual_norm: info,
            nuisance_residual_norm: nuis,
            dist_frobenius: *dist_f,
            dist_row_max: *dist_row,
            train_error: *train_err,
            test_error: *test_err,
        });
    }

    // Alignment tables on the initial and final Jacobian splits.
    let r0 = net.forward_concat(x).map_err(from_net)? - &y;
    let initial_split = resolve_split(
        SplitSource::InitialJacobian,
        p.alpha_rule,
        &net,
        None,
        x,
        None,
        p.nu,
    )?;
    let final_split = resolve_split(
        SplitSource::FinalJacobian,
        p.alpha_rule,
        &net,
        Some(&current),
        x,
        None,
        p.nu,
    )?;
    let initial_alignment =
        ntk_spectra_core::bounds::alignment_metrics(&initial_split.split, &y, &r0)
            .map_err(crate::error::from_bounds)?;
    let final_alignment =
        ntk_spectra_core::bounds::alignment_metrics(&final_split.split, &y, &r0)
            .map_err(crate::error::from_bounds)?;

    Ok(TrackedTraining {
        rows,
        eta,
        iters,
        alpha: tracking_split.alpha,
        nuisance_fraction_initial: initial_alignment.y_nuisance_ratio,
        nuisance_fraction_final: final_alignment.y_nuisance_ratio,
        initial_alignment,
        final_alignment,
    })
}

/// Apply label corruption when the fraction is positive.
pub fn maybe_corrupt(
    ds: &ClassificationDataset,
    fraction: f64,
    seed: u64,
) -> Result<ClassificationDataset, CliError> {
    if fraction > 0.0 {
        corrupt_labels(ds, fraction, sub_seed(seed, TAG_CORRUPT)).map_err(from_data)
    } else {
        Ok(ds.clone())
    }
}
