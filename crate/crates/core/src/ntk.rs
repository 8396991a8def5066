//! Multiclass neural-tangent-kernel estimation and diagnostics.
//!
//! The base kernel is `Sigma~(X) = E[phi'(Xw) phi'(Xw)^T] (hadamard) X X^T`
//! over `w ~ N(0, I_d)`; the multiclass kernel is `I_K (kron) Sigma~(X)`.
//! Monte-Carlo estimation draws each sample from its own deterministic
//! ChaCha stream `(seed, sample index)`, so the estimate is independent of
//! how samples are batched and is bitwise reproducible.

use crate::shallownet::{Activation, ShallowNet, ShallowNetError};
use crate::spectral::{self, SpectralError};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NtkError {
    #[error("need at least one Monte-Carlo sample")]
    NoSamples,
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cluster index {index} out of range for {clusters} clusters")]
    ClusterIndexOutOfRange { index: usize, clusters: usize },
    #[error("kernel eigenvalue {eig} below the clamping floor {floor}")]
    NotPsd { eig: f64, floor: f64 },
    #[error(transparent)]
    Net(#[from] ShallowNetError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Monte-Carlo estimate of the base kernel `Sigma~(X)` with entrywise
/// standard errors, plus the class count for the Kronecker lift.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    base: DMatrix<f64>,
    stderr: DMatrix<f64>,
    num_classes: usize,
    mc_samples: usize,
    seed: u64,
}

/// Estimate `Sigma~(X)` by averaging `(phi'(Xw) phi'(Xw)^T) (hadamard) XX^T`
/// over `num_samples` draws of `w ~ N(0, I_d)`.
pub fn mc_kernel(
    x: &DMatrix<f64>,
    activation: Activation,
    num_classes: usize,
    num_samples: usize,
    seed: u64,
) -> Result<KernelMatrix, NtkError> {
    if num_samples == 0 {
        return Err(NtkError::NoSamples);
    }
    let n = x.nrows();
    let d = x.ncols();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    let mut w = DVector::<f64>::zeros(d);
    let mut s = DVector::<f64>::zeros(n);
    let mut s2 = DVector::<f64>::zeros(n);
    for sample in 0..num_samples {
        // One stream per sample: batching cannot change the draw.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sample as u64);
        for j in 0..d {
            w[j] = StandardNormal.sample(&mut rng);
        }
        s.gemv(1.0, x, &w, 0.0);
        for i in 0..n {
            s[i] = activation.dphi(s[i]);
            s2[i] = s[i] * s[i];
        }
        sum.ger(1.0, &s, &s, 1.0);
        sum_sq.ger(1.0, &s2, &s2, 1.0);
    }
    let gram = x * x.transpose();
    let inv = 1.0 / num_samples as f64;
    let mut base = DMatrix::zeros(n, n);
    let mut stderr = DMatrix::zeros(n, n);
    let bessel = if num_samples > 1 {
        num_samples as f64 / (num_samples as f64 - 1.0)
    } else {
        0.0
    };
    for i in 0..n {
        for j in 0..n {
            let mean = sum[(i, j)] * inv;
            base[(i, j)] = mean * gram[(i, j)];
            let var = ((sum_sq[(i, j)] * inv - mean * mean) * bessel).max(0.0);
            stderr[(i, j)] = gram[(i, j)].abs() * (var * inv).sqrt();
        }
    }
    // Symmetrize exactly against accumulated roundoff.
    base = (&base + base.transpose()) * 0.5;
    Ok(KernelMatrix {
        base,
        stderr,
        num_classes,
        mc_samples: num_samples,
        seed,
    })
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.base.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The single-output kernel `Sigma~(X)`.
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Entrywise standard error of the Monte-Carlo average,
    /// `num_samples^{-1/2}` times the sample standard deviation.
    pub fn stderr(&self) -> &DMatrix<f64> {
        &self.stderr
    }

    /// Largest entrywise standard error.
    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    /// The multiclass kernel `I_K (kron) Sigma~(X)` in per-class block
    /// ordering.
    pub fn multiclass(&self) -> DMatrix<f64> {
        let n = self.n();
        let kk = self.num_classes;
        let mut out = DMatrix::zeros(kk * n, kk * n);
        for l in 0..kk {
            out.view_mut((l * n, l * n), (n, n)).copy_from(&self.base);
        }
        out
    }

    /// Eigenvalues of the base kernel, descending, clamped at the floor
    /// `-1e-8 * trace / n`. Values below the floor are an error.
    pub fn clamped_eigenvalues(&self) -> Result<Vec<f64>, NtkError> {
        let floor = -1e-8 * self.base.trace() / self.n() as f64;
        let mut eigs: Vec<f64> = self.base.symmetric_eigenvalues().iter().copied().collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for e in eigs.iter_mut() {
            if *e < floor {
                return Err(NtkError::NotPsd { eig: *e, floor });
            }
            *e = e.max(0.0);
        }
        Ok(eigs)
    }

    /// PSD square root of the base kernel, with Monte-Carlo asymmetry
    /// absorbed by clamping eigenvalues at `-1e-8 * trace / n`.
    pub fn base_sqrt(&self) -> Result<DMatrix<f64>, NtkError> {
        let floor = -1e-8 * self.base.trace() / self.n() as f64;
        let eig = self.base.clone().symmetric_eigen();
        let mut roots = eig.eigenvalues.clone();
        for v in roots.iter_mut() {
            if *v < floor {
                return Err(NtkError::NotPsd { eig: *v, floor });
            }
            *v = v.max(0.0).sqrt();
        }
        let half = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok((&half + half.transpose()) * 0.5)
    }

    /// PSD square root of the multiclass kernel,
    /// `I_K (kron) Sigma~(X)^{1/2}`.
    pub fn multiclass_sqrt(&self) -> Result<DMatrix<f64>, NtkError> {
        let root = self.base_sqrt()?;
        let n = self.n();
        let kk = self.num_classes;
        let mut out = DMatrix::zeros(kk * n, kk * n);
        for l in 0..kk {
            out.view_mut((l * n, l * n), (n, n)).copy_from(&root);
        }
        Ok(out)
    }
}

/// The empirical kernel `C(W) = J(W) J(W)^T`, assembled blockwise from
/// `C[l, lt] = sum_s (X X^T) (hadamard) (V[l][s] V[lt][s] q_s q_s^T)` with
/// `q_s = phi'(X w_s)`, without materializing the Jacobian.
pub fn empirical_kernel(net: &ShallowNet, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NtkError> {
    let n = x.nrows();
    let k = net.hidden_units();
    let kk = net.num_outputs();
    if x.ncols() != net.input_dim() {
        return Err(NtkError::DimensionMismatch {
            context: "input feature dimension",
            expected: net.input_dim(),
            got: x.ncols(),
        });
    }
    let v = net.output_weights();
    let mut gains = x * net.input_weights().transpose(); // n x k
    gains.apply(|z| *z = net.activation().dphi(*z));

    // Upper-triangular class blocks of sum_s V[l][s] V[lt][s] q_s q_s^T.
    let mut acc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); kk * kk];
    let mut q = DVector::<f64>::zeros(n);
    for s in 0..k {
        for i in 0..n {
            q[i] = gains[(i, s)];
        }
        for l in 0..kk {
            for lt in l..kk {
                let coeff = v[(l, s)] * v[(lt, s)];
                if coeff != 0.0 {
                    acc[l * kk + lt].ger(coeff, &q, &q, 1.0);
                }
            }
        }
    }
    let gram = x * x.transpose();
    let mut out = DMatrix::zeros(kk * n, kk * n);
    for l in 0..kk {
        for lt in l..kk {
            let block = acc[l * kk + lt].component_mul(&gram);
            out.view_mut((l * n, lt * n), (n, n)).copy_from(&block);
            if lt != l {
                out.view_mut((lt * n, l * n), (n, n))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(out)
}

/// Concentration diagnostic for random initialization:
/// `|(K / nu^2) J(W_0) J(W_0)^T - I_K (kron) Sigma~(X)|` in operator norm.
///
/// The normalization matches nets built by `init_random` with entry
/// magnitude `nu / sqrt(kK)`.
pub fn concentration_gap(
    net: &ShallowNet,
    x: &DMatrix<f64>,
    km: &KernelMatrix,
    nu: f64,
) -> Result<f64, NtkError> {
    if km.n() != x.nrows() {
        return Err(NtkError::DimensionMismatch {
            context: "kernel size vs samples",
            expected: x.nrows(),
            got: km.n(),
        });
    }
    if km.num_classes() != net.num_outputs() {
        return Err(NtkError::DimensionMismatch {
            context: "kernel classes vs network outputs",
            expected: net.num_outputs(),
            got: km.num_classes(),
        });
    }
    let kk = net.num_outputs() as f64;
    let emp = empirical_kernel(net, x)? * (kk / (nu * nu));
    let diff = emp - km.multiclass();
    Ok(spectral::symmetric_operator_norm(&diff))
}

/// The 0-1 lift matrix `U_S` (n x KC): row i has a single 1 in the column
/// of sample i's cluster, so `U_S Sigma~(M) U_S^T` replicates
/// cluster-center quantities at sample level. Columns are orthogonal with
/// squared norms equal to the cluster sizes.
pub fn cluster_lift(assignments: &[usize], num_clusters: usize) -> Result<DMatrix<f64>, NtkError> {
    let n = assignments.len();
    let mut out = DMatrix::zeros(n, num_clusters);
    for (i, &c) in assignments.iter().enumerate() {
        if c >= num_clusters {
            return Err(NtkError::ClusterIndexOutOfRange {
                index: c,
                clusters: num_clusters,
            });
        }
        out[(i, c)] = 1.0;
    }
    Ok(out)
}

/// Operator-norm and eigenspace movement of the base kernel under input
/// corruption.
#[derive(Debug, Clone, Copy)]
pub struct KernelPerturbation {
    /// `|Sigma~(X_noisy) - Sigma~(X_clean)|` in operator norm.
    pub norm_gap: f64,
    /// Projector distance between the top-r eigenspaces.
    pub projector_gap: f64,
    /// r-th eigenvalue of the clean kernel (the Davis-Kahan gap scale).
    pub clean_lambda_r: f64,
}

/// Compare the kernels of a clean and a corrupted input matrix, using the
/// same Monte-Carlo seed and sample count for both so that identical
/// inputs give exactly zero gap.
pub fn kernel_perturbation(
    x_clean: &DMatrix<f64>,
    x_noisy: &DMatrix<f64>,
    activation: Activation,
    top_r: usize,
    num_samples: usize,
    seed: u64,
) -> Result<KernelPerturbation, NtkError> {
    if x_clean.shape() != x_noisy.shape() {
        return Err(NtkError::DimensionMismatch {
            context: "clean vs noisy shapes",
            expected: x_clean.nrows() * x_clean.ncols(),
            got: x_noisy.nrows() * x_noisy.ncols(),
        });
    }
    let n = x_clean.nrows();
    if top_r > n {
        return Err(NtkError::DimensionMismatch {
            context: "top-r exceeds kernel size",
            expected: n,
            got: top_r,
        });
    }
    let clean = mc_kernel(x_clean, activation, 1, num_samples, seed)?;
    let noisy = mc_kernel(x_noisy, activation, 1, num_samples, seed)?;
    let diff = noisy.base() - clean.base();
    let norm_gap = spectral::symmetric_operator_norm(&diff);

    let top_basis = |m: &DMatrix<f64>| -> (DMatrix<f64>, Vec<f64>) {
        let eig = m.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let mut basis = DMatrix::zeros(n, top_r);
        for (dst, &src) in order.iter().take(top_r).enumerate() {
            basis.column_mut(dst).copy_from(&eig.eigenvectors.column(src));
        }
        let eigs = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        (basis, eigs)
    };
    let (clean_basis, clean_eigs) = top_basis(clean.base());
    let (noisy_basis, _) = top_basis(noisy.base());
    let projector_gap = if top_r == 0 {
        0.0
    } else {
        spectral::projector_distance(&clean_basis, &noisy_basis)?
    };
    let clean_lambda_r = if top_r == 0 { 0.0 } else { clean_eigs[top_r - 1] };
    Ok(KernelPerturbation {
        norm_gap,
        projector_gap,
        clean_lambda_r,
    })
}

/// Eigenvalue bounds for a Hadamard product of PSD matrices:
/// `lambda_min(A (hadamard) B) >= min_i B_ii * lambda_min(A)` and
/// `lambda_max(A (hadamard) B) <= max_i B_ii * lambda_max(A)`.
/// Returns `(lower_bound, upper_bound)`.
pub fn hadamard_eigenvalue_bounds(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let eigs = a.symmetric_eigenvalues();
    let (mut lam_min, mut lam_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in eigs.iter() {
        lam_min = lam_min.min(e);
        lam_max = lam_max.max(e);
    }
    let (mut b_min, mut b_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..b.nrows() {
        b_min = b_min.min(b[(i, i)]);
        b_max = b_max.max(b[(i, i)]);
    }
    (b_min * lam_min, b_max * lam_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shallownet::init_random_with;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        let mut x = randn_matrix(rng, n, d);
        for i in 0..n {
            let norm = x.row(i).norm();
            x.row_mut(i).scale_mut(1.0 / norm);
        }
        x
    }

    /// Gauss–Hermite nodes/weights via the Golub–Welsch tridiagonal
    /// eigenproblem, for integrals against exp(-t^2).
    fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut jac = DMatrix::zeros(m, m);
        for i in 1..m {
            let off = (i as f64 / 2.0).sqrt();
            jac[(i - 1, i)] = off;
            jac[(i, i - 1)] = off;
        }
        let eig = jac.symmetric_eigen();
        let total = std::f64::consts::PI.sqrt();
        let mut nodes = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for j in 0..m {
            nodes.push(eig.eigenvalues[j]);
            let first = eig.eigenvectors[(0, j)];
            weights.push(total * first * first);
        }
        (nodes, weights)
    }

    #[test]
    fn identity_activation_gives_exact_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = randn_matrix(&mut rng, 6, 4);
        let km = mc_kernel(&x, Activation::Identity, 2, 50, 3).unwrap();
        let gram = &x * x.transpose();
        assert!((km.base() - &gram).norm() < 1e-12 * gram.norm());
        assert_eq!(km.max_stderr(), 0.0);
    }

    #[test]
    fn scalar_softplus_kernel_matches_gauss_hermite() {
        // n = 1, unit input: the kernel is E[sigmoid(g)^2], g ~ N(0,1).
        let x = DMatrix::from_element(1, 1, 1.0);
        let samples = 100_000;
        let km = mc_kernel(&x, Activation::Softplus, 1, samples, 11).unwrap();
        let (nodes, weights) = gauss_hermite(80);
        // E[f(g)] = pi^{-1/2} * sum w_i f(sqrt(2) t_i).
        let mut quad = 0.0;
        for (t, w) in nodes.iter().zip(weights.iter()) {
            let g = std::f64::consts::SQRT_2 * t;
            let s = Activation::Softplus.dphi(g);
            quad += w * s * s;
        }
        quad /= std::f64::consts::PI.sqrt();
        let got = km.base()[(0, 0)];
        let se = km.stderr()[(0, 0)];
        assert!(se > 0.0);
        assert!(
            (got - quad).abs() <= 3.0 * se,
            "MC {got} vs quadrature {quad} (3 se = {t})",
            t = 3.0 * se
        );
    }

    #[test]
    fn kernel_structural_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = unit_rows(&mut rng, 8, 5);
        let km = mc_kernel(&x, Activation::Softplus, 3, 500, 7).unwrap();
        // Exact symmetry.
        assert_eq!((km.base() - km.base().transpose()).norm(), 0.0);
        // PSD after clamping; diagonal obeys the Schur bound.
        let eigs = km.clamped_eigenvalues().unwrap();
        assert!(eigs.iter().all(|&e| e >= 0.0));
        let b = Activation::Softplus.bound_b();
        for i in 0..8 {
            assert!(km.base()[(i, i)] <= b * b * 1.0 + 1e-12);
        }
        // Deterministic for a fixed seed.
        let km2 = mc_kernel(&x, Activation::Softplus, 3, 500, 7).unwrap();
        assert_eq!(km.base(), km2.base());
    }

    #[test]
    fn multiclass_kernel_kronecker_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = randn_matrix(&mut rng, 3, 2);
        let km = mc_kernel(&x, Activation::Softplus, 2, 100, 1).unwrap();
        let big = km.multiclass();
        assert_eq!(big.shape(), (6, 6));
        for l in 0..2 {
            for lt in 0..2 {
                let block = big.view((l * 3, lt * 3), (3, 3)).clone_owned();
                if l == lt {
                    assert_eq!(&block, km.base());
                } else {
                    assert_eq!(block.norm(), 0.0);
                }
            }
        }
        // K = 1 returns the base itself.
        let km1 = mc_kernel(&x, Activation::Softplus, 1, 100, 1).unwrap();
        assert_eq!(&km1.multiclass(), km1.base());
    }

    #[test]
    fn empirical_kernel_matches_dense_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = randn_matrix(&mut rng, 5, 3);
        let net = init_random_with(6, 3, 2, 0.8, 4, Activation::Softplus).unwrap();
        let emp = empirical_kernel(&net, &x).unwrap();
        let jac = net.jacobian_dense(&x).unwrap();
        let dense = &jac * jac.transpose();
        assert!((&emp - &dense).norm() <= 1e-9 * dense.norm());
        // PSD check.
        let eigs = emp.symmetric_eigenvalues();
        let top = eigs.iter().fold(0.0f64, |m, &v| m.max(v));
        assert!(eigs.iter().all(|&e| e >= -1e-10 * top.max(1.0)));
    }

    #[test]
    fn empirical_kernel_identity_activation_diagonal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = randn_matrix(&mut rng, 4, 3);
        let net = init_random_with(5, 3, 2, 1.0, 9, Activation::Identity).unwrap();
        let emp = empirical_kernel(&net, &x).unwrap();
        let gram = &x * x.transpose();
        let v = net.output_weights();
        for l in 0..2 {
            let scale: f64 = (0..5).map(|s| v[(l, s)] * v[(l, s)]).sum();
            let block = emp.view((l * 4, l * 4), (4, 4)).clone_owned();
            assert!((block - &gram * scale).norm() < 1e-12 * gram.norm() * scale.max(1.0));
        }
    }

    #[test]
    fn concentration_gap_identity_activation_is_mc_exact() {
        // Identity activation: the empirical diagonal block is
        // (sum_s V[l][s]^2) XX^T and the kernel is exactly XX^T, so the
        // normalized gap vanishes.
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let x = unit_rows(&mut rng, 5, 4);
        let nu = 0.9;
        let net = init_random_with(1, 4, 1, nu, 17, Activation::Identity).unwrap();
        let km = mc_kernel(&x, Activation::Identity, 1, 10, 0).unwrap();
        let gap = concentration_gap(&net, &x, &km, nu).unwrap();
        assert!(gap < 1e-10, "gap {gap}");
    }

    #[test]
    fn concentration_gap_shrinks_with_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let x = unit_rows(&mut rng, 12, 6);
        let km = mc_kernel(&x, Activation::Softplus, 2, 40_000, 5).unwrap();
        let nu = 1.0;
        let mut small = Vec::new();
        let mut large = Vec::new();
        for seed in 0..5 {
            let net_small = init_random_with(20, 6, 2, nu, seed, Activation::Softplus).unwrap();
            let net_large = init_random_with(1280, 6, 2, nu, seed, Activation::Softplus).unwrap();
            small.push(concentration_gap(&net_small, &x, &km, nu).unwrap());
            large.push(concentration_gap(&net_large, &x, &km, nu).unwrap());
        }
        small.sort_by(|a, b| a.partial_cmp(b).unwrap());
        large.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            large[2] < small[2],
            "median gap should shrink with k: {} vs {}",
            large[2],
            small[2]
        );
    }

    #[test]
    fn cluster_lift_structure() {
        // One cluster: a single ones column.
        let lift = cluster_lift(&[0, 0, 0], 1).unwrap();
        assert_eq!(lift, DMatrix::from_element(3, 1, 1.0));

        // Balanced two clusters of size two: U^T U = 2 I.
        let lift = cluster_lift(&[0, 1, 0, 1], 2).unwrap();
        let gram = lift.transpose() * &lift;
        assert_eq!(gram, DMatrix::identity(2, 2) * 2.0);

        assert!(matches!(
            cluster_lift(&[0, 2], 2),
            Err(NtkError::ClusterIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cluster_lift_reproduces_sample_kernel_at_zero_noise() {
        // X built by repeating center rows: Sigma~(X) = U_S Sigma~(M) U_S^T
        // exactly when both kernels share the Monte-Carlo stream.
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let centers = unit_rows(&mut rng, 3, 5);
        let assignments = [0usize, 1, 1, 2, 0, 2];
        let mut x = DMatrix::zeros(6, 5);
        for (i, &c) in assignments.iter().enumerate() {
            x.row_mut(i).copy_from(&centers.row(c));
        }
        let km_x = mc_kernel(&x, Activation::Softplus, 1, 2_000, 77).unwrap();
        let km_m = mc_kernel(&centers, Activation::Softplus, 1, 2_000, 77).unwrap();
        let lift = cluster_lift(&assignments, 3).unwrap();
        let lifted = &lift * km_m.base() * lift.transpose();
        // Entrywise within 3 MC standard errors (different w-streams: the
        // sample index enumerates rows of X vs rows of M... the draws are
        // shared per sample index, so the identity is exact up to roundoff
        // only if the streams coincide; they do, both use (seed, index)).
        for i in 0..6 {
            for j in 0..6 {
                let got = km_x.base()[(i, j)];
                let want = lifted[(i, j)];
                let (ci, cj) = (assignments[i], assignments[j]);
                let tol = 3.0 * (km_x.stderr()[(i, j)] + km_m.stderr()[(ci, cj)]) + 1e-12;
                assert!(
                    (got - want).abs() <= tol,
                    "entry ({i},{j}): {got} vs {want} (tol {tol})"
                );
            }
        }
    }

    #[test]
    fn kernel_perturbation_zero_noise_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = unit_rows(&mut rng, 6, 4);
        let p = kernel_perturbation(&x, &x, Activation::Softplus, 3, 200, 1).unwrap();
        assert_eq!(p.norm_gap, 0.0);
        assert!(p.projector_gap < 1e-9);
    }

    #[test]
    fn kernel_perturbation_monotone_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let d = 8;
        let x = unit_rows(&mut rng, 10, d);
        let sigmas = [0.0, 0.05, 0.1, 0.2];
        let mut medians = Vec::new();
        for &sigma in &sigmas {
            let mut gaps = Vec::new();
            for trial in 0..9 {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(1000 + trial);
                let noise = DMatrix::from_fn(10, d, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut noise_rng);
                    g * sigma / (d as f64).sqrt()
                });
                let noisy = &x + noise;
                let p = kernel_perturbation(&x, &noisy, Activation::Softplus, 4, 400, 2).unwrap();
                gaps.push(p.norm_gap);
            }
            gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(gaps[4]);
        }
        for w in medians.windows(2) {
            assert!(w[1] >= w[0], "medians not monotone: {medians:?}");
        }
    }

    #[test]
    fn hadamard_bounds_hold_on_random_psd_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let f = randn_matrix(&mut rng, 5, 5);
            let g = randn_matrix(&mut rng, 5, 5);
            let a = &f * f.transpose();
            let b = &g * g.transpose();
            let had = a.component_mul(&b);
            let eigs = had.symmetric_eigenvalues();
            let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
            for &e in eigs.iter() {
                emin = emin.min(e);
                emax = emax.max(e);
            }
            let (lo, hi) = hadamard_eigenvalue_bounds(&a, &b);
            assert!(emin >= lo - 1e-10 * hi.abs().max(1.0));
            assert!(emax <= hi + 1e-10 * hi.abs().max(1.0));
        }
    }
}
