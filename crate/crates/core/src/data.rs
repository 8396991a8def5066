//! Synthetic data models: the corrupted low-rank linear model, Gaussian
//! mixtures for classification, label corruption, and the classification
//! error of a trained net.
//!
//! The linear model is `X = Xbar + Z`, `y = Xbar w* + z` with
//! `rank(Xbar) = r`, unit singular values, `w* in Range(V)`, and noise
//! entries `N(0, sigma_x^2/n)` and `N(0, sigma_y^2/n)`. Its population
//! loss splits exactly into information and nuisance components along
//! `span(U)` and its complement.

use crate::shallownet::ShallowNet;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rank {r} exceeds min(n, d) = {limit}")]
    RankTooLarge { r: usize, limit: usize },
    #[error("parameter out of range: {0}")]
    ParameterRange(String),
    #[error("center sampling exhausted its retry budget ({0} attempts); spec is infeasible")]
    InfeasibleCenters(usize),
    #[error("balanced sampling requires the cluster count to divide n (n = {n}, clusters = {clusters})")]
    UnbalancedCount { n: usize, clusters: usize },
    #[error("cannot corrupt labels with a single class")]
    SingleClassCorruption,
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step size {eta} is not below the stability limit 2/|X|^2 = {limit}")]
    UnstableStepSize { eta: f64, limit: f64 },
    #[error("dataset file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Parameters of the corrupted linear model.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LinearModelSpec {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Norm of the planted coefficient vector.
    pub w_star_norm: f64,
}

impl Default for LinearModelSpec {
    fn default() -> Self {
        // The running linear example: n=200, d=500, r=5, sigma_x=0.2,
        // sigma_y=2.
        LinearModelSpec {
            n: 200,
            d: 500,
            r: 5,
            sigma_x: 0.2,
            sigma_y: 2.0,
            w_star_norm: 1.0,
        }
    }
}

/// The sampled corrupted linear model.
#[derive(Debug, Clone)]
pub struct LinearCorruptedModel {
    pub spec: LinearModelSpec,
    /// Rank-r clean features `Xbar = U V^T` (unit singular values).
    pub clean_x: DMatrix<f64>,
    /// Feature noise with i.i.d. `N(0, sigma_x^2/n)` entries.
    pub noise: DMatrix<f64>,
    /// Left factor U (n x r, orthonormal columns).
    pub u: DMatrix<f64>,
    /// Right factor V (d x r, orthonormal columns).
    pub v: DMatrix<f64>,
    /// Planted coefficients, in Range(V), norm `w_star_norm`.
    pub w_star: DVector<f64>,
    /// Observed labels `Xbar w* + z`.
    pub y: DVector<f64>,
}

fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let q = qr.q();
    q.columns(0, cols).clone_owned()
}

/// Sample the corrupted linear model: uniform random subspaces U, V with
/// unit singular values, `w* = V g / |V g| * w_star_norm`, and Gaussian
/// feature/label noise.
pub fn gen_linear_model(
    spec: &LinearModelSpec,
    seed: u64,
) -> Result<LinearCorruptedModel, DataError> {
    let limit = spec.n.min(spec.d);
    if spec.r > limit {
        return Err(DataError::RankTooLarge { r: spec.r, limit });
    }
    if spec.sigma_x < 0.0 || spec.sigma_y < 0.0 || spec.w_star_norm <= 0.0 {
        return Err(DataError::ParameterRange(
            "noise scales must be nonnegative and w_star_norm positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormal_columns(&mut rng, spec.n, spec.r);
    let v = orthonormal_columns(&mut rng, spec.d, spec.r);
    let clean_x = &u * v.transpose();

    let g = DVector::from_fn(spec.r, |_, _| StandardNormal.sample(&mut rng));
    let mut w_star = &v * g;
    let norm = w_star.norm();
    w_star.scale_mut(spec.w_star_norm / norm);

    let x_scale = spec.sigma_x / (spec.n as f64).sqrt();
    let noise = DMatrix::from_fn(spec.n, spec.d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * x_scale
    });
    let y_scale = spec.sigma_y / (spec.n as f64).sqrt();
    let clean_y = &clean_x * &w_star;
    let y = DVector::from_fn(spec.n, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        clean_y[i] + z * y_scale
    });
    Ok(LinearCorruptedModel {
        spec: *spec,
        clean_x,
        noise,
        u,
        v,
        w_star,
        y,
    })
}

impl LinearCorruptedModel {
    /// Observed features `Xbar + Z`.
    pub fn observed_x(&self) -> DMatrix<f64> {
        &self.clean_x + &self.noise
    }

    /// Clean labels `Xbar w*`.
    pub fn clean_y(&self) -> DVector<f64> {
        &self.clean_x * &self.w_star
    }
}

/// Closed-form population loss at `w`, split along the information space
/// `span(U)` and its complement. `total` is exactly `info + nuisance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationLoss {
    pub total: f64,
    pub info: f64,
    pub nuisance: f64,
}

/// Population loss components:
/// `info = 0.5 |Xbar w - ybar|^2 + (r/2n)(sigma_x^2 |w|^2 + sigma_y^2)`,
/// `nuisance = 0.5 (1 - r/n)(sigma_x^2 |w|^2 + sigma_y^2)`.
pub fn linear_population_loss(
    model: &LinearCorruptedModel,
    w: &DVector<f64>,
) -> Result<PopulationLoss, DataError> {
    if w.len() != model.spec.d {
        return Err(DataError::DimensionMismatch {
            context: "coefficient length",
            expected: model.spec.d,
            got: w.len(),
        });
    }
    let spec = &model.spec;
    let fit = (&model.clean_x * w - model.clean_y()).norm_squared();
    let noise_power = spec.sigma_x * spec.sigma_x * w.norm_squared() + spec.sigma_y * spec.sigma_y;
    let frac = spec.r as f64 / spec.n as f64;
    let info = 0.5 * fit + 0.5 * frac * noise_power;
    let nuisance = 0.5 * (1.0 - frac) * noise_power;
    Ok(PopulationLoss {
        total: info + nuisance,
        info,
        nuisance,
    })
}

/// One row of the linear-model gradient-descent trajectory.
#[derive(Debug, Clone)]
pub struct LinearGdRecord {
    pub iter: usize,
    pub w: DVector<f64>,
    pub loss: PopulationLoss,
}

/// Exact gradient descent `w <- (I - eta X^T X) w + eta X^T y` from
/// `w_0 = 0`, logging the population-loss components every iteration.
pub fn linear_gd(
    model: &LinearCorruptedModel,
    eta: f64,
    iters: usize,
) -> Result<Vec<LinearGdRecord>, DataError> {
    let x = model.observed_x();
    let opnorm = crate::spectral::operator_norm(&x);
    let limit = 2.0 / (opnorm * opnorm);
    if !(eta.is_finite() && eta >= 0.0 && eta < limit) {
        return Err(DataError::UnstableStepSize { eta, limit });
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &model.y;
    let mut w = DVector::zeros(model.spec.d);
    let mut rows = Vec::with_capacity(iters + 1);
    for tau in 0..=iters {
        if tau > 0 {
            w = &w - (&xtx * &w - &xty) * eta;
        }
        rows.push(LinearGdRecord {
            iter: tau,
            w: w.clone(),
            loss: linear_population_loss(model, &w)?,
        });
    }
    Ok(rows)
}

/// How cluster membership is assigned when sampling a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureSampling {
    /// i.i.d. uniform over the KC clusters.
    Iid,
    /// Exactly n/(KC) samples per cluster, ordered by cluster.
    Balanced,
}

/// A Gaussian mixture specification: unit-norm cluster centers (C per
/// class), within-cluster scale `sigma` (per-coordinate std
/// `sigma/sqrt(d)`), and the sample count.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub clusters_per_class: usize,
    pub sigma: f64,
    pub min_center_distance: f64,
    pub n: usize,
    /// KC x d matrix of unit-norm rows; row `l*C + c` is cluster c of
    /// class l.
    pub centers: DMatrix<f64>,
    pub sampling: MixtureSampling,
}

impl MixtureSpec {
    /// Generate centers by rejection-sampling unit vectors until all
    /// pairwise distances reach `min_center_distance`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_centers(
        num_classes: usize,
        clusters_per_class: usize,
        dim: usize,
        sigma: f64,
        min_center_distance: f64,
        n: usize,
        sampling: MixtureSampling,
        seed: u64,
    ) -> Result<Self, DataError> {
        if num_classes == 0 || clusters_per_class == 0 || dim == 0 || n == 0 {
            return Err(DataError::ParameterRange(
                "classes, clusters, dim, and n must be positive".into(),
            ));
        }
        if sigma < 0.0 || min_center_distance < 0.0 {
            return Err(DataError::ParameterRange(
                "sigma and min_center_distance must be nonnegative".into(),
            ));
        }
        let kc = num_classes * clusters_per_class;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = 10_000 * kc;
        let mut rows: Vec<DVector<f64>> = Vec::with_capacity(kc);
        let mut attempts = 0;
        while rows.len() < kc {
            attempts += 1;
            if attempts > budget {
                return Err(DataError::InfeasibleCenters(budget));
            }
            let mut cand = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let norm = cand.norm();
            if norm == 0.0 {
                continue;
            }
            cand.scale_mut(1.0 / norm);
            if rows
                .iter()
                .all(|r| (r - &cand).norm() >= min_center_distance)
            {
                rows.push(cand);
            }
        }
        let mut centers = DMatrix::zeros(kc, dim);
        for (i, r) in rows.iter().enumerate() {
            centers.row_mut(i).copy_from(&r.transpose());
        }
        let spec = MixtureSpec {
            num_classes,
            clusters_per_class,
            sigma,
            min_center_distance,
            n,
            centers,
            sampling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_clusters(&self) -> usize {
        self.num_classes * self.clusters_per_class
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Check the center invariants: unit rows within 1e-12 and pairwise
    /// distances at least the configured minimum.
    pub fn validate(&self) -> Result<(), DataError> {
        let kc = self.num_clusters();
        if self.centers.nrows() != kc {
            return Err(DataError::DimensionMismatch {
                context: "center rows vs cluster count",
                expected: kc,
                got: self.centers.nrows(),
            });
        }
        for i in 0..kc {
            if (self.centers.row(i).norm() - 1.0).abs() > 1e-12 {
                return Err(DataError::ParameterRange(format!(
                    "center {i} is not unit norm"
                )));
            }
            for j in (i + 1)..kc {
                let dist = (self.centers.row(i) - self.centers.row(j)).norm();
                if dist < self.min_center_distance {
                    return Err(DataError::ParameterRange(format!(
                        "centers {i} and {j} are {dist} apart (< {min})",
                        min = self.min_center_distance
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A labeled dataset with one-hot targets and the per-class concatenated
/// label vector.
#[derive(Debug, Clone)]
pub struct ClassificationDataset {
    pub x: DMatrix<f64>,
    /// Class index per sample.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Cluster index per sample (class-major: cluster = class*C + within).
    pub cluster_assignments: Option<Vec<usize>>,
}

impl ClassificationDataset {
    pub fn new(
        x: DMatrix<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        cluster_assignments: Option<Vec<usize>>,
    ) -> Result<Self, DataError> {
        if labels.len() != x.nrows() {
            return Err(DataError::DimensionMismatch {
                context: "labels vs samples",
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::ParameterRange(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(c) = &cluster_assignments {
            if c.len() != x.nrows() {
                return Err(DataError::DimensionMismatch {
                    context: "cluster assignments vs samples",
                    expected: x.nrows(),
                    got: c.len(),
                });
            }
        }
        Ok(ClassificationDataset {
            x,
            labels,
            num_classes,
            cluster_assignments,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// One-hot label matrix, n x K.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n(), self.num_classes);
        for (i, &l) in self.labels.iter().enumerate() {
            y[(i, l)] = 1.0;
        }
        y
    }

    /// Per-class concatenated label vector of length nK and norm sqrt(n).
    pub fn concat_y(&self) -> DVector<f64> {
        let n = self.n();
        let mut y = DVector::zeros(n * self.num_classes);
        for (i, &l) in self.labels.iter().enumerate() {
            y[l * n + i] = 1.0;
        }
        y
    }
}

/// Sample a classification dataset from the mixture: cluster memberships
/// per the configured sampling mode, inputs `N(mu_c, (sigma^2/d) I_d)`, labels
/// one-hot on the cluster's class.
pub fn gen_gmm(spec: &MixtureSpec, seed: u64) -> Result<ClassificationDataset, DataError> {
    spec.validate()?;
    let kc = spec.num_clusters();
    let n = spec.n;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments: Vec<usize> = match spec.sampling {
        MixtureSampling::Iid => (0..n).map(|_| rng.random_range(0..kc)).collect(),
        MixtureSampling::Balanced => {
            if !n.is_multiple_of(kc) {
                return Err(DataError::UnbalancedCount { n, clusters: kc });
            }
            let per = n / kc;
            (0..n).map(|i| i / per).collect()
        }
    };
    let coord_std = spec.sigma / (d as f64).sqrt();
    let mut x = DMatrix::zeros(n, d);
    for (i, &c) in assignments.iter().enumerate() {
        for j in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = spec.centers[(c, j)] + coord_std * g;
        }
    }
    let labels: Vec<usize> = assignments
        .iter()
        .map(|&c| c / spec.clusters_per_class)
        .collect();
    ClassificationDataset::new(x, labels, spec.num_classes, Some(assignments))
}

/// Corrupt exactly `round(fraction * n)` uniformly chosen labels, each
/// replaced by a uniformly random label from a strictly different class.
/// Cluster assignments are preserved.
pub fn corrupt_labels(
    ds: &ClassificationDataset,
    fraction: f64,
    seed: u64,
) -> Result<ClassificationDataset, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::ParameterRange(format!(
            "corruption fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n = ds.n();
    let count = (fraction * n as f64).round() as usize;
    if count > 0 && ds.num_classes < 2 {
        return Err(DataError::SingleClassCorruption);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = ds.labels.clone();
    for &i in order.iter().take(count) {
        let offset = rng.random_range(1..ds.num_classes);
        labels[i] = (labels[i] + offset) % ds.num_classes;
    }
    ClassificationDataset::new(
        ds.x.clone(),
        labels,
        ds.num_classes,
        ds.cluster_assignments.clone(),
    )
}

/// Fraction of samples whose predicted class (argmax over outputs, ties to
/// the lowest index) differs from the label.
pub fn classification_error(
    net: &ShallowNet,
    ds: &ClassificationDataset,
) -> Result<f64, DataError> {
    if net.num_outputs() != ds.num_classes {
        return Err(DataError::DimensionMismatch {
            context: "network outputs vs classes",
            expected: ds.num_classes,
            got: net.num_outputs(),
        });
    }
    let f = net
        .forward_concat(&ds.x)
        .map_err(|_| DataError::DimensionMismatch {
            context: "network input dim vs dataset",
            expected: ds.dim(),
            got: net.input_dim(),
        })?;
    let n = ds.n();
    let mut wrong = 0usize;
    for i in 0..n {
        let mut best = 0usize;
        let mut best_val = f[i];
        for l in 1..ds.num_classes {
            let val = f[l * n + i];
            if val > best_val {
                best_val = val;
                best = l;
            }
        }
        if best != ds.labels[i] {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n as f64)
}

/// Sidecar metadata stored alongside the CSV.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSidecar {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub has_clusters: bool,
}

/// Write the dataset as CSV (x columns, label, optional cluster) plus a
/// JSON sidecar. Floats print in shortest round-trip form, so reading
/// back is bit-exact.
pub fn write_dataset_csv(
    ds: &ClassificationDataset,
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push('#');
    for j in 0..ds.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label");
    if ds.cluster_assignments.is_some() {
        out.push_str(",cluster");
    }
    out.push('\n');
    for i in 0..ds.n() {
        for j in 0..ds.dim() {
            out.push_str(&format!("{},", ds.x[(i, j)]));
        }
        out.push_str(&format!("{}", ds.labels[i]));
        if let Some(c) = &ds.cluster_assignments {
            out.push_str(&format!(",{}", c[i]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(csv_path)?;
    f.write_all(out.as_bytes())?;
    let sidecar = DatasetSidecar {
        n: ds.n(),
        dim: ds.dim(),
        num_classes: ds.num_classes,
        has_clusters: ds.cluster_assignments.is_some(),
    };
    let mut f = std::fs::File::create(sidecar_path)?;
    f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<ClassificationDataset, DataError> {
    let sidecar: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let content = std::fs::read_to_string(csv_path)?;
    let mut x = DMatrix::zeros(sidecar.n, sidecar.dim);
    let mut labels = Vec::with_capacity(sidecar.n);
    let mut clusters = Vec::with_capacity(sidecar.n);
    let mut row = 0usize;
    for line in content.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if row >= sidecar.n {
            return Err(DataError::Malformed("more rows than the sidecar's n".into()));
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = sidecar.dim + 1 + usize::from(sidecar.has_clusters);
        if fields.len() != expected {
            return Err(DataError::Malformed(format!(
                "row {row} has {} fields, expected {expected}",
                fields.len()
            )));
        }
        for j in 0..sidecar.dim {
            x[(row, j)] = fields[j]
                .parse::<f64>()
                .map_err(|e| DataError::Malformed(format!("row {row} col {j}: {e}")))?;
        }
        labels.push(
            fields[sidecar.dim]
                .parse::<usize>()
                .map_err(|e| DataError::Malformed(format!("row {row} label: {e}")))?,
        );
        if sidecar.has_clusters {
            clusters.push(
                fields[sidecar.dim + 1]
                    .parse::<usize>()
                    .map_err(|e| DataError::Malformed(format!("row {row} cluster: {e}")))?,
            );
        }
        row += 1;
    }
    if row != sidecar.n {
        return Err(DataError::Malformed(format!(
            "expected {n} rows, found {row}",
            n = sidecar.n
        )));
    }
    ClassificationDataset::new(
        x,
        labels,
        sidecar.num_classes,
        sidecar.has_clusters.then_some(clusters),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shallownet::{Activation, ShallowNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn linear_model_noiseless_and_rank() {
        let spec = LinearModelSpec {
            n: 30,
            d: 50,
            r: 4,
            sigma_x: 0.0,
            sigma_y: 0.0,
            w_star_norm: 1.0,
        };
        let model = gen_linear_model(&spec, 1).unwrap();
        assert_eq!(model.observed_x(), model.clean_x);
        assert!((&model.y - model.clean_y()).norm() < 1e-15);

        // Singular values: r ones, the rest below 1e-10.
        let decomp = crate::spectral::svd(&model.clean_x).unwrap();
        for s in 0..4 {
            assert!((decomp.singular_values()[s] - 1.0).abs() < 1e-10);
        }
        for s in 4..30 {
            assert!(decomp.singular_values()[s] < 1e-10);
        }
        // w* in Range(V): V V^T w* = w*.
        let back = &model.v * (model.v.transpose() * &model.w_star);
        assert!((back - &model.w_star).norm() < 1e-10);
        assert!((model.w_star.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_model_rejects_large_rank() {
        let spec = LinearModelSpec {
            n: 10,
            d: 5,
            r: 6,
            ..Default::default()
        };
        assert!(matches!(
            gen_linear_model(&spec, 0),
            Err(DataError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn noise_variance_matches_spec() {
        let spec = LinearModelSpec {
            n: 1000,
            d: 1000,
            r: 2,
            sigma_x: 0.2,
            sigma_y: 2.0,
            w_star_norm: 1.0,
        };
        let model = gen_linear_model(&spec, 7).unwrap();
        // 10^6 entries; empirical variance within 3 standard errors of
        // sigma_x^2/n (se of variance ~ sigma^2 sqrt(2/m)).
        let var_target = spec.sigma_x * spec.sigma_x / spec.n as f64;
        let m = (spec.n * spec.d) as f64;
        let mean: f64 = model.noise.iter().sum::<f64>() / m;
        let var: f64 = model.noise.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (m - 1.0);
        let se = var_target * (2.0 / m).sqrt();
        assert!(
            (var - var_target).abs() <= 3.0 * se,
            "variance {var} vs {var_target} (3 se = {t})",
            t = 3.0 * se
        );
    }

    #[test]
    fn population_loss_closed_forms() {
        let spec = LinearModelSpec {
            n: 200,
            d: 500,
            r: 5,
            sigma_x: 0.2,
            sigma_y: 2.0,
            w_star_norm: 1.0,
        };
        let model = gen_linear_model(&spec, 3).unwrap();

        // w = 0: nuisance = 0.5 (1 - r/n) sigma_y^2 = 0.5*0.975*4 = 1.95.
        let at_zero = linear_population_loss(&model, &DVector::zeros(500)).unwrap();
        assert!((at_zero.nuisance - 1.95).abs() < 1e-12);
        // Additivity is exact by construction.
        assert_eq!(at_zero.total, at_zero.info + at_zero.nuisance);

        // MC oracle: Xw - y = (Xbar w - ybar) + g with g having i.i.d.
        // N(0, s^2/n) entries, s^2 = sigma_x^2 |w|^2 + sigma_y^2. Draw
        // fresh noise and average the three squared projections.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = DVector::from_fn(500, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * 0.05
        });
        let loss = linear_population_loss(&model, &w).unwrap();
        let fit = &model.clean_x * &w - model.clean_y();
        let s2 = spec.sigma_x * spec.sigma_x * w.norm_squared() + spec.sigma_y * spec.sigma_y;
        let scale = (s2 / spec.n as f64).sqrt();
        let draws = 100_000;
        let mut sums = [0.0f64; 3];
        let mut sqs = [0.0f64; 3];
        for _ in 0..draws {
            let g = DVector::from_fn(spec.n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            });
            let v = &fit + &g;
            let total = 0.5 * v.norm_squared();
            let info = 0.5 * (model.u.transpose() * &v).norm_squared();
            for (slot, val) in [total, info, total - info].iter().enumerate() {
                sums[slot] += val;
                sqs[slot] += val * val;
            }
        }
        let m = draws as f64;
        let check = |slot: usize, target: f64| {
            let mean = sums[slot] / m;
            let var = (sqs[slot] / m - mean * mean).max(0.0) * m / (m - 1.0);
            let se = (var / m).sqrt();
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "MC {mean} vs closed form {target} (3 se = {t})",
                t = 3.0 * se
            );
        };
        check(0, loss.total);
        check(1, loss.info);
        check(2, loss.nuisance);
    }

    #[test]
    fn linear_gd_basics_and_dip() {
        let spec = LinearModelSpec::default();
        let model = gen_linear_model(&spec, 11).unwrap();

        // eta = 0: constant trajectory.
        let rows = linear_gd(&model, 0.0, 3).unwrap();
        assert!(rows.iter().all(|r| r.w.norm() == 0.0));

        // Noiseless model: total loss decreases monotonically to
        // 0.5 sigma_y^2 = 0.
        let clean_spec = LinearModelSpec {
            sigma_x: 0.0,
            sigma_y: 0.0,
            ..spec
        };
        let clean = gen_linear_model(&clean_spec, 11).unwrap();
        let rows = linear_gd(&clean, 0.4, 100).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].loss.total <= w[0].loss.total + 1e-12);
        }
        assert!(rows.last().unwrap().loss.total < 1e-3);

        // Corrupted model shows the dip: interior minimum of the total
        // population loss, info strictly decreasing and nuisance strictly
        // increasing after the dip. The horizon stops before the
        // (r/2n) sigma_x^2 |w|^2 noise floor turns the info component
        // around (iteration ~350 for this seed and step size).
        let x = model.observed_x();
        let opnorm = crate::spectral::operator_norm(&x);
        let eta = 0.05 / (opnorm * opnorm);
        let rows = linear_gd(&model, eta, 60).unwrap();
        let (mut argmin, mut minval) = (0usize, f64::INFINITY);
        for (i, r) in rows.iter().enumerate() {
            if r.loss.total < minval {
                minval = r.loss.total;
                argmin = i;
            }
        }
        assert!(argmin > 0 && argmin < rows.len() - 1, "argmin {argmin}");
        for w in rows[argmin..].windows(2) {
            assert!(w[1].loss.info < w[0].loss.info);
            assert!(w[1].loss.nuisance > w[0].loss.nuisance);
        }

        // Unstable step size rejected.
        assert!(matches!(
            linear_gd(&model, 2.1 / (opnorm * opnorm), 3),
            Err(DataError::UnstableStepSize { .. })
        ));
    }

    #[test]
    fn gmm_zero_noise_and_labels() {
        let spec = MixtureSpec::with_random_centers(
            2, 2, 10, 0.0, 0.5, 16, MixtureSampling::Balanced, 5,
        )
        .unwrap();
        let ds = gen_gmm(&spec, 9).unwrap();
        let assignments = ds.cluster_assignments.as_ref().unwrap();
        for (i, &c) in assignments.iter().enumerate() {
            // sigma = 0: sample equals its center.
            assert!((ds.x.row(i) - spec.centers.row(c)).norm() < 1e-15);
            // Label equals the cluster's class.
            assert_eq!(ds.labels[i], c / 2);
        }
        // Balanced: exactly n/(KC) = 4 per cluster.
        for c in 0..4 {
            assert_eq!(assignments.iter().filter(|&&a| a == c).count(), 4);
        }
        // One-hot / concat invariants.
        let y = ds.one_hot();
        for i in 0..16 {
            assert_eq!(y.row(i).sum(), 1.0);
        }
        assert!((ds.concat_y().norm() - 4.0).abs() < 1e-12);
        // Determinism.
        let ds2 = gen_gmm(&spec, 9).unwrap();
        assert_eq!(ds.x, ds2.x);
        assert_eq!(ds.labels, ds2.labels);
    }

    #[test]
    fn gmm_iid_cluster_counts_concentrate() {
        let spec = MixtureSpec::with_random_centers(
            2, 2, 12, 0.1, 0.5, 160, MixtureSampling::Iid, 6,
        )
        .unwrap();
        let expected: f64 = 160.0 / 4.0;
        let tol = 4.0 * expected.sqrt();
        let mut ok = 0;
        for seed in 0..100 {
            let ds = gen_gmm(&spec, seed).unwrap();
            let assignments = ds.cluster_assignments.unwrap();
            let within = (0..4).all(|c| {
                let count = assignments.iter().filter(|&&a| a == c).count() as f64;
                (count - expected).abs() <= tol
            });
            if within {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds within binomial band");
    }

    #[test]
    fn corrupt_labels_cases() {
        let spec = MixtureSpec::with_random_centers(
            3, 2, 8, 0.1, 0.4, 100, MixtureSampling::Iid, 2,
        )
        .unwrap();
        let ds = gen_gmm(&spec, 1).unwrap();

        let same = corrupt_labels(&ds, 0.0, 5).unwrap();
        assert_eq!(same.labels, ds.labels);

        let all = corrupt_labels(&ds, 1.0, 5).unwrap();
        assert!(all
            .labels
            .iter()
            .zip(ds.labels.iter())
            .all(|(a, b)| a != b));

        let half = corrupt_labels(&ds, 0.5, 5).unwrap();
        let changed = half
            .labels
            .iter()
            .zip(ds.labels.iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 50);

        // Single class cannot be corrupted.
        let single = ClassificationDataset::new(
            DMatrix::zeros(4, 2),
            vec![0, 0, 0, 0],
            1,
            None,
        )
        .unwrap();
        assert!(matches!(
            corrupt_labels(&single, 0.5, 1),
            Err(DataError::SingleClassCorruption)
        ));
    }

    #[test]
    fn classification_error_cases() {
        // A net that memorizes: one hidden unit per sample is overkill
        // here; instead craft outputs directly with an identity-activation
        // net reading one-hot features.
        let x = DMatrix::identity(3, 3);
        let labels = vec![0usize, 1, 2];
        let ds = ClassificationDataset::new(x.clone(), labels, 3, None).unwrap();
        let net = ShallowNet::new(
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(classification_error(&net, &ds).unwrap(), 0.0);

        // All labels flipped to a fixed wrong class: error 1.
        let wrong = ClassificationDataset::new(x, vec![1, 2, 0], 3, None).unwrap();
        assert_eq!(classification_error(&net, &wrong).unwrap(), 1.0);

        // Constant-output net on balanced K-class data: picks class 0
        // always (tie-break lowest index), error (K-1)/K.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let xs = DMatrix::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = ClassificationDataset::new(xs, labels, 3, None).unwrap();
        let constant = ShallowNet::new(
            DMatrix::zeros(2, 4),
            DMatrix::zeros(3, 2),
            Activation::Softplus,
        )
        .unwrap();
        let err = classification_error(&constant, &ds).unwrap();
        assert!((err - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let spec = MixtureSpec::with_random_centers(
            2, 3, 7, 0.2, 0.3, 24, MixtureSampling::Iid, 13,
        )
        .unwrap();
        let ds = gen_gmm(&spec, 21).unwrap();
        let dir = std::env::temp_dir().join(format!("ntk-spectra-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("ds.csv");
        let sidecar = dir.join("ds.json");
        write_dataset_csv(&ds, &csv, &sidecar).unwrap();
        let back = read_dataset_csv(&csv, &sidecar).unwrap();
        assert_eq!(ds.x, back.x);
        assert_eq!(ds.labels, back.labels);
        assert_eq!(ds.cluster_assignments, back.cluster_assignments);
        std::fs::remove_dir_all(&dir).ok();
    }
}
