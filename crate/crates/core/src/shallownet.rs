//! One-hidden-layer network `f(x) = V phi(W x)` and its training loop.
//!
//! Outputs over a batch are concatenated per class: entry `l*n + i` of the
//! prediction vector is the `l`-th output on sample `i`. `vect(W)` flattens
//! row-major, so column `s*d + j` of the Jacobian differentiates with
//! respect to `W[s][j]`. [`per_class_to_per_sample`] converts to the
//! interleaved ordering and back.

use crate::spectral::{InfoNuisanceSplit, Subspace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShallowNetError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite values encountered in {0}")]
    NonFinite(&'static str),
    #[error("step size must be nonnegative and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("training diverged at iteration {iter}: residual norm {residual_norm:.3e} exceeds 1e8 x initial")]
    Diverged {
        iter: usize,
        residual_norm: f64,
        log: TrajectoryLog,
    },
}

/// Pointwise activation with uniform bounds on its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Identity,
    Tanh,
}

impl Activation {
    pub fn phi(self, z: f64) -> f64 {
        match self {
            // ln(1 + e^z), stable for large |z|.
            Activation::Softplus => {
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn dphi(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn ddphi(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Uniform bound B with |phi'| <= B and |phi''| <= B.
    pub fn bound_b(self) -> f64 {
        match self {
            Activation::Softplus => 1.0,
            Activation::Identity => 1.0,
            Activation::Tanh => 2.0,
        }
    }

    /// Whether the Jacobian in W is constant (phi'' identically zero).
    pub fn is_linear(self) -> bool {
        matches!(self, Activation::Identity)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One-hidden-layer network with input weights `W` (k x d), fixed output
/// weights `V` (K x k), and a smooth activation.
#[derive(Debug, Clone)]
pub struct ShallowNet {
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    activation: Activation,
}

impl ShallowNet {
    pub fn new(
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        activation: Activation,
    ) -> Result<Self, ShallowNetError> {
        if v.ncols() != w.nrows() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "output weights vs hidden units",
                expected: w.nrows(),
                got: v.ncols(),
            });
        }
        if w.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(ShallowNetError::NonFinite("weights"));
        }
        Ok(ShallowNet { w, v, activation })
    }

    pub fn hidden_units(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.v.nrows()
    }

    /// Number of trainable parameters, `k * d`.
    pub fn param_dim(&self) -> usize {
        self.w.nrows() * self.w.ncols()
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn output_weights(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Replace the input weights, keeping `V` and the activation.
    pub fn with_input_weights(&self, w: DMatrix<f64>) -> Result<Self, ShallowNetError> {
        ShallowNet::new(w, self.v.clone(), self.activation)
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<(), ShallowNetError> {
        if x.ncols() != self.input_dim() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "input feature dimension",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Concatenated predictions over the batch, per-class ordering:
    /// entry `l*n + i` equals the `l`-th output of `V phi(W x_i)`.
    pub fn forward_concat(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ShallowNetError> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let kk = self.num_outputs();
        let mut hidden = x * self.w.transpose(); // n x k
        hidden.apply(|z| *z = self.activation.phi(*z));
        let outputs = hidden * self.v.transpose(); // n x K
        let mut out = DVector::zeros(n * kk);
        for l in 0..kk {
            for i in 0..n {
                out[l * n + i] = outputs[(i, l)];
            }
        }
        Ok(out)
    }

    /// Dense Jacobian of [`Self::forward_concat`] with respect to
    /// `vect(W)`, `Kn x kd`. Class block l is `[J_l(w_1) ... J_l(w_k)]`
    /// with `J_l(w_s) = V[l][s] diag(phi'(X w_s)) X`.
    pub fn jacobian_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ShallowNetError> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let (k, d) = (self.hidden_units(), self.input_dim());
        let kk = self.num_outputs();
        let mut gains = x * self.w.transpose(); // n x k
        gains.apply(|z| *z = self.activation.dphi(*z));
        let mut jac = DMatrix::zeros(kk * n, k * d);
        for l in 0..kk {
            for i in 0..n {
                let row = l * n + i;
                for s in 0..k {
                    let coeff = self.v[(l, s)] * gains[(i, s)];
                    if coeff != 0.0 {
                        for j in 0..d {
                            jac[(row, s * d + j)] = coeff * x[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Matrix-free `mat(J^T u)`: the gradient-shaped `k x d` matrix
    /// `sum_l diag(v_l) phi'(W X^T) diag(u_l) X`, computed without the
    /// dense Jacobian.
    pub fn vjp(&self, x: &DMatrix<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>, ShallowNetError> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let kk = self.num_outputs();
        if u.len() != n * kk {
            return Err(ShallowNetError::DimensionMismatch {
                context: "cotangent length",
                expected: n * kk,
                got: u.len(),
            });
        }
        // u reshaped per class: U[l][i] = u[l*n + i].
        let u_mat = DMatrix::from_fn(kk, n, |l, i| u[l * n + i]);
        let mut gains = &self.w * x.transpose(); // k x n
        gains.apply(|z| *z = self.activation.dphi(*z));
        let weighted = self.v.transpose() * u_mat; // k x n
        Ok(gains.component_mul(&weighted) * x)
    }

    /// Jacobian-vector product `J vect(dw)` as a concatenated output
    /// vector.
    pub fn jvp(
        &self,
        x: &DMatrix<f64>,
        dw: &DMatrix<f64>,
    ) -> Result<DVector<f64>, ShallowNetError> {
        self.check_inputs(x)?;
        if dw.shape() != self.w.shape() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "direction shape",
                expected: self.w.nrows() * self.w.ncols(),
                got: dw.nrows() * dw.ncols(),
            });
        }
        let n = x.nrows();
        let kk = self.num_outputs();
        let mut gains = x * self.w.transpose(); // n x k
        gains.apply(|z| *z = self.activation.dphi(*z));
        let moved = x * dw.transpose(); // n x k
        let per_sample = gains.component_mul(&moved) * self.v.transpose(); // n x K
        let mut out = DVector::zeros(n * kk);
        for l in 0..kk {
            for i in 0..n {
                out[l * n + i] = per_sample[(i, l)];
            }
        }
        Ok(out)
    }

    /// Jacobian with respect to `vect(V)` (rows of V concatenated):
    /// `Kn x kK`, K x K block diagonal with every diagonal block
    /// `phi(X W^T)`.
    pub fn output_jacobian(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ShallowNetError> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let (k, kk) = (self.hidden_units(), self.num_outputs());
        let mut hidden = x * self.w.transpose(); // n x k
        hidden.apply(|z| *z = self.activation.phi(*z));
        let mut jac = DMatrix::zeros(kk * n, kk * k);
        for l in 0..kk {
            jac.view_mut((l * n, l * k), (n, k)).copy_from(&hidden);
        }
        Ok(jac)
    }

    /// Combined input/output Jacobian `[J(V) J(W)]`, `Kn x (kK + kd)`.
    pub fn combined_jacobian(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ShallowNetError> {
        let jv = self.output_jacobian(x)?;
        let jw = self.jacobian_dense(x)?;
        let rows = jv.nrows();
        let mut combined = DMatrix::zeros(rows, jv.ncols() + jw.ncols());
        combined.view_mut((0, 0), (rows, jv.ncols())).copy_from(&jv);
        combined
            .view_mut((0, jv.ncols()), (rows, jw.ncols()))
            .copy_from(&jw);
        Ok(combined)
    }

    /// Squared-error loss `0.5 |f(W) - y|^2`.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64, ShallowNetError> {
        let f = self.forward_concat(x)?;
        if y.len() != f.len() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "label length",
                expected: f.len(),
                got: y.len(),
            });
        }
        Ok(0.5 * (f - y).norm_squared())
    }

    /// One full-batch gradient step on the input layer,
    /// `W <- W - eta J^T(W) (f(W) - y)`; `V` is left unchanged.
    pub fn gd_step(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        eta: f64,
    ) -> Result<ShallowNet, ShallowNetError> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(ShallowNetError::InvalidStepSize(eta));
        }
        let f = self.forward_concat(x)?;
        if y.len() != f.len() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "label length",
                expected: f.len(),
                got: y.len(),
            });
        }
        let grad = self.vjp(x, &(f - y))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ShallowNetError::NonFinite("gradient"));
        }
        Ok(ShallowNet {
            w: &self.w - grad * eta,
            v: self.v.clone(),
            activation: self.activation,
        })
    }
}

/// Convert a per-class concatenated vector (`l*n + i`) to per-sample
/// interleaved ordering (`i*K + l`).
pub fn per_class_to_per_sample(v: &DVector<f64>, n: usize, num_classes: usize) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for l in 0..num_classes {
        for i in 0..n {
            out[i * num_classes + l] = v[l * n + i];
        }
    }
    out
}

/// Inverse of [`per_class_to_per_sample`].
pub fn per_sample_to_per_class(v: &DVector<f64>, n: usize, num_classes: usize) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for l in 0..num_classes {
        for i in 0..n {
            out[l * n + i] = v[i * num_classes + l];
        }
    }
    out
}

/// Random initialization: `W` has i.i.d. standard normal entries and `V`
/// has i.i.d. Rademacher entries of exact magnitude `nu / sqrt(kK)`.
/// Softplus activation; see [`init_random_with`] for others.
pub fn init_random(
    k: usize,
    d: usize,
    num_classes: usize,
    nu: f64,
    seed: u64,
) -> Result<ShallowNet, ShallowNetError> {
    init_random_with(k, d, num_classes, nu, seed, Activation::Softplus)
}

pub fn init_random_with(
    k: usize,
    d: usize,
    num_classes: usize,
    nu: f64,
    seed: u64,
    activation: Activation,
) -> Result<ShallowNet, ShallowNetError> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(ShallowNetError::NonFinite("output scale nu"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fixed generation order: W row by row, then V row by row.
    let mut w = DMatrix::zeros(k, d);
    for i in 0..k {
        for j in 0..d {
            w[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let scale = nu / ((k * num_classes) as f64).sqrt();
    let mut v = DMatrix::zeros(num_classes, k);
    for i in 0..num_classes {
        for j in 0..k {
            v[(i, j)] = if rng.random::<bool>() { scale } else { -scale };
        }
    }
    ShallowNet::new(w, v, activation)
}

/// One per-iteration record of the training trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub residual_norm: f64,
    /// `|W_tau - W_0|_F`.
    pub dist_frobenius: f64,
    /// `|W_tau - W_0|_{2,inf}`, the largest row norm of the difference.
    pub dist_row_max: f64,
    pub info_residual_norm: Option<f64>,
    pub nuisance_residual_norm: Option<f64>,
    /// Values of the observer metrics, in registration order.
    pub metric_values: Vec<f64>,
}

/// Iteration log produced by [`train`]; iteration indices are strictly
/// increasing and the final iterate is always recorded.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn first(&self) -> Option<&TrajectoryRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }
}

/// Optional per-iteration observers for [`train`].
#[derive(Default)]
pub struct Observers<'a> {
    /// Project the residual onto this split and log both norms.
    pub split: Option<&'a InfoNuisanceSplit>,
    /// Extra scalar metrics evaluated on the current net (e.g. train and
    /// held-out classification error), logged in order.
    pub metrics: Vec<&'a dyn Fn(&ShallowNet) -> f64>,
    /// Log every `stride`-th iteration (0 is treated as 1). The initial
    /// and final iterates are always logged.
    pub log_stride: usize,
}

/// Run `iters` full-batch gradient steps, logging the trajectory.
///
/// Fails with [`ShallowNetError::Diverged`] (carrying the partial log) as
/// soon as the residual norm exceeds `1e8` times its initial value.
pub fn train(
    net: &ShallowNet,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: f64,
    iters: usize,
    observers: Observers<'_>,
) -> Result<(ShallowNet, TrajectoryLog), ShallowNetError> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(ShallowNetError::InvalidStepSize(eta));
    }
    let stride = observers.log_stride.max(1);
    let w0 = net.w.clone();
    let mut current = net.clone();
    let mut log = TrajectoryLog::default();

    let record = |net: &ShallowNet, iter: usize, log: &mut TrajectoryLog| -> Result<f64, ShallowNetError> {
        let f = net.forward_concat(x)?;
        if y.len() != f.len() {
            return Err(ShallowNetError::DimensionMismatch {
                context: "label length",
                expected: f.len(),
                got: y.len(),
            });
        }
        let r = f - y;
        let rnorm = r.norm();
        let diff = &net.w - &w0;
        let row_max = (0..diff.nrows())
            .map(|i| diff.row(i).norm())
            .fold(0.0f64, f64::max);
        let (info, nuis) = match observers.split {
            Some(split) => {
                let i = split.projection_norm(&r, Subspace::Information).map_err(|_| {
                    ShallowNetError::DimensionMismatch {
                        context: "observer split dimension",
                        expected: split.output_dim(),
                        got: r.len(),
                    }
                })?;
                let n = split.projection_norm(&r, Subspace::Nuisance).unwrap();
                (Some(i), Some(n))
            }
            None => (None, None),
        };
        log.records.push(TrajectoryRecord {
            iter,
            loss: 0.5 * rnorm * rnorm,
            residual_norm: rnorm,
            dist_frobenius: diff.norm(),
            dist_row_max: row_max,
            info_residual_norm: info,
            nuisance_residual_norm: nuis,
            metric_values: observers.metrics.iter().map(|m| m(net)).collect(),
        });
        Ok(rnorm)
    };

    let r0_norm = record(&current, 0, &mut log)?;
    let divergence_limit = 1e8 * r0_norm.max(f64::MIN_POSITIVE);

    for tau in 1..=iters {
        current = current.gd_step(x, y, eta)?;
        if tau % stride == 0 || tau == iters {
            let rnorm = record(&current, tau, &mut log)?;
            if !rnorm.is_finite() || rnorm > divergence_limit {
                return Err(ShallowNetError::Diverged {
                    iter: tau,
                    residual_norm: rnorm,
                    log,
                });
            }
        }
    }
    Ok((current, log))
}
