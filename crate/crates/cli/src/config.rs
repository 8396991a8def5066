//! Per-command configuration: JSON files with a `command` field, CLI
//! flags overriding config keys, and full validation before any compute.

use crate::error::CliError;
use ntk_spectra_core::data::MixtureSampling;
use ntk_spectra_core::shallownet::Activation;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    LinearDemo,
    GmmSpectrum,
    TrainTrack,
    CorruptSweep,
    MetaVerify,
    BoundEval,
    KernelCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LinearDemo => "linear-demo",
            Command::GmmSpectrum => "gmm-spectrum",
            Command::TrainTrack => "train-track",
            Command::CorruptSweep => "corrupt-sweep",
            Command::MetaVerify => "meta-verify",
            Command::BoundEval => "bound-eval",
            Command::KernelCheck => "kernel-check",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "linear-demo" => Ok(Command::LinearDemo),
            "gmm-spectrum" => Ok(Command::GmmSpectrum),
            "train-track" => Ok(Command::TrainTrack),
            "corrupt-sweep" => Ok(Command::CorruptSweep),
            "meta-verify" => Ok(Command::MetaVerify),
            "bound-eval" => Ok(Command::BoundEval),
            "kernel-check" => Ok(Command::KernelCheck),
            other => Err(CliError::Validation(format!(
                "unknown command '{other}' (expected one of linear-demo, gmm-spectrum, \
                 train-track, corrupt-sweep, meta-verify, bound-eval, kernel-check)"
            ))),
        }
    }
}

/// Fields every command shares; CLI flags override them.
pub trait CommonConfig {
    fn set_seed(&mut self, seed: u64);
    fn set_out_dir(&mut self, out: String);
    fn validate(&self) -> Result<(), CliError>;
}

/// Load a command config: defaults, overlaid by the JSON file (whose
/// `command` field must match), overlaid by CLI flags.
pub fn load<T>(
    command: Command,
    path: Option<&Path>,
    seed: Option<u64>,
    out_dir: Option<String>,
) -> Result<T, CliError>
where
    T: serde::de::DeserializeOwned + Default + CommonConfig,
{
    let mut cfg: T = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", p.display()))
            })?;
            let mut value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
            let obj = value.as_object_mut().ok_or_else(|| {
                CliError::Validation("config root must be a JSON object".into())
            })?;
            if let Some(cmd) = obj.remove("command") {
                let cmd = cmd.as_str().unwrap_or_default().to_string();
                if cmd != command.name() {
                    return Err(CliError::Validation(format!(
                        "config is for command '{cmd}' but '{name}' was requested",
                        name = command.name()
                    )));
                }
            }
            serde_json::from_value(value)
                .map_err(|e| CliError::Validation(format!("bad config: {e}")))?
        }
        None => T::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(o) = out_dir {
        cfg.set_out_dir(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out_dir() -> String {
    "out".into()
}

/// How the spectrum cutoff is chosen.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum AlphaRule {
    /// Geometric midpoint across the largest ratio gap in the spectrum.
    #[default]
    Gap,
    /// The `rank`-th singular value itself (1-based), keeping exactly
    /// `rank` directions in the information space up to ties.
    Rank { rank: usize },
    /// Explicit cutoff value.
    Value { value: f64 },
    /// The smallest singular value (full-rank information space).
    Min,
}

impl AlphaRule {
    /// Resolve the rule against a descending spectrum.
    pub fn resolve(&self, lambdas: &[f64]) -> Result<f64, CliError> {
        if lambdas.is_empty() {
            return Err(CliError::Validation("empty spectrum".into()));
        }
        let m = lambdas.len();
        match *self {
            AlphaRule::Gap => {
                let mut best = (0usize, -1.0f64);
                for i in 0..m - 1 {
                    let denom = lambdas[i + 1].max(1e-300);
                    let ratio = lambdas[i] / denom;
                    if ratio > best.1 {
                        best = (i, ratio);
                    }
                }
                if m == 1 {
                    return Ok(lambdas[0]);
                }
                Ok(midpoint(lambdas[best.0], lambdas[best.0 + 1]))
            }
            AlphaRule::Rank { rank } => {
                if rank == 0 || rank > m {
                    return Err(CliError::Validation(format!(
                        "alpha rank {rank} out of range 1..={m}"
                    )));
                }
                Ok(lambdas[rank - 1])
            }
            AlphaRule::Value { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(CliError::Validation(format!(
                        "alpha value must be nonnegative, got {value}"
                    )));
                }
                Ok(value)
            }
            AlphaRule::Min => Ok(lambdas[m - 1]),
        }
    }
}

/// Geometric midpoint between adjacent singular values, falling back to a
/// small multiple of the upper one when the lower is numerically zero.
fn midpoint(upper: f64, lower: f64) -> f64 {
    if lower > upper * 1e-14 {
        (upper * lower).sqrt()
    } else {
        upper * 1e-7
    }
}

/// Mixture-model block shared by the GMM-driven commands.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureBlock {
    pub num_classes: usize,
    pub clusters_per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub min_center_distance: f64,
    pub sampling: MixtureSampling,
}

impl Default for MixtureBlock {
    fn default() -> Self {
        // Well-separated unit centers, within-cluster scale 0.1, the
        // mixture-figure setup.
        MixtureBlock {
            num_classes: 3,
            clusters_per_class: 2,
            dim: 32,
            sigma: 0.1,
            min_center_distance: 0.5,
            sampling: MixtureSampling::Balanced,
        }
    }
}

impl MixtureBlock {
    fn validate(&self) -> Result<(), CliError> {
        if self.num_classes == 0 || self.clusters_per_class == 0 || self.dim == 0 {
            return Err(CliError::Validation(
                "mixture classes, clusters, and dim must be positive".into(),
            ));
        }
        if self.sigma < 0.0 || self.min_center_distance < 0.0 {
            return Err(CliError::Validation(
                "mixture sigma and min_center_distance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearDemoConfig {
    pub seed: u64,
    pub out_dir: String,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub w_star_norm: f64,
    /// Explicit step size; when absent, `eta_fraction / |X|^2`.
    pub eta: Option<f64>,
    pub eta_fraction: f64,
    pub iters: usize,
    /// Monte-Carlo draws per logged iteration for the `*_mc` columns.
    pub mc_draws: usize,
}

impl Default for LinearDemoConfig {
    fn default() -> Self {
        LinearDemoConfig {
            seed: 0,
            out_dir: default_out_dir(),
            n: 200,
            d: 500,
            r: 5,
            sigma_x: 0.2,
            sigma_y: 2.0,
            w_star_norm: 1.0,
            eta: None,
            eta_fraction: 0.1,
            iters: 40,
            mc_draws: 10_000,
        }
    }
}

impl CommonConfig for LinearDemoConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        if self.r > self.n.min(self.d) {
            return Err(CliError::Validation(format!(
                "rank {} exceeds min(n, d) = {}",
                self.r,
                self.n.min(self.d)
            )));
        }
        if self.sigma_x < 0.0 || self.sigma_y < 0.0 || self.w_star_norm <= 0.0 {
            return Err(CliError::Validation(
                "noise scales must be nonnegative and w_star_norm positive".into(),
            ));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(CliError::Validation(format!("bad eta {eta}")));
            }
        }
        if !(self.eta_fraction > 0.0 && self.eta_fraction < 2.0) {
            return Err(CliError::Validation(
                "eta_fraction must lie in (0, 2)".into(),
            ));
        }
        if self.mc_draws == 0 {
            return Err(CliError::Validation("mc_draws must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSpectrumConfig {
    pub seed: u64,
    pub out_dir: String,
    pub mixture: MixtureBlock,
    /// Dataset sizes; defaults to `[30 C, 60 C]`.
    pub n_values: Option<Vec<usize>>,
    pub num_seeds: usize,
    pub k: usize,
    pub nu: f64,
    pub activation: Activation,
}

impl Default for GmmSpectrumConfig {
    fn default() -> Self {
        GmmSpectrumConfig {
            seed: 0,
            out_dir: default_out_dir(),
            mixture: MixtureBlock::default(),
            n_values: None,
            num_seeds: 5,
            k: 512,
            nu: 1.0,
            activation: Activation::Softplus,
        }
    }
}

impl GmmSpectrumConfig {
    pub fn resolved_n_values(&self) -> Vec<usize> {
        self.n_values.clone().unwrap_or_else(|| {
            let c = self.mixture.clusters_per_class;
            vec![30 * c, 60 * c]
        })
    }
}

impl CommonConfig for GmmSpectrumConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        self.mixture.validate()?;
        let values = self.resolved_n_values();
        if values.len() < 2 {
            return Err(CliError::Validation(
                "gmm-spectrum needs at least two dataset sizes".into(),
            ));
        }
        let kc = self.mixture.num_classes * self.mixture.clusters_per_class;
        for &n in &values {
            if n == 0 || (self.mixture.sampling == MixtureSampling::Balanced && n % kc != 0) {
                return Err(CliError::Validation(format!(
                    "dataset size {n} incompatible with balanced sampling over {kc} clusters"
                )));
            }
        }
        if self.num_seeds == 0 || self.k == 0 || self.nu <= 0.0 {
            return Err(CliError::Validation(
                "num_seeds, k must be positive and nu > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Which matrix defines the information/nuisance split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSource {
    InitialJacobian,
    KernelSqrt,
    FinalJacobian,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTrackConfig {
    pub seed: u64,
    pub out_dir: String,
    pub mixture: MixtureBlock,
    pub n: usize,
    pub holdout_n: usize,
    pub corruption: f64,
    pub k: usize,
    pub nu: f64,
    pub gamma: f64,
    /// Step size; when absent `1/(nu^2 B^2 |X|^2)`.
    pub eta: Option<f64>,
    /// Iteration count; when absent the kernel-regime stopping time
    /// `ceil(Gamma/(eta alpha^2))`.
    pub iters: Option<usize>,
    pub log_stride: usize,
    pub split_source: SplitSource,
    pub alpha_rule: AlphaRule,
    /// Monte-Carlo samples when the split source is the kernel sqrt.
    pub kernel_samples: usize,
}

impl Default for TrainTrackConfig {
    fn default() -> Self {
        TrainTrackConfig {
            seed: 0,
            out_dir: default_out_dir(),
            mixture: MixtureBlock {
                num_classes: 2,
                clusters_per_class: 2,
                dim: 24,
                sigma: 0.1,
                min_center_distance: 0.5,
                sampling: MixtureSampling::Iid,
            },
            n: 60,
            holdout_n: 240,
            corruption: 0.0,
            k: 800,
            nu: 1.0,
            gamma: 2.0,
            eta: None,
            iters: None,
            log_stride: 1,
            split_source: SplitSource::InitialJacobian,
            alpha_rule: AlphaRule::Gap,
            kernel_samples: 20_000,
        }
    }
}

impl CommonConfig for TrainTrackConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        self.mixture.validate()?;
        if self.n == 0 || self.k == 0 {
            return Err(CliError::Validation("n and k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(CliError::Validation(format!(
                "corruption must lie in [0, 1], got {}",
                self.corruption
            )));
        }
        if self.corruption > 0.0 && self.mixture.num_classes < 2 {
            return Err(CliError::Validation(
                "cannot corrupt labels with a single class".into(),
            ));
        }
        if self.nu <= 0.0 || self.gamma < 1.0 {
            return Err(CliError::Validation(
                "nu must be positive and gamma at least 1".into(),
            ));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(CliError::Validation(format!("bad eta {eta}")));
            }
        }
        if self.kernel_samples == 0 && self.split_source == SplitSource::KernelSqrt {
            return Err(CliError::Validation(
                "kernel_samples must be positive for the kernel split".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptSweepConfig {
    pub seed: u64,
    pub out_dir: String,
    pub mixture: MixtureBlock,
    pub n: usize,
    pub holdout_n: usize,
    pub fractions: Vec<f64>,
    pub num_seeds: usize,
    pub k: usize,
    pub nu: f64,
    pub gamma: f64,
    pub eta: Option<f64>,
    pub iters: Option<usize>,
    pub alpha_rule: AlphaRule,
}

impl Default for CorruptSweepConfig {
    fn default() -> Self {
        // Replacing a label by a uniform wrong one leaves residual
        // structure ("not class c" is itself informative): the expected
        // nuisance energy 1 - (1-f)^2 - f^2/(K-1) peaks at f = (K-1)/K
        // and declines toward f = 1. With K >= 10 classes it is strictly
        // increasing across the whole sweep grid.
        CorruptSweepConfig {
            seed: 0,
            out_dir: default_out_dir(),
            mixture: MixtureBlock {
                num_classes: 10,
                clusters_per_class: 1,
                dim: 40,
                sigma: 0.1,
                min_center_distance: 0.5,
                sampling: MixtureSampling::Iid,
            },
            n: 60,
            holdout_n: 300,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            num_seeds: 5,
            k: 600,
            nu: 1.0,
            gamma: 2.0,
            eta: None,
            // The spectrum edge sits at K^2 C, where the auto stopping
            // time runs to thousands of steps; a fixed horizon keeps the
            // sweep fast while the strong directions are fully fit.
            iters: Some(400),
            alpha_rule: AlphaRule::Gap,
        }
    }
}

impl CommonConfig for CorruptSweepConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        self.mixture.validate()?;
        if self.fractions.is_empty() {
            return Err(CliError::Validation("fractions must be nonempty".into()));
        }
        for &f in &self.fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Validation(format!(
                    "corruption fraction {f} outside [0, 1]"
                )));
            }
        }
        if self.fractions.iter().any(|&f| f > 0.0) && self.mixture.num_classes < 2 {
            return Err(CliError::Validation(
                "cannot corrupt labels with a single class".into(),
            ));
        }
        if self.num_seeds == 0 || self.n == 0 || self.k == 0 {
            return Err(CliError::Validation(
                "num_seeds, n, k must be positive".into(),
            ));
        }
        if self.nu <= 0.0 || self.gamma < 1.0 {
            return Err(CliError::Validation(
                "nu must be positive and gamma at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the reference Jacobian of a coupled tracking run is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// The exact (zero-padded) Jacobian at initialization.
    InitialJacobian,
    /// The Kronecker square root of the Monte-Carlo kernel, rescaled to
    /// the network's output-layer magnitude.
    KernelSqrt,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaVerifyConfig {
    pub seed: u64,
    pub out_dir: String,
    pub mixture: MixtureBlock,
    pub n: usize,
    pub k: usize,
    pub nu: f64,
    pub activation: Activation,
    pub gamma: f64,
    pub delta: f64,
    /// Step size; when absent `1/(nu^2 B^2 |X|^2)`.
    pub eta: Option<f64>,
    pub alpha_rule: AlphaRule,
    pub reference: ReferenceKind,
    pub kernel_samples: usize,
    pub lipschitz_probes: usize,
    pub check_recursion: bool,
    pub num_seeds: usize,
    /// Also write the per-iteration trajectory CSV.
    pub write_trajectory: bool,
}

impl Default for MetaVerifyConfig {
    fn default() -> Self {
        MetaVerifyConfig {
            seed: 0,
            out_dir: default_out_dir(),
            mixture: MixtureBlock {
                num_classes: 2,
                clusters_per_class: 2,
                dim: 16,
                sigma: 0.1,
                min_center_distance: 0.5,
                sampling: MixtureSampling::Balanced,
            },
            n: 40,
            k: 4_000,
            nu: 1.0,
            activation: Activation::Softplus,
            gamma: 2.0,
            delta: 0.1,
            eta: None,
            alpha_rule: AlphaRule::Gap,
            reference: ReferenceKind::InitialJacobian,
            kernel_samples: 20_000,
            lipschitz_probes: 4,
            check_recursion: false,
            num_seeds: 1,
            write_trajectory: true,
        }
    }
}

impl CommonConfig for MetaVerifyConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        self.mixture.validate()?;
        if self.n == 0 || self.k == 0 || self.num_seeds == 0 {
            return Err(CliError::Validation(
                "n, k, num_seeds must be positive".into(),
            ));
        }
        if self.nu <= 0.0 || self.gamma < 1.0 {
            return Err(CliError::Validation(
                "nu must be positive and gamma at least 1".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(CliError::Validation(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(CliError::Validation(format!("bad eta {eta}")));
            }
        }
        if self.reference == ReferenceKind::KernelSqrt && self.kernel_samples == 0 {
            return Err(CliError::Validation(
                "kernel_samples must be positive for the kernel reference".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundEvalConfig {
    pub seed: u64,
    pub out_dir: String,
    pub mixture: MixtureBlock,
    pub n: usize,
    pub k: usize,
    /// Output scale; when absent, `zeta / (50 B sqrt(log 2K))`.
    pub nu: Option<f64>,
    pub zeta: f64,
    pub gamma: f64,
    pub confidence_delta: f64,
    /// Residual scale bound; when absent, derived from the measured
    /// initial residual.
    pub c_r: Option<f64>,
    pub alpha_rule: Option<AlphaRule>,
    pub kernel_samples: usize,
}

impl Default for BoundEvalConfig {
    fn default() -> Self {
        BoundEvalConfig {
            seed: 0,
            out_dir: default_out_dir(),
            mixture: MixtureBlock {
                num_classes: 3,
                clusters_per_class: 2,
                dim: 32,
                sigma: 0.0,
                min_center_distance: 0.5,
                sampling: MixtureSampling::Balanced,
            },
            n: 60,
            k: 400,
            nu: None,
            zeta: 0.05,
            gamma: 2.0,
            confidence_delta: 0.05,
            c_r: None,
            alpha_rule: None,
            kernel_samples: 20_000,
        }
    }
}

impl CommonConfig for BoundEvalConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        self.mixture.validate()?;
        if self.n == 0 || self.k == 0 || self.kernel_samples == 0 {
            return Err(CliError::Validation(
                "n, k, kernel_samples must be positive".into(),
            ));
        }
        if !(self.zeta > 0.0 && self.zeta <= 0.5) {
            return Err(CliError::Validation(format!(
                "zeta must lie in (0, 1/2], got {}",
                self.zeta
            )));
        }
        if self.gamma < 1.0 {
            return Err(CliError::Validation("gamma must be at least 1".into()));
        }
        if !(self.confidence_delta > 0.0 && self.confidence_delta < 1.0) {
            return Err(CliError::Validation(
                "confidence_delta must lie in (0, 1)".into(),
            ));
        }
        if let Some(nu) = self.nu {
            if nu <= 0.0 {
                return Err(CliError::Validation("nu must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckConfig {
    pub seed: u64,
    pub out_dir: String,
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub k_values: Vec<usize>,
    pub num_seeds: usize,
    pub mc_samples: usize,
    pub nu: f64,
    pub activation: Activation,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        KernelCheckConfig {
            seed: 0,
            out_dir: default_out_dir(),
            n: 50,
            dim: 25,
            num_classes: 2,
            k_values: vec![100, 1_600],
            num_seeds: 20,
            mc_samples: 20_000,
            nu: 1.0,
            activation: Activation::Softplus,
        }
    }
}

impl CommonConfig for KernelCheckConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn set_out_dir(&mut self, out: String) {
        self.out_dir = out;
    }
    fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 || self.dim == 0 || self.num_classes == 0 {
            return Err(CliError::Validation(
                "n, dim, num_classes must be positive".into(),
            ));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(CliError::Validation(
                "k_values must be nonempty and positive".into(),
            ));
        }
        if self.num_seeds == 0 || self.mc_samples == 0 || self.nu <= 0.0 {
            return Err(CliError::Validation(
                "num_seeds, mc_samples must be positive and nu > 0".into(),
            ));
        }
        Ok(())
    }
}
