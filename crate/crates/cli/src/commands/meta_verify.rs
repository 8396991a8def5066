//! Coupled original-vs-linearized runs: per seed, the tracking
//! inequalities with measured slack, the hypothesis thresholds, and
//! optionally the full per-iteration trajectory.

use super::{build_mixture, sub_seed, theorem_step_size, TAG_KERNEL, TAG_NET, TAG_PROBE};
use crate::config::{MetaVerifyConfig, ReferenceKind};
use crate::error::{from_lindyn, from_net, from_ntk, CliError};
use crate::io::{ensure_out_dir, float17, write_json, CsvWriter};
use nalgebra::DMatrix;
use ntk_spectra_core::lindyn::{
    coupled_run, CoupledRunConfig, HypothesisReport, InequalityCheck, ReferenceJacobian,
    RecursionCheck,
};
use ntk_spectra_core::ntk::mc_kernel;
use ntk_spectra_core::shallownet::init_random_with;
use ntk_spectra_core::spectral;
use serde::Serialize;

#[derive(Serialize)]
struct SeedReport {
    seed_index: usize,
    t_iters: usize,
    alpha: f64,
    beta: f64,
    eta: f64,
    r0_norm: f64,
    residual_tracking: InequalityCheck,
    param_tracking: InequalityCheck,
    distance_bound: InequalityCheck,
    final_residual: InequalityCheck,
    hypotheses: HypothesisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    recursion: Option<RecursionCheck>,
    all_inequalities_hold: bool,
}

#[derive(Serialize)]
struct MetaVerifySummary {
    seed: u64,
    num_seeds: usize,
    gamma: f64,
    delta: f64,
    all_seeds_pass: bool,
    hypotheses_met_in_all_seeds: bool,
    per_seed: Vec<SeedReport>,
}

pub fn run(cfg: &MetaVerifyConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg.out_dir)?;
    let (_, ds) = build_mixture(&cfg.mixture, cfg.n, cfg.seed)?;
    let x = ds.x.clone();
    let y = ds.concat_y();
    let kk = cfg.mixture.num_classes;
    let opnorm_x = spectral::operator_norm(&x);

    let kernel = if cfg.reference == ReferenceKind::KernelSqrt {
        Some(
            mc_kernel(
                &x,
                cfg.activation,
                kk,
                cfg.kernel_samples,
                sub_seed(cfg.seed, TAG_KERNEL),
            )
            .map_err(from_ntk)?,
        )
    } else {
        None
    };

    let mut per_seed = Vec::new();
    let mut trajectory_csv: Option<CsvWriter> = None;
    for seed_index in 0..cfg.num_seeds {
        let net = init_random_with(
            cfg.k,
            cfg.mixture.dim,
            kk,
            cfg.nu,
            sub_seed(cfg.seed.wrapping_add(seed_index as u64), TAG_NET),
            cfg.activation,
        )
        .map_err(from_net)?;
        let b = cfg.activation.bound_b();
        // Global spectral bound: |J(W)| <= B sqrt(Kk) |V|_inf |X| = nu B |X|
        // for the exact-magnitude initialization.
        let beta_global = cfg.nu * b * opnorm_x;
        let eta = cfg.eta.unwrap_or_else(|| theorem_step_size(cfg.nu, b, opnorm_x));

        let reference = match cfg.reference {
            ReferenceKind::InitialJacobian => {
                let jac = net.jacobian_dense(&x).map_err(from_net)?;
                let beta = beta_global.max(spectral::operator_norm(&jac));
                ReferenceJacobian::new(jac, beta).map_err(from_lindyn)?
            }
            ReferenceKind::KernelSqrt => {
                // J J^T must approximate E[J(W_0) J(W_0)^T] = (nu^2/K) Sigma(X);
                // rescale the kernel sqrt accordingly and pad to the
                // parameter width.
                let km = kernel.as_ref().expect("kernel built above");
                let root = km.multiclass_sqrt().map_err(from_ntk)?
                    * (cfg.nu / (kk as f64).sqrt());
                let m = root.nrows();
                let width = m.max(net.param_dim());
                let mut padded = DMatrix::zeros(m, width);
                padded.view_mut((0, 0), (m, m)).copy_from(&root);
                let beta = beta_global.max(spectral::operator_norm(&padded));
                ReferenceJacobian::new(padded, beta).map_err(from_lindyn)?
            }
        };
        let lambdas: Vec<f64> = reference
            .decomposition()
            .singular_values()
            .iter()
            .copied()
            .collect();
        let alpha = cfg.alpha_rule.resolve(&lambdas)?;

        let run_cfg = CoupledRunConfig {
            alpha,
            gamma: cfg.gamma,
            eta,
            delta: cfg.delta,
            lipschitz_probes: cfg.lipschitz_probes,
            probe_seed: sub_seed(cfg.seed.wrapping_add(seed_index as u64), TAG_PROBE),
            check_recursion: cfg.check_recursion,
        };
        let (trajectory, report) =
            coupled_run(&net, &x, &y, &reference, &run_cfg).map_err(from_lindyn)?;

        if cfg.write_trajectory && seed_index == 0 {
            let mut csv = CsvWriter::new(
                "meta_verify_trajectory v1",
                &[
                    "iter",
                    "residual",
                    "lin_residual",
                    "coupling_gap",
                    "param_gap",
                    "dist_from_init",
                    "info_residual",
                    "nuisance_residual",
                ],
            );
            for rec in &trajectory.records {
                csv.row(&[
                    rec.iter.to_string(),
                    float17(rec.residual_norm),
                    float17(rec.lin_residual_norm),
                    float17(rec.coupling_gap),
                    float17(rec.param_gap),
                    float17(rec.dist_from_init),
                    float17(rec.info_residual_norm),
                    float17(rec.nuisance_residual_norm),
                ]);
            }
            trajectory_csv = Some(csv);
        }

        per_seed.push(SeedReport {
            seed_index,
            t_iters: trajectory.t_iters,
            alpha,
            beta: reference.beta(),
            eta,
            r0_norm: trajectory.records[0].residual_norm,
            residual_tracking: report.residual_tracking,
            param_tracking: report.param_tracking,
            distance_bound: report.distance_bound,
            final_residual: report.final_residual,
            hypotheses: report.hypotheses,
            recursion: report.recursion,
            all_inequalities_hold: report.all_inequalities_hold(),
        });
    }

    if let Some(csv) = trajectory_csv {
        csv.write(&out.join("meta_verify_trajectory.csv"))?;
    }
    let summary = MetaVerifySummary {
        seed: cfg.seed,
        num_seeds: cfg.num_seeds,
        gamma: cfg.gamma,
        delta: cfg.delta,
        all_seeds_pass: per_seed.iter().all(|s| s.all_inequalities_hold),
        hypotheses_met_in_all_seeds: per_seed
            .iter()
            .all(|s| s.hypotheses.hypotheses_met_up_to_sampling),
        per_seed,
    };
    write_json(&out.join("meta_verify.json"), &summary)?;
    Ok(())
}
