//! Kernel concentration sweep: the normalized gap
//! `|(K/nu^2) J(W_0) J(W_0)^T - Sigma(X)|` across hidden widths, with
//! per-width medians and the shrink ratio.

use super::{sub_seed, TAG_DATA, TAG_KERNEL};
use crate::config::KernelCheckConfig;
use crate::error::{from_net, from_ntk, CliError};
use crate::io::{ensure_out_dir, float17, write_json, CsvWriter};
use nalgebra::DMatrix;
use ntk_spectra_core::ntk::{concentration_gap, mc_kernel};
use ntk_spectra_core::shallownet::init_random_with;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

#[derive(Serialize)]
struct PerWidth {
    k: usize,
    median_gap: f64,
    min_gap: f64,
    max_gap: f64,
}

#[derive(Serialize)]
struct KernelCheckSummary {
    seed: u64,
    num_seeds: usize,
    mc_samples: usize,
    kernel_max_stderr: f64,
    per_width: Vec<PerWidth>,
    /// median_gap(first k) / median_gap(last k); the sqrt(k) law predicts
    /// sqrt(k_last / k_first).
    median_gap_ratio: f64,
    predicted_ratio: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Uniform unit-norm rows.
fn sphere_inputs(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, dim, |_, _| StandardNormal.sample(&mut rng));
    for i in 0..n {
        let norm = x.row(i).norm();
        x.row_mut(i).scale_mut(1.0 / norm);
    }
    x
}

pub fn run(cfg: &KernelCheckConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg.out_dir)?;
    let x = sphere_inputs(cfg.n, cfg.dim, sub_seed(cfg.seed, TAG_DATA));
    let km = mc_kernel(
        &x,
        cfg.activation,
        cfg.num_classes,
        cfg.mc_samples,
        sub_seed(cfg.seed, TAG_KERNEL),
    )
    .map_err(from_ntk)?;

    let mut csv = CsvWriter::new("kernel_check v1", &["k", "seed_index", "gap"]);
    let mut per_width = Vec::new();
    for &k in &cfg.k_values {
        let mut gaps = Vec::new();
        for seed_index in 0..cfg.num_seeds {
            let net = init_random_with(
                k,
                cfg.dim,
                cfg.num_classes,
                cfg.nu,
                sub_seed(cfg.seed, 10_000 + (k as u64) * 1_000 + seed_index as u64),
                cfg.activation,
            )
            .map_err(from_net)?;
            let gap = concentration_gap(&net, &x, &km, cfg.nu).map_err(from_ntk)?;
            csv.row(&[k.to_string(), seed_index.to_string(), float17(gap)]);
            gaps.push(gap);
        }
        per_width.push(PerWidth {
            k,
            median_gap: median(gaps.clone()),
            min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            max_gap: gaps.iter().copied().fold(0.0, f64::max),
        });
    }
    csv.write(&out.join("kernel_check.csv"))?;

    let first = &per_width[0];
    let last = &per_width[per_width.len() - 1];
    let summary = KernelCheckSummary {
        seed: cfg.seed,
        num_seeds: cfg.num_seeds,
        mc_samples: cfg.mc_samples,
        kernel_max_stderr: km.max_stderr(),
        median_gap_ratio: first.median_gap / last.median_gap.max(1e-300),
        predicted_ratio: (last.k as f64 / first.k as f64).sqrt(),
        per_width,
    };
    write_json(&out.join("kernel_check_summary.json"), &summary)?;
    Ok(())
}
