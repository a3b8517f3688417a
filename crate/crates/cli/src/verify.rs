//! `nat verify`: the full invariant matrix — neighborhood geometry,
//! oracle and self-attention equivalences, cost parity, crossover
//! consistency, memory accounting, translation equivariance, and
//! determinism — as one seeded, machine-readable run.

use std::time::Instant;

use nat_core::analysis::{cost_conv, cost_na, cost_window_attention, crossover_channels};
use nat_core::attention::{flatten_head, mhna_layer, na_forward, na_qk, self_attention, AttentionParams};
use nat_core::neighborhood::{neighborhood_indices, rel_bias_index, window_start, NeighborhoodSpec};
use nat_core::reference::{na_reference, reference_neighbor_indices};
use nat_core::tensor::softmax_last;
use nat_core::{Rng, Scalar, Tensor};

use crate::report::{Check, RunReport};

struct Tolerances {
    oracle: f64,
    self_attention: f64,
    equivariance: f64,
}

const TOL_F32: Tolerances = Tolerances {
    oracle: 1e-6,
    self_attention: 1e-5,
    equivariance: 1e-6,
};

const TOL_F64: Tolerances = Tolerances {
    oracle: 1e-12,
    self_attention: 1e-12,
    equivariance: 1e-12,
};

pub fn run(report: &mut RunReport, seed: u64, inject_fault: bool) {
    let precision = report.precision.clone();
    match precision.as_str() {
        "f32" => checks::<f32>(report, seed, &TOL_F32, inject_fault),
        _ => checks::<f64>(report, seed, &TOL_F64, inject_fault),
    }
}

fn timed(report: &mut RunReport, name: &str, check: impl FnOnce() -> Check) {
    let start = Instant::now();
    let check = check();
    report.time(name, start.elapsed().as_secs_f64() * 1e3);
    report.push(check);
}

fn checks<T: Scalar>(report: &mut RunReport, seed: u64, tol: &Tolerances, inject_fault: bool) {
    timed(report, "neighborhood_geometry", neighborhood_geometry);
    timed(report, "oracle_equivalence", || {
        oracle_equivalence::<T>(seed, tol.oracle, inject_fault)
    });
    timed(report, "sa_equivalence", || {
        sa_equivalence::<T>(seed, tol.self_attention)
    });
    timed(report, "cost_parity", cost_parity);
    timed(report, "crossover_consistency", crossover_consistency);
    timed(report, "memory_accounting", || memory_accounting::<T>(seed));
    timed(report, "translation_equivariance", || {
        translation_equivariance::<T>(seed, tol.equivariance)
    });
    timed(report, "determinism", || determinism::<T>(seed));
}

fn neighborhood_geometry() -> Check {
    let mut mismatches = 0u64;
    for kernel in [3usize, 5, 7] {
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        for (h, w) in [(5usize, 5usize), (7, 4), (12, 9), (2, 2)] {
            let mut prev_start = 0usize;
            for i in 0..h {
                let win = window_start(i, h, spec).unwrap();
                if win.len != kernel.min(h) || i < win.start || i >= win.start + win.len {
                    mismatches += 1;
                }
                if win.start < prev_start {
                    mismatches += 1;
                }
                prev_start = win.start;
                for j in 0..w {
                    let nbrs = neighborhood_indices(i, j, h, w, spec).unwrap();
                    if nbrs.len() != kernel.min(h) * kernel.min(w) || !nbrs.contains(&(i, j)) {
                        mismatches += 1;
                    }
                    if nbrs != reference_neighbor_indices(i, j, h, w, spec) {
                        mismatches += 1;
                    }
                }
            }
        }
        // The bias index must cover exactly 0..=2L-2 on a long axis.
        let n = kernel + 5;
        let mut seen = vec![false; 2 * kernel - 1];
        for i in 0..n {
            let win = window_start(i, n, spec).unwrap();
            for p in win.start..win.start + win.len {
                seen[rel_bias_index(i, p, spec).unwrap()] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            mismatches += 1;
        }
        // Corner example: query (4,0) on 5x5 with L=3.
        if kernel == 3 {
            let corner = neighborhood_indices(4, 0, 5, 5, spec).unwrap();
            let expect: Vec<(usize, usize)> =
                (2..5).flat_map(|r| (0..3).map(move |c| (r, c))).collect();
            if corner != expect {
                mismatches += 1;
            }
        }
    }
    Check::at_most("neighborhood_geometry", mismatches as f64, 0.0)
}

fn oracle_equivalence<T: Scalar>(seed: u64, tolerance: f64, inject_fault: bool) -> Check {
    let mut worst = 0.0f64;
    for (case, (h, w, kernel, heads, d)) in [
        (3usize, 3usize, 3usize, 1usize, 4usize),
        (5, 8, 3, 2, 8),
        (8, 5, 5, 2, 4),
        (12, 12, 7, 4, 8),
        (3, 12, 7, 1, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = Rng::new(seed ^ (case as u64 + 1));
        let q = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
        let k = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
        let v = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
        let table = 2 * kernel - 1;
        let bias = Tensor::<T>::random_normal(vec![heads, table, table], &mut rng).unwrap();
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        let mut fused = na_forward(&q, &k, &v, &bias, spec).unwrap();
        if inject_fault {
            // Test hook: perturb one fused output so the harness must flag
            // this check and exit nonzero.
            fused.data_mut()[0] += T::from_f64(1e-3);
        }
        let dense = na_reference(&q, &k, &v, &bias, spec).unwrap();
        worst = worst.max(fused.max_abs_diff(&dense));
    }
    Check::at_most("oracle_equivalence", worst, tolerance)
}

fn sa_equivalence<T: Scalar>(seed: u64, tolerance: f64) -> Check {
    let (h, w, d) = (5usize, 5usize, 8usize);
    let mut worst = 0.0f64;
    for heads in [1usize, 2] {
        for kernel in [5usize, 7] {
            let spec = NeighborhoodSpec::new(kernel).unwrap();
            let mut rng = Rng::new(seed ^ ((heads * 100 + kernel) as u64));
            let q = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
            let k = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
            let v = Tensor::<T>::random_normal(vec![h, w, heads, d], &mut rng).unwrap();
            let table = 2 * kernel - 1;
            let bias = Tensor::<T>::zeros(vec![heads, table, table]).unwrap();
            let na = na_forward(&q, &k, &v, &bias, spec).unwrap();
            for head in 0..heads {
                let sa = self_attention(
                    &flatten_head(&q, head),
                    &flatten_head(&k, head),
                    &flatten_head(&v, head),
                )
                .unwrap();
                worst = worst.max(flatten_head(&na, head).max_abs_diff(&sa));
            }
        }
    }
    Check::at_most("sa_equivalence", worst, tolerance)
}

fn cost_parity() -> Check {
    let mut mismatches = 0u64;
    for kernel in [3usize, 5, 7, 9, 11] {
        for mh in 1..=4usize {
            for mw in 1..=4usize {
                for c in [4usize, 16, 48, 128] {
                    let (h, w) = (kernel * mh, kernel * mw);
                    let na = cost_na(h, w, c, kernel).unwrap();
                    let win = cost_window_attention(h, w, c, kernel).unwrap();
                    if na.macs != win.macs || na.memory_scalars != win.memory_scalars {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Check::at_most("cost_parity", mismatches as f64, 0.0)
}

fn crossover_consistency() -> Check {
    let mut mismatches = 0u64;
    if crossover_channels(3).unwrap() != 4 {
        mismatches += 1;
    }
    for kernel in [3usize, 5, 7] {
        let boundary = crossover_channels(kernel).unwrap();
        for c in 1..=64usize {
            let na = cost_na(16, 16, c, kernel).unwrap().macs;
            let conv = cost_conv(16, 16, c, kernel).unwrap().macs;
            if ((c as u64) >= boundary) != (na < conv) {
                mismatches += 1;
            }
        }
    }
    Check::at_most("crossover_consistency", mismatches as f64, 0.0)
}

fn memory_accounting<T: Scalar>(seed: u64) -> Check {
    let mut rng = Rng::new(seed ^ 0xACC0);
    let mut mismatches = 0u64;
    for _ in 0..10 {
        let h = 1 + (rng.next_u64() % 18) as usize;
        let w = 1 + (rng.next_u64() % 18) as usize;
        let kernel = 3 + 2 * (rng.next_u64() % 4) as usize;
        let d = 1 + (rng.next_u64() % 8) as usize;
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        let q = Tensor::<T>::random_normal(vec![h, w, 1, d], &mut rng).unwrap();
        let k = Tensor::<T>::random_normal(vec![h, w, 1, d], &mut rng).unwrap();
        let table = 2 * kernel - 1;
        let bias = Tensor::<T>::zeros(vec![1, table, table]).unwrap();
        let logits = na_qk(&q, &k, &bias, spec).unwrap();
        let formula = cost_na(h, w, d, kernel)
            .unwrap()
            .term("attn_weights")
            .unwrap()
            .memory;
        if logits.numel() as u64 != formula {
            mismatches += 1;
        }
    }
    Check::at_most("memory_accounting", mismatches as f64, 0.0)
}

fn translation_equivariance<T: Scalar>(seed: u64, tolerance: f64) -> Check {
    let (h, w, c) = (12usize, 12usize, 8usize);
    let (dy, dx) = (2usize, 3usize);
    let mut worst = 0.0f64;
    for kernel in [3usize, 5] {
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        let radius = (kernel - 1) / 2;
        let mut rng = Rng::new(seed ^ (kernel as u64) << 8);
        let base = Tensor::<T>::random_normal(vec![h, w, c], &mut rng).unwrap();
        let mut params = AttentionParams::<T>::random_init(c, 2, spec, &mut rng).unwrap();
        params.bias_table =
            Tensor::random_normal(vec![2, 2 * kernel - 1, 2 * kernel - 1], &mut rng).unwrap();
        let mut shifted = Tensor::<T>::random_normal(vec![h, w, c], &mut rng).unwrap();
        for i in 0..h - dy {
            for j in 0..w - dx {
                for cc in 0..c {
                    let v = base.at(&[i, j, cc]);
                    shifted.data_mut()[((i + dy) * w + j + dx) * c + cc] = v;
                }
            }
        }
        let out_a = mhna_layer(&base, &params, spec).unwrap();
        let out_b = mhna_layer(&shifted, &params, spec).unwrap();
        for i in radius..=(h - 1 - dy - radius) {
            for j in radius..=(w - 1 - dx - radius) {
                for cc in 0..c {
                    let a = out_a.at(&[i, j, cc]).to_f64();
                    let b = out_b.at(&[i + dy, j + dx, cc]).to_f64();
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Check::at_most("translation_equivariance", worst, tolerance)
}

fn determinism<T: Scalar>(seed: u64) -> Check {
    let spec = NeighborhoodSpec::new(5).unwrap();
    let mut rng = Rng::new(seed ^ 0xDE7);
    let q = Tensor::<T>::random_normal(vec![9, 10, 2, 8], &mut rng).unwrap();
    let k = Tensor::<T>::random_normal(vec![9, 10, 2, 8], &mut rng).unwrap();
    let v = Tensor::<T>::random_normal(vec![9, 10, 2, 8], &mut rng).unwrap();
    let bias = Tensor::<T>::random_normal(vec![2, 9, 9], &mut rng).unwrap();
    let once = na_forward(&q, &k, &v, &bias, spec).unwrap();
    let twice = na_forward(&q, &k, &v, &bias, spec).unwrap();
    let probs = softmax_last(&na_qk(&q, &k, &bias, spec).unwrap()).unwrap();
    let probs2 = softmax_last(&na_qk(&q, &k, &bias, spec).unwrap()).unwrap();
    let identical = once.data() == twice.data() && probs.data() == probs2.data();
    Check::at_most("determinism", if identical { 0.0 } else { 1.0 }, 0.0)
}
