//! Acceptance suite. Each test exercises one verification criterion end to
//! end at its stated tolerance and prints one PASS/FAIL line (visible with
//! `cargo test -p nat-core --test acceptance -- --nocapture`).

use std::time::Instant;

use nat_core::analysis::{cost_conv, cost_na, cost_window_attention, crossover_channels, model_stats};
use nat_core::attention::{flatten_head, na_backward, na_forward, na_qk, self_attention, AttentionParams, mhna_layer};
use nat_core::model::{NatConfig, NatModel, NatWeights};
use nat_core::neighborhood::{neighborhood_indices, window_start, NeighborhoodSpec};
use nat_core::reference::{na_reference, reference_neighbor_indices};
use nat_core::tensor::softmax_last;
use nat_core::{Rng, Scalar, Tensor};

fn report(criterion: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[{status}] {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn random_map<T: Scalar>(h: usize, w: usize, heads: usize, d: usize, rng: &mut Rng) -> Tensor<T> {
    Tensor::random_normal(vec![h, w, heads, d], rng).unwrap()
}

/// Criterion 1: with the bias removed and the kernel covering the map,
/// neighborhood attention equals self attention on the flattened tokens.
#[test]
fn criterion_1_na_equals_self_attention() {
    let start = Instant::now();
    let (h, w, d) = (5usize, 5usize, 8usize);
    let mut worst_f32 = 0.0f64;
    let mut worst_f64 = 0.0f64;
    for heads in [1usize, 2] {
        for kernel in [5usize, 7] {
            let spec = NeighborhoodSpec::new(kernel).unwrap();
            let table = 2 * kernel - 1;
            let mut rng = Rng::new(1000 + (heads * 10 + kernel) as u64);

            let q64: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
            let k64: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
            let v64: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
            let zero_bias64 = Tensor::<f64>::zeros(vec![heads, table, table]).unwrap();

            let na = na_forward(&q64, &k64, &v64, &zero_bias64, spec).unwrap();
            for head in 0..heads {
                let sa = self_attention(
                    &flatten_head(&q64, head),
                    &flatten_head(&k64, head),
                    &flatten_head(&v64, head),
                )
                .unwrap();
                worst_f64 = worst_f64.max(flatten_head(&na, head).max_abs_diff(&sa));
            }

            let (q32, k32, v32) = (q64.cast::<f32>(), k64.cast::<f32>(), v64.cast::<f32>());
            let zero_bias32 = Tensor::<f32>::zeros(vec![heads, table, table]).unwrap();
            let na = na_forward(&q32, &k32, &v32, &zero_bias32, spec).unwrap();
            for head in 0..heads {
                let sa = self_attention(
                    &flatten_head(&q32, head),
                    &flatten_head(&k32, head),
                    &flatten_head(&v32, head),
                )
                .unwrap();
                worst_f32 = worst_f32.max(flatten_head(&na, head).max_abs_diff(&sa));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 1 (NA degenerates to self attention)",
        worst_f32 <= 1e-5 && worst_f64 <= 1e-12 && elapsed < 1.0,
        &format!("max diff f32 {worst_f32:.2e} (tol 1e-5), f64 {worst_f64:.2e} (tol 1e-12), {elapsed:.2}s (limit 1s)"),
    );
}

/// Criterion 2: the fused kernels agree with the unfold-plus-replication
/// reference everywhere on the shape grid, and both routes enumerate the
/// same neighbor sets.
#[test]
fn criterion_2_fused_matches_unfold_reference() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    let mut index_mismatches = 0usize;
    for h in 3..=12usize {
        for w in 3..=12usize {
            for kernel in [3usize, 5, 7] {
                let spec = NeighborhoodSpec::new(kernel).unwrap();
                for i in 0..h {
                    for j in 0..w {
                        if reference_neighbor_indices(i, j, h, w, spec)
                            != neighborhood_indices(i, j, h, w, spec).unwrap()
                        {
                            index_mismatches += 1;
                        }
                    }
                }
                for heads in [1usize, 2, 4] {
                    for d in [2usize, 4, 8] {
                        let mut rng =
                            Rng::new((((h * 13 + w) * 8 + kernel) * 5 + heads) as u64 * 17 + d as u64);
                        let q: Tensor<f32> = random_map(h, w, heads, d, &mut rng);
                        let k: Tensor<f32> = random_map(h, w, heads, d, &mut rng);
                        let v: Tensor<f32> = random_map(h, w, heads, d, &mut rng);
                        let table = 2 * kernel - 1;
                        let bias =
                            Tensor::<f32>::random_normal(vec![heads, table, table], &mut rng)
                                .unwrap();
                        let fused = na_forward(&q, &k, &v, &bias, spec).unwrap();
                        let dense = na_reference(&q, &k, &v, &bias, spec).unwrap();
                        worst = worst.max(fused.max_abs_diff(&dense));
                        cases += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 2 (fused kernels match unfold reference)",
        worst <= 1e-6 && index_mismatches == 0 && elapsed < 60.0,
        &format!(
            "{cases} cases, max diff {worst:.2e} (tol 1e-6), {index_mismatches} index mismatches, {elapsed:.1}s (limit 60s)"
        ),
    );
}

/// Criterion 3: analytic gradients match central finite differences.
#[test]
fn criterion_3_gradients_match_finite_differences() {
    let start = Instant::now();
    let (h, w, d, heads) = (4usize, 5usize, 6usize, 1usize);
    let spec = NeighborhoodSpec::new(3).unwrap();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for instance in 0..3u64 {
        let mut rng = Rng::new(3000 + instance);
        let q: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
        let k: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
        let v: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
        let bias = Tensor::<f64>::random_normal(vec![heads, 5, 5], &mut rng).unwrap();
        let d_out: Tensor<f64> = random_map(h, w, heads, d, &mut rng);
        let grads = na_backward(&q, &k, &v, &bias, spec, &d_out).unwrap();

        let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            na_forward(q, k, v, b, spec)
                .unwrap()
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&o, &g)| o * g)
                .sum()
        };
        let tensors: [(&Tensor<f64>, &Tensor<f64>); 4] =
            [(&q, &grads.d_q), (&k, &grads.d_k), (&v, &grads.d_v), (&bias, &grads.d_bias)];
        for (which, (input, analytic)) in tensors.iter().enumerate() {
            for flat in 0..input.numel() {
                let mut plus = (*input).clone();
                plus.data_mut()[flat] += step;
                let mut minus = (*input).clone();
                minus.data_mut()[flat] -= step;
                let eval = |t: &Tensor<f64>| match which {
                    0 => loss(t, &k, &v, &bias),
                    1 => loss(&q, t, &v, &bias),
                    2 => loss(&q, &k, t, &bias),
                    _ => loss(&q, &k, &v, t),
                };
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let got = analytic.data()[flat];
                // Relative error with a floor so near-zero entries are
                // judged in absolute terms.
                let rel = (got - numeric).abs() / got.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "criterion 3 (analytic gradients vs finite differences)",
        worst <= 1e-4 && elapsed < 30.0,
        &format!("max rel err {worst:.2e} (tol 1e-4), {elapsed:.1}s (limit 30s)"),
    );
}

/// Criterion 4: corner windows expand rather than shrink.
#[test]
fn criterion_4_corner_semantics() {
    let spec = NeighborhoodSpec::new(3).unwrap();
    let (h, w) = (5usize, 5usize);
    let mut ok = true;
    let mut detail = String::new();

    for i in 0..h {
        for j in 0..w {
            let nbrs = neighborhood_indices(i, j, h, w, spec).unwrap();
            if nbrs.len() != 9 {
                ok = false;
                detail = format!("query ({i},{j}) has {} neighbors", nbrs.len());
            }
            if !nbrs.contains(&(i, j)) {
                ok = false;
                detail = format!("query ({i},{j}) is outside its own window");
            }
        }
    }

    let corner = neighborhood_indices(4, 0, h, w, spec).unwrap();
    let expect: Vec<(usize, usize)> =
        (2..5).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
    if corner != expect {
        ok = false;
        detail = format!("corner (4,0) set {corner:?}");
    }

    let mut prev = 0usize;
    for i in 0..h {
        let s = window_start(i, h, spec).unwrap().start;
        if s < prev {
            ok = false;
            detail = format!("window start not monotone at {i}");
        }
        prev = s;
    }

    if ok {
        detail = "5x5 map, L=3: 9 neighbors everywhere, corner set exact, starts monotone".into();
    }
    report("criterion 4 (corner expansion semantics)", ok, &detail);
}

/// Criterion 5: neighborhood and window attention cost the same whenever
/// the window divides the map.
#[test]
fn criterion_5_cost_parity_with_window_attention() {
    let mut points = 0usize;
    let mut mismatches = 0usize;
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
                    points += 1;
                }
            }
        }
    }
    report(
        "criterion 5 (NA / window attention cost parity)",
        points >= 200 && mismatches == 0,
        &format!("{points} sweep points, {mismatches} mismatches (exact integer equality)"),
    );
}

/// Criterion 6: parameter and MAC accounting reproduces the published
/// model table at 224x224.
#[test]
fn criterion_6_model_table_reproduction() {
    let start = Instant::now();
    let expectations = [
        ("mini", 20e6, 2.7e9),
        ("tiny", 28e6, 4.3e9),
        ("small", 51e6, 7.8e9),
        ("base", 90e6, 13.7e9),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, params_expect, macs_expect) in expectations {
        let config = NatConfig::preset(name).unwrap();
        let stats = model_stats(&config, 224, 224).unwrap();
        let p_rel = (stats.params as f64 - params_expect).abs() / params_expect;
        let m_rel = (stats.macs as f64 - macs_expect).abs() / macs_expect;
        if p_rel > 0.05 || m_rel > 0.10 {
            ok = false;
        }
        details.push(format!(
            "{name}: {:.1}M params ({:.1}% off), {:.2}G macs ({:.1}% off)",
            stats.params as f64 / 1e6,
            p_rel * 100.0,
            stats.macs as f64 / 1e9,
            m_rel * 100.0
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 1.0 {
        ok = false;
    }
    report(
        "criterion 6 (published variant params/FLOPs)",
        ok,
        &format!("{} [{elapsed:.2}s, limit 1s]", details.join("; ")),
    );
}

/// Criterion 7: NA-vs-convolution crossover channel count.
#[test]
fn criterion_7_crossover_channels() {
    let boundary3 = crossover_channels(3).unwrap();
    let mut ok = boundary3 == 4;
    for c in 1..=64usize {
        let na = cost_na(8, 8, c, 3).unwrap().macs;
        let conv = cost_conv(8, 8, c, 3).unwrap().macs;
        if ((c as u64) >= boundary3) != (na < conv) {
            ok = false;
        }
    }
    // At L = 5 the full inequality (QKV terms included) gives C >= 3, not
    // C > 1; reported here rather than asserted against the looser claim.
    let boundary5 = crossover_channels(5).unwrap();
    println!(
        "note: crossover_channels(5) = {boundary5} from 3C^2 + 2CL^2 < C^2L^2; \
         the attention-only reading would give C > 1"
    );
    report(
        "criterion 7 (NA cheaper than convolution for C > 3 at L = 3)",
        ok && boundary5 == 3,
        &format!("crossover(3) = {boundary3}, cross-validated on C in 1..=64; crossover(5) = {boundary5}"),
    );
}

/// Criterion 8: the full Tiny model runs at 224x224 in the time budget,
/// produces finite logits, and is bitwise reproducible across runs and
/// thread counts.
#[test]
fn criterion_8_full_model_execution() {
    let config = NatConfig::preset("tiny").unwrap();
    let mut rng = Rng::new(42);
    let weights = NatWeights::<f32>::random_init(&config, &mut rng).unwrap();
    let image = Tensor::<f32>::random_normal(vec![224, 224, 3], &mut rng).unwrap();
    let model = NatModel::from_weights(config, &weights).unwrap();

    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let logits = single.install(|| model.forward(&image)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let rerun = single.install(|| model.forward(&image)).unwrap();
    let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let wide = multi.install(|| model.forward(&image)).unwrap();

    let finite = logits.shape() == [1000] && logits.all_finite();
    let reproducible = logits.data() == rerun.data() && logits.data() == wide.data();
    report(
        "criterion 8 (Tiny forward at 224)",
        finite && reproducible && elapsed < 120.0,
        &format!(
            "{elapsed:.1}s single-threaded (limit 120s), finite {finite}, bitwise stable across runs and 1->4 threads {reproducible}"
        ),
    );
}

/// Criterion 9: interior outputs follow input translations exactly, with
/// the bias table active.
#[test]
fn criterion_9_translation_equivariance() {
    let (h, w, c) = (12usize, 12usize, 8usize);
    let (dy, dx) = (2usize, 3usize);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for kernel in [3usize, 5] {
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        let radius = (kernel - 1) / 2;
        let mut rng = Rng::new(900 + kernel as u64);
        let base = Tensor::<f32>::random_normal(vec![h, w, c], &mut rng).unwrap();
        let mut params = AttentionParams::<f32>::random_init(c, 2, spec, &mut rng).unwrap();
        params.bias_table =
            Tensor::random_normal(vec![2, 2 * kernel - 1, 2 * kernel - 1], &mut rng).unwrap();

        // Shifted frame: copy base into the interior, fill the rest with
        // unrelated values.
        let mut shifted = Tensor::<f32>::random_normal(vec![h, w, c], &mut rng).unwrap();
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
                    let a = out_a.at(&[i, j, cc]) as f64;
                    let b = out_b.at(&[i + dy, j + dx, cc]) as f64;
                    worst = worst.max((a - b).abs());
                }
                compared += 1;
            }
        }
    }
    report(
        "criterion 9 (interior translation equivariance, bias on)",
        worst <= 1e-6 && compared > 0,
        &format!("{compared} interior queries, max diff {worst:.2e} (tol 1e-6), shift ({dy},{dx})"),
    );
}

/// Criterion 10: the attention-weight buffer allocated by the kernels is
/// exactly the memory term the cost model claims.
#[test]
fn criterion_10_memory_accounting() {
    let mut rng = Rng::new(4242);
    let mut ok = true;
    let mut checked = 0usize;
    for _ in 0..10 {
        let h = 1 + (rng.next_u64() % 18) as usize;
        let w = 1 + (rng.next_u64() % 18) as usize;
        let kernel = 3 + 2 * (rng.next_u64() % 4) as usize;
        let spec = NeighborhoodSpec::new(kernel).unwrap();
        let d = 1 + (rng.next_u64() % 8) as usize;

        let q: Tensor<f32> = random_map(h, w, 1, d, &mut rng);
        let k: Tensor<f32> = random_map(h, w, 1, d, &mut rng);
        let table = 2 * kernel - 1;
        let bias = Tensor::<f32>::zeros(vec![1, table, table]).unwrap();
        let logits = na_qk(&q, &k, &bias, spec).unwrap();
        let probs = softmax_last(&logits).unwrap();

        let formula = cost_na(h, w, d, kernel)
            .unwrap()
            .term("attn_weights")
            .unwrap()
            .memory;
        if logits.numel() as u64 != formula || probs.numel() as u64 != formula {
            ok = false;
        }
        checked += 1;
    }
    report(
        "criterion 10 (attention weight buffer matches memory formula)",
        ok && checked == 10,
        &format!("{checked} random shapes, buffer element counts equal HW*min(L,H)*min(L,W) exactly"),
    );
}
