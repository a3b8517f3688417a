//! Analytic cost model: multiply-accumulate and memory expressions for
//! self attention, window attention, neighborhood attention, and 2-D
//! convolution on an `H x W x C` feature map, plus whole-model accounting.
//!
//! "FLOPs" here are MACs (one multiply-add counts 1), the convention under
//! which the published model figures are reproducible. Softmax,
//! normalization statistics, and activations are excluded from totals and
//! surfaced separately as estimates.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{count_params, NatConfig, LEVELS};

/// One named cost contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostTerm {
    pub macs: u64,
    pub memory: u64,
}

/// Cost of one operation, with totals equal to the sum of the breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub macs: u64,
    pub memory_scalars: u64,
    pub breakdown: BTreeMap<String, CostTerm>,
}

impl CostReport {
    fn from_terms(terms: Vec<(&str, CostTerm)>) -> Self {
        let mut breakdown = BTreeMap::new();
        let mut macs = 0u64;
        let mut memory = 0u64;
        for (name, term) in terms {
            macs += term.macs;
            memory += term.memory;
            breakdown.insert(name.to_string(), term);
        }
        Self {
            macs,
            memory_scalars: memory,
            breakdown,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn term(&self, name: &str) -> Option<CostTerm> {
        self.breakdown.get(name).copied()
    }
}

fn to_u64(value: u128, what: &str) -> Result<u64> {
    u64::try_from(value).map_err(|_| Error::Config(format!("{what} overflows 64-bit count")))
}

fn check_positive(h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Config(format!(
            "extents must be positive, got H={h} W={w} C={c}"
        )));
    }
    Ok(())
}

/// Full self attention: `3HWC^2 + 2H^2W^2C` MACs, `3HWC + H^2W^2` scalars.
pub fn cost_self_attention(h: usize, w: usize, c: usize) -> Result<CostReport> {
    check_positive(h, w, c)?;
    let (h, w, c) = (h as u128, w as u128, c as u128);
    let tokens = h * w;
    Ok(CostReport::from_terms(vec![
        (
            "qkv_proj",
            CostTerm {
                macs: to_u64(3 * tokens * c * c, "qkv projection")?,
                memory: to_u64(3 * tokens * c, "qkv storage")?,
            },
        ),
        (
            "attn_weights",
            CostTerm {
                macs: to_u64(tokens * tokens * c, "attention weights")?,
                memory: to_u64(tokens * tokens, "attention weight storage")?,
            },
        ),
        (
            "attn_apply",
            CostTerm {
                macs: to_u64(tokens * tokens * c, "attention apply")?,
                memory: 0,
            },
        ),
    ]))
}

/// Swin-style non-overlapping window attention. The window must divide
/// both extents; otherwise the map would need zero padding, reported as a
/// distinct [`Error::PaddingRequired`].
pub fn cost_window_attention(h: usize, w: usize, c: usize, window: usize) -> Result<CostReport> {
    check_positive(h, w, c)?;
    if window == 0 || !h.is_multiple_of(window) || !w.is_multiple_of(window) {
        return Err(Error::PaddingRequired {
            height: h,
            width: w,
            window,
        });
    }
    attention_with_local_weights(h, w, c, window * window)
}

/// Neighborhood attention: identical expressions with the effective window
/// `min(L,H) * min(L,W)`, so it degrades gracefully on small maps and never
/// needs padding.
pub fn cost_na(h: usize, w: usize, c: usize, kernel: usize) -> Result<CostReport> {
    check_positive(h, w, c)?;
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "neighborhood kernel must be odd, got {kernel}"
        )));
    }
    attention_with_local_weights(h, w, c, kernel.min(h) * kernel.min(w))
}

fn attention_with_local_weights(
    h: usize,
    w: usize,
    c: usize,
    win_area: usize,
) -> Result<CostReport> {
    let (h, w, c, win) = (h as u128, w as u128, c as u128, win_area as u128);
    let tokens = h * w;
    Ok(CostReport::from_terms(vec![
        (
            "qkv_proj",
            CostTerm {
                macs: to_u64(3 * tokens * c * c, "qkv projection")?,
                memory: to_u64(3 * tokens * c, "qkv storage")?,
            },
        ),
        (
            "attn_weights",
            CostTerm {
                macs: to_u64(tokens * c * win, "attention weights")?,
                memory: to_u64(tokens * win, "attention weight storage")?,
            },
        ),
        (
            "attn_apply",
            CostTerm {
                macs: to_u64(tokens * c * win, "attention apply")?,
                memory: 0,
            },
        ),
    ]))
}

/// Dense 2-D convolution: `HWC^2L^2` MACs and `HWC` scalars of output,
/// independent of the kernel size.
pub fn cost_conv(h: usize, w: usize, c: usize, kernel: usize) -> Result<CostReport> {
    check_positive(h, w, c)?;
    let (h, w, c, k) = (h as u128, w as u128, c as u128, kernel as u128);
    Ok(CostReport::from_terms(vec![(
        "conv",
        CostTerm {
            macs: to_u64(h * w * c * c * k * k, "convolution")?,
            memory: to_u64(h * w * c, "output storage")?,
        },
    )]))
}

/// Smallest channel count at which neighborhood attention costs fewer MACs
/// than a convolution with the same kernel: the per-pixel inequality
/// `3C^2 + 2CL^2 < C^2L^2` reduces to `C (L^2 - 3) > 2 L^2`.
pub fn crossover_channels(kernel: usize) -> Result<u64> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel must be odd and >= 3, got {kernel}"
        )));
    }
    let l2 = (kernel * kernel) as u64;
    Ok(2 * l2 / (l2 - 3) + 1)
}

/// Whole-model parameter and MAC accounting at a given input resolution.
#[derive(Debug, Clone, Serialize)]
pub struct ModelStats {
    pub params: u64,
    pub macs: u64,
    /// Counted MAC terms; sums to `macs`.
    pub breakdown: BTreeMap<String, u64>,
    /// Elementwise work excluded from the MAC total (softmax, norm
    /// statistics, activations, residual adds), as rough flop estimates.
    pub excluded_estimates: BTreeMap<String, u64>,
}

impl ModelStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Layer-by-layer MAC accounting at the actual per-level resolutions:
/// convolutions, QKV/output projections, the two attention contractions,
/// the MLP, norm affine maps, and the classifier.
pub fn model_stats(config: &NatConfig, h: usize, w: usize) -> Result<ModelStats> {
    config.validate()?;
    if !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "input extents {h}x{w} must be divisible by 32"
        )));
    }
    let mut counted: BTreeMap<String, u128> = BTreeMap::new();
    let mut estimates: BTreeMap<String, u128> = BTreeMap::new();
    let bump = |map: &mut BTreeMap<String, u128>, key: &str, amount: u128| {
        *map.entry(key.to_string()).or_insert(0) += amount;
    };

    let embed = config.embed_dim() as u128;
    let stem = embed / 2;
    // Tokenizer convs at half and quarter resolution.
    bump(
        &mut counted,
        "tokenizer",
        (h as u128 / 2) * (w as u128 / 2) * 9 * 3 * stem
            + (h as u128 / 4) * (w as u128 / 4) * 9 * stem * embed,
    );

    let (mut lh, mut lw) = (h / 4, w / 4);
    for level in 0..LEVELS {
        let px = (lh * lw) as u128;
        let c = config.channels(level) as u128;
        let hidden = config.mlp_hidden(level) as u128;
        let heads = config.heads(level) as u128;
        let win = (config.kernel.min(lh) * config.kernel.min(lw)) as u128;
        let blocks = config.depths[level] as u128;

        bump(&mut counted, "qkv_proj", blocks * 3 * px * c * c);
        bump(&mut counted, "attn_qk", blocks * px * c * win);
        bump(&mut counted, "attn_av", blocks * px * c * win);
        bump(&mut counted, "out_proj", blocks * px * c * c);
        bump(&mut counted, "mlp", blocks * 2 * px * c * hidden);
        bump(&mut counted, "norm_affine", blocks * 2 * px * c);

        bump(&mut estimates, "softmax", blocks * 3 * px * heads * win);
        bump(&mut estimates, "activation", blocks * 8 * px * hidden);
        bump(&mut estimates, "norm_stats", blocks * 2 * 3 * px * c);
        bump(&mut estimates, "residual", blocks * 2 * px * c);

        if level + 1 < LEVELS {
            let next = config.channels(level + 1) as u128;
            bump(
                &mut counted,
                "downsamplers",
                (lh as u128 / 2) * (lw as u128 / 2) * 9 * c * next,
            );
            lh /= 2;
            lw /= 2;
        }
    }
    let c_last = config.channels(LEVELS - 1) as u128;
    bump(&mut counted, "norm_affine", (lh * lw) as u128 * c_last);
    bump(&mut estimates, "norm_stats", 3 * (lh * lw) as u128 * c_last);
    bump(
        &mut counted,
        "classifier",
        c_last * config.num_classes as u128,
    );

    let mut breakdown = BTreeMap::new();
    let mut macs = 0u64;
    for (key, value) in counted {
        let v = to_u64(value, &key)?;
        macs += v;
        breakdown.insert(key, v);
    }
    let mut excluded = BTreeMap::new();
    for (key, value) in estimates {
        excluded.insert(key.clone(), to_u64(value, &key)?);
    }
    Ok(ModelStats {
        params: count_params(config)?,
        macs,
        breakdown,
        excluded_estimates: excluded,
    })
}
