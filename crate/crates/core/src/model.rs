//! NAT hierarchical model: convolutional tokenizer, four levels of
//! attention blocks with convolutional downsamplers between them, and a
//! pooled classifier head.
//!
//! Weights travel as a flat named-tensor store ([`NatWeights`]) whose
//! expected contents are generated from the config by [`weight_manifest`];
//! execution uses [`NatModel`], a structured view built from the store.

use std::collections::BTreeMap;

use crate::attention::{mhna_layer, AttentionParams};
use crate::error::{Error, Result};
use crate::neighborhood::NeighborhoodSpec;
use crate::rng::Rng;
use crate::tensor::{
    add, conv2d, gelu, global_avg_pool, layer_norm, linear, Scalar, Tensor, LAYER_NORM_EPS,
};

pub const LEVELS: usize = 4;

/// Architecture hyperparameters. Channel count and head count at level
/// `l` are `head_dim * base_heads * 2^l` and `base_heads * 2^l`.
#[derive(Debug, Clone, PartialEq)]
pub struct NatConfig {
    pub depths: [usize; LEVELS],
    pub head_dim: usize,
    pub base_heads: usize,
    pub mlp_ratio: f64,
    pub kernel: usize,
    pub num_classes: usize,
    /// Residual-branch scaling init; `None` disables the scale vectors.
    pub layer_scale: Option<f64>,
}

impl NatConfig {
    /// Registered configurations. `mini`/`tiny`/`small`/`base` are the
    /// published variants; `desk` is a miniature for fast local runs.
    pub fn preset(name: &str) -> Result<Self> {
        let (depths, head_dim, base_heads, mlp_ratio, kernel, num_classes, layer_scale) =
            match name {
                "mini" => ([3, 4, 6, 5], 32, 2, 3.0, 7, 1000, None),
                "tiny" => ([3, 4, 18, 5], 32, 2, 3.0, 7, 1000, None),
                "small" => ([3, 4, 18, 5], 32, 3, 2.0, 7, 1000, Some(1e-5)),
                "base" => ([3, 4, 18, 5], 32, 4, 2.0, 7, 1000, Some(1e-5)),
                "desk" => ([1, 1, 1, 1], 8, 2, 2.0, 3, 10, None),
                other => {
                    return Err(Error::Config(format!(
                        "unknown preset '{other}' (expected mini|tiny|small|base|desk)"
                    )))
                }
            };
        Ok(Self {
            depths,
            head_dim,
            base_heads,
            mlp_ratio,
            kernel,
            num_classes,
            layer_scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.contains(&0) {
            return Err(Error::Config("every level needs at least one block".into()));
        }
        if self.head_dim == 0 || self.base_heads == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "head_dim, base_heads, and num_classes must be positive".into(),
            ));
        }
        if !self.embed_dim().is_multiple_of(2) {
            return Err(Error::Config(
                "embed dim must be even for the tokenizer's intermediate width".into(),
            ));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        if let Some(scale) = self.layer_scale {
            if scale <= 0.0 {
                return Err(Error::Config("layer_scale must be positive".into()));
            }
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<NeighborhoodSpec> {
        NeighborhoodSpec::new(self.kernel)
    }

    pub fn heads(&self, level: usize) -> usize {
        self.base_heads << level
    }

    pub fn channels(&self, level: usize) -> usize {
        (self.head_dim * self.base_heads) << level
    }

    /// Channel count after the tokenizer.
    pub fn embed_dim(&self) -> usize {
        self.channels(0)
    }

    pub fn mlp_hidden(&self, level: usize) -> usize {
        (self.mlp_ratio * self.channels(level) as f64).round() as usize
    }
}

/// Expected name and shape of one weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> u64 {
        self.shape.iter().map(|&e| e as u64).product()
    }
}

/// Every tensor the model owns, in a fixed order. The names double as the
/// on-disk identifiers in NATW files.
pub fn weight_manifest(config: &NatConfig) -> Result<Vec<TensorSpec>> {
    config.validate()?;
    let embed = config.embed_dim();
    let stem = embed / 2;
    let table = 2 * config.kernel - 1;
    let mut out = vec![
        TensorSpec::new("tokenizer.conv1.weight", vec![3, 3, 3, stem]),
        TensorSpec::new("tokenizer.conv1.bias", vec![stem]),
        TensorSpec::new("tokenizer.conv2.weight", vec![3, 3, stem, embed]),
        TensorSpec::new("tokenizer.conv2.bias", vec![embed]),
    ];
    for level in 0..LEVELS {
        let c = config.channels(level);
        let heads = config.heads(level);
        let hidden = config.mlp_hidden(level);
        for block in 0..config.depths[level] {
            let p = format!("levels.{level}.blocks.{block}");
            out.push(TensorSpec::new(format!("{p}.norm1.gamma"), vec![c]));
            out.push(TensorSpec::new(format!("{p}.norm1.beta"), vec![c]));
            out.push(TensorSpec::new(format!("{p}.attn.qkv.weight"), vec![c, 3 * c]));
            out.push(TensorSpec::new(format!("{p}.attn.qkv.bias"), vec![3 * c]));
            out.push(TensorSpec::new(format!("{p}.attn.proj.weight"), vec![c, c]));
            out.push(TensorSpec::new(format!("{p}.attn.proj.bias"), vec![c]));
            out.push(TensorSpec::new(format!("{p}.attn.rpb"), vec![heads, table, table]));
            out.push(TensorSpec::new(format!("{p}.norm2.gamma"), vec![c]));
            out.push(TensorSpec::new(format!("{p}.norm2.beta"), vec![c]));
            out.push(TensorSpec::new(format!("{p}.mlp.fc1.weight"), vec![c, hidden]));
            out.push(TensorSpec::new(format!("{p}.mlp.fc1.bias"), vec![hidden]));
            out.push(TensorSpec::new(format!("{p}.mlp.fc2.weight"), vec![hidden, c]));
            out.push(TensorSpec::new(format!("{p}.mlp.fc2.bias"), vec![c]));
            if config.layer_scale.is_some() {
                out.push(TensorSpec::new(format!("{p}.scale1"), vec![c]));
                out.push(TensorSpec::new(format!("{p}.scale2"), vec![c]));
            }
        }
        if level + 1 < LEVELS {
            let next = config.channels(level + 1);
            out.push(TensorSpec::new(
                format!("downsamplers.{level}.weight"),
                vec![3, 3, c, next],
            ));
            out.push(TensorSpec::new(format!("downsamplers.{level}.bias"), vec![next]));
        }
    }
    let c_last = config.channels(LEVELS - 1);
    out.push(TensorSpec::new("norm.gamma", vec![c_last]));
    out.push(TensorSpec::new("norm.beta", vec![c_last]));
    out.push(TensorSpec::new("head.weight", vec![c_last, config.num_classes]));
    out.push(TensorSpec::new("head.bias", vec![config.num_classes]));
    Ok(out)
}

/// Total scalar parameter count implied by the config.
pub fn count_params(config: &NatConfig) -> Result<u64> {
    Ok(weight_manifest(config)?.iter().map(TensorSpec::numel).sum())
}

/// Flat named-tensor parameter store.
#[derive(Debug, Clone)]
pub struct NatWeights<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> NatWeights<T> {
    /// Validates a tensor map against the config's manifest: every
    /// expected tensor present with the right shape, and nothing extra.
    pub fn from_map(config: &NatConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let manifest = weight_manifest(config)?;
        for spec in &manifest {
            match tensors.get(&spec.name) {
                None => return Err(Error::Weights(format!("missing tensor '{}'", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Weights(format!(
                        "tensor '{}' has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if tensors.len() != manifest.len() {
            let expected: std::collections::BTreeSet<&str> =
                manifest.iter().map(|s| s.name.as_str()).collect();
            let orphan = tensors
                .keys()
                .find(|k| !expected.contains(k.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Weights(format!("unexpected tensor '{orphan}'")));
        }
        Ok(Self { tensors })
    }

    /// Seeded initialization: truncated normal (sigma 0.02) for conv,
    /// projection, and bias-table weights; ones for norm gains; zeros for
    /// all biases and norm offsets; the configured init value for the
    /// layer-scale vectors. Tensors are drawn in manifest order, so a seed
    /// pins every parameter.
    pub fn random_init(config: &NatConfig, rng: &mut Rng) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for spec in weight_manifest(config)? {
            let numel: usize = spec.shape.iter().product();
            let tensor = if spec.name.ends_with(".weight") || spec.name.ends_with(".rpb") {
                let data = (0..numel)
                    .map(|_| T::from_f64(rng.truncated_normal(0.02)))
                    .collect();
                Tensor::new(spec.shape.clone(), data)?
            } else if spec.name.ends_with(".gamma") {
                Tensor::filled(spec.shape.clone(), T::ONE)?
            } else if spec.name.ends_with(".scale1") || spec.name.ends_with(".scale2") {
                let init = config.layer_scale.unwrap_or(1.0);
                Tensor::filled(spec.shape.clone(), T::from_f64(init))?
            } else {
                Tensor::zeros(spec.shape.clone())?
            };
            tensors.insert(spec.name, tensor);
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor '{name}'")))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }
}

#[derive(Debug, Clone)]
struct ConvParams<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

/// Weights of one attention block, in execution form.
#[derive(Debug, Clone)]
pub struct BlockParams<T: Scalar> {
    pub norm1_gamma: Tensor<T>,
    pub norm1_beta: Tensor<T>,
    pub attn: AttentionParams<T>,
    pub norm2_gamma: Tensor<T>,
    pub norm2_beta: Tensor<T>,
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
    pub scale1: Option<Tensor<T>>,
    pub scale2: Option<Tensor<T>>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn from_weights(
        weights: &NatWeights<T>,
        config: &NatConfig,
        level: usize,
        block: usize,
    ) -> Result<Self> {
        let p = format!("levels.{level}.blocks.{block}");
        let fetch = |suffix: &str| weights.get(&format!("{p}.{suffix}")).cloned();
        let scale = |suffix: &str| -> Result<Option<Tensor<T>>> {
            if config.layer_scale.is_some() {
                Ok(Some(weights.get(&format!("{p}.{suffix}"))?.clone()))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            norm1_gamma: fetch("norm1.gamma")?,
            norm1_beta: fetch("norm1.beta")?,
            attn: AttentionParams {
                heads: config.heads(level),
                qkv_weight: fetch("attn.qkv.weight")?,
                qkv_bias: fetch("attn.qkv.bias")?,
                proj_weight: fetch("attn.proj.weight")?,
                proj_bias: fetch("attn.proj.bias")?,
                bias_table: fetch("attn.rpb")?,
            },
            norm2_gamma: fetch("norm2.gamma")?,
            norm2_beta: fetch("norm2.beta")?,
            fc1_weight: fetch("mlp.fc1.weight")?,
            fc1_bias: fetch("mlp.fc1.bias")?,
            fc2_weight: fetch("mlp.fc2.weight")?,
            fc2_bias: fetch("mlp.fc2.bias")?,
            scale1: scale("scale1")?,
            scale2: scale("scale2")?,
        })
    }
}

/// Residual add with an optional per-channel scale on the branch.
fn residual_add<T: Scalar>(
    x: &Tensor<T>,
    branch: &Tensor<T>,
    scale: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    match scale {
        None => add(x, branch),
        Some(s) => {
            let c = *x.shape().last().unwrap();
            let mut out = x.clone();
            let s_data = s.data();
            for (o, b) in out.data_mut().chunks_mut(c).zip(branch.data().chunks(c)) {
                for ((ov, &bv), &sv) in o.iter_mut().zip(b).zip(s_data) {
                    *ov += sv * bv;
                }
            }
            Ok(out)
        }
    }
}

/// Two stride-2 3x3 convolutions embedding an `[H, W, 3]` image at
/// quarter resolution. `H` and `W` must be divisible by 32 so every later
/// downsampling halves exactly.
pub fn tokenizer_forward<T: Scalar>(
    image: &Tensor<T>,
    conv1_weight: &Tensor<T>,
    conv1_bias: &Tensor<T>,
    conv2_weight: &Tensor<T>,
    conv2_bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::shape(
            "tokenizer",
            format!("expected [H, W, 3] image, got {:?}", image.shape()),
        ));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Config(format!(
            "input extents {h}x{w} must be divisible by 32"
        )));
    }
    let mid = conv2d(image, conv1_weight, conv1_bias, 2, 1)?;
    conv2d(&mid, conv2_weight, conv2_bias, 2, 1)
}

/// One transformer block: `x + s1 * MHNA(LN(x))`, then `x + s2 * MLP(LN(x))`
/// with `MLP = fc2(GELU(fc1(.)))`.
pub fn nat_block_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &BlockParams<T>,
    spec: NeighborhoodSpec,
) -> Result<Tensor<T>> {
    let normed = layer_norm(x, &params.norm1_gamma, &params.norm1_beta, LAYER_NORM_EPS)?;
    let attended = mhna_layer(&normed, &params.attn, spec)?;
    let x = residual_add(x, &attended, params.scale1.as_ref())?;

    let normed = layer_norm(&x, &params.norm2_gamma, &params.norm2_beta, LAYER_NORM_EPS)?;
    let hidden = gelu(&linear(&normed, &params.fc1_weight, &params.fc1_bias)?);
    let mlp_out = linear(&hidden, &params.fc2_weight, &params.fc2_bias)?;
    residual_add(&x, &mlp_out, params.scale2.as_ref())
}

/// Stride-2 3x3 convolution halving the spatial extents and doubling the
/// channels.
pub fn downsample_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "downsampler needs even extents, got {h}x{w}"
        )));
    }
    conv2d(x, weight, bias, 2, 1)
}

/// The four per-level feature maps, at scales H/4, H/8, H/16, H/32.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T: Scalar> {
    pub maps: [Tensor<T>; LEVELS],
}

/// Structured, validated execution form of a config + weight store.
#[derive(Debug, Clone)]
pub struct NatModel<T: Scalar> {
    config: NatConfig,
    spec: NeighborhoodSpec,
    tokenizer: [ConvParams<T>; 2],
    levels: Vec<Vec<BlockParams<T>>>,
    downsamplers: Vec<ConvParams<T>>,
    norm_gamma: Tensor<T>,
    norm_beta: Tensor<T>,
    head_weight: Tensor<T>,
    head_bias: Tensor<T>,
}

impl<T: Scalar> NatModel<T> {
    pub fn from_weights(config: NatConfig, weights: &NatWeights<T>) -> Result<Self> {
        // Re-validate so a hand-built map cannot slip past the manifest.
        NatWeights::from_map(&config, weights.tensors().clone())?;
        let spec = config.spec()?;
        let tokenizer = [
            ConvParams {
                weight: weights.get("tokenizer.conv1.weight")?.clone(),
                bias: weights.get("tokenizer.conv1.bias")?.clone(),
            },
            ConvParams {
                weight: weights.get("tokenizer.conv2.weight")?.clone(),
                bias: weights.get("tokenizer.conv2.bias")?.clone(),
            },
        ];
        let mut levels = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let blocks: Result<Vec<BlockParams<T>>> = (0..config.depths[level])
                .map(|b| BlockParams::from_weights(weights, &config, level, b))
                .collect();
            levels.push(blocks?);
        }
        let downsamplers: Result<Vec<ConvParams<T>>> = (0..LEVELS - 1)
            .map(|l| {
                Ok(ConvParams {
                    weight: weights.get(&format!("downsamplers.{l}.weight"))?.clone(),
                    bias: weights.get(&format!("downsamplers.{l}.bias"))?.clone(),
                })
            })
            .collect();
        Ok(Self {
            spec,
            tokenizer,
            levels,
            downsamplers: downsamplers?,
            norm_gamma: weights.get("norm.gamma")?.clone(),
            norm_beta: weights.get("norm.beta")?.clone(),
            head_weight: weights.get("head.weight")?.clone(),
            head_bias: weights.get("head.bias")?.clone(),
            config,
        })
    }

    pub fn config(&self) -> &NatConfig {
        &self.config
    }

    /// Tokenizer plus all four levels; returns each level's output before
    /// its downsampler.
    fn run_levels(&self, image: &Tensor<T>) -> Result<[Tensor<T>; LEVELS]> {
        let mut x = tokenizer_forward(
            image,
            &self.tokenizer[0].weight,
            &self.tokenizer[0].bias,
            &self.tokenizer[1].weight,
            &self.tokenizer[1].bias,
        )?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            for block in &self.levels[level] {
                x = nat_block_forward(&x, block, self.spec)?;
            }
            outputs.push(x.clone());
            if level + 1 < LEVELS {
                let ds = &self.downsamplers[level];
                x = downsample_forward(&x, &ds.weight, &ds.bias)?;
            }
        }
        Ok(outputs.try_into().expect("exactly four levels"))
    }

    /// Classification logits of shape `[num_classes]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let final_map = self.run_levels(image)?.into_iter().next_back().unwrap();
        let normed = layer_norm(&final_map, &self.norm_gamma, &self.norm_beta, LAYER_NORM_EPS)?;
        let pooled = global_avg_pool(&normed)?;
        let classes = self.config.num_classes;
        let pooled = pooled.reshape(vec![1, self.config.channels(LEVELS - 1)])?;
        let logits = linear(&pooled, &self.head_weight, &self.head_bias)?;
        logits.reshape(vec![classes])
    }

    pub fn extract_pyramid(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        Ok(FeaturePyramid {
            maps: self.run_levels(image)?,
        })
    }
}

/// One-shot inference without keeping the structured model around.
pub fn nat_forward<T: Scalar>(
    image: &Tensor<T>,
    config: &NatConfig,
    weights: &NatWeights<T>,
) -> Result<Tensor<T>> {
    NatModel::from_weights(config.clone(), weights)?.forward(image)
}

/// One-shot pyramid extraction.
pub fn extract_pyramid<T: Scalar>(
    image: &Tensor<T>,
    config: &NatConfig,
    weights: &NatWeights<T>,
) -> Result<FeaturePyramid<T>> {
    NatModel::from_weights(config.clone(), weights)?.extract_pyramid(image)
}
