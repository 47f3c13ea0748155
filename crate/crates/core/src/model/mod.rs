//! The steganalysis network: 1x1 stem over the 186-plane channel
//! representation, a stack of TYPE1/TYPE2/TYPE3 residual layers, then
//! global average pooling and a fully connected classifier.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::channelrep::{ChannelRep, ColorPlanes, REP_PLANES};
use crate::filterbank::{full_bank, FilterBank, ResidualConfig};
use crate::nn::{
    batch_norm, batch_norm_eval, batch_norm_grad, conv2d, conv2d_grad, conv2d_grad_params,
    fully_connected, fully_connected_grad, global_avg_pool, global_avg_pool_grad, relu, relu_grad,
    softmax, BnCache, BnMode, BnParams, ConvParams, NnError, Real, Tensor,
};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_matching, read_container, save_checkpoint, write_container,
    CheckpointError, Container, NamedTensor, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use config::{LayerKind, LayerSpec, UcnetConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config mismatch in field {field}: expected {expected}, found {found}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("input has {found} planes, model expects {expected}")]
    InputPlanes { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("residual preprocessing: {0}")]
    Preprocess(String),
}

/// Convolution followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub conv: ConvParams<T>,
    pub bn: BnParams<T>,
}

impl<T: Real> ConvBn<T> {
    fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            conv: ConvParams::new(c_in, c_out, k, stride, k / 2, groups, false)?,
            bn: BnParams::new(c_out),
        })
    }

    fn forward(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        let z = conv2d(x, &self.conv)?;
        batch_norm(&z, &mut self.bn, mode)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let z = conv2d(x, &self.conv)?;
        Ok(batch_norm_eval(&z, &self.bn)?.0)
    }

    /// Returns (grad wrt input if wanted, grad weight, grad gamma, grad beta).
    fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BnCache<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, [Vec<T>; 3]), NnError> {
        let bg = batch_norm_grad(cache, &self.bn.gamma, grad_out)?;
        let cg = if want_input {
            conv2d_grad(x, &self.conv, &bg.grad_x)?
        } else {
            conv2d_grad_params(x, &self.conv, &bg.grad_x)?
        };
        Ok((cg.grad_x, [cg.grad_weight, bg.grad_gamma, bg.grad_beta]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block<T> {
    Type1 { main: ConvBn<T> },
    Type2 { main: ConvBn<T>, shortcut: ConvBn<T> },
    Type3 { main: ConvBn<T> },
}

impl<T: Real> Block<T> {
    fn new(spec: &LayerSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        Ok(match spec.kind {
            LayerKind::Type1 => Block::Type1 {
                main: ConvBn::new(spec.width_in, spec.width_out, 3, 1, 1)?,
            },
            LayerKind::Type2 => Block::Type2 {
                main: ConvBn::new(spec.width_in, spec.width_out, 3, 2, 1)?,
                shortcut: ConvBn::new(spec.width_in, spec.width_out, 1, 2, 1)?,
            },
            LayerKind::Type3 => Block::Type3 {
                main: ConvBn::new(spec.width_in, spec.width_out, 3, 1, spec.groups)?,
            },
        })
    }

    fn conv_bns(&self) -> Vec<(&'static str, &ConvBn<T>)> {
        match self {
            Block::Type1 { main } | Block::Type3 { main } => vec![("main", main)],
            Block::Type2 { main, shortcut } => vec![("main", main), ("shortcut", shortcut)],
        }
    }

    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn<T>> {
        match self {
            Block::Type1 { main } | Block::Type3 { main } => vec![main],
            Block::Type2 { main, shortcut } => vec![main, shortcut],
        }
    }
}

/// Intermediate values kept for the backward pass of one block.
enum BlockCache<T> {
    Identity {
        x: Tensor<T>,
        bn: BnCache<T>,
        pre_relu: Tensor<T>,
        sum: Tensor<T>,
    },
    Projection {
        x: Tensor<T>,
        bn_main: BnCache<T>,
        bn_short: BnCache<T>,
        sum: Tensor<T>,
    },
}

/// Everything [`Model::backward`] needs from a forward pass.
pub struct ForwardCache<T> {
    input: Tensor<T>,
    stem_bn: BnCache<T>,
    stem_pre_relu: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    features_shape: [usize; 4],
    pooled: Tensor<T>,
}

/// Trainable tensors in registry order, as (name, values).
pub type NamedParams<'a, T> = Vec<(String, &'a [T])>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: UcnetConfig,
    bank: FilterBank,
    stem: ConvBn<T>,
    blocks: Vec<Block<T>>,
    fc_weight: Vec<T>,
    fc_bias: Vec<T>,
}

impl<T: Real> Model<T> {
    /// Builds the network with He-normal conv/FC weights drawn from `seed`,
    /// BN gamma 1 / beta 0 and a zero FC bias.
    pub fn build(config: &UcnetConfig, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |w: &mut [T], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            for v in w.iter_mut() {
                *v = T::of(normal.sample(&mut rng));
            }
        };
        let fan = |c: &ConvParams<T>| c.cin_per_group() * c.k * c.k;
        let f = fan(&m.stem.conv);
        he(&mut m.stem.conv.weight, f);
        for b in &mut m.blocks {
            for cb in b.conv_bns_mut() {
                let f = fan(&cb.conv);
                he(&mut cb.conv.weight, f);
            }
        }
        let width = config.final_width();
        he(&mut m.fc_weight, width);
        Ok(m)
    }

    /// All parameters zero, BN at identity; used when loading checkpoints.
    pub fn zeroed(config: &UcnetConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let blocks = config
            .stages
            .iter()
            .map(Block::new)
            .collect::<Result<Vec<_>, _>>()?;
        let width = config.final_width();
        Ok(Self {
            config: config.clone(),
            bank: full_bank(),
            stem: ConvBn::new(REP_PLANES, config.stem_width, 1, 1, 1)?,
            blocks,
            fc_weight: vec![T::zero(); width * config.classes],
            fc_bias: vec![T::zero(); config.classes],
        })
    }

    pub fn config(&self) -> &UcnetConfig {
        &self.config
    }

    /// The fixed preprocessing bank; never part of the trainables.
    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn residual_config(&self) -> ResidualConfig {
        ResidualConfig {
            truncation_t: self.config.truncation_t,
            pad_mode: self.config.pad_mode,
        }
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn fc_bias(&self) -> &[T] {
        &self.fc_bias
    }

    /// Channel representation of one image under this model's settings.
    pub fn preprocess(&self, planes: &ColorPlanes) -> Result<ChannelRep, ModelError> {
        crate::channelrep::channel_representation(planes, &self.bank, &self.residual_config())
            .map_err(|e| ModelError::Preprocess(e.to_string()))
    }

    /// Trainable tensors in a fixed order with unique names.
    pub fn params(&self) -> NamedParams<'_, T> {
        let mut groups: Vec<(String, &ConvBn<T>)> = vec![("stem".into(), &self.stem)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (role, cb) in b.conv_bns() {
                groups.push((format!("blocks.{i}.{role}"), cb));
            }
        }
        let mut out: NamedParams<'_, T> = Vec::new();
        for (prefix, cb) in groups {
            out.push((format!("{prefix}.conv.weight"), &cb.conv.weight));
            out.push((format!("{prefix}.bn.gamma"), &cb.bn.gamma));
            out.push((format!("{prefix}.bn.beta"), &cb.bn.beta));
        }
        out.push(("fc.weight".into(), &self.fc_weight));
        out.push(("fc.bias".into(), &self.fc_bias));
        out
    }

    /// Mutable trainables in the same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        let stem = &mut self.stem;
        out.push(&mut stem.conv.weight);
        out.push(&mut stem.bn.gamma);
        out.push(&mut stem.bn.beta);
        for b in &mut self.blocks {
            for cb in b.conv_bns_mut() {
                out.push(&mut cb.conv.weight);
                out.push(&mut cb.bn.gamma);
                out.push(&mut cb.bn.beta);
            }
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    /// Shapes of the trainables, aligned with [`Model::params`].
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut add_cb = |cb: &ConvBn<T>| {
            let c = &cb.conv;
            out.push(vec![c.c_out, c.cin_per_group(), c.k, c.k]);
            out.push(vec![c.c_out]);
            out.push(vec![c.c_out]);
        };
        add_cb(&self.stem);
        for b in &self.blocks {
            for (_, cb) in b.conv_bns() {
                add_cb(cb);
            }
        }
        out.push(vec![self.config.final_width(), self.config.classes]);
        out.push(vec![self.config.classes]);
        out
    }

    /// Non-trainable state (BN running statistics) as (name, values).
    pub fn buffers(&self) -> NamedParams<'_, T> {
        let mut out: NamedParams<'_, T> = Vec::new();
        out.push(("stem.bn.running_mean".into(), &self.stem.bn.running_mean));
        out.push(("stem.bn.running_var".into(), &self.stem.bn.running_var));
        for (i, b) in self.blocks.iter().enumerate() {
            for (role, cb) in b.conv_bns() {
                out.push((format!("blocks.{i}.{role}.bn.running_mean"), &cb.bn.running_mean));
                out.push((format!("blocks.{i}.{role}.bn.running_var"), &cb.bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        out.push(&mut self.stem.bn.running_mean);
        out.push(&mut self.stem.bn.running_var);
        for b in &mut self.blocks {
            for cb in b.conv_bns_mut() {
                out.push(&mut cb.bn.running_mean);
                out.push(&mut cb.bn.running_var);
            }
        }
        out
    }

    /// Total trainable element count; the filter bank is not included.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        if x.c() != REP_PLANES {
            return Err(ModelError::InputPlanes {
                expected: REP_PLANES,
                found: x.c(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping what backward needs. `Train` mode uses batch
    /// statistics and updates the BN running averages.
    pub fn forward_cached(
        &mut self,
        input: &Tensor<T>,
        mode: BnMode,
    ) -> Result<(Tensor<T>, ForwardCache<T>), ModelError> {
        self.check_input(input)?;
        let (stem_pre_relu, stem_bn) = self.stem.forward(input, mode)?;
        let mut h = relu(&stem_pre_relu);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let x = h;
            let (out, cache) = match block {
                Block::Type1 { main } | Block::Type3 { main } => {
                    let (pre_relu, bn) = main.forward(&x, mode)?;
                    let sum = relu(&pre_relu).add(&x)?;
                    let out = relu(&sum);
                    (
                        out,
                        BlockCache::Identity {
                            x,
                            bn,
                            pre_relu,
                            sum,
                        },
                    )
                }
                Block::Type2 { main, shortcut } => {
                    let (a, bn_main) = main.forward(&x, mode)?;
                    let (b, bn_short) = shortcut.forward(&x, mode)?;
                    let sum = a.add(&b)?;
                    let out = relu(&sum);
                    (
                        out,
                        BlockCache::Projection {
                            x,
                            bn_main,
                            bn_short,
                            sum,
                        },
                    )
                }
            };
            caches.push(cache);
            h = out;
        }
        let features_shape = h.shape();
        let pooled = global_avg_pool(&h);
        let logits = fully_connected(&pooled, &self.fc_weight, &self.fc_bias)?;
        Ok((
            logits,
            ForwardCache {
                input: input.clone(),
                stem_bn,
                stem_pre_relu,
                blocks: caches,
                features_shape,
                pooled,
            },
        ))
    }

    fn bn_params_mut(&mut self) -> Vec<&mut BnParams<T>> {
        let mut out = vec![&mut self.stem.bn];
        for b in &mut self.blocks {
            out.extend(b.conv_bns_mut().into_iter().map(|cb| &mut cb.bn));
        }
        out
    }

    /// Replaces every BN running mean/variance by the plain average of the
    /// batch statistics over `batches`, computed with the current weights.
    pub fn recalibrate_bn<'a>(
        &mut self,
        batches: impl IntoIterator<Item = &'a Tensor<T>>,
    ) -> Result<(), ModelError> {
        let saved: Vec<T> = self.bn_params_mut().iter().map(|p| p.momentum).collect();
        let mut seen = 0usize;
        for x in batches {
            // running = k/(k+1) * running + 1/(k+1) * batch
            let keep = T::of(seen as f64 / (seen + 1) as f64);
            for p in self.bn_params_mut() {
                p.momentum = keep;
            }
            self.forward_cached(x, BnMode::Train)?;
            seen += 1;
        }
        for (p, m) in self.bn_params_mut().into_iter().zip(saved) {
            p.momentum = m;
        }
        Ok(())
    }

    /// Logits for a batch. `Eval` leaves the model untouched; `Train`
    /// updates BN running statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>, ModelError> {
        match mode {
            BnMode::Eval => self.predict(input),
            BnMode::Train => Ok(self.forward_cached(input, mode)?.0),
        }
    }

    /// Inference-mode logits without mutation.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(input)?;
        let mut h = relu(&self.stem.infer(input)?);
        for block in &self.blocks {
            h = match block {
                Block::Type1 { main } | Block::Type3 { main } => {
                    relu(&relu(&main.infer(&h)?).add(&h)?)
                }
                Block::Type2 { main, shortcut } => {
                    relu(&main.infer(&h)?.add(&shortcut.infer(&h)?)?)
                }
            };
        }
        Ok(fully_connected(&global_avg_pool(&h), &self.fc_weight, &self.fc_bias)?)
    }

    /// Softmax probability of the stego class (index 1) per item.
    pub fn stego_scores(&self, input: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let probs = softmax(&self.predict(input)?);
        let k = self.config.classes;
        Ok(probs.data().chunks_exact(k).map(|r| r[1]).collect())
    }

    /// Gradients of the loss for every trainable, in [`Model::params`] order.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Vec<Vec<T>>, ModelError> {
        let fc = fully_connected_grad(&cache.pooled, &self.fc_weight, grad_logits)?;
        let mut g = global_avg_pool_grad(cache.features_shape, &fc.grad_x)?;

        let mut block_grads: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            match (block, bc) {
                (
                    Block::Type1 { main } | Block::Type3 { main },
                    BlockCache::Identity {
                        x,
                        bn,
                        pre_relu,
                        sum,
                    },
                ) => {
                    let g_sum = relu_grad(sum, &g)?;
                    let g_pre = relu_grad(pre_relu, &g_sum)?;
                    let (gx, [gw, gg, gb]) = main.backward(x, bn, &g_pre, true)?;
                    g = gx.expect("input gradient requested").add(&g_sum)?;
                    block_grads.push(vec![gw, gg, gb]);
                }
                (
                    Block::Type2 { main, shortcut },
                    BlockCache::Projection {
                        x,
                        bn_main,
                        bn_short,
                        sum,
                    },
                ) => {
                    let g_sum = relu_grad(sum, &g)?;
                    let (gx_main, [gw, gg, gb]) = main.backward(x, bn_main, &g_sum, true)?;
                    let (gx_short, [sw, sg, sb]) = shortcut.backward(x, bn_short, &g_sum, true)?;
                    g = gx_main
                        .expect("input gradient requested")
                        .add(&gx_short.expect("input gradient requested"))?;
                    block_grads.push(vec![gw, gg, gb, sw, sg, sb]);
                }
                _ => unreachable!("cache layout follows the block list"),
            }
        }
        let g_stem = relu_grad(&cache.stem_pre_relu, &g)?;
        let (_, [sw, sg, sb]) = self.stem.backward(&cache.input, &cache.stem_bn, &g_stem, false)?;

        let mut out = vec![sw, sg, sb];
        for bg in block_grads.into_iter().rev() {
            out.extend(bg);
        }
        out.push(fc.grad_weight);
        out.push(fc.grad_bias);
        Ok(out)
    }

    /// Copies all trainables and buffers into a model of another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut m = Model::<U>::zeroed(&self.config).expect("config already validated");
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        for (dst, (_, src)) in m.params_mut().into_iter().zip(self.params()) {
            *dst = conv(src);
        }
        for (dst, (_, src)) in m.buffers_mut().into_iter().zip(self.buffers()) {
            *dst = conv(src);
        }
        m
    }
}

/// Stacks channel representations into an `(N, 186, H, W)` tensor.
pub fn reps_to_tensor<T: Real>(reps: &[&ChannelRep]) -> Result<Tensor<T>, ModelError> {
    let first = reps
        .first()
        .ok_or_else(|| ModelError::Nn(NnError::Shape("empty batch".into())))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(reps.len() * REP_PLANES * h * w);
    for r in reps {
        if r.height != h || r.width != w {
            return Err(ModelError::Nn(NnError::Shape(format!(
                "batch mixes {}x{} and {}x{}",
                h, w, r.height, r.width
            ))));
        }
        if r.planes() != REP_PLANES {
            return Err(ModelError::InputPlanes {
                expected: REP_PLANES,
                found: r.planes(),
            });
        }
        data.extend(r.maps.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::from_vec([reps.len(), REP_PLANES, h, w], data)?)
}
