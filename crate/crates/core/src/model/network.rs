use std::collections::BTreeMap;

use super::arch::{ArchSpec, BlockSpec, LayerKind, LayerSpec, ShortcutSpec};
use super::layers::{Affine, ConvBn, ConvBnCache};
use super::residual::{residual_add, residual_add_grad};
use crate::error::{Error, Result};
use crate::rng::{self, DetRng};
use crate::tensor::{
    conv_out_extent, global_avg_pool, global_avg_pool_grad, max_pool2x2, max_pool2x2_grad,
    relu_grad, relu_inplace, BnMode, BnParams, Element, Tensor,
};

/// Gradients keyed by parameter name (`<layer_id>.<role>`).
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn bn(self) -> BnMode {
        match self {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        }
    }
}

/// Two 3×3 conv+BN layers on the residual branch plus a shortcut. The
/// branch output (possibly narrower than the residual after extraction) is
/// merged at `index_set`, then passed through ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<T> {
    pub id: String,
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
    pub shortcut: Option<ConvBn<T>>,
    index_set: Vec<usize>,
    width: usize,
}

impl<T: Element> BasicBlock<T> {
    pub fn index_set(&self) -> &[usize] {
        &self.index_set
    }

    /// Residual width, i.e. the block's output channel count.
    pub fn width(&self) -> usize {
        self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage<T> {
    /// conv → BN → ReLU
    Conv(ConvBn<T>),
    MaxPool { id: String },
    Block(BasicBlock<T>),
}

enum StageCache<T> {
    Conv {
        cb: ConvBnCache<T>,
        out: Tensor<T>,
    },
    Pool {
        in_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Block {
        c1: ConvBnCache<T>,
        c2: ConvBnCache<T>,
        sc: Option<ConvBnCache<T>>,
        out: Tensor<T>,
    },
}

/// Activations retained by [`Model::forward`] for the matching backward.
pub struct ForwardCache<T> {
    stages: Vec<StageCache<T>>,
    pooled_shape: Vec<usize>,
    features: Tensor<T>,
    generation: u64,
}

/// Intermediate tensors of one residual block during an eval forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace<T> {
    pub block_id: String,
    /// Shortcut output, full width.
    pub residual: Tensor<T>,
    /// Branch output before the merge, one channel per index-set entry.
    pub branch: Tensor<T>,
    /// `relu(residual_add(residual, branch, I))`
    pub output: Tensor<T>,
}

/// A sequential network of conv stages and residual blocks with a global
/// average pool and affine head.
#[derive(Debug, Clone)]
pub struct Model<T> {
    arch: ArchSpec,
    stages: Vec<Stage<T>>,
    head: Affine<T>,
    mode: Mode,
    bn: BnParams,
    generation: u64,
}

impl<T> std::fmt::Debug for ForwardCache<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardCache")
            .field("stages", &self.stages.len())
            .field("generation", &self.generation)
            .finish()
    }
}

impl<T: Element> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.stages == other.stages && self.head == other.head
    }
}

/// VGG-style stack: one conv(3×3)+BN+ReLU per width, 2×2 max pooling
/// between widths, global pool and affine head. Every conv is prunable.
pub fn build_plain_cnn<T: Element>(
    widths: &[usize],
    input: [usize; 3],
    classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    Model::from_arch(&ArchSpec::plain(widths, input, classes), seed)
}

/// CIFAR-style ResNet of depth `6n + 2`: a 3×3 stem, three (or
/// `widths.len()`) stages of `n` basic blocks, stride-2 projection
/// shortcuts at stage transitions, global pool and affine head.
pub fn build_resnet<T: Element>(
    n: usize,
    widths: &[usize],
    input: [usize; 3],
    classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    Model::from_arch(&ArchSpec::resnet(n, widths, input, classes), seed)
}

impl<T: Element> Model<T> {
    pub fn from_arch(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::seeded(seed);
        let (stages, last) = match arch {
            ArchSpec::Plain { widths, input, .. } => plain_stages(&mut rng, widths, input[0]),
            ArchSpec::Resnet {
                n, widths, input, ..
            } => resnet_stages(&mut rng, *n, widths, input[0]),
        };
        let head = Affine::init(&mut rng, "head", last, arch.classes());
        let model = Self {
            arch: arch.clone(),
            stages,
            head,
            mode: Mode::Train,
            bn: BnParams::default(),
            generation: 0,
        };
        model.resolve_shapes()?;
        Ok(model)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn bn_params(&self) -> BnParams {
        self.bn
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn head(&self) -> &Affine<T> {
        &self.head
    }

    fn touch(&mut self) {
        self.generation = self.generation.wrapping_add(1);
    }

    /// Number of weighted layers on the main path (convs and the head;
    /// projection shortcuts excluded).
    pub fn depth(&self) -> usize {
        let convs: usize = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Conv(_) => 1,
                Stage::MaxPool { .. } => 0,
                Stage::Block(_) => 2,
            })
            .sum();
        convs + 1
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvBn<T>> {
        self.stages.iter().flat_map(|s| {
            let v: Vec<&ConvBn<T>> = match s {
                Stage::Conv(c) => vec![c],
                Stage::MaxPool { .. } => vec![],
                Stage::Block(b) => {
                    let mut v = vec![&b.conv1, &b.conv2];
                    v.extend(b.shortcut.as_ref());
                    v
                }
            };
            v
        })
    }

    pub fn prunable_layers(&self) -> Vec<&str> {
        self.convs()
            .filter(|c| c.prunable)
            .map(|c| c.id.as_str())
            .collect()
    }

    pub fn conv(&self, id: &str) -> Option<&ConvBn<T>> {
        self.convs().find(|c| c.id == id)
    }

    pub fn conv_mut(&mut self, id: &str) -> Result<&mut ConvBn<T>> {
        self.touch();
        for s in &mut self.stages {
            match s {
                Stage::Conv(c) if c.id == id => return Ok(c),
                Stage::Block(b) => {
                    if b.conv1.id == id {
                        return Ok(&mut b.conv1);
                    }
                    if b.conv2.id == id {
                        return Ok(&mut b.conv2);
                    }
                    if let Some(p) = b.shortcut.as_mut().filter(|p| p.id == id) {
                        return Ok(p);
                    }
                }
                _ => {}
            }
        }
        Err(Error::UnknownLayer(id.to_string()))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BasicBlock<T>> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Block(b) => Some(b),
            _ => None,
        })
    }

    /// Visits every tensor in manifest order; the flag marks trainable
    /// parameters (running statistics are buffers).
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(String, bool, &'a Tensor<T>)) {
        for s in &self.stages {
            match s {
                Stage::Conv(c) => c.visit(&mut f),
                Stage::MaxPool { .. } => {}
                Stage::Block(b) => {
                    b.conv1.visit(&mut f);
                    b.conv2.visit(&mut f);
                    if let Some(p) = &b.shortcut {
                        p.visit(&mut f);
                    }
                }
            }
        }
        self.head.visit(&mut f);
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, bool, &mut Tensor<T>)) {
        self.touch();
        for s in &mut self.stages {
            match s {
                Stage::Conv(c) => c.visit_mut(&mut f),
                Stage::MaxPool { .. } => {}
                Stage::Block(b) => {
                    b.conv1.visit_mut(&mut f);
                    b.conv2.visit_mut(&mut f);
                    if let Some(p) = &mut b.shortcut {
                        p.visit_mut(&mut f);
                    }
                }
            }
        }
        self.head.visit_mut(&mut f);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(|n, _, _| names.push(n));
        names
    }

    /// Trainable parameter count (running statistics excluded).
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit_params(|_, trainable, t| {
            if trainable {
                total += t.len();
            }
        });
        total
    }

    /// Same network with every tensor converted to another element type.
    pub fn cast<U: Element>(&self) -> Model<U> {
        fn conv<T: Element, U: Element>(c: &ConvBn<T>) -> ConvBn<U> {
            ConvBn {
                id: c.id.clone(),
                weight: c.weight.cast(),
                stride: c.stride,
                pad: c.pad,
                gamma: c.gamma.cast(),
                beta: c.beta.cast(),
                stats: crate::tensor::BnStats {
                    running_mean: c.stats.running_mean.cast(),
                    running_var: c.stats.running_var.cast(),
                },
                prunable: c.prunable,
            }
        }
        let stages = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Conv(c) => Stage::Conv(conv(c)),
                Stage::MaxPool { id } => Stage::MaxPool { id: id.clone() },
                Stage::Block(b) => Stage::Block(BasicBlock {
                    id: b.id.clone(),
                    conv1: conv(&b.conv1),
                    conv2: conv(&b.conv2),
                    shortcut: b.shortcut.as_ref().map(conv),
                    index_set: b.index_set.clone(),
                    width: b.width,
                }),
            })
            .collect();
        Model {
            arch: self.arch.clone(),
            stages,
            head: Affine {
                id: self.head.id.clone(),
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
            mode: self.mode,
            bn: self.bn,
            generation: 0,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.input_shape();
        let dims = x.dims4();
        let ok = matches!(dims, Ok([_, c, h, w]) if [c, h, w] == want);
        if !ok {
            let first = self
                .stages
                .first()
                .map(|s| match s {
                    Stage::Conv(c) => c.id.clone(),
                    Stage::Block(b) => b.conv1.id.clone(),
                    Stage::MaxPool { id } => id.clone(),
                })
                .unwrap_or_else(|| "head".into());
            let mut expect = vec![x.shape().first().copied().unwrap_or(1)];
            expect.extend(want);
            return Err(Error::dim("forward", &expect, x.shape()).in_layer(&first));
        }
        Ok(())
    }

    /// Forward pass in the current mode. Train mode uses batch statistics
    /// and updates the BN running estimates.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mode = self.mode.bn();
        let bn = self.bn;
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for s in &mut self.stages {
            match s {
                Stage::Conv(c) => {
                    let (mut y, cb) = c.forward(&h, mode, bn)?;
                    relu_inplace(&mut y);
                    caches.push(StageCache::Conv { cb, out: y.clone() });
                    h = y;
                }
                Stage::MaxPool { id } => {
                    let (y, argmax) = max_pool2x2(&h).map_err(|e| e.in_layer(id))?;
                    caches.push(StageCache::Pool {
                        in_shape: h.shape().to_vec(),
                        argmax,
                    });
                    h = y;
                }
                Stage::Block(b) => {
                    let (mut a1, c1) = b.conv1.forward(&h, mode, bn)?;
                    relu_inplace(&mut a1);
                    let (z2, c2) = b.conv2.forward(&a1, mode, bn)?;
                    let (residual, sc) = match &mut b.shortcut {
                        Some(p) => {
                            let (r, c) = p.forward(&h, mode, bn)?;
                            (r, Some(c))
                        }
                        None => (h.clone(), None),
                    };
                    let mut out =
                        residual_add(&residual, &z2, &b.index_set).map_err(|e| e.in_layer(&b.id))?;
                    relu_inplace(&mut out);
                    caches.push(StageCache::Block {
                        c1,
                        c2,
                        sc,
                        out: out.clone(),
                    });
                    h = out;
                }
            }
        }
        let pooled_shape = h.shape().to_vec();
        let features = global_avg_pool(&h)?;
        let logits = self.head.forward(&features)?;
        Ok((
            logits,
            ForwardCache {
                stages: caches,
                pooled_shape,
                features,
                generation: self.generation,
            },
        ))
    }

    /// Eval-mode logits; takes `&self`, so it is safe to call concurrently.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict_inner(x, None)
    }

    /// Eval-mode logits plus the residual, branch and merged output of
    /// every block.
    pub fn predict_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<BlockTrace<T>>)> {
        let mut trace = Vec::new();
        let y = self.predict_inner(x, Some(&mut trace))?;
        Ok((y, trace))
    }

    fn predict_inner(&self, x: &Tensor<T>, mut trace: Option<&mut Vec<BlockTrace<T>>>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let bn = self.bn;
        let mut h = x.clone();
        for s in &self.stages {
            h = match s {
                Stage::Conv(c) => {
                    let mut y = c.infer(&h, bn)?;
                    relu_inplace(&mut y);
                    y
                }
                Stage::MaxPool { id } => max_pool2x2(&h).map_err(|e| e.in_layer(id))?.0,
                Stage::Block(b) => {
                    let mut a1 = b.conv1.infer(&h, bn)?;
                    relu_inplace(&mut a1);
                    let z2 = b.conv2.infer(&a1, bn)?;
                    let residual = match &b.shortcut {
                        Some(p) => p.infer(&h, bn)?,
                        None => h,
                    };
                    let mut out =
                        residual_add(&residual, &z2, &b.index_set).map_err(|e| e.in_layer(&b.id))?;
                    relu_inplace(&mut out);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(BlockTrace {
                            block_id: b.id.clone(),
                            residual,
                            branch: z2,
                            output: out.clone(),
                        });
                    }
                    out
                }
            };
        }
        self.head.forward(&global_avg_pool(&h)?)
    }

    /// Gradients of the loss with respect to every trainable parameter,
    /// including currently zeroized filters.
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.generation != self.generation || cache.stages.len() != self.stages.len() {
            return Err(Error::StaleCache(format!(
                "cache from generation {}, model at {}",
                cache.generation, self.generation
            )));
        }
        let mut grads = Gradients::new();
        let d_feat = self.head.backward(&cache.features, d_logits, &mut grads)?;
        let mut d = global_avg_pool_grad(&cache.pooled_shape, &d_feat)?;
        for (s, c) in self.stages.iter().zip(&cache.stages).rev() {
            d = match (s, c) {
                (Stage::Conv(conv), StageCache::Conv { cb, out }) => {
                    let dz = relu_grad(out, &d)?;
                    let g = conv.backward(cb, &dz)?;
                    let dx = g.d_input.clone();
                    conv.emit_grads(g, &mut grads);
                    dx
                }
                (Stage::MaxPool { .. }, StageCache::Pool { in_shape, argmax }) => {
                    max_pool2x2_grad(in_shape, argmax, &d)?
                }
                (Stage::Block(b), StageCache::Block { c1, c2, sc, out }) => {
                    let d_pre = relu_grad(out, &d)?;
                    let d_branch = residual_add_grad(&d_pre, &b.index_set)?;
                    let g2 = b.conv2.backward(c2, &d_branch)?;
                    let d_z1 = relu_grad(&c2.input, &g2.d_input)?;
                    b.conv2.emit_grads(g2, &mut grads);
                    let g1 = b.conv1.backward(c1, &d_z1)?;
                    let d_x = g1.d_input.clone();
                    b.conv1.emit_grads(g1, &mut grads);
                    let d_res = match (&b.shortcut, sc) {
                        (Some(p), Some(pc)) => {
                            let gs = p.backward(pc, &d_pre)?;
                            let dr = gs.d_input.clone();
                            p.emit_grads(gs, &mut grads);
                            dr
                        }
                        (None, None) => d_pre,
                        _ => return Err(Error::StaleCache("shortcut layout changed".into())),
                    };
                    d_x.add(&d_res)?
                }
                _ => return Err(Error::StaleCache("stage layout changed".into())),
            };
        }
        Ok(grads)
    }

    /// Flattened layer list with shapes resolved for the declared input.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        Ok(self.resolve_shapes()?.0)
    }

    pub fn block_specs(&self) -> Result<Vec<BlockSpec>> {
        Ok(self.resolve_shapes()?.1)
    }

    /// Walks the network on the declared input size, checking that channel
    /// counts chain and index sets fit.
    fn resolve_shapes(&self) -> Result<(Vec<LayerSpec>, Vec<BlockSpec>)> {
        let [mut c, mut h, mut w] = self.input_shape();
        let mut layers = Vec::new();
        let mut blocks = Vec::new();

        fn conv_spec<T: Element>(
            conv: &ConvBn<T>,
            c: usize,
            h: usize,
            w: usize,
        ) -> Result<(LayerSpec, [usize; 2])> {
            if conv.in_channels() != c {
                return Err(Error::dim("channels", &[c], &[conv.in_channels()]).in_layer(&conv.id));
            }
            if conv.gamma.len() != conv.out_channels() {
                return Err(Error::dim("bn", &[conv.out_channels()], &[conv.gamma.len()])
                    .in_layer(&conv.id));
            }
            let k = conv.kernel();
            let out_hw = [
                conv_out_extent(h, k, conv.stride, conv.pad).map_err(|e| e.in_layer(&conv.id))?,
                conv_out_extent(w, k, conv.stride, conv.pad).map_err(|e| e.in_layer(&conv.id))?,
            ];
            Ok((
                LayerSpec {
                    layer_id: conv.id.clone(),
                    kind: LayerKind::Conv {
                        in_channels: c,
                        out_channels: conv.out_channels(),
                        kernel: k,
                        stride: conv.stride,
                        pad: conv.pad,
                        out_hw,
                    },
                    prunable: conv.prunable,
                },
                out_hw,
            ))
        }

        fn bn_spec<T: Element>(conv: &ConvBn<T>) -> LayerSpec {
            LayerSpec {
                layer_id: format!("{}.bn", conv.id),
                kind: LayerKind::Batchnorm {
                    channels: conv.out_channels(),
                },
                prunable: false,
            }
        }

        fn relu_spec(id: &str) -> LayerSpec {
            LayerSpec {
                layer_id: format!("{id}.relu"),
                kind: LayerKind::Relu,
                prunable: false,
            }
        }

        for s in &self.stages {
            match s {
                Stage::Conv(conv) => {
                    let (spec, [ho, wo]) = conv_spec(conv, c, h, w)?;
                    layers.extend([spec, bn_spec(conv), relu_spec(&conv.id)]);
                    (c, h, w) = (conv.out_channels(), ho, wo);
                }
                Stage::MaxPool { id } => {
                    if h < 2 || w < 2 {
                        return Err(Error::Geometry {
                            op: "max_pool2x2",
                            msg: format!("{id}: spatial extent {h}x{w} too small"),
                        });
                    }
                    layers.push(LayerSpec {
                        layer_id: id.clone(),
                        kind: LayerKind::Pool,
                        prunable: false,
                    });
                    (h, w) = (h / 2, w / 2);
                }
                Stage::Block(b) => {
                    let (s1, [h1, w1]) = conv_spec(&b.conv1, c, h, w)?;
                    let (s2, [h2, w2]) = conv_spec(&b.conv2, b.conv1.out_channels(), h1, w1)?;
                    let shortcut = match &b.shortcut {
                        Some(p) => {
                            let (sp, hw) = conv_spec(p, c, h, w)?;
                            if hw != [h2, w2] || p.out_channels() != b.width {
                                return Err(Error::dim("shortcut", &[b.width, h2, w2], &[
                                    p.out_channels(),
                                    hw[0],
                                    hw[1],
                                ])
                                .in_layer(&p.id));
                            }
                            ShortcutSpec::Projection(sp)
                        }
                        None => {
                            if c != b.width || [h, w] != [h2, w2] {
                                return Err(Error::dim("shortcut", &[b.width, h2, w2], &[c, h, w])
                                    .in_layer(&b.id));
                            }
                            ShortcutSpec::Identity
                        }
                    };
                    if b.index_set.len() != b.conv2.out_channels()
                        || b.index_set.iter().any(|&i| i >= b.width)
                        || b.index_set.windows(2).any(|p| p[0] >= p[1])
                    {
                        return Err(Error::Index(format!(
                            "block {} index set {:?} does not fit branch width {} / residual width {}",
                            b.id,
                            b.index_set,
                            b.conv2.out_channels(),
                            b.width
                        )));
                    }
                    let block_layers = vec![
                        s1,
                        bn_spec(&b.conv1),
                        relu_spec(&b.conv1.id),
                        s2,
                        bn_spec(&b.conv2),
                    ];
                    layers.extend(block_layers.iter().cloned());
                    if let ShortcutSpec::Projection(sp) = &shortcut {
                        layers.push(sp.clone());
                        layers.push(bn_spec(b.shortcut.as_ref().expect("projection")));
                    }
                    layers.push(relu_spec(&b.id));
                    blocks.push(BlockSpec {
                        block_id: b.id.clone(),
                        layers: block_layers,
                        shortcut,
                        width: b.width,
                        index_set: b.index_set.clone(),
                    });
                    (c, h, w) = (b.width, h2, w2);
                }
            }
        }
        layers.push(LayerSpec {
            layer_id: "pool".into(),
            kind: LayerKind::Pool,
            prunable: false,
        });
        if self.head.in_features() != c {
            return Err(Error::dim("head", &[c], &[self.head.in_features()]).in_layer(&self.head.id));
        }
        layers.push(LayerSpec {
            layer_id: self.head.id.clone(),
            kind: LayerKind::Affine {
                in_features: c,
                out_features: self.head.out_features(),
            },
            prunable: false,
        });
        Ok((layers, blocks))
    }

    /// Checks channel bookkeeping for the declared input size.
    pub fn validate(&self) -> Result<()> {
        self.resolve_shapes().map(|_| ())
    }

    /// Physically keeps only output filters `keep` of conv `id` and slices
    /// every consumer of that output: the next conv's input channels, the
    /// head's input features, or the block's residual index set.
    pub fn retain_filters(&mut self, id: &str, keep: &[usize]) -> Result<()> {
        self.touch();
        let pos = self
            .stages
            .iter()
            .position(|s| match s {
                Stage::Conv(c) => c.id == id,
                Stage::Block(b) => {
                    b.conv1.id == id
                        || b.conv2.id == id
                        || b.shortcut.as_ref().is_some_and(|p| p.id == id)
                }
                Stage::MaxPool { .. } => false,
            })
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))?;
        let conv_out = match &self.stages[pos] {
            Stage::Conv(c) => c.out_channels(),
            Stage::Block(b) if b.conv1.id == id => b.conv1.out_channels(),
            Stage::Block(b) if b.conv2.id == id => b.conv2.out_channels(),
            _ => return Err(Error::NotPrunable(id.to_string())),
        };
        if keep.is_empty() || keep.iter().any(|&k| k >= conv_out) || keep.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Extraction(format!(
                "invalid keep set for `{id}` ({conv_out} filters): {keep:?}"
            )));
        }
        match &mut self.stages[pos] {
            Stage::Block(b) if b.conv1.id == id => {
                b.conv1.retain_outputs(keep)?;
                b.conv2.retain_inputs(keep)?;
                return Ok(());
            }
            Stage::Block(b) => {
                b.conv2.retain_outputs(keep)?;
                b.index_set = keep.iter().map(|&k| b.index_set[k]).collect();
                return Ok(());
            }
            Stage::Conv(c) => c.retain_outputs(keep)?,
            Stage::MaxPool { .. } => unreachable!("position matched a conv"),
        }
        // plain chain: the next conv (across any pooling) or the head consumes it
        for s in &mut self.stages[pos + 1..] {
            match s {
                Stage::Conv(c) => return c.retain_inputs(keep),
                Stage::MaxPool { .. } => continue,
                Stage::Block(_) => {
                    return Err(Error::Extraction(format!(
                        "`{id}` feeds a residual stream and cannot be narrowed"
                    )))
                }
            }
        }
        self.head.retain_inputs(keep)
    }

    /// Replaces every tensor from `params` (name → tensor) and re-derives
    /// channel counts from the tensor shapes. Used by checkpoint loading.
    pub fn load_params(
        &mut self,
        mut params: BTreeMap<String, Tensor<T>>,
        index_sets: &BTreeMap<String, Vec<usize>>,
    ) -> Result<()> {
        let mut missing = Vec::new();
        self.visit_params_mut(|name, _, t| match params.remove(&name) {
            Some(v) => *t = v,
            None => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing parameters: {missing:?}")));
        }
        if !params.is_empty() {
            return Err(Error::Config(format!(
                "unexpected parameters: {:?}",
                params.keys().collect::<Vec<_>>()
            )));
        }
        for s in &mut self.stages {
            if let Stage::Block(b) = s {
                b.index_set = match index_sets.get(&b.id) {
                    Some(i) => i.clone(),
                    None => (0..b.conv2.out_channels()).collect(),
                };
            }
        }
        self.validate()
    }

    /// Index set of every residual block, keyed by block id.
    pub fn index_sets(&self) -> BTreeMap<String, Vec<usize>> {
        self.blocks()
            .map(|b| (b.id.clone(), b.index_set.clone()))
            .collect()
    }
}

fn plain_stages<T: Element>(rng: &mut DetRng, widths: &[usize], cin: usize) -> (Vec<Stage<T>>, usize) {
    let mut stages = Vec::new();
    let mut c = cin;
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 {
            stages.push(Stage::MaxPool {
                id: format!("pool{i}"),
            });
        }
        stages.push(Stage::Conv(ConvBn::init(rng, format!("conv{i}"), c, w, 3, 1, 1, true)));
        c = w;
    }
    (stages, c)
}

fn resnet_stages<T: Element>(
    rng: &mut DetRng,
    n: usize,
    widths: &[usize],
    cin: usize,
) -> (Vec<Stage<T>>, usize) {
    let mut stages = vec![Stage::Conv(ConvBn::init(rng, "stem", cin, widths[0], 3, 1, 1, false))];
    let mut c = widths[0];
    for (si, &w) in widths.iter().enumerate() {
        for bi in 0..n {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let id = format!("s{}.b{}", si + 1, bi);
            let conv1 = ConvBn::init(rng, format!("{id}.conv1"), c, w, 3, stride, 1, true);
            let conv2 = ConvBn::init(rng, format!("{id}.conv2"), w, w, 3, 1, 1, true);
            let shortcut = (stride != 1 || c != w)
                .then(|| ConvBn::init(rng, format!("{id}.shortcut"), c, w, 1, stride, 0, false));
            stages.push(Stage::Block(BasicBlock {
                id,
                conv1,
                conv2,
                shortcut,
                index_set: (0..w).collect(),
                width: w,
            }));
            c = w;
        }
    }
    (stages, c)
}
