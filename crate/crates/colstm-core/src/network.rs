//! The full classification network: a configurable stack of bidirectional
//! recurrent and per-timestep feedforward layers, topped by a linear
//! classifier that sums over time.
//!
//! The classifier reads the last recurrent layer's forward and backward
//! output halves at every timestep, accumulates `W_fwd·h_fwd + W_bwd·h_bwd +
//! b` over the whole sequence, and applies a softmax. Sequences of any length
//! are unrolled fully; there is no padding or truncation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{
    BlstmCache, BlstmLayer, DropoutMasks, FeedforwardParams, LstmParams,
};
use crate::reg::{partition_groups, penalty_subgradient, penalty_value, PenalizedLayer, RegConfig};
use crate::tensor::{Activation, Matrix, TensorView, TensorViewMut};

/// Layer kinds available in the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Blstm,
    Feedforward,
}

/// One layer of the stack: its kind, its width (cells per direction for a
/// bidirectional layer, so its output is twice this), and whether per-gate
/// dropout is active on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: usize,
    #[serde(default)]
    pub dropout: bool,
}

/// Architecture and initialization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Width of the input frames (3 coordinates per joint for skeleton data).
    pub input_width: usize,
    /// Number of output classes.
    pub classes: usize,
    /// Drop probability shared by all dropout-enabled layers.
    #[serde(default = "default_dropout_p")]
    pub dropout_p: f64,
    /// The layer stack, bottom to top. The last layer must be bidirectional.
    pub layers: Vec<LayerSpec>,
    /// Restrict peephole connections to diagonal matrices.
    #[serde(default)]
    pub diagonal_peepholes: bool,
    /// Half-width of the uniform initialization interval.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Initial forget-gate bias (positive values start cells remembering).
    #[serde(default = "default_forget_bias")]
    pub forget_bias: f64,
}

fn default_dropout_p() -> f64 {
    0.2
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_forget_bias() -> f64 {
    1.0
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input_width must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("layer stack is empty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init_scale must be positive and finite, got {}",
                self.init_scale
            )));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("forget_bias must be finite".into()));
        }
        for (idx, spec) in self.layers.iter().enumerate() {
            if spec.width == 0 {
                return Err(Error::Config(format!("layer {idx} has zero width")));
            }
            if spec.dropout && spec.kind != LayerKind::Blstm {
                return Err(Error::Config(format!(
                    "layer {idx}: dropout is only supported on blstm layers"
                )));
            }
        }
        if self.layers.last().unwrap().kind != LayerKind::Blstm {
            return Err(Error::Config(
                "the last layer must be blstm: the classifier reads its forward and backward halves"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Input width seen by layer `idx` given the stack below it.
    pub fn layer_input_width(&self, idx: usize) -> usize {
        let mut width = self.input_width;
        for spec in &self.layers[..idx] {
            width = match spec.kind {
                LayerKind::Blstm => 2 * spec.width,
                LayerKind::Feedforward => spec.width,
            };
        }
        width
    }
}

/// Linear classifier weights: one matrix per direction of the top recurrent
/// layer, plus a bias added at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w_fwd: Matrix,
    pub w_bwd: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(classes: usize, half_width: usize) -> Self {
        ClassifierParams {
            w_fwd: Matrix::zeros(classes, half_width),
            w_bwd: Matrix::zeros(classes, half_width),
            b: vec![0.0; classes],
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, TensorView<'_>)> {
        vec![
            ("w_fwd", TensorView::Matrix(&self.w_fwd)),
            ("w_bwd", TensorView::Matrix(&self.w_bwd)),
            ("b", TensorView::Vector(&self.b)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorViewMut<'_>)> {
        vec![
            ("w_fwd", TensorViewMut::Matrix(&mut self.w_fwd)),
            ("w_bwd", TensorViewMut::Matrix(&mut self.w_bwd)),
            ("b", TensorViewMut::Vector(&mut self.b)),
        ]
    }
}

/// One concrete layer of the stack.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Blstm(BlstmLayer),
    Feedforward(FeedforwardParams),
}

/// One labeled training or evaluation sequence: frames of uniform width plus
/// a 0-based class label.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
}

/// The assembled network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
    pub classifier: ClassifierParams,
}

/// Gradient (or optimizer-state) container mirroring a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub classifier: ClassifierParams,
}

/// Per-timestep dropout masks for both directions of one recurrent layer.
/// Backward-direction masks are indexed by reverse-scan position.
#[derive(Clone, Debug, PartialEq)]
pub struct BlstmMasks {
    pub fwd: Vec<DropoutMasks>,
    pub bwd: Vec<DropoutMasks>,
}

/// Masks for a whole forward pass: `Some` only for dropout-enabled layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkMasks {
    pub per_layer: Vec<Option<BlstmMasks>>,
}

impl NetworkMasks {
    /// No dropout anywhere: every layer runs its clean path only, which is
    /// bitwise the vanilla stack.
    pub fn none(layer_count: usize) -> Self {
        NetworkMasks {
            per_layer: vec![None; layer_count],
        }
    }
}

/// Cached intermediates of one layer, for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    Blstm(BlstmCache),
    /// Per-timestep outputs of a feedforward layer.
    Feedforward(Vec<Vec<f64>>),
}

/// Everything one forward pass computes.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input sequence seen by each layer (`layer_inputs[0]` is the sample).
    pub layer_inputs: Vec<Vec<Vec<f64>>>,
    pub layer_caches: Vec<LayerCache>,
    /// Output sequence of the top layer (width `2n`).
    pub last_outputs: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

enum MaskPlan<'a> {
    /// Inference: dropout layers scaled by the keep probability, clean path
    /// untouched; other layers unaffected.
    Eval,
    /// Training with externally supplied masks.
    Given(&'a NetworkMasks),
}

impl Network {
    /// Build a network with random initial weights drawn from `rng` in a
    /// fixed order (layers bottom to top, forward direction before backward,
    /// classifier last).
    pub fn init<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let scale = config.init_scale;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut width = config.input_width;
        for spec in &config.layers {
            match spec.kind {
                LayerKind::Blstm => {
                    let fwd = LstmParams::init(
                        rng,
                        spec.width,
                        width,
                        scale,
                        config.forget_bias,
                        config.diagonal_peepholes,
                    );
                    let bwd = LstmParams::init(
                        rng,
                        spec.width,
                        width,
                        scale,
                        config.forget_bias,
                        config.diagonal_peepholes,
                    );
                    layers.push(Layer::Blstm(BlstmLayer { fwd, bwd }));
                    width = 2 * spec.width;
                }
                LayerKind::Feedforward => {
                    layers.push(Layer::Feedforward(FeedforwardParams::init(
                        rng,
                        spec.width,
                        width,
                        scale,
                        Activation::Tanh,
                    )));
                    width = spec.width;
                }
            }
        }
        let half = config.layers.last().unwrap().width;
        let mut classifier = ClassifierParams::zeros(config.classes, half);
        for m in [&mut classifier.w_fwd, &mut classifier.w_bwd] {
            for v in m.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        Ok(Network {
            config,
            layers,
            classifier,
        })
    }

    /// Build a network of the configured shape with every parameter zero
    /// (the container checkpoints deserialize into).
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut width = config.input_width;
        for spec in &config.layers {
            match spec.kind {
                LayerKind::Blstm => {
                    layers.push(Layer::Blstm(BlstmLayer {
                        fwd: LstmParams::zeros(spec.width, width),
                        bwd: LstmParams::zeros(spec.width, width),
                    }));
                    width = 2 * spec.width;
                }
                LayerKind::Feedforward => {
                    layers.push(Layer::Feedforward(FeedforwardParams::zeros(
                        spec.width,
                        width,
                        Activation::Tanh,
                    )));
                    width = spec.width;
                }
            }
        }
        let half = config.layers.last().unwrap().width;
        let classifier = ClassifierParams::zeros(config.classes, half);
        Ok(Network {
            config,
            layers,
            classifier,
        })
    }

    /// Width of the top layer's halves.
    pub fn top_half_width(&self) -> usize {
        self.config.layers.last().unwrap().width
    }

    /// Draw training masks for a sequence of length `t_len`. Only layers with
    /// the dropout flag get masks; draw order is fixed (layers bottom to top,
    /// forward direction over all timesteps, then backward), so a given RNG
    /// state always produces the same masks.
    pub fn draw_masks<R: Rng>(&self, t_len: usize, rng: &mut R) -> NetworkMasks {
        let p = self.config.dropout_p;
        let per_layer = self
            .config
            .layers
            .iter()
            .map(|spec| {
                if spec.kind == LayerKind::Blstm && spec.dropout {
                    let fwd = (0..t_len).map(|_| DropoutMasks::sample(rng, p, spec.width)).collect();
                    let bwd = (0..t_len).map(|_| DropoutMasks::sample(rng, p, spec.width)).collect();
                    Some(BlstmMasks { fwd, bwd })
                } else {
                    None
                }
            })
            .collect();
        NetworkMasks { per_layer }
    }

    fn run_forward(&self, frames: &[Vec<f64>], plan: MaskPlan<'_>) -> ForwardCache {
        assert!(!frames.is_empty(), "cannot run an empty sequence");
        let t_len = frames.len();
        assert_eq!(
            frames[0].len(),
            self.config.input_width,
            "frame width {} does not match configured input width {}",
            frames[0].len(),
            self.config.input_width
        );

        let mut layer_inputs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut layer_caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Vec<f64>> = frames.to_vec();

        for (l, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(current.clone());
            match layer {
                Layer::Blstm(bl) => {
                    let n = bl.n();
                    let spec = &self.config.layers[l];
                    let (masks_f, masks_b): (Vec<DropoutMasks>, Vec<DropoutMasks>) = match &plan {
                        MaskPlan::Eval => {
                            if spec.dropout && self.config.dropout_p > 0.0 {
                                let m = DropoutMasks::inference(self.config.dropout_p, n);
                                ((0..t_len).map(|_| m.clone()).collect(), (0..t_len).map(|_| m.clone()).collect())
                            } else {
                                let m = DropoutMasks::ones(n);
                                ((0..t_len).map(|_| m.clone()).collect(), (0..t_len).map(|_| m.clone()).collect())
                            }
                        }
                        MaskPlan::Given(nm) => match &nm.per_layer[l] {
                            Some(bm) => (bm.fwd.clone(), bm.bwd.clone()),
                            None => {
                                let m = DropoutMasks::ones(n);
                                ((0..t_len).map(|_| m.clone()).collect(), (0..t_len).map(|_| m.clone()).collect())
                            }
                        },
                    };
                    let (out, cache) = bl.forward(&current, masks_f, masks_b);
                    layer_caches.push(LayerCache::Blstm(cache));
                    current = out;
                }
                Layer::Feedforward(ff) => {
                    let out: Vec<Vec<f64>> = current.iter().map(|x| ff.forward(x)).collect();
                    layer_caches.push(LayerCache::Feedforward(out.clone()));
                    current = out;
                }
            }
        }

        // Classifier: accumulate over all timesteps.
        let half = self.top_half_width();
        let mut logits = vec![0.0; self.config.classes];
        for frame in &current {
            let mut term = self.classifier.w_fwd.matvec(&frame[..half]);
            crate::tensor::add_assign(&mut term, &self.classifier.w_bwd.matvec(&frame[half..]));
            crate::tensor::add_assign(&mut term, &self.classifier.b);
            crate::tensor::add_assign(&mut logits, &term);
        }

        ForwardCache {
            layer_inputs,
            layer_caches,
            last_outputs: current,
            logits,
        }
    }

    /// Inference-mode forward pass: deterministic, dropout sites scaled by
    /// the keep probability.
    pub fn forward_eval(&self, frames: &[Vec<f64>]) -> ForwardCache {
        self.run_forward(frames, MaskPlan::Eval)
    }

    /// Training-mode forward pass with masks drawn from `rng`.
    pub fn forward_train<R: Rng>(&self, frames: &[Vec<f64>], rng: &mut R) -> (ForwardCache, NetworkMasks) {
        let masks = self.draw_masks(frames.len(), rng);
        let cache = self.run_forward(frames, MaskPlan::Given(&masks));
        (cache, masks)
    }

    /// Training-mode forward pass with externally fixed masks (used by the
    /// gradient checker, which must evaluate the same stochastic function
    /// repeatedly).
    pub fn forward_with_masks(&self, frames: &[Vec<f64>], masks: &NetworkMasks) -> ForwardCache {
        self.run_forward(frames, MaskPlan::Given(masks))
    }

    /// Backpropagate the classification loss for one sample through the
    /// cached forward pass. Returns the parameter gradients of the negative
    /// log-likelihood of `label`.
    pub fn backward(&self, cache: &ForwardCache, label: usize) -> Gradients {
        let classes = self.config.classes;
        assert!(label < classes, "label {label} out of range for {classes} classes");
        let t_len = cache.last_outputs.len();
        let half = self.top_half_width();
        let probs = class_probabilities(&cache.logits);
        let mut delta: Vec<f64> = probs;
        delta[label] -= 1.0;

        let mut grads = Gradients::zeros_like(self);

        // Classifier: the weight gradients factor through the time-summed
        // halves; the bias gradient is the per-step delta scaled by the
        // sequence length.
        let mut sum_fwd = vec![0.0; half];
        let mut sum_bwd = vec![0.0; half];
        for frame in &cache.last_outputs {
            crate::tensor::add_assign(&mut sum_fwd, &frame[..half]);
            crate::tensor::add_assign(&mut sum_bwd, &frame[half..]);
        }
        grads.classifier.w_fwd.add_outer(&delta, &sum_fwd);
        grads.classifier.w_bwd.add_outer(&delta, &sum_bwd);
        grads.classifier.b = delta.iter().map(|d| t_len as f64 * d).collect();

        // Error on every timestep of the top layer (identical across time).
        let mut d_fwd = self.classifier.w_fwd.matvec_t(&delta);
        let d_bwd = self.classifier.w_bwd.matvec_t(&delta);
        d_fwd.extend_from_slice(&d_bwd);
        let mut errors: Vec<Vec<f64>> = (0..t_len).map(|_| d_fwd.clone()).collect();

        for l in (0..self.layers.len()).rev() {
            let inputs = &cache.layer_inputs[l];
            errors = match (&self.layers[l], &cache.layer_caches[l], &mut grads.layers[l]) {
                (Layer::Blstm(bl), LayerCache::Blstm(bc), Layer::Blstm(gl)) => {
                    bl.backward(inputs, bc, &errors, &mut gl.fwd, &mut gl.bwd)
                }
                (Layer::Feedforward(ff), LayerCache::Feedforward(outputs), Layer::Feedforward(gf)) => {
                    (0..inputs.len())
                        .map(|t| ff.backward(&inputs[t], &outputs[t], &errors[t], gf))
                        .collect()
                }
                _ => unreachable!("cache/grads structure mirrors the layer stack"),
            };
        }
        grads
    }

    /// Predicted class for one sample: argmax of the class probabilities,
    /// ties broken toward the lowest index.
    pub fn predict(&self, frames: &[Vec<f64>]) -> usize {
        let cache = self.forward_eval(frames);
        argmax(&cache.logits)
    }

    /// Mean negative log-likelihood over `samples` (inference-mode forward)
    /// plus the sparsity penalty under `reg`.
    pub fn total_loss(&self, samples: &[SequenceSample], reg: &RegConfig) -> f64 {
        assert!(!samples.is_empty(), "cannot average a loss over zero samples");
        let data: f64 = samples
            .iter()
            .map(|s| {
                let cache = self.forward_eval(&s.frames);
                nll_loss(&class_probabilities(&cache.logits), s.label)
            })
            .sum::<f64>()
            / samples.len() as f64;
        data + self.penalty(reg)
    }

    /// Check `reg` against this architecture: every target index must name a
    /// layer and every group count must fit that layer's width.
    pub fn validate_reg(&self, reg: &RegConfig) -> Result<()> {
        reg.validate()?;
        for (&idx, &k) in reg.target_layers.iter().zip(reg.groups_per_layer.iter()) {
            if idx >= self.layers.len() {
                return Err(Error::Config(format!(
                    "reg target layer {idx} out of range: network has {} layers",
                    self.layers.len()
                )));
            }
            let n = self.config.layers[idx].width;
            if k == 0 || k > n {
                return Err(Error::Config(format!(
                    "reg group count {k} invalid for layer {idx} of width {n}"
                )));
            }
        }
        Ok(())
    }

    /// Sparsity penalty of the current weights under `reg`. Penalizes the
    /// input weight matrices of each target layer: all four gate matrices of
    /// both directions for a recurrent layer, the single matrix of a
    /// feedforward layer.
    pub fn penalty(&self, reg: &RegConfig) -> f64 {
        if reg.target_layers.is_empty() || (reg.lambda1 == 0.0 && reg.lambda2 == 0.0) {
            return 0.0;
        }
        self.validate_reg(reg).expect("reg config must match the network");
        let mut total = 0.0;
        for (&idx, &k) in reg.target_layers.iter().zip(reg.groups_per_layer.iter()) {
            let n = self.config.layers[idx].width;
            let groups = partition_groups(n, k).expect("validated above");
            let matrices: Vec<&Matrix> = match &self.layers[idx] {
                Layer::Blstm(bl) => vec![
                    &bl.fwd.w_xi, &bl.fwd.w_xf, &bl.fwd.w_xc, &bl.fwd.w_xo,
                    &bl.bwd.w_xi, &bl.bwd.w_xf, &bl.bwd.w_xc, &bl.bwd.w_xo,
                ],
                Layer::Feedforward(ff) => vec![&ff.w],
            };
            total += penalty_value(
                &[PenalizedLayer { matrices, groups: &groups }],
                reg.lambda1,
                reg.lambda2,
            );
        }
        total
    }

    /// Add the penalty subgradients of the current weights into `grads`.
    pub fn add_penalty_subgradients(&self, reg: &RegConfig, grads: &mut Gradients) {
        if reg.target_layers.is_empty() || (reg.lambda1 == 0.0 && reg.lambda2 == 0.0) {
            return;
        }
        self.validate_reg(reg).expect("reg config must match the network");
        for (&idx, &k) in reg.target_layers.iter().zip(reg.groups_per_layer.iter()) {
            let n = self.config.layers[idx].width;
            let groups = partition_groups(n, k).expect("validated above");
            match (&self.layers[idx], &mut grads.layers[idx]) {
                (Layer::Blstm(bl), Layer::Blstm(gl)) => {
                    let pairs: [(&Matrix, &mut Matrix); 8] = [
                        (&bl.fwd.w_xi, &mut gl.fwd.w_xi),
                        (&bl.fwd.w_xf, &mut gl.fwd.w_xf),
                        (&bl.fwd.w_xc, &mut gl.fwd.w_xc),
                        (&bl.fwd.w_xo, &mut gl.fwd.w_xo),
                        (&bl.bwd.w_xi, &mut gl.bwd.w_xi),
                        (&bl.bwd.w_xf, &mut gl.bwd.w_xf),
                        (&bl.bwd.w_xc, &mut gl.bwd.w_xc),
                        (&bl.bwd.w_xo, &mut gl.bwd.w_xo),
                    ];
                    for (w, g) in pairs {
                        let sub = penalty_subgradient(w, &groups, reg.lambda1, reg.lambda2);
                        for (gv, sv) in g.data_mut().iter_mut().zip(sub.data().iter()) {
                            *gv += sv;
                        }
                    }
                }
                (Layer::Feedforward(ff), Layer::Feedforward(gf)) => {
                    let sub = penalty_subgradient(&ff.w, &groups, reg.lambda1, reg.lambda2);
                    for (gv, sv) in gf.w.data_mut().iter_mut().zip(sub.data().iter()) {
                        *gv += sv;
                    }
                }
                _ => unreachable!("grads mirror the layer stack"),
            }
        }
    }

    /// All parameter tensors with hierarchical names, in declaration order.
    /// This order defines the checkpoint layout.
    pub fn tensors(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Blstm(bl) => {
                    for (name, t) in bl.fwd.tensors() {
                        out.push((format!("layer{l}.fwd.{name}"), t));
                    }
                    for (name, t) in bl.bwd.tensors() {
                        out.push((format!("layer{l}.bwd.{name}"), t));
                    }
                }
                Layer::Feedforward(ff) => {
                    for (name, t) in ff.tensors() {
                        out.push((format!("layer{l}.{name}"), t));
                    }
                }
            }
        }
        for (name, t) in self.classifier.tensors() {
            out.push((format!("classifier.{name}"), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorViewMut<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Blstm(bl) => {
                    for (name, t) in bl.fwd.tensors_mut() {
                        out.push((format!("layer{l}.fwd.{name}"), t));
                    }
                    for (name, t) in bl.bwd.tensors_mut() {
                        out.push((format!("layer{l}.bwd.{name}"), t));
                    }
                }
                Layer::Feedforward(ff) => {
                    for (name, t) in ff.tensors_mut() {
                        out.push((format!("layer{l}.{name}"), t));
                    }
                }
            }
        }
        for (name, t) in self.classifier.tensors_mut() {
            out.push((format!("classifier.{name}"), t));
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl Gradients {
    /// Zero gradients with the same structure as `net`.
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Blstm(bl) => Layer::Blstm(BlstmLayer {
                    fwd: LstmParams::zeros(bl.fwd.n(), bl.fwd.input_width()),
                    bwd: LstmParams::zeros(bl.bwd.n(), bl.bwd.input_width()),
                }),
                Layer::Feedforward(ff) => Layer::Feedforward(FeedforwardParams::zeros(
                    ff.out_width(),
                    ff.in_width(),
                    ff.activation,
                )),
            })
            .collect();
        let classifier = ClassifierParams::zeros(net.config.classes, net.top_half_width());
        Gradients { layers, classifier }
    }

    /// Tensor views with the same names and order as [`Network::tensors`].
    pub fn tensors(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Blstm(bl) => {
                    for (name, t) in bl.fwd.tensors() {
                        out.push((format!("layer{l}.fwd.{name}"), t));
                    }
                    for (name, t) in bl.bwd.tensors() {
                        out.push((format!("layer{l}.bwd.{name}"), t));
                    }
                }
                Layer::Feedforward(ff) => {
                    for (name, t) in ff.tensors() {
                        out.push((format!("layer{l}.{name}"), t));
                    }
                }
            }
        }
        for (name, t) in self.classifier.tensors() {
            out.push((format!("classifier.{name}"), t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorViewMut<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Blstm(bl) => {
                    for (name, t) in bl.fwd.tensors_mut() {
                        out.push((format!("layer{l}.fwd.{name}"), t));
                    }
                    for (name, t) in bl.bwd.tensors_mut() {
                        out.push((format!("layer{l}.bwd.{name}"), t));
                    }
                }
                Layer::Feedforward(ff) => {
                    for (name, t) in ff.tensors_mut() {
                        out.push((format!("layer{l}.{name}"), t));
                    }
                }
            }
        }
        for (name, t) in self.classifier.tensors_mut() {
            out.push((format!("classifier.{name}"), t));
        }
        out
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Gradients) {
        let theirs = other.tensors();
        for ((_, mut mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.values_mut().iter_mut().zip(t.values()) {
                *a += b;
            }
        }
    }

    /// Multiply every entry by `s`.
    pub fn scale(&mut self, s: f64) {
        for (_, mut t) in self.tensors_mut() {
            for v in t.values_mut() {
                *v *= s;
            }
        }
    }

    /// Sum of squares over all entries (the global ℓ2 norm squared).
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.values().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Name of the first tensor containing a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (name, t) in self.tensors() {
            if t.values().iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
        None
    }
}

/// Numerically stable softmax: the maximum logit is subtracted before
/// exponentiation, so arbitrarily large logits cannot overflow.
pub fn class_probabilities(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "cannot take a softmax of zero logits");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Negative log-likelihood of `label` under `probs`. Panics if the label is
/// out of range.
pub fn nll_loss(probs: &[f64], label: usize) -> f64 {
    assert!(
        label < probs.len(),
        "label {label} out of range for {} classes",
        probs.len()
    );
    -probs[label].ln()
}

/// Index of the largest entry; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn tiny_config(dropout_last: bool) -> NetworkConfig {
        NetworkConfig {
            input_width: 4,
            classes: 2,
            dropout_p: 0.2,
            layers: vec![
                LayerSpec { kind: LayerKind::Blstm, width: 3, dropout: false },
                LayerSpec { kind: LayerKind::Feedforward, width: 3, dropout: false },
                LayerSpec { kind: LayerKind::Blstm, width: 3, dropout: dropout_last },
            ],
            diagonal_peepholes: false,
            init_scale: 0.1,
            forget_bias: 1.0,
        }
    }

    fn random_frames(seed: u64, t_len: usize, width: usize) -> Vec<Vec<f64>> {
        let mut rng = derive_rng(seed, &[500]);
        (0..t_len)
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn validation_rejects_bad_stacks() {
        let mut cfg = tiny_config(false);
        cfg.layers.push(LayerSpec { kind: LayerKind::Feedforward, width: 3, dropout: false });
        assert!(cfg.validate().is_err(), "feedforward top layer must be rejected");

        let mut cfg = tiny_config(false);
        cfg.layers[1].dropout = true;
        assert!(cfg.validate().is_err(), "dropout on feedforward must be rejected");

        let mut cfg = tiny_config(false);
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(false);
        cfg.layers.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(false);
        cfg.classes = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_weights_logits_accumulate_bias_per_timestep() {
        let cfg = tiny_config(false);
        let mut net = Network::init(cfg, &mut derive_rng(1, &[1])).unwrap();
        // Zero every weight, then set the classifier bias.
        for (_, mut t) in net.tensors_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        net.classifier.b = vec![1.0, 2.0];
        let frames = random_frames(2, 3, 4);
        let cache = net.forward_eval(&frames);
        assert_eq!(cache.logits, vec![3.0, 6.0]);

        let one = net.forward_eval(&frames[..1]);
        assert_eq!(one.logits, vec![1.0, 2.0]);
    }

    /// Straight-line transcription of the whole stack with bare loops:
    /// an independent oracle for the assembled forward pass.
    #[test]
    fn forward_matches_hand_unrolled_reference() {
        let cfg = tiny_config(false);
        let net = Network::init(cfg, &mut derive_rng(7, &[3])).unwrap();
        let t_len = 5;
        let frames = random_frames(9, t_len, 4);
        let cache = net.forward_eval(&frames);

        // Scalar helpers.
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let dot = |w: &Matrix, v: &[f64], i: usize| -> f64 {
            (0..v.len()).map(|j| w.get(i, j) * v[j]).sum()
        };
        // One direction of a recurrent layer over `xs`, plain loops.
        let scan = |p: &LstmParams, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let n = p.n();
            let mut h = vec![0.0; n];
            let mut c = vec![0.0; n];
            let mut out = Vec::new();
            for x in xs {
                let mut nh = vec![0.0; n];
                let mut nc = vec![0.0; n];
                for k in 0..n {
                    let i = sig(dot(&p.w_xi, x, k) + dot(&p.w_hi, &h, k) + dot(&p.w_ci, &c, k) + p.b_i[k]);
                    let f = sig(dot(&p.w_xf, x, k) + dot(&p.w_hf, &h, k) + dot(&p.w_cf, &c, k) + p.b_f[k]);
                    let g = (dot(&p.w_xc, x, k) + dot(&p.w_hc, &h, k) + p.b_c[k]).tanh();
                    nc[k] = f * c[k] + i * g;
                }
                for k in 0..n {
                    let o = sig(dot(&p.w_xo, x, k) + dot(&p.w_ho, &h, k) + dot(&p.w_co, &nc, k) + p.b_o[k]);
                    nh[k] = o * nc[k].tanh();
                }
                h = nh.clone();
                c = nc;
                out.push(nh);
            }
            out
        };
        let blstm = |bl: &BlstmLayer, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let f = scan(&bl.fwd, xs);
            let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let b = scan(&bl.bwd, &rev);
            (0..xs.len())
                .map(|t| {
                    let mut frame = f[t].clone();
                    frame.extend_from_slice(&b[xs.len() - 1 - t]);
                    frame
                })
                .collect()
        };

        let l0 = match &net.layers[0] {
            Layer::Blstm(bl) => blstm(bl, &frames),
            _ => unreachable!(),
        };
        let l1: Vec<Vec<f64>> = match &net.layers[1] {
            Layer::Feedforward(ff) => l0
                .iter()
                .map(|x| (0..ff.out_width()).map(|k| (dot(&ff.w, x, k) + ff.b[k]).tanh()).collect())
                .collect(),
            _ => unreachable!(),
        };
        let l2 = match &net.layers[2] {
            Layer::Blstm(bl) => blstm(bl, &l1),
            _ => unreachable!(),
        };
        let mut logits = vec![0.0; 2];
        for frame in &l2 {
            for k in 0..2 {
                logits[k] += dot(&net.classifier.w_fwd, &frame[..3], k)
                    + dot(&net.classifier.w_bwd, &frame[3..], k)
                    + net.classifier.b[k];
            }
        }
        for k in 0..2 {
            assert!(
                (cache.logits[k] - logits[k]).abs() < 1e-12,
                "logit {k}: {} vs {}",
                cache.logits[k],
                logits[k]
            );
        }
    }

    #[test]
    fn class_probabilities_known_values() {
        assert_eq!(class_probabilities(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(class_probabilities(&[7.5, 7.5, 7.5]), vec![1.0 / 3.0; 3]);
        let p = class_probabilities(&[1.0, 2.0, 3.0]);
        assert!((p[0] - 0.09003057317038046).abs() < 1e-15);
        assert!((p[1] - 0.24472847105479767).abs() < 1e-15);
        assert!((p[2] - 0.6652409557748219).abs() < 1e-15);
    }

    #[test]
    fn class_probabilities_are_shift_invariant_and_normalized() {
        let mut rng = derive_rng(12, &[9]);
        for _ in 0..200 {
            let n = rng.gen_range(2..6);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let c = rng.gen_range(-50.0..50.0);
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let a = class_probabilities(&logits);
            let b = class_probabilities(&shifted);
            let sum: f64 = a.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!(*x > 0.0);
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(argmax(&a), argmax(&logits));
        }
        // Extreme logits must not overflow.
        let p = class_probabilities(&[1e8, 0.0]);
        assert!(p[0].is_finite() && p[1].is_finite());
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn nll_known_values() {
        assert!((nll_loss(&[0.25; 4], 1) - (4.0f64).ln()).abs() < 1e-15);
        assert_eq!(nll_loss(&[1.0, 0.0], 0), 0.0);
        let p = class_probabilities(&[1.0, 2.0, 3.0]);
        assert!((nll_loss(&p, 2) - 0.40760596444438079).abs() < 1e-10);
    }

    #[test]
    #[should_panic(expected = "label")]
    fn nll_rejects_out_of_range_label() {
        nll_loss(&[0.5, 0.5], 2);
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn backward_with_saturated_correct_logit_gives_zero_gradients() {
        // When the softmax is exactly one-hot at the true label, the loss
        // gradient vanishes identically.
        let cfg = tiny_config(false);
        let mut net = Network::init(cfg, &mut derive_rng(3, &[8])).unwrap();
        // Force logits (1000, 0): probabilities are exactly (1, 0) in f64.
        for (_, mut t) in net.tensors_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        net.classifier.b = vec![1000.0, 0.0];
        let frames = random_frames(14, 3, 4);
        let cache = net.forward_eval(&frames);
        assert_eq!(class_probabilities(&cache.logits), vec![1.0, 0.0]);
        let grads = net.backward(&cache, 0);
        for (name, t) in grads.tensors() {
            for &v in t.values() {
                assert_eq!(v, 0.0, "nonzero gradient in {name}");
            }
        }
    }

    #[test]
    fn classifier_bias_gradient_scales_delta_by_sequence_length() {
        let cfg = tiny_config(true);
        let net = Network::init(cfg, &mut derive_rng(4, &[8])).unwrap();
        let t_len = 7;
        let frames = random_frames(15, t_len, 4);
        let cache = net.forward_eval(&frames);
        let grads = net.backward(&cache, 1);
        let probs = class_probabilities(&cache.logits);
        let mut delta = probs;
        delta[1] -= 1.0;
        let want: Vec<f64> = delta.iter().map(|d| t_len as f64 * d).collect();
        assert_eq!(grads.classifier.b, want);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = tiny_config(true);
        let net = Network::init(cfg, &mut derive_rng(5, &[8])).unwrap();
        let frames = random_frames(16, 4, 4);
        let a = net.forward_eval(&frames);
        let b = net.forward_eval(&frames);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.last_outputs, b.last_outputs);
    }

    #[test]
    fn draw_masks_covers_only_dropout_layers() {
        let cfg = tiny_config(true);
        let net = Network::init(cfg, &mut derive_rng(6, &[8])).unwrap();
        let masks = net.draw_masks(5, &mut derive_rng(0, &[1]));
        assert!(masks.per_layer[0].is_none());
        assert!(masks.per_layer[1].is_none());
        let bm = masks.per_layer[2].as_ref().unwrap();
        assert_eq!(bm.fwd.len(), 5);
        assert_eq!(bm.bwd.len(), 5);
        // Masks are resampled every timestep: with width 3 and five sites,
        // identical consecutive draws are possible but all five pairs
        // colliding is (2^-15)^5; just require some difference overall.
        let all_same = bm.fwd.windows(2).all(|w| w[0] == w[1]);
        assert!(!all_same, "per-timestep masks should differ somewhere");
    }

    #[test]
    fn penalty_and_subgradients_cover_both_directions() {
        let cfg = tiny_config(false);
        let net = Network::init(cfg, &mut derive_rng(8, &[8])).unwrap();
        let reg = RegConfig {
            lambda1: 0.3,
            lambda2: 0.7,
            target_layers: vec![0],
            groups_per_layer: vec![3],
        };
        // Independent computation from the raw matrices.
        let (bl, groups) = match &net.layers[0] {
            Layer::Blstm(bl) => (bl, partition_groups(3, 3).unwrap()),
            _ => unreachable!(),
        };
        let mats = [
            &bl.fwd.w_xi, &bl.fwd.w_xf, &bl.fwd.w_xc, &bl.fwd.w_xo,
            &bl.bwd.w_xi, &bl.bwd.w_xf, &bl.bwd.w_xc, &bl.bwd.w_xo,
        ];
        let mut want = 0.0;
        for w in mats {
            want += penalty_value(
                &[PenalizedLayer { matrices: vec![w], groups: &groups }],
                0.3,
                0.7,
            );
        }
        assert!((net.penalty(&reg) - want).abs() < 1e-12);

        // Subgradients only touch input matrices of the target layer.
        let mut grads = Gradients::zeros_like(&net);
        net.add_penalty_subgradients(&reg, &mut grads);
        for (name, t) in grads.tensors() {
            let touched = name.starts_with("layer0")
                && ["w_xi", "w_xf", "w_xc", "w_xo"].iter().any(|g| name.ends_with(g));
            let nonzero = t.values().iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, touched, "unexpected subgradient pattern in {name}");
        }
    }

    #[test]
    fn network_config_json_round_trip_and_unknown_key_rejection() {
        let cfg = tiny_config(true);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: NetworkConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);

        let with_unknown = json.replacen('{', "{\"mystery\":1,", 1);
        assert!(serde_json::from_str::<NetworkConfig>(&with_unknown).is_err());

        // Missing required field.
        assert!(serde_json::from_str::<NetworkConfig>("{\"classes\":2}").is_err());
    }

    #[test]
    fn tensor_walk_matches_between_network_and_gradients() {
        let cfg = tiny_config(true);
        let net = Network::init(cfg, &mut derive_rng(9, &[8])).unwrap();
        let grads = Gradients::zeros_like(&net);
        let a = net.tensors();
        let b = grads.tensors();
        assert_eq!(a.len(), b.len());
        for ((an, at), (bn, bt)) in a.iter().zip(b.iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.len(), bt.len());
        }
        assert_eq!(net.parameter_count(), a.iter().map(|(_, t)| t.len()).sum::<usize>());
    }
}
