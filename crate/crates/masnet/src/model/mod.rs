//! Architecture descriptions, the registry of all supported configurations,
//! parameter storage and checkpoint serialization.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default batchnorm epsilon; overridable through `TrainConfig`.
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

/// Layer kind as it appears in an architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    MasBlock,
    ResidualMasBlock,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::MasBlock => "mas_block",
            LayerKind::ResidualMasBlock => "residual_mas_block",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv2d" => Ok(LayerKind::Conv2d),
            "mas_block" => Ok(LayerKind::MasBlock),
            "residual_mas_block" => Ok(LayerKind::ResidualMasBlock),
            _ => Err(Error::invalid_argument(format!("unknown layer kind {s:?}"))),
        }
    }

    pub fn is_mas(&self) -> bool {
        matches!(self, LayerKind::MasBlock | LayerKind::ResidualMasBlock)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            _ => Err(Error::invalid_argument(format!("unknown activation {s:?}"))),
        }
    }
}

/// One row of an architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_t: usize,
    pub kernel_f: usize,
    pub dilation_t: usize,
    pub dilation_f: usize,
    pub has_batchnorm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    /// Number of past input frames one output frame depends on.
    pub fn time_taps(&self) -> usize {
        (self.kernel_t - 1) * self.dilation_t + 1
    }
}

/// Ordered layer list forming a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Canonical textual form (also embedded in checkpoints).
    pub fn to_text(&self) -> String {
        checkpoint::spec_to_text(self)
    }

    /// Parse the canonical textual form.
    pub fn from_text(text: &str) -> Result<Self> {
        checkpoint::spec_from_text(text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid_argument("network has no layers"));
        }
        if self.name.contains('\n') || self.name.is_empty() {
            return Err(Error::invalid_argument("invalid network name"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel_t % 2 == 0 || l.kernel_f % 2 == 0 || l.kernel_t == 0 || l.kernel_f == 0 {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: kernels must be odd and positive"
                )));
            }
            if l.dilation_t == 0 || l.dilation_f == 0 {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: dilations must be positive"
                )));
            }
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: channel counts must be positive"
                )));
            }
            if (l.kernel_f - 1) * l.dilation_f % 2 != 0 {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: frequency pad (kernel_f-1)*dilation_f must be even"
                )));
            }
            if l.kind == LayerKind::ResidualMasBlock && l.in_channels != l.out_channels {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: residual blocks require matching channel counts"
                )));
            }
            if l.kind.is_mas() && (!l.has_batchnorm || l.activation != Activation::Relu) {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: MAS blocks use batchnorm and ReLU internally"
                )));
            }
            if i > 0 && self.layers[i - 1].out_channels != l.in_channels {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: channel chain broken ({} -> {})",
                    self.layers[i - 1].out_channels,
                    l.in_channels
                )));
            }
        }
        if self.layers[0].in_channels != 2 {
            return Err(Error::invalid_argument("first layer must consume 2 channels"));
        }
        let last = self.layers.last().unwrap();
        if last.out_channels != 2 {
            return Err(Error::invalid_argument("last layer must produce 2 channels"));
        }
        if last.activation != Activation::Linear || last.has_batchnorm {
            return Err(Error::invalid_argument(
                "output layer must be linear without batchnorm",
            ));
        }
        Ok(())
    }
}

/// Closed set of published configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchId {
    Llasnet8,
    Llasnet15,
    Masnet9,
    Masnet16,
    Masnet22,
    Masnet28,
    Masnet34,
    MasnetR9,
    MasnetR16,
    MasnetR22,
    MasnetR28,
    MasnetR34,
}

impl ArchId {
    pub const ALL: [ArchId; 12] = [
        ArchId::Llasnet8,
        ArchId::Llasnet15,
        ArchId::Masnet9,
        ArchId::Masnet16,
        ArchId::Masnet22,
        ArchId::Masnet28,
        ArchId::Masnet34,
        ArchId::MasnetR9,
        ArchId::MasnetR16,
        ArchId::MasnetR22,
        ArchId::MasnetR28,
        ArchId::MasnetR34,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::Llasnet8 => "llasnet-8",
            ArchId::Llasnet15 => "llasnet-15",
            ArchId::Masnet9 => "masnet-9",
            ArchId::Masnet16 => "masnet-16",
            ArchId::Masnet22 => "masnet-22",
            ArchId::Masnet28 => "masnet-28",
            ArchId::Masnet34 => "masnet-34",
            ArchId::MasnetR9 => "masnet-r-9",
            ArchId::MasnetR16 => "masnet-r-16",
            ArchId::MasnetR22 => "masnet-r-22",
            ArchId::MasnetR28 => "masnet-r-28",
            ArchId::MasnetR34 => "masnet-r-34",
        }
    }

    /// Declared layer count (the numeral in the name).
    pub fn layer_count(&self) -> usize {
        match self {
            ArchId::Llasnet8 => 8,
            ArchId::Llasnet15 => 15,
            ArchId::Masnet9 | ArchId::MasnetR9 => 9,
            ArchId::Masnet16 | ArchId::MasnetR16 => 16,
            ArchId::Masnet22 | ArchId::MasnetR22 => 22,
            ArchId::Masnet28 | ArchId::MasnetR28 => 28,
            ArchId::Masnet34 | ArchId::MasnetR34 => 34,
        }
    }

    fn residual(&self) -> bool {
        matches!(
            self,
            ArchId::MasnetR9
                | ArchId::MasnetR16
                | ArchId::MasnetR22
                | ArchId::MasnetR28
                | ArchId::MasnetR34
        )
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ArchId::ALL.iter().map(|id| id.as_str()).collect();
                Error::invalid_argument(format!(
                    "unknown model {s:?}; valid models: {}",
                    valid.join(", ")
                ))
            })
    }
}

// (kernel_t, kernel_f, dilation_t, dilation_f) of the hidden LLASnet rows;
// the trailing 1x1 output conv is appended separately.
const LLASNET15_HIDDEN: [(usize, usize, usize, usize); 14] = [
    (1, 7, 1, 1),
    (7, 1, 1, 1),
    (5, 5, 1, 1),
    (5, 5, 2, 1),
    (5, 5, 4, 1),
    (5, 5, 8, 1),
    (5, 5, 16, 1),
    (5, 5, 32, 1),
    (5, 5, 1, 1),
    (5, 5, 2, 2),
    (5, 5, 4, 4),
    (5, 5, 8, 8),
    (5, 5, 16, 16),
    (5, 5, 32, 32),
];

// MAS block schedule of MASnet-16 (between the two 1x1 convs). The last six
// entries are the block group repeated to form the deeper variants.
const MASNET16_BLOCKS: [(usize, usize, usize, usize); 14] = LLASNET15_HIDDEN;
const REPEAT_GROUP: std::ops::Range<usize> = 8..14;

fn conv_layer(
    inc: usize,
    outc: usize,
    k: (usize, usize),
    d: (usize, usize),
    bn: bool,
    act: Activation,
) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv2d,
        in_channels: inc,
        out_channels: outc,
        kernel_t: k.0,
        kernel_f: k.1,
        dilation_t: d.0,
        dilation_f: d.1,
        has_batchnorm: bn,
        activation: act,
    }
}

fn mas_layer(ch: usize, k: (usize, usize), d: (usize, usize), residual: bool) -> LayerSpec {
    LayerSpec {
        kind: if residual {
            LayerKind::ResidualMasBlock
        } else {
            LayerKind::MasBlock
        },
        in_channels: ch,
        out_channels: ch,
        kernel_t: k.0,
        kernel_f: k.1,
        dilation_t: d.0,
        dilation_f: d.1,
        has_batchnorm: true,
        activation: Activation::Relu,
    }
}

/// Exact layer list of a published configuration at full width (32 channels).
pub fn build_spec(id: ArchId) -> NetworkSpec {
    build_spec_scaled(id, 32)
}

/// Published configuration with the hidden channel count scaled for
/// desk-scale experiments. `width == 32` reproduces the published layout.
pub fn build_spec_scaled(id: ArchId, width: usize) -> NetworkSpec {
    assert!(width > 0, "channel width must be positive");
    let name = if width == 32 {
        id.as_str().to_string()
    } else {
        format!("{}-w{width}", id.as_str())
    };
    let w = width;
    let mut layers = Vec::new();
    match id {
        ArchId::Llasnet8 | ArchId::Llasnet15 => {
            let rows: Vec<(usize, usize, usize, usize)> = if id == ArchId::Llasnet15 {
                LLASNET15_HIDDEN.to_vec()
            } else {
                LLASNET15_HIDDEN[..7].to_vec()
            };
            for (i, &(kt, kf, dt, df)) in rows.iter().enumerate() {
                let inc = if i == 0 { 2 } else { w };
                layers.push(conv_layer(inc, w, (kt, kf), (dt, df), true, Activation::Relu));
            }
            layers.push(conv_layer(w, 2, (1, 1), (1, 1), false, Activation::Linear));
        }
        _ => {
            let residual = id.residual();
            let blocks: Vec<(usize, usize, usize, usize)> = match id {
                ArchId::Masnet9 | ArchId::MasnetR9 => MASNET16_BLOCKS[..7].to_vec(),
                ArchId::Masnet16 | ArchId::MasnetR16 => MASNET16_BLOCKS.to_vec(),
                _ => {
                    let extra = match id {
                        ArchId::Masnet22 | ArchId::MasnetR22 => 1,
                        ArchId::Masnet28 | ArchId::MasnetR28 => 2,
                        ArchId::Masnet34 | ArchId::MasnetR34 => 3,
                        _ => unreachable!(),
                    };
                    let mut b = MASNET16_BLOCKS.to_vec();
                    for _ in 0..extra {
                        b.extend_from_slice(&MASNET16_BLOCKS[REPEAT_GROUP]);
                    }
                    b
                }
            };
            layers.push(conv_layer(2, w, (1, 1), (1, 1), false, Activation::Linear));
            for &(kt, kf, dt, df) in &blocks {
                layers.push(mas_layer(w, (kt, kf), (dt, df), residual));
            }
            layers.push(conv_layer(w, 2, (1, 1), (1, 1), false, Activation::Linear));
        }
    }
    NetworkSpec { name, layers }
}

/// Desk-scale MASnet: channel-expansion conv, `blocks` MAS blocks with 5x5
/// kernels cycling through the dilation ladder, and the output conv.
pub fn tiny_masnet(width: usize, blocks: usize, residual: bool) -> NetworkSpec {
    assert!(width > 0 && blocks > 0);
    let ladder = [(1, 1), (2, 2), (4, 4), (8, 8), (16, 16), (32, 32)];
    let mut layers = vec![conv_layer(2, width, (1, 1), (1, 1), false, Activation::Linear)];
    for i in 0..blocks {
        let d = ladder[i % ladder.len()];
        layers.push(mas_layer(width, (5, 5), d, residual));
    }
    layers.push(conv_layer(width, 2, (1, 1), (1, 1), false, Activation::Linear));
    NetworkSpec {
        name: format!("tiny-masnet-{width}x{blocks}"),
        layers,
    }
}

/// Resolve a model name: a registry id, or `tiny-masnet-<width>x<blocks>`.
pub fn spec_for_name(name: &str) -> Result<NetworkSpec> {
    if let Ok(id) = name.parse::<ArchId>() {
        return Ok(build_spec(id));
    }
    if let Some(rest) = name.strip_prefix("tiny-masnet-") {
        if let Some((w, b)) = rest.split_once('x') {
            if let (Ok(w), Ok(b)) = (w.parse::<usize>(), b.parse::<usize>()) {
                if w > 0 && b > 0 {
                    return Ok(tiny_masnet(w, b, false));
                }
            }
        }
        return Err(Error::invalid_argument(format!(
            "bad desk-scale model {name:?}; expected tiny-masnet-<width>x<blocks>"
        )));
    }
    let valid: Vec<&str> = ArchId::ALL.iter().map(|id| id.as_str()).collect();
    Err(Error::invalid_argument(format!(
        "unknown model {name:?}; valid models: {}, tiny-masnet-<width>x<blocks>",
        valid.join(", ")
    )))
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub epsilon: S,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            epsilon: S::from_f64(DEFAULT_BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Materialized parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<S> {
    Conv2d {
        /// `[out][in][kernel_t][kernel_f]`
        weight: Tensor<S>,
        /// Present only on convolutions without batchnorm.
        bias: Option<Vec<S>>,
        bn: Option<BatchNorm<S>>,
    },
    MasBlock {
        /// `[channels][1][kernel_t][kernel_f]`
        depthwise: Tensor<S>,
        bn_dw: BatchNorm<S>,
        /// `[out][in][1][1]`
        pointwise: Tensor<S>,
        bn_pw: BatchNorm<S>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A network: spec plus materialized parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams<S>>,
    pub mode: Mode,
}

impl<S: Scalar> Network<S> {
    /// All-zero weights (batchnorm at identity); used by the checkpoint
    /// loader and by tests that hand-craft parameters.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv2d => LayerParams::Conv2d {
                    weight: Tensor::zeros(&[l.out_channels, l.in_channels, l.kernel_t, l.kernel_f]),
                    bias: if l.has_batchnorm {
                        None
                    } else {
                        Some(vec![S::zero(); l.out_channels])
                    },
                    bn: l.has_batchnorm.then(|| BatchNorm::identity(l.out_channels)),
                },
                LayerKind::MasBlock | LayerKind::ResidualMasBlock => LayerParams::MasBlock {
                    depthwise: Tensor::zeros(&[l.in_channels, 1, l.kernel_t, l.kernel_f]),
                    bn_dw: BatchNorm::identity(l.in_channels),
                    pointwise: Tensor::zeros(&[l.out_channels, l.in_channels, 1, 1]),
                    bn_pw: BatchNorm::identity(l.out_channels),
                },
            })
            .collect();
        Ok(Network {
            spec,
            layers,
            mode: Mode::Eval,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Visit every tensor in checkpoint declaration order.
    pub fn visit_tensors(&self, mut f: impl FnMut(String, Vec<usize>, &[S])) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            match layer {
                LayerParams::Conv2d { weight, bias, bn } => {
                    f(format!("{p}.weight"), weight.shape.clone(), &weight.data);
                    if let Some(b) = bias {
                        f(format!("{p}.bias"), vec![b.len()], b);
                    }
                    if let Some(bn) = bn {
                        visit_bn(&format!("{p}.bn"), bn, &mut f);
                    }
                }
                LayerParams::MasBlock {
                    depthwise,
                    bn_dw,
                    pointwise,
                    bn_pw,
                } => {
                    f(
                        format!("{p}.depthwise.weight"),
                        depthwise.shape.clone(),
                        &depthwise.data,
                    );
                    visit_bn(&format!("{p}.bn1"), bn_dw, &mut f);
                    f(
                        format!("{p}.pointwise.weight"),
                        pointwise.shape.clone(),
                        &pointwise.data,
                    );
                    visit_bn(&format!("{p}.bn2"), bn_pw, &mut f);
                }
            }
        }
    }

    /// Mutable variant of [`visit_tensors`], same order.
    pub fn visit_tensors_mut(
        &mut self,
        mut f: impl FnMut(String, Vec<usize>, &mut [S]) -> Result<()>,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            match layer {
                LayerParams::Conv2d { weight, bias, bn } => {
                    f(format!("{p}.weight"), weight.shape.clone(), &mut weight.data)?;
                    if let Some(b) = bias {
                        let dims = vec![b.len()];
                        f(format!("{p}.bias"), dims, b)?;
                    }
                    if let Some(bn) = bn {
                        visit_bn_mut(&format!("{p}.bn"), bn, &mut f)?;
                    }
                }
                LayerParams::MasBlock {
                    depthwise,
                    bn_dw,
                    pointwise,
                    bn_pw,
                } => {
                    f(
                        format!("{p}.depthwise.weight"),
                        depthwise.shape.clone(),
                        &mut depthwise.data,
                    )?;
                    visit_bn_mut(&format!("{p}.bn1"), bn_dw, &mut f)?;
                    f(
                        format!("{p}.pointwise.weight"),
                        pointwise.shape.clone(),
                        &mut pointwise.data,
                    )?;
                    visit_bn_mut(&format!("{p}.bn2"), bn_pw, &mut f)?;
                }
            }
        }
        Ok(())
    }

    /// Visit trainable tensors (weights, biases, batchnorm affine
    /// parameters) in a fixed order shared with gradient and Adam storage.
    pub fn visit_trainables_mut(&mut self, mut f: impl FnMut(&str, &mut [S])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            match layer {
                LayerParams::Conv2d { weight, bias, bn } => {
                    f(&format!("{p}.weight"), &mut weight.data);
                    if let Some(b) = bias {
                        f(&format!("{p}.bias"), b);
                    }
                    if let Some(bn) = bn {
                        f(&format!("{p}.bn.gamma"), &mut bn.gamma);
                        f(&format!("{p}.bn.beta"), &mut bn.beta);
                    }
                }
                LayerParams::MasBlock {
                    depthwise,
                    bn_dw,
                    pointwise,
                    bn_pw,
                } => {
                    f(&format!("{p}.depthwise.weight"), &mut depthwise.data);
                    f(&format!("{p}.bn1.gamma"), &mut bn_dw.gamma);
                    f(&format!("{p}.bn1.beta"), &mut bn_dw.beta);
                    f(&format!("{p}.pointwise.weight"), &mut pointwise.data);
                    f(&format!("{p}.bn2.gamma"), &mut bn_pw.gamma);
                    f(&format!("{p}.bn2.beta"), &mut bn_pw.beta);
                }
            }
        }
    }
}

fn visit_bn<S: Scalar>(
    prefix: &str,
    bn: &BatchNorm<S>,
    f: &mut impl FnMut(String, Vec<usize>, &[S]),
) {
    let c = bn.channels();
    f(format!("{prefix}.gamma"), vec![c], &bn.gamma);
    f(format!("{prefix}.beta"), vec![c], &bn.beta);
    f(format!("{prefix}.running_mean"), vec![c], &bn.running_mean);
    f(format!("{prefix}.running_var"), vec![c], &bn.running_var);
    f(
        format!("{prefix}.epsilon"),
        vec![1],
        std::slice::from_ref(&bn.epsilon),
    );
}

fn visit_bn_mut<S: Scalar>(
    prefix: &str,
    bn: &mut BatchNorm<S>,
    f: &mut impl FnMut(String, Vec<usize>, &mut [S]) -> Result<()>,
) -> Result<()> {
    let c = bn.channels();
    f(format!("{prefix}.gamma"), vec![c], &mut bn.gamma)?;
    f(format!("{prefix}.beta"), vec![c], &mut bn.beta)?;
    f(
        format!("{prefix}.running_mean"),
        vec![c],
        &mut bn.running_mean,
    )?;
    f(format!("{prefix}.running_var"), vec![c], &mut bn.running_var)?;
    f(
        format!("{prefix}.epsilon"),
        vec![1],
        std::slice::from_mut(&mut bn.epsilon),
    )
}

/// He-initialized network, deterministic in `seed`. Weights are drawn in
/// f64 and cast, so f32 and f64 instantiations of the same seed agree.
pub fn init_network<S: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<S>> {
    spec.validate()?;
    let mut net = Network::<S>::zeros(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (layer, l) in net.layers.iter_mut().zip(spec.layers.iter()) {
        match layer {
            LayerParams::Conv2d { weight, .. } => {
                let fan_in = l.in_channels * l.kernel_t * l.kernel_f;
                fill_he(&mut weight.data, fan_in, &mut rng);
            }
            LayerParams::MasBlock {
                depthwise,
                pointwise,
                ..
            } => {
                fill_he(&mut depthwise.data, l.kernel_t * l.kernel_f, &mut rng);
                fill_he(&mut pointwise.data, l.in_channels, &mut rng);
            }
        }
    }
    Ok(net)
}

fn fill_he<S: Scalar>(data: &mut [S], fan_in: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    for v in data {
        *v = S::from_f64(dist.sample(rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_specs_validate_and_count_layers() {
        for id in ArchId::ALL {
            let spec = build_spec(id);
            spec.validate().unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(spec.layers.len(), id.layer_count(), "{id}");
        }
    }

    #[test]
    fn llasnet15_row_eight_is_dilation_32x1() {
        let spec = build_spec(ArchId::Llasnet15);
        let l = &spec.layers[7];
        assert_eq!(l.kind, LayerKind::Conv2d);
        assert_eq!((l.in_channels, l.out_channels), (32, 32));
        assert_eq!((l.kernel_t, l.kernel_f), (5, 5));
        assert_eq!((l.dilation_t, l.dilation_f), (32, 1));
    }

    #[test]
    fn llasnet8_is_the_marked_subset() {
        let l8 = build_spec(ArchId::Llasnet8);
        let l15 = build_spec(ArchId::Llasnet15);
        assert_eq!(&l8.layers[..7], &l15.layers[..7]);
        assert_eq!(l8.layers[7], *l15.layers.last().unwrap());
    }

    #[test]
    fn masnet16_first_layer_is_expansion_conv() {
        let spec = build_spec(ArchId::Masnet16);
        let l = &spec.layers[0];
        assert_eq!(l.kind, LayerKind::Conv2d);
        assert_eq!((l.in_channels, l.out_channels), (2, 32));
        assert_eq!((l.kernel_t, l.kernel_f), (1, 1));
        assert!(!l.has_batchnorm);
    }

    #[test]
    fn masnet22_appends_the_block_group_once() {
        let m16 = build_spec(ArchId::Masnet16);
        let m22 = build_spec(ArchId::Masnet22);
        assert_eq!(m22.layers.len(), 22);
        assert_eq!(&m22.layers[..15], &m16.layers[..15]);
        assert_eq!(&m22.layers[15..21], &m16.layers[9..15]);
        assert_eq!(m22.layers[21], *m16.layers.last().unwrap());
    }

    #[test]
    fn residual_variants_differ_only_in_kind() {
        for (seq, res) in [
            (ArchId::Masnet9, ArchId::MasnetR9),
            (ArchId::Masnet16, ArchId::MasnetR16),
            (ArchId::Masnet22, ArchId::MasnetR22),
            (ArchId::Masnet28, ArchId::MasnetR28),
            (ArchId::Masnet34, ArchId::MasnetR34),
        ] {
            let a = build_spec(seq);
            let b = build_spec(res);
            assert_eq!(a.layers.len(), b.layers.len());
            for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
                if la.kind == LayerKind::MasBlock {
                    assert_eq!(lb.kind, LayerKind::ResidualMasBlock);
                } else {
                    assert_eq!(la.kind, lb.kind);
                }
                let mut la2 = *la;
                let mut lb2 = *lb;
                la2.kind = LayerKind::Conv2d;
                lb2.kind = LayerKind::Conv2d;
                assert_eq!(la2, lb2, "shape fields must match");
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = build_spec_scaled(ArchId::Masnet9, 8);
        let a = init_network::<f32>(&spec, 42).unwrap();
        let b = init_network::<f32>(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = init_network::<f32>(&spec, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batchnorm_gamma_initialized_to_one() {
        let spec = build_spec_scaled(ArchId::Masnet9, 8);
        let net = init_network::<f32>(&spec, 1).unwrap();
        for layer in &net.layers {
            if let LayerParams::MasBlock { bn_dw, bn_pw, .. } = layer {
                assert!(bn_dw.gamma.iter().all(|&g| g == 1.0));
                assert!(bn_pw.gamma.iter().all(|&g| g == 1.0));
            }
        }
    }

    #[test]
    fn he_init_stddev_matches_fan_in() {
        let spec = build_spec(ArchId::Llasnet15);
        let net = init_network::<f32>(&spec, 7).unwrap();
        // Layer 3 is a 32->32 5x5 conv: fan_in = 800.
        if let LayerParams::Conv2d { weight, .. } = &net.layers[2] {
            assert_eq!(weight.shape, vec![32, 32, 5, 5]);
            let n = weight.data.len() as f64;
            let mean: f64 = weight.data.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var: f64 = weight
                .data
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            let expected = (2.0 / 800.0_f64).sqrt();
            let ratio = var.sqrt() / expected;
            assert!((0.9..1.1).contains(&ratio), "stddev ratio {ratio}");
        } else {
            panic!("expected conv layer");
        }
    }

    #[test]
    fn f32_and_f64_init_agree() {
        let spec = tiny_masnet(4, 2, false);
        let a = init_network::<f32>(&spec, 5).unwrap();
        let b = init_network::<f64>(&spec, 5).unwrap();
        if let (LayerParams::Conv2d { weight: wa, .. }, LayerParams::Conv2d { weight: wb, .. }) =
            (&a.layers[0], &b.layers[0])
        {
            for (x, y) in wa.data.iter().zip(wb.data.iter()) {
                assert_eq!(*x, *y as f32);
            }
        }
    }

    #[test]
    fn spec_for_name_parses_registry_and_tiny() {
        assert_eq!(spec_for_name("masnet-16").unwrap().layers.len(), 16);
        assert_eq!(spec_for_name("tiny-masnet-8x6").unwrap().layers.len(), 8);
        assert!(spec_for_name("masnet-17").is_err());
        assert!(spec_for_name("tiny-masnet-0x2").is_err());
    }

    #[test]
    fn validation_rejects_broken_chains_and_output_rules() {
        let mut spec = build_spec(ArchId::Masnet9);
        spec.layers[3].in_channels = 16;
        assert!(spec.validate().is_err());

        let mut spec = build_spec(ArchId::Masnet9);
        spec.layers.last_mut().unwrap().activation = Activation::Relu;
        assert!(spec.validate().is_err());

        let mut spec = build_spec(ArchId::Masnet9);
        spec.layers[2].kernel_t = 4;
        assert!(spec.validate().is_err());
    }
}
