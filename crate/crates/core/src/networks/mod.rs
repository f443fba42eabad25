//! Generator and discriminator definitions.
//!
//! The generator is the ResNet translator `c7s1-k, d2k, d4k, R4k x n, u2k, uk,
//! c7s1-out`; the discriminators are PatchGAN classifiers `Ck-...` followed by a
//! one-channel score convolution. Conditional discriminators take
//! `[condition; image]` concatenated along channels.

mod graph;
pub(crate) mod kernels;

use std::fmt;

use ndarray::{concatenate, s, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub(crate) use graph::Tape;
use graph::Op;
pub use kernels::Tensor;

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used to initialize convolution kernels.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn flip(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange { lo: -1.0, hi: 1.0 }
    }
}

impl ValueRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// A batch of images from one domain, `(batch, channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    data: Tensor,
    domain: Domain,
    range: ValueRange,
}

impl ImageBatch {
    /// Wraps `data` after checking the value range and that height and width
    /// are multiples of 4.
    pub fn new(data: Tensor, domain: Domain) -> Result<Self> {
        Self::with_range(data, domain, ValueRange::default())
    }

    pub fn with_range(data: Tensor, domain: Domain, range: ValueRange) -> Result<Self> {
        let (_, _, h, w) = data.dim();
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Validation(format!(
                "image size {h}x{w} is not a positive multiple of 4"
            )));
        }
        if let Some(v) = data.iter().find(|v| !range.contains(**v)) {
            return Err(Error::Validation(format!(
                "pixel value {v} outside [{}, {}]",
                range.lo, range.hi
            )));
        }
        Ok(ImageBatch { data, domain, range })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
    }
}

/// Discriminator scores, `(batch, 1, h', w')`. One score per receptive-field patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMap {
    pub data: Tensor,
}

impl PatchMap {
    pub fn new(data: Tensor) -> Self {
        PatchMap { data }
    }

    /// A map filled with `value`.
    pub fn constant(shape: (usize, usize, usize, usize), value: f64) -> Self {
        PatchMap {
            data: Tensor::from_elem(shape, value),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Instance,
    /// No normalization. Keeps every score strictly local to its patch.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingKind {
    #[default]
    Reflection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub output_channels: usize,
    pub base_filters: usize,
    pub num_resblocks: usize,
    pub norm: NormKind,
    pub padding: PaddingKind,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            input_channels: 3,
            output_channels: 3,
            base_filters: 64,
            num_resblocks: 9,
            norm: NormKind::Instance,
            padding: PaddingKind::Reflection,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be at least 1"));
        }
        if self.output_channels == 0 {
            return Err(Error::config("output_channels", "must be at least 1"));
        }
        if self.base_filters == 0 {
            return Err(Error::config("base_filters", "must be at least 1"));
        }
        if self.num_resblocks == 0 {
            return Err(Error::config("num_resblocks", "must be at least 1"));
        }
        if self.norm != NormKind::Instance {
            return Err(Error::config("norm", "generators use instance normalization"));
        }
        Ok(())
    }

    /// Layer string in the `c7s1-64, d128, ...` notation.
    pub fn describe(&self) -> Vec<String> {
        let f = self.base_filters;
        let mut out = vec![format!("c7s1-{f}"), format!("d{}", 2 * f), format!("d{}", 4 * f)];
        out.extend((0..self.num_resblocks).map(|_| format!("R{}", 4 * f)));
        out.extend([format!("u{}", 2 * f), format!("u{f}"), format!("c7s1-{}", self.output_channels)]);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    /// Channels of the conditioning image; 0 for unconditional discriminators.
    pub condition_channels: usize,
    pub layer_filters: Vec<usize>,
    /// Stride of each `Ck` layer; same length as `layer_filters`.
    pub layer_strides: Vec<usize>,
    pub leaky_slope: f64,
    pub norm: NormKind,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_channels: 3,
            condition_channels: 0,
            layer_filters: vec![64, 128, 256, 512],
            layer_strides: vec![2, 2, 2, 1],
            leaky_slope: 0.2,
            norm: NormKind::Instance,
        }
    }
}

pub(crate) const DISC_KERNEL: usize = 4;
const DISC_PAD: usize = 1;

impl DiscriminatorConfig {
    pub fn conditional(mut self, condition_channels: usize) -> Self {
        self.condition_channels = condition_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be at least 1"));
        }
        if self.layer_filters.is_empty() {
            return Err(Error::config("layer_filters", "needs at least one layer"));
        }
        if self.layer_filters.contains(&0) {
            return Err(Error::config("layer_filters", "filter counts must be at least 1"));
        }
        if self.layer_strides.len() != self.layer_filters.len() {
            return Err(Error::config(
                "layer_strides",
                format!(
                    "has {} entries but layer_filters has {}",
                    self.layer_strides.len(),
                    self.layer_filters.len()
                ),
            ));
        }
        if self.layer_strides.contains(&0) {
            return Err(Error::config("layer_strides", "strides must be at least 1"));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config("leaky_slope", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn total_input_channels(&self) -> usize {
        self.input_channels + self.condition_channels
    }

    /// Layer string in the `C64-C128-C256-C512` notation.
    pub fn describe(&self) -> String {
        self.layer_filters
            .iter()
            .map(|f| format!("C{f}"))
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Score-map size for an `h x w` input, or `None` if the input is too small.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let step = |n: usize, s: usize| (n + 2 * DISC_PAD).checked_sub(DISC_KERNEL).map(|v| v / s + 1);
        let mut size = (h, w);
        for &s in self.layer_strides.iter().chain(std::iter::once(&1)) {
            size = (step(size.0, s)?, step(size.1, s)?);
            if size.0 == 0 || size.1 == 0 {
                return None;
            }
        }
        Some(size)
    }
}

/// Side length of the input patch seen by one output score.
pub fn receptive_field(config: &DiscriminatorConfig) -> usize {
    let layers = config.layer_strides.iter().copied().chain(std::iter::once(1));
    let (mut field, mut jump) = (1, 1);
    for stride in layers {
        field += (DISC_KERNEL - 1) * jump;
        jump *= stride;
    }
    field
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Generator(c) => c.validate(),
            Architecture::Discriminator(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Parameter shapes plus the program that consumes them.
struct Layout {
    ops: Vec<Op>,
    shapes: Vec<(String, Vec<usize>)>,
}

struct LayoutBuilder {
    shapes: Vec<(String, Vec<usize>)>,
}

impl LayoutBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.shapes.push((name, shape));
        self.shapes.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Op {
        let weight = self.param(format!("{name}.weight"), vec![cout, cin, kernel, kernel]);
        let bias = self.param(format!("{name}.bias"), vec![cout]);
        Op::Conv {
            weight,
            bias,
            kernel,
            stride,
            pad,
            out_channels: cout,
        }
    }

    fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize) -> Op {
        let weight = self.param(format!("{name}.weight"), vec![cin, cout, 3, 3]);
        let bias = self.param(format!("{name}.bias"), vec![cout]);
        Op::ConvTranspose {
            weight,
            bias,
            kernel: 3,
            stride: 2,
            pad: 1,
            out_channels: cout,
        }
    }
}

fn generator_layout(c: &GeneratorConfig) -> Layout {
    let mut b = LayoutBuilder { shapes: Vec::new() };
    let names = c.describe();
    let f = c.base_filters;
    let mut ops = vec![
        Op::ReflectPad(3),
        b.conv(&format!("0.{}", names[0]), c.input_channels, f, 7, 1, 0),
        Op::InstanceNorm,
        Op::Relu,
    ];
    for (i, (cin, cout)) in [(f, 2 * f), (2 * f, 4 * f)].into_iter().enumerate() {
        ops.extend([
            Op::ReflectPad(1),
            b.conv(&format!("{}.{}", i + 1, names[i + 1]), cin, cout, 3, 2, 0),
            Op::InstanceNorm,
            Op::Relu,
        ]);
    }
    let width = 4 * f;
    for r in 0..c.num_resblocks {
        let name = format!("{}.{}", 3 + r, names[3 + r]);
        let body = vec![
            Op::ReflectPad(1),
            b.conv(&format!("{name}.conv1"), width, width, 3, 1, 0),
            Op::InstanceNorm,
            Op::Relu,
            Op::ReflectPad(1),
            b.conv(&format!("{name}.conv2"), width, width, 3, 1, 0),
            Op::InstanceNorm,
        ];
        ops.push(Op::Residual(body));
    }
    let up = 3 + c.num_resblocks;
    for (i, (cin, cout)) in [(4 * f, 2 * f), (2 * f, f)].into_iter().enumerate() {
        ops.extend([
            b.conv_transpose(&format!("{}.{}", up + i, names[up + i]), cin, cout),
            Op::InstanceNorm,
            Op::Relu,
        ]);
    }
    ops.extend([
        Op::ReflectPad(3),
        b.conv(&format!("{}.{}", up + 2, names[up + 2]), f, c.output_channels, 7, 1, 0),
        Op::Tanh,
    ]);
    Layout { ops, shapes: b.shapes }
}

fn discriminator_layout(c: &DiscriminatorConfig) -> Layout {
    let mut b = LayoutBuilder { shapes: Vec::new() };
    let mut ops = Vec::new();
    let mut cin = c.total_input_channels();
    for (i, (&f, &stride)) in c.layer_filters.iter().zip(&c.layer_strides).enumerate() {
        ops.push(b.conv(&format!("{i}.C{f}"), cin, f, DISC_KERNEL, stride, DISC_PAD));
        if i > 0 && c.norm == NormKind::Instance {
            ops.push(Op::InstanceNorm);
        }
        ops.push(Op::LeakyRelu(c.leaky_slope));
        cin = f;
    }
    ops.push(b.conv(
        &format!("{}.score", c.layer_filters.len()),
        cin,
        1,
        DISC_KERNEL,
        1,
        DISC_PAD,
    ));
    Layout { ops, shapes: b.shapes }
}

fn layout(arch: &Architecture) -> Layout {
    match arch {
        Architecture::Generator(c) => generator_layout(c),
        Architecture::Discriminator(c) => discriminator_layout(c),
    }
}

/// Learnable weights of one network plus the configuration that determines
/// their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters {
    architecture: Architecture,
    weights: Vec<NamedTensor>,
}

impl NetworkParameters {
    fn initialize(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let shapes = layout(&architecture).shapes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let weights = shapes
            .into_iter()
            .map(|(name, shape)| {
                let value = if shape.len() == 4 {
                    ArrayD::from_shape_simple_fn(IxDyn(&shape), || normal.sample(&mut rng))
                } else {
                    ArrayD::zeros(IxDyn(&shape))
                };
                NamedTensor { name, value }
            })
            .collect();
        Ok(NetworkParameters { architecture, weights })
    }

    /// Rebuilds a parameter set from stored tensors, checking every name and
    /// shape against the layout implied by `architecture`.
    pub fn from_parts(architecture: Architecture, weights: Vec<NamedTensor>) -> Result<Self> {
        architecture.validate()?;
        let shapes = layout(&architecture).shapes;
        if shapes.len() != weights.len() {
            return Err(Error::Validation(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                weights.len()
            )));
        }
        for ((name, shape), w) in shapes.iter().zip(&weights) {
            if *name != w.name || shape.as_slice() != w.value.shape() {
                return Err(Error::Validation(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    w.name,
                    w.value.shape(),
                    name,
                    shape
                )));
            }
        }
        let weights = weights
            .into_iter()
            .map(|w| NamedTensor {
                name: w.name,
                value: w.value.as_standard_layout().into_owned(),
            })
            .collect();
        Ok(NetworkParameters { architecture, weights })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn weights(&self) -> &[NamedTensor] {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.value.len()).sum()
    }

    pub fn generator_config(&self) -> Option<&GeneratorConfig> {
        match &self.architecture {
            Architecture::Generator(c) => Some(c),
            Architecture::Discriminator(_) => None,
        }
    }

    pub fn discriminator_config(&self) -> Option<&DiscriminatorConfig> {
        match &self.architecture {
            Architecture::Discriminator(c) => Some(c),
            Architecture::Generator(_) => None,
        }
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<f64>> {
        self.weights.iter_mut().map(|w| &mut w.value)
    }

    /// Zero-filled tensors matching every weight.
    pub fn zeros_like(&self) -> Gradients {
        Gradients(self.weights.iter().map(|w| ArrayD::zeros(w.value.raw_dim())).collect())
    }

    fn ops(&self) -> Vec<Op> {
        layout(&self.architecture).ops
    }

}

/// Gradients aligned index-for-index with [`NetworkParameters::weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<ArrayD<f64>>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.iter().copied()).collect()
    }
}

impl fmt::Display for NetworkParameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.architecture {
            Architecture::Generator(c) => write!(f, "generator[{}]", c.describe().join(", "))?,
            Architecture::Discriminator(c) => write!(f, "discriminator[{}]", c.describe())?,
        }
        write!(f, " ({} parameters)", self.param_count())
    }
}

pub fn build_generator(config: &GeneratorConfig, seed: u64) -> Result<NetworkParameters> {
    NetworkParameters::initialize(Architecture::Generator(config.clone()), seed)
}

pub fn build_discriminator(config: &DiscriminatorConfig, seed: u64) -> Result<NetworkParameters> {
    NetworkParameters::initialize(Architecture::Discriminator(config.clone()), seed)
}

/// A forward pass whose activations are kept for backpropagation.
pub struct Recorded {
    pub output: Tensor,
    pub(crate) tape: Tape,
}

/// Generator execution on raw tensors. Checks channels and spatial size.
pub(crate) fn generator_check(params: &NetworkParameters, x: &Tensor) -> Result<()> {
    let c = params
        .generator_config()
        .ok_or_else(|| Error::config("network", "expected a generator"))?;
    let (n, ch, h, w) = x.dim();
    if ch != c.input_channels || h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
        return Err(Error::shape(
            "generator input (channels, height and width multiples of 4, at least 8)",
            &[n, c.input_channels, h.max(8).next_multiple_of(4), w.max(8).next_multiple_of(4)],
            &[n, ch, h, w],
        ));
    }
    Ok(())
}

fn discriminator_check(params: &NetworkParameters, x: &Tensor) -> Result<()> {
    let c = params
        .discriminator_config()
        .ok_or_else(|| Error::config("network", "expected a discriminator"))?;
    let (n, ch, h, w) = x.dim();
    if ch != c.total_input_channels() {
        return Err(Error::shape(
            "discriminator input",
            &[n, c.total_input_channels(), h, w],
            &[n, ch, h, w],
        ));
    }
    if c.output_size(h, w).is_none() {
        return Err(Error::Validation(format!(
            "{h}x{w} input is too small for discriminator {}",
            c.describe()
        )));
    }
    Ok(())
}

impl NetworkParameters {
    /// Unchecked forward pass on a raw tensor.
    pub(crate) fn run(&self, x: Tensor) -> Tensor {
        graph::forward(&self.ops(), &self.weights, x, None)
    }

    pub(crate) fn record(&self, x: Tensor) -> Recorded {
        let mut tape = Tape::new();
        let output = graph::forward(&self.ops(), &self.weights, x, Some(&mut tape));
        Recorded { output, tape }
    }

    /// Backpropagates `dy` through a recorded pass. Returns the input gradient
    /// and accumulates parameter gradients into `grads` when given.
    pub(crate) fn backprop(&self, recorded: Recorded, dy: Tensor, grads: Option<&mut Gradients>) -> Tensor {
        graph::backward(&self.ops(), &self.weights, recorded.tape, dy, grads.map(|g| g.0.as_mut_slice()))
    }

    /// Checked forward pass for generators or discriminators on raw tensors.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        match &self.architecture {
            Architecture::Generator(_) => generator_check(self, x)?,
            Architecture::Discriminator(_) => discriminator_check(self, x)?,
        }
        Ok(self.run(x.as_standard_layout().into_owned()))
    }

    /// Forward pass plus backpropagation of `dy`, returning `(output, input
    /// gradient, parameter gradients)`. Used by gradient checks.
    pub fn forward_backward(&self, x: &Tensor, dy_fn: impl FnOnce(&Tensor) -> Tensor) -> Result<(Tensor, Tensor, Gradients)> {
        self.forward_tensor(x)?;
        let rec = self.record(x.as_standard_layout().into_owned());
        let output = rec.output.clone();
        let dy = dy_fn(&output);
        if dy.dim() != output.dim() {
            let (a, b) = (output.shape().to_vec(), dy.shape().to_vec());
            return Err(Error::shape("output gradient", &a, &b));
        }
        let mut grads = self.zeros_like();
        let dx = self.backprop(rec, dy, Some(&mut grads));
        Ok((output, dx, grads))
    }
}

pub fn generator_forward(params: &NetworkParameters, input: &ImageBatch) -> Result<ImageBatch> {
    let out = params.forward_tensor(input.data())?;
    Ok(ImageBatch {
        data: out,
        domain: input.domain().flip(),
        range: ValueRange::default(),
    })
}

/// Concatenates `[condition; image]` along channels.
pub(crate) fn concat_condition(condition: &Tensor, image: &Tensor) -> Result<Tensor> {
    let (cn, _, ch, cw) = condition.dim();
    let (n, _, h, w) = image.dim();
    if (cn, ch, cw) != (n, h, w) {
        return Err(Error::shape(
            "condition batch/spatial size",
            &[n, h, w],
            &[cn, ch, cw],
        ));
    }
    Ok(concatenate(Axis(1), &[condition.view(), image.view()])
        .expect("matching shapes")
        .as_standard_layout()
        .into_owned())
}

/// Splits a gradient of a concatenated `[condition; image]` input.
pub(crate) fn split_condition(grad: &Tensor, condition_channels: usize) -> (Tensor, Tensor) {
    (
        grad.slice(s![.., ..condition_channels, .., ..]).to_owned(),
        grad.slice(s![.., condition_channels.., .., ..]).to_owned(),
    )
}

pub(crate) fn discriminator_input(
    params: &NetworkParameters,
    image: &Tensor,
    condition: Option<&Tensor>,
) -> Result<Tensor> {
    let c = params
        .discriminator_config()
        .ok_or_else(|| Error::config("network", "expected a discriminator"))?;
    match (c.condition_channels, condition) {
        (0, None) => Ok(image.as_standard_layout().into_owned()),
        (0, Some(_)) => Err(Error::Arity {
            context: "discriminator_forward",
            reason: "unconditional discriminator was given a condition".into(),
        }),
        (_, None) => Err(Error::Arity {
            context: "discriminator_forward",
            reason: "conditional discriminator requires a condition".into(),
        }),
        (cc, Some(cond)) => {
            if cond.dim().1 != cc {
                let (n, _, h, w) = cond.dim();
                return Err(Error::shape("condition channels", &[n, cc, h, w], &[n, cond.dim().1, h, w]));
            }
            concat_condition(cond, image)
        }
    }
}

pub fn discriminator_forward(
    params: &NetworkParameters,
    image: &ImageBatch,
    condition: Option<&ImageBatch>,
) -> Result<PatchMap> {
    let input = discriminator_input(params, image.data(), condition.map(|c| c.data()))?;
    Ok(PatchMap::new(params.forward_tensor(&input)?))
}
