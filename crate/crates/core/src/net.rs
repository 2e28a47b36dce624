//! Two-convolution, two-hidden-layer classifier with a split softmax head,
//! trained by mini-batch gradient descent with hand-written backpropagation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::{TargetVector, MAX_LOADS};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

/// Output layer variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Head {
    /// `K` class logits and 3 load-count logits, each group normalised by
    /// its own softmax.
    #[default]
    SplitSoftmax,
    /// `K` logits under one softmax, single-label targets.
    Plain,
}

/// Normalisation between the flattened convolution output and the first
/// fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    /// Flattened vector passed through unchanged.
    #[default]
    Identity,
    /// Softmax across the whole flattened vector.
    Softmax,
    /// Softmax across the flattened vector multiplied by its length, so the
    /// entries average one.
    ScaledSoftmax,
    /// Zero mean, unit variance across the flattened vector.
    Standardize,
}

/// Update rule used by `train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Optimizer {
    /// Fixed-rate gradient descent.
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetConfig {
    pub input_channels: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc1_width: usize,
    pub fc2_width: usize,
    pub classes: usize,
    pub count_outputs: usize,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_seed: u64,
    pub head: Head,
    pub normalization: Normalization,
    pub optimizer: Optimizer,
    /// Fit a per-cell zero-mean, unit-variance input map on the training
    /// set before the first epoch.
    pub standardize_inputs: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_channels: 2,
            input_rows: 14,
            input_cols: 20,
            conv1: ConvSpec {
                out_channels: 8,
                kernel_h: 3,
                kernel_w: 3,
            },
            conv2: ConvSpec {
                out_channels: 16,
                kernel_h: 3,
                kernel_w: 3,
            },
            fc1_width: 128,
            fc2_width: 64,
            classes: 11,
            count_outputs: MAX_LOADS,
            leaky_slope: 0.01,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 32,
            init_seed: 0,
            head: Head::SplitSoftmax,
            normalization: Normalization::default(),
            optimizer: Optimizer::default(),
            standardize_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetError {
    InvalidConfig(&'static str),
    ShapeMismatch { expected: usize, found: usize },
    EmptyTrainingSet,
    /// Loss or a parameter stopped being finite during the given epoch.
    DivergedToNaN { epoch: usize },
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::InvalidConfig(why) => write!(f, "invalid network config: {why}"),
            NetError::ShapeMismatch { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            NetError::EmptyTrainingSet => f.write_str("training set is empty"),
            NetError::DivergedToNaN { epoch } => write!(
                f,
                "training diverged to a non-finite value in epoch {epoch}; lower the learning rate"
            ),
        }
    }
}

impl core::error::Error for NetError {}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |why| Err(NetError::InvalidConfig(why));
        if self.input_channels == 0 || self.input_rows == 0 || self.input_cols == 0 {
            return bad("input dimensions must be positive");
        }
        for c in [self.conv1, self.conv2] {
            if c.out_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                return bad("convolution channels and kernel sizes must be positive");
            }
        }
        let (h1, w1) = (self.input_rows, self.input_cols);
        if self.conv1.kernel_h > h1 || self.conv1.kernel_w > w1 {
            return bad("conv1 kernel larger than the input");
        }
        let (h2, w2) = (h1 - self.conv1.kernel_h + 1, w1 - self.conv1.kernel_w + 1);
        if self.conv2.kernel_h > h2 || self.conv2.kernel_w > w2 {
            return bad("conv2 kernel larger than its input");
        }
        if self.fc1_width == 0 || self.fc2_width == 0 {
            return bad("hidden layer widths must be positive");
        }
        if self.classes < 2 {
            return bad("at least two classes are required");
        }
        if self.count_outputs != MAX_LOADS {
            return bad("count_outputs must be 3");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_rows * self.input_cols
    }

    pub fn output_len(&self) -> usize {
        match self.head {
            Head::SplitSoftmax => self.classes + self.count_outputs,
            Head::Plain => self.classes,
        }
    }

    /// Length of the flattened conv2 output.
    fn flat_len(&self) -> usize {
        let h2 = self.input_rows + 2 - self.conv1.kernel_h - self.conv2.kernel_h;
        let w2 = self.input_cols + 2 - self.conv1.kernel_w - self.conv2.kernel_w;
        self.conv2.out_channels * h2 * w2
    }

    /// Parameter tensors in storage order.
    fn layout(&self) -> Layout {
        let flat = self.flat_len();
        let c0 = self.input_channels;
        let c1 = self.conv1.out_channels;
        let c2 = self.conv2.out_channels;
        let sizes = [
            c1 * c0 * self.conv1.kernel_h * self.conv1.kernel_w,
            c1,
            c2 * c1 * self.conv2.kernel_h * self.conv2.kernel_w,
            c2,
            self.fc1_width * flat,
            self.fc1_width,
            self.fc2_width * self.fc1_width,
            self.fc2_width,
            self.output_len() * self.fc2_width,
            self.output_len(),
        ];
        let mut offsets = [0; TENSORS + 1];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Layout { offsets }
    }

    /// Gradient steps taken by `train` on `n` examples.
    pub fn steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

const TENSORS: usize = 10;

/// Index of each parameter tensor in the flat storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    Fc1Weight,
    Fc1Bias,
    Fc2Weight,
    Fc2Bias,
    OutWeight,
    OutBias,
}

impl Tensor {
    pub const ALL: [Tensor; TENSORS] = [
        Tensor::Conv1Weight,
        Tensor::Conv1Bias,
        Tensor::Conv2Weight,
        Tensor::Conv2Bias,
        Tensor::Fc1Weight,
        Tensor::Fc1Bias,
        Tensor::Fc2Weight,
        Tensor::Fc2Bias,
        Tensor::OutWeight,
        Tensor::OutBias,
    ];
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    offsets: [usize; TENSORS + 1],
}

impl Layout {
    fn range(&self, t: Tensor) -> core::ops::Range<usize> {
        self.offsets[t as usize]..self.offsets[t as usize + 1]
    }

    fn total(&self) -> usize {
        self.offsets[TENSORS]
    }
}

/// Fixed affine map `x' = (x - offset) * gain` applied cellwise to inputs.
/// It is fitted from data, never updated by gradient steps.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub gain: Vec<f64>,
}

impl InputScaling {
    /// Per-cell mean and inverse standard deviation. Cells that do not vary
    /// get gain zero.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a [f64]>, len: usize) -> Self {
        let mut sum = vec![0.0; len];
        let mut sq = vec![0.0; len];
        let mut n = 0usize;
        for x in inputs {
            for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(x) {
                *s += v;
                *q += v * v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mut offset = Vec::with_capacity(len);
        let mut gain = Vec::with_capacity(len);
        for (s, q) in sum.into_iter().zip(sq) {
            let mean = s / n;
            let var = libm::fmax(q / n - mean * mean, 0.0);
            let sd = libm::sqrt(var);
            offset.push(mean);
            gain.push(if sd > 1e-9 * libm::fmax(mean.abs(), 1e-300) {
                1.0 / sd
            } else {
                0.0
            });
        }
        InputScaling { offset, gain }
    }

    pub fn identity(len: usize) -> Self {
        InputScaling {
            offset: vec![0.0; len],
            gain: vec![1.0; len],
        }
    }
}

/// All weights and biases in one flat array, with the configuration that
/// fixes their shapes and the optional input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub values: Vec<f64>,
    pub input_scaling: Option<InputScaling>,
}

impl NetParams {
    /// Wraps stored values after checking their count against `config`.
    pub fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self, NetError> {
        config.validate()?;
        let expected = config.layout().total();
        if values.len() != expected {
            return Err(NetError::ShapeMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(NetParams {
            config,
            values,
            input_scaling: None,
        })
    }

    /// Attaches an input scaling after checking its length.
    pub fn with_input_scaling(mut self, s: Option<InputScaling>) -> Result<Self, NetError> {
        if let Some(s) = &s {
            let expected = self.config.input_len();
            for found in [s.offset.len(), s.gain.len()] {
                if found != expected {
                    return Err(NetError::ShapeMismatch { expected, found });
                }
            }
            if !s.offset.iter().chain(&s.gain).all(|v| v.is_finite()) {
                return Err(NetError::InvalidConfig("input scaling must be finite"));
            }
        }
        self.input_scaling = s;
        Ok(self)
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.values[self.config.layout().range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.config.layout().range(t);
        &mut self.values[r]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Uniform fan-in initialisation, `U(-b, b)` with `b = sqrt(6 / fan_in)`;
/// biases start at zero.
pub fn init(cfg: &NetConfig) -> Result<NetParams, NetError> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut values = vec![0.0; layout.total()];
    let mut rng = seed::rng(seed::derive(cfg.init_seed, "init", 0));
    let fan_in = [
        (Tensor::Conv1Weight, cfg.input_channels * cfg.conv1.kernel_h * cfg.conv1.kernel_w),
        (
            Tensor::Conv2Weight,
            cfg.conv1.out_channels * cfg.conv2.kernel_h * cfg.conv2.kernel_w,
        ),
        (Tensor::Fc1Weight, cfg.flat_len()),
        (Tensor::Fc2Weight, cfg.fc1_width),
        (Tensor::OutWeight, cfg.fc2_width),
    ];
    for (t, n) in fan_in {
        let b = libm::sqrt(6.0 / n as f64);
        for v in &mut values[layout.range(t)] {
            *v = rng.gen_range(-b..b);
        }
    }
    Ok(NetParams {
        config: cfg.clone(),
        values,
        input_scaling: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub count_probs: [f64; MAX_LOADS],
    pub n_hat: usize,
    pub top_set: Vec<usize>,
}

impl Prediction {
    /// The `n` classes with the largest probabilities.
    pub fn top(&self, n: usize) -> Vec<usize> {
        top_n(&self.class_probs, n)
    }
}

/// Indices of the `n` largest entries; ties go to the lower index.
pub fn top_n(probs: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - m);
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>());
    v.iter().map(|x| x - lse).collect()
}

/// Probabilities from output logits.
pub fn predict_from_logits(logits: &[f64], cfg: &NetConfig) -> Prediction {
    let k = cfg.classes;
    let mut class_probs = logits[..k].to_vec();
    softmax_in_place(&mut class_probs);
    let count_probs = match cfg.head {
        Head::SplitSoftmax => {
            let mut c = [0.0; MAX_LOADS];
            c.copy_from_slice(&logits[k..k + MAX_LOADS]);
            softmax_in_place(&mut c);
            c
        }
        Head::Plain => [1.0, 0.0, 0.0],
    };
    let n_hat = argmax(&count_probs) + 1;
    let top_set = top_n(&class_probs, n_hat);
    Prediction {
        class_probs,
        count_probs,
        n_hat,
        top_set,
    }
}

/// Cross-entropy of the class softmax against the class targets, plus that
/// of the count softmax against the count one-hot for the split head.
pub fn loss_from_logits(logits: &[f64], cfg: &NetConfig, target: &TargetVector) -> f64 {
    let k = cfg.classes;
    let ls = log_softmax(&logits[..k]);
    let mut l = -ls
        .iter()
        .zip(&target.class_part)
        .filter(|(_, &t)| t > 0.0)
        .map(|(a, t)| a * t)
        .sum::<f64>();
    if cfg.head == Head::SplitSoftmax {
        let lc = log_softmax(&logits[k..k + MAX_LOADS]);
        l -= lc
            .iter()
            .zip(&target.count_part)
            .filter(|(_, &t)| t > 0.0)
            .map(|(a, t)| a * t)
            .sum::<f64>();
    }
    l
}

/// Strided view of a matrix, used to pass transposes to `gemm` without
/// copying.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn rows(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    fn transposed(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }
}

/// `c = a·b + beta·c` with `a` of shape `m×k`, `b` of shape `k×n` and `c`
/// row-major `m×n`.
fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k > 0 && c.len() >= m * n);
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    // SAFETY: the assertions bound every element the kernel reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of one valid cross-correlation layer.
#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvShape {
    fn oh(&self) -> usize {
        self.h - self.kh + 1
    }
    fn ow(&self) -> usize {
        self.w - self.kw + 1
    }
    /// Rows of the unfolded input (one per weight of an output channel).
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    /// Output positions per channel.
    fn p(&self) -> usize {
        self.oh() * self.ow()
    }
    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.cout * self.p()
    }
}

/// Unfolds `x` (`[cin][h][w]`) into `col` (`[cin·kh·kw][oh·ow]`) so the
/// convolution becomes `W·col`.
fn im2col(x: &[f64], s: ConvShape, col: &mut [f64]) {
    let (oh, ow, p) = (s.oh(), s.ow(), s.p());
    for c in 0..s.cin {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let r = (c * s.kh + ki) * s.kw + kj;
                let dst = &mut col[r * p..(r + 1) * p];
                for i in 0..oh {
                    let at = c * s.h * s.w + (i + ki) * s.w + kj;
                    dst[i * ow..(i + 1) * ow].copy_from_slice(&x[at..at + ow]);
                }
            }
        }
    }
}

/// Adjoint of `im2col`: adds each unfolded entry back onto its input cell.
fn col2im_add(col: &[f64], s: ConvShape, dx: &mut [f64]) {
    let (oh, ow, p) = (s.oh(), s.ow(), s.p());
    for c in 0..s.cin {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let r = (c * s.kh + ki) * s.kw + kj;
                let src = &col[r * p..(r + 1) * p];
                for i in 0..oh {
                    let at = c * s.h * s.w + (i + ki) * s.w + kj;
                    for (d, &g) in dx[at..at + ow].iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

fn add_bias_rows(z: &mut [f64], bias: &[f64], row_len: usize) {
    for zr in z.chunks_exact_mut(row_len) {
        for (v, b) in zr.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn add_bias_channels(z: &mut [f64], bias: &[f64], plane: usize) {
    for (zc, &b) in z.chunks_exact_mut(plane).zip(bias) {
        zc.iter_mut().for_each(|v| *v += b);
    }
}

fn leaky(z: &[f64], a: &mut [f64], slope: f64) {
    for (y, &x) in a.iter_mut().zip(z) {
        *y = if x > 0.0 { x } else { slope * x };
    }
}

/// Multiplies an activation gradient by the leaky ReLU derivative.
fn leaky_back(z: &[f64], d: &mut [f64], slope: f64) {
    for (g, &x) in d.iter_mut().zip(z) {
        if x <= 0.0 {
            *g *= slope;
        }
    }
}

const STANDARDIZE_EPS: f64 = 1e-8;

fn normalize_forward(mode: Normalization, f: &[f64], g: &mut [f64]) -> f64 {
    match mode {
        Normalization::Identity => {
            g.copy_from_slice(f);
            1.0
        }
        Normalization::Softmax | Normalization::ScaledSoftmax => {
            g.copy_from_slice(f);
            softmax_in_place(g);
            if mode == Normalization::ScaledSoftmax {
                let n = g.len() as f64;
                g.iter_mut().for_each(|v| *v *= n);
            }
            1.0
        }
        Normalization::Standardize => {
            let n = f.len() as f64;
            let mean = f.iter().sum::<f64>() / n;
            let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + STANDARDIZE_EPS);
            for (y, &x) in g.iter_mut().zip(f) {
                *y = (x - mean) * inv;
            }
            inv
        }
    }
}

fn normalize_backward(mode: Normalization, g: &[f64], inv: f64, dg: &[f64], df: &mut [f64]) {
    let n = g.len() as f64;
    match mode {
        Normalization::Identity => df.copy_from_slice(dg),
        Normalization::Softmax => {
            let dot = g.iter().zip(dg).map(|(a, b)| a * b).sum::<f64>();
            for ((d, &gi), &dgi) in df.iter_mut().zip(g).zip(dg) {
                *d = gi * (dgi - dot);
            }
        }
        Normalization::ScaledSoftmax => {
            // g = n * s with s the plain softmax.
            let dot = g.iter().zip(dg).map(|(a, b)| a * b).sum::<f64>() / n;
            for ((d, &gi), &dgi) in df.iter_mut().zip(g).zip(dg) {
                *d = gi * (dgi - dot);
            }
        }
        Normalization::Standardize => {
            let mean_dg = dg.iter().sum::<f64>() / n;
            let mean_dgg = dg.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / n;
            for ((d, &gi), &dgi) in df.iter_mut().zip(g).zip(dg) {
                *d = inv * (dgi - mean_dg - gi * mean_dgg);
            }
        }
    }
}

/// Activations for up to `cap` examples, stored example-major, kept for
/// backpropagation.
#[derive(Debug, Clone)]
struct Batch {
    cap: usize,
    rows: usize,
    s1: ConvShape,
    s2: ConvShape,
    x: Vec<f64>,
    col1: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    col2: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    g: Vec<f64>,
    norm_scale: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    z4: Vec<f64>,
    a4: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    d_a4: Vec<f64>,
    d_a3: Vec<f64>,
    d_g: Vec<f64>,
    d_a2: Vec<f64>,
    d_col: Vec<f64>,
    d_a1: Vec<f64>,
}

impl Batch {
    fn new(cfg: &NetConfig, cap: usize) -> Self {
        let s1 = ConvShape {
            cin: cfg.input_channels,
            h: cfg.input_rows,
            w: cfg.input_cols,
            cout: cfg.conv1.out_channels,
            kh: cfg.conv1.kernel_h,
            kw: cfg.conv1.kernel_w,
        };
        let s2 = ConvShape {
            cin: s1.cout,
            h: s1.oh(),
            w: s1.ow(),
            cout: cfg.conv2.out_channels,
            kh: cfg.conv2.kernel_h,
            kw: cfg.conv2.kernel_w,
        };
        let flat = s2.out_len();
        let buf = |n: usize| vec![0.0; cap * n];
        Batch {
            cap,
            rows: 0,
            s1,
            s2,
            x: buf(s1.in_len()),
            col1: buf(s1.k() * s1.p()),
            z1: buf(s1.out_len()),
            a1: buf(s1.out_len()),
            col2: buf(s2.k() * s2.p()),
            z2: buf(flat),
            a2: buf(flat),
            g: buf(flat),
            norm_scale: buf(1),
            z3: buf(cfg.fc1_width),
            a3: buf(cfg.fc1_width),
            z4: buf(cfg.fc2_width),
            a4: buf(cfg.fc2_width),
            out: buf(cfg.output_len()),
            d_out: buf(cfg.output_len()),
            d_a4: buf(cfg.fc2_width),
            d_a3: buf(cfg.fc1_width),
            d_g: buf(flat),
            d_a2: buf(flat),
            d_col: vec![0.0; s2.k() * s2.p()],
            d_a1: buf(s1.out_len()),
        }
    }

    fn out_row(&self, r: usize, len: usize) -> &[f64] {
        &self.out[r * len..(r + 1) * len]
    }
}

fn conv_forward_rows(
    s: ConvShape,
    rows: usize,
    x: &[f64],
    col: &mut [f64],
    weight: &[f64],
    bias: &[f64],
    z: &mut [f64],
) {
    let (k, p) = (s.k(), s.p());
    for r in 0..rows {
        let cr = &mut col[r * k * p..(r + 1) * k * p];
        im2col(&x[r * s.in_len()..(r + 1) * s.in_len()], s, cr);
        let zr = &mut z[r * s.out_len()..(r + 1) * s.out_len()];
        gemm(s.cout, k, p, View::rows(weight, k), View::rows(cr, p), 0.0, zr);
        add_bias_channels(zr, bias, p);
    }
}

/// Accumulates weight and bias gradients of a convolution over `rows`
/// examples and, when `dx` is given, writes the input gradients.
#[allow(clippy::too_many_arguments)]
fn conv_backward_rows(
    s: ConvShape,
    rows: usize,
    col: &[f64],
    weight: &[f64],
    dz: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    d_col: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (k, p) = (s.k(), s.p());
    for r in 0..rows {
        let dzr = &dz[r * s.out_len()..(r + 1) * s.out_len()];
        let cr = &col[r * k * p..(r + 1) * k * p];
        gemm(s.cout, p, k, View::rows(dzr, p), View::transposed(cr, p), 1.0, dweight);
        for (b, plane) in dbias.iter_mut().zip(dzr.chunks_exact(p)) {
            *b += plane.iter().sum::<f64>();
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(k, s.cout, p, View::transposed(weight, k), View::rows(dzr, p), 0.0, d_col);
            let dxr = &mut dx[r * s.in_len()..(r + 1) * s.in_len()];
            dxr.fill(0.0);
            col2im_add(d_col, s, dxr);
        }
    }
}

fn dense_forward_rows(rows: usize, x: &[f64], weight: &[f64], bias: &[f64], z: &mut [f64]) {
    let (n_out, n_in) = (bias.len(), weight.len() / bias.len());
    gemm(rows, n_in, n_out, View::rows(x, n_in), View::transposed(weight, n_in), 0.0, z);
    add_bias_rows(&mut z[..rows * n_out], bias, n_out);
}

#[allow(clippy::too_many_arguments)]
fn dense_backward_rows(
    rows: usize,
    x: &[f64],
    weight: &[f64],
    dz: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let (n_out, n_in) = (dbias.len(), weight.len() / dbias.len());
    gemm(n_out, rows, n_in, View::transposed(dz, n_out), View::rows(x, n_in), 1.0, dweight);
    for dzr in dz[..rows * n_out].chunks_exact(n_out) {
        for (b, g) in dbias.iter_mut().zip(dzr) {
            *b += g;
        }
    }
    gemm(rows, n_out, n_in, View::rows(dz, n_out), View::rows(weight, n_in), 0.0, dx);
}

fn forward_rows<'a>(p: &NetParams, xs: impl IntoIterator<Item = &'a [f64]>, b: &mut Batch) {
    let cfg = &p.config;
    let lay = cfg.layout();
    let t = |t: Tensor| &p.values[lay.range(t)];
    let slope = cfg.leaky_slope;
    let n0 = b.s1.in_len();
    let mut rows = 0;
    for x in xs {
        assert!(rows < b.cap, "batch capacity exceeded");
        let dst = &mut b.x[rows * n0..(rows + 1) * n0];
        match &p.input_scaling {
            Some(s) => {
                for (((d, &v), &o), &g) in dst.iter_mut().zip(x).zip(&s.offset).zip(&s.gain) {
                    *d = (v - o) * g;
                }
            }
            None => dst.copy_from_slice(x),
        }
        rows += 1;
    }
    b.rows = rows;
    let (s1, s2) = (b.s1, b.s2);
    let (n1, flat) = (s1.out_len(), s2.out_len());
    conv_forward_rows(
        s1,
        rows,
        &b.x,
        &mut b.col1,
        t(Tensor::Conv1Weight),
        t(Tensor::Conv1Bias),
        &mut b.z1,
    );
    leaky(&b.z1[..rows * n1], &mut b.a1, slope);
    conv_forward_rows(
        s2,
        rows,
        &b.a1,
        &mut b.col2,
        t(Tensor::Conv2Weight),
        t(Tensor::Conv2Bias),
        &mut b.z2,
    );
    leaky(&b.z2[..rows * flat], &mut b.a2, slope);
    for r in 0..rows {
        b.norm_scale[r] = normalize_forward(
            cfg.normalization,
            &b.a2[r * flat..(r + 1) * flat],
            &mut b.g[r * flat..(r + 1) * flat],
        );
    }
    dense_forward_rows(rows, &b.g, t(Tensor::Fc1Weight), t(Tensor::Fc1Bias), &mut b.z3);
    leaky(&b.z3[..rows * cfg.fc1_width], &mut b.a3, slope);
    dense_forward_rows(rows, &b.a3, t(Tensor::Fc2Weight), t(Tensor::Fc2Bias), &mut b.z4);
    leaky(&b.z4[..rows * cfg.fc2_width], &mut b.a4, slope);
    dense_forward_rows(rows, &b.a4, t(Tensor::OutWeight), t(Tensor::OutBias), &mut b.out);
}

/// Deliberate gradient corruption used to show that the checker notices.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientFault {
    FlipSign(Tensor),
}

/// Adds the summed loss gradient of the examples in `b` to `grad` and
/// returns their summed loss. `targets` pairs with the rows of the last
/// forward pass.
fn backward_rows(
    p: &NetParams,
    targets: &[&TargetVector],
    b: &mut Batch,
    grad: &mut [f64],
    fault: Option<GradientFault>,
) -> f64 {
    let cfg = &p.config;
    let lay = cfg.layout();
    let t = |t: Tensor| &p.values[lay.range(t)];
    let k = cfg.classes;
    let slope = cfg.leaky_slope;
    let rows = b.rows;
    assert_eq!(targets.len(), rows);
    let n_out = cfg.output_len();
    let (s1, s2) = (b.s1, b.s2);
    let (n1, flat) = (s1.out_len(), s2.out_len());

    // Softmax cross-entropy: gradient is probabilities minus targets, per
    // softmax group (each target group sums to one).
    let mut loss = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let out = &b.out[r * n_out..(r + 1) * n_out];
        loss += loss_from_logits(out, cfg, target);
        let d = &mut b.d_out[r * n_out..(r + 1) * n_out];
        d.copy_from_slice(out);
        softmax_in_place(&mut d[..k]);
        for (g, t) in d[..k].iter_mut().zip(&target.class_part) {
            *g -= t;
        }
        if cfg.head == Head::SplitSoftmax {
            softmax_in_place(&mut d[k..]);
            for (g, t) in d[k..].iter_mut().zip(&target.count_part) {
                *g -= t;
            }
        }
    }

    let (gw, gb) = split_pair(grad, &lay, Tensor::OutWeight, Tensor::OutBias);
    dense_backward_rows(rows, &b.a4, t(Tensor::OutWeight), &b.d_out, gw, gb, &mut b.d_a4);
    leaky_back(&b.z4[..rows * cfg.fc2_width], &mut b.d_a4, slope);
    let (gw, gb) = split_pair(grad, &lay, Tensor::Fc2Weight, Tensor::Fc2Bias);
    dense_backward_rows(rows, &b.a3, t(Tensor::Fc2Weight), &b.d_a4, gw, gb, &mut b.d_a3);
    leaky_back(&b.z3[..rows * cfg.fc1_width], &mut b.d_a3, slope);
    let (gw, gb) = split_pair(grad, &lay, Tensor::Fc1Weight, Tensor::Fc1Bias);
    dense_backward_rows(rows, &b.g, t(Tensor::Fc1Weight), &b.d_a3, gw, gb, &mut b.d_g);
    for r in 0..rows {
        let span = r * flat..(r + 1) * flat;
        normalize_backward(
            cfg.normalization,
            &b.g[span.clone()],
            b.norm_scale[r],
            &b.d_g[span.clone()],
            &mut b.d_a2[span],
        );
    }
    leaky_back(&b.z2[..rows * flat], &mut b.d_a2, slope);
    let (gw, gb) = split_pair(grad, &lay, Tensor::Conv2Weight, Tensor::Conv2Bias);
    conv_backward_rows(
        s2,
        rows,
        &b.col2,
        t(Tensor::Conv2Weight),
        &b.d_a2,
        gw,
        gb,
        &mut b.d_col,
        Some(&mut b.d_a1),
    );
    leaky_back(&b.z1[..rows * n1], &mut b.d_a1, slope);
    let (gw, gb) = split_pair(grad, &lay, Tensor::Conv1Weight, Tensor::Conv1Bias);
    conv_backward_rows(
        s1,
        rows,
        &b.col1,
        t(Tensor::Conv1Weight),
        &b.d_a1,
        gw,
        gb,
        &mut b.d_col,
        None,
    );
    if let Some(GradientFault::FlipSign(tn)) = fault {
        grad[lay.range(tn)].iter_mut().for_each(|g| *g = -*g);
    }
    loss
}

/// Disjoint mutable views of a weight tensor and the bias stored after it.
fn split_pair<'g>(
    grad: &'g mut [f64],
    lay: &Layout,
    w: Tensor,
    b: Tensor,
) -> (&'g mut [f64], &'g mut [f64]) {
    let (rw, rb) = (lay.range(w), lay.range(b));
    debug_assert_eq!(rw.end, rb.start);
    let (lo, hi) = grad[rw.start..rb.end].split_at_mut(rw.len());
    (lo, hi)
}

const PREDICT_CHUNK: usize = 64;

fn check_input(cfg: &NetConfig, x: &[f64]) -> Result<(), NetError> {
    if x.len() != cfg.input_len() {
        return Err(NetError::ShapeMismatch {
            expected: cfg.input_len(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Output logits for a flat `[channel][row][col]` input.
pub fn logits(p: &NetParams, x: &[f64]) -> Result<Vec<f64>, NetError> {
    check_input(&p.config, x)?;
    let mut b = Batch::new(&p.config, 1);
    forward_rows(p, [x], &mut b);
    Ok(b.out)
}

pub fn forward(p: &NetParams, x: &[f64]) -> Result<Prediction, NetError> {
    Ok(predict_from_logits(&logits(p, x)?, &p.config))
}

/// Predictions for many inputs, evaluated in chunks.
pub fn forward_batch<'a>(
    p: &NetParams,
    xs: impl IntoIterator<Item = &'a [f64]>,
) -> Result<Vec<Prediction>, NetError> {
    let xs: Vec<&[f64]> = xs.into_iter().collect();
    for x in &xs {
        check_input(&p.config, x)?;
    }
    let n_out = p.config.output_len();
    let mut b = Batch::new(&p.config, PREDICT_CHUNK.min(xs.len()).max(1));
    let mut preds = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(b.cap) {
        forward_rows(p, chunk.iter().copied(), &mut b);
        for r in 0..chunk.len() {
            preds.push(predict_from_logits(b.out_row(r, n_out), &p.config));
        }
    }
    Ok(preds)
}

pub fn loss(p: &NetParams, x: &[f64], target: &TargetVector) -> Result<f64, NetError> {
    Ok(loss_from_logits(&logits(p, x)?, &p.config, target))
}

/// Loss and its gradient with respect to every parameter for one example.
pub fn gradient(
    p: &NetParams,
    x: &[f64],
    target: &TargetVector,
) -> Result<(f64, Vec<f64>), NetError> {
    gradient_with_fault(p, x, target, None)
}

fn gradient_with_fault(
    p: &NetParams,
    x: &[f64],
    target: &TargetVector,
    fault: Option<GradientFault>,
) -> Result<(f64, Vec<f64>), NetError> {
    check_input(&p.config, x)?;
    let mut b = Batch::new(&p.config, 1);
    let mut grad = vec![0.0; p.values.len()];
    forward_rows(p, [x], &mut b);
    let l = backward_rows(p, &[target], &mut b, &mut grad, fault);
    Ok((l, grad))
}

/// One training example: flat input and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: TargetVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss over each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum Stepper {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        beta1_t: f64,
        beta2_t: f64,
    },
}

impl Stepper {
    fn new(opt: Optimizer, len: usize) -> Self {
        match opt {
            Optimizer::Sgd => Stepper::Sgd,
            Optimizer::Adam => Stepper::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
                beta1_t: 1.0,
                beta2_t: 1.0,
            },
        }
    }

    /// Applies one update from a gradient summed over `count` examples.
    fn step(&mut self, values: &mut [f64], grad: &[f64], lr: f64, count: usize) {
        let inv = 1.0 / count as f64;
        match self {
            Stepper::Sgd => {
                for (w, g) in values.iter_mut().zip(grad) {
                    *w -= lr * inv * g;
                }
            }
            Stepper::Adam {
                m,
                v,
                beta1_t,
                beta2_t,
            } => {
                *beta1_t *= ADAM_BETA1;
                *beta2_t *= ADAM_BETA2;
                let c1 = 1.0 / (1.0 - *beta1_t);
                let c2 = 1.0 / (1.0 - *beta2_t);
                for (((w, &g), mi), vi) in values.iter_mut().zip(grad).zip(m).zip(v) {
                    let g = g * inv;
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                    *w -= lr * (*mi * c1) / (libm::sqrt(*vi * c2) + ADAM_EPS);
                }
            }
        }
    }
}

/// Mini-batch training at a fixed rate. Examples are visited in a fresh
/// permutation every epoch, seeded from `init_seed` and the epoch number.
/// With `standardize_inputs` set (and at least one epoch) the input scaling
/// is refitted on `examples` first.
pub fn train(
    mut p: NetParams,
    examples: &[Example],
    cfg: &NetConfig,
) -> Result<(NetParams, TrainReport), NetError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    if p.values.len() != cfg.layout().total() {
        return Err(NetError::ShapeMismatch {
            expected: cfg.layout().total(),
            found: p.values.len(),
        });
    }
    for e in examples {
        check_input(cfg, &e.input)?;
    }
    p.config.learning_rate = cfg.learning_rate;
    p.config.epochs = cfg.epochs;
    p.config.batch_size = cfg.batch_size;
    p.config.optimizer = cfg.optimizer;
    p.config.standardize_inputs = cfg.standardize_inputs;
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    if cfg.epochs == 0 {
        return Ok((p, report));
    }
    if cfg.standardize_inputs {
        p.input_scaling = Some(InputScaling::fit(
            examples.iter().map(|e| e.input.as_slice()),
            cfg.input_len(),
        ));
    }
    let mut b = Batch::new(cfg, cfg.batch_size.min(examples.len()));
    let mut grad = vec![0.0; p.values.len()];
    let mut stepper = Stepper::new(cfg.optimizer, p.values.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut targets: Vec<&TargetVector> = Vec::with_capacity(b.cap);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed::derive(cfg.init_seed, "epoch", epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            forward_rows(&p, batch.iter().map(|&i| examples[i].input.as_slice()), &mut b);
            targets.clear();
            targets.extend(batch.iter().map(|&i| &examples[i].target));
            total += backward_rows(&p, &targets, &mut b, &mut grad, None);
            stepper.step(&mut p.values, &grad, cfg.learning_rate, batch.len());
            report.steps += 1;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() || !p.is_finite() {
            return Err(NetError::DivergedToNaN { epoch });
        }
        report.epoch_loss.push(mean);
    }
    Ok((p, report))
}

const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between the analytic gradient and central
/// differences (`h = 1e-5`) over `count` parameters drawn from every tensor.
pub fn grad_check(
    p: &NetParams,
    x: &[f64],
    target: &TargetVector,
    count: usize,
    seed: u64,
) -> Result<f64, NetError> {
    grad_check_with_fault(p, x, target, count, seed, None)
}

#[doc(hidden)]
pub fn grad_check_with_fault(
    p: &NetParams,
    x: &[f64],
    target: &TargetVector,
    count: usize,
    seed: u64,
    fault: Option<GradientFault>,
) -> Result<f64, NetError> {
    const H: f64 = 1e-5;
    let (l0, analytic) = gradient_with_fault(p, x, target, fault)?;
    // Central differences carry rounding noise near eps * |loss| / h; below
    // this floor gradients are compared on an absolute scale.
    let floor = GRAD_CHECK_FLOOR * libm::fmax(l0.abs(), 1.0);
    let idx = check_indices(&p.config, count, seed);
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in idx {
        let v = q.values[i];
        q.values[i] = v + H;
        let up = loss(&q, x, target)?;
        q.values[i] = v - H;
        let down = loss(&q, x, target)?;
        q.values[i] = v;
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[i];
        let scale = libm::fmax(libm::fmax(a.abs(), numeric.abs()), floor);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Parameter indices for a gradient check: an even share from each tensor,
/// topped up from the whole vector.
fn check_indices(cfg: &NetConfig, count: usize, seed: u64) -> Vec<usize> {
    let lay = cfg.layout();
    let total = lay.total();
    let count = count.min(total);
    let mut rng = seed::rng(seed::derive(seed, "grad_check", 0));
    let mut chosen = vec![false; total];
    let mut out = Vec::with_capacity(count);
    let share = count / TENSORS;
    for tn in Tensor::ALL {
        let r = lay.range(tn);
        let mut local: Vec<usize> = r.collect();
        local.shuffle(&mut rng);
        for i in local.into_iter().take(share) {
            chosen[i] = true;
            out.push(i);
        }
    }
    let mut rest: Vec<usize> = (0..total).filter(|&i| !chosen[i]).collect();
    rest.shuffle(&mut rng);
    out.extend(rest.into_iter().take(count - out.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::encode_target;
    use crate::loads::LoadClass;
    use alloc::vec;

    fn small() -> NetConfig {
        NetConfig {
            input_rows: 6,
            input_cols: 7,
            conv1: ConvSpec {
                out_channels: 3,
                kernel_h: 3,
                kernel_w: 3,
            },
            conv2: ConvSpec {
                out_channels: 4,
                kernel_h: 2,
                kernel_w: 3,
            },
            fc1_width: 10,
            fc2_width: 7,
            classes: 5,
            ..NetConfig::default()
        }
    }

    fn input(cfg: &NetConfig, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..cfg.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn target(labels: &[LoadClass], k: usize) -> TargetVector {
        encode_target(labels, k).unwrap()
    }

    #[test]
    fn layout_sizes_default() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.flat_len(), 2560);
        let lay = cfg.layout();
        assert_eq!(lay.range(Tensor::Conv1Weight).len(), 8 * 2 * 9);
        assert_eq!(lay.range(Tensor::OutWeight).len(), 14 * 64);
        assert_eq!(
            lay.total(),
            144 + 8 + 1152 + 16 + 2560 * 128 + 128 + 128 * 64 + 64 + 14 * 64 + 14
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.fc1_width = 0;
        assert!(matches!(init(&cfg), Err(NetError::InvalidConfig(_))));
        let mut cfg = small();
        cfg.conv2.kernel_h = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.classes = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.count_outputs = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small();
        assert_eq!(init(&cfg).unwrap(), init(&cfg).unwrap());
        let other = NetConfig {
            init_seed: 1,
            ..small()
        };
        assert_ne!(init(&cfg).unwrap().values, init(&other).unwrap().values);
        let p = init(&cfg).unwrap();
        assert!(p.tensor(Tensor::Fc1Bias).iter().all(|&b| b == 0.0));
        let b = libm::sqrt(6.0 / 10.0);
        assert!(p.tensor(Tensor::Fc2Weight).iter().all(|w| w.abs() < b));
    }

    #[test]
    fn probabilities_sum_to_one() {
        for norm in [
            Normalization::Identity,
            Normalization::Softmax,
            Normalization::ScaledSoftmax,
            Normalization::Standardize,
        ] {
            let cfg = NetConfig {
                normalization: norm,
                ..small()
            };
            let p = init(&cfg).unwrap();
            let pr = forward(&p, &input(&cfg, 3)).unwrap();
            assert!((pr.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((pr.count_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(pr.top_set.len(), pr.n_hat);
            assert!((1..=3).contains(&pr.n_hat));
        }
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let cfg = small();
        let mut p = init(&cfg).unwrap();
        p.values.fill(0.0);
        let pr = forward(&p, &input(&cfg, 4)).unwrap();
        assert!(pr.class_probs.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        assert!(pr.count_probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(pr.n_hat, 1);
        assert_eq!(pr.top_set, vec![0]);
    }

    #[test]
    fn class_logit_shift_and_head_independence() {
        let cfg = small();
        let p = init(&cfg).unwrap();
        let x = input(&cfg, 5);
        let base = forward(&p, &x).unwrap();
        let mut q = p.clone();
        q.tensor_mut(Tensor::OutBias)[..5].iter_mut().for_each(|b| *b += 3.7);
        let shifted = forward(&q, &x).unwrap();
        for (a, b) in base.class_probs.iter().zip(&shifted.class_probs) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(base.count_probs, shifted.count_probs);
        let mut q = p.clone();
        q.tensor_mut(Tensor::OutBias)[5] += 2.0;
        let moved = forward(&q, &x).unwrap();
        assert_eq!(base.class_probs, moved.class_probs);
        assert_ne!(base.count_probs, moved.count_probs);
    }

    #[test]
    fn loss_reference_values() {
        let cfg = NetConfig {
            classes: 11,
            ..small()
        };
        let two = target(&[LoadClass::Usb, LoadClass::LedBulb], 11);
        let mut logits = vec![-40.0; 14];
        logits[0] = 0.0;
        logits[5] = 0.0;
        logits[12] = 40.0;
        let l = loss_from_logits(&logits, &cfg, &two);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);

        let one = target(&[LoadClass::Fan], 11);
        let mut logits = vec![0.0; 14];
        logits[11] = 60.0;
        let l = loss_from_logits(&logits, &cfg, &one);
        assert!((l - libm::log(11.0)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (norm, head) in [
            (Normalization::Identity, Head::SplitSoftmax),
            (Normalization::Identity, Head::Plain),
            (Normalization::Softmax, Head::SplitSoftmax),
            (Normalization::ScaledSoftmax, Head::SplitSoftmax),
            (Normalization::Standardize, Head::SplitSoftmax),
            (Normalization::Standardize, Head::Plain),
        ] {
            let cfg = NetConfig {
                normalization: norm,
                head,
                ..small()
            };
            let inputs: Vec<Vec<f64>> = (0..6).map(|i| input(&cfg, i)).collect();
            let scaling = InputScaling::fit(inputs.iter().map(|x| x.as_slice()), cfg.input_len());
            let p = init(&cfg).unwrap().with_input_scaling(Some(scaling)).unwrap();
            let labels: &[LoadClass] = if head == Head::Plain {
                &[LoadClass::Fan]
            } else {
                &[LoadClass::Usb, LoadClass::Fan]
            };
            let t = target(labels, 5);
            let err = grad_check(&p, &input(&cfg, 9), &t, 300, 1).unwrap();
            assert!(err < 1e-4, "{norm:?} {head:?}: {err}");
            let bad = grad_check_with_fault(
                &p,
                &input(&cfg, 9),
                &t,
                300,
                1,
                Some(GradientFault::FlipSign(Tensor::Fc2Weight)),
            )
            .unwrap();
            assert!(bad > 0.1, "{norm:?} {head:?}: {bad}");
        }
    }

    #[test]
    fn zero_point_gradient() {
        let cfg = small();
        let mut p = init(&cfg).unwrap();
        p.values.fill(0.0);
        let x = vec![0.0; cfg.input_len()];
        let t = target(&[LoadClass::Usb], 5);
        assert!(grad_check(&p, &x, &t, 200, 0).unwrap() < 1e-4);
    }

    #[test]
    fn top_n_breaks_ties_by_index() {
        assert_eq!(top_n(&[0.2, 0.2, 0.2, 0.4], 2), vec![0, 3]);
        assert_eq!(top_n(&[0.25; 4], 3), vec![0, 1, 2]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let cfg = NetConfig {
            epochs: 0,
            ..small()
        };
        let p = init(&cfg).unwrap();
        let ex = [Example {
            input: input(&cfg, 1),
            target: target(&[LoadClass::Usb], 5),
        }];
        let (q, rep) = train(p.clone(), &ex, &cfg).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!(rep.steps, 0);
        assert!(matches!(train(p, &[], &cfg), Err(NetError::EmptyTrainingSet)));
    }

    #[test]
    fn step_count_contract() {
        let cfg = NetConfig {
            epochs: 4,
            batch_size: 3,
            ..small()
        };
        let ex: Vec<Example> = (0..7)
            .map(|i| Example {
                input: input(&cfg, i),
                target: target(&[LoadClass::from_index(i as usize % 5).unwrap()], 5),
            })
            .collect();
        let (_, rep) = train(init(&cfg).unwrap(), &ex, &cfg).unwrap();
        assert_eq!(rep.steps, cfg.steps(7));
        assert_eq!(rep.steps, 4 * 3);
        let doubled: Vec<Example> = ex.iter().chain(&ex).cloned().collect();
        let half = NetConfig {
            epochs: 2,
            batch_size: 6,
            ..cfg.clone()
        };
        let (_, rep2) = train(init(&half).unwrap(), &doubled, &half).unwrap();
        assert_eq!(rep2.steps, 2 * 3);
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let cfg = NetConfig {
            epochs: 200,
            batch_size: 4,
            ..small()
        };
        let classes = [LoadClass::Usb, LoadClass::Fan];
        let ex: Vec<Example> = (0..20)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                Example {
                    input: input(&cfg, i).iter().map(|v| sign + 0.2 * v).collect(),
                    target: target(&[classes[i as usize % 2]], 5),
                }
            })
            .collect();
        let (p, rep) = train(init(&cfg).unwrap(), &ex, &cfg).unwrap();
        assert!(rep.epoch_loss.last() < rep.epoch_loss.first());
        for e in &ex {
            let pred = forward(&p, &e.input).unwrap();
            assert_eq!(pred.top_set, vec![argmax(&e.target.class_part)]);
            assert_eq!(pred.n_hat, 1);
        }
    }

    #[test]
    fn huge_rate_diverges() {
        let cfg = NetConfig {
            epochs: 50,
            learning_rate: 1e12,
            optimizer: Optimizer::Sgd,
            ..small()
        };
        let ex: Vec<Example> = (0..4)
            .map(|i| Example {
                input: input(&cfg, i).iter().map(|v| v * 100.0).collect(),
                target: target(&[LoadClass::from_index(i as usize).unwrap()], 5),
            })
            .collect();
        assert!(matches!(
            train(init(&cfg).unwrap(), &ex, &cfg),
            Err(NetError::DivergedToNaN { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = init(&small()).unwrap();
        assert_eq!(
            forward(&p, &[0.0; 3]),
            Err(NetError::ShapeMismatch {
                expected: 84,
                found: 3
            })
        );
        assert!(NetParams::from_values(small(), vec![0.0; 2]).is_err());
    }
}
