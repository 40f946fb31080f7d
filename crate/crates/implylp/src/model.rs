//! Network representation and exact forward evaluation.
//!
//! A [`Network`] is an explicit, ordered list of [`Layer`]s evaluated in
//! plain `f64`. Logits are kept raw; softmax is a separate operation so that
//! prediction-ratio quantities can be computed without ever exponentiating.
//! Convolutions carry an explicit stride and do no implicit padding; padding
//! is its own layer. Shapes are stored on every layer rather than inferred,
//! and [`Network::new`] checks that the chain is consistent.

use crate::{Error, Result};

/// Spatial shape of an image-like tensor: `[channels, height, width]`.
pub type Shape3 = [usize; 3];

/// One layer of a feed-forward network.
///
/// `weights` of a dense layer are row-major `[out_features][in_features]`.
/// A convolution kernel is row-major `[out_channels][in_channels][kh][kw]`.
/// Flattening follows the same row-major order used by the flat value
/// vectors, so a `Flatten` layer is a pure re-labelling of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        kernel: Vec<f64>,
        bias: Vec<f64>,
        input_shape: Shape3,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride_h: usize,
        stride_w: usize,
    },
    MaxPool2d {
        pool_size: usize,
        input_shape: Shape3,
    },
    /// Zero padding `[top, bottom, left, right]` around the spatial dims.
    ZeroPad2d {
        padding: [usize; 4],
        input_shape: Shape3,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Relu {
        input_shape: Vec<usize>,
    },
}

impl Layer {
    /// Shape this layer expects on input.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Layer::Dense { in_features, .. } => vec![*in_features],
            Layer::Conv2d { input_shape, .. }
            | Layer::MaxPool2d { input_shape, .. }
            | Layer::ZeroPad2d { input_shape, .. } => input_shape.to_vec(),
            Layer::Flatten { input_shape } | Layer::Relu { input_shape } => input_shape.clone(),
        }
    }

    /// Shape this layer produces; a deterministic function of the input
    /// shape and the layer parameters.
    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            Layer::Dense { out_features, .. } => vec![*out_features],
            Layer::Conv2d {
                input_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
                ..
            } => {
                let oh = (input_shape[1] - kernel_h) / stride_h + 1;
                let ow = (input_shape[2] - kernel_w) / stride_w + 1;
                vec![*out_channels, oh, ow]
            }
            Layer::MaxPool2d {
                pool_size,
                input_shape,
            } => vec![
                input_shape[0],
                input_shape[1] / pool_size,
                input_shape[2] / pool_size,
            ],
            Layer::ZeroPad2d {
                padding,
                input_shape,
            } => vec![
                input_shape[0],
                input_shape[1] + padding[0] + padding[1],
                input_shape[2] + padding[2] + padding[3],
            ],
            Layer::Flatten { input_shape } => vec![flat_len(input_shape)],
            Layer::Relu { input_shape } => input_shape.clone(),
        }
    }

    /// Number of scalar inputs.
    pub fn in_len(&self) -> usize {
        flat_len(&self.input_shape())
    }

    /// Number of scalar outputs.
    pub fn out_len(&self) -> usize {
        flat_len(&self.output_shape())
    }

    /// True for layers that are a fixed affine map of their input (including
    /// pure re-indexing); false for ReLU and max pooling.
    pub fn is_affine(&self) -> bool {
        !matches!(self, Layer::Relu { .. } | Layer::MaxPool2d { .. })
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let fail = |field: &str, message: String| {
            Err(Error::Validation {
                layer: idx,
                field: field.into(),
                message,
            })
        };
        let check_finite = |field: &str, values: &[f64]| {
            match values.iter().position(|v| !v.is_finite()) {
                Some(at) => Err(Error::Validation {
                    layer: idx,
                    field: field.into(),
                    message: format!("entry {at} is not finite"),
                }),
                None => Ok(()),
            }
        };
        match self {
            Layer::Dense {
                weights,
                bias,
                in_features,
                out_features,
            } => {
                if *in_features == 0 || *out_features == 0 {
                    return fail("shape", "dense layer with zero features".into());
                }
                if weights.len() != in_features * out_features {
                    return fail(
                        "weights",
                        format!(
                            "expected {} entries ({out_features}x{in_features}), found {}",
                            in_features * out_features,
                            weights.len()
                        ),
                    );
                }
                if bias.len() != *out_features {
                    return fail(
                        "bias",
                        format!("expected {out_features} entries, found {}", bias.len()),
                    );
                }
                check_finite("weights", weights)?;
                check_finite("bias", bias)
            }
            Layer::Conv2d {
                kernel,
                bias,
                input_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
            } => {
                let [ci, h, w] = *input_shape;
                if ci == 0 || h == 0 || w == 0 || *out_channels == 0 {
                    return fail("shape", format!("degenerate conv shape {input_shape:?}"));
                }
                if *kernel_h == 0 || *kernel_w == 0 || *kernel_h > h || *kernel_w > w {
                    return fail(
                        "kernel_shape",
                        format!("kernel {kernel_h}x{kernel_w} does not fit input {h}x{w}"),
                    );
                }
                if *stride_h == 0 || *stride_w == 0 {
                    return fail("stride", "stride must be at least 1".into());
                }
                let expected = out_channels * ci * kernel_h * kernel_w;
                if kernel.len() != expected {
                    return fail(
                        "weights",
                        format!("expected {expected} kernel entries, found {}", kernel.len()),
                    );
                }
                if bias.len() != *out_channels {
                    return fail(
                        "bias",
                        format!("expected {out_channels} entries, found {}", bias.len()),
                    );
                }
                check_finite("weights", kernel)?;
                check_finite("bias", bias)
            }
            Layer::MaxPool2d {
                pool_size,
                input_shape,
            } => {
                let [c, h, w] = *input_shape;
                if *pool_size == 0 {
                    return fail("pool_size", "pool size must be at least 1".into());
                }
                if c == 0 || h == 0 || w == 0 {
                    return fail("shape", format!("degenerate pool input {input_shape:?}"));
                }
                if h % pool_size != 0 || w % pool_size != 0 {
                    return fail(
                        "pool_size",
                        format!(
                            "pool size {pool_size} must divide spatial dims {h}x{w} \
                             (windows are non-overlapping with stride = pool size)"
                        ),
                    );
                }
                Ok(())
            }
            Layer::ZeroPad2d { input_shape, .. } => {
                let [c, h, w] = *input_shape;
                if c == 0 || h == 0 || w == 0 {
                    return fail("shape", format!("degenerate pad input {input_shape:?}"));
                }
                Ok(())
            }
            Layer::Flatten { input_shape } | Layer::Relu { input_shape } => {
                if input_shape.is_empty() || flat_len(input_shape) == 0 {
                    return fail("shape", format!("degenerate shape {input_shape:?}"));
                }
                Ok(())
            }
        }
    }

    /// Evaluate the layer on a flat input of length [`Layer::in_len`].
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense {
                weights,
                bias,
                in_features,
                out_features,
            } => {
                let mut out = Vec::with_capacity(*out_features);
                for i in 0..*out_features {
                    let row = &weights[i * in_features..(i + 1) * in_features];
                    let mut acc = bias[i];
                    for (w, x) in row.iter().zip(input) {
                        acc += w * x;
                    }
                    out.push(acc);
                }
                out
            }
            Layer::Conv2d {
                kernel,
                bias,
                input_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
            } => {
                let [ci_n, h, w] = *input_shape;
                let oh = (h - kernel_h) / stride_h + 1;
                let ow = (w - kernel_w) / stride_w + 1;
                let mut out = Vec::with_capacity(out_channels * oh * ow);
                for co in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[co];
                            for ci in 0..ci_n {
                                for ky in 0..*kernel_h {
                                    for kx in 0..*kernel_w {
                                        let k = ((co * ci_n + ci) * kernel_h + ky) * kernel_w + kx;
                                        let iy = oy * stride_h + ky;
                                        let ix = ox * stride_w + kx;
                                        acc += kernel[k] * input[(ci * h + iy) * w + ix];
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                out
            }
            Layer::MaxPool2d {
                pool_size,
                input_shape,
            } => {
                let p = *pool_size;
                let [c_n, h, w] = *input_shape;
                let (oh, ow) = (h / p, w / p);
                let mut out = Vec::with_capacity(c_n * oh * ow);
                for c in 0..c_n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for ky in 0..p {
                                for kx in 0..p {
                                    let v = input[(c * h + oy * p + ky) * w + ox * p + kx];
                                    if v > m {
                                        m = v;
                                    }
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                out
            }
            Layer::ZeroPad2d {
                padding,
                input_shape,
            } => {
                let [c_n, h, w] = *input_shape;
                let [top, bottom, left, right] = *padding;
                let (oh, ow) = (h + top + bottom, w + left + right);
                let mut out = vec![0.0; c_n * oh * ow];
                for c in 0..c_n {
                    for y in 0..h {
                        for x in 0..w {
                            out[(c * oh + y + top) * ow + x + left] = input[(c * h + y) * w + x];
                        }
                    }
                }
                out
            }
            Layer::Flatten { .. } => input.to_vec(),
            Layer::Relu { .. } => input.iter().map(|v| v.max(0.0)).collect(),
        }
    }
}

fn flat_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// An ordered feed-forward classifier. The final layer's outputs are raw
/// logits; no softmax layer is ever stored.
///
/// The fields are public for ergonomic construction in tests and fixtures;
/// anything built by hand should be passed through [`Network::validate`]
/// (which [`Network::new`] does) before analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Build a network and check the layer chain.
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Result<Self> {
        let net = Network {
            name: name.into(),
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Check every layer and the shape chain between adjacent layers.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape(format!(
                "network `{}` has no layers",
                self.name
            )));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.validate(idx)?;
            if idx > 0 {
                let prev = self.layers[idx - 1].output_shape();
                let cur = layer.input_shape();
                if prev != cur {
                    return Err(Error::Validation {
                        layer: idx,
                        field: "input_shape".into(),
                        message: format!(
                            "expects {cur:?} but previous layer produces {prev:?}"
                        ),
                    });
                }
            }
        }
        if self.num_classes() < 2 {
            return Err(Error::Shape(format!(
                "network `{}` has {} output class(es); need at least 2",
                self.name,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Number of scalar inputs.
    pub fn input_len(&self) -> usize {
        self.layers[0].in_len()
    }

    /// Number of output classes (length of the logit vector).
    pub fn num_classes(&self) -> usize {
        self.layers.last().map(Layer::out_len).unwrap_or(0)
    }

    /// Exact forward pass; returns the raw logits.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.pop().unwrap())
    }

    /// Forward pass keeping every layer's output, in layer order. The last
    /// entry is the logit vector.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "network `{}` takes {} inputs, got {}",
                self.name,
                self.input_len(),
                input.len()
            )));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for layer in &self.layers {
            let next = layer.forward(cur);
            trace.push(next);
            cur = trace.last().unwrap();
        }
        Ok(trace)
    }

    /// Index of the predicted class: the argmax of the logits, with ties
    /// broken toward the smallest index.
    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }
}

/// Argmax with ties broken toward the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// An ordered pair of distinct class indices `(i, j)`.
///
/// Ratio quantities built from the pair compare the evidence for class `i`
/// against class `j`; swapping the two negates every log-ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ClassPair {
    pub i: usize,
    pub j: usize,
}

impl ClassPair {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i == j {
            return Err(Error::ClassPair(format!("indices must differ, both are {i}")));
        }
        Ok(ClassPair { i, j })
    }

    /// The reversed pair `(j, i)`.
    pub fn swapped(self) -> Self {
        ClassPair {
            i: self.j,
            j: self.i,
        }
    }

    /// Both classes must index into a logit vector of length `len`.
    pub fn check_range(self, len: usize) -> Result<()> {
        if self.i >= len || self.j >= len {
            return Err(Error::ClassPair(format!(
                "pair ({}, {}) out of range for {len} classes",
                self.i, self.j
            )));
        }
        Ok(())
    }
}

/// Numerically stable softmax: shifts by the maximum logit before
/// exponentiating. The result sums to 1 up to roundoff.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Numeric("softmax of an empty logit vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax of non-finite logits".into()));
    }
    let shift = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / total).collect())
}

/// Log prediction ratio of class `i` over class `j` for one logit vector.
///
/// Equals `ln(softmax_i / softmax_j)` but is computed as the logit
/// difference `x_i - x_j`, which is exact and never over/underflows.
pub fn log_pr(logits: &[f64], pair: ClassPair) -> Result<f64> {
    pair.check_range(logits.len())?;
    Ok(logits[pair.i] - logits[pair.j])
}

/// Log relative prediction ratio between two logit vectors at a shared
/// input: how much more strongly the first network favors `i` over `j`
/// than the second does.
///
/// Equals `(x_i - x_j) - (y_i - y_j)`; positive means the first network
/// separates the pair at least as decisively as the second.
pub fn log_rpr(x_logits: &[f64], y_logits: &[f64], pair: ClassPair) -> Result<f64> {
    Ok(log_pr(x_logits, pair)? - log_pr(y_logits, pair)?)
}

/// Check that two networks can be compared: same input length and the same
/// number of classes. Hidden structure is free to differ.
pub fn check_compatible(a: &Network, b: &Network) -> Result<()> {
    if a.input_len() != b.input_len() {
        return Err(Error::Incompatible(format!(
            "`{}` takes {} inputs but `{}` takes {}",
            a.name,
            a.input_len(),
            b.name,
            b.input_len()
        )));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::Incompatible(format!(
            "`{}` emits {} classes but `{}` emits {}",
            a.name,
            a.num_classes(),
            b.name,
            b.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent re-implementation of the forward pass used as the test
    /// oracle: shapes are walked with explicit multi-indices instead of the
    /// fused flat-offset arithmetic of the production code.
    fn oracle_forward(net: &Network, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        for layer in &net.layers {
            cur = match layer {
                Layer::Dense {
                    weights,
                    bias,
                    in_features,
                    out_features,
                } => (0..*out_features)
                    .map(|i| {
                        bias[i]
                            + (0..*in_features)
                                .map(|j| weights[i * in_features + j] * cur[j])
                                .sum::<f64>()
                    })
                    .collect(),
                Layer::Conv2d {
                    kernel,
                    bias,
                    input_shape,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride_h,
                    stride_w,
                } => {
                    let [ci_n, h, w] = *input_shape;
                    let at = |c: usize, y: usize, x: usize| cur[c * h * w + y * w + x];
                    let kat = |co: usize, ci: usize, ky: usize, kx: usize| {
                        kernel[co * ci_n * kernel_h * kernel_w
                            + ci * kernel_h * kernel_w
                            + ky * kernel_w
                            + kx]
                    };
                    let oh = (h - kernel_h) / stride_h + 1;
                    let ow = (w - kernel_w) / stride_w + 1;
                    let mut out = Vec::new();
                    for co in 0..*out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = bias[co];
                                for ci in 0..ci_n {
                                    for ky in 0..*kernel_h {
                                        for kx in 0..*kernel_w {
                                            acc += kat(co, ci, ky, kx)
                                                * at(ci, oy * stride_h + ky, ox * stride_w + kx);
                                        }
                                    }
                                }
                                out.push(acc);
                            }
                        }
                    }
                    out
                }
                Layer::MaxPool2d {
                    pool_size,
                    input_shape,
                } => {
                    let p = *pool_size;
                    let [c_n, h, w] = *input_shape;
                    let mut out = Vec::new();
                    for c in 0..c_n {
                        for oy in 0..h / p {
                            for ox in 0..w / p {
                                let mut vals = Vec::new();
                                for ky in 0..p {
                                    for kx in 0..p {
                                        vals.push(
                                            cur[c * h * w + (oy * p + ky) * w + (ox * p + kx)],
                                        );
                                    }
                                }
                                out.push(vals.into_iter().fold(f64::NEG_INFINITY, f64::max));
                            }
                        }
                    }
                    out
                }
                Layer::ZeroPad2d {
                    padding,
                    input_shape,
                } => {
                    let [c_n, h, w] = *input_shape;
                    let [top, bottom, left, right] = *padding;
                    let (oh, ow) = (h + top + bottom, w + left + right);
                    let mut out = Vec::new();
                    for c in 0..c_n {
                        for y in 0..oh {
                            for x in 0..ow {
                                let inside = y >= top && y < top + h && x >= left && x < left + w;
                                out.push(if inside {
                                    cur[c * h * w + (y - top) * w + (x - left)]
                                } else {
                                    0.0
                                });
                            }
                        }
                    }
                    out
                }
                Layer::Flatten { .. } => cur.clone(),
                Layer::Relu { .. } => cur.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
            };
        }
        cur
    }

    fn dense(weights: Vec<f64>, bias: Vec<f64>, n_in: usize, n_out: usize) -> Layer {
        Layer::Dense {
            weights,
            bias,
            in_features: n_in,
            out_features: n_out,
        }
    }

    #[test]
    fn dense_forward_matches_hand_computation() {
        // W = [[1, -1]], b = [0], input [3, 1] -> [2].
        let layer = dense(vec![1.0, -1.0], vec![0.0], 2, 1);
        assert_eq!(layer.forward(&[3.0, 1.0]), vec![2.0]);
    }

    #[test]
    fn identity_relu_clamps_negative_entries() {
        let net = Network::new(
            "id",
            vec![
                dense(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2),
                Layer::Relu {
                    input_shape: vec![2],
                },
            ],
        )
        .unwrap();
        assert_eq!(net.forward(&[-2.0, 5.0]).unwrap(), vec![0.0, 5.0]);
    }

    #[test]
    fn three_layer_forward_matches_independent_oracle() {
        let net = Network::new(
            "mlp",
            vec![
                dense(
                    vec![0.5, -0.25, 1.5, 0.75, -1.0, 0.1],
                    vec![0.1, -0.2],
                    3,
                    2,
                ),
                Layer::Relu {
                    input_shape: vec![2],
                },
                dense(vec![1.0, -1.0, 0.5, 2.0], vec![0.0, 0.3], 2, 2),
            ],
        )
        .unwrap();
        for input in [
            vec![0.0, 0.0, 0.0],
            vec![1.0, -2.0, 3.0],
            vec![-0.5, 0.25, -0.125],
        ] {
            let got = net.forward(&input).unwrap();
            let want = oracle_forward(&net, &input);
            for (g, w) in got.iter().zip(&want) {
                // The oracle sums in a different association order, so
                // agreement is to roundoff rather than bit-exact.
                assert!(
                    (g - w).abs() <= 1e-12 * w.abs().max(1.0),
                    "forward mismatch at input {input:?}: {got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn conv_pool_pad_pipeline_matches_independent_oracle() {
        let net = Network::new(
            "conv",
            vec![
                Layer::ZeroPad2d {
                    padding: [1, 0, 1, 0],
                    input_shape: [1, 3, 3],
                },
                Layer::Conv2d {
                    kernel: vec![1.0, 0.5, -0.5, 0.25, -1.0, 0.75, 0.0, 2.0],
                    bias: vec![0.1, -0.1],
                    input_shape: [1, 4, 4],
                    out_channels: 2,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride_h: 1,
                    stride_w: 1,
                },
                Layer::Relu {
                    input_shape: vec![2, 3, 3],
                },
                Layer::ZeroPad2d {
                    padding: [0, 1, 0, 1],
                    input_shape: [2, 3, 3],
                },
                Layer::MaxPool2d {
                    pool_size: 2,
                    input_shape: [2, 4, 4],
                },
                Layer::Flatten {
                    input_shape: vec![2, 2, 2],
                },
                dense(
                    (0..16).map(|i| (i as f64) * 0.125 - 1.0).collect(),
                    vec![0.0, 0.5],
                    8,
                    2,
                ),
            ],
        )
        .unwrap();
        let input: Vec<f64> = (0..9).map(|i| (i as f64) * 0.3 - 1.2).collect();
        let got = net.forward(&input).unwrap();
        let want = oracle_forward(&net, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn strided_conv_output_shape_and_values() {
        let layer = Layer::Conv2d {
            kernel: vec![1.0, 1.0, 1.0, 1.0],
            bias: vec![0.0],
            input_shape: [1, 4, 4],
            out_channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride_h: 2,
            stride_w: 2,
        };
        assert_eq!(layer.output_shape(), vec![1, 2, 2]);
        let input: Vec<f64> = (1..=16).map(f64::from).collect();
        // Non-overlapping 2x2 sums of a row-major 4x4 ramp.
        assert_eq!(layer.forward(&input), vec![14.0, 22.0, 46.0, 54.0]);
    }

    #[test]
    fn validation_rejects_inconsistent_chain() {
        let err = Network::new(
            "bad",
            vec![
                dense(vec![1.0], vec![0.0], 1, 1),
                dense(vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 0.0], 2, 2),
            ],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "error should name the layer: {msg}");
    }

    #[test]
    fn validation_rejects_single_class_and_empty_networks() {
        assert!(Network::new("one-class", vec![dense(vec![1.0], vec![0.0], 1, 1)]).is_err());
        assert!(Network::new("empty", vec![]).is_err());
    }

    #[test]
    fn validation_rejects_nonfinite_weights() {
        let err = Network::new(
            "nan",
            vec![dense(vec![1.0, f64::NAN], vec![0.0, 0.0], 1, 2)],
        )
        .unwrap_err();
        match err {
            Error::Validation { layer, field, .. } => {
                assert_eq!(layer, 0);
                assert_eq!(field, "weights");
            }
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_matches_hand_values_and_extreme_logits() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        // ln 2 over 0 gives probabilities 2/3, 1/3.
        let p = softmax(&[2.0_f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);

        // Large logits must not overflow thanks to the max shift.
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        let total: f64 = softmax(&[700.0, -700.0, 3.0]).unwrap().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);

        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn log_pr_agrees_with_softmax_quotient() {
        let pair = ClassPair::new(0, 2).unwrap();
        let logits = vec![1.25, -0.75, 0.5];
        let p = softmax(&logits).unwrap();
        let direct = log_pr(&logits, pair).unwrap();
        let via_softmax = (p[0] / p[2]).ln();
        let rel = (direct - via_softmax).abs() / direct.abs().max(1.0);
        assert!(rel < 1e-9, "direct {direct} vs softmax quotient {via_softmax}");
    }

    #[test]
    fn log_rpr_is_the_difference_of_log_prs() {
        let pair = ClassPair::new(1, 0).unwrap();
        let x = vec![0.2, 1.9];
        let y = vec![-0.3, 0.4];
        let got = log_rpr(&x, &y, pair).unwrap();
        assert_eq!(got, (1.9 - 0.2) - (0.4 - -0.3));
        // Swapping the pair negates the quantity.
        assert_eq!(log_rpr(&x, &y, pair.swapped()).unwrap(), -got);
        // Out-of-range classes are rejected.
        assert!(log_rpr(&x, &y, ClassPair::new(0, 5).unwrap()).is_err());
    }

    #[test]
    fn class_pair_rejects_equal_indices() {
        assert!(ClassPair::new(3, 3).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_smallest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn compatibility_requires_matching_interfaces() {
        let a = Network::new("a", vec![dense(vec![1.0, 0.0], vec![0.0, 0.0], 1, 2)]).unwrap();
        let b = Network::new(
            "b",
            vec![dense(vec![1.0, 0.0, 0.5, 0.5], vec![0.0, 0.0], 2, 2)],
        )
        .unwrap();
        assert!(check_compatible(&a, &a).is_ok());
        assert!(check_compatible(&a, &b).is_err());

        let c = Network::new(
            "c",
            vec![dense(vec![1.0, 0.0, 0.5], vec![0.0; 3], 1, 3)],
        )
        .unwrap();
        assert!(check_compatible(&a, &c).is_err());
    }
}
