//! JSON load/save for networks and sample sets.
//!
//! A network file looks like:
//!
//! ```json
//! {
//!   "format_version": "1",
//!   "name": "tiny",
//!   "layers": [
//!     { "kind": "dense", "input_shape": [2], "output_shape": [2],
//!       "weights": [1.0, 0.0, 0.0, 1.0], "bias": [0.0, 0.0] },
//!     { "kind": "relu", "input_shape": [2], "output_shape": [2] }
//!   ]
//! }
//! ```
//!
//! Weights are flattened row-major: dense weights as
//! `[out_features][in_features]`, convolution kernels as
//! `[out_channels][in_channels][kh][kw]` (with `kernel_shape` spelling out
//! those four numbers and `stride` given as `[stride_h, stride_w]`). Every
//! layer states both its `input_shape` and `output_shape`; loading checks
//! them against each other and against the layer parameters, and any
//! problem is reported with the layer index and field name. Numbers are
//! written with enough digits that a save/load round trip reproduces every
//! weight bit for bit.
//!
//! A sample file is `{ "samples": [ { "id": "s0", "values": [...],
//! "label": 3 } ] }` with `label` optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Layer, Network};
use crate::{Error, Result};

const FORMAT_VERSION: &str = "1";

/// One labelled input point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// Load a network from a JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    network_from_json(&text).map_err(|e| Error::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Save a network as JSON. The network is re-validated first so that a
/// malformed value (for example one with an empty layer list) is rejected
/// instead of serialized.
pub fn save_network(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    let path = path.as_ref();
    let text = network_to_json(net).map_err(|e| Error::Save {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::Save {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a sample set from a JSON file.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    samples_from_json(&text).map_err(|e| Error::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Save a sample set as JSON.
pub fn save_samples(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    for sample in samples {
        if let Some(at) = sample.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "sample `{}` has a non-finite value at index {at}",
                sample.id
            )));
        }
    }
    let doc = serde_json::json!({ "samples": samples });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Save {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::Save {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse a network from JSON text.
pub fn network_from_json(text: &str) -> Result<Network> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| Error::Numeric(format!("malformed JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Numeric("top level must be a JSON object".into()))?;

    let version = obj
        .get("format_version")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Numeric("missing or non-string `format_version`".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Numeric(format!(
            "unsupported format_version `{version}` (expected `{FORMAT_VERSION}`)"
        )));
    }
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Numeric("missing or non-string `name`".into()))?;
    let layers_json = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Numeric("missing or non-array `layers`".into()))?;

    let mut layers = Vec::with_capacity(layers_json.len());
    for (idx, layer) in layers_json.iter().enumerate() {
        layers.push(parse_layer(idx, layer)?);
    }
    // Network::new re-checks shapes, chain consistency and finiteness, and
    // reports failures with layer index and field name.
    let net = Network::new(name, layers)?;

    // Declared output shapes must match the computed ones.
    for (idx, (layer, json)) in net.layers.iter().zip(layers_json).enumerate() {
        let declared = shape_field(idx, json.as_object().unwrap(), "output_shape")?;
        let computed = layer.output_shape();
        if declared != computed {
            return Err(Error::Validation {
                layer: idx,
                field: "output_shape".into(),
                message: format!("declares {declared:?} but layer produces {computed:?}"),
            });
        }
    }
    Ok(net)
}

/// Serialize a network to JSON text (validating it first).
pub fn network_to_json(net: &Network) -> Result<String> {
    net.validate()?;
    let layers: Vec<Value> = net.layers.iter().map(layer_to_json).collect();
    let doc = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "name": net.name,
        "layers": layers,
    });
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(e.to_string()))
}

/// Parse a sample set from JSON text.
pub fn samples_from_json(text: &str) -> Result<Vec<Sample>> {
    #[derive(Deserialize)]
    struct SampleFile {
        samples: Vec<Sample>,
    }
    let file: SampleFile = serde_json::from_str(text)
        .map_err(|e| Error::Numeric(format!("malformed sample file: {e}")))?;
    for sample in &file.samples {
        if let Some(at) = sample.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "sample `{}` has a non-finite value at index {at}",
                sample.id
            )));
        }
    }
    Ok(file.samples)
}

struct LayerReader<'a> {
    idx: usize,
    obj: &'a serde_json::Map<String, Value>,
}

impl<'a> LayerReader<'a> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Validation {
            layer: self.idx,
            field: field.into(),
            message: message.into(),
        }
    }

    fn field(&self, field: &str) -> Result<&'a Value> {
        self.obj
            .get(field)
            .ok_or_else(|| self.err(field, "missing required field"))
    }

    fn usize_field(&self, field: &str) -> Result<usize> {
        self.field(field)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn usize_array(&self, field: &str) -> Result<Vec<usize>> {
        let arr = self
            .field(field)?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array of non-negative integers"))?;
        arr.iter()
            .map(|v| {
                v.as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| self.err(field, "expected a non-negative integer entry"))
            })
            .collect()
    }

    fn fixed_usize_array<const N: usize>(&self, field: &str) -> Result<[usize; N]> {
        let vec = self.usize_array(field)?;
        vec.try_into()
            .map_err(|v: Vec<usize>| self.err(field, format!("expected {N} entries, found {}", v.len())))
    }

    fn f64_array(&self, field: &str) -> Result<Vec<f64>> {
        let arr = self
            .field(field)?
            .as_array()
            .ok_or_else(|| self.err(field, "expected an array of numbers"))?;
        arr.iter()
            .enumerate()
            .map(|(at, v)| {
                v.as_f64()
                    .ok_or_else(|| self.err(field, format!("entry {at} is not a number")))
            })
            .collect()
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for key in self.obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.err(key, "unknown field"));
            }
        }
        Ok(())
    }
}

fn shape_field(idx: usize, obj: &serde_json::Map<String, Value>, field: &str) -> Result<Vec<usize>> {
    LayerReader { idx, obj }.usize_array(field)
}

fn parse_layer(idx: usize, value: &Value) -> Result<Layer> {
    let obj = value.as_object().ok_or_else(|| Error::Validation {
        layer: idx,
        field: "kind".into(),
        message: "layer entry is not a JSON object".into(),
    })?;
    let r = LayerReader { idx, obj };
    let kind = r
        .field("kind")?
        .as_str()
        .ok_or_else(|| r.err("kind", "expected a string"))?;

    match kind {
        "dense" => {
            r.reject_unknown(&["kind", "input_shape", "output_shape", "weights", "bias"])?;
            let input_shape = r.usize_array("input_shape")?;
            let output_shape = r.usize_array("output_shape")?;
            if input_shape.len() != 1 {
                return Err(r.err("input_shape", "dense layers take a rank-1 shape"));
            }
            if output_shape.len() != 1 {
                return Err(r.err("output_shape", "dense layers produce a rank-1 shape"));
            }
            Ok(Layer::Dense {
                weights: r.f64_array("weights")?,
                bias: r.f64_array("bias")?,
                in_features: input_shape[0],
                out_features: output_shape[0],
            })
        }
        "conv2d" => {
            r.reject_unknown(&[
                "kind",
                "input_shape",
                "output_shape",
                "kernel_shape",
                "weights",
                "bias",
                "stride",
            ])?;
            let input_shape: [usize; 3] = r.fixed_usize_array("input_shape")?;
            let kernel_shape: [usize; 4] = r.fixed_usize_array("kernel_shape")?;
            let stride: [usize; 2] = r.fixed_usize_array("stride")?;
            if kernel_shape[1] != input_shape[0] {
                return Err(r.err(
                    "kernel_shape",
                    format!(
                        "kernel expects {} input channels but input_shape has {}",
                        kernel_shape[1], input_shape[0]
                    ),
                ));
            }
            Ok(Layer::Conv2d {
                kernel: r.f64_array("weights")?,
                bias: r.f64_array("bias")?,
                input_shape,
                out_channels: kernel_shape[0],
                kernel_h: kernel_shape[2],
                kernel_w: kernel_shape[3],
                stride_h: stride[0],
                stride_w: stride[1],
            })
        }
        "maxpool2d" => {
            r.reject_unknown(&["kind", "input_shape", "output_shape", "pool_size"])?;
            Ok(Layer::MaxPool2d {
                pool_size: r.usize_field("pool_size")?,
                input_shape: r.fixed_usize_array("input_shape")?,
            })
        }
        "zeropad2d" => {
            r.reject_unknown(&["kind", "input_shape", "output_shape", "padding"])?;
            Ok(Layer::ZeroPad2d {
                padding: r.fixed_usize_array("padding")?,
                input_shape: r.fixed_usize_array("input_shape")?,
            })
        }
        "flatten" => {
            r.reject_unknown(&["kind", "input_shape", "output_shape"])?;
            Ok(Layer::Flatten {
                input_shape: r.usize_array("input_shape")?,
            })
        }
        "relu" => {
            r.reject_unknown(&["kind", "input_shape", "output_shape"])?;
            Ok(Layer::Relu {
                input_shape: r.usize_array("input_shape")?,
            })
        }
        other => Err(r.err("kind", format!("unknown layer kind `{other}`"))),
    }
}

fn layer_to_json(layer: &Layer) -> Value {
    let input_shape = layer.input_shape();
    let output_shape = layer.output_shape();
    match layer {
        Layer::Dense { weights, bias, .. } => serde_json::json!({
            "kind": "dense",
            "input_shape": input_shape,
            "output_shape": output_shape,
            "weights": weights,
            "bias": bias,
        }),
        Layer::Conv2d {
            kernel,
            bias,
            input_shape: in_shape,
            out_channels,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
        } => serde_json::json!({
            "kind": "conv2d",
            "input_shape": in_shape.to_vec(),
            "output_shape": output_shape,
            "kernel_shape": [*out_channels, in_shape[0], *kernel_h, *kernel_w],
            "weights": kernel,
            "bias": bias,
            "stride": [*stride_h, *stride_w],
        }),
        Layer::MaxPool2d { pool_size, .. } => serde_json::json!({
            "kind": "maxpool2d",
            "input_shape": input_shape,
            "output_shape": output_shape,
            "pool_size": pool_size,
        }),
        Layer::ZeroPad2d { padding, .. } => serde_json::json!({
            "kind": "zeropad2d",
            "input_shape": input_shape,
            "output_shape": output_shape,
            "padding": padding.to_vec(),
        }),
        Layer::Flatten { .. } => serde_json::json!({
            "kind": "flatten",
            "input_shape": input_shape,
            "output_shape": output_shape,
        }),
        Layer::Relu { .. } => serde_json::json!({
            "kind": "relu",
            "input_shape": input_shape,
            "output_shape": output_shape,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassPair;

    fn tiny_net_json() -> &'static str {
        r#"{
            "format_version": "1",
            "name": "tiny",
            "layers": [
                { "kind": "dense", "input_shape": [2], "output_shape": [2],
                  "weights": [1.0, 0.0, 0.0, 1.0], "bias": [0.0, 0.0] },
                { "kind": "relu", "input_shape": [2], "output_shape": [2] }
            ]
        }"#
    }

    #[test]
    fn minimal_network_round_trips() {
        let net = network_from_json(tiny_net_json()).unwrap();
        assert_eq!(net.name, "tiny");
        assert_eq!(net.layers.len(), 2);
        let text = network_to_json(&net).unwrap();
        let again = network_from_json(&text).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn save_load_is_idempotent_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        // Weights chosen to exercise non-terminating binary fractions.
        let net = Network::new(
            "precise",
            vec![Layer::Dense {
                weights: vec![0.1, -1.0 / 3.0, 1e-17, 123456.789012345678],
                bias: vec![f64::MIN_POSITIVE, -0.0],
                in_features: 2,
                out_features: 2,
            }],
        )
        .unwrap();
        save_network(&path, &net).unwrap();
        let loaded = load_network(&path).unwrap();
        assert_eq!(net, loaded, "every weight must survive bit for bit");

        let path2 = dir.path().join("net2.json");
        save_network(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap(),
            "load then save must reproduce the file"
        );
    }

    #[test]
    fn conv_network_round_trips() {
        let net = Network::new(
            "conv",
            vec![
                Layer::ZeroPad2d {
                    padding: [0, 1, 0, 1],
                    input_shape: [1, 3, 3],
                },
                Layer::Conv2d {
                    kernel: vec![0.5, -0.5, 0.25, 1.0],
                    bias: vec![0.0],
                    input_shape: [1, 4, 4],
                    out_channels: 1,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride_h: 1,
                    stride_w: 1,
                },
                Layer::MaxPool2d {
                    pool_size: 3,
                    input_shape: [1, 3, 3],
                },
                Layer::Flatten {
                    input_shape: vec![1, 1, 1],
                },
                Layer::Dense {
                    weights: vec![1.0, -1.0],
                    bias: vec![0.0, 0.0],
                    in_features: 1,
                    out_features: 2,
                },
            ],
        )
        .unwrap();
        let text = network_to_json(&net).unwrap();
        assert_eq!(network_from_json(&text).unwrap(), net);
    }

    #[test]
    fn bias_length_mismatch_names_layer_and_field() {
        let text = r#"{
            "format_version": "1", "name": "bad",
            "layers": [
                { "kind": "dense", "input_shape": [2], "output_shape": [2],
                  "weights": [1.0, 0.0, 0.0, 1.0], "bias": [0.0, 0.0] },
                { "kind": "dense", "input_shape": [2], "output_shape": [1],
                  "weights": [1.0, 1.0], "bias": [0.0, 0.0] }
            ]
        }"#;
        let msg = network_from_json(text).unwrap_err().to_string();
        assert!(msg.contains("layer 1"), "{msg}");
        assert!(msg.contains("bias"), "{msg}");
    }

    #[test]
    fn missing_and_unknown_fields_are_rejected_with_context() {
        let missing = r#"{
            "format_version": "1", "name": "m",
            "layers": [ { "kind": "dense", "input_shape": [1], "output_shape": [2],
                          "weights": [1.0, 1.0] } ]
        }"#;
        let msg = network_from_json(missing).unwrap_err().to_string();
        assert!(msg.contains("layer 0") && msg.contains("bias"), "{msg}");

        let unknown = r#"{
            "format_version": "1", "name": "u",
            "layers": [ { "kind": "relu", "input_shape": [2], "output_shape": [2],
                          "alpha": 0.1 } ]
        }"#;
        let msg = network_from_json(unknown).unwrap_err().to_string();
        assert!(msg.contains("alpha") && msg.contains("unknown"), "{msg}");
    }

    #[test]
    fn declared_output_shape_must_match_computed() {
        let text = r#"{
            "format_version": "1", "name": "s",
            "layers": [ { "kind": "dense", "input_shape": [2], "output_shape": [3],
                          "weights": [1.0, 0.0, 0.0, 1.0, 1.0, 1.0], "bias": [0.0, 0.0, 0.0] },
                        { "kind": "maxpool2d", "input_shape": [3], "output_shape": [3],
                          "pool_size": 1 } ]
        }"#;
        let msg = network_from_json(text).unwrap_err().to_string();
        assert!(msg.contains("layer 1"), "{msg}");
    }

    #[test]
    fn format_version_is_enforced() {
        let text = r#"{ "format_version": "2", "name": "v", "layers": [] }"#;
        let msg = network_from_json(text).unwrap_err().to_string();
        assert!(msg.contains("format_version"), "{msg}");
    }

    #[test]
    fn empty_network_is_not_saveable() {
        let net = Network {
            name: "hollow".into(),
            layers: vec![],
        };
        assert!(network_to_json(&net).is_err());
    }

    #[test]
    fn samples_round_trip_and_reject_nan() {
        let text = r#"{ "samples": [
            { "id": "a", "values": [0.25, -1.5], "label": 1 },
            { "id": "b", "values": [0.0, 0.0] }
        ] }"#;
        let samples = samples_from_json(text).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].label, Some(1));
        assert_eq!(samples[1].label, None);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.json");
        save_samples(&path, &samples).unwrap();
        assert_eq!(load_samples(&path).unwrap(), samples);

        let empty = samples_from_json(r#"{ "samples": [] }"#).unwrap();
        assert!(empty.is_empty());

        // Strict JSON cannot even parse a non-finite literal.
        let nan = r#"{ "samples": [ { "id": "poison", "values": [1e999] } ] }"#;
        assert!(samples_from_json(nan).is_err());

        // A non-finite value constructed in memory is rejected before it
        // reaches disk, and the error names the sample.
        let poisoned = vec![Sample {
            id: "poison".into(),
            values: vec![0.0, f64::NAN],
            label: None,
        }];
        let msg = save_samples(dir.path().join("bad.json"), &poisoned)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("poison"), "error must name the sample id: {msg}");
    }

    #[test]
    fn loaded_network_evaluates() {
        let net = network_from_json(tiny_net_json()).unwrap();
        assert_eq!(net.forward(&[-3.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert_eq!(
            crate::model::log_pr(&net.forward(&[1.0, 4.0]).unwrap(), ClassPair::new(1, 0).unwrap())
                .unwrap(),
            3.0
        );
    }
}
