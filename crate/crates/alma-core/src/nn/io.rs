//! Model serialization.
//!
//! The on-disk format is a text header followed by raw parameter blocks:
//!
//! ```text
//! ALMANN1\n
//! input_shape=3,8,8\n
//! layers=5\n
//! layer.0=conv2d out_channels=8 kernel=3x3 stride=1 padding=1\n
//! layer.1=relu\n
//! layer.2=maxpool2d kernel=2 stride=2\n
//! layer.3=flatten\n
//! layer.4=dense out=10\n
//! end\n
//! <binary blocks>
//! ```
//!
//! After `end`, each parametric layer contributes two blocks in layer
//! order — weights, then bias. A block is a little-endian `u64` byte
//! length followed by that many bytes of little-endian `f64` values.
//! Round-trips are bit-exact. Input feature counts for dense/conv layers
//! are not stored; they are reconstructed from the shape chain, and the
//! loaded model passes the same validation as a freshly built one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::fileio::{
    attach_path, join_dims, parse_dims, write_f64_block, BodyReader, HeaderReader,
};
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::{Layer, Model};

/// First line of every model file.
pub const MODEL_MAGIC: &str = "ALMANN1";

/// Saves a model to `path`.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)
}

/// Loads and validates a model from `path`.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    read_model(&mut reader).map_err(|e| attach_path(e, path))
}

/// Writes a model to any sink in the file format.
pub fn write_model(model: &Model, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "input_shape={}", join_dims(model.input_shape()))?;
    writeln!(out, "layers={}", model.layers().len())?;
    for (i, layer) in model.layers().iter().enumerate() {
        match layer {
            Layer::Dense { weights, .. } => {
                writeln!(out, "layer.{i}=dense out={}", weights.shape()[0])?;
            }
            Layer::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => {
                let ws = weights.shape();
                writeln!(
                    out,
                    "layer.{i}=conv2d out_channels={} kernel={}x{} stride={stride} padding={padding}",
                    ws[0], ws[2], ws[3]
                )?;
            }
            Layer::Relu => writeln!(out, "layer.{i}=relu")?,
            Layer::MaxPool2d { kernel, stride } => {
                writeln!(out, "layer.{i}=maxpool2d kernel={kernel} stride={stride}")?;
            }
            Layer::Flatten => writeln!(out, "layer.{i}=flatten")?,
        }
    }
    writeln!(out, "end")?;
    for layer in model.layers() {
        if let Layer::Dense { weights, bias } | Layer::Conv2d { weights, bias, .. } = layer {
            write_f64_block(out, weights.data())?;
            write_f64_block(out, bias.data())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parsed header description of one layer, before parameters are read.
enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv2d {
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

/// Reads and validates a model from any source.
pub fn read_model(reader: &mut impl Read) -> Result<Model> {
    let (input_shape, specs, consumed) = parse_header(reader)?;

    // Walk the shape chain to recover input feature counts, reading
    // parameter blocks as we go.
    let mut body = BodyReader::new(reader, consumed);
    let tensor_block = |body: &mut BodyReader<'_, _>, shape: Vec<usize>, i: usize, which: &str| {
        let n: usize = shape.iter().product();
        let data = body.f64_block(n, &format!("layer {i} {which} (shape {shape:?})"))?;
        Tensor::from_vec(shape, data)
    };
    let num_layers = specs.len();
    let mut current = input_shape.clone();
    let mut layers = Vec::with_capacity(num_layers);
    for (i, spec) in specs.into_iter().enumerate() {
        let layer = match spec {
            LayerSpec::Dense { out } => {
                if current.len() != 1 {
                    return Err(Error::ShapeChain {
                        layer: i,
                        msg: format!("dense layer: expects a flat input, got {current:?}"),
                    });
                }
                let weights = tensor_block(&mut body, vec![out, current[0]], i, "weights")?;
                let bias = tensor_block(&mut body, vec![out], i, "bias")?;
                Layer::Dense { weights, bias }
            }
            LayerSpec::Conv2d {
                out_channels,
                kh,
                kw,
                stride,
                padding,
            } => {
                if current.len() != 3 {
                    return Err(Error::ShapeChain {
                        layer: i,
                        msg: format!("conv2d layer: expects [c, h, w] input, got {current:?}"),
                    });
                }
                let weights = tensor_block(
                    &mut body,
                    vec![out_channels, current[0], kh, kw],
                    i,
                    "weights",
                )?;
                let bias = tensor_block(&mut body, vec![out_channels], i, "bias")?;
                Layer::Conv2d {
                    weights,
                    bias,
                    stride,
                    padding,
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d { kernel, stride } => Layer::MaxPool2d { kernel, stride },
            LayerSpec::Flatten => Layer::Flatten,
        };
        current = layer.output_shape(&current, i)?;
        layers.push(layer);
    }
    body.expect_eof()?;

    Model::new(input_shape, layers)
}

/// Parses the text header, returning the input shape, layer descriptions,
/// and the number of bytes consumed.
fn parse_header(reader: &mut impl Read) -> Result<(Vec<usize>, Vec<LayerSpec>, u64)> {
    let mut header = HeaderReader::new(reader);
    let magic = header.line()?;
    if magic != MODEL_MAGIC {
        return Err(header.error(format!("bad magic {magic:?}, expected {MODEL_MAGIC:?}")));
    }

    let input_shape = parse_dims(&header.kv("input_shape")?).map_err(|msg| header.error(msg))?;
    let num_layers: usize = header
        .kv("layers")?
        .parse()
        .map_err(|_| header.error("layer count is not a number".into()))?;

    let mut specs = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let value = header.kv(&format!("layer.{i}"))?;
        specs.push(parse_layer_spec(&value).map_err(|msg| header.error(msg))?);
    }
    header.expect_end()?;

    Ok((input_shape, specs, header.consumed))
}

fn parse_layer_spec(value: &str) -> std::result::Result<LayerSpec, String> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or("empty layer description")?;
    let mut fields = std::collections::HashMap::new();
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("bad layer field {part:?}"))?;
        fields.insert(k, v);
    }
    let get_usize = |fields: &std::collections::HashMap<&str, &str>, key: &str| {
        fields
            .get(key)
            .ok_or_else(|| format!("{kind} layer missing {key}"))
            .and_then(|v| {
                v.parse::<usize>()
                    .map_err(|_| format!("bad {key} value {v:?}"))
            })
    };
    match kind {
        "dense" => Ok(LayerSpec::Dense {
            out: get_usize(&fields, "out")?,
        }),
        "conv2d" => {
            let kernel = fields.get("kernel").ok_or("conv2d layer missing kernel")?;
            let (kh, kw) = kernel
                .split_once('x')
                .ok_or_else(|| format!("bad kernel {kernel:?}, expected HxW"))?;
            Ok(LayerSpec::Conv2d {
                out_channels: get_usize(&fields, "out_channels")?,
                kh: kh
                    .parse()
                    .map_err(|_| format!("bad kernel height {kh:?}"))?,
                kw: kw.parse().map_err(|_| format!("bad kernel width {kw:?}"))?,
                stride: get_usize(&fields, "stride")?,
                padding: get_usize(&fields, "padding")?,
            })
        }
        "relu" => Ok(LayerSpec::Relu),
        "maxpool2d" => Ok(LayerSpec::MaxPool2d {
            kernel: get_usize(&fields, "kernel")?,
            stride: get_usize(&fields, "stride")?,
        }),
        "flatten" => Ok(LayerSpec::Flatten),
        other => Err(format!("unknown layer kind {other:?}")),
    }
}
