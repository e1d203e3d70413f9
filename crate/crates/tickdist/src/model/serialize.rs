//! "LCNN" v1 model container.
//!
//! Layout: magic `LCNN`, u16 major, u16 minor, a length-prefixed canonical
//! textual spec block, length-prefixed parameter records (name, shape, raw
//! little-endian f32 values; running statistics are stored as 1-D records),
//! and a trailing CRC32 over everything before it. Values are always stored
//! as f32 regardless of the engine precision, so f32 models round-trip
//! bit-exactly.

use super::{BatchNormState, LayerKind, LayerSpec, Model, ModelSpec, ParamTensor};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Scalar, Tensor};

pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
const MAGIC: &[u8; 4] = b"LCNN";

/// Encode a model into the LCNN v1 container.
pub fn serialize<E: Scalar>(model: &Model<E>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    buf.extend_from_slice(&FORMAT_MINOR.to_le_bytes());

    let spec_text = spec_to_text(model.spec(), model.seed(), bn_initialized(model.bn_states()));
    buf.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(spec_text.as_bytes());

    let bn_layers: Vec<usize> = bn_layer_indices(model.spec());
    let record_count = model.params().len() + 2 * model.bn_states().len();
    buf.extend_from_slice(&(record_count as u32).to_le_bytes());
    for p in model.params() {
        write_record(&mut buf, &p.name, p.value.shape(), p.value.data());
    }
    for (state, layer) in model.bn_states().iter().zip(&bn_layers) {
        write_vec_record(&mut buf, &format!("layer{layer}.running_mean"), &state.running_mean);
        write_vec_record(&mut buf, &format!("layer{layer}.running_var"), &state.running_var);
    }

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Decode an LCNN v1 container. Model files store f32 values.
pub fn deserialize(bytes: &[u8]) -> Result<Model<f32>> {
    if bytes.len() < 12 {
        return Err(Error::Format("truncated model file".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("model file checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected LCNN",
            &magic[..4.min(magic.len())]
        )));
    }
    let major = r.u16()?;
    let _minor = r.u16()?;
    if major != FORMAT_MAJOR {
        return Err(Error::Format(format!(
            "incompatible model file major version {major} (supported: {FORMAT_MAJOR})"
        )));
    }
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?)
        .map_err(|_| Error::Format("spec block is not UTF-8".into()))?;
    let (spec, seed, initialized) = spec_from_text(spec_text)?;
    spec.validate()?;

    let record_count = r.u32()? as usize;
    let mut records = Vec::with_capacity(record_count);
    for _ in 0..record_count {
        records.push(read_record(&mut r)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after records".into()));
    }

    // a freshly built model provides the expected parameter layout
    let template = Model::<f32>::new(spec.clone(), seed)?;
    let mut by_name: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> = records
        .into_iter()
        .map(|(name, shape, data)| (name, (shape, data)))
        .collect();

    let mut params = Vec::with_capacity(template.params().len());
    for p in template.params() {
        let (shape, data) = by_name
            .remove(&p.name)
            .ok_or_else(|| Error::Format(format!("missing parameter record `{}`", p.name)))?;
        if shape != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                p.name,
                shape,
                p.value.shape()
            )));
        }
        params.push(ParamTensor {
            name: p.name.clone(),
            value: Tensor::from_vec(shape, data)?,
            trainable: true,
        });
    }
    let mut bn_states = Vec::with_capacity(template.bn_states().len());
    for (layer, tstate) in bn_layer_indices(&spec).into_iter().zip(template.bn_states()) {
        let mut get = |what: &str| -> Result<Vec<f32>> {
            let name = format!("layer{layer}.{what}");
            let (shape, data) = by_name
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("missing record `{name}`")))?;
            if shape != [tstate.running_mean.len()] {
                return Err(Error::Format(format!(
                    "record `{name}` has shape {shape:?}, expected [{}]",
                    tstate.running_mean.len()
                )));
            }
            Ok(data)
        };
        bn_states.push(BatchNormState {
            running_mean: get("running_mean")?,
            running_var: get("running_var")?,
            initialized,
        });
    }
    if !by_name.is_empty() {
        let extra: Vec<_> = by_name.keys().cloned().collect();
        return Err(Error::Format(format!("unexpected records: {extra:?}")));
    }
    Ok(Model::from_parts(spec, params, bn_states, seed))
}

pub fn save_model<E: Scalar>(model: &Model<E>, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize(model))?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read model file {}: {e}", path.display())))?;
    deserialize(&bytes)
}

fn bn_initialized<E>(states: &[BatchNormState<E>]) -> bool {
    states.iter().all(|s| s.initialized) && !states.is_empty()
}

fn bn_layer_indices(spec: &ModelSpec) -> Vec<usize> {
    spec.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l.kind, LayerKind::BatchNorm { .. }))
        .map(|(i, _)| i)
        .collect()
}

fn write_record<E: Scalar>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[E]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

fn write_vec_record<E: Scalar>(buf: &mut Vec<u8>, name: &str, data: &[E]) {
    write_record(buf, name, &[data.len()], data);
}

fn read_record(r: &mut Reader) -> Result<(String, Vec<usize>, Vec<f32>)> {
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::Format("record name is not UTF-8".into()))?
        .to_string();
    let ndim = r.u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32()? as usize);
    }
    let count: usize = shape.iter().product();
    let raw = r.take(count * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, shape, data))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated model file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn activation_name(a: &Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Sigmoid => "sigmoid",
    }
}

fn spec_to_text(spec: &ModelSpec, seed: u64, bn_initialized: bool) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "name={}", spec.name);
    let _ = writeln!(s, "seed={seed}");
    let _ = writeln!(
        s,
        "input={}x{}x{}",
        spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]
    );
    let _ = writeln!(s, "attention_hook={}", spec.attention_hook);
    let _ = writeln!(s, "leaky_slope={}", spec.leaky_slope);
    let _ = writeln!(s, "bn_epsilon={}", spec.bn_epsilon);
    let _ = writeln!(s, "bn_momentum={}", spec.bn_momentum);
    let _ = writeln!(s, "bn_initialized={bn_initialized}");
    for layer in &spec.layers {
        let out = layer
            .declared_output
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        match &layer.kind {
            LayerKind::Conv {
                filters,
                kernel,
                stride,
            } => {
                let _ = writeln!(s, "layer=conv filters={filters} kernel={kernel} stride={stride} out={out}");
            }
            LayerKind::BatchNorm { activation } => {
                let _ = writeln!(s, "layer=batchnorm act={} out={out}", activation_name(activation));
            }
            LayerKind::AvgPool { size, stride } => {
                let _ = writeln!(s, "layer=avgpool size={size} stride={stride} out={out}");
            }
            LayerKind::Dropout => {
                let _ = writeln!(s, "layer=dropout out={out}");
            }
            LayerKind::Flatten => {
                let _ = writeln!(s, "layer=flatten out={out}");
            }
            LayerKind::Dense { units, activation } => {
                let _ = writeln!(s, "layer=dense units={units} act={} out={out}", activation_name(activation));
            }
            LayerKind::Output { units } => {
                let _ = writeln!(s, "layer=output units={units} out={out}");
            }
        }
    }
    s
}

fn spec_from_text(text: &str) -> Result<(ModelSpec, u64, bool)> {
    let bad = |line: &str, why: &str| Error::Format(format!("spec line `{line}`: {why}"));
    let mut name = None;
    let mut seed = None;
    let mut input = None;
    let mut hook = None;
    let mut leaky_slope = None;
    let mut bn_epsilon = None;
    let mut bn_momentum = None;
    let mut bn_initialized = false;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut leaky_pending: Vec<usize> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once('=')
            .ok_or_else(|| bad(line, "expected key=value"))?;
        match key {
            "name" => name = Some(rest.to_string()),
            "seed" => seed = Some(rest.parse::<u64>().map_err(|_| bad(line, "bad seed"))?),
            "input" => {
                let dims = parse_dims(rest).map_err(|_| bad(line, "bad input dims"))?;
                if dims.len() != 3 {
                    return Err(bad(line, "input must be CxHxW"));
                }
                input = Some([dims[0], dims[1], dims[2]]);
            }
            "attention_hook" => {
                hook = Some(rest.parse::<usize>().map_err(|_| bad(line, "bad hook"))?)
            }
            "leaky_slope" => {
                leaky_slope = Some(rest.parse::<f64>().map_err(|_| bad(line, "bad slope"))?)
            }
            "bn_epsilon" => {
                bn_epsilon = Some(rest.parse::<f64>().map_err(|_| bad(line, "bad epsilon"))?)
            }
            "bn_momentum" => {
                bn_momentum = Some(rest.parse::<f64>().map_err(|_| bad(line, "bad momentum"))?)
            }
            "bn_initialized" => {
                bn_initialized = rest.parse::<bool>().map_err(|_| bad(line, "bad flag"))?
            }
            "layer" => {
                let mut fields = std::collections::HashMap::new();
                let mut tokens = rest.split_whitespace();
                let kind_name = tokens.next().ok_or_else(|| bad(line, "missing kind"))?;
                for tok in tokens {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| bad(line, "expected field=value"))?;
                    fields.insert(k, v);
                }
                let get_usize = |k: &str| -> Result<usize> {
                    fields
                        .get(k)
                        .ok_or_else(|| bad(line, &format!("missing {k}")))?
                        .parse()
                        .map_err(|_| bad(line, &format!("bad {k}")))
                };
                let out = parse_dims(fields.get("out").ok_or_else(|| bad(line, "missing out"))?)
                    .map_err(|_| bad(line, "bad out dims"))?;
                let act = |name: &str| -> Result<Activation> {
                    match name {
                        "relu" => Ok(Activation::Relu),
                        // slope is filled in once the header is known
                        "leaky_relu" => Ok(Activation::LeakyRelu(0.0)),
                        "sigmoid" => Ok(Activation::Sigmoid),
                        other => Err(bad(line, &format!("unknown activation {other}"))),
                    }
                };
                let kind = match kind_name {
                    "conv" => LayerKind::Conv {
                        filters: get_usize("filters")?,
                        kernel: get_usize("kernel")?,
                        stride: get_usize("stride")?,
                    },
                    "batchnorm" => {
                        let a = act(fields.get("act").ok_or_else(|| bad(line, "missing act"))?)?;
                        if matches!(a, Activation::LeakyRelu(_)) {
                            leaky_pending.push(layers.len());
                        }
                        LayerKind::BatchNorm { activation: a }
                    }
                    "avgpool" => LayerKind::AvgPool {
                        size: get_usize("size")?,
                        stride: get_usize("stride")?,
                    },
                    "dropout" => LayerKind::Dropout,
                    "flatten" => LayerKind::Flatten,
                    "dense" => {
                        let a = act(fields.get("act").ok_or_else(|| bad(line, "missing act"))?)?;
                        if matches!(a, Activation::LeakyRelu(_)) {
                            leaky_pending.push(layers.len());
                        }
                        LayerKind::Dense {
                            units: get_usize("units")?,
                            activation: a,
                        }
                    }
                    "output" => LayerKind::Output {
                        units: get_usize("units")?,
                    },
                    other => return Err(bad(line, &format!("unknown layer kind {other}"))),
                };
                layers.push(LayerSpec {
                    kind,
                    declared_output: out,
                });
            }
            other => return Err(bad(line, &format!("unknown key {other}"))),
        }
    }

    let leaky_slope = leaky_slope.ok_or_else(|| Error::Format("missing leaky_slope".into()))?;
    for i in leaky_pending {
        match &mut layers[i].kind {
            LayerKind::BatchNorm { activation } | LayerKind::Dense { activation, .. } => {
                *activation = Activation::LeakyRelu(leaky_slope);
            }
            _ => unreachable!(),
        }
    }
    let spec = ModelSpec {
        name: name.ok_or_else(|| Error::Format("missing name".into()))?,
        input_shape: input.ok_or_else(|| Error::Format("missing input".into()))?,
        layers,
        attention_hook: hook.ok_or_else(|| Error::Format("missing attention_hook".into()))?,
        leaky_slope,
        bn_epsilon: bn_epsilon.ok_or_else(|| Error::Format("missing bn_epsilon".into()))?,
        bn_momentum: bn_momentum.ok_or_else(|| Error::Format("missing bn_momentum".into()))?,
    };
    let seed = seed.ok_or_else(|| Error::Format("missing seed".into()))?;
    Ok((spec, seed, bn_initialized))
}

fn parse_dims(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    s.split('x').map(|d| d.parse::<usize>()).collect()
}
