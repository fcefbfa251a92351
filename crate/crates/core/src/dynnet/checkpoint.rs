//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DDN1"  u32 K (0 = static)  u32 d  u8 conditioning
//! u32 rank  u32 dims[rank]  u32 layer_count
//! per layer: u8 kind  u8 act  u8 dynamic  u32 geometry[...]
//! per parameter tensor, in layer order: u64 count  f64 values[count]
//! ```
//!
//! Dynamic layers store their `K` experts, the shared bias, then one
//! `(weight, bias)` controller pair per expert.

use std::fs;
use std::path::Path;

use super::controller::ControllerParams;
use super::expert::ExpertLayer;
use super::network::{DynLayer, DynamicNetwork};
use crate::error::{Error, Result};
use crate::numerics::{Activation, LayerParams, LayerSpec, Parameter, Sequential, StaticLayer, Tensor};

const MAGIC: &[u8; 4] = b"DDN1";
const MAX_DIM: u32 = 1 << 16;
const MAX_LAYERS: u32 = 1024;
const MAX_K: u32 = 256;
const MAX_RANK: u32 = 4;
const MAX_DENSE_INPUTS: u32 = 1 << 28;

/// What the controllers of a dynamic checkpoint are fed at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    /// One embedding per domain.
    Domain,
    /// One encoder feature per image.
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Static(Sequential),
    Dynamic {
        net: DynamicNetwork,
        conditioning: Conditioning,
    },
}

fn kind_tag(spec: &LayerSpec) -> u8 {
    match spec {
        LayerSpec::Conv { .. } => 0,
        LayerSpec::Dense { .. } => 1,
        LayerSpec::GlobalAvgPool => 2,
        LayerSpec::Flatten => 3,
    }
}

fn act_tag(act: Activation) -> u8 {
    match act {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn tensor(&mut self, t: &Tensor<f64>) {
        self.0.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for x in t.data() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn layer(&mut self, spec: &LayerSpec, dynamic: bool) -> Result<()> {
        self.u8(kind_tag(spec));
        match *spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                act,
            } => {
                self.u8(act_tag(act));
                self.u8(dynamic as u8);
                for v in [in_channels, out_channels, kernel, stride, pad] {
                    self.u32(v)?;
                }
            }
            LayerSpec::Dense { inputs, outputs, act } => {
                self.u8(act_tag(act));
                self.u8(dynamic as u8);
                self.u32(inputs)?;
                self.u32(outputs)?;
            }
            LayerSpec::GlobalAvgPool | LayerSpec::Flatten => {
                self.u8(0);
                self.u8(0);
            }
        }
        Ok(())
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(MAGIC.to_vec());
    match ckpt {
        Checkpoint::Static(net) => {
            w.u32(0)?;
            w.u32(0)?;
            w.u8(0);
            w.u32(net.input_shape().len())?;
            for &d in net.input_shape() {
                w.u32(d)?;
            }
            w.u32(net.layers().len())?;
            for l in net.layers() {
                w.layer(&l.spec, false)?;
            }
            for p in net.parameters() {
                w.tensor(&p.value);
            }
        }
        Checkpoint::Dynamic { net, conditioning } => {
            w.u32(net.k())?;
            w.u32(net.embed_dim())?;
            w.u8(match conditioning {
                Conditioning::Domain => 1,
                Conditioning::Sample => 2,
            });
            w.u32(net.input_shape().len())?;
            for &d in net.input_shape() {
                w.u32(d)?;
            }
            w.u32(net.layers().len())?;
            for l in net.layers() {
                w.layer(&l.spec(), matches!(l, DynLayer::Expert(_)))?;
            }
            for l in net.layers() {
                match l {
                    DynLayer::Expert(e) => {
                        for x in &e.experts {
                            w.tensor(&x.value);
                        }
                        w.tensor(&e.bias.value);
                        for c in &e.controllers {
                            w.tensor(&c.weight.value);
                            w.tensor(&c.bias.value);
                        }
                    }
                    DynLayer::Static(s) => {
                        if let Some(p) = &s.params {
                            w.tensor(&p.weight.value);
                            w.tensor(&p.bias.value);
                        }
                    }
                }
            }
        }
    }
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bounded(&mut self, what: &str, max: u32) -> Result<usize> {
        let v = self.u32()?;
        if v > max {
            return Err(Error::format("checkpoint", format!("{what} {v} exceeds {max}")));
        }
        Ok(v as usize)
    }

    fn act(&mut self) -> Result<Activation> {
        match self.u8()? {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            t => Err(Error::format("checkpoint", format!("unknown activation tag {t}"))),
        }
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::format("checkpoint", format!("invalid flag {t}"))),
        }
    }

    fn layer(&mut self) -> Result<(LayerSpec, bool)> {
        let kind = self.u8()?;
        match kind {
            0 => {
                let act = self.act()?;
                let dynamic = self.flag()?;
                let mut g = [0usize; 5];
                for v in &mut g {
                    *v = self.bounded("conv geometry", MAX_DIM)?;
                }
                Ok((
                    LayerSpec::Conv {
                        in_channels: g[0],
                        out_channels: g[1],
                        kernel: g[2],
                        stride: g[3],
                        pad: g[4],
                        act,
                    },
                    dynamic,
                ))
            }
            1 => {
                let act = self.act()?;
                let dynamic = self.flag()?;
                let inputs = self.bounded("dense inputs", MAX_DENSE_INPUTS)?;
                let outputs = self.bounded("dense outputs", MAX_DIM)?;
                Ok((LayerSpec::Dense { inputs, outputs, act }, dynamic))
            }
            2 | 3 => {
                if self.u8()? != 0 || self.u8()? != 0 {
                    return Err(Error::format("checkpoint", "parameter-free layer with flags set"));
                }
                Ok((if kind == 2 { LayerSpec::GlobalAvgPool } else { LayerSpec::Flatten }, false))
            }
            t => Err(Error::format("checkpoint", format!("unknown layer tag {t}"))),
        }
    }

    /// Reads one tensor blob of exactly `shape`.
    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor<f64>> {
        let b = self.take(8)?;
        let count = u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]);
        let expected = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::format("checkpoint", "tensor size overflows"))?;
        if count != expected {
            return Err(Error::format("checkpoint", format!("blob holds {count} values, layer needs {expected}")));
        }
        let raw = self.take(
            usize::try_from(count)
                .ok()
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| Error::format("checkpoint", "tensor size overflows"))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::format("checkpoint", "non-finite parameter"));
        }
        Tensor::new(shape, data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let k = r.bounded("expert count", MAX_K)?;
    let d = r.bounded("embedding dimension", MAX_DIM)?;
    let conditioning = match r.u8()? {
        0 => None,
        1 => Some(Conditioning::Domain),
        2 => Some(Conditioning::Sample),
        t => return Err(Error::format("checkpoint", format!("unknown conditioning tag {t}"))),
    };
    if (k == 0) != conditioning.is_none() || (k == 0 && d != 0) || (k > 0 && d == 0) {
        return Err(Error::format("checkpoint", "inconsistent model kind header"));
    }
    let rank = r.bounded("input rank", MAX_RANK)?;
    let input_shape = (0..rank)
        .map(|_| r.bounded("input dimension", MAX_DIM))
        .collect::<Result<Vec<_>>>()?;
    let n_layers = r.bounded("layer count", MAX_LAYERS)?;
    let table = (0..n_layers).map(|_| r.layer()).collect::<Result<Vec<_>>>()?;
    let specs: Vec<LayerSpec> = table.iter().map(|(s, _)| *s).collect();
    crate::numerics::chain_shapes(&specs, &input_shape)?;
    let ckpt = match conditioning {
        None => {
            if table.iter().any(|(_, dynamic)| *dynamic) {
                return Err(Error::format("checkpoint", "static checkpoint with a dynamic layer"));
            }
            let layers = specs
                .iter()
                .map(|spec| static_layer(&mut r, spec))
                .collect::<Result<Vec<_>>>()?;
            Checkpoint::Static(Sequential::new(input_shape, layers)?)
        }
        Some(conditioning) => {
            let mut layers = Vec::with_capacity(n_layers);
            for (spec, dynamic) in &table {
                let shape = spec.weight_shape();
                layers.push(match (dynamic, shape) {
                    (true, Some(shape)) => {
                        let experts = (0..k)
                            .map(|_| r.tensor(shape.clone()).map(Parameter::new))
                            .collect::<Result<Vec<_>>>()?;
                        let bias = Parameter::new(r.tensor(vec![spec.bias_len().unwrap_or(0)])?);
                        let controllers = (0..k)
                            .map(|_| {
                                Ok(ControllerParams {
                                    weight: Parameter::new(r.tensor(vec![d])?),
                                    bias: Parameter::new(r.tensor(vec![1])?),
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        DynLayer::Expert(ExpertLayer::new(*spec, experts, bias, controllers)?)
                    }
                    (true, None) => return Err(Error::format("checkpoint", "parameter-free layer marked dynamic")),
                    (false, _) => DynLayer::Static(static_layer(&mut r, spec)?),
                });
            }
            let net = DynamicNetwork::new(input_shape, d, layers)?;
            if net.dynamic_layer_count() > 0 && net.k() != k {
                return Err(Error::format("checkpoint", "expert count does not match header"));
            }
            Checkpoint::Dynamic { net, conditioning }
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ckpt)
}

fn static_layer(r: &mut Reader<'_>, spec: &LayerSpec) -> Result<StaticLayer> {
    let params = match spec.weight_shape() {
        Some(shape) => Some(LayerParams {
            weight: Parameter::new(r.tensor(shape)?),
            bias: Parameter::new(r.tensor(vec![spec.bias_len().unwrap_or(0)])?),
        }),
        None => None,
    };
    Ok(StaticLayer { spec: *spec, params })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
