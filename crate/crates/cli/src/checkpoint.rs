//! Binary checkpoints.
//!
//! Layout: the magic bytes `DSLCKPT\0`, a little-endian `u32` format version,
//! a `u32` header length, a JSON header describing the model structure and
//! run configuration, then every parameter array as a `u64` element count
//! followed by that many little-endian `f64` values. Arrays appear in
//! network order (a, 1/p, q, w, v; per layer the row-major weights then the
//! biases), then the head matrix and the head bias.

use std::path::Path;

use dsl_core::learner::{DslModel, Formulation, Normalization};
use dsl_core::netfuncs::{Activation, MlpParams, OutputRange};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, ExitKind};

pub const MAGIC: &[u8; 8] = b"DSLCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DslModel,
    pub config: RunConfig,
    pub normalization: Normalization,
    pub feature_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetHeader {
    layer_dims: Vec<usize>,
    activation: Activation,
    output_range: Option<OutputRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n: usize,
    k: usize,
    d: usize,
    formulation: Formulation,
    a_net: Option<NetHeader>,
    inv_p_net: NetHeader,
    q_net: NetHeader,
    w_net: NetHeader,
    v_net: Option<NetHeader>,
    head_bias: bool,
    config: RunConfig,
    normalization: Normalization,
    feature_names: Vec<String>,
}

fn net_header(net: &MlpParams) -> NetHeader {
    NetHeader {
        layer_dims: net.layer_dims.clone(),
        activation: net.activation,
        output_range: net.output_range,
    }
}

fn push_array(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_net(out: &mut Vec<u8>, net: &MlpParams) {
    for (w, b) in net.weights.iter().zip(&net.biases) {
        push_array(out, w);
        push_array(out, b);
    }
}

pub fn encode(ck: &Checkpoint) -> CliResult<Vec<u8>> {
    let m = &ck.model;
    let header = Header {
        n: m.n,
        k: m.k,
        d: m.d,
        formulation: m.formulation,
        a_net: m.a_net.as_ref().map(net_header),
        inv_p_net: net_header(&m.inv_p_net),
        q_net: net_header(&m.q_net),
        w_net: net_header(&m.w_net),
        v_net: m.v_net.as_ref().map(net_header),
        head_bias: m.head_bias.is_some(),
        config: ck.config.clone(),
        normalization: ck.normalization.clone(),
        feature_names: ck.feature_names.clone(),
    };
    let json =
        serde_json::to_vec(&header).map_err(|e| CliError::new(ExitKind::Io, e.to_string()))?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| CliError::new(ExitKind::Io, "checkpoint header too large"))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * m.n_params() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for net in m
        .a_net
        .iter()
        .chain([&m.inv_p_net, &m.q_net, &m.w_net])
        .chain(m.v_net.iter())
    {
        push_net(&mut out, net);
    }
    push_array(&mut out, &m.head_l);
    if let Some(b) = &m.head_bias {
        push_array(&mut out, b);
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::new(ExitKind::Io, format!("invalid checkpoint: {}", msg.into()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// An array whose length must equal `expected`.
    fn array(&mut self, expected: usize, what: &str) -> CliResult<Vec<f64>> {
        let len = self.u64()?;
        if len != expected as u64 {
            return Err(corrupt(format!(
                "{what}: expected {expected} values, found {len}"
            )));
        }
        let bytes = expected
            .checked_mul(8)
            .ok_or_else(|| corrupt("array size overflow"))?;
        if bytes > self.remaining() {
            return Err(corrupt("truncated"));
        }
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_net(cur: &mut Cursor<'_>, h: &NetHeader, what: &str) -> CliResult<MlpParams> {
    if h.layer_dims.len() < 2 || h.layer_dims.contains(&0) {
        return Err(corrupt(format!("{what}: bad layer dimensions")));
    }
    let mut weights = Vec::with_capacity(h.layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(h.layer_dims.len() - 1);
    for pair in h.layer_dims.windows(2) {
        let nw = pair[0]
            .checked_mul(pair[1])
            .ok_or_else(|| corrupt("layer size overflow"))?;
        weights.push(cur.array(nw, what)?);
        biases.push(cur.array(pair[1], what)?);
    }
    Ok(MlpParams {
        layer_dims: h.layer_dims.clone(),
        weights,
        biases,
        activation: h.activation,
        output_range: h.output_range,
    })
}

pub fn decode(bytes: &[u8]) -> CliResult<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let h: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let a_net = h
        .a_net
        .as_ref()
        .map(|n| read_net(&mut cur, n, "a"))
        .transpose()?;
    let inv_p_net = read_net(&mut cur, &h.inv_p_net, "1/p")?;
    let q_net = read_net(&mut cur, &h.q_net, "q")?;
    let w_net = read_net(&mut cur, &h.w_net, "w")?;
    let v_net = h
        .v_net
        .as_ref()
        .map(|n| read_net(&mut cur, n, "v"))
        .transpose()?;
    let nl =
        h.k.checked_mul(h.d)
            .ok_or_else(|| corrupt("head size overflow"))?;
    let head_l = cur.array(nl, "head")?;
    let head_bias = if h.head_bias {
        Some(cur.array(h.k, "head bias")?)
    } else {
        None
    };
    if cur.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", cur.remaining())));
    }
    let model = DslModel {
        n: h.n,
        k: h.k,
        d: h.d,
        formulation: h.formulation,
        a_net,
        inv_p_net,
        q_net,
        w_net,
        v_net,
        head_l,
        head_bias,
    };
    model.validate().map_err(|e| corrupt(e.to_string()))?;
    if h.normalization.dim() != h.n || h.normalization.max.len() != h.n {
        return Err(corrupt("normalization does not match the input dimension"));
    }
    if h.feature_names.len() != h.n {
        return Err(corrupt("feature names do not match the input dimension"));
    }
    h.config.validate().map_err(|e| corrupt(e.message))?;
    Ok(Checkpoint {
        model,
        config: h.config,
        normalization: h.normalization,
        feature_names: h.feature_names,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    crate::write_atomic(path, &encode(ck)?)
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::io(path, e.message))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsl_core::learner::ModelConfig;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            d: 3,
            a_hidden: vec![5],
            coef_hidden: vec![4, 3],
            learned_v: true,
            ..ModelConfig::default()
        };
        Checkpoint {
            model: DslModel::new(2, 3, &cfg, 11).unwrap(),
            config: RunConfig {
                model: cfg,
                ..RunConfig::default()
            },
            normalization: Normalization {
                min: vec![-1.0 / 3.0, 0.1],
                max: vec![2.0, 0.7],
            },
            feature_names: vec!["x".into(), "y".into()],
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        assert_eq!(decode(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(decode(&version).is_err());
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_huge_lengths_without_allocating() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut b = bytes.clone();
        b[16 + header_len..16 + header_len + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&b).is_err());
    }
}
