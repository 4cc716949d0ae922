//! Codec parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset    | size | content                                  |
//! |-----------|------|------------------------------------------|
//! | 0         | 4    | magic `GCDC`                             |
//! | 4         | 4    | `u32` header length `H`                  |
//! | 8         | `H`  | UTF-8 JSON header                        |
//! | 8 + `H`   | ...  | `f64` arrays, in header `arrays` order   |
//!
//! The header carries `format`, `kind` (`linear` or `mlp`), `m`, `k`,
//! `normalization`, the MLP layer sizes, and `arrays`: a list of
//! `{name, len}` giving the length of each array in the payload. Linear
//! codecs store `encoder` (`2k x m`, row-major), `encoder_bias`, `decoder`
//! (`m x 2k`) and `decoder_bias`; MLP codecs store `encoder.w{i}`,
//! `encoder.b{i}`, then the same for the decoder.

use std::path::Path;

use gencomm_core::codec::{Codec, CodecParams, Normalization};
use gencomm_core::nn::Mlp;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"GCDC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: u32,
    pub kind: String,
    pub m: usize,
    pub k: usize,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_sizes: Option<Vec<usize>>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

fn mlp_arrays<'a>(prefix: &str, net: &'a Mlp) -> Vec<(String, &'a [f64])> {
    net.weights
        .iter()
        .zip(&net.biases)
        .enumerate()
        .flat_map(|(i, (w, b))| {
            [
                (format!("{prefix}.w{i}"), w.as_slice()),
                (format!("{prefix}.b{i}"), b.as_slice()),
            ]
        })
        .collect()
}

pub fn to_bytes(codec: &Codec) -> Result<Vec<u8>> {
    codec.validate()?;
    let (kind, arrays, enc_sizes, dec_sizes) = match &codec.params {
        CodecParams::Linear {
            encoder,
            encoder_bias,
            decoder,
            decoder_bias,
        } => (
            "linear",
            vec![
                ("encoder".to_string(), encoder.as_slice()),
                ("encoder_bias".to_string(), encoder_bias.as_slice()),
                ("decoder".to_string(), decoder.as_slice()),
                ("decoder_bias".to_string(), decoder_bias.as_slice()),
            ],
            None,
            None,
        ),
        CodecParams::Mlp { encoder, decoder } => {
            let mut a = mlp_arrays("encoder", encoder);
            a.extend(mlp_arrays("decoder", decoder));
            (
                "mlp",
                a,
                Some(encoder.sizes.clone()),
                Some(decoder.sizes.clone()),
            )
        }
    };
    let header = Header {
        format: FORMAT_VERSION,
        kind: kind.into(),
        m: codec.m,
        k: codec.k,
        normalization: codec.normalization,
        encoder_sizes: enc_sizes,
        decoder_sizes: dec_sizes,
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayEntry {
                name: name.clone(),
                len: a.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = arrays.iter().map(|(_, a)| a.len()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 8 * payload);
    out.extend_from_slice(MAGIC);
    let len = u32::try_from(json.len())
        .map_err(|_| HarnessError::CodecFile("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in *a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Codec> {
    let bad = |m: &str| HarnessError::CodecFile(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing GCDC magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format != FORMAT_VERSION {
        return Err(bad(&format!(
            "unsupported format version {}",
            header.format
        )));
    }
    let mut data = &bytes[8 + hlen..];
    let expected = header
        .arrays
        .iter()
        .try_fold(0usize, |acc, a| acc.checked_add(a.len.checked_mul(8)?))
        .ok_or_else(|| bad("declared array lengths overflow"))?;
    if data.len() != expected {
        return Err(bad(&format!(
            "payload holds {} bytes, header declares {expected}",
            data.len()
        )));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let (head, rest) = data.split_at(8 * entry.len);
        arrays.push((
            entry.name.as_str(),
            head.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>(),
        ));
        data = rest;
    }
    let mut take = |name: &str| -> Result<Vec<f64>> {
        let i = arrays
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| bad(&format!("missing array `{name}`")))?;
        Ok(arrays.swap_remove(i).1)
    };
    let params = match header.kind.as_str() {
        "linear" => CodecParams::Linear {
            encoder: take("encoder")?,
            encoder_bias: take("encoder_bias")?,
            decoder: take("decoder")?,
            decoder_bias: take("decoder_bias")?,
        },
        "mlp" => {
            let mut net = |prefix: &str, sizes: &Option<Vec<usize>>| -> Result<Mlp> {
                let sizes = sizes
                    .clone()
                    .ok_or_else(|| bad(&format!("missing {prefix}_sizes")))?;
                let layers = sizes.len().saturating_sub(1);
                let mut weights = Vec::with_capacity(layers);
                let mut biases = Vec::with_capacity(layers);
                for i in 0..layers {
                    weights.push(take(&format!("{prefix}.w{i}"))?);
                    biases.push(take(&format!("{prefix}.b{i}"))?);
                }
                Ok(Mlp {
                    sizes,
                    weights,
                    biases,
                })
            };
            let encoder = net("encoder", &header.encoder_sizes)?;
            let decoder = net("decoder", &header.decoder_sizes)?;
            CodecParams::Mlp { encoder, decoder }
        }
        other => return Err(bad(&format!("unknown codec kind `{other}`"))),
    };
    let codec = Codec {
        m: header.m,
        k: header.k,
        normalization: header.normalization,
        params,
    };
    codec.validate()?;
    Ok(codec)
}

pub fn write(path: &Path, codec: &Codec) -> Result<()> {
    std::fs::write(path, to_bytes(codec)?).map_err(|e| HarnessError::io(path, e))
}

pub fn read(path: &Path) -> Result<Codec> {
    from_bytes(&std::fs::read(path).map_err(|e| HarnessError::io(path, e))?)
}
