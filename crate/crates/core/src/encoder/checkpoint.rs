//! Weight checkpoint file:
//!
//! ```text
//! "CMFW" | version: u32 | layers, hidden, heads, ffn, seq_len, positional, has_head: u32
//!        | layer_norm_eps: f64 | named tensor archive
//! ```
//!
//! Tensor names follow [`EncoderWeights::named_params`], for example
//! `layer0.attn.query.weight` or `layer1.ffn_norm.gain`.

use std::path::Path;

use crate::datapipe::blob::{decode_named, encode_named, read_file, write_atomic, Reader, Tensor};
use crate::error::{Error, Result};

use super::config::{EncoderConfig, PositionalKind};
use super::weights::{EncoderWeights, Linear};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMFW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Shapes matching [`EncoderWeights::named_params`].
fn param_dims(w: &EncoderWeights) -> Vec<Vec<usize>> {
    let c = &w.config;
    let (h, f) = (c.hidden, c.ffn);
    let mut dims = Vec::new();
    if c.positional == PositionalKind::Learned {
        dims.push(vec![c.seq_len, h]);
    }
    for _ in 0..c.layers {
        for _ in 0..4 {
            dims.push(vec![h, h]);
            dims.push(vec![h]);
        }
        dims.extend([vec![h], vec![h], vec![h, f], vec![f], vec![f, h], vec![h], vec![h], vec![h]]);
    }
    if w.head.is_some() {
        dims.push(vec![h, h]);
        dims.push(vec![h]);
    }
    dims
}

pub(crate) fn weights_to_tensors(w: &EncoderWeights) -> Result<Vec<(String, Tensor)>> {
    w.named_params()
        .into_iter()
        .zip(param_dims(w))
        .map(|((name, data), dims)| Ok((name, Tensor::from_f64(dims, data)?)))
        .collect()
}

pub(crate) fn encode_config(c: &EncoderConfig, has_head: bool, out: &mut Vec<u8>) {
    for v in [c.layers, c.hidden, c.heads, c.ffn, c.seq_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.positional.code().to_le_bytes());
    out.extend_from_slice(&u32::from(has_head).to_le_bytes());
    out.extend_from_slice(&c.layer_norm_eps.to_le_bytes());
}

pub(crate) fn decode_config(r: &mut Reader<'_>) -> Result<(EncoderConfig, bool)> {
    let at = r.offset();
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32("encoder config")? as usize;
    }
    let pos_at = r.offset();
    let positional = PositionalKind::from_code(r.u32("positional kind")?)
        .ok_or_else(|| Error::format(pos_at, "unknown positional kind"))?;
    let has_head = r.u32("head flag")? != 0;
    let eps = r.f64("layer-norm epsilon")?;
    let config = EncoderConfig {
        layers: dims[0],
        hidden: dims[1],
        heads: dims[2],
        ffn: dims[3],
        seq_len: dims[4],
        positional,
        layer_norm_eps: eps,
    };
    config
        .validate()
        .map_err(|e| Error::format(at, format!("invalid encoder config: {e}")))?;
    Ok((config, has_head))
}

pub(crate) fn weights_from_tensors(
    config: EncoderConfig,
    has_head: bool,
    tensors: &[(String, Tensor)],
    at: u64,
) -> Result<EncoderWeights> {
    let mut w = EncoderWeights::degenerate(config)?;
    if has_head {
        w.head = Some(Linear::zeros(config.hidden, config.hidden));
    }
    let expected: Vec<(String, Vec<usize>)> = w
        .named_params()
        .into_iter()
        .map(|(n, _)| n)
        .zip(param_dims(&w))
        .collect();
    if expected.len() != tensors.len() {
        return Err(Error::format(
            at,
            format!("expected {} tensors, found {}", expected.len(), tensors.len()),
        ));
    }
    for ((name, dims), (got_name, t)) in expected.iter().zip(tensors) {
        if name != got_name || dims != &t.dims {
            return Err(Error::format(
                at,
                format!("tensor {got_name:?} {:?} where {name:?} {dims:?} expected", t.dims),
            ));
        }
    }
    for (slot, (_, t)) in w.params_mut().into_iter().zip(tensors) {
        for (dst, &src) in slot.iter_mut().zip(t.as_f32()?) {
            *dst = src as f64;
        }
    }
    Ok(w)
}

pub fn encode_weights(w: &EncoderWeights, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    encode_config(&w.config, w.head.is_some(), out);
    encode_named(&weights_to_tensors(w)?, out);
    Ok(())
}

pub fn decode_weights(r: &mut Reader<'_>) -> Result<EncoderWeights> {
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (config, has_head) = decode_config(r)?;
    let at = r.offset();
    let tensors = decode_named(r)?;
    weights_from_tensors(config, has_head, &tensors, at)
}

pub fn save_weights(path: impl AsRef<Path>, w: &EncoderWeights) -> Result<()> {
    let mut buf = Vec::new();
    encode_weights(w, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    let bytes = read_file(&path)?;
    let mut r = Reader::new(&bytes);
    let w = decode_weights(&mut r)?;
    r.finish()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    fn small(positional: PositionalKind) -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            ffn: 16,
            seq_len: 15,
            positional,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn round_trip_is_lossless_after_rounding() {
        for (pos, head) in [(PositionalKind::Sinusoidal, false), (PositionalKind::Learned, true)] {
            let mut w = EncoderWeights::xavier(small(pos), head, &mut seeded(4)).unwrap();
            w.round_to_f32();
            let mut a = Vec::new();
            encode_weights(&w, &mut a).unwrap();
            let back = decode_weights(&mut Reader::new(&a)).unwrap();
            assert_eq!(back, w);
            let mut b = Vec::new();
            encode_weights(&back, &mut b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_rejected() {
        let w = EncoderWeights::xavier(small(PositionalKind::Learned), true, &mut seeded(1)).unwrap();
        let mut a = Vec::new();
        encode_weights(&w, &mut a).unwrap();
        for cut in (0..a.len()).step_by(97) {
            let mut r = Reader::new(&a[..cut]);
            assert!(decode_weights(&mut r).is_err());
        }
    }
}
