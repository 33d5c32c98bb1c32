//! Bundle file:
//!
//! ```text
//! "CMFB" | version: u32 | method: u32 | rank: u32 | alpha: f64 | chain_length: u32
//!        | task: str | class_count: u32 | class names: str… | healthy_class: u32
//!        | seed: u64 | dataset fingerprint: str
//!        | target_count: u32 | target names: str…
//!        | encoder flag: u32 [ | encoder config | named tensor archive ]
//!        | named tensor archive
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8. The last archive holds,
//! per target in listed order, `<target>.magnitude` (DoRA only) and
//! `<target>.stage<j>.B` / `.A` for every initialised stage, then the
//! classifier as `classifier.fc<i>.weight` / `.bias`. The optional encoder
//! block carries `ΔW` (full fine-tuning) or the whole encoder (scratch),
//! encoded like a weight checkpoint.

use std::path::Path;

use crate::datapipe::blob::{decode_named, encode_named, put_string, read_file, write_atomic, Reader, Tensor};
use crate::encoder::{decode_config, encode_config, weights_from_tensors, weights_to_tensors, Linear, Mlp, TargetId};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::peft::{AdapterBundle, BundleMeta, LowRank, Method, TargetAdapter};

pub const BUNDLE_MAGIC: &[u8; 4] = b"CMFB";
pub const BUNDLE_VERSION: u32 = 1;

pub fn encode_bundle(b: &AdapterBundle, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&b.method.code().to_le_bytes());
    out.extend_from_slice(&(b.rank as u32).to_le_bytes());
    out.extend_from_slice(&b.alpha.to_le_bytes());
    out.extend_from_slice(&(b.chain_length as u32).to_le_bytes());
    put_string(out, &b.task);
    out.extend_from_slice(&(b.meta.class_names.len() as u32).to_le_bytes());
    for n in &b.meta.class_names {
        put_string(out, n);
    }
    out.extend_from_slice(&(b.meta.healthy_class as u32).to_le_bytes());
    out.extend_from_slice(&b.meta.seed.to_le_bytes());
    put_string(out, &b.meta.dataset_fingerprint);
    out.extend_from_slice(&(b.targets.len() as u32).to_le_bytes());
    for t in &b.targets {
        put_string(out, &t.target.name());
    }
    match &b.encoder {
        None => out.extend_from_slice(&0u32.to_le_bytes()),
        Some(enc) => {
            out.extend_from_slice(&1u32.to_le_bytes());
            encode_config(&enc.config, enc.head.is_some(), out);
            encode_named(&weights_to_tensors(enc)?, out);
        }
    }
    let tensors = b
        .stored_tensors()
        .into_iter()
        .map(|(name, dims, data)| Ok((name, Tensor::from_f64(dims, data)?)))
        .collect::<Result<Vec<_>>>()?;
    encode_named(&tensors, out);
    Ok(())
}

fn matrix(t: &Tensor, at: u64, name: &str) -> Result<Matrix> {
    let [r, c] = t.dims[..] else {
        return Err(Error::format(at, format!("{name} must be a matrix, has dims {:?}", t.dims)));
    };
    Matrix::from_vec(r, c, t.to_f64()?).map_err(|e| Error::format(at, format!("{name}: {e}")))
}

/// Pops the next tensor, which must be called `want`.
fn expect<'a>(
    it: &mut std::iter::Peekable<std::slice::Iter<'a, (String, Tensor)>>,
    want: &str,
    at: u64,
) -> Result<&'a Tensor> {
    match it.next() {
        Some((name, t)) if name == want => Ok(t),
        Some((name, _)) => Err(Error::format(at, format!("found tensor {name:?} where {want:?} was expected"))),
        None => Err(Error::format(at, format!("missing tensor {want:?}"))),
    }
}

pub fn decode_bundle(r: &mut Reader<'_>) -> Result<AdapterBundle> {
    r.magic(BUNDLE_MAGIC)?;
    let version = r.u32("bundle version")?;
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let at = r.offset();
    let method = Method::from_code(r.u32("method")?)
        .ok_or_else(|| Error::format(at, "unknown adaptation method"))?;
    let rank = r.u32("rank")? as usize;
    let alpha = r.f64("alpha")?;
    let chain_length = r.u32("chain length")? as usize;
    let task = r.string("task id")?;
    let n_classes = r.u32("class count")? as usize;
    let mut class_names = Vec::with_capacity(n_classes.min(256));
    for _ in 0..n_classes {
        class_names.push(r.string("class name")?);
    }
    let healthy_class = r.u32("healthy class")? as usize;
    let seed = r.u64("seed")?;
    let dataset_fingerprint = r.string("dataset fingerprint")?;

    let at = r.offset();
    let n_targets = r.u32("target count")? as usize;
    let mut ids = Vec::with_capacity(n_targets.min(256));
    for _ in 0..n_targets {
        let at = r.offset();
        let name = r.string("target name")?;
        ids.push(TargetId::parse(&name).map_err(|e| Error::format(at, e.to_string()))?);
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::format(at, "targets are not sorted and unique"));
    }
    if method.is_low_rank() != !ids.is_empty() {
        return Err(Error::format(at, format!("{method} bundle with {} targets", ids.len())));
    }
    if method.is_low_rank() && (rank == 0 || !(alpha.is_finite() && alpha > 0.0)) {
        return Err(Error::format(at, "low-rank bundle needs positive rank and alpha"));
    }
    let max_stages = match method {
        Method::Cola => chain_length,
        _ => 1,
    };

    let at = r.offset();
    let encoder = match r.u32("encoder flag")? {
        0 => None,
        1 => {
            let (config, has_head) = decode_config(r)?;
            let at = r.offset();
            let tensors = decode_named(r)?;
            Some(weights_from_tensors(config, has_head, &tensors, at)?)
        }
        other => return Err(Error::format(at, format!("bad encoder flag {other}"))),
    };
    if encoder.is_some() != matches!(method, Method::Full | Method::Scratch) {
        return Err(Error::format(at, format!("{method} bundle has the wrong encoder payload")));
    }

    let at = r.offset();
    let tensors = decode_named(r)?;
    let mut it = tensors.iter().peekable();
    let mut targets = Vec::with_capacity(ids.len());
    for id in ids {
        let name = id.name();
        let magnitude = if method == Method::Dora {
            let t = expect(&mut it, &format!("{name}.magnitude"), at)?;
            let m = matrix(t, at, "magnitude")?;
            if m.rows() != 1 {
                return Err(Error::format(at, "magnitude must be a single row"));
            }
            Some(m.into_data())
        } else {
            None
        };
        let mut stages: Vec<LowRank> = Vec::new();
        while it.peek().is_some_and(|(n, _)| *n == format!("{name}.stage{}.B", stages.len() + 1)) {
            let j = stages.len() + 1;
            let b = matrix(expect(&mut it, &format!("{name}.stage{j}.B"), at)?, at, "B")?;
            let a = matrix(expect(&mut it, &format!("{name}.stage{j}.A"), at)?, at, "A")?;
            let (d, k) = (b.rows(), a.cols());
            if b.cols() != rank || a.rows() != rank || stages.first().is_some_and(|s| (s.b.rows(), s.a.cols()) != (d, k)) {
                return Err(Error::format(at, format!("{name} stage {j} factors have inconsistent shapes")));
            }
            stages.push(LowRank { b, a });
        }
        if stages.is_empty() || stages.len() > max_stages {
            return Err(Error::format(at, format!("{name}: {} stages for a {method} bundle", stages.len())));
        }
        if magnitude.as_ref().is_some_and(|m| m.len() != stages[0].a.cols()) {
            return Err(Error::format(at, format!("{name}: magnitude length differs from column count")));
        }
        targets.push(TargetAdapter {
            target: id,
            magnitude,
            stages,
        });
    }
    if targets.windows(2).any(|w| w[0].stages.len() != w[1].stages.len()) {
        return Err(Error::format(at, "targets are at different chain stages"));
    }

    let mut layers = Vec::new();
    while it.peek().is_some() {
        let i = layers.len();
        let weight = matrix(expect(&mut it, &format!("classifier.fc{i}.weight"), at)?, at, "classifier weight")?;
        let bias = expect(&mut it, &format!("classifier.fc{i}.bias"), at)?;
        if bias.dims != [weight.cols()] {
            return Err(Error::format(at, format!("classifier.fc{i}.bias has dims {:?}", bias.dims)));
        }
        let prev: Option<&Linear> = layers.last();
        if prev.is_some_and(|p| p.output_dim() != weight.rows()) {
            return Err(Error::format(at, format!("classifier.fc{i} does not chain")));
        }
        layers.push(Linear {
            weight,
            bias: bias.to_f64()?,
        });
    }
    if layers.is_empty() || layers.last().is_some_and(|l| l.output_dim() < 2) {
        return Err(Error::format(at, "bundle has no usable classifier"));
    }
    let classifier = Mlp { layers };
    if !class_names.is_empty() && class_names.len() != classifier.classes() {
        return Err(Error::format(at, "class names do not match the classifier width"));
    }
    Ok(AdapterBundle {
        task,
        method,
        rank,
        alpha,
        chain_length,
        targets,
        encoder,
        classifier,
        meta: BundleMeta {
            class_names,
            healthy_class,
            seed,
            dataset_fingerprint,
        },
    })
}

pub fn bundle_save(path: impl AsRef<Path>, b: &AdapterBundle) -> Result<()> {
    let mut buf = Vec::new();
    encode_bundle(b, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn bundle_load(path: impl AsRef<Path>) -> Result<AdapterBundle> {
    let bytes = read_file(&path)?;
    let mut r = Reader::new(&bytes);
    let b = decode_bundle(&mut r)?;
    r.finish()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderWeights, PositionalKind};
    use crate::numerics::rng::seeded;
    use crate::peft::{adapter_init, cola_advance_stage, AdapterSpec};

    fn w0() -> EncoderWeights {
        let cfg = EncoderConfig {
            hidden: 8,
            ffn: 16,
            positional: PositionalKind::Learned,
            ..EncoderConfig::default()
        };
        EncoderWeights::xavier(cfg, false, &mut seeded(0)).unwrap()
    }

    fn bundle(method: Method) -> AdapterBundle {
        let spec = AdapterSpec {
            rank: 2,
            ..AdapterSpec::new(method)
        };
        let mut b = adapter_init("task-a", &spec, &w0(), 3, 5).unwrap();
        if method == Method::Cola {
            cola_advance_stage(&mut b).unwrap();
        }
        b.meta.class_names = vec!["healthy".into(), "x".into(), "y".into()];
        b.meta.dataset_fingerprint = "abc".into();
        b.round_to_f32();
        b
    }

    #[test]
    fn round_trip_every_method() {
        for m in Method::ALL {
            let b = bundle(m);
            let mut a = Vec::new();
            encode_bundle(&b, &mut a).unwrap();
            let mut r = Reader::new(&a);
            let back = decode_bundle(&mut r).unwrap();
            r.finish().unwrap();
            assert_eq!(back, b, "{m}");
            let mut again = Vec::new();
            encode_bundle(&back, &mut again).unwrap();
            assert_eq!(a, again);
        }
    }

    #[test]
    fn lora_stores_only_factors_and_classifier() {
        let b = bundle(Method::Lora);
        let mut a = Vec::new();
        encode_bundle(&b, &mut a).unwrap();
        for (name, _, _) in b.stored_tensors() {
            assert!(name.ends_with(".B") || name.ends_with(".A") || name.starts_with("classifier."), "{name}");
        }
        assert!(b.encoder.is_none());
        let expected = b.stored_params();
        assert_eq!(expected, 8 * 2 * (8 * 2) + b.classifier.num_params());
    }

    #[test]
    fn truncation_and_corruption() {
        let b = bundle(Method::Dora);
        let mut a = Vec::new();
        encode_bundle(&b, &mut a).unwrap();
        for cut in 0..a.len() {
            let mut r = Reader::new(&a[..cut]);
            let res = decode_bundle(&mut r).and_then(|_| r.finish());
            assert!(matches!(res, Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(decode_bundle(&mut Reader::new(&bad)), Err(Error::Format { offset: 0, .. })));
        let mut bad = a.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_bundle(&mut Reader::new(&bad)),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }
}
