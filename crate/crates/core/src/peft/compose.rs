use std::collections::BTreeMap;

use crate::datapipe::SensorSequence;
use crate::encoder::{EncoderWeights, Linear, Projector, TargetId};
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

use super::bundle::{AdapterBundle, TargetAdapter};

/// Applies adapters without materialising `W0 + ΔW`:
/// `x·W0 + s·Σ (x·B)·A`, with the DoRA column rescale folded in afterwards.
struct Composed<'a> {
    adapters: BTreeMap<TargetId, &'a TargetAdapter>,
    scale: f64,
}

impl Projector for Composed<'_> {
    fn project(&self, target: TargetId, lin: &Linear, x: &Matrix) -> Result<Matrix> {
        let Some(ad) = self.adapters.get(&target) else {
            return Ok(lin.forward(x));
        };
        let mut y = x.mul_unchecked(&lin.weight);
        for st in &ad.stages {
            let xb = x.mul_unchecked(&st.b);
            gemm(self.scale, &xb, false, &st.a, false, 1.0, &mut y);
        }
        if let Some(m) = &ad.magnitude {
            let mut v = lin.weight.clone();
            for st in &ad.stages {
                gemm(self.scale, &st.b, false, &st.a, false, 1.0, &mut v);
            }
            let norms = v.column_norms()?;
            if norms.iter().any(|&n| n < 1e-12) {
                return Err(Error::numeric(format!("{}: zero column norm", target.name())));
            }
            for i in 0..y.rows() {
                for ((val, mj), nj) in y.row_mut(i).iter_mut().zip(m).zip(&norms) {
                    *val *= mj / nj;
                }
            }
        }
        y.add_row_bias(&lin.bias);
        Ok(y)
    }
}

/// Token embeddings with adapters composed on the fly. Agrees with
/// [`encoder_forward`](crate::encoder::encoder_forward) on merged weights up
/// to rounding.
pub fn encoder_forward_composed(
    w0: &EncoderWeights,
    bundle: &AdapterBundle,
    seq: &SensorSequence,
) -> Result<Matrix> {
    if !bundle.method.is_low_rank() {
        return bundle.resolve(w0)?.forward_batch(&seq.tokens);
    }
    if seq.tokens.cols() != w0.config.input_dim() {
        return Err(Error::dim("sequence width does not match the encoder"));
    }
    let composed = Composed {
        adapters: bundle.targets.iter().map(|t| (t.target, t)).collect(),
        scale: bundle.scale(),
    };
    Ok(w0.without_head().run(&seq.tokens, &composed, false)?.0)
}
