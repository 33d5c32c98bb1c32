use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::datapipe::SensorSequence;
use crate::error::{Error, Result};

/// Windows masked per sequence.
pub const MASKED_WINDOWS: usize = 5;
/// Share of a window's features replaced.
pub const MASK_RATE: f64 = 0.15;

/// Where a sequence was masked and what was written there.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// Sorted window (token) indices.
    pub windows: Vec<usize>,
    /// Sorted feature indices, one list per entry of `windows`.
    pub features: Vec<Vec<usize>>,
    /// Values written, aligned with `features`.
    pub values: Vec<Vec<f64>>,
}

impl MaskSpec {
    pub fn masked_count(&self) -> usize {
        self.features.iter().map(Vec::len).sum()
    }

    /// `(token, feature)` pairs in window order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.windows
            .iter()
            .zip(&self.features)
            .flat_map(|(&w, fs)| fs.iter().map(move |&f| (w, f)))
    }
}

/// Features masked per selected window: `floor(0.15·D)`, at least 1.
pub fn masked_per_window(features: usize) -> usize {
    ((MASK_RATE * features as f64).floor() as usize).max(1)
}

/// Replaces `floor(0.15·D)` features in each of 5 random windows with
/// standard-normal draws. The input stays the reconstruction target.
pub fn mdm_mask<R: Rng + ?Sized>(seq: &SensorSequence, rng: &mut R) -> Result<(SensorSequence, MaskSpec)> {
    let (t, d) = seq.tokens.shape();
    if t < MASKED_WINDOWS || d == 0 {
        return Err(Error::dim(format!(
            "masking needs at least {MASKED_WINDOWS} tokens and one feature, got {t}×{d}"
        )));
    }
    let per = masked_per_window(d);
    let mut windows = sample(rng, t, MASKED_WINDOWS).into_vec();
    windows.sort_unstable();
    let mut out = seq.clone();
    let mut features = Vec::with_capacity(MASKED_WINDOWS);
    let mut values = Vec::with_capacity(MASKED_WINDOWS);
    for &w in &windows {
        let mut fs = sample(rng, d, per).into_vec();
        fs.sort_unstable();
        let vs: Vec<f64> = fs.iter().map(|_| rng.sample(StandardNormal)).collect();
        let row = out.tokens.row_mut(w);
        for (&f, &v) in fs.iter().zip(&vs) {
            row[f] = v;
        }
        features.push(fs);
        values.push(vs);
    }
    Ok((
        out,
        MaskSpec {
            windows,
            features,
            values,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;
    use crate::numerics::Matrix;

    fn seq(d: usize) -> SensorSequence {
        SensorSequence::new(Matrix::gaussian(15, d, 1.0, &mut seeded(1)), 0, None)
    }

    #[test]
    fn counts_at_128_features() {
        assert_eq!(masked_per_window(128), 19);
        let (_, spec) = mdm_mask(&seq(128), &mut seeded(0)).unwrap();
        assert_eq!(spec.windows.len(), 5);
        assert!(spec.features.iter().all(|f| f.len() == 19));
        assert_eq!(spec.masked_count(), 95);
    }

    #[test]
    fn small_widths_mask_one() {
        assert_eq!(masked_per_window(7), 1);
        assert_eq!(masked_per_window(3), 1);
        assert_eq!(masked_per_window(14), 2);
    }

    #[test]
    fn unmasked_entries_untouched() {
        let s = seq(20);
        let (m, spec) = mdm_mask(&s, &mut seeded(4)).unwrap();
        let masked: std::collections::HashSet<_> = spec.positions().collect();
        for i in 0..15 {
            for j in 0..20 {
                if masked.contains(&(i, j)) {
                    let k = spec.windows.iter().position(|&w| w == i).unwrap();
                    let f = spec.features[k].iter().position(|&f| f == j).unwrap();
                    assert_eq!(m.tokens.get(i, j), spec.values[k][f]);
                } else {
                    assert_eq!(m.tokens.get(i, j).to_bits(), s.tokens.get(i, j).to_bits());
                }
            }
        }
    }

    #[test]
    fn seeded_and_distinct() {
        let s = seq(16);
        let a = mdm_mask(&s, &mut seeded(9)).unwrap().1;
        assert_eq!(a, mdm_mask(&s, &mut seeded(9)).unwrap().1);
        let mut w = a.windows.clone();
        w.dedup();
        assert_eq!(w.len(), 5);
    }

    #[test]
    fn too_few_tokens() {
        let s = SensorSequence::new(Matrix::zeros(4, 8), 0, None);
        assert!(mdm_mask(&s, &mut seeded(0)).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn mask_count_law(seed in 0u64..100_000, d in 1usize..200) {
            let s = SensorSequence::new(Matrix::zeros(15, d), 0, None);
            let (_, spec) = mdm_mask(&s, &mut seeded(seed)).unwrap();
            proptest::prop_assert_eq!(spec.masked_count(), 5 * masked_per_window(d));
            proptest::prop_assert!(spec.windows.iter().all(|&w| w < 15));
        }
    }
}
