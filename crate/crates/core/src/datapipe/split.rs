use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::SensorSequence;

/// Train/validation/test partition with a record of what was fitted where.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitDataset {
    pub train: Vec<SensorSequence>,
    pub validation: Vec<SensorSequence>,
    pub test: Vec<SensorSequence>,
    pub provenance: Vec<String>,
}

impl SplitDataset {
    pub fn splits(&self) -> [(&'static str, &Vec<SensorSequence>); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    pub fn splits_mut(&mut self) -> [&mut Vec<SensorSequence>; 3] {
        [&mut self.train, &mut self.validation, &mut self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups sequences by subject, keeping each subject's order.
pub fn group_by_subject(seqs: Vec<SensorSequence>) -> Vec<Vec<SensorSequence>> {
    let mut groups: BTreeMap<u32, Vec<SensorSequence>> = BTreeMap::new();
    for s in seqs {
        groups.entry(s.subject).or_default().push(s);
    }
    groups.into_values().collect()
}

fn cut(n: usize, fraction: f64) -> usize {
    // The epsilon keeps products like 0.7 × 10 from flooring to 6.
    ((n as f64 * fraction) + 1e-9).floor() as usize
}

/// Per subject: the earliest `train` fraction, then `validation`, the rest to
/// test. Both cuts round down, so a lone sequence goes to test.
pub fn chronological_split(
    subjects: Vec<Vec<SensorSequence>>,
    train: f64,
    validation: f64,
) -> Result<SplitDataset> {
    if subjects.is_empty() {
        return Err(Error::invalid("no subjects to split"));
    }
    if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&validation) || train + validation > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "split fractions {train}/{validation} do not fit in 1"
        )));
    }
    let mut out = SplitDataset::default();
    for (i, group) in subjects.into_iter().enumerate() {
        if group.is_empty() {
            return Err(Error::invalid(format!("subject group {i} has no sequences")));
        }
        let n = group.len();
        let n_train = cut(n, train);
        let n_val = cut(n, validation);
        for (j, s) in group.into_iter().enumerate() {
            if j < n_train {
                out.train.push(s);
            } else if j < n_train + n_val {
                out.validation.push(s);
            } else {
                out.test.push(s);
            }
        }
    }
    out.provenance.push(format!(
        "chronological split {train}/{validation}/{:.1} per subject",
        1.0 - train - validation
    ));
    Ok(out)
}

/// Earliest `fraction` of each subject's sequences (at least one per subject).
pub fn chronological_prefix(seqs: &[SensorSequence], fraction: f64) -> Result<Vec<SensorSequence>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("data fraction {fraction} outside (0, 1]")));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in seqs {
        *counts.entry(s.subject).or_default() += 1;
    }
    let keep: BTreeMap<u32, usize> = counts
        .into_iter()
        .map(|(subj, n)| (subj, cut(n, fraction).max(1)))
        .collect();
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for s in seqs {
        let c = seen.entry(s.subject).or_default();
        if *c < keep[&s.subject] {
            out.push(s.clone());
        }
        *c += 1;
    }
    Ok(out)
}
