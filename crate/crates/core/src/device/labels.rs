use std::fmt;

use serde::Serialize;

use super::HamiltonianModel;
use crate::error::{Error, Result};

/// Bare Fock label `|n1 n2 nc⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FockLabel(pub [u8; 3]);

impl FockLabel {
    pub const fn new(n1: u8, n2: u8, nc: u8) -> Self {
        Self([n1, n2, nc])
    }

    pub fn excitations(&self) -> usize {
        self.0.iter().map(|&x| x as usize).sum()
    }
}

impl fmt::Display for FockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{}{}{}⟩", self.0[0], self.0[1], self.0[2])
    }
}

/// Computational states in the order |00⟩, |01⟩, |10⟩, |11⟩ (Q1 first),
/// coupler in its ground state.
pub const COMPUTATIONAL: [FockLabel; 4] =
    [FockLabel::new(0, 0, 0), FockLabel::new(0, 1, 0), FockLabel::new(1, 0, 0), FockLabel::new(1, 1, 0)];

/// States whose dressed counterparts are followed by the labeling.
pub const TRACKED: [FockLabel; 10] = [
    FockLabel::new(0, 0, 0),
    FockLabel::new(1, 0, 0),
    FockLabel::new(0, 1, 0),
    FockLabel::new(0, 0, 1),
    FockLabel::new(1, 1, 0),
    FockLabel::new(2, 0, 0),
    FockLabel::new(0, 2, 0),
    FockLabel::new(0, 0, 2),
    FockLabel::new(1, 0, 1),
    FockLabel::new(0, 1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelEntry {
    pub label: FockLabel,
    /// Column of the eigenvector matrix.
    pub index: usize,
    /// `|⟨label|eigenvector⟩|²`.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMap {
    pub entries: Vec<LabelEntry>,
}

impl LabelMap {
    pub fn get(&self, label: FockLabel) -> Option<&LabelEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    /// Ground-referenced dressed energy of `label` in GHz.
    pub fn energy(&self, model: &HamiltonianModel, label: FockLabel) -> Result<f64> {
        let e = self.get(label).ok_or_else(|| Error::Model(format!("{label} is not a tracked label")))?;
        Ok(model.energies[e.index])
    }
}

/// Minimum probability overlap for a label assignment.
pub const OVERLAP_FLOOR: f64 = 0.5;

/// Assign each tracked bare label to a dressed eigenvector.
///
/// Candidate pairs are taken greedily in order of decreasing overlap; a label
/// whose best available overlap is below one half is reported as ambiguous.
pub fn label_states(model: &HamiltonianModel) -> Result<LabelMap> {
    label_subset(model, &TRACKED)
}

/// Same as [`label_states`] restricted to `wanted`.
pub fn label_subset(model: &HamiltonianModel, wanted: &[FockLabel]) -> Result<LabelMap> {
    let n = model.truncation;
    let entries = assign_labels(&model.eigenvectors, wanted, |l| {
        l.0.iter().all(|&k| (k as usize) < n).then(|| model.index(l.0[0] as usize, l.0[1] as usize, l.0[2] as usize))
    })?;
    Ok(LabelMap { entries })
}

/// Greedy overlap assignment shared by every model. `row_of` gives the basis
/// index of a bare label, or `None` when the label lies outside the basis.
pub fn assign_labels(
    eigenvectors: &nalgebra::DMatrix<f64>,
    wanted: &[FockLabel],
    row_of: impl Fn(FockLabel) -> Option<usize>,
) -> Result<Vec<LabelEntry>> {
    let dim = eigenvectors.ncols();
    let labels: Vec<(FockLabel, usize)> = wanted.iter().filter_map(|&l| row_of(l).map(|r| (l, r))).collect();
    let mut candidates = Vec::new();
    for (li, &(_, row)) in labels.iter().enumerate() {
        for col in 0..dim {
            let ov = eigenvectors[(row, col)].powi(2);
            if ov > 1e-3 {
                candidates.push((ov, li, col));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: Vec<Option<(usize, f64)>> = vec![None; labels.len()];
    let mut taken = vec![false; dim];
    for (ov, li, col) in candidates {
        if assigned[li].is_none() && !taken[col] {
            assigned[li] = Some((col, ov));
            taken[col] = true;
        }
    }
    let mut entries = Vec::with_capacity(labels.len());
    for (li, &(label, _)) in labels.iter().enumerate() {
        match assigned[li] {
            Some((index, overlap)) if overlap >= OVERLAP_FLOOR => entries.push(LabelEntry { label, index, overlap }),
            other => return Err(Error::AmbiguousLabel { label, overlap: other.map_or(0.0, |x| x.1) }),
        }
    }
    Ok(entries)
}
