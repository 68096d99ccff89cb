use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::device::FockLabel;
use crate::error::{Error, Result};

/// Order of the nine readout states `|n1 n2 nc⟩`.
pub const READOUT_STATES: [FockLabel; 9] = [
    FockLabel([0, 0, 0]),
    FockLabel([0, 1, 0]),
    FockLabel([1, 0, 0]),
    FockLabel([0, 0, 1]),
    FockLabel([0, 2, 0]),
    FockLabel([2, 0, 0]),
    FockLabel([0, 1, 1]),
    FockLabel([1, 0, 1]),
    FockLabel([1, 1, 0]),
];

/// Column-stochastic assignment matrix: entry `(i, j)` is the probability to
/// assign state `i` when state `j` was prepared.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(pub DMatrix<f64>);

fn parse_label(s: &str) -> Option<FockLabel> {
    let digits: Vec<u8> = s.chars().filter(|c| c.is_ascii_digit()).map(|c| c as u8 - b'0').collect();
    (digits.len() == 3).then(|| FockLabel([digits[0], digits[1], digits[2]]))
}

impl AssignmentMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.shape() != (9, 9) {
            return Err(Error::Validation(format!("assignment matrix must be 9x9, got {:?}", m.shape())));
        }
        if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("assignment matrix entries must be finite and non-negative".into()));
        }
        for j in 0..9 {
            let s = m.column(j).sum();
            if (s - 1.0).abs() > 1e-3 {
                return Err(Error::Validation(format!(
                    "assignment probabilities for prepared {} sum to {s}",
                    READOUT_STATES[j]
                )));
            }
        }
        Ok(Self(m))
    }

    /// Reads a CSV laid out like the usual figure: one row per prepared
    /// state, one column per assigned state. An optional header row and
    /// label column (e.g. `000` or `|000⟩`) reorder the entries into
    /// [`READOUT_STATES`] order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut rows: Vec<Vec<String>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            rows.push(rec.iter().map(str::to_string).collect());
        }
        let numeric = |s: &str| s.parse::<f64>().is_ok();
        let mut col_labels: Option<Vec<FockLabel>> = None;
        if rows.first().is_some_and(|r| r.iter().any(|f| !numeric(f))) {
            let header = rows.remove(0);
            let labels: Vec<FockLabel> = header.iter().filter_map(|f| parse_label(f)).collect();
            col_labels = Some(labels);
        }
        let mut row_labels = Vec::new();
        let mut values = Vec::new();
        for r in &rows {
            let (label, nums) = if r.len() == 10 { (parse_label(&r[0]), &r[1..]) } else { (None, &r[..]) };
            row_labels.push(label);
            let parsed: std::result::Result<Vec<f64>, _> = nums.iter().map(|f| f.parse::<f64>()).collect();
            values.push(parsed.map_err(|e| Error::Validation(format!("bad assignment entry: {e}")))?);
        }
        if values.len() != 9 || values.iter().any(|r| r.len() != 9) {
            return Err(Error::Validation("assignment CSV must hold 9 rows of 9 probabilities".into()));
        }
        let position = |l: FockLabel| READOUT_STATES.iter().position(|&s| s == l);
        let col_index: Vec<usize> = match &col_labels {
            Some(l) if l.len() == 9 => l
                .iter()
                .map(|&x| position(x).ok_or_else(|| Error::Validation(format!("unknown readout state {x}"))))
                .collect::<Result<_>>()?,
            Some(_) => return Err(Error::Validation("assignment CSV header must name 9 states".into())),
            None => (0..9).collect(),
        };
        let row_index: Vec<usize> = if row_labels.iter().all(Option::is_some) {
            row_labels
                .iter()
                .map(|l| {
                    position(l.unwrap())
                        .ok_or_else(|| Error::Validation(format!("unknown readout state {}", l.unwrap())))
                })
                .collect::<Result<_>>()?
        } else {
            (0..9).collect()
        };
        let mut m = DMatrix::zeros(9, 9);
        for (r, row) in values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m[(col_index[c], row_index[r])] = v;
            }
        }
        Self::new(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadoutCorrection {
    /// `M⁻¹·p`.
    pub raw: DVector<f64>,
    /// Nearest probability vector to `raw`; equal to it when already valid.
    pub projected: DVector<f64>,
    pub was_projected: bool,
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

pub fn readout_correct(m: &AssignmentMatrix, p: &DVector<f64>) -> Result<ReadoutCorrection> {
    if p.len() != m.0.nrows() {
        return Err(Error::Validation(format!("population vector has {} entries, expected {}", p.len(), m.0.nrows())));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Validation("populations must lie in [0, 1]".into()));
    }
    let sv = m.0.clone().svd(false, false).singular_values;
    let condition_number = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    let raw = m.0.clone().lu().solve(p).ok_or_else(|| Error::Numerical("assignment matrix is singular".into()))?;
    let ill_conditioned = condition_number > 1e6;
    if ill_conditioned {
        log::warn!("assignment matrix is ill-conditioned (condition number {condition_number:.3e})");
    }
    let valid = raw.iter().all(|&x| x >= 0.0) && (raw.sum() - 1.0).abs() < 1e-9;
    let projected = if valid { raw.clone() } else { project_simplex(&raw) };
    Ok(ReadoutCorrection { raw, projected, was_projected: !valid, condition_number, ill_conditioned })
}
