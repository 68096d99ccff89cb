//! Small dense helpers shared by the physics modules.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

pub type C64 = Complex<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Truncated annihilation operator on `n` Fock levels.
pub fn annihilation(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = (k as f64).sqrt();
    }
    a
}

/// Eigen-decomposition of a real symmetric matrix with eigenvalues sorted
/// ascending and each eigenvector's largest component made positive.
pub fn sym_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let imax = v.iamax();
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        vecs.column_mut(col).copy_from(&(v * sign));
    }
    (vals, vecs)
}

/// `exp(-2πi h t)` for a real symmetric `h` given in GHz and `t` in ns.
pub fn expm_sym(h: &DMatrix<f64>, t: f64) -> DMatrix<C64> {
    let (vals, vecs) = sym_eigen(h.clone());
    expm_from_eigen(&vals, &vecs, t)
}

pub fn expm_from_eigen(vals: &DVector<f64>, vecs: &DMatrix<f64>, t: f64) -> DMatrix<C64> {
    let n = vals.len();
    let mut out = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        let ph = C64::from_polar(1.0, -std::f64::consts::TAU * vals[k] * t);
        for i in 0..n {
            let vik = vecs[(i, k)] * ph;
            for j in 0..n {
                out[(i, j)] += vik * vecs[(j, k)];
            }
        }
    }
    out
}

/// Largest absolute entry of `A†A - 1`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let g = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annihilation_commutator_away_from_cutoff() {
        let a = annihilation(6);
        let c = &a * a.transpose() - a.transpose() * &a;
        for k in 0..5 {
            assert!((c[(k, k)] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn expm_is_unitary_and_matches_scalar_case() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -0.5]);
        let u = expm_sym(&h, 0.7);
        assert!(unitarity_defect(&u) < 1e-13);
        let d = DMatrix::from_row_slice(1, 1, &[2.0]);
        let e = expm_sym(&d, 0.1);
        let want = C64::from_polar(1.0, -std::f64::consts::TAU * 0.2);
        assert!((e[(0, 0)] - want).norm() < 1e-15);
    }

    #[test]
    fn line_fit_exact() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
    }
}
