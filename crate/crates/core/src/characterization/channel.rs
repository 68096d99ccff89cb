use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen};

use super::qpt::pauli2;
use crate::error::{Error, Result};
use crate::linalg::C64;

/// Linear map on density operators of the four computational states plus
/// `dim - 4` leakage levels, stored as a column-stacking superoperator.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    dim: usize,
    superop: DMatrix<C64>,
}

fn embed(u: &Matrix4<C64>, dim: usize, leak_diag: C64) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (4, 4)).copy_from(u);
    for k in 4..dim {
        m[(k, k)] = leak_diag;
    }
    m
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl Channel {
    pub fn from_kraus(dim: usize, kraus: &[DMatrix<C64>]) -> Result<Self> {
        if dim < 4 {
            return Err(Error::Channel(format!("dimension {dim} is smaller than the computational space")));
        }
        let mut superop = DMatrix::zeros(dim * dim, dim * dim);
        for k in kraus {
            if k.shape() != (dim, dim) {
                return Err(Error::Channel(format!("Kraus operator has shape {:?}, expected {dim}x{dim}", k.shape())));
            }
            superop += k.map(|z| z.conj()).kronecker(k);
        }
        Ok(Self { dim, superop })
    }

    pub fn identity(leak_levels: usize) -> Self {
        let dim = 4 + leak_levels;
        Self { dim, superop: DMatrix::identity(dim * dim, dim * dim) }
    }

    /// `u` on the computational block, identity on the leakage levels.
    pub fn unitary(u: &Matrix4<C64>, leak_levels: usize) -> Self {
        let dim = 4 + leak_levels;
        Self::from_kraus(dim, &[embed(u, dim, C64::new(1.0, 0.0))]).unwrap()
    }

    /// `ρ → pρ + (1-p) Tr(ρ) 1/4` on the computational block.
    pub fn depolarizing(p: f64, leak_levels: usize) -> Result<Self> {
        check_probability("depolarizing parameter", p)?;
        let dim = 4 + leak_levels;
        let kraus: Vec<DMatrix<C64>> = (0..16)
            .map(|i| {
                let w = if i == 0 { p + (1.0 - p) / 16.0 } else { (1.0 - p) / 16.0 };
                embed(&pauli2(i), dim, C64::new(1.0, 0.0)) * C64::new(w.sqrt(), 0.0)
            })
            .collect();
        Self::from_kraus(dim, &kraus)
    }

    /// Independent energy relaxation of the two qubits with probabilities
    /// `gamma1`, `gamma2`.
    pub fn amplitude_damping(gamma1: f64, gamma2: f64, leak_levels: usize) -> Result<Self> {
        check_probability("gamma1", gamma1)?;
        check_probability("gamma2", gamma2)?;
        let single = |g: f64| {
            let c = |x: f64| C64::new(x, 0.0);
            [
                Matrix2::new(c(1.0), c(0.0), c(0.0), c((1.0 - g).sqrt())),
                Matrix2::new(c(0.0), c(g.sqrt()), c(0.0), c(0.0)),
            ]
        };
        let dim = 4 + leak_levels;
        let (a, b) = (single(gamma1), single(gamma2));
        let mut kraus = Vec::with_capacity(4);
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                let leak = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                kraus.push(embed(&ai.kronecker(bj), dim, C64::new(leak, 0.0)));
            }
        }
        Self::from_kraus(dim, &kraus)
    }

    /// Each computational state leaks to the first leakage level with
    /// probability `p_leak`; that level returns uniformly to the
    /// computational states with probability `p_seep`.
    pub fn leakage(p_leak: f64, p_seep: f64, leak_levels: usize) -> Result<Self> {
        check_probability("leak probability", p_leak)?;
        check_probability("seepage probability", p_seep)?;
        if leak_levels == 0 {
            return Err(Error::Channel("a leakage channel needs at least one leakage level".into()));
        }
        let dim = 4 + leak_levels;
        let mut k0 = DMatrix::identity(dim, dim);
        for k in 0..4 {
            k0[(k, k)] = C64::new((1.0 - p_leak).sqrt(), 0.0);
        }
        k0[(4, 4)] = C64::new((1.0 - p_seep).sqrt(), 0.0);
        let mut kraus = vec![k0];
        for k in 0..4 {
            let mut out = DMatrix::zeros(dim, dim);
            out[(4, k)] = C64::new(p_leak.sqrt(), 0.0);
            kraus.push(out);
            let mut back = DMatrix::zeros(dim, dim);
            back[(k, 4)] = C64::new((p_seep / 4.0).sqrt(), 0.0);
            kraus.push(back);
        }
        Self::from_kraus(dim, &kraus)
    }

    /// Channel of a simulated gate whose computational block is `block`
    /// (a contraction); the missing population is routed to the first
    /// leakage level.
    pub fn from_block(block: &Matrix4<C64>, leak_levels: usize) -> Result<Self> {
        if leak_levels == 0 {
            return Err(Error::Channel("routing leakage needs at least one leakage level".into()));
        }
        let dim = 4 + leak_levels;
        let loss = Matrix4::identity() - block.adjoint() * block;
        let eig = SymmetricEigen::new((loss + loss.adjoint()) * C64::new(0.5, 0.0));
        if eig.eigenvalues.min() < -1e-9 {
            return Err(Error::Channel(format!(
                "block is not a contraction (loss eigenvalue {:.3e})",
                eig.eigenvalues.min()
            )));
        }
        let mut kraus = vec![embed(block, dim, C64::new(1.0, 0.0))];
        for m in 0..4 {
            let e = eig.eigenvalues[m].max(0.0);
            if e < 1e-15 {
                continue;
            }
            let mut k = DMatrix::zeros(dim, dim);
            for j in 0..4 {
                k[(4, j)] = eig.eigenvectors[(j, m)].conj() * e.sqrt();
            }
            kraus.push(k);
        }
        Self::from_kraus(dim, &kraus)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leak_levels(&self) -> usize {
        self.dim - 4
    }

    pub fn superoperator(&self) -> &DMatrix<C64> {
        &self.superop
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Channel) -> Result<Channel> {
        if self.dim != next.dim {
            return Err(Error::Channel(format!("cannot compose dimensions {} and {}", self.dim, next.dim)));
        }
        Ok(Channel { dim: self.dim, superop: &next.superop * &self.superop })
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let v = DVector::from_column_slice(rho.as_slice());
        let out = &self.superop * v;
        DMatrix::from_column_slice(self.dim, self.dim, out.as_slice())
    }

    /// Largest eigenvalue of the trace functional minus one; positive values
    /// mean the map can increase the trace.
    pub fn trace_excess(&self) -> f64 {
        let d = self.dim;
        let mut w = DMatrix::<C64>::zeros(d, d);
        for j in 0..d {
            for m in 0..d * d {
                w[(m % d, m / d)] += self.superop[(j * d + j, m)];
            }
        }
        let x = w.transpose();
        let herm = (&x + x.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(herm).eigenvalues.max() - 1.0
    }

    /// Reject maps that increase the trace by more than 1e-6.
    pub fn validate(&self) -> Result<()> {
        let excess = self.trace_excess();
        if excess > 1e-6 {
            return Err(Error::Model(format!("channel increases the trace by up to {excess:.3e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground(dim: usize) -> DMatrix<C64> {
        let mut r = DMatrix::zeros(dim, dim);
        r[(0, 0)] = C64::new(1.0, 0.0);
        r
    }

    #[test]
    fn depolarizing_shrinks_towards_mixed_state() {
        let ch = Channel::depolarizing(0.9, 1).unwrap();
        let out = ch.apply(&ground(5));
        assert!((out[(0, 0)].re - (0.9 + 0.1 / 4.0)).abs() < 1e-12);
        assert!((out[(3, 3)].re - 0.025).abs() < 1e-12);
        assert!(out[(4, 4)].norm() < 1e-14);
        assert!(ch.trace_excess().abs() < 1e-12);
    }

    #[test]
    fn leakage_moves_population() {
        let ch = Channel::leakage(0.01, 0.1, 1).unwrap();
        let out = ch.apply(&ground(5));
        assert!((out[(4, 4)].re - 0.01).abs() < 1e-14);
        assert!((out.trace().re - 1.0).abs() < 1e-14);
        let back = ch.apply(&out);
        assert!((back[(4, 4)].re - (0.01 * 0.99 + 0.01 * 0.9)).abs() < 1e-14);
    }

    #[test]
    fn trace_increasing_map_is_rejected() {
        let k = DMatrix::identity(5, 5) * C64::new(1.01, 0.0);
        let ch = Channel::from_kraus(5, &[k]).unwrap();
        assert!(matches!(ch.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn contraction_block_is_completed_to_trace_preserving() {
        let mut b = Matrix4::identity();
        b[(3, 3)] = C64::new(0.0, 0.9);
        b[(2, 2)] = C64::new(0.95, 0.0);
        let ch = Channel::from_block(&b, 1).unwrap();
        assert!(ch.trace_excess().abs() < 1e-12);
        let mut r = DMatrix::zeros(5, 5);
        r[(3, 3)] = C64::new(1.0, 0.0);
        assert!((ch.apply(&r)[(4, 4)].re - 0.19).abs() < 1e-12);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = Channel::amplitude_damping(0.1, 0.2, 1).unwrap();
        let b = Channel::leakage(0.05, 0.0, 1).unwrap();
        let mut r = DMatrix::from_element(5, 5, C64::new(0.2, 0.0));
        r[(0, 1)] = C64::new(0.1, 0.05);
        r[(1, 0)] = C64::new(0.1, -0.05);
        let seq = b.apply(&a.apply(&r));
        let comp = a.then(&b).unwrap().apply(&r);
        assert!((seq - comp).norm() < 1e-14);
    }
}
