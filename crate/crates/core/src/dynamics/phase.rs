use std::f64::consts::{PI, TAU};

use nalgebra::Matrix4;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseReport {
    /// Conditional phase wrapped to `[0, 2π)`.
    pub phi_c: f64,
    /// Dynamic phase of Q1, `arg⟨10|U|10⟩ - arg⟨00|U|00⟩`, wrapped to `(-π, π]`.
    pub theta1: f64,
    /// Dynamic phase of Q2, `arg⟨01|U|01⟩ - arg⟨00|U|00⟩`, wrapped to `(-π, π]`.
    pub theta2: f64,
    /// Frobenius distance between `U` with single-qubit Z phases and global
    /// phase removed, and `diag(1, 1, 1, e^{iφ_c})`.
    pub residual: f64,
}

/// Wrap to `(-π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// The representative of `x` modulo 2π closest to `reference`.
pub fn unwrap_near(x: f64, reference: f64) -> f64 {
    reference + wrap_pi(x - reference)
}

/// Extract conditional and dynamic phases from a computational-subspace
/// propagator ordered |00⟩, |01⟩, |10⟩, |11⟩.
pub fn conditional_phase(u: &Matrix4<C64>) -> Result<PhaseReport> {
    const NAMES: [&str; 4] = ["00", "01", "10", "11"];
    for k in 0..4 {
        let m = u[(k, k)].norm();
        if m < 0.1 {
            return Err(Error::UndefinedPhase { state: NAMES[k], magnitude: m });
        }
    }
    let arg = |k: usize| u[(k, k)].arg();
    let phi = (arg(3) - arg(2) - arg(1) + arg(0)).rem_euclid(TAU);
    let theta1 = wrap_pi(arg(2) - arg(0));
    let theta2 = wrap_pi(arg(1) - arg(0));
    let d = [0.0, theta2, theta1, theta1 + theta2];
    let mut residual = 0.0;
    for j in 0..4 {
        let unphase = C64::from_polar(1.0, -(d[j] + arg(0)));
        for k in 0..4 {
            let ideal = match (j, k) {
                (3, 3) => C64::from_polar(1.0, phi),
                (a, b) if a == b => C64::new(1.0, 0.0),
                _ => C64::new(0.0, 0.0),
            };
            residual += (u[(j, k)] * unphase - ideal).norm_sqr();
        }
    }
    Ok(PhaseReport { phi_c: phi, theta1, theta2, residual: residual.sqrt() })
}

/// `diag(1, 1, 1, e^{iφ})`.
pub fn cphase(phi: f64) -> Matrix4<C64> {
    let one = C64::new(1.0, 0.0);
    Matrix4::from_diagonal(&nalgebra::Vector4::new(one, one, one, C64::from_polar(1.0, phi)))
}

/// `U` with its dynamic phases and the phase of `⟨00|U|00⟩` undone by
/// virtual Z rotations.
pub fn virtual_z_correct(u: &Matrix4<C64>) -> Matrix4<C64> {
    let arg = |k: usize| u[(k, k)].arg();
    let (t1, t2) = (arg(2) - arg(0), arg(1) - arg(0));
    let d = [0.0, t2, t1, t1 + t2];
    Matrix4::from_fn(|j, k| u[(j, k)] * C64::from_polar(1.0, -(d[j] + arg(0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(p: [f64; 4]) -> Matrix4<C64> {
        Matrix4::from_diagonal(&nalgebra::Vector4::from_iterator(p.iter().map(|&x| C64::from_polar(1.0, x))))
    }

    #[test]
    fn virtual_z_leaves_a_cphase() {
        let u = diag([0.3, 1.1, -0.4, 2.9]);
        let c = virtual_z_correct(&u);
        let r = conditional_phase(&u).unwrap();
        assert!((c - cphase(r.phi_c)).norm() < 1e-12);
    }

    #[test]
    fn identity_and_cz() {
        let r = conditional_phase(&Matrix4::identity()).unwrap();
        assert_eq!((r.phi_c, r.theta1, r.theta2), (0.0, 0.0, 0.0));
        assert!(r.residual < 1e-15);
        let r = conditional_phase(&diag([0.0, 0.0, 0.0, PI])).unwrap();
        assert!((r.phi_c - PI).abs() < 1e-12);
    }

    #[test]
    fn z_on_first_qubit_then_cz() {
        // (Z ⊗ I) CZ = diag(1, 1, -1, 1)
        let r = conditional_phase(&diag([0.0, 0.0, PI, 0.0])).unwrap();
        assert!((r.phi_c - PI).abs() < 1e-12);
        assert!((r.theta1.abs() - PI).abs() < 1e-12);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn small_diagonal_is_undefined() {
        let mut u = Matrix4::identity();
        u[(3, 3)] = C64::new(0.05, 0.0);
        assert!(matches!(conditional_phase(&u), Err(Error::UndefinedPhase { state: "11", .. })));
    }

    #[test]
    fn unwrap_helpers() {
        assert!((wrap_pi(3.0 * PI) - PI).abs() < 1e-12);
        assert!((unwrap_near(0.1, 2.0 * PI) - (2.0 * PI + 0.1)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn z_rotations_leave_phi_unchanged(
            a in -10.0f64..10.0, b in -10.0f64..10.0, g in -10.0f64..10.0,
            p in proptest::array::uniform4(-3.0f64..3.0),
        ) {
            let u = diag(p);
            let z = diag([g, g + b, g + a, g + a + b]);
            let r0 = conditional_phase(&u).unwrap();
            let r1 = conditional_phase(&(z * u)).unwrap();
            prop_assert!(wrap_pi(r0.phi_c - r1.phi_c).abs() < 1e-9);
            prop_assert!(r1.residual < 1e-9);
        }
    }
}
