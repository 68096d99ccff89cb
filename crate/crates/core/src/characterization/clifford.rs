use std::collections::{HashMap, VecDeque};
use std::sync::OnceLock;

use nalgebra::Matrix4;
use rand::Rng;
use serde::Serialize;

use crate::linalg::{C64, I};

/// Generators of the two-qubit Clifford group. Qubit 1 is the first tensor
/// factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Gate {
    H1,
    S1,
    H2,
    S2,
    Cz,
}

impl Gate {
    pub const ALL: [Gate; 5] = [Gate::H1, Gate::S1, Gate::H2, Gate::S2, Gate::Cz];

    pub fn unitary(self) -> Matrix4<C64> {
        let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let one = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        let h = nalgebra::Matrix2::new(r, r, r, -r);
        let s = nalgebra::Matrix2::new(one, z, z, I);
        let id = nalgebra::Matrix2::identity();
        match self {
            Gate::H1 => h.kronecker(&id),
            Gate::S1 => s.kronecker(&id),
            Gate::H2 => id.kronecker(&h),
            Gate::S2 => id.kronecker(&s),
            Gate::Cz => Matrix4::from_diagonal(&nalgebra::Vector4::new(one, one, one, -one)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CliffordElement {
    pub index: usize,
    pub unitary: Matrix4<C64>,
    /// Generator gates in time order whose product is `unitary` up to a
    /// global phase.
    pub decomposition: Vec<Gate>,
}

type Key = [i32; 32];

/// Canonical form up to global phase: rotate the first non-negligible entry
/// (column-major) onto the positive real axis and round.
pub fn phase_key(u: &Matrix4<C64>) -> Key {
    let pivot = u.iter().find(|z| z.norm() > 1e-6).copied().unwrap_or(C64::new(1.0, 0.0));
    let rot = pivot.conj() / pivot.norm();
    let mut key = [0i32; 32];
    for (k, z) in u.iter().enumerate() {
        let w = z * rot;
        key[2 * k] = (w.re * 1e6).round() as i32;
        key[2 * k + 1] = (w.im * 1e6).round() as i32;
    }
    key
}

/// The two-qubit Clifford group modulo global phase.
pub struct CliffordGroup {
    elements: Vec<CliffordElement>,
    lookup: HashMap<Key, usize>,
    inverse: Vec<usize>,
}

impl CliffordGroup {
    /// Breadth-first closure over [`Gate::ALL`] starting from the identity.
    pub fn generate() -> Self {
        let gens: Vec<(Gate, Matrix4<C64>)> = Gate::ALL.iter().map(|&g| (g, g.unitary())).collect();
        let mut elements = vec![CliffordElement { index: 0, unitary: Matrix4::identity(), decomposition: vec![] }];
        let mut lookup = HashMap::new();
        lookup.insert(phase_key(&elements[0].unitary), 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for (g, gu) in &gens {
                let u = gu * elements[i].unitary;
                let key = phase_key(&u);
                if lookup.contains_key(&key) {
                    continue;
                }
                let index = elements.len();
                let mut decomposition = elements[i].decomposition.clone();
                decomposition.push(*g);
                lookup.insert(key, index);
                elements.push(CliffordElement { index, unitary: u, decomposition });
                queue.push_back(index);
            }
        }
        let inverse = elements
            .iter()
            .map(|e| *lookup.get(&phase_key(&e.unitary.adjoint())).expect("group is closed under inversion"))
            .collect();
        Self { elements, lookup, inverse }
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, index: usize) -> &CliffordElement {
        &self.elements[index]
    }

    pub fn unitary(&self, index: usize) -> &Matrix4<C64> {
        &self.elements[index].unitary
    }

    pub fn identity(&self) -> usize {
        0
    }

    /// Index of `u` if it is a Clifford up to global phase.
    pub fn find(&self, u: &Matrix4<C64>) -> Option<usize> {
        self.lookup.get(&phase_key(u)).copied()
    }

    /// Index of "apply `first`, then `second`".
    pub fn compose(&self, first: usize, second: usize) -> usize {
        self.find(&(self.elements[second].unitary * self.elements[first].unitary))
            .expect("group is closed under composition")
    }

    pub fn inverse(&self, index: usize) -> usize {
        self.inverse[index]
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.order())
    }
}

/// Shared, lazily generated group.
pub fn clifford_group() -> &'static CliffordGroup {
    static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
    GROUP.get_or_init(CliffordGroup::generate)
}

/// Equality up to global phase.
pub fn equal_up_to_phase(a: &Matrix4<C64>, b: &Matrix4<C64>) -> bool {
    let overlap = (a.adjoint() * b).trace();
    (overlap.norm() - 4.0).abs() < 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn order_is_11520() {
        assert_eq!(clifford_group().order(), 11520);
    }

    #[test]
    fn identity_is_neutral_and_inverses_cancel() {
        let g = clifford_group();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = g.random(&mut rng);
            assert_eq!(g.compose(g.identity(), a), a);
            assert_eq!(g.compose(a, g.identity()), a);
            assert_eq!(g.compose(a, g.inverse(a)), g.identity());
            let prod = g.unitary(g.inverse(a)) * g.unitary(a);
            assert!(equal_up_to_phase(&prod, &Matrix4::identity()));
        }
    }

    #[test]
    fn associativity_on_samples() {
        let g = clifford_group();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (a, b, c) = (g.random(&mut rng), g.random(&mut rng), g.random(&mut rng));
            assert_eq!(g.compose(g.compose(a, b), c), g.compose(a, g.compose(b, c)));
        }
    }

    #[test]
    fn decompositions_reproduce_unitaries() {
        let g = clifford_group();
        for index in [1, 17, 500, 4000, 11519] {
            let e = g.element(index);
            let u = e.decomposition.iter().fold(Matrix4::identity(), |acc, gate| gate.unitary() * acc);
            assert!(equal_up_to_phase(&u, &e.unitary));
        }
    }

    #[test]
    fn cz_and_global_phase_are_found() {
        let g = clifford_group();
        let cz = Gate::Cz.unitary();
        let idx = g.find(&cz).unwrap();
        assert_eq!(g.find(&(cz * C64::from_polar(1.0, 0.3))), Some(idx));
        let t = Matrix4::from_diagonal(&nalgebra::Vector4::new(
            C64::new(1.0, 0.0),
            C64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
            C64::new(1.0, 0.0),
            C64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
        ));
        assert_eq!(g.find(&t), None);
    }
}
