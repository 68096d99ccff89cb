use std::io::Write;

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::channel::Channel;
use super::multinomial;
use crate::error::{Error, Result};
use crate::linalg::{C64, I};

fn pauli1(k: usize) -> Matrix2<C64> {
    let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    match k {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -I, I, z),
        _ => Matrix2::new(o, z, z, -o),
    }
}

/// Two-qubit Pauli `σ_a ⊗ σ_b` for `i = 4a + b` (I, X, Y, Z).
pub fn pauli2(i: usize) -> Matrix4<C64> {
    pauli1(i / 4).kronecker(&pauli1(i % 4))
}

/// Real 16×16 Pauli transfer matrix `R_ij = Tr(P_i Λ(P_j)) / 4` with
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessMatrix {
    pub ptm: DMatrix<f64>,
    pub projected: bool,
    /// Smallest Choi eigenvalue (Choi trace 4).
    pub choi_min_eigenvalue: f64,
    /// Largest deviation of the first row from (1, 0, …, 0).
    pub tp_residual: f64,
}

impl ProcessMatrix {
    pub fn new(ptm: DMatrix<f64>, projected: bool) -> Self {
        let choi_min_eigenvalue = SymmetricEigen::new(choi(&ptm)).eigenvalues.min();
        let tp_residual = (0..16).map(|j| (ptm[(0, j)] - if j == 0 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
        Self { ptm, projected, choi_min_eigenvalue, tp_residual }
    }
}

/// Choi matrix `Σ_kl |k⟩⟨l| ⊗ Λ(|k⟩⟨l|)` of a PTM.
pub fn choi(ptm: &DMatrix<f64>) -> DMatrix<C64> {
    let mut j = DMatrix::zeros(16, 16);
    for a in 0..16 {
        for b in 0..16 {
            let r = ptm[(a, b)];
            if r != 0.0 {
                let term = pauli2(b).transpose().kronecker(&pauli2(a));
                j += DMatrix::from_iterator(16, 16, term.iter().map(|z| z * (r / 4.0)));
            }
        }
    }
    j
}

pub fn ptm_from_choi(j: &DMatrix<C64>) -> DMatrix<f64> {
    DMatrix::from_fn(16, 16, |a, b| {
        let p = pauli2(b).transpose().kronecker(&pauli2(a));
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..16 {
            for c in 0..16 {
                tr += j[(r, c)] * p[(c, r)];
            }
        }
        tr.re / 4.0
    })
}

pub fn ptm_of_unitary(u: &Matrix4<C64>) -> DMatrix<f64> {
    let paulis: Vec<Matrix4<C64>> = (0..16).map(pauli2).collect();
    let out: Vec<Matrix4<C64>> = paulis.iter().map(|p| u * p * u.adjoint()).collect();
    DMatrix::from_fn(16, 16, |i, j| (paulis[i] * out[j]).trace().re / 4.0)
}

/// PTM of the computational block of `channel` (no renormalization).
pub fn ptm_of_channel(channel: &Channel) -> DMatrix<f64> {
    let d = channel.dim();
    let out: Vec<Matrix4<C64>> = (0..16)
        .map(|j| {
            let mut p = DMatrix::zeros(d, d);
            p.view_mut((0, 0), (4, 4)).copy_from(&pauli2(j));
            let o = channel.apply(&p);
            Matrix4::from_fn(|r, c| o[(r, c)])
        })
        .collect();
    DMatrix::from_fn(16, 16, |i, j| (pauli2(i) * out[j]).trace().re / 4.0)
}

fn project_tp(r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = r.clone();
    out[(0, 0)] = 1.0;
    for j in 1..16 {
        out[(0, j)] = 0.0;
    }
    out
}

fn project_cp(r: &DMatrix<f64>) -> DMatrix<f64> {
    let j = choi(r);
    let herm = (&j + j.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let vals = eig.eigenvalues.map(|v| C64::new(v.max(0.0), 0.0));
    let clipped = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.adjoint();
    ptm_from_choi(&clipped)
}

/// Nearest CPTP map in Frobenius norm (the PTM-to-Choi map is an isometry)
/// by Dykstra's alternating projections; stops when an iteration moves the
/// estimate by less than 1e-8.
pub fn project_cptp(ptm: &DMatrix<f64>) -> (ProcessMatrix, usize) {
    let mut x = ptm.clone();
    let mut p = DMatrix::zeros(16, 16);
    let mut q = DMatrix::zeros(16, 16);
    let mut iterations = 0;
    for it in 1..=100_000 {
        iterations = it;
        let y = project_tp(&(&x + &p));
        p = &x + &p - &y;
        let next = project_cp(&(&y + &q));
        q = &y + &q - &next;
        let update = (&next - &x).norm();
        x = next;
        if update < 1e-8 {
            break;
        }
    }
    (ProcessMatrix::new(x, true), iterations)
}

/// Density matrices of the 16 product preparations of |0⟩, |1⟩, |+⟩, |+i⟩.
pub fn standard_preparations() -> Vec<Matrix4<C64>> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let kets = [
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(r, 0.0), C64::new(r, 0.0)],
        [C64::new(r, 0.0), C64::new(0.0, r)],
    ];
    let mut out = Vec::with_capacity(16);
    for a in &kets {
        for b in &kets {
            let psi = nalgebra::Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]);
            out.push(psi * psi.adjoint());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QptSettings {
    /// Shots per Pauli measurement setting; `None` uses exact expectations.
    pub shots: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QptResult {
    pub raw: ProcessMatrix,
    pub projected: ProcessMatrix,
    pub iterations: usize,
    /// Mean fraction of events discarded as leaked.
    pub discarded: f64,
}

/// Rows are the ⟨±| eigenbras of X, Y, Z (eigenvalue +1 first).
fn measurement_basis(k: usize) -> Matrix2<C64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    match k {
        1 => Matrix2::new(o * r, o * r, o * r, -o * r),
        2 => Matrix2::new(o * r, -I * r, o * r, I * r),
        _ => Matrix2::new(o, z, z, o),
    }
}

/// Pauli expectation vector of a post-selected output state.
fn expectations(block: &Matrix4<C64>, shots: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let tr = block.trace().re;
    if tr < 1e-12 {
        return Err(Error::Numerical("output state fully leaked".into()));
    }
    let Some(n) = shots else {
        return Ok((0..16).map(|i| (pauli2(i) * block).trace().re / tr).collect());
    };
    let mut sums = [0.0; 16];
    let mut uses = [0usize; 16];
    for a in 1..4 {
        for b in 1..4 {
            let v = measurement_basis(a).kronecker(&measurement_basis(b));
            let rot = v * block * v.adjoint();
            let mut probs: Vec<f64> = (0..4).map(|m| rot[(m, m)].re.max(0.0)).collect();
            probs.push((1.0 - tr).max(0.0));
            let counts = multinomial(rng, n as u64, &probs);
            let kept: u64 = counts[..4].iter().sum();
            if kept == 0 {
                continue;
            }
            let mut e = [0.0; 3];
            for (m, &c) in counts[..4].iter().enumerate() {
                let (s1, s2) = (if m < 2 { 1.0 } else { -1.0 }, if m % 2 == 0 { 1.0 } else { -1.0 });
                e[0] += c as f64 * s1 * s2;
                e[1] += c as f64 * s1;
                e[2] += c as f64 * s2;
            }
            for (idx, val) in [(4 * a + b, e[0]), (4 * a, e[1]), (b, e[2])] {
                sums[idx] += val / kept as f64;
                uses[idx] += 1;
            }
        }
    }
    let mut out: Vec<f64> = (0..16).map(|i| if uses[i] > 0 { sums[i] / uses[i] as f64 } else { 0.0 }).collect();
    out[0] = 1.0;
    Ok(out)
}

/// Simulated process tomography of `channel`: Pauli measurements after each
/// preparation, leaked events discarded, linear inversion, then projection
/// onto CPTP maps.
pub fn qpt(channel: &Channel, preparations: &[Matrix4<C64>], settings: &QptSettings) -> Result<QptResult> {
    let m = preparations.len();
    let input = DMatrix::from_fn(16, m, |i, k| (pauli2(i) * preparations[k]).trace().re);
    let svd = input.clone().svd(false, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if m < 16 || smin <= 1e-10 * smax {
        return Err(Error::Configuration(format!(
            "preparations are not informationally complete ({m} states, singular value ratio {:.1e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let d = channel.dim();
    let mut output = DMatrix::zeros(16, m);
    let mut discarded = 0.0;
    for (k, prep) in preparations.iter().enumerate() {
        let mut rho = DMatrix::zeros(d, d);
        rho.view_mut((0, 0), (4, 4)).copy_from(prep);
        let out = channel.apply(&rho);
        let block = Matrix4::from_fn(|r, c| out[(r, c)]);
        discarded += 1.0 - block.trace().re;
        let e = expectations(&block, settings.shots, &mut rng)?;
        for i in 0..16 {
            output[(i, k)] = e[i];
        }
    }
    let pinv = input
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Configuration(format!("cannot invert preparation design: {e}")))?;
    let raw = ProcessMatrix::new(output * pinv, false);
    let (projected, iterations) = project_cptp(&raw.ptm);
    Ok(QptResult { raw, projected, iterations, discarded: discarded / m as f64 })
}

/// Average gate fidelity `(d·F_pro + 1)/(d + 1)` of `estimate` against the
/// unitary `ideal`, with `F_pro = Tr(R_idealᵀ R) / d²`.
pub fn fidelity_avg(estimate: &ProcessMatrix, ideal: &Matrix4<C64>) -> f64 {
    let r = ptm_of_unitary(ideal);
    let f_pro = r.component_mul(&estimate.ptm).sum() / 16.0;
    (4.0 * f_pro + 1.0) / 5.0
}

/// Writes the 16×16 PTM with Pauli labels.
pub fn write_ptm_csv<W: Write>(pm: &ProcessMatrix, out: W) -> Result<()> {
    const NAMES: [&str; 4] = ["I", "X", "Y", "Z"];
    let label = |i: usize| format!("{}{}", NAMES[i / 4], NAMES[i % 4]);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    header.extend((0..16).map(label));
    w.write_record(&header)?;
    for i in 0..16 {
        let mut rec = vec![label(i)];
        rec.extend((0..16).map(|j| format!("{:.12}", pm.ptm[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characterization::clifford::Gate;
    use rand::Rng;

    fn random_unitary(rng: &mut ChaCha8Rng) -> Matrix4<C64> {
        let g = Matrix4::from_fn(|_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        g.qr().q()
    }

    fn random_cptp(rng: &mut ChaCha8Rng) -> Channel {
        let g = DMatrix::from_fn(12, 4, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let gram = g.adjoint() * &g;
        let eig = SymmetricEigen::new(gram);
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| C64::new(1.0 / v.sqrt(), 0.0)))
            * eig.eigenvectors.adjoint();
        let v = g * inv_sqrt;
        let kraus: Vec<DMatrix<C64>> = (0..3).map(|k| v.rows(4 * k, 4).into_owned()).collect();
        Channel::from_kraus(4, &kraus).unwrap()
    }

    #[test]
    fn paulis_are_orthogonal() {
        for i in 0..16 {
            for j in 0..16 {
                let t = (pauli2(i).adjoint() * pauli2(j)).trace();
                assert!((t.re - if i == j { 4.0 } else { 0.0 }).abs() < 1e-12 && t.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn choi_round_trip_and_unitary_is_physical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = ptm_of_unitary(&random_unitary(&mut rng));
        assert!((ptm_from_choi(&choi(&r)) - &r).norm() < 1e-12);
        let pm = ProcessMatrix::new(r, false);
        assert!(pm.choi_min_eigenvalue > -1e-12 && pm.tp_residual < 1e-12);
    }

    #[test]
    fn ptm_of_composition_is_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let (a, b) = (random_cptp(&mut rng), random_cptp(&mut rng));
            let ab = ptm_of_channel(&a.then(&b).unwrap());
            assert!((ab - ptm_of_channel(&b) * ptm_of_channel(&a)).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_cz_tomography() {
        let cz = Gate::Cz.unitary();
        let res = qpt(&Channel::unitary(&cz, 0), &standard_preparations(), &QptSettings::default()).unwrap();
        assert!(fidelity_avg(&res.projected, &cz) >= 0.9999);
        assert!((fidelity_avg(&res.raw, &cz) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn physical_estimate_is_left_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ch = random_cptp(&mut rng);
        let res = qpt(&ch, &standard_preparations(), &QptSettings::default()).unwrap();
        assert!((&res.projected.ptm - &res.raw.ptm).norm() < 1e-6);
    }

    #[test]
    fn projection_of_noisy_estimate_is_cptp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ch = random_cptp(&mut rng);
        let res = qpt(&ch, &standard_preparations(), &QptSettings { shots: Some(200), seed: 3 }).unwrap();
        assert!(res.projected.tp_residual < 1e-6, "{}", res.projected.tp_residual);
        assert!(res.projected.choi_min_eigenvalue > -1e-8, "{}", res.projected.choi_min_eigenvalue);
    }

    #[test]
    fn incomplete_preparations_are_rejected() {
        let preps = standard_preparations()[..8].to_vec();
        let r = qpt(&Channel::identity(0), &preps, &QptSettings::default());
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    fn haar_state(rng: &mut ChaCha8Rng) -> nalgebra::Vector4<C64> {
        use rand_distr::StandardNormal;
        let v = nalgebra::Vector4::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        v.normalize()
    }

    fn haar_average(ch: &Channel, rng: &mut ChaCha8Rng, n: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let psi = haar_state(rng);
                let rho = DMatrix::from_fn(ch.dim(), ch.dim(), |r, c| {
                    if r < 4 && c < 4 {
                        psi[r] * psi[c].conj()
                    } else {
                        C64::new(0.0, 0.0)
                    }
                });
                let out = ch.apply(&rho);
                let out = Matrix4::from_fn(|r, c| out[(r, c)]);
                (psi.adjoint() * out * psi)[(0, 0)].re
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn average_fidelity_agrees_with_haar_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dep = Channel::depolarizing(0.0, 0).unwrap();
        let f = fidelity_avg(&ProcessMatrix::new(ptm_of_channel(&dep), false), &Matrix4::identity());
        let (mc, _) = haar_average(&dep, &mut rng, 2000);
        assert!((f - 0.25).abs() < 1e-12 && (mc - 0.25).abs() < 1e-9);

        let ch = random_cptp(&mut rng);
        let f = fidelity_avg(&ProcessMatrix::new(ptm_of_channel(&ch), false), &Matrix4::identity());
        let (mc, se) = haar_average(&ch, &mut rng, 20000);
        assert!((mc - f).abs() < 4.0 * se, "{mc} vs {f} (se {se})");
    }
}
