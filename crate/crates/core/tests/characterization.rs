use nalgebra::{DMatrix, DVector, Matrix4};
use qocsim::characterization::{
    clifford_group, fidelity_avg, irb_fidelity, per_gate_leakage, ptm_of_unitary, qpt, readout_correct, run_rb,
    standard_preparations, AssignmentMatrix, Channel, Gate, Interleave, ProcessMatrix, QptSettings, RbConfig,
};
use qocsim::dynamics::cphase;
use qocsim::linalg::C64;

fn cz() -> Matrix4<C64> {
    Gate::Cz.unitary()
}

#[test]
fn depolarizing_rate_is_recovered_from_sampled_sequences() {
    let group = clifford_group();
    let noise = Channel::depolarizing(0.95, 0).unwrap();
    let cfg = RbConfig {
        lengths: vec![1, 2, 4, 8, 16, 32],
        randomizations: 30,
        shots: Some(400),
        seed: 11,
        ..RbConfig::default()
    };
    let res = run_rb(group, &noise, None, &cfg).unwrap();
    let f = &res.fit;
    assert!((f.r - 0.95).abs() < 3.0 * f.sigma_r + 2e-3, "r = {} ± {}", f.r, f.sigma_r);
    assert!(res.zz_stderr.iter().all(|&s| s > 0.0));
}

#[test]
fn interleaved_gate_fidelity_and_leakage() {
    let group = clifford_group();
    let noise = Channel::depolarizing(0.94, 1).unwrap();
    let gate = Channel::unitary(&cz(), 1)
        .then(&Channel::leakage(0.0014, 0.0, 1).unwrap())
        .unwrap()
        .then(&Channel::depolarizing(0.91 / 0.94, 1).unwrap())
        .unwrap();
    let il = Interleave::new(group, &cz(), gate).unwrap();
    let cfg = RbConfig { lengths: vec![1, 2, 4, 8, 16, 32, 64], randomizations: 10, ..RbConfig::default() };
    let rb = run_rb(group, &noise, None, &cfg).unwrap();
    let irb = run_rb(group, &noise, Some(&il), &cfg).unwrap();
    assert!((rb.fit.r - 0.94).abs() < 1e-6);
    let (leak, _) = per_gate_leakage(rb.leakage_fit.as_ref().unwrap(), irb.leakage_fit.as_ref().unwrap());
    assert!((leak - 0.0014).abs() < 0.2 * 0.0014, "leak per gate {leak}");
    let f = irb_fidelity(rb.fit.r, irb.fit.r).unwrap().fidelity;
    assert!(f > 0.97 && f < 0.98, "{f}");
}

#[test]
fn irb_fidelity_of_reported_rates() {
    let f = irb_fidelity(0.94, 0.91).unwrap();
    assert!((f.fidelity - 0.976063829787234).abs() < 1e-12);
    assert!(f.warning.is_none());
}

#[test]
fn non_clifford_interleave_is_rejected() {
    let t = cphase(std::f64::consts::FRAC_PI_4);
    assert!(Interleave::new(clifford_group(), &t, Channel::unitary(&t, 0)).is_err());
}

#[test]
fn noiseless_cz_tomography() {
    let res = qpt(&Channel::unitary(&cz(), 0), &standard_preparations(), &QptSettings::default()).unwrap();
    assert!(fidelity_avg(&res.projected, &cz()) >= 0.9999);
    assert!((&res.projected.ptm - ptm_of_unitary(&cz())).amax() < 1e-9);
}

#[test]
fn sampled_tomography_is_physical_after_projection() {
    for seed in 0..4 {
        let ch = Channel::unitary(&cphase(1.0 + seed as f64), 1)
            .then(&Channel::amplitude_damping(0.02, 0.01, 1).unwrap())
            .unwrap()
            .then(&Channel::leakage(0.01, 0.0, 1).unwrap())
            .unwrap();
        let res = qpt(&ch, &standard_preparations(), &QptSettings { shots: Some(500), seed }).unwrap();
        assert!(res.projected.tp_residual < 1e-6, "{}", res.projected.tp_residual);
        assert!(res.projected.choi_min_eigenvalue > -1e-8, "{}", res.projected.choi_min_eigenvalue);
        assert!(res.discarded > 0.0);
        let f = fidelity_avg(&res.projected, &cphase(1.0 + seed as f64));
        assert!(f > 0.9 && f <= 1.0 + 1e-9, "{f}");
    }
}

#[test]
fn fidelity_of_depolarized_estimate() {
    // A depolarizing channel with parameter p has average gate fidelity
    // p + (1 - p)/d with d = 4.
    let res = qpt(&Channel::depolarizing(0.9, 0).unwrap(), &standard_preparations(), &QptSettings::default()).unwrap();
    let f = fidelity_avg(&res.projected, &Matrix4::identity());
    assert!((f - (0.9 + 0.1 / 4.0)).abs() < 1e-9, "{f}");
    let pm = ProcessMatrix::new(DMatrix::identity(16, 16), false);
    assert!(pm.tp_residual == 0.0 && (pm.choi_min_eigenvalue - 0.0).abs() < 1e-12);
}

#[test]
fn readout_correction_recovers_prepared_distribution() {
    let n = 9;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.9 } else { 0.1 / (n - 1) as f64 });
    let a = AssignmentMatrix::new(m.clone()).unwrap();
    let truth = DVector::from_vec(vec![0.5, 0.2, 0.1, 0.1, 0.05, 0.05, 0.0, 0.0, 0.0]);
    let c = readout_correct(&a, &(&m * &truth)).unwrap();
    assert!((&c.projected - &truth).amax() < 1e-12);
    assert!(!c.was_projected && !c.ill_conditioned);
}
