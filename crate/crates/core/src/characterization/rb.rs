use std::io::Write;

use nalgebra::{DMatrix, Matrix4};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::channel::Channel;
use super::clifford::CliffordGroup;
use super::fit::{fit_decay, fit_decay_fixed_b, fit_leakage, DecayFit, LeakageFit};
use super::multinomial;
use crate::error::{Error, Result};
use crate::linalg::C64;

/// Random Clifford sequence with the recovery element that makes the ideal
/// net operation the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RbSequence {
    /// Group indices in time order, including interleaved targets.
    pub gates: Vec<usize>,
    /// Marks the interleaved target positions in `gates`.
    pub interleaved: Vec<bool>,
    pub recovery: usize,
}

/// `length` uniformly random Cliffords, each followed by `interleave` when
/// given.
pub fn rb_sequence(group: &CliffordGroup, length: usize, seed: u64, interleave: Option<usize>) -> RbSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gates = Vec::with_capacity(length * if interleave.is_some() { 2 } else { 1 });
    let mut interleaved = Vec::with_capacity(gates.capacity());
    let mut net = group.identity();
    for _ in 0..length {
        let c = group.random(&mut rng);
        gates.push(c);
        interleaved.push(false);
        net = group.compose(net, c);
        if let Some(t) = interleave {
            gates.push(t);
            interleaved.push(true);
            net = group.compose(net, t);
        }
    }
    RbSequence { gates, interleaved, recovery: group.inverse(net) }
}

/// Target gate interleaved after every Clifford: its group index and the
/// channel actually applied in its place.
#[derive(Debug, Clone)]
pub struct Interleave {
    pub target: usize,
    pub channel: Channel,
}

impl Interleave {
    pub fn new(group: &CliffordGroup, ideal: &Matrix4<C64>, channel: Channel) -> Result<Self> {
        let target = group
            .find(ideal)
            .ok_or_else(|| Error::Configuration("interleaved target is not a two-qubit Clifford".into()))?;
        Ok(Self { target, channel })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub randomizations: usize,
    /// Shots per sequence; `None` uses exact expectation values.
    pub shots: Option<usize>,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1, 2, 4, 8, 16, 24, 32, 48, 64, 96],
            randomizations: 30,
            shots: None,
            bootstrap: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RbResult {
    pub lengths: Vec<usize>,
    /// Mean ⟨σz⊗σz⟩ per length, with bootstrap standard errors.
    pub zz_mean: Vec<f64>,
    pub zz_stderr: Vec<f64>,
    /// Mean total leaked population per length, with bootstrap standard errors.
    pub leak_mean: Vec<f64>,
    pub leak_stderr: Vec<f64>,
    pub fit: DecayFit,
    pub leakage_fit: Option<LeakageFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn embed(u: &Matrix4<C64>, dim: usize) -> DMatrix<C64> {
    let mut m = DMatrix::identity(dim, dim);
    m.view_mut((0, 0), (4, 4)).copy_from(u);
    m
}

/// Final (⟨σz⊗σz⟩, leaked population) of one sequence started in |00⟩.
fn simulate(
    group: &CliffordGroup,
    seq: &RbSequence,
    noise: &Channel,
    interleave: Option<&Interleave>,
    shots: Option<usize>,
    seed: u64,
) -> (f64, f64) {
    let dim = noise.dim();
    let mut rho = DMatrix::<C64>::zeros(dim, dim);
    rho[(0, 0)] = C64::new(1.0, 0.0);
    let steps = seq.gates.iter().zip(&seq.interleaved).map(|(&g, &t)| (g, t)).chain([(seq.recovery, false)]);
    for (g, is_target) in steps {
        match (is_target, interleave) {
            (true, Some(il)) => rho = il.channel.apply(&rho),
            _ => {
                let u = embed(group.unitary(g), dim);
                rho = noise.apply(&(&u * rho * u.adjoint()));
            }
        }
    }
    let mut probs: Vec<f64> = (0..4).map(|k| rho[(k, k)].re.max(0.0)).collect();
    probs.push((4..dim).map(|k| rho[(k, k)].re).sum::<f64>().max(0.0));
    if let Some(n) = shots {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = multinomial(&mut rng, n as u64, &probs);
        probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
    }
    (probs[0] - probs[1] - probs[2] + probs[3], probs[4])
}

fn bootstrap_stderr(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64).collect();
    let m = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Simulated (interleaved) randomized benchmarking. Every Clifford is
/// followed by `noise`; interleaved targets are replaced by their channel.
pub fn run_rb(
    group: &CliffordGroup,
    noise: &Channel,
    interleave: Option<&Interleave>,
    config: &RbConfig,
) -> Result<RbResult> {
    if config.lengths.is_empty() || config.randomizations == 0 {
        return Err(Error::Parameter("RB needs at least one length and one randomization".into()));
    }
    noise.validate()?;
    if let Some(il) = interleave {
        il.channel.validate()?;
        if il.channel.dim() != noise.dim() {
            return Err(Error::Channel("interleaved and Clifford channels differ in dimension".into()));
        }
    }
    let jobs: Vec<(usize, usize)> =
        (0..config.lengths.len()).flat_map(|l| (0..config.randomizations).map(move |k| (l, k))).collect();
    let outcomes: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(l, k)| {
            let stream = ((l as u64) << 32) | k as u64;
            let s = stream_seed(config.seed, stream);
            let seq = rb_sequence(group, config.lengths[l], s, interleave.map(|i| i.target));
            simulate(group, &seq, noise, interleave, config.shots, s.wrapping_add(1))
        })
        .collect();

    let mut boot = ChaCha8Rng::seed_from_u64(config.seed);
    boot.set_stream(u64::MAX);
    let (mut zz_mean, mut zz_stderr, mut leak_mean, mut leak_stderr) = (vec![], vec![], vec![], vec![]);
    for l in 0..config.lengths.len() {
        let chunk = &outcomes[l * config.randomizations..(l + 1) * config.randomizations];
        let zz: Vec<f64> = chunk.iter().map(|o| o.0).collect();
        let leak: Vec<f64> = chunk.iter().map(|o| o.1).collect();
        zz_mean.push(zz.iter().sum::<f64>() / zz.len() as f64);
        leak_mean.push(leak.iter().sum::<f64>() / leak.len() as f64);
        zz_stderr.push(bootstrap_stderr(&zz, config.bootstrap, &mut boot));
        leak_stderr.push(bootstrap_stderr(&leak, config.bootstrap, &mut boot));
    }

    let x: Vec<f64> = config.lengths.iter().map(|&n| n as f64).collect();
    let mut note = None;
    let fit = match fit_decay(&x, &zz_mean, &zz_stderr) {
        Ok(f) => f,
        Err(e) => {
            // A flat curve (no decay) leaves B unidentifiable; pin it at the
            // fully depolarized value of the correlator.
            note = Some(format!("free fit failed ({e}); floor fixed at 0"));
            fit_decay_fixed_b(&x, &zz_mean, &zz_stderr, 0.0)?
        }
    };
    let leakage_fit = if noise.leak_levels() > 0 {
        match fit_leakage(&x, &leak_mean, Some(&leak_stderr)) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("leakage fit failed: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(RbResult { lengths: config.lengths.clone(), zz_mean, zz_stderr, leak_mean, leak_stderr, fit, leakage_fit, note })
}

/// Columns `N_c, mean, stderr, p_leak, p_leak_err`.
pub fn write_rb_csv<W: Write>(result: &RbResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N_c", "mean", "stderr", "p_leak", "p_leak_err"])?;
    for i in 0..result.lengths.len() {
        w.write_record([
            result.lengths[i].to_string(),
            format!("{:.12}", result.zz_mean[i]),
            format!("{:.12}", result.zz_stderr[i]),
            format!("{:.12e}", result.leak_mean[i]),
            format!("{:.12e}", result.leak_stderr[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
