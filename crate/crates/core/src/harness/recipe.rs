use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibrate::{cz_calibrate_with, CalibrationOptions, TARGET_PHASES};
use super::line::{predistort_check, FluxLine};
use crate::characterization::{
    clifford_group, fidelity_avg, irb_fidelity, per_gate_leakage, qpt, run_rb, standard_preparations, write_ptm_csv,
    write_rb_csv, Channel, Gate, Interleave, QptSettings, RbConfig,
};
use crate::device::{
    bare_couplings, build_hamiltonian, dressed_summary, j_rate, spectrum_sweep, write_spectrum_csv, DeviceParams,
};
use crate::dynamics::{
    cphase, dynamic_phase_linearity, leakage_sweep, phase_vs_length, propagator, virtual_z_correct, write_leakage_csv,
    write_phase_csv, Frame, PulseTemplate, SolverOptions,
};
use crate::error::{Error, Result};
use crate::pulse::TransferModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    Spectrum,
    PhaseSweep,
    LeakageSweep,
    CzCalibrate,
    Qpt,
    Rb,
    Irb,
    PredistortCheck,
}

impl RecipeKind {
    pub const ALL: [RecipeKind; 8] = [
        RecipeKind::Spectrum,
        RecipeKind::PhaseSweep,
        RecipeKind::LeakageSweep,
        RecipeKind::CzCalibrate,
        RecipeKind::Qpt,
        RecipeKind::Rb,
        RecipeKind::Irb,
        RecipeKind::PredistortCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecipeKind::Spectrum => "spectrum",
            RecipeKind::PhaseSweep => "phase-sweep",
            RecipeKind::LeakageSweep => "leakage-sweep",
            RecipeKind::CzCalibrate => "cz-calibrate",
            RecipeKind::Qpt => "qpt",
            RecipeKind::Rb => "rb",
            RecipeKind::Irb => "irb",
            RecipeKind::PredistortCheck => "predistort-check",
        }
    }

    /// Frame used when none is requested: the rotating-wave model for the
    /// many-point sweeps, the full model otherwise.
    pub fn default_frame(self) -> Frame {
        match self {
            RecipeKind::LeakageSweep | RecipeKind::PredistortCheck => Frame::Rwa,
            _ => Frame::Full,
        }
    }
}

impl std::fmt::Display for RecipeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RecipeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "sweep-phase" => "phase-sweep",
            "sweep-leakage" => "leakage-sweep",
            other => other,
        };
        RecipeKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Configuration(format!("unknown recipe '{s}'")))
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Applied coupler flux for the spectrum, in flux quanta.
    pub flux: Vec<f64>,
    /// Plateau coupler flux of the pulses, in flux quanta.
    pub amplitudes: Vec<f64>,
    /// Total pulse lengths in ns.
    pub taus: Vec<f64>,
    /// Target conditional phases in radians.
    pub targets: Vec<f64>,
    /// Clifford sequence lengths.
    pub lengths: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            flux: linspace(0.0, 0.5, 201),
            amplitudes: vec![0.37],
            taus: linspace(38.0, 94.0, 14),
            targets: TARGET_PHASES.to_vec(),
            lengths: vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64],
        }
    }
}

/// Plateau fluxes of the default leakage sweep.
pub const LEAKAGE_AMPLITUDES: [f64; 11] = [0.30, 0.32, 0.34, 0.35, 0.36, 0.37, 0.38, 0.39, 0.40, 0.42, 0.45];

impl Grids {
    pub fn for_recipe(kind: RecipeKind) -> Self {
        let mut g = Self::default();
        if kind == RecipeKind::LeakageSweep {
            g.amplitudes = LEAKAGE_AMPLITUDES.to_vec();
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterleaveKind {
    Cz,
    /// 40 ns identity, the idle-gate reference.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbSettings {
    pub randomizations: usize,
    pub shots: Option<usize>,
    pub bootstrap: usize,
    /// Depolarizing parameter applied after every Clifford.
    pub clifford_depolarizing: f64,
    pub clifford_leak: f64,
    pub seepage: f64,
    /// Depolarizing parameter of the interleaved gate.
    pub gate_depolarizing: f64,
    /// Leakage per interleaved gate (analytic channels only).
    pub gate_leak: f64,
    pub interleave: InterleaveKind,
    /// Build the interleaved gate from a simulated pulse instead of the
    /// ideal unitary.
    pub pulse_level: bool,
}

impl Default for RbSettings {
    fn default() -> Self {
        Self {
            randomizations: 30,
            shots: None,
            bootstrap: 200,
            clifford_depolarizing: 0.94,
            clifford_leak: 0.0,
            seepage: 0.0,
            gate_depolarizing: 0.91 / 0.94,
            gate_leak: 0.0014,
            interleave: InterleaveKind::Cz,
            pulse_level: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QptRecipeSettings {
    pub shots: Option<usize>,
    /// Extra depolarizing parameter applied after the simulated gate.
    pub depolarizing: f64,
}

impl Default for QptRecipeSettings {
    fn default() -> Self {
        Self { shots: Some(4000), depolarizing: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecipe {
    pub kind: RecipeKind,
    /// Device parameters (TOML, or JSON by extension); defaults when absent.
    pub device: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub frame: Option<Frame>,
    /// Send pulses through the predistorted flux line.
    #[serde(default)]
    pub predistort: bool,
    /// Flux-line model; the eight-term example when absent.
    #[serde(default)]
    pub transfer: Option<TransferModel>,
    #[serde(default)]
    pub pulse: PulseTemplate,
    /// Missing grids take the defaults of the recipe kind's generic sweep.
    #[serde(default)]
    pub grids: Grids,
    #[serde(default = "SolverOptions::fast")]
    pub solver: SolverOptions,
    #[serde(default)]
    pub rb: RbSettings,
    #[serde(default)]
    pub qpt: QptRecipeSettings,
}

impl ExperimentRecipe {
    pub fn new(kind: RecipeKind, out: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            device: None,
            out: out.into(),
            seed: 0,
            frame: None,
            predistort: false,
            transfer: None,
            pulse: PulseTemplate::default(),
            grids: Grids::for_recipe(kind),
            solver: SolverOptions::fast(),
            rb: RbSettings::default(),
            qpt: QptRecipeSettings::default(),
        }
    }

    pub fn frame(&self) -> Frame {
        self.frame.unwrap_or(self.kind.default_frame())
    }

    /// Check referenced files and the grids the recipe needs.
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.device {
            if !p.is_file() {
                return Err(Error::Validation(format!("device config {} does not exist", p.display())));
            }
        }
        let g = &self.grids;
        let need: &[(&str, bool)] = match self.kind {
            RecipeKind::Spectrum => &[("flux", g.flux.is_empty())],
            RecipeKind::PhaseSweep | RecipeKind::LeakageSweep => {
                &[("amplitudes", g.amplitudes.is_empty()), ("taus", g.taus.is_empty())]
            }
            RecipeKind::CzCalibrate | RecipeKind::Qpt => {
                &[("amplitudes", g.amplitudes.is_empty()), ("targets", g.targets.is_empty())]
            }
            RecipeKind::Rb | RecipeKind::Irb => &[("lengths", g.lengths.is_empty())],
            RecipeKind::PredistortCheck => &[("amplitudes", g.amplitudes.is_empty()), ("taus", g.taus.is_empty())],
        };
        if let Some((name, _)) = need.iter().find(|(_, empty)| *empty) {
            return Err(Error::Validation(format!("recipe {} needs a non-empty '{name}' grid", self.kind)));
        }
        let all = g.flux.iter().chain(&g.amplitudes).chain(&g.taus).chain(&g.targets);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Validation("grid values must be finite".into()));
        }
        if matches!(self.kind, RecipeKind::Rb | RecipeKind::Irb) && self.rb.randomizations == 0 {
            return Err(Error::Validation("at least one randomization is required".into()));
        }
        Ok(())
    }

    /// Flux line seen by the pulses, if any.
    pub fn line(&self) -> Result<Option<FluxLine>> {
        let model = || self.transfer.clone().unwrap_or_else(TransferModel::eight_term_example);
        Ok(match (self.predistort, &self.transfer) {
            (true, _) => Some(FluxLine::new(model(), true, self.pulse.dt)?),
            (false, Some(_)) => Some(FluxLine::new(model(), false, self.pulse.dt)?),
            (false, None) => None,
        })
    }
}

pub fn load_device(path: Option<&Path>) -> Result<DeviceParams> {
    let params = match path {
        None => DeviceParams::default(),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
                DeviceParams::from_json_str(&text)?
            } else {
                DeviceParams::from_toml_str(&text)?
            }
        }
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub recipe: RecipeKind,
    pub config_hash: String,
    pub seed: u64,
    pub frame: Frame,
    pub predistort: bool,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ArtifactBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl ArtifactBundle {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    failures: Vec<String>,
}

impl Output {
    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        fs::write(self.dir.join(name), buf)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn config_hash(params: &DeviceParams, recipe: &ExperimentRecipe) -> Result<String> {
    let mut r = recipe.clone();
    r.out = PathBuf::new();
    r.device = None;
    let text = serde_json::to_string(&serde_json::json!({ "device": params, "recipe": r }))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(format!("sha256:{}", digest.iter().map(|b| format!("{b:02x}")).collect::<String>()))
}

/// Run `recipe`, writing its CSV/JSON outputs and `manifest.json` into the
/// output directory. Per-point failures are recorded in the manifest and the
/// outputs; a fatal error still leaves the files written so far.
pub fn run_recipe(recipe: &ExperimentRecipe) -> Result<ArtifactBundle> {
    recipe.validate()?;
    let params = load_device(recipe.device.as_deref())?;
    let hash = config_hash(&params, recipe)?;
    fs::create_dir_all(&recipe.out)?;
    let start = Instant::now();
    let mut out = Output { dir: recipe.out.clone(), files: vec![], failures: vec![] };
    let result = match recipe.kind {
        RecipeKind::Spectrum => spectrum(&params, recipe, &mut out),
        RecipeKind::PhaseSweep => phase_sweep(&params, recipe, &mut out),
        RecipeKind::LeakageSweep => leakage(&params, recipe, &mut out),
        RecipeKind::CzCalibrate => calibrate(&params, recipe, &mut out),
        RecipeKind::Qpt => tomography(&params, recipe, &mut out),
        RecipeKind::Rb | RecipeKind::Irb => benchmarking(&params, recipe, &mut out),
        RecipeKind::PredistortCheck => predistortion(&params, recipe, &mut out),
    };
    if let Err(e) = &result {
        out.failures.push(format!("fatal: {e}"));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "qocsim".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        recipe: recipe.kind,
        config_hash: hash,
        seed: recipe.seed,
        frame: recipe.frame(),
        predistort: recipe.predistort,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: out.files.clone(),
        failures: out.failures.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(recipe.out.join("manifest.json"), text)?;
    result?;
    Ok(ArtifactBundle { dir: recipe.out.clone(), manifest })
}

#[derive(Serialize)]
struct SpectrumSummary {
    idle_flux: f64,
    frequencies_ghz: [f64; 3],
    anharmonicities_mhz: [f64; 3],
    alpha_zz_idle_mhz: f64,
    j_idle_mhz: f64,
    bare_couplings: crate::device::BareCouplings,
    /// Extremes over the points before the first labeling failure.
    min_abs_alpha_zz_mhz: f64,
    max_abs_alpha_zz_mhz: f64,
    alpha_zz_decades: f64,
    first_label_failure_flux: Option<f64>,
    /// Largest |α_ZZ| over all labeled points, including any beyond a failure.
    max_abs_alpha_zz_labeled_mhz: f64,
}

fn spectrum(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let points = spectrum_sweep(params, &recipe.grids.flux);
    out.csv("spectrum.csv", |w| write_spectrum_csv(&points, w))?;
    for p in points.iter().filter(|p| !p.label_ok) {
        out.failures.push(format!("flux {}: {}", p.flux_phi0, p.error.as_deref().unwrap_or("labeling failed")));
    }
    let model = build_hamiltonian(params, params.idle_flux)?;
    let idle = dressed_summary(&model)?;
    let before: Vec<f64> = points.iter().take_while(|p| p.label_ok).map(|p| p.alpha_zz_mhz.abs()).collect();
    let (lo, hi) = before.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let labeled = points.iter().filter(|p| p.label_ok).map(|p| p.alpha_zz_mhz.abs()).fold(0.0, f64::max);
    let summary = SpectrumSummary {
        idle_flux: params.idle_flux,
        frequencies_ghz: idle.frequency_ghz,
        anharmonicities_mhz: idle.anharmonicity_mhz,
        alpha_zz_idle_mhz: idle.alpha_zz_mhz,
        j_idle_mhz: j_rate(params, params.idle_flux)?,
        bare_couplings: bare_couplings(params)?,
        min_abs_alpha_zz_mhz: lo,
        max_abs_alpha_zz_mhz: hi,
        alpha_zz_decades: (hi / lo).log10(),
        first_label_failure_flux: points.iter().find(|p| !p.label_ok).map(|p| p.flux_phi0),
        max_abs_alpha_zz_labeled_mhz: labeled,
    };
    out.json("spectrum_summary.json", &summary)
}

fn amp_tag(a: f64) -> String {
    format!("{a:.4}")
}

fn phase_sweep(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let mut summary = Vec::new();
    for &amp in &recipe.grids.amplitudes {
        let sweep = phase_vs_length(params, amp, &recipe.grids.taus, &recipe.pulse, recipe.frame(), &recipe.solver)?;
        out.csv(&format!("phase_sweep_{}.csv", amp_tag(amp)), |w| write_phase_csv(&sweep, w))?;
        for r in sweep.rows.iter().filter(|r| !r.ok()) {
            out.failures.push(format!("amplitude {amp}, tau {} ns: {}", r.tau, r.error.as_deref().unwrap_or("")));
        }
        summary.push(serde_json::json!({
            "amplitude_phi0": amp,
            "fit": sweep.fit,
            "fit_from_ns": sweep.fit_from,
            "dynamic_phase_linearity": dynamic_phase_linearity(&sweep.rows),
        }));
    }
    out.json("phase_sweep.json", &summary)
}

fn leakage(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let g = &recipe.grids;
    let sweep = leakage_sweep(params, &g.amplitudes, &g.taus, &recipe.pulse, recipe.frame(), &recipe.solver)?;
    out.csv("leakage_sweep.csv", |w| write_leakage_csv(&sweep, w))?;
    for p in &sweep.points {
        for f in &p.failures {
            out.failures.push(format!("amplitude {}: {f}", p.amplitude));
        }
    }
    out.json("leakage_sweep.json", &sweep)
}

fn calibration_options(recipe: &ExperimentRecipe) -> Result<CalibrationOptions> {
    Ok(CalibrationOptions {
        template: recipe.pulse,
        frame: recipe.frame(),
        solver: recipe.solver,
        line: recipe.line()?,
        ..CalibrationOptions::default()
    })
}

fn calibrate(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let opts = calibration_options(recipe)?;
    let prop = propagator(params, opts.frame)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &amp in &recipe.grids.amplitudes {
        let mut taus = Vec::new();
        for &target in &recipe.grids.targets {
            match cz_calibrate_with(prop.as_ref(), params, target, amp, &opts) {
                Ok((c, _)) => {
                    taus.push(c.tau);
                    rows.push((amp, target, Some(c), None));
                }
                Err(e) => {
                    out.failures.push(format!("amplitude {amp}, target {target:.6} rad: {e}"));
                    rows.push((amp, target, None, Some(e.to_string())));
                }
            }
        }
        let mean = (!taus.is_empty()).then(|| taus.iter().sum::<f64>() / taus.len() as f64);
        summary.push(serde_json::json!({ "amplitude_phi0": amp, "mean_tau_ns": mean, "calibrated": taus.len() }));
    }
    out.csv("calibration.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "amplitude_phi0",
            "target_rad",
            "tau_ns",
            "phi_c_rad",
            "error_deg",
            "p_leak",
            "evaluations",
            "clamped",
            "ok",
        ])?;
        for (amp, target, c, _) in &rows {
            let rec = match c {
                Some(c) => vec![
                    format!("{amp:.6}"),
                    format!("{target:.9}"),
                    format!("{:.6}", c.tau),
                    format!("{:.9}", c.phi_c),
                    format!("{:.6}", c.error_deg),
                    format!("{:.6e}", c.p_leak),
                    c.evaluations.to_string(),
                    c.clamped_to_minimum.to_string(),
                    "true".into(),
                ],
                None => vec![
                    format!("{amp:.6}"),
                    format!("{target:.9}"),
                    "NaN".into(),
                    "NaN".into(),
                    "NaN".into(),
                    "NaN".into(),
                    "0".into(),
                    "false".into(),
                    "false".into(),
                ],
            };
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let detail: Vec<_> = rows
        .iter()
        .map(|(amp, target, c, e)| serde_json::json!({ "amplitude_phi0": amp, "target_rad": target, "calibration": c, "error": e }))
        .collect();
    out.json("calibration.json", &serde_json::json!({ "amplitudes": summary, "points": detail }))
}

fn tomography(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let opts = calibration_options(recipe)?;
    let prop = propagator(params, opts.frame)?;
    let amp = recipe.grids.amplitudes[0];
    let extra = Channel::depolarizing(recipe.qpt.depolarizing, 1)?;
    let mut entries = Vec::new();
    let mut fids = Vec::new();
    for (k, &target) in recipe.grids.targets.iter().enumerate() {
        let (cal, result) = match cz_calibrate_with(prop.as_ref(), params, target, amp, &opts) {
            Ok(v) => v,
            Err(e) => {
                out.failures.push(format!("target {target:.6} rad: {e}"));
                continue;
            }
        };
        let gate = Channel::from_block(&virtual_z_correct(&result.u), 1)?.then(&extra)?;
        let settings = QptSettings { shots: recipe.qpt.shots, seed: recipe.seed.wrapping_add(k as u64) };
        let res = qpt(&gate, &standard_preparations(), &settings)?;
        let ideal = cphase(target);
        let f = fidelity_avg(&res.projected, &ideal);
        fids.push(f);
        out.csv(&format!("ptm_target{k}.csv"), |w| write_ptm_csv(&res.projected, w))?;
        out.csv(&format!("ptm_target{k}_raw.csv"), |w| write_ptm_csv(&res.raw, w))?;
        entries.push(serde_json::json!({
            "target_rad": target,
            "tau_ns": cal.tau,
            "phi_c_rad": cal.phi_c,
            "f_avg": f,
            "f_avg_raw": fidelity_avg(&res.raw, &ideal),
            "tp_residual": res.projected.tp_residual,
            "choi_min_eigenvalue": res.projected.choi_min_eigenvalue,
            "projection_iterations": res.iterations,
            "discarded_fraction": res.discarded,
        }));
    }
    let mean = (!fids.is_empty()).then(|| fids.iter().sum::<f64>() / fids.len() as f64);
    out.json(
        "qpt_summary.json",
        &serde_json::json!({
            "amplitude_phi0": amp,
            "shots_per_setting": recipe.qpt.shots,
            "targets": entries,
            "mean_f_avg": mean,
            "reference_mean_f_avg": 0.984,
        }),
    )
}

fn interleave_channel(
    params: &DeviceParams,
    recipe: &ExperimentRecipe,
) -> Result<(Matrix4<crate::linalg::C64>, Channel)> {
    let s = &recipe.rb;
    let noise = Channel::depolarizing(s.gate_depolarizing, 1)?;
    let ideal = match s.interleave {
        InterleaveKind::Cz => Gate::Cz.unitary(),
        InterleaveKind::Idle => Matrix4::identity(),
    };
    let base = if s.pulse_level {
        let prop = propagator(params, recipe.frame())?;
        let block = match s.interleave {
            InterleaveKind::Cz => {
                let opts = calibration_options(recipe)?;
                let (_, r) =
                    cz_calibrate_with(prop.as_ref(), params, std::f64::consts::PI, recipe.grids.amplitudes[0], &opts)?;
                virtual_z_correct(&r.u)
            }
            InterleaveKind::Idle => {
                let pulse = recipe.pulse.pulse(params, params.idle_flux, 40.0)?;
                prop.evolve(&pulse, &recipe.solver)?.u
            }
        };
        Channel::from_block(&block, 1)?
    } else {
        Channel::unitary(&ideal, 1).then(&Channel::leakage(s.gate_leak, s.seepage, 1)?)?
    };
    Ok((ideal, base.then(&noise)?))
}

fn benchmarking(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let s = &recipe.rb;
    let group = clifford_group();
    let noise =
        Channel::depolarizing(s.clifford_depolarizing, 1)?.then(&Channel::leakage(s.clifford_leak, s.seepage, 1)?)?;
    let config = RbConfig {
        lengths: recipe.grids.lengths.clone(),
        randomizations: s.randomizations,
        shots: s.shots,
        bootstrap: s.bootstrap,
        seed: recipe.seed,
    };
    let rb = run_rb(group, &noise, None, &config)?;
    out.csv("rb.csv", |w| write_rb_csv(&rb, w))?;
    if recipe.kind == RecipeKind::Rb {
        return out.json("rb_summary.json", &rb);
    }
    let (ideal, channel) = interleave_channel(params, recipe)?;
    let il = Interleave::new(group, &ideal, channel)?;
    let irb = run_rb(group, &noise, Some(&il), &RbConfig { seed: recipe.seed.wrapping_add(1), ..config })?;
    out.csv("irb.csv", |w| write_rb_csv(&irb, w))?;
    let fidelity = irb_fidelity(rb.fit.r.min(1.0), irb.fit.r.min(1.0))?;
    let leak = match (&rb.leakage_fit, &irb.leakage_fit) {
        (Some(a), Some(b)) => Some(per_gate_leakage(a, b)),
        _ => None,
    };
    out.json(
        "irb_summary.json",
        &serde_json::json!({
            "interleave": s.interleave,
            "r_rb": rb.fit.r,
            "sigma_r_rb": rb.fit.sigma_r,
            "r_irb": irb.fit.r,
            "sigma_r_irb": irb.fit.sigma_r,
            "gate_fidelity": fidelity,
            "per_gate_leakage": leak.map(|l| l.0),
            "per_gate_leakage_err": leak.map(|l| l.1),
            "rb": rb,
            "irb": irb,
        }),
    )
}

fn predistortion(params: &DeviceParams, recipe: &ExperimentRecipe, out: &mut Output) -> Result<()> {
    let transfer = recipe.transfer.clone().unwrap_or_else(TransferModel::eight_term_example);
    let report = predistort_check(
        params,
        &transfer,
        &recipe.pulse,
        recipe.grids.amplitudes[0],
        recipe.grids.taus[0],
        21,
        recipe.frame(),
    )?;
    out.csv("step_response.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["t_ns", "raw", "corrected"])?;
        for (t, r, c) in &report.step {
            w.write_record([format!("{t:.6}"), format!("{r:.12}"), format!("{c:.12}")])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.csv("pulse_train.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["pulse", "corrected_error_deg", "raw_error_deg", "mismatched_error_deg"])?;
        for k in 0..report.pulses {
            w.write_record([
                k.to_string(),
                format!("{:.9}", report.corrected_errors_deg[k]),
                format!("{:.9}", report.raw_errors_deg[k]),
                format!("{:.9}", report.mismatched_errors_deg[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "predistort_summary.json",
        &serde_json::json!({
            "samples_checked": report.samples_checked,
            "corrected_step_deviation": report.corrected_step_deviation,
            "raw_step_deviation": report.raw_step_deviation,
            "max_corrected_error_deg": report.max_corrected_error_deg(),
            "max_raw_error_deg": report.raw_errors_deg.iter().map(|e| e.abs()).fold(0.0, f64::max),
            "max_mismatched_error_deg": report.mismatched_errors_deg.iter().map(|e| e.abs()).fold(0.0, f64::max),
        }),
    )
}
