use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use qocsim::characterization::{readout_correct, AssignmentMatrix};
use qocsim::dynamics::{conditional_phase, time_evolve, Frame, SolverOptions};
use qocsim::harness::{linspace, load_device, run_recipe, ExperimentRecipe, InterleaveKind, RecipeKind};
use qocsim::{Error, Result};

#[derive(Parser)]
#[command(name = "qocsim", version, about = "Coupler-mediated CZ gate simulator and characterization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dressed spectrum, ZZ and exchange rate against coupler flux.
    Spectrum(RecipeArgs),
    /// Conditional and dynamic phases against pulse length.
    #[command(alias = "sweep-phase")]
    PhaseSweep(RecipeArgs),
    /// Mean leakage against pulse amplitude.
    #[command(alias = "sweep-leakage")]
    LeakageSweep(RecipeArgs),
    /// Pulse lengths reaching each target conditional phase.
    CzCalibrate(RecipeArgs),
    /// Process tomography of calibrated controlled-phase gates.
    Qpt(RecipeArgs),
    /// Reference randomized benchmarking.
    Rb(RecipeArgs),
    /// Interleaved randomized benchmarking.
    Irb(RecipeArgs),
    /// Step response and repeated-pulse phase error through the flux line.
    PredistortCheck(RecipeArgs),
    /// Run a recipe described by a TOML file.
    Run {
        recipe: PathBuf,
        /// Overrides the output directory of the file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate one flat-top pulse and print phases and leakage as JSON.
    SimulateCz {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plateau coupler flux in flux quanta.
        #[arg(long, default_value_t = 0.37)]
        amplitude: f64,
        /// Total pulse length in ns.
        #[arg(long, default_value_t = 38.0)]
        tau: f64,
        #[arg(long, default_value = "full")]
        frame: Frame,
        /// Also repeat with half the step.
        #[arg(long)]
        check: bool,
    },
    /// Correct measured populations with an assignment matrix.
    Mitigate {
        /// 9x9 CSV, rows are prepared states.
        #[arg(long)]
        assignment: PathBuf,
        /// Comma separated populations in readout order.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        populations: Vec<f64>,
    },
}

#[derive(Args)]
struct RecipeArgs {
    /// Device parameters (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    frame: Option<Frame>,
    #[arg(long)]
    predistort: bool,
    /// Flux grid as `start:stop:count` or a comma list.
    #[arg(long)]
    flux: Option<String>,
    /// Plateau fluxes, `start:stop:count` or a comma list.
    #[arg(long)]
    amplitudes: Option<String>,
    /// Pulse lengths in ns, `start:stop:count` or a comma list.
    #[arg(long)]
    taus: Option<String>,
    /// Target phases in units of π, comma list.
    #[arg(long)]
    targets: Option<String>,
    /// Clifford sequence lengths, comma list.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long)]
    randomizations: Option<usize>,
    /// Finite shots per sequence or tomography setting.
    #[arg(long)]
    shots: Option<usize>,
    /// Interleaved gate for irb.
    #[arg(long, value_parser = ["cz", "idle"])]
    interleave: Option<String>,
    /// Build the interleaved gate from a simulated pulse.
    #[arg(long)]
    pulse_level: bool,
    /// Repeat each propagation with half the step.
    #[arg(long)]
    check_convergence: bool,
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Validation(format!("cannot parse grid '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a = parts[0].trim().parse().map_err(|_| bad())?;
        let b = parts[1].trim().parse().map_err(|_| bad())?;
        let n = parts[2].trim().parse().map_err(|_| bad())?;
        return Ok(linspace(a, b, n));
    }
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

impl RecipeArgs {
    fn recipe(self, kind: RecipeKind) -> Result<ExperimentRecipe> {
        let mut r = ExperimentRecipe::new(kind, self.out);
        r.device = self.config;
        r.seed = self.seed;
        r.frame = self.frame;
        r.predistort = self.predistort;
        if let Some(g) = self.flux {
            r.grids.flux = parse_grid(&g)?;
        }
        if let Some(g) = self.amplitudes {
            r.grids.amplitudes = parse_grid(&g)?;
        }
        if let Some(g) = self.taus {
            r.grids.taus = parse_grid(&g)?;
        }
        if let Some(g) = self.targets {
            r.grids.targets = parse_grid(&g)?.into_iter().map(|x| x * PI).collect();
        }
        if let Some(l) = self.lengths {
            r.grids.lengths = l;
        }
        if let Some(n) = self.randomizations {
            r.rb.randomizations = n;
        }
        if self.shots.is_some() {
            r.rb.shots = self.shots;
            r.qpt.shots = self.shots;
        }
        if let Some(i) = self.interleave {
            r.rb.interleave = if i == "idle" { InterleaveKind::Idle } else { InterleaveKind::Cz };
        }
        r.rb.pulse_level = self.pulse_level;
        r.solver.check_convergence = self.check_convergence;
        Ok(r)
    }
}

/// Write a line to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn execute(recipe: &ExperimentRecipe) -> Result<()> {
    let bundle = run_recipe(recipe)?;
    let failures = &bundle.manifest.failures;
    for f in failures {
        log::info!("{f}");
    }
    if !failures.is_empty() {
        log::warn!("{} grid point(s) failed, listed in manifest.json", failures.len());
    }
    emit(&bundle.dir.join("manifest.json").display().to_string());
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    let kind_args = match command {
        Command::Spectrum(a) => (RecipeKind::Spectrum, a),
        Command::PhaseSweep(a) => (RecipeKind::PhaseSweep, a),
        Command::LeakageSweep(a) => (RecipeKind::LeakageSweep, a),
        Command::CzCalibrate(a) => (RecipeKind::CzCalibrate, a),
        Command::Qpt(a) => (RecipeKind::Qpt, a),
        Command::Rb(a) => (RecipeKind::Rb, a),
        Command::Irb(a) => (RecipeKind::Irb, a),
        Command::PredistortCheck(a) => (RecipeKind::PredistortCheck, a),
        Command::Run { recipe, out } => {
            let text = fs::read_to_string(&recipe)?;
            let mut r: ExperimentRecipe = toml::from_str(&text)?;
            if let Some(o) = out {
                r.out = o;
            }
            if let (Some(d), Some(base)) = (&r.device, recipe.parent()) {
                if d.is_relative() {
                    r.device = Some(base.join(d));
                }
            }
            return execute(&r);
        }
        Command::SimulateCz { config, amplitude, tau, frame, check } => {
            let params = load_device(config.as_deref())?;
            let template = qocsim::dynamics::PulseTemplate::default();
            let pulse = template.pulse(&params, amplitude, tau)?;
            let opts = if check { SolverOptions::default() } else { SolverOptions::fast() };
            let result = time_evolve(&params, &pulse, frame, &opts)?;
            let phases = conditional_phase(&result.u)?;
            let report = serde_json::json!({
                "amplitude_phi0": amplitude,
                "tau_ns": tau,
                "frame": frame,
                "phases": phases,
                "mean_p_leak": result.mean_leakage(),
                "leakage": result.leakage,
                "unitarity_defect": result.unitarity_defect,
                "dt_ns": result.dt,
                "convergence_delta": result.convergence_delta,
            });
            emit(&serde_json::to_string_pretty(&report)?);
            return Ok(());
        }
        Command::Mitigate { assignment, populations } => {
            let m = AssignmentMatrix::from_csv(fs::File::open(&assignment)?)?;
            let c = readout_correct(&m, &DVector::from_vec(populations))?;
            emit(&serde_json::to_string_pretty(&c)?);
            return Ok(());
        }
    };
    let (kind, args) = kind_args;
    execute(&args.recipe(kind)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(n) = std::env::var("QOCSIM_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: QOCSIM_THREADS must be a positive integer, got '{n}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
