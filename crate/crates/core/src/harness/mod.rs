//! Experiment recipes, calibration and the flux-line model used by the
//! command line front end.

mod calibrate;
mod line;
mod recipe;

pub use calibrate::{cz_calibrate, realized_pulse, Calibration, CalibrationOptions, TARGET_PHASES};
pub use line::{predistort_check, FluxLine, PredistortReport};
pub use recipe::{
    linspace, load_device, run_recipe, ArtifactBundle, ExperimentRecipe, Grids, InterleaveKind, Manifest,
    QptRecipeSettings, RbSettings, RecipeKind, LEAKAGE_AMPLITUDES, SCHEMA_VERSION,
};
