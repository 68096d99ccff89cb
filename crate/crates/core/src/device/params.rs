use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters of the three-node circuit.
///
/// Capacitances are in femtofarads and Josephson energies in GHz (`E/h`).
/// Flux values are expressed in units of the superconducting flux quantum,
/// so the SQUID modulation has period 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub c_s1: f64,
    pub c_s2: f64,
    pub c_sc: f64,
    pub c_12: f64,
    pub c_1c: f64,
    pub c_2c: f64,
    pub e_j1: f64,
    pub e_j2: f64,
    pub e_jc: f64,
    /// SQUID junction asymmetry.
    pub r: f64,
    /// Maps applied line fluxes (Q1, Q2, C) to loop fluxes. Only the coupler
    /// line is driven, so only the third column enters.
    pub crosstalk: [[f64; 3]; 3],
    /// Fock levels kept per mode.
    pub truncation: usize,
    /// Applied coupler flux at the idle point.
    pub idle_flux: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            c_s1: 77.8,
            c_s2: 77.8,
            c_sc: 60.4,
            c_12: 0.46,
            c_1c: 6.4,
            c_2c: 6.4,
            e_j1: 15.3,
            e_j2: 17.49,
            e_jc: 37.3,
            r: 1.0 / 1.71,
            crosstalk: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            truncation: 8,
            // Places the dressed coupler at 7.612 GHz; see
            // `flux_for_coupler_frequency`.
            idle_flux: 0.230_685_6,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let caps = [
            ("c_s1", self.c_s1),
            ("c_s2", self.c_s2),
            ("c_sc", self.c_sc),
            ("c_12", self.c_12),
            ("c_1c", self.c_1c),
            ("c_2c", self.c_2c),
        ];
        for (name, c) in caps {
            // Shunts must be positive; couplings may be switched off.
            let shunt = name.starts_with("c_s");
            if !c.is_finite() || c < 0.0 || (shunt && c == 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive, got {c}")));
            }
        }
        for (name, e) in [("e_j1", self.e_j1), ("e_j2", self.e_j2), ("e_jc", self.e_jc)] {
            if !e.is_finite() || e <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be positive, got {e}")));
            }
        }
        if !self.r.is_finite() || self.r <= 0.0 {
            return Err(Error::Parameter(format!("SQUID asymmetry must be positive, got {}", self.r)));
        }
        if self.crosstalk.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("crosstalk matrix has non-finite entries".into()));
        }
        if self.truncation < 3 {
            return Err(Error::Truncation { levels: self.truncation, min: 3 });
        }
        if !self.idle_flux.is_finite() {
            return Err(Error::Parameter("idle flux must be finite".into()));
        }
        Ok(())
    }

    /// Loop flux seen by the coupler SQUID for an applied coupler-line flux.
    pub fn coupler_loop_flux(&self, applied: f64) -> f64 {
        self.crosstalk[2][2] * applied
    }

    /// Same device with every coupling capacitance removed.
    pub fn decoupled(&self) -> Self {
        Self { c_12: 0.0, c_1c: 0.0, c_2c: 0.0, ..self.clone() }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Self = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DeviceParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let p = DeviceParams { c_s1: 0.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::Parameter(_))));
        let p = DeviceParams { c_1c: -1.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = DeviceParams { e_jc: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = DeviceParams { truncation: 2, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::Truncation { .. })));
    }

    #[test]
    fn toml_round_trip_with_partial_fields() {
        let p = DeviceParams::from_toml_str("e_j1 = 16.0\ntruncation = 5\n").unwrap();
        assert_eq!(p.e_j1, 16.0);
        assert_eq!(p.truncation, 5);
        assert_eq!(p.c_sc, 60.4);
        let text = toml::to_string(&p).unwrap();
        assert_eq!(DeviceParams::from_toml_str(&text).unwrap(), p);
        assert!(DeviceParams::from_toml_str("bogus = 1").is_err());
    }
}
