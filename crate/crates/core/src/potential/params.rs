use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Potential-field parameters. File keys use the conventional symbol names
/// (`a_NR`, `b_NR`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PFParams {
    #[serde(rename = "a_NR")]
    pub a_nr: f64,
    #[serde(rename = "b_NR")]
    pub b_nr: f64,
    #[serde(rename = "a_CR")]
    pub a_cr: f64,
    #[serde(rename = "b_CR")]
    pub b_cr: f64,
    #[serde(rename = "a_V")]
    pub a_v: f64,
    #[serde(rename = "b_V")]
    pub b_v: f64,
    #[serde(rename = "r_V")]
    pub r_v: f64,
    pub r_a: f64,
    pub r_b: f64,
    #[serde(rename = "w_R")]
    pub w_r: f64,
    #[serde(rename = "a_TL1")]
    pub a_tl1: f64,
    #[serde(rename = "a_TL2")]
    pub a_tl2: f64,
    #[serde(rename = "a_PD")]
    pub a_pd: f64,
    #[serde(rename = "b_PD")]
    pub b_pd: f64,
    #[serde(rename = "a_T")]
    pub a_t: f64,
    #[serde(rename = "b_T")]
    pub b_t: f64,
    pub t_alarm: f64,
    pub r_offset: f64,
    /// Perception range, m.
    pub r_p: f64,
    /// Saturation of `-TTC²` when the gap is not closing.
    pub s_cap: f64,
    /// Smallest distance used inside inverse-distance fields, m.
    pub dist_floor: f64,
}

impl Default for PFParams {
    fn default() -> Self {
        Self {
            a_nr: 100.0,
            b_nr: 2.0,
            a_cr: 10.0,
            b_cr: 0.5,
            a_v: 500.0,
            b_v: 1.0,
            r_v: 1.4,
            r_a: 2.4,
            r_b: 1.0,
            w_r: 3.5,
            a_tl1: 200.0,
            a_tl2: 1000.0,
            a_pd: 500.0,
            b_pd: 1.0,
            a_t: 10.0,
            b_t: 1.0,
            t_alarm: 1.5,
            r_offset: 0.25,
            r_p: 50.0,
            s_cap: 400.0,
            dist_floor: 0.05,
        }
    }
}

impl PFParams {
    /// Offset making the non-crossable field vanish at 1.5 m.
    pub fn e_s(&self) -> f64 {
        self.a_nr / 1.5f64.powf(self.b_nr)
    }

    /// Plateau of the non-crossable field below 0.1 m.
    pub fn m_s(&self) -> f64 {
        self.a_nr / 0.1f64.powf(self.b_nr) - self.e_s()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_NR", self.a_nr),
            ("b_NR", self.b_nr),
            ("a_CR", self.a_cr),
            ("b_CR", self.b_cr),
            ("a_V", self.a_v),
            ("b_V", self.b_v),
            ("r_V", self.r_v),
            ("r_a", self.r_a),
            ("r_b", self.r_b),
            ("w_R", self.w_r),
            ("a_TL1", self.a_tl1),
            ("a_TL2", self.a_tl2),
            ("a_PD", self.a_pd),
            ("b_PD", self.b_pd),
            ("a_T", self.a_t),
            ("b_T", self.b_t),
            ("t_alarm", self.t_alarm),
            ("r_p", self.r_p),
            ("s_cap", self.s_cap),
            ("dist_floor", self.dist_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.r_offset >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "r_offset must be non-negative, got {}",
                self.r_offset
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: Self = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
