//! Amplitude rescaling `sigma_alpha -> lambda^{|alpha|} sigma_alpha`.
//!
//! Substituting `y -> lambda y` maps every frequency `xi` to `lambda xi`, so
//! choosing `lambda ~ 1 / max |xi|` moves the frequencies near the unit
//! polydisc where the Hankel matrices are well conditioned. The amplitude
//! is estimated from the ratio of the two highest degree slices of moments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PolyExpModel;
use crate::moments::MomentSequence;

/// Denominator slices below this are treated as zero.
const MIN_SLICE: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescaleFactor {
    /// Estimated frequency amplitude.
    pub m: f64,
    /// Applied scaling, `1 / m`.
    pub lambda: f64,
}

/// `m = max_{|a|=d} |sigma_a| / max_{|a|=d-1} |sigma_a|`, `lambda = 1 / m`.
pub fn scale_factor(seq: &MomentSequence) -> Result<RescaleFactor> {
    let d = seq.d();
    if d < 1 {
        return Err(Error::CannotEstimate("needs moments of degree >= 1"));
    }
    let top = seq.max_abs_at_degree(d);
    let below = seq.max_abs_at_degree(d - 1);
    if !(below >= MIN_SLICE) || !below.is_finite() {
        return Err(Error::CannotEstimate("degree d-1 moments vanish"));
    }
    let m = top / below;
    let lambda = 1.0 / m;
    if !(m > 0.0 && m.is_finite() && lambda.is_finite() && lambda > 0.0) {
        return Err(Error::CannotEstimate("amplitude ratio out of range"));
    }
    Ok(RescaleFactor { m, lambda })
}

pub fn scale_moments(seq: &MomentSequence, lambda: f64) -> MomentSequence {
    seq.map(|alpha, v| v * lambda.powi(alpha.degree() as i32))
}

/// Divides every frequency by `lambda`; weights are unchanged.
pub fn unscale_model(model: &PolyExpModel, lambda: f64) -> PolyExpModel {
    model.map_terms(|t| crate::model::Term {
        weight: t.weight,
        freq: t.freq.iter().map(|x| x / lambda).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RescaleMode {
    Auto,
    Off,
    Fixed(f64),
}

impl RescaleMode {
    /// Scaling to apply to `seq`. `Auto` falls back to `1` when the
    /// amplitude cannot be estimated.
    pub fn resolve(&self, seq: &MomentSequence) -> f64 {
        match *self {
            RescaleMode::Auto => scale_factor(seq).map(|f| f.lambda).unwrap_or(1.0),
            RescaleMode::Off => 1.0,
            RescaleMode::Fixed(lambda) => lambda,
        }
    }
}

impl fmt::Display for RescaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RescaleMode::Auto => write!(f, "auto"),
            RescaleMode::Off => write!(f, "off"),
            RescaleMode::Fixed(l) => write!(f, "{l:e}"),
        }
    }
}

impl FromStr for RescaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RescaleMode::Auto),
            "off" => Ok(RescaleMode::Off),
            other => match other.parse::<f64>() {
                Ok(l) if l != 0.0 && l.is_finite() => Ok(RescaleMode::Fixed(l)),
                _ => Err(Error::InvalidInput(format!(
                    "rescale must be auto, off or a nonzero number, got {other:?}"
                ))),
            },
        }
    }
}
