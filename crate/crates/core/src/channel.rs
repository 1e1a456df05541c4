//! Log-distance path-loss channel.
//!
//! RSSI at distance `d` (metres, clamped below at 1 m):
//!
//! ```text
//! rssi = tx_power - (pl0 + 10 * n * log10(d)) + sigma * noise
//! ```
//!
//! With the default parameters the link budget is 90 dB, which gives a
//! maximum range of about 13.3 m.

use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    /// Path loss at the 1 m reference distance.
    pub pl0_db: f64,
    /// Path-loss exponent.
    pub exponent: f64,
    pub rx_threshold_dbm: f64,
    /// Log-normal shadowing deviation. Zero makes the model a pure
    /// function of distance.
    pub shadowing_sigma_db: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 0.0,
            pl0_db: 45.0,
            exponent: 4.0,
            rx_threshold_dbm: -90.0,
            shadowing_sigma_db: 0.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tx_power_dbm,
            self.pl0_db,
            self.exponent,
            self.rx_threshold_dbm,
            self.shadowing_sigma_db,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::scenario("radio", "all parameters must be finite"));
        }
        if self.exponent <= 0.0 {
            return Err(Error::scenario("radio.exponent", "must be > 0"));
        }
        if self.pl0_db <= 0.0 {
            return Err(Error::scenario("radio.pl0_db", "must be > 0"));
        }
        if self.rx_threshold_dbm >= self.tx_power_dbm {
            return Err(Error::scenario(
                "radio.rx_threshold_dbm",
                "must be below tx_power_dbm",
            ));
        }
        if self.shadowing_sigma_db < 0.0 {
            return Err(Error::scenario("radio.shadowing_sigma_db", "must be >= 0"));
        }
        Ok(())
    }

    pub fn shadowing_enabled(&self) -> bool {
        self.shadowing_sigma_db > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Received signal strength at `distance_m`.
///
/// `noise_draw` is a standard-normal sample; it only matters when
/// shadowing is enabled.
pub fn path_loss_rssi(distance_m: f64, params: &RadioParams, noise_draw: f64) -> Result<f64> {
    if !distance_m.is_finite() || distance_m <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "distance must be positive and finite, got {distance_m}"
        )));
    }
    let d = distance_m.max(1.0);
    let loss = params.pl0_db + 10.0 * params.exponent * libm::log10(d);
    let shadow = if params.shadowing_enabled() {
        params.shadowing_sigma_db * noise_draw
    } else {
        0.0
    };
    Ok(params.tx_power_dbm - loss + shadow)
}

/// Whether `b` hears `a`, and the RSSI of the link.
///
/// Coincident positions are treated as 1 m apart.
pub fn hears(a: Position, b: Position, params: &RadioParams) -> Result<(bool, f64)> {
    hears_with_noise(a, b, params, 0.0)
}

pub fn hears_with_noise(
    a: Position,
    b: Position,
    params: &RadioParams,
    noise_draw: f64,
) -> Result<(bool, f64)> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput("positions must be finite".into()));
    }
    let d = a.distance(&b).max(1.0);
    let rl = path_loss_rssi(d, params, noise_draw)?;
    Ok((rl >= params.rx_threshold_dbm, rl))
}
