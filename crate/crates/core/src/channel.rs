//! Wireless uplink model: Nakagami-m fading, in-factory NLOS path loss,
//! mean SNR and Shannon-rate transmission latency.
//!
//! All quantities use SI units except where noted: the carrier frequency is
//! in GHz and powers are given in dBm.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("channel parameter `{name}` must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },
}

/// Link-level parameters. Construct through [`ChannelParams::new`] or
/// validate deserialized values with [`ChannelParams::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Nakagami shape `m`.
    pub m: f64,
    /// Nakagami scale, i.e. the mean power gain.
    pub omega: f64,
    /// UE to edge-server distance in meters.
    pub distance_m: f64,
    /// Carrier frequency in GHz.
    pub carrier_ghz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
}

impl Default for ChannelParams {
    /// Industrial setting used throughout the experiments: m = 1, Ω = 1,
    /// 50 m at 3.5 GHz, 24 dBm transmit power, -114 dBm noise, 1 MHz.
    fn default() -> Self {
        Self {
            m: 1.0,
            omega: 1.0,
            distance_m: 50.0,
            carrier_ghz: 3.5,
            tx_power_dbm: 24.0,
            noise_dbm: -114.0,
            bandwidth_hz: 1e6,
        }
    }
}

impl ChannelParams {
    pub fn new(
        m: f64,
        omega: f64,
        distance_m: f64,
        carrier_ghz: f64,
        tx_power_dbm: f64,
        noise_dbm: f64,
        bandwidth_hz: f64,
    ) -> Result<Self, ChannelError> {
        let p = Self {
            m,
            omega,
            distance_m,
            carrier_ghz,
            tx_power_dbm,
            noise_dbm,
            bandwidth_hz,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, value) in [
            ("m", self.m),
            ("omega", self.omega),
            ("distance_m", self.distance_m),
            ("carrier_ghz", self.carrier_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
        ] {
            if !value.is_finite() {
                return Err(ChannelError::NotFinite { name, value });
            }
            if value <= 0.0 {
                return Err(ChannelError::NonPositive { name, value });
            }
        }
        for (name, value) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_dbm", self.noise_dbm),
        ] {
            if !value.is_finite() {
                return Err(ChannelError::NotFinite { name, value });
            }
        }
        Ok(())
    }

    pub fn with_bandwidth(mut self, bandwidth_hz: f64) -> Self {
        self.bandwidth_hz = bandwidth_hz;
        self
    }

    /// Spectral efficiency `log2(1 + SNR)` at the mean SNR, bits/s/Hz.
    pub fn spectral_efficiency(&self) -> f64 {
        (1.0 + mean_snr(self)).log2()
    }

    /// Achievable rate `B log2(1 + SNR)` in bit/s.
    pub fn rate_bps(&self) -> f64 {
        self.bandwidth_hz * self.spectral_efficiency()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Draws one fading power gain: Gamma with shape `m` and mean `omega`
/// (scale `omega / m`).
pub fn sample_fading_gain<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    // validated params guarantee a positive shape and scale
    let gamma = Gamma::new(params.m, params.omega / params.m).expect("validated channel params");
    gamma.sample(rng)
}

/// In-factory NLOS path loss in dB, `d` in meters and `fc` in GHz.
pub fn path_loss_db(d: f64, fc: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositive {
            name: "distance_m",
            value: d,
        });
    }
    if !(fc > 0.0) {
        return Err(ChannelError::NonPositive {
            name: "carrier_ghz",
            value: fc,
        });
    }
    Ok(18.6 + 35.7 * d.log10() + 20.0 * fc.log10())
}

/// Overall channel gain for a given fading power gain.
pub fn channel_gain(params: &ChannelParams, fading_power: f64) -> f64 {
    let pl = path_loss_db(params.distance_m, params.carrier_ghz).expect("validated channel params");
    fading_power / 10f64.powf(pl / 10.0)
}

/// SNR for an explicit fading power gain.
pub fn snr_with_gain(params: &ChannelParams, fading_power: f64) -> f64 {
    dbm_to_watts(params.tx_power_dbm) * channel_gain(params, fading_power)
        / dbm_to_watts(params.noise_dbm)
}

/// Mean SNR (linear), using the mean fading power Ω as the expected gain.
pub fn mean_snr(params: &ChannelParams) -> f64 {
    snr_with_gain(params, params.omega)
}

/// Seconds to push `payload_bits` over the link at the mean SNR.
pub fn transmission_time(payload_bits: f64, params: &ChannelParams) -> f64 {
    transmission_time_at_snr(payload_bits, params.bandwidth_hz, mean_snr(params))
}

pub fn transmission_time_at_snr(payload_bits: f64, bandwidth_hz: f64, snr: f64) -> f64 {
    if payload_bits == 0.0 {
        return 0.0;
    }
    payload_bits / (bandwidth_hz * (1.0 + snr).log2())
}

/// Per-run channel state: either deterministic at the mean SNR, or drawing
/// a fresh fading gain for every transmission.
#[derive(Debug)]
pub struct Link<R> {
    pub params: ChannelParams,
    monte_carlo: Option<R>,
}

impl<R: Rng> Link<R> {
    pub fn deterministic(params: ChannelParams) -> Self {
        Self {
            params,
            monte_carlo: None,
        }
    }

    pub fn monte_carlo(params: ChannelParams, rng: R) -> Self {
        Self {
            params,
            monte_carlo: Some(rng),
        }
    }

    pub fn transmit(&mut self, payload_bits: f64) -> f64 {
        match self.monte_carlo.as_mut() {
            None => transmission_time(payload_bits, &self.params),
            Some(rng) => {
                let g = sample_fading_gain(&self.params, rng);
                transmission_time_at_snr(
                    payload_bits,
                    self.params.bandwidth_hz,
                    snr_with_gain(&self.params, g),
                )
            }
        }
    }
}
