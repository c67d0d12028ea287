//! Partial-CSIT channel instances and seeded sampling of the true channels.
//!
//! The transmitter knows an estimate `ĥ_k` per user plus the variance `σ²_ek`
//! of an i.i.d. circularly-symmetric complex Gaussian error, so the true
//! channel is `h_k = ĥ_k + h̃_k` with `h̃_k ~ CN(0, σ²_ek I)`.
//!
//! Sampling is organised in fixed-size chunks, each driven by its own ChaCha
//! stream derived from the user seed. Any partition of the chunk range over
//! workers therefore yields the same samples.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, norm_sqr, CVector};

/// Number of channel draws generated per RNG stream.
pub const SAMPLE_CHUNK: usize = 1024;

/// Scenario parameters from which a [`ChannelInstance`] is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub num_tx_antennas: usize,
    pub num_users: usize,
    /// Per-antenna average path gain `σ²_k = σ²_ck + σ²_ek`.
    pub path_gains: Vec<f64>,
    pub csit_error_vars: Vec<f64>,
    pub noise_var: f64,
    /// Steering phases in radians. Drawn uniformly from `[0, 2π)` with `seed`
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_users;
        if k == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.num_tx_antennas < k {
            return Err(Error::Config(format!(
                "need num_tx_antennas >= num_users, got {} < {}",
                self.num_tx_antennas, k
            )));
        }
        for (name, len) in [
            ("path_gains", self.path_gains.len()),
            ("csit_error_vars", self.csit_error_vars.len()),
        ] {
            if len != k {
                return Err(Error::Config(format!("{name} has {len} entries, expected {k}")));
            }
        }
        if let Some(phases) = &self.phases {
            if phases.len() != k {
                return Err(Error::Config(format!(
                    "phases has {} entries, expected {k}",
                    phases.len()
                )));
            }
            if phases.iter().any(|p| !p.is_finite()) {
                return Err(Error::Config("phases must be finite".into()));
            }
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::Config("noise_var must be positive".into()));
        }
        for (user, (&gain, &err)) in self.path_gains.iter().zip(&self.csit_error_vars).enumerate() {
            if !(gain > 0.0) || !gain.is_finite() {
                return Err(Error::Config(format!("path gain of user {user} must be positive")));
            }
            if !(err >= 0.0) || !err.is_finite() {
                return Err(Error::Config(format!(
                    "CSIT error variance of user {user} must be nonnegative"
                )));
            }
            if err > gain {
                return Err(Error::Config(format!(
                    "user {user}: error variance {err} exceeds path gain {gain}"
                )));
            }
        }
        Ok(())
    }

    /// Phases used by [`build_instance`]: explicit ones, or uniform draws from
    /// the configured seed.
    pub fn resolved_phases(&self) -> Vec<f64> {
        match &self.phases {
            Some(p) => p.clone(),
            None => draw_phases(self.num_users, self.seed),
        }
    }

    /// `σ²_av = (1/K) Σ σ²_n / σ²_k`.
    pub fn average_noise_var(&self) -> f64 {
        self.path_gains.iter().map(|g| self.noise_var / g).sum::<f64>() / self.num_users as f64
    }

    /// Total power corresponding to an SNR in dB, with SNR = P_t / (K σ²_av).
    pub fn power_for_snr_db(&self, snr_db: f64) -> f64 {
        10f64.powf(snr_db / 10.0) * self.num_users as f64 * self.average_noise_var()
    }

    pub fn snr_db_for_power(&self, power: f64) -> f64 {
        10.0 * (power / (self.num_users as f64 * self.average_noise_var())).log10()
    }
}

fn draw_phases(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
}

/// Transmitter-side knowledge: estimates, error variances and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInstance {
    pub estimates: Vec<CVector>,
    pub error_vars: Vec<f64>,
    pub noise_var: f64,
}

impl ChannelInstance {
    /// Builds an instance from user-supplied estimates.
    pub fn new(estimates: Vec<CVector>, error_vars: Vec<f64>, noise_var: f64) -> Result<Self> {
        let inst = Self {
            estimates,
            error_vars,
            noise_var,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.estimates.len();
        if k == 0 {
            return Err(Error::Config("instance has no users".into()));
        }
        let n = self.estimates[0].len();
        if n < k {
            return Err(Error::Config(format!(
                "need at least as many antennas as users, got {n} < {k}"
            )));
        }
        if let Some(bad) = self.estimates.iter().find(|h| h.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                actual: bad.len(),
            });
        }
        if self.error_vars.len() != k {
            return Err(Error::Dimension {
                expected: k,
                actual: self.error_vars.len(),
            });
        }
        if self.error_vars.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("error variances must be nonnegative".into()));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::Config("noise_var must be positive".into()));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.estimates.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.estimates[0].len()
    }
}

/// One joint draw of all users' true channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub channels: Vec<CVector>,
}

/// `ĥ_k[m] = σ_ck e^{j m φ_k}` with `σ²_ck = σ²_k − σ²_ek`.
pub fn build_instance(config: &ChannelConfig) -> Result<ChannelInstance> {
    config.validate()?;
    let phases = config.resolved_phases();
    let estimates = (0..config.num_users)
        .map(|k| {
            let amp = (config.path_gains[k] - config.csit_error_vars[k]).max(0.0).sqrt();
            CVector::from_fn(config.num_tx_antennas, |m, _| {
                let arg = m as f64 * phases[k];
                c(amp * arg.cos(), amp * arg.sin())
            })
        })
        .collect();
    ChannelInstance::new(estimates, config.csit_error_vars.clone(), config.noise_var)
}

/// Instances sharing `config` but with freshly drawn phases, for averaging
/// over the estimate geometry rather than keeping `ĥ_k` fixed.
pub fn phase_realizations(config: &ChannelConfig, count: usize, seed: u64) -> Result<Vec<ChannelInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut cfg = config.clone();
            cfg.phases = Some(draw_phases(config.num_users, rng.gen()));
            build_instance(&cfg)
        })
        .collect()
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn draw_sample(instance: &ChannelInstance, rng: &mut ChaCha8Rng) -> ChannelSample {
    let channels = instance
        .estimates
        .iter()
        .zip(&instance.error_vars)
        .map(|(h_hat, &var)| {
            let scale = (var / 2.0).sqrt();
            CVector::from_fn(h_hat.len(), |m, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                h_hat[m] + c(scale * re, scale * im)
            })
        })
        .collect();
    ChannelSample { channels }
}

/// Samples `len` draws from chunk `chunk` of the stream identified by `seed`.
pub fn sample_chunk(instance: &ChannelInstance, seed: u64, chunk: usize, len: usize) -> Vec<ChannelSample> {
    let mut rng = chunk_rng(seed, chunk);
    (0..len).map(|_| draw_sample(instance, &mut rng)).collect()
}

/// Chunk lengths covering `count` draws.
pub fn chunk_lengths(count: usize) -> Vec<usize> {
    let full = count / SAMPLE_CHUNK;
    let mut lens = vec![SAMPLE_CHUNK; full];
    if count % SAMPLE_CHUNK != 0 {
        lens.push(count % SAMPLE_CHUNK);
    }
    lens
}

/// `count` draws of `h_k = ĥ_k + h̃_k`, deterministic in `seed`.
pub fn sample_channels(instance: &ChannelInstance, count: usize, seed: u64) -> Result<Vec<ChannelSample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let chunks: Vec<Vec<ChannelSample>> = chunk_lengths(count)
        .into_par_iter()
        .enumerate()
        .map(|(idx, len)| sample_chunk(instance, seed, idx, len))
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// `‖ĥ_k‖²` per user.
pub fn estimate_powers(instance: &ChannelInstance) -> Vec<f64> {
    instance.estimates.iter().map(norm_sqr).collect()
}
