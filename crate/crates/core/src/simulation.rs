//! Virtual coincidence-counting experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::InstrumentMatrix;
use crate::states::PureQuquart;

/// Coincidence counts, one entry per protocol setting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsDataset {
    pub counts: Vec<u64>,
    /// Expected total the experiment was budgeted for.
    pub total_events: u64,
    /// Hash of the protocol the counts belong to, when known.
    pub spec_hash: Option<String>,
    pub seed: u64,
    /// Accidental coincidences have been subtracted.
    pub corrected: bool,
}

impl CountsDataset {
    pub fn sum(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| k as f64).collect()
    }
}

/// Mean counts `intensity * |X_j c|^2` per setting.
pub fn expected_rates(x: &InstrumentMatrix, s: &PureQuquart, intensity: f64) -> Result<Vec<f64>> {
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(Error::domain(format!("intensity must be positive, got {intensity}")));
    }
    Ok(x.probabilities(s.amplitudes())
        .into_iter()
        .map(|p| intensity * p)
        .collect())
}

/// Independent Poisson draws, one per rate.
///
/// Setting `j` draws from ChaCha stream `j` keyed by `seed`, so each count
/// depends only on `(seed, j, rate_j)`.
pub fn sample_counts(rates: &[f64], seed: u64) -> Result<Vec<u64>> {
    rates
        .iter()
        .enumerate()
        .map(|(j, &rate)| {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::domain(format!("rate {j} must be finite and >= 0, got {rate}")));
            }
            if rate == 0.0 {
                return Ok(0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let dist = Poisson::new(rate).map_err(|e| Error::domain(format!("rate {j}: {e}")))?;
            Ok(dist.sample(&mut rng) as u64)
        })
        .collect()
}

/// Rate of accidental coincidences `n1 * n2 * T` (singles rates in 1/s,
/// coincidence window `T` in s).
pub fn accidental_rate(n1: f64, n2: f64, window_s: f64) -> Result<f64> {
    if !(n1 >= 0.0 && n2 >= 0.0 && window_s >= 0.0) {
        return Err(Error::domain("singles rates and window must be non-negative"));
    }
    Ok(n1 * n2 * window_s)
}

/// Subtract the expected accidental count (rounded to the nearest integer)
/// from every setting, clamping at zero.
pub fn subtract_accidentals(
    raw: &CountsDataset,
    n1: f64,
    n2: f64,
    window_s: f64,
    exposure_s: f64,
) -> Result<CountsDataset> {
    if raw.corrected {
        return Err(Error::AlreadyCorrected);
    }
    if !(exposure_s > 0.0) {
        return Err(Error::domain(format!("exposure must be positive, got {exposure_s}")));
    }
    let accidentals = (accidental_rate(n1, n2, window_s)? * exposure_s).round() as u64;
    Ok(CountsDataset {
        counts: raw.counts.iter().map(|&k| k.saturating_sub(accidentals)).collect(),
        corrected: true,
        ..raw.clone()
    })
}

/// Simulate a run whose expected total over all settings is `total_events`.
pub fn run_virtual_experiment(
    true_state: &PureQuquart,
    x: &InstrumentMatrix,
    total_events: u64,
    seed: u64,
) -> Result<CountsDataset> {
    if total_events == 0 {
        return Err(Error::domain("total_events must be positive"));
    }
    let probs = x.probabilities(true_state.amplitudes());
    let norm: f64 = probs.iter().sum();
    if norm <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let rates = expected_rates(x, true_state, total_events as f64 / norm)?;
    Ok(CountsDataset {
        counts: sample_counts(&rates, seed)?,
        total_events,
        spec_hash: x.spec().map(|s| s.hash()),
        seed,
        corrected: false,
    })
}
