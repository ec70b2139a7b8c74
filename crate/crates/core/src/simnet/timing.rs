use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng::SeededRng;

/// One positive update time (seconds) per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTimes {
    phi: Vec<f64>,
}

impl UpdateTimes {
    pub fn new(phi: Vec<f64>) -> Result<Self, SimError> {
        if let Some(index) = phi.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(SimError::NonPositiveTime { index });
        }
        Ok(Self { phi })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phi
    }

    pub fn heterogeneity(&self) -> Result<f64, SimError> {
        super::heterogeneity(&self.phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum UpdateTimeModel {
    /// The same times every round; worker `w` takes entry `w`.
    Fixed { times: Vec<f64> },
    /// `exp(mu + sigma * z)` with `z` standard normal, drawn per worker from
    /// the stream `(seed, round)`.
    LogNormal { mu: f64, sigma: f64 },
}

impl Default for UpdateTimeModel {
    fn default() -> Self {
        UpdateTimeModel::LogNormal {
            mu: 0.0,
            sigma: 0.25,
        }
    }
}

impl UpdateTimeModel {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            UpdateTimeModel::Fixed { times } => UpdateTimes::new(times.clone()).map(|_| ()),
            UpdateTimeModel::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || *sigma < 0.0 {
                    Err(SimError::Config(format!(
                        "log-normal update times need finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

pub fn sample_update_times(
    model: &UpdateTimeModel,
    workers: usize,
    seed: u64,
    round: u64,
) -> Result<UpdateTimes, SimError> {
    model.validate()?;
    match model {
        UpdateTimeModel::Fixed { times } => {
            if times.len() < workers {
                return Err(SimError::Config(format!(
                    "{} fixed update times for {workers} workers",
                    times.len()
                )));
            }
            UpdateTimes::new(times[..workers].to_vec())
        }
        UpdateTimeModel::LogNormal { mu, sigma } => {
            let mut rng = SeededRng::with_stream(seed, round);
            UpdateTimes::new(
                (0..workers)
                    .map(|_| (mu + sigma * rng.standard_normal()).exp())
                    .collect(),
            )
        }
    }
}
