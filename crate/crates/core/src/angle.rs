//! Angle classification bins over `[0, 90)` degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of degree classes covering a quarter turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleGranularity(u32);

impl AngleGranularity {
    pub fn new(n_d: u32) -> Result<Self> {
        if n_d == 0 {
            return Err(Error::Config("angle granularity must be at least 1".into()));
        }
        Ok(Self(n_d))
    }

    pub fn bins(self) -> usize {
        self.0 as usize
    }

    /// Degrees spanned by one bin.
    pub fn bin_width(self) -> f64 {
        90.0 / self.0 as f64
    }

    pub fn bin_center(self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * 90.0 / self.0 as f64
    }
}

/// Bin index `floor(theta * n_d / 90)`.
pub fn encode_angle(theta: f64, g: AngleGranularity) -> Result<usize> {
    if !(0.0..90.0).contains(&theta) {
        return Err(Error::AngleRange(theta));
    }
    let bin = (theta * g.0 as f64 / 90.0).floor() as usize;
    Ok(bin.min(g.bins() - 1))
}

/// Index of the largest score, ties resolved toward the lower index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Centre of the arg-max bin in degrees.
pub fn decode_angle(scores: &[f64]) -> Result<f64> {
    let bin = argmax(scores).ok_or(Error::EmptyScores)?;
    Ok((bin as f64 + 0.5) * 90.0 / scores.len() as f64)
}

/// Target encoding for the angle channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AngleLabel {
    #[default]
    OneHot,
    /// Circular Gaussian window of the given standard deviation in bins.
    Smooth { sigma_bins: f64 },
}

impl AngleLabel {
    pub fn target(self, bin: usize, g: AngleGranularity) -> Vec<f64> {
        let n = g.bins();
        match self {
            AngleLabel::OneHot => {
                let mut t = vec![0.0; n];
                t[bin] = 1.0;
                t
            }
            AngleLabel::Smooth { sigma_bins } => (0..n)
                .map(|j| {
                    let d = j.abs_diff(bin);
                    let d = d.min(n - d) as f64;
                    (-(d * d) / (2.0 * sigma_bins * sigma_bins)).exp()
                })
                .collect(),
        }
    }
}
