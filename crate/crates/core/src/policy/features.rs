//! Candidate grid and state features.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::MemoryEntry;
use crate::vehicle::VehicleState;
use crate::vision::SceneDynamics;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("memory window is empty")]
    EmptyWindow,
    #[error("memory window has {got} entries, expected {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("observation has {got} rays, expected {expected}")]
    RayCount { expected: usize, got: usize },
    #[error("reference slice has {got} poses, expected {expected}")]
    SliceLength { expected: usize, got: usize },
}

/// Discrete action space: a `c`-major grid over curvature and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<SceneDynamics>,
}

impl CandidateSet {
    /// `k_c` curvatures uniform in `[-c_max, c_max]` times `k_w` widths
    /// uniform in `[0, 1]`; index = `i_c * k_w + i_w`.
    pub fn grid(k_c: usize, c_max: f64, k_w: usize) -> Self {
        let lin = |k: usize, lo: f64, hi: f64, i: usize| {
            if k == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        };
        let mut candidates = Vec::with_capacity(k_c * k_w);
        for i in 0..k_c {
            for j in 0..k_w {
                candidates.push(SceneDynamics::new(lin(k_c, -c_max, c_max, i), lin(k_w, 0.0, 1.0, j)));
            }
        }
        Self { candidates }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, i: usize) -> SceneDynamics {
        self.candidates[i]
    }
}

impl Default for CandidateSet {
    fn default() -> Self {
        Self::grid(9, 0.5, 5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Memory entries stacked per feature vector.
    pub history: usize,
    pub rays: usize,
    pub max_range: f64,
    /// Reference poses per feature vector.
    pub horizon: usize,
    /// Speed normalizer, m/s.
    pub v_max: f64,
}

impl FeatureConfig {
    pub fn len(&self) -> usize {
        self.history * self.rays + 2 * self.horizon + self.history
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hex SHA-256 of the configuration, stored in checkpoints.
    pub fn hash(&self) -> String {
        let text = format!(
            "history={};rays={};max_range={:?};horizon={};v_max={:?}",
            self.history, self.rays, self.max_range, self.horizon, self.v_max
        );
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// `[rays / max_range per entry | reference (x, y) in the current vehicle
/// frame | speed / v_max per entry]`. The current frame is the newest entry's.
pub fn featurize(window: &[MemoryEntry], ref_slice: &[VehicleState], cfg: &FeatureConfig) -> Result<Vec<f64>, FeatureError> {
    let Some(current) = window.last() else {
        return Err(FeatureError::EmptyWindow);
    };
    if window.len() != cfg.history {
        return Err(FeatureError::WindowLength {
            expected: cfg.history,
            got: window.len(),
        });
    }
    if ref_slice.len() != cfg.horizon {
        return Err(FeatureError::SliceLength {
            expected: cfg.horizon,
            got: ref_slice.len(),
        });
    }
    let mut out = Vec::with_capacity(cfg.len());
    for e in window {
        if e.observation.rays.len() != cfg.rays {
            return Err(FeatureError::RayCount {
                expected: cfg.rays,
                got: e.observation.rays.len(),
            });
        }
        out.extend(e.observation.rays.iter().map(|r| r / cfg.max_range));
    }
    for z in ref_slice {
        out.extend(current.state.to_local(z.position()));
    }
    out.extend(window.iter().map(|e| e.speed / cfg.v_max));
    Ok(out)
}
