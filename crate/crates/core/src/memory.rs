//! Augmented memory: a bounded, time-synchronized history of observations
//! and vehicle states.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::VehicleState;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("timestamp {got} s is not after the latest stored timestamp {latest} s")]
    NonMonotonic { latest: f64, got: f64 },
    #[error("observation timestamp {observation} s does not match entry timestamp {entry} s")]
    Unsynchronized { observation: f64, entry: f64 },
}

/// One ray scan: distances per angular bin, counter-clockwise from heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rays: Vec<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub observation: Observation,
    pub state: VehicleState,
    /// Longitudinal speed applied when the entry was recorded, m/s.
    pub speed: f64,
    pub timestamp: f64,
}

impl MemoryEntry {
    pub fn new(observation: Observation, state: VehicleState, speed: f64) -> Self {
        let timestamp = observation.timestamp;
        Self {
            observation,
            state,
            speed,
            timestamp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedMemory {
    entries: VecDeque<MemoryEntry>,
    capacity: usize,
}

impl AugmentedMemory {
    /// A capacity of zero is bumped to one so the latest entry is always kept.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Capacity covering `tau_i` seconds sampled every `dt`.
    pub fn with_horizon(tau_i: f64, dt: f64) -> Self {
        Self::new((tau_i / dt).round() as usize)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&MemoryEntry> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if entry.observation.timestamp != entry.timestamp {
            return Err(MemoryError::Unsynchronized {
                observation: entry.observation.timestamp,
                entry: entry.timestamp,
            });
        }
        if let Some(last) = self.entries.back() {
            if !(entry.timestamp > last.timestamp) {
                return Err(MemoryError::NonMonotonic {
                    latest: last.timestamp,
                    got: entry.timestamp,
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        Ok(())
    }

    /// The last `n` entries, oldest first. While fewer than `n` are stored
    /// the oldest one is repeated at the front; an empty memory yields an
    /// empty window.
    pub fn window(&self, n: usize) -> Vec<MemoryEntry> {
        let Some(oldest) = self.entries.front() else {
            return Vec::new();
        };
        let have = self.entries.len().min(n);
        let mut out = Vec::with_capacity(n);
        out.extend(std::iter::repeat_n(oldest, n - have).cloned());
        out.extend(self.entries.iter().skip(self.entries.len() - have).cloned());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(t: f64) -> MemoryEntry {
        MemoryEntry::new(
            Observation {
                rays: vec![1.0, 2.0],
                timestamp: t,
            },
            VehicleState::new(t, 0.0, 0.0),
            0.0,
        )
    }

    #[test]
    fn push_and_evict() {
        let mut m = AugmentedMemory::new(3);
        m.push(entry(0.0)).unwrap();
        assert_eq!(m.len(), 1);
        for t in 1..4 {
            m.push(entry(t as f64)).unwrap();
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.iter().next().unwrap().timestamp, 1.0);
    }

    #[test]
    fn rejects_repeated_timestamp() {
        let mut m = AugmentedMemory::new(3);
        m.push(entry(1.0)).unwrap();
        assert_eq!(
            m.push(entry(1.0)),
            Err(MemoryError::NonMonotonic {
                latest: 1.0,
                got: 1.0
            })
        );
    }

    #[test]
    fn rejects_unsynchronized_pair() {
        let mut m = AugmentedMemory::new(3);
        let mut e = entry(1.0);
        e.timestamp = 1.5;
        assert!(matches!(m.push(e), Err(MemoryError::Unsynchronized { .. })));
    }

    #[test]
    fn window_slices_and_pads() {
        let mut m = AugmentedMemory::new(10);
        assert!(m.window(3).is_empty());
        for t in 1..=5 {
            m.push(entry(t as f64)).unwrap();
        }
        assert!(m.window(0).is_empty());
        let w: Vec<f64> = m.window(3).iter().map(|e| e.timestamp).collect();
        assert_eq!(w, vec![3.0, 4.0, 5.0]);

        let mut short = AugmentedMemory::new(10);
        short.push(entry(1.0)).unwrap();
        short.push(entry(2.0)).unwrap();
        let w: Vec<f64> = short.window(4).iter().map(|e| e.timestamp).collect();
        assert_eq!(w, vec![1.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn horizon_capacity() {
        assert_eq!(AugmentedMemory::with_horizon(1.0, 0.05).capacity(), 20);
    }

    proptest! {
        #[test]
        fn invariants_hold_after_pushes(
            cap in 1usize..8,
            steps in proptest::collection::vec(-1.0..2.0f64, 0..40),
            n in 1usize..12,
        ) {
            let mut m = AugmentedMemory::new(cap);
            let mut t = 0.0;
            for dt in steps {
                t += dt;
                let _ = m.push(entry(t));
                prop_assert!(m.len() <= cap);
                let ts: Vec<f64> = m.iter().map(|e| e.timestamp).collect();
                prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
            }
            if !m.is_empty() {
                prop_assert_eq!(m.window(n).len(), n);
            }
        }
    }
}
