//! Junction-arrival trigger over the classified descriptor stream.
//!
//! Firing requires `debounce` consecutive junction decisions while armed
//! with no cooldown running. A firing starts the cooldown and disarms the
//! trigger until a non-junction frame re-arms it, so a contiguous junction
//! run fires at most once.

use crate::descriptor::{BackendError, DescriptorBackend};
use crate::model::ClassLabel;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct TriggerParams {
    /// Consecutive junction decisions required (N).
    pub debounce: usize,
    /// Frames after a firing during which firing is blocked (C).
    pub cooldown: usize,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self { debounce: 3, cooldown: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct TriggerState {
    params: TriggerParams,
    buffer: VecDeque<ClassLabel>,
    cooldown: usize,
    armed: bool,
}

impl TriggerState {
    pub fn new(params: TriggerParams) -> Self {
        assert!(params.debounce >= 1);
        Self { params, buffer: VecDeque::with_capacity(params.debounce), cooldown: 0, armed: true }
    }

    /// Feed one class decision; returns whether the trigger fired.
    pub fn update(&mut self, class: ClassLabel) -> bool {
        if self.cooldown > 0 {
            self.cooldown -= 1;
        }
        if class != ClassLabel::Junction {
            self.armed = true;
        }
        self.buffer.push_back(class);
        if self.buffer.len() > self.params.debounce {
            self.buffer.pop_front();
        }
        let fired = self.armed
            && self.cooldown == 0
            && self.buffer.len() == self.params.debounce
            && self.buffer.iter().all(|&c| c == ClassLabel::Junction);
        if fired {
            self.cooldown = self.params.cooldown;
            self.armed = false;
        }
        fired
    }
}

/// Argmax class of the backend's probabilities; ties go to the lower class
/// index. The spectral backend propagates its classification-unavailable
/// error.
pub fn classify_frame(q: &[f64], backend: &DescriptorBackend) -> Result<ClassLabel, BackendError> {
    let probs = backend.classify(q)?;
    let mut best = 0usize;
    for i in 1..3 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Ok(ClassLabel::from_index(best).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::{Junction as J, Straight as S, Turn as T};

    fn run(params: TriggerParams, stream: &[ClassLabel]) -> Vec<bool> {
        let mut state = TriggerState::new(params);
        stream.iter().map(|&c| state.update(c)).collect()
    }

    #[test]
    fn straight_frames_never_fire() {
        let fired = run(TriggerParams { debounce: 3, cooldown: 5 }, &[S; 5]);
        assert!(fired.iter().all(|f| !f));
    }

    #[test]
    fn fires_on_nth_junction_frame() {
        let fired = run(TriggerParams { debounce: 3, cooldown: 5 }, &[J, J, J]);
        assert_eq!(fired, vec![false, false, true]);
    }

    #[test]
    fn contiguous_run_fires_exactly_once() {
        let fired = run(TriggerParams { debounce: 3, cooldown: 5 }, &[J; 10]);
        assert_eq!(fired.iter().filter(|f| **f).count(), 1);
        assert!(fired[2]);
    }

    #[test]
    fn cooldown_blocks_early_refire() {
        // Fire at frame 3 (index 2); a one-frame gap re-arms, but the next
        // possible firing is pushed past the cooldown.
        let stream = [J, J, J, S, J, J, J, J, J];
        let fired = run(TriggerParams { debounce: 3, cooldown: 5 }, &stream);
        assert!(fired[2]);
        assert_eq!(&fired[3..7], &[false, false, false, false]);
        assert!(fired[7], "eligible again once the cooldown of 5 has elapsed");
    }

    #[test]
    fn removing_any_junction_frame_prevents_firing() {
        // Debounce tightness on the minimal firing sequence.
        let params = TriggerParams { debounce: 3, cooldown: 5 };
        assert!(run(params, &[J, J, J]).contains(&true));
        assert!(!run(params, &[J, J]).contains(&true));
        assert!(!run(params, &[J, S, J]).contains(&true));
        assert!(!run(params, &[S, J, J]).contains(&true));
    }

    #[test]
    fn mixed_classes_reset_the_window() {
        let fired = run(TriggerParams { debounce: 2, cooldown: 0 }, &[J, T, J, J]);
        assert_eq!(fired, vec![false, false, false, true]);
    }
}
