//! The descriptor contract shared by the learned and spectral backends.

use crate::model::ModelWeights;
use crate::projection::RangeImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of both descriptor vectors.
pub const DESCRIPTOR_DIM: usize = 64;

/// Per-scan descriptor pair: `q` is place-dependent and (by training or by
/// construction) orientation-invariant; `w` carries orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorPair {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
}

impl DescriptorPair {
    pub fn new(q: Vec<f64>, w: Vec<f64>) -> Self {
        assert_eq!(q.len(), DESCRIPTOR_DIM);
        assert_eq!(w.len(), DESCRIPTOR_DIM);
        debug_assert!(q.iter().chain(&w).all(|v| v.is_finite()));
        Self { q, w }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("classification unavailable: the spectral backend has no classifier")]
    ClassificationUnavailable,
}

/// A descriptor backend: the trained network or the spectral baseline. Both
/// satisfy the same pair contract and plug into the database, pose
/// estimation and trigger unchanged (the spectral backend cannot classify).
pub enum DescriptorBackend<'a> {
    Learned(&'a ModelWeights),
    Spectral,
}

impl DescriptorBackend<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            DescriptorBackend::Learned(_) => "learned",
            DescriptorBackend::Spectral => "spectral",
        }
    }

    pub fn describe(&self, img: &RangeImage) -> Result<DescriptorPair, BackendError> {
        match self {
            DescriptorBackend::Learned(model) => Ok(model.forward_descriptor(img)?),
            DescriptorBackend::Spectral => Ok(crate::spectral::spectral_descriptor(img)?),
        }
    }

    /// Yaw of the scan behind `w_a` relative to the scan behind `w_b`.
    pub fn estimate_yaw(&self, w_a: &[f64], w_b: &[f64]) -> Result<f64, BackendError> {
        match self {
            DescriptorBackend::Learned(model) => Ok(model.estimate_yaw(w_a, w_b)?),
            DescriptorBackend::Spectral => Ok(crate::spectral::yaw_by_correlation(w_a, w_b)),
        }
    }

    /// Class probabilities; the spectral backend reports classification as
    /// unavailable.
    pub fn classify(&self, q: &[f64]) -> Result<[f64; 3], BackendError> {
        match self {
            DescriptorBackend::Learned(model) => Ok(model.classify(q)?),
            DescriptorBackend::Spectral => Err(BackendError::ClassificationUnavailable),
        }
    }
}
