//! Linearized beam in a channel, `min ∫ B(y″)² − P(y′)² − ρgy` subject to
//! `|y| ≤ α`, regularized by a Moreau–Yosida penalty and followed in `γ`.

mod assembly;
mod mesh;
mod path;

pub use assembly::{
    active_fraction, assemble_beam_system, moreau_yosida_derivative, moreau_yosida_residual,
    penalized_energy, BeamSystem, BeamSystemMatrices,
};
pub use mesh::HermiteMesh1D;
pub use path::{path_follow, BranchHistory, PathConfig, PathReport, PathState, ResolveRecord};

use thiserror::Error;

use crate::deflation::DeflationError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeamError {
    #[error("invalid beam parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("mesh needs at least one element")]
    EmptyMesh,
    #[error("guess has {found} entries, mesh has {expected} DOFs")]
    GuessDimension { expected: usize, found: usize },
    #[error("no initial guesses")]
    NoGuesses,
    #[error("every branch failed at step {step} (gamma {gamma})")]
    AllBranchesLost { step: usize, gamma: f64 },
    #[error("gamma path exceeded {0} steps")]
    TooManySteps(usize),
    #[error(transparent)]
    Deflation(#[from] DeflationError),
}

/// Physical data of the beam. Field names follow the usual symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamProblem {
    /// Bending stiffness.
    pub b: f64,
    /// Compressive load.
    pub p: f64,
    /// Mass per unit length.
    pub rho: f64,
    pub g: f64,
    pub l: f64,
    /// Channel half-width.
    pub alpha: f64,
}

impl Default for BeamProblem {
    fn default() -> Self {
        Self {
            b: 1.0,
            p: 10.4,
            rho: 1.0,
            g: 1.0,
            l: 1.0,
            alpha: 0.4,
        }
    }
}

impl BeamProblem {
    pub fn validate(&self) -> Result<(), BeamError> {
        let all_finite = [self.b, self.p, self.rho, self.g, self.l, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(BeamError::InvalidParameter("parameters must be finite"));
        }
        if self.b <= 0.0 {
            return Err(BeamError::InvalidParameter(
                "bending stiffness must be positive",
            ));
        }
        if self.l <= 0.0 {
            return Err(BeamError::InvalidParameter("length must be positive"));
        }
        if self.alpha <= 0.0 {
            return Err(BeamError::InvalidParameter(
                "channel half-width must be positive",
            ));
        }
        Ok(())
    }

    /// Euler buckling load `Bπ²/L²` of the unloaded, unconstrained beam.
    pub fn critical_load(&self) -> f64 {
        self.b * std::f64::consts::PI.powi(2) / (self.l * self.l)
    }
}
