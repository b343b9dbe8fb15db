//! Coordinate-wise maps between natural parameters and the unconstrained
//! coordinates used by the optimizers.

use serde::{Deserialize, Serialize};

use crate::special::{expit, logit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// θ = η, θ ∈ ℝ.
    Identity,
    /// θ = exp(η), θ > 0.
    Log,
    /// θ = 1 / (1 + e^{−η}), θ ∈ (0, 1).
    Logit,
    /// θ = 1 + exp(η), θ > 1.
    LogShifted,
    /// θ = tanh(η), θ ∈ (−1, 1).
    Fisher,
}

impl Transform {
    /// Natural → unconstrained.
    pub fn forward(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.ln(),
            Transform::Logit => logit(theta),
            Transform::LogShifted => (theta - 1.0).ln(),
            Transform::Fisher => theta.atanh(),
        }
    }

    /// Unconstrained → natural.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Transform::Identity => eta,
            Transform::Log => eta.exp(),
            Transform::Logit => expit(eta),
            Transform::LogShifted => 1.0 + eta.exp(),
            Transform::Fisher => eta.tanh(),
        }
    }

    /// dθ/dη at η.
    pub fn derivative(self, eta: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log | Transform::LogShifted => eta.exp(),
            Transform::Logit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
            Transform::Fisher => 1.0 - eta.tanh().powi(2),
        }
    }

    /// Whether θ lies in the open set this transform maps onto.
    pub fn admits(self, theta: f64) -> bool {
        if !theta.is_finite() {
            return false;
        }
        match self {
            Transform::Identity => true,
            Transform::Log => theta > 0.0,
            Transform::Logit => theta > 0.0 && theta < 1.0,
            Transform::LogShifted => theta > 1.0,
            Transform::Fisher => theta > -1.0 && theta < 1.0,
        }
    }
}

/// Name and transform of one free parameter in a packed vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub transform: Transform,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, transform: Transform) -> Self {
        Self {
            name: name.into(),
            transform,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn forward_inverse_roundtrip(eta in -8.0f64..8.0) {
            for t in [Transform::Identity, Transform::Log, Transform::Logit, Transform::LogShifted, Transform::Fisher] {
                let theta = t.inverse(eta);
                prop_assert!(t.admits(theta) || t == Transform::Logit || t == Transform::Fisher);
                prop_assert!((t.forward(theta) - eta).abs() < 1e-6 * (1.0 + eta.abs()));
                let h = 1e-6;
                let fd = (t.inverse(eta + h) - t.inverse(eta - h)) / (2.0 * h);
                prop_assert!((fd - t.derivative(eta)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn logit_of_table_values() {
        assert!((Transform::Logit.forward(0.31) + 0.80).abs() < 0.005);
        assert!((Transform::Logit.inverse(0.75) - 0.679).abs() < 1e-3);
    }
}
