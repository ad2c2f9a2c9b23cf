//! Joint features, parameters and datasets.
//!
//! The joint feature map is the outer product `x ⊗ ψ(y)`, flattened input-major
//! (`φ[i·m + j] = x_i ψ_j(y)`, `m = dim ψ`) and scaled by
//! `1 / (‖x‖ · max_y ‖ψ(y)‖)`, so `‖φ(x, y)‖ ≤ 1` for every pair. Label-only
//! models use the constant input `x = (1)`, which reduces `φ` to `ψ / max ‖ψ‖`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output_spaces::{OutputSpace, Structure};

/// Bound `R` on `‖φ(x, y)‖` after normalisation.
pub const FEATURE_NORM_BOUND: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Parameter vector `θ` with its regularization weight `λ` and norm budget `B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub norm_budget: f64,
}

impl Params {
    pub fn new(theta: Vec<f64>, lambda: f64, norm_budget: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(norm_budget > 0.0) {
            return Err(Error::InvalidParameter(format!("norm budget must be positive, got {norm_budget}")));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("theta has non-finite entries".into()));
        }
        let norm = l2_norm(&theta);
        if norm > norm_budget * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "‖theta‖ = {norm} exceeds the norm budget {norm_budget}"
            )));
        }
        Ok(Self { theta, lambda, norm_budget })
    }

    /// Parameters whose budget is exactly `‖θ‖` (or 1 for `θ = 0`), with `λ = 1`.
    pub fn from_theta(theta: Vec<f64>) -> Self {
        let norm = l2_norm(&theta);
        Self { theta, lambda: 1.0, norm_budget: if norm > 0.0 { norm } else { 1.0 } }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_theta(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.theta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constant input used by label-only models.
pub fn label_only_input() -> Vec<f64> {
    vec![1.0]
}

pub fn joint_dim(input_dim: usize, space: &OutputSpace) -> usize {
    input_dim * space.feature_dim()
}

/// `φ(x, y) = x ⊗ ψ(y) / (‖x‖ · max ‖ψ‖)`.
pub fn joint_features(x: &[f64], y: &Structure, space: &OutputSpace) -> Result<FeatureVector> {
    let psi = space.output_features(y)?;
    let scale = joint_scale(x, space)?;
    let mut phi = Vec::with_capacity(x.len() * psi.len());
    for &xi in x {
        phi.extend(psi.iter().map(|p| xi * p * scale));
    }
    Ok(FeatureVector(phi))
}

pub(crate) fn joint_scale(x: &[f64], space: &OutputSpace) -> Result<f64> {
    let xn = l2_norm(x);
    if xn == 0.0 || !xn.is_finite() {
        return Err(Error::ZeroInput);
    }
    Ok(1.0 / (xn * space.max_feature_norm()))
}

/// `⟨φ, θ⟩`.
pub fn score(theta: &Params, phi: &FeatureVector) -> Result<f64> {
    if theta.dim() != phi.len() {
        return Err(Error::DimensionMismatch { expected: theta.dim(), got: phi.len() });
    }
    Ok(dot(&theta.theta, phi.as_slice()))
}

/// Radius `√(ln|Y| / λ)` containing the regularized optimum.
pub fn norm_budget_from_space(lambda: f64, space: &OutputSpace) -> f64 {
    (space.ln_count() / lambda).sqrt()
}

/// One labelled observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub x: Vec<f64>,
    pub y: Structure,
}

/// A set of observations sharing one output space and input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub space: OutputSpace,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(space: OutputSpace, instances: Vec<Instance>) -> Result<Self> {
        let data = Self { space, instances };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .instances
            .first()
            .ok_or_else(|| Error::InvalidParameter("dataset must contain at least one instance".into()))?;
        let input_dim = first.x.len();
        for inst in &self.instances {
            if inst.x.len() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, got: inst.x.len() });
            }
            if !self.space.contains(&inst.y) {
                return Err(Error::WrongSpace { expected: self.space.kind() });
            }
            joint_scale(&inst.x, &self.space)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.x.len())
    }

    /// Dimension of `θ` for models over this dataset.
    pub fn param_dim(&self) -> usize {
        joint_dim(self.input_dim(), &self.space)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: Dataset = serde_json::from_str(text)?;
        data.validate()?;
        Ok(data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
