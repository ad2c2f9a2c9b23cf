//! Randomized approximation of the partition function and of the gradient of
//! its logarithm.
//!
//! `Z(θ|x)` is written as the telescoping product
//! `Z(β₀θ) · ∏ᵢ Z(βᵢθ)/Z(βᵢ₋₁θ)` over a cooling schedule
//! `0 = β₀ < β₁ < … < β_l = 1`. `Z(0) = |Y|` is counted exactly, and each
//! inverse ratio `ρᵢ = Z(βᵢ₋₁θ)/Z(βᵢθ)` is the mean of
//! `fᵢ(y) = exp((βᵢ₋₁ − βᵢ) s(y))` under `y ~ π_{βᵢ}`. With gaps of at most
//! `1/(pR‖θ‖)`, each `fᵢ` lies in `[e^{−1/p}, e^{1/p}]`, which bounds its relative
//! variance by `e^{2/p}` and lets `S = ⌈65 ε⁻² l e^{2/p}⌉` draws per ratio give
//! a `(1 ± ε)` estimate with probability at least 3/4.
//!
//! Everything is accumulated in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureVector;
use crate::rng::RngStream;
use crate::samplers::{GibbsTarget, SamplerMode, DEFAULT_MAX_EPOCHS};

pub const DEFAULT_P: u32 = 3;

/// Per-run success probability of a single estimate.
pub const SINGLE_RUN_SUCCESS: f64 = 0.75;

/// Constant `c` in the `⌈c · ln(1/δ)⌉` run count required by [`boost_by_median`].
pub const MEDIAN_RUNS_CONSTANT: f64 = 24.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingSchedule {
    pub betas: Vec<f64>,
    pub p: u32,
    /// `p R ‖θ‖`; zero for the trivial schedule.
    pub q: f64,
}

impl CoolingSchedule {
    /// Number of ratio steps.
    pub fn l(&self) -> usize {
        self.betas.len() - 1
    }

    /// Largest `(βᵢ − βᵢ₋₁) · R‖θ‖`; at most `1/p` for built schedules.
    pub fn max_scaled_gap(&self) -> f64 {
        let r_theta = self.q / self.p as f64;
        self.betas.windows(2).map(|w| (w[1] - w[0]) * r_theta).fold(0.0, f64::max)
    }
}

/// Schedule `0, 1/q, 2/q, …, 1` with `q = p R ‖θ‖`, clamped at 1.
///
/// Grid points at or beyond `1 − 1e-12` are dropped in favour of the final
/// `β = 1`, so the last gap is never longer than `1/q` (up to that rounding
/// slack) and never degenerate.
pub fn build_schedule(r: f64, theta_norm: f64, p: u32) -> Result<CoolingSchedule> {
    if p < 3 {
        return Err(Error::InvalidParameter(format!("p must be at least 3, got {p}")));
    }
    if !(r >= 0.0 && theta_norm >= 0.0 && (r * theta_norm).is_finite()) {
        return Err(Error::InvalidParameter("R and ‖θ‖ must be finite and non-negative".into()));
    }
    let q = p as f64 * r * theta_norm;
    if q == 0.0 {
        return Ok(CoolingSchedule { betas: vec![0.0, 1.0], p, q });
    }
    let mut betas = vec![0.0];
    let mut j = 1u64;
    loop {
        let b = j as f64 / q;
        if b >= 1.0 - 1e-12 {
            break;
        }
        betas.push(b);
        j += 1;
    }
    betas.push(1.0);
    Ok(CoolingSchedule { betas, p, q })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

/// Draws per ratio: `⌈65 ε⁻² l e^{2/p}⌉`.
pub fn sample_size(epsilon: f64, l: usize, p: u32) -> Result<u64> {
    check_epsilon(epsilon)?;
    if l == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one ratio".into()));
    }
    Ok((65.0 / (epsilon * epsilon) * l as f64 * (2.0 / p as f64).exp()).ceil() as u64)
}

/// Per-sampler total-variation budget for truncated chains: `ε / (5 l e^{2/p})`.
pub fn tv_target(epsilon: f64, l: usize, p: u32) -> Result<f64> {
    check_epsilon(epsilon)?;
    if l == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one ratio".into()));
    }
    Ok(epsilon / (5.0 * l as f64 * (2.0 / p as f64).exp()))
}

/// Which kind of sampler feeds the ratio estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Exact draws by coupling from the past.
    Exact,
    /// Truncated-chain draws within the total-variation budget [`tv_target`].
    Approximate,
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorMode::Exact),
            "approximate" | "approx" => Ok(EstimatorMode::Approximate),
            other => Err(Error::Parse(format!("unknown estimator mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub i: usize,
    pub mean: f64,
    #[serde(rename = "S")]
    pub sample_size: u64,
    pub sampler: SamplerMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    /// Natural log of the estimate of `Z`.
    pub log_value: f64,
    pub epsilon: f64,
    pub success_prob: f64,
    pub mode: EstimatorMode,
    #[serde(flatten)]
    pub schedule: CoolingSchedule,
    pub per_ratio: Vec<RatioEstimate>,
    pub seed: u64,
}

impl PartitionEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean of `S` draws of `fᵢ(y) = exp((βᵢ₋₁ − βᵢ) s(y))` with `y` drawn by
/// `sampler` from `base` at `βᵢ`. Draw `j` uses the sub-stream `stream/j`.
pub fn estimate_ratio(
    i: usize,
    schedule: &CoolingSchedule,
    base: &GibbsTarget,
    s: u64,
    sampler: SamplerMode,
    stream: &RngStream,
) -> Result<RatioEstimate> {
    if i == 0 || i > schedule.l() {
        return Err(Error::InvalidParameter(format!("ratio index {i} outside 1..={}", schedule.l())));
    }
    if s == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let (prev, cur) = (schedule.betas[i - 1], schedule.betas[i]);
    let target = base.with_beta(cur)?;
    let draws: Vec<f64> = (0..s)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream.child(j).rng();
            let (y, _) = sampler.draw(&target, &mut rng)?;
            Ok(((prev - cur) * target.score(&y)).exp())
        })
        .collect::<Result<_>>()?;
    let mean = draws.iter().sum::<f64>() / s as f64;
    Ok(RatioEstimate { i, mean, sample_size: s, sampler })
}

/// Estimate `ln Z(θ|x)` for `target` (its own `β` is ignored; the product
/// always runs from 0 to 1). Ratio `i` draws from `stream/i`.
pub fn estimate_partition(
    target: &GibbsTarget,
    epsilon: f64,
    p: u32,
    mode: EstimatorMode,
    stream: &RngStream,
) -> Result<PartitionEstimate> {
    check_epsilon(epsilon)?;
    let schedule = build_schedule(crate::model::FEATURE_NORM_BOUND, target.params().norm(), p)?;
    let l = schedule.l();
    let s = sample_size(epsilon, l, p)?;
    let sampler = match mode {
        EstimatorMode::Exact => SamplerMode::ExactCftp { max_epochs: DEFAULT_MAX_EPOCHS },
        EstimatorMode::Approximate => SamplerMode::Approximate { eps_tv: tv_target(epsilon, l, p)? },
    };
    let per_ratio = (1..=l)
        .map(|i| estimate_ratio(i, &schedule, target, s, sampler, &stream.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let log_inverse: f64 = per_ratio.iter().map(|r| r.mean.ln()).sum();
    Ok(PartitionEstimate {
        log_value: target.space().ln_count() - log_inverse,
        epsilon,
        success_prob: SINGLE_RUN_SUCCESS,
        mode,
        schedule,
        per_ratio,
        seed: stream.seed(),
    })
}

/// Number of independent runs [`boost_by_median`] needs for confidence
/// `1 − δ`. A single run already succeeds with probability 3/4, so `δ ≥ 1/4`
/// needs one run.
pub fn runs_for_confidence(delta: f64) -> usize {
    if delta >= 1.0 - SINGLE_RUN_SUCCESS {
        1
    } else {
        (MEDIAN_RUNS_CONSTANT * (1.0 / delta).ln()).ceil() as usize
    }
}

/// Median of independent estimates (lower median for even counts). If more
/// than half of the runs are within `(1 ± ε)` of `Z`, so is the median.
pub fn boost_by_median(runs: &[PartitionEstimate], delta: f64) -> Result<PartitionEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let needed = runs_for_confidence(delta);
    if runs.len() < needed || runs.is_empty() {
        return Err(Error::TooFewRuns { needed: needed.max(1), got: runs.len() });
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].log_value.total_cmp(&runs[b].log_value));
    let mut median = runs[order[(runs.len() - 1) / 2]].clone();
    median.success_prob = median.success_prob.max(1.0 - delta);
    Ok(median)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// Sample mean of `φ(x, y)`.
    pub d: FeatureVector,
    #[serde(rename = "S")]
    pub sample_size: u64,
    /// Deviation `ε` of `⟨d − ∇ ln Z, z⟩` guaranteed with probability `1 − δ`
    /// for any `‖z‖ ≤ G`.
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "G")]
    pub g: f64,
}

/// `⌈2 R² G² ln(2/δ) / ε²⌉`.
pub fn hoeffding_sample_size(r: f64, g: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if !(r > 0.0 && g > 0.0 && epsilon > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter("Hoeffding sizing needs positive R, G, ε and δ in (0, 1)".into()));
    }
    Ok((2.0 * r * r * g * g * (2.0 / delta).ln() / (epsilon * epsilon)).ceil() as u64)
}

/// Deviation achieved by `s` draws: `R G √(2 ln(2/δ) / S)`.
pub fn hoeffding_epsilon(r: f64, g: f64, s: u64, delta: f64) -> f64 {
    r * g * (2.0 * (2.0 / delta).ln() / s as f64).sqrt()
}

/// Sample mean of `φ(x, y)` over `s` draws from `target`.
pub fn estimate_gradient(
    target: &GibbsTarget,
    s: u64,
    sampler: SamplerMode,
    stream: &RngStream,
) -> Result<GradientEstimate> {
    const DEFAULT_DELTA: f64 = 0.05;
    let d = mean_features(target, s, sampler, stream)?;
    let r = crate::model::FEATURE_NORM_BOUND;
    Ok(GradientEstimate { d, sample_size: s, epsilon: hoeffding_epsilon(r, 1.0, s, DEFAULT_DELTA), delta: DEFAULT_DELTA, g: 1.0 })
}

/// Gradient estimate sized so that `|⟨d − ∇ ln Z, z⟩| < ε` with probability
/// at least `1 − δ` for any fixed `‖z‖ ≤ G`.
pub fn estimate_gradient_with_guarantee(
    target: &GibbsTarget,
    epsilon: f64,
    delta: f64,
    g: f64,
    sampler: SamplerMode,
    stream: &RngStream,
) -> Result<GradientEstimate> {
    let s = hoeffding_sample_size(crate::model::FEATURE_NORM_BOUND, g, epsilon, delta)?;
    let d = mean_features(target, s, sampler, stream)?;
    Ok(GradientEstimate { d, sample_size: s, epsilon, delta, g })
}

fn mean_features(target: &GibbsTarget, s: u64, sampler: SamplerMode, stream: &RngStream) -> Result<FeatureVector> {
    if s == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    let m = target.space().feature_dim();
    let samples = (0..s)
        .into_par_iter()
        .map(|j| Ok(sampler.draw(target, &mut stream.child(j).rng())?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut psi = vec![0.0; m];
    for y in &samples {
        target.space().for_each_active(y, |i| psi[i] += 1.0);
    }
    psi.iter_mut().for_each(|v| *v /= s as f64);
    Ok(target.lift_output_features(&psi))
}
