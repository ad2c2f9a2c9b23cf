//! Samplers for Gibbs distributions `π_β(y) ∝ exp(β ⟨φ(x, y), θ⟩)`.
//!
//! All samplers are built on one Metropolis chain: propose `z` uniformly from
//! the output space and move there with probability
//! `min(1, exp(β (s(z) − s(y))))`, where `s` is the score. Because
//! `|s(y)| ≤ ‖θ‖ R` for every `y`, every move is accepted with probability at
//! least `exp(−2β‖θ‖R)`, which drives both the coalescence time of coupling
//! from the past and the coupling bound on the mixing time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, joint_features, joint_scale, FeatureVector, Params, FEATURE_NORM_BOUND};
use crate::output_spaces::{OutputSpace, Structure};

/// Default number of backward doublings before CFTP gives up (horizon `2^23`).
pub const DEFAULT_MAX_EPOCHS: u32 = 24;

/// The distribution `π_β(y) ∝ exp(β ⟨φ(x, y), θ⟩)` over an output space.
#[derive(Clone, Debug)]
pub struct GibbsTarget {
    space: OutputSpace,
    params: Params,
    beta: f64,
    x: Vec<f64>,
    /// `θ` contracted with the scaled input, so `s(y) = ⟨ψ(y), weights⟩`.
    weights: Vec<f64>,
}

impl GibbsTarget {
    pub fn new(space: OutputSpace, params: Params, beta: f64, x: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
        }
        let m = space.feature_dim();
        let expected = x.len() * m;
        if params.dim() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.dim() });
        }
        let scale = joint_scale(&x, &space)?;
        let mut weights = vec![0.0; m];
        for (i, &xi) in x.iter().enumerate() {
            for (j, w) in weights.iter_mut().enumerate() {
                *w += xi * params.theta[i * m + j];
            }
        }
        weights.iter_mut().for_each(|w| *w *= scale);
        Ok(Self { space, params, beta, x, weights })
    }

    /// Target with the constant input `x = (1)`.
    pub fn label_only(space: OutputSpace, params: Params, beta: f64) -> Result<Self> {
        Self::new(space, params, beta, crate::model::label_only_input())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(Self { beta, ..self.clone() })
    }

    pub fn space(&self) -> &OutputSpace {
        &self.space
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// `⟨φ(x, y), θ⟩`, not scaled by `β`.
    pub fn score(&self, y: &Structure) -> f64 {
        self.space.dot_features(y, &self.weights)
    }

    pub fn log_weight(&self, y: &Structure) -> f64 {
        self.beta * self.score(y)
    }

    pub fn features(&self, y: &Structure) -> Result<FeatureVector> {
        joint_features(&self.x, y, &self.space)
    }

    /// Mean of `ψ`-coordinates lifted back to joint features: `x ⊗ ψ̄ · scale`.
    pub(crate) fn lift_output_features(&self, psi: &[f64]) -> FeatureVector {
        let scale = joint_scale(&self.x, &self.space).expect("validated at construction");
        let mut phi = Vec::with_capacity(self.x.len() * psi.len());
        for &xi in &self.x {
            phi.extend(psi.iter().map(|p| xi * p * scale));
        }
        FeatureVector(phi)
    }

    /// `B·R` with `B = ‖θ‖`: an upper bound on `|s(y)|` over the whole space.
    pub fn score_bound(&self) -> f64 {
        self.params.norm() * FEATURE_NORM_BOUND
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Bookkeeping returned by the exact samplers.
///
/// For coupling from the past, `steps_taken` is the number of time steps
/// between the most recent coalescence certificate and time 0 (inclusive of
/// the certificate step). For rejection sampling it is the number of trials.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub steps_taken: u64,
    pub proposals_accepted: u64,
    pub coalescence_epoch: Option<u32>,
    pub wall_budget_exhausted: bool,
}

/// Which sampler to use when an estimator needs draws from `π_β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum SamplerMode {
    ExactCftp { max_epochs: u32 },
    Rejection,
    /// Truncated chain whose output is within `eps_tv` of `π_β` in total variation.
    Approximate { eps_tv: f64 },
}

impl Default for SamplerMode {
    fn default() -> Self {
        SamplerMode::ExactCftp { max_epochs: DEFAULT_MAX_EPOCHS }
    }
}

impl SamplerMode {
    pub fn is_exact(&self) -> bool {
        !matches!(self, SamplerMode::Approximate { .. })
    }

    pub fn draw<R: Rng + ?Sized>(&self, target: &GibbsTarget, rng: &mut R) -> Result<(Structure, SamplerReport)> {
        match *self {
            SamplerMode::ExactCftp { max_epochs } => sample_exact_cftp(target, rng, max_epochs),
            SamplerMode::Rejection => Ok(sample_rejection(target, rng)),
            SamplerMode::Approximate { eps_tv } => sample_approx_with_report(target, eps_tv, rng),
        }
    }
}

/// Probability that the chain at `current` moves to the proposal `z`.
pub fn acceptance_probability(target: &GibbsTarget, current: &Structure, z: &Structure) -> f64 {
    (target.beta * (target.score(z) - target.score(current))).exp().min(1.0)
}

/// One Metropolis step with a uniform proposal.
pub fn meta_step<R: Rng + ?Sized>(current: &Structure, target: &GibbsTarget, rng: &mut R) -> Structure {
    let z = target.space.sample_uniform(rng);
    let u: f64 = rng.gen();
    if u <= acceptance_probability(target, current, &z) {
        z
    } else {
        current.clone()
    }
}

/// A running Metropolis chain that caches the score of its state.
#[derive(Clone, Debug)]
pub struct MetaChain {
    state: Structure,
    score: f64,
    pub steps: u64,
    pub accepted: u64,
}

impl MetaChain {
    pub fn new(target: &GibbsTarget, state: Structure) -> Self {
        let score = target.score(&state);
        Self { state, score, steps: 0, accepted: 0 }
    }

    pub fn state(&self) -> &Structure {
        &self.state
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn into_state(self) -> Structure {
        self.state
    }

    /// Advance one step; returns whether the proposal was accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, target: &GibbsTarget, rng: &mut R) -> bool {
        let z = target.space.sample_uniform(rng);
        let z_score = target.score(&z);
        let u: f64 = rng.gen();
        self.steps += 1;
        if u.ln() <= target.beta * (z_score - self.score) {
            self.state = z;
            self.score = z_score;
            self.accepted += 1;
            true
        } else {
            false
        }
    }
}

struct TimeStep {
    proposal: Structure,
    score: f64,
    log_u: f64,
}

/// Exact sample from `π_β` by coupling from the past.
///
/// Each past time step `t < 0` carries shared randomness `(z_t, u_t)`. When
/// `u_t ≤ exp(β (s(z_t) − B R))` the proposal is accepted from every state,
/// so all coupled chains coalesce at `z_t`. The search extends the past by
/// doubling (`1, 2, 4, …` steps), reusing the randomness already drawn, finds
/// the most recent such certificate and replays the single surviving
/// trajectory forward to time 0.
pub fn sample_exact_cftp<R: Rng + ?Sized>(
    target: &GibbsTarget,
    rng: &mut R,
    max_epochs: u32,
) -> Result<(Structure, SamplerReport)> {
    let ceiling = target.beta * target.score_bound();
    // past[k] holds the randomness of time −(k + 1).
    let mut past: Vec<TimeStep> = Vec::new();
    for epoch in 0..max_epochs {
        let horizon = 1usize << epoch;
        let scanned = past.len();
        while past.len() < horizon {
            let proposal = target.space.sample_uniform(rng);
            let score = target.score(&proposal);
            let log_u = rng.gen::<f64>().ln();
            past.push(TimeStep { proposal, score, log_u });
        }
        let hit = (scanned..horizon).find(|&k| past[k].log_u <= target.beta * past[k].score - ceiling);
        if let Some(k) = hit {
            let mut state = &past[k].proposal;
            let mut score = past[k].score;
            let mut accepted = 1;
            for step in past[..k].iter().rev() {
                if step.log_u <= target.beta * (step.score - score) {
                    state = &step.proposal;
                    score = step.score;
                    accepted += 1;
                }
            }
            let report = SamplerReport {
                steps_taken: k as u64 + 1,
                proposals_accepted: accepted,
                coalescence_epoch: Some(epoch),
                wall_budget_exhausted: false,
            };
            return Ok((state.clone(), report));
        }
    }
    Err(Error::EpochBudgetExhausted {
        epochs: max_epochs,
        report: SamplerReport {
            steps_taken: past.len() as u64,
            proposals_accepted: 0,
            coalescence_epoch: None,
            wall_budget_exhausted: true,
        },
    })
}

/// Coupling bound on the mixing time:
/// `⌈ln(1/ε) / ln(1 / (1 − exp(−2BR)))⌉`.
///
/// Returns 0 for `ε ≥ 1` and 1 when `exp(−2BR)` rounds to 1 (every proposal
/// is accepted, so one step already reaches stationarity).
pub fn mixing_time_bound(b: f64, r: f64, eps_tv: f64) -> u64 {
    assert!(eps_tv > 0.0, "eps_tv must be positive");
    if eps_tv >= 1.0 {
        return 0;
    }
    let floor = (-2.0 * b * r).exp();
    if floor >= 1.0 {
        return 1;
    }
    let rate = -(-floor).ln_1p();
    ((1.0 / eps_tv).ln() / rate).ceil() as u64
}

/// Steps [`sample_approx`] runs for `target`: the coupling bound with
/// `B = β‖θ‖`.
pub fn approx_steps(target: &GibbsTarget, eps_tv: f64) -> u64 {
    mixing_time_bound(target.beta * target.params.norm(), FEATURE_NORM_BOUND, eps_tv)
}

/// Sample within total variation `eps_tv` of `π_β`: start from a uniform draw
/// and run the chain for the coupling bound's number of steps.
pub fn sample_approx<R: Rng + ?Sized>(target: &GibbsTarget, eps_tv: f64, rng: &mut R) -> Result<Structure> {
    Ok(sample_approx_with_report(target, eps_tv, rng)?.0)
}

pub fn sample_approx_with_report<R: Rng + ?Sized>(
    target: &GibbsTarget,
    eps_tv: f64,
    rng: &mut R,
) -> Result<(Structure, SamplerReport)> {
    if !(eps_tv > 0.0 && eps_tv <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps_tv must lie in (0, 1], got {eps_tv}")));
    }
    let start = target.space.sample_uniform(rng);
    let mut chain = MetaChain::new(target, start);
    for _ in 0..approx_steps(target, eps_tv) {
        chain.step(target, rng);
    }
    let report = SamplerReport {
        steps_taken: chain.steps,
        proposals_accepted: chain.accepted,
        coalescence_epoch: None,
        wall_budget_exhausted: false,
    };
    Ok((chain.into_state(), report))
}

/// Exact sample by rejection from the uniform envelope: accept a uniform
/// draw `y` with probability `exp(β s(y) − β B R) ≤ 1`.
pub fn sample_rejection<R: Rng + ?Sized>(target: &GibbsTarget, rng: &mut R) -> (Structure, SamplerReport) {
    let ceiling = target.beta * target.score_bound();
    let mut trials = 0;
    loop {
        let y = target.space.sample_uniform(rng);
        trials += 1;
        let u: f64 = rng.gen();
        if u.ln() <= target.log_weight(&y) - ceiling {
            let report = SamplerReport {
                steps_taken: trials,
                proposals_accepted: 1,
                coalescence_epoch: None,
                wall_budget_exhausted: false,
            };
            return (y, report);
        }
    }
}

/// `⟨φ(x, y), θ⟩` computed through the explicit feature vector.
pub fn explicit_score(target: &GibbsTarget, y: &Structure) -> Result<f64> {
    Ok(dot(&target.params.theta, target.features(y)?.as_slice()))
}
