//! Regularized maximum-likelihood training and MAP prediction.
//!
//! The training objective is
//! `F(θ) = λ‖θ‖² + (1/m) Σᵢ [ln Z(θ|xᵢ) − ⟨φ(xᵢ, yᵢ), θ⟩]`,
//! minimised by projected gradient descent onto the ball
//! `‖θ‖ ≤ √(ln|Y| / λ)`, which contains the minimiser because `F(0) = ln|Y|`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, joint_features, l2_norm, norm_budget_from_space, Dataset, Params, FEATURE_NORM_BOUND};
use crate::oracle;
use crate::output_spaces::{OutputSpace, Structure};
use crate::partition::{estimate_gradient_with_guarantee, estimate_partition, EstimatorMode};
use crate::rng::RngStream;
use crate::samplers::{GibbsTarget, MetaChain, SamplerMode};

/// How `ln Z` is evaluated inside the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "partition", rename_all = "snake_case")]
pub enum PartitionMode {
    Exact,
    Fpras { epsilon: f64, p: u32, mode: EstimatorMode },
}

/// How `E_{p(y|x,θ)}[φ(x, y)]` is evaluated inside the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gradient", rename_all = "snake_case")]
pub enum GradientMode {
    ExactOracle,
    /// Hoeffding-sized sample means: each expectation is within `epsilon`
    /// along any unit direction with probability `1 − delta`.
    Mcmc { epsilon: f64, delta: f64, sampler: SamplerMode },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// `η_t = η₀ / (1 + t)`.
    Decay(f64),
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Fixed(eta) => eta,
            StepSize::Decay(eta0) => eta0 / (1.0 + t as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step_size: StepSize,
    pub gradient_mode: GradientMode,
    /// Defaults to `√(ln|Y| / λ)`.
    pub projection_radius: Option<f64>,
    /// Stop once the projected step, divided by the step size, is shorter than this.
    pub tolerance: f64,
    /// Partition mode used to record the objective in the trace; `None` skips it.
    pub trace_objective: Option<PartitionMode>,
}

impl TrainConfig {
    /// Exact gradients, `η_t = 1/((2λ + R²)(1 + t))` and 200 iterations.
    ///
    /// `2λ + R²` bounds the curvature of the objective, so the initial step
    /// is a descent step.
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iters: 200,
            step_size: StepSize::Decay(1.0 / (2.0 * lambda + FEATURE_NORM_BOUND * FEATURE_NORM_BOUND)),
            gradient_mode: GradientMode::ExactOracle,
            projection_radius: None,
            tolerance: 1e-6,
            trace_objective: Some(PartitionMode::Exact),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(r) = self.projection_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter(format!("projection radius must be positive, got {r}")));
            }
        }
        let eta = self.step_size.at(0);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {eta}")));
        }
        if let GradientMode::Mcmc { epsilon, delta, .. } = self.gradient_mode {
            if !(epsilon > 0.0 && delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidParameter("MCMC gradients need ε > 0 and δ in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn radius_for(&self, space: &OutputSpace) -> f64 {
        self.projection_radius.unwrap_or_else(|| norm_budget_from_space(self.lambda, space))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `None` when the trace objective is disabled.
    pub objective: Option<f64>,
    pub gradient_norm: f64,
    pub theta_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// CSV with one row per iteration. Wall time is optional so that traces
    /// can be compared byte for byte across reruns.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("iteration,objective,gradient_norm,theta_norm");
        if with_timing {
            out.push_str(",wall_time_s");
        }
        out.push('\n');
        for r in &self.records {
            let obj = r.objective.map_or(String::new(), |v| format!("{v:.12}"));
            out.push_str(&format!("{},{},{:.12},{:.12}", r.iteration, obj, r.gradient_norm, r.theta_norm));
            if with_timing {
                out.push_str(&format!(",{:.6}", r.wall_time_s));
            }
            out.push('\n');
        }
        out
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.objective).collect()
    }
}

fn instance_target(data: &Dataset, theta: &Params, i: usize) -> Result<GibbsTarget> {
    GibbsTarget::new(data.space.clone(), theta.clone(), 1.0, data.instances[i].x.clone())
}

fn check_dims(theta: &Params, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("dataset must contain at least one instance".into()));
    }
    if theta.dim() != data.param_dim() {
        return Err(Error::DimensionMismatch { expected: data.param_dim(), got: theta.dim() });
    }
    Ok(())
}

/// `λ‖θ‖² + (1/m) Σᵢ [ln Z(θ|xᵢ) − ⟨φ(xᵢ, yᵢ), θ⟩]`. Instance `i` of an
/// FPRAS evaluation draws from `stream/i`.
pub fn objective(theta: &Params, data: &Dataset, lambda: f64, mode: PartitionMode, stream: &RngStream) -> Result<f64> {
    check_dims(theta, data)?;
    let mut loss = 0.0;
    for (i, inst) in data.instances.iter().enumerate() {
        let target = instance_target(data, theta, i)?;
        let ln_z = match mode {
            PartitionMode::Exact => oracle::exact_partition(&target)?,
            PartitionMode::Fpras { epsilon, p, mode } => {
                estimate_partition(&target, epsilon, p, mode, &stream.child(i as u64))?.log_value
            }
        };
        loss += ln_z - target.score(&inst.y);
    }
    Ok(lambda * theta.norm().powi(2) + loss / data.len() as f64)
}

/// `2λθ + (1/m) Σᵢ (E_{p(y|xᵢ,θ)}[φ(xᵢ, y)] − φ(xᵢ, yᵢ))`.
pub fn gradient(theta: &Params, data: &Dataset, lambda: f64, mode: GradientMode, stream: &RngStream) -> Result<Vec<f64>> {
    check_dims(theta, data)?;
    let m = data.len() as f64;
    let mut grad: Vec<f64> = theta.theta.iter().map(|t| 2.0 * lambda * t).collect();
    for (i, inst) in data.instances.iter().enumerate() {
        let target = instance_target(data, theta, i)?;
        let expected = match mode {
            GradientMode::ExactOracle => oracle::exact_gradient(&target)?,
            GradientMode::Mcmc { epsilon, delta, sampler } => {
                estimate_gradient_with_guarantee(&target, epsilon, delta, 1.0, sampler, &stream.child(i as u64))?.d
            }
        };
        let observed = joint_features(&inst.x, &inst.y, &data.space)?;
        for ((g, e), o) in grad.iter_mut().zip(&expected.0).zip(&observed.0) {
            *g += (e - o) / m;
        }
    }
    Ok(grad)
}

/// Euclidean projection onto `{‖θ‖ ≤ radius}`.
pub fn project(theta: &mut [f64], radius: f64) {
    let n = l2_norm(theta);
    if n > radius {
        theta.iter_mut().for_each(|t| *t *= radius / n);
    }
}

/// Projected gradient descent from `θ = 0`. Iteration `t` draws from
/// `stream/t`; a failed gradient evaluation is retried once on `stream/t/1`.
pub fn train(data: &Dataset, config: &TrainConfig, stream: &RngStream) -> Result<(Params, TrainTrace)> {
    config.validate()?;
    data.validate()?;
    let radius = config.radius_for(&data.space);
    let mut theta = vec![0.0; data.param_dim()];
    let mut trace = TrainTrace::default();
    let started = Instant::now();
    let mut t = 0;
    loop {
        let params = Params::from_theta(theta.clone());
        let iter_stream = stream.child(t as u64);
        let grad = match gradient(&params, data, config.lambda, config.gradient_mode, &iter_stream) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("gradient evaluation failed at iteration {t}: {e}; retrying");
                gradient(&params, data, config.lambda, config.gradient_mode, &iter_stream.child(1))?
            }
        };
        let objective = match config.trace_objective {
            Some(mode) => Some(objective(&params, data, config.lambda, mode, &iter_stream.child(2))?),
            None => None,
        };
        trace.records.push(TraceRecord {
            iteration: t,
            objective,
            gradient_norm: l2_norm(&grad),
            theta_norm: l2_norm(&theta),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if t == config.max_iters {
            break;
        }
        let eta = config.step_size.at(t);
        let mut next: Vec<f64> = theta.iter().zip(&grad).map(|(th, g)| th - eta * g).collect();
        project(&mut next, radius);
        let moved = l2_norm(&next.iter().zip(&theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        if moved / eta <= config.tolerance {
            break;
        }
        theta = next;
        t += 1;
    }
    let params = Params::new(theta, config.lambda, radius)?;
    Ok((params, trace))
}

/// Inverse-temperature ladder and chain length for [`predict_map`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub rungs: usize,
    pub beta_max: f64,
    pub steps_per_rung: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self { rungs: 8, beta_max: 10.0, steps_per_rung: 64 }
    }
}

impl AnnealConfig {
    /// Geometric ladder from 1 to `beta_max`.
    pub fn ladder(&self) -> Vec<f64> {
        if self.rungs <= 1 {
            return vec![self.beta_max.max(1.0)];
        }
        (0..self.rungs)
            .map(|k| self.beta_max.powf(k as f64 / (self.rungs - 1) as f64))
            .collect()
    }
}

/// Approximate `argmax_y ⟨φ(x, y), θ⟩` by running the Metropolis chain along
/// an increasing inverse-temperature ladder and returning the best structure
/// visited.
pub fn predict_map<R: Rng + ?Sized>(
    space: &OutputSpace,
    x: &[f64],
    theta: &Params,
    budget: &AnnealConfig,
    rng: &mut R,
) -> Result<Structure> {
    let base = GibbsTarget::new(space.clone(), theta.clone(), 1.0, x.to_vec())?;
    let mut state = space.sample_uniform(rng);
    let mut best_score = base.score(&state);
    let mut best = state.clone();
    for beta in budget.ladder() {
        let scaled = Params::from_theta(theta.theta.iter().map(|t| t * beta).collect());
        let target = GibbsTarget::new(space.clone(), scaled, 1.0, x.to_vec())?;
        let mut chain = MetaChain::new(&target, state);
        for _ in 0..budget.steps_per_rung {
            if chain.step(&target, rng) {
                let s = base.score(chain.state());
                if s > best_score {
                    best_score = s;
                    best = chain.state().clone();
                }
            }
        }
        state = chain.into_state();
    }
    Ok(best)
}

/// How inputs enter the joint feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Constant input `x = (1)`.
    LabelOnly,
    /// Outer product with an input of the stored dimension.
    Joint,
}

/// Serialized trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub space: OutputSpace,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub radius: f64,
    pub feature_mode: FeatureMode,
    pub input_dim: usize,
    pub seed: u64,
}

impl TrainedModel {
    pub fn new(data: &Dataset, params: &Params, seed: u64) -> Self {
        let label_only = data.instances.iter().all(|i| i.x == [1.0]);
        Self {
            space: data.space.clone(),
            theta: params.theta.clone(),
            lambda: params.lambda,
            radius: params.norm_budget,
            feature_mode: if label_only { FeatureMode::LabelOnly } else { FeatureMode::Joint },
            input_dim: data.input_dim(),
            seed,
        }
    }

    pub fn params(&self) -> Result<Params> {
        Params::new(self.theta.clone(), self.lambda, self.radius)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Synthetic multi-label data on `Hypercube(labels)`: inputs are uniform in
/// `[−1, 1]^{input_dim − 1}` with a constant last coordinate, and labels are
/// drawn exactly from the model at a random `θ*` of norm `theta_norm`.
pub fn toy_multilabel_dataset(m: usize, input_dim: usize, labels: usize, theta_norm: f64, seed: u64) -> Result<Dataset> {
    if input_dim == 0 {
        return Err(Error::InvalidParameter("input dimension must be at least 1".into()));
    }
    let space = OutputSpace::hypercube(labels)?;
    let stream = RngStream::new(seed);
    let mut rng = stream.child(0).rng();
    let dim = input_dim * labels;
    let mut theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = l2_norm(&theta);
    theta.iter_mut().for_each(|t| *t *= theta_norm / n);
    let truth = Params::from_theta(theta);
    let mut instances = Vec::with_capacity(m);
    for i in 0..m {
        let mut x: Vec<f64> = (0..input_dim - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        x.push(1.0);
        let target = GibbsTarget::new(space.clone(), truth.clone(), 1.0, x.clone())?;
        let (y, _) = SamplerMode::default().draw(&target, &mut stream.child(1).child(i as u64).rng())?;
        instances.push(crate::model::Instance { x, y });
    }
    Dataset::new(space, instances)
}

/// Score `⟨φ(x, y), θ⟩` through explicit features.
pub fn model_score(space: &OutputSpace, x: &[f64], theta: &Params, y: &Structure) -> Result<f64> {
    Ok(dot(&theta.theta, &joint_features(x, y, space)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{label_only_input, Instance};
    use crate::samplers::GibbsTarget;
    use approx::assert_relative_eq;

    fn toy() -> Dataset {
        toy_multilabel_dataset(20, 3, 4, 2.0, 42).unwrap()
    }

    fn random_params(dim: usize, seed: u64, scale: f64) -> Params {
        let mut rng = RngStream::new(seed).rng();
        Params::from_theta((0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    #[test]
    fn objective_at_zero_is_log_count() {
        let space = OutputSpace::hypercube(4).unwrap();
        let inst = Instance { x: label_only_input(), y: Structure::Hypercube(vec![true, false, false, true]) };
        let data = Dataset::new(space, vec![inst]).unwrap();
        let f = objective(&Params::zeros(4), &data, 0.3, PartitionMode::Exact, &RngStream::new(0)).unwrap();
        assert_relative_eq!(f, 16f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn per_instance_loss_nonnegative_and_lambda_additive() {
        let data = toy();
        let theta = random_params(data.param_dim(), 1, 1.0);
        let s = RngStream::new(0);
        for i in 0..data.len() {
            let t = instance_target(&data, &theta, i).unwrap();
            assert!(oracle::exact_partition(&t).unwrap() - t.score(&data.instances[i].y) >= 0.0);
        }
        let f1 = objective(&theta, &data, 0.5, PartitionMode::Exact, &s).unwrap();
        let f2 = objective(&theta, &data, 1.0, PartitionMode::Exact, &s).unwrap();
        assert_relative_eq!(f2 - f1, 0.5 * theta.norm().powi(2), epsilon = 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_uniform_mean_label() {
        // Labels 1 and 0 average to the uniform mean ½ of ψ on Hypercube(1).
        let space = OutputSpace::hypercube(1).unwrap();
        let data = Dataset::new(
            space,
            vec![
                Instance { x: label_only_input(), y: Structure::Hypercube(vec![true]) },
                Instance { x: label_only_input(), y: Structure::Hypercube(vec![false]) },
            ],
        )
        .unwrap();
        let g = gradient(&Params::zeros(1), &data, 0.1, GradientMode::ExactOracle, &RngStream::new(0)).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let data = toy();
        let theta = random_params(data.param_dim(), 2, 0.8);
        let lambda = 0.2;
        let s = RngStream::new(0);
        let g = gradient(&theta, &data, lambda, GradientMode::ExactOracle, &s).unwrap();
        let h = 1e-4;
        for k in 0..theta.dim() {
            let at = |delta: f64| {
                let mut t = theta.theta.clone();
                t[k] += delta;
                objective(&Params::from_theta(t), &data, lambda, PartitionMode::Exact, &s).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "coord {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn objective_is_convex_along_segments() {
        let data = toy();
        let s = RngStream::new(0);
        let mut rng = RngStream::new(3).rng();
        for k in 0..10 {
            let a = random_params(data.param_dim(), 10 + k, 2.0);
            let b = random_params(data.param_dim(), 50 + k, 2.0);
            let t: f64 = rng.gen();
            let mid = Params::from_theta(a.theta.iter().zip(&b.theta).map(|(x, y)| t * x + (1.0 - t) * y).collect());
            let f = |p: &Params| objective(p, &data, 0.1, PartitionMode::Exact, &s).unwrap();
            assert!(f(&mid) <= t * f(&a) + (1.0 - t) * f(&b) + 1e-9);
        }
    }

    #[test]
    fn projection_keeps_radius() {
        let mut v = vec![3.0, 4.0];
        project(&mut v, 1.0);
        assert_relative_eq!(l2_norm(&v), 1.0, epsilon = 1e-15);
        let mut w = vec![0.3, 0.4];
        project(&mut w, 1.0);
        assert_eq!(w, vec![0.3, 0.4]);
    }

    #[test]
    fn exact_training_descends_and_respects_radius() {
        let data = toy();
        let config = TrainConfig { max_iters: 60, ..TrainConfig::new(0.05) };
        let (params, trace) = train(&data, &config, &RngStream::new(1)).unwrap();
        let radius = (16f64.ln() / 0.05).sqrt();
        assert!(params.norm() <= radius + 1e-12);
        assert!(trace.records.iter().all(|r| r.theta_norm <= radius + 1e-12));
        let objs = trace.objectives();
        assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{objs:?}");
        assert!(objs.last().unwrap() < &objs[0]);
    }

    #[test]
    fn large_lambda_bounds_norm_by_one() {
        let data = toy();
        let lambda = 16f64.ln();
        let (params, _) = train(&data, &TrainConfig::new(lambda), &RngStream::new(2)).unwrap();
        assert!(params.norm() <= 1.0);
    }

    #[test]
    fn trace_csv_is_deterministic_without_timing() {
        let data = toy();
        let config = TrainConfig { max_iters: 5, ..TrainConfig::new(0.1) };
        let (_, a) = train(&data, &config, &RngStream::new(3)).unwrap();
        let (_, b) = train(&data, &config, &RngStream::new(3)).unwrap();
        assert_eq!(a.to_csv(false), b.to_csv(false));
        assert!(a.to_csv(true).lines().next().unwrap().ends_with("wall_time_s"));
    }

    #[test]
    fn invalid_config_rejected() {
        let data = toy();
        let mut config = TrainConfig::new(0.0);
        assert!(train(&data, &config, &RngStream::new(0)).is_err());
        config = TrainConfig { projection_radius: Some(-1.0), ..TrainConfig::new(1.0) };
        assert!(train(&data, &config, &RngStream::new(0)).is_err());
    }

    #[test]
    fn map_prediction_finds_aligned_structure() {
        let space = OutputSpace::hypercube(4).unwrap();
        let y_star = Structure::Hypercube(vec![true, false, true, false]);
        // θ = 4·ψ(y*) − 2·ψ(complement): y* scores 4, every other vertex ≤ 2.
        let theta: Vec<f64> = [true, false, true, false].iter().map(|&b| if b { 4.0 } else { -2.0 }).collect();
        let params = Params::from_theta(theta.iter().map(|t| t * space.max_feature_norm()).collect());
        let target = GibbsTarget::label_only(space.clone(), params.clone(), 1.0).unwrap();
        assert_eq!(oracle::exact_argmax(&target).unwrap(), y_star);
        let hits = (0..100)
            .filter(|&k| {
                let mut rng = RngStream::new(4).child(k).rng();
                predict_map(&space, &label_only_input(), &params, &AnnealConfig::default(), &mut rng).unwrap() == y_star
            })
            .count();
        assert!(hits >= 99);
    }

    #[test]
    fn map_prediction_with_zero_theta_is_member() {
        let space = OutputSpace::cyclic_permutations(5).unwrap();
        let mut rng = RngStream::new(5).rng();
        let y = predict_map(&space, &label_only_input(), &Params::zeros(10), &AnnealConfig::default(), &mut rng).unwrap();
        assert!(space.contains(&y));
    }

    #[test]
    fn map_prediction_beats_uniform_draw_on_average() {
        let space = OutputSpace::permutations(4).unwrap();
        let params = random_params(16, 6, 1.0);
        let x = label_only_input();
        let (mut map_total, mut uniform_total) = (0.0, 0.0);
        for k in 0..100 {
            let mut rng = RngStream::new(7).child(k).rng();
            let y = predict_map(&space, &x, &params, &AnnealConfig::default(), &mut rng).unwrap();
            map_total += model_score(&space, &x, &params, &y).unwrap();
            let u = space.sample_uniform(&mut rng);
            uniform_total += model_score(&space, &x, &params, &u).unwrap();
        }
        assert!(map_total >= uniform_total);
    }

    #[test]
    fn model_json_round_trip() {
        let data = toy();
        let config = TrainConfig { max_iters: 3, ..TrainConfig::new(0.1) };
        let (params, _) = train(&data, &config, &RngStream::new(8)).unwrap();
        let model = TrainedModel::new(&data, &params, 8);
        let back: TrainedModel = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.feature_mode, FeatureMode::Joint);
        assert!(back.params().is_ok());
    }
}
