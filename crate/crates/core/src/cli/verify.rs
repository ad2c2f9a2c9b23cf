//! Oracle invariant suite behind `structpred verify`.

use rand::Rng;
use serde::Serialize;

use crate::model::Params;
use crate::oracle::{self, ExactDistribution, Graph};
use crate::output_spaces::{OutputSpace, RootedTree, Structure};
use crate::partition::{build_schedule, DEFAULT_P};
use crate::rng::RngStream;
use crate::samplers::{mixing_time_bound, GibbsTarget, SamplerMode};
use crate::Result;

pub const DEFAULT_VERIFY_SEED: u64 = 20240611;

const SIGNIFICANCE: f64 = 0.01;
const GOF_SAMPLES: usize = 20_000;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, outcome: Result<(bool, String)>) -> CheckResult {
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult { name: name.into(), status: if ok { "pass" } else { "fail" }.into(), detail }
}

fn random_params(dim: usize, norm: f64, rng: &mut impl Rng) -> Params {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = crate::model::l2_norm(&v);
    v.iter_mut().for_each(|t| *t *= norm / n);
    Params::from_theta(v)
}

fn small_spaces() -> Result<Vec<OutputSpace>> {
    Ok(vec![
        OutputSpace::hypercube(3)?,
        OutputSpace::permutations(3)?,
        OutputSpace::subtrees(RootedTree::star(3)?),
        OutputSpace::subtrees(RootedTree::path(4)?),
        OutputSpace::cyclic_permutations(5)?,
    ])
}

fn draws(target: &GibbsTarget, n: usize, stream: &RngStream) -> Result<Vec<Structure>> {
    let mode = SamplerMode::default();
    (0..n).map(|j| mode.draw(target, &mut stream.child(j as u64).rng()).map(|(y, _)| y)).collect()
}

fn uniformity(stream: &RngStream) -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, space) in small_spaces()?.into_iter().enumerate() {
        let dim = space.feature_dim();
        let target = GibbsTarget::label_only(space.clone(), Params::zeros(dim), 0.0)?;
        let samples = draws(&target, GOF_SAMPLES, &stream.child(k as u64))?;
        let outcome = oracle::chi_square_gof(&samples, &ExactDistribution::uniform(space.enumerate()?), SIGNIFICANCE)?;
        ok &= outcome.passed;
        detail.push(format!("{}: chi2 {:.2} < {:.2}", space.descriptor(), outcome.statistic, outcome.critical));
    }
    Ok((ok, detail.join("; ")))
}

fn exact_sampling(stream: &RngStream) -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut rng = stream.child(u64::MAX).rng();
    for (k, space) in small_spaces()?.into_iter().enumerate() {
        let params = random_params(space.feature_dim(), 1.0, &mut rng);
        let target = GibbsTarget::label_only(space.clone(), params, 1.0)?;
        let samples = draws(&target, GOF_SAMPLES, &stream.child(k as u64))?;
        let outcome = oracle::chi_square_gof(&samples, &oracle::exact_distribution(&target)?, SIGNIFICANCE)?;
        ok &= outcome.passed;
        detail.push(format!("{}: chi2 {:.2} < {:.2}", space.descriptor(), outcome.statistic, outcome.critical));
    }
    Ok((ok, detail.join("; ")))
}

/// Targets at `‖θ‖ ∈ {0.5, 1, 2}` on every small space, with their schedules.
fn ratio_targets(rng: &mut impl Rng) -> Result<Vec<(GibbsTarget, Vec<f64>)>> {
    let mut out = Vec::new();
    for space in small_spaces()?.into_iter().chain([OutputSpace::hypercube(6)?]) {
        for norm in [0.5, 1.0, 2.0] {
            let params = random_params(space.feature_dim(), norm, rng);
            let schedule = build_schedule(crate::model::FEATURE_NORM_BOUND, params.norm(), DEFAULT_P)?;
            out.push((GibbsTarget::label_only(space.clone(), params, 1.0)?, schedule.betas));
        }
    }
    Ok(out)
}

fn ratio_moments(targets: &[(GibbsTarget, Vec<f64>)]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (target, betas) in targets {
        for i in 1..betas.len() {
            out.push(oracle::exact_ratio_moments(&target.with_beta(betas[i])?, betas[i - 1])?);
        }
    }
    Ok(out)
}

fn telescoping(targets: &[(GibbsTarget, Vec<f64>)]) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (target, betas) in targets {
        let mut ln_prod = 0.0;
        for i in 1..betas.len() {
            ln_prod += oracle::exact_ratio_moments(&target.with_beta(betas[i])?, betas[i - 1])?.0.ln();
        }
        let ln_z = oracle::exact_partition(target)?;
        worst = worst.max((target.space().ln_count() - ln_prod - ln_z).abs());
    }
    Ok((worst <= 1e-9, format!("max |ln|Y| - sum ln rho - ln Z| = {worst:.3e}")))
}

fn variance_bound(targets: &[(GibbsTarget, Vec<f64>)]) -> Result<(bool, String)> {
    let bound = (2.0 / DEFAULT_P as f64).exp();
    let worst = ratio_moments(targets)?.iter().map(|(m, v)| v / (m * m)).fold(0.0, f64::max);
    Ok((worst <= bound, format!("max Var f / (E f)^2 = {worst:.4} <= {bound:.4}")))
}

fn ratio_band(targets: &[(GibbsTarget, Vec<f64>)]) -> Result<(bool, String)> {
    let (lo, hi) = ((1.0 / DEFAULT_P as f64).exp() - 1.0, (-1.0 / DEFAULT_P as f64).exp() + 1.0);
    let moments = ratio_moments(targets)?;
    let min = moments.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let max = moments.iter().map(|m| m.0).fold(0.0, f64::max);
    Ok((min >= lo && max <= hi, format!("ratios in [{min:.4}, {max:.4}] within [{lo:.4}, {hi:.4}]")))
}

fn gradient_fd(rng: &mut impl Rng) -> Result<(bool, String)> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for space in small_spaces()? {
        let x = vec![0.5, -1.0];
        let dim = crate::model::joint_dim(x.len(), &space);
        let params = random_params(dim, 1.5, rng);
        let target = GibbsTarget::new(space.clone(), params.clone(), 1.0, x.clone())?;
        let grad = oracle::exact_gradient(&target)?;
        for k in 0..dim {
            let shifted = |delta: f64| -> Result<f64> {
                let mut theta = params.theta.clone();
                theta[k] += delta;
                oracle::exact_log_partition_at(&space, &Params::from_theta(theta), &x)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            worst = worst.max((fd - grad.0[k]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |finite difference - gradient| = {worst:.3e}")))
}

fn hamiltonicity(rng: &mut impl Rng) -> Result<(bool, String)> {
    let mut graphs = Vec::new();
    for n in 3..=6 {
        graphs.extend([Graph::complete(n), Graph::path(n), Graph::cycle(n), Graph::star(n)]);
    }
    for _ in 0..20 {
        let n = rng.gen_range(3..=6);
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.gen_bool(0.5)).collect();
        graphs.push(Graph::new(n, &edges)?);
    }
    let mut agree = 0;
    for g in &graphs {
        if oracle::hamiltonicity_via_partition(g)? == oracle::brute_force_hamiltonian(g) {
            agree += 1;
        }
    }
    Ok((agree == graphs.len(), format!("{agree}/{} graphs agree with exhaustive search", graphs.len())))
}

fn mixing_bound() -> Result<(bool, String)> {
    let t = mixing_time_bound(1.0, 1.0, 0.01);
    Ok((t == 32, format!("mixing_time_bound(1, 1, 0.01) = {t}")))
}

fn counting() -> Result<(bool, String)> {
    let mut spaces = small_spaces()?;
    spaces.push(OutputSpace::subtrees(RootedTree::from_parents(vec![0, 0, 0, 1, 1, 2])?));
    spaces.push(OutputSpace::cyclic_permutations(6)?);
    let mut ok = true;
    let mut detail = Vec::new();
    for space in spaces {
        let counted = space.count();
        let listed = space.enumerate()?.len();
        ok &= counted == num_bigint::BigUint::from(listed);
        detail.push(format!("{}: {counted}", space.descriptor()));
    }
    Ok((ok, detail.join("; ")))
}

/// Run every check with randomness derived from `seed`.
pub fn run_suite(seed: u64) -> VerifySummary {
    let stream = RngStream::new(seed);
    let mut rng = stream.child(100).rng();
    let targets = ratio_targets(&mut rng).map_err(|e| e.to_string());
    let with_targets = |f: fn(&[(GibbsTarget, Vec<f64>)]) -> Result<(bool, String)>| match &targets {
        Ok(t) => f(t),
        Err(e) => Ok((false, format!("error: {e}"))),
    };
    let checks = vec![
        check("uniformity", uniformity(&stream.child(0))),
        check("exact_sampling", exact_sampling(&stream.child(1))),
        check("telescoping", with_targets(telescoping)),
        check("ratio_variance_bound", with_targets(variance_bound)),
        check("ratio_band", with_targets(ratio_band)),
        check("gradient_finite_difference", gradient_fd(&mut stream.child(2).rng())),
        check("hamiltonicity", hamiltonicity(&mut stream.child(3).rng())),
        check("mixing_bound", mixing_bound()),
        check("counting", counting()),
    ];
    VerifySummary { seed, passed: checks.iter().all(|c| c.status == "pass"), checks }
}
