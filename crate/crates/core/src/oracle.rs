//! Brute-force ground truth on enumerable spaces, plus the statistical
//! harness used to validate samplers against it.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, Params};
use crate::output_spaces::{factorial, pair_index, OutputSpace, Structure};
use crate::samplers::GibbsTarget;

/// The exact distribution `π_β` over an enumerated support.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub support: Vec<Structure>,
    pub probs: Vec<f64>,
    pub log_partition: f64,
}

impl ExactDistribution {
    pub fn uniform(support: Vec<Structure>) -> Self {
        let n = support.len();
        Self { support, probs: vec![1.0 / n as f64; n], log_partition: (n as f64).ln() }
    }

    pub fn index_of(&self) -> HashMap<&Structure, usize> {
        self.support.iter().enumerate().map(|(i, y)| (y, i)).collect()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_weights(target: &GibbsTarget) -> Result<(Vec<Structure>, Vec<f64>)> {
    let support = target.space().enumerate()?;
    let lw = support.iter().map(|y| target.log_weight(y)).collect();
    Ok((support, lw))
}

/// `ln Z_β = ln Σ_y exp(β ⟨φ(x, y), θ⟩)`.
pub fn exact_partition(target: &GibbsTarget) -> Result<f64> {
    let (_, lw) = log_weights(target)?;
    Ok(log_sum_exp(&lw))
}

pub fn exact_distribution(target: &GibbsTarget) -> Result<ExactDistribution> {
    let (support, lw) = log_weights(target)?;
    let log_partition = log_sum_exp(&lw);
    let probs = lw.iter().map(|w| (w - log_partition).exp()).collect();
    Ok(ExactDistribution { support, probs, log_partition })
}

/// `E_{π_β}[φ(x, y)]`; at `β = 1` this is `∇_θ ln Z(θ|x)`.
pub fn exact_gradient(target: &GibbsTarget) -> Result<FeatureVector> {
    let dist = exact_distribution(target)?;
    let mut psi_mean = vec![0.0; target.space().feature_dim()];
    for (y, p) in dist.support.iter().zip(&dist.probs) {
        target.space().for_each_active(y, |i| psi_mean[i] += p);
    }
    Ok(target.lift_output_features(&psi_mean))
}

/// Highest-scoring structure; ties go to the first in canonical order.
pub fn exact_argmax(target: &GibbsTarget) -> Result<Structure> {
    let support = target.space().enumerate()?;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, y) in support.iter().enumerate() {
        let s = target.score(y);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(support.into_iter().nth(best).expect("spaces are non-empty"))
}

/// Mean and variance of `f(y) = exp((β_prev − β) s(y))` under `y ~ π_β`,
/// where `β` is the target's inverse temperature.
pub fn exact_ratio_moments(target: &GibbsTarget, beta_prev: f64) -> Result<(f64, f64)> {
    let dist = exact_distribution(target)?;
    let delta = beta_prev - target.beta();
    let values: Vec<f64> = dist.support.iter().map(|y| (delta * target.score(y)).exp()).collect();
    let mean: f64 = values.iter().zip(&dist.probs).map(|(v, p)| v * p).sum();
    let var: f64 = values.iter().zip(&dist.probs).map(|(v, p)| p * (v - mean).powi(2)).sum();
    Ok((mean, var))
}

/// Undirected simple graph on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adjacency: Vec<Vec<bool>>,
}

impl Graph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![vec![false; n]; n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidParameter(format!("bad edge ({u}, {v}) for {n} vertices")));
            }
            adjacency[u][v] = true;
            adjacency[v][u] = true;
        }
        Ok(Self { n, adjacency })
    }

    /// Parse an edge list with one `u v` pair per line. The vertex count is
    /// `vertices` if given, otherwise one more than the largest index.
    pub fn parse_edge_list(text: &str, vertices: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| Error::Parse(format!("edge {line:?}: {e}"))))
                .collect::<Result<_>>()?;
            match nums.as_slice() {
                [u, v] => edges.push((*u, *v)),
                _ => return Err(Error::Parse(format!("expected two vertices per line, got {line:?}"))),
            }
        }
        let n = vertices.unwrap_or_else(|| edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0));
        Self::new(n, &edges)
    }

    pub fn read(path: impl AsRef<Path>, vertices: Option<usize>) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?, vertices)
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Self::new(n, &edges).expect("valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        Self::new(n, &edges).expect("valid")
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|v| (v, (v + 1) % n)).filter(|(u, v)| u != v).collect();
        Self::new(n, &edges).expect("valid")
    }

    pub fn star(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|v| (0, v)).collect();
        Self::new(n, &edges).expect("valid")
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u][v]
    }
}

/// Cap on the vertex count of the Hamiltonicity demonstration.
pub const HAMILTONICITY_MAX_VERTICES: usize = 8;

/// Decide Hamiltonicity from the exact log partition function of the cycle
/// space.
///
/// Each graph edge gets weight `c = ln(n!·n)` on its pair coordinate. A
/// Hamiltonian cycle alone contributes `exp(n c)` to `Z`, while without one
/// every cycle scores at most `(n − 1) c` and `|Y| < n!·n` keeps
/// `ln Z < n c`. Hence the graph is Hamiltonian iff `ln Z ≥ n c`.
pub fn hamiltonicity_via_partition(graph: &Graph) -> Result<bool> {
    let n = graph.vertex_count();
    if n < 3 {
        return Ok(false);
    }
    if n > HAMILTONICITY_MAX_VERTICES {
        return Err(Error::CapExceeded { count: format!("cycles on {n} vertices"), cap: HAMILTONICITY_MAX_VERTICES as u64 });
    }
    let (ln_z, threshold) = hamiltonicity_log_partition(graph)?;
    // Non-Hamiltonian graphs fall short by ln(n!·n / |Y|) > 0.3; the slack
    // only absorbs rounding when a Hamiltonian cycle sits exactly on the threshold.
    Ok(ln_z >= threshold - 1e-9 * threshold.max(1.0))
}

/// `(ln Z, n · ln(n!·n))` for the Hamiltonicity construction.
pub fn hamiltonicity_log_partition(graph: &Graph) -> Result<(f64, f64)> {
    let n = graph.vertex_count();
    let space = OutputSpace::cyclic_permutations(n)?;
    let weight = crate::output_spaces::ln_biguint(&(factorial(n) * n));
    let mut theta = vec![0.0; space.feature_dim()];
    for u in 0..n {
        for v in u + 1..n {
            if graph.has_edge(u, v) {
                theta[pair_index(n, u, v)] = weight;
            }
        }
    }
    let scores: Vec<f64> = space.enumerate()?.iter().map(|y| space.dot_features(y, &theta)).collect();
    Ok((log_sum_exp(&scores), n as f64 * weight))
}

/// Exhaustive Hamiltonian-cycle search.
pub fn brute_force_hamiltonian(graph: &Graph) -> bool {
    let n = graph.vertex_count();
    if n < 3 {
        return false;
    }
    fn extend(g: &Graph, path: &mut Vec<usize>, used: &mut [bool]) -> bool {
        let n = g.vertex_count();
        let last = *path.last().expect("non-empty");
        if path.len() == n {
            return g.has_edge(last, path[0]);
        }
        for v in 1..n {
            if !used[v] && g.has_edge(last, v) {
                used[v] = true;
                path.push(v);
                if extend(g, path, used) {
                    return true;
                }
                path.pop();
                used[v] = false;
            }
        }
        false
    }
    let mut used = vec![false; n];
    used[0] = true;
    extend(graph, &mut vec![0], &mut used)
}

/// Result of a chi-square test.
#[derive(Clone, Debug, Serialize)]
pub struct GofOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub p_value: f64,
    pub passed: bool,
}

fn chi_square_decision(statistic: f64, dof: usize, significance: f64) -> Result<GofOutcome> {
    if dof == 0 {
        return Err(Error::InsufficientSamples("need at least two cells after pooling".into()));
    }
    let law = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let critical = law.inverse_cdf(1.0 - significance);
    Ok(GofOutcome { statistic, dof, critical, p_value: law.sf(statistic), passed: statistic < critical })
}

/// Merge cells (in order of increasing expectation) until every cell
/// expects at least `min_expected` observations. Returns cell labels.
fn pool_cells(expected: &[f64], min_expected: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..expected.len()).collect();
    order.sort_by(|&a, &b| expected[a].total_cmp(&expected[b]));
    let mut label = vec![0; expected.len()];
    let mut next = 0;
    let mut acc = 0.0;
    let mut open = false;
    for &i in &order {
        label[i] = next;
        acc += expected[i];
        open = true;
        if acc >= min_expected {
            next += 1;
            acc = 0.0;
            open = false;
        }
    }
    if open && next > 0 {
        // Fold an underfull tail group into the previous one.
        for l in label.iter_mut() {
            if *l == next {
                *l = next - 1;
            }
        }
    }
    label
}

/// Pearson goodness-of-fit test of `samples` against `dist`.
///
/// Cells expecting fewer than 5 observations are pooled. Passes iff the
/// statistic is below the `1 − significance` quantile of the chi-square law.
pub fn chi_square_gof(samples: &[Structure], dist: &ExactDistribution, significance: f64) -> Result<GofOutcome> {
    if samples.is_empty() || dist.support.is_empty() {
        return Err(Error::InsufficientSamples("no samples or empty support".into()));
    }
    let index = dist.index_of();
    let mut observed = vec![0.0; dist.support.len()];
    for y in samples {
        let &i = index
            .get(y)
            .ok_or_else(|| Error::InvalidParameter(format!("sample {y} is outside the support")))?;
        observed[i] += 1.0;
    }
    let n = samples.len() as f64;
    let expected: Vec<f64> = dist.probs.iter().map(|p| p * n).collect();
    let labels = pool_cells(&expected, 5.0);
    let cells = labels.iter().max().map_or(0, |m| m + 1);
    let mut obs = vec![0.0; cells];
    let mut exp = vec![0.0; cells];
    for (i, &l) in labels.iter().enumerate() {
        obs[l] += observed[i];
        exp[l] += expected[i];
    }
    let statistic = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    chi_square_decision(statistic, cells.saturating_sub(1), significance)
}

/// Two-sample chi-square homogeneity test over a shared support.
pub fn chi_square_two_sample(
    a: &[Structure],
    b: &[Structure],
    support: &[Structure],
    significance: f64,
) -> Result<GofOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples("both samples must be non-empty".into()));
    }
    let index: HashMap<&Structure, usize> = support.iter().enumerate().map(|(i, y)| (y, i)).collect();
    let tally = |xs: &[Structure]| -> Result<Vec<f64>> {
        let mut c = vec![0.0; support.len()];
        for y in xs {
            let &i = index
                .get(y)
                .ok_or_else(|| Error::InvalidParameter(format!("sample {y} is outside the support")))?;
            c[i] += 1.0;
        }
        Ok(c)
    };
    let (ca, cb) = (tally(a)?, tally(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    // Pool on the smaller of the two expected counts under homogeneity.
    let pooled: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| (x + y) * na.min(nb) / (na + nb)).collect();
    let labels = pool_cells(&pooled, 5.0);
    let cells = labels.iter().max().map_or(0, |m| m + 1);
    let mut ga = vec![0.0; cells];
    let mut gb = vec![0.0; cells];
    for (i, &l) in labels.iter().enumerate() {
        ga[l] += ca[i];
        gb[l] += cb[i];
    }
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let statistic = ga
        .iter()
        .zip(&gb)
        .filter(|(x, y)| **x + **y > 0.0)
        .map(|(x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    chi_square_decision(statistic, cells.saturating_sub(1), significance)
}

/// Total-variation distance between the empirical law of `samples` and `dist`.
pub fn empirical_tv(samples: &[Structure], dist: &ExactDistribution) -> Result<f64> {
    let index = dist.index_of();
    let mut counts = vec![0.0; dist.support.len()];
    for y in samples {
        let &i = index
            .get(y)
            .ok_or_else(|| Error::InvalidParameter(format!("sample {y} is outside the support")))?;
        counts[i] += 1.0;
    }
    let n = samples.len() as f64;
    Ok(0.5 * counts.iter().zip(&dist.probs).map(|(c, p)| (c / n - p).abs()).sum::<f64>())
}

/// Three-sigma multinomial band on the empirical TV distance from `n` exact
/// draws: `½ Σ 3 √(p(1 − p) / n)`.
pub fn tv_noise_band(dist: &ExactDistribution, n: usize) -> f64 {
    0.5 * dist.probs.iter().map(|p| 3.0 * (p * (1.0 - p) / n as f64).sqrt()).sum::<f64>()
}

/// Exact `ln Z(θ|x)` for each instance input, used by training.
pub fn exact_log_partition_at(space: &OutputSpace, params: &Params, x: &[f64]) -> Result<f64> {
    exact_partition(&GibbsTarget::new(space.clone(), params.clone(), 1.0, x.to_vec())?)
}
