//! Combinatorial output spaces.
//!
//! Four families are supported:
//!
//! | variant | structures | `|Y|` | features `ψ(y)` |
//! |---|---|---|---|
//! | `Hypercube(d)` | bit strings of length `d` | `2^d` | label indicators, `d` |
//! | `Permutations(d)` | orderings of `0..d` | `d!` | item/position indicators, `d²` |
//! | `Subtrees(T)` | connected vertex sets containing the root | `g(root)` | vertex indicators, `d` |
//! | `CyclicPermutations(n)` | simple undirected cycles of length ≥ 3 in `K_n` | `Σ_k C(n,k)(k−1)!/2` | pair indicators, `C(n,2)` |
//!
//! Counts are exact big integers and uniform samplers are exact.

use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of structures [`OutputSpace::enumerate`]
/// will materialise.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// A point of an output space in canonical form.
///
/// Permutations are stored position-major: `payload[pos]` is the item ranked
/// at `pos`, items are `0..d`. Cycles are stored as their edge list with each
/// edge `(u, v)` normalised to `u < v` and the list sorted, so equal cycles
/// have identical encodings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Structure {
    Hypercube(Vec<bool>),
    Permutation(Vec<usize>),
    Subtree(Vec<bool>),
    Cycle(Vec<(usize, usize)>),
}

impl Structure {
    pub fn kind(&self) -> &'static str {
        match self {
            Structure::Hypercube(_) => "hypercube",
            Structure::Permutation(_) => "permutations",
            Structure::Subtree(_) => "subtrees",
            Structure::Cycle(_) => "cycles",
        }
    }

    /// Build a cycle from a vertex ordering, normalising the edge list.
    pub fn cycle_from_order(order: &[usize]) -> Structure {
        let k = order.len();
        let mut edges: Vec<(usize, usize)> = (0..k)
            .map(|i| {
                let (a, b) = (order[i], order[(i + 1) % k]);
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        Structure::Cycle(edges)
    }
}

fn write_bits(f: &mut fmt::Formatter<'_>, bits: &[bool]) -> fmt::Result {
    for &b in bits {
        f.write_str(if b { "1" } else { "0" })?;
    }
    Ok(())
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Structure::Hypercube(bits) | Structure::Subtree(bits) => write_bits(f, bits),
            Structure::Permutation(items) => {
                let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
                write!(f, "({})", parts.join(","))
            }
            Structure::Cycle(edges) => {
                let parts: Vec<String> = edges.iter().map(|(u, v)| format!("{u}-{v}")).collect();
                write!(f, "{{{}}}", parts.join(","))
            }
        }
    }
}

/// A rooted tree on vertices `0..d`, rooted at 0, given by its parent array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootedTree {
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Vertices in breadth-first order from the root.
    order: Vec<usize>,
}

impl RootedTree {
    pub fn from_parents(parent: Vec<usize>) -> Result<Self> {
        let d = parent.len();
        if d == 0 {
            return Err(Error::InvalidTree("tree must have at least one vertex".into()));
        }
        if parent[0] != 0 {
            return Err(Error::InvalidTree("vertex 0 must be the self-parented root".into()));
        }
        let mut children = vec![Vec::new(); d];
        for (v, &p) in parent.iter().enumerate().skip(1) {
            if p >= d {
                return Err(Error::InvalidTree(format!("parent {p} of vertex {v} out of range")));
            }
            if p == v {
                return Err(Error::InvalidTree(format!("vertex {v} is self-parented but not the root")));
            }
            children[p].push(v);
        }
        let mut order = Vec::with_capacity(d);
        order.push(0);
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            order.extend(children[v].iter().copied());
        }
        if order.len() != d {
            return Err(Error::InvalidTree("some vertices do not reach the root".into()));
        }
        Ok(Self { parent, children, order })
    }

    /// Parse the text format: a line with `d`, then `d` parent indices.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let d: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty tree file".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("vertex count: {e}")))?;
        let parent = tokens
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("parent entry {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if parent.len() != d {
            return Err(Error::Parse(format!("expected {d} parent entries, found {}", parent.len())));
        }
        Self::from_parents(parent)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let parents: Vec<String> = self.parent.iter().map(|p| p.to_string()).collect();
        format!("{}\n{}\n", self.parent.len(), parents.join(" "))
    }

    /// Path `0 → 1 → … → d−1`.
    pub fn path(d: usize) -> Result<Self> {
        Self::from_parents((0..d).map(|v| v.saturating_sub(1)).collect())
    }

    /// Root with `leaves` children.
    pub fn star(leaves: usize) -> Result<Self> {
        Self::from_parents(vec![0; leaves + 1])
    }

    /// Random recursive tree: each vertex `v > 0` picks a parent uniformly in `0..v`.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        let parent = (0..d).map(|v| if v == 0 { 0 } else { rng.gen_range(0..v) }).collect();
        Self::from_parents(parent)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: usize) -> usize {
        self.parent[v]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }
}

/// Per-vertex counts `g(v)` of subtrees rooted at `v` that contain `v`.
///
/// `g(leaf) = 1` and `g(v) = ∏_{c child of v} (1 + g(c))`; each child branch is
/// either absent or one of its own `g(c)` subtrees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubtreeCounts {
    g: Vec<BigUint>,
}

impl SubtreeCounts {
    pub fn new(tree: &RootedTree) -> Self {
        let mut g = vec![BigUint::one(); tree.len()];
        for &v in tree.order.iter().rev() {
            let mut prod = BigUint::one();
            for &c in tree.children(v) {
                prod *= &g[c] + 1u32;
            }
            g[v] = prod;
        }
        Self { g }
    }

    pub fn get(&self, v: usize) -> &BigUint {
        &self.g[v]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputSpace {
    Hypercube { d: usize },
    Permutations { d: usize },
    Subtrees { tree: RootedTree, counts: SubtreeCounts },
    /// `by_length[k]` holds the number of `k`-cycles (zero below 3).
    CyclicPermutations { n: usize, by_length: Vec<BigUint> },
}

impl OutputSpace {
    pub fn hypercube(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSpace("hypercube dimension must be at least 1".into()));
        }
        Ok(OutputSpace::Hypercube { d })
    }

    pub fn permutations(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSpace("permutation length must be at least 1".into()));
        }
        Ok(OutputSpace::Permutations { d })
    }

    pub fn subtrees(tree: RootedTree) -> Self {
        let counts = SubtreeCounts::new(&tree);
        OutputSpace::Subtrees { tree, counts }
    }

    pub fn cyclic_permutations(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSpace("cyclic permutations need at least 3 vertices".into()));
        }
        let mut by_length = vec![BigUint::zero(); n + 1];
        for (k, slot) in by_length.iter_mut().enumerate().skip(3) {
            // C(n, k) · (k − 1)! / 2
            *slot = binomial(n, k) * factorial(k - 1) / 2u32;
        }
        Ok(OutputSpace::CyclicPermutations { n, by_length })
    }

    /// Parse a descriptor such as `hypercube:4`, `permutations:3`, `cycles:5`,
    /// `subtrees:0,0,1` (inline parent array) or `subtrees:path/to/tree.txt`.
    pub fn parse_descriptor(desc: &str) -> Result<Self> {
        let (kind, arg) = desc
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("space descriptor {desc:?} lacks ':'")))?;
        let size = || {
            arg.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("space size {arg:?}: {e}")))
        };
        match kind.trim() {
            "hypercube" => Self::hypercube(size()?),
            "permutations" => Self::permutations(size()?),
            "cycles" | "cyclic_permutations" => Self::cyclic_permutations(size()?),
            "subtrees" => {
                let inline: std::result::Result<Vec<usize>, _> =
                    arg.split(',').map(|t| t.trim().parse::<usize>()).collect();
                let tree = match inline {
                    Ok(parent) => RootedTree::from_parents(parent)?,
                    Err(_) => RootedTree::read(arg.trim())?,
                };
                Ok(Self::subtrees(tree))
            }
            other => Err(Error::Parse(format!("unknown space kind {other:?}"))),
        }
    }

    /// Descriptor string that [`OutputSpace::parse_descriptor`] maps back to
    /// this space. Trees are written inline.
    pub fn descriptor(&self) -> String {
        match self {
            OutputSpace::Hypercube { d } => format!("hypercube:{d}"),
            OutputSpace::Permutations { d } => format!("permutations:{d}"),
            OutputSpace::CyclicPermutations { n, .. } => format!("cycles:{n}"),
            OutputSpace::Subtrees { tree, .. } => {
                let parents: Vec<String> = tree.parents().iter().map(|p| p.to_string()).collect();
                format!("subtrees:{}", parents.join(","))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OutputSpace::Hypercube { .. } => "hypercube",
            OutputSpace::Permutations { .. } => "permutations",
            OutputSpace::Subtrees { .. } => "subtrees",
            OutputSpace::CyclicPermutations { .. } => "cycles",
        }
    }

    /// `|Y|`.
    pub fn count(&self) -> BigUint {
        match self {
            OutputSpace::Hypercube { d } => BigUint::one() << *d,
            OutputSpace::Permutations { d } => factorial(*d),
            OutputSpace::Subtrees { counts, .. } => counts.get(0).clone(),
            OutputSpace::CyclicPermutations { by_length, .. } => by_length.iter().sum(),
        }
    }

    /// `ln |Y|`, accurate for counts far beyond `f64` range.
    pub fn ln_count(&self) -> f64 {
        ln_biguint(&self.count())
    }

    /// Draw a structure uniformly at random from the space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Structure {
        match self {
            OutputSpace::Hypercube { d } => Structure::Hypercube((0..*d).map(|_| rng.gen::<bool>()).collect()),
            OutputSpace::Permutations { d } => {
                let mut items: Vec<usize> = (0..*d).collect();
                items.shuffle(rng);
                Structure::Permutation(items)
            }
            OutputSpace::Subtrees { tree, counts } => {
                let mut bits = vec![false; tree.len()];
                bits[0] = true;
                // Parents precede children in BFS order, so inclusion of the
                // parent is already decided when a child is visited.
                for &v in tree.order.iter().skip(1) {
                    if bits[tree.parent(v)] {
                        // Include branch v with probability g(v) / (1 + g(v)).
                        let g = counts.get(v);
                        bits[v] = uniform_below(&(g + 1u32), rng) < *g;
                    }
                }
                Structure::Subtree(bits)
            }
            OutputSpace::CyclicPermutations { n, by_length } => {
                let total: BigUint = by_length.iter().sum();
                let mut r = uniform_below(&total, rng);
                let mut k = 3;
                for (len, c) in by_length.iter().enumerate().skip(3) {
                    if r < *c {
                        k = len;
                        break;
                    }
                    r -= c;
                }
                let mut order = rand::seq::index::sample(rng, *n, k).into_vec();
                order.shuffle(rng);
                Structure::cycle_from_order(&order)
            }
        }
    }

    /// All structures in ascending canonical order, up to the default cap.
    pub fn enumerate(&self) -> Result<Vec<Structure>> {
        self.enumerate_capped(DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_capped(&self, cap: u64) -> Result<Vec<Structure>> {
        let count = self.count();
        if count > BigUint::from(cap) {
            return Err(Error::CapExceeded { count: count.to_string(), cap });
        }
        let mut out = match self {
            OutputSpace::Hypercube { d } => {
                let d = *d;
                (0..1u64 << d)
                    .map(|m| Structure::Hypercube((0..d).map(|i| m >> (d - 1 - i) & 1 == 1).collect()))
                    .collect()
            }
            OutputSpace::Permutations { d } => {
                let mut items: Vec<usize> = (0..*d).collect();
                let mut out = vec![Structure::Permutation(items.clone())];
                while next_permutation(&mut items) {
                    out.push(Structure::Permutation(items.clone()));
                }
                out
            }
            OutputSpace::Subtrees { tree, .. } => {
                let sets = subtree_sets(tree, 0);
                sets.into_iter()
                    .map(|vs| {
                        let mut bits = vec![false; tree.len()];
                        for v in vs {
                            bits[v] = true;
                        }
                        Structure::Subtree(bits)
                    })
                    .collect()
            }
            OutputSpace::CyclicPermutations { n, .. } => enumerate_cycles(*n),
        };
        out.sort_unstable();
        Ok(out)
    }

    /// Whether `y` belongs to this space.
    pub fn contains(&self, y: &Structure) -> bool {
        match (self, y) {
            (OutputSpace::Hypercube { d }, Structure::Hypercube(bits)) => bits.len() == *d,
            (OutputSpace::Permutations { d }, Structure::Permutation(items)) => {
                if items.len() != *d {
                    return false;
                }
                let mut seen = vec![false; *d];
                items.iter().all(|&i| i < *d && !std::mem::replace(&mut seen[i], true))
            }
            (OutputSpace::Subtrees { tree, .. }, Structure::Subtree(bits)) => {
                bits.len() == tree.len()
                    && bits[0]
                    && (1..tree.len()).all(|v| !bits[v] || bits[tree.parent(v)])
            }
            (OutputSpace::CyclicPermutations { n, .. }, Structure::Cycle(edges)) => is_simple_cycle(*n, edges),
            _ => false,
        }
    }

    /// Dimension of the output feature map `ψ`.
    pub fn feature_dim(&self) -> usize {
        match self {
            OutputSpace::Hypercube { d } => *d,
            OutputSpace::Permutations { d } => d * d,
            OutputSpace::Subtrees { tree, .. } => tree.len(),
            OutputSpace::CyclicPermutations { n, .. } => n * (n - 1) / 2,
        }
    }

    /// `max_y ‖ψ(y)‖`, attained by the all-ones bit string, any permutation,
    /// the full tree and a Hamiltonian cycle respectively.
    pub fn max_feature_norm(&self) -> f64 {
        match self {
            OutputSpace::Hypercube { d } | OutputSpace::Permutations { d } => (*d as f64).sqrt(),
            OutputSpace::Subtrees { tree, .. } => (tree.len() as f64).sqrt(),
            OutputSpace::CyclicPermutations { n, .. } => (*n as f64).sqrt(),
        }
    }

    /// Output feature map `ψ(y)`: 0/1 indicators of the parts of `y`.
    pub fn output_features(&self, y: &Structure) -> Result<Vec<f64>> {
        self.check_kind(y)?;
        let mut psi = vec![0.0; self.feature_dim()];
        self.for_each_active(y, |i| psi[i] = 1.0);
        Ok(psi)
    }

    /// `⟨ψ(y), w⟩` without materialising `ψ(y)`. `y` must have this space's kind.
    pub fn dot_features(&self, y: &Structure, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_active(y, |i| acc += w[i]);
        acc
    }

    /// Calls `f` with the index of every coordinate where `ψ(y) = 1`.
    pub(crate) fn for_each_active(&self, y: &Structure, mut f: impl FnMut(usize)) {
        match (self, y) {
            (OutputSpace::Hypercube { .. }, Structure::Hypercube(bits))
            | (OutputSpace::Subtrees { .. }, Structure::Subtree(bits)) => {
                bits.iter().enumerate().filter(|(_, &b)| b).for_each(|(i, _)| f(i));
            }
            (OutputSpace::Permutations { d }, Structure::Permutation(items)) => {
                items.iter().enumerate().for_each(|(pos, &item)| f(item * d + pos));
            }
            (OutputSpace::CyclicPermutations { n, .. }, Structure::Cycle(edges)) => {
                edges.iter().for_each(|&(u, v)| f(pair_index(*n, u, v)));
            }
            _ => {}
        }
    }

    fn check_kind(&self, y: &Structure) -> Result<()> {
        if self.kind() == y.kind() {
            Ok(())
        } else {
            Err(Error::WrongSpace { expected: self.kind() })
        }
    }
}

/// Coordinate of the unordered pair `{u, v}` (`u ≠ v`) among the `C(n, 2)`
/// pairs listed in lexicographic order.
pub fn pair_index(n: usize, u: usize, v: usize) -> usize {
    let (u, v) = (u.min(v), u.max(v));
    u * n - u * (u + 1) / 2 + (v - u - 1)
}

impl Serialize for OutputSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpaceRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutputSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        SpaceRecord::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SpaceRecord {
    Hypercube { d: usize },
    Permutations { d: usize },
    Subtrees { parent: Vec<usize> },
    Cycles { n: usize },
}

impl From<&OutputSpace> for SpaceRecord {
    fn from(space: &OutputSpace) -> Self {
        match space {
            OutputSpace::Hypercube { d } => SpaceRecord::Hypercube { d: *d },
            OutputSpace::Permutations { d } => SpaceRecord::Permutations { d: *d },
            OutputSpace::Subtrees { tree, .. } => SpaceRecord::Subtrees { parent: tree.parents().to_vec() },
            OutputSpace::CyclicPermutations { n, .. } => SpaceRecord::Cycles { n: *n },
        }
    }
}

impl TryFrom<SpaceRecord> for OutputSpace {
    type Error = Error;

    fn try_from(r: SpaceRecord) -> Result<Self> {
        match r {
            SpaceRecord::Hypercube { d } => OutputSpace::hypercube(d),
            SpaceRecord::Permutations { d } => OutputSpace::permutations(d),
            SpaceRecord::Subtrees { parent } => Ok(OutputSpace::subtrees(RootedTree::from_parents(parent)?)),
            SpaceRecord::Cycles { n } => OutputSpace::cyclic_permutations(n),
        }
    }
}

pub fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::one(), |acc, k| acc * k)
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    // Each partial product is itself a binomial coefficient, so the division is exact.
    (0..k as u64).fold(BigUint::one(), |acc, i| acc * (n as u64 - i) / (i + 1))
}

/// Natural logarithm of a positive big integer.
pub fn ln_biguint(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 1000 {
        return n.to_f64().map_or(f64::INFINITY, f64::ln);
    }
    let shift = bits - 64;
    let top = (n >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Uniform integer in `[0, bound)` by rejection on random bit strings.
pub fn uniform_below<R: Rng + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    assert!(!bound.is_zero(), "uniform_below needs a positive bound");
    if let Some(b) = bound.to_u64() {
        return BigUint::from(rng.gen_range(0..b));
    }
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let excess = (words as u64) * 32 - bits;
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.gen()).collect();
        if let Some(top) = digits.last_mut() {
            *top >>= excess;
        }
        let candidate = BigUint::new(digits);
        if candidate < *bound {
            return candidate;
        }
    }
}

/// Rearranges `v` into the lexicographically next permutation; returns false
/// (leaving `v` sorted ascending) after the last one.
pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// All vertex sets of subtrees rooted at `v` that contain `v`.
fn subtree_sets(tree: &RootedTree, v: usize) -> Vec<Vec<usize>> {
    let mut acc: Vec<Vec<usize>> = vec![vec![v]];
    for &c in tree.children(v) {
        let branch = subtree_sets(tree, c);
        let mut next = Vec::with_capacity(acc.len() * (branch.len() + 1));
        for base in &acc {
            next.push(base.clone());
            for b in &branch {
                let mut s = base.clone();
                s.extend_from_slice(b);
                next.push(s);
            }
        }
        acc = next;
    }
    acc
}

fn enumerate_cycles(n: usize) -> Vec<Structure> {
    let mut out = Vec::new();
    for mask in 0u64..1 << n {
        if mask.count_ones() < 3 {
            continue;
        }
        let verts: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let start = verts[0];
        let mut rest = verts[1..].to_vec();
        loop {
            // Fixing the smallest vertex first and requiring the second vertex
            // to be below the last picks one of the two traversal directions.
            if rest[0] < rest[rest.len() - 1] {
                let mut order = Vec::with_capacity(verts.len());
                order.push(start);
                order.extend_from_slice(&rest);
                out.push(Structure::cycle_from_order(&order));
            }
            if !next_permutation(&mut rest) {
                break;
            }
        }
    }
    out
}

fn is_simple_cycle(n: usize, edges: &[(usize, usize)]) -> bool {
    if edges.len() < 3 || edges.len() > n {
        return false;
    }
    if edges.iter().any(|&(u, v)| u >= v || v >= n) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    if adj.iter().any(|a| !a.is_empty() && a.len() != 2) {
        return false;
    }
    // Walk from one vertex; a single cycle visits every edge before returning.
    let start = edges[0].0;
    let (mut prev, mut cur) = (start, adj[start][0]);
    let mut steps = 1;
    while cur != start {
        let next = if adj[cur][0] == prev { adj[cur][1] } else { adj[cur][0] };
        prev = cur;
        cur = next;
        steps += 1;
    }
    steps == edges.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::collections::HashSet;

    fn brute_force_subtree_count(tree: &RootedTree) -> u64 {
        let d = tree.len();
        (0u64..1 << d)
            .filter(|&m| {
                m & 1 == 1 && (1..d).all(|v| m >> v & 1 == 0 || m >> tree.parent(v) & 1 == 1)
            })
            .count() as u64
    }

    #[test]
    fn hypercube_count() {
        assert_eq!(OutputSpace::hypercube(10).unwrap().count(), BigUint::from(1024u32));
    }

    #[test]
    fn path_subtree_count_is_three() {
        let space = OutputSpace::subtrees(RootedTree::path(3).unwrap());
        assert_eq!(space.count(), BigUint::from(3u32));
        let all = space.enumerate().unwrap();
        assert_eq!(
            all,
            vec![
                Structure::Subtree(vec![true, false, false]),
                Structure::Subtree(vec![true, true, false]),
                Structure::Subtree(vec![true, true, true]),
            ]
        );
    }

    #[test]
    fn four_vertex_cycles() {
        let space = OutputSpace::cyclic_permutations(4).unwrap();
        assert_eq!(space.count(), BigUint::from(7u32));
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), 7);
        let by_len = |k| all.iter().filter(|y| matches!(y, Structure::Cycle(e) if e.len() == k)).count();
        assert_eq!((by_len(3), by_len(4)), (4, 3));
    }

    #[test]
    fn hypercube_enumeration_order() {
        let all = OutputSpace::hypercube(2).unwrap().enumerate().unwrap();
        let text: Vec<String> = all.iter().map(|y| y.to_string()).collect();
        assert_eq!(text, ["00", "01", "10", "11"]);
    }

    #[test]
    fn permutations_of_three() {
        let space = OutputSpace::permutations(3).unwrap();
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 6);
        assert!(all.iter().all(|y| space.contains(y)));
    }

    #[test]
    fn singleton_permutation_space() {
        let space = OutputSpace::permutations(1).unwrap();
        let mut rng = RngStream::new(1).rng();
        for _ in 0..10 {
            assert_eq!(space.sample_uniform(&mut rng), Structure::Permutation(vec![0]));
        }
    }

    #[test]
    fn enumeration_cap() {
        let err = OutputSpace::hypercube(21).unwrap().enumerate().unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
        assert!(OutputSpace::hypercube(3).unwrap().enumerate_capped(7).is_err());
        assert!(OutputSpace::hypercube(3).unwrap().enumerate_capped(8).is_ok());
    }

    #[test]
    fn invalid_spaces() {
        assert!(OutputSpace::hypercube(0).is_err());
        assert!(OutputSpace::permutations(0).is_err());
        assert!(OutputSpace::cyclic_permutations(2).is_err());
        assert!(RootedTree::from_parents(vec![]).is_err());
        assert!(RootedTree::from_parents(vec![1, 0]).is_err());
        // 1 and 2 point at each other and never reach the root.
        assert!(RootedTree::from_parents(vec![0, 2, 1]).is_err());
        assert!(RootedTree::from_parents(vec![0, 5]).is_err());
    }

    #[test]
    fn feature_examples() {
        let tri = OutputSpace::cyclic_permutations(3).unwrap();
        let y = Structure::cycle_from_order(&[0, 1, 2]);
        assert_eq!(tri.output_features(&y).unwrap(), vec![1.0, 1.0, 1.0]);

        let cube = OutputSpace::hypercube(3).unwrap();
        let y = Structure::Hypercube(vec![true, false, true]);
        assert_eq!(cube.output_features(&y).unwrap(), vec![1.0, 0.0, 1.0]);

        let perms = OutputSpace::permutations(2).unwrap();
        let psi = perms.output_features(&Structure::Permutation(vec![1, 0])).unwrap();
        assert_eq!(psi.len(), 4);
        assert_eq!(psi.iter().filter(|&&v| v == 1.0).count(), 2);

        assert!(matches!(
            cube.output_features(&Structure::Permutation(vec![0])),
            Err(Error::WrongSpace { .. })
        ));
    }

    #[test]
    fn pair_indices_cover_all_pairs() {
        let n = 6;
        let mut seen = vec![false; n * (n - 1) / 2];
        for u in 0..n {
            for v in u + 1..n {
                let i = pair_index(n, u, v);
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(pair_index(n, v, u), i);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn membership_rejects_malformed() {
        let cyc = OutputSpace::cyclic_permutations(5).unwrap();
        assert!(cyc.contains(&Structure::cycle_from_order(&[0, 3, 1])));
        // two disjoint triangles would need 6 vertices; use a triangle plus a chord
        assert!(!cyc.contains(&Structure::Cycle(vec![(0, 1), (0, 2), (1, 2), (3, 4)])));
        assert!(!cyc.contains(&Structure::Cycle(vec![(0, 2), (0, 1), (1, 2)])));
        assert!(!cyc.contains(&Structure::Cycle(vec![(0, 1), (1, 2)])));

        let sub = OutputSpace::subtrees(RootedTree::path(3).unwrap());
        assert!(!sub.contains(&Structure::Subtree(vec![true, false, true])));
        assert!(!sub.contains(&Structure::Subtree(vec![false, false, false])));

        let perm = OutputSpace::permutations(3).unwrap();
        assert!(!perm.contains(&Structure::Permutation(vec![0, 0, 1])));
        assert!(!perm.contains(&Structure::Hypercube(vec![true; 3])));
    }

    #[test]
    fn subtree_counts_match_brute_force_on_random_trees() {
        let stream = RngStream::new(2024);
        for d in 1..=12 {
            for t in 0..20 {
                let tree = RootedTree::random(d, &mut stream.child(d as u64).child(t).rng()).unwrap();
                let space = OutputSpace::subtrees(tree.clone());
                assert_eq!(space.count(), BigUint::from(brute_force_subtree_count(&tree)), "{tree:?}");
            }
        }
    }

    #[test]
    fn cycle_counts_match_enumeration() {
        for n in 3..=6 {
            let space = OutputSpace::cyclic_permutations(n).unwrap();
            let all = space.enumerate().unwrap();
            assert_eq!(BigUint::from(all.len()), space.count());
            assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len());
            assert!(all.iter().all(|y| space.contains(y)));
        }
    }

    #[test]
    fn samples_are_members() {
        let tree = RootedTree::random(9, &mut RngStream::new(3).rng()).unwrap();
        let spaces = [
            OutputSpace::hypercube(5).unwrap(),
            OutputSpace::permutations(5).unwrap(),
            OutputSpace::subtrees(tree),
            OutputSpace::cyclic_permutations(7).unwrap(),
        ];
        let mut rng = RngStream::new(4).rng();
        for space in &spaces {
            for _ in 0..500 {
                let y = space.sample_uniform(&mut rng);
                assert!(space.contains(&y), "{} produced {y}", space.kind());
            }
        }
    }

    #[test]
    fn large_counts_and_logs() {
        let perms = OutputSpace::permutations(30).unwrap();
        let expected: f64 = (1..=30).map(|k| (k as f64).ln()).sum();
        assert!((perms.ln_count() - expected).abs() < 1e-9);
        let huge = OutputSpace::hypercube(2000).unwrap();
        assert!((huge.ln_count() - 2000.0 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn uniform_below_big_bound() {
        let bound = BigUint::from(3u32) << 100;
        let mut rng = RngStream::new(5).rng();
        for _ in 0..200 {
            assert!(uniform_below(&bound, &mut rng) < bound);
        }
    }

    #[test]
    fn descriptor_round_trip() {
        for desc in ["hypercube:4", "permutations:3", "cycles:5", "subtrees:0,0,1,1"] {
            let space = OutputSpace::parse_descriptor(desc).unwrap();
            assert_eq!(space.descriptor(), desc);
            let json = serde_json::to_string(&space).unwrap();
            assert_eq!(serde_json::from_str::<OutputSpace>(&json).unwrap(), space);
        }
        assert!(OutputSpace::parse_descriptor("torus:3").is_err());
        assert!(OutputSpace::parse_descriptor("hypercube").is_err());
    }

    #[test]
    fn tree_text_format() {
        let tree = RootedTree::parse("4\n0 0 1 1\n").unwrap();
        assert_eq!(tree.children(1), &[2, 3]);
        assert_eq!(RootedTree::parse(&tree.to_text()).unwrap(), tree);
        assert!(RootedTree::parse("3\n0 0\n").is_err());
    }
}
