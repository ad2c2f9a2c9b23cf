//! Exponential-family structured prediction over combinatorial output spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`output_spaces`]: hypercube vertices, permutations, rooted subtrees and
//!   undirected cycles, each with exact counting, exact uniform sampling,
//!   enumeration and an indicator feature map.
//! * [`model`]: joint features `φ(x, y)`, parameter vectors and datasets.
//! * [`samplers`]: the Metropolis chain with uniform proposals, exact sampling
//!   by coupling from the past, truncated-chain sampling with a coupling-based
//!   step count, and a rejection sampler.
//! * [`partition`]: randomized approximation of the partition function by a
//!   telescoping product over a cooling schedule, and gradient estimation.
//! * [`training`]: regularized maximum-likelihood training by projected
//!   gradient descent and annealed MAP prediction.
//! * [`oracle`]: brute-force ground truth and statistical test utilities.
//!
//! Every random routine takes an explicit random stream, so all results are
//! reproducible from a seed.

pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod output_spaces;
pub mod partition;
pub mod rng;
pub mod samplers;
pub mod training;

pub use error::{Error, Result};
pub use model::{joint_features, norm_budget_from_space, score, Dataset, FeatureVector, Instance, Params};
pub use output_spaces::{OutputSpace, RootedTree, Structure, SubtreeCounts};
pub use rng::RngStream;
pub use samplers::{GibbsTarget, SamplerMode, SamplerReport};
