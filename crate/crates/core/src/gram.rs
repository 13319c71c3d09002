//! The gradient Gram matrix and its scalar summaries.
//!
//! `H = G * G^T` for the `n x P` per-example gradient matrix `G`. The mean
//! of `H` (MGM) is the architecture score; `lambda_min` and the Frobenius
//! norm feed the convergence-bound checks. Three MGM estimators are
//! provided: exact, per-layer coordinate-sampled, and split-halves.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};
use crate::netbuild::{per_example_grads_for_graph, Batch, GradientMode, NetworkInstance, PerExampleGrads};
use crate::seed::subseed;
use crate::Graph;

/// Symmetric `n x n` matrix of pairwise gradient dot products.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    h: Vec<f64>,
    n: usize,
}

impl GramMatrix {
    /// Wraps an existing symmetric matrix (row-major). Symmetry is enforced
    /// within 1e-10; positive semidefiniteness is a property of `gram`
    /// construction and is checked by callers that rely on it.
    pub fn new(h: Vec<f64>, n: usize) -> Result<Self> {
        if h.len() != n * n {
            return Err(Error::contract(format!(
                "matrix has {} entries, expected {}",
                h.len(),
                n * n
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Gram entry".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (h[i * n + j] - h[j * n + i]).abs() > 1e-10 {
                    return Err(Error::Numeric(format!(
                        "asymmetric at ({i}, {j}): {} vs {}",
                        h[i * n + j],
                        h[j * n + i]
                    )));
                }
            }
        }
        Ok(GramMatrix { h, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.h
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }
}

/// `H = G * G^T`: entry (i, j) is the dot product of gradient rows i and j.
pub fn gram(grads: &PerExampleGrads) -> Result<GramMatrix> {
    let n = grads.rows();
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        let ri = grads.row(i);
        for j in i..n {
            let rj = grads.row(j);
            let mut dot = 0.0;
            for (a, b) in ri.iter().zip(rj) {
                dot += a * b;
            }
            h[i * n + j] = dot;
            h[j * n + i] = dot;
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Gram entry".into()));
    }
    Ok(GramMatrix { h, n })
}

/// How an MGM score was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    LayerSampled,
    SplitHalves,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Exact => "exact",
            Estimator::LayerSampled => "layer_sampled",
            Estimator::SplitHalves => "split_halves",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Estimator::Exact),
            "layer_sampled" | "layer-sampled" => Ok(Estimator::LayerSampled),
            "split_halves" | "split-halves" => Ok(Estimator::SplitHalves),
            other => Err(Error::Parse(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Configuration shared by the MGM estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgmConfig {
    /// Coordinates sampled per parameter tensor.
    pub per_layer_samples: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub gradient_mode: GradientMode,
}

impl Default for MgmConfig {
    fn default() -> Self {
        MgmConfig {
            per_layer_samples: 50,
            seed: 0,
            estimator: Estimator::SplitHalves,
            gradient_mode: GradientMode::Loss,
        }
    }
}

/// An architecture's MGM score. `value` is absent exactly when a
/// contributing gradient was non-finite (`numeric_ok == false`).
#[derive(Debug, Clone)]
pub struct MgmScore {
    pub value: Option<f64>,
    pub estimator: Estimator,
    pub wall_time_secs: f64,
    pub numeric_ok: bool,
}

impl MgmScore {
    fn ok(value: f64, estimator: Estimator, started: Instant) -> Self {
        MgmScore {
            value: Some(value),
            estimator,
            wall_time_secs: started.elapsed().as_secs_f64(),
            numeric_ok: true,
        }
    }

    fn failed(estimator: Estimator, started: Instant) -> Self {
        MgmScore {
            value: None,
            estimator,
            wall_time_secs: started.elapsed().as_secs_f64(),
            numeric_ok: false,
        }
    }
}

/// Mean of all `n^2` Gram entries.
pub fn mgm_exact(h: &GramMatrix) -> MgmScore {
    let started = Instant::now();
    let n = h.n() as f64;
    let mean = h.entries().iter().sum::<f64>() / (n * n);
    MgmScore::ok(mean, Estimator::Exact, started)
}

/// Per-layer coordinate-sampled estimator.
///
/// For each parameter tensor, `per_layer_samples` coordinates are drawn
/// uniformly without replacement (clamped to the tensor size when it is
/// smaller) and the restricted Gram mean is computed over them, scaled by
/// `len / sampled` so its expectation equals the full-tensor value. The
/// final score averages the per-tensor means, so a saturating sample count
/// reproduces the layer-averaged exact score.
pub fn mgm_layer_sampled_for_graph(
    graph: &Graph,
    batch: &Batch,
    cfg: &MgmConfig,
) -> Result<MgmScore> {
    let started = Instant::now();
    let grads = match per_example_grads_for_graph(graph, batch, cfg.gradient_mode) {
        Ok(g) => g,
        Err(Error::Numeric(_)) | Err(Error::NonFinite { .. }) => {
            return Ok(MgmScore::failed(Estimator::LayerSampled, started))
        }
        Err(e) => return Err(e),
    };
    let value = layer_sampled_value(&grads, cfg.per_layer_samples, cfg.seed)?;
    if !value.is_finite() {
        return Ok(MgmScore::failed(Estimator::LayerSampled, started));
    }
    Ok(MgmScore::ok(value, Estimator::LayerSampled, started))
}

/// Core of the layer-sampled estimator, usable on any gradient matrix.
pub fn layer_sampled_value(
    grads: &PerExampleGrads,
    per_layer_samples: usize,
    seed: u64,
) -> Result<f64> {
    if per_layer_samples == 0 {
        return Err(Error::contract("per_layer_samples must be at least 1"));
    }
    let n = grads.rows();
    let mut terms = Vec::new();
    for (layer_idx, &(offset, len)) in grads.layer_spans().iter().enumerate() {
        if len == 0 {
            continue;
        }
        let coords = sample_coords(seed, layer_idx, len, per_layer_samples);
        let inflation = len as f64 / coords.len() as f64;
        let mut total = 0.0;
        for i in 0..n {
            let ri = grads.row(i);
            for j in 0..n {
                let rj = grads.row(j);
                let mut dot = 0.0;
                for &p in &coords {
                    dot += ri[offset + p] * rj[offset + p];
                }
                total += dot;
            }
        }
        terms.push(inflation * total / (n * n) as f64);
    }
    if terms.is_empty() {
        return Err(Error::contract(
            "no parameter tensor was eligible for sampling",
        ));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Split-halves estimator.
///
/// The `n` per-example gradients are shuffled (seeded) and split into two
/// halves; each sampled coordinate contributes the dot product between its
/// first-half and second-half gradient sequences, and the score is the mean
/// over all sampled coordinates across parameter tensors.
pub fn mgm_split_halves_for_graph(
    graph: &Graph,
    batch: &Batch,
    cfg: &MgmConfig,
) -> Result<MgmScore> {
    let started = Instant::now();
    if batch.len() % 2 != 0 {
        return Err(Error::contract(format!(
            "split-halves needs an even example count; got {}, drop one example",
            batch.len()
        )));
    }
    let grads = match per_example_grads_for_graph(graph, batch, cfg.gradient_mode) {
        Ok(g) => g,
        Err(Error::Numeric(_)) | Err(Error::NonFinite { .. }) => {
            return Ok(MgmScore::failed(Estimator::SplitHalves, started))
        }
        Err(e) => return Err(e),
    };
    let value = split_halves_value(&grads, cfg.per_layer_samples, cfg.seed)?;
    if !value.is_finite() {
        return Ok(MgmScore::failed(Estimator::SplitHalves, started));
    }
    Ok(MgmScore::ok(value, Estimator::SplitHalves, started))
}

/// Core of the split-halves estimator, usable on any gradient matrix with an
/// even row count.
pub fn split_halves_value(
    grads: &PerExampleGrads,
    per_layer_samples: usize,
    seed: u64,
) -> Result<f64> {
    if per_layer_samples == 0 {
        return Err(Error::contract("per_layer_samples must be at least 1"));
    }
    let n = grads.rows();
    if n % 2 != 0 {
        return Err(Error::contract(format!(
            "split-halves needs an even example count; got {n}, drop one example"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 2, 0));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let (first, second) = order.split_at(n / 2);

    let mut total = 0.0;
    let mut count = 0usize;
    for (layer_idx, &(offset, len)) in grads.layer_spans().iter().enumerate() {
        if len == 0 {
            continue;
        }
        let coords = sample_coords(seed, layer_idx, len, per_layer_samples);
        for &p in &coords {
            let mut dot = 0.0;
            for (&a, &b) in first.iter().zip(second) {
                dot += grads.row(a)[offset + p] * grads.row(b)[offset + p];
            }
            total += dot;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::contract(
            "no parameter tensor was eligible for sampling",
        ));
    }
    Ok(total / count as f64)
}

/// Uniform without-replacement coordinate sample, seeded per layer.
fn sample_coords(seed: u64, layer_idx: usize, len: usize, requested: usize) -> Vec<usize> {
    let take = requested.min(len);
    if take == len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 1, layer_idx as u64));
    rand::seq::index::sample(&mut rng, len, take).into_vec()
}

pub fn mgm_layer_sampled(net: &NetworkInstance, batch: &Batch, cfg: &MgmConfig) -> Result<MgmScore> {
    mgm_layer_sampled_for_graph(net.graph(), batch, cfg)
}

pub fn mgm_split_halves(net: &NetworkInstance, batch: &Batch, cfg: &MgmConfig) -> Result<MgmScore> {
    mgm_split_halves_for_graph(net.graph(), batch, cfg)
}

/// Default cap on the example count accepted by the dense eigensolve.
pub const DEFAULT_SPECTRAL_CAP: usize = 256;

/// Smallest eigenvalue of `H`, accurate to about `1e-8 * ||H||_F`.
pub fn lambda_min(h: &GramMatrix) -> Result<f64> {
    lambda_min_capped(h, DEFAULT_SPECTRAL_CAP)
}

pub fn lambda_min_capped(h: &GramMatrix, cap: usize) -> Result<f64> {
    if h.n() > cap {
        return Err(Error::contract(format!(
            "spectral solve capped at n = {cap}, got {}; subsample the batch",
            h.n()
        )));
    }
    eigen::smallest_eigenvalue(h.entries(), h.n())
}

/// Frobenius norm: sqrt of the sum of squared entries.
pub fn fro_norm(h: &GramMatrix) -> f64 {
    h.entries().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the estimator selected by `cfg`, converting numeric failures into a
/// `numeric_ok = false` verdict instead of an error.
pub fn score_graph(graph: &Graph, batch: &Batch, cfg: &MgmConfig) -> Result<MgmScore> {
    match cfg.estimator {
        Estimator::Exact => {
            let started = Instant::now();
            match per_example_grads_for_graph(graph, batch, cfg.gradient_mode) {
                Ok(grads) => match gram(&grads) {
                    Ok(h) => {
                        let mean = mgm_exact(&h);
                        Ok(MgmScore {
                            wall_time_secs: started.elapsed().as_secs_f64(),
                            ..mean
                        })
                    }
                    Err(Error::Numeric(_)) => Ok(MgmScore::failed(Estimator::Exact, started)),
                    Err(e) => Err(e),
                },
                Err(Error::Numeric(_)) | Err(Error::NonFinite { .. }) => {
                    Ok(MgmScore::failed(Estimator::Exact, started))
                }
                Err(e) => Err(e),
            }
        }
        Estimator::LayerSampled => mgm_layer_sampled_for_graph(graph, batch, cfg),
        Estimator::SplitHalves => mgm_split_halves_for_graph(graph, batch, cfg),
    }
}

pub fn score_network(net: &NetworkInstance, batch: &Batch, cfg: &MgmConfig) -> Result<MgmScore> {
    score_graph(net.graph(), batch, cfg)
}
