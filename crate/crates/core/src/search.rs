//! Top-k gradient-kernel search and the random-search baseline.
//!
//! The search samples M genotypes, scores each at random initialization
//! with the configured MGM estimator, short-trains the k highest-scoring
//! candidates, and picks the best by final validation accuracy. Every
//! random stream derives from per-genotype subseeds, so scoring and
//! training may run in parallel without affecting any result.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{self, Blueprint, CellGenotype, Head, InputSpec};
use crate::data::{sample_batch, Dataset};
use crate::error::{Error, Result};
use crate::gram::{score_network, MgmConfig, MgmScore};
use crate::netbuild::instantiate;
use crate::report::{Timings, TrialRecord, TrialTiming};
use crate::seed::subseed;
use crate::trainer::{short_train, top1_select, EvalCurve, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Knas,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Architectures sampled (the paper protocol's max iterations).
    pub m: usize,
    /// Candidates kept for short training.
    pub k: usize,
    pub mgm: MgmConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// One fixed seeded batch of this size is reused across all genotypes.
    pub score_batch_n: usize,
    /// Channels of the chain skeleton built around each genotype.
    pub width: usize,
    pub num_cells: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            m: 100,
            k: 20,
            mgm: MgmConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            score_batch_n: 32,
            width: 8,
            num_cells: 2,
        }
    }
}

/// Full provenance of one search run.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub policy: Policy,
    pub best: CellGenotype,
    pub trials: Vec<TrialRecord>,
    pub timings: Timings,
    pub flags: Vec<String>,
}

fn blueprint_for(genotype: CellGenotype, data: &Dataset, cfg: &SearchConfig) -> Result<Blueprint> {
    let input = match data.shape.as_slice() {
        [c, h, w] => InputSpec::Image {
            channels: *c,
            height: *h,
            width: *w,
        },
        other => {
            return Err(Error::contract(format!(
                "cell search expects image data, got shape {other:?}"
            )))
        }
    };
    Ok(Blueprint::chain(
        genotype,
        input,
        cfg.width,
        cfg.num_cells,
        Head::Classifier {
            classes: data.classes,
        },
    ))
}

/// Rank order over `(genotype index, score value)` pairs: scores descending,
/// numeric failures (`None`) last, ties by canonical genotype order. Returns
/// positions into the input slice.
pub fn rank_by_score(scores: &[(u64, Option<f64>)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, va) = scores[a];
        let (ib, vb) = scores[b];
        match (va, vb) {
            (Some(x), Some(y)) => y
                .partial_cmp(&x)
                .expect("scores are finite")
                .then(ia.cmp(&ib)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => ia.cmp(&ib),
        }
    });
    order
}

fn net_seed(cfg_seed: u64, genotype: CellGenotype) -> u64 {
    subseed(cfg_seed, 41, genotype.index())
}

struct ScoredTrial {
    genotype: CellGenotype,
    score: MgmScore,
    score_secs: f64,
}

fn score_all(
    genotypes: &[CellGenotype],
    data: &Dataset,
    cfg: &SearchConfig,
) -> Result<Vec<ScoredTrial>> {
    let batch = sample_batch(&data.train, cfg.score_batch_n, subseed(cfg.seed, 40, 0))?;
    genotypes
        .par_iter()
        .map(|&genotype| {
            let started = Instant::now();
            let bp = blueprint_for(genotype, data, cfg)?;
            let net = instantiate(&bp, net_seed(cfg.seed, genotype))?;
            let mgm_cfg = MgmConfig {
                seed: subseed(cfg.mgm.seed, 42, genotype.index()),
                ..cfg.mgm.clone()
            };
            let score = score_network(&net, &batch, &mgm_cfg)?;
            Ok(ScoredTrial {
                genotype,
                score,
                score_secs: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn train_candidates(
    candidates: &[CellGenotype],
    data: &Dataset,
    cfg: &SearchConfig,
) -> Result<Vec<(CellGenotype, EvalCurve, f64)>> {
    candidates
        .par_iter()
        .map(|&genotype| {
            let started = Instant::now();
            let bp = blueprint_for(genotype, data, cfg)?;
            let net = instantiate(&bp, net_seed(cfg.seed, genotype))?;
            let train_cfg = TrainConfig {
                seed: subseed(cfg.train.seed, 43, genotype.index()),
                ..cfg.train.clone()
            };
            let curve = short_train(&net, &data.train, &data.val, &train_cfg)?;
            Ok((genotype, curve, started.elapsed().as_secs_f64()))
        })
        .collect()
}

fn assemble_timings(
    trials: &[TrialRecord],
    score_secs: &[(CellGenotype, f64)],
    train_secs: &[(CellGenotype, f64)],
) -> Timings {
    let scoring_total: f64 = score_secs.iter().map(|(_, s)| s).sum();
    let training_total: f64 = train_secs.iter().map(|(_, s)| s).sum();
    let per_trial = trials
        .iter()
        .map(|t| TrialTiming {
            genotype: t.genotype,
            score_secs: score_secs
                .iter()
                .find(|(g, _)| *g == t.genotype)
                .map(|(_, s)| *s),
            train_secs: train_secs
                .iter()
                .find(|(g, _)| *g == t.genotype)
                .map(|(_, s)| *s),
        })
        .collect();
    Timings {
        scoring_total_secs: scoring_total,
        training_total_secs: training_total,
        mean_score_secs: (!score_secs.is_empty())
            .then(|| scoring_total / score_secs.len() as f64),
        mean_train_secs: (!train_secs.is_empty())
            .then(|| training_total / train_secs.len() as f64),
        speedup_ratio: None,
        per_trial,
    }
}

/// Algorithm: sample M genotypes, score all, keep the top k, short-train
/// them, and return the validation-best candidate with full provenance.
pub fn knas_search(data: &Dataset, cfg: &SearchConfig) -> Result<SearchReport> {
    if cfg.k == 0 || cfg.m == 0 {
        return Err(Error::contract("m and k must be positive"));
    }
    if cfg.k > cfg.m {
        return Err(Error::contract(format!(
            "k = {} exceeds m = {}",
            cfg.k, cfg.m
        )));
    }
    let genotypes = arch::sample_cells(cfg.seed, cfg.m)?;
    let scored = score_all(&genotypes, data, cfg)?;

    let keyed: Vec<(u64, Option<f64>)> = scored
        .iter()
        .map(|t| (t.genotype.index(), t.score.value))
        .collect();
    let order = rank_by_score(&keyed);
    let mut rank_of = vec![0usize; scored.len()];
    for (rank, &pos) in order.iter().enumerate() {
        rank_of[pos] = rank + 1;
    }

    let mut flags = Vec::new();
    if cfg.k == cfg.m {
        flags.push("k equals m: the score filter is a no-op".to_string());
    }
    let viable: Vec<CellGenotype> = order
        .iter()
        .filter(|&&pos| scored[pos].score.numeric_ok)
        .map(|&pos| scored[pos].genotype)
        .collect();
    if viable.is_empty() {
        return Err(Error::contract(
            "no viable candidate: every score was a numeric failure",
        ));
    }
    if viable.len() < cfg.k {
        flags.push(format!(
            "only {} of k = {} candidates were numerically viable",
            viable.len(),
            cfg.k
        ));
    }
    let candidates: Vec<CellGenotype> = viable.iter().copied().take(cfg.k).collect();

    let trained = train_candidates(&candidates, data, cfg)?;
    let best = top1_select(
        &trained
            .iter()
            .map(|(g, c, _)| (*g, c.clone()))
            .collect::<Vec<_>>(),
    )?;

    let trials: Vec<TrialRecord> = scored
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            let mut record = TrialRecord::new(t.genotype, net_seed(cfg.seed, t.genotype))
                .with_score(&t.score);
            record.mgm_rank = Some(rank_of[pos]);
            if let Some((_, curve, _)) = trained.iter().find(|(g, _, _)| *g == t.genotype) {
                record = record.with_curve(curve);
            }
            record
        })
        .collect();

    let score_secs: Vec<(CellGenotype, f64)> =
        scored.iter().map(|t| (t.genotype, t.score_secs)).collect();
    let train_secs: Vec<(CellGenotype, f64)> =
        trained.iter().map(|(g, _, s)| (*g, *s)).collect();
    let mut timings = assemble_timings(&trials, &score_secs, &train_secs);

    let mut report = SearchReport {
        policy: Policy::Knas,
        best,
        trials,
        timings: timings.clone(),
        flags,
    };
    timings.speedup_ratio = speedup_accounting(&report).ok();
    report.timings = timings;
    Ok(report)
}

/// Trains `budget_k` uniformly sampled genotypes with no score filter and
/// selects by validation accuracy. Shares the knas per-genotype subseeds, so
/// a budget of M reproduces `knas_search` with k = M exactly.
pub fn random_search_baseline(
    data: &Dataset,
    budget_k: usize,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    if budget_k == 0 {
        return Err(Error::contract("budget must be positive"));
    }
    let genotypes = arch::sample_cells(cfg.seed, budget_k)?;
    let trained = train_candidates(&genotypes, data, cfg)?;
    let best = top1_select(
        &trained
            .iter()
            .map(|(g, c, _)| (*g, c.clone()))
            .collect::<Vec<_>>(),
    )?;
    let trials: Vec<TrialRecord> = trained
        .iter()
        .map(|(g, curve, _)| {
            TrialRecord::new(*g, net_seed(cfg.seed, *g)).with_curve(curve)
        })
        .collect();
    let train_secs: Vec<(CellGenotype, f64)> =
        trained.iter().map(|(g, _, s)| (*g, *s)).collect();
    let mut timings = assemble_timings(&trials, &[], &train_secs);
    let report = SearchReport {
        policy: Policy::Random,
        best,
        trials,
        timings: timings.clone(),
        flags: vec![],
    };
    timings.speedup_ratio = speedup_accounting(&report).ok();
    let mut report = report;
    report.timings = timings;
    Ok(report)
}

/// Ratio of the hypothetical full-evaluation cost (`M x mean training
/// time`) to the actual cost (`total scoring time + k x mean training
/// time`).
pub fn speedup_accounting(report: &SearchReport) -> Result<f64> {
    let m = report.trials.len();
    let trained = report
        .trials
        .iter()
        .filter(|t| t.curve.is_some())
        .count();
    if trained == 0 || report.timings.training_total_secs <= 0.0 {
        return Err(Error::contract(
            "speedup is undefined without measured training time",
        ));
    }
    let mean_train = report.timings.training_total_secs / trained as f64;
    Ok((m as f64 * mean_train)
        / (report.timings.scoring_total_secs + trained as f64 * mean_train))
}

#[cfg(test)]
mod tests;
