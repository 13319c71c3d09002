//! Rank statistics: Spearman correlation with permutation p-values and
//! rank-group accuracy summaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::TrialRecord;

/// How the permutation p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// All n! permutations enumerated.
    ExactPermutation,
    /// Seeded Monte-Carlo shuffles, p = (1 + hits) / (1 + draws).
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub spearman_rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
    pub permutations: usize,
    pub seed: u64,
    /// Paired series snapshot.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Average ranks (1-based) with tied values sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::contract(
            "correlation undefined for a constant series",
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman rho: Pearson correlation of the average-rank transforms.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::contract("series lengths differ"));
    }
    if xs.len() < 3 {
        return Err(Error::contract("need at least 3 pairs"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in series".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn factorial_at_most(n: usize, cap: usize) -> Option<usize> {
    let mut f: usize = 1;
    for k in 2..=n {
        f = f.checked_mul(k)?;
        if f > cap {
            return None;
        }
    }
    Some(f)
}

fn heaps_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut a: Vec<usize> = (0..n).collect();
    fn rec(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            rec(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    rec(n, &mut a, &mut out);
    out
}

/// Two-sided permutation test at the default budget (10,000 draws, seed 0).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    spearman_with(xs, ys, DEFAULT_PERMUTATIONS, 0)
}

/// Two-sided permutation test for Spearman rho. When `n!` fits within the
/// permutation budget the test enumerates every permutation exactly;
/// otherwise it draws seeded random shuffles.
pub fn spearman_with(
    xs: &[f64],
    ys: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    let rho = spearman_rho(xs, ys)?;
    if permutations == 0 {
        return Err(Error::contract("need at least one permutation"));
    }
    let n = xs.len();
    let observed = rho.abs() - 1e-12;

    let (p_value, method) = match factorial_at_most(n, permutations) {
        Some(total) => {
            let mut hits = 0usize;
            let mut perm_ys = vec![0.0; n];
            for perm in heaps_permutations(n) {
                for (slot, &src) in perm_ys.iter_mut().zip(&perm) {
                    *slot = ys[src];
                }
                if let Ok(r) = spearman_rho(xs, &perm_ys) {
                    if r.abs() >= observed {
                        hits += 1;
                    }
                }
            }
            (hits as f64 / total as f64, PValueMethod::ExactPermutation)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm_ys = ys.to_vec();
            let mut hits = 0usize;
            for _ in 0..permutations {
                perm_ys.shuffle(&mut rng);
                if let Ok(r) = spearman_rho(xs, &perm_ys) {
                    if r.abs() >= observed {
                        hits += 1;
                    }
                }
            }
            (
                (1 + hits) as f64 / (1 + permutations) as f64,
                PValueMethod::MonteCarlo,
            )
        }
    };

    Ok(CorrelationReport {
        spearman_rho: rho,
        p_value,
        n,
        method,
        permutations,
        seed,
        xs: xs.to_vec(),
        ys: ys.to_vec(),
    })
}

/// One bar of the rank-group summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    /// 1-based; group 1 holds the lowest scores.
    pub group: usize,
    pub size: usize,
    pub mean_mgm: f64,
    pub mean_val_acc: f64,
}

/// Splits trained records into `groups` contiguous score-rank groups of
/// near-equal size (low scores first) and reports each group's mean final
/// validation accuracy.
pub fn rank_group_summary(records: &[TrialRecord], groups: usize) -> Result<Vec<GroupRow>> {
    if groups < 2 {
        return Err(Error::contract("need at least 2 groups"));
    }
    if records.len() < groups {
        return Err(Error::contract(format!(
            "cannot split {} records into {groups} groups",
            records.len()
        )));
    }
    let untrained: Vec<String> = records
        .iter()
        .filter(|r| r.final_val_acc.is_none() || r.mgm.is_none())
        .map(|r| r.genotype.to_string())
        .collect();
    if !untrained.is_empty() {
        return Err(Error::contract(format!(
            "records missing scores or accuracies: {}",
            untrained.join(", ")
        )));
    }

    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ma, mb) = (records[a].mgm.unwrap(), records[b].mgm.unwrap());
        ma.partial_cmp(&mb)
            .expect("finite scores")
            .then(records[a].genotype_index.cmp(&records[b].genotype_index))
    });

    let n = records.len();
    let base = n / groups;
    let rem = n % groups;
    let mut rows = Vec::with_capacity(groups);
    let mut cursor = 0;
    for g in 0..groups {
        let size = base + usize::from(g < rem);
        let members = &idx[cursor..cursor + size];
        cursor += size;
        let mean_mgm = members.iter().map(|&i| records[i].mgm.unwrap()).sum::<f64>() / size as f64;
        let mean_val_acc = members
            .iter()
            .map(|&i| records[i].final_val_acc.unwrap())
            .sum::<f64>()
            / size as f64;
        rows.push(GroupRow {
            group: g + 1,
            size,
            mean_mgm,
            mean_val_acc,
        });
    }
    Ok(rows)
}

/// `groups.csv`: columns group, size, mean_mgm, mean_val_acc.
pub fn groups_csv(rows: &[GroupRow]) -> String {
    let mut out = String::from("group,size,mean_mgm,mean_val_acc\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.group, r.size, r.mean_mgm, r.mean_val_acc
        ));
    }
    out
}
