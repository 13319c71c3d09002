//! Desk-scale calibration harness for the correlation and search-quality
//! experiments. Run with, e.g.:
//!
//! ```console
//! cargo run --release --example calibrate -- corr 0.5 128 8 2 20 0.1
//! cargo run --release --example calibrate -- search 0.5 128 8 2 20 0.1
//! ```

use std::time::Instant;

use knaskit_core::arch::{self, Blueprint, Head, InputSpec};
use knaskit_core::data::{sample_batch, synthetic_in_memory, Dataset, SyntheticSpec};
use knaskit_core::gram::{score_network, Estimator, MgmConfig};
use knaskit_core::netbuild::{instantiate, GradientMode};
use knaskit_core::search::{knas_search, random_search_baseline, SearchConfig};
use knaskit_core::seed::subseed;
use knaskit_core::stats;
use knaskit_core::trainer::{short_train, Objective, TrainConfig};
use rayon::prelude::*;

struct Params {
    noise: f64,
    n_train: usize,
    width: usize,
    cells: usize,
    epochs: usize,
    lr: f64,
    estimator: Estimator,
    mode: GradientMode,
    batch_n: usize,
}

fn dataset(noise: f64, n_train: usize) -> Dataset {
    synthetic_in_memory(&SyntheticSpec {
        classes: 4,
        shape: vec![3, 8, 8],
        n_train,
        n_val: 128,
        noise,
        seed: 0,
    })
    .unwrap()
}

fn blueprint(g: arch::CellGenotype, ds: &Dataset, p: &Params) -> Blueprint {
    Blueprint::chain(
        g,
        InputSpec::Image {
            channels: ds.shape[0],
            height: ds.shape[1],
            width: ds.shape[2],
        },
        p.width,
        p.cells,
        Head::Classifier {
            classes: ds.classes,
        },
    )
}

fn corr_experiment(p: &Params) {
    let ds = dataset(p.noise, p.n_train);
    let genotypes = arch::sample_cells(1, 30).unwrap();
    let mut passes = 0;
    for exp_seed in 0..5u64 {
        let batch = sample_batch(&ds.train, p.batch_n, subseed(exp_seed, 40, 0)).unwrap();
        let started = Instant::now();
        let results: Vec<(f64, f64, bool)> = genotypes
            .par_iter()
            .map(|&g| {
                let net = instantiate(&blueprint(g, &ds, p), subseed(exp_seed, 41, g.index()))
                    .unwrap();
                let score = score_network(
                    &net,
                    &batch,
                    &MgmConfig {
                        per_layer_samples: 50,
                        seed: subseed(exp_seed, 42, g.index()),
                        estimator: p.estimator,
                        gradient_mode: p.mode,
                    },
                )
                .unwrap();
                let curve = short_train(
                    &net,
                    &ds.train,
                    &ds.val,
                    &TrainConfig {
                        epochs: p.epochs,
                        lr: p.lr,
                        batch_size: 16,
                        seed: subseed(exp_seed, 43, g.index()),
                        objective: Objective::SoftmaxXent,
                    },
                )
                .unwrap();
                (
                    score.value.unwrap(),
                    curve.final_val_accuracy().unwrap_or(0.0),
                    curve.diverged,
                )
            })
            .collect();
        let diverged = results.iter().filter(|r| r.2).count();
        let xs: Vec<f64> = results.iter().filter(|r| !r.2).map(|r| r.0).collect();
        let ys: Vec<f64> = results.iter().filter(|r| !r.2).map(|r| r.1).collect();
        let report = stats::spearman_with(&xs, &ys, 10_000, exp_seed).unwrap();
        let ok = report.spearman_rho > 0.3 && report.p_value < 0.05;
        passes += ok as u32;
        let acc_spread = ys.iter().cloned().fold(f64::INFINITY, f64::min)
            ..=ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "seed {exp_seed}: rho {:+.3} p {:.4} {} ({:.1}s, acc {:.3}..{:.3}, {} diverged)",
            report.spearman_rho,
            report.p_value,
            if ok { "ok" } else { "MISS" },
            started.elapsed().as_secs_f64(),
            acc_spread.start(),
            acc_spread.end(),
            diverged,
        );
    }
    println!("correlation: {passes}/5 seeds pass");
}

fn search_experiment(p: &Params) {
    let ds = dataset(p.noise, p.n_train);
    let mut knas_wins = 0;
    let mut knas_accs = Vec::new();
    let mut rand_accs = Vec::new();
    for exp_seed in 0..5u64 {
        let cfg = SearchConfig {
            m: 50,
            k: 5,
            mgm: MgmConfig {
                per_layer_samples: 50,
                seed: exp_seed,
                estimator: p.estimator,
                gradient_mode: p.mode,
            },
            train: TrainConfig {
                epochs: p.epochs,
                lr: p.lr,
                batch_size: 16,
                seed: exp_seed,
                objective: Objective::SoftmaxXent,
            },
            seed: exp_seed,
            score_batch_n: p.batch_n,
            width: p.width,
            num_cells: p.cells,
        };
        let started = Instant::now();
        let knas = knas_search(&ds, &cfg).unwrap();
        let random = random_search_baseline(&ds, 5, &cfg).unwrap();
        let acc_of = |report: &knaskit_core::search::SearchReport| {
            report
                .trials
                .iter()
                .find(|t| t.genotype == report.best)
                .and_then(|t| t.final_val_acc)
                .unwrap()
        };
        let (ka, ra) = (acc_of(&knas), acc_of(&random));
        knas_accs.push(ka);
        rand_accs.push(ra);
        if ka >= ra {
            knas_wins += 1;
        }
        println!(
            "seed {exp_seed}: knas {ka:.4} vs random {ra:.4} ({}; {:.1}s; scoring {:.2}s train {:.2}s ratio {:?})",
            if ka >= ra { "win" } else { "loss" },
            started.elapsed().as_secs_f64(),
            knas.timings.scoring_total_secs,
            knas.timings.training_total_secs,
            knas.timings.speedup_ratio,
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "search: knas mean {:.4}, random mean {:.4}, wins {knas_wins}/5",
        mean(&knas_accs),
        mean(&rand_accs)
    );
}

fn diag_experiment(p: &Params) {
    let ds = dataset(p.noise, p.n_train);
    let genotypes = arch::sample_cells(1, 30).unwrap();
    let variants = [
        (Estimator::Exact, GradientMode::Loss),
        (Estimator::Exact, GradientMode::Output),
        (Estimator::LayerSampled, GradientMode::Loss),
        (Estimator::LayerSampled, GradientMode::Output),
        (Estimator::SplitHalves, GradientMode::Loss),
        (Estimator::SplitHalves, GradientMode::Output),
    ];
    for exp_seed in 0..3u64 {
        let batch = sample_batch(&ds.train, p.batch_n, subseed(exp_seed, 40, 0)).unwrap();
        let rows: Vec<(Vec<f64>, f64, bool)> = genotypes
            .par_iter()
            .map(|&g| {
                let net = instantiate(&blueprint(g, &ds, p), subseed(exp_seed, 41, g.index()))
                    .unwrap();
                let scores: Vec<f64> = variants
                    .iter()
                    .map(|&(est, mode)| {
                        score_network(
                            &net,
                            &batch,
                            &MgmConfig {
                                per_layer_samples: 50,
                                seed: subseed(exp_seed, 42, g.index()),
                                estimator: est,
                                gradient_mode: mode,
                            },
                        )
                        .unwrap()
                        .value
                        .unwrap()
                    })
                    .collect();
                let curve = short_train(
                    &net,
                    &ds.train,
                    &ds.val,
                    &TrainConfig {
                        epochs: p.epochs,
                        lr: p.lr,
                        batch_size: 16,
                        seed: subseed(exp_seed, 43, g.index()),
                        objective: Objective::SoftmaxXent,
                    },
                )
                .unwrap();
                (
                    scores,
                    curve.final_val_accuracy().unwrap_or(0.0),
                    curve.diverged,
                )
            })
            .collect();
        let ys: Vec<f64> = rows.iter().filter(|r| !r.2).map(|r| r.1).collect();
        if exp_seed == 0 {
            for (g, row) in genotypes.iter().zip(&rows) {
                let convs = g
                    .edges
                    .iter()
                    .filter(|e| matches!(e, arch::EdgeOp::Conv1x1 | arch::EdgeOp::Conv3x3))
                    .count();
                println!(
                    "  acc {:.3} exact/loss {:+10.4e} split/loss {:+10.4e} convs {} {}",
                    row.1, row.0[0], row.0[4], convs, g
                );
            }
        }
        print!("seed {exp_seed}:");
        for (vi, &(est, mode)) in variants.iter().enumerate() {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| !r.2)
                .map(|r| r.0[vi])
                .collect();
            let rho = stats::spearman_rho(&xs, &ys).unwrap();
            print!("  {:?}/{:?} {rho:+.3}", est, mode);
        }
        println!();
    }
}

fn agg_experiment(p: &Params) {
    let ds = dataset(p.noise, p.n_train);
    let genotypes = arch::sample_cells(1, 30).unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let mut accs = vec![vec![0.0f64; seeds.len()]; genotypes.len()];
    let mut mgms = vec![vec![0.0f64; seeds.len()]; genotypes.len()];
    for (si, &exp_seed) in seeds.iter().enumerate() {
        let batch = sample_batch(&ds.train, p.batch_n, subseed(exp_seed, 40, 0)).unwrap();
        let rows: Vec<(f64, f64)> = genotypes
            .par_iter()
            .map(|&g| {
                let net = instantiate(&blueprint(g, &ds, p), subseed(exp_seed, 41, g.index()))
                    .unwrap();
                let score = score_network(
                    &net,
                    &batch,
                    &MgmConfig {
                        per_layer_samples: 50,
                        seed: subseed(exp_seed, 42, g.index()),
                        estimator: p.estimator,
                        gradient_mode: p.mode,
                    },
                )
                .unwrap();
                let curve = short_train(
                    &net,
                    &ds.train,
                    &ds.val,
                    &TrainConfig {
                        epochs: p.epochs,
                        lr: p.lr,
                        batch_size: 16,
                        seed: subseed(exp_seed, 43, g.index()),
                        objective: Objective::SoftmaxXent,
                    },
                )
                .unwrap();
                (score.value.unwrap(), curve.final_val_accuracy().unwrap_or(0.0))
            })
            .collect();
        for (gi, row) in rows.iter().enumerate() {
            mgms[gi][si] = row.0;
            accs[gi][si] = row.1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mean_accs: Vec<f64> = accs.iter().map(|v| mean(v)).collect();
    let mean_mgms: Vec<f64> = mgms.iter().map(|v| mean(v)).collect();
    let acc_stds: Vec<f64> = accs.iter().map(|v| std(v)).collect();
    for (gi, g) in genotypes.iter().enumerate() {
        println!(
            "  acc {:.3}+-{:.3}  mgm {:+10.4e}  {}",
            mean_accs[gi], acc_stds[gi], mean_mgms[gi], g
        );
    }
    println!(
        "rho(mean mgm, mean acc) = {:+.3}, mean per-genotype acc std = {:.3}",
        stats::spearman_rho(&mean_mgms, &mean_accs).unwrap(),
        mean(&acc_stds)
    );
    for si in 0..seeds.len() {
        let xs: Vec<f64> = (0..genotypes.len()).map(|gi| mgms[gi][si]).collect();
        let ys: Vec<f64> = (0..genotypes.len()).map(|gi| accs[gi][si]).collect();
        println!("  per-seed rho {}: {:+.3}", si, stats::spearman_rho(&xs, &ys).unwrap());
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("corr");
    let p = Params {
        noise: args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5),
        n_train: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128),
        width: args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8),
        cells: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2),
        epochs: args.get(6).and_then(|s| s.parse().ok()).unwrap_or(20),
        lr: args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.1),
        estimator: args
            .get(8)
            .map(|s| s.parse().unwrap())
            .unwrap_or(Estimator::SplitHalves),
        mode: args
            .get(9)
            .map(|s| s.parse().unwrap())
            .unwrap_or(GradientMode::Loss),
        batch_n: args.get(10).and_then(|s| s.parse().ok()).unwrap_or(32),
    };
    println!(
        "noise {} n_train {} width {} cells {} epochs {} lr {} {:?} {:?}",
        p.noise, p.n_train, p.width, p.cells, p.epochs, p.lr, p.estimator, p.mode
    );
    match mode {
        "corr" => corr_experiment(&p),
        "search" => search_experiment(&p),
        "diag" => diag_experiment(&p),
        "agg" => agg_experiment(&p),
        other => eprintln!("unknown mode {other}"),
    }
}
