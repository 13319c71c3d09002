//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use knaskit_core::arch::{self, Blueprint, CellGenotype, Head, InputSpec};
use knaskit_core::data::{self, Dataset, SyntheticSpec};
use knaskit_core::error::{Error, Result};
use knaskit_core::flow::{self, FlowConfig, FlowTrajectory};
use knaskit_core::gram::{score_network, Estimator, MgmConfig};
use knaskit_core::graph::GraphBuilder;
use knaskit_core::netbuild::{instantiate, GradientMode};
use knaskit_core::report::{save_report, Report, Timings, TrialRecord, TrialTiming};
use knaskit_core::search::{
    knas_search, random_search_baseline, rank_by_score, Policy, SearchConfig, SearchReport,
};
use knaskit_core::seed::subseed;
use knaskit_core::stats;
use knaskit_core::tensor::Tensor;
use knaskit_core::trainer::{short_train, Objective, TrainConfig};

use crate::config::{parse_shape, Resolved};
use crate::{
    CorrelateArgs, GenDataArgs, ReportArgs, ScoreArgs, SearchArgs, VerifyBoundArgs,
};

pub struct Common {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
}

fn resolve(common: &Common, defaults: &[(&str, String)]) -> Result<Resolved> {
    let mut resolved = Resolved::from_defaults(defaults);
    if let Some(path) = &common.config {
        resolved.apply_file(path)?;
    }
    resolved.apply_overrides(&common.overrides)?;
    Ok(resolved)
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

/// Config map embedded in report.json. Filesystem locations stay out of it
/// so identical seeds reproduce identical bytes regardless of where the run
/// lands; the full map lives in config.resolved.txt.
fn report_config(cfg: &Resolved) -> std::collections::BTreeMap<String, String> {
    let mut map = cfg.map().clone();
    for key in ["out", "data", "from", "cifar_dir"] {
        map.remove(key);
    }
    map
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(common: &Common, args: GenDataArgs) -> Result<u8> {
    let mut cfg = resolve(
        common,
        &[
            ("source", s("synth")),
            ("classes", s(4)),
            ("n_train", s(256)),
            ("n_val", s(128)),
            ("shape", s("3x8x8")),
            ("noise", s(0.3)),
            ("seed", s(0)),
            ("cifar_dir", String::new()),
            ("cifar_take_train", s(2048)),
            ("cifar_take_val", s(512)),
        ],
    )?;
    cfg.set_if_some("source", &args.source);
    cfg.set_if_some("classes", &args.classes);
    cfg.set_if_some("n_train", &args.n);
    cfg.set_if_some("n_val", &args.val_n);
    cfg.set_if_some("shape", &args.shape);
    cfg.set_if_some("noise", &args.noise);
    cfg.set_if_some("seed", &args.seed);
    cfg.set_if_some(
        "cifar_dir",
        &args.cifar_dir.as_ref().map(|p| p.display().to_string()),
    );
    cfg.set("out", args.out.display().to_string());
    cfg.persist(&args.out)?;

    let before: Vec<Option<Vec<u8>>> = data::dataset_paths(&args.out)
        .iter()
        .map(|p| fs::read(p).ok())
        .collect();

    let dataset = match cfg.get("source")? {
        "synth" => {
            let spec = SyntheticSpec {
                classes: cfg.get_usize("classes")?,
                shape: parse_shape(cfg.get("shape")?)?,
                n_train: cfg.get_usize("n_train")?,
                n_val: cfg.get_usize("n_val")?,
                noise: cfg.get_f64("noise")?,
                seed: cfg.get_u64("seed")?,
            };
            data::gen_synthetic(&spec, &args.out)?
        }
        "cifar" => {
            let dir = cfg.get("cifar_dir")?;
            if dir.is_empty() {
                return Err(Error::contract(
                    "--cifar-dir is required with source=cifar",
                ));
            }
            let ds = data::ingest_cifar10(
                Path::new(dir),
                cfg.get_usize("cifar_take_train")?,
                cfg.get_usize("cifar_take_val")?,
            )?;
            data::save_dataset(&args.out, &ds, "cifar", 0.0, cfg.get_u64("seed")?)?;
            ds
        }
        other => {
            return Err(Error::contract(format!(
                "source must be synth or cifar, got {other:?}"
            )))
        }
    };

    let after: Vec<Option<Vec<u8>>> = data::dataset_paths(&args.out)
        .iter()
        .map(|p| fs::read(p).ok())
        .collect();
    let unchanged = before.iter().all(|b| b.is_some()) && before == after;

    println!("dataset: {}", data::describe(&dataset));
    println!("written to {}", args.out.display());
    if unchanged {
        println!("unchanged: files match the previous run byte for byte");
    }
    Ok(0)
}

// ------------------------------------------------------------------ score

fn scoring_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("seed", s(0)),
        ("estimator", s("split_halves")),
        ("mode", s("loss")),
        ("m_samples", s(50)),
        ("batch_n", s(32)),
        ("width", s(8)),
        ("cells", s(2)),
    ]
}

fn mgm_config_from(cfg: &Resolved) -> Result<MgmConfig> {
    Ok(MgmConfig {
        per_layer_samples: cfg.get_usize("m_samples")?,
        seed: cfg.get_u64("seed")?,
        estimator: cfg.get("estimator")?.parse::<Estimator>()?,
        gradient_mode: cfg.get("mode")?.parse::<GradientMode>()?,
    })
}

fn blueprint_for(genotype: CellGenotype, dataset: &Dataset, width: usize, cells: usize) -> Result<Blueprint> {
    let input = match dataset.shape.as_slice() {
        [c, h, w] => InputSpec::Image {
            channels: *c,
            height: *h,
            width: *w,
        },
        other => {
            return Err(Error::contract(format!(
                "cell architectures need image data, got shape {other:?}"
            )))
        }
    };
    Ok(Blueprint::chain(
        genotype,
        input,
        width,
        cells,
        Head::Classifier {
            classes: dataset.classes,
        },
    ))
}

/// Scores genotypes with the same per-genotype subseed scheme the search
/// uses, so `score` and `search` agree on every value.
fn score_genotypes(
    genotypes: &[CellGenotype],
    dataset: &Dataset,
    cfg: &Resolved,
) -> Result<(Vec<TrialRecord>, Timings)> {
    let seed = cfg.get_u64("seed")?;
    let mgm = mgm_config_from(cfg)?;
    let width = cfg.get_usize("width")?;
    let cells = cfg.get_usize("cells")?;
    let batch = data::sample_batch(
        &dataset.train,
        cfg.get_usize("batch_n")?,
        subseed(seed, 40, 0),
    )?;

    let mut trials = Vec::with_capacity(genotypes.len());
    let mut per_trial = Vec::with_capacity(genotypes.len());
    let mut total = 0.0;
    for &genotype in genotypes {
        let started = Instant::now();
        let net_seed = subseed(seed, 41, genotype.index());
        let bp = blueprint_for(genotype, dataset, width, cells)?;
        let net = instantiate(&bp, net_seed)?;
        let score = score_network(
            &net,
            &batch,
            &MgmConfig {
                seed: subseed(mgm.seed, 42, genotype.index()),
                ..mgm.clone()
            },
        )?;
        let secs = started.elapsed().as_secs_f64();
        total += secs;
        trials.push(TrialRecord::new(genotype, net_seed).with_score(&score));
        per_trial.push(TrialTiming {
            genotype,
            score_secs: Some(secs),
            train_secs: None,
        });
    }

    let keyed: Vec<(u64, Option<f64>)> = trials
        .iter()
        .map(|t| (t.genotype_index, t.mgm))
        .collect();
    for (rank, pos) in rank_by_score(&keyed).into_iter().enumerate() {
        trials[pos].mgm_rank = Some(rank + 1);
    }

    let timings = Timings {
        scoring_total_secs: total,
        training_total_secs: 0.0,
        mean_score_secs: (!genotypes.is_empty()).then(|| total / genotypes.len() as f64),
        mean_train_secs: None,
        speedup_ratio: None,
        per_trial,
    };
    Ok((trials, timings))
}

pub fn score(common: &Common, args: ScoreArgs) -> Result<u8> {
    let mut defaults = scoring_defaults();
    defaults.push(("sample", s(0)));
    defaults.push(("arch", String::new()));
    let mut cfg = resolve(common, &defaults)?;
    cfg.set_if_some("seed", &args.seed);
    cfg.set_if_some("estimator", &args.estimator);
    cfg.set_if_some("mode", &args.mode);
    cfg.set_if_some("m_samples", &args.m_samples);
    cfg.set_if_some("batch_n", &args.batch_n);
    cfg.set_if_some("width", &args.width);
    cfg.set_if_some("cells", &args.cells);
    cfg.set_if_some("sample", &args.sample);
    cfg.set_if_some("arch", &args.arch);
    cfg.set("data", args.data.display().to_string());
    cfg.set("out", args.out.display().to_string());
    cfg.persist(&args.out)?;

    let genotypes: Vec<CellGenotype> = {
        let arch_str = cfg.get("arch")?;
        let sample = cfg.get_usize("sample")?;
        if !arch_str.is_empty() {
            vec![arch_str.parse()?]
        } else if sample > 0 {
            arch::sample_cells(cfg.get_u64("seed")?, sample)?
        } else {
            return Err(Error::contract(
                "pass --arch GENOTYPE or --sample N to pick architectures",
            ));
        }
    };

    let dataset = data::load_dataset(&args.data)?;
    let (trials, timings) = score_genotypes(&genotypes, &dataset, &cfg)?;

    let ok = trials
        .iter()
        .filter(|t| t.mgm_numeric_ok == Some(true))
        .count();
    let report = Report::new(report_config(&cfg), trials);
    save_report(&args.out, &report, &timings)?;
    knaskit_core::report::write_trials_csv(&args.out.join("trials.csv"), &report.trials)?;

    println!(
        "scored {} architectures ({} numerically ok) -> {}",
        report.trials.len(),
        ok,
        args.out.join("report.json").display()
    );
    for t in report.trials.iter().take(5) {
        println!(
            "  rank {:>3}  mgm {:>14}  {}",
            t.mgm_rank.unwrap_or(0),
            t.mgm.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "failed".into()),
            t.genotype
        );
    }
    Ok(0)
}

// ----------------------------------------------------------------- search

fn train_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("epochs", s(20)),
        ("lr", s(0.1)),
        ("batch_size", s(16)),
    ]
}

fn train_config_from(cfg: &Resolved) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: cfg.get_usize("epochs")?,
        lr: cfg.get_f64("lr")?,
        batch_size: cfg.get_usize("batch_size")?,
        seed: cfg.get_u64("seed")?,
        objective: Objective::SoftmaxXent,
    })
}

fn search_config_from(cfg: &Resolved) -> Result<SearchConfig> {
    Ok(SearchConfig {
        m: cfg.get_usize("m")?,
        k: cfg.get_usize("k")?,
        mgm: mgm_config_from(cfg)?,
        train: train_config_from(cfg)?,
        seed: cfg.get_u64("seed")?,
        score_batch_n: cfg.get_usize("batch_n")?,
        width: cfg.get_usize("width")?,
        num_cells: cfg.get_usize("cells")?,
    })
}

fn persist_search(out: &Path, cfg: &Resolved, outcome: &SearchReport) -> Result<()> {
    let mut config = report_config(cfg);
    if !outcome.flags.is_empty() {
        config.insert("flags".to_string(), outcome.flags.join("; "));
    }
    config.insert(
        "best".to_string(),
        outcome.best.to_string(),
    );
    let report = Report::new(config, outcome.trials.clone());
    save_report(out, &report, &outcome.timings)?;
    knaskit_core::report::write_trials_csv(&out.join("trials.csv"), &report.trials)?;
    Ok(())
}

pub fn search(common: &Common, args: SearchArgs) -> Result<u8> {
    let mut defaults = scoring_defaults();
    defaults.extend(train_defaults());
    defaults.push(("policy", s("knas")));
    defaults.push(("m", s(100)));
    defaults.push(("k", s(20)));
    let mut cfg = resolve(common, &defaults)?;
    cfg.set_if_some("policy", &args.policy);
    cfg.set_if_some("m", &args.m);
    cfg.set_if_some("k", &args.k);
    cfg.set_if_some("seed", &args.seed);
    cfg.set_if_some("epochs", &args.epochs);
    cfg.set_if_some("lr", &args.lr);
    cfg.set_if_some("batch_size", &args.batch_size);
    cfg.set_if_some("estimator", &args.estimator);
    cfg.set_if_some("mode", &args.mode);
    cfg.set_if_some("m_samples", &args.m_samples);
    cfg.set_if_some("batch_n", &args.batch_n);
    cfg.set_if_some("width", &args.width);
    cfg.set_if_some("cells", &args.cells);
    cfg.set("data", args.data.display().to_string());
    cfg.set("out", args.out.display().to_string());
    cfg.persist(&args.out)?;

    let dataset = data::load_dataset(&args.data)?;
    let search_cfg = search_config_from(&cfg)?;
    let outcome = match cfg.get("policy")? {
        "knas" => knas_search(&dataset, &search_cfg)?,
        "random" => random_search_baseline(&dataset, search_cfg.k, &search_cfg)?,
        other => {
            return Err(Error::contract(format!(
                "policy must be knas or random, got {other:?}"
            )))
        }
    };
    persist_search(&args.out, &cfg, &outcome)?;

    let policy = match outcome.policy {
        Policy::Knas => "knas",
        Policy::Random => "random",
    };
    println!("policy: {policy}");
    println!("best genotype: {}", outcome.best);
    if let Some(best) = outcome
        .trials
        .iter()
        .find(|t| t.genotype == outcome.best)
        .and_then(|t| t.final_val_acc)
    {
        println!("final validation accuracy: {best:.4}");
    }
    if let Some(ratio) = outcome.timings.speedup_ratio {
        println!("speedup vs full evaluation: {ratio:.2}x");
    }
    for flag in &outcome.flags {
        println!("note: {flag}");
    }
    println!("report written to {}", args.out.join("report.json").display());
    Ok(0)
}

// -------------------------------------------------------------- correlate

pub fn correlate(common: &Common, args: CorrelateArgs) -> Result<u8> {
    let mut defaults = scoring_defaults();
    defaults.extend(train_defaults());
    defaults.push(("groups", s(4)));
    defaults.push(("sample", s(0)));
    defaults.push(("from", String::new()));
    defaults.push(("permutations", s(10_000)));

    // A prior run's resolved settings become the defaults so retraining
    // matches its scoring setup.
    let prior = match &args.from {
        Some(dir) => {
            let report = knaskit_core::report::load_report(&dir.join("report.json"))?;
            for (key, value) in &report.config {
                if let Some(slot) = defaults.iter_mut().find(|(k, _)| k == key) {
                    slot.1 = value.clone();
                }
            }
            Some(report)
        }
        None => None,
    };

    let mut cfg = resolve(common, &defaults)?;
    cfg.set_if_some("groups", &args.groups);
    cfg.set_if_some("sample", &args.sample);
    cfg.set_if_some("seed", &args.seed);
    cfg.set_if_some("epochs", &args.epochs);
    cfg.set_if_some("lr", &args.lr);
    cfg.set_if_some("batch_size", &args.batch_size);
    cfg.set_if_some("estimator", &args.estimator);
    cfg.set_if_some("mode", &args.mode);
    cfg.set_if_some("m_samples", &args.m_samples);
    cfg.set_if_some("batch_n", &args.batch_n);
    cfg.set_if_some("width", &args.width);
    cfg.set_if_some("cells", &args.cells);
    cfg.set_if_some("from", &args.from.as_ref().map(|p| p.display().to_string()));
    cfg.set("data", args.data.display().to_string());
    cfg.set("out", args.out.display().to_string());
    cfg.set("train", args.train);
    cfg.persist(&args.out)?;

    let dataset = data::load_dataset(&args.data)?;

    let (mut trials, mut timings) = match prior {
        Some(report) => (report.trials, Timings::default()),
        None => {
            let sample = cfg.get_usize("sample")?;
            if sample == 0 {
                return Err(Error::contract(
                    "pass --from RUNDIR or --sample N to pick architectures",
                ));
            }
            let genotypes = arch::sample_cells(cfg.get_u64("seed")?, sample)?;
            score_genotypes(&genotypes, &dataset, &cfg)?
        }
    };

    if trials.iter().any(|t| t.mgm.is_none()) {
        let bad: Vec<String> = trials
            .iter()
            .filter(|t| t.mgm.is_none())
            .map(|t| t.genotype.to_string())
            .collect();
        return Err(Error::contract(format!(
            "records without MGM scores cannot be correlated: {}",
            bad.join(", ")
        )));
    }

    let untrained: Vec<usize> = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.final_val_acc.is_none())
        .map(|(i, _)| i)
        .collect();
    if !untrained.is_empty() {
        if !args.train {
            let names: Vec<String> = untrained
                .iter()
                .map(|&i| trials[i].genotype.to_string())
                .collect();
            return Err(Error::contract(format!(
                "{} records lack accuracies (pass --train to train them): {}",
                names.len(),
                names.join(", ")
            )));
        }
        let width = cfg.get_usize("width")?;
        let cells = cfg.get_usize("cells")?;
        let train_cfg = train_config_from(&cfg)?;
        let mut total = 0.0;
        for &i in &untrained {
            let started = Instant::now();
            let genotype = trials[i].genotype;
            let bp = blueprint_for(genotype, &dataset, width, cells)?;
            let net = instantiate(&bp, trials[i].seed)?;
            let curve = short_train(
                &net,
                &dataset.train,
                &dataset.val,
                &TrainConfig {
                    seed: subseed(train_cfg.seed, 43, genotype.index()),
                    ..train_cfg.clone()
                },
            )?;
            let secs = started.elapsed().as_secs_f64();
            total += secs;
            trials[i] = trials[i].clone().with_curve(&curve);
            if let Some(slot) = timings
                .per_trial
                .iter_mut()
                .find(|t| t.genotype == genotype)
            {
                slot.train_secs = Some(secs);
            } else {
                timings.per_trial.push(TrialTiming {
                    genotype,
                    score_secs: None,
                    train_secs: Some(secs),
                });
            }
        }
        timings.training_total_secs = total;
        timings.mean_train_secs = Some(total / untrained.len() as f64);
    }

    let xs: Vec<f64> = trials.iter().map(|t| t.mgm.unwrap()).collect();
    let ys: Vec<f64> = trials.iter().map(|t| t.final_val_acc.unwrap()).collect();
    let correlation = stats::spearman_with(
        &xs,
        &ys,
        cfg.get_usize("permutations")?,
        cfg.get_u64("seed")?,
    )?;
    let groups = stats::rank_group_summary(&trials, cfg.get_usize("groups")?)?;

    let mut report = Report::new(report_config(&cfg), trials);
    report.correlation = Some(correlation.clone());
    save_report(&args.out, &report, &timings)?;
    knaskit_core::report::write_trials_csv(&args.out.join("trials.csv"), &report.trials)?;
    let gpath = args.out.join("groups.csv");
    fs::write(&gpath, stats::groups_csv(&groups)).map_err(|e| Error::io(&gpath, e))?;

    println!(
        "spearman rho = {:.4}, p = {:.4} ({} trials)",
        correlation.spearman_rho, correlation.p_value, correlation.n
    );
    for row in &groups {
        println!(
            "  group {} (n={}): mean mgm {:.4e}, mean val acc {:.4}",
            row.group, row.size, row.mean_mgm, row.mean_val_acc
        );
    }
    println!("report written to {}", args.out.join("report.json").display());
    Ok(0)
}

// ----------------------------------------------------------- verify-bound

enum FlowNet {
    Graph(knaskit_core::Graph),
    Cells(Vec<CellGenotype>),
}

pub fn verify_bound(common: &Common, args: VerifyBoundArgs) -> Result<u8> {
    if let Some(replay) = &args.replay {
        let text = fs::read_to_string(replay).map_err(|e| Error::io(replay, e))?;
        let traj = FlowTrajectory::from_csv(&text)?;
        let report = flow::check_bound(&traj);
        if report.holds {
            println!(
                "bound holds over {} points (min margin {:.3e})",
                traj.len(),
                report.min_margin
            );
            return Ok(0);
        }
        println!(
            "bound violated at indices {:?} (min margin {:.3e})",
            report.violations, report.min_margin
        );
        return Ok(1);
    }

    let mut cfg = resolve(
        common,
        &[
            ("net", s("mlp")),
            ("arch", String::new()),
            ("sample", s(0)),
            ("width", s(64)),
            ("n", s(16)),
            ("input_dim", s(16)),
            ("shape", s("3x4x4")),
            ("mu", String::new()),
            ("horizon", s(1.0)),
            ("record_every", s(0.0)),
            ("seed", s(0)),
            ("cells", s(1)),
        ],
    )?;
    cfg.set_if_some("net", &args.net);
    cfg.set_if_some("arch", &args.arch);
    cfg.set_if_some("sample", &args.sample);
    cfg.set_if_some("width", &args.width);
    cfg.set_if_some("n", &args.n);
    cfg.set_if_some("input_dim", &args.input_dim);
    cfg.set_if_some("shape", &args.shape);
    cfg.set_if_some("mu", &args.mu);
    cfg.set_if_some("horizon", &args.horizon);
    cfg.set_if_some("record_every", &args.record_every);
    cfg.set_if_some("seed", &args.seed);
    cfg.set("out", args.out.display().to_string());
    cfg.persist(&args.out)?;

    let seed = cfg.get_u64("seed")?;
    let width = cfg.get_usize("width")?;
    let n = cfg.get_usize("n")?;
    let horizon = cfg.get_f64("horizon")?;
    let record_every = {
        let r = cfg.get_f64("record_every")?;
        if r > 0.0 {
            r
        } else {
            horizon / 50.0
        }
    };
    let step = {
        let raw = cfg.get("mu")?;
        if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<f64>().map_err(|_| {
                Error::contract(format!("mu must be a number, got {raw:?}"))
            })?)
        }
    };
    let flow_cfg = FlowConfig {
        step,
        horizon,
        record_every,
        ..Default::default()
    };

    let (net, batch_shape): (FlowNet, Vec<usize>) = match cfg.get("net")? {
        "linear" => {
            let dim = cfg.get_usize("input_dim")?;
            let mut b = GraphBuilder::new(&[dim]);
            let w = Tensor::zeros(&[1, dim]);
            let y = b.linear_with(b.input(), w, None, true)?;
            let out = b.sum_output(y)?;
            let mut graph = b.finish_with_mse(out)?;
            graph.init_params(subseed(seed, 50, 0));
            (FlowNet::Graph(graph), vec![dim])
        }
        "mlp" => {
            let dim = cfg.get_usize("input_dim")?;
            let mut b = GraphBuilder::new(&[dim]);
            let mut h = b.linear(b.input(), width)?;
            h = b.relu(h)?;
            h = b.linear(h, width)?;
            h = b.relu(h)?;
            let out = b.sum_output(h)?;
            let mut graph = b.finish_with_mse(out)?;
            graph.init_params(subseed(seed, 50, 0));
            (FlowNet::Graph(graph), vec![dim])
        }
        "cell" => {
            let arch_str = cfg.get("arch")?;
            let sample = cfg.get_usize("sample")?;
            let genotypes = if !arch_str.is_empty() {
                vec![arch_str.parse()?]
            } else if sample > 0 {
                arch::sample_cells(seed, sample)?
            } else {
                return Err(Error::contract(
                    "net=cell needs --arch GENOTYPE or --sample N",
                ));
            };
            (FlowNet::Cells(genotypes), parse_shape(cfg.get("shape")?)?)
        }
        other => {
            return Err(Error::contract(format!(
                "net must be linear, mlp, or cell, got {other:?}"
            )))
        }
    };

    let batch = data::random_regression_batch(&batch_shape, n, subseed(seed, 51, 0))?;

    let mut runs: Vec<(String, FlowTrajectory)> = Vec::new();
    match net {
        FlowNet::Graph(graph) => {
            let traj = flow::gradient_flow_graph(&graph, &batch, &flow_cfg)?;
            runs.push((cfg.get("net")?.to_string(), traj));
        }
        FlowNet::Cells(genotypes) => {
            let [c, h, w] = batch_shape[..] else {
                return Err(Error::contract("cell nets need a CxHxW shape"));
            };
            for genotype in genotypes {
                let bp = Blueprint::chain(
                    genotype,
                    InputSpec::Image {
                        channels: c,
                        height: h,
                        width: w,
                    },
                    width,
                    cfg.get_usize("cells")?,
                    Head::Scalar,
                );
                let net = instantiate(&bp, subseed(seed, 41, genotype.index()))?;
                let traj = flow::gradient_flow(&net, &batch, &flow_cfg)?;
                runs.push((genotype.to_string(), traj));
            }
        }
    }

    let mut all_hold = true;
    let mut summary = Vec::new();
    for (idx, (name, traj)) in runs.iter().enumerate() {
        let path = if runs.len() == 1 {
            args.out.join("trajectory.csv")
        } else {
            args.out.join(format!("trajectory_{idx}.csv"))
        };
        fs::write(&path, traj.to_csv()).map_err(|e| Error::io(&path, e))?;
        let report = flow::check_bound(traj);
        all_hold &= report.holds;
        println!(
            "{name}: {} over {} points (min margin {:.3e})",
            if report.holds { "bound holds" } else { "BOUND VIOLATED" },
            traj.len(),
            report.min_margin
        );
        summary.push(serde_json::json!({
            "net": name,
            "points": traj.len(),
            "holds": report.holds,
            "min_margin": report.min_margin,
            "violations": report.violations,
            "tolerance": report.tolerance,
        }));
    }
    let spath = args.out.join("bound_summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&spath, text).map_err(|e| Error::io(&spath, e))?;

    Ok(if all_hold { 0 } else { 1 })
}

// ----------------------------------------------------------------- report

pub fn report(_common: &Common, args: ReportArgs) -> Result<u8> {
    let report = knaskit_core::report::load_report(&args.run.join("report.json"))?;
    println!("schema v{}, {} trials", report.schema_version, report.trials.len());
    if let Some(best) = report.config.get("best") {
        println!("best genotype: {best}");
    }
    if let Some(flags) = report.config.get("flags") {
        println!("flags: {flags}");
    }

    let mut ranked: Vec<&TrialRecord> = report.trials.iter().filter(|t| t.mgm.is_some()).collect();
    ranked.sort_by(|a, b| b.mgm.partial_cmp(&a.mgm).unwrap());
    if !ranked.is_empty() {
        println!("top architectures by score:");
        for t in ranked.iter().take(5) {
            println!(
                "  mgm {:>14}  val_acc {}  {}",
                t.mgm.map(|v| format!("{v:.6e}")).unwrap_or_default(),
                t.final_val_acc
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".into()),
                t.genotype
            );
        }
    }
    if let Some(corr) = &report.correlation {
        println!(
            "correlation: rho = {:.4}, p = {:.4} (n = {})",
            corr.spearman_rho, corr.p_value, corr.n
        );
    }
    let timings_path = args.run.join("timings.json");
    if let Ok(text) = fs::read_to_string(&timings_path) {
        let timings: Timings = serde_json::from_str(&text)?;
        println!(
            "timings: scoring {:.2}s, training {:.2}s{}",
            timings.scoring_total_secs,
            timings.training_total_secs,
            timings
                .speedup_ratio
                .map(|r| format!(", speedup {r:.2}x"))
                .unwrap_or_default()
        );
    }
    Ok(0)
}
