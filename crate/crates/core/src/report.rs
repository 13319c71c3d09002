//! Persistence: trial records, run reports, timings, and CSV exports.
//!
//! Reports serialize to schema-versioned JSON. Wall-clock times live in a
//! separate timings file so that rerunning a command with identical seeds
//! reproduces `report.json` and every CSV byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::CellGenotype;
use crate::error::{Error, Result};
use crate::gram::{Estimator, MgmScore};
use crate::stats::CorrelationReport;
use crate::trainer::EvalCurve;

pub const SCHEMA_VERSION: u32 = 1;

/// Eval curve stripped of wall-clock time for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub diverged: bool,
}

impl From<&EvalCurve> for CurveRecord {
    fn from(c: &EvalCurve) -> Self {
        CurveRecord {
            train_loss: c.train_loss.clone(),
            val_accuracy: c.val_accuracy.clone(),
            val_loss: c.val_loss.clone(),
            diverged: c.diverged,
        }
    }
}

/// One architecture's results within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub genotype: CellGenotype,
    pub genotype_index: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgm_estimator: Option<Estimator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgm_numeric_ok: Option<bool>,
    /// 1-based rank by descending score; numeric failures rank last.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgm_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_val_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveRecord>,
}

impl TrialRecord {
    pub fn new(genotype: CellGenotype, seed: u64) -> Self {
        TrialRecord {
            genotype,
            genotype_index: genotype.index(),
            seed,
            mgm: None,
            mgm_estimator: None,
            mgm_numeric_ok: None,
            mgm_rank: None,
            final_val_acc: None,
            final_train_loss: None,
            curve: None,
        }
    }

    pub fn with_score(mut self, score: &MgmScore) -> Self {
        self.mgm = score.value;
        self.mgm_estimator = Some(score.estimator);
        self.mgm_numeric_ok = Some(score.numeric_ok);
        self
    }

    pub fn with_curve(mut self, curve: &EvalCurve) -> Self {
        self.final_val_acc = curve.final_val_accuracy();
        self.final_train_loss = curve.final_train_loss();
        self.curve = Some(CurveRecord::from(curve));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub genotype: CellGenotype,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_secs: Option<f64>,
}

/// Wall-clock accounting for a run; persisted separately from the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub scoring_total_secs: f64,
    pub training_total_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_score_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_train_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_ratio: Option<f64>,
    pub per_trial: Vec<TrialTiming>,
}

/// Schema v1 run report: `{schema_version, config, trials, correlation?,
/// timings?}`. The CLI persists `timings` in its own file and leaves the
/// field empty here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: BTreeMap<String, String>,
    pub trials: Vec<TrialRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl Report {
    pub fn new(config: BTreeMap<String, String>, trials: Vec<TrialRecord>) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            config,
            trials,
            correlation: None,
            timings: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Report = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::contract(format!(
                "unsupported report schema_version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

/// Writes `report.json` (timings stripped) plus `timings.json` under `dir`.
pub fn save_report(dir: &Path, report: &Report, timings: &Timings) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stable = report.clone();
    stable.timings = None;
    let path = dir.join("report.json");
    fs::write(&path, stable.to_json()?).map_err(|e| Error::io(&path, e))?;
    let tpath = dir.join("timings.json");
    let mut tjson = serde_json::to_string_pretty(timings)?;
    tjson.push('\n');
    fs::write(&tpath, tjson).map_err(|e| Error::io(&tpath, e))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Report::from_json(&text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `trials.csv`: columns genotype, mgm, rank, val_acc.
pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from("genotype,mgm,rank,val_acc\n");
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.genotype,
            fmt_opt(t.mgm),
            t.mgm_rank.map(|r| r.to_string()).unwrap_or_default(),
            fmt_opt(t.final_val_acc),
        ));
    }
    out
}

pub fn write_trials_csv(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    fs::write(path, trials_csv(trials)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trial(idx: u64) -> TrialRecord {
        let genotype = CellGenotype::from_index(idx).unwrap();
        TrialRecord {
            mgm: Some(1.25 + idx as f64),
            mgm_estimator: Some(Estimator::SplitHalves),
            mgm_numeric_ok: Some(true),
            mgm_rank: Some(idx as usize + 1),
            final_val_acc: Some(0.75),
            final_train_loss: Some(0.5),
            curve: Some(CurveRecord {
                train_loss: vec![1.0, 0.5],
                val_accuracy: vec![0.5, 0.75],
                val_loss: vec![1.1, 0.9],
                diverged: false,
            }),
            ..TrialRecord::new(genotype, 7)
        }
    }

    #[test]
    fn report_roundtrips_through_json() {
        let mut config = BTreeMap::new();
        config.insert("seed".to_string(), "1".to_string());
        config.insert("m".to_string(), "100".to_string());
        let report = Report::new(config, vec![sample_trial(0), sample_trial(311)]);
        let json = report.to_json().unwrap();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(report, back);
        // Serialization is stable: a second pass is byte-identical.
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let mut report = Report::new(BTreeMap::new(), vec![]);
        report.schema_version = 99;
        let json = serde_json::to_string(&report).unwrap();
        assert!(Report::from_json(&json).is_err());
    }

    #[test]
    fn trials_csv_has_expected_columns() {
        let csv = trials_csv(&[sample_trial(5)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "genotype,mgm,rank,val_acc");
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], CellGenotype::from_index(5).unwrap().to_string());
        assert_eq!(fields[1], "6.25");
        assert_eq!(fields[2], "6");
        assert_eq!(fields[3], "0.75");
    }

    #[test]
    fn missing_fields_serialize_as_empty_csv_cells() {
        let record = TrialRecord::new(CellGenotype::all_none(), 0);
        let csv = trials_csv(&[record]);
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(row, "none|none|none|none|none|none,,,");
    }

    #[test]
    fn save_and_load_strip_timings(){
        let dir = tempfile::tempdir().unwrap();
        let report = Report {
            timings: Some(Timings::default()),
            ..Report::new(BTreeMap::new(), vec![sample_trial(1)])
        };
        let timings = Timings {
            scoring_total_secs: 1.5,
            training_total_secs: 30.0,
            mean_score_secs: Some(0.015),
            mean_train_secs: Some(6.0),
            speedup_ratio: Some(8.0),
            per_trial: vec![],
        };
        save_report(dir.path(), &report, &timings).unwrap();
        let loaded = load_report(&dir.path().join("report.json")).unwrap();
        assert!(loaded.timings.is_none());
        assert_eq!(loaded.trials, report.trials);
        let t: Timings = serde_json::from_str(
            &fs::read_to_string(dir.path().join("timings.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(t, timings);
    }
}
