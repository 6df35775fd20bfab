//! JSON-lines run reports: a config echo, one record per epoch, then a
//! summary. Fields whose names end in `_ns` are wall-clock measurements and
//! are the only fields allowed to differ between two runs of one config.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

/// Balanced test accuracy; a group with no classes is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub overall: f64,
    pub head: Option<f64>,
    pub med: Option<f64>,
    pub tail: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// 1 for the unweighted stage, 2 for the re-weighted stage.
    pub stage: u8,
    pub train_loss: f64,
    pub weights_all_ones: bool,
    /// SHA-256 of the class weights' little-endian bytes.
    pub weights_hash: String,
    pub accuracy: GroupAccuracy,
    pub forward: u64,
    pub backward: u64,
    pub steps: u64,
    pub wall_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSummary {
    pub flatness: Option<f64>,
    pub center: f64,
    pub resolution: usize,
    pub range: f64,
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub status: RunStatus,
    pub epochs: usize,
    pub final_accuracy: Option<GroupAccuracy>,
    pub train_counts: Vec<usize>,
    pub forward: u64,
    pub backward: u64,
    pub steps: u64,
    pub mean_step_ns: f64,
    pub wall_ns: u64,
    /// FNV-1a of the trained parameters' bits, hex.
    pub params_checksum: String,
    pub landscape: Option<LandscapeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Config(RunConfig),
    Epoch(EpochRecord),
    Summary(Summary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub epochs: Vec<EpochRecord>,
    pub summary: Summary,
}

pub fn weights_hash(weights: &[f64]) -> String {
    let mut h = Sha256::new();
    for w in weights {
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn config_line(cfg: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string(&Line::Config(cfg.clone()))?)
}

pub(crate) fn epoch_line(rec: &EpochRecord) -> Result<String> {
    Ok(serde_json::to_string(&Line::Epoch(rec.clone()))?)
}

pub(crate) fn summary_line(s: &Summary) -> Result<String> {
    Ok(serde_json::to_string(&Line::Summary(s.clone()))?)
}

impl RunReport {
    pub fn is_completed(&self) -> bool {
        self.summary.status == RunStatus::Completed
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", config_line(&self.config)?)?;
        for e in &self.epochs {
            writeln!(w, "{}", epoch_line(e)?)?;
        }
        writeln!(w, "{}", summary_line(&self.summary)?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut config = None;
        let mut epochs = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: Line =
                serde_json::from_str(line).map_err(|e| Error::Report(format!("line {}: {e}", i + 1)))?;
            match parsed {
                Line::Config(c) => config = Some(c),
                Line::Epoch(e) => epochs.push(e),
                Line::Summary(s) => summary = Some(s),
            }
        }
        Ok(Self {
            config: config.ok_or_else(|| Error::Report("missing config record".into()))?,
            epochs,
            summary: summary.ok_or_else(|| Error::Report("missing summary record".into()))?,
        })
    }

    /// The report as JSON lines with every `*_ns` field removed and, unless
    /// `with_config`, without the config echo. Two runs that agree on this
    /// string differ only in timing.
    pub fn masked(&self, with_config: bool) -> String {
        let mut out = String::new();
        let text = self.to_jsonl();
        for line in text.lines() {
            let mut v: Value = serde_json::from_str(line).expect("own output parses");
            if !with_config && v["record"] == "config" {
                continue;
            }
            strip_time_fields(&mut v);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

fn strip_time_fields(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_ns"));
            map.values_mut().for_each(strip_time_fields);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_time_fields),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let acc = GroupAccuracy {
            overall: 0.5,
            head: Some(0.9),
            med: None,
            tail: Some(0.1),
        };
        RunReport {
            config: RunConfig::default(),
            epochs: vec![EpochRecord {
                epoch: 1,
                stage: 1,
                train_loss: 1.25,
                weights_all_ones: true,
                weights_hash: weights_hash(&[1.0, 1.0]),
                accuracy: acc.clone(),
                forward: 3,
                backward: 3,
                steps: 3,
                wall_ns: 1234,
            }],
            summary: Summary {
                status: RunStatus::Completed,
                epochs: 1,
                final_accuracy: Some(acc),
                train_counts: vec![5, 1],
                forward: 3,
                backward: 3,
                steps: 3,
                mean_step_ns: 411.3,
                wall_ns: 1234,
                params_checksum: "00ff".into(),
                landscape: None,
            },
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let r = sample();
        let text = r.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().contains("\"record\":\"summary\""));
        assert_eq!(RunReport::from_jsonl(&text).unwrap(), r);
    }

    #[test]
    fn masking_ignores_only_time() {
        let a = sample();
        let mut b = sample();
        b.epochs[0].wall_ns = 99;
        b.summary.mean_step_ns = 1.0;
        b.summary.wall_ns = 7;
        assert_eq!(a.masked(true), b.masked(true));
        b.epochs[0].train_loss = 1.0;
        assert_ne!(a.masked(true), b.masked(true));
    }

    #[test]
    fn masking_can_drop_config() {
        let a = sample();
        let mut b = sample();
        b.config.optim.kind = crate::optim::OptimizerKind::Sgd;
        assert_ne!(a.masked(true), b.masked(true));
        assert_eq!(a.masked(false), b.masked(false));
    }

    #[test]
    fn aborted_status_round_trips() {
        let mut r = sample();
        r.summary.status = RunStatus::Aborted {
            reason: "non-finite loss at step 4".into(),
        };
        let back = RunReport::from_jsonl(&r.to_jsonl()).unwrap();
        assert!(!back.is_completed());
        assert!(r.to_jsonl().contains("\"status\":\"aborted\""));
    }

    #[test]
    fn weights_hash_distinguishes() {
        assert_eq!(weights_hash(&[1.0]), weights_hash(&[1.0]));
        assert_ne!(weights_hash(&[1.0]), weights_hash(&[1.0 + f64::EPSILON]));
        assert_eq!(weights_hash(&[]).len(), 64);
    }

    #[test]
    fn missing_summary_rejected() {
        let text = sample().to_jsonl();
        let partial: Vec<&str> = text.lines().take(2).collect();
        assert!(RunReport::from_jsonl(&partial.join("\n")).is_err());
    }
}
