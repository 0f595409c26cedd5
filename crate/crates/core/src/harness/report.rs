//! Per-trial records, aggregated reports and their JSON/CSV forms.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ObserverKind};
use crate::bayes::Decision;
use crate::geometry::ObjectId;
use crate::{Error, Result};

/// One observer's answer on one trial. Equality ignores `wall_time`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverOutcome {
    pub observer: ObserverKind,
    pub decision: Decision,
    /// Why the observer failed, when it did; the decision is then the prior arg-max.
    pub error: Option<String>,
    /// Measured but never serialized, so reports stay byte-stable.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for ObserverOutcome {
    fn eq(&self, other: &Self) -> bool {
        self.observer == other.observer && self.decision == other.decision && self.error == other.error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub truth: ObjectId,
    /// One outcome per enabled observer, in configuration order.
    pub outcomes: Vec<ObserverOutcome>,
    /// Largest coordinate error of the target rebuilt from distances.
    #[serde(with = "crate::serde_ext::float_opt")]
    pub reconstruction_error: Option<f64>,
}

impl TrialRecord {
    pub fn outcome(&self, kind: ObserverKind) -> Option<&ObserverOutcome> {
        self.outcomes.iter().find(|o| o.observer == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSummary {
    pub observer: ObserverKind,
    pub errors: usize,
    pub error_rate: f64,
    /// 95% binomial interval for the error rate.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean decision margin; absent without trials.
    #[serde(with = "crate::serde_ext::float_opt")]
    pub mean_margin: Option<f64>,
    pub failures: usize,
    pub ess_collapses: usize,
    pub prior_fallbacks: usize,
    pub degraded: usize,
}

impl ObserverSummary {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    /// Trials on which at least one observer failed.
    pub degenerate_trials: usize,
    /// Decisions built on collapsed importance weights.
    pub ess_collapses: usize,
    pub prior_fallbacks: usize,
    pub degraded_decisions: usize,
}

/// World-level diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub training_views: usize,
    /// Largest distance residual of the rebuilt base.
    #[serde(with = "crate::serde_ext::float_opt")]
    pub reconstruction_residual: Option<f64>,
    /// Largest coordinate error of the restored base views.
    #[serde(with = "crate::serde_ext::float_opt")]
    pub restoration_error: Option<f64>,
    #[serde(with = "crate::serde_ext::float_opt")]
    pub anchor_residual: Option<f64>,
    /// Observers that could not be trained, with the reason.
    pub training_failures: Vec<(ObserverKind, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub trials: usize,
    pub summaries: Vec<ObserverSummary>,
    /// Fraction of trials on which two observers chose the same object,
    /// indexed in configuration order.
    pub agreement: Vec<Vec<f64>>,
    pub flags: ReportFlags,
    pub world: WorldSummary,
    pub records: Vec<TrialRecord>,
}

/// 95% normal-approximation interval with continuity correction, clipped to [0, 1].
pub fn binomial_ci(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let half = 1.959963984540054 * (p * (1.0 - p) / nf).sqrt() + 0.5 / nf;
    ((p - half).max(0.0), (p + half).min(1.0))
}

impl Report {
    /// Aggregate trial records.
    pub fn assemble(config: ExperimentConfig, world: WorldSummary, records: Vec<TrialRecord>) -> Self {
        let kinds = config.observers.clone();
        let n = records.len();
        let mut flags = ReportFlags::default();
        for r in &records {
            if r.outcomes.iter().any(|o| o.error.is_some()) {
                flags.degenerate_trials += 1;
            }
            for o in &r.outcomes {
                let f = o.decision.flags;
                flags.ess_collapses += usize::from(f.ess_collapse);
                flags.prior_fallbacks += usize::from(f.prior_fallback);
                flags.degraded_decisions += usize::from(f.degraded);
            }
        }
        let summaries = kinds
            .iter()
            .map(|&kind| {
                let outs: Vec<(&ObserverOutcome, ObjectId)> =
                    records.iter().filter_map(|r| r.outcome(kind).map(|o| (o, r.truth))).collect();
                let errors = outs.iter().filter(|(o, truth)| o.decision.chosen != *truth).count();
                let (ci_low, ci_high) = binomial_ci(errors, n);
                let count = |f: fn(&ObserverOutcome) -> bool| outs.iter().filter(|(o, _)| f(o)).count();
                ObserverSummary {
                    observer: kind,
                    errors,
                    error_rate: if n == 0 { 0.0 } else { errors as f64 / n as f64 },
                    ci_low,
                    ci_high,
                    mean_margin: (n > 0).then(|| outs.iter().map(|(o, _)| o.decision.margin).sum::<f64>() / n as f64),
                    failures: count(|o| o.error.is_some()),
                    ess_collapses: count(|o| o.decision.flags.ess_collapse),
                    prior_fallbacks: count(|o| o.decision.flags.prior_fallback),
                    degraded: count(|o| o.decision.flags.degraded),
                }
            })
            .collect();
        let m = kinds.len();
        let mut agreement = vec![vec![1.0; m]; m];
        for a in 0..m {
            for b in 0..a {
                let same = records
                    .iter()
                    .filter(|r| {
                        let (x, y) = (r.outcome(kinds[a]), r.outcome(kinds[b]));
                        matches!((x, y), (Some(x), Some(y)) if x.decision.chosen == y.decision.chosen)
                    })
                    .count();
                let v = if n == 0 { 1.0 } else { same as f64 / n as f64 };
                agreement[a][b] = v;
                agreement[b][a] = v;
            }
        }
        Report { config, trials: n, summaries, agreement, flags, world, records }
    }

    pub fn summary(&self, kind: ObserverKind) -> Option<&ObserverSummary> {
        self.summaries.iter().find(|s| s.observer == kind)
    }

    pub fn agreement_between(&self, a: ObserverKind, b: ObserverKind) -> Option<f64> {
        let i = self.config.observers.iter().position(|k| *k == a)?;
        let j = self.config.observers.iter().position(|k| *k == b)?;
        Some(self.agreement[i][j])
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedString(e.to_string()))
    }

    /// One row per trial: `trial,truth` then `<observer>_chosen,<observer>_margin`
    /// for every enabled observer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,truth");
        for k in &self.config.observers {
            let _ = write!(out, ",{k}_chosen,{k}_margin");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.trial, r.truth);
            for k in &self.config.observers {
                match r.outcome(*k) {
                    Some(o) => {
                        let _ = write!(out, ",{},{}", o.decision.chosen, o.decision.margin);
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// The agreement matrix as an aligned text table.
    pub fn agreement_table(&self) -> String {
        let names: Vec<&str> = self.config.observers.iter().map(|k| k.name()).collect();
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:w$}", "");
        for n in &names {
            let _ = write!(out, " {n:>w$}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.agreement) {
            let _ = write!(out, "{n:w$}");
            for v in row {
                let _ = write!(out, " {v:>w$.4}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Conventional file name inside an output directory.
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "trials.csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// Write `report` to `path` as JSON (everything) or CSV (the trial table).
pub fn write_report(report: &Report, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{ClassScore, DecisionFlags};

    fn decision(chosen: usize, margin: f64) -> Decision {
        Decision {
            chosen: ObjectId(chosen),
            log_posteriors: vec![
                ClassScore { class: ObjectId(0), log_posterior: -1.0 },
                ClassScore { class: ObjectId(1), log_posterior: f64::NEG_INFINITY },
            ],
            margin,
            flags: DecisionFlags::default(),
        }
    }

    fn record(trial: u64, truth: usize, picks: &[(ObserverKind, usize)]) -> TrialRecord {
        TrialRecord {
            trial,
            truth: ObjectId(truth),
            outcomes: picks
                .iter()
                .map(|(k, c)| ObserverOutcome {
                    observer: *k,
                    decision: decision(*c, f64::INFINITY),
                    error: None,
                    wall_time: Duration::from_millis(3),
                })
                .collect(),
            reconstruction_error: Some(1e-12),
        }
    }

    fn config() -> ExperimentConfig {
        ExperimentConfig { observers: vec![ObserverKind::ThreeD, ObserverKind::NearestNeighbor], ..Default::default() }
    }

    #[test]
    fn ci_cases() {
        assert_eq!(binomial_ci(0, 0), (0.0, 1.0));
        let (lo, hi) = binomial_ci(50, 100);
        assert!((hi - lo - 2.0 * (1.959963984540054 * 0.05 + 0.005)).abs() < 1e-12);
        assert_eq!(binomial_ci(0, 100).0, 0.0);
        assert_eq!(binomial_ci(100, 100).1, 1.0);
    }

    #[test]
    fn aggregation() {
        use ObserverKind::*;
        let records = vec![
            record(0, 0, &[(ThreeD, 0), (NearestNeighbor, 1)]),
            record(1, 1, &[(ThreeD, 1), (NearestNeighbor, 1)]),
            record(2, 1, &[(ThreeD, 0), (NearestNeighbor, 0)]),
            record(3, 0, &[(ThreeD, 0), (NearestNeighbor, 0)]),
        ];
        let r = Report::assemble(config(), WorldSummary::default(), records);
        assert_eq!(r.summary(ThreeD).unwrap().errors, 1);
        assert_eq!(r.summary(NearestNeighbor).unwrap().errors, 2);
        assert_eq!(r.agreement, vec![vec![1.0, 0.75], vec![0.75, 1.0]]);
        assert_eq!(r.summary(ThreeD).unwrap().mean_margin, Some(f64::INFINITY));
    }

    #[test]
    fn empty_report_serializes() {
        let r = Report::assemble(config(), WorldSummary::default(), Vec::new());
        let json = r.to_json().unwrap();
        assert_eq!(Report::from_json(&json).unwrap(), r);
        assert_eq!(r.to_csv(), "trial,truth,3d_chosen,3d_margin,nn_chosen,nn_margin\n");
    }

    #[test]
    fn json_round_trip_keeps_non_finite_values() {
        use ObserverKind::*;
        let r = Report::assemble(
            config(),
            WorldSummary::default(),
            vec![record(0, 0, &[(ThreeD, 0), (NearestNeighbor, 1)])],
        );
        let back = Report::from_json(&r.to_json().unwrap()).unwrap();
        // Wall time is not serialized.
        let mut expected = r.clone();
        for o in &mut expected.records[0].outcomes {
            o.wall_time = Duration::ZERO;
        }
        assert_eq!(back, expected);
        let csv = r.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "0,0,0,inf,1,inf");
        assert!(csv.lines().all(|l| l.split(',').count() == 2 + 2 * 2));
    }

    #[test]
    fn write_errors_carry_the_path() {
        let r = Report::assemble(config(), WorldSummary::default(), Vec::new());
        let e = write_report(&r, ReportFormat::Json, Path::new("/nonexistent-dir/x/report.json")).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("nonexistent-dir"));
    }
}
