use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::contact_env::Trace;
use crate::error::{Error, Result};
use crate::observers::ControllerKind;
use crate::passivity::StopReason;

/// Headline numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub controller: ControllerKind,
    pub seed: u64,
    /// m.
    pub final_depth: f64,
    /// m.
    pub hole_depth: f64,
    /// N.
    pub max_force: f64,
    /// N·m.
    pub max_moment: f64,
    /// Largest observer estimate norm.
    pub max_estimate: f64,
    /// J.
    pub max_rho: f64,
    /// J.
    pub final_e_port: f64,
    pub stop_reason: StopReason,
    /// s; time of the last recorded tick.
    pub end_time: f64,
}

impl RunSummary {
    pub fn from_trace(scenario: &Scenario, trace: &Trace) -> Self {
        Self {
            name: scenario.name.clone(),
            controller: scenario.controller,
            seed: scenario.seed,
            final_depth: trace.final_depth(),
            hole_depth: scenario.geom.depth,
            max_force: trace.peak_force(),
            max_moment: trace.peak_moment(),
            max_estimate: trace.peak_estimate(),
            max_rho: trace.max_rho(),
            final_e_port: trace.final_e_port(),
            stop_reason: trace.stop_reason,
            end_time: trace.records.last().map_or(0.0, |r| r.t),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Simulates one scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<(Trace, RunSummary)> {
    let trace = scenario.simulate()?;
    let summary = RunSummary::from_trace(scenario, &trace);
    Ok((trace, summary))
}

/// Side-by-side results of several controllers on the same setup.
#[derive(Clone, Debug)]
pub struct Comparison {
    /// Sorted by scenario name.
    pub runs: Vec<(RunSummary, Trace)>,
    /// Names, deepest final insertion first.
    pub depth_ranking: Vec<String>,
    /// Names, smallest peak contact force first.
    pub wrench_ranking: Vec<String>,
}

#[derive(Serialize)]
struct ComparisonReport<'a> {
    runs: Vec<&'a RunSummary>,
    depth_ranking: &'a [String],
    wrench_ranking: &'a [String],
}

impl Comparison {
    pub fn summaries(&self) -> impl Iterator<Item = &RunSummary> {
        self.runs.iter().map(|(s, _)| s)
    }

    pub fn get(&self, kind: ControllerKind) -> Option<&RunSummary> {
        self.summaries().find(|s| s.controller == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ComparisonReport {
            runs: self.summaries().collect(),
            depth_ranking: &self.depth_ranking,
            wrench_ranking: &self.wrench_ranking,
        })?)
    }

    /// One CSV with a leading `controller` column, blocks in name order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dof = self
            .runs
            .first()
            .and_then(|(_, t)| t.records.first())
            .map_or(3, |r| r.q.len());
        let mut header = vec!["controller".to_string()];
        header.extend(Trace::header(dof));
        writeln!(out, "{}", header.join(","))?;
        for (summary, trace) in &self.runs {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            let text = String::from_utf8(buf).expect("csv writer emits utf-8");
            for line in text.lines().skip(1) {
                writeln!(out, "{},{line}", summary.name)?;
            }
        }
        Ok(())
    }
}

fn rank_by(
    runs: &[(RunSummary, Trace)],
    key: impl Fn(&RunSummary) -> f64,
    descending: bool,
) -> Vec<String> {
    let mut order: Vec<&RunSummary> = runs.iter().map(|(s, _)| s).collect();
    order.sort_by(|a, b| {
        let ord = key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then_with(|| a.name.cmp(&b.name))
    });
    order.into_iter().map(|s| s.name.clone()).collect()
}

/// Runs every scenario (in parallel) and ranks them. All scenarios must share
/// the arm, the fixture and the initial pose.
pub fn compare_controllers(scenarios: &[Scenario]) -> Result<Comparison> {
    let first = scenarios
        .first()
        .ok_or_else(|| Error::IncompatibleScenarios("no scenarios given".into()))?;
    for s in &scenarios[1..] {
        if s.model != first.model {
            return Err(Error::IncompatibleScenarios(format!(
                "{} uses a different arm",
                s.name
            )));
        }
        if s.geom != first.geom {
            return Err(Error::IncompatibleScenarios(format!(
                "{} uses a different fixture",
                s.name
            )));
        }
        if s.sim.initial_position != first.sim.initial_position
            || s.sim.initial_tilt != first.sim.initial_tilt
        {
            return Err(Error::IncompatibleScenarios(format!(
                "{} starts from a different pose",
                s.name
            )));
        }
    }
    let mut runs = scenarios
        .par_iter()
        .map(|s| run_scenario(s).map(|(trace, summary)| (summary, trace)))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.0.name.cmp(&b.0.name));
    Ok(Comparison {
        depth_ranking: rank_by(&runs, |s| s.final_depth, true),
        wrench_ranking: rank_by(&runs, |s| s.max_force, false),
        runs,
    })
}

/// A base scenario repeated over a list of initial tilts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: Scenario,
    /// rad.
    pub misalignments: Vec<f64>,
    pub trials: usize,
}

impl SweepSpec {
    /// `trials` tilts evenly spaced over `[-bound, bound]`.
    pub fn uniform(base: Scenario, bound: f64, trials: usize) -> Self {
        let misalignments = match trials {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n)
                .map(|i| -bound + 2.0 * bound * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self {
            base,
            misalignments,
            trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.misalignments.is_empty() {
            return Err(Error::config("sweep.misalignments", "must not be empty"));
        }
        if self.trials != self.misalignments.len() {
            return Err(Error::config(
                "sweep.trials",
                "must equal the number of misalignments",
            ));
        }
        if self.misalignments.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("sweep.misalignments", "must be finite"));
        }
        self.base.validate()
    }

    /// Seed of trial `index`, a fixed mix of the base seed and the index.
    pub fn trial_seed(&self, index: usize) -> u64 {
        let mut z = self.base.seed
            ^ (index as u64)
                .wrapping_add(1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn trial(&self, index: usize) -> Scenario {
        let mut s = self.base.clone();
        s.sim.initial_tilt = self.misalignments[index];
        s.seed = self.trial_seed(index);
        s.name = format!("{}-trial{index:02}", self.base.name);
        s
    }
}

/// Outcome of one sweep trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub tilt: f64,
    pub seed: u64,
    pub success: bool,
    pub final_depth: f64,
    pub stop_reason: StopReason,
    /// Tilt from the hole axis every 10 ms, rad.
    pub orientation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub controller: ControllerKind,
    /// Fraction of the hole depth a successful trial must reach.
    pub depth_fraction: f64,
    pub successes: usize,
    pub trials: Vec<TrialResult>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const SUCCESS_DEPTH_FRACTION: f64 = 0.9;

/// Runs all trials in parallel; success means no stop and a final depth of at
/// least 90 % of the hole.
pub fn misalignment_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let hole = spec.base.geom.depth;
    let mut trials = (0..spec.trials)
        .into_par_iter()
        .map(|i| {
            let scenario = spec.trial(i);
            let trace = scenario.simulate()?;
            let stride = ((0.01 / trace.dt).round() as usize).max(1);
            Ok(TrialResult {
                index: i,
                tilt: spec.misalignments[i],
                seed: scenario.seed,
                success: !trace.stop_reason.is_stop()
                    && trace.final_depth() >= SUCCESS_DEPTH_FRACTION * hole,
                final_depth: trace.final_depth(),
                stop_reason: trace.stop_reason,
                orientation: trace
                    .records
                    .iter()
                    .step_by(stride)
                    .map(|r| r.pose[2] + std::f64::consts::FRAC_PI_2)
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    trials.sort_by_key(|t| t.index);
    Ok(SweepReport {
        controller: spec.base.controller,
        depth_fraction: SUCCESS_DEPTH_FRACTION,
        successes: trials.iter().filter(|t| t.success).count(),
        trials,
    })
}
