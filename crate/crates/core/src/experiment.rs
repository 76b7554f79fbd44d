//! Experiments on how estimation accuracy changes as more target
//! functionals are handled together.
//!
//! The joint strategy fits one projector and runs one ABC over all p′
//! targets; the separate strategy runs one pipeline per group of targets.
//! Every replicate is keyed by its own seed and groups of a replicate share
//! that seed, so a singleton group repeats the corresponding p′ = 1 joint
//! run exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mat;
use crate::models::{FixtureSpec, ModelFixture};
use crate::rng::derive_seed;
use crate::semiauto::{Pipeline, TargetFunctional};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Joint,
    Separate,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Separate => "separate",
        }
    }
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Joint]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Partition of target indices for the separate strategy; singletons
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    pub replicates: usize,
    /// GPD only: sweep over numbers of quantile targets, each list built by
    /// [`tau_ladder`]. Without it the config's targets are used as given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_prime: Option<Vec<usize>>,
    /// Explicit replicate seeds; derived from the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentPlan {
    pub fn new(strategies: Vec<Strategy>, replicates: usize) -> Self {
        Self {
            strategies,
            groups: None,
            replicates,
            p_prime: None,
            seeds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config {
            path: path.into(),
            message: message.into(),
        };
        if self.replicates == 0 {
            return Err(bad("replicates", "must be positive"));
        }
        if self.strategies.is_empty() {
            return Err(bad("strategies", "must not be empty"));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.replicates {
                return Err(bad("seeds", "needs one seed per replicate"));
            }
        }
        if let Some(ps) = &self.p_prime {
            if ps.is_empty() || ps.contains(&0) {
                return Err(bad("p_prime", "values must be positive"));
            }
        }
        Ok(())
    }

    pub fn replicate_seed(&self, base: u64, r: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[r],
            None => derive_seed(base, &format!("replicate/{r}")),
        }
    }

    /// The groups for `p` targets, checked to partition `0..p` exactly.
    pub fn groups_for(&self, p: usize) -> Result<Vec<Vec<usize>>> {
        let Some(groups) = &self.groups else {
            return Ok((0..p).map(|i| vec![i]).collect());
        };
        let mut seen = vec![false; p];
        for g in groups {
            if g.is_empty() {
                return Err(Error::invalid("empty target group"));
            }
            for &i in g {
                if i >= p || seen[i] {
                    return Err(Error::invalid(format!(
                        "groups must partition the {p} targets; index {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("groups leave some targets uncovered"));
        }
        Ok(groups.clone())
    }
}

/// Quantile levels for `p` targets: 0.99 first, so every list shares it,
/// then `p − 1` levels evenly spaced on [0.5, 0.985].
pub fn tau_ladder(p: usize) -> Vec<f64> {
    let mut taus = vec![0.99];
    let rest = p.saturating_sub(1);
    for k in 0..rest {
        let tau = if rest == 1 {
            0.5
        } else {
            0.5 + 0.485 * k as f64 / (rest - 1) as f64
        };
        taus.push((tau * 1e6).round() / 1e6);
    }
    taus
}

/// One target's outcome in one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub p_prime: usize,
    pub replicate: usize,
    pub seed: u64,
    pub group: usize,
    pub target: String,
    pub estimate: Option<f64>,
    pub oracle: Option<f64>,
    pub abs_error: Option<f64>,
    /// Dimension of the constructed summary used by the run.
    pub summary_dim: usize,
    pub accepted: usize,
    pub condition_number: Option<f64>,
    pub summary_condition: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub strategy: Strategy,
    pub p_prime: usize,
    pub target: String,
    pub replicates_ok: usize,
    pub failures: usize,
    pub mean_abs_error: Option<f64>,
    pub median_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub strategy: Strategy,
    pub p_prime: usize,
    pub median_condition_number: Option<f64>,
    pub median_summary_condition: Option<f64>,
    pub max_summary_condition: Option<f64>,
}

/// Spread of one target's estimates across the run configurations that
/// share it, within a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub target: String,
    pub configurations: usize,
    pub replicates: usize,
    pub mean_spread: f64,
    pub max_spread: f64,
}

/// Median absolute error of a target across p′, per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub strategy: Strategy,
    pub target: String,
    pub p_prime: Vec<usize>,
    pub median_abs_error: Vec<f64>,
    pub non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub config_hash: String,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub errors: Vec<ErrorRow>,
    pub conditions: Vec<ConditionRow>,
    pub discrepancies: Vec<DiscrepancyRow>,
    pub trends: Vec<TrendRow>,
    pub failures: usize,
}

struct Job {
    strategy: Strategy,
    p_prime: usize,
    replicate: usize,
    seed: u64,
    group: usize,
    targets: Vec<TargetFunctional>,
}

fn run_job(job: &Job, config: &RunConfig, fixture: &ModelFixture) -> Vec<RunRecord> {
    let mut cfg = config.clone();
    cfg.seed = job.seed;
    cfg.targets = Some(job.targets.clone());
    cfg.out_dir = None;
    cfg.experiment = None;
    let blank = |target: &TargetFunctional| RunRecord {
        strategy: job.strategy,
        p_prime: job.p_prime,
        replicate: job.replicate,
        seed: job.seed,
        group: job.group,
        target: target.name.clone(),
        estimate: None,
        oracle: None,
        abs_error: None,
        summary_dim: job.targets.len(),
        accepted: 0,
        condition_number: None,
        summary_condition: None,
        failure: None,
    };
    let outcome = Pipeline::new(&cfg, fixture).and_then(|p| p.run());
    match outcome {
        Ok(run) => {
            let proj = &run.construct.projector;
            run.infer
                .estimates
                .iter()
                .zip(&job.targets)
                .map(|(e, t)| RunRecord {
                    estimate: Some(e.estimate),
                    oracle: e.oracle,
                    abs_error: e.abs_error,
                    summary_dim: proj.output_dim(),
                    accepted: run.infer.final_posterior().len(),
                    condition_number: Some(proj.diagnostics.condition_number),
                    summary_condition: Some(proj.summary_condition),
                    ..blank(t)
                })
                .collect()
        }
        Err(e) => job
            .targets
            .iter()
            .map(|t| RunRecord {
                failure: Some(e.to_string()),
                ..blank(t)
            })
            .collect(),
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    // Midpoint of the middle pair; interpolating would turn inf into NaN.
    Some(if n % 2 == 1 || v[n / 2 - 1] == v[n / 2] {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Target lists per p′ for the plan.
fn target_sets(plan: &ExperimentPlan, config: &RunConfig, fixture: &ModelFixture) -> Result<Vec<Vec<TargetFunctional>>> {
    match &plan.p_prime {
        Some(ps) => {
            if !matches!(config.model, FixtureSpec::Gpd { .. }) {
                return Err(Error::invalid("p_prime sweeps need the gpd model"));
            }
            Ok(ps
                .iter()
                .map(|&p| tau_ladder(p).into_iter().map(TargetFunctional::gpd_quantile).collect())
                .collect())
        }
        None => Ok(vec![config
            .targets
            .clone()
            .unwrap_or_else(|| fixture.default_targets.clone())]),
    }
}

/// Runs every strategy × p′ × replicate of the plan. Replicate failures are
/// recorded in the report rather than aborting it.
pub fn run_experiment(plan: &ExperimentPlan, config: &RunConfig) -> Result<ExperimentReport> {
    plan.validate()?;
    config.validate()?;
    let fixture = ModelFixture::build(&config.model)?;
    let sets = target_sets(plan, config, &fixture)?;

    let mut jobs = Vec::new();
    for &strategy in &plan.strategies {
        for targets in &sets {
            let p = targets.len();
            let groups = match strategy {
                Strategy::Joint => vec![(0..p).collect::<Vec<_>>()],
                Strategy::Separate => plan.groups_for(p)?,
            };
            for r in 0..plan.replicates {
                for (g, idx) in groups.iter().enumerate() {
                    jobs.push(Job {
                        strategy,
                        p_prime: p,
                        replicate: r,
                        seed: plan.replicate_seed(config.seed, r),
                        group: g,
                        targets: idx.iter().map(|&i| targets[i].clone()).collect(),
                    });
                }
            }
        }
    }
    // Oracle construction may be costly; do it once before the parallel loop.
    for t in sets.iter().flatten() {
        fixture.oracle_mean(t);
    }
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|job| run_job(job, config, &fixture))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(summarise(&fixture, config, records))
}

fn summarise(fixture: &ModelFixture, config: &RunConfig, records: Vec<RunRecord>) -> ExperimentReport {
    let failures = records.iter().filter(|r| r.failure.is_some()).count();

    let mut by_cell: BTreeMap<(Strategy, usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        by_cell
            .entry((r.strategy, r.p_prime, r.target.clone()))
            .or_default()
            .push(r);
    }
    let errors: Vec<ErrorRow> = by_cell
        .iter()
        .map(|((strategy, p_prime, target), rs)| {
            let errs: Vec<f64> = rs.iter().filter_map(|r| r.abs_error).collect();
            ErrorRow {
                strategy: *strategy,
                p_prime: *p_prime,
                target: target.clone(),
                replicates_ok: rs.iter().filter(|r| r.failure.is_none()).count(),
                failures: rs.iter().filter(|r| r.failure.is_some()).count(),
                mean_abs_error: (!errs.is_empty()).then(|| mat::stable_mean(&errs)),
                median_abs_error: median(errs),
            }
        })
        .collect();

    let mut by_run: BTreeMap<(Strategy, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        by_run.entry((r.strategy, r.p_prime)).or_default().push(r);
    }
    let conditions = by_run
        .iter()
        .map(|((strategy, p_prime), rs)| {
            // one value per pipeline run, not per target
            let mut runs: BTreeMap<(usize, usize), &RunRecord> = BTreeMap::new();
            for r in rs {
                runs.entry((r.replicate, r.group)).or_insert(r);
            }
            let cn: Vec<f64> = runs.values().filter_map(|r| r.condition_number).collect();
            let sc: Vec<f64> = runs.values().filter_map(|r| r.summary_condition).collect();
            ConditionRow {
                strategy: *strategy,
                p_prime: *p_prime,
                median_condition_number: median(cn),
                max_summary_condition: sc.iter().cloned().reduce(f64::max),
                median_summary_condition: median(sc),
            }
        })
        .collect();

    let mut shared: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut configs: BTreeMap<String, std::collections::BTreeSet<(Strategy, usize)>> = BTreeMap::new();
    for r in &records {
        if let Some(e) = r.estimate {
            shared
                .entry(r.target.clone())
                .or_default()
                .entry(r.replicate)
                .or_default()
                .push(e);
            configs
                .entry(r.target.clone())
                .or_default()
                .insert((r.strategy, r.p_prime));
        }
    }
    let discrepancies = shared
        .iter()
        .filter(|(t, _)| configs[*t].len() > 1)
        .map(|(target, reps)| {
            let spreads: Vec<f64> = reps
                .values()
                .filter(|v| v.len() > 1)
                .map(|v| {
                    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                })
                .collect();
            DiscrepancyRow {
                target: target.clone(),
                configurations: configs[target].len(),
                replicates: spreads.len(),
                mean_spread: if spreads.is_empty() { 0.0 } else { mat::stable_mean(&spreads) },
                max_spread: spreads.iter().cloned().fold(0.0, f64::max),
            }
        })
        .collect();

    let mut trends = Vec::new();
    let strategies: std::collections::BTreeSet<Strategy> = records.iter().map(|r| r.strategy).collect();
    for s in strategies {
        let rows: Vec<&ErrorRow> = errors.iter().filter(|e| e.strategy == s).collect();
        let ps: std::collections::BTreeSet<usize> = rows.iter().map(|e| e.p_prime).collect();
        if ps.len() < 2 {
            continue;
        }
        let targets: std::collections::BTreeSet<&String> = rows.iter().map(|e| &e.target).collect();
        for t in targets {
            let series: Vec<(usize, f64)> = rows
                .iter()
                .filter(|e| &e.target == t)
                .filter_map(|e| e.median_abs_error.map(|m| (e.p_prime, m)))
                .collect();
            if series.len() != ps.len() {
                continue;
            }
            trends.push(TrendRow {
                strategy: s,
                target: t.clone(),
                p_prime: series.iter().map(|x| x.0).collect(),
                non_decreasing: series.windows(2).all(|w| w[1].1 >= w[0].1),
                median_abs_error: series.iter().map(|x| x.1).collect(),
            });
        }
    }

    ExperimentReport {
        model: fixture.spec.name().to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        records,
        errors,
        conditions,
        discrepancies,
        trends,
        failures,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| ryu::Buffer::new().format(x).to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per replicate × target × strategy × p′.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "strategy",
            "p_prime",
            "replicate",
            "seed",
            "group",
            "target",
            "estimate",
            "oracle",
            "abs_error",
            "summary_dim",
            "accepted",
            "condition_number",
            "summary_condition",
            "failure",
        ])
        .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.strategy.as_str().to_string(),
                r.p_prime.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.group.to_string(),
                r.target.clone(),
                opt(r.estimate),
                opt(r.oracle),
                opt(r.abs_error),
                r.summary_dim.to_string(),
                r.accepted.to_string(),
                opt(r.condition_number),
                opt(r.summary_condition),
                r.failure.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Plain-text error-vs-p′ and condition-vs-p′ tables.
    pub fn tables(&self) -> String {
        let mut out = String::new();
        out.push_str("strategy  p'    target                 ok  fail  mean|err|     median|err|\n");
        for e in &self.errors {
            out.push_str(&format!(
                "{:<9} {:<5} {:<22} {:<3} {:<5} {:<13} {}\n",
                e.strategy.as_str(),
                e.p_prime,
                e.target,
                e.replicates_ok,
                e.failures,
                e.mean_abs_error.map_or("-".into(), |v| format!("{v:.5}")),
                e.median_abs_error.map_or("-".into(), |v| format!("{v:.5}")),
            ));
        }
        out.push_str("\nstrategy  p'    median cond(F)  median cond(summaries)  max cond(summaries)\n");
        for c in &self.conditions {
            let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4e}"));
            out.push_str(&format!(
                "{:<9} {:<5} {:<15} {:<23} {}\n",
                c.strategy.as_str(),
                c.p_prime,
                f(c.median_condition_number),
                f(c.median_summary_condition),
                f(c.max_summary_condition),
            ));
        }
        if !self.trends.is_empty() {
            out.push_str("\nstrategy  target                 median|err| by p'            non-decreasing\n");
            for t in &self.trends {
                let series: Vec<String> = t
                    .p_prime
                    .iter()
                    .zip(&t.median_abs_error)
                    .map(|(p, e)| format!("{p}:{e:.4}"))
                    .collect();
                out.push_str(&format!(
                    "{:<9} {:<22} {:<30} {}\n",
                    t.strategy.as_str(),
                    t.target,
                    series.join(" "),
                    t.non_decreasing
                ));
            }
        }
        if !self.discrepancies.is_empty() {
            out.push_str("\ntarget                 configs  replicates  mean spread  max spread\n");
            for d in &self.discrepancies {
                out.push_str(&format!(
                    "{:<22} {:<8} {:<11} {:<12.5} {:.5}\n",
                    d.target, d.configurations, d.replicates, d.mean_spread, d.max_spread
                ));
            }
        }
        out.push_str(&format!("\nfailed runs: {}\n", self.failures));
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_text(&dir.join("experiment.json"), &self.to_json())?;
        crate::io::write_text(&dir.join("experiment.csv"), &self.to_csv())?;
        crate::io::write_text(&dir.join("experiment.txt"), &self.tables())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_shares_top_level() {
        assert_eq!(tau_ladder(1), vec![0.99]);
        assert_eq!(tau_ladder(2), vec![0.99, 0.5]);
        let l = tau_ladder(50);
        assert_eq!(l.len(), 50);
        assert_eq!(l[0], 0.99);
        assert_eq!(*l.last().unwrap(), 0.985);
        let mut sorted = l.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
    }

    #[test]
    fn groups_must_partition() {
        let mut plan = ExperimentPlan::new(vec![Strategy::Separate], 1);
        assert_eq!(plan.groups_for(3).unwrap(), vec![vec![0], vec![1], vec![2]]);
        plan.groups = Some(vec![vec![0, 2], vec![1]]);
        assert!(plan.groups_for(3).is_ok());
        plan.groups = Some(vec![vec![0, 1], vec![1, 2]]);
        assert!(plan.groups_for(3).is_err());
        plan.groups = Some(vec![vec![0]]);
        assert!(plan.groups_for(3).is_err());
    }

    #[test]
    fn report_bookkeeping_and_failures() {
        let mut cfg = RunConfig::new(FixtureSpec::gaussian_location(0.0, 1.0, 1.0, 4, 1.0, 0), 5);
        cfg.pilot.m = 1_000;
        cfg.construct.m = 1_000;
        cfg.main.m = 2_000;
        cfg.main.accept_fraction = 0.05;
        let plan = ExperimentPlan::new(vec![Strategy::Joint], 4);
        let report = run_experiment(&plan, &cfg).unwrap();
        assert_eq!(report.records.len(), 4);
        assert_eq!(report.failures, 0);
        assert_eq!(report.errors[0].replicates_ok, 4);
        assert_eq!(report.to_csv().lines().count(), 5);

        // An impossible construction size fails every run without aborting.
        cfg.construct.m = 1;
        let report = run_experiment(&plan, &cfg).unwrap();
        assert_eq!(report.failures, 4);
        assert!(report.records.iter().all(|r| r.failure.is_some()));
    }
}
