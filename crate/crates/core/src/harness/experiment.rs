use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_policy, build_profiles, compute_metrics, kendall_tau, offline_eval, with_workers, ArmSpec, ExperimentConfig, HarnessError, Metrics,
    OfflineMetrics, Resources, SessionSummary, Simulator,
};
use crate::agent::Profile;
use crate::catalog::{Catalog, DatasetSplit, UserId};
use crate::recsys::{Recommender, RecommenderKind};
use crate::sandbox::{Event, Sandbox};
use crate::seed;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where traces go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Directory that relative external-list paths resolve against.
    pub base_dir: PathBuf,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub kind: RecommenderKind,
    pub train_fraction: f64,
    pub users: usize,
    pub sessions: usize,
    /// Users whose list was shorter than one page.
    pub skipped_users: usize,
    pub metrics: Option<Metrics>,
    pub offline: Option<OfflineMetrics>,
    /// Clicks per user, summed over that user's sessions.
    pub per_user_clicks: Vec<(UserId, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sessions_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: ExperimentConfig,
    pub cohort_size: usize,
    pub arms: Vec<ArmReport>,
    /// Rank agreement between simulated CTR and offline recall across arms.
    pub kendall_tau: Option<f64>,
}

impl SimulationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// An arm's simulated sessions, merged in (user, session) order.
struct ArmRun {
    report: ArmReport,
    events: Vec<Event>,
    summaries: Vec<SessionSummary>,
}

fn select_cohort(cfg: &ExperimentConfig, split: &DatasetSplit) -> Vec<UserId> {
    let mut users: Vec<UserId> = split.train_by_user().into_keys().collect();
    if let Some(only) = &cfg.cohort.users {
        users.retain(|u| only.contains(u));
    }
    if let Some(n) = cfg.cohort.sample {
        if n < users.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed.master, &[seed::hash_str("cohort")]));
            users.shuffle(&mut rng);
            users.truncate(n);
            users.sort();
        }
    }
    users
}

/// Users per arm: the whole cohort, or a seeded round-robin partition.
fn assign_users(cfg: &ExperimentConfig, cohort: &[UserId]) -> Vec<Vec<UserId>> {
    let n = cfg.arms.len();
    if !cfg.cohort.disjoint {
        return vec![cohort.to_vec(); n];
    }
    let mut shuffled = cohort.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed.master, &[seed::hash_str("disjoint")]));
    shuffled.shuffle(&mut rng);
    let mut out = vec![Vec::new(); n];
    for (i, u) in shuffled.into_iter().enumerate() {
        out[i % n].push(u);
    }
    for v in &mut out {
        v.sort();
    }
    out
}

/// Fits every arm on the training split, simulates its users and returns
/// the merged report. An arm that fails to fit or simulate is reported with
/// its error while the remaining arms proceed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    catalog: &Catalog,
    split: &DatasetSplit,
    res: &Resources,
    opts: &RunOptions,
) -> Result<SimulationReport, HarnessError> {
    cfg.validate()?;
    let cohort = select_cohort(cfg, split);
    if cohort.is_empty() {
        return Err(HarnessError::NoEligibleUsers("no user has training interactions".into()));
    }
    let history = split.train_by_user();
    let policy = build_policy(&cfg.policy, res)?;
    let fatigue = cfg.fatigue.resolve()?;
    let assignment = assign_users(cfg, &cohort);
    let fit_seed = seed::derive(cfg.seed.master, &[seed::hash_str("fit")]);

    let runs = with_workers(opts.workers, || -> Result<Vec<ArmRun>, HarnessError> {
        let profiles = build_profiles(catalog, &cohort, &history, res, cfg.sandbox.vision_enabled)?;
        let sim = Simulator {
            catalog,
            sandbox: Sandbox::new(catalog, cfg.sandbox.clone()),
            policy: policy.as_ref(),
            res,
            fatigue: fatigue.clone(),
            memory: cfg.memory.clone(),
            use_traits: cfg.policy.use_traits,
            history: &history,
        };
        let run_arm = |(arm, users): (&ArmSpec, &Vec<UserId>)| -> ArmRun {
            let _span = tracing::info_span!("arm", name = %arm.name).entered();
            match simulate_arm(cfg, arm, users, split, &profiles, &sim, fit_seed, &opts.base_dir) {
                Ok(run) => run,
                Err(e) => {
                    tracing::error!(arm = %arm.name, error = %e, "arm failed");
                    ArmRun { report: failed_report(arm, users.len(), e.to_string()), events: vec![], summaries: vec![] }
                }
            }
        };
        let pairs: Vec<(&ArmSpec, &Vec<UserId>)> = cfg.arms.iter().zip(&assignment).collect();
        Ok(if cfg.parallel_arms { pairs.into_par_iter().map(run_arm).collect() } else { pairs.into_iter().map(run_arm).collect() })
    })??;

    let mut arms = Vec::with_capacity(runs.len());
    for mut run in runs {
        if let Some(dir) = &opts.out_dir {
            if run.report.error.is_none() {
                let (ev, ss) = write_traces(dir, &run.report.name, &run.events, &run.summaries)?;
                run.report.events_path = Some(ev);
                run.report.sessions_path = Some(ss);
            }
        }
        arms.push(run.report);
    }
    let ok: Vec<&ArmReport> = arms.iter().filter(|a| a.error.is_none()).collect();
    let ctr: Option<Vec<f64>> = ok.iter().map(|a| a.metrics.as_ref().and_then(|m| m.ctr)).collect();
    let recall: Option<Vec<f64>> = ok.iter().map(|a| a.offline.map(|o| o.recall)).collect();
    let kendall_tau = match (ctr, recall) {
        (Some(c), Some(r)) if c.len() >= 2 => Some(kendall_tau(&c, &r)?),
        _ => None,
    };
    Ok(SimulationReport { config: cfg.clone(), cohort_size: cohort.len(), arms, kendall_tau })
}

fn failed_report(arm: &ArmSpec, users: usize, error: String) -> ArmReport {
    ArmReport {
        name: arm.name.clone(),
        kind: arm.kind,
        train_fraction: arm.train_fraction,
        users,
        sessions: 0,
        skipped_users: 0,
        metrics: None,
        offline: None,
        per_user_clicks: vec![],
        events_path: None,
        sessions_path: None,
        error: Some(error),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_arm(
    cfg: &ExperimentConfig,
    arm: &ArmSpec,
    users: &[UserId],
    split: &DatasetSplit,
    profiles: &BTreeMap<UserId, Profile>,
    sim: &Simulator<'_>,
    fit_seed: u64,
    base: &Path,
) -> Result<ArmRun, HarnessError> {
    let k = cfg.sandbox.k;
    let spec = arm.recommender_spec(base, cfg.sandbox.page_size)?;
    let train = if arm.train_fraction < 1.0 { split.train_prefix(arm.train_fraction).train } else { split.train.clone() };
    let rec = Recommender::fit(&spec, sim.catalog, &train, fit_seed)?;
    let offline = (rec.kind() != RecommenderKind::External || !split.test.is_empty()).then(|| offline_eval(&rec, split, k));

    let per_user: Vec<Option<Vec<_>>> = users
        .par_iter()
        .map(|u| {
            let list = rec.recommend(*u, k);
            if list.items.len() < cfg.sandbox.page_size {
                tracing::warn!(user = %u, len = list.items.len(), "list shorter than a page; user skipped");
                return Ok(None);
            }
            let profile = &profiles[u];
            sim.run_user(profile, &arm.name, &list, cfg.cohort.sessions_per_user, cfg.seed.master).map(Some)
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut events = Vec::new();
    let mut summaries = Vec::new();
    let mut per_user_clicks = Vec::new();
    let mut skipped = 0;
    for (u, runs) in users.iter().zip(per_user) {
        let Some(runs) = runs else {
            skipped += 1;
            continue;
        };
        let mut clicks = 0;
        for (outcome, summary) in runs {
            clicks += summary.clicks as u64;
            events.extend(outcome.state.events);
            summaries.push(summary);
        }
        per_user_clicks.push((*u, clicks));
    }
    let metrics = compute_metrics(&events, cfg.metrics.cvr);
    tracing::info!(arm = %arm.name, ctr = ?metrics.ctr, sessions = summaries.len(), "arm done");
    Ok(ArmRun {
        report: ArmReport {
            name: arm.name.clone(),
            kind: arm.kind,
            train_fraction: arm.train_fraction,
            users: users.len() - skipped,
            sessions: summaries.len(),
            skipped_users: skipped,
            metrics: Some(metrics),
            offline,
            per_user_clicks,
            events_path: None,
            sessions_path: None,
            error: None,
        },
        events,
        summaries,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let io = |e| HarnessError::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| HarnessError::Parse(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `traces/{arm}.events.jsonl` and `traces/{arm}.sessions.jsonl`,
/// returning both paths relative to `dir`.
fn write_traces(dir: &Path, arm: &str, events: &[Event], summaries: &[SessionSummary]) -> Result<(String, String), HarnessError> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| HarnessError::io(&traces, e))?;
    let ev = format!("traces/{arm}.events.jsonl");
    let ss = format!("traces/{arm}.sessions.jsonl");
    write_jsonl(&dir.join(&ev), events)?;
    write_jsonl(&dir.join(&ss), summaries)?;
    Ok((ev, ss))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Writes `report.json` and `summary.csv` into `dir`.
pub fn write_report(report: &SimulationReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let p = dir.join("report.json");
    std::fs::write(&p, json + "\n").map_err(|e| HarnessError::io(&p, e))?;
    write_summary_csv(report, &dir.join("summary.csv"))
}

/// One row per arm with rates, counts and any arm error.
pub fn write_summary_csv(report: &SimulationReport, p: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(p).map_err(|e| HarnessError::Parse(format!("{}: {e}", p.display())))?;
    let csv_err = |e: csv::Error| HarnessError::Parse(e.to_string());
    w.write_record(["arm", "ctr", "cvr", "ar", "recall@k", "ndcg@k", "impressions", "clicks", "watches", "error"]).map_err(csv_err)?;
    for a in &report.arms {
        let m = a.metrics.clone().unwrap_or_default();
        w.write_record([
            a.name.clone(),
            fmt_opt(m.ctr),
            fmt_opt(m.cvr),
            fmt_opt(m.ar),
            fmt_opt(a.offline.map(|o| o.recall)),
            fmt_opt(a.offline.map(|o| o.ndcg)),
            m.impressions.to_string(),
            m.clicks.to_string(),
            m.watches.to_string(),
            a.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(p, e))
}

/// Aligned text table: arm, CTR, CVR, AR, Recall@k, NDCG@k.
pub fn render_table(report: &SimulationReport) -> String {
    let k = report.config.sandbox.k;
    let header = ["arm".to_string(), "CTR".into(), "CVR".into(), "AR".into(), format!("Recall@{k}"), format!("NDCG@{k}")];
    let mut rows = vec![header.to_vec()];
    for a in &report.arms {
        let m = a.metrics.clone().unwrap_or_default();
        let mut row = vec![
            a.name.clone(),
            fmt_opt(m.ctr),
            fmt_opt(m.cvr),
            fmt_opt(m.ar),
            fmt_opt(a.offline.map(|o| o.recall)),
            fmt_opt(a.offline.map(|o| o.ndcg)),
        ];
        if let Some(e) = &a.error {
            row[1] = format!("failed: {e}");
            row.truncate(2);
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> =
            r.iter().enumerate().map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[0]) } else { format!("{c:>w$}", w = widths[i]) }).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    match report.kendall_tau {
        Some(t) => {
            let _ = writeln!(out, "Kendall tau (CTR vs Recall@{k}): {t:.4}");
        }
        None => out.push_str("Kendall tau: n/a\n"),
    }
    out
}
