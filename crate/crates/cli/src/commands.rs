use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use recsandbox::agent::PolicyKind;
use recsandbox::catalog::{
    chronological_split, generate_synthetic, load_catalog, load_interactions, validate_stats, write_catalog, Catalog, CatalogPaths, DatasetSplit,
    ExpectedStats, SyntheticSpec, UserId,
};
use recsandbox::harness::{
    activity_trait_study, augmented_records, load_traces, offline_eval, render_table, run_experiment, taste_alignment_study, write_augmented,
    write_report, write_summary_csv, ActivityConfig, ArmSpec, EmbedderKind, ExperimentConfig, ExportFormat, Resources, RunOptions, SessionSummary,
    SimulationReport, TasteConfig,
};
use recsandbox::recsys::{FeatureBlock, FmConfig, Recommender, RecommenderKind, RecommenderSpec};
use recsandbox::seed;

use crate::errors::UsageError;
use crate::manifest::Recorder;
use crate::{CatalogArg, Cli, Command, EmbedderArg, FmArgs, FormatArg, KindArg, OnOff, PolicyArg};

/// Train / validation / test shares of each user's chronological history.
pub const SPLIT: (f64, f64, f64) = (0.7, 0.2, 0.1);

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    let out = g.out.as_path();
    let seed = g.seed();
    match &cli.command {
        Command::Prepare { data, expect_published } => prepare(out, data, *expect_published),
        Command::Synth { users, movies, interactions, min_per_user, activity_dispersion } => {
            let spec = SyntheticSpec {
                users: *users,
                movies: *movies,
                interactions: *interactions,
                min_per_user: *min_per_user,
                activity_dispersion: *activity_dispersion,
                ..SyntheticSpec::default()
            };
            synth(out, spec, seed)
        }
        Command::Train { catalog, kind, train_fraction, fm } => train(out, catalog, *kind, *train_fraction, fm, seed),
        Command::EvalOffline { catalog, model, k } => eval_offline(out, catalog, model, *k, seed),
        Command::Simulate { catalog, user, arm, kind, policy, vision, sessions, embedder, fatigue } => {
            let mut cfg = ExperimentConfig::new(vec![ArmSpec::new(arm.clone(), recommender_kind(*kind))]);
            cfg.cohort.users = Some(vec![UserId(*user)]);
            cfg.cohort.sessions_per_user = *sessions;
            cfg.policy.kind = match policy {
                PolicyArg::Rule => PolicyKind::Rule,
                PolicyArg::Llm => PolicyKind::Llm,
            };
            cfg.sandbox.vision_enabled = *vision == OnOff::On;
            cfg.memory.embedder = match embedder {
                EmbedderArg::Deterministic => EmbedderKind::Deterministic,
                EmbedderArg::Remote => EmbedderKind::Remote,
            };
            cfg.fatigue.preset = fatigue.clone();
            cfg.seed.master = seed;
            simulate(out, catalog, cfg, UserId(*user), g.workers)
        }
        Command::Abtest { catalog, config } => abtest(out, catalog, config, g.seed, g.workers),
        Command::AlignTaste { catalog, list_size, sample, no_control, vision } => {
            let mut cfg =
                TasteConfig { list_size: *list_size, seed, sample: *sample, control: !no_control, workers: g.workers, ..TasteConfig::default() };
            cfg.sandbox.vision_enabled = *vision == OnOff::On;
            align_taste(out, catalog, cfg)
        }
        Command::AlignActivity { catalog, sample, kind, sessions, null_config } => {
            let k = recommender_kind(*kind);
            let cfg = ActivityConfig {
                seed,
                sample: *sample,
                arm: ArmSpec::new(format!("{k:?}").to_lowercase(), k),
                sessions_per_user: *sessions,
                null_config: *null_config,
                workers: g.workers,
                ..ActivityConfig::default()
            };
            align_activity(out, catalog, cfg)
        }
        Command::ExportAugmented { traces, format, merge } => export(out, traces, *format, merge.as_deref()),
        Command::Report { run, csv } => report(out, run, *csv),
    }
}

fn recommender_kind(k: KindArg) -> RecommenderKind {
    match k {
        KindArg::Random => RecommenderKind::Random,
        KindArg::Popularity => RecommenderKind::Popularity,
        KindArg::Fm => RecommenderKind::Fm,
    }
}

fn fm_config(args: &FmArgs) -> Result<FmConfig> {
    let mut features = BTreeSet::new();
    for f in &args.features {
        let block: FeatureBlock = serde_json::from_value(json!(f.trim())).map_err(|_| UsageError(format!("unknown feature block {f:?}")))?;
        features.insert(block);
    }
    Ok(FmConfig { latent_dim: args.latent_dim, epochs: args.epochs, learning_rate: args.learning_rate, features, ..FmConfig::default() })
}

/// Loads the catalog directory, or builds the default synthetic catalog.
fn catalog_from(arg: &CatalogArg, seed: u64, rec: &mut Recorder) -> Result<Catalog> {
    match &arg.catalog {
        Some(dir) => {
            rec.input(dir)?;
            load_catalog(&CatalogPaths::in_dir(dir)).with_context(|| format!("loading catalog from {}", dir.display()))
        }
        None => Ok(generate_synthetic(&SyntheticSpec::default(), seed)?.catalog),
    }
}

fn catalog_source(arg: &CatalogArg, seed: u64) -> serde_json::Value {
    match &arg.catalog {
        Some(dir) => json!({ "dir": dir }),
        None => json!({ "synthetic": SyntheticSpec::default(), "seed": seed }),
    }
}

fn split(catalog: &Catalog) -> Result<DatasetSplit> {
    Ok(chronological_split(catalog, SPLIT)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn prepare(out: &Path, data: &Path, expect_published: bool) -> Result<()> {
    let mut rec = Recorder::new("prepare");
    rec.config(json!({ "data": data, "expect_published": expect_published }))?;
    let catalog = load_catalog(&CatalogPaths::in_dir(data)).with_context(|| format!("loading {}", data.display()))?;
    rec.input(data)?;
    let expected = expect_published.then(ExpectedStats::mm_ml_1m);
    let stats = validate_stats(&catalog, expected.as_ref());
    let dir = out.join("catalog");
    write_catalog(&catalog, &dir)?;
    write_json(&out.join("stats.json"), &stats)?;
    println!("users {}  movies {}  interactions {}  sparsity {:.4}", stats.user_count, stats.movie_count, stats.interaction_count, stats.sparsity);
    for v in stats.violations.iter().chain(&stats.deviations) {
        println!("warning: {v}");
    }
    rec.output(dir);
    rec.output(out.join("stats.json"));
    rec.finish(out)?;
    Ok(())
}

fn synth(out: &Path, spec: SyntheticSpec, seed: u64) -> Result<()> {
    let mut rec = Recorder::new("synth");
    rec.config(json!({ "spec": spec, "seed": seed }))?;
    let sc = generate_synthetic(&spec, seed)?;
    let dir = out.join("catalog");
    write_catalog(&sc.catalog, &dir)?;
    write_json(&out.join("truth.json"), &sc.truth)?;
    println!(
        "wrote {} users, {} movies, {} interactions to {}",
        sc.catalog.num_users(),
        sc.catalog.num_movies(),
        sc.catalog.interactions().len(),
        dir.display()
    );
    rec.output(dir);
    rec.output(out.join("truth.json"));
    rec.finish(out)?;
    Ok(())
}

fn train(out: &Path, arg: &CatalogArg, kind: KindArg, fraction: f64, fm: &FmArgs, seed: u64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(UsageError(format!("--train-fraction must be in (0, 1], got {fraction}")));
    }
    let mut rec = Recorder::new("train");
    let spec = match kind {
        KindArg::Random => RecommenderSpec::Random,
        KindArg::Popularity => RecommenderSpec::Popularity,
        KindArg::Fm => RecommenderSpec::Fm(fm_config(fm)?),
    };
    let fm_cfg = match &spec {
        RecommenderSpec::Fm(c) => Some(c.clone()),
        _ => None,
    };
    rec.config(json!({ "catalog": catalog_source(arg, seed), "kind": recommender_kind(kind), "train_fraction": fraction, "fm": fm_cfg, "seed": seed, "split": SPLIT }))?;
    let catalog = catalog_from(arg, seed, &mut rec)?;
    let mut split = split(&catalog)?;
    if fraction < 1.0 {
        split = split.train_prefix(fraction);
    }
    // Same derivation as the experiment harness, so a trained checkpoint
    // matches the model an abtest arm would fit.
    let fit_seed = seed::derive(seed, &[seed::hash_str("fit")]);
    let model = Recommender::fit(&spec, &catalog, &split.train, fit_seed)?;
    let path = out.join("model.json");
    model.save(&path)?;
    let losses = model.fm().map(|m| m.epoch_losses().to_vec()).unwrap_or_default();
    let converged = model.fm().map(|m| m.converged());
    write_json(&out.join("train.json"), &json!({ "train_interactions": split.train.len(), "epoch_losses": losses, "converged": converged }))?;
    println!("fitted {:?} on {} interactions -> {}", model.kind(), split.train.len(), path.display());
    rec.output(path);
    rec.output(out.join("train.json"));
    rec.finish(out)?;
    Ok(())
}

fn eval_offline(out: &Path, arg: &CatalogArg, model: &Path, k: usize, seed: u64) -> Result<()> {
    if k == 0 {
        bail!(UsageError("--k must be positive".into()));
    }
    let mut rec = Recorder::new("eval-offline");
    rec.config(json!({ "catalog": catalog_source(arg, seed), "model": model, "k": k, "split": SPLIT }))?;
    rec.input(model)?;
    let catalog = catalog_from(arg, seed, &mut rec)?;
    let split = split(&catalog)?;
    let r = Recommender::load(model).with_context(|| format!("loading model {}", model.display()))?;
    let m = offline_eval(&r, &split, k);
    let path = out.join("offline.json");
    write_json(&path, &json!({ "k": k, "recall": m.recall, "ndcg": m.ndcg, "users": m.users }))?;
    println!("Recall@{k} {:.4}  NDCG@{k} {:.4}  over {} users", m.recall, m.ndcg, m.users);
    rec.output(path);
    rec.finish(out)?;
    Ok(())
}

fn simulate(out: &Path, arg: &CatalogArg, cfg: ExperimentConfig, user: UserId, workers: Option<usize>) -> Result<()> {
    let mut rec = Recorder::new("simulate");
    rec.config(json!({ "catalog": catalog_source(arg, cfg.seed.master), "experiment": cfg, "split": SPLIT }))?;
    let catalog = catalog_from(arg, cfg.seed.master, &mut rec)?;
    if catalog.user(user).is_none() {
        bail!(UsageError(format!("user {user} is not in the catalog")));
    }
    let split = split(&catalog)?;
    let res = Resources::from_config(&cfg.memory, &cfg.policy, &catalog)?;
    let opts = RunOptions { out_dir: Some(out.to_path_buf()), base_dir: PathBuf::from("."), workers };
    let report = run_experiment(&cfg, &catalog, &split, &res, &opts)?;
    let arm = &report.arms[0];
    if let Some(e) = &arm.error {
        bail!("arm {} failed: {e}", arm.name);
    }
    write_report(&report, out)?;
    let sessions_path = out.join(arm.sessions_path.as_deref().unwrap_or_default());
    let body = fs::read_to_string(&sessions_path).with_context(|| format!("reading {}", sessions_path.display()))?;
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let s: SessionSummary = serde_json::from_str(line)?;
        println!("session {} ({:?})", s.session_id, s.terminated);
        for t in &s.trace {
            println!(
                "  {:>3} {:<6?} {:<40} interest {} fatigue {:.1}",
                t.step,
                t.interface,
                format!("{:?}", t.decision.action),
                t.decision.interest,
                t.fatigue_after
            );
        }
    }
    rec.output(out.join("traces"));
    rec.output(out.join("report.json"));
    rec.output(out.join("summary.csv"));
    rec.finish(out)?;
    Ok(())
}

fn abtest(out: &Path, arg: &CatalogArg, config: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let mut rec = Recorder::new("abtest");
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading config {}", config.display()))?;
    rec.input(config)?;
    if let Some(s) = seed {
        cfg.seed.master = s;
    }
    rec.config(json!({ "catalog": catalog_source(arg, cfg.seed.master), "experiment": cfg, "split": SPLIT }))?;
    let catalog = catalog_from(arg, cfg.seed.master, &mut rec)?;
    let split = split(&catalog)?;
    let res = Resources::from_config(&cfg.memory, &cfg.policy, &catalog)?;
    let base_dir = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let opts = RunOptions { out_dir: Some(out.to_path_buf()), base_dir, workers };
    let report = run_experiment(&cfg, &catalog, &split, &res, &opts)?;
    write_report(&report, out)?;
    print!("{}", render_table(&report));
    for a in report.arms.iter().filter(|a| a.error.is_some()) {
        tracing::warn!(arm = %a.name, "arm failed; see report.json");
    }
    rec.output(out.join("traces"));
    rec.output(out.join("report.json"));
    rec.output(out.join("summary.csv"));
    rec.finish(out)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn align_taste(out: &Path, arg: &CatalogArg, cfg: TasteConfig) -> Result<()> {
    let mut rec = Recorder::new("align-taste");
    rec.config(json!({ "catalog": catalog_source(arg, cfg.seed), "study": cfg, "split": SPLIT }))?;
    let catalog = catalog_from(arg, cfg.seed, &mut rec)?;
    let split = split(&catalog)?;
    let res = Resources::from_config(&cfg.memory, &cfg.policy, &catalog)?;
    let report = taste_alignment_study(&catalog, &split, &cfg, &res)?;
    write_json(&out.join("taste.json"), &report)?;
    let csv_path = out.join("taste.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["ratio", "positives", "negatives", "ctr", "cvr", "ar", "impressions", "clicks", "watches"])?;
    println!("eligible users {}  skipped {}", report.eligible_users, report.skipped_users);
    println!("{:<6} {:>8} {:>8} {:>8}", "ratio", "CTR", "CVR", "AR");
    for r in &report.ratios {
        let m = &r.metrics;
        w.write_record([
            r.label.clone(),
            r.positives.to_string(),
            r.negatives.to_string(),
            fmt_opt(m.ctr),
            fmt_opt(m.cvr),
            fmt_opt(m.ar),
            m.impressions.to_string(),
            m.clicks.to_string(),
            m.watches.to_string(),
        ])?;
        println!("{:<6} {:>8} {:>8} {:>8}", r.label, fmt_opt(m.ctr), fmt_opt(m.cvr), fmt_opt(m.ar));
    }
    w.flush()?;
    rec.output(out.join("taste.json"));
    rec.output(csv_path);
    rec.finish(out)?;
    Ok(())
}

fn align_activity(out: &Path, arg: &CatalogArg, cfg: ActivityConfig) -> Result<()> {
    let mut rec = Recorder::new("align-activity");
    rec.config(json!({ "catalog": catalog_source(arg, cfg.seed), "study": cfg, "split": SPLIT }))?;
    let catalog = catalog_from(arg, cfg.seed, &mut rec)?;
    let split = split(&catalog)?;
    let res = Resources::from_config(&cfg.memory, &cfg.policy, &catalog)?;
    let report = activity_trait_study(&catalog, &split, &cfg, &res)?;
    write_json(&out.join("activity.json"), &report)?;
    let csv_path = out.join("activity.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["group", "clicks", "sessions"])?;
    for g in &report.groups {
        println!("{:<7} users {:>4}  mean clicks {:.3}", g.group.as_str(), g.users, g.mean_clicks);
        for (c, n) in g.histogram.iter().enumerate() {
            w.write_record([g.group.as_str().to_string(), c.to_string(), n.to_string()])?;
        }
    }
    for k in &report.ks {
        println!("KS {} vs {}: D {:.4}  p {:.4}", k.a.as_str(), k.b.as_str(), k.statistic, k.p_value);
    }
    w.flush()?;
    rec.output(out.join("activity.json"));
    rec.output(csv_path);
    rec.finish(out)?;
    Ok(())
}

fn export(out: &Path, traces: &Path, format: FormatArg, merge: Option<&Path>) -> Result<()> {
    let format = match format {
        FormatArg::Interactions => ExportFormat::Interactions,
        FormatArg::Labeled => ExportFormat::Labeled,
    };
    if merge.is_some() && format != ExportFormat::Interactions {
        bail!(UsageError("--merge needs --format interactions".into()));
    }
    let mut rec = Recorder::new("export-augmented");
    rec.config(json!({ "traces": traces, "format": format, "merge": merge }))?;
    rec.input(traces)?;
    let (events, users) = load_traces(traces)?;
    let records = augmented_records(&events, &users)?;
    let file = out.join(match format {
        ExportFormat::Interactions => "augmented.dat",
        ExportFormat::Labeled => "augmented.jsonl",
    });
    let counts = write_augmented(&file, &records, format)?;
    write_json(&out.join("export.json"), &counts)?;
    println!("clicks {}  views {}  lines written {} -> {}", counts.clicks, counts.views, counts.written, file.display());
    rec.output(file.clone());
    rec.output(out.join("export.json"));
    if let Some(dir) = merge {
        rec.input(dir)?;
        let catalog = load_catalog(&CatalogPaths::in_dir(dir)).with_context(|| format!("loading catalog from {}", dir.display()))?;
        let extra = load_interactions(&file)?;
        let merged = catalog.with_interactions(&extra).context("merging augmented records into the catalog")?;
        let mdir = out.join("merged");
        write_catalog(&merged, &mdir)?;
        println!("merged catalog with {} interactions -> {}", merged.interactions().len(), mdir.display());
        rec.output(mdir);
    }
    rec.finish(out)?;
    Ok(())
}

fn report(out: &Path, run: &Path, csv: bool) -> Result<()> {
    let mut rec = Recorder::new("report");
    rec.config(json!({ "run": run, "csv": csv }))?;
    let path = run.join("report.json");
    rec.input(&path)?;
    let body = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: SimulationReport = serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))?;
    print!("{}", render_table(&report));
    if csv {
        let p = out.join("summary.csv");
        write_summary_csv(&report, &p)?;
        rec.output(p);
    }
    rec.finish(out)?;
    Ok(())
}
