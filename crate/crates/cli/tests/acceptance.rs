//! Acceptance gate. Prints one line per criterion and exits nonzero if any
//! criterion fails or runs over its time budget.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recsandbox::agent::{
    apply_fatigue, fatigue_cost, run_session, AgentError, Decision, DecisionInput, FatigueConfig, FatigueState, Policy, PolicyKind, Profile,
    SessionContext,
};
use recsandbox::catalog::{
    chronological_split, generate_synthetic, load_catalog, write_catalog, Catalog, CatalogPaths, MovieId, SyntheticSpec, UserId,
};
use recsandbox::harness::{
    activity_trait_study, catalog_genres, compute_metrics, offline_eval, run_experiment, taste_alignment_study, ActivityConfig, ArmSpec,
    CvrDefinition, ExperimentConfig, Resources, RunOptions, SessionSummary, TasteConfig,
};
use recsandbox::memory::{cosine, DeterministicEmbedder, LongTermMemory, MemoryRecord, MemoryStore, Modality, Query};
use recsandbox::recsys::{FeatureBlock, FmConfig, RankedList, Recommender, RecommenderKind, RecommenderSpec};
use recsandbox::sandbox::{write_events, Action, ActionKind, Event, EventKind, Location, Sandbox, SandboxConfig, SessionHeader, TerminationReason};

const SEEDS: u64 = 5;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget_secs: f64,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "fatigue arithmetic", budget_secs: 1.0, run: c1_fatigue_arithmetic },
        Criterion { id: 2, name: "fatigue cost properties", budget_secs: 1.0, run: c2_fatigue_properties },
        Criterion { id: 3, name: "metric oracle", budget_secs: 5.0, run: c3_metric_oracle },
        Criterion { id: 4, name: "model ranking consistency", budget_secs: 120.0, run: c4_model_ranking },
        Criterion { id: 5, name: "data-scale monotonicity", budget_secs: 180.0, run: c5_data_scale },
        Criterion { id: 6, name: "feature ablation ordering", budget_secs: 180.0, run: c6_feature_ablation },
        Criterion { id: 7, name: "taste alignment", budget_secs: 60.0, run: c7_taste },
        Criterion { id: 8, name: "activity traits", budget_secs: 60.0, run: c8_activity },
        Criterion { id: 9, name: "sandbox state machine", budget_secs: 10.0, run: c9_state_machine },
        Criterion { id: 10, name: "retrieval exactness", budget_secs: 10.0, run: c10_retrieval },
        Criterion { id: 11, name: "end-to-end determinism", budget_secs: 120.0, run: c11_determinism },
        Criterion { id: 12, name: "real-data validation", budget_secs: 120.0, run: c12_real_data },
        Criterion { id: 13, name: "augmentation export", budget_secs: 5.0, run: c13_export },
    ];
    let filter: Option<u8> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_none_or(|f| f == c.id)) {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let (status, mut detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        let status = if status == "PASS" && secs > c.budget_secs {
            detail = format!("{detail}; over time budget");
            "FAIL"
        } else {
            status
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {:>2} {:<27} {:>6.2}s/{:<4} {detail}", c.id, c.name, secs, c.budget_secs);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn split_of(c: &Catalog) -> recsandbox::catalog::DatasetSplit {
    chronological_split(c, (0.7, 0.2, 0.1)).unwrap()
}

/// Pages forward until the last page, then back; never clicks.
struct Pager;

impl Policy for Pager {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Rule
    }

    fn decide(&self, input: &DecisionInput<'_>) -> Result<Decision, AgentError> {
        let action = if input.legal.contains(&ActionKind::NextPage) { Action::NextPage } else { Action::PrevPage };
        Ok(Decision { action, interest: 3, explanation: String::new() })
    }
}

fn c1_fatigue_arithmetic() -> Outcome {
    let cfg = FatigueConfig::preset("mini-column").unwrap();
    let mut problems = Vec::new();
    if cfg.phi_max != 1.0 || cfg.phi_min != 1.0 || cfg.budget != 30.0 {
        problems.push("preset is not phi 1.0/1.0 with budget 30".to_string());
    }
    for i in 1..=5 {
        let s = apply_fatigue(FatigueState::new(30.0), fatigue_cost(&cfg, ActionKind::Click, i).unwrap()).unwrap();
        if s.accumulated != 2.0 || s.reading() != "2.0/30" {
            problems.push(format!("click at interest {i}: {}", s.reading()));
        }
        let w = apply_fatigue(FatigueState { accumulated: 9.5, budget: 30.0 }, fatigue_cost(&cfg, ActionKind::WatchAndRate, i).unwrap()).unwrap();
        if w.accumulated != 19.5 || w.reading() != "19.5/30" {
            problems.push(format!("watch at interest {i}: {}", w.reading()));
        }
    }
    let last = apply_fatigue(FatigueState { accumulated: 25.4, budget: 30.0 }, 4.6).unwrap();
    if !last.exhausted() || last.reading() != "30.0/30" {
        problems.push(format!("25.4 + 4.6 gave {}", last.reading()));
    }

    // A session that spends exactly the budget in 2.0 steps must end by
    // forced exit with the reading at 30.0/30.
    let sc = generate_synthetic(&SyntheticSpec::default(), 0).unwrap();
    let catalog = &sc.catalog;
    let user = catalog.user_ids()[0];
    let history: Vec<_> = catalog.interactions().iter().filter(|i| i.user_id == user).cloned().collect();
    let profile = Profile::build(catalog, user, &history, None, None).unwrap();
    let sandbox = Sandbox::new(catalog, SandboxConfig::default());
    let store = LongTermMemory::new();
    let text = DeterministicEmbedder::new(catalog_genres(catalog));
    let ctx = SessionContext {
        sandbox: &sandbox,
        policy: &Pager,
        memory: &store,
        text: &text,
        image: None,
        fatigue: &cfg,
        retrieval_k: 5,
        use_traits: false,
    };
    let header = SessionHeader { session_id: "c1".into(), user_id: user, arm_id: "c1".into(), start_time: 0 };
    let list = RankedList::from_items(user, catalog.movie_ids()[..20].to_vec());
    let out = run_session(&ctx, &profile, header, list, 1).unwrap();
    let readings: Vec<f64> = out.trace.iter().map(|t| t.fatigue_after).collect();
    let expected: Vec<f64> = (1..=15).map(|k| 2.0 * k as f64).collect();
    if readings != expected {
        problems.push(format!("paging trace {readings:?}"));
    }
    if out.state.terminated != Some(TerminationReason::FatigueExhausted) || out.fatigue.reading() != "30.0/30" {
        problems.push(format!("session ended {:?} at {}", out.state.terminated, out.fatigue.reading()));
    }
    if out.events().last().map(|e| e.kind) != Some(EventKind::Exit) {
        problems.push("last event is not Exit".into());
    }
    check(problems.is_empty(), if problems.is_empty() { "0->2.0, 9.5->19.5, 25.4->30.0/30 forced exit".into() } else { problems.join("; ") })
}

fn c2_fatigue_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    for n in 0..1000 {
        let c = rng.random_range(0.0..60.0);
        let phi_min = rng.random_range(0.01..2.0);
        let phi_max = phi_min + rng.random_range(0.0..2.0);
        let iota: u8 = rng.random_range(1..=5);
        let mut cfg = FatigueConfig { phi_max, phi_min, ..FatigueConfig::default() };
        cfg.costs.back = c;
        let f = |i| fatigue_cost(&cfg, ActionKind::Back, i).unwrap();
        let v = f(iota);
        let in_range = v >= c * phi_min && v <= c * phi_max;
        let monotone = iota == 5 || v >= f(iota + 1);
        let ends = f(1) == c * phi_max && f(5) == c * phi_min;
        if !(in_range && monotone && ends) {
            bad.push(format!("#{n} c={c} phi=[{phi_min},{phi_max}] i={iota}"));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() { "1000 triples bounded, non-increasing, exact endpoints".into() } else { bad[..bad.len().min(3)].join("; ") },
    )
}

/// Tallies from the actions a fuzzed session actually took.
#[derive(Default)]
struct Tally {
    impressions: u64,
    clicks: u64,
    watches: u64,
    rating_sum: u64,
}

fn page_len(list_len: usize, page_size: usize, page: usize) -> u64 {
    (list_len - page * page_size).min(page_size) as u64
}

fn c3_metric_oracle() -> Outcome {
    let sc = generate_synthetic(&SyntheticSpec::default(), 3).unwrap();
    let catalog = &sc.catalog;
    let movies = catalog.movie_ids();
    let cfg = SandboxConfig::default();
    let sandbox = Sandbox::new(catalog, cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut all_events = Vec::new();
    let mut total = Tally::default();
    let mut problems = Vec::new();
    for s in 0..100 {
        let len = cfg.page_size * rng.random_range(1..=4) + rng.random_range(0..cfg.page_size);
        let start = rng.random_range(0..movies.len() - len);
        let list = RankedList::from_items(UserId(1), movies[start..start + len].to_vec());
        let header = SessionHeader { session_id: format!("s{s}"), user_id: UserId(1), arm_id: "x".into(), start_time: 0 };
        let (mut state, _) = sandbox.start_session(header, list).unwrap();
        let mut t = Tally { impressions: page_len(len, cfg.page_size, 0), ..Default::default() };
        while !state.is_terminated() {
            let legal: Vec<ActionKind> = sandbox.legal_actions(&state).into_iter().collect();
            let kind = if rng.random_bool(0.05) { ActionKind::Exit } else { legal[rng.random_range(0..legal.len())] };
            let action = match (kind, state.location) {
                (ActionKind::Click, Location::Home { page_index }) => {
                    let items = state.page_items(page_index);
                    t.clicks += 1;
                    Action::Click { movie_id: items[rng.random_range(0..items.len())] }
                }
                (ActionKind::WatchAndRate, _) => {
                    let rating = rng.random_range(1..=5u8);
                    t.watches += 1;
                    t.rating_sum += rating as u64;
                    Action::WatchAndRate { rating }
                }
                (ActionKind::NextPage, Location::Home { page_index }) => {
                    t.impressions += page_len(len, cfg.page_size, page_index + 1);
                    Action::NextPage
                }
                (ActionKind::PrevPage, Location::Home { page_index }) => {
                    t.impressions += page_len(len, cfg.page_size, page_index - 1);
                    Action::PrevPage
                }
                (ActionKind::Back, Location::Detail { from_page, .. }) => {
                    t.impressions += page_len(len, cfg.page_size, from_page);
                    Action::Back
                }
                (ActionKind::Exit, _) => Action::Exit,
                other => unreachable!("{other:?}"),
            };
            sandbox.step(&mut state, action).unwrap();
        }
        let m = compute_metrics(&state.events, CvrDefinition::WatchPerImpression);
        let oracle_ctr = t.clicks as f64 / t.impressions as f64;
        let oracle_cvr = t.watches as f64 / t.impressions as f64;
        let oracle_ar = (t.watches > 0).then(|| t.rating_sum as f64 / t.watches as f64);
        if m.ctr != Some(oracle_ctr) || m.cvr != Some(oracle_cvr) || m.ar != oracle_ar {
            problems.push(format!("session {s}: {m:?} vs ctr {oracle_ctr} cvr {oracle_cvr} ar {oracle_ar:?}"));
        }
        for def in [CvrDefinition::WatchPerImpression, CvrDefinition::DetailViewPerImpression] {
            let m = compute_metrics(&state.events, def);
            if m.cvr > m.ctr {
                problems.push(format!("session {s}: cvr > ctr under {def:?}"));
            }
        }
        total.impressions += t.impressions;
        total.clicks += t.clicks;
        total.watches += t.watches;
        total.rating_sum += t.rating_sum;
        all_events.extend(state.events);
    }
    let m = compute_metrics(&all_events, CvrDefinition::WatchPerImpression);
    if m.ctr != Some(total.clicks as f64 / total.impressions as f64) || m.ar != Some(total.rating_sum as f64 / total.watches as f64) {
        problems.push("pooled metrics differ from the pooled recount".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("100 sessions exact; pooled ctr {:.4} cvr {:.4}", m.ctr.unwrap(), m.cvr.unwrap())
        } else {
            problems[0].clone()
        },
    )
}

fn c4_model_ranking() -> Outcome {
    let mut hits = 0;
    let mut taus = Vec::new();
    for seed in 0..SEEDS {
        let c = generate_synthetic(&SyntheticSpec::default(), seed).unwrap().catalog;
        let split = split_of(&c);
        let mut cfg = ExperimentConfig::new(vec![
            ArmSpec::new("random", RecommenderKind::Random),
            ArmSpec::new("popularity", RecommenderKind::Popularity),
            ArmSpec::fm("fm", FmConfig::default()),
        ]);
        cfg.seed.master = seed;
        let r = run_experiment(&cfg, &c, &split, &Resources::offline(&c), &RunOptions::default()).unwrap();
        let tau = r.kendall_tau.unwrap_or(f64::NAN);
        hits += (tau == 1.0) as u32;
        taus.push(format!("{tau:.2}"));
    }
    check(hits >= 4, format!("tau = 1 in {hits}/5 seeds ({})", taus.join(" ")))
}

fn c5_data_scale() -> Outcome {
    let spec = SyntheticSpec { users: 2000, interactions: 16000, min_per_user: 3, activity_dispersion: 0.5, ..SyntheticSpec::default() };
    let (mut ctr_ok, mut rec_ok) = (0, 0);
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let c = generate_synthetic(&spec, seed).unwrap().catalog;
        let split = split_of(&c);
        let arm = |name: &str, f: f64| ArmSpec { train_fraction: f, ..ArmSpec::fm(name, FmConfig::default()) };
        let mut cfg = ExperimentConfig::new(vec![arm("fm50", 0.5), arm("fm75", 0.75), arm("fm100", 1.0)]);
        cfg.seed.master = seed;
        cfg.parallel_arms = true;
        let r = run_experiment(&cfg, &c, &split, &Resources::offline(&c), &RunOptions::default()).unwrap();
        let ctr: Vec<f64> = r.arms.iter().map(|a| a.metrics.as_ref().and_then(|m| m.ctr).unwrap_or(f64::NAN)).collect();
        let rec: Vec<f64> = r.arms.iter().map(|a| a.offline.map(|o| o.recall).unwrap_or(f64::NAN)).collect();
        ctr_ok += ctr.windows(2).all(|w| w[0] <= w[1]) as u32;
        rec_ok += rec.windows(2).all(|w| w[0] <= w[1]) as u32;
        rows.push(format!("ctr {:.3}/{:.3}/{:.3} rec {:.3}/{:.3}/{:.3}", ctr[0], ctr[1], ctr[2], rec[0], rec[1], rec[2]));
    }
    check(ctr_ok >= 4 && rec_ok >= 4, format!("ctr non-decreasing {ctr_ok}/5, recall {rec_ok}/5 [{}]", rows.join(" | ")))
}

fn c6_feature_ablation() -> Outcome {
    let spec = SyntheticSpec { users: 1000, interactions: 8000, min_per_user: 3, activity_dispersion: 0.5, ..SyntheticSpec::default() };
    let sets: [Vec<FeatureBlock>; 3] = [
        FeatureBlock::all().into_iter().collect(),
        vec![FeatureBlock::UserId, FeatureBlock::MovieId, FeatureBlock::MovieGenres],
        vec![FeatureBlock::UserId, FeatureBlock::MovieId],
    ];
    let mut ok = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let c = generate_synthetic(&spec, seed).unwrap().catalog;
        let split = split_of(&c);
        let recall: Vec<f64> = sets
            .iter()
            .map(|f| {
                let cfg = FmConfig { features: f.iter().copied().collect(), ..FmConfig::default() };
                let r = Recommender::fit(&RecommenderSpec::Fm(cfg), &c, &split.train, seed).unwrap();
                offline_eval(&r, &split, 20).recall
            })
            .collect();
        ok += (recall[0] >= recall[1] && recall[1] >= recall[2]) as u32;
        rows.push(format!("{:.3}/{:.3}/{:.3}", recall[0], recall[1], recall[2]));
    }
    check(ok >= 4, format!("all >= item-side >= id-only in {ok}/5 seeds [{}]", rows.join(" ")))
}

fn c7_taste() -> Outcome {
    let spec = SyntheticSpec { users: 600, interactions: 36000, ..SyntheticSpec::default() };
    let mut strict = 0;
    let mut ar_seed = 0;
    // Rating sums and counts pooled over seeds, for 1:9 and 1:1.
    let mut pooled = [(0.0, 0u64); 2];
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let c = generate_synthetic(&spec, seed).unwrap().catalog;
        let split = split_of(&c);
        let r = taste_alignment_study(&c, &split, &TasteConfig { seed, ..TasteConfig::default() }, &Resources::offline(&c)).unwrap();
        let m = |l: &str| r.ratio(l).map(|x| x.metrics.clone()).unwrap_or_default();
        let (a, b, d) = (m("1:9"), m("1:4"), m("1:1"));
        let ctr = |x: &recsandbox::harness::Metrics| x.ctr.unwrap_or(f64::NAN);
        strict += (ctr(&d) > ctr(&b) && ctr(&b) > ctr(&a)) as u32;
        ar_seed += (d.ar >= a.ar) as u32;
        for (slot, x) in pooled.iter_mut().zip([&a, &d]) {
            slot.0 += x.ar.unwrap_or(0.0) * x.ratings_count as f64;
            slot.1 += x.ratings_count;
        }
        rows.push(format!("{:.3}<{:.3}<{:.3}", ctr(&a), ctr(&b), ctr(&d)));
    }
    let ar19 = pooled[0].0 / pooled[0].1 as f64;
    let ar11 = pooled[1].0 / pooled[1].1 as f64;
    check(
        strict == 5 && ar11 >= ar19,
        format!("strict ctr {strict}/5 [{}]; pooled ar 1:1 {ar11:.3} vs 1:9 {ar19:.3} (per-seed {ar_seed}/5)", rows.join(" ")),
    )
}

fn c8_activity() -> Outcome {
    let spec = SyntheticSpec { users: 600, interactions: 18000, ..SyntheticSpec::default() };
    let mut ordered = 0;
    let mut min_p = f64::INFINITY;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let c = generate_synthetic(&spec, seed).unwrap().catalog;
        let split = split_of(&c);
        let res = Resources::offline(&c);
        let r = activity_trait_study(&c, &split, &ActivityConfig { seed, ..ActivityConfig::default() }, &res).unwrap();
        let m = r.means();
        ordered += (m[0] < m[1] && m[1] < m[2]) as u32;
        rows.push(format!("{:.2}<{:.2}<{:.2}", m[0], m[1], m[2]));
        let null = activity_trait_study(&c, &split, &ActivityConfig { seed, null_config: true, ..ActivityConfig::default() }, &res).unwrap();
        for k in &null.ks {
            min_p = min_p.min(k.p_value);
        }
    }
    check(ordered == 5 && min_p > 0.01, format!("ordered {ordered}/5 [{}]; null min KS p {min_p:.3}", rows.join(" ")))
}

fn random_action(rng: &mut ChaCha8Rng, list: &[MovieId]) -> Action {
    match rng.random_range(0..6) {
        0 | 1 => Action::Click { movie_id: list[rng.random_range(0..list.len())] },
        2 => Action::NextPage,
        3 => Action::PrevPage,
        4 => {
            if rng.random_bool(0.5) {
                Action::Back
            } else {
                Action::WatchAndRate { rating: rng.random_range(0..=6) }
            }
        }
        _ => {
            if rng.random_bool(0.15) {
                Action::Exit
            } else {
                Action::Back
            }
        }
    }
}

fn c9_state_machine() -> Outcome {
    let sc = generate_synthetic(&SyntheticSpec::default(), 9).unwrap();
    let catalog = &sc.catalog;
    let movies = catalog.movie_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut problems = Vec::new();
    for n in 0..1000 {
        let cfg = SandboxConfig {
            step_cap: rng.random_range(3..60),
            recount_impressions_on_back: rng.random_bool(0.5),
            page_size: rng.random_range(1..=6),
            ..SandboxConfig::default()
        };
        let sandbox = Sandbox::new(catalog, cfg.clone());
        let len = cfg.page_size * rng.random_range(1..=5);
        let list = RankedList::from_items(UserId(1), movies[..len].to_vec());
        let header = SessionHeader { session_id: format!("f{n}"), user_id: UserId(1), arm_id: "f".into(), start_time: 0 };
        let (mut state, _) = sandbox.start_session(header.clone(), list.clone()).unwrap();
        for _ in 0..80 {
            let action = random_action(&mut rng, &list.items);
            let before = state.clone();
            let r = sandbox.step(&mut state, action);
            if r.is_err() && state != before {
                problems.push(format!("seq {n}: rejected {action:?} changed the state"));
            }
            if before.is_terminated() && r.is_ok() {
                problems.push(format!("seq {n}: transition after termination"));
            }
        }
        if !state.is_terminated() {
            sandbox.step(&mut state, Action::Exit).unwrap();
        }
        let ev = &state.events;
        let renders = 1 + ev
            .iter()
            .filter(|e| {
                matches!(e.kind, EventKind::NavNext | EventKind::NavPrev) || (e.kind == EventKind::NavBack && cfg.recount_impressions_on_back)
            })
            .count();
        let impression_events = ev.iter().filter(|e| e.kind == EventKind::Impression).count();
        let cards: usize = ev.iter().filter(|e| e.kind == EventKind::Impression).map(|e| e.movie_ids.len()).sum();
        if impression_events != renders || cards != renders * cfg.page_size {
            problems.push(format!("seq {n}: {impression_events} impressions / {cards} cards for {renders} renders"));
        }
        let mut open: Option<MovieId> = None;
        for e in ev {
            match e.kind {
                EventKind::Click => open = e.movie_ids.first().copied(),
                EventKind::NavBack => open = None,
                EventKind::Watch if open != e.movie_ids.first().copied() => problems.push(format!("seq {n}: watch without a click")),
                _ => {}
            }
        }
        match sandbox.replay(header, list, ev) {
            Ok(r) if r.replay_equivalent(&state) && r.events == *ev => {}
            Ok(_) => problems.push(format!("seq {n}: replay is not a fixed point")),
            Err(e) => problems.push(format!("seq {n}: replay failed: {e}")),
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() { "1000 sequences".into() } else { format!("{} problems; first: {}", problems.len(), problems[0]) },
    )
}

fn c10_retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut problems = Vec::new();
    let dim = 6;
    for s in 0..50 {
        let n = if s == 0 { 5000 } else { rng.random_range(1..=5000) };
        let mut store = LongTermMemory::new();
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            // Small integer coordinates make exact cosine ties common.
            let mut e: Vec<f32> = (0..dim).map(|_| rng.random_range(-2..=2) as f32).collect();
            if e.iter().all(|x| *x == 0.0) {
                e[0] = 1.0;
            }
            let r = MemoryRecord {
                modality: if rng.random_bool(0.8) { Modality::Text } else { Modality::Image },
                user_id: UserId(rng.random_range(1..=3)),
                movie_id: MovieId(rng.random_range(1..=200)),
                session_id: format!("s{i}"),
                timestamp: rng.random_range(0..20),
                embedding: e,
                payload: format!("record {i}"),
            };
            store.insert(r.clone()).unwrap();
            records.push(r);
        }
        for _ in 0..4 {
            let user = UserId(rng.random_range(1..=3));
            let modality = if rng.random_bool(0.8) { Modality::Text } else { Modality::Image };
            let mut q: Vec<f32> = (0..dim).map(|_| rng.random_range(-2..=2) as f32).collect();
            q[1] = 1.0;
            let top_k = rng.random_range(1..=60);
            let got = store.retrieve(user, &Query { modality, embedding: q.clone(), top_k }).unwrap();
            let mut oracle: Vec<(usize, f64)> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.user_id == user && r.modality == modality)
                .map(|(i, r)| (i, cosine(&q, &r.embedding).unwrap()))
                .collect();
            oracle.sort_by(|a, b| {
                let (ra, rb) = (&records[a.0], &records[b.0]);
                b.1.partial_cmp(&a.1).unwrap().then(rb.timestamp.cmp(&ra.timestamp)).then(ra.movie_id.cmp(&rb.movie_id))
            });
            oracle.truncate(top_k);
            let same = got.len() == oracle.len()
                && got
                    .iter()
                    .zip(&oracle)
                    .all(|((r, s), (i, t))| s == t && r.timestamp == records[*i].timestamp && r.movie_id == records[*i].movie_id);
            if !same {
                problems.push(format!("store {s} ({n} records) top-{top_k} differs"));
            }
        }
    }
    check(problems.is_empty(), if problems.is_empty() { "50 stores, 200 queries".into() } else { problems[0].clone() })
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_recsandbox")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let o = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in walk(dir) {
        out.insert(e.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&e).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    std::fs::write(
        &config,
        "[[arms]]\nname = \"random\"\nkind = \"random\"\n\n[[arms]]\nname = \"pop\"\nkind = \"popularity\"\n\n[[arms]]\nname = \"fm\"\nkind = \"fm\"\n\n[cohort]\nsessions_per_user = 2\n",
    )
    .unwrap();
    let mut trees = Vec::new();
    let mut stdouts = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        match run_cli(&["--out", out.to_str().unwrap(), "--seed", "11", "abtest", "--config", config.to_str().unwrap()]) {
            Ok(s) => stdouts.push(s),
            Err(e) => return Outcome::Fail(e),
        }
        let mut t = tree(&out);
        t.remove(Path::new("manifest.json"));
        trees.push(t);
    }
    let files = trees[0].len();
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    let has = |p: &str| trees[0].contains_key(Path::new(p));
    if !(has("report.json") && has("summary.csv") && has("traces/fm.events.jsonl")) {
        return Outcome::Fail(format!("missing outputs: {:?}", trees[0].keys().collect::<Vec<_>>()));
    }
    check(trees[0] == trees[1] && stdouts[0] == stdouts[1], format!("{files} files, {bytes} bytes identical across runs"))
}

fn c12_real_data() -> Outcome {
    let dir =
        std::env::var_os("ML1M_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ml-1m")));
    let paths = CatalogPaths::in_dir(&dir);
    if !(paths.movies.exists() && paths.users.exists() && paths.interactions.exists()) {
        return Outcome::Skip(format!("no ML-1M files at {} (set ML1M_DIR)", dir.display()));
    }
    let c = match load_catalog(&paths) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let sp = c.sparsity();
    check(
        c.num_users() == 6040 && c.num_movies() == 3952 && (sp - 0.0419).abs() <= 1e-4,
        format!("{} users, {} movies, sparsity {sp:.5}", c.num_users(), c.num_movies()),
    )
}

fn c13_export() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let sc = generate_synthetic(&SyntheticSpec::default(), 13).unwrap();
    let catalog = &sc.catalog;
    let cat_dir = tmp.path().join("catalog");
    write_catalog(catalog, &cat_dir).unwrap();
    let sandbox = Sandbox::new(catalog, SandboxConfig::default());
    let items = catalog.movie_ids()[..20].to_vec();
    let (m1, m2, m3) = (items[0], items[1], items[2]);
    let users = catalog.user_ids();
    let (u1, u2) = (users[0], users[1]);
    let start = catalog.max_timestamp() + 1;
    // u1 watches m1 (5 stars) and only clicks m2; u2 clicks m3 twice and
    // watches it the second time (3 stars).
    let scripts: [(UserId, Vec<Action>); 2] = [
        (
            u1,
            vec![
                Action::Click { movie_id: m1 },
                Action::WatchAndRate { rating: 5 },
                Action::Back,
                Action::Click { movie_id: m2 },
                Action::Back,
                Action::Exit,
            ],
        ),
        (u2, vec![Action::Click { movie_id: m3 }, Action::Back, Action::Click { movie_id: m3 }, Action::WatchAndRate { rating: 3 }, Action::Exit]),
    ];
    let mut events: Vec<Event> = Vec::new();
    let mut summaries = Vec::new();
    for (i, (user, script)) in scripts.iter().enumerate() {
        let header = SessionHeader {
            session_id: format!("scripted-u{user}-s0"),
            user_id: *user,
            arm_id: "scripted".into(),
            start_time: start + i as i64 * 86_400,
        };
        let (mut state, _) = sandbox.start_session(header.clone(), RankedList::from_items(*user, items.clone())).unwrap();
        for a in script {
            sandbox.step(&mut state, *a).unwrap();
        }
        summaries.push(SessionSummary {
            session_id: header.session_id.clone(),
            user_id: *user,
            arm_id: header.arm_id.clone(),
            session_index: 0,
            seed: 0,
            terminated: state.terminated,
            fatigue: FatigueState::new(30.0),
            clicks: script.iter().filter(|a| a.kind() == ActionKind::Click).count(),
            trace: vec![],
        });
        events.extend(state.events);
    }
    let traces = tmp.path().join("traces");
    std::fs::create_dir_all(&traces).unwrap();
    write_events(&traces.join("scripted.events.jsonl"), &events).unwrap();
    let body: String = summaries.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
    std::fs::write(traces.join("scripted.sessions.jsonl"), body).unwrap();

    let out = tmp.path().join("out");
    if let Err(e) =
        run_cli(&["--out", out.to_str().unwrap(), "export-augmented", "--traces", traces.to_str().unwrap(), "--merge", cat_dir.to_str().unwrap()])
    {
        return Outcome::Fail(e);
    }
    let counts: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("export.json")).unwrap()).unwrap();
    let lines: BTreeSet<String> = std::fs::read_to_string(out.join("augmented.dat"))
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split("::").collect();
            format!("{}::{}::{}", f[0], f[1], f[2])
        })
        .collect();
    let expected: BTreeSet<String> = [format!("{u1}::{m1}::5"), format!("{u1}::{m2}::4"), format!("{u2}::{m3}::3")].into_iter().collect();
    let merged = load_catalog(&CatalogPaths::in_dir(&out.join("merged")));
    let merged_ok = matches!(&merged, Ok(c) if c.interactions().len() == catalog.interactions().len() + 3);
    check(
        counts["clicks"] == 4 && counts["views"] == 2 && counts["written"] == 3 && lines == expected && merged_ok,
        format!("counts {counts}; merged catalog loads: {}", merged.map(|c| c.interactions().len().to_string()).unwrap_or_else(|e| e.to_string())),
    )
}
