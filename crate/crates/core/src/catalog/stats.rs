//! Per-feature statistics in the shape of the published dataset table
//! (feature, type, count, range), plus range-violation flags.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Catalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub count: usize,
    /// `[min, max]`; character lengths for text features.
    pub range: Option<[Value; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub features: Vec<FeatureStat>,
    pub user_count: usize,
    pub movie_count: usize,
    pub interaction_count: usize,
    pub sparsity: f64,
    pub violations: Vec<String>,
    pub deviations: Vec<String>,
}

/// Declared expectations to compare a report against.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub user_count: Option<usize>,
    pub movie_count: Option<usize>,
    pub sparsity: Option<f64>,
    #[serde(default = "default_sparsity_tol")]
    pub sparsity_tolerance: f64,
    /// Release dates outside this window are flagged as violations.
    pub release_window: Option<(NaiveDate, NaiveDate)>,
    #[serde(default)]
    pub features: Vec<FeatureStat>,
}

fn default_sparsity_tol() -> f64 {
    1e-4
}

impl ExpectedStats {
    /// Published figures for the enriched MovieLens-1M release.
    pub fn mm_ml_1m() -> Self {
        let f = |feature: &str, kind: &str, count: usize, range: Option<[Value; 2]>| FeatureStat {
            feature: feature.into(),
            kind: kind.into(),
            count,
            range,
        };
        ExpectedStats {
            user_count: Some(6040),
            movie_count: Some(3952),
            sparsity: Some(0.0419),
            sparsity_tolerance: 1e-4,
            release_window: Some((NaiveDate::from_ymd_opt(1911, 5, 5).unwrap(), NaiveDate::from_ymd_opt(2024, 6, 7).unwrap())),
            features: vec![
                f("Title", "text", 3822, Some([json!(2), json!(72)])),
                f("Overview", "text", 3814, Some([json!(13), json!(991)])),
                f("Genres", "text", 3789, Some([json!(5), json!(64)])),
                f("Rating", "numerical", 3822, Some([json!(0), json!(10)])),
                f("Vote Count", "numerical", 3822, Some([json!(0), json!(30002)])),
                f("Release Date", "date", 3820, Some([json!("1911-05-05"), json!("2024-06-07")])),
                f("Directors", "text", 3810, Some([json!(3), json!(172)])),
                f("Actors", "text", 3785, Some([json!(8), json!(5101)])),
                f("Poster", "image", 3814, None),
            ],
        }
    }
}

fn text_stat(feature: &str, lens: impl Iterator<Item = usize>) -> FeatureStat {
    let lens: Vec<usize> = lens.filter(|&l| l > 0).collect();
    let range = match (lens.iter().min(), lens.iter().max()) {
        (Some(a), Some(b)) => Some([json!(a), json!(b)]),
        _ => None,
    };
    FeatureStat { feature: feature.into(), kind: "text".into(), count: lens.len(), range }
}

fn num_stat(feature: &str, vals: Vec<f64>) -> FeatureStat {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (!vals.is_empty()).then(|| [num(lo), num(hi)]);
    FeatureStat { feature: feature.into(), kind: "numerical".into(), count: vals.len(), range }
}

fn num(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

/// Computes the statistics report. Never fails: problems are listed in
/// `violations` (invariant breaches) and `deviations` (mismatches against
/// `expected`).
pub fn validate_stats(catalog: &Catalog, expected: Option<&ExpectedStats>) -> StatsReport {
    let chars = |s: &str| s.chars().count();
    let movies: Vec<_> = catalog.movies().collect();
    let mut features = vec![
        text_stat("Title", movies.iter().map(|m| chars(&m.title))),
        text_stat("Overview", movies.iter().map(|m| m.overview.as_deref().map_or(0, chars))),
        text_stat("Genres", movies.iter().map(|m| chars(&m.genres.join("|")))),
        num_stat("Rating", movies.iter().filter_map(|m| m.imdb_rating).collect()),
        num_stat("Vote Count", movies.iter().filter_map(|m| m.vote_count.map(|v| v as f64)).collect()),
    ];
    let dates: Vec<NaiveDate> = movies.iter().filter_map(|m| m.release_date).collect();
    features.push(FeatureStat {
        feature: "Release Date".into(),
        kind: "date".into(),
        count: dates.len(),
        range: match (dates.iter().min(), dates.iter().max()) {
            (Some(a), Some(b)) => Some([json!(a.to_string()), json!(b.to_string())]),
            _ => None,
        },
    });
    features.push(text_stat("Directors", movies.iter().map(|m| chars(&m.directors.join(", ")))));
    features.push(text_stat("Actors", movies.iter().map(|m| chars(&m.actors.join(", ")))));
    features.push(FeatureStat {
        feature: "Poster".into(),
        kind: "image".into(),
        count: movies.iter().filter(|m| m.poster_ref.is_some()).count(),
        range: None,
    });

    let mut violations = Vec::new();
    for m in &movies {
        if let Some(r) = m.imdb_rating {
            if !(0.0..=10.0).contains(&r) {
                violations.push(format!("movie {}: imdb_rating {r} outside [0, 10]", m.movie_id));
            }
        }
        if m.genres.is_empty() {
            violations.push(format!("movie {}: empty genre list", m.movie_id));
        }
        if let (Some(d), Some((lo, hi))) = (m.release_date, expected.and_then(|e| e.release_window)) {
            if d < lo || d > hi {
                violations.push(format!("movie {}: release_date {d} outside [{lo}, {hi}]", m.movie_id));
            }
        }
    }

    let sparsity = catalog.sparsity();
    let mut deviations = Vec::new();
    if let Some(e) = expected {
        let mut cmp = |what: &str, want: Option<usize>, got: usize| {
            if let Some(w) = want {
                if w != got {
                    deviations.push(format!("{what}: expected {w}, found {got}"));
                }
            }
        };
        cmp("user count", e.user_count, catalog.num_users());
        cmp("movie count", e.movie_count, catalog.num_movies());
        if let Some(s) = e.sparsity {
            if (s - sparsity).abs() > e.sparsity_tolerance {
                deviations.push(format!("sparsity: expected {s} ± {}, found {sparsity:.6}", e.sparsity_tolerance));
            }
        }
        for want in &e.features {
            match features.iter().find(|f| f.feature == want.feature) {
                Some(got) if got.count != want.count || got.range != want.range => deviations.push(format!(
                    "{}: expected count {} range {:?}, found count {} range {:?}",
                    want.feature, want.count, want.range, got.count, got.range
                )),
                Some(_) => {}
                None => deviations.push(format!("{}: feature missing", want.feature)),
            }
        }
    }

    StatsReport {
        features,
        user_count: catalog.num_users(),
        movie_count: catalog.num_movies(),
        interaction_count: catalog.interactions().len(),
        sparsity,
        violations,
        deviations,
    }
}
