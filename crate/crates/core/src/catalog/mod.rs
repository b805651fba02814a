//! Dataset schema for the movie catalog: movies with enriched metadata, users
//! with demographics, and timestamped ratings.
//!
//! A [`Catalog`] is immutable once built. Loading enforces referential
//! integrity; range checks on metadata are reported by [`validate_stats`]
//! instead of rejected, since the enriched metadata is known to be noisy.

mod io;
mod split;
mod stats;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use io::{load_catalog, load_interactions, write_catalog, write_interactions, CatalogPaths};
pub use split::{chronological_split, DatasetSplit, SplitWarning};
pub use stats::{validate_stats, ExpectedStats, FeatureStat, StatsReport};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticCatalog, SyntheticSpec};

/// Genre labels used by MovieLens-1M, in the dataset's own spelling.
pub const ML1M_GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovieId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for MovieId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movie {
    pub movie_id: MovieId,
    pub title: String,
    pub genres: Vec<String>,
    pub overview: Option<String>,
    pub imdb_rating: Option<f64>,
    pub vote_count: Option<u64>,
    pub release_date: Option<NaiveDate>,
    pub directors: Vec<String>,
    pub actors: Vec<String>,
    /// Opaque asset reference. Never dereferenced by this crate.
    pub poster_ref: Option<String>,
}

impl Movie {
    pub fn new(movie_id: MovieId, title: impl Into<String>, genres: Vec<String>) -> Self {
        Movie {
            movie_id,
            title: title.into(),
            genres,
            overview: None,
            imdb_rating: None,
            vote_count: None,
            release_date: None,
            directors: Vec::new(),
            actors: Vec::new(),
            poster_ref: None,
        }
    }

    /// Release year from metadata, falling back to the `(YYYY)` suffix that
    /// MovieLens titles carry.
    pub fn release_year(&self) -> Option<i32> {
        use chrono::Datelike;
        if let Some(d) = self.release_date {
            return Some(d.year());
        }
        let t = self.title.trim_end();
        let open = t.rfind('(')?;
        let inner = t[open + 1..].strip_suffix(')')?;
        if inner.len() == 4 {
            inner.parse().ok()
        } else {
            None
        }
    }

    /// Plain-text rendering of the metadata, used as embedding input.
    pub fn describe(&self) -> String {
        let mut s = format!("{}. Genres: {}.", self.title, self.genres.join("|"));
        if let Some(r) = self.imdb_rating {
            s.push_str(&format!(" Rating {r:.1}."));
        }
        if !self.directors.is_empty() {
            s.push_str(&format!(" Directed by {}.", self.directors.join(", ")));
        }
        if !self.actors.is_empty() {
            s.push_str(&format!(" Starring {}.", self.actors.join(", ")));
        }
        if let Some(o) = &self.overview {
            s.push(' ');
            s.push_str(o);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityTrait {
    Low,
    #[default]
    Medium,
    High,
}

impl ActivityTrait {
    pub const ALL: [ActivityTrait; 3] = [ActivityTrait::Low, ActivityTrait::Medium, ActivityTrait::High];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityTrait::Low => "low",
            ActivityTrait::Medium => "medium",
            ActivityTrait::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub gender: Gender,
    pub age: u32,
    pub occupation: u32,
    pub zip: String,
    #[serde(default)]
    pub activity_trait: ActivityTrait,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub rating: u8,
    pub timestamp: i64,
}

/// Where a loading or validation problem was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineIssue {
    pub file: String,
    pub line: usize,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Malformed,
    DanglingReference,
    DuplicateKey,
}

impl fmt::Display for LineIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {:?}: {}", self.file, self.line, self.kind, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} problem(s) in input; first: {}", .0.len(), .0[0])]
    Invalid(Vec<LineIssue>),
    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),
    #[error("invalid split ratios: {0}")]
    Ratios(String),
}

/// Movies, users and interactions with referential integrity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    movies: BTreeMap<MovieId, Movie>,
    users: BTreeMap<UserId, User>,
    interactions: Vec<Interaction>,
}

impl Catalog {
    /// Builds a catalog, rejecting dangling references and duplicate keys.
    /// Interactions keep their given order.
    pub fn new(movies: Vec<Movie>, users: Vec<User>, interactions: Vec<Interaction>) -> Result<Self, CatalogError> {
        let mut issues = Vec::new();
        let mut movie_map = BTreeMap::new();
        for (i, m) in movies.into_iter().enumerate() {
            let id = m.movie_id;
            if movie_map.insert(id, m).is_some() {
                issues.push(issue("movies", i + 1, IssueKind::DuplicateKey, format!("duplicate movie_id {id}")));
            }
        }
        let mut user_map = BTreeMap::new();
        for (i, u) in users.into_iter().enumerate() {
            let id = u.user_id;
            if user_map.insert(id, u).is_some() {
                issues.push(issue("users", i + 1, IssueKind::DuplicateKey, format!("duplicate user_id {id}")));
            }
        }
        let mut seen = HashSet::new();
        for (i, it) in interactions.iter().enumerate() {
            check_interaction(it, i + 1, "interactions", &movie_map, &user_map, &mut seen, &mut issues);
        }
        if issues.is_empty() {
            Ok(Catalog { movies: movie_map, users: user_map, interactions })
        } else {
            Err(CatalogError::Invalid(issues))
        }
    }

    pub fn movies(&self) -> impl ExactSizeIterator<Item = &Movie> {
        self.movies.values()
    }

    pub fn users(&self) -> impl ExactSizeIterator<Item = &User> {
        self.users.values()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn movie(&self, id: MovieId) -> Option<&Movie> {
        self.movies.get(&id)
    }

    pub fn user(&self, id: UserId) -> Option<&User> {
        self.users.get(&id)
    }

    pub fn movie_ids(&self) -> Vec<MovieId> {
        self.movies.keys().copied().collect()
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.users.keys().copied().collect()
    }

    pub fn num_movies(&self) -> usize {
        self.movies.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// |interactions| / (|users| · |movies|); zero for an empty grid.
    pub fn sparsity(&self) -> f64 {
        let grid = self.users.len() as f64 * self.movies.len() as f64;
        if grid == 0.0 {
            0.0
        } else {
            self.interactions.len() as f64 / grid
        }
    }

    /// Largest interaction timestamp, or 0 for an empty catalog.
    pub fn max_timestamp(&self) -> i64 {
        self.interactions.iter().map(|i| i.timestamp).max().unwrap_or(0)
    }

    /// Returns a copy with each user's activity trait replaced by `assign`.
    pub fn with_traits(&self, mut assign: impl FnMut(&User) -> ActivityTrait) -> Catalog {
        let mut c = self.clone();
        for u in c.users.values_mut() {
            u.activity_trait = assign(u);
        }
        c
    }

    /// Returns a catalog extended with extra interactions, validating them
    /// against the existing movies and users.
    pub fn with_interactions(&self, extra: &[Interaction]) -> Result<Catalog, CatalogError> {
        let mut all = self.interactions.clone();
        all.extend_from_slice(extra);
        Catalog::new(self.movies.values().cloned().collect(), self.users.values().cloned().collect(), all)
    }
}

fn issue(file: &str, line: usize, kind: IssueKind, message: String) -> LineIssue {
    LineIssue { file: file.to_string(), line, kind, message }
}

pub(crate) fn check_interaction(
    it: &Interaction,
    line: usize,
    file: &str,
    movies: &BTreeMap<MovieId, Movie>,
    users: &BTreeMap<UserId, User>,
    seen: &mut HashSet<(UserId, MovieId, i64)>,
    issues: &mut Vec<LineIssue>,
) {
    if !(1..=5).contains(&it.rating) {
        issues.push(issue(file, line, IssueKind::Malformed, format!("field Rating: {} outside [1,5]", it.rating)));
    }
    if !users.contains_key(&it.user_id) {
        issues.push(issue(file, line, IssueKind::DanglingReference, format!("unknown user_id {}", it.user_id)));
    }
    if !movies.contains_key(&it.movie_id) {
        issues.push(issue(file, line, IssueKind::DanglingReference, format!("unknown movie_id {}", it.movie_id)));
    }
    if !seen.insert((it.user_id, it.movie_id, it.timestamp)) {
        issues.push(issue(
            file,
            line,
            IssueKind::DuplicateKey,
            format!("duplicate (user_id, movie_id, timestamp) ({}, {}, {})", it.user_id, it.movie_id, it.timestamp),
        ));
    }
}
