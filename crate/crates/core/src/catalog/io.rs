//! MovieLens-1M style `::`-delimited files plus a JSON-lines metadata file.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    check_interaction, issue, ActivityTrait, Catalog, CatalogError, Gender, Interaction, IssueKind, LineIssue, Movie, MovieId, User, UserId,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogPaths {
    pub movies: PathBuf,
    pub users: PathBuf,
    pub interactions: PathBuf,
    pub metadata: Option<PathBuf>,
}

impl CatalogPaths {
    /// The standard ML-1M file names inside `dir`, with `metadata.jsonl`
    /// picked up only if present.
    pub fn in_dir(dir: &Path) -> Self {
        let meta = dir.join("metadata.jsonl");
        CatalogPaths {
            movies: dir.join("movies.dat"),
            users: dir.join("users.dat"),
            interactions: dir.join("ratings.dat"),
            metadata: meta.exists().then_some(meta),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct MetadataRecord {
    movie_id: u32,
    #[serde(default)]
    overview: Option<String>,
    #[serde(default)]
    imdb_rating: Option<f64>,
    #[serde(default)]
    vote_count: Option<u64>,
    #[serde(default)]
    release_date: Option<NaiveDate>,
    #[serde(default)]
    directors: Vec<String>,
    #[serde(default)]
    actors: Vec<String>,
    #[serde(default)]
    poster_ref: Option<String>,
}

fn read_text(path: &Path) -> Result<String, CatalogError> {
    let bytes = fs::read(path).map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
    // ML-1M ships latin-1 titles; fall back to a byte-per-char decode.
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_field<T: std::str::FromStr>(raw: &str, field: &str, file: &str, line: usize, issues: &mut Vec<LineIssue>) -> Option<T> {
    match raw.trim().parse() {
        Ok(v) => Some(v),
        Err(_) => {
            issues.push(issue(file, line, IssueKind::Malformed, format!("field {field}: cannot parse {raw:?}")));
            None
        }
    }
}

fn parse_movies(text: &str, file: &str, issues: &mut Vec<LineIssue>) -> Vec<(usize, Movie)> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let (Some(first), Some(last)) = (line.find("::"), line.rfind("::")) else {
            issues.push(issue(file, n, IssueKind::Malformed, "expected MovieID::Title::Genres".into()));
            continue;
        };
        if first == last {
            issues.push(issue(file, n, IssueKind::Malformed, "field Genres: missing".into()));
            continue;
        }
        let Some(id) = parse_field::<u32>(&line[..first], "MovieID", file, n, issues) else { continue };
        let title = &line[first + 2..last];
        let genres: Vec<String> = line[last + 2..].split('|').map(str::trim).filter(|g| !g.is_empty()).map(String::from).collect();
        out.push((n, Movie::new(MovieId(id), title, genres)));
    }
    out
}

fn parse_users(text: &str, file: &str, issues: &mut Vec<LineIssue>) -> Vec<(usize, User)> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 5 {
            issues.push(issue(file, n, IssueKind::Malformed, format!("expected 5 fields, found {}", f.len())));
            continue;
        }
        let gender = match f[1].trim() {
            "M" => Some(Gender::M),
            "F" => Some(Gender::F),
            other => {
                issues.push(issue(file, n, IssueKind::Malformed, format!("field Gender: {other:?} is not M or F")));
                None
            }
        };
        let id = parse_field::<u32>(f[0], "UserID", file, n, issues);
        let age = parse_field::<u32>(f[2], "Age", file, n, issues);
        let occ = parse_field::<u32>(f[3], "Occupation", file, n, issues);
        if let (Some(id), Some(gender), Some(age), Some(occupation)) = (id, gender, age, occ) {
            out.push((n, User { user_id: UserId(id), gender, age, occupation, zip: f[4].trim().to_string(), activity_trait: ActivityTrait::Medium }));
        }
    }
    out
}

fn parse_interactions(text: &str, file: &str, issues: &mut Vec<LineIssue>) -> Vec<(usize, Interaction)> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 4 {
            issues.push(issue(file, n, IssueKind::Malformed, format!("expected 4 fields, found {}", f.len())));
            continue;
        }
        let u = parse_field::<u32>(f[0], "UserID", file, n, issues);
        let m = parse_field::<u32>(f[1], "MovieID", file, n, issues);
        let r = parse_field::<u8>(f[2], "Rating", file, n, issues);
        let t = parse_field::<i64>(f[3], "Timestamp", file, n, issues);
        if let (Some(u), Some(m), Some(r), Some(t)) = (u, m, r, t) {
            out.push((n, Interaction { user_id: UserId(u), movie_id: MovieId(m), rating: r, timestamp: t }));
        }
    }
    out
}

/// Reads an interactions file on its own, without referential checks.
pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>, CatalogError> {
    let text = read_text(path)?;
    let mut issues = Vec::new();
    let out = parse_interactions(&text, &file_label(path), &mut issues);
    if issues.is_empty() {
        Ok(out.into_iter().map(|(_, i)| i).collect())
    } else {
        Err(CatalogError::Invalid(issues))
    }
}

/// Loads and cross-validates the catalog files. Every problem found is
/// collected, with its file and line, before failing.
pub fn load_catalog(paths: &CatalogPaths) -> Result<Catalog, CatalogError> {
    let movies_text = read_text(&paths.movies)?;
    let users_text = read_text(&paths.users)?;
    let ints_text = read_text(&paths.interactions)?;
    let meta_text = paths.metadata.as_deref().map(read_text).transpose()?;

    let mut issues = Vec::new();
    let mfile = file_label(&paths.movies);
    let ufile = file_label(&paths.users);
    let ifile = file_label(&paths.interactions);

    let mut movies = BTreeMap::new();
    for (n, m) in parse_movies(&movies_text, &mfile, &mut issues) {
        let id = m.movie_id;
        if movies.insert(id, m).is_some() {
            issues.push(issue(&mfile, n, IssueKind::DuplicateKey, format!("duplicate movie_id {id}")));
        }
    }
    let mut users = BTreeMap::new();
    for (n, u) in parse_users(&users_text, &ufile, &mut issues) {
        let id = u.user_id;
        if users.insert(id, u).is_some() {
            issues.push(issue(&ufile, n, IssueKind::DuplicateKey, format!("duplicate user_id {id}")));
        }
    }
    if let (Some(text), Some(path)) = (meta_text, paths.metadata.as_deref()) {
        let file = file_label(path);
        let mut seen = HashSet::new();
        for (n, line) in lines(&text) {
            let rec: MetadataRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    issues.push(issue(&file, n, IssueKind::Malformed, format!("invalid metadata record: {e}")));
                    continue;
                }
            };
            if !seen.insert(rec.movie_id) {
                issues.push(issue(&file, n, IssueKind::DuplicateKey, format!("duplicate movie_id {}", rec.movie_id)));
                continue;
            }
            match movies.get_mut(&MovieId(rec.movie_id)) {
                Some(m) => {
                    m.overview = rec.overview;
                    m.imdb_rating = rec.imdb_rating;
                    m.vote_count = rec.vote_count;
                    m.release_date = rec.release_date;
                    m.directors = rec.directors;
                    m.actors = rec.actors;
                    m.poster_ref = rec.poster_ref;
                }
                None => issues.push(issue(&file, n, IssueKind::DanglingReference, format!("unknown movie_id {}", rec.movie_id))),
            }
        }
    }
    let mut interactions = Vec::new();
    let mut seen = HashSet::new();
    for (n, it) in parse_interactions(&ints_text, &ifile, &mut issues) {
        let before = issues.len();
        check_interaction(&it, n, &ifile, &movies, &users, &mut seen, &mut issues);
        if issues.len() == before {
            interactions.push(it);
        }
    }
    if !issues.is_empty() {
        return Err(CatalogError::Invalid(issues));
    }
    Catalog::new(movies.into_values().collect(), users.into_values().collect(), interactions)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, body: &str) -> Result<(), CatalogError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<(), CatalogError> {
    let mut body = String::new();
    for i in interactions {
        body.push_str(&format!("{}::{}::{}::{}\n", i.user_id, i.movie_id, i.rating, i.timestamp));
    }
    write_file(path, &body)
}

/// Writes the catalog in the same layout [`load_catalog`] reads. A metadata
/// file is always written. Activity traits are not part of the layout.
pub fn write_catalog(catalog: &Catalog, dir: &Path) -> Result<CatalogPaths, CatalogError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = CatalogPaths {
        movies: dir.join("movies.dat"),
        users: dir.join("users.dat"),
        interactions: dir.join("ratings.dat"),
        metadata: Some(dir.join("metadata.jsonl")),
    };
    let mut movies = String::new();
    let mut meta = String::new();
    for m in catalog.movies() {
        movies.push_str(&format!("{}::{}::{}\n", m.movie_id, m.title, m.genres.join("|")));
        let rec = MetadataRecord {
            movie_id: m.movie_id.0,
            overview: m.overview.clone(),
            imdb_rating: m.imdb_rating,
            vote_count: m.vote_count,
            release_date: m.release_date,
            directors: m.directors.clone(),
            actors: m.actors.clone(),
            poster_ref: m.poster_ref.clone(),
        };
        meta.push_str(&serde_json::to_string(&rec).expect("metadata serializes"));
        meta.push('\n');
    }
    let mut users = String::new();
    for u in catalog.users() {
        let g = match u.gender {
            Gender::M => "M",
            Gender::F => "F",
        };
        users.push_str(&format!("{}::{}::{}::{}::{}\n", u.user_id, g, u.age, u.occupation, u.zip));
    }
    write_file(&paths.movies, &movies)?;
    write_file(&paths.users, &users)?;
    write_interactions(&paths.interactions, catalog.interactions())?;
    write_file(paths.metadata.as_deref().unwrap(), &meta)?;
    Ok(paths)
}
