use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Movie, MovieId};

/// Home-page card: poster, title, rating and genres only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieCard {
    pub movie_id: MovieId,
    pub title: String,
    pub imdb_rating: Option<f64>,
    pub genres: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poster_ref: Option<String>,
}

impl MovieCard {
    pub(crate) fn from_catalog(catalog: &Catalog, id: MovieId, vision: bool) -> Self {
        match catalog.movie(id) {
            Some(m) => MovieCard {
                movie_id: id,
                title: m.title.clone(),
                imdb_rating: m.imdb_rating,
                genres: m.genres.clone(),
                poster_ref: if vision { m.poster_ref.clone() } else { None },
            },
            None => MovieCard { movie_id: id, title: format!("movie {id}"), imdb_rating: None, genres: vec![], poster_ref: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeObservation {
    pub page_index: usize,
    pub page_count: usize,
    pub cards: Vec<MovieCard>,
}

/// Detail page: the full movie record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailObservation {
    pub movie: Movie,
    pub already_watched: bool,
}

impl DetailObservation {
    pub(crate) fn from_catalog(catalog: &Catalog, id: MovieId, vision: bool, already_watched: bool) -> Self {
        let mut movie = catalog.movie(id).cloned().unwrap_or_else(|| Movie::new(id, format!("movie {id}"), vec![]));
        if !vision {
            movie.poster_ref = None;
        }
        DetailObservation { movie, already_watched }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "interface")]
pub enum Observation {
    Home(HomeObservation),
    Detail(DetailObservation),
}

impl Observation {
    pub fn is_home(&self) -> bool {
        matches!(self, Observation::Home(_))
    }

    /// Human-readable rendering, used in prompts and as the text query for
    /// memory retrieval.
    pub fn render(&self) -> String {
        let mut s = String::new();
        match self {
            Observation::Home(h) => {
                let _ = writeln!(s, "Home page {} of {}.", h.page_index + 1, h.page_count);
                for c in &h.cards {
                    let rating = c.imdb_rating.map_or("n/a".to_string(), |r| format!("{r:.1}"));
                    let _ = write!(s, "- [{}] {} | rating {} | genres {}", c.movie_id, c.title, rating, c.genres.join("|"));
                    if let Some(p) = &c.poster_ref {
                        let _ = write!(s, " | poster {p}");
                    }
                    s.push('\n');
                }
            }
            Observation::Detail(d) => {
                let m = &d.movie;
                let _ = writeln!(s, "Detail page for [{}] {}.", m.movie_id, m.title);
                let _ = writeln!(s, "Genres: {}", m.genres.join("|"));
                if let Some(r) = m.imdb_rating {
                    let _ = writeln!(s, "Rating: {r:.1}");
                }
                if let Some(v) = m.vote_count {
                    let _ = writeln!(s, "Votes: {v}");
                }
                if let Some(d) = m.release_date {
                    let _ = writeln!(s, "Released: {d}");
                }
                if !m.directors.is_empty() {
                    let _ = writeln!(s, "Directors: {}", m.directors.join(", "));
                }
                if !m.actors.is_empty() {
                    let _ = writeln!(s, "Cast: {}", m.actors.join(", "));
                }
                if let Some(o) = &m.overview {
                    let _ = writeln!(s, "Overview: {o}");
                }
                if let Some(p) = &m.poster_ref {
                    let _ = writeln!(s, "Poster: {p}");
                }
                if d.already_watched {
                    s.push_str("You have already watched this movie in this session.\n");
                }
            }
        }
        s
    }

    /// Poster references visible on this page.
    pub fn poster_refs(&self) -> Vec<&str> {
        match self {
            Observation::Home(h) => h.cards.iter().filter_map(|c| c.poster_ref.as_deref()).collect(),
            Observation::Detail(d) => d.movie.poster_ref.as_deref().into_iter().collect(),
        }
    }
}
