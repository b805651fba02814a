//! Deterministic rule policy.
//!
//! A card scores
//! `(0.5 * jaccard(top-3 profile genres, card genres) + 0.3 * imdb / 10
//!   + 0.2 * max(0, cosine(profile poster style, card poster))) / weight_sum`
//! plus seeded uniform noise. The poster term and its weight drop out when
//! vision is off or either embedding is missing. Interest is
//! `1 + round(4 * score)` clamped to 1..=5.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{AgentError, Decision, DecisionInput, Policy, PolicyKind};
use crate::catalog::MovieId;
use crate::memory::{cosine, EmbedInput};
use crate::sandbox::{Action, ActionKind, MovieCard, Observation};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub genre_weight: f64,
    pub rating_weight: f64,
    pub poster_weight: f64,
    /// Half-width of the uniform score noise.
    pub noise: f64,
    /// Minimum score for a click, before the trait offset.
    pub click_threshold: f64,
    /// Minimum interest to watch, before the trait offset.
    pub watch_threshold: f64,
    /// How many leading profile genres the overlap term compares against.
    pub profile_genres: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            genre_weight: 0.5,
            rating_weight: 0.3,
            poster_weight: 0.2,
            noise: 0.05,
            click_threshold: 0.55,
            watch_threshold: 4.0,
            profile_genres: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RulePolicy {
    pub config: RuleConfig,
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: HashSet<&str> = a.iter().map(String::as_str).collect();
    let b: HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn interest_from_score(score: f64) -> u8 {
    (1.0 + (4.0 * score).round()).clamp(1.0, 5.0) as u8
}

impl RulePolicy {
    pub fn new(config: RuleConfig) -> Self {
        RulePolicy { config }
    }

    /// Noise-free preference score in [0, 1].
    pub fn base_score(&self, input: &DecisionInput<'_>, genres: &[String], imdb: Option<f64>, poster: Option<&str>) -> Result<f64, AgentError> {
        let c = &self.config;
        let profile = input.profile.top_genres(c.profile_genres);
        let mut num = c.genre_weight * jaccard(profile, genres) + c.rating_weight * (imdb.unwrap_or(5.0) / 10.0).clamp(0.0, 1.0);
        let mut den = c.genre_weight + c.rating_weight;
        if let (true, Some(img), Some(style), Some(p)) = (input.vision, input.image, input.profile.poster_style.as_deref(), poster) {
            let e = img.embed(EmbedInput::Asset(p))?;
            num += c.poster_weight * cosine(style, &e).unwrap_or(0.0).max(0.0);
            den += c.poster_weight;
        }
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }

    fn noise(&self, session_seed: u64, movie: MovieId) -> f64 {
        let u = seed::unit(seed::derive(session_seed, &[0x6e_6f69_7365, movie.0 as u64]));
        (2.0 * u - 1.0) * self.config.noise
    }

    pub fn score(
        &self,
        input: &DecisionInput<'_>,
        movie: MovieId,
        genres: &[String],
        imdb: Option<f64>,
        poster: Option<&str>,
    ) -> Result<f64, AgentError> {
        Ok(self.base_score(input, genres, imdb, poster)? + self.noise(input.seed, movie))
    }

    fn card_score(&self, input: &DecisionInput<'_>, card: &MovieCard) -> Result<f64, AgentError> {
        self.score(input, card.movie_id, &card.genres, card.imdb_rating, card.poster_ref.as_deref())
    }
}

impl Policy for RulePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Rule
    }

    fn decide(&self, input: &DecisionInput<'_>) -> Result<Decision, AgentError> {
        let legal = input.legal;
        let exit = |interest: u8, why: &str| Decision { action: Action::Exit, interest, explanation: why.to_string() };
        if input.fatigue.exhausted() {
            return Ok(exit(1, "too tired to continue"));
        }
        match input.observation {
            Observation::Home(home) => {
                let clicked: BTreeSet<MovieId> = input
                    .short_term
                    .entries()
                    .iter()
                    .filter_map(|e| match e.action_taken {
                        Action::Click { movie_id } => Some(movie_id),
                        _ => None,
                    })
                    .collect();
                let threshold = self.config.click_threshold + input.threshold_offset / 4.0;
                let mut best: Option<(f64, &MovieCard)> = None;
                let mut page_interest = 1;
                for card in &home.cards {
                    let s = self.card_score(input, card)?;
                    page_interest = page_interest.max(interest_from_score(s));
                    if clicked.contains(&card.movie_id) || s < threshold {
                        continue;
                    }
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, card));
                    }
                }
                if let (Some((s, card)), true) = (best, legal.contains(&ActionKind::Click)) {
                    return Ok(Decision {
                        action: Action::Click { movie_id: card.movie_id },
                        interest: interest_from_score(s),
                        explanation: format!("{} fits my taste", card.title),
                    });
                }
                if legal.contains(&ActionKind::NextPage) {
                    return Ok(Decision { action: Action::NextPage, interest: page_interest, explanation: "nothing here appeals".into() });
                }
                Ok(exit(page_interest, "nothing left worth opening"))
            }
            Observation::Detail(d) => {
                let m = &d.movie;
                let s = self.score(input, m.movie_id, &m.genres, m.imdb_rating, m.poster_ref.as_deref())?;
                let interest = interest_from_score(s);
                let need = self.config.watch_threshold + input.threshold_offset;
                if !d.already_watched && interest as f64 >= need && legal.contains(&ActionKind::WatchAndRate) {
                    return Ok(Decision {
                        action: Action::WatchAndRate { rating: interest },
                        interest,
                        explanation: format!("{} matches what I rate highly", m.title),
                    });
                }
                if legal.contains(&ActionKind::Back) {
                    return Ok(Decision { action: Action::Back, interest, explanation: "not for me".into() });
                }
                Ok(exit(interest, "no way back"))
            }
        }
    }
}
