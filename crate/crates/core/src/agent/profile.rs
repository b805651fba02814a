use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::llm::{ChatMessage, PromptTemplate, TextGenerator};
use super::AgentError;
use crate::catalog::{ActivityTrait, Catalog, Gender, Interaction, Movie, UserId};
use crate::memory::{EmbedInput, EmbeddingProvider};

pub const NOT_FOUND: &str = "not found";

/// Section headings of a preference summary, in display order.
pub const SECTIONS: [&str; 6] = ["Genres", "Directors", "Actors", "Release Date Patterns", "Rating Tendencies", "Poster Style Preference"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub genres: String,
    pub directors: String,
    pub actors: String,
    pub release_date_patterns: String,
    pub rating_tendencies: String,
    pub poster_style: String,
    /// Genres by rating-weighted frequency, strongest first.
    pub ranked_genres: Vec<String>,
}

impl PreferenceSummary {
    pub fn not_found() -> Self {
        let nf = || NOT_FOUND.to_string();
        PreferenceSummary {
            genres: nf(),
            directors: nf(),
            actors: nf(),
            release_date_patterns: nf(),
            rating_tendencies: nf(),
            poster_style: nf(),
            ranked_genres: Vec::new(),
        }
    }

    pub fn sections(&self) -> [(&'static str, &str); 6] {
        [
            (SECTIONS[0], &self.genres),
            (SECTIONS[1], &self.directors),
            (SECTIONS[2], &self.actors),
            (SECTIONS[3], &self.release_date_patterns),
            (SECTIONS[4], &self.rating_tendencies),
            (SECTIONS[5], &self.poster_style),
        ]
    }

    pub fn render(&self) -> String {
        self.sections().iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n")
    }

    /// Reads `Heading: text` lines (markdown emphasis tolerated). Every
    /// section must be present; its text may be "not found".
    pub fn parse(text: &str, ranked_genres: Vec<String>) -> Result<Self, AgentError> {
        let mut found: BTreeMap<&str, String> = BTreeMap::new();
        for line in text.lines() {
            let clean = line.trim().trim_start_matches(['-', '*', '#', ' ']).replace("**", "");
            for h in SECTIONS {
                if let Some(rest) = clean.strip_prefix(h) {
                    if let Some(body) = rest.trim_start().strip_prefix(':') {
                        let body = body.trim();
                        if !body.is_empty() {
                            found.entry(h).or_insert_with(|| body.to_string());
                        }
                    }
                }
            }
        }
        let missing: Vec<&str> = SECTIONS.iter().copied().filter(|h| !found.contains_key(h)).collect();
        if !missing.is_empty() {
            return Err(AgentError::Reply(format!("summary lacks sections {missing:?}")));
        }
        let mut take = |h: &str| found.remove(h).unwrap();
        Ok(PreferenceSummary {
            genres: take(SECTIONS[0]),
            directors: take(SECTIONS[1]),
            actors: take(SECTIONS[2]),
            release_date_patterns: take(SECTIONS[3]),
            rating_tendencies: take(SECTIONS[4]),
            poster_style: take(SECTIONS[5]),
            ranked_genres,
        })
    }
}

fn top_by_weight<'a>(items: impl Iterator<Item = (&'a str, f64)>, n: usize) -> Vec<String> {
    let mut w: BTreeMap<&str, f64> = BTreeMap::new();
    for (k, v) in items {
        *w.entry(k).or_default() += v;
    }
    let mut v: Vec<(&str, f64)> = w.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().take(n).map(|(k, _)| k.to_string()).collect()
}

fn list_or_not_found(items: &[String]) -> String {
    if items.is_empty() {
        NOT_FOUND.into()
    } else {
        items.join(", ")
    }
}

/// Deterministic summary: rating-weighted top-3 genres, directors and
/// actors, the modal release decade, and mean rating per leading genre.
pub fn fallback_summary(history: &[(Interaction, &Movie)]) -> PreferenceSummary {
    if history.is_empty() {
        return PreferenceSummary::not_found();
    }
    let weighted = |f: fn(&Movie) -> &[String]| -> Vec<(&str, f64)> {
        history.iter().flat_map(|(i, m)| f(m).iter().map(move |g| (g.as_str(), i.rating as f64))).collect()
    };
    let ranked_genres = top_by_weight(weighted(|m| &m.genres).into_iter(), usize::MAX);
    let top_genres: Vec<String> = ranked_genres.iter().take(3).cloned().collect();
    let directors = top_by_weight(weighted(|m| &m.directors).into_iter(), 3);
    let actors = top_by_weight(weighted(|m| &m.actors).into_iter(), 3);

    let mut decades: BTreeMap<i32, usize> = BTreeMap::new();
    for (_, m) in history {
        if let Some(y) = m.release_year() {
            *decades.entry(y / 10 * 10).or_default() += 1;
        }
    }
    let release = decades
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(d, _)| format!("mostly films from the {d}s"))
        .unwrap_or_else(|| NOT_FOUND.into());

    let mut per_genre: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (i, m) in history {
        for g in &m.genres {
            let e = per_genre.entry(g.as_str()).or_default();
            e.0 += i.rating as f64;
            e.1 += 1;
        }
    }
    let mut means: Vec<(&str, f64)> = per_genre.iter().map(|(g, (s, n))| (*g, s / *n as f64)).collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let rating =
        if means.is_empty() { NOT_FOUND.to_string() } else { means.iter().map(|(g, m)| format!("{g} {m:.1}")).collect::<Vec<_>>().join(", ") };

    PreferenceSummary {
        genres: list_or_not_found(&top_genres),
        directors: list_or_not_found(&directors),
        actors: list_or_not_found(&actors),
        release_date_patterns: release,
        rating_tendencies: if rating == NOT_FOUND { rating } else { format!("average rating by genre: {rating}") },
        poster_style: NOT_FOUND.into(),
        ranked_genres,
    }
}

/// One history line for the summary prompt.
fn history_line(i: &Interaction, m: &Movie) -> String {
    let mut s = format!("{} | genres: {} | rated {}", m.title, m.genres.join(", "), i.rating);
    if !m.directors.is_empty() {
        s.push_str(&format!(" | directors: {}", m.directors.join(", ")));
    }
    if !m.actors.is_empty() {
        s.push_str(&format!(" | actors: {}", m.actors.join(", ")));
    }
    if let Some(y) = m.release_year() {
        s.push_str(&format!(" | year: {y}"));
    }
    if let Some(p) = &m.poster_ref {
        s.push_str(&format!(" | poster: {p}"));
    }
    s
}

/// Summarizes `history` through `generator` when given, falling back to the
/// deterministic aggregation on empty history or generator failure.
pub fn build_preference_summary(history: &[(Interaction, &Movie)], generator: Option<(&dyn TextGenerator, &PromptTemplate)>) -> PreferenceSummary {
    let fallback = fallback_summary(history);
    let Some((gen, template)) = generator else { return fallback };
    if history.is_empty() {
        return fallback;
    }
    let lines: Vec<String> = history.iter().map(|(i, m)| history_line(i, m)).collect();
    let prompt = match template.render(&[("history", lines.join("\n"))]) {
        Ok(p) => p,
        Err(e) => {
            tracing::warn!(error = %e, "preference template failed; using fallback summary");
            return fallback;
        }
    };
    let reply = gen.generate(&[ChatMessage::user(prompt)]);
    match reply.and_then(|text| PreferenceSummary::parse(&text, fallback.ranked_genres.clone())) {
        Ok(s) => s,
        Err(e) => {
            tracing::warn!(error = %e, "preference generation failed; using fallback summary");
            fallback
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub user_id: UserId,
    pub gender: Gender,
    pub age: u32,
    pub occupation: u32,
    pub zip: String,
    pub activity_trait: ActivityTrait,
    pub preference: PreferenceSummary,
    /// Mean poster embedding over well-rated history, when vision is on.
    pub poster_style: Option<Vec<f32>>,
}

impl Profile {
    /// Builds a profile from `history` (the user's training interactions).
    /// `image` enables the poster-style embedding.
    pub fn build(
        catalog: &Catalog,
        user: UserId,
        history: &[Interaction],
        generator: Option<(&dyn TextGenerator, &PromptTemplate)>,
        image: Option<&dyn EmbeddingProvider>,
    ) -> Result<Self, AgentError> {
        let u = catalog.user(user).ok_or_else(|| AgentError::Config(format!("unknown user {user}")))?;
        let pairs: Vec<(Interaction, &Movie)> =
            history.iter().filter(|i| i.user_id == user).filter_map(|i| catalog.movie(i.movie_id).map(|m| (*i, m))).collect();
        let preference = build_preference_summary(&pairs, generator);
        let poster_style = match image {
            Some(img) => poster_style(&pairs, img)?,
            None => None,
        };
        Ok(Profile {
            user_id: user,
            gender: u.gender,
            age: u.age,
            occupation: u.occupation,
            zip: u.zip.clone(),
            activity_trait: u.activity_trait,
            preference,
            poster_style,
        })
    }

    pub fn top_genres(&self, n: usize) -> &[String] {
        &self.preference.ranked_genres[..n.min(self.preference.ranked_genres.len())]
    }

    pub fn render(&self) -> String {
        let g = match self.gender {
            Gender::M => "male",
            Gender::F => "female",
        };
        format!(
            "User {}: {g}, age group {}, occupation {}, zip {}, activity {}.\n{}",
            self.user_id,
            self.age,
            self.occupation,
            self.zip,
            self.activity_trait.as_str(),
            self.preference.render()
        )
    }
}

/// Mean poster embedding over history rated 4 or higher.
fn poster_style(pairs: &[(Interaction, &Movie)], image: &dyn EmbeddingProvider) -> Result<Option<Vec<f32>>, AgentError> {
    let mut sum = vec![0.0f32; image.dimension()];
    let mut n = 0;
    for (i, m) in pairs {
        if i.rating < 4 {
            continue;
        }
        if let Some(p) = &m.poster_ref {
            let e = image.embed(EmbedInput::Asset(p))?;
            sum.iter_mut().zip(&e).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    sum.iter_mut().for_each(|s| *s /= n as f32);
    Ok(Some(sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::MovieId;

    fn toy() -> Vec<(Interaction, Movie)> {
        let mut out = Vec::new();
        for i in 0..5 {
            let mut m = Movie::new(MovieId(i + 1), format!("Funny {i} (1994)"), vec!["Comedy".into()]);
            m.directors = vec!["D. Laugh".into()];
            out.push((Interaction { user_id: UserId(1), movie_id: m.movie_id, rating: 5, timestamp: i as i64 }, m));
        }
        let m = Movie::new(MovieId(9), "Sad (1971)", vec!["Drama".into()]);
        out.push((Interaction { user_id: UserId(1), movie_id: m.movie_id, rating: 2, timestamp: 9 }, m));
        out
    }

    #[test]
    fn empty_history_is_all_not_found() {
        let s = fallback_summary(&[]);
        assert!(s.sections().iter().all(|(_, v)| *v == NOT_FOUND));
    }

    #[test]
    fn fallback_leads_with_comedy() {
        let data = toy();
        let pairs: Vec<(Interaction, &Movie)> = data.iter().map(|(i, m)| (*i, m)).collect();
        let s = fallback_summary(&pairs);
        assert!(s.genres.starts_with("Comedy"));
        assert_eq!(s.ranked_genres, vec!["Comedy", "Drama"]);
        assert!(s.rating_tendencies.contains("Comedy 5.0"));
        assert!(s.rating_tendencies.find("Comedy").unwrap() < s.rating_tendencies.find("Drama").unwrap());
        assert_eq!(s.release_date_patterns, "mostly films from the 1990s");
        assert_eq!(s.directors, "D. Laugh");
        assert_eq!(s.actors, NOT_FOUND);
        assert_eq!(s.poster_style, NOT_FOUND);
        assert_eq!(s, fallback_summary(&pairs));
    }

    #[test]
    fn parse_requires_every_section() {
        let text = "**Genres:** Drama\n**Directors:** not found\nActors: A\n- Release Date Patterns: 1990s\nRating Tendencies: high\nPoster Style Preference: not found\n";
        let s = PreferenceSummary::parse(text, vec![]).unwrap();
        assert_eq!(s.genres, "Drama");
        assert_eq!(s.release_date_patterns, "1990s");
        assert!(PreferenceSummary::parse("Genres: Drama", vec![]).is_err());
        let round = PreferenceSummary::parse(&s.render(), vec![]).unwrap();
        assert_eq!(round, s);
    }
}
