//! The two-page recommendation environment.
//!
//! A session pages through a ranked slate `page_size` cards at a time on the
//! home page and opens a detail page per clicked movie. Every transition is
//! validated against [`Sandbox::legal_actions`] and recorded in an
//! append-only event log, which [`Sandbox::replay`] can re-execute.

mod event;
mod observation;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, MovieId, UserId};
use crate::recsys::RankedList;

pub use event::{read_events, write_events, Event, EventKind};
pub use observation::{DetailObservation, HomeObservation, MovieCard, Observation};

/// Logical seconds between consecutive steps in event timestamps.
pub const STEP_SECONDS: i64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub k: usize,
    pub page_size: usize,
    pub step_cap: u32,
    pub vision_enabled: bool,
    /// Whether returning from a detail page logs a fresh impression.
    pub recount_impressions_on_back: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig { k: 20, page_size: 5, step_cap: 100, vision_enabled: true, recount_impressions_on_back: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "page")]
pub enum Location {
    Home { page_index: usize },
    Detail { movie_id: MovieId, from_page: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    AgentExit,
    FatigueExhausted,
    StepCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    Click { movie_id: MovieId },
    NextPage,
    PrevPage,
    Exit,
    WatchAndRate { rating: u8 },
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Click,
    NextPage,
    PrevPage,
    WatchAndRate,
    Back,
    Exit,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::NextPage => ActionKind::NextPage,
            Action::PrevPage => ActionKind::PrevPage,
            Action::Exit => ActionKind::Exit,
            Action::WatchAndRate { .. } => ActionKind::WatchAndRate,
            Action::Back => ActionKind::Back,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "click" | "clickmovie" => ActionKind::Click,
            "nextpage" | "next" => ActionKind::NextPage,
            "prevpage" | "previouspage" | "prev" => ActionKind::PrevPage,
            "watchandrate" | "watchandratemovie" | "watch" => ActionKind::WatchAndRate,
            "back" | "backaction" => ActionKind::Back,
            "exit" | "exitaction" => ActionKind::Exit,
            _ => return Err(format!("unknown action {s:?}")),
        })
    }
}

/// Formats a legal-action set as `{Click, NextPage, Exit}`.
pub fn format_kinds(kinds: &BTreeSet<ActionKind>) -> String {
    let names: Vec<String> = kinds.iter().map(ToString::to_string).collect();
    format!("{{{}}}", names.join(", "))
}

/// Identity of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub user_id: UserId,
    pub arm_id: String,
    pub start_time: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub header: SessionHeader,
    pub ranked: RankedList,
    pub page_size: usize,
    pub location: Location,
    pub terminated: Option<TerminationReason>,
    pub step_count: u32,
    pub watched: BTreeSet<MovieId>,
    pub events: Vec<Event>,
}

impl SessionState {
    pub fn page_count(&self) -> usize {
        self.ranked.items.len().div_ceil(self.page_size)
    }

    pub fn page_items(&self, page_index: usize) -> &[MovieId] {
        let start = page_index * self.page_size;
        let end = (start + self.page_size).min(self.ranked.items.len());
        &self.ranked.items[start..end]
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated.is_some()
    }

    /// Equality up to the exit reason: a logged exit does not record whether
    /// the agent left voluntarily or was exhausted.
    pub fn replay_equivalent(&self, other: &SessionState) -> bool {
        let norm = |r: Option<TerminationReason>| match r {
            Some(TerminationReason::FatigueExhausted) => Some(TerminationReason::AgentExit),
            r => r,
        };
        let mut a = self.clone();
        let mut b = other.clone();
        a.terminated = norm(a.terminated);
        b.terminated = norm(b.terminated);
        a == b
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SandboxError {
    #[error("ranked list of {len} items is shorter than one page ({page_size})")]
    ListTooShort { len: usize, page_size: usize },
    #[error("illegal: {attempted} not in {legal}")]
    Illegal { attempted: String, legal: String },
    #[error("session already terminated")]
    Terminated,
    #[error("replay: {0}")]
    Replay(String),
}

pub struct Sandbox<'a> {
    catalog: &'a Catalog,
    config: SandboxConfig,
}

impl<'a> Sandbox<'a> {
    pub fn new(catalog: &'a Catalog, config: SandboxConfig) -> Self {
        Sandbox { catalog, config }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn start_session(&self, header: SessionHeader, ranked: RankedList) -> Result<(SessionState, Observation), SandboxError> {
        if self.config.page_size == 0 || ranked.items.len() < self.config.page_size {
            return Err(SandboxError::ListTooShort { len: ranked.items.len(), page_size: self.config.page_size });
        }
        let mut state = SessionState {
            header,
            ranked,
            page_size: self.config.page_size,
            location: Location::Home { page_index: 0 },
            terminated: None,
            step_count: 0,
            watched: BTreeSet::new(),
            events: Vec::new(),
        };
        self.push_impression(&mut state, 0);
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn legal_actions(&self, state: &SessionState) -> BTreeSet<ActionKind> {
        let mut out = BTreeSet::new();
        if state.is_terminated() {
            return out;
        }
        match state.location {
            Location::Home { page_index } => {
                out.insert(ActionKind::Click);
                if page_index + 1 < state.page_count() {
                    out.insert(ActionKind::NextPage);
                }
                if page_index > 0 {
                    out.insert(ActionKind::PrevPage);
                }
            }
            Location::Detail { movie_id, .. } => {
                if !state.watched.contains(&movie_id) {
                    out.insert(ActionKind::WatchAndRate);
                }
                out.insert(ActionKind::Back);
            }
        }
        out.insert(ActionKind::Exit);
        out
    }

    /// Applies `action`. On error the state is untouched.
    pub fn step(&self, state: &mut SessionState, action: Action) -> Result<(Observation, Vec<Event>), SandboxError> {
        self.apply(state, action, TerminationReason::AgentExit)
    }

    /// Exit on behalf of the agent, recording why the session ended.
    pub fn force_exit(&self, state: &mut SessionState, reason: TerminationReason) -> Result<(Observation, Vec<Event>), SandboxError> {
        self.apply(state, Action::Exit, reason)
    }

    fn apply(&self, state: &mut SessionState, action: Action, exit_reason: TerminationReason) -> Result<(Observation, Vec<Event>), SandboxError> {
        if state.is_terminated() {
            return Err(SandboxError::Terminated);
        }
        let legal = self.legal_actions(state);
        let illegal = |what: String| SandboxError::Illegal { attempted: what, legal: format_kinds(&legal) };
        if !legal.contains(&action.kind()) {
            return Err(illegal(action.kind().to_string()));
        }
        match (action, state.location) {
            (Action::Click { movie_id }, Location::Home { page_index }) if !state.page_items(page_index).contains(&movie_id) => {
                return Err(illegal(format!("Click({movie_id}) of a movie not on page {page_index}")));
            }
            (Action::WatchAndRate { rating }, _) if !(1..=5).contains(&rating) => {
                return Err(illegal(format!("WatchAndRate({rating}) with rating outside [1,5]")));
            }
            _ => {}
        }

        let first = state.events.len();
        state.step_count += 1;
        match (action, state.location) {
            (Action::Click { movie_id }, Location::Home { page_index }) => {
                self.push(state, EventKind::Click, vec![movie_id], None, Some(page_index));
                state.location = Location::Detail { movie_id, from_page: page_index };
            }
            (Action::NextPage, Location::Home { page_index }) => {
                self.push(state, EventKind::NavNext, vec![], None, Some(page_index + 1));
                state.location = Location::Home { page_index: page_index + 1 };
                self.push_impression(state, page_index + 1);
            }
            (Action::PrevPage, Location::Home { page_index }) => {
                self.push(state, EventKind::NavPrev, vec![], None, Some(page_index - 1));
                state.location = Location::Home { page_index: page_index - 1 };
                self.push_impression(state, page_index - 1);
            }
            (Action::WatchAndRate { rating }, Location::Detail { movie_id, .. }) => {
                self.push(state, EventKind::Watch, vec![movie_id], None, None);
                self.push(state, EventKind::Rate, vec![movie_id], Some(rating), None);
                state.watched.insert(movie_id);
            }
            (Action::Back, Location::Detail { from_page, .. }) => {
                self.push(state, EventKind::NavBack, vec![], None, Some(from_page));
                state.location = Location::Home { page_index: from_page };
                if self.config.recount_impressions_on_back {
                    self.push_impression(state, from_page);
                }
            }
            (Action::Exit, _) => {
                self.push(state, EventKind::Exit, vec![], None, None);
                state.terminated = Some(exit_reason);
            }
            _ => unreachable!("legality checked above"),
        }
        if !state.is_terminated() && state.step_count >= self.config.step_cap {
            state.terminated = Some(TerminationReason::StepCap);
        }
        Ok((self.observe(state), state.events[first..].to_vec()))
    }

    fn push(&self, state: &mut SessionState, kind: EventKind, movie_ids: Vec<MovieId>, rating: Option<u8>, page_index: Option<usize>) {
        state.events.push(Event {
            session_id: state.header.session_id.clone(),
            step: state.step_count,
            kind,
            movie_ids,
            rating,
            page_index,
            timestamp: state.header.start_time + state.step_count as i64 * STEP_SECONDS,
        });
    }

    fn push_impression(&self, state: &mut SessionState, page_index: usize) {
        let ids = state.page_items(page_index).to_vec();
        self.push(state, EventKind::Impression, ids, None, Some(page_index));
    }

    /// Renders what the agent sees at the current location.
    pub fn observe(&self, state: &SessionState) -> Observation {
        let vision = self.config.vision_enabled;
        match state.location {
            Location::Home { page_index } => Observation::Home(HomeObservation {
                page_index,
                page_count: state.page_count(),
                cards: state.page_items(page_index).iter().map(|&id| MovieCard::from_catalog(self.catalog, id, vision)).collect(),
            }),
            Location::Detail { movie_id, .. } => {
                Observation::Detail(DetailObservation::from_catalog(self.catalog, movie_id, vision, state.watched.contains(&movie_id)))
            }
        }
    }

    /// Re-executes a logged session and returns its final state, failing on
    /// the first event that the state machine would not have produced.
    pub fn replay(&self, header: SessionHeader, ranked: RankedList, events: &[Event]) -> Result<SessionState, SandboxError> {
        let Some(first) = events.first() else {
            return Err(SandboxError::Replay("missing initial impression".into()));
        };
        if first.kind != EventKind::Impression || first.step != 0 {
            return Err(SandboxError::Replay("missing initial impression".into()));
        }
        let (mut state, _) = self.start_session(header, ranked)?;
        if state.events[0] != *first {
            return Err(SandboxError::Replay("initial impression does not match the ranked list".into()));
        }
        let mut i = 1;
        while i < events.len() {
            let step = events[i].step;
            let j = events[i..].iter().position(|e| e.step != step).map_or(events.len(), |p| i + p);
            let group = &events[i..j];
            let action =
                infer_action(group).ok_or_else(|| SandboxError::Replay(format!("step {step}: unrecognised event group {:?}", kinds(group))))?;
            let (_, produced) = self.step(&mut state, action).map_err(|e| SandboxError::Replay(format!("step {step}: {e}")))?;
            if produced != group {
                return Err(SandboxError::Replay(format!("step {step}: logged events differ from re-execution")));
            }
            i = j;
        }
        Ok(state)
    }
}

fn kinds(group: &[Event]) -> Vec<EventKind> {
    group.iter().map(|e| e.kind).collect()
}

fn infer_action(group: &[Event]) -> Option<Action> {
    let first = group.first()?;
    Some(match first.kind {
        EventKind::Click => Action::Click { movie_id: *first.movie_ids.first()? },
        EventKind::Watch => Action::WatchAndRate { rating: group.get(1)?.rating? },
        EventKind::NavNext => Action::NextPage,
        EventKind::NavPrev => Action::PrevPage,
        EventKind::NavBack => Action::Back,
        EventKind::Exit => Action::Exit,
        EventKind::Impression | EventKind::Rate => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ActivityTrait, Gender, Movie, User};

    pub(crate) fn catalog(n: u32) -> Catalog {
        let movies = (1..=n)
            .map(|i| {
                let mut m = Movie::new(MovieId(i), format!("Movie {i}"), vec!["Comedy".into()]);
                m.poster_ref = Some(format!("posters/{i}.jpg"));
                m.imdb_rating = Some(7.0);
                m
            })
            .collect();
        let users =
            vec![User { user_id: UserId(1), gender: Gender::M, age: 25, occupation: 1, zip: "0".into(), activity_trait: ActivityTrait::Medium }];
        Catalog::new(movies, users, vec![]).unwrap()
    }

    fn header() -> SessionHeader {
        SessionHeader { session_id: "s1".into(), user_id: UserId(1), arm_id: "a".into(), start_time: 1000 }
    }

    fn ranked(n: u32) -> RankedList {
        RankedList::from_items(UserId(1), (1..=n).map(MovieId).collect())
    }

    #[test]
    fn start_renders_first_page() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (s, obs) = sb.start_session(header(), ranked(20)).unwrap();
        assert_eq!(s.location, Location::Home { page_index: 0 });
        let Observation::Home(h) = obs else { panic!() };
        assert_eq!(h.cards.iter().map(|c| c.movie_id).collect::<Vec<_>>(), ranked(20).items[..5].to_vec());
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.events[0].kind, EventKind::Impression);
        assert_eq!(s.events[0].movie_ids.len(), 5);
        assert!(h.cards[0].poster_ref.is_some());
    }

    #[test]
    fn vision_off_hides_posters() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig { vision_enabled: false, ..Default::default() });
        let (_, obs) = sb.start_session(header(), ranked(20)).unwrap();
        let Observation::Home(h) = obs else { panic!() };
        assert!(h.cards.iter().all(|c| c.poster_ref.is_none()));
    }

    #[test]
    fn single_page_has_no_next() {
        let c = catalog(5);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (s, _) = sb.start_session(header(), ranked(5)).unwrap();
        let legal = sb.legal_actions(&s);
        assert!(!legal.contains(&ActionKind::NextPage));
    }

    #[test]
    fn short_list_rejected() {
        let c = catalog(4);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        assert!(matches!(sb.start_session(header(), ranked(4)), Err(SandboxError::ListTooShort { .. })));
    }

    #[test]
    fn legal_sets_by_location() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        let set = |v: &[ActionKind]| v.iter().copied().collect::<BTreeSet<_>>();
        use ActionKind::*;
        assert_eq!(sb.legal_actions(&s), set(&[Click, NextPage, Exit]));
        sb.step(&mut s, Action::NextPage).unwrap();
        assert_eq!(sb.legal_actions(&s), set(&[Click, NextPage, PrevPage, Exit]));
        sb.step(&mut s, Action::NextPage).unwrap();
        sb.step(&mut s, Action::NextPage).unwrap();
        assert_eq!(sb.legal_actions(&s), set(&[Click, PrevPage, Exit]));
        sb.step(&mut s, Action::Click { movie_id: MovieId(16) }).unwrap();
        assert_eq!(sb.legal_actions(&s), set(&[WatchAndRate, Back, Exit]));
        sb.step(&mut s, Action::WatchAndRate { rating: 4 }).unwrap();
        assert_eq!(sb.legal_actions(&s), set(&[Back, Exit]));
        sb.step(&mut s, Action::Exit).unwrap();
        assert!(sb.legal_actions(&s).is_empty());
    }

    #[test]
    fn click_then_watch_logs_events() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        let (obs, ev) = sb.step(&mut s, Action::Click { movie_id: MovieId(3) }).unwrap();
        assert!(matches!(obs, Observation::Detail(_)));
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].kind, ev[0].movie_ids.clone()), (EventKind::Click, vec![MovieId(3)]));
        let (_, ev) = sb.step(&mut s, Action::WatchAndRate { rating: 5 }).unwrap();
        assert_eq!(s.location, Location::Detail { movie_id: MovieId(3), from_page: 0 });
        assert_eq!(ev.iter().map(|e| e.kind).collect::<Vec<_>>(), vec![EventKind::Watch, EventKind::Rate]);
        assert_eq!(ev[1].rating, Some(5));
    }

    #[test]
    fn illegal_prev_page_leaves_state() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        let before = s.clone();
        let err = sb.step(&mut s, Action::PrevPage).unwrap_err();
        assert_eq!(err.to_string(), "illegal: PrevPage not in {Click, NextPage, Exit}");
        assert_eq!(s, before);
    }

    #[test]
    fn click_off_page_rejected() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        assert!(sb.step(&mut s, Action::Click { movie_id: MovieId(6) }).is_err());
    }

    #[test]
    fn back_returns_to_origin_and_recounts() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        sb.step(&mut s, Action::NextPage).unwrap();
        sb.step(&mut s, Action::Click { movie_id: MovieId(7) }).unwrap();
        let (_, ev) = sb.step(&mut s, Action::Back).unwrap();
        assert_eq!(s.location, Location::Home { page_index: 1 });
        assert_eq!(ev.iter().map(|e| e.kind).collect::<Vec<_>>(), vec![EventKind::NavBack, EventKind::Impression]);

        let sb = Sandbox::new(&c, SandboxConfig { recount_impressions_on_back: false, ..Default::default() });
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        sb.step(&mut s, Action::Click { movie_id: MovieId(2) }).unwrap();
        let (_, ev) = sb.step(&mut s, Action::Back).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn step_cap_terminates() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig { step_cap: 2, ..Default::default() });
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        sb.step(&mut s, Action::NextPage).unwrap();
        sb.step(&mut s, Action::NextPage).unwrap();
        assert_eq!(s.terminated, Some(TerminationReason::StepCap));
        assert_eq!(sb.step(&mut s, Action::Exit), Err(SandboxError::Terminated));
    }

    #[test]
    fn replay_round_trip_and_errors() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        for a in [
            Action::NextPage,
            Action::Click { movie_id: MovieId(8) },
            Action::WatchAndRate { rating: 3 },
            Action::Back,
            Action::PrevPage,
            Action::Exit,
        ] {
            sb.step(&mut s, a).unwrap();
        }
        let back = sb.replay(header(), ranked(20), &s.events).unwrap();
        assert_eq!(back, s);

        let err = sb.replay(header(), ranked(20), &[]).unwrap_err();
        assert_eq!(err.to_string(), "replay: missing initial impression");

        let mut bad = s.events.clone();
        bad[2].movie_ids = vec![MovieId(999)];
        assert!(sb.replay(header(), ranked(20), &bad).is_err());
    }

    #[test]
    fn forced_exit_replays_as_equivalent() {
        let c = catalog(20);
        let sb = Sandbox::new(&c, SandboxConfig::default());
        let (mut s, _) = sb.start_session(header(), ranked(20)).unwrap();
        sb.force_exit(&mut s, TerminationReason::FatigueExhausted).unwrap();
        let back = sb.replay(header(), ranked(20), &s.events).unwrap();
        assert_ne!(back, s);
        assert!(back.replay_equivalent(&s));
    }
}
