//! Interest-modulated fatigue accounting.
//!
//! Each action costs `C_a * (phi_max - (i - i_min)(phi_max - phi_min) / (i_max - i_min))`
//! where `i` is the agent's interest. A session accumulates cost upward from
//! zero and is exhausted once the total reaches the budget.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::sandbox::ActionKind;

/// Base cost `C_a` per action kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCosts {
    pub click: f64,
    pub watch_and_rate: f64,
    pub prev_page: f64,
    pub next_page: f64,
    pub back: f64,
    pub exit: f64,
}

impl ActionCosts {
    pub fn get(&self, kind: ActionKind) -> f64 {
        match kind {
            ActionKind::Click => self.click,
            ActionKind::WatchAndRate => self.watch_and_rate,
            ActionKind::PrevPage => self.prev_page,
            ActionKind::NextPage => self.next_page,
            ActionKind::Back => self.back,
            ActionKind::Exit => self.exit,
        }
    }

    fn all(&self) -> [f64; 6] {
        [self.click, self.watch_and_rate, self.prev_page, self.next_page, self.back, self.exit]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatigueConfig {
    pub budget: f64,
    pub costs: ActionCosts,
    pub phi_max: f64,
    pub phi_min: f64,
    pub interest_min: u8,
    pub interest_max: u8,
}

pub const PRESETS: [&str; 3] = ["mini-column", "4o-column", "mini-column-modulated"];

impl Default for FatigueConfig {
    fn default() -> Self {
        FatigueConfig {
            budget: 30.0,
            costs: ActionCosts { click: 2.0, watch_and_rate: 10.0, prev_page: 2.0, next_page: 2.0, back: 5.0, exit: 0.0 },
            phi_max: 1.0,
            phi_min: 1.0,
            interest_min: 1,
            interest_max: 5,
        }
    }
}

impl FatigueConfig {
    /// Named cost tables. `mini-column` is the default; the `-modulated`
    /// variant lets high interest halve the cost.
    pub fn preset(name: &str) -> Result<Self, AgentError> {
        let base = FatigueConfig::default();
        match name {
            "mini-column" => Ok(base),
            "4o-column" => Ok(FatigueConfig {
                costs: ActionCosts { click: 15.0, watch_and_rate: 40.0, prev_page: 2.0, next_page: 2.0, back: 2.0, exit: 0.0 },
                ..base
            }),
            "mini-column-modulated" => Ok(FatigueConfig { phi_min: 0.5, ..base }),
            other => Err(AgentError::Config(format!("unknown fatigue preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(AgentError::Config(format!("fatigue budget must be non-negative, got {}", self.budget)));
        }
        if self.costs.all().iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(AgentError::Config("fatigue costs must be non-negative".into()));
        }
        if !(self.phi_max >= self.phi_min && self.phi_min > 0.0) {
            return Err(AgentError::Config(format!("need phi_max >= phi_min > 0, got {} / {}", self.phi_max, self.phi_min)));
        }
        if self.interest_min >= self.interest_max {
            return Err(AgentError::Config("interest_min must be below interest_max".into()));
        }
        Ok(())
    }

    pub fn with_budget_multiplier(&self, m: f64) -> Self {
        FatigueConfig { budget: self.budget * m, ..self.clone() }
    }
}

pub fn fatigue_cost(config: &FatigueConfig, kind: ActionKind, interest: u8) -> Result<f64, AgentError> {
    let (lo, hi) = (config.interest_min, config.interest_max);
    if interest < lo || interest > hi {
        return Err(AgentError::Interest { value: interest, min: lo, max: hi });
    }
    // The top interest returns phi_min itself and the clamp keeps rounding
    // from stepping below it, so the modifier stays monotone with exact
    // endpoints.
    let modifier = if interest == hi {
        config.phi_min
    } else {
        let span = (hi - lo) as f64;
        (config.phi_max - (interest - lo) as f64 * (config.phi_max - config.phi_min) / span).max(config.phi_min)
    };
    Ok(config.costs.get(kind) * modifier)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatigueState {
    pub accumulated: f64,
    pub budget: f64,
}

impl FatigueState {
    pub fn new(budget: f64) -> Self {
        FatigueState { accumulated: 0.0, budget }
    }

    pub fn exhausted(&self) -> bool {
        self.accumulated >= self.budget
    }

    pub fn remaining(&self) -> f64 {
        (self.budget - self.accumulated).max(0.0)
    }

    /// "x/budget" with one decimal.
    pub fn reading(&self) -> String {
        format!("{:.1}/{}", self.accumulated, self.budget)
    }
}

pub fn apply_fatigue(state: FatigueState, cost: f64) -> Result<FatigueState, AgentError> {
    if cost.is_nan() || cost < 0.0 {
        return Err(AgentError::NegativeCost(cost));
    }
    Ok(FatigueState { accumulated: state.accumulated + cost, ..state })
}
