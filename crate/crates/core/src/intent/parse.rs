use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::world::{grid_index, TargetId, TargetView, Vec2};

/// Why a policy output could not be turned into a goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllegalReason {
    /// No bracketed coordinate pair in the text.
    NoCoordinates,
    /// Coordinates parsed but name no active target on the grid.
    NotATarget,
    /// A coordinate-like group that does not hold two finite numbers.
    Malformed,
    /// The backend failed to produce any text.
    BackendFailure,
}

impl IllegalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            IllegalReason::NoCoordinates => "no-coordinates",
            IllegalReason::NotATarget => "not-a-target",
            IllegalReason::Malformed => "malformed",
            IllegalReason::BackendFailure => "backend-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParsedDecision {
    Goal { target: TargetId, pos: Vec2 },
    Illegal(IllegalReason),
}

impl ParsedDecision {
    pub fn target(&self) -> Option<TargetId> {
        match self {
            ParsedDecision::Goal { target, .. } => Some(*target),
            ParsedDecision::Illegal(_) => None,
        }
    }
}

fn bracket_groups() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]|\(([^()]*)\)").expect("static regex"))
}

/// Extracts the last coordinate pair written as `[x, y]` or `(x, y)`.
///
/// Only bracket groups holding a comma and a digit count as coordinate
/// attempts; the last such group must contain exactly two finite numbers.
pub fn extract_coordinates(text: &str) -> Result<Vec2, IllegalReason> {
    let last = bracket_groups()
        .captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)).map(|m| m.as_str()))
        .filter(|g| g.contains(',') && g.chars().any(|ch| ch.is_ascii_digit()))
        .last()
        .ok_or(IllegalReason::NoCoordinates)?;
    let parts: Vec<&str> = last.split(',').collect();
    if parts.len() != 2 {
        return Err(IllegalReason::Malformed);
    }
    let num = |s: &str| -> Result<f64, IllegalReason> {
        let cleaned = s.trim().replace('\u{2212}', "-");
        match cleaned.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(IllegalReason::Malformed),
        }
    };
    Ok(Vec2::new(num(parts[0])?, num(parts[1])?))
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Parses a recommendation into an active target.
///
/// Coordinates are rounded to one decimal place and must then equal both a
/// candidate grid point and the (rounded) position of an active target.
pub fn parse_decision(text: &str, active_targets: &[TargetView]) -> ParsedDecision {
    let p = match extract_coordinates(text) {
        Ok(p) => p,
        Err(reason) => return ParsedDecision::Illegal(reason),
    };
    let rounded = Vec2::new(round1(p.x), round1(p.y));
    if grid_index(rounded).is_none() {
        return ParsedDecision::Illegal(IllegalReason::NotATarget);
    }
    active_targets
        .iter()
        .find(|t| round1(t.pos.x) == rounded.x && round1(t.pos.y) == rounded.y)
        .map(|t| ParsedDecision::Goal {
            target: t.id,
            pos: t.pos,
        })
        .unwrap_or(ParsedDecision::Illegal(IllegalReason::NotATarget))
}
