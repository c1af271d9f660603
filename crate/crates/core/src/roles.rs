//! The three-role hierarchy and the fallback ladder that repairs illegal
//! consensus outputs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::intent::IllegalReason;
use crate::world::TargetId;

/// Functional role of an agent within one decision frame.
///
/// Discriminants are the role-value output indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Commander = 0,
    Coordinator = 1,
    Executor = 2,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Commander, Role::Coordinator, Role::Executor];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Role::ALL.get(i).copied()
    }

    /// Fallback authority: higher is more senior.
    fn rank(self) -> u8 {
        match self {
            Role::Commander => 2,
            Role::Coordinator => 1,
            Role::Executor => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Commander => "Commander",
            Role::Coordinator => "Coordinator",
            Role::Executor => "Executor",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "commander" => Ok(Role::Commander),
            "coordinator" => Ok(Role::Coordinator),
            "executor" => Ok(Role::Executor),
            other => Err(Error::Argument(format!("unknown role {other:?}"))),
        }
    }
}

/// Compares fallback authority: Commander > Coordinator > Executor.
pub fn role_authority(a: Role, b: Role) -> Ordering {
    a.rank().cmp(&b.rank())
}

/// A (goal, role) proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub goal: TargetId,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionGoal {
    Target(TargetId),
    Illegal(IllegalReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    LlmOutput,
    FallbackSelf,
    FallbackSuperior,
}

/// Final goal of one agent and where it came from. Only `LlmOutput`
/// decisions can be illegal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusDecision {
    pub goal: DecisionGoal,
    pub source: DecisionSource,
}

impl ConsensusDecision {
    pub fn output(goal: TargetId) -> Self {
        ConsensusDecision {
            goal: DecisionGoal::Target(goal),
            source: DecisionSource::LlmOutput,
        }
    }

    pub fn illegal(reason: IllegalReason) -> Self {
        ConsensusDecision {
            goal: DecisionGoal::Illegal(reason),
            source: DecisionSource::LlmOutput,
        }
    }

    pub fn legal_goal(&self) -> Option<TargetId> {
        match self.goal {
            DecisionGoal::Target(t) => Some(t),
            DecisionGoal::Illegal(_) => None,
        }
    }

    pub fn is_legal(&self) -> bool {
        self.legal_goal().is_some()
    }
}

/// A neighbor's role and decision as seen during fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborDecision {
    pub agent: usize,
    pub role: Role,
    pub decision: ConsensusDecision,
}

/// Resolves an agent's consensus output.
///
/// A legal output is returned unchanged. Otherwise: a Commander keeps its
/// initial intent; a Coordinator follows a neighbor Commander with a legal
/// decision, else keeps its initial intent; an Executor follows a legal
/// Commander, else a legal Coordinator, else keeps its initial intent. Among
/// several eligible superiors the lowest agent id wins.
pub fn fallback_resolve(
    own_role: Role,
    own_initial: Intent,
    own_output: ConsensusDecision,
    neighbors: &[NeighborDecision],
) -> ConsensusDecision {
    if own_output.is_legal() {
        return own_output;
    }
    let follow: &[Role] = match own_role {
        Role::Commander => &[],
        Role::Coordinator => &[Role::Commander],
        Role::Executor => &[Role::Commander, Role::Coordinator],
    };
    for superior in follow {
        let pick = neighbors
            .iter()
            .filter(|n| n.role == *superior)
            .filter_map(|n| n.decision.legal_goal().map(|g| (n.agent, g)))
            .min_by_key(|(agent, _)| *agent);
        if let Some((_, goal)) = pick {
            return ConsensusDecision {
                goal: DecisionGoal::Target(goal),
                source: DecisionSource::FallbackSuperior,
            };
        }
    }
    ConsensusDecision {
        goal: DecisionGoal::Target(own_initial.goal),
        source: DecisionSource::FallbackSelf,
    }
}
