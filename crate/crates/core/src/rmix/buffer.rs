use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::roles::Role;
use crate::world::TargetId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    OfflineOracle,
    Online,
}

/// One decision frame as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub roles: Vec<Role>,
    /// Undiscounted sum of the step rewards inside the window.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub intents: Vec<TargetId>,
    /// Last frame of the episode: no bootstrap.
    pub terminal: bool,
}

impl Transition {
    pub fn n_agents(&self) -> usize {
        self.roles.len()
    }
}

/// Bounded FIFO replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<(Origin, Transition)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, origin: Origin, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((origin, t));
    }

    pub fn iter(&self) -> impl Iterator<Item = (Origin, &Transition)> {
        self.items.iter().map(|(o, t)| (*o, t))
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.items.iter().filter(|(o, _)| *o == origin).count()
    }

    /// Uniform sample without replacement; `None` if fewer than `size` entries.
    pub fn sample(&self, size: usize, rng: &mut impl Rng) -> Option<Vec<&Transition>> {
        if size > self.items.len() {
            return None;
        }
        Some(sample(rng, self.items.len(), size).into_iter().map(|i| &self.items[i].1).collect())
    }
}
