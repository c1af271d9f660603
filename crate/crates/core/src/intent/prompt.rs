use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::consensus::LocalInfo;
use crate::error::{Error, Result};
use crate::roles::{Intent, Role};
use crate::seed::fnv1a;
use crate::world::{Observation, TargetId, Vec2};

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub observation: String,
    pub response: String,
}

/// Prompt texts and templates. Templates use `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_instruction: String,
    pub cot_guidance: String,
    pub init_template: String,
    pub cons_template: String,
    pub examples: Vec<FewShotExample>,
    /// Worked examples embedded per prompt.
    pub examples_per_prompt: usize,
    /// Formation cap announced in the task instruction.
    pub max_formation: usize,
}

const INIT_KEYS: &[&str] = &[
    "self_pos",
    "self_vel",
    "enemy_pos",
    "enemy_vel",
    "enemy_distance",
    "targets",
    "example",
];
const CONS_KEYS: &[&str] = &[
    "self_pos",
    "self_vel",
    "enemy_pos",
    "enemy_vel",
    "enemy_distance",
    "targets",
    "example",
    "role",
    "role_description",
    "intent",
    "neighbors",
    "cot",
];
const TASK_KEYS: &[&str] = &["max_formation"];

/// Literal inserted when an agent has nobody in range.
pub const NO_NEIGHBORS: &str = "No teammates are within communication range.";

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("static regex"))
}

/// Single-pass substitution, so values containing braces are never expanded.
fn fill(template: &str, values: &BTreeMap<&str, String>) -> String {
    placeholder()
        .replace_all(template, |c: &Captures<'_>| {
            values.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

fn check_keys(name: &str, template: &str, allowed: &[&str]) -> Result<()> {
    for c in placeholder().captures_iter(template) {
        if !allowed.contains(&&c[1]) {
            return Err(Error::Config(format!("{name}: unknown placeholder {{{{{}}}}}", &c[1])));
        }
    }
    Ok(())
}

fn fmt_vec(v: Vec2) -> String {
    format!("[{:.3}, {:.3}]", v.x, v.y)
}

/// Grid coordinates as they must appear in a recommendation.
pub fn fmt_target(p: Vec2) -> String {
    format!("[{}, {}]", p.x, p.y)
}

pub fn role_description(role: Role) -> &'static str {
    match role {
        Role::Commander => "Pick the region with the best return for yourself and hold to it.",
        Role::Coordinator => {
            "Balance your own gain with the team's; when a Commander nearby has chosen, favour that choice."
        }
        Role::Executor => {
            "Follow the guidance of nearby Coordinators and Commanders; use your own judgement only when nobody leads."
        }
    }
}

impl Default for PromptBundle {
    fn default() -> Self {
        let examples = include_str!("../../assets/few_shot.jsonl")
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).expect("bundled few-shot corpus is valid"))
            .collect();
        PromptBundle {
            task_instruction: include_str!("../../assets/task_instruction.txt").to_string(),
            cot_guidance: include_str!("../../assets/cot_guidance.txt").trim_end().to_string(),
            init_template: include_str!("../../assets/init_template.txt").to_string(),
            cons_template: include_str!("../../assets/cons_template.txt").to_string(),
            examples,
            examples_per_prompt: 1,
            max_formation: 8,
        }
    }
}

impl PromptBundle {
    pub fn validate(&self) -> Result<()> {
        check_keys("init_template", &self.init_template, INIT_KEYS)?;
        check_keys("cons_template", &self.cons_template, CONS_KEYS)?;
        check_keys("task_instruction", &self.task_instruction, TASK_KEYS)?;
        if self.examples_per_prompt > self.examples.len() {
            return Err(Error::Config(format!(
                "{} examples per prompt but only {} available",
                self.examples_per_prompt,
                self.examples.len()
            )));
        }
        Ok(())
    }

    pub fn with_max_formation(mut self, cap: usize) -> Self {
        self.max_formation = cap;
        self
    }

    /// The system message.
    pub fn system_prompt(&self) -> String {
        let mut values = BTreeMap::new();
        values.insert("max_formation", self.max_formation.to_string());
        fill(&self.task_instruction, &values)
    }

    fn pick_examples(&self, key: u64) -> String {
        let n = self.examples.len();
        if n == 0 || self.examples_per_prompt == 0 {
            return "(none)".to_string();
        }
        (0..self.examples_per_prompt)
            .map(|k| {
                let e = &self.examples[(key as usize).wrapping_add(k) % n];
                format!("Input: {}\nOutput: {}", e.observation, e.response)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn obs_values(&self, obs: &Observation) -> BTreeMap<&'static str, String> {
        let targets = obs
            .targets
            .iter()
            .map(|t| {
                format!(
                    "- target {} urgency {:.3} distance {:.3} m",
                    fmt_target(t.pos),
                    t.urgency,
                    obs.self_pos.distance(t.pos)
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let digest = fnv1a(&serde_json::to_vec(obs).expect("observation serializes"));
        let mut v = BTreeMap::new();
        v.insert("self_pos", fmt_vec(obs.self_pos));
        v.insert("self_vel", fmt_vec(obs.self_vel));
        v.insert("enemy_pos", fmt_vec(obs.enemy_pos));
        v.insert("enemy_vel", fmt_vec(obs.enemy_vel));
        v.insert("enemy_distance", format!("{:.3}", obs.enemy_distance()));
        v.insert("targets", targets);
        v.insert("example", self.pick_examples(digest));
        v
    }

    /// User message for the intent stage.
    pub fn render_init_prompt(&self, obs: &Observation) -> String {
        fill(&self.init_template, &self.obs_values(obs))
    }

    /// User message for the consensus stage.
    pub fn render_cons_prompt(&self, info: &LocalInfo, own_role: Role, own_intent: Intent) -> String {
        let obs = &info.own_obs;
        let target_pos = |id: TargetId| {
            obs.target(id)
                .map(|t| fmt_target(t.pos))
                .unwrap_or_else(|| format!("#{id}"))
        };
        let neighbors = if info.neighbors.is_empty() {
            NO_NEIGHBORS.to_string()
        } else {
            info.neighbors
                .iter()
                .map(|n| {
                    format!(
                        "- UAV {} at {} distance {:.3} m, role {}, intends target {}",
                        n.id,
                        fmt_vec(n.pos),
                        obs.self_pos.distance(n.pos),
                        n.role,
                        target_pos(n.intent)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let mut values = self.obs_values(obs);
        values.insert("role", own_role.to_string());
        values.insert("role_description", role_description(own_role).to_string());
        values.insert("intent", target_pos(own_intent.goal));
        values.insert("neighbors", neighbors);
        values.insert("cot", self.cot_guidance.clone());
        fill(&self.cons_template, &values)
    }
}
