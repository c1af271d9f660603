//! Labeled-sample collection from decision frames, the weighted quality
//! check and corpus export.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::{observation_digest, ConsensusPolicy, IntentPolicy, RoleSelector, TranscriptRecord};
use crate::episode::EpisodeRunner;
use crate::error::{Error, Result};
use crate::intent::{fmt_target, PromptBundle};
use crate::nav::NavParams;
use crate::roles::Role;
use crate::seed::derive_seed;
use crate::world::{grid_index, Observation, Vec2, World};

/// One labeled consensus inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub episode: usize,
    pub frame: usize,
    pub agent: usize,
    pub obs: Observation,
    pub obs_digest: String,
    pub role: Role,
    /// Position named by the labeler, when it named an active target.
    pub goal: Option<Vec2>,
    /// Labeler output, verbatim. Empty when the backend failed.
    pub reasoning: String,
    /// Return of the decision window the sample came from.
    pub window_reward: f64,
    /// Return of the whole episode (of the part played, if collection
    /// stopped early).
    pub episode_reward: f64,
    /// The consensus prompt shown to the labeler.
    pub prompt: String,
}

/// Output of [`collect`].
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub samples: Vec<SampleRecord>,
    pub transcript: Vec<TranscriptRecord>,
    pub episodes: usize,
}

/// Runs decision frames with `labeler` in the consensus stage until at least
/// `target` samples exist. One sample per agent per frame.
#[allow(clippy::too_many_arguments)]
pub fn collect(
    world: &World,
    nav: NavParams,
    intent_policy: &dyn IntentPolicy,
    roles: &mut dyn RoleSelector,
    labeler: &dyn ConsensusPolicy,
    bundle: &PromptBundle,
    target: usize,
    seed: u64,
) -> Collection {
    let mut samples: Vec<SampleRecord> = Vec::new();
    let mut transcript = Vec::new();
    let mut episode = 0;
    while samples.len() < target {
        let mut runner = EpisodeRunner::new(world, nav, derive_seed(seed, episode as u64));
        let first = samples.len();
        let mut episode_reward = 0.0;
        while !runner.done() && samples.len() < target {
            let frame = runner.frame();
            let outcome = runner.decide(intent_policy, roles, labeler);
            let start = samples.len();
            for (i, obs) in outcome.observations.iter().enumerate() {
                let intent = outcome.intents[i];
                samples.push(SampleRecord {
                    episode,
                    frame,
                    agent: i,
                    obs: obs.clone(),
                    obs_digest: observation_digest(obs),
                    role: intent.role,
                    goal: outcome.outputs[i].legal_goal().and_then(|g| obs.target(g)).map(|t| t.pos),
                    reasoning: outcome.stage2_texts[i].clone(),
                    window_reward: 0.0,
                    episode_reward: 0.0,
                    prompt: bundle.render_cons_prompt(&outcome.infos[i], intent.role, intent),
                });
            }
            transcript.extend(outcome.transcript.iter().cloned());
            let window = runner.advance(&outcome.goals(), None);
            episode_reward += window.reward;
            for s in &mut samples[start..] {
                s.window_reward = window.reward;
            }
        }
        for s in &mut samples[first..] {
            s.episode_reward = episode_reward;
        }
        episode += 1;
    }
    Collection {
        samples,
        transcript,
        episodes: episode,
    }
}

/// Which return the reward criterion looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Window,
    Episode,
}

/// Counts tokens in reasoning text.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl TokenCounter for WhitespaceTokens {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub reward_threshold: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Weights of the goal, clean-text, length and reward indicators.
    pub weights: [f64; 4],
    pub pass_threshold: f64,
    /// Default collection target.
    pub min_samples: usize,
    pub reward_mode: RewardMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            reward_threshold: -3000.0,
            min_tokens: 200,
            max_tokens: 400,
            weights: [0.45, 0.25, 0.2, 0.1],
            pass_threshold: 1.0,
            min_samples: 12_000,
            reward_mode: RewardMode::Window,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("filter weights must be nonnegative".into()));
        }
        if self.min_tokens > self.max_tokens {
            return Err(Error::Config("min_tokens exceeds max_tokens".into()));
        }
        Ok(())
    }
}

/// True when the text holds a replacement character, a control character
/// other than tab or newline, or unbalanced brackets or braces.
pub fn has_anomalies(text: &str) -> bool {
    if text
        .chars()
        .any(|c| c == '\u{FFFD}' || (c.is_control() && !matches!(c, '\n' | '\t' | '\r')))
    {
        return true;
    }
    let mut stack = Vec::new();
    for c in text.chars() {
        match c {
            '[' | '{' => stack.push(c),
            ']' | '}' => {
                let open = if c == ']' { '[' } else { '{' };
                if stack.pop() != Some(open) {
                    return true;
                }
            }
            _ => {}
        }
    }
    !stack.is_empty()
}

/// Indicator values and the weighted score of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckBreakdown {
    pub goal_ok: bool,
    pub clean: bool,
    pub length_ok: bool,
    pub reward_ok: bool,
    pub tokens: usize,
    pub score: f64,
}

/// Weighted indicator sum. Rounded to 12 decimals so that weight sums
/// like `0.45 + 0.25 + 0.2 + 0.1` compare equal to 1.
pub fn check_sample_with(record: &SampleRecord, config: &FilterConfig, counter: &dyn TokenCounter) -> CheckBreakdown {
    let goal_ok = record.goal.is_some_and(|g| grid_index(g).is_some());
    let clean = !record.reasoning.is_empty() && !has_anomalies(&record.reasoning);
    let tokens = counter.count(&record.reasoning);
    let length_ok = (config.min_tokens..=config.max_tokens).contains(&tokens);
    let reward = match config.reward_mode {
        RewardMode::Window => record.window_reward,
        RewardMode::Episode => record.episode_reward,
    };
    let reward_ok = reward >= config.reward_threshold;
    let w = config.weights;
    let raw: f64 = [goal_ok, clean, length_ok, reward_ok]
        .iter()
        .zip(w)
        .map(|(&on, w)| if on { w } else { 0.0 })
        .sum();
    CheckBreakdown {
        goal_ok,
        clean,
        length_ok,
        reward_ok,
        tokens,
        score: (raw * 1e12).round() / 1e12,
    }
}

pub fn check_sample(record: &SampleRecord, config: &FilterConfig) -> f64 {
    check_sample_with(record, config, &WhitespaceTokens).score
}

/// Keeps records scoring at least the pass threshold, in order.
pub fn filter<'a>(records: &'a [SampleRecord], config: &FilterConfig) -> Vec<&'a SampleRecord> {
    records
        .iter()
        .filter(|r| check_sample(r, config) >= config.pass_threshold)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub role: Role,
    pub reward: f64,
    pub score: f64,
}

/// One fine-tune row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub metadata: CorpusMetadata,
}

impl CorpusEntry {
    pub fn from_record(record: &SampleRecord, config: &FilterConfig) -> Self {
        let goal = record.goal.map(fmt_target).unwrap_or_default();
        let reward = match config.reward_mode {
            RewardMode::Window => record.window_reward,
            RewardMode::Episode => record.episode_reward,
        };
        CorpusEntry {
            instruction: record.prompt.clone(),
            input: String::new(),
            output: format!("Target: {goal}\n{}", record.reasoning),
            metadata: CorpusMetadata {
                role: record.role,
                reward,
                score: check_sample(record, config),
            },
        }
    }
}

/// Writes one JSON object per line.
pub fn export_corpus(entries: &[CorpusEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if entries.is_empty() {
        return Err(Error::Argument("nothing to export".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
