//! Subcommand bodies. Each one resolves everything up front, writes its
//! outputs into the run directory and finishes with the manifest.

use std::io::BufRead;
use std::path::Path;

use serde::Serialize;
use swarm_core::consensus::TranscriptRecord;
use swarm_core::datagen::{check_sample_with, collect, export_corpus, filter, CorpusEntry, SampleRecord, WhitespaceTokens};
use swarm_core::intent::PromptBundle;
use swarm_core::rmix::{seed_offline, smooth, train, Checkpoint, MixerKind, ReplayBuffer, TrainReport};
use swarm_core::seed::derive_seed;
use swarm_core::world::{World, WorldConfig};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::harness::{describe, play_episode, EpisodeStats, Policies, RoleMode, Sinks};
use crate::output::{Manifest, RunDir};

/// Loss smoothing window for curves and summaries.
pub const LOSS_WINDOW: usize = 50;

/// Seed of evaluation episode `e`; shared by every variant so comparisons
/// use the same starts.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    derive_seed(seed, e as u64)
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    episode: usize,
    #[serde(flatten)]
    record: &'a T,
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Option<Checkpoint>, CliError> {
    cfg.checkpoint.as_deref().map(Checkpoint::load).transpose().map_err(CliError::from)
}

fn role_mode(ck: &Option<Checkpoint>) -> RoleMode<'_> {
    ck.as_ref().map_or(RoleMode::Oracle, RoleMode::Learned)
}

/// Runs `cfg.episodes` episodes and writes per-step traces, decision
/// transcripts and a per-episode metrics table.
pub fn simulate(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let world = World::new(cfg.world.clone())?;
    let ck = load_checkpoint(cfg)?;
    let policies = Policies::from_config(cfg);
    let mut dir = RunDir::create(cfg, "simulate", Vec::new())?;
    let mut rows = Vec::new();
    let mut transcript = Vec::new();
    for e in 0..cfg.episodes {
        let seed = episode_seed(cfg.seed, e);
        let mut steps = Vec::new();
        let mut frames = Vec::new();
        let mut roles = role_mode(&ck).selector(&cfg.oracle, seed);
        let sinks = Sinks {
            steps: cfg.trace_steps.then_some(&mut steps),
            transcript: Some(&mut frames),
        };
        rows.push(play_episode(&world, cfg.nav, e, seed, &policies, roles.as_mut(), false, sinks));
        if cfg.trace_steps {
            dir.write_jsonl(&format!("trace_{e:03}.jsonl"), &steps)?;
        }
        transcript.extend(frames.into_iter().map(|r| (e, r)));
    }
    dir.write_jsonl(
        "transcript.jsonl",
        transcript.iter().map(|(e, r)| Tagged { episode: *e, record: r }),
    )?;
    dir.write_csv("metrics.csv", &rows)?;
    dir.finish()
}

#[derive(Serialize)]
struct OfflineRow {
    episode: usize,
    transitions: usize,
    #[serde(rename = "return")]
    total: f64,
}

fn offline_rows(buffer: &ReplayBuffer) -> Vec<OfflineRow> {
    let mut rows = Vec::new();
    let mut cur = OfflineRow { episode: 0, transitions: 0, total: 0.0 };
    for (_, t) in buffer.iter() {
        cur.transitions += 1;
        cur.total += t.reward;
        if t.terminal {
            let next = OfflineRow { episode: cur.episode + 1, transitions: 0, total: 0.0 };
            rows.push(std::mem::replace(&mut cur, next));
        }
    }
    rows
}

fn seeded_buffer(cfg: &RunConfig, world: &World) -> ReplayBuffer {
    let mut buffer = ReplayBuffer::new(cfg.train.buffer_capacity);
    seed_offline(world, cfg.nav, &cfg.oracle, cfg.train.n_pre, cfg.seed, &mut buffer);
    buffer
}

/// Fills a replay buffer with `train.n_pre` scripted episodes.
pub fn seed_offline_cmd(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let world = World::new(cfg.world.clone())?;
    let mut dir = RunDir::create(cfg, "seed-offline", Vec::new())?;
    let buffer = seeded_buffer(cfg, &world);
    dir.write_bytes("buffer.json", serde_json::to_string(&buffer)?.as_bytes())?;
    dir.write_csv("seed_offline.csv", offline_rows(&buffer))?;
    dir.finish()
}

#[derive(Serialize)]
struct LossRow {
    update: usize,
    loss: f64,
    smoothed: f64,
}

#[derive(Serialize)]
struct ReturnRow {
    epoch: usize,
    #[serde(rename = "return")]
    total: f64,
}

/// First full-window and last value of the smoothed loss, and their ratio.
pub fn loss_ratio(losses: &[f64], window: usize) -> (f64, f64, f64) {
    let s = smooth(losses, window);
    if s.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let first = s[(window.max(1) - 1).min(s.len() - 1)];
    let last = s[s.len() - 1];
    (first, last, last / first)
}

/// Trains the role-value network and mixer. Uses a stored buffer when
/// given, otherwise seeds one with `train.n_pre` scripted episodes.
pub fn train_rmix(cfg: &RunConfig, buffer_path: Option<&Path>) -> Result<Manifest, CliError> {
    let world = World::new(cfg.world.clone())?;
    let mut buffer = match buffer_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => seeded_buffer(cfg, &world),
    };
    let args = buffer_path
        .map(|p| vec!["--buffer".to_string(), p.display().to_string()])
        .unwrap_or_default();
    let mut dir = RunDir::create(cfg, "train-rmix", args)?;
    let (ck, report) = train(&world, cfg.nav, &cfg.train_config(), &mut buffer)?;
    ck.save(dir.path("checkpoint.json"))?;
    dir.adopt("checkpoint.json");
    write_curves(&mut dir, "", &report)?;
    dir.finish()
}

fn write_curves(dir: &mut RunDir, prefix: &str, report: &TrainReport) -> Result<(), CliError> {
    let s = smooth(&report.losses, LOSS_WINDOW);
    dir.write_csv(
        &format!("{prefix}loss.csv"),
        report
            .losses
            .iter()
            .zip(&s)
            .enumerate()
            .map(|(update, (&loss, &smoothed))| LossRow { update, loss, smoothed }),
    )?;
    dir.write_csv(
        &format!("{prefix}returns.csv"),
        report.returns.iter().enumerate().map(|(epoch, &total)| ReturnRow { epoch, total }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CollectRow {
    episodes: usize,
    samples: usize,
    legal_goals: usize,
}

/// Collects labeled consensus samples until the sample target is met.
pub fn collect_data(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let world = World::new(cfg.world.clone())?;
    let ck = load_checkpoint(cfg)?;
    let policies = Policies::from_config(cfg);
    let bundle = PromptBundle::default().with_max_formation(cfg.world.max_formation);
    let mut dir = RunDir::create(cfg, "collect-data", Vec::new())?;
    let mut roles = role_mode(&ck).selector(&cfg.oracle, cfg.seed);
    let c = collect(
        &world,
        cfg.nav,
        policies.intent(),
        roles.as_mut(),
        policies.consensus(),
        &bundle,
        cfg.sample_target(),
        cfg.seed,
    );
    dir.write_jsonl("samples.jsonl", &c.samples)?;
    let tagged: Vec<Tagged<'_, TranscriptRecord>> = c
        .samples
        .iter()
        .zip(&c.transcript)
        .map(|(s, r)| Tagged { episode: s.episode, record: r })
        .collect();
    dir.write_jsonl("transcript.jsonl", tagged)?;
    dir.write_csv(
        "collect.csv",
        [CollectRow {
            episodes: c.episodes,
            samples: c.samples.len(),
            legal_goals: c.samples.iter().filter(|s| s.goal.is_some()).count(),
        }],
    )?;
    dir.finish()
}

#[derive(Serialize)]
struct FilterRow {
    index: usize,
    episode: usize,
    frame: usize,
    agent: usize,
    goal_ok: bool,
    clean: bool,
    length_ok: bool,
    reward_ok: bool,
    tokens: usize,
    score: f64,
    passed: bool,
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Scores every sample, writes the per-sample report and exports the
/// passing ones as a fine-tune corpus.
pub fn filter_data(cfg: &RunConfig, input: &Path) -> Result<Manifest, CliError> {
    let samples = read_samples(input)?;
    let mut dir = RunDir::create(cfg, "filter-data", vec!["--input".into(), input.display().to_string()])?;
    let rows: Vec<FilterRow> = samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let c = check_sample_with(s, &cfg.filter, &WhitespaceTokens);
            FilterRow {
                index,
                episode: s.episode,
                frame: s.frame,
                agent: s.agent,
                goal_ok: c.goal_ok,
                clean: c.clean,
                length_ok: c.length_ok,
                reward_ok: c.reward_ok,
                tokens: c.tokens,
                score: c.score,
                passed: c.score >= cfg.filter.pass_threshold,
            }
        })
        .collect();
    dir.write_csv("filter_report.csv", &rows)?;
    let kept: Vec<CorpusEntry> = filter(&samples, &cfg.filter)
        .into_iter()
        .map(|s| CorpusEntry::from_record(s, &cfg.filter))
        .collect();
    if kept.is_empty() {
        dir.write_bytes("corpus.jsonl", b"")?;
    } else {
        export_corpus(&kept, dir.path("corpus.jsonl"))?;
        dir.adopt("corpus.jsonl");
    }
    dir.finish()
}

/// Ablation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    /// One to four roles; the fourth is the Decoy.
    Roles,
    /// Swarm sizes 8 to 11.
    Swarm,
    /// Monotonic mixer against additive mixing.
    Mixer,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Roles => "roles",
            Variant::Swarm => "swarm",
            Variant::Mixer => "mixer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub task_completion: f64,
}

fn summarize(variant: String, rows: &[EpisodeStats]) -> SummaryRow {
    let returns: Vec<f64> = rows.iter().map(|r| r.total).collect();
    let (mean, std, min, max) = describe(&returns);
    SummaryRow {
        variant,
        episodes: rows.len(),
        mean,
        std,
        min,
        max,
        task_completion: rows.iter().map(|r| r.task_completion).sum(),
    }
}

fn run_episodes(
    cfg: &RunConfig,
    world_cfg: WorldConfig,
    mode: RoleMode<'_>,
    decoy: bool,
    policies: &Policies,
) -> Result<Vec<EpisodeStats>, CliError> {
    let world = World::new(world_cfg)?;
    Ok((0..cfg.episodes)
        .map(|e| {
            let seed = episode_seed(cfg.seed, e);
            let mut roles = mode.selector(&cfg.oracle, seed);
            play_episode(&world, cfg.nav, e, seed, policies, roles.as_mut(), decoy, Sinks::default())
        })
        .collect())
}

fn write_matrix(dir: &mut RunDir, name: &str, results: &[(String, Vec<EpisodeStats>)]) -> Result<Vec<SummaryRow>, CliError> {
    // csv has no flatten support, hence the copy.
    #[derive(Serialize)]
    struct Flat<'a> {
        variant: &'a str,
        episode: usize,
        seed: u64,
        n_agents: usize,
        #[serde(rename = "return")]
        total: f64,
        task_completion: f64,
        interference: f64,
        fallbacks: usize,
    }
    dir.write_csv(
        &format!("{name}.csv"),
        results.iter().flat_map(|(v, rows)| {
            rows.iter().map(move |s| Flat {
                variant: v,
                episode: s.episode,
                seed: s.seed,
                n_agents: s.n_agents,
                total: s.total,
                task_completion: s.task_completion,
                interference: s.interference,
                fallbacks: s.fallbacks,
            })
        }),
    )?;
    let summary: Vec<SummaryRow> = results.iter().map(|(v, rows)| summarize(v.clone(), rows)).collect();
    dir.write_csv(&format!("{name}_summary.csv"), &summary)?;
    Ok(summary)
}

/// Evaluates the same policies over several swarm sizes.
pub fn eval_sizes(cfg: &RunConfig, sizes: &[usize], command: &str, name: &str, args: Vec<String>) -> Result<Manifest, CliError> {
    if sizes.is_empty() {
        return Err(CliError::Usage("no swarm sizes given".into()));
    }
    let worlds: Vec<WorldConfig> = sizes
        .iter()
        .map(|&n| {
            let w = WorldConfig { n_agents: n, ..cfg.world.clone() };
            w.validate().map(|_| w)
        })
        .collect::<Result<_, _>>()?;
    let ck = load_checkpoint(cfg)?;
    let policies = Policies::from_config(cfg);
    let mut dir = RunDir::create(cfg, command, args)?;
    let mut results = Vec::new();
    for (n, w) in sizes.iter().zip(worlds) {
        results.push((format!("n{n}"), run_episodes(cfg, w, role_mode(&ck), false, &policies)?));
    }
    write_matrix(&mut dir, name, &results)?;
    dir.finish()
}

#[derive(Serialize)]
struct MixerLossRow {
    update: usize,
    rmix: f64,
    vdn: f64,
    rmix_smoothed: f64,
    vdn_smoothed: f64,
}

#[derive(Serialize)]
struct MixerSummaryRow {
    mixer: &'static str,
    updates: u64,
    initial_smoothed: f64,
    final_smoothed: f64,
    ratio: f64,
}

pub fn ablate(cfg: &RunConfig, variant: Variant) -> Result<Manifest, CliError> {
    let args = vec!["--variant".to_string(), variant.as_str().to_string()];
    match variant {
        Variant::Swarm => eval_sizes(cfg, &[8, 9, 10, 11], "ablate", "ablate_swarm", args),
        Variant::Roles => {
            let policies = Policies::from_config(cfg);
            let mut dir = RunDir::create(cfg, "ablate", args)?;
            let matrix: [(&str, RoleMode<'_>, bool); 4] = [
                ("1:executor", RoleMode::ExecutorOnly, false),
                ("2:commander+executor", RoleMode::CommanderExecutor, false),
                ("3:commander+coordinator+executor", RoleMode::Oracle, false),
                ("4:commander+coordinator+executor+decoy", RoleMode::Oracle, true),
            ];
            let mut results = Vec::new();
            for (label, mode, decoy) in matrix {
                results.push((label.to_string(), run_episodes(cfg, cfg.world.clone(), mode, decoy, &policies)?));
            }
            write_matrix(&mut dir, "ablate_roles", &results)?;
            dir.finish()
        }
        Variant::Mixer => {
            let world = World::new(cfg.world.clone())?;
            let seeded = seeded_buffer(cfg, &world);
            let mut dir = RunDir::create(cfg, "ablate", args)?;
            let mut reports = Vec::new();
            for (name, kind) in [("rmix", MixerKind::Rmix), ("vdn", MixerKind::Vdn)] {
                let tc = swarm_core::rmix::TrainConfig { mixer: kind, ..cfg.train_config() };
                let mut buffer = seeded.clone();
                let (ck, report) = train(&world, cfg.nav, &tc, &mut buffer)?;
                let file = format!("{name}_checkpoint.json");
                ck.save(dir.path(&file))?;
                dir.adopt(&file);
                write_curves(&mut dir, &format!("{name}_"), &report)?;
                reports.push(report);
            }
            let (r, v) = (&reports[0], &reports[1]);
            let (rs, vs) = (smooth(&r.losses, LOSS_WINDOW), smooth(&v.losses, LOSS_WINDOW));
            dir.write_csv(
                "mixer_loss.csv",
                (0..r.losses.len().min(v.losses.len())).map(|k| MixerLossRow {
                    update: k,
                    rmix: r.losses[k],
                    vdn: v.losses[k],
                    rmix_smoothed: rs[k],
                    vdn_smoothed: vs[k],
                }),
            )?;
            let summary = [("rmix", r), ("vdn", v)].map(|(mixer, rep)| {
                let (initial_smoothed, final_smoothed, ratio) = loss_ratio(&rep.losses, LOSS_WINDOW);
                MixerSummaryRow {
                    mixer,
                    updates: rep.updates,
                    initial_smoothed,
                    final_smoothed,
                    ratio,
                }
            });
            dir.write_csv("mixer_summary.csv", summary)?;
            dir.finish()
        }
    }
}

/// Parses a comma-separated size list such as `8,9,10,11`.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad swarm size '{s}'"))))
        .collect()
}
