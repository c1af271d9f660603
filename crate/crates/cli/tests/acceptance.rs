//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any failed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_runner::{run, Cli};
use swarm_core::consensus::TranscriptRecord;
use swarm_core::datagen::{check_sample, filter, FilterConfig, SampleRecord};
use swarm_core::episode::{run_episode, StepRecord};
use swarm_core::intent::{
    oracle_role, parse_decision, IllegalReason, OracleConfig, OracleConsensusPolicy, OracleIntentPolicy,
    ParsedDecision,
};
use swarm_core::rmix::{
    greedy_q_tot, mix, role_values, td_loss, td_loss_and_grad, Mixer, MixerKind, MonotonicMixer, OutputActivation, ParamSet,
    RmixModel, TrainConfig, Transition,
};
use swarm_core::roles::{fallback_resolve, ConsensusDecision, DecisionGoal, DecisionSource, Intent, NeighborDecision, Role};
use swarm_core::world::{
    candidate_grid, grid_index, AgentState, EnemyState, GlobalState, Observation, TargetId, TargetRegion,
    TargetView, Vec2, World, WorldConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn swarm(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["swarm"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    run(&cli.command).map(|_| ()).map_err(|e| format!("{}: {e}", args.join(" ")))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

// --- mixer properties -------------------------------------------------------

fn mixer_c1() -> Outcome {
    let t0 = Instant::now();
    let eps = 1e-3;
    let mut r = rng(101);
    let mut worst = f64::INFINITY;
    let mut checks = 0usize;
    for k in 0..100 {
        let n = r.random_range(2..=11);
        let embed = r.random_range(4..=32);
        let state_dim = r.random_range(3..=24);
        let act = if k % 2 == 0 { OutputActivation::Relu } else { OutputActivation::Identity };
        let mixer = MonotonicMixer::new(n, embed, state_dim, act, &mut r);
        for _ in 0..10 {
            let state = uniform_vec(&mut r, state_dim, 2.0);
            let q = uniform_vec(&mut r, n, 5.0);
            for i in 0..n {
                let (mut up, mut down) = (q.clone(), q.clone());
                up[i] += eps;
                down[i] -= eps;
                let d = (mixer.forward_trace(&up, &state).unwrap().q_tot
                    - mixer.forward_trace(&down, &state).unwrap().q_tot)
                    / (2.0 * eps);
                worst = worst.min(d);
                checks += 1;
                ensure!(d >= -1e-9, "mixer {k}: dQtot/dQ{i} = {d:e}");
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("{checks} partials, min {worst:.3e}, {secs:.2}s"))
}

fn argmax(v: &[f64]) -> usize {
    (1..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b })
}

fn refinement_c2() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(202);
    let state_dim = 6;
    let mut strict = 0usize;
    let mut trials = 0usize;
    for n in [2usize, 3] {
        for trial in 0..1000 {
            let act = if trial % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Relu };
            let mixer = MonotonicMixer::new(n, 8, state_dim, act, &mut r);
            let state = uniform_vec(&mut r, state_dim, 1.0);
            let tables: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, 9, 3.0)).collect();
            let pick = |goals: &[usize]| -> f64 {
                let q: Vec<f64> = goals.iter().zip(&tables).map(|(&g, t)| t[g]).collect();
                mix(&q, &state, &mixer).unwrap()
            };
            let unrefined: Vec<usize> = (0..n).map(|_| r.random_range(0..9)).collect();
            let refined: Vec<usize> = tables.iter().map(|t| argmax(t)).collect();
            let (before, after) = (pick(&unrefined), pick(&refined));
            ensure!(after >= before, "n={n} trial {trial}: {after} < {before}");
            if after > before {
                strict += 1;
            }
            // The refined choice is also the best joint choice.
            let mut best = f64::NEG_INFINITY;
            let mut goals = vec![0usize; n];
            for code in 0..9usize.pow(n as u32) {
                let mut c = code;
                for g in goals.iter_mut() {
                    *g = c % 9;
                    c /= 9;
                }
                best = best.max(pick(&goals));
            }
            ensure!(best == after, "n={n} trial {trial}: exhaustive {best} vs refined {after}");
            trials += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(strict >= 1, "never strictly better");
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("{trials} trials, {strict} strictly better, {secs:.2}s"))
}

fn random_transition(r: &mut ChaCha8Rng, n: usize, obs_dim: usize, state_dim: usize) -> Transition {
    let obs = |r: &mut ChaCha8Rng| (0..n).map(|_| uniform_vec(r, obs_dim, 1.0)).collect::<Vec<_>>();
    Transition {
        state: uniform_vec(r, state_dim, 1.0),
        obs: obs(r),
        roles: (0..n).map(|_| Role::ALL[r.random_range(0..3)]).collect(),
        reward: r.random_range(-2000.0..2000.0),
        next_state: uniform_vec(r, state_dim, 1.0),
        next_obs: obs(r),
        intents: vec![TargetId(0); n],
        terminal: r.random_bool(0.25),
    }
}

/// Smallest distance of any online pre-activation from a kink.
fn kink_margin(model: &RmixModel, batch: &[Transition]) -> f64 {
    let mut m = f64::INFINITY;
    let mut seen = |v: &[f64]| m = v.iter().fold(m, |a, x| a.min(x.abs()));
    for t in batch {
        let mut q = Vec::new();
        for (o, role) in t.obs.iter().zip(&t.roles) {
            let mut x = o.clone();
            let last = model.qnet.layers.len() - 1;
            for (k, layer) in model.qnet.layers.iter().enumerate() {
                x = layer.forward(&x);
                if k < last {
                    seen(&x);
                    x.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            q.push(x[role.index()]);
        }
        if let Mixer::Monotonic(mx) = &model.mixer {
            let tr = mx.forward_trace(&q, &t.state).unwrap();
            seen(&tr.raw_w1);
            seen(&tr.raw_w2);
            seen(&mx.hyper_b2_hidden.forward(&t.state));
            let pre: Vec<f64> = (0..mx.embed)
                .map(|e| tr.b1[e] + (0..mx.n_agents).map(|i| tr.w1[e * mx.n_agents + i] * q[i]).sum::<f64>())
                .collect();
            seen(&pre);
            if mx.output == OutputActivation::Relu {
                seen(&[tr.pre_output]);
            }
        }
    }
    m
}

fn gradient_c3() -> Outcome {
    let t0 = Instant::now();
    let h = 1e-4;
    let (n, obs_dim, state_dim) = (3, 5, 4);
    let mut worst = 0.0f64;
    let mut params = 0usize;
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let cfg = TrainConfig {
            embed: 4,
            hidden: vec![6],
            output_activation: if seed % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Relu },
            ..TrainConfig::default()
        };
        let online = RmixModel::new(&cfg, n, obs_dim, state_dim, &mut r);
        let target = RmixModel::new(&cfg, n, obs_dim, state_dim, &mut r);
        // Central differences only agree with the derivative away from the
        // ReLU and |.| kinks, so redraw batches that sit too close to one.
        let batch = loop {
            let b: Vec<Transition> = (0..4).map(|_| random_transition(&mut r, n, obs_dim, state_dim)).collect();
            if kink_margin(&online, &b) > 1e-3 {
                break b;
            }
        };
        let refs: Vec<&Transition> = batch.iter().collect();
        let (gamma, scale) = (0.95, 1e-3);
        let (_, grad) = td_loss_and_grad(&refs, &online, &target, gamma, scale).unwrap();
        let analytic = grad.flat();
        let mut probe = online.clone();
        let mut k = 0usize;
        for s in 0..probe.slices().len() {
            for i in 0..probe.slices()[s].len() {
                let orig = probe.slices()[s][i];
                probe.slices_mut()[s][i] = orig + h;
                let up = td_loss(&refs, &probe, &target, gamma, scale).unwrap();
                probe.slices_mut()[s][i] = orig - h;
                let down = td_loss(&refs, &probe, &target, gamma, scale).unwrap();
                probe.slices_mut()[s][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                ensure!(rel <= 1e-4, "seed {seed} param {k}: analytic {a:e} numeric {numeric:e} rel {rel:e}");
                worst = worst.max(rel);
                k += 1;
            }
        }
        params += k;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("{params} parameters, max rel err {worst:.2e}, {secs:.2}s"))
}

fn greedy_c4() -> Outcome {
    let mut r = rng(404);
    let (obs_dim, state_dim) = (5, 4);
    for case in 0..500 {
        let n = 1 + case % 3;
        let cfg = TrainConfig {
            embed: 8,
            hidden: vec![8],
            output_activation: if case % 2 == 0 { OutputActivation::Relu } else { OutputActivation::Identity },
            mixer: MixerKind::Rmix,
            ..TrainConfig::default()
        };
        let model = RmixModel::new(&cfg, n, obs_dim, state_dim, &mut r);
        let obs: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, obs_dim, 1.0)).collect();
        let state = uniform_vec(&mut r, state_dim, 1.0);
        let values: Vec<[f64; 3]> = obs.iter().map(|o| role_values(&model.qnet, o).unwrap()).collect();
        let mut best = f64::NEG_INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let q: Vec<f64> = (0..n).map(|i| values[i][code / 3usize.pow(i as u32) % 3]).collect();
            best = best.max(model.mixer.mix(&q, &state).unwrap());
        }
        let greedy = greedy_q_tot(&model, &obs, &state).unwrap();
        ensure!(greedy == best, "case {case}: greedy {greedy} vs exhaustive {best}");
    }
    Ok("500 cases exact".into())
}

// --- fallback, filter, parser -----------------------------------------------

/// Written out case by case from the contingency rules, independently of the
/// library's loop over superiors.
fn expected_fallback(role: Role, initial: TargetId, own: Option<TargetId>, nbrs: &[NeighborDecision]) -> (TargetId, DecisionSource) {
    if let Some(g) = own {
        return (g, DecisionSource::LlmOutput);
    }
    let lowest_legal = |want: Role| {
        let mut best: Option<(usize, TargetId)> = None;
        for n in nbrs {
            if n.role != want {
                continue;
            }
            if let DecisionGoal::Target(g) = n.decision.goal {
                if best.is_none_or(|(a, _)| n.agent < a) {
                    best = Some((n.agent, g));
                }
            }
        }
        best.map(|(_, g)| g)
    };
    let superior = match role {
        Role::Commander => None,
        Role::Coordinator => lowest_legal(Role::Commander),
        Role::Executor => lowest_legal(Role::Commander).or_else(|| lowest_legal(Role::Coordinator)),
    };
    match superior {
        Some(g) => (g, DecisionSource::FallbackSuperior),
        None => (initial, DecisionSource::FallbackSelf),
    }
}

fn fallback_c6() -> Outcome {
    let bad = ConsensusDecision::illegal(IllegalReason::NotATarget);
    // Descending ids so "lowest id wins" is not the same as "first seen".
    let ids = [9usize, 4, 6];
    let mut cases = 0usize;
    for role in Role::ALL {
        for own_ok in [false, true] {
            for k in 0..=3usize {
                for code in 0..6usize.pow(k as u32) {
                    let nbrs: Vec<NeighborDecision> = (0..k)
                        .map(|j| {
                            let c = code / 6usize.pow(j as u32) % 6;
                            NeighborDecision {
                                agent: ids[j],
                                role: Role::ALL[c % 3],
                                decision: if c >= 3 { ConsensusDecision::output(TargetId(10 + j as u32)) } else { bad },
                            }
                        })
                        .collect();
                    let initial = TargetId(1);
                    let own = own_ok.then_some(TargetId(2));
                    let out = fallback_resolve(
                        role,
                        Intent { goal: initial, role },
                        own.map_or(bad, ConsensusDecision::output),
                        &nbrs,
                    );
                    let (goal, source) = expected_fallback(role, initial, own, &nbrs);
                    ensure!(out.is_legal(), "illegal escape: {role:?} {nbrs:?}");
                    ensure!(
                        out.goal == DecisionGoal::Target(goal) && out.source == source,
                        "{role:?} own={own:?} {nbrs:?}: got {out:?}, want {goal:?} via {source:?}"
                    );
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} cases"))
}

fn sample(goal: Option<Vec2>, reasoning: String, reward: f64) -> SampleRecord {
    SampleRecord {
        episode: 0,
        frame: 0,
        agent: 0,
        obs: Observation {
            self_pos: Vec2::ZERO,
            self_vel: Vec2::ZERO,
            enemy_pos: Vec2::new(9.0, 9.0),
            enemy_vel: Vec2::ZERO,
            targets: vec![],
        },
        obs_digest: String::new(),
        role: Role::Executor,
        goal,
        reasoning,
        window_reward: reward,
        episode_reward: reward,
        prompt: String::new(),
    }
}

fn filter_c7() -> Outcome {
    let cfg = FilterConfig::default();
    let words = |n: usize| vec!["hold"; n].join(" ");
    let good_goal = Some(Vec2::new(-8.0, 8.0));
    let batch = vec![
        (sample(good_goal, words(300), 0.0), 1.0),
        (sample(good_goal, words(300), -5000.0), 0.9),
        (sample(good_goal, format!("{} \u{fffd}", words(300)), 0.0), 0.75),
        (sample(Some(Vec2::new(1.3, 2.0)), words(300), 0.0), 0.55),
        (sample(None, String::new(), -5000.0), 0.0),
    ];
    let mut scores = Vec::new();
    for (i, (rec, want)) in batch.iter().enumerate() {
        let got = check_sample(rec, &cfg);
        ensure!(got == *want, "record {i}: score {got}, want {want}");
        scores.push(got);
    }
    let records: Vec<SampleRecord> = batch.into_iter().map(|(r, _)| r).collect();
    let passed = filter(&records, &cfg);
    ensure!(passed.len() == 1 && *passed[0] == records[0], "pass set {passed:?}");
    Ok(format!("scores {scores:?}, pass set = record 0"))
}

fn parser_c8() -> Outcome {
    let grid = candidate_grid();
    let active: Vec<TargetView> = grid
        .iter()
        .enumerate()
        .map(|(i, &p)| TargetView { id: TargetId(i as u32), pos: p, urgency: 1.0 })
        .collect();
    let accepted = parse_decision("I recommend going to target [-8,8]", &active);
    ensure!(
        matches!(accepted, ParsedDecision::Goal { pos, .. } if pos == Vec2::new(-8.0, 8.0)),
        "phrase rejected: {accepted:?}"
    );
    for bad in ["region 8", "target point #8, #8"] {
        let d = parse_decision(bad, &active);
        ensure!(d.target().is_none(), "accepted '{bad}': {d:?}");
    }
    let mut r = rng(808);
    let mut accepts = 0usize;
    let wrappers = ["go to [{x}, {y}]", "Target: ({x},{y}) now", "I recommend going to target [{x},{y}]", "[{x}, {y}] then [{y}, {x}]"];
    for case in 0..10_000 {
        let base = grid[r.random_range(0..grid.len())];
        let noise = if case % 4 == 0 { 0.0 } else { r.random_range(-0.6..0.6) };
        let (x, y) = (base.x + noise, base.y + r.random_range(-0.6..0.6) * (case % 3) as f64);
        let digits = r.random_range(0..4);
        let text = wrappers[case % wrappers.len()]
            .replace("{x}", &format!("{x:.digits$}"))
            .replace("{y}", &format!("{y:.digits$}"));
        if let ParsedDecision::Goal { target, pos } = parse_decision(&text, &active) {
            accepts += 1;
            ensure!(grid_index(pos).is_some(), "'{text}' accepted off-grid {pos:?}");
            ensure!(active[target.0 as usize].pos == pos, "'{text}' accepted wrong target");
        }
    }
    Ok(format!("fuzz 10000 cases, {accepts} accepted, all on grid"))
}

// --- environment closed forms -----------------------------------------------

fn hand_state(enemy: Vec2, extra: Vec2, urgency: f64) -> GlobalState {
    let c = Vec2::new(-8.0, 8.0);
    let square = [(0.75, 0.0), (0.0, 0.75), (-0.75, 0.0), (0.0, -0.75)];
    let mut pos: Vec<Vec2> = square.iter().map(|&(x, y)| c + Vec2::new(x, y)).collect();
    pos.extend([Vec2::new(0.0, 0.0), Vec2::new(8.0, -8.0), Vec2::new(-8.0, 0.0), extra]);
    GlobalState {
        agents: pos
            .into_iter()
            .enumerate()
            .map(|(id, pos)| AgentState { id, pos, vel: Vec2::ZERO })
            .collect(),
        enemy: EnemyState { pos: enemy, vel: Vec2::ZERO },
        targets: vec![TargetRegion::new(TargetId(0), c, 1.5).with_urgency(urgency)],
        obstacles: vec![],
        step: 0,
        seed: 0,
    }
}

fn environment_c9() -> Outcome {
    let world = World::new(WorldConfig::default()).unwrap();
    // Urgency: n agents parked in formation on one target.
    for n in 3..=8usize {
        let mut s = hand_state(Vec2::new(9.5, -9.5), Vec2::new(0.0, 8.0), 1.0);
        let slots = swarm_core::nav::formation_slots(&swarm_core::nav::FormationTemplate::regular(n, 0.75), s.targets[0].pos);
        for (i, a) in s.agents.iter_mut().enumerate() {
            a.pos = if i < n { slots[i] } else { Vec2::new(6.0 + 0.5 * i as f64, -9.0) };
        }
        let goals: Vec<TargetId> = (0..8).map(|i| if i < n { TargetId(0) } else { TargetId(7) }).collect();
        let mut t = 0usize;
        loop {
            let expected = (1.0 - 0.003 * (n * t) as f64).max(0.0);
            if expected == 0.0 {
                // Exhausted targets re-spawn at full urgency.
                ensure!(s.targets[0].urgency == 1.0 && s.targets[0].coverage == 0, "n={n}: no re-spawn at t={t}");
                break;
            }
            let got = s.targets[0].urgency;
            ensure!(got == expected, "n={n} t={t}: urgency {got} vs {expected}");
            let report = world.detect_coverage(&s, &goals);
            ensure!(report.covering_agents(TargetId(0)) == n, "n={n} t={t}: coverage lost");
            s = world.update_urgency(&s, &report);
            t += 1;
        }
        let steps = (1.0 / (0.003 * n as f64)).ceil() as usize;
        ensure!(t == steps, "n={n}: exhausted after {t} steps, want {steps}");
    }

    // Hand arithmetic. Navigation scale is 16√2; the square sits on its target.
    let scale = 16.0 * 2f64.sqrt();
    let near = |d: f64| 1.0 - d / scale;
    for (enemy, extra, urgency, interference, collision) in [
        (Vec2::new(9.0, -9.0), Vec2::new(0.0, 8.0), 1.0, 1.0, 0.0),
        (Vec2::new(-9.0, -9.0), Vec2::new(0.0, 0.2), 0.5, 0.0, 1.0),
    ] {
        let s = hand_state(enemy, extra, urgency);
        let report = world.detect_coverage(&s, &[TargetId(0); 8]);
        let (total, c) = world.compute_reward(&s, &report);
        let extra_nav = near(extra.distance(Vec2::new(-8.0, 8.0)));
        let navigation = urgency * (4.0 * near(0.75) + near(8.0 * 2f64.sqrt()) + 0.0 + near(8.0) + extra_nav);
        let want = 15.0 * 1.0 + 4.0 * navigation + 10.0 * (urgency * 4.0) - 100.0 * interference - 100.0 * collision;
        ensure!((c.navigation - navigation).abs() < 1e-12, "navigation {} vs {navigation}", c.navigation);
        ensure!((c.formation - 1.0).abs() < 1e-12 && c.task_completion == urgency * 4.0, "components {c:?}");
        ensure!(c.interference == interference && c.collision == collision, "components {c:?}");
        ensure!((total - want).abs() < 1e-9, "reward {total} vs {want}");
    }

    // Frame count and episode totals.
    let ip = OracleIntentPolicy::default();
    let cp = OracleConsensusPolicy::default();
    let cfg = OracleConfig::default();
    let mut roles = |_: usize, o: &Observation, g: TargetId| oracle_role(o, g, &cfg);
    let ep = run_episode(&world, Default::default(), 7, &ip, &mut roles, &cp, true);
    ensure!(ep.frames.len() == 20 && ep.steps.len() == 1000, "{} frames, {} steps", ep.frames.len(), ep.steps.len());
    let mut sum = 0.0;
    for st in &ep.steps {
        let c = st.components;
        let hand = 15.0 * c.formation + 4.0 * c.navigation + 10.0 * c.task_completion - 100.0 * c.interference - 100.0 * c.collision;
        ensure!((st.reward - hand).abs() < 1e-9, "step {}: {} vs {hand}", st.step, st.reward);
        sum += st.reward;
    }
    ensure!((ep.total_reward - sum).abs() < 1e-6, "episode total {} vs {sum}", ep.total_reward);
    Ok("urgency exact for n=3..8, hand rewards match, 20 frames / 1000 steps".into())
}

// --- command-level checks ---------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}

const SMALL: &str = r#"
seed = 5
episodes = 2
samples = 40

[world]
episode_length = 150

[train]
n_pre = 3
n_epoch = 3
batch_size = 4
"#;

fn determinism_c10(root: &Path) -> Outcome {
    let cfg = write_config(root, "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    let buffer = format!("{}/buffer.json", dir("seed"));
    let samples = format!("{}/samples.jsonl", dir("collect"));
    let runs: Vec<(String, Vec<String>)> = vec![
        ("simulate", vec!["simulate"]),
        ("seed", vec!["seed-offline"]),
        ("train", vec!["train-rmix", "--buffer", &buffer]),
        ("train_fresh", vec!["train-rmix"]),
        ("collect", vec!["collect-data"]),
        ("filter", vec!["filter-data", "--input", &samples]),
        ("roles", vec!["ablate", "--variant", "roles"]),
        ("swarm", vec!["ablate", "--variant", "swarm"]),
        ("mixer", vec!["ablate", "--variant", "mixer"]),
        ("eval", vec!["eval", "--sizes", "8,10"]),
    ]
    .into_iter()
    .map(|(n, a)| (n.to_string(), a.into_iter().map(String::from).collect()))
    .collect();
    let mut files = 0usize;
    for (name, args) in &runs {
        let out = dir(name);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        argv.extend(["--config", cfg, "--out", &out]);
        swarm(&argv)?;
        let first = snapshot(Path::new(&out));
        swarm(&argv)?;
        let second = snapshot(Path::new(&out));
        ensure!(first.len() >= 2, "{name}: only {} files", first.len());
        ensure!(first.keys().eq(second.keys()), "{name}: file sets differ");
        for (f, bytes) in &first {
            ensure!(second[f] == *bytes, "{name}/{f} differs between runs");
        }
        files += first.len();
    }
    Ok(format!("{} subcommand runs, {files} files byte-identical", runs.len()))
}

const TRAINING: &str = r#"
seed = 11

[train]
n_pre = 50
n_epoch = 200
output_activation = "identity"
"#;

fn training_c5(root: &Path) -> Outcome {
    let cfg = write_config(root, "training.toml", TRAINING);
    let out = root.join("mixer");
    let t0 = Instant::now();
    swarm(&["ablate", "--variant", "mixer", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    let rows = read_csv(&out.join("mixer_summary.csv"));
    ensure!(out.join("mixer_loss.csv").is_file(), "no comparison curve");
    let mut parts = Vec::new();
    let mut ok = true;
    for row in &rows {
        let ratio: f64 = row["ratio"].parse().unwrap();
        ok &= ratio <= 0.2;
        parts.push(format!("{} {:.3e} -> {:.3e} (ratio {ratio:.3})", row["mixer"], row["initial_smoothed"].parse::<f64>().unwrap(), row["final_smoothed"].parse::<f64>().unwrap()));
    }
    let detail = format!("{}; {mins:.1} min", parts.join(", "));
    ensure!(rows.len() == 2, "summary rows: {}", rows.len());
    ensure!(ok, "{detail}");
    ensure!(mins < 30.0, "{detail}");
    Ok(detail)
}

fn generalization_c11(root: &Path) -> Outcome {
    let ck = root.join("mixer/rmix_checkpoint.json");
    ensure!(ck.is_file(), "no trained checkpoint at {}", ck.display());
    let out = root.join("generalization");
    swarm(&[
        "eval",
        "--sizes",
        "8,9,10,11",
        "--episodes",
        "30",
        "--seed",
        "3",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    let rows = read_csv(&out.join("eval_summary.csv"));
    ensure!(rows.len() == 4, "summary rows: {}", rows.len());
    let mut parts = Vec::new();
    for row in &rows {
        let episodes: usize = row["episodes"].parse().unwrap();
        let tc: f64 = row["task_completion"].parse().unwrap();
        ensure!(episodes == 30 && tc > 0.0, "{}: {episodes} episodes, task completion {tc}", row["variant"]);
        parts.push(format!("{} tc {tc:.0}", row["variant"]));
    }
    Ok(parts.join(", "))
}

// --- remote backend ---------------------------------------------------------

fn read_request(stream: &mut TcpStream) -> Option<()> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()
}

/// Cycles through a server error, a reply slower than the client timeout and
/// two unparseable answers.
fn spawn_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for (k, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                if read_request(&mut stream).is_none() {
                    return;
                }
                let text = match k % 4 {
                    0 => None,
                    1 => {
                        std::thread::sleep(Duration::from_millis(600));
                        Some("late [0, 0]")
                    }
                    2 => Some("head to region 8"),
                    _ => Some("target point #8, #8"),
                };
                let (status, body) = match text {
                    None => (500, "{}".to_string()),
                    Some(t) => (
                        200,
                        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": t}}]}).to_string(),
                    ),
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    url
}

fn remote_c12(root: &Path) -> Outcome {
    let url = spawn_stub();
    let cfg = write_config(
        root,
        "remote.toml",
        &format!(
            r#"
seed = 2
episodes = 1
backend = "remote"

[world]
episode_length = 100

[remote]
endpoint = "{url}"
timeout_secs = 0.2
max_retries = 1
backoff_ms = 1
"#
        ),
    );
    let out = root.join("remote");
    swarm(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    let transcript: Vec<TranscriptRecord> = read_jsonl(&out.join("transcript.jsonl"));
    let trace: Vec<StepRecord> = read_jsonl(&out.join("trace_000.jsonl"));
    ensure!(transcript.len() == 16, "transcript has {} records", transcript.len());
    let mut repaired = 0usize;
    for rec in &transcript {
        let first = trace.iter().find(|s| s.frame == rec.frame).ok_or("frame missing from trace")?;
        ensure!(first.targets.iter().any(|t| t.id == rec.goal), "agent {} frame {}: goal {} not active", rec.agent, rec.frame, rec.goal);
        ensure!(rec.source == DecisionSource::LlmOutput || rec.illegal_reason.is_some(), "fallback without a reason");
        repaired += usize::from(rec.source != DecisionSource::LlmOutput);
    }
    ensure!(repaired == transcript.len(), "only {repaired} of {} decisions went through fallback", transcript.len());
    Ok(format!("{} decisions, all legal via fallback", transcript.len()))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("C1", "mixer monotonicity", Box::new(mixer_c1)),
        ("C2", "argmax refinement", Box::new(refinement_c2)),
        ("C3", "gradient check", Box::new(gradient_c3)),
        ("C4", "greedy vs exhaustive max", Box::new(greedy_c4)),
        ("C5", "training smoke", Box::new(|| training_c5(root))),
        ("C6", "fallback truth table", Box::new(fallback_c6)),
        ("C7", "filter scores", Box::new(filter_c7)),
        ("C8", "parser conformance", Box::new(parser_c8)),
        ("C9", "environment closed forms", Box::new(environment_c9)),
        ("C10", "determinism", Box::new(|| determinism_c10(root))),
        ("C11", "swarm-size generalization", Box::new(|| generalization_c11(root))),
        ("C12", "remote backend robustness", Box::new(|| remote_c12(root))),
    ];
    // ACCEPTANCE=C1,C7 runs a subset.
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
