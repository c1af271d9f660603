use proptest::prelude::*;
use swarm_core::consensus::{build_comm_graph, run_decision_frame, FrameContext};
use swarm_core::intent::{oracle_role, OracleConfig, OracleConsensusPolicy, OracleIntentPolicy, PromptBundle};
use swarm_core::nav::{accel_command, assign_slots, formation_slots, FormationController, FormationTemplate, NavParams};
use swarm_core::roles::{fallback_resolve, ConsensusDecision, Intent, NeighborDecision, Role};
use swarm_core::world::{
    neighbor_set, observe, AgentState, EnemyState, GlobalState, Observation, RewardBreakdown, RewardWeights,
    TargetId, Vec2, World, WorldConfig,
};

fn world() -> World {
    World::new(WorldConfig::default()).unwrap()
}

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn oracle_roles() -> impl FnMut(usize, &Observation, TargetId) -> Role {
    let cfg = OracleConfig::default();
    move |_, o, g| oracle_role(o, g, &cfg)
}

/// Parks `n` agents on the formation slots of target 0 and the rest far away.
fn covering_state(n: usize) -> (World, GlobalState, Vec<TargetId>) {
    let w = world();
    let mut s = w.init(3);
    let target = s.targets[0].clone();
    let away = |c: f64| if c > 0.0 { -9.5 } else { 9.5 };
    s.enemy.pos = Vec2::new(away(target.pos.x), away(target.pos.y));
    let slots = formation_slots(&FormationTemplate::regular(n, 0.75), target.pos);
    let mut goals = vec![s.targets[1].id; s.agents.len()];
    for (i, a) in s.agents.iter_mut().enumerate() {
        a.vel = Vec2::ZERO;
        if i < n {
            a.pos = slots[i];
            goals[i] = target.id;
        } else {
            a.pos = Vec2::new(-9.5 + 0.6 * i as f64, -9.5);
        }
    }
    (w, s, goals)
}

#[test]
fn urgency_follows_closed_form() {
    for n in 3..=8 {
        let (w, mut s, goals) = covering_state(n);
        let id = s.targets[0].id;
        let mut t = 0usize;
        loop {
            let expected = (1.0 - 0.003 * (n * t) as f64).max(0.0);
            if expected <= 0.0 {
                break;
            }
            assert_eq!(s.target(id).unwrap().urgency, expected, "n={n} t={t}");
            let report = w.detect_coverage(&s, &goals);
            assert_eq!(report.covering_agents(id), n);
            s = w.update_urgency(&s, &report);
            t += 1;
        }
        assert_eq!(t, (1.0f64 / (0.003 * n as f64)).ceil() as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reward_sign_structure(
        base in proptest::array::uniform5(0.0f64..50.0),
        which in 0usize..5,
        delta in 0.001f64..10.0,
    ) {
        let w = RewardWeights::default();
        let c = RewardBreakdown {
            formation: base[0],
            navigation: base[1],
            task_completion: base[2],
            interference: base[3],
            collision: base[4],
        };
        let mut d = c;
        match which {
            0 => d.formation += delta,
            1 => d.navigation += delta,
            2 => d.task_completion += delta,
            3 => d.interference += delta,
            _ => d.collision += delta,
        }
        if which < 3 {
            prop_assert!(w.combine(&d) >= w.combine(&c));
        } else {
            prop_assert!(w.combine(&d) <= w.combine(&c));
        }
    }

    #[test]
    fn physics_is_deterministic_and_bounded(
        seed in any::<u64>(),
        accels in proptest::collection::vec((vec2(5.0), vec2(5.0)), 1..40),
    ) {
        let w = world();
        let s0 = w.init(seed);
        let n = s0.agents.len();
        let run = || {
            let mut s = s0.clone();
            let mut trace = Vec::new();
            for (a, e) in &accels {
                let cmds: Vec<Vec2> = (0..n).map(|i| *a * (1.0 + i as f64 / 8.0)).collect();
                s = w.step(&s, &cmds, *e);
                trace.push(s.clone());
            }
            trace
        };
        let a = run();
        prop_assert_eq!(&a, &run());
        for s in &a {
            for ag in &s.agents {
                prop_assert!(ag.vel.x.abs() <= 1.0 && ag.vel.y.abs() <= 1.0);
            }
            prop_assert!(s.enemy.vel.x.abs() <= 0.75 && s.enemy.vel.y.abs() <= 0.75);
        }
    }

    #[test]
    fn observation_and_neighbors_are_pure(seed in any::<u64>(), agent in 0usize..8, range in 0.5f64..20.0) {
        let s = world().init(seed);
        prop_assert_eq!(observe(&s, agent).unwrap(), observe(&s, agent).unwrap());
        prop_assert_eq!(neighbor_set(&s, agent, range), neighbor_set(&s, agent, range));
        prop_assert!(!neighbor_set(&s, agent, range).contains(&agent));
    }

    #[test]
    fn resolving_a_legal_decision_is_identity(
        role in 0usize..3,
        goal in 0u32..9,
        initial in 0u32..9,
        neighbors in proptest::collection::vec((0usize..3, proptest::option::of(0u32..9)), 0..4),
    ) {
        let own = ConsensusDecision::output(TargetId(goal));
        let nbrs: Vec<NeighborDecision> = neighbors
            .iter()
            .enumerate()
            .map(|(k, (r, g))| NeighborDecision {
                agent: k + 10,
                role: Role::from_index(*r).unwrap(),
                decision: match g {
                    Some(g) => ConsensusDecision::output(TargetId(*g)),
                    None => ConsensusDecision::illegal(swarm_core::intent::IllegalReason::Malformed),
                },
            })
            .collect();
        let role = Role::from_index(role).unwrap();
        let out = fallback_resolve(role, Intent { goal: TargetId(initial), role }, own, &nbrs);
        prop_assert_eq!(out, own);
    }

    #[test]
    fn commands_respect_the_acceleration_cap(
        pos in vec2(10.0), vel in vec2(1.0), slot in vec2(10.0), enemy in vec2(10.0),
    ) {
        let params = NavParams::default();
        let s = world().init(0);
        let a = AgentState { id: 0, pos, vel };
        let e = EnemyState { pos: enemy, vel: Vec2::ZERO };
        let cmd = accel_command(&a, slot, &s.obstacles, &e, &params);
        prop_assert!(cmd.norm() <= params.accel_limit + 1e-12);
    }

    #[test]
    fn slot_assignment_is_optimal(points in proptest::collection::vec((vec2(10.0), vec2(10.0)), 1..=6)) {
        let agents: Vec<Vec2> = points.iter().map(|p| p.0).collect();
        let slots: Vec<Vec2> = points.iter().map(|p| p.1).collect();
        let cost = |perm: &[usize]| -> f64 {
            perm.iter().enumerate().map(|(i, &j)| { let d = agents[i] - slots[j]; d.dot(d) }).sum()
        };
        let got = assign_slots(&agents, &slots).unwrap();
        let mut sorted = got.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..agents.len()).collect::<Vec<_>>());
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..agents.len()).collect();
        permute(&mut perm, 0, &mut |p| best = best.min(cost(p)));
        prop_assert!(cost(&got) <= best + 1e-9);
    }

    #[test]
    fn decision_frames_are_local_and_pure(seed in any::<u64>(), nudge in vec2(0.4)) {
        let w = world();
        let mut s = w.init(seed);
        // Two groups of four, far apart and far from each other's range.
        for (i, a) in s.agents.iter_mut().enumerate() {
            let base = if i < 4 { Vec2::new(-7.0, -7.0) } else { Vec2::new(7.0, 7.0) };
            a.pos = base + Vec2::new((i % 4) as f64 * 0.9, 0.0);
        }
        let graph = build_comm_graph(&s, 3.0);
        prop_assert!(graph.component(0).iter().all(|&j| j < 4));
        let ip = OracleIntentPolicy::default();
        let cp = OracleConsensusPolicy::default();
        let ctx = FrameContext { index: 0, obs_range: 3.0, seed };
        let a = run_decision_frame(&s, &ip, &mut oracle_roles(), &cp, ctx);
        let b = run_decision_frame(&s, &ip, &mut oracle_roles(), &cp, ctx);
        prop_assert_eq!(&a.decisions, &b.decisions);
        prop_assert_eq!(&a.transcript, &b.transcript);
        prop_assert!(a.decisions.iter().all(|d| d.is_legal()));
        let mut moved = s.clone();
        moved.agents[6].pos += nudge;
        let c = run_decision_frame(&moved, &ip, &mut oracle_roles(), &cp, ctx);
        prop_assert_eq!(&a.decisions[..4], &c.decisions[..4]);
    }

    #[test]
    fn prompts_are_byte_stable(seed in any::<u64>(), agent in 0usize..8) {
        let s = world().init(seed);
        let o = observe(&s, agent).unwrap();
        let bundle = PromptBundle::default();
        prop_assert_eq!(bundle.render_init_prompt(&o), bundle.render_init_prompt(&o));
    }
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

#[test]
fn agent_at_rest_on_its_slot_gets_no_command() {
    let (w, s, goals) = covering_state(6);
    let mut c = FormationController::new(NavParams::default(), 0.75, w.config().max_formation);
    c.plan(&s, &goals);
    let cmds = c.commands(&s);
    for i in 0..6 {
        assert_eq!(cmds[i], Vec2::ZERO, "agent {i}");
    }
}
