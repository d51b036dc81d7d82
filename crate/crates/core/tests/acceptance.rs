//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr, bypassing output capture, then asserts.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ridepool::areas::{Area, AreaKind, AreaPoint};
use ridepool::assignment::{solve_assignment, solve_assignment_bruteforce, validate_assignment, ScoredAction};
use ridepool::combos::{generate_feasible_combos, Combo};
use ridepool::model::{default_params, RequestId, VehicleId};
use ridepool::network::{generate_grid, EdgeRecord, NodeId, NodeRecord, RoadNetwork};
use ridepool::rvrp::{
    solve, solve_bruteforce, validate, AwaitingRequest, DelayReference, LegBoundCache, OnboardRequest, RoutePlan,
    RvrpInstance,
};
use ridepool::simulator::{
    build_area_book, compare, decide, gen_requests, rng_stream, streams, write_epoch_csv, ComparePlan, Comparison,
    HotspotProfile, Mode, SimConfig, Simulation,
};
use ridepool::valuefn::Mlp;

/// Wall-clock limits.
const C1_LIMIT: Duration = Duration::from_millis(1);
const C2_LIMIT: Duration = Duration::from_secs(10);
const C3_LIMIT: Duration = Duration::from_secs(60);
const C5_LIMIT: Duration = Duration::from_secs(30);
const C8_LIMIT: Duration = Duration::from_secs(15 * 60);
/// Relative error bound for the gradient check, and the floor of its
/// denominator so that two zero derivatives agree.
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_REL_FLOOR: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-5;
/// Seeds whose per-seed direction must hold in the trend check.
const C8_MIN_SEEDS: usize = 4;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict} ({detail})");
}

fn c(ids: &[u32]) -> Combo {
    Combo::new(ids.iter().copied().map(RequestId).collect())
}

#[test]
fn criterion_01_walkthrough() {
    let bad = [c(&[3]), c(&[1, 2])];
    let mut seen = Vec::new();
    let start = Instant::now();
    let out = generate_feasible_combos(4, &[1, 2, 3, 4].map(RequestId), (), |combo| {
        seen.push(combo.clone());
        Ok::<_, Infallible>(if bad.iter().any(|b| b.is_subset_of(combo)) { None } else { Some(()) })
    })
    .unwrap();
    let elapsed = start.elapsed();
    let got: BTreeSet<Combo> = out.combos.keys().cloned().collect();
    let want: BTreeSet<Combo> = [c(&[]), c(&[1]), c(&[2]), c(&[4]), c(&[1, 4]), c(&[2, 4])].into();
    let exact = got == want;
    let skipped = !seen.contains(&c(&[1, 2, 4]));
    let pass = exact && skipped && elapsed < C1_LIMIT;
    report(1, pass, &format!("exact {exact}, [r1,r2,r4] skipped {skipped}, {elapsed:?}"));
    assert!(pass);
}

#[test]
fn criterion_02_monotone_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(0..=10u32);
        let cap = rng.random_range(0..=5usize);
        let minimal: Vec<u32> = (0..rng.random_range(0..6)).map(|_| rng.random_range(1..(1u32 << n.max(1)))).collect();
        let blocked = |mask: u32| minimal.iter().any(|&b| b & !mask == 0);
        let mask_of = |combo: &Combo| combo.ids().iter().fold(0u32, |m, r| m | 1 << r.0);
        let ids: Vec<RequestId> = (0..n).map(RequestId).collect();
        let out = generate_feasible_combos(cap, &ids, (), |combo| {
            Ok::<_, Infallible>((!blocked(mask_of(combo))).then_some(()))
        })
        .unwrap();
        let got: BTreeSet<Combo> = out.combos.keys().cloned().collect();
        let want: BTreeSet<Combo> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize <= cap && (*m == 0 || !blocked(*m)))
            .map(|m| Combo::new((0..n).filter(|b| m >> b & 1 == 1).map(RequestId).collect()))
            .collect();
        mismatches += (got != want) as usize;
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < C2_LIMIT;
    report(2, pass, &format!("200 oracles, {mismatches} mismatches, {elapsed:?}"));
    assert!(pass);
}

/// Ring plus random chords, integer drive times.
fn random_network(rng: &mut ChaCha8Rng, n: u64) -> RoadNetwork {
    let nodes: Vec<NodeRecord> = (0..n).map(|i| NodeRecord { id: i, x: i as f64, y: 0.0 }).collect();
    let mut edges: Vec<EdgeRecord> = (0..n)
        .map(|i| EdgeRecord { from: i, to: (i + 1) % n, length_m: 10.0, drive_time_s: rng.random_range(1..20) as f64 })
        .collect();
    for _ in 0..rng.random_range(0..2 * n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(EdgeRecord { from: a, to: b, length_m: 10.0, drive_time_s: rng.random_range(1..20) as f64 });
        }
    }
    RoadNetwork::from_records(&nodes, &edges).unwrap()
}

/// Up to three distinct nodes not in `avoid`, the first being the original.
fn random_area(rng: &mut ChaCha8Rng, n: u32, req: u32, kind: AreaKind, avoid: &[NodeId]) -> Area {
    let mut nodes: Vec<NodeId> = Vec::new();
    let size = rng.random_range(1..=3).min(n as usize - avoid.len());
    while nodes.len() < size {
        let node = NodeId(rng.random_range(0..n));
        if !nodes.contains(&node) && !avoid.contains(&node) {
            nodes.push(node);
        }
    }
    let members = nodes
        .iter()
        .enumerate()
        .map(|(i, &node)| AreaPoint { node, walk: if i == 0 { 0.0 } else { rng.random_range(1..30) as f64 } })
        .collect();
    Area::new(RequestId(req), kind, nodes[0], members).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (RoadNetwork, RvrpInstance) {
    let n = rng.random_range(4..=30u32);
    let net = random_network(rng, n as u64);
    let start_time = rng.random_range(0..100) as f64;
    // At most three areas: one awaiting request and at most one onboard, or up to three onboard.
    let (awaiting, onboard) = if rng.random_bool(0.6) { (1, rng.random_range(0..=1)) } else { (0, rng.random_range(1..=3)) };
    let capacity = rng.random_range((awaiting + onboard) as usize..=4);
    let mut inst = RvrpInstance::new(NodeId(rng.random_range(0..n)), start_time, capacity);
    for j in 0..awaiting {
        let pickup = random_area(rng, n, j, AreaKind::Pickup, &[]);
        let used: Vec<NodeId> = pickup.nodes().collect();
        let dropoff = random_area(rng, n, j, AreaKind::Dropoff, &used);
        inst.awaiting.push(AwaitingRequest {
            pickup,
            dropoff,
            max_pickup_delay: rng.random_range(0..120) as f64,
            max_detour: rng.random_range(10..150) as f64,
            request_arrival: start_time - rng.random_range(0..60) as f64,
        });
    }
    for k in 0..onboard {
        inst.onboard.push(OnboardRequest {
            dropoff: random_area(rng, n, 100 + k, AreaKind::Dropoff, &[]),
            pickup_time: start_time - rng.random_range(0..60) as f64,
            max_detour: rng.random_range(10..200) as f64,
        });
    }
    if rng.random_bool(0.5) {
        inst.walk_speed = Some(1.0);
    }
    if rng.random_bool(0.5) {
        inst.delay_reference = DelayReference::RequestArrival;
    }
    (net, inst)
}

#[test]
fn criterion_03_rvrp_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let (mut mismatches, mut invalid, mut feasible) = (0, 0, 0);
    for _ in 0..500 {
        let (net, inst) = random_instance(&mut rng);
        let fast = solve(&net, &inst).unwrap();
        let slow = solve_bruteforce(&net, &inst).unwrap();
        mismatches += (fast != slow) as usize;
        if let Some(plan) = &fast {
            feasible += 1;
            invalid += !validate(&net, &inst, plan).is_empty() as usize;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && invalid == 0 && elapsed < C3_LIMIT;
    report(
        3,
        pass,
        &format!("500 instances, {feasible} feasible, {mismatches} mismatches, {invalid} invalid plans, {elapsed:?}"),
    );
    assert!(pass);
}

/// Line 0 - 1 - 2 - 3 with 10 s legs in both directions.
fn line() -> RoadNetwork {
    let nodes: Vec<NodeRecord> = (0..4).map(|i| NodeRecord { id: i, x: i as f64 * 100.0, y: 0.0 }).collect();
    let edges: Vec<EdgeRecord> = (0..3)
        .flat_map(|i| {
            [(i, i + 1), (i + 1, i)].map(|(from, to)| EdgeRecord { from, to, length_m: 100.0, drive_time_s: 10.0 })
        })
        .collect();
    RoadNetwork::from_records(&nodes, &edges).unwrap()
}

/// Vehicle at node 0 at t = 100; pickup reached at 120, drop-off at 130.
fn awaiting(delta: f64, detour: f64) -> RvrpInstance {
    let mut inst = RvrpInstance::new(NodeId(0), 100.0, 2);
    inst.awaiting.push(AwaitingRequest {
        pickup: Area::point(RequestId(1), AreaKind::Pickup, NodeId(2)),
        dropoff: Area::point(RequestId(1), AreaKind::Dropoff, NodeId(3)),
        max_pickup_delay: delta,
        max_detour: detour,
        request_arrival: 90.0,
    });
    inst
}

/// Passenger picked up at t = 95, dropped at node 2 at 120.
fn onboard(detour: f64) -> RvrpInstance {
    let mut inst = RvrpInstance::new(NodeId(0), 100.0, 2);
    inst.onboard.push(OnboardRequest {
        dropoff: Area::point(RequestId(2), AreaKind::Dropoff, NodeId(2)),
        pickup_time: 95.0,
        max_detour: detour,
    });
    inst
}

#[test]
fn criterion_04_rvrp_boundaries() {
    let net = line();
    let from_arrival = |delta: f64| {
        let mut inst = awaiting(delta, 100.0);
        inst.delay_reference = DelayReference::RequestArrival;
        inst
    };
    let cases: [(&str, RvrpInstance, RvrpInstance); 4] = [
        ("pickup delay", awaiting(20.0, 100.0), awaiting(19.0, 100.0)),
        ("pickup delay from arrival", from_arrival(30.0), from_arrival(29.0)),
        ("detour", awaiting(100.0, 10.0), awaiting(100.0, 9.0)),
        ("onboard detour", onboard(25.0), onboard(24.0)),
    ];
    let mut failed = Vec::new();
    for (name, at, beyond) in &cases {
        let ok = match solve(&net, at).unwrap() {
            Some(plan) => validate(&net, at, &plan).is_empty(),
            None => false,
        };
        if !ok || solve(&net, beyond).unwrap().is_some() {
            failed.push(*name);
        }
    }
    let pass = failed.is_empty();
    report(4, pass, &format!("{} boundaries, failed {failed:?}", cases.len()));
    assert!(pass);
}

fn action(v: u32, ids: &[u32], score: f64) -> ScoredAction {
    ScoredAction { vehicle: VehicleId(v), combo: c(ids), plan: RoutePlan::idle(NodeId(0), 0.0), score }
}

fn random_actions(rng: &mut ChaCha8Rng) -> (Vec<Vec<ScoredAction>>, Vec<RequestId>) {
    let n = rng.random_range(1..=6u32);
    let lists = (0..rng.random_range(1..=5u32))
        .map(|v| {
            let mut list = vec![action(v, &[], rng.random_range(-8..8) as f64 / 4.0)];
            for _ in 0..rng.random_range(0..8) {
                let mask = rng.random_range(1..1u32 << n);
                let ids: Vec<u32> = (0..n).filter(|b| mask >> b & 1 == 1).collect();
                if !list.iter().any(|a| a.combo == c(&ids)) {
                    list.push(action(v, &ids, rng.random_range(-8..40) as f64 / 4.0));
                }
            }
            list
        })
        .collect();
    (lists, (0..n).map(RequestId).collect())
}

#[test]
fn criterion_05_assignment_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let trap = vec![
        vec![action(1, &[], 0.0), action(1, &[1, 2], 2.5), action(1, &[1], 2.0)],
        vec![action(2, &[], 0.0), action(2, &[2], 1.0)],
    ];
    let mut instances = vec![(trap, vec![RequestId(1), RequestId(2)])];
    instances.extend((0..500).map(|_| random_actions(&mut rng)));
    let (mut mismatches, mut invalid) = (0, 0);
    for (acts, reqs) in &instances {
        let fast = solve_assignment(acts, reqs).unwrap();
        let slow = solve_assignment_bruteforce(acts, reqs).unwrap();
        mismatches += (fast.objective != slow.objective || fast != slow) as usize;
        invalid += validate_assignment(acts, &fast).is_err() as usize;
    }
    let trap = solve_assignment(&instances[0].0, &instances[0].1).unwrap();
    let trap_ok = trap.objective == 3.0 && trap.choices[&VehicleId(1)].combo == c(&[1]);
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && invalid == 0 && trap_ok && elapsed < C5_LIMIT;
    report(
        5,
        pass,
        &format!("501 instances, {mismatches} mismatches, {invalid} invalid, trap objective {}, {elapsed:?}", trap.objective),
    );
    assert!(pass);
}

#[test]
fn criterion_06_gradient_check() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let m = Mlp::random(&[7, 4, 1], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 600);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = m.mse_gradient(&xs, &ys).unwrap();
        let p = m.params();
        let mut probe = m.clone();
        for i in 0..p.len() {
            let mut loss_at = |x: f64| {
                let mut q = p.clone();
                q[i] = x;
                probe.set_params(&q).unwrap();
                probe.mse_gradient(&xs, &ys).unwrap().0
            };
            let fd = (loss_at(p[i] + GRAD_STEP) - loss_at(p[i] - GRAD_STEP)) / (2.0 * GRAD_STEP);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    let pass = worst < GRAD_REL_TOL;
    report(6, pass, &format!("20 nets, worst relative error {worst:.2e}"));
    assert!(pass);
}

/// Desk-scale setting shared by the simulation criteria.
fn desk_network() -> RoadNetwork {
    generate_grid(20, 20, 100.0, 5.0).unwrap()
}

fn desk_config() -> SimConfig {
    let mut c = SimConfig::new(default_params(300.0).unwrap());
    c.num_vehicles = 50;
    c.capacity = 4;
    c.horizon = 200;
    c.record_timings = false;
    c
}

const DESK_RATE: f64 = 30.0;

fn desk_stream(net: &RoadNetwork, horizon: usize, seed: u64) -> ridepool::simulator::RequestStream {
    let profile = HotspotProfile::default_for(net);
    let epoch_len = desk_config().params.epoch_len;
    gen_requests(net, DESK_RATE, horizon, epoch_len, &profile, &mut rng_stream(seed, streams::REQUESTS)).unwrap()
}

#[test]
fn criterion_07_per_epoch_dominance() {
    let net = desk_network();
    let (seeds, epochs) = ([1u64, 2], 25);
    let (mut paired, mut dominated) = (0, 0);
    let mut worst_gap = f64::INFINITY;
    for seed in seeds {
        let mut flex = desk_config();
        flex.seed = seed;
        flex.horizon = epochs;
        flex.gamma = 0.0;
        flex.training = false;
        flex.mode = Mode::Flexible;
        let mut fixed = flex.clone();
        fixed.mode = Mode::Fixed;
        let mut sim = Simulation::new(&net, flex.clone(), desk_stream(&net, epochs, seed), None).unwrap();
        for _ in 0..epochs {
            sim.ingest().unwrap();
            let state = sim.state();
            let flex_book = build_area_book(&net, state.pending.values(), Mode::Flexible, &flex.params).unwrap();
            let fixed_book = build_area_book(&net, state.pending.values(), Mode::Fixed, &fixed.params).unwrap();
            let a = decide(&net, &flex, state, &flex_book, None, &LegBoundCache::new()).unwrap();
            let b = decide(&net, &fixed, state, &fixed_book, None, &LegBoundCache::new()).unwrap();
            let gap = a.assignment.objective - b.assignment.objective;
            worst_gap = worst_gap.min(gap);
            paired += 1;
            dominated += (gap >= 0.0) as usize;
            sim.step().unwrap();
        }
    }
    let pass = paired == 50 && dominated == paired;
    report(7, pass, &format!("{dominated}/{paired} epochs flexible >= fixed, smallest gap {worst_gap}"));
    assert!(pass);
}

fn desk_plan() -> ComparePlan {
    ComparePlan {
        base: desk_config(),
        modes: vec![Mode::Fixed, Mode::Flexible],
        seeds: vec![1, 2, 3, 4, 5],
        train_seeds: vec![1000],
        train_during_eval: false,
    }
}

fn run_desk_comparison() -> (Comparison, Duration) {
    let net = desk_network();
    let plan = desk_plan();
    let start = Instant::now();
    let cmp = compare(&net, &plan, |seed| Ok(desk_stream(&net, plan.base.horizon, seed))).unwrap();
    (cmp, start.elapsed())
}

fn desk_comparison() -> &'static (Comparison, Duration) {
    static RUN: OnceLock<(Comparison, Duration)> = OnceLock::new();
    RUN.get_or_init(run_desk_comparison)
}

fn epoch_csvs(cmp: &Comparison) -> Vec<Vec<u8>> {
    cmp.runs
        .iter()
        .map(|r| {
            let mut buf = Vec::new();
            write_epoch_csv(&mut buf, &r.metrics.epochs).unwrap();
            buf
        })
        .collect()
}

#[test]
fn criterion_08_desk_scale_trend() {
    let (cmp, elapsed) = desk_comparison();
    let imp = &cmp.improvements[0];
    let (fixed, flex) = (&cmp.modes[0], &cmp.modes[1]);
    assert_eq!((imp.baseline, imp.mode), (Mode::Fixed, Mode::Flexible));
    let served = flex.mean_served >= fixed.mean_served;
    let distance = flex.mean_avg_distance_m <= fixed.mean_avg_distance_m;
    let per_seed = imp.seeds_served_ge >= C8_MIN_SEEDS && imp.seeds_distance_le >= C8_MIN_SEEDS;
    let pass = served && distance && per_seed && *elapsed < C8_LIMIT;
    report(
        8,
        pass,
        &format!(
            "served {:.1} vs {:.1} ({:+.1}%), distance per served {:.1} m vs {:.1} m ({:.1}% less), \
             seeds served {}/5 distance {}/5, {:.0} s",
            flex.mean_served,
            fixed.mean_served,
            imp.served_pct,
            flex.mean_avg_distance_m,
            fixed.mean_avg_distance_m,
            imp.avg_distance_pct,
            imp.seeds_served_ge,
            imp.seeds_distance_le,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_simulation_audits() {
    let (cmp, _) = desk_comparison();
    let conservation: usize = cmp.runs.iter().map(|r| r.metrics.audit.conservation_violations).sum();
    let total: usize = cmp.runs.iter().map(|r| r.metrics.audit.total()).sum();
    let pass = total == 0 && !cmp.runs.is_empty();
    report(9, pass, &format!("{} runs, {total} violations ({conservation} conservation)", cmp.runs.len()));
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let first = epoch_csvs(&desk_comparison().0);
    let second = epoch_csvs(&run_desk_comparison().0);
    let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    let pass = first.len() == second.len() && differing == 0;
    report(10, pass, &format!("{} epoch CSVs, {differing} differ", first.len()));
    assert!(pass);
}
