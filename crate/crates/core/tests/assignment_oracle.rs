use proptest::prelude::*;

use ridepool::assignment::{solve_assignment, solve_assignment_bruteforce, validate_assignment, ScoredAction};
use ridepool::combos::Combo;
use ridepool::model::{RequestId, VehicleId};
use ridepool::network::NodeId;
use ridepool::rvrp::RoutePlan;

/// Per vehicle: (request bitmask, score in quarters) actions besides the empty one.
type Raw = Vec<(i32, Vec<(u8, i32)>)>;

fn raw(max_req: u32) -> impl Strategy<Value = (u32, Raw)> {
    (1..=max_req).prop_flat_map(|n| {
        let mask = 1u8..(1u8 << n);
        (
            Just(n),
            prop::collection::vec((-8i32..8, prop::collection::vec((mask, -8i32..40), 0..8)), 1..=5),
        )
    })
}

fn build(raw: &Raw, scale: f64) -> Vec<Vec<ScoredAction>> {
    raw.iter()
        .enumerate()
        .map(|(v, (empty, acts))| {
            let mk = |mask: u8, q: i32| ScoredAction {
                vehicle: VehicleId(v as u32 * 3 + 1),
                combo: Combo::new((0..8).filter(|b| mask >> b & 1 == 1).map(RequestId).collect()),
                plan: RoutePlan::idle(NodeId(0), 0.0),
                score: q as f64 / 4.0 * scale,
            };
            let mut list = vec![mk(0, *empty)];
            for &(m, q) in acts {
                if !list.iter().any(|a: &ScoredAction| a.combo == mk(m, q).combo) {
                    list.push(mk(m, q));
                }
            }
            list
        })
        // Vehicle ordering is the solver's job.
        .rev()
        .collect()
}

fn requests(n: u32) -> Vec<RequestId> {
    (0..n).map(RequestId).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn matches_bruteforce((n, r) in raw(6)) {
        let acts = build(&r, 1.0);
        let reqs = requests(n);
        let fast = solve_assignment(&acts, &reqs).unwrap();
        let slow = solve_assignment_bruteforce(&acts, &reqs).unwrap();
        prop_assert_eq!(fast.objective, slow.objective);
        prop_assert_eq!(&fast, &slow);
        prop_assert!(fast.proven_optimal);
        prop_assert!(validate_assignment(&acts, &fast).is_ok());
    }

    #[test]
    fn enlarging_an_action_list_never_hurts((n, r) in raw(6), extra in (0usize..5, 1u8..64, -8i32..40)) {
        let reqs = requests(n);
        let base = solve_assignment(&build(&r, 1.0), &reqs).unwrap();
        let mut bigger = r.clone();
        let v = extra.0 % bigger.len();
        bigger[v].1.push(((extra.1 & ((1u8 << n) - 1)).max(1), extra.2));
        let after = solve_assignment(&build(&bigger, 1.0), &reqs).unwrap();
        prop_assert!(after.objective >= base.objective);
    }

    #[test]
    fn positive_scaling_keeps_choice((n, r) in raw(6), k in prop::sample::select(vec![0.25, 0.5, 2.0, 3.0, 8.0])) {
        let reqs = requests(n);
        let a = solve_assignment(&build(&r, 1.0), &reqs).unwrap();
        let b = solve_assignment(&build(&r, k), &reqs).unwrap();
        let pick = |x: &ridepool::assignment::JointAssignment| {
            x.choices.iter().map(|(v, a)| (*v, a.combo.clone())).collect::<Vec<_>>()
        };
        prop_assert_eq!(pick(&a), pick(&b));
    }
}

/// Many equal-score choices: the tie rule must still agree with enumeration.
#[test]
fn heavy_ties_match_bruteforce() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let n = rng.random_range(2..=6u32);
        let r: Raw = (0..rng.random_range(2..=5))
            .map(|_| {
                let acts = (0..rng.random_range(1..8))
                    .map(|_| {
                        let m: u8 = rng.random_range(1..(1u8 << n));
                        (m, 4 * m.count_ones() as i32)
                    })
                    .collect();
                (0, acts)
            })
            .collect();
        let acts = build(&r, 1.0);
        let reqs = requests(n);
        assert_eq!(
            solve_assignment(&acts, &reqs).unwrap(),
            solve_assignment_bruteforce(&acts, &reqs).unwrap()
        );
    }
}
