//! Feasible request combinations per vehicle.
//!
//! Combinations are grown one level at a time: singletons, then pairs, and so
//! on up to the vehicle's free capacity. A combination is only extended with
//! requests whose id exceeds its current maximum, so every subset is visited
//! at most once. Infeasible combinations are kept in an [`InfeasibleStore`]
//! of inclusion-minimal sets; any candidate containing one of them is skipped
//! without consulting the feasibility oracle. This relies on the oracle being
//! monotone: a superset of an infeasible combination is infeasible.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RequestId;

/// Sorted, duplicate-free set of request ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Combo(Vec<RequestId>);

impl Combo {
    pub fn new(mut ids: Vec<RequestId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[RequestId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn max_id(&self) -> Option<RequestId> {
        self.0.last().copied()
    }

    /// True if every id of `self` is in `other`.
    pub fn is_subset_of(&self, other: &Combo) -> bool {
        // Both sorted: linear merge.
        let mut it = other.0.iter();
        'outer: for id in &self.0 {
            for o in it.by_ref() {
                match o.cmp(id) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => continue 'outer,
                    std::cmp::Ordering::Greater => return false,
                }
            }
            return false;
        }
        true
    }

    pub fn with(&self, id: RequestId) -> Combo {
        let mut ids = self.0.clone();
        match ids.binary_search(&id) {
            Ok(_) => {}
            Err(pos) => ids.insert(pos, id),
        }
        Combo(ids)
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "]")
    }
}

impl FromIterator<RequestId> for Combo {
    fn from_iter<T: IntoIterator<Item = RequestId>>(iter: T) -> Self {
        Combo::new(iter.into_iter().collect())
    }
}

/// Inclusion-minimal infeasible combinations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InfeasibleStore {
    sets: Vec<Combo>,
}

impl InfeasibleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sets(&self) -> &[Combo] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// True iff some stored set is a subset of `combo`.
    pub fn blocks(&self, combo: &Combo) -> bool {
        self.sets.iter().any(|s| s.is_subset_of(combo))
    }

    /// Adds `combo` unless already implied; drops stored supersets of it.
    pub fn insert_minimal(&mut self, combo: Combo) {
        if self.blocks(&combo) {
            return;
        }
        self.sets.retain(|s| !combo.is_subset_of(s));
        self.sets.push(combo);
    }
}

pub fn blocked_by_store(store: &InfeasibleStore, combo: &Combo) -> bool {
    store.blocks(combo)
}

pub fn insert_minimal(mut store: InfeasibleStore, combo: Combo) -> InfeasibleStore {
    store.insert_minimal(combo);
    store
}

#[derive(Debug, Error)]
#[error("feasibility oracle failed on {combo}: {source}")]
pub struct ComboError<E: std::error::Error + 'static> {
    pub combo: Combo,
    #[source]
    pub source: E,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComboStats {
    pub oracle_calls: usize,
    pub infeasible: usize,
    pub pruned_by_store: usize,
}

/// Feasible combinations with the plan the oracle returned for each.
#[derive(Clone, Debug)]
pub struct FeasibleCombos<P> {
    pub combos: BTreeMap<Combo, P>,
    pub store: InfeasibleStore,
    pub stats: ComboStats,
}

/// Every combination of at most `capacity` requests that the oracle accepts,
/// plus the empty combination mapped to `empty_plan`.
///
/// `requests` may be in any order and may contain duplicates; the oracle is
/// never called on the empty combination, on a combination larger than
/// `capacity`, or on one blocked by a known infeasible subset.
pub fn generate_feasible_combos<P, E, F>(
    capacity: usize,
    requests: &[RequestId],
    empty_plan: P,
    mut oracle: F,
) -> Result<FeasibleCombos<P>, ComboError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(&Combo) -> Result<Option<P>, E>,
{
    let mut ids = requests.to_vec();
    ids.sort_unstable();
    ids.dedup();

    let mut combos = BTreeMap::new();
    combos.insert(Combo::empty(), empty_plan);
    let mut store = InfeasibleStore::new();
    let mut stats = ComboStats::default();

    let mut frontier = vec![Combo::empty()];
    for _level in 1..=capacity {
        let mut next = Vec::new();
        for parent in &frontier {
            let start = match parent.max_id() {
                Some(m) => ids.partition_point(|&x| x <= m),
                None => 0,
            };
            for &id in &ids[start..] {
                let cand = parent.with(id);
                if store.blocks(&cand) {
                    stats.pruned_by_store += 1;
                    continue;
                }
                stats.oracle_calls += 1;
                match oracle(&cand) {
                    Ok(Some(plan)) => {
                        combos.insert(cand.clone(), plan);
                        next.push(cand);
                    }
                    Ok(None) => {
                        stats.infeasible += 1;
                        store.insert_minimal(cand);
                    }
                    Err(source) => return Err(ComboError { combo: cand, source }),
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(FeasibleCombos { combos, store, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::convert::Infallible;

    fn c(ids: &[u32]) -> Combo {
        Combo::new(ids.iter().map(|&i| RequestId(i)).collect())
    }

    fn r(ids: &[u32]) -> Vec<RequestId> {
        ids.iter().map(|&i| RequestId(i)).collect()
    }

    #[test]
    fn four_request_walkthrough() {
        let bad = [c(&[3]), c(&[1, 2])];
        let mut seen = Vec::new();
        let out = generate_feasible_combos(4, &r(&[1, 2, 3, 4]), (), |combo| {
            seen.push(combo.clone());
            Ok::<_, Infallible>(if bad.iter().any(|b| b.is_subset_of(combo)) { None } else { Some(()) })
        })
        .unwrap();
        let got: Vec<Combo> = out.combos.keys().cloned().collect();
        let mut want = vec![c(&[]), c(&[1]), c(&[2]), c(&[4]), c(&[1, 4]), c(&[2, 4])];
        want.sort();
        assert_eq!(got, want);
        assert!(!seen.contains(&c(&[1, 2, 4])));
        assert_eq!(out.store.sets(), &[c(&[3]), c(&[1, 2])]);
    }

    #[test]
    fn all_singletons_infeasible() {
        let out = generate_feasible_combos(3, &r(&[1, 2, 3]), (), |_| Ok::<Option<()>, Infallible>(None)).unwrap();
        assert_eq!(out.combos.keys().cloned().collect::<Vec<_>>(), vec![Combo::empty()]);
        assert_eq!(out.stats.oracle_calls, 3);
    }

    #[test]
    fn capacity_zero_yields_empty_only() {
        let out = generate_feasible_combos(0, &r(&[1, 2]), 7, |_| Ok::<_, Infallible>(Some(1))).unwrap();
        assert_eq!(out.combos.len(), 1);
        assert_eq!(out.combos[&Combo::empty()], 7);
    }

    #[derive(Debug, thiserror::Error)]
    #[error("boom")]
    struct Boom;

    #[test]
    fn oracle_error_carries_combo() {
        let err = generate_feasible_combos(2, &r(&[1, 2]), (), |combo| {
            if combo.len() == 2 { Err(Boom) } else { Ok(Some(())) }
        })
        .unwrap_err();
        assert_eq!(err.combo, c(&[1, 2]));
    }

    #[test]
    fn store_examples() {
        let s = insert_minimal(InfeasibleStore::new(), c(&[1, 2]));
        assert!(blocked_by_store(&s, &c(&[1, 2, 4])));
        assert!(!blocked_by_store(&InfeasibleStore::new(), &c(&[1, 2])));
        let s3 = insert_minimal(InfeasibleStore::new(), c(&[3]));
        assert!(!blocked_by_store(&s3, &c(&[1, 4])));

        let s = insert_minimal(insert_minimal(InfeasibleStore::new(), c(&[1, 2])), c(&[1, 2, 4]));
        assert_eq!(s.sets(), &[c(&[1, 2])]);
        let s = insert_minimal(insert_minimal(InfeasibleStore::new(), c(&[1, 2, 4])), c(&[1, 2]));
        assert_eq!(s.sets(), &[c(&[1, 2])]);
        let s = insert_minimal(InfeasibleStore::new(), c(&[5]));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn subset_check() {
        assert!(c(&[]).is_subset_of(&c(&[1])));
        assert!(c(&[1, 3]).is_subset_of(&c(&[1, 2, 3])));
        assert!(!c(&[1, 4]).is_subset_of(&c(&[1, 2, 3])));
        assert!(!c(&[0]).is_subset_of(&c(&[1, 2, 3])));
    }

    /// Monotone oracle defined by a set of minimal "bad" subsets.
    fn brute_force(n: u32, cap: usize, bad: &[Combo]) -> Vec<Combo> {
        let mut out = Vec::new();
        for mask in 0u32..(1 << n) {
            let combo: Combo = (0..n).filter(|i| mask & (1 << i) != 0).map(RequestId).collect();
            if combo.len() <= cap && !bad.iter().any(|b| b.is_subset_of(&combo)) {
                out.push(combo);
            }
        }
        out.sort();
        out
    }

    fn bad_sets() -> impl Strategy<Value = (u32, usize, Vec<Combo>)> {
        (1u32..=10, 0usize..=5).prop_flat_map(|(n, cap)| {
            let set = proptest::collection::vec(0..n, 1..4).prop_map(|v| v.into_iter().map(RequestId).collect::<Combo>());
            (Just(n), Just(cap), proptest::collection::vec(set, 0..6))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((n, cap, bad) in bad_sets()) {
            let ids: Vec<RequestId> = (0..n).map(RequestId).collect();
            let mut store_hits = 0;
            let mut probe = InfeasibleStore::new();
            let out = generate_feasible_combos(cap, &ids, (), |combo| {
                if probe.blocks(combo) { store_hits += 1; }
                let ok = !bad.iter().any(|b| b.is_subset_of(combo));
                if !ok { probe.insert_minimal(combo.clone()); }
                Ok::<_, Infallible>(ok.then_some(()))
            }).unwrap();
            prop_assert_eq!(store_hits, 0);
            let got: Vec<Combo> = out.combos.keys().cloned().collect();
            prop_assert_eq!(&got, &brute_force(n, cap, &bad));
            for combo in &got {
                prop_assert!(combo.len() <= cap);
                for &id in combo.ids() {
                    let sub: Combo = combo.ids().iter().copied().filter(|&x| x != id).collect();
                    prop_assert!(out.combos.contains_key(&sub));
                }
            }
            for (i, a) in out.store.sets().iter().enumerate() {
                for (j, b) in out.store.sets().iter().enumerate() {
                    prop_assert!(i == j || !a.is_subset_of(b));
                }
            }
        }
    }
}
