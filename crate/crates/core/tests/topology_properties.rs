//! Structural invariants of generated rings and complete graphs.

use std::collections::BTreeSet;

use conformity_core::{build_topology, validate, TopologySpec};
use proptest::prelude::*;

fn offsets(n: usize, m: usize) -> Vec<BTreeSet<usize>> {
    let t = build_topology(&TopologySpec::ring(m, n)).unwrap();
    (0..n)
        .map(|i| t.in_neighbors(i).iter().map(|&j| (j + n - i) % n).collect())
        .collect()
}

proptest! {
    #[test]
    fn every_node_hears_exactly_m_peers((n, m) in (3usize..=15).prop_flat_map(|n| (Just(n), 2..n))) {
        let t = build_topology(&TopologySpec::ring(m, n)).unwrap();
        prop_assert!(validate(&t).is_empty());
        for i in 0..n {
            let inn = t.in_neighbors(i);
            prop_assert_eq!(inn.len(), m);
            prop_assert!(!inn.contains(&i));
            prop_assert_eq!(inn.iter().collect::<BTreeSet<_>>().len(), m);
        }
        // Every node uses the same offsets.
        let offs = offsets(n, m);
        prop_assert!(offs.iter().all(|o| o == &offs[0]));
    }

    #[test]
    fn odd_degree_has_one_unpaired_offset((n, m) in (4usize..=15).prop_flat_map(|n| (Just(n), 2..n - 1))) {
        let offs = &offsets(n, m)[0];
        let unpaired = offs.iter().filter(|&&d| !offs.contains(&(n - d))).count();
        // Offsets d and n - d coincide when 2d = n, which only pairs with itself.
        let expected = if m % 2 == 1 { 1 } else { 0 };
        prop_assert_eq!(unpaired, expected, "n={} m={} offsets={:?}", n, m, offs);
    }

    #[test]
    fn complete_graph_is_invariant_under_relabeling(
        perm in (3usize..=12).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    ) {
        let n = perm.len();
        let t = build_topology(&TopologySpec::complete(n)).unwrap();
        let edges = t.edge_set();
        let relabeled: BTreeSet<_> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        prop_assert_eq!(edges.len(), n * (n - 1));
        prop_assert_eq!(relabeled, edges);
    }
}

#[test]
fn degree_two_is_predecessor_and_successor() {
    for n in 3..=15 {
        let t = build_topology(&TopologySpec::ring(2, n)).unwrap();
        for i in 0..n {
            let got: BTreeSet<_> = t.in_neighbors(i).iter().copied().collect();
            assert_eq!(got, BTreeSet::from([(i + 1) % n, (i + n - 1) % n]), "n={n} i={i}");
        }
    }
}

#[test]
fn full_degree_ring_equals_complete() {
    for n in 3..=12 {
        let ring = build_topology(&TopologySpec::ring(n - 1, n)).unwrap();
        let complete = build_topology(&TopologySpec::complete(n)).unwrap();
        assert_eq!(ring.edge_set(), complete.edge_set());
    }
}

#[test]
fn degree_bounds_are_enforced() {
    assert!(build_topology(&TopologySpec::ring(1, 7)).is_err());
    assert!(build_topology(&TopologySpec::ring(7, 7)).is_err());
}
