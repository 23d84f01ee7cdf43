mod common;

use std::collections::{BTreeSet, HashMap, HashSet};

use common::{
    brute_closure, brute_replication_factor, expanded, partition_fixtures, path_graph, random_graph,
};
use kgdist::graph::{generate_local, KnowledgeGraph, Triplet};
use kgdist::partition::{
    neighborhood_expand, partition, partition_stats, read_partitions, write_partitions,
    PartitionerKind, DEFAULT_IMBALANCE,
};
use proptest::prelude::*;

const KINDS: [PartitionerKind; 2] = [PartitionerKind::VertexCut, PartitionerKind::Random];

#[test]
fn every_core_endpoint_closure_is_inside_its_partition() {
    for (name, g) in partition_fixtures() {
        for kind in KINDS {
            for parts in [2, 4, 8] {
                for hops in [1, 2] {
                    let ps = expanded(&g, kind, parts, hops, 3);
                    for p in &ps.partitions {
                        let edges: HashSet<Triplet> =
                            p.core_edges.iter().chain(&p.support_edges).copied().collect();
                        let vertices: HashSet<u32> = p.local_to_global().iter().copied().collect();
                        let endpoints: BTreeSet<u32> =
                            p.core_edges.iter().flat_map(|t| [t.head, t.tail]).collect();
                        for &v in &endpoints {
                            let (cv, ce) = brute_closure(&g, v, hops);
                            let ctx = format!("{name} {kind} P={parts} hops={hops} part {} vertex {v}", p.id);
                            assert!(cv.iter().all(|x| vertices.contains(x)), "{ctx}: missing vertex");
                            assert!(ce.iter().all(|e| edges.contains(e)), "{ctx}: missing edge");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn support_edges_are_exactly_the_closure_surplus() {
    for (name, g) in partition_fixtures() {
        let ps = expanded(&g, PartitionerKind::VertexCut, 4, 2, 0);
        for p in &ps.partitions {
            let mut want = BTreeSet::new();
            for t in &p.core_edges {
                for v in [t.head, t.tail] {
                    want.extend(brute_closure(&g, v, 2).1);
                }
            }
            for t in &p.core_edges {
                want.remove(t);
            }
            let got: BTreeSet<Triplet> = p.support_edges.iter().copied().collect();
            assert_eq!(got, want, "{name} part {}", p.id);
        }
    }
}

#[test]
fn core_edges_are_a_disjoint_cover() {
    for (name, g) in partition_fixtures() {
        for kind in KINDS {
            for parts in [1, 2, 4, 8] {
                let ps = partition(&g, kind, parts, 11).unwrap();
                let mut seen: HashMap<Triplet, usize> = HashMap::new();
                for p in &ps.partitions {
                    assert!(p.support_edges.is_empty());
                    for t in &p.core_edges {
                        assert!(seen.insert(*t, p.id).is_none(), "{name}: {t} in two partitions");
                    }
                }
                assert_eq!(seen.len(), g.edges().len(), "{name} {kind} P={parts}");
            }
        }
    }
}

#[test]
fn vertex_cut_respects_balance_cap() {
    for (name, g) in partition_fixtures() {
        for parts in [2, 4, 8] {
            let m = g.edges().len();
            let cap = m
                .div_ceil(parts)
                .max(((1.0 + DEFAULT_IMBALANCE) * m as f64 / parts as f64).floor() as usize);
            let ps = partition(&g, PartitionerKind::VertexCut, parts, 5).unwrap();
            for p in &ps.partitions {
                assert!(p.core_edges.len() <= cap, "{name} P={parts}: {} > {cap}", p.core_edges.len());
            }
        }
    }
}

#[test]
fn replication_factor_matches_brute_force_exactly() {
    for (name, g) in partition_fixtures() {
        for kind in KINDS {
            for parts in [1, 2, 4, 8] {
                for hops in [0, 1, 2] {
                    let ps = expanded(&g, kind, parts, hops, 2);
                    let rf = ps.replication_factor().unwrap();
                    assert_eq!(rf, brute_replication_factor(&ps), "{name} {kind} P={parts} hops={hops}");
                }
            }
        }
    }
}

#[test]
fn replication_factor_hand_values() {
    // every vertex touches an edge, so a single partition gives exactly 1
    let g = path_graph(7);
    let ps = partition(&g, PartitionerKind::VertexCut, 1, 0).unwrap();
    assert_eq!(ps.replication_factor().unwrap(), 1.0);
    // two partitions that each cover every vertex
    let ps = expanded(&g, PartitionerKind::VertexCut, 2, 6, 0);
    assert_eq!(ps.replication_factor().unwrap(), 2.0);
    // isolated vertices count in the denominator only
    let g = KnowledgeGraph::new(4, 1, vec![Triplet::new(0, 0, 1)]).unwrap();
    let ps = partition(&g, PartitionerKind::Random, 1, 0).unwrap();
    assert_eq!(ps.replication_factor().unwrap(), 0.5);
}

#[test]
fn path_of_six_edges_cuts_once() {
    let g = path_graph(7);
    for seed in 0..10 {
        let ps = partition(&g, PartitionerKind::VertexCut, 2, seed).unwrap();
        assert!(ps.partitions.iter().all(|p| p.core_edges.len() == 3), "seed {seed}");
        let replicated: usize = ps.partitions[0].replicated_vertices().len();
        assert_eq!(replicated, 1, "seed {seed}");
    }
}

#[test]
fn zero_hops_is_identity() {
    let g = random_graph(9, 30, 3);
    let ps = partition(&g, PartitionerKind::VertexCut, 3, 0).unwrap();
    let ex = neighborhood_expand(&ps, &g, 0).unwrap();
    for (a, b) in ps.partitions.iter().zip(&ex.partitions) {
        assert_eq!(a.core_edges, b.core_edges);
        assert_eq!(a.support_edges, b.support_edges);
        assert_eq!(a.local_to_global(), b.local_to_global());
    }
}

#[test]
fn single_partition_stats() {
    let g = random_graph(4, 30, 3);
    let ps = expanded(&g, PartitionerKind::VertexCut, 1, 2, 0);
    let s = partition_stats(&ps).unwrap();
    assert_eq!(s.total_edges.mean, g.edges().len() as f64);
    assert_eq!(s.total_edges.std, 0.0);
}

#[test]
fn stats_totals_match_recount() {
    let (g, _) = kgdist::graph::generate_synthetic(1000, 4, 4.0, 3).unwrap();
    let ps = expanded(&g, PartitionerKind::VertexCut, 4, 2, 0);
    let s = partition_stats(&ps).unwrap();
    for (row, p) in s.rows.iter().zip(&ps.partitions) {
        let mut recount = BTreeSet::new();
        for t in &p.core_edges {
            for v in [t.head, t.tail] {
                recount.extend(brute_closure(&g, v, 2).1);
            }
        }
        recount.extend(p.core_edges.iter().copied());
        assert_eq!(row.total_edges, recount.len());
    }
}

#[test]
fn vertex_cut_replicates_less_than_random() {
    let (g, _) = generate_local(20_000, 5, 2.0, 1).unwrap();
    for parts in [2, 4, 8] {
        let vc = expanded(&g, PartitionerKind::VertexCut, parts, 2, 0).replication_factor().unwrap();
        let rnd = expanded(&g, PartitionerKind::Random, parts, 2, 0).replication_factor().unwrap();
        assert!(rnd > vc, "P={parts}: random {rnd} vs vertex-cut {vc}");
    }
}

#[test]
fn partition_files_round_trip() {
    let g = random_graph(5, 30, 3);
    let ps = expanded(&g, PartitionerKind::VertexCut, 3, 2, 4);
    let dir = tempfile::tempdir().unwrap();
    write_partitions(&ps, dir.path()).unwrap();
    assert_eq!(read_partitions(dir.path()).unwrap(), ps);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rf_is_monotone_in_hops(seed in 0u64..10_000, kind in 0usize..2) {
        let g = random_graph(seed, 40, 3);
        let kind = KINDS[kind];
        let mut prev_hops = 0.0;
        for hops in 0..=3 {
            let rf = expanded(&g, kind, 2, hops, seed).replication_factor().unwrap();
            prop_assert!(rf >= prev_hops);
            prev_hops = rf;
        }
        prop_assert!(prev_hops <= 2.0 + 1e-12);
    }

    #[test]
    fn expansion_is_idempotent(seed in 0u64..10_000) {
        let g = random_graph(seed, 40, 3);
        let once = expanded(&g, PartitionerKind::VertexCut, 3, 2, seed);
        let twice = neighborhood_expand(&once, &g, 2).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn roles_are_consistent(seed in 0u64..10_000, parts in 2usize..6) {
        let g = random_graph(seed, 40, 3);
        let ps = expanded(&g, PartitionerKind::VertexCut, parts, 1, seed);
        let mut owners: HashMap<u32, usize> = HashMap::new();
        for p in &ps.partitions {
            let endpoints: BTreeSet<u32> = p.core_edges.iter().flat_map(|t| [t.head, t.tail]).collect();
            for v in endpoints {
                *owners.entry(v).or_default() += 1;
            }
        }
        for p in &ps.partitions {
            for &v in p.replicated_vertices() {
                prop_assert!(owners[&v] > 1);
            }
            for &v in p.core_vertices() {
                prop_assert_eq!(owners[&v], 1);
            }
            for &v in p.support_vertices() {
                prop_assert!(!p.core_edges.iter().any(|t| t.head == v || t.tail == v));
            }
        }
    }
}
