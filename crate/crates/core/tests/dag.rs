mod common;

use std::collections::HashSet;

use grabnas::dag::{
    canonical_key, canonicalize, enumerate_edge_specs, enumerate_search_space, from_edge_spec, topological_order,
    CellGraph, EdgeSpec, OpKind, N_MAX,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random valid DAG: nodes are created in topological order, then stored in
/// a shuffled order.
fn random_dag(seed: u64) -> CellGraph {
    let mut r = common::rng(seed);
    let n = r.random_range(3..=N_MAX);
    let mut nodes = vec![OpKind::Input];
    for _ in 1..n - 1 {
        nodes.push(OpKind::SEARCHABLE[r.random_range(0..5)]);
    }
    nodes.push(OpKind::Output);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((r.random_range(0..v), v));
        for u in 0..v {
            if r.random_bool(0.2) {
                edges.push((u, v));
            }
        }
    }
    for v in 1..n - 1 {
        if !edges.iter().any(|e| e.0 == v) {
            edges.push((v, r.random_range(v + 1..n)));
        }
    }
    let g = CellGraph::new(nodes, edges).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    g.permuted(&order).unwrap()
}

#[test]
fn every_enumerated_cell_is_a_valid_eight_node_dag() {
    let space = enumerate_search_space();
    assert_eq!(space.len(), 5usize.pow(6));
    for g in &space {
        g.validate().unwrap();
        assert_eq!(g.len(), 8);
        let order = topological_order(g).unwrap();
        assert_eq!(g.nodes()[order[0]], OpKind::Input);
        assert_eq!(g.nodes()[*order.last().unwrap()], OpKind::Output);
        for &(s, t) in g.edges() {
            let pos = |v| order.iter().position(|&x| x == v).unwrap();
            assert!(pos(s) < pos(t));
        }
    }
}

#[test]
fn enumerated_keys_are_pairwise_distinct() {
    let keys: HashSet<String> = enumerate_search_space().iter().map(|g| canonical_key(g).unwrap()).collect();
    assert_eq!(keys.len(), 15625);
}

#[test]
fn distinct_specs_map_to_distinct_keys() {
    let specs = enumerate_edge_specs();
    let unique: HashSet<EdgeSpec> = specs.iter().copied().collect();
    assert_eq!(unique.len(), 15625);
    let keys: HashSet<String> = specs.iter().map(|s| canonical_key(&from_edge_spec(s)).unwrap()).collect();
    assert_eq!(keys.len(), 15625);
}

#[test]
fn first_enumerated_cell_uses_the_first_operation_everywhere() {
    let first = &enumerate_search_space()[0];
    let spec = EdgeSpec::new([OpKind::SEARCHABLE[0]; 6]).unwrap();
    assert_eq!(first, &from_edge_spec(&spec));
}

#[test]
fn topological_order_is_repeatable() {
    for seed in 0..50 {
        let g = random_dag(seed);
        assert_eq!(topological_order(&g).unwrap(), topological_order(&g).unwrap());
    }
}

#[test]
fn cycle_is_rejected() {
    let g = CellGraph::from_parts_unchecked(
        vec![OpKind::Input, OpKind::Conv3x3, OpKind::Skip, OpKind::Output],
        vec![(0, 1), (1, 2), (2, 1), (2, 3)],
    );
    assert!(topological_order(&g).is_err());
    assert!(g.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn key_ignores_storage_order_of_enumerated_cells(rank in 0usize..15625, seed in any::<u64>()) {
        let g = EdgeSpec::from_rank(rank).to_graph();
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.shuffle(&mut common::rng(seed));
        let p = g.permuted(&order).unwrap();
        prop_assert_eq!(canonical_key(&g).unwrap(), canonical_key(&p).unwrap());
        prop_assert_eq!(canonicalize(&g).unwrap(), canonicalize(&p).unwrap());
    }

    #[test]
    fn key_ignores_storage_order_of_general_dags(seed in any::<u64>(), shuffle in any::<u64>()) {
        let g = random_dag(seed);
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.shuffle(&mut common::rng(shuffle));
        let p = g.permuted(&order).unwrap();
        prop_assert_eq!(canonical_key(&g).unwrap(), canonical_key(&p).unwrap());
    }

    #[test]
    fn canonical_form_is_valid_and_idempotent(seed in any::<u64>()) {
        let g = random_dag(seed);
        let c = canonicalize(&g).unwrap();
        c.validate().unwrap();
        prop_assert_eq!(canonicalize(&c).unwrap(), c.clone());
        // In canonical storage every edge points forward.
        prop_assert!(c.edges().iter().all(|&(s, t)| s < t));
    }

    #[test]
    fn general_notation_round_trips(seed in any::<u64>()) {
        let g = random_dag(seed);
        prop_assert_eq!(CellGraph::parse(&g.to_notation()).unwrap(), g);
    }

    #[test]
    fn cell_notation_round_trips(rank in 0usize..15625) {
        let spec = EdgeSpec::from_rank(rank);
        let g = spec.to_graph();
        let text = EdgeSpec::notation(&g);
        prop_assert!(text.starts_with('|'));
        prop_assert_eq!(CellGraph::parse(&text).unwrap(), g.clone());
        prop_assert_eq!(EdgeSpec::from_graph(&g), Some(spec));
        prop_assert_eq!(spec.rank(), rank);
    }
}

#[test]
fn fully_symmetric_graph_canonicalizes_quickly() {
    // Eight identical parallel branches: every ordering ties.
    let mut nodes = vec![OpKind::Input];
    nodes.extend([OpKind::Skip; 8]);
    nodes.push(OpKind::Output);
    let edges = (1..9).flat_map(|v| [(0, v), (v, 9)]).collect();
    let g = CellGraph::new(nodes, edges).unwrap();
    let start = std::time::Instant::now();
    let key = canonical_key(&g).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    let mut order: Vec<usize> = (0..10).collect();
    order.reverse();
    assert_eq!(canonical_key(&g.permuted(&order).unwrap()).unwrap(), key);
}
