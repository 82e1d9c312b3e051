//! Simple undirected graphs on 1-based nodes, node-deletion subgraphs, and
//! the weighted-graph voting used to combine per-site structure estimates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected graph; edges stored canonically as (j, k) with j < k, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

fn canon(j: usize, k: usize) -> (usize, usize) {
    if j < k {
        (j, k)
    } else {
        (k, j)
    }
}

impl Graph {
    /// Empty graph on `n_nodes` nodes.
    pub fn new(n_nodes: usize) -> Self {
        Graph {
            n_nodes,
            edges: BTreeSet::new(),
        }
    }

    pub fn with_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph::new(n_nodes);
        for &(j, k) in edges {
            g.add_edge(j, k)?;
        }
        Ok(g)
    }

    /// Complete graph K_n.
    pub fn complete(n_nodes: usize) -> Self {
        let mut g = Graph::new(n_nodes);
        for j in 1..=n_nodes {
            for k in (j + 1)..=n_nodes {
                g.edges.insert((j, k));
            }
        }
        g
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v == 0 || v > self.n_nodes {
            return Err(Error::InvalidNode {
                node: v,
                n_nodes: self.n_nodes,
            });
        }
        Ok(())
    }

    pub fn add_edge(&mut self, j: usize, k: usize) -> Result<()> {
        self.check_node(j)?;
        self.check_node(k)?;
        if j == k {
            return Err(Error::DegenerateInput(format!("self-loop at node {j}")));
        }
        self.edges.insert(canon(j, k));
        Ok(())
    }

    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        self.edges.contains(&canon(j, k))
    }

    /// Canonical (j < k) edges in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().cloned()
    }

    /// Delete node `i` and its incident edges; remaining nodes are
    /// relabelled order-preservingly onto 1..n-1.
    pub fn remove_node(&self, i: usize) -> Result<Graph> {
        self.check_node(i)?;
        let relabel = |v: usize| if v < i { v } else { v - 1 };
        let edges = self
            .edges
            .iter()
            .filter(|&&(j, k)| j != i && k != i)
            .map(|&(j, k)| (relabel(j), relabel(k)))
            .collect();
        Ok(Graph {
            n_nodes: self.n_nodes - 1,
            edges,
        })
    }
}

/// JSON form: `{"d": n, "edges": [[j, k], ...]}`.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    d: usize,
    edges: Vec<[usize; 2]>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr {
            d: self.n_nodes,
            edges: self.edges.iter().map(|&(j, k)| [j, k]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GraphRepr::deserialize(d)?;
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|&[j, k]| (j, k)).collect();
        Graph::with_edges(r.d, &edges).map_err(serde::de::Error::custom)
    }
}

/// Graph with per-edge weights in [0, 1] (vote fractions).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n_nodes: usize,
    weights: BTreeMap<(usize, usize), f64>,
}

impl WeightedGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights.get(&canon(j, k)).copied().unwrap_or(0.0)
    }

    /// Edges with strictly positive weight, in canonical order.
    pub fn weighted_edges(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.weights.iter().map(|(&e, &w)| (e, w))
    }
}

#[derive(Serialize, Deserialize)]
struct WeightedEdgeRepr {
    edge: [usize; 2],
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightedGraphRepr {
    d: usize,
    edges: Vec<WeightedEdgeRepr>,
}

impl Serialize for WeightedGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WeightedGraphRepr {
            d: self.n_nodes,
            edges: self
                .weights
                .iter()
                .map(|(&(j, k), &w)| WeightedEdgeRepr {
                    edge: [j, k],
                    weight: w,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightedGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = WeightedGraphRepr::deserialize(d)?;
        let mut weights = BTreeMap::new();
        for e in r.edges {
            let (j, k) = canon(e.edge[0], e.edge[1]);
            if j == 0 || k > r.d || j == k || !(0.0..=1.0).contains(&e.weight) {
                return Err(serde::de::Error::custom(format!(
                    "invalid weighted edge {:?} = {}",
                    e.edge, e.weight
                )));
            }
            weights.insert((j, k), e.weight);
        }
        Ok(WeightedGraph {
            n_nodes: r.d,
            weights,
        })
    }
}

/// Combine node-deletion subgraphs into a weighted graph over all d nodes.
///
/// `subgraphs[i]` pairs the removed node (1-based) with the inferred graph
/// on the remaining d-1 nodes (relabelled). An edge {j, k} can only be seen
/// by the d-2 subgraphs whose removed node is neither j nor k, so its weight
/// is (occurrence count) / (d - 2).
pub fn combine_subgraphs(d: usize, subgraphs: &[(usize, Graph)]) -> Result<WeightedGraph> {
    if d < 3 {
        return Err(Error::DegenerateInput(
            "need at least 3 nodes to vote on edges".into(),
        ));
    }
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(removed, ref sub) in subgraphs {
        if removed == 0 || removed > d {
            return Err(Error::InvalidNode {
                node: removed,
                n_nodes: d,
            });
        }
        if sub.n_nodes() != d - 1 {
            return Err(Error::DimensionMismatch(format!(
                "subgraph for removed node {removed} has {} nodes, expected {}",
                sub.n_nodes(),
                d - 1
            )));
        }
        // Undo the order-preserving relabelling.
        let unlabel = |v: usize| if v < removed { v } else { v + 1 };
        for (j, k) in sub.edges() {
            *counts.entry(canon(unlabel(j), unlabel(k))).or_insert(0) += 1;
        }
    }
    let denom = (d - 2) as f64;
    let weights = counts
        .into_iter()
        .map(|(e, c)| (e, (c as f64 / denom).min(1.0)))
        .collect();
    Ok(WeightedGraph {
        n_nodes: d,
        weights,
    })
}

/// Keep edges whose weight is at least `threshold` (inclusive: an edge seen
/// exactly half the time survives the default 0.5).
pub fn prune_majority(wg: &WeightedGraph, threshold: f64) -> Graph {
    let mut g = Graph::new(wg.n_nodes);
    for ((j, k), w) in wg.weighted_edges() {
        if w >= threshold {
            g.edges.insert((j, k));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The 5-node demonstration graph used throughout the synthetic studies.
    fn demo5() -> Graph {
        Graph::with_edges(5, &[(1, 2), (1, 3), (2, 3), (3, 4), (3, 5), (4, 5)]).unwrap()
    }

    #[test]
    fn remove_node_relabels() {
        let g = demo5().remove_node(3).unwrap();
        assert_eq!(g.n_nodes(), 4);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(1, 2), (3, 4)]);
    }

    #[test]
    fn remove_node_trivial_cases() {
        let empty = Graph::new(6).remove_node(2).unwrap();
        assert_eq!(empty.n_nodes(), 5);
        assert_eq!(empty.n_edges(), 0);

        let k5 = Graph::complete(5).remove_node(1).unwrap();
        assert_eq!(k5, Graph::complete(4));

        assert!(matches!(
            Graph::new(4).remove_node(5),
            Err(Error::InvalidNode { node: 5, n_nodes: 4 })
        ));
        assert!(Graph::new(4).remove_node(0).is_err());
    }

    #[test]
    fn remove_node_commutes_with_edge_queries() {
        let g = demo5();
        for i in 1..=5 {
            let sub = g.remove_node(i).unwrap();
            let unlabel = |v: usize| if v < i { v } else { v + 1 };
            for j in 1..=4usize {
                for k in (j + 1)..=4 {
                    assert_eq!(sub.has_edge(j, k), g.has_edge(unlabel(j), unlabel(k)));
                }
            }
        }
    }

    #[test]
    fn self_loops_rejected() {
        let mut g = Graph::new(3);
        assert!(g.add_edge(2, 2).is_err());
        assert!(g.add_edge(1, 2).is_ok());
        assert!(g.has_edge(2, 1), "membership is symmetric");
    }

    #[test]
    fn combine_complete_and_empty() {
        let d = 5;
        let all_complete: Vec<_> = (1..=d).map(|i| (i, Graph::complete(d - 1))).collect();
        let wg = combine_subgraphs(d, &all_complete).unwrap();
        for j in 1..=d {
            for k in (j + 1)..=d {
                assert_eq!(wg.weight(j, k), 1.0);
            }
        }
        let all_empty: Vec<_> = (1..=d).map(|i| (i, Graph::new(d - 1))).collect();
        let wg = combine_subgraphs(d, &all_empty).unwrap();
        for j in 1..=d {
            for k in (j + 1)..=d {
                assert_eq!(wg.weight(j, k), 0.0);
            }
        }
    }

    #[test]
    fn combine_counts_eligible_subgraphs() {
        // d = 4: edge {1,2} is visible only from subgraphs removing 3 or 4.
        // Present in exactly one of them -> weight 1/2.
        let d = 4;
        let subs = vec![
            (1, Graph::new(3)),
            (2, Graph::new(3)),
            (3, Graph::with_edges(3, &[(1, 2)]).unwrap()), // {1,2} survives
            (4, Graph::new(3)),
        ];
        let wg = combine_subgraphs(d, &subs).unwrap();
        assert_eq!(wg.weight(1, 2), 0.5);
        assert_eq!(wg.weight(1, 3), 0.0);
    }

    #[test]
    fn combine_relabels_back() {
        // Removing node 2 from the 5-node demo graph leaves
        // {{1,3},{3,4},{3,5},{4,5}} relabelled to {{1,2},{2,3},{2,4},{3,4}}.
        let sub = demo5().remove_node(2).unwrap();
        let wg = combine_subgraphs(5, &[(2, sub)]).unwrap();
        for (j, k) in [(1, 3), (3, 4), (3, 5), (4, 5)] {
            assert!(wg.weight(j, k) > 0.0, "edge ({j},{k}) lost in relabelling");
        }
        assert_eq!(wg.weight(1, 2), 0.0, "edges at the removed node cannot vote");
    }

    #[test]
    fn prune_thresholds_inclusive() {
        let d = 4;
        let subs = vec![
            (3, Graph::with_edges(3, &[(1, 2)]).unwrap()),
            (4, Graph::new(3)),
        ];
        let wg = combine_subgraphs(d, &subs).unwrap();
        assert_eq!(wg.weight(1, 2), 0.5);
        // Weight exactly 0.5 survives the default threshold.
        assert!(prune_majority(&wg, 0.5).has_edge(1, 2));
        assert!(!prune_majority(&wg, 0.51).has_edge(1, 2));
        // All weights 1 -> complete graph.
        let all: Vec<_> = (1..=d).map(|i| (i, Graph::complete(d - 1))).collect();
        let wg = combine_subgraphs(d, &all).unwrap();
        assert_eq!(prune_majority(&wg, 0.5), Graph::complete(d));
    }

    #[test]
    fn graph_serde_round_trip() {
        let g = demo5();
        let js = serde_json::to_string(&g).unwrap();
        assert!(js.contains("\"d\":5"));
        assert!(js.contains("[1,2]"));
        let back: Graph = serde_json::from_str(&js).unwrap();
        assert_eq!(back, g);

        let wg = combine_subgraphs(
            4,
            &[
                (3, Graph::with_edges(3, &[(1, 2)]).unwrap()),
                (4, Graph::with_edges(3, &[(1, 2)]).unwrap()),
            ],
        )
        .unwrap();
        let js = serde_json::to_string(&wg).unwrap();
        assert!(js.contains("\"weight\":1.0"));
        let back: WeightedGraph = serde_json::from_str(&js).unwrap();
        assert_eq!(back, wg);
    }
}
