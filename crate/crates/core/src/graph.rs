//! Undirected graphs with a canonical edge orientation.
//!
//! Every edge is stored as (u, v) with u < v; that pair also fixes the
//! orientation u -> v used by the coboundary. Self-loops are rejected and
//! duplicate edges collapse to one.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};

/// An undirected graph on nodes `0..num_nodes` with canonicalized edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    /// Sorted, deduplicated, each with u < v.
    edges: Vec<(u32, u32)>,
    degrees: Vec<u32>,
}

impl Graph {
    /// Build a graph from an arbitrary edge list.
    ///
    /// Edges are canonicalized to u < v, sorted, and deduplicated, so the
    /// result is independent of input order and orientation. Self-loops and
    /// out-of-range endpoints are errors.
    pub fn build(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(a, b) in edge_list {
            if a == b {
                return Err(Error::SelfLoop { node: a });
            }
            for n in [a, b] {
                if n >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        node: n,
                        num_nodes,
                    });
                }
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            edges.push((u as u32, v as u32));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut degrees = vec![0u32; num_nodes];
        for &(u, v) in &edges {
            degrees[u as usize] += 1;
            degrees[v as usize] += 1;
        }
        Ok(Self {
            num_nodes,
            edges,
            degrees,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edges, sorted, with u < v.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// Adjacency lists (neighbors in ascending order).
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// BFS hop distances from `source`; unreachable nodes get `usize::MAX`.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.num_nodes];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                let m = m as usize;
                if dist[m] == usize::MAX {
                    dist[m] = dist[n] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    /// Parse a tab-separated edge list: one `u<TAB>v` pair per line,
    /// 0-indexed; blank lines and lines starting with `#` are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split('\t');
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.trim().parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::Dataset(format!(
                            "edge list line {}: expected 'u<TAB>v', got {:?}",
                            lineno + 1,
                            line
                        ))
                    })
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Dataset(format!(
                    "edge list line {}: trailing fields in {:?}",
                    lineno + 1,
                    line
                )));
            }
            edges.push((u, v));
        }
        Ok(edges)
    }

    /// Load an edge-list file (see [`Graph::parse_edge_list`]) and build a
    /// graph on `num_nodes` nodes.
    pub fn from_edge_file(path: &Path, num_nodes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::build(num_nodes, &Graph::parse_edge_list(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_degrees() {
        let g = Graph::build(2, &[(0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.degrees(), &[1, 1]);
    }

    #[test]
    fn canonicalizes_and_dedups() {
        let g = Graph::build(3, &[(1, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), &[1, 2, 1]);
    }

    #[test]
    fn rejects_self_loop() {
        assert!(matches!(
            Graph::build(4, &[(0, 0)]),
            Err(Error::SelfLoop { node: 0 })
        ));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(
            Graph::build(2, &[(0, 2)]),
            Err(Error::NodeOutOfRange { node: 2, .. })
        ));
    }

    #[test]
    fn canonicalization_idempotent() {
        let g1 = Graph::build(5, &[(3, 1), (1, 3), (0, 4), (4, 0), (2, 3)]).unwrap();
        let edges: Vec<(usize, usize)> = g1
            .edges()
            .iter()
            .map(|&(u, v)| (u as usize, v as usize))
            .collect();
        let g2 = Graph::build(5, &edges).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn bfs_on_path() {
        let g = Graph::build(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(g.bfs_distances(0), vec![0, 1, 2, 3]);
        let g2 = Graph::build(3, &[(0, 1)]).unwrap();
        assert_eq!(g2.bfs_distances(0), vec![0, 1, usize::MAX]);
    }

    #[test]
    fn parses_edge_file_format() {
        let text = "# comment\n0\t1\n\n2\t1\n";
        let edges = Graph::parse_edge_list(text).unwrap();
        assert_eq!(edges, vec![(0, 1), (2, 1)]);
        assert!(Graph::parse_edge_list("0,1\n").is_err());
    }
}
