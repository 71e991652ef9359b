//! Peer networks and group assignments shared by both pipelines.

use serde::Serialize;

use crate::recall::ChildId;

/// Simple undirected graph over children, no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerNetwork {
    n: usize,
    adj: Vec<bool>,
}

impl PeerNetwork {
    pub fn empty(n: usize) -> Self {
        PeerNetwork {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Self-loops are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a * self.n + b] = true;
            self.adj[b * self.n + a] = true;
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.n + b]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v * self.n..(v + 1) * self.n].iter().filter(|&&e| e).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| self.has_edge(v, u))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count() / 2
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.has_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Connected components in order of their smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut k = 0;
            while k < comp.len() {
                let v = comp[k];
                k += 1;
                for u in self.neighbors(v) {
                    if !seen[u] {
                        seen[u] = true;
                        comp.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `vertices`, relabelled `0..vertices.len()`.
    pub fn induced(&self, vertices: &[usize]) -> PeerNetwork {
        let mut g = PeerNetwork::empty(vertices.len());
        for (i, &a) in vertices.iter().enumerate() {
            for (j, &b) in vertices.iter().enumerate().skip(i + 1) {
                if self.has_edge(a, b) {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    /// Adjacency matrix CSV with child ids as header and first column.
    pub fn to_csv(&self, children: &[ChildId]) -> String {
        let mut out = String::from("child");
        for c in children {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for (i, c) in children.iter().enumerate() {
            out.push_str(c.as_str());
            for j in 0..self.n {
                out.push_str(if self.has_edge(i, j) { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

/// Peer groups over a classroom. Groups may overlap; a child may be in none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    n_children: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupAssignment {
    /// Members are sorted; empty groups are dropped. Panics if a member is out of range.
    pub fn new(n_children: usize, groups: Vec<Vec<usize>>) -> Self {
        let groups = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g.dedup();
                assert!(g.iter().all(|&v| v < n_children), "group member out of range");
                g
            })
            .collect();
        GroupAssignment { n_children, groups }
    }

    pub fn n_children(&self) -> usize {
        self.n_children
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Indices of the groups containing `child`.
    pub fn membership(&self, child: usize) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.binary_search(&child).is_ok())
            .map(|(k, _)| k)
            .collect()
    }

    /// Fraction of children belonging to at least one group of three or more.
    pub fn membership_statistic(&self) -> f64 {
        membership_statistic(self, self.n_children)
    }

    pub fn to_json(&self, children: &[ChildId]) -> GroupsJson {
        GroupsJson {
            schema_version: crate::SCHEMA_VERSION,
            groups: self
                .groups
                .iter()
                .map(|g| g.iter().map(|&i| children[i].to_string()).collect())
                .collect(),
            membership: (0..self.n_children)
                .map(|i| ChildMembership {
                    child: children[i].to_string(),
                    groups: self.membership(i),
                })
                .collect(),
            p: self.membership_statistic(),
        }
    }
}

/// `P`: the share of `n_children` that sit in at least one group of size >= 3.
pub fn membership_statistic(groups: &GroupAssignment, n_children: usize) -> f64 {
    assert!(n_children >= 1, "membership statistic needs at least one child");
    let mut covered = vec![false; groups.n_children.max(n_children)];
    for g in groups.groups.iter().filter(|g| g.len() >= 3) {
        for &v in g {
            covered[v] = true;
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / n_children as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupsJson {
    pub schema_version: u32,
    pub groups: Vec<Vec<String>>,
    pub membership: Vec<ChildMembership>,
    #[serde(rename = "P")]
    pub p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChildMembership {
    pub child: String,
    pub groups: Vec<usize>,
}
