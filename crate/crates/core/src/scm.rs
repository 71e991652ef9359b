//! Social Cognitive Mapping: co-occurrence, one pass of column correlation,
//! thresholding, and group identification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GroupAssignment, PeerNetwork};
use crate::recall::RecallMatrix;

pub use crate::network::membership_statistic;

pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// `C = R R'`: shared-report counts, diagonal holds each child's salience.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    n: usize,
    values: Vec<u32>,
}

impl CooccurrenceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.n + j]
    }

    pub fn column(&self, j: usize) -> Vec<u32> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn diagonal(&self) -> Vec<u32> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

pub fn cooccurrence(r: &RecallMatrix) -> CooccurrenceMatrix {
    let n = r.n_children();
    let mut values = vec![0u32; n * n];
    for j in 0..r.n_reports() {
        let members = r.report_members(j);
        for &a in &members {
            for &b in &members {
                values[a * n + b] += 1;
            }
        }
    }
    CooccurrenceMatrix { n, values }
}

/// Which entries of two columns enter their correlation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    /// All `n` entries, diagonal included.
    #[default]
    Full,
    /// Drop entries `i` and `j` when correlating columns `i` and `j`.
    ExcludeDyad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    salience: Vec<u32>,
}

impl SimilarityMatrix {
    /// Direct construction; `values` must be symmetric, row-major `n x n`.
    pub fn from_values(n: usize, values: Vec<f64>, salience: Vec<u32>) -> Self {
        assert_eq!(values.len(), n * n);
        assert_eq!(salience.len(), n);
        SimilarityMatrix { n, values, salience }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn salience(&self) -> &[u32] {
        &self.salience
    }
}

/// Pearson correlation over paired samples, or `None` if either side is constant.
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Column correlations of `C`, computed once. Constant columns correlate 0 with everything.
pub fn similarity(c: &CooccurrenceMatrix, mode: CorrelationMode) -> SimilarityMatrix {
    let n = c.n;
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| c.column(j).into_iter().map(f64::from).collect())
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = match mode {
                CorrelationMode::Full => pearson(&cols[i], &cols[j]),
                CorrelationMode::ExcludeDyad if i == j => pearson(&cols[i], &cols[j]),
                CorrelationMode::ExcludeDyad => {
                    let keep = |k: &usize| *k != i && *k != j;
                    let x: Vec<f64> = (0..n).filter(keep).map(|k| cols[i][k]).collect();
                    let y: Vec<f64> = (0..n).filter(keep).map(|k| cols[j][k]).collect();
                    pearson(&x, &y)
                }
            }
            .unwrap_or(0.0);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix {
        n,
        values,
        salience: c.diagonal(),
    }
}

/// Links every pair with `S_ij >= threshold`.
pub fn threshold_network(s: &SimilarityMatrix, threshold: f64) -> Result<PeerNetwork> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold {threshold} is outside [0, 1]"
        )));
    }
    let mut g = PeerNetwork::empty(s.n);
    for i in 0..s.n {
        for j in i + 1..s.n {
            if s.get(i, j) >= threshold {
                g.add_edge(i, j);
            }
        }
    }
    Ok(g)
}

/// Links a child needs to join a group that currently has `size` members.
#[inline]
fn required_links(size: usize) -> usize {
    size.div_ceil(2)
}

struct Grower<'a> {
    g: &'a PeerNetwork,
    order: &'a [usize],
    member: Vec<bool>,
    links: Vec<usize>,
    size: usize,
}

impl<'a> Grower<'a> {
    fn new(g: &'a PeerNetwork, order: &'a [usize]) -> Self {
        let n = g.n_vertices();
        Grower {
            g,
            order,
            member: vec![false; n],
            links: vec![0; n],
            size: 0,
        }
    }

    fn set(&mut self, v: usize, on: bool) {
        debug_assert_ne!(self.member[v], on);
        self.member[v] = on;
        if on {
            self.size += 1;
        } else {
            self.size -= 1;
        }
        for u in self.g.neighbors(v) {
            if on {
                self.links[u] += 1;
            } else {
                self.links[u] -= 1;
            }
        }
    }

    fn try_add(&mut self) -> bool {
        let need = required_links(self.size);
        let pick = self
            .order
            .iter()
            .copied()
            .find(|&v| !self.member[v] && self.links[v] >= need);
        match pick {
            Some(v) => {
                self.set(v, true);
                true
            }
            None => false,
        }
    }

    // Removes the member with the fewest in-group links among those below the
    // rule; ties go to the one latest in seed order.
    fn try_prune(&mut self) -> bool {
        if self.size <= 2 {
            return false;
        }
        let need = required_links(self.size - 1);
        let worst = self
            .order
            .iter()
            .rev()
            .copied()
            .filter(|&v| self.member[v] && self.links[v] < need)
            .min_by_key(|&v| self.links[v]);
        match worst {
            Some(v) => {
                self.set(v, false);
                true
            }
            None => false,
        }
    }

    fn grow(mut self, a: usize, b: usize) -> Vec<usize> {
        self.set(a, true);
        self.set(b, true);
        let cap = 4 * self.g.n_vertices() + 8;
        for _ in 0..cap {
            while self.try_add() {}
            if !self.try_prune() {
                break;
            }
        }
        // the cap only bites on an add/prune cycle; finish with a clean prune
        while self.try_prune() {}
        (0..self.member.len()).filter(|&v| self.member[v]).collect()
    }
}

/// Vertex order used for seeding: descending degree, ties by index.
fn seed_order(g: &PeerNetwork) -> Vec<usize> {
    let deg = g.degrees();
    let mut order: Vec<usize> = (0..g.n_vertices()).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    order
}

/// Groups in which every member links to at least half of the other members.
///
/// Each edge seeds a candidate group. A candidate absorbs, one at a time, the
/// first outsider (in seed order) linked to at least half of the current
/// members; members that fall below the rule as the group grows are pruned.
/// Identical groups are reported once.
pub fn identify_groups_fifty_percent(g: &PeerNetwork) -> GroupAssignment {
    let order = seed_order(g);
    let rank: Vec<usize> = {
        let mut r = vec![0; order.len()];
        for (k, &v) in order.iter().enumerate() {
            r[v] = k;
        }
        r
    };
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &a in &order {
        let mut nbrs: Vec<usize> = g.neighbors(a).filter(|&b| rank[b] > rank[a]).collect();
        nbrs.sort_by_key(|&b| rank[b]);
        for b in nbrs {
            let grp = Grower::new(g, &order).grow(a, b);
            if grp.len() >= 2 && !groups.contains(&grp) {
                groups.push(grp);
            }
        }
    }
    GroupAssignment::new(g.n_vertices(), groups)
}

/// Chains children into groups: starting from the most salient child not yet
/// placed, keep adding anyone whose similarity to some current member is at
/// least `threshold`.
pub fn identify_groups_profile(s: &SimilarityMatrix, threshold: f64) -> GroupAssignment {
    let n = s.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.salience[b].cmp(&s.salience[a]).then(a.cmp(&b)));
    let mut processed = vec![false; n];
    let mut groups = Vec::new();
    for &seed in &order {
        if processed[seed] {
            continue;
        }
        processed[seed] = true;
        let mut member = vec![false; n];
        member[seed] = true;
        let mut current = vec![seed];
        loop {
            let next = order
                .iter()
                .copied()
                .find(|&c| !member[c] && current.iter().any(|&m| s.get(c, m) >= threshold));
            match next {
                Some(c) => {
                    member[c] = true;
                    processed[c] = true;
                    current.push(c);
                }
                None => break,
            }
        }
        if current.len() >= 2 {
            groups.push(current);
        }
    }
    GroupAssignment::new(n, groups)
}

/// Connected components with two or more children.
pub fn identify_groups_components(g: &PeerNetwork) -> GroupAssignment {
    let groups = g.components().into_iter().filter(|c| c.len() >= 2).collect();
    GroupAssignment::new(g.n_vertices(), groups)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupRule {
    #[default]
    Fifty,
    Profile,
    Components,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub threshold: f64,
    pub rule: GroupRule,
    pub correlation: CorrelationMode,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            threshold: DEFAULT_THRESHOLD,
            rule: GroupRule::Fifty,
            correlation: CorrelationMode::Full,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScmOutput {
    pub cooccurrence: CooccurrenceMatrix,
    pub similarity: SimilarityMatrix,
    pub network: PeerNetwork,
    pub groups: GroupAssignment,
    pub p: f64,
}

/// Runs every SCM step on `r`.
pub fn run_scm(r: &RecallMatrix, cfg: &ScmConfig) -> Result<ScmOutput> {
    let cooccurrence = cooccurrence(r);
    let similarity = similarity(&cooccurrence, cfg.correlation);
    let network = threshold_network(&similarity, cfg.threshold)?;
    let groups = match cfg.rule {
        GroupRule::Fifty => identify_groups_fifty_percent(&network),
        GroupRule::Profile => identify_groups_profile(&similarity, cfg.threshold),
        GroupRule::Components => identify_groups_components(&network),
    };
    let p = membership_statistic(&groups, r.n_children());
    Ok(ScmOutput {
        cooccurrence,
        similarity,
        network,
        groups,
        p,
    })
}
