//! Modularity maximization and the backbone-plus-communities pipeline.
//!
//! Small components are solved exactly by enumerating set partitions; larger
//! ones use multi-restart Louvain followed by a single-vertex refinement
//! sweep. The optimum never places two components in one community, so each
//! component is optimized on its own against the edge count of the whole
//! graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{extract_backbone, BackboneResult, Correction, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::network::{GroupAssignment, PeerNetwork};
use crate::recall::RecallMatrix;

pub const DEFAULT_RESTARTS: usize = 50;
pub const DEFAULT_EXACT_MAX_N: usize = 12;

// modularity gains below this are treated as ties
const EPS: f64 = 1e-12;

/// Mutually exclusive community labels, contiguous from 0 in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partition(Vec<usize>);

impl Partition {
    /// Relabels arbitrary labels into canonical form.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let canon = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition(canon)
    }

    pub fn singletons(n: usize) -> Self {
        Partition((0..n).collect())
    }

    pub fn whole(n: usize) -> Self {
        Partition(vec![0; n])
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_communities(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities()];
        for (v, &c) in self.0.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    pub fn to_groups(&self) -> GroupAssignment {
        GroupAssignment::new(self.len(), self.communities())
    }
}

/// Newman-Girvan modularity; 0 for a graph without edges.
pub fn modularity(g: &PeerNetwork, part: &Partition) -> f64 {
    assert_eq!(part.len(), g.n_vertices(), "partition must cover every vertex");
    let m = g.edge_count() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = part.n_communities();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for v in 0..g.n_vertices() {
        degree[part.0[v]] += g.degree(v) as f64;
    }
    for (a, b) in g.edges() {
        if part.0[a] == part.0[b] {
            internal[part.0[a]] += 1.0;
        }
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(e, d)| e / m - (d / (2.0 * m)).powi(2))
        .sum()
}

/// Community contribution summed over a subgraph, with `m` the edge count of the whole graph.
fn partial_modularity(g: &PeerNetwork, labels: &[usize], m: f64) -> f64 {
    let k = labels.iter().max().map_or(0, |x| x + 1);
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for v in 0..g.n_vertices() {
        degree[labels[v]] += g.degree(v) as f64;
    }
    for (a, b) in g.edges() {
        if labels[a] == labels[b] {
            internal[labels[a]] += 1.0;
        }
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(e, d)| e / m - (d / (2.0 * m)).powi(2))
        .sum()
}

/// Best partition of `g` by exhaustive search over restricted growth strings.
/// The first maximum in lexicographic order wins.
fn exact_search(g: &PeerNetwork, m: f64) -> Vec<usize> {
    let n = g.n_vertices();
    if n == 0 {
        return Vec::new();
    }
    let deg: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();
    let earlier: Vec<Vec<usize>> = (0..n).map(|v| g.neighbors(v).filter(|&u| u < v).collect()).collect();

    struct State<'a> {
        n: usize,
        m: f64,
        deg: &'a [f64],
        earlier: &'a [Vec<usize>],
        labels: Vec<usize>,
        internal: Vec<f64>,
        degree: Vec<f64>,
        best: f64,
        best_labels: Vec<usize>,
    }

    impl State<'_> {
        fn recurse(&mut self, v: usize, used: usize) {
            if v == self.n {
                let q: f64 = (0..used)
                    .map(|c| self.internal[c] / self.m - (self.degree[c] / (2.0 * self.m)).powi(2))
                    .sum();
                if q > self.best + EPS {
                    self.best = q;
                    self.best_labels.clone_from(&self.labels);
                }
                return;
            }
            for c in 0..=used.min(self.n - 1) {
                if c == used && used >= self.n {
                    break;
                }
                let links = self.earlier[v].iter().filter(|&&u| self.labels[u] == c).count() as f64;
                self.labels[v] = c;
                self.internal[c] += links;
                self.degree[c] += self.deg[v];
                self.recurse(v + 1, if c == used { used + 1 } else { used });
                self.internal[c] -= links;
                self.degree[c] -= self.deg[v];
            }
        }
    }

    let mut st = State {
        n,
        m,
        deg: &deg,
        earlier: &earlier,
        labels: vec![0; n],
        internal: vec![0.0; n],
        degree: vec![0.0; n],
        best: f64::NEG_INFINITY,
        best_labels: Vec::new(),
    };
    st.recurse(0, 0);
    st.best_labels
}

/// Weighted graph used across Louvain levels. `loops[i]` is the weight of
/// edges folded inside node `i`.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    k: Vec<f64>,
}

impl Level {
    fn from_network(g: &PeerNetwork) -> Self {
        let n = g.n_vertices();
        let adj: Vec<Vec<(usize, f64)>> = (0..n).map(|v| g.neighbors(v).map(|u| (u, 1.0)).collect()).collect();
        let k = adj.iter().map(|a| a.len() as f64).collect();
        Level {
            adj,
            loops: vec![0.0; n],
            k,
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    /// One round of local moves. Returns community labels and whether anything moved.
    fn local_moves(&self, m2: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.n();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.k.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut weight_to = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &v in &order {
                let own = comm[v];
                tot[own] -= self.k[v];
                for &(u, w) in &self.adj[v] {
                    let c = comm[u];
                    if weight_to[c] == 0.0 {
                        touched.push(c);
                    }
                    weight_to[c] += w;
                }
                let gain = |c: usize, w: f64| w - tot[c] * self.k[v] / m2;
                let mut best = own;
                let mut best_gain = gain(own, weight_to[own]);
                for &c in &touched {
                    let gc = gain(c, weight_to[c]);
                    if gc > best_gain + EPS || (gc > best_gain - EPS && c < best && best != own) {
                        best = c;
                        best_gain = gc;
                    }
                }
                for &c in &touched {
                    weight_to[c] = 0.0;
                }
                touched.clear();
                tot[best] += self.k[v];
                if best != own {
                    comm[v] = best;
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, moved_any)
    }

    fn aggregate(&self, labels: &[usize]) -> Level {
        let k = labels.iter().max().map_or(0, |x| x + 1);
        let mut loops = vec![0.0; k];
        let mut weights: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        let mut kk = vec![0.0; k];
        for v in 0..self.n() {
            let cv = labels[v];
            loops[cv] += self.loops[v];
            kk[cv] += self.k[v];
            for &(u, w) in &self.adj[v] {
                let cu = labels[u];
                if cu == cv {
                    // each internal edge is visited from both ends
                    loops[cv] += w / 2.0;
                } else {
                    *weights[cv].entry(cu).or_insert(0.0) += w;
                }
            }
        }
        Level {
            adj: weights.into_iter().map(|m| m.into_iter().collect()).collect(),
            loops,
            k: kk,
        }
    }
}

/// Louvain with a final single-vertex refinement sweep on the original graph.
fn louvain(g: &PeerNetwork, m: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.n_vertices();
    let m2 = 2.0 * m;
    let mut level = Level::from_network(g);
    let mut assignment: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = level.local_moves(m2, rng);
        if !moved {
            break;
        }
        let canon = Partition::from_labels(&comm).0;
        for a in assignment.iter_mut() {
            *a = canon[*a];
        }
        level = level.aggregate(&canon);
    }
    refine(g, m, &mut assignment);
    Partition::from_labels(&assignment).0
}

/// Moves single vertices to whichever community (neighbouring or a fresh
/// one) raises modularity most, until no move helps.
fn refine(g: &PeerNetwork, m: f64, labels: &mut [usize]) {
    let n = g.n_vertices();
    let m2 = 2.0 * m;
    let deg: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();
    let mut tot = vec![0.0; n + 1];
    for v in 0..n {
        tot[labels[v]] += deg[v];
    }
    for _ in 0..(4 * n + 4) {
        let mut moved = false;
        for v in 0..n {
            let own = labels[v];
            tot[own] -= deg[v];
            let mut links = std::collections::BTreeMap::new();
            for u in g.neighbors(v) {
                *links.entry(labels[u]).or_insert(0.0) += 1.0;
            }
            let gain = |c: usize, w: f64| w - tot[c] * deg[v] / m2;
            let mut best = own;
            let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
            for (&c, &w) in &links {
                let gc = gain(c, w);
                if gc > best_gain + EPS {
                    best = c;
                    best_gain = gc;
                }
            }
            // an empty community has gain 0
            if best_gain < -EPS {
                if let Some(free) = (0..=n).find(|&c| tot[c] == 0.0 && !labels.contains(&c)) {
                    best = free;
                }
            }
            tot[best] += deg[v];
            if best != own {
                labels[v] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub restarts: usize,
    /// Components up to this size are solved exactly; 0 forces the heuristic everywhere.
    pub exact_max_n: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: DEFAULT_RESTARTS,
            exact_max_n: DEFAULT_EXACT_MAX_N,
            seed: 0,
        }
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Best-modularity partition.
pub fn maximize_modularity(g: &PeerNetwork, restarts: usize, seed: u64) -> Result<Partition> {
    maximize_modularity_with(
        g,
        &OptimizerConfig {
            restarts,
            exact_max_n: DEFAULT_EXACT_MAX_N,
            seed,
        },
    )
}

pub fn maximize_modularity_with(g: &PeerNetwork, cfg: &OptimizerConfig) -> Result<Partition> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let n = g.n_vertices();
    let m = g.edge_count() as f64;
    if m == 0.0 {
        return Ok(Partition::singletons(n));
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for comp in g.components() {
        let local = if comp.len() == 1 {
            vec![0]
        } else {
            let sub = g.induced(&comp);
            if comp.len() <= cfg.exact_max_n {
                exact_search(&sub, m)
            } else {
                best_of_restarts(&sub, m, cfg)
            }
        };
        let used = local.iter().max().map_or(0, |x| x + 1);
        for (&v, &l) in comp.iter().zip(&local) {
            labels[v] = next + l;
        }
        next += used;
    }
    Ok(Partition::from_labels(&labels))
}

fn best_of_restarts(g: &PeerNetwork, m: f64, cfg: &OptimizerConfig) -> Vec<usize> {
    let runs: Vec<(f64, Vec<usize>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let labels = louvain(g, m, &mut restart_rng(cfg.seed, r));
            (partial_modularity(g, &labels, m), labels)
        })
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (q, labels) in runs {
        best = match best {
            None => Some((q, labels)),
            Some((bq, bl)) => {
                if q > bq + EPS || (q > bq - EPS && labels < bl) {
                    Some((q, labels))
                } else {
                    Some((bq, bl))
                }
            }
        };
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BecdConfig {
    pub alpha: f64,
    pub correction: Correction,
    pub optimizer: OptimizerConfig,
}

impl Default for BecdConfig {
    fn default() -> Self {
        BecdConfig {
            alpha: DEFAULT_ALPHA,
            correction: Correction::None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BecdOutput {
    pub backbone: BackboneResult,
    pub partition: Partition,
    pub modularity: f64,
    pub groups: GroupAssignment,
    pub p: f64,
}

/// Backbone extraction followed by modularity maximization. Every community,
/// singletons included, becomes a group.
pub fn run_becd(r: &RecallMatrix, cfg: &BecdConfig) -> Result<BecdOutput> {
    let backbone = extract_backbone(r, cfg.alpha, cfg.correction)?;
    let partition = maximize_modularity_with(&backbone.network, &cfg.optimizer)?;
    let modularity = modularity(&backbone.network, &partition);
    let groups = partition.to_groups();
    let p = groups.membership_statistic();
    Ok(BecdOutput {
        backbone,
        partition,
        modularity,
        groups,
        p,
    })
}

pub fn becd_groups(r: &RecallMatrix, alpha: f64, restarts: usize, seed: u64) -> Result<GroupAssignment> {
    let cfg = BecdConfig {
        alpha,
        correction: Correction::None,
        optimizer: OptimizerConfig {
            restarts,
            exact_max_n: DEFAULT_EXACT_MAX_N,
            seed,
        },
    };
    Ok(run_becd(r, &cfg)?.groups)
}
