//! Stochastic degree sequence model backbone.
//!
//! Cell probabilities come from the maximum-entropy bipartite configuration
//! model: `p_ij = x_i y_j / (1 + x_i y_j)` with multipliers chosen so every
//! expected row and column sum equals the observed one. Each dyad's
//! co-occurrence count is then tested against the Poisson-binomial
//! distribution with trial probabilities `p_ik p_jk`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::PeerNetwork;
use crate::poibin::poisson_binomial_upper_tail;
use crate::recall::{ChildId, RecallMatrix};
use crate::scm::cooccurrence;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const FIT_TOLERANCE: f64 = 1e-6;
pub const FIT_MAX_ITERATIONS: usize = 10_000;
// the class-level solve runs tighter so that per-cell values are accurate too
const INNER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilityMatrix {
    n_rows: usize,
    n_cols: usize,
    p: Vec<f64>,
    /// Largest absolute gap between expected and observed margins.
    pub residual: f64,
    pub iterations: usize,
}

impl CellProbabilityMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn expected_row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn expected_col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }
}

/// Unique degree values with their positions, so that the fixed point runs
/// over degree classes rather than individual rows and columns.
struct Classes {
    degree: Vec<f64>,
    count: Vec<f64>,
    of: Vec<usize>,
}

fn classes(active: &[usize], degree: &[usize]) -> Classes {
    let mut values: Vec<usize> = active.iter().map(|&i| degree[i]).collect();
    values.sort_unstable();
    values.dedup();
    let mut count = vec![0.0; values.len()];
    let of = active
        .iter()
        .map(|&i| {
            let k = values.binary_search(&degree[i]).unwrap();
            count[k] += 1.0;
            k
        })
        .collect();
    Classes {
        degree: values.into_iter().map(|v| v as f64).collect(),
        count,
        of,
    }
}

/// Fits the bipartite configuration model to the margins of `r`.
///
/// Rows or columns that are empty or full have forced cells; they are peeled
/// off (repeatedly, since peeling changes the remaining margins) before the
/// fixed-point iteration runs on what is left.
pub fn fit_bicm(r: &RecallMatrix) -> Result<CellProbabilityMatrix> {
    let mg = r.margins();
    fit_bicm_margins(&mg.row_sums, &mg.col_sums)
}

pub fn fit_bicm_margins(row_sums: &[usize], col_sums: &[usize]) -> Result<CellProbabilityMatrix> {
    let (n, m) = (row_sums.len(), col_sums.len());
    if row_sums.iter().sum::<usize>() == 0 {
        return Err(Error::Degenerate("recall matrix has no nominations".into()));
    }
    let mut p = vec![f64::NAN; n * m];
    let mut rows = row_sums.to_vec();
    let mut cols = col_sums.to_vec();
    let mut row_live: Vec<bool> = vec![true; n];
    let mut col_live: Vec<bool> = vec![true; m];

    loop {
        let live_cols = col_live.iter().filter(|&&c| c).count();
        let live_rows = row_live.iter().filter(|&&c| c).count();
        let mut changed = false;
        for i in 0..n {
            if row_live[i] && (rows[i] == 0 || rows[i] == live_cols) {
                let v = if rows[i] == 0 { 0.0 } else { 1.0 };
                for j in (0..m).filter(|&j| col_live[j]) {
                    p[i * m + j] = v;
                    if v == 1.0 {
                        cols[j] -= 1;
                    }
                }
                row_live[i] = false;
                changed = true;
            }
        }
        if changed {
            continue;
        }
        for j in 0..m {
            if col_live[j] && (cols[j] == 0 || cols[j] == live_rows) {
                let v = if cols[j] == 0 { 0.0 } else { 1.0 };
                for i in (0..n).filter(|&i| row_live[i]) {
                    p[i * m + j] = v;
                    if v == 1.0 {
                        rows[i] -= 1;
                    }
                }
                col_live[j] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let live_r: Vec<usize> = (0..n).filter(|&i| row_live[i]).collect();
    let live_c: Vec<usize> = (0..m).filter(|&j| col_live[j]).collect();
    let mut iterations = 0;
    if !live_r.is_empty() && !live_c.is_empty() {
        let rc = classes(&live_r, &rows);
        let cc = classes(&live_c, &cols);
        let (theta, phi, its) = solve_classes(&rc, &cc)?;
        iterations = its;
        for (a, &i) in live_r.iter().enumerate() {
            for (b, &j) in live_c.iter().enumerate() {
                p[i * m + j] = logistic(theta[rc.of[a]] + phi[cc.of[b]]);
            }
        }
    }

    let mut out = CellProbabilityMatrix {
        n_rows: n,
        n_cols: m,
        p,
        residual: 0.0,
        iterations,
    };
    let er = out.expected_row_sums();
    let ec = out.expected_col_sums();
    out.residual = er
        .iter()
        .zip(row_sums)
        .map(|(e, &o)| (e - o as f64).abs())
        .chain(ec.iter().zip(col_sums).map(|(e, &o)| (e - o as f64).abs()))
        .fold(0.0, f64::max);
    if out.residual.is_nan() || out.residual >= FIT_TOLERANCE {
        return Err(Error::NonConvergence {
            iterations,
            residual: out.residual,
        });
    }
    Ok(out)
}

/// Log class multipliers `(theta, phi)` with `p = logistic(theta_a + phi_b)`.
type Multipliers = (Vec<f64>, Vec<f64>, usize);

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn margin_gaps(rc: &Classes, cc: &Classes, theta: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut rg: Vec<f64> = rc.degree.iter().map(|k| -k).collect();
    let mut cg: Vec<f64> = cc.degree.iter().map(|k| -k).collect();
    for (a, ta) in theta.iter().enumerate() {
        for (b, pb) in phi.iter().enumerate() {
            let p = logistic(ta + pb);
            rg[a] += cc.count[b] * p;
            cg[b] += rc.count[a] * p;
        }
    }
    (rg, cg)
}

fn max_gap(gaps: &(Vec<f64>, Vec<f64>)) -> f64 {
    gaps.0.iter().chain(&gaps.1).fold(0.0, |m, g| m.max(g.abs()))
}

/// Iterations given to the fixed point before Newton takes over.
const FIXED_POINT_BUDGET: usize = 500;
/// Below this gap Newton stops once a step no longer halves it; rounding dominates there.
const STALL_LEVEL: f64 = 1e-9;

/// Alternating fixed point on class multipliers,
/// `x_a = k_a / sum_b n_b y_b / (1 + x_a y_b)` and symmetrically for `y`,
/// finished by Newton steps when it stalls. Margins on the edge of the
/// feasible set push some multipliers towards infinity, where the fixed point
/// crawls.
fn solve_classes(rc: &Classes, cc: &Classes) -> Result<Multipliers> {
    let total: f64 = rc.degree.iter().zip(&rc.count).map(|(d, c)| d * c).sum();
    let scale = total.sqrt();
    let mut x: Vec<f64> = rc.degree.iter().map(|d| d / scale).collect();
    let mut y: Vec<f64> = cc.degree.iter().map(|d| d / scale).collect();
    for it in 1..=FIXED_POINT_BUDGET {
        for (a, xa) in x.iter_mut().enumerate() {
            let s: f64 = y.iter().zip(&cc.count).map(|(yb, nb)| nb * yb / (1.0 + *xa * yb)).sum();
            *xa = rc.degree[a] / s;
        }
        for (b, yb) in y.iter_mut().enumerate() {
            let s: f64 = x.iter().zip(&rc.count).map(|(xa, na)| na * xa / (1.0 + xa * *yb)).sum();
            *yb = cc.degree[b] / s;
        }
        let theta: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let phi: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let residual = max_gap(&margin_gaps(rc, cc, &theta, &phi));
        if residual < INNER_TOLERANCE {
            return Ok((theta, phi, it));
        }
        if !residual.is_finite() {
            break;
        }
    }
    let theta: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let phi: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    newton(rc, cc, theta, phi, FIXED_POINT_BUDGET)
}

/// Damped Newton on the convex negative log-likelihood
/// `sum n_a n_b softplus(theta_a + phi_b) - sum n_a k_a theta_a - sum n_b k_b phi_b`.
fn newton(rc: &Classes, cc: &Classes, mut theta: Vec<f64>, mut phi: Vec<f64>, used: usize) -> Result<Multipliers> {
    let (na, nb) = (theta.len(), phi.len());
    let dim = na + nb;
    let objective = |theta: &[f64], phi: &[f64]| -> f64 {
        let mut f = 0.0;
        for (a, ta) in theta.iter().enumerate() {
            for (b, pb) in phi.iter().enumerate() {
                f += rc.count[a] * cc.count[b] * softplus(ta + pb);
            }
            f -= rc.count[a] * rc.degree[a] * ta;
        }
        for (b, pb) in phi.iter().enumerate() {
            f -= cc.count[b] * cc.degree[b] * pb;
        }
        f
    };
    if theta.iter().chain(&phi).any(|v| !v.is_finite()) {
        theta = rc.degree.iter().map(|d| d.ln()).collect();
        phi = vec![0.0; nb];
    }
    let mut gaps = margin_gaps(rc, cc, &theta, &phi);
    let mut residual = max_gap(&gaps);
    let mut it = used;
    while it < FIT_MAX_ITERATIONS && residual >= INNER_TOLERANCE {
        it += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for (a, ta) in theta.iter().enumerate() {
            for (b, pb) in phi.iter().enumerate() {
                let p = logistic(ta + pb);
                let w = rc.count[a] * cc.count[b] * p * (1.0 - p);
                h[(a, a)] += w;
                h[(na + b, na + b)] += w;
                h[(a, na + b)] += w;
                h[(na + b, a)] += w;
            }
        }
        let g = DVector::from_iterator(
            dim,
            gaps.0
                .iter()
                .zip(&rc.count)
                .map(|(r, n)| r * n)
                .chain(gaps.1.iter().zip(&cc.count).map(|(c, n)| c * n)),
        );
        // the shift theta + t, phi - t leaves p unchanged, so the Hessian is singular
        let ridge = 1e-9 * (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        for i in 0..dim {
            h[(i, i)] += ridge;
        }
        let step = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let f0 = objective(&theta, &phi);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..60 {
            let nt: Vec<f64> = theta.iter().enumerate().map(|(a, v)| v + t * step[a]).collect();
            let np: Vec<f64> = phi.iter().enumerate().map(|(b, v)| v + t * step[na + b]).collect();
            let ngaps = margin_gaps(rc, cc, &nt, &np);
            let nres = max_gap(&ngaps);
            // near the optimum the objective stops resolving decreases, so fall back on the gap
            if objective(&nt, &np) <= f0 + 1e-4 * t * slope || nres < residual {
                stalled = nres < STALL_LEVEL && nres > 0.5 * residual;
                theta = nt;
                phi = np;
                gaps = ngaps;
                residual = nres;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || stalled {
            break;
        }
    }
    if residual < FIT_TOLERANCE {
        Ok((theta, phi, it))
    } else {
        Err(Error::NonConvergence {
            iterations: it,
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    #[default]
    None,
    Holm,
}

#[derive(Debug, Clone)]
pub struct BackboneResult {
    n: usize,
    /// Upper-tail p-values, row-major `n x n`; the diagonal is 1.
    pvalues: Vec<f64>,
    adjusted: Vec<f64>,
    pub network: PeerNetwork,
    pub alpha: f64,
    pub correction: Correction,
}

impl BackboneResult {
    pub fn pvalue(&self, i: usize, j: usize) -> f64 {
        self.pvalues[i * self.n + j]
    }

    pub fn adjusted_pvalue(&self, i: usize, j: usize) -> f64 {
        self.adjusted[i * self.n + j]
    }

    pub fn pvalues_csv(&self, children: &[ChildId]) -> String {
        let mut out = String::from("child");
        for c in children {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for (i, c) in children.iter().enumerate() {
            out.push_str(c.as_str());
            for j in 0..self.n {
                out.push_str(&format!(",{:.17e}", self.pvalue(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

fn holm(pvalues: &[f64]) -> Vec<f64> {
    let total = pvalues.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; total];
    let mut running = 0.0f64;
    for (rank, &k) in order.iter().enumerate() {
        running = running.max(((total - rank) as f64 * pvalues[k]).min(1.0));
        adjusted[k] = running;
    }
    adjusted
}

/// Positive SDSM backbone: keeps dyad `(i, j)` when it co-occurs at least
/// once and its (adjusted) upper-tail p-value is at most `alpha`.
pub fn extract_backbone(r: &RecallMatrix, alpha: f64, correction: Correction) -> Result<BackboneResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} is outside (0, 1]")));
    }
    let probs = fit_bicm(r)?;
    let c = cooccurrence(r);
    let n = r.n_children();
    let m = r.n_reports();

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut trial = vec![0.0; m];
            (i + 1..n)
                .map(|j| {
                    let observed = c.get(i, j) as usize;
                    let pv = if observed == 0 {
                        1.0
                    } else {
                        for (k, t) in trial.iter_mut().enumerate() {
                            *t = probs.get(i, k) * probs.get(j, k);
                        }
                        poisson_binomial_upper_tail(&trial, observed)
                    };
                    (j, pv)
                })
                .collect()
        })
        .collect();

    let mut pvalues = vec![1.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, pv) in row {
            pvalues[i * n + j] = pv;
            pvalues[j * n + i] = pv;
        }
    }

    let dyads: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let raw: Vec<f64> = dyads.iter().map(|&(i, j)| pvalues[i * n + j]).collect();
    let adj = match correction {
        Correction::None => raw.clone(),
        Correction::Holm => holm(&raw),
    };
    let mut adjusted = vec![1.0; n * n];
    let mut network = PeerNetwork::empty(n);
    for (&(i, j), &a) in dyads.iter().zip(&adj) {
        adjusted[i * n + j] = a;
        adjusted[j * n + i] = a;
        if c.get(i, j) > 0 && a <= alpha {
            network.add_edge(i, j);
        }
    }
    Ok(BackboneResult {
        n,
        pvalues,
        adjusted,
        network,
        alpha,
        correction,
    })
}
