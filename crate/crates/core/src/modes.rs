//! Daily Gaussian mixtures over argument embeddings.
//!
//! Covariances are diagonal with a variance floor. All density arithmetic runs
//! in log space, and every sum over the component index is order independent,
//! so fitting from a permuted warm start yields an exactly permuted result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{dot, l2_norm, log_sum_exp, ordered_sum, squared_distance};
use crate::Day;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One day's fitted mixture. JSON: `{"day","k","dim","weights","means","variances","loglik"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyModeSet {
    pub day: Day,
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub loglik: f64,
}

impl DailyModeSet {
    fn log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xd, md), vd) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let diff = xd - md;
            acc += LN_2PI + vd.ln() + diff * diff / vd;
        }
        -0.5 * acc
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|k| self.weights[k].ln() + self.log_density(k, x))
            .collect()
    }

    /// Posterior component probabilities of `x` under this mixture.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(normalize_log_row(&self.log_joint(x)))
    }

    /// Copy with components reordered so that new component `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> DailyModeSet {
        assert_eq!(perm.len(), self.k, "permutation length");
        DailyModeSet {
            day: self.day,
            k: self.k,
            dim: self.dim,
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            means: perm.iter().map(|&p| self.means[p].clone()).collect(),
            variances: perm.iter().map(|&p| self.variances[p].clone()).collect(),
            loglik: self.loglik,
        }
    }

    /// Total log-likelihood of `points` under this mixture.
    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|x| log_sum_exp(&self.log_joint(x))).sum()
    }
}

/// Free-function form of [`DailyModeSet::posterior`].
pub fn posterior_under(modes: &DailyModeSet, x: &[f64]) -> Result<Vec<f64>> {
    modes.posterior(x)
}

fn normalize_log_row(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    logs.iter().map(|l| (l - lse).exp().clamp(0.0, 1.0)).collect()
}

/// Rows follow argument order, columns follow mode index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResponsibilityMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Column mass `Σ_i ω_{i,k}`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> ResponsibilityMatrix {
        ResponsibilityMatrix {
            ids: self.ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| perm.iter().map(|&p| r[p]).collect())
                .collect(),
        }
    }

    /// Each row replaced by the one-hot vector of its largest entry
    /// (lowest index on exact ties).
    pub fn hardened(&self) -> ResponsibilityMatrix {
        ResponsibilityMatrix {
            ids: self.ids.clone(),
            rows: self.rows.iter().map(|r| one_hot_argmax(r)).collect(),
        }
    }

    /// Hex SHA-256 over ids and the exact bit patterns of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, row) in self.ids.iter().zip(&self.rows) {
            h.update(id.as_bytes());
            h.update([0u8]);
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn one_hot_argmax(row: &[f64]) -> Vec<f64> {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    let mut out = vec![0.0; row.len()];
    if !row.is_empty() {
        out[best] = 1.0;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k_target: usize,
    pub max_iter: usize,
    /// Stop when the relative log-likelihood gain falls below this.
    pub tol: f64,
    pub variance_floor: f64,
    pub weight_floor: f64,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            k_target: 20,
            max_iter: 200,
            tol: 1e-6,
            variance_floor: 1e-6,
            weight_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeFit {
    pub modes: DailyModeSet,
    pub responsibilities: ResponsibilityMatrix,
    /// Log-likelihood of the initial parameters followed by one entry per M-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits a diagonal mixture with `min(k_target, n)` components.
///
/// When `init` has the same component count and dimension, EM starts from its
/// means; otherwise means are seeded by k-means++ using `opts.seed`.
pub fn fit_daily_modes(
    day: Day,
    ids: &[String],
    points: &[Vec<f64>],
    opts: &GmmOptions,
    init: Option<&DailyModeSet>,
) -> Result<ModeFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput("embeddings"));
    }
    if opts.k_target == 0 {
        return Err(Error::Config("k_target must be at least 1".into()));
    }
    if ids.len() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} embeddings",
            ids.len(),
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    let n = points.len();
    let k = opts.k_target.min(n);

    let means = match init {
        Some(prev) if prev.k == k && prev.dim == dim => prev.means.clone(),
        _ => kmeans_pp(points, k, opts.seed),
    };
    let pooled = pooled_variance(points, opts.variance_floor);
    let mut modes = DailyModeSet {
        day,
        k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![pooled; k],
        loglik: f64::NAN,
    };

    let (mut resp, mut ll) = e_step(&modes, points)?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        m_step(&mut modes, points, &resp, opts);
        iterations += 1;
        let (r, new_ll) = e_step(&modes, points)?;
        resp = r;
        trace.push(new_ll);
        let gain = (new_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = new_ll;
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    modes.loglik = ll;
    Ok(ModeFit {
        modes,
        responsibilities: ResponsibilityMatrix {
            ids: ids.to_vec(),
            rows: resp,
        },
        trace,
        iterations,
        converged,
    })
}

fn e_step(modes: &DailyModeSet, points: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut rows = Vec::with_capacity(points.len());
    let mut ll = 0.0;
    for x in points {
        let logs = modes.log_joint(x);
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::NumericalFailure("non-finite log-likelihood in E-step".into()));
        }
        ll += lse;
        rows.push(logs.iter().map(|l| (l - lse).exp().clamp(0.0, 1.0)).collect());
    }
    Ok((rows, ll))
}

fn m_step(modes: &mut DailyModeSet, points: &[Vec<f64>], resp: &[Vec<f64>], opts: &GmmOptions) {
    let n = points.len() as f64;
    let dim = modes.dim;
    let mut raw_weights = Vec::with_capacity(modes.k);
    for k in 0..modes.k {
        let nk: f64 = resp.iter().map(|r| r[k]).sum();
        raw_weights.push((nk / n).max(opts.weight_floor));
        if nk <= f64::MIN_POSITIVE {
            // no mass: keep the mean, reset to the floor variance
            modes.variances[k] = vec![opts.variance_floor; dim];
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (x, r) in points.iter().zip(resp) {
            for (m, xd) in mean.iter_mut().zip(x) {
                *m += r[k] * xd;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for (x, r) in points.iter().zip(resp) {
            for ((v, xd), md) in var.iter_mut().zip(x).zip(&mean) {
                let d = xd - md;
                *v += r[k] * d * d;
            }
        }
        var.iter_mut()
            .for_each(|v| *v = (*v / nk).max(opts.variance_floor));
        modes.means[k] = mean;
        modes.variances[k] = var;
    }
    let total = ordered_sum(raw_weights.iter().copied());
    modes.weights = raw_weights.iter().map(|w| w / total).collect();
}

/// Per-dimension variance of all points around their common mean, floored.
pub fn pooled_variance(points: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for x in points {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in points {
        for ((v, xd), md) in var.iter_mut().zip(x).zip(&mean) {
            *v += (xd - md) * (xd - md);
        }
    }
    var.into_iter().map(|v| (v / n).max(floor)).collect()
}

/// k-means++ seeding: first centre uniform, the rest with probability
/// proportional to squared distance from the nearest chosen centre.
pub fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// One singleton mode per point: means are the points, variances the pooled
/// per-dimension variance, weights uniform. Responsibilities are the identity.
pub fn singleton_modes(day: Day, ids: &[String], points: &[Vec<f64>], variance_floor: f64) -> Result<ModeFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput("embeddings"));
    }
    let n = points.len();
    let dim = points[0].len();
    let pooled = pooled_variance(points, variance_floor);
    let mut modes = DailyModeSet {
        day,
        k: n,
        dim,
        weights: vec![1.0 / n as f64; n],
        means: points.to_vec(),
        variances: vec![pooled; n],
        loglik: f64::NAN,
    };
    modes.loglik = modes.log_likelihood(points);
    let rows = (0..n)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r
        })
        .collect();
    Ok(ModeFit {
        modes,
        responsibilities: ResponsibilityMatrix {
            ids: ids.to_vec(),
            rows,
        },
        trace: Vec::new(),
        iterations: 0,
        converged: true,
    })
}

/// Linear map into the working space. `Identity` passes vectors through; a
/// fitted basis has orthonormal rows and is frozen for the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    Identity,
    Basis { input_dim: usize, rows: Vec<Vec<f64>> },
}

impl Projection {
    pub fn output_dim(&self) -> Option<usize> {
        match self {
            Projection::Identity => None,
            Projection::Basis { rows, .. } => Some(rows.len()),
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Projection::Identity => Ok(x.to_vec()),
            Projection::Basis { input_dim, rows } => {
                if x.len() != *input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: *input_dim,
                        got: x.len(),
                    });
                }
                Ok(rows.iter().map(|r| dot(r, x)).collect())
            }
        }
    }

    /// Top-`dim` right singular directions of the uncentered sample matrix,
    /// found by subspace iteration. Uncentered so the map stays linear and
    /// contractive on every input.
    pub fn fit(points: &[Vec<f64>], dim: usize, seed: u64) -> Result<Projection> {
        if points.is_empty() {
            return Err(Error::EmptyInput("projection corpus"));
        }
        let input_dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                got: p.len(),
            });
        }
        if dim == 0 || dim > input_dim {
            return Err(Error::Config(format!(
                "projection dimension {dim} outside 1..={input_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..input_dim).map(|_| rng.gen::<f64>() - 0.5).collect())
            .collect();
        orthonormalize(&mut basis, &mut rng);
        for _ in 0..100 {
            // basis <- basis · XᵀX
            let next: Vec<Vec<f64>> = basis
                .iter()
                .map(|b| {
                    let mut out = vec![0.0; input_dim];
                    for x in points {
                        let c = dot(b, x);
                        out.iter_mut().zip(x).for_each(|(o, xd)| *o += c * xd);
                    }
                    out
                })
                .collect();
            basis = next;
            orthonormalize(&mut basis, &mut rng);
        }
        Ok(Projection::Basis {
            input_dim,
            rows: basis,
        })
    }
}

/// Modified Gram-Schmidt; degenerate rows are replaced by random directions.
fn orthonormalize(rows: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..rows.len() {
        for _attempt in 0..8 {
            for j in 0..i {
                let c = dot(&rows[i], &rows[j]);
                let (head, tail) = rows.split_at_mut(i);
                tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= c * b);
            }
            let n = l2_norm(&rows[i]);
            if n > 1e-10 {
                rows[i].iter_mut().for_each(|a| *a /= n);
                break;
            }
            rows[i].iter_mut().for_each(|a| *a = rng.gen::<f64>() - 0.5);
        }
    }
}
