//! Matching of consecutive days' mode centroids by minimum total Euclidean
//! distance, including the rectangular case.
//!
//! Among optimal matchings the lexicographically smallest one is returned:
//! previous modes are visited in index order and each prefers the lowest
//! current index, with "unmatched" ranked after every real column.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::DailyModeSet;
use crate::numeric::{euclidean, ordered_sum};
use crate::Day;

/// Relative slack under which two total costs count as equal.
pub const COST_TOLERANCE: f64 = 1e-9;

/// Largest smaller side accepted by [`brute_force_align`].
pub const BRUTE_FORCE_LIMIT: usize = 8;
/// Largest larger side accepted by [`brute_force_align`].
pub const BRUTE_FORCE_SIDE_LIMIT: usize = 12;

/// A partial injective map from previous to current mode indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(previous, current)` pairs in ascending previous index.
    pub pairs: Vec<(usize, usize)>,
    pub retired: Vec<usize>,
    pub born: Vec<usize>,
    pub cost: f64,
}

impl Matching {
    fn from_rows(rows: &[Option<usize>], k_curr: usize, costs: &[Vec<f64>]) -> Matching {
        let pairs: Vec<(usize, usize)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect();
        let retired = rows
            .iter()
            .enumerate()
            .filter(|(_, j)| j.is_none())
            .map(|(i, _)| i)
            .collect();
        let born = (0..k_curr)
            .filter(|j| !pairs.iter().any(|&(_, c)| c == *j))
            .collect();
        let cost = ordered_sum(pairs.iter().map(|&(i, j)| costs[i][j]));
        Matching {
            pairs,
            retired,
            born,
            cost,
        }
    }

    pub fn target_of(&self, prev: usize) -> Option<usize> {
        self.pairs.iter().find(|(i, _)| *i == prev).map(|(_, j)| *j)
    }

    pub fn source_of(&self, curr: usize) -> Option<usize> {
        self.pairs.iter().find(|(_, j)| *j == curr).map(|(i, _)| *i)
    }
}

/// A [`Matching`] stamped with the two days it links.
/// JSON: `{"from_day","to_day","pairs","retired","born","cost"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAlignment {
    pub from_day: Day,
    pub to_day: Day,
    #[serde(flatten)]
    pub matching: Matching,
}

impl ModeAlignment {
    pub fn new(from_day: Day, to_day: Day, matching: Matching) -> Self {
        ModeAlignment {
            from_day,
            to_day,
            matching,
        }
    }

    pub fn target_of(&self, prev: usize) -> Option<usize> {
        self.matching.target_of(prev)
    }

    pub fn source_of(&self, curr: usize) -> Option<usize> {
        self.matching.source_of(curr)
    }
}

/// Pairwise Euclidean distances, rows previous, columns current.
pub fn cost_matrix(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if prev.is_empty() || curr.is_empty() {
        return Err(Error::EmptyInput("centroids"));
    }
    let dim = prev[0].len();
    if let Some(c) = prev.iter().chain(curr).find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: c.len(),
        });
    }
    Ok(prev
        .iter()
        .map(|p| curr.iter().map(|c| euclidean(p, c)).collect())
        .collect())
}

/// Minimum-cost matching of size `min(k_prev, k_curr)` with lexicographic
/// tie-breaking.
pub fn align_modes(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Result<Matching> {
    let costs = cost_matrix(prev, curr)?;
    let rows = lexicographic_optimum(&costs);
    Ok(Matching::from_rows(&rows, curr.len(), &costs))
}

/// [`align_modes`] with ties settled by mode content rather than mode index.
///
/// Both sides are put in a canonical order (means, then variances, then
/// weights) before solving, so when two optima cost the same the choice no
/// longer depends on how the modes happen to be labelled. The optimal cost is
/// unchanged.
pub fn align_mode_sets(prev: &DailyModeSet, curr: &DailyModeSet) -> Result<Matching> {
    let po = content_order(prev);
    let co = content_order(curr);
    let pm: Vec<Vec<f64>> = po.iter().map(|&i| prev.means[i].clone()).collect();
    let cm: Vec<Vec<f64>> = co.iter().map(|&j| curr.means[j].clone()).collect();
    let m = align_modes(&pm, &cm)?;
    let mut pairs: Vec<(usize, usize)> = m.pairs.iter().map(|&(i, j)| (po[i], co[j])).collect();
    pairs.sort_unstable();
    let mut retired: Vec<usize> = m.retired.iter().map(|&i| po[i]).collect();
    retired.sort_unstable();
    let mut born: Vec<usize> = m.born.iter().map(|&j| co[j]).collect();
    born.sort_unstable();
    Ok(Matching { pairs, retired, born, cost: m.cost })
}

fn content_order(set: &DailyModeSet) -> Vec<usize> {
    fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.len().cmp(&b.len()))
    }
    let mut order: Vec<usize> = (0..set.means.len()).collect();
    order.sort_by(|&a, &b| {
        cmp_rows(&set.means[a], &set.means[b])
            .then_with(|| cmp_rows(&set.variances[a], &set.variances[b]))
            .then_with(|| set.weights[a].total_cmp(&set.weights[b]))
            .then(a.cmp(&b))
    });
    order
}

/// Exhaustive search over every injective map; test oracle for [`align_modes`].
pub fn brute_force_align(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Result<Matching> {
    let costs = cost_matrix(prev, curr)?;
    let (kp, kc) = (prev.len(), curr.len());
    if kp.min(kc) > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimitExceeded {
            limit: BRUTE_FORCE_LIMIT,
            got: kp.min(kc),
        });
    }
    if kp.max(kc) > BRUTE_FORCE_SIDE_LIMIT {
        return Err(Error::SizeLimitExceeded {
            limit: BRUTE_FORCE_SIDE_LIMIT,
            got: kp.max(kc),
        });
    }
    let size = kp.min(kc);
    let mut all: Vec<(Vec<Option<usize>>, f64)> = Vec::new();
    let mut current = Vec::with_capacity(kp);
    let mut used = vec![false; kc];
    enumerate(&costs, size, &mut current, &mut used, &mut all);
    let best = all.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    let slack = COST_TOLERANCE * best.max(1.0);
    // enumeration order is already lexicographic
    let (rows, _) = all
        .into_iter()
        .find(|(_, c)| *c <= best + slack)
        .expect("at least one map");
    Ok(Matching::from_rows(&rows, kc, &costs))
}

fn enumerate(
    costs: &[Vec<f64>],
    size: usize,
    current: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    out: &mut Vec<(Vec<Option<usize>>, f64)>,
) {
    let i = current.len();
    if i == costs.len() {
        if current.iter().flatten().count() == size {
            let total: f64 = current
                .iter()
                .enumerate()
                .filter_map(|(r, c)| c.map(|c| costs[r][c]))
                .sum();
            out.push((current.clone(), total));
        }
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            current.push(Some(j));
            enumerate(costs, size, current, used, out);
            current.pop();
            used[j] = false;
        }
    }
    current.push(None);
    enumerate(costs, size, current, used, out);
    current.pop();
}

/// Same mapping with `TA` disabled: identity when the counts agree, otherwise
/// every previous mode retires and every current mode is newborn.
pub fn identity_or_rebirth(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Result<Matching> {
    let costs = cost_matrix(prev, curr)?;
    let rows: Vec<Option<usize>> = if prev.len() == curr.len() {
        (0..prev.len()).map(Some).collect()
    } else {
        vec![None; prev.len()]
    };
    Ok(Matching::from_rows(&rows, curr.len(), &costs))
}

/// Row-by-row refinement: fix each previous mode to the first candidate that
/// still admits a globally optimal completion.
///
/// Only edges that are tight under one optimal dual solution can appear in
/// any optimal matching, so a row with a single tight candidate is settled
/// without further solves.
fn lexicographic_optimum(costs: &[Vec<f64>]) -> Vec<Option<usize>> {
    let kp = costs.len();
    let kc = costs[0].len();
    let all_rows: Vec<usize> = (0..kp).collect();
    let all_cols: Vec<usize> = (0..kc).collect();
    let full = solve_rect(costs, &all_rows, &all_cols);
    let best = full.cost;
    let scale = costs.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs()));
    let slack = COST_TOLERANCE * best.max(1.0);
    let tight_tol = COST_TOLERANCE * scale * (kp.max(kc) as f64);
    let n = kp.max(kc);
    let reduced = |i: usize, j: usize| {
        let c = if j < kc { costs[i][j] } else { 0.0 };
        c - full.u[i] - full.v[j]
    };

    let mut rows_left: Vec<usize> = all_rows.clone();
    let mut cols_left: Vec<usize> = all_cols.clone();
    let mut fixed = 0.0;
    let mut out = vec![None; kp];
    for i in 0..kp {
        rows_left.retain(|&r| r != i);
        // candidates in preference order; leaving the row unmatched is only
        // possible while the remaining rows can still fill every column
        let mut candidates: Vec<Option<usize>> = cols_left
            .iter()
            .copied()
            .filter(|&j| reduced(i, j).abs() <= tight_tol)
            .map(Some)
            .collect();
        let may_skip = kp > kc
            && rows_left.len() >= cols_left.len()
            && (kc..n).any(|j| reduced(i, j).abs() <= tight_tol);
        if may_skip {
            candidates.push(None);
        }
        if candidates.is_empty() {
            // tolerance too tight for this instance; consider everything
            candidates = cols_left.iter().copied().map(Some).collect();
            if kp > kc && rows_left.len() >= cols_left.len() {
                candidates.push(None);
            }
        }

        let mut chosen = None;
        if candidates.len() == 1 {
            chosen = Some(candidates[0]);
        } else {
            let mut fallback: Option<(Option<usize>, f64)> = None;
            for &cand in &candidates {
                let total = match cand {
                    Some(j) => {
                        let rest: Vec<usize> = cols_left.iter().copied().filter(|&c| c != j).collect();
                        fixed + costs[i][j] + solve_rect(costs, &rows_left, &rest).cost
                    }
                    None => fixed + solve_rect(costs, &rows_left, &cols_left).cost,
                };
                if total <= best + slack {
                    chosen = Some(cand);
                    break;
                }
                if fallback.map_or(true, |(_, t)| total < t) {
                    fallback = Some((cand, total));
                }
            }
            if chosen.is_none() {
                chosen = fallback.map(|f| f.0);
            }
        }
        let cand = chosen.expect("at least one candidate");
        if let Some(j) = cand {
            fixed += costs[i][j];
            cols_left.retain(|&c| c != j);
        }
        out[i] = cand;
    }
    out
}

struct Solved {
    cost: f64,
    /// Row potentials, indexed by position in the padded problem.
    u: Vec<f64>,
    /// Column potentials; indices past the real columns are dummies.
    v: Vec<f64>,
}

/// Optimal cost of matching `min(|rows|, |cols|)` pairs within the given
/// sub-matrix, via the potentials form of the Hungarian method on a
/// zero-padded square matrix.
fn solve_rect(costs: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Solved {
    let n = rows.len().max(cols.len());
    if rows.is_empty() || cols.is_empty() {
        return Solved {
            cost: 0.0,
            u: vec![0.0; n],
            v: vec![0.0; n],
        };
    }
    let cell = |r: usize, c: usize| -> f64 {
        if r < rows.len() && c < cols.len() {
            costs[rows[r]][cols[c]]
        } else {
            0.0
        }
    };
    let (assignment, u, v) = hungarian(n, cell);
    let cost = assignment
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < rows.len() && c < cols.len())
        .map(|(r, &c)| cell(r, c))
        .sum();
    Solved { cost, u, v }
}

/// Square assignment of size `n`. Returns the column of every row and the
/// row and column potentials (reduced costs `c - u - v` are non-negative and
/// zero on the assignment).
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    (out, u[1..].to_vec(), v[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn identical_sets_align_to_identity() {
        let a = vec![vec![0.0, 1.0], vec![3.0, 2.0], vec![-1.0, 5.0]];
        let m = align_modes(&a, &a).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(m.cost, 0.0);
    }

    #[test]
    fn swapped_pair_is_detected() {
        let m = align_modes(&pts(&[0.0, 10.0]), &pts(&[10.1, 0.1])).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert!((m.cost - 0.2).abs() < 1e-12);
    }

    #[test]
    fn equal_costs_pick_identity() {
        // equilateral triangle against its own centroid shifted far away
        let s = 3f64.sqrt() / 2.0;
        let a = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.5, s, 0.0]];
        let far = vec![vec![0.5, s / 3.0, 7.0]; 3];
        assert_eq!(brute_force_align(&a, &far).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(align_modes(&a, &far).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn rectangular_cases_retire_and_give_birth() {
        let m = align_modes(&pts(&[0.0, 5.0, 10.0]), &pts(&[9.0, 1.0])).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 0)]);
        assert_eq!(m.retired, vec![1]);
        assert!(m.born.is_empty());
        let m = align_modes(&pts(&[9.0, 1.0]), &pts(&[0.0, 5.0, 10.0])).unwrap();
        assert_eq!(m.pairs, vec![(0, 2), (1, 0)]);
        assert_eq!(m.born, vec![1]);
    }

    #[test]
    fn singleton_pairing() {
        let m = brute_force_align(&pts(&[1.0]), &pts(&[4.0])).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.cost, 3.0);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let a = pts(&[0.0; 9]);
        assert!(matches!(
            brute_force_align(&a, &a),
            Err(Error::SizeLimitExceeded { limit: 8, got: 9 })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            align_modes(&[vec![0.0]], &[vec![0.0, 1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn alignment_json_shape() {
        let d = Day::from_ymd_opt(2024, 1, 2).unwrap();
        let a = ModeAlignment::new(d, d.succ_opt().unwrap(), align_modes(&pts(&[0.0, 1.0]), &pts(&[1.0])).unwrap());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"from_day":"2024-01-02","to_day":"2024-01-03","pairs":[[1,0]],"retired":[0],"born":[],"cost":0.0}"#
        );
    }

    #[test]
    fn rebirth_without_alignment() {
        let m = identity_or_rebirth(&pts(&[0.0, 1.0]), &pts(&[1.0, 0.0])).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        let m = identity_or_rebirth(&pts(&[0.0, 1.0]), &pts(&[1.0])).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!((m.retired, m.born), (vec![0, 1], vec![0]));
    }

    #[test]
    fn large_instances_stay_fast() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut cloud = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..8).map(|_| rng.gen::<f64>()).collect()).collect()
        };
        let (a, b) = (cloud(150), cloud(140));
        let start = std::time::Instant::now();
        let m = align_modes(&a, &b).unwrap();
        assert_eq!(m.pairs.len(), 140);
        assert_eq!(m.retired.len(), 10);
        assert!(start.elapsed().as_secs_f64() < 2.0);
    }

    fn centroids(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..=max)
    }

    fn mode_set(means: Vec<Vec<f64>>) -> DailyModeSet {
        let k = means.len();
        let dim = means[0].len();
        DailyModeSet {
            day: Day::from_ymd_opt(2024, 1, 3).unwrap(),
            k,
            dim,
            weights: vec![1.0 / k as f64; k],
            variances: vec![vec![1.0; dim]; k],
            means,
            loglik: 0.0,
        }
    }

    #[test]
    fn content_order_settles_twin_ties_independently_of_labels() {
        // two current modes sit on the same point, so either can take the match
        let prev = mode_set(pts(&[0.0, 5.0]));
        let mut curr = mode_set(pts(&[5.2, 0.1, 0.1]));
        curr.weights = vec![0.5, 0.3, 0.2];
        let base = align_mode_sets(&prev, &curr).unwrap();
        for perm in [[1usize, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0]] {
            let mut moved = curr.clone();
            moved.means = perm.iter().map(|&p| curr.means[p].clone()).collect();
            moved.weights = perm.iter().map(|&p| curr.weights[p]).collect();
            let m = align_mode_sets(&prev, &moved).unwrap();
            assert_eq!(m.cost, base.cost);
            for (i, j) in &m.pairs {
                assert_eq!(base.target_of(*i), Some(perm[*j]));
            }
            assert_eq!(perm[m.born[0]], base.born[0]);
        }
        assert_eq!(base.born, vec![1]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(a in centroids(6), b in centroids(6)) {
            let fast = align_modes(&a, &b).unwrap();
            let slow = brute_force_align(&a, &b).unwrap();
            prop_assert_eq!(fast.cost, slow.cost);
            prop_assert_eq!(fast.pairs.len(), a.len().min(b.len()));
        }

        #[test]
        fn ties_break_like_exhaustive_search(
            a in prop::collection::vec(prop::collection::vec(0..2i32, 2), 1..=5),
            b in prop::collection::vec(prop::collection::vec(0..2i32, 2), 1..=5),
        ) {
            let f = |v: &Vec<Vec<i32>>| -> Vec<Vec<f64>> { v.iter().map(|p| p.iter().map(|x| *x as f64).collect()).collect() };
            let (a, b) = (f(&a), f(&b));
            let fast = align_modes(&a, &b).unwrap();
            let slow = brute_force_align(&a, &b).unwrap();
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn reverse_direction_has_equal_cost(a in centroids(6), b in centroids(6)) {
            let ab = align_modes(&a, &b).unwrap();
            let ba = align_modes(&b, &a).unwrap();
            prop_assert!((ab.cost - ba.cost).abs() <= 1e-9 * ab.cost.max(1.0));
            for (i, j) in &ab.pairs {
                prop_assert_eq!(ba.target_of(*j), Some(*i));
            }
        }

        #[test]
        fn relabelling_previous_modes_composes(a in centroids(6), b in centroids(6), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..a.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let relabelled: Vec<Vec<f64>> = perm.iter().map(|&p| a[p].clone()).collect();
            let base = align_modes(&a, &b).unwrap();
            let moved = align_modes(&relabelled, &b).unwrap();
            prop_assert_eq!(moved.cost, base.cost);
            for (new_i, &old_i) in perm.iter().enumerate() {
                prop_assert_eq!(moved.target_of(new_i), base.target_of(old_i));
            }
        }
    }
}
