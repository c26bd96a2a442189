//! Clustering and recovery metrics: optimally matched accuracy, normalized
//! mutual information, adjusted Rand index, counterpart-agreement rate for
//! realignment, and normalized imputation error.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmileError};

/// Minimum-cost assignment of rows to columns for a square cost matrix.
/// Among co-optimal assignments, returns the lexicographically smallest
/// (row 0 takes the lowest column it can without losing optimality, then
/// row 1, and so on).
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if n == 0 || cost.ncols() != n {
        return Err(SmileError::argument(format!(
            "assignment needs a nonempty square matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(SmileError::argument("assignment costs must be finite"));
    }

    let max_abs = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-9 * (1.0 + max_abs);
    let optimum = solve_assignment(cost, &[])?;

    // Fix columns row by row, keeping the remaining problem optimal.
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for row in 0..n {
        let mut chosen = None;
        for col in 0..n {
            if fixed.contains(&col) {
                continue;
            }
            fixed.push(col);
            let total = solve_assignment(cost, &fixed)?;
            fixed.pop();
            if total <= optimum + tol * (row + 1) as f64 {
                chosen = Some(col);
                break;
            }
        }
        let col = chosen.ok_or_else(|| {
            SmileError::numeric(format!(
                "assignment refinement found no feasible column for row {row}"
            ))
        })?;
        fixed.push(col);
    }
    Ok(fixed)
}

/// Total cost of the optimal assignment with the first `fixed.len()` rows
/// forced to the given columns; the potentials method solves the rest.
fn solve_assignment(cost: &Array2<f64>, fixed: &[usize]) -> Result<f64> {
    let n = cost.nrows();
    let mut forced = 0.0;
    for (row, &col) in fixed.iter().enumerate() {
        forced += cost[(row, col)];
    }
    let rows: Vec<usize> = (fixed.len()..n).collect();
    let cols: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
    let m = rows.len();
    if m == 0 {
        return Ok(forced);
    }

    // Shortest augmenting paths with potentials, 1-indexed internally.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // column -> row (1-indexed)
    for r in 1..=m {
        matched_row[0] = r;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(rows[i0 - 1], cols[j - 1])] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = forced;
    for j in 1..=m {
        total += cost[(rows[matched_row[j] - 1], cols[j - 1])];
    }
    Ok(total)
}

fn check_partitions(pred: &[usize], truth: &[usize]) -> Result<usize> {
    if pred.is_empty() {
        return Err(SmileError::argument("empty label sequences"));
    }
    if pred.len() != truth.len() {
        return Err(SmileError::argument(format!(
            "label sequences differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.len())
}

/// Contingency table with dense label ids; rows = pred, cols = truth.
fn contingency(pred: &[usize], truth: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let dense = |labels: &[usize]| {
        let mut map = std::collections::BTreeMap::new();
        labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect::<Vec<usize>>()
    };
    let p = dense(pred);
    let t = dense(truth);
    let kp = p.iter().max().unwrap() + 1;
    let kt = t.iter().max().unwrap() + 1;
    let mut table = Array2::zeros((kp, kt));
    for (&a, &b) in p.iter().zip(&t) {
        table[(a, b)] += 1.0;
    }
    let row_sums = table.rows().into_iter().map(|r| r.sum()).collect();
    let col_sums = table.columns().into_iter().map(|c| c.sum()).collect();
    (table, row_sums, col_sums)
}

/// Clustering accuracy: best agreement fraction over one-to-one relabelings
/// of the predicted clusters, found by minimum-cost assignment on the
/// negated contingency table (padded square with zeros).
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_partitions(pred, truth)?;
    let (table, _, _) = contingency(pred, truth);
    let s = table.nrows().max(table.ncols());
    let mut cost = Array2::zeros((s, s));
    for ((i, j), &c) in table.indexed_iter() {
        cost[(i, j)] = -c;
    }
    let assignment = hungarian(&cost)?;
    let mut agree = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        if i < table.nrows() && j < table.ncols() {
            agree += table[(i, j)];
        }
    }
    Ok(agree / n as f64)
}

fn entropy_of(sums: &[f64], n: f64) -> f64 {
    -sums
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| (s / n) * (s / n).ln())
        .sum::<f64>()
}

/// Normalized mutual information with arithmetic-mean normalization.
/// Identical single-cluster partitions score 1; a constant prediction
/// against a varied truth scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_partitions(pred, truth)? as f64;
    let (table, rows, cols) = contingency(pred, truth);
    let hp = entropy_of(&rows, n);
    let ht = entropy_of(&cols, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0); // both single-cluster: identical partitions
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0.0 {
            mi += (c / n) * ((c * n) / (rows[i] * cols[j])).ln();
        }
    }
    let denom = 0.5 * (hp + ht);
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index (pair-counting, chance-corrected). A degenerate
/// denominator (both partitions single-cluster) scores 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_partitions(pred, truth)? as f64;
    let (table, rows, cols) = contingency(pred, truth);
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = rows.iter().map(|&s| pairs(s)).sum();
    let sum_cols: f64 = cols.iter().map(|&s| pairs(s)).sum();
    let expected = sum_rows * sum_cols / pairs(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Counterpart-agreement rate of realignment: the fraction of matched
/// counterparts sharing the anchor's true category.
pub fn car(counterpart_labels: &[usize], anchor_labels: &[usize]) -> Result<f64> {
    let n = check_partitions(counterpart_labels, anchor_labels)?;
    let same = counterpart_labels
        .iter()
        .zip(anchor_labels)
        .filter(|&(a, b)| a == b)
        .count();
    Ok(same as f64 / n as f64)
}

/// Root mean square imputation error normalized by the truth value range.
pub fn nrmse(imputed: &[f64], truth: &[f64]) -> Result<f64> {
    if imputed.is_empty() || imputed.len() != truth.len() {
        return Err(SmileError::argument(format!(
            "imputed/truth length mismatch: {} vs {}",
            imputed.len(),
            truth.len()
        )));
    }
    let lo = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(SmileError::argument(
            "truth values are constant; normalized error is undefined",
        ));
    }
    let mse = imputed
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / imputed.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Metric values of one evaluation. Each field appears only where the
/// matching truth exists: acc/nmi/ari need labels, car needs unaligned
/// instances (plus permutation truth), nrmse needs held-out missing rows.
/// An absent field is an explicit `None`, never a placeholder zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub car: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nrmse: Option<f64>,
}

/// One evaluation with its provenance, serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub values: MetricValues,
    pub seed: u64,
    pub config_hash: String,
    pub eta: f64,
    pub zeta: f64,
}

/// FNV-1a 64-bit hash in hex; used to fingerprint configurations.
pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", crate::rng::fnv1a64(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyRng;
    use ndarray::array;

    fn all_permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in all_permutations(k - 1) {
            for slot in 0..k {
                let mut q: Vec<usize> =
                    p.iter().map(|&x| if x >= slot { x + 1 } else { x }).collect();
                q.insert(0, slot);
                out.push(q);
            }
        }
        out
    }

    fn brute_assignment(cost: &Array2<f64>) -> (Vec<usize>, f64) {
        let n = cost.nrows();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in all_permutations(n) {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            let better = match &best {
                None => true,
                Some((bp, bt)) => total < bt - 1e-12 || ((total - bt).abs() <= 1e-12 && p < *bp),
            };
            if better {
                best = Some((p, total));
            }
        }
        best.unwrap()
    }

    #[test]
    fn diagonal_costs_select_the_identity() {
        let cost = array![[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn equal_costs_give_the_lexicographically_smallest_assignment() {
        let cost = Array2::from_elem((4, 4), 3.5);
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn assignment_matches_factorial_brute_force() {
        for seed in 0..60u64 {
            let mut rng = KeyRng::new(seed, &[0x4855]);
            let n = 2 + rng.below(4);
            let cost = Array2::from_shape_fn((n, n), |_| rng.below(7) as f64);
            let got = hungarian(&cost).unwrap();
            let (want_perm, want_total) = brute_assignment(&cost);
            let got_total: f64 = got.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            assert!((got_total - want_total).abs() < 1e-9, "seed {seed}");
            assert_eq!(got, want_perm, "seed {seed}: not lexicographically smallest");
        }
    }

    #[test]
    fn non_square_or_non_finite_costs_are_rejected() {
        assert!(hungarian(&Array2::zeros((2, 3))).is_err());
        assert!(hungarian(&Array2::zeros((0, 0))).is_err());
        let mut bad = Array2::zeros((2, 2));
        bad[(0, 0)] = f64::NAN;
        assert!(hungarian(&bad).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(acc(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(acc(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(acc(&[2, 2, 0, 1], &[2, 2, 0, 1]).unwrap(), 1.0);
        assert!(acc(&[], &[]).is_err());
        assert!(acc(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn accuracy_handles_unequal_cluster_counts() {
        // 3 predicted clusters vs 2 true categories and vice versa.
        let a = acc(&[0, 1, 2, 2], &[0, 0, 1, 1]).unwrap();
        assert!((a - 0.75).abs() < 1e-12, "{a}");
        let a = acc(&[0, 0, 1, 1], &[0, 1, 2, 2]).unwrap();
        assert!((a - 0.75).abs() < 1e-12, "{a}");
    }

    fn brute_acc(pred: &[usize], truth: &[usize]) -> f64 {
        let k = pred.iter().chain(truth).max().unwrap() + 1;
        all_permutations(k)
            .into_iter()
            .map(|p| {
                pred.iter().zip(truth).filter(|&(&a, &b)| p[a] == b).count() as f64
                    / pred.len() as f64
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn accuracy_equals_brute_force_for_small_k() {
        for seed in 0..50u64 {
            let mut rng = KeyRng::new(seed, &[0x4143]);
            let k = 2 + rng.below(4); // up to 5 labels
            let n = 10 + rng.below(30);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let fast = acc(&pred, &truth).unwrap();
            let slow = brute_acc(&pred, &truth);
            assert!((fast - slow).abs() < 1e-12, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn relabeling_leaves_matching_metrics_unchanged() {
        let mut rng = KeyRng::new(3, &[0x524C]);
        let pred: Vec<usize> = (0..40).map(|_| rng.below(3)).collect();
        let truth: Vec<usize> = (0..40).map(|_| rng.below(4)).collect();
        let relabel_p: Vec<usize> = pred.iter().map(|&l| [2, 0, 1][l]).collect();
        let relabel_t: Vec<usize> = truth.iter().map(|&l| [3, 1, 0, 2][l]).collect();
        for (f, name) in [
            (acc as fn(&[usize], &[usize]) -> Result<f64>, "acc"),
            (nmi, "nmi"),
            (ari, "ari"),
        ] {
            let a = f(&pred, &truth).unwrap();
            let b = f(&relabel_p, &relabel_t).unwrap();
            assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
        }
    }

    /// Independent plug-in oracle computed straight from the definition.
    fn nmi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len() as f64;
        let kp = pred.iter().max().unwrap() + 1;
        let kt = truth.iter().max().unwrap() + 1;
        let mut joint = vec![vec![0.0; kt]; kp];
        for (&a, &b) in pred.iter().zip(truth) {
            joint[a][b] += 1.0 / n;
        }
        let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pb: Vec<f64> = (0..kt).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
        let mut mi = 0.0;
        for i in 0..kp {
            for j in 0..kt {
                if joint[i][j] > 0.0 {
                    mi += joint[i][j] * (joint[i][j] / (pa[i] * pb[j])).ln();
                }
            }
        }
        let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
        mi / (0.5 * (h(&pa) + h(&pb)))
    }

    #[test]
    fn nmi_examples_and_oracle() {
        assert_eq!(nmi(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 1.0); // both single-cluster
        let pred = [0, 0, 1, 1, 2, 2];
        let truth = [0, 0, 0, 1, 1, 1];
        let got = nmi(&pred, &truth).unwrap();
        let want = nmi_oracle(&pred, &truth);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    /// Pair-counting oracle from the four pair-agreement counts.
    fn ari_oracle(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let (mut both, mut pred_only, mut truth_only, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_p = pred[i] == pred[j];
                let same_t = truth[i] == truth[j];
                match (same_p, same_t) {
                    (true, true) => both += 1.0,
                    (true, false) => pred_only += 1.0,
                    (false, true) => truth_only += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let num = 2.0 * (both * neither - pred_only * truth_only);
        let den = (both + pred_only) * (pred_only + neither)
            + (both + truth_only) * (truth_only + neither);
        if den == 0.0 {
            1.0
        } else {
            num / den
        }
    }

    #[test]
    fn ari_examples_and_oracle() {
        assert_eq!(ari(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        let pred = [0, 0, 1, 1, 2, 2];
        let truth = [0, 0, 0, 1, 1, 1];
        let got = ari(&pred, &truth).unwrap();
        let want = ari_oracle(&pred, &truth);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        for seed in 0..30u64 {
            let mut rng = KeyRng::new(seed, &[0x4152]);
            let n = 8 + rng.below(20);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
            let got = ari(&pred, &truth).unwrap();
            let want = ari_oracle(&pred, &truth);
            assert!((got - want).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn ari_of_independent_partitions_is_centered_on_zero() {
        let mut total = 0.0;
        for trial in 0..1000u64 {
            let mut rng = KeyRng::new(trial, &[0x6172]);
            let pred: Vec<usize> = (0..60).map(|_| rng.below(3)).collect();
            let truth: Vec<usize> = (0..60).map(|_| rng.below(3)).collect();
            total += ari(&pred, &truth).unwrap();
        }
        let mean = total / 1000.0;
        assert!(mean.abs() < 0.02, "mean ARI {mean}");
    }

    #[test]
    fn car_counts_matching_categories() {
        assert_eq!(car(&[1, 1, 2], &[1, 1, 2]).unwrap(), 1.0);
        assert_eq!(car(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(car(&[1, 0, 2, 2], &[1, 1, 2, 0]).unwrap(), 0.5);
        assert!(car(&[], &[]).is_err());
    }

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let got = nrmse(&[0.5, 1.5, 0.5, 1.5], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((got - 0.5).abs() < 1e-12, "{got}");
        // Scale covariance.
        let a = nrmse(&[0.3, 0.9], &[0.0, 1.0]).unwrap();
        let b = nrmse(&[30.0, 90.0], &[0.0, 100.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(nrmse(&[1.0], &[2.0]).is_err()); // constant truth
        assert!(nrmse(&[], &[]).is_err());
    }

    #[test]
    fn report_serializes_flat_with_exact_field_names() {
        let report = MetricsReport {
            values: MetricValues {
                acc: Some(0.9),
                nmi: Some(0.8),
                ari: Some(0.7),
                car: Some(0.6),
                nrmse: None,
            },
            seed: 5,
            config_hash: fnv1a64_hex(b"demo"),
            eta: 0.5,
            zeta: 0.5,
        };
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        for key in ["acc", "nmi", "ari", "car", "seed", "config_hash", "eta", "zeta"] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        assert!(!obj.contains_key("nrmse"));
        assert!(!obj.contains_key("values"));
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn fnv_hash_is_stable() {
        assert_eq!(fnv1a64_hex(b""), "cbf29ce484222325");
        assert_eq!(fnv1a64_hex(b"a"), "af63dc4c8601ec8c");
        assert_ne!(fnv1a64_hex(b"ab"), fnv1a64_hex(b"ba"));
    }
}
