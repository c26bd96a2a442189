//! Clustering on the unit sphere.
//!
//! Latents are compared by cosine similarity, so k-means runs on
//! l2-normalized rows where squared Euclidean distance is 2 - 2*cos. Center
//! updates renormalize the arithmetic mean (spherical k-means). Soft
//! assignments are a temperature softmax over cosine similarity to a fixed
//! center set.
//!
//! Everything here is deterministic given the seed: k-means++ draws from a
//! keyed stream, assignment ties break toward the lowest index, and restarts
//! keep the first-best inertia.

use ndarray::Array2;

use crate::error::{Result, SmileError};
use crate::rng::{mix, KeyRng};

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_REL_TOL: f64 = 1e-6;

/// Rows rescaled to unit norm; a zero-norm row is a numeric error.
pub fn l2_normalize_rows(x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < 1e-30 {
            return Err(SmileError::numeric(format!(
                "cannot normalize zero-norm row {r}"
            )));
        }
        row /= norm;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// k x d unit-norm centers.
    pub centers: Array2<f64>,
    /// Cluster index per input row.
    pub labels: Vec<usize>,
    /// Sum of squared distances between normalized rows and their centers.
    pub inertia: f64,
    pub iterations: usize,
}

/// k-means++ seeding on normalized rows: first index uniform, then squared
/// distance (2 - 2*cos) weighting. Returns distinct row indices.
fn kmeans_pp_indices(xn: &Array2<f64>, k: usize, rng: &mut KeyRng) -> Vec<usize> {
    let n = xn.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.below(n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| 2.0 - 2.0 * xn.row(i).dot(&xn.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // Every remaining row coincides with a chosen center; take the
            // lowest unchosen index so the draw stays deterministic.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        } else {
            let mut target = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            let d = 2.0 - 2.0 * xn.row(i).dot(&xn.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

/// Nearest center by cosine; ties break toward the lower center index.
/// Takes a view because matrix products of non-standard-layout inputs can
/// come back column-major, where rows are not plain slices.
fn nearest_center(cos_row: ndarray::ArrayView1<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_cos = cos_row[0];
    for (j, &c) in cos_row.iter().enumerate().skip(1) {
        if c > best_cos {
            best_cos = c;
            best = j;
        }
    }
    (best, best_cos)
}

fn assign(xn: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>, f64) {
    let cos = xn.dot(&centers.t());
    let mut labels = Vec::with_capacity(xn.nrows());
    let mut d2 = Vec::with_capacity(xn.nrows());
    let mut inertia = 0.0;
    for row in cos.rows() {
        let (j, c) = nearest_center(row);
        let d = 2.0 - 2.0 * c;
        labels.push(j);
        d2.push(d);
        inertia += d;
    }
    (labels, d2, inertia)
}

/// Re-seed empty clusters on the rows farthest from their assigned centers
/// (one distinct row per empty cluster, lowest index on ties).
fn reseed_empty(
    xn: &Array2<f64>,
    centers: &mut Array2<f64>,
    labels: &[usize],
    d2: &[f64],
) -> bool {
    let k = centers.nrows();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut taken: Vec<usize> = Vec::new();
    let mut reseeded = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for i in 0..xn.nrows() {
            if d2[i] > far_d && !taken.contains(&i) {
                far_d = d2[i];
                far = Some(i);
            }
        }
        if let Some(i) = far {
            centers.row_mut(j).assign(&xn.row(i));
            taken.push(i);
            reseeded = true;
        }
    }
    reseeded
}

/// Lloyd iterations on the sphere. `x` need not be normalized.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64) -> Result<KmeansFit> {
    if k == 0 {
        return Err(SmileError::argument("k must be positive"));
    }
    if x.nrows() < k {
        return Err(SmileError::argument(format!(
            "k-means needs at least k={k} rows, got {}",
            x.nrows()
        )));
    }
    let xn = l2_normalize_rows(x)?;
    let mut rng = KeyRng::new(seed, &[0x6B6D]);
    let seeds = kmeans_pp_indices(&xn, k, &mut rng);
    let mut centers = Array2::zeros((k, xn.ncols()));
    for (j, &i) in seeds.iter().enumerate() {
        centers.row_mut(j).assign(&xn.row(i));
    }

    let (mut labels, mut d2, mut inertia) = assign(&xn, &centers);
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        if reseed_empty(&xn, &mut centers, &labels, &d2) {
            let re = assign(&xn, &centers);
            labels = re.0;
            inertia = re.2;
        }

        // Mean of assigned rows, renormalized back onto the sphere.
        let mut sums = Array2::<f64>::zeros((k, xn.ncols()));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += &xn.row(i);
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue; // keep the previous center; reseed handles it
            }
            let mut row = sums.row_mut(j);
            let norm = row.dot(&row).sqrt();
            if norm < 1e-30 {
                continue; // perfectly cancelling cluster; keep previous center
            }
            row /= norm;
            centers.row_mut(j).assign(&row);
        }

        let (new_labels, new_d2, new_inertia) = assign(&xn, &centers);
        labels = new_labels;
        d2 = new_d2;
        let drop = inertia - new_inertia;
        let done = drop.abs() < KMEANS_REL_TOL * inertia.max(1e-30);
        inertia = new_inertia;
        if done {
            break;
        }
    }

    Ok(KmeansFit { centers, labels, inertia, iterations })
}

/// Best of `restarts` seeded runs by inertia (first winner on ties).
pub fn kmeans_best_of(x: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KmeansFit> {
    if restarts == 0 {
        return Err(SmileError::argument("restarts must be positive"));
    }
    let mut best: Option<KmeansFit> = None;
    for r in 0..restarts {
        let fit = kmeans(x, k, mix(seed, &[0x7265, r as u64]))?;
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Softmax over cosine similarity to each center at temperature `tau`.
/// Rows of the result are probability distributions over the k centers.
pub fn soft_assign(z: &Array2<f64>, centers: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if !(tau > 0.0) {
        return Err(SmileError::argument("softmax temperature must be positive"));
    }
    if z.ncols() != centers.ncols() {
        return Err(SmileError::argument(format!(
            "latents have {} columns but centers have {}",
            z.ncols(),
            centers.ncols()
        )));
    }
    if centers.nrows() == 0 {
        return Err(SmileError::argument("need at least one center"));
    }
    let zn = l2_normalize_rows(z)?;
    let cn = l2_normalize_rows(centers)?;
    let mut logits = zn.dot(&cn.t());
    logits.mapv_inplace(|c| c / tau);
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|l| (l - max).exp());
        let s = row.sum();
        row /= s;
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyRng;
    use ndarray::array;

    #[test]
    fn plus_plus_picks_each_distinct_far_row_once() {
        // 4 well-separated directions; every seeding of k=4 must select all
        // four distinct indices, for any stream.
        let x = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for seed in 0..50 {
            let mut rng = KeyRng::new(seed, &[1]);
            let mut idx = kmeans_pp_indices(&x, 4, &mut rng);
            idx.sort_unstable();
            assert_eq!(idx, vec![0, 1, 2, 3], "seed {seed}");
        }
    }

    #[test]
    fn duplicates_fall_back_to_distinct_rows() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for seed in 0..20 {
            let mut rng = KeyRng::new(seed, &[2]);
            let idx = kmeans_pp_indices(&x, 2, &mut rng);
            let mut dirs: Vec<usize> = idx.iter().map(|&i| if x[(i, 0)] > 0.5 { 0 } else { 1 }).collect();
            dirs.sort_unstable();
            assert_eq!(dirs, vec![0, 1], "seed {seed} picked {idx:?}");
        }
    }

    fn sphere_blobs(k: usize, per: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = KeyRng::new(seed, &[3]);
        let mut x = Array2::zeros((k * per, d));
        let mut truth = Vec::new();
        for c in 0..k {
            for i in 0..per {
                let r = c * per + i;
                for j in 0..d {
                    x[(r, j)] = if j == c { 1.0 } else { 0.0 } + 0.05 * rng.normal();
                }
                truth.push(c);
            }
        }
        (x, truth)
    }

    #[test]
    fn separable_sphere_blobs_are_recovered_exactly() {
        let (x, truth) = sphere_blobs(4, 25, 6, 9);
        let fit = kmeans(&x, 4, 11).unwrap();
        // Brute-force best label matching over all 4! permutations.
        let perms = permutations(4);
        let best = perms
            .iter()
            .map(|p| {
                truth
                    .iter()
                    .zip(&fit.labels)
                    .filter(|&(&t, &l)| p[l] == t)
                    .count()
            })
            .max()
            .unwrap();
        assert_eq!(best, truth.len(), "labels {:?}", fit.labels);
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut items: Vec<usize> = (0..k).collect();
        permute(&mut items, 0, &mut out);
        out
    }

    fn permute(items: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
        if at == items.len() {
            out.push(items.clone());
            return;
        }
        for i in at..items.len() {
            items.swap(at, i);
            permute(items, at + 1, out);
            items.swap(at, i);
        }
    }

    #[test]
    fn k_distinct_points_reach_zero_inertia() {
        let x = array![[2.0, 0.0, 0.1], [0.0, 3.0, 0.0], [-1.0, -1.0, 0.5]];
        let fit = kmeans(&x, 3, 5).unwrap();
        assert!(fit.inertia.abs() < 1e-12, "inertia {}", fit.inertia);
        let mut labels = fit.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn assignment_ties_break_toward_lower_index() {
        // Equidistant from both centers.
        let cos = ndarray::arr1(&[0.70710678, 0.70710678]);
        let (j, _) = nearest_center(cos.view());
        assert_eq!(j, 0);
    }

    #[test]
    fn reseed_moves_a_center_to_the_farthest_row() {
        let xn = l2_normalize_rows(&array![[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0]]).unwrap();
        let mut centers = l2_normalize_rows(&array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        // All rows assigned to cluster 0; cluster 1 empty; row 2 farthest.
        let labels = vec![0, 0, 0];
        let d2: Vec<f64> = (0..3)
            .map(|i| 2.0 - 2.0 * xn.row(i).dot(&centers.row(0)))
            .collect();
        assert!(reseed_empty(&xn, &mut centers, &labels, &d2));
        assert_eq!(centers.row(1), xn.row(2));
    }

    #[test]
    fn too_few_rows_is_an_argument_error() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let err = kmeans(&x, 3, 0).unwrap_err();
        assert!(matches!(err, SmileError::Argument(_)), "{err}");
    }

    #[test]
    fn restarts_return_the_lowest_inertia() {
        let (x, _) = sphere_blobs(3, 30, 5, 17);
        let best = kmeans_best_of(&x, 3, 23, 10).unwrap();
        for r in 0..10 {
            let fit = kmeans(&x, 3, mix(23, &[0x7265, r])).unwrap();
            assert!(best.inertia <= fit.inertia + 1e-12);
        }
    }

    #[test]
    fn soft_assign_matches_closed_form_two_centers() {
        let z = array![[1.0, 0.0]];
        let centers = array![[1.0, 0.0], [0.0, 1.0]];
        let c = soft_assign(&z, &centers, 0.1).unwrap();
        // cos = (1, 0), logits = (10, 0): p0 = 1 / (1 + e^-10).
        let expected0 = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((c[(0, 0)] - expected0).abs() < 1e-12);
        assert!((c[(0, 1)] - (1.0 - expected0)).abs() < 1e-12);
        assert!((c[(0, 0)] - 0.9999546).abs() < 1e-7);
        assert!((c[(0, 1)] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn soft_assign_equidistant_is_exactly_uniform() {
        let z = array![[1.0, 1.0]];
        let centers = array![[1.0, 0.0], [0.0, 1.0]];
        let c = soft_assign(&z, &centers, 0.1).unwrap();
        assert_eq!(c[(0, 0)], 0.5);
        assert_eq!(c[(0, 1)], 0.5);
    }

    #[test]
    fn soft_assign_rejects_zero_norm_latents() {
        let z = array![[0.0, 0.0]];
        let centers = array![[1.0, 0.0]];
        let err = soft_assign(&z, &centers, 0.1).unwrap_err();
        assert!(matches!(err, SmileError::Numeric(_)), "{err}");
    }

    #[test]
    fn soft_assign_rows_sum_to_one_on_random_input() {
        let mut rng = KeyRng::new(31, &[4]);
        let z = Array2::from_shape_fn((40, 8), |_| rng.normal());
        let centers = Array2::from_shape_fn((5, 8), |_| rng.normal());
        let c = soft_assign(&z, &centers, 0.2).unwrap();
        for row in c.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
