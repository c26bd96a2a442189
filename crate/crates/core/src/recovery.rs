//! Post-training recovery in latent space: impute missing samples from
//! nearest observed neighbors, realign unaligned samples to their most
//! similar counterparts, and assemble one concatenated representation per
//! instance for final clustering.
//!
//! All similarity is cosine (distance `1 - cos`), matching the cluster
//! geometry. Ties always break toward the lower row index, so every
//! operation is deterministic.

use ndarray::Array2;

use crate::clustering::l2_normalize_rows;
use crate::error::{Result, SmileError};
use crate::network::Model;

/// One recovered latent for a missing (instance, view) slot.
#[derive(Debug, Clone)]
pub struct Imputation {
    pub instance: usize,
    pub view: usize,
    /// Observed view whose latent served as the query point.
    pub query_view: usize,
    /// Candidate rows averaged into the imputed latent, in selection order.
    pub neighbors: Vec<usize>,
    pub latent: Vec<f64>,
}

/// One realignment decision for an unaligned (position, view) slot.
#[derive(Debug, Clone, Copy)]
pub struct Realignment {
    /// Anchor row position (also the instance id: the anchor view is never
    /// shuffled below its own position).
    pub position: usize,
    /// View the anchor latent came from.
    pub query_view: usize,
    /// View searched for the counterpart.
    pub view: usize,
    /// Matched row position inside `view`.
    pub matched_row: usize,
}

/// Everything recovered for one dataset.
#[derive(Debug, Clone, Default)]
pub struct Recovery {
    pub imputations: Vec<Imputation>,
    pub realignments: Vec<Realignment>,
}

fn check_latents(zs: &[Array2<f64>], obs: &[Vec<bool>]) -> Result<(usize, usize)> {
    let m = zs.len();
    if m == 0 {
        return Err(SmileError::argument("no latent matrices"));
    }
    let n = zs[0].nrows();
    let d = zs[0].ncols();
    for (v, z) in zs.iter().enumerate() {
        if z.nrows() != n || z.ncols() != d {
            return Err(SmileError::argument(format!(
                "latent matrix {v} is {}x{}, expected {n}x{d}",
                z.nrows(),
                z.ncols()
            )));
        }
    }
    if obs.len() != n || obs.iter().any(|r| r.len() != m) {
        return Err(SmileError::argument("observation mask shape mismatch"));
    }
    Ok((n, m))
}

fn lowest_observed_view(obs: &[Vec<bool>], i: usize) -> Result<usize> {
    obs[i]
        .iter()
        .position(|&e| e)
        .ok_or_else(|| SmileError::invariant(format!("instance {i} has no observed view")))
}

/// Normalized latents of one view restricted to its observed rows; returns
/// (row positions, normalized matrix).
fn observed_normalized(
    zs: &[Array2<f64>],
    obs: &[Vec<bool>],
    v: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let rows: Vec<usize> = (0..zs[v].nrows())
        .filter(|&p| obs[p][v] && keep(p))
        .collect();
    let mut sub = Array2::zeros((rows.len(), zs[v].ncols()));
    for (r, &p) in rows.iter().enumerate() {
        sub.row_mut(r).assign(&zs[v].row(p));
    }
    let subn = if rows.is_empty() { sub } else { l2_normalize_rows(&sub)? };
    Ok((rows, subn))
}

/// For every unobserved (instance, view) slot, average the k observed
/// view-v latents nearest to the instance's latent in its lowest-index
/// observed view.
pub fn impute(zs: &[Array2<f64>], obs: &[Vec<bool>], k: usize) -> Result<Vec<Imputation>> {
    let (n, m) = check_latents(zs, obs)?;
    if k == 0 {
        return Err(SmileError::argument("neighbor count k must be positive"));
    }
    let mut out = Vec::new();
    // Per-view candidate pools, normalized once.
    let mut pools: Vec<Option<(Vec<usize>, Array2<f64>)>> = vec![None; m];
    for i in 0..n {
        if obs[i].iter().all(|&e| e) {
            continue;
        }
        let qv = lowest_observed_view(obs, i)?;
        let q = l2_normalize_rows(&zs[qv].row(i).insert_axis(ndarray::Axis(0)).to_owned())?;
        for v in 0..m {
            if obs[i][v] {
                continue;
            }
            if pools[v].is_none() {
                pools[v] = Some(observed_normalized(zs, obs, v, |_| true)?);
            }
            let (rows, candn) = pools[v].as_ref().unwrap();
            if rows.len() < k {
                return Err(SmileError::argument(format!(
                    "view {v} has {} observed samples, imputation needs k={k}",
                    rows.len()
                )));
            }
            // Rank candidates by (cosine distance, row index) ascending.
            let cos = candn.dot(&q.row(0));
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| {
                let da = 1.0 - cos[a];
                let db = 1.0 - cos[b];
                da.partial_cmp(&db)
                    .expect("finite distances")
                    .then(rows[a].cmp(&rows[b]))
            });
            let neighbors: Vec<usize> = order[..k].iter().map(|&r| rows[r]).collect();
            let mut latent = vec![0.0; zs[v].ncols()];
            for &p in &neighbors {
                for (acc, &z) in latent.iter_mut().zip(zs[v].row(p)) {
                    *acc += z;
                }
            }
            for acc in &mut latent {
                *acc /= k as f64;
            }
            out.push(Imputation {
                instance: i,
                view: v,
                query_view: qv,
                neighbors,
                latent,
            });
        }
    }
    Ok(out)
}

/// Decode imputed latents through the matching decoder branches, producing
/// `(instance, view, features)` triples for imputation-error evaluation.
pub fn decode_imputations(
    model: &Model,
    imputations: &[Imputation],
) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut out = Vec::with_capacity(imputations.len());
    for imp in imputations {
        let z = Array2::from_shape_vec((1, imp.latent.len()), imp.latent.clone())
            .expect("row shape");
        let x = model.decode(&z, imp.view)?;
        out.push((imp.instance, imp.view, x.row(0).to_vec()));
    }
    Ok(out)
}

/// For every unaligned position, match each non-anchor view against the
/// unaligned observed pool of that view by cosine similarity.
pub fn realign(
    zs: &[Array2<f64>],
    obs: &[Vec<bool>],
    aligned: &[bool],
) -> Result<Vec<Realignment>> {
    let (n, m) = check_latents(zs, obs)?;
    if aligned.len() != n {
        return Err(SmileError::argument("alignment mask shape mismatch"));
    }
    let mut out = Vec::new();
    let mut pools: Vec<Option<(Vec<usize>, Array2<f64>)>> = vec![None; m];
    for p in 0..n {
        if aligned[p] {
            continue;
        }
        let qv = lowest_observed_view(obs, p)?;
        let q = l2_normalize_rows(&zs[qv].row(p).insert_axis(ndarray::Axis(0)).to_owned())?;
        for v in 0..m {
            if v == qv {
                continue;
            }
            if pools[v].is_none() {
                pools[v] = Some(observed_normalized(zs, obs, v, |r| !aligned[r])?);
            }
            let (rows, candn) = pools[v].as_ref().unwrap();
            if rows.is_empty() {
                return Err(SmileError::argument(format!(
                    "view {v} has no unaligned observed rows to match against"
                )));
            }
            let cos = candn.dot(&q.row(0));
            let mut best = 0;
            for r in 1..rows.len() {
                if cos[r] > cos[best] {
                    best = r;
                }
            }
            out.push(Realignment {
                position: p,
                query_view: qv,
                view: v,
                matched_row: rows[best],
            });
        }
    }
    Ok(out)
}

/// Run imputation and realignment together.
pub fn recover(
    zs: &[Array2<f64>],
    obs: &[Vec<bool>],
    aligned: &[bool],
    k: usize,
) -> Result<Recovery> {
    Ok(Recovery {
        imputations: impute(zs, obs, k)?,
        realignments: realign(zs, obs, aligned)?,
    })
}

/// Concatenate every instance's M latent vectors into one N×(M·d) matrix.
/// Missing slots take imputed latents, unaligned non-anchor slots take the
/// matched counterparts, everything else is the instance's own row.
pub fn assemble_instance_features(
    zs: &[Array2<f64>],
    obs: &[Vec<bool>],
    aligned: &[bool],
    recovery: &Recovery,
) -> Result<Array2<f64>> {
    let (n, m) = check_latents(zs, obs)?;
    if aligned.len() != n {
        return Err(SmileError::argument("alignment mask shape mismatch"));
    }
    let d = zs[0].ncols();
    let mut filled = vec![vec![false; m]; n];
    let mut out = Array2::zeros((n, m * d));

    let put = |out: &mut Array2<f64>, filled: &mut Vec<Vec<bool>>, i: usize, v: usize, row: ndarray::ArrayView1<f64>| {
        out.row_mut(i)
            .slice_mut(ndarray::s![v * d..(v + 1) * d])
            .assign(&row);
        filled[i][v] = true;
    };

    for i in 0..n {
        let qv = lowest_observed_view(obs, i)?;
        for v in 0..m {
            let own = if aligned[i] { obs[i][v] } else { v == qv };
            if own {
                put(&mut out, &mut filled, i, v, zs[v].row(i));
            }
        }
    }
    for imp in &recovery.imputations {
        let row = ndarray::ArrayView1::from(imp.latent.as_slice());
        put(&mut out, &mut filled, imp.instance, imp.view, row);
    }
    for re in &recovery.realignments {
        put(&mut out, &mut filled, re.position, re.view, zs[re.view].row(re.matched_row));
    }

    for (i, row) in filled.iter().enumerate() {
        for (v, &f) in row.iter().enumerate() {
            if !f {
                return Err(SmileError::invariant(format!(
                    "slot ({i},{v}) resolved by neither observation, imputation, nor realignment"
                )));
            }
        }
    }
    Ok(out)
}
