//! Training objectives.
//!
//! Three terms act on the shared latent space:
//!
//! * reconstruction (`dar`): mean squared error between every observed
//!   sample and its own-view decoding, averaged over observed
//!   (sample, feature) cells in the batch;
//! * semantic invariance (`sil`): on soft cluster assignments C it combines
//!   `sil_s = -H(C) + H(C|X)` (confident, balanced clusters) with
//!   `sil_v = I(C;V)` (cluster usage independent of the view identity),
//!   weighted `sil_s + gamma * sil_v`;
//! * cross-view contrast (`ccl`): InfoNCE over ordered view pairs, anchored
//!   on samples that are aligned and observed in both views, with every
//!   observed sample of the second view serving as the candidate set. With
//!   no paired samples the term is a constant zero with no graph edges, so
//!   its gradient is exactly zero.
//!
//! All probability plug-ins use natural log, clamp probabilities at 1e-12
//! before the log (making 0*ln(0) an exact 0), and weight views by their
//! observed sample counts in the batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::clustering::l2_normalize_rows;
use crate::error::{Result, SmileError};
use crate::network::{Model, ModelVars};

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Observed slice of one view inside a batch: feature rows plus the global
/// instance id behind each row.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub x: Array2<f64>,
    pub instances: Vec<usize>,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Anchors of one ordered view pair: row indices into the two view batches
/// for every sample that is aligned and observed in both views.
#[derive(Debug, Clone)]
pub struct PairAnchors {
    pub v1: usize,
    pub v2: usize,
    /// (row in view v1 batch, row in view v2 batch)
    pub rows: Vec<(usize, usize)>,
}

/// One training batch: instances are drawn together, each view keeps the
/// subset of rows observed for those instances.
#[derive(Debug, Clone)]
pub struct Batch {
    pub views: Vec<ViewBatch>,
    pub pairs: Vec<PairAnchors>,
}

impl Batch {
    pub fn observed_samples(&self) -> usize {
        self.views.iter().map(|v| v.len()).sum()
    }

    pub fn anchor_count(&self) -> usize {
        self.pairs.iter().map(|p| p.rows.len()).sum()
    }

    fn validate(&self, model: &Model) -> Result<()> {
        if self.views.len() != model.n_views() {
            return Err(SmileError::argument(format!(
                "batch has {} views, model expects {}",
                self.views.len(),
                model.n_views()
            )));
        }
        if self.observed_samples() == 0 {
            return Err(SmileError::argument("empty batch"));
        }
        Ok(())
    }
}

/// Scalar values of every component for one batch or one epoch.
/// `total = dar + lambda_sil * (sil_s + gamma * sil_v) + lambda_ccl * ccl`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dar: f64,
    pub sil_s: f64,
    pub sil_v: f64,
    pub ccl: f64,
    pub total: f64,
}

/// Weights and temperatures of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_sil: f64,
    pub lambda_ccl: f64,
    pub gamma: f64,
    pub tau_assign: f64,
    pub tau_ccl: f64,
}

fn validate_assignments(cs: &[Array2<f64>]) -> Result<usize> {
    if cs.is_empty() {
        return Err(SmileError::argument("no assignment matrices"));
    }
    let k = cs.iter().map(|c| c.ncols()).max().unwrap_or(0);
    let mut total_rows = 0;
    for c in cs {
        if c.nrows() == 0 {
            continue;
        }
        if c.ncols() != k {
            return Err(SmileError::argument(
                "assignment matrices must share the cluster dimension",
            ));
        }
        total_rows += c.nrows();
        for (r, row) in c.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(p >= -1e-12) || !p.is_finite()) {
                return Err(SmileError::argument(format!(
                    "assignment row {r} has negative or non-finite entries"
                )));
            }
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(SmileError::argument(format!(
                    "assignment row {r} does not sum to 1"
                )));
            }
        }
    }
    if total_rows == 0 {
        return Err(SmileError::argument("no assigned samples"));
    }
    Ok(total_rows)
}

fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Cluster marginal P(k), weighting every observed sample equally.
fn cluster_marginal(cs: &[Array2<f64>], total: usize) -> Vec<f64> {
    let k = cs.iter().map(|c| c.ncols()).max().unwrap_or(0);
    let mut p = vec![0.0; k];
    for c in cs {
        for row in c.rows() {
            for (pk, &cik) in p.iter_mut().zip(row) {
                *pk += cik;
            }
        }
    }
    for pk in &mut p {
        *pk /= total as f64;
    }
    p
}

/// H(C): entropy of the cluster marginal over all observed samples.
pub fn entropy_marginal(cs: &[Array2<f64>]) -> Result<f64> {
    let total = validate_assignments(cs)?;
    let p = cluster_marginal(cs, total);
    Ok(-p.iter().map(|&pk| pk * ln_floor(pk)).sum::<f64>())
}

/// H(C|X): mean per-sample assignment entropy over all observed samples.
pub fn entropy_conditional(cs: &[Array2<f64>]) -> Result<f64> {
    let total = validate_assignments(cs)?;
    let mut acc = 0.0;
    for c in cs {
        for row in c.rows() {
            for &cik in row {
                acc += cik * ln_floor(cik);
            }
        }
    }
    Ok(-acc / total as f64)
}

/// I(C;V): mutual information between cluster assignment and view identity,
/// with P(v) proportional to each view's observed sample count.
pub fn mi_cluster_view(cs: &[Array2<f64>]) -> Result<f64> {
    let total = validate_assignments(cs)?;
    let p = cluster_marginal(cs, total);
    let mut mi = 0.0;
    for c in cs {
        if c.nrows() == 0 {
            continue;
        }
        let w = c.nrows() as f64 / total as f64;
        for k in 0..c.ncols() {
            let pkv = c.column(k).sum() / c.nrows() as f64;
            mi += w * pkv * (ln_floor(pkv) - ln_floor(p[k]));
        }
    }
    Ok(mi)
}

/// Estimated I(C;X|V) = H(C) - H(C|X) - I(C;V): the sample information the
/// assignments retain once the view identity is known. Higher values track
/// stronger semantic structure.
pub fn mi_sample_given_view(cs: &[Array2<f64>]) -> Result<f64> {
    Ok(entropy_marginal(cs)? - entropy_conditional(cs)? - mi_cluster_view(cs)?)
}

/// Encode every nonempty view of the batch on the tape. Entry v is `None`
/// when the batch holds no observed samples of view v.
pub fn encode_views(
    tape: &mut Tape,
    model: &Model,
    mv: &ModelVars,
    batch: &Batch,
) -> Result<Vec<Option<Var>>> {
    batch.validate(model)?;
    let mut zs = Vec::with_capacity(batch.views.len());
    for (v, vb) in batch.views.iter().enumerate() {
        if vb.is_empty() {
            zs.push(None);
            continue;
        }
        if !vb.x.iter().all(|x| x.is_finite()) {
            return Err(SmileError::numeric(format!(
                "non-finite input in view {v} batch"
            )));
        }
        let x = tape.constant(vb.x.clone(), format!("x[{v}]"));
        zs.push(Some(model.encode_on_tape(tape, mv, x, v)));
    }
    Ok(zs)
}

/// Reconstruction term: squared residual of each observed sample through its
/// own decoder branch, averaged over all observed cells of the batch.
pub fn dar_loss(
    tape: &mut Tape,
    model: &Model,
    mv: &ModelVars,
    batch: &Batch,
    zs: &[Option<Var>],
) -> Result<Var> {
    let mut sum: Option<Var> = None;
    let mut cells = 0usize;
    for (v, vb) in batch.views.iter().enumerate() {
        let z = match zs[v] {
            Some(z) => z,
            None => continue,
        };
        let x = tape.constant(vb.x.clone(), format!("x[{v}]"));
        let y = model.decode_on_tape(tape, mv, z, v);
        let r = tape.sub(y, x);
        let sq = tape.mul(r, r);
        let s = tape.sum_all(sq);
        cells += vb.x.len();
        sum = Some(match sum {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let sum = sum.ok_or_else(|| SmileError::argument("empty batch"))?;
    Ok(tape.scale(sum, 1.0 / cells as f64))
}

/// Soft assignments of every encoded view against a fixed center set.
/// Centers are treated as constants: no gradient flows into them.
pub fn soft_assignments(
    tape: &mut Tape,
    zs: &[Option<Var>],
    centers: &Array2<f64>,
    tau: f64,
) -> Result<Vec<Option<Var>>> {
    if !(tau > 0.0) {
        return Err(SmileError::argument("softmax temperature must be positive"));
    }
    let cn = l2_normalize_rows(centers)?;
    let cn = tape.constant(cn, "centers");
    zs.iter()
        .map(|z| match z {
            None => Ok(None),
            Some(z) => {
                let zn = tape.row_normalize(*z)?;
                let cos = tape.matmul_nt(zn, cn);
                let logits = tape.scale(cos, 1.0 / tau);
                Ok(Some(tape.softmax_rows(logits)))
            }
        })
        .collect()
}

/// The two semantic-invariance terms on tape: `(sil_s, sil_v)` where
/// `sil_s = -H(C) + H(C|X)` and `sil_v = I(C;V)`.
pub fn sil_terms_on_tape(tape: &mut Tape, cs: &[Option<Var>]) -> Result<(Var, Var)> {
    let counts: Vec<usize> = cs
        .iter()
        .map(|c| c.map_or(0, |c| tape.value(c).nrows()))
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(SmileError::argument("no assigned samples"));
    }

    // P(k) = sum_v P(v) P(k|v), with P(v) = n_v / total.
    let mut marginal: Option<Var> = None;
    let mut per_view: Vec<(Var, f64)> = Vec::new(); // (P(k|v), weight)
    let mut cond_sum: Option<Var> = None; // sum of c * ln c over all samples
    for (c, &n_v) in cs.iter().zip(&counts) {
        let c = match c {
            Some(c) => *c,
            None => continue,
        };
        let w = n_v as f64 / total as f64;
        let pkv = tape.mean_rows(c);
        let weighted = tape.scale(pkv, w);
        marginal = Some(match marginal {
            Some(acc) => tape.add(acc, weighted),
            None => weighted,
        });
        per_view.push((pkv, w));

        let lnc = tape.ln_clamped(c, PROB_FLOOR);
        let clnc = tape.mul(c, lnc);
        let s = tape.sum_all(clnc);
        cond_sum = Some(match cond_sum {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let p = marginal.expect("total > 0 implies a nonempty view");
    let ln_p = tape.ln_clamped(p, PROB_FLOOR);

    // H(C) = -sum_k P(k) ln P(k)
    let plnp = tape.mul(p, ln_p);
    let s = tape.sum_all(plnp);
    let h_c = tape.scale(s, -1.0);

    // H(C|X) = -(1/total) sum_{i,v,k} c ln c
    let h_cx = tape.scale(cond_sum.expect("nonempty"), -1.0 / total as f64);

    // sil_s = -H(C) + H(C|X)
    let neg_h_c = tape.scale(h_c, -1.0);
    let sil_s = tape.add(neg_h_c, h_cx);

    // sil_v = I(C;V) = sum_v P(v) sum_k P(k|v) (ln P(k|v) - ln P(k))
    let mut sil_v: Option<Var> = None;
    for (pkv, w) in per_view {
        let ln_pkv = tape.ln_clamped(pkv, PROB_FLOOR);
        let diff = tape.sub(ln_pkv, ln_p);
        let prod = tape.mul(pkv, diff);
        let s = tape.sum_all(prod);
        let term = tape.scale(s, w);
        sil_v = Some(match sil_v {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    Ok((sil_s, sil_v.expect("nonempty")))
}

/// InfoNCE contrast over ordered view pairs, averaged per anchor across all
/// pairs. Returns the loss node and the total anchor count; with zero
/// anchors the node is a constant 0 disconnected from the parameters.
pub fn ccl_loss(
    tape: &mut Tape,
    zs: &[Option<Var>],
    pairs: &[PairAnchors],
    tau: f64,
) -> Result<(Var, usize)> {
    if !(tau > 0.0) {
        return Err(SmileError::argument("contrast temperature must be positive"));
    }
    let total_anchors: usize = pairs.iter().map(|p| p.rows.len()).sum();
    if total_anchors == 0 {
        return Ok((tape.constant(Array2::zeros((1, 1)), "ccl_zero"), 0));
    }

    // Normalize each participating view's latents once.
    let mut zn: Vec<Option<Var>> = vec![None; zs.len()];
    for p in pairs {
        for v in [p.v1, p.v2] {
            if zn[v].is_none() {
                let z = zs[v].ok_or_else(|| {
                    SmileError::invariant(format!("pair references empty view {v}"))
                })?;
                zn[v] = Some(tape.row_normalize(z)?);
            }
        }
    }

    let mut sum: Option<Var> = None;
    for p in pairs {
        if p.rows.is_empty() {
            continue;
        }
        let zn1 = zn[p.v1].expect("normalized above");
        let zn2 = zn[p.v2].expect("normalized above");
        let n1 = tape.value(zn1).nrows();
        let d = tape.value(zn1).ncols();

        // Gather anchor rows of view v1 with a constant selection matrix.
        let mut sel = Array2::zeros((p.rows.len(), n1));
        let mut positives = Vec::with_capacity(p.rows.len());
        for (a, &(r1, r2)) in p.rows.iter().enumerate() {
            if r1 >= n1 || r2 >= tape.value(zn2).nrows() {
                return Err(SmileError::invariant("anchor row out of range"));
            }
            sel[(a, r1)] = 1.0;
            positives.push(r2);
        }
        let _ = d;
        let sel = tape.constant(sel, format!("anchors[{},{}]", p.v1, p.v2));
        let anchors = tape.matmul(sel, zn1);

        // Per-anchor cross-entropy with the aligned sample as the positive
        // and every observed v2 sample as the candidate set.
        let cos = tape.matmul_nt(anchors, zn2);
        let logits = tape.scale(cos, 1.0 / tau);
        let lse = tape.logsumexp_rows(logits);
        let pos = tape.pick_per_row(logits, positives);
        let terms = tape.sub(lse, pos);
        let s = tape.sum_all(terms);
        sum = Some(match sum {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let sum = sum.expect("total_anchors > 0");
    Ok((tape.scale(sum, 1.0 / total_anchors as f64), total_anchors))
}

/// Output of one composed batch loss.
pub struct BatchLoss {
    pub total: Var,
    pub report: LossReport,
    pub anchors: usize,
}

/// Compose the full objective for one batch. `centers` carries the current
/// epoch's cluster centers once warmup has ended; `None` keeps the
/// invariance terms out of the graph (reported as exact zeros).
pub fn batch_loss(
    tape: &mut Tape,
    model: &Model,
    mv: &ModelVars,
    batch: &Batch,
    centers: Option<&Array2<f64>>,
    w: &LossWeights,
) -> Result<BatchLoss> {
    let zs = encode_views(tape, model, mv, batch)?;
    let dar = dar_loss(tape, model, mv, batch, &zs)?;

    let mut total = dar;
    let (sil_s_val, sil_v_val) = match centers {
        Some(centers) => {
            let cs = soft_assignments(tape, &zs, centers, w.tau_assign)?;
            let (sil_s, sil_v) = sil_terms_on_tape(tape, &cs)?;
            let scaled_v = tape.scale(sil_v, w.gamma);
            let sil = tape.add(sil_s, scaled_v);
            let weighted = tape.scale(sil, w.lambda_sil);
            total = tape.add(total, weighted);
            (tape.scalar(sil_s), tape.scalar(sil_v))
        }
        None => (0.0, 0.0),
    };

    let (ccl, anchors) = ccl_loss(tape, &zs, &batch.pairs, w.tau_ccl)?;
    let weighted_ccl = tape.scale(ccl, w.lambda_ccl);
    total = tape.add(total, weighted_ccl);

    let report = LossReport {
        dar: tape.scalar(dar),
        sil_s: sil_s_val,
        sil_v: sil_v_val,
        ccl: tape.scalar(ccl),
        total: tape.scalar(total),
    };
    Ok(BatchLoss { total, report, anchors })
}
