//! Multi-view data under incomplete information: domain type, synthetic
//! generation, corruption at controllable rates, and validation.
//!
//! An instance owns one sample per view. Two defects are modeled:
//!
//! * **missing** — some of an instance's views are dropped (observation mask
//!   `obs` is 0); the dropped feature rows move to `hidden` for evaluation;
//! * **unaligned** — the instance's rows in views 1..M are shuffled against
//!   view 0 within the unaligned subset (`aligned` is 0); `true_perm` records
//!   where each instance's sample actually sits.
//!
//! View matrices are stored by *row position*: `views[v]` row `p` is whatever
//! sample currently occupies that slot. For aligned instances position and
//! instance coincide; view 0 is never shuffled, so its position `p` is always
//! instance `p`. Unobserved rows are kept as all-NaN placeholders and must
//! never be read by training code.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Result, SmileError};
use crate::rng::{normal_at, KeyRng};

const TAG_CENTER: u64 = 0x6374;
const TAG_LATENT: u64 = 0x7469;
const TAG_MAP: u64 = 0x6D61;
const TAG_MAP_VIEW: u64 = 0x6D76;
const TAG_NOISE: u64 = 0x6E6F;
const TAG_SELECT: u64 = 0x73_65_6C;
const TAG_PERM: u64 = 0x7065;
const TAG_SUBSET: u64 = 0x6D73;

/// Distance of latent cluster centers from the origin, and the minimum
/// pairwise separation enforced between them.
const CENTER_RADIUS: f64 = 4.0;
const CENTER_MIN_DIST: f64 = 4.0;
/// Within-cluster standard deviation in latent space.
const LATENT_JITTER: f64 = 0.6;
/// Relative weight of the per-view perturbation of the shared projection.
/// Views are distinct noisy renderings of one underlying feature process:
/// correlated enough that cross-view structure is comparable (the regime
/// where correspondence-free recovery is possible at all), yet distinct
/// full-rank maps.
const MAP_JITTER: f64 = 0.3;
const CENTER_MAX_ATTEMPTS: usize = 10_000;

/// A multi-view dataset with optional ground truth for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    /// Per view, an N×D_v matrix; unobserved positions are all-NaN rows.
    pub views: Vec<Array2<f64>>,
    /// Observation mask: `obs[i][v]` — instance i's view-v sample present.
    pub obs: Vec<Vec<bool>>,
    /// Alignment mask: `aligned[i]` — instance i's rows correspond across views.
    pub aligned: Vec<bool>,
    /// Ground-truth categories (evaluation only).
    pub labels: Option<Vec<usize>>,
    /// `true_perm[v][i]` = row position of instance i's sample in view v
    /// (evaluation only). Identity for view 0 and on aligned instances.
    pub true_perm: Option<Vec<Vec<usize>>>,
    /// Dropped feature rows keyed by (instance, view) (evaluation only).
    pub hidden: Option<BTreeMap<(usize, usize), Vec<f64>>>,
}

/// Rates and seed steering `corrupt`. `eta` = fraction of instances with
/// missing views, `zeta` = fraction with shuffled correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub eta: f64,
    pub zeta: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(eta: f64, zeta: f64, seed: u64) -> Result<Self> {
        let spec = Self { eta, zeta, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Split a single incompleteness rate evenly: eta = zeta = rho / 2.
    pub fn from_rho(rho: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(SmileError::argument(format!("rho={rho} outside [0,1]")));
        }
        Self::new(rho / 2.0, rho / 2.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("eta", self.eta), ("zeta", self.zeta)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SmileError::argument(format!("{name}={r} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Round-half-up of `rate * n`, clamped to [0, n].
fn count_of(rate: f64, n: usize) -> usize {
    (((rate * n as f64) + 0.5).floor() as usize).min(n)
}

impl MultiViewDataset {
    pub fn n(&self) -> usize {
        self.views.first().map_or(0, |v| v.nrows())
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    /// Number of categories, when labels are present.
    pub fn k(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m + 1))
    }

    pub fn is_complete(&self) -> bool {
        self.obs.iter().all(|r| r.iter().all(|&e| e)) && self.aligned.iter().all(|&a| a)
    }

    /// Row positions of view v that hold data.
    pub fn observed_rows(&self, v: usize) -> Vec<usize> {
        (0..self.n()).filter(|&p| self.obs[p][v]).collect()
    }

    /// Inverse of `true_perm` for view v: `owner[p]` = instance whose sample
    /// sits at row p.
    pub fn row_owner(&self, v: usize) -> Option<Vec<usize>> {
        let perm = self.true_perm.as_ref()?;
        let mut owner = vec![usize::MAX; self.n()];
        for (i, &p) in perm[v].iter().enumerate() {
            owner[p] = i;
        }
        Some(owner)
    }

    /// Observed/unaligned rates `(eta, zeta)` recomputed from the masks.
    pub fn rates(&self) -> (f64, f64) {
        let n = self.n();
        if n == 0 {
            return (0.0, 0.0);
        }
        let missing = self.obs.iter().filter(|r| r.iter().any(|&e| !e)).count();
        let unaligned = self.aligned.iter().filter(|&&a| !a).count();
        (missing as f64 / n as f64, unaligned as f64 / n as f64)
    }

    /// Copy with every evaluation-only field removed; what training sees.
    pub fn without_truth(&self) -> Self {
        Self {
            views: self.views.clone(),
            obs: self.obs.clone(),
            aligned: self.aligned.clone(),
            labels: None,
            true_perm: None,
            hidden: None,
        }
    }

    /// Check every structural invariant. Truth fields are validated only
    /// when present.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.n_views();
        if m == 0 {
            return Err(SmileError::invariant("dataset has no views"));
        }
        for (v, x) in self.views.iter().enumerate() {
            if x.nrows() != n {
                return Err(SmileError::invariant(format!(
                    "view {v} has {} rows, expected {n}",
                    x.nrows()
                )));
            }
            if x.ncols() == 0 {
                return Err(SmileError::invariant(format!("view {v} has no columns")));
            }
        }
        if self.obs.len() != n || self.aligned.len() != n {
            return Err(SmileError::invariant("mask length differs from row count"));
        }
        for (i, row) in self.obs.iter().enumerate() {
            if row.len() != m {
                return Err(SmileError::invariant(format!(
                    "observation mask row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            if row.iter().all(|&e| !e) {
                return Err(SmileError::invariant(format!(
                    "instance {i} has no observed view"
                )));
            }
        }
        // NaN placeholders must match the mask exactly.
        for v in 0..m {
            for p in 0..n {
                let row = self.views[v].row(p);
                let nan = row.iter().filter(|x| x.is_nan()).count();
                let expect_data = self.obs[p][v];
                if expect_data && nan > 0 {
                    return Err(SmileError::invariant(format!(
                        "view {v} row {p} is marked observed but contains NaN"
                    )));
                }
                if !expect_data && nan != row.len() {
                    return Err(SmileError::invariant(format!(
                        "view {v} row {p} is marked unobserved but holds data"
                    )));
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(SmileError::invariant("label length differs from row count"));
            }
        }
        if let Some(perm) = &self.true_perm {
            if perm.len() != m {
                return Err(SmileError::invariant("permutation table missing views"));
            }
            for (v, pv) in perm.iter().enumerate() {
                if pv.len() != n {
                    return Err(SmileError::invariant(format!(
                        "permutation for view {v} has wrong length"
                    )));
                }
                let mut seen = vec![false; n];
                for (i, &p) in pv.iter().enumerate() {
                    if p >= n || seen[p] {
                        return Err(SmileError::invariant(format!(
                            "permutation for view {v} is not a bijection"
                        )));
                    }
                    seen[p] = true;
                    let moved = p != i;
                    if moved && (self.aligned[i] || self.aligned[p]) {
                        return Err(SmileError::invariant(format!(
                            "permutation for view {v} moves aligned instance {i}"
                        )));
                    }
                    if v == 0 && moved {
                        return Err(SmileError::invariant(
                            "view 0 must keep the identity ordering",
                        ));
                    }
                }
            }
        }
        if let Some(hidden) = &self.hidden {
            for (&(i, v), x) in hidden {
                if i >= n || v >= m {
                    return Err(SmileError::invariant(format!(
                        "hidden entry ({i},{v}) out of range"
                    )));
                }
                if self.obs[i][v] {
                    return Err(SmileError::invariant(format!(
                        "hidden entry ({i},{v}) duplicates an observed sample"
                    )));
                }
                if x.len() != self.views[v].ncols() {
                    return Err(SmileError::invariant(format!(
                        "hidden entry ({i},{v}) has wrong width"
                    )));
                }
            }
            for (i, row) in self.obs.iter().enumerate() {
                for (v, &e) in row.iter().enumerate() {
                    if !e && !hidden.contains_key(&(i, v)) {
                        return Err(SmileError::invariant(format!(
                            "unobserved sample ({i},{v}) has no hidden truth"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generate a complete, aligned dataset: k well-separated latent centers,
/// per-instance latent jitter, one random linear map per view, additive
/// Gaussian feature noise of the given standard deviation.
///
/// The per-view maps are jittered copies of one shared base projection
/// (views of differing width share the base's leading columns). Same-instance
/// rows therefore look alike across views — the multi-view analogue of two
/// corruptions of one source — which is what makes cross-view neighbor
/// search meaningful when no pairing supervision exists.
pub fn make_synthetic(
    n: usize,
    k: usize,
    d_latent: usize,
    d_views: &[usize],
    noise: f64,
    seed: u64,
) -> Result<MultiViewDataset> {
    if k < 2 || n < k {
        return Err(SmileError::argument(format!(
            "need n >= k >= 2, got n={n}, k={k}"
        )));
    }
    if d_latent == 0 || d_views.is_empty() || d_views.iter().any(|&d| d == 0) {
        return Err(SmileError::argument("all dimensions must be positive"));
    }
    if !(noise >= 0.0) {
        return Err(SmileError::argument(format!("noise={noise} must be >= 0")));
    }

    // Separated centers on the radius-4 sphere, drawn with per-attempt keys
    // so acceptance of one center never shifts later draws.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut attempt = 0u64;
        loop {
            if attempt as usize >= CENTER_MAX_ATTEMPTS {
                return Err(SmileError::argument(format!(
                    "cannot separate {k} centers in {d_latent} latent dimensions; \
                     increase d_latent"
                )));
            }
            let mut rng = KeyRng::new(seed, &[TAG_CENTER, j as u64, attempt]);
            let g: Vec<f64> = (0..d_latent).map(|_| rng.normal()).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            attempt += 1;
            if norm < 1e-12 {
                continue;
            }
            let c: Vec<f64> = g.iter().map(|x| CENTER_RADIUS * x / norm).collect();
            let ok = centers.iter().all(|prev| {
                let d2: f64 = prev.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= CENTER_MIN_DIST
            });
            if ok {
                centers.push(c);
                break;
            }
        }
    }

    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let latents = Array2::from_shape_fn((n, d_latent), |(i, d)| {
        centers[labels[i]][d] + LATENT_JITTER * normal_at(seed, &[TAG_LATENT, i as u64, d as u64])
    });

    let scale = 1.0 / (d_latent as f64).sqrt();
    let mut views = Vec::with_capacity(d_views.len());
    for (v, &dv) in d_views.iter().enumerate() {
        let map = Array2::from_shape_fn((d_latent, dv), |(r, c)| {
            let base = normal_at(seed, &[TAG_MAP, r as u64, c as u64]);
            let tweak = normal_at(seed, &[TAG_MAP_VIEW, v as u64, r as u64, c as u64]);
            scale * (base + MAP_JITTER * tweak)
        });
        let mut x = latents.dot(&map);
        if noise > 0.0 {
            for ((i, c), cell) in x.indexed_iter_mut() {
                *cell += noise * normal_at(seed, &[TAG_NOISE, v as u64, i as u64, c as u64]);
            }
        }
        views.push(x);
    }

    let m = d_views.len();
    Ok(MultiViewDataset {
        views,
        obs: vec![vec![true; m]; n],
        aligned: vec![true; n],
        labels: Some(labels),
        true_perm: Some(vec![(0..n).collect(); m]),
        hidden: Some(BTreeMap::new()),
    })
}

/// Corrupt a complete dataset: shuffle the correspondence of a zeta-fraction
/// of instances (views 1..M only) and drop a uniformly chosen nonempty strict
/// subset of views for a disjoint eta-fraction. Dropped rows move to
/// `hidden`; view selection never looks at labels.
pub fn corrupt(ds: &MultiViewDataset, spec: &CorruptionSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    ds.validate()?;
    if !ds.is_complete() {
        return Err(SmileError::argument(
            "corrupt expects a complete, aligned dataset",
        ));
    }
    let n = ds.n();
    let m = ds.n_views();
    let c = count_of(spec.zeta, n);
    let miss = count_of(spec.eta, n);
    if c + miss > n {
        return Err(SmileError::argument(format!(
            "zeta and eta select {c}+{miss} disjoint instances out of {n}"
        )));
    }
    if miss > 0 && m < 2 {
        return Err(SmileError::argument(
            "missing views require at least two views",
        ));
    }

    let mut out = ds.clone();
    if out.true_perm.is_none() {
        out.true_perm = Some(vec![(0..n).collect(); m]);
    }
    if out.hidden.is_none() {
        out.hidden = Some(BTreeMap::new());
    }

    // One shuffle splits the instances into unaligned / missing / untouched.
    let mut order: Vec<usize> = (0..n).collect();
    KeyRng::new(spec.seed, &[TAG_SELECT]).shuffle(&mut order);
    let mut unaligned: Vec<usize> = order[..c].to_vec();
    let mut missing: Vec<usize> = order[c..c + miss].to_vec();
    unaligned.sort_unstable();
    missing.sort_unstable();

    for &i in &unaligned {
        out.aligned[i] = false;
    }
    // Scatter the unaligned samples of each non-anchor view across the
    // unaligned positions with a uniform permutation.
    for v in 1..m {
        let mut dest: Vec<usize> = unaligned.clone();
        KeyRng::new(spec.seed, &[TAG_PERM, v as u64]).shuffle(&mut dest);
        let perm = &mut out.true_perm.as_mut().unwrap()[v];
        for (j, &i) in unaligned.iter().enumerate() {
            let p = dest[j];
            out.views[v].row_mut(p).assign(&ds.views[v].row(i));
            perm[i] = p;
        }
    }

    // Drop a uniform nonempty strict subset of views per missing instance.
    let full: usize = (1 << m) - 1;
    for &i in &missing {
        let mut rng = KeyRng::new(spec.seed, &[TAG_SUBSET, i as u64]);
        let subset = loop {
            let s = rng.below(1 << m);
            if s != 0 && s != full {
                break s;
            }
        };
        for v in 0..m {
            if subset & (1 << v) == 0 {
                continue;
            }
            let row = ds.views[v].row(i).to_vec();
            out.hidden.as_mut().unwrap().insert((i, v), row);
            out.views[v].row_mut(i).fill(f64::NAN);
            out.obs[i][v] = false;
        }
    }

    Ok(out)
}
