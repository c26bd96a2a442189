//! Numeric verification of the cross-view semantic-invariance property and
//! directional probes of the error-bound story: corruption that does not
//! depend on the category leaves the (category, view) joint a product
//! distribution, while category-dependent corruption makes the mutual
//! information strictly positive. A sweep utility trains at several
//! invariance weights and rank-correlates the estimated conditional sample
//! information with the clustering/recovery metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_best_of, l2_normalize_rows};
use crate::data::MultiViewDataset;
use crate::error::{Result, SmileError};
use crate::losses::mi_sample_given_view;
use crate::rng::{mix, KeyRng};
use crate::trainer::{encode_all, evaluate_values, train, TrainConfig};

const TAG_SCENARIO: u64 = 0x7363;
const TAG_SWEEP_CENTERS: u64 = 0x7377;

/// Tables this close to an exact product distribution report a mutual
/// information of exactly zero.
pub const FACTORIZATION_TOL: f64 = 1e-12;

/// Plug-in mutual information of a discrete joint table (rows: categories,
/// columns: views): sum of p(t,v) ln(p(t,v) / (p(t) p(v))).
pub fn plugin_mi(joint: &Array2<f64>) -> Result<f64> {
    if joint.is_empty() {
        return Err(SmileError::argument("empty joint table"));
    }
    if joint.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(SmileError::argument(
            "joint table entries must be finite and non-negative",
        ));
    }
    let total: f64 = joint.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SmileError::argument(format!(
            "joint table sums to {total}, expected 1"
        )));
    }
    let pt: Vec<f64> = joint.rows().into_iter().map(|r| r.sum()).collect();
    let pv: Vec<f64> = joint.columns().into_iter().map(|c| c.sum()).collect();

    let mut residual = 0.0f64;
    for ((t, v), &p) in joint.indexed_iter() {
        residual = residual.max((p - pt[t] * pv[v]).abs());
    }
    if residual < FACTORIZATION_TOL {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for ((t, v), &p) in joint.indexed_iter() {
        if p > 0.0 {
            mi += p * (p / (pt[t] * pv[v])).ln();
        }
    }
    Ok(mi)
}

/// How the observed samples of each view relate to the underlying
/// categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Every instance observed in every view.
    Complete,
    /// Rows of every non-anchor view shuffled (alignment destroyed).
    Permuted,
    /// A quarter of every category dropped from every non-anchor view:
    /// missingness that ignores the category.
    CategoryAgnosticMissing,
    /// All samples of one category dropped from one view: missingness that
    /// depends on the category (the control that breaks invariance).
    CategoryDependentMissing,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Complete,
        Scenario::Permuted,
        Scenario::CategoryAgnosticMissing,
        Scenario::CategoryDependentMissing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Complete => "complete",
            Scenario::Permuted => "permuted",
            Scenario::CategoryAgnosticMissing => "category-agnostic-missing",
            Scenario::CategoryDependentMissing => "category-dependent-missing",
        }
    }
}

/// Category dropped from [`Scenario::CategoryDependentMissing`]'s view.
const DROP_CATEGORY: usize = 1;
/// View the category is dropped from (the second view).
const DROP_VIEW: usize = 1;

/// Build the empirical (category, view) joint induced by a scenario over
/// `m` views of the labelled instances, and return its [`plugin_mi`].
pub fn verify_semantic_invariance(
    labels: &[usize],
    m: usize,
    scenario: Scenario,
    seed: u64,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(SmileError::argument("no labels"));
    }
    if m < 2 {
        return Err(SmileError::argument("need at least 2 views"));
    }
    let k = labels.iter().max().unwrap() + 1;
    if k < 2 {
        return Err(SmileError::argument("need at least 2 categories"));
    }
    let mut per_category: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &t) in labels.iter().enumerate() {
        per_category[t].push(i);
    }

    // Per-view multiset of observed categories, as counts[t][v].
    let mut counts = Array2::<f64>::zeros((k, m));
    for v in 0..m {
        match scenario {
            Scenario::Complete => {
                for &t in labels {
                    counts[(t, v)] += 1.0;
                }
            }
            Scenario::Permuted => {
                // Shuffling row order changes which instance sits where but
                // not which categories are present.
                let mut order: Vec<usize> = (0..labels.len()).collect();
                if v > 0 {
                    KeyRng::new(seed, &[TAG_SCENARIO, v as u64]).shuffle(&mut order);
                }
                for &i in &order {
                    counts[(labels[i], v)] += 1.0;
                }
            }
            Scenario::CategoryAgnosticMissing => {
                for (t, members) in per_category.iter().enumerate() {
                    if members.len() % 4 != 0 {
                        return Err(SmileError::argument(format!(
                            "category {t} has {} samples; category-agnostic \
                             missingness drops an exact quarter, so every \
                             category count must be divisible by 4",
                            members.len()
                        )));
                    }
                    let mut pick = members.clone();
                    let kept = if v == 0 {
                        pick.len()
                    } else {
                        KeyRng::new(seed, &[TAG_SCENARIO, v as u64, t as u64])
                            .shuffle(&mut pick);
                        pick.len() - pick.len() / 4
                    };
                    for &i in &pick[..kept] {
                        counts[(labels[i], v)] += 1.0;
                    }
                }
            }
            Scenario::CategoryDependentMissing => {
                for &t in labels {
                    if v == DROP_VIEW && t == DROP_CATEGORY {
                        continue;
                    }
                    counts[(t, v)] += 1.0;
                }
            }
        }
    }
    let total = counts.sum();
    if total == 0.0 {
        return Err(SmileError::argument("scenario removed every sample"));
    }
    plugin_mi(&counts.mapv(|c| c / total))
}

/// One row of an invariance sweep: the weight trained with, the estimated
/// conditional sample information of the final assignments, and the
/// evaluation metrics that were applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_sil: f64,
    pub mi_cxv: f64,
    pub acc: Option<f64>,
    pub car: Option<f64>,
    pub nrmse: Option<f64>,
}

/// Sweep rows plus the Spearman rank correlation of `mi_cxv` against each
/// metric. A correlation is `None` when it is undefined: a metric missing
/// in some row, or either side having zero rank variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub rho_acc: Option<f64>,
    pub rho_car: Option<f64>,
    pub rho_nrmse: Option<f64>,
}

impl SweepReport {
    /// CSV with the fixed column set; absent metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_sil,mi_cxv,acc,car,nrmse\n");
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.lambda_sil,
                r.mi_cxv,
                cell(r.acc),
                cell(r.car),
                cell(r.nrmse)
            ));
        }
        out
    }
}

/// Midrank ranks (ties share the average of their positions).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant (zero rank variance) or fewer than 2 points.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn column(rows: &[SweepRow], get: impl Fn(&SweepRow) -> Option<f64>) -> Option<Vec<f64>> {
    rows.iter().map(get).collect()
}

/// Softmax over cosine similarity to the centers, per row.
fn plain_assignments(z: &Array2<f64>, centers: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    let zn = l2_normalize_rows(z)?;
    let cn = l2_normalize_rows(centers)?;
    let mut logits = zn.dot(&cn.t());
    logits.mapv_inplace(|s| s / tau);
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    Ok(logits)
}

/// Estimated conditional sample information of a trained model's soft
/// assignments over the whole dataset (each view one batch, centers from
/// k-means over the pooled latents). This is the plug-in batch estimator
/// used by the training objective, applied globally as a diagnostic proxy.
pub fn model_mi_cxv(
    model: &crate::network::Model,
    ds: &MultiViewDataset,
    config: &TrainConfig,
) -> Result<f64> {
    let k = config.resolve_k(ds)?;
    let zs = encode_all(model, ds)?;
    let mut observed: Vec<Array2<f64>> = Vec::new();
    let mut pool_rows = 0;
    for (v, z) in zs.iter().enumerate() {
        let rows = ds.observed_rows(v);
        let mut sub = Array2::zeros((rows.len(), z.ncols()));
        for (r, &p) in rows.iter().enumerate() {
            sub.row_mut(r).assign(&z.row(p));
        }
        pool_rows += rows.len();
        observed.push(sub);
    }
    let mut pool = Array2::zeros((pool_rows, zs[0].ncols()));
    let mut r = 0;
    for sub in &observed {
        for row in sub.rows() {
            pool.row_mut(r).assign(&row);
            r += 1;
        }
    }
    let fit = kmeans_best_of(
        &pool,
        k,
        mix(config.seed, &[TAG_SWEEP_CENTERS]),
        config.kmeans_restarts,
    )?;
    let cs: Vec<Array2<f64>> = observed
        .iter()
        .map(|sub| plain_assignments(sub, &fit.centers, config.tau_assign))
        .collect::<Result<_>>()?;
    mi_sample_given_view(&cs)
}

/// Train once per config and relate the invariance weight to the outcome:
/// each row reports the trained model's estimated conditional sample
/// information next to its evaluation metrics, and the report carries the
/// Spearman correlations across rows.
pub fn invariance_sweep(ds: &MultiViewDataset, configs: &[TrainConfig]) -> Result<SweepReport> {
    if configs.len() < 3 {
        return Err(SmileError::argument(format!(
            "sweep needs at least 3 configs, got {}",
            configs.len()
        )));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let (model, _) = train(ds, config)?;
        let mi_cxv = model_mi_cxv(&model, ds, config)?;
        let values = evaluate_values(&model, ds, config)?;
        rows.push(SweepRow {
            lambda_sil: config.lambda_sil,
            mi_cxv,
            acc: values.acc,
            car: values.car,
            nrmse: values.nrmse,
        });
    }
    let mis: Vec<f64> = rows.iter().map(|r| r.mi_cxv).collect();
    let rho = |get: fn(&SweepRow) -> Option<f64>| {
        column(&rows, get).and_then(|ys| spearman(&mis, &ys))
    };
    Ok(SweepReport {
        rho_acc: rho(|r| r.acc),
        rho_car: rho(|r| r.car),
        rho_nrmse: rho(|r| r.nrmse),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::rng::KeyRng;
    use ndarray::array;

    fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|i| i % k).collect()
    }

    #[test]
    fn product_tables_have_exactly_zero_information() {
        let joint = array![[0.12, 0.18, 0.3], [0.08, 0.12, 0.2]]; // 0.6/0.4 x 0.2/0.3/0.5
        assert_eq!(plugin_mi(&joint).unwrap(), 0.0);
    }

    #[test]
    fn perfectly_correlated_table_reaches_ln_2() {
        let joint = array![[0.5, 0.0], [0.0, 0.5]];
        let mi = plugin_mi(&joint).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn reference_table_matches_the_summation_oracle() {
        // Independent term-by-term oracle:
        //   0.4 ln(0.4/0.30) + 0.1 ln(0.1/0.20) + 0.2 ln(0.2/0.30) + 0.3 ln(0.3/0.20)
        let oracle = 0.4 * (0.4f64 / 0.3).ln()
            + 0.1 * (0.1f64 / 0.2).ln()
            + 0.2 * (0.2f64 / 0.3).ln()
            + 0.3 * (0.3f64 / 0.2).ln();
        let mi = plugin_mi(&array![[0.4, 0.1], [0.2, 0.3]]).unwrap();
        assert!((mi - oracle).abs() < 1e-15, "{mi} vs {oracle}");
        assert!((mi - 0.08630462173553429).abs() < 1e-12, "{mi}");
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        for bad in [
            array![[0.5, -0.1], [0.3, 0.3]],
            array![[0.5, 0.2], [0.2, 0.2]], // sums to 1.1
            array![[f64::NAN, 0.5], [0.25, 0.25]],
        ] {
            assert!(plugin_mi(&bad).is_err());
        }
        assert!(plugin_mi(&Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn information_is_nonnegative_and_zero_only_on_products() {
        for seed in 0..200u64 {
            let mut rng = KeyRng::new(seed, &[0x6D69]);
            let mut joint = Array2::zeros((3, 4));
            for x in joint.iter_mut() {
                *x = rng.uniform();
            }
            let total = joint.sum();
            joint.mapv_inplace(|x| x / total);
            let mi = plugin_mi(&joint).unwrap();

            let pt: Vec<f64> = joint.rows().into_iter().map(|r| r.sum()).collect();
            let pv: Vec<f64> = joint.columns().into_iter().map(|c| c.sum()).collect();
            let residual = joint
                .indexed_iter()
                .map(|((t, v), &p)| (p - pt[t] * pv[v]).abs())
                .fold(0.0f64, f64::max);
            if residual < FACTORIZATION_TOL {
                assert_eq!(mi, 0.0);
            } else {
                assert!(mi > 0.0, "seed {seed}: mi={mi} residual={residual}");
            }
        }
    }

    #[test]
    fn category_blind_scenarios_report_exactly_zero_over_many_seeds() {
        let labels = balanced_labels(80, 4);
        for seed in 0..100u64 {
            for scenario in [
                Scenario::Complete,
                Scenario::Permuted,
                Scenario::CategoryAgnosticMissing,
            ] {
                let mi = verify_semantic_invariance(&labels, 3, scenario, seed).unwrap();
                assert_eq!(mi, 0.0, "{} seed {seed}", scenario.name());
            }
        }
    }

    #[test]
    fn category_dependent_missingness_breaks_invariance() {
        let labels = balanced_labels(80, 4);
        for seed in 0..100u64 {
            let mi =
                verify_semantic_invariance(&labels, 3, Scenario::CategoryDependentMissing, seed)
                    .unwrap();
            assert!(mi > 0.01, "seed {seed}: {mi}");
        }
    }

    #[test]
    fn agnostic_missingness_requires_quarterable_categories() {
        let labels = balanced_labels(81, 3); // category 0 has 27 samples
        let err = verify_semantic_invariance(&labels, 2, Scenario::CategoryAgnosticMissing, 0)
            .unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn scenario_input_validation() {
        assert!(verify_semantic_invariance(&[], 2, Scenario::Complete, 0).is_err());
        assert!(verify_semantic_invariance(&[0, 1], 1, Scenario::Complete, 0).is_err());
        assert!(verify_semantic_invariance(&[0, 0], 2, Scenario::Complete, 0).is_err());
    }

    #[test]
    fn spearman_handles_monotone_reversed_and_tied_data() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 1.0, -2.0]), Some(-1.0));
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 40.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        // Non-monotone: |rho| < 1.
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12, "{rho}");
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn rank_ties_share_the_average_position() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(average_ranks(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
    }

    fn sweep_config(lambda_sil: f64) -> TrainConfig {
        TrainConfig {
            k: Some(3),
            seed: 5,
            warmup_epochs: 2,
            max_epochs: 5,
            batch_size: 64,
            lambda_sil,
            adaption_dim: 8,
            encoder_hidden: vec![8],
            latent_dim: 4,
            decoder_hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sweep_needs_three_configs() {
        let ds = make_synthetic(30, 3, 3, &[4, 4], 0.1, 1).unwrap();
        let err = invariance_sweep(&ds, &[sweep_config(0.0), sweep_config(0.04)]).unwrap_err();
        assert!(matches!(err, SmileError::Argument(_)), "{err}");
    }

    #[test]
    fn identical_configs_yield_null_correlations() {
        let ds = make_synthetic(30, 3, 3, &[4, 4], 0.1, 2).unwrap();
        let cfgs = vec![sweep_config(0.04); 3];
        let report = invariance_sweep(&ds, &cfgs).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0], report.rows[1]);
        assert_eq!(report.rho_acc, None);
        assert_eq!(report.rho_car, None);
        assert_eq!(report.rho_nrmse, None);
    }

    #[test]
    fn sweep_rows_and_csv_have_the_fixed_column_set() {
        let ds = make_synthetic(30, 3, 3, &[4, 4], 0.1, 3).unwrap();
        let cfgs: Vec<TrainConfig> = [0.0, 0.04, 0.16].map(sweep_config).to_vec();
        let report = invariance_sweep(&ds, &cfgs).unwrap();
        assert_eq!(report.rows.len(), 3);
        for (row, cfg) in report.rows.iter().zip(&cfgs) {
            assert_eq!(row.lambda_sil, cfg.lambda_sil);
            assert!(row.mi_cxv.is_finite());
            assert!(row.acc.is_some()); // labelled complete data
            assert!(row.car.is_none() && row.nrmse.is_none());
        }
        assert_eq!(report.rho_car, None);
        assert_eq!(report.rho_nrmse, None);

        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("lambda_sil,mi_cxv,acc,car,nrmse"));
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 5);
        assert!(first.ends_with(",,"), "empty car/nrmse cells: {first}");
        assert_eq!(csv.lines().count(), 4);
    }
}
