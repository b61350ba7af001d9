//! Utility and disclosure-risk metrics for a synthetic/original table pair.
//!
//! Utility averages confidence-interval overlap (CIO) of regression
//! coefficients and the ratio of counts (ROC) over frequency tables. Risk is
//! the targeted correct attribution probability (TCAP), normalized against a
//! guess drawn from the synthetic marginal of the target.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::schema::{sample_rows, ColumnKind, Table, TableSchema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub target: String,
    pub predictors: Vec<String>,
}

/// Which columns feed each metric. Part of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub cio_regressions: Vec<RegressionSpec>,
    pub roc_columns: Vec<String>,
    pub tcap_keys: Vec<String>,
    pub tcap_target: String,
}

impl MetricSpec {
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        let categorical = |name: &str| -> Result<usize> {
            let i = schema.require(name)?;
            if schema.columns[i].kind != ColumnKind::Categorical {
                return Err(Error::Schema {
                    column: name.to_string(),
                    message: "must be categorical".into(),
                });
            }
            Ok(i)
        };
        for reg in &self.cio_regressions {
            schema.require(&reg.target)?;
            for p in &reg.predictors {
                schema.require(p)?;
                if *p == reg.target {
                    return Err(Error::Schema {
                        column: p.clone(),
                        message: "regression target listed as its own predictor".into(),
                    });
                }
            }
        }
        for c in &self.roc_columns {
            categorical(c)?;
        }
        for k in &self.tcap_keys {
            categorical(k)?;
        }
        categorical(&self.tcap_target)?;
        if self.tcap_keys.contains(&self.tcap_target) {
            return Err(Error::Schema {
                column: self.tcap_target.clone(),
                message: "TCAP target must not be a key".into(),
            });
        }
        if self.tcap_keys.is_empty() {
            return Err(Error::Argument("TCAP needs at least one key".into()));
        }
        Ok(())
    }
}

/// A 95% interval for one coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Overlap of two confidence intervals; negative when they are disjoint.
pub fn interval_overlap(orig: Interval, synth: Interval) -> f64 {
    let inner = orig.upper.min(synth.upper) - orig.lower.max(synth.lower);
    0.5 * (inner / (orig.upper - orig.lower) + inner / (synth.upper - synth.lower))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CioTerm {
    pub model: String,
    pub coefficient: String,
    pub original: Interval,
    pub synthetic: Interval,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocTable {
    pub columns: Vec<String>,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcapResult {
    /// Whether any original record could be targeted.
    pub defined: bool,
    pub raw: f64,
    pub baseline: f64,
    pub normalized: f64,
    pub targeted_records: usize,
}

/// Full metric breakdown for one synthetic table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cio: f64,
    pub roc: f64,
    pub utility: f64,
    pub tcap_raw: f64,
    pub tcap_baseline: f64,
    pub risk: f64,
    pub tcap_defined: bool,
    pub tcap_targeted_records: usize,
    pub n_eval: usize,
    pub n_original: usize,
    pub cio_terms: Vec<CioTerm>,
    pub roc_tables: Vec<RocTable>,
    pub warnings: Vec<String>,
    pub risk_normalization: String,
}

const RISK_NORMALIZATION: &str = "risk = (tcap_raw - tcap_baseline) / (1 - tcap_baseline); \
tcap_raw averages, over original records whose key combination appears in the synthetic data \
with a single target value, whether that value equals the record's target; tcap_baseline \
averages, over the same records, the synthetic marginal probability of the record's target";

/// One fitted linear predictor: named coefficients with 95% intervals.
#[derive(Clone, Debug)]
struct FittedModel {
    name: String,
    coefficients: Vec<String>,
    intervals: Vec<Interval>,
}

/// Build the design matrix: intercept, raw continuous predictors, and
/// treatment-coded categorical predictors (first category is the reference).
fn design_matrix(table: &Table, predictors: &[usize]) -> (DMatrix<f64>, Vec<String>) {
    let schema = table.schema();
    let mut names = vec!["(intercept)".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; table.n_rows()]];
    for &p in predictors {
        let spec = &schema.columns[p];
        match spec.kind {
            ColumnKind::Continuous => {
                names.push(spec.name.clone());
                cols.push(table.continuous(p).to_vec());
            }
            ColumnKind::Categorical => {
                let values = table.categorical(p);
                for (c, cat) in spec.categories.iter().enumerate().skip(1) {
                    names.push(format!("{}={}", spec.name, cat));
                    cols.push(values.iter().map(|&v| f64::from(v as usize == c)).collect());
                }
            }
        }
    }
    let n = table.n_rows();
    let x = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
    (x, names)
}

fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, usize)> {
    let (n, p) = x.shape();
    if n < p + 2 {
        return None;
    }
    let xtx = x.transpose() * x;
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    let df = n - p;
    let sigma2 = resid.dot(&resid) / df as f64;
    let inv = chol.inverse();
    let se = DVector::from_fn(p, |i, _| (sigma2 * inv[(i, i)]).sqrt());
    if beta.iter().chain(se.iter()).any(|v| !v.is_finite()) || !well_conditioned(&xtx, &inv) {
        return None;
    }
    Some((beta, se, df))
}

/// Rejects numerically singular normal equations that Cholesky still accepted.
fn well_conditioned(a: &DMatrix<f64>, inv: &DMatrix<f64>) -> bool {
    let norm = |m: &DMatrix<f64>| m.iter().map(|v| v.abs()).fold(0.0, f64::max);
    norm(a) * norm(inv) < 1e12
}

fn fit_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, p) = x.shape();
    if n < p + 2 {
        return None;
    }
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut xw = x.clone();
        for (r, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[r];
        }
        let hess = x.transpose() * xw;
        let chol = hess.cholesky()?;
        let step = chol.solve(&(x.transpose() * (y - &mu)));
        beta += &step;
        if !beta.iter().all(|b| b.is_finite()) {
            return None;
        }
        if step.amax() < 1e-10 {
            let eta = x * &beta;
            let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
            let mut xw = x.clone();
            for (r, mut row) in xw.row_iter_mut().enumerate() {
                row *= (mu[r] * (1.0 - mu[r])).max(1e-12);
            }
            let hess = x.transpose() * xw;
            let chol = hess.clone().cholesky()?;
            let inv = chol.inverse();
            if !well_conditioned(&hess, &inv) {
                return None;
            }
            let se = DVector::from_fn(p, |i, _| inv[(i, i)].sqrt());
            return Some((beta, se));
        }
    }
    None
}

/// Fit every model implied by one regression spec. Continuous targets get OLS
/// with t intervals; categorical targets get one logistic regression per
/// non-reference category (that category vs all others) with Wald intervals.
fn fit_models(table: &Table, reg: &RegressionSpec, index: usize) -> Vec<(String, Option<FittedModel>)> {
    let schema = table.schema();
    let target = schema.index_of(&reg.target).expect("validated");
    let predictors: Vec<usize> = reg
        .predictors
        .iter()
        .map(|p| schema.index_of(p).expect("validated"))
        .collect();
    let (x, names) = design_matrix(table, &predictors);
    let spec = &schema.columns[target];
    let label = format!("#{index} {} ~ {}", reg.target, reg.predictors.join(" + "));
    match spec.kind {
        ColumnKind::Continuous => {
            let y = DVector::from_column_slice(table.continuous(target));
            let fit = fit_ols(&x, &y).map(|(beta, se, df)| {
                let t = StudentsT::new(0.0, 1.0, df as f64)
                    .expect("positive degrees of freedom")
                    .inverse_cdf(0.975);
                FittedModel {
                    name: label.clone(),
                    coefficients: names.clone(),
                    intervals: (0..beta.len())
                        .map(|i| Interval {
                            lower: beta[i] - t * se[i],
                            upper: beta[i] + t * se[i],
                        })
                        .collect(),
                }
            });
            vec![(label, fit)]
        }
        ColumnKind::Categorical => {
            let z = Normal::standard().inverse_cdf(0.975);
            let values = table.categorical(target);
            (1..spec.categories.len())
                .map(|c| {
                    let name = format!("{label} [{}={}]", reg.target, spec.categories[c]);
                    let y = DVector::from_iterator(
                        values.len(),
                        values.iter().map(|&v| f64::from(v as usize == c)),
                    );
                    let fit = fit_logistic(&x, &y).map(|(beta, se)| FittedModel {
                        name: name.clone(),
                        coefficients: names.clone(),
                        intervals: (0..beta.len())
                            .map(|i| Interval {
                                lower: beta[i] - z * se[i],
                                upper: beta[i] + z * se[i],
                            })
                            .collect(),
                    });
                    (name, fit)
                })
                .collect()
        }
    }
}

/// Count tables for every univariate and bivariate combination of the ROC
/// columns. Cells are laid out row-major over the categories.
fn frequency_tables(table: &Table, columns: &[usize]) -> Vec<(Vec<usize>, Vec<f64>)> {
    let schema = table.schema();
    let mut out = Vec::new();
    for &c in columns {
        let counts = table.category_counts(c).into_iter().map(|x| x as f64).collect();
        out.push((vec![c], counts));
    }
    for a in 0..columns.len() {
        for b in (a + 1)..columns.len() {
            let (ca, cb) = (columns[a], columns[b]);
            let kb = schema.columns[cb].categories.len();
            let mut counts = vec![0.0; schema.columns[ca].categories.len() * kb];
            for (&va, &vb) in table.categorical(ca).iter().zip(table.categorical(cb)) {
                counts[va as usize * kb + vb as usize] += 1.0;
            }
            out.push((vec![ca, cb], counts));
        }
    }
    out
}

/// Original-side state shared across many synthetic evaluations.
pub struct MetricContext {
    original: Table,
    spec: MetricSpec,
    models: Vec<Vec<(String, Option<FittedModel>)>>,
    roc_columns: Vec<usize>,
    tables: Vec<(Vec<usize>, Vec<f64>)>,
    keys: Vec<usize>,
    target: usize,
}

impl MetricContext {
    pub fn new(original: &Table, spec: &MetricSpec) -> Result<Self> {
        spec.validate(original.schema())?;
        let schema = original.schema();
        let models: Vec<Vec<(String, Option<FittedModel>)>> = spec
            .cio_regressions
            .iter()
            .enumerate()
            .map(|(i, r)| fit_models(original, r, i))
            .collect();
        let roc_columns: Vec<usize> = spec
            .roc_columns
            .iter()
            .map(|c| schema.index_of(c).unwrap())
            .collect();
        let tables = frequency_tables(original, &roc_columns);
        let fitted: usize = models
            .iter()
            .map(|m| m.iter().filter(|(_, f)| f.is_some()).count())
            .sum();
        if !spec.cio_regressions.is_empty() && fitted == 0 {
            return Err(Error::Metric(
                "no regression in the metric spec can be fitted on the original data".into(),
            ));
        }
        Ok(Self {
            original: original.clone(),
            spec: spec.clone(),
            models,
            tables,
            roc_columns,
            keys: spec.tcap_keys.iter().map(|k| schema.index_of(k).unwrap()).collect(),
            target: schema.index_of(&spec.tcap_target).unwrap(),
        })
    }

    pub fn original(&self) -> &Table {
        &self.original
    }

    /// Mean coefficient overlap with its per-term breakdown.
    pub fn cio(&self, synthetic: &Table) -> Result<(f64, Vec<CioTerm>, Vec<String>)> {
        self.original.ensure_same_schema(synthetic)?;
        let mut terms = Vec::new();
        let mut warnings = Vec::new();
        for (i, reg) in self.spec.cio_regressions.iter().enumerate() {
            let synth_models = fit_models(synthetic, reg, i);
            for ((name, orig), (_, synth)) in self.models[i].iter().zip(synth_models) {
                let (orig, synth) = match (orig, synth) {
                    (Some(o), Some(s)) => (o, s),
                    (o, _) => {
                        let side = if o.is_none() { "original" } else { "synthetic" };
                        warnings.push(format!("skipped {name}: singular or non-convergent fit on {side} data"));
                        continue;
                    }
                };
                for (k, coef) in orig.coefficients.iter().enumerate() {
                    let (a, b) = (orig.intervals[k], synth.intervals[k]);
                    if !(a.upper > a.lower) || !(b.upper > b.lower) {
                        warnings.push(format!("skipped {}: {coef} has a zero-width interval", orig.name));
                        continue;
                    }
                    terms.push(CioTerm {
                        model: orig.name.clone(),
                        coefficient: coef.clone(),
                        original: a,
                        synthetic: b,
                        overlap: interval_overlap(a, b),
                    });
                }
            }
        }
        if terms.is_empty() {
            // Nothing fits on the synthetic side: no coefficient is reproduced.
            warnings.push("no regression coefficient could be compared; CIO set to 0".into());
            return Ok((0.0, terms, warnings));
        }
        let mean = terms.iter().map(|t| t.overlap).sum::<f64>() / terms.len() as f64;
        Ok((mean, terms, warnings))
    }

    /// Mean over frequency tables of the mean per-cell min/max count ratio.
    pub fn roc(&self, synthetic: &Table) -> Result<(f64, Vec<RocTable>)> {
        self.original.ensure_same_schema(synthetic)?;
        if self.tables.is_empty() {
            return Ok((1.0, Vec::new()));
        }
        // Synthetic counts are rescaled to the original's size.
        let scale = self.original.n_rows() as f64 / synthetic.n_rows() as f64;
        let synth_tables = frequency_tables(synthetic, &self.roc_columns);
        let schema = self.original.schema();
        let mut per_table = Vec::with_capacity(self.tables.len());
        for ((cols, orig), (_, synth)) in self.tables.iter().zip(&synth_tables) {
            let mut sum = 0.0;
            for (&o, &s) in orig.iter().zip(synth) {
                sum += cell_ratio(o, s * scale);
            }
            per_table.push(RocTable {
                columns: cols.iter().map(|&c| schema.columns[c].name.clone()).collect(),
                mean_ratio: sum / orig.len() as f64,
            });
        }
        let mean = per_table.iter().map(|t| t.mean_ratio).sum::<f64>() / per_table.len() as f64;
        Ok((mean, per_table))
    }

    pub fn tcap(&self, synthetic: &Table) -> Result<TcapResult> {
        self.original.ensure_same_schema(synthetic)?;
        Ok(tcap_by_index(&self.original, synthetic, &self.keys, self.target))
    }

    pub fn evaluate(&self, synthetic: &Table) -> Result<EvaluationReport> {
        let (cio, cio_terms, mut warnings) = self.cio(synthetic)?;
        let (roc, roc_tables) = self.roc(synthetic)?;
        let t = self.tcap(synthetic)?;
        if !t.defined {
            warnings.push("no original record could be targeted; risk reported as 0".into());
        }
        Ok(EvaluationReport {
            cio,
            roc,
            utility: (cio + roc) / 2.0,
            tcap_raw: t.raw,
            tcap_baseline: t.baseline,
            risk: t.normalized,
            tcap_defined: t.defined,
            tcap_targeted_records: t.targeted_records,
            n_eval: synthetic.n_rows(),
            n_original: self.original.n_rows(),
            cio_terms,
            roc_tables,
            warnings,
            risk_normalization: RISK_NORMALIZATION.to_string(),
        })
    }

    /// (utility, normalized risk) only.
    pub fn objectives(&self, synthetic: &Table) -> Result<(f64, f64)> {
        let (cio, _, _) = self.cio(synthetic)?;
        let (roc, _) = self.roc(synthetic)?;
        Ok(((cio + roc) / 2.0, self.tcap(synthetic)?.normalized))
    }
}

fn cell_ratio(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == 0.0 {
        1.0
    } else {
        a.min(b) / hi
    }
}

fn tcap_by_index(original: &Table, synthetic: &Table, keys: &[usize], target: usize) -> TcapResult {
    let key_of = |t: &Table, r: usize| -> Vec<u32> { keys.iter().map(|&k| t.categorical(k)[r]).collect() };
    // key -> Some(target) when every synthetic record with that key shares one target
    let mut classes: HashMap<Vec<u32>, Option<u32>> = HashMap::new();
    let synth_target = synthetic.categorical(target);
    for r in 0..synthetic.n_rows() {
        let t = synth_target[r];
        classes
            .entry(key_of(synthetic, r))
            .and_modify(|v| {
                if *v != Some(t) {
                    *v = None;
                }
            })
            .or_insert(Some(t));
    }
    let marginal: Vec<f64> = synthetic
        .category_counts(target)
        .into_iter()
        .map(|c| c as f64 / synthetic.n_rows() as f64)
        .collect();

    let orig_target = original.categorical(target);
    let (mut hits, mut base, mut targeted) = (0usize, 0.0, 0usize);
    for r in 0..original.n_rows() {
        if let Some(Some(t)) = classes.get(&key_of(original, r)) {
            targeted += 1;
            if *t == orig_target[r] {
                hits += 1;
            }
            base += marginal[orig_target[r] as usize];
        }
    }
    if targeted == 0 {
        return TcapResult {
            defined: false,
            raw: 0.0,
            baseline: 0.0,
            normalized: 0.0,
            targeted_records: 0,
        };
    }
    let raw = hits as f64 / targeted as f64;
    let baseline = base / targeted as f64;
    let normalized = if baseline < 1.0 {
        (raw - baseline) / (1.0 - baseline)
    } else {
        0.0
    };
    TcapResult {
        defined: true,
        raw,
        baseline,
        normalized,
        targeted_records: targeted,
    }
}

/// Mean confidence-interval overlap over all regression coefficients.
pub fn cio(original: &Table, synthetic: &Table, spec: &MetricSpec) -> Result<f64> {
    Ok(MetricContext::new(original, spec)?.cio(synthetic)?.0)
}

/// Ratio of counts over all univariate and bivariate frequency tables.
pub fn roc(original: &Table, synthetic: &Table, spec: &MetricSpec) -> Result<f64> {
    Ok(MetricContext::new(original, spec)?.roc(synthetic)?.0)
}

/// Targeted correct attribution probability of `target` given `keys`.
pub fn tcap(original: &Table, synthetic: &Table, keys: &[String], target: &str) -> Result<TcapResult> {
    original.ensure_same_schema(synthetic)?;
    let schema = original.schema();
    let mut idx = Vec::with_capacity(keys.len());
    for k in keys {
        let i = schema.require(k)?;
        if schema.columns[i].kind != ColumnKind::Categorical {
            return Err(Error::Schema {
                column: k.clone(),
                message: "TCAP keys must be categorical".into(),
            });
        }
        idx.push(i);
    }
    let t = schema.require(target)?;
    if schema.columns[t].kind != ColumnKind::Categorical {
        return Err(Error::Schema {
            column: target.to_string(),
            message: "TCAP target must be categorical".into(),
        });
    }
    Ok(tcap_by_index(original, synthetic, &idx, t))
}

/// `(cio + roc) / 2`, returned with both components.
pub fn utility(original: &Table, synthetic: &Table, spec: &MetricSpec) -> Result<(f64, f64, f64)> {
    let ctx = MetricContext::new(original, spec)?;
    let (c, _, _) = ctx.cio(synthetic)?;
    let (r, _) = ctx.roc(synthetic)?;
    Ok(((c + r) / 2.0, c, r))
}

/// Full-size evaluation report.
pub fn evaluate(original: &Table, synthetic: &Table, spec: &MetricSpec) -> Result<EvaluationReport> {
    MetricContext::new(original, spec)?.evaluate(synthetic)
}

/// Positive when `current = (f_u, f_r)` beats `best`: a utility gain weighted
/// by `lambda` against the increase in risk clipped at zero.
pub fn improvement_score(current: (f64, f64), best: (f64, f64), lambda: f64) -> f64 {
    lambda * (current.0 - best.0) + best.1.max(0.0) - current.1.max(0.0)
}

/// Anything that can produce synthetic rows on demand.
pub trait RowSynthesizer {
    fn synthesize(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Table>;
}

/// Minimum subsample size for the fast objective path.
pub const MIN_FAST_EVAL: usize = 100;

/// Fast-path evaluator: one original subsample and one synthesis seed, so
/// every synthesizer scored by the same evaluator sees paired inputs.
pub struct FastEvaluator {
    ctx: MetricContext,
    n_eval: usize,
    synth_seed: u64,
}

impl FastEvaluator {
    pub fn new(original: &Table, spec: &MetricSpec, n_eval: usize, seed: u64) -> Result<Self> {
        if n_eval < MIN_FAST_EVAL {
            return Err(Error::Argument(format!(
                "n_eval must be at least {MIN_FAST_EVAL}, got {n_eval}"
            )));
        }
        let subsample = sample_rows(original, n_eval, seed)?;
        Ok(Self {
            ctx: MetricContext::new(&subsample, spec)?,
            n_eval,
            synth_seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        })
    }

    /// `(f_u, f_r)` of `n_eval` rows from `synthesizer`.
    pub fn evaluate<S: RowSynthesizer + ?Sized>(&self, synthesizer: &S) -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.synth_seed);
        let synthetic = synthesizer.synthesize(self.n_eval, &mut rng)?;
        self.ctx.objectives(&synthetic)
    }
}

/// Utility and risk on `n_eval` synthetic rows against an `n_eval`-row
/// subsample of the original.
pub fn fast_objectives<S: RowSynthesizer + ?Sized>(
    original: &Table,
    spec: &MetricSpec,
    synthesizer: &S,
    n_eval: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    FastEvaluator::new(original, spec, n_eval, seed)?.evaluate(synthesizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnData, ColumnSpec};

    #[test]
    fn overlap_examples() {
        let a = Interval { lower: 0.0, upper: 2.0 };
        let b = Interval { lower: 1.0, upper: 3.0 };
        assert_eq!(interval_overlap(a, b), 0.5);
        assert_eq!(interval_overlap(a, a), 1.0);
        let c = Interval { lower: 0.0, upper: 1.0 };
        let d = Interval { lower: 2.0, upper: 3.0 };
        assert!(interval_overlap(c, d) < 0.0);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_score((0.4, 0.1), (0.4, 0.1), 2.0), 0.0);
        let s = improvement_score((0.5, 0.3), (0.4, 0.1), 2.0);
        assert!(s.abs() < 1e-12 && !(s > 1e-12));
        assert_eq!(improvement_score((0.5, -0.2), (0.5, -0.9), 2.0), 0.0);
    }

    #[test]
    fn cell_ratio_conventions() {
        assert_eq!(cell_ratio(8.0, 10.0), 0.8);
        assert_eq!(cell_ratio(0.0, 0.0), 1.0);
        assert_eq!(cell_ratio(3.0, 0.0), 0.0);
    }

    fn table(a: Vec<u32>, b: Vec<u32>) -> Table {
        let schema = TableSchema::new(vec![
            ColumnSpec::categorical("k", ["A", "B"]),
            ColumnSpec::categorical("t", ["X", "Y"]),
        ])
        .unwrap();
        Table::new(schema, vec![ColumnData::Categorical(a), ColumnData::Categorical(b)]).unwrap()
    }

    #[test]
    fn tcap_undefined_without_targetable_classes() {
        let orig = table(vec![0, 0, 1, 1], vec![0, 1, 0, 1]);
        let t = tcap(&orig, &orig, &["k".into()], "t").unwrap();
        assert!(!t.defined);
        assert_eq!(t.normalized, 0.0);
    }

    #[test]
    fn tcap_identity_is_one_when_keys_determine_target() {
        let orig = table(vec![0, 0, 1, 1, 1], vec![0, 0, 1, 1, 1]);
        let t = tcap(&orig, &orig, &["k".into()], "t").unwrap();
        assert_eq!((t.raw, t.normalized), (1.0, 1.0));
        assert!(tcap(&orig, &orig, &["t".into()], "zz").is_err());
    }

    #[test]
    fn roc_scales_synthetic_counts() {
        let spec = MetricSpec {
            cio_regressions: vec![],
            roc_columns: vec!["k".into()],
            tcap_keys: vec!["k".into()],
            tcap_target: "t".into(),
        };
        let orig = table(vec![0, 0, 1, 1], vec![0, 1, 0, 1]);
        let synth = table(vec![0, 0, 1, 1, 0, 0, 1, 1], vec![0; 8]);
        assert_eq!(roc(&orig, &synth, &spec).unwrap(), 1.0);
    }

    #[test]
    fn spec_validation() {
        let orig = table(vec![0], vec![0]);
        let bad = MetricSpec {
            cio_regressions: vec![],
            roc_columns: vec![],
            tcap_keys: vec!["t".into()],
            tcap_target: "t".into(),
        };
        assert!(bad.validate(orig.schema()).is_err());
        let unknown = MetricSpec {
            tcap_keys: vec!["nope".into()],
            ..bad
        };
        assert!(unknown.validate(orig.schema()).is_err());
    }
}
