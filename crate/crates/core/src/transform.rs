//! Mapping between table rows and the GAN's encoded space.
//!
//! Continuous columns use mode-specific normalization: a variational Gaussian
//! mixture picks the modes, each value is assigned to one mode and scaled
//! within it. Categorical columns are one-hot. The conditional-vector sampler
//! implements training-by-sampling over the categorical columns.

use ndarray::{Array2, ArrayView2};
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnData, ColumnKind, Table, TableSchema, Value};
use crate::vgm::{self, VgmConfig};

/// Width of a mode in units of its standard deviation that maps onto [-1, 1].
const SCALE_STDS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub max_modes: usize,
    pub weight_threshold: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            max_modes: 10,
            weight_threshold: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEncoder {
    pub column: String,
    pub mode_means: Vec<f64>,
    pub mode_stds: Vec<f64>,
    pub mode_weights: Vec<f64>,
}

impl ContinuousEncoder {
    /// Fit the mixture and keep the components whose weight reaches
    /// `cfg.weight_threshold`.
    pub fn fit(column: &str, values: &[f64], cfg: &TransformConfig) -> Result<Self> {
        if cfg.max_modes == 0 {
            return Err(Error::Argument("max_modes must be at least 1".into()));
        }
        let first = values.first().copied();
        if values.len() < 2 || values.iter().all(|&v| Some(v) == first) {
            return Err(Error::Schema {
                column: column.to_string(),
                message: "continuous column has fewer than two distinct values; declare it \
                          categorical"
                    .into(),
            });
        }
        let fit = vgm::fit(
            values,
            &VgmConfig {
                max_components: cfg.max_modes,
                ..VgmConfig::default()
            },
        );
        let keep: Vec<usize> = (0..fit.weights.len())
            .filter(|&j| fit.weights[j] >= cfg.weight_threshold)
            .collect();
        // The heaviest component always survives.
        let keep = if keep.is_empty() {
            let best = (0..fit.weights.len())
                .max_by(|&a, &b| fit.weights[a].total_cmp(&fit.weights[b]))
                .unwrap();
            vec![best]
        } else {
            keep
        };
        let total: f64 = keep.iter().map(|&j| fit.weights[j]).sum();
        Ok(Self {
            column: column.to_string(),
            mode_means: keep.iter().map(|&j| fit.means[j]).collect(),
            mode_stds: keep.iter().map(|&j| fit.stds[j]).collect(),
            mode_weights: keep.iter().map(|&j| fit.weights[j] / total).collect(),
        })
    }

    pub fn mode_count(&self) -> usize {
        self.mode_means.len()
    }

    /// Posterior probability of each mode given the value.
    pub fn mode_probabilities(&self, v: f64) -> Vec<f64> {
        let log_p: Vec<f64> = (0..self.mode_count())
            .map(|m| {
                let z = (v - self.mode_means[m]) / self.mode_stds[m];
                self.mode_weights[m].ln() - self.mode_stds[m].ln() - 0.5 * z * z
            })
            .collect();
        let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = p.iter().sum();
        p.into_iter().map(|x| x / sum).collect()
    }

    pub fn scale_in_mode(&self, v: f64, mode: usize) -> f64 {
        ((v - self.mode_means[mode]) / (SCALE_STDS * self.mode_stds[mode])).clamp(-1.0, 1.0)
    }

    /// Sample a mode proportional to its density at `v`, return (scalar, mode).
    pub fn encode_value<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> (f64, usize) {
        let probs = self.mode_probabilities(v);
        let mode = WeightedIndex::new(&probs)
            .map(|d| d.sample(rng))
            .unwrap_or_else(|_| argmax(&probs));
        (self.scale_in_mode(v, mode), mode)
    }

    pub fn decode_value(&self, scalar: f64, mode: usize) -> f64 {
        scalar.clamp(-1.0, 1.0) * SCALE_STDS * self.mode_stds[mode] + self.mode_means[mode]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnTransform {
    Continuous(ContinuousEncoder),
    Categorical { n_categories: usize },
}

/// Output activation applied to a slice of the generator's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

/// Fitted per-column transforms plus the encoded layout they imply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataTransformer {
    pub schema: TableSchema,
    pub transforms: Vec<ColumnTransform>,
}

impl DataTransformer {
    pub fn fit(table: &Table, cfg: &TransformConfig) -> Result<Self> {
        let schema = table.schema().clone();
        let mut transforms = Vec::with_capacity(schema.len());
        for (i, spec) in schema.columns.iter().enumerate() {
            transforms.push(match spec.kind {
                ColumnKind::Continuous => ColumnTransform::Continuous(ContinuousEncoder::fit(
                    &spec.name,
                    table.continuous(i),
                    cfg,
                )?),
                ColumnKind::Categorical => ColumnTransform::Categorical {
                    n_categories: spec.categories.len(),
                },
            });
        }
        Ok(Self { schema, transforms })
    }

    /// Encoded layout: per continuous column a tanh scalar then a softmax mode
    /// block; per categorical column a softmax block.
    pub fn spans(&self) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut start = 0;
        for t in &self.transforms {
            match t {
                ColumnTransform::Continuous(enc) => {
                    spans.push(Span {
                        start,
                        width: 1,
                        activation: Activation::Tanh,
                    });
                    spans.push(Span {
                        start: start + 1,
                        width: enc.mode_count(),
                        activation: Activation::Softmax,
                    });
                    start += 1 + enc.mode_count();
                }
                ColumnTransform::Categorical { n_categories } => {
                    spans.push(Span {
                        start,
                        width: *n_categories,
                        activation: Activation::Softmax,
                    });
                    start += n_categories;
                }
            }
        }
        spans
    }

    pub fn encoded_width(&self) -> usize {
        self.spans().last().map_or(0, |s| s.start + s.width)
    }

    /// Encoded spans of the categorical columns, in schema order.
    pub fn categorical_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        let mut start = 0;
        for t in &self.transforms {
            match t {
                ColumnTransform::Continuous(enc) => start += 1 + enc.mode_count(),
                ColumnTransform::Categorical { n_categories } => {
                    out.push(Span {
                        start,
                        width: *n_categories,
                        activation: Activation::Softmax,
                    });
                    start += n_categories;
                }
            }
        }
        out
    }

    pub fn cond_width(&self) -> usize {
        self.categorical_spans().iter().map(|s| s.width).sum()
    }

    pub fn encode_row<R: Rng + ?Sized>(&self, row: &[Value], rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_width()];
        let mut start = 0;
        for (t, v) in self.transforms.iter().zip(row) {
            match (t, v) {
                (ColumnTransform::Continuous(enc), Value::Continuous(x)) => {
                    let (scalar, mode) = enc.encode_value(*x, rng);
                    out[start] = scalar;
                    out[start + 1 + mode] = 1.0;
                    start += 1 + enc.mode_count();
                }
                (ColumnTransform::Categorical { n_categories }, Value::Categorical(c)) => {
                    out[start + *c as usize] = 1.0;
                    start += n_categories;
                }
                _ => panic!("row does not match the fitted schema"),
            }
        }
        out
    }

    pub fn encode_table<R: Rng + ?Sized>(&self, table: &Table, rng: &mut R) -> Array2<f64> {
        let width = self.encoded_width();
        let mut out = Array2::zeros((table.n_rows(), width));
        for r in 0..table.n_rows() {
            let enc = self.encode_row(&table.row(r), rng);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&enc[..]));
        }
        out
    }

    /// Hard-decode (possibly soft) encoded rows using argmax per block.
    pub fn decode(&self, encoded: ArrayView2<f64>) -> Result<Table> {
        let width = self.encoded_width();
        if encoded.ncols() != width {
            return Err(Error::Shape {
                expected: width,
                actual: encoded.ncols(),
            });
        }
        let n = encoded.nrows();
        let mut columns = Vec::with_capacity(self.transforms.len());
        let mut start = 0;
        for t in &self.transforms {
            match t {
                ColumnTransform::Continuous(enc) => {
                    let k = enc.mode_count();
                    let values = (0..n)
                        .map(|r| {
                            let row = encoded.row(r);
                            let block: Vec<f64> = (0..k).map(|m| row[start + 1 + m]).collect();
                            enc.decode_value(row[start], argmax(&block))
                        })
                        .collect();
                    columns.push(ColumnData::Continuous(values));
                    start += 1 + k;
                }
                ColumnTransform::Categorical { n_categories } => {
                    let values = (0..n)
                        .map(|r| {
                            let row = encoded.row(r);
                            let block: Vec<f64> =
                                (0..*n_categories).map(|c| row[start + c]).collect();
                            argmax(&block) as u32
                        })
                        .collect();
                    columns.push(ColumnData::Categorical(values));
                    start += n_categories;
                }
            }
        }
        Table::new(self.schema.clone(), columns)
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A condition: one category of one categorical column. `column` indexes the
/// categorical columns (not the schema).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub column: usize,
    pub category: usize,
}

/// Training-by-sampling over categorical columns: pick a column uniformly,
/// then a category with probability proportional to `ln(1 + count)`.
#[derive(Clone, Debug)]
pub struct CondSampler {
    offsets: Vec<usize>,
    widths: Vec<usize>,
    pickers: Vec<Option<WeightedIndex<f64>>>,
    counts: Vec<Vec<usize>>,
}

impl CondSampler {
    pub fn from_table(table: &Table) -> Self {
        let counts = table
            .schema()
            .categorical_indices()
            .into_iter()
            .map(|i| table.category_counts(i))
            .collect();
        Self::from_counts(counts)
    }

    /// Build from per-column category counts (categorical columns in schema order).
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut widths = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            offsets.push(acc);
            widths.push(c.len());
            acc += c.len();
        }
        let pickers = counts
            .iter()
            .map(|c| {
                let w: Vec<f64> = c.iter().map(|&k| (1.0 + k as f64).ln()).collect();
                WeightedIndex::new(w).ok()
            })
            .collect();
        Self {
            offsets,
            widths,
            pickers,
            counts,
        }
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn cond_width(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Selection probability of every category of a categorical column, given
    /// that column was chosen.
    pub fn category_probabilities(&self, column: usize) -> Vec<f64> {
        let w: Vec<f64> = self.counts[column]
            .iter()
            .map(|&k| (1.0 + k as f64).ln())
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<Condition>) {
        let usable: Vec<usize> = (0..self.pickers.len())
            .filter(|&c| self.pickers[c].is_some())
            .collect();
        let chosen: Vec<Condition> = (0..n)
            .map(|_| {
                let column = usable[rng.random_range(0..usable.len())];
                let category = self.pickers[column].as_ref().unwrap().sample(rng);
                Condition { column, category }
            })
            .collect();
        (self.cond_matrix(&chosen), chosen)
    }

    /// Conditions for generation: a column uniformly, then a category with
    /// probability proportional to its raw count.
    pub fn sample_original<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> (Array2<f64>, Vec<Condition>) {
        let pickers: Vec<Option<WeightedIndex<f64>>> = self
            .counts
            .iter()
            .map(|c| WeightedIndex::new(c.iter().map(|&k| k as f64)).ok())
            .collect();
        let usable: Vec<usize> = (0..pickers.len()).filter(|&c| pickers[c].is_some()).collect();
        let chosen: Vec<Condition> = (0..n)
            .map(|_| {
                let column = usable[rng.random_range(0..usable.len())];
                let category = pickers[column].as_ref().unwrap().sample(rng);
                Condition { column, category }
            })
            .collect();
        (self.cond_matrix(&chosen), chosen)
    }

    pub fn cond_matrix(&self, chosen: &[Condition]) -> Array2<f64> {
        let mut m = Array2::zeros((chosen.len(), self.cond_width()));
        for (i, c) in chosen.iter().enumerate() {
            m[[i, self.offsets[c.column] + c.category]] = 1.0;
        }
        m
    }
}

/// Row lists per (categorical column, category) for drawing matching real rows.
#[derive(Clone, Debug)]
pub struct RowIndex {
    rows: Vec<Vec<Vec<usize>>>,
}

impl RowIndex {
    pub fn new(table: &Table) -> Self {
        let rows = table
            .schema()
            .categorical_indices()
            .into_iter()
            .map(|i| {
                let k = table.schema().columns[i].categories.len();
                let mut lists = vec![Vec::new(); k];
                for (r, &c) in table.categorical(i).iter().enumerate() {
                    lists[c as usize].push(r);
                }
                lists
            })
            .collect();
        Self { rows }
    }

    /// Uniformly draw one row satisfying each condition.
    pub fn sample<R: Rng + ?Sized>(&self, chosen: &[Condition], rng: &mut R) -> Result<Vec<usize>> {
        chosen
            .iter()
            .map(|c| {
                let list = &self.rows[c.column][c.category];
                if list.is_empty() {
                    Err(Error::Argument(format!(
                        "no rows match category {} of categorical column {}",
                        c.category, c.column
                    )))
                } else {
                    Ok(list[rng.random_range(0..list.len())])
                }
            })
            .collect()
    }
}

/// Sample `n` conditional vectors by training-by-sampling against `table`.
pub fn sample_condvec(table: &Table, n: usize, seed: u64) -> (Array2<f64>, Vec<Condition>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CondSampler::from_table(table).sample(n, &mut rng)
}

/// Draw real rows matching each chosen condition, with their conditional vectors.
pub fn sample_real_matching(
    table: &Table,
    chosen: &[Condition],
    seed: u64,
) -> Result<(Table, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = RowIndex::new(table).sample(chosen, &mut rng)?;
    let cond = CondSampler::from_table(table).cond_matrix(chosen);
    Ok((table.select_rows(&rows), cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnSpec;

    fn encoder() -> ContinuousEncoder {
        ContinuousEncoder {
            column: "x".into(),
            mode_means: vec![0.0, 10.0],
            mode_stds: vec![1.0, 2.0],
            mode_weights: vec![0.5, 0.5],
        }
    }

    fn small_table() -> Table {
        let schema = TableSchema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::categorical("sex", ["F", "M"]),
            ColumnSpec::categorical("c", ["a", "b", "z"]),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![
                ColumnData::Continuous(vec![0.5, 1.0, 9.0, 11.0, 10.0, -0.5]),
                ColumnData::Categorical(vec![0, 1, 0, 1, 0, 0]),
                ColumnData::Categorical(vec![0, 0, 1, 1, 0, 1]),
            ],
        )
        .unwrap()
    }

    fn transformer() -> DataTransformer {
        let t = small_table();
        DataTransformer {
            schema: t.schema().clone(),
            transforms: vec![
                ColumnTransform::Continuous(encoder()),
                ColumnTransform::Categorical { n_categories: 2 },
                ColumnTransform::Categorical { n_categories: 3 },
            ],
        }
    }

    #[test]
    fn scalar_is_centered_and_scaled() {
        let e = encoder();
        assert_eq!(e.scale_in_mode(10.0, 1), 0.0);
        assert_eq!(e.scale_in_mode(10.0 + 4.0 * 2.0, 1), 1.0);
        assert_eq!(e.scale_in_mode(100.0, 1), 1.0);
        assert_eq!(e.decode_value(1.0, 1), 18.0);
        assert_eq!(e.decode_value(-3.0, 0), -4.0);
    }

    #[test]
    fn categorical_one_hot() {
        let dt = transformer();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let row = dt.encode_row(
            &[Value::Continuous(0.0), Value::Categorical(0), Value::Categorical(2)],
            &mut rng,
        );
        // x: scalar + 2 modes, sex: 2, c: 3
        assert_eq!(row.len(), 8);
        assert_eq!(&row[3..5], &[1.0, 0.0]);
        assert_eq!(&row[5..8], &[0.0, 0.0, 1.0]);
        assert_eq!(row[0], 0.0);
        assert_eq!(row[1], 1.0);
    }

    #[test]
    fn roundtrip() {
        let t = small_table();
        let dt = transformer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = dt.encode_table(&t, &mut rng);
        let back = dt.decode(enc.view()).unwrap();
        for r in 0..t.n_rows() {
            assert_eq!(back.categorical(1)[r], t.categorical(1)[r]);
            assert_eq!(back.categorical(2)[r], t.categorical(2)[r]);
            assert!((back.continuous(0)[r] - t.continuous(0)[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn width_mismatch() {
        let dt = transformer();
        let m = Array2::<f64>::zeros((2, 5));
        assert!(matches!(dt.decode(m.view()), Err(Error::Shape { expected: 8, actual: 5 })));
    }

    #[test]
    fn soft_rows_decode_by_argmax() {
        let dt = transformer();
        let m = ndarray::arr2(&[[0.25, 0.3, 0.7, 0.6, 0.4, 0.2, 0.5, 0.3]]);
        let t = dt.decode(m.view()).unwrap();
        assert_eq!(t.categorical(1), &[0]);
        assert_eq!(t.categorical(2), &[1]);
        assert!((t.continuous(0)[0] - (0.25 * 8.0 + 10.0)).abs() < 1e-12);
    }

    #[test]
    fn layout_and_cond_width() {
        let dt = transformer();
        assert_eq!(dt.encoded_width(), 8);
        assert_eq!(dt.cond_width(), 5);
        let cs = dt.categorical_spans();
        assert_eq!((cs[0].start, cs[0].width), (3, 2));
        assert_eq!((cs[1].start, cs[1].width), (5, 3));
    }

    #[test]
    fn zero_frequency_never_chosen() {
        let t = small_table();
        let (cond, chosen) = sample_condvec(&t, 2000, 1);
        assert!(chosen.iter().all(|c| !(c.column == 1 && c.category == 2)));
        for row in cond.rows() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row[4], 0.0);
        }
    }

    #[test]
    fn matching_rows_satisfy_condition() {
        let t = small_table();
        let chosen: Vec<Condition> = (0..50)
            .map(|i| Condition {
                column: 0,
                category: i % 2,
            })
            .collect();
        let (rows, cond) = sample_real_matching(&t, &chosen, 4).unwrap();
        for (i, c) in chosen.iter().enumerate() {
            assert_eq!(rows.categorical(1)[i] as usize, c.category);
            assert_eq!(cond.row(i).sum(), 1.0);
            assert_eq!(cond[[i, c.category]], 1.0);
        }
        let missing = [Condition {
            column: 1,
            category: 2,
        }];
        assert!(sample_real_matching(&t, &missing, 4).is_err());
    }

    #[test]
    fn constant_column_rejected() {
        let err = ContinuousEncoder::fit("k", &[3.0; 20], &TransformConfig::default()).unwrap_err();
        assert!(err.to_string().contains("categorical"));
    }

    fn mixture_sample(seed: u64) -> Vec<f64> {
        use rand_distr::Normal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(10.0, 1.0).unwrap();
        (0..10_000)
            .map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect()
    }

    #[test]
    fn bimodal_column_gets_two_modes() {
        let enc = ContinuousEncoder::fit("x", &mixture_sample(1), &TransformConfig::default()).unwrap();
        assert_eq!(enc.mode_count(), 2, "{enc:?}");
        let mut means = enc.mode_means.clone();
        means.sort_by(f64::total_cmp);
        assert!(means[0].abs() < 0.5 && (means[1] - 10.0).abs() < 0.5, "{means:?}");
        assert!((enc.mode_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unimodal_column_gets_one_mode() {
        use rand_distr::Normal;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Normal::new(3.0, 2.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let enc = ContinuousEncoder::fit("x", &x, &TransformConfig::default()).unwrap();
        assert_eq!(enc.mode_count(), 1, "{enc:?}");
    }
}
