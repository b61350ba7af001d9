//! Small synthetic census-like table with known dependencies, used for
//! demos and end-to-end tests.
//!
//! * `region` (6 levels) drives everything else.
//! * `tenure` (3 levels) is fixed for regions `r0` and `r1` and random
//!   otherwise, so `region -> tenure` is a disclosive key/target pair.
//! * `income` is bimodal: its mean depends on the region, shifted by tenure.
//! * `spend` is linear in `income` plus a tenure effect and noise.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::Result;
use crate::metrics::{MetricSpec, RegressionSpec};
use crate::schema::{ColumnData, ColumnSpec, Table, TableSchema};
use crate::trainer::TrainConfig;

const REGION_WEIGHTS: [f64; 6] = [0.25, 0.2, 0.15, 0.15, 0.15, 0.1];
const TENURE_GIVEN_REGION: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.6, 0.3, 0.1],
    [0.1, 0.6, 0.3],
    [0.3, 0.1, 0.6],
    [0.34, 0.33, 0.33],
];
const INCOME_MEAN: [f64; 6] = [3.0, -3.0, 3.0, -3.0, 3.0, -3.0];

pub fn toy_schema() -> TableSchema {
    TableSchema::new(vec![
        ColumnSpec::categorical("region", ["r0", "r1", "r2", "r3", "r4", "r5"]),
        ColumnSpec::categorical("tenure", ["own", "rent", "other"]),
        ColumnSpec::continuous("income"),
        ColumnSpec::continuous("spend"),
    ])
    .expect("valid toy schema")
}

/// Metric spec matching [`toy_table`].
pub fn toy_metric_spec() -> MetricSpec {
    MetricSpec {
        cio_regressions: vec![
            RegressionSpec {
                target: "spend".into(),
                predictors: vec!["income".into(), "tenure".into()],
            },
            RegressionSpec {
                target: "income".into(),
                predictors: vec!["region".into()],
            },
            RegressionSpec {
                target: "tenure".into(),
                predictors: vec!["income".into()],
            },
        ],
        roc_columns: vec!["region".into(), "tenure".into()],
        tcap_keys: vec!["region".into()],
        tcap_target: "tenure".into(),
    }
}

/// Desk-scale run on [`toy_table`]: 4 generators, selection every 4 steps,
/// 50 epochs of 500-row batches. Both networks use a learning rate of 1e-3
/// so the short run gets past the warm-up phase.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        mu: 4,
        select_every: 4,
        epochs: 50,
        batch_size: 500,
        seed,
        ..TrainConfig::default()
    };
    cfg.generator_adam.lr = 1e-3;
    cfg.discriminator_adam.lr = 1e-3;
    cfg
}

pub fn toy_table(n: usize, seed: u64) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region_dist = WeightedIndex::new(REGION_WEIGHTS).unwrap();
    let tenure_dist: Vec<WeightedIndex<f64>> = TENURE_GIVEN_REGION
        .iter()
        .map(|w| WeightedIndex::new(w).unwrap())
        .collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut region = Vec::with_capacity(n);
    let mut tenure = Vec::with_capacity(n);
    let mut income = Vec::with_capacity(n);
    let mut spend = Vec::with_capacity(n);
    for _ in 0..n {
        let r = region_dist.sample(&mut rng);
        let t = tenure_dist[r].sample(&mut rng);
        let x = INCOME_MEAN[r] + 0.5 * t as f64 + noise.sample(&mut rng);
        let y = 1.5 * x + if t == 2 { 0.8 } else { 0.0 } + noise.sample(&mut rng);
        region.push(r as u32);
        tenure.push(t as u32);
        income.push(round4(x));
        spend.push(round4(y));
    }
    Table::new(
        toy_schema(),
        vec![
            ColumnData::Categorical(region),
            ColumnData::Categorical(tenure),
            ColumnData::Continuous(income),
            ColumnData::Continuous(spend),
        ],
    )
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = toy_table(300, 5).unwrap();
        let b = toy_table(300, 5).unwrap();
        assert_eq!(a, b);
        toy_metric_spec().validate(a.schema()).unwrap();
        let region = a.categorical(0);
        let tenure = a.categorical(1);
        for (r, t) in region.iter().zip(tenure) {
            if *r == 0 {
                assert_eq!(*t, 0);
            }
        }
    }
}
