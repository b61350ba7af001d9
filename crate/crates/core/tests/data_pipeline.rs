use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tabevo::schema::{load_csv, read_csv, ColumnData, ColumnSpec, Table, TableSchema};
use tabevo::toy::toy_table;
use tabevo::transform::{Activation, CondSampler, DataTransformer, TransformConfig};

fn table_strategy() -> impl Strategy<Value = Table> {
    prop::collection::vec((0u32..3, -1e6f64..1e6, 0u32..2), 1..40).prop_map(|rows| {
        let schema = TableSchema::new(vec![
            ColumnSpec::categorical("c", ["x", "y y", "z,1"]),
            ColumnSpec::continuous("v"),
            ColumnSpec::categorical("d", ["0", "1"]),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![
                ColumnData::Categorical(rows.iter().map(|r| r.0).collect()),
                ColumnData::Continuous(rows.iter().map(|r| r.1).collect()),
                ColumnData::Categorical(rows.iter().map(|r| r.2).collect()),
            ],
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn csv_round_trip_is_lossless(t in table_strategy()) {
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Some(t.schema())).unwrap();
        prop_assert_eq!(back, t);
    }
}

#[test]
fn schema_file_and_inference_agree_on_toy_data() {
    let dir = tempfile::tempdir().unwrap();
    let t = toy_table(300, 2).unwrap();
    let path = dir.path().join("toy.csv");
    t.save_csv(&path).unwrap();
    let schema_path = dir.path().join("schema.json");
    std::fs::write(&schema_path, serde_json::to_string(t.schema()).unwrap()).unwrap();
    let declared = TableSchema::from_json_file(&schema_path).unwrap();
    let loaded = load_csv(&path, Some(&declared)).unwrap();
    assert_eq!(loaded, t);
    let inferred = load_csv(&path, None).unwrap();
    assert_eq!(inferred.n_rows(), 300);
    for (a, b) in inferred.schema().columns.iter().zip(&t.schema().columns) {
        assert_eq!(a.kind, b.kind);
    }
}

#[test]
fn encoding_layout_invariants_and_round_trip() {
    let t = toy_table(1500, 3).unwrap();
    let tf = DataTransformer::fit(&t, &TransformConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = tf.encode_table(&t, &mut rng);
    assert_eq!(enc.ncols(), tf.encoded_width());
    for row in enc.rows() {
        for span in tf.spans() {
            let block = row.slice(ndarray::s![span.range()]);
            match span.activation {
                Activation::Tanh => assert!(block[0] >= -1.0 && block[0] <= 1.0),
                Activation::Softmax => {
                    assert_eq!(block.sum(), 1.0);
                    assert!(block.iter().all(|&v| v == 0.0 || v == 1.0));
                }
            }
        }
    }
    let back = tf.decode(enc.view()).unwrap();
    assert_eq!(back.categorical(0), t.categorical(0));
    assert_eq!(back.categorical(1), t.categorical(1));
    let scalar_cols: Vec<usize> = tf
        .spans()
        .iter()
        .filter(|s| s.activation == Activation::Tanh)
        .map(|s| s.start)
        .collect();
    assert_eq!(scalar_cols.len(), 2);
    let mut exact = 0;
    for (c, &sc) in [2, 3].into_iter().zip(&scalar_cols) {
        for ((a, b), s) in back.continuous(c).iter().zip(t.continuous(c)).zip(enc.column(sc)) {
            // scalars clipped at the edge of an unlikely mode are lossy
            if s.abs() < 1.0 {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                exact += 1;
            }
        }
    }
    assert!(exact as f64 > 0.95 * 3000.0, "only {exact} unclipped values");
}

#[test]
fn condition_vectors_are_single_hot() {
    let t = toy_table(500, 4).unwrap();
    let conds = CondSampler::from_table(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (m, chosen) = conds.sample(300, &mut rng);
    assert_eq!(m.ncols(), 9);
    for (row, c) in m.rows().into_iter().zip(&chosen) {
        assert_eq!(row.sum(), 1.0);
        let offset = if c.column == 0 { 0 } else { 6 };
        assert_eq!(row[offset + c.category], 1.0);
    }
    let (m2, _) = conds.sample_original(300, &mut rng);
    assert!(m2.rows().into_iter().all(|r| r.sum() == 1.0));
}
