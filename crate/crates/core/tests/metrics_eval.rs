use rand_chacha::ChaCha8Rng;

use tabevo::metrics::{
    self, fast_objectives, improvement_score, interval_overlap, EvaluationReport, Interval,
    MetricContext, RowSynthesizer,
};
use tabevo::schema::{sample_independent, sample_rows_with, Table};
use tabevo::toy::{toy_metric_spec, toy_table};
use tabevo::Result;

#[test]
fn identity_has_full_utility_and_risk() {
    let t = toy_table(800, 1).unwrap();
    let r = metrics::evaluate(&t, &t, &toy_metric_spec()).unwrap();
    assert_eq!(r.utility, 1.0);
    assert_eq!(r.cio, 1.0);
    assert_eq!(r.roc, 1.0);
    assert_eq!(r.risk, 1.0);
    assert!(r.tcap_defined);
}

#[test]
fn independence_sampler_has_no_risk() {
    let t = toy_table(3000, 2).unwrap();
    let spec = toy_metric_spec();
    for seed in 0..3 {
        let s = sample_independent(&t, 3000, seed).unwrap();
        let r = metrics::evaluate(&t, &s, &spec).unwrap();
        assert!(r.risk.abs() <= 0.1, "risk {}", r.risk);
        assert!(r.utility < 0.9);
    }
}

#[test]
fn report_round_trips_through_json() {
    let t = toy_table(500, 3).unwrap();
    let s = sample_independent(&t, 500, 4).unwrap();
    let r = metrics::evaluate(&t, &s, &toy_metric_spec()).unwrap();
    let json = serde_json::to_string(&r).unwrap();
    let back: EvaluationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(r, back);
    assert!(!r.cio_terms.is_empty());
    assert_eq!(r.roc_tables.len(), 3);
    assert!(r.risk_normalization.contains("tcap_baseline"));
}

#[test]
fn disjoint_intervals_give_negative_overlap() {
    let a = Interval { lower: 0.0, upper: 1.0 };
    let b = Interval { lower: 3.0, upper: 4.0 };
    assert_eq!(interval_overlap(a, b), -2.0);
}

#[test]
fn improvement_score_examples() {
    assert_eq!(improvement_score((0.5, 0.5), (0.3, 0.1), 2.0), 0.0);
    assert!(improvement_score((0.45, 0.1), (0.4, 0.1), 2.0) > 0.0);
    assert!(improvement_score((0.4, 0.2), (0.4, 0.1), 2.0) < 0.0);
    assert_eq!(improvement_score((0.4, -0.5), (0.4, -0.1), 2.0), 0.0);
}

struct Resampler<'a>(&'a Table);

impl RowSynthesizer for Resampler<'_> {
    fn synthesize(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        sample_rows_with(self.0, n, rng)
    }
}

#[test]
fn fast_path_is_deterministic_and_guarded() {
    let t = toy_table(2000, 5).unwrap();
    let spec = toy_metric_spec();
    let a = fast_objectives(&t, &spec, &Resampler(&t), 500, 9).unwrap();
    let b = fast_objectives(&t, &spec, &Resampler(&t), 500, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.0 > 0.3, "resampled rows should have decent utility, got {}", a.0);
    assert!(fast_objectives(&t, &spec, &Resampler(&t), 99, 9).is_err());
}

#[test]
fn context_matches_free_functions() {
    let t = toy_table(600, 6).unwrap();
    let s = sample_independent(&t, 400, 1).unwrap();
    let spec = toy_metric_spec();
    let ctx = MetricContext::new(&t, &spec).unwrap();
    let (u, r) = ctx.objectives(&s).unwrap();
    let (u2, _, _) = metrics::utility(&t, &s, &spec).unwrap();
    assert_eq!(u, u2);
    assert_eq!(r, metrics::tcap(&t, &s, &spec.tcap_keys, &spec.tcap_target).unwrap().normalized);
}

#[test]
fn degenerate_synthetic_fit_is_skipped_with_warning() {
    let t = toy_table(400, 7).unwrap();
    // every synthetic row is the same record: all regressions are singular
    let rows = vec![0usize; 200];
    let s = t.select_rows(&rows);
    let r = metrics::evaluate(&t, &s, &toy_metric_spec()).unwrap();
    assert_eq!(r.cio, 0.0);
    assert!(!r.warnings.is_empty());
    assert!(r.roc < 1.0);
}

#[test]
fn schema_mismatch_is_rejected() {
    let t = toy_table(200, 8).unwrap();
    let other = tabevo::schema::read_csv("a,b\nx,1\ny,2\n".as_bytes(), None).unwrap();
    assert!(metrics::evaluate(&t, &other, &toy_metric_spec()).is_err());
}
