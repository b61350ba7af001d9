use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabevo::evolution::Individual;
use tabevo::gan::{AdamConfig, AdamState, Discriminator, GanConfig, Generator};
use tabevo::smart_variation::{
    greedy_action, select_action, smart_variation, train_q, QConfig, QFunction, ReplayBuffer,
    Transition, VariationBatch,
};
use tabevo::transform::{Activation, Condition, Span};

fn qfun(seed: u64) -> QFunction {
    let cfg = QConfig::default();
    QFunction::new(&cfg.hidden, cfg.adam, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn epsilon_one_is_uniform() {
    let q = qfun(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0; 3];
    for _ in 0..10_000 {
        counts[select_action(&q, [0.0, 0.5], 1.0, &mut rng)] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn epsilon_matches_exploration_rate() {
    let q = qfun(2);
    let state = [0.3, 0.2];
    let greedy = greedy_action(&q.values(state));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let off = (0..n).filter(|_| select_action(&q, state, 0.3, &mut rng) != greedy).count();
    // off-greedy draws happen with probability 0.3 * 2/3
    let p = off as f64 / n as f64;
    assert!((p - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt(), "{p}");
}

fn constant_transition(r: f64) -> Transition {
    Transition {
        s: [0.1, 0.5],
        a: 1,
        r,
        s_child: [0.1, 0.5],
        a_next: 1,
    }
}

#[test]
fn regression_converges_to_constant_targets() {
    for target in [1.0, 0.0] {
        let mut q = qfun(4);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..32 {
            buf.push(constant_transition(target));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            train_q(&mut q, &buf, 32, 0.0, &mut rng).unwrap();
        }
        let v = q.values([0.1, 0.5])[1];
        assert!((v - target).abs() < 0.05, "Q = {v}, target {target}");
    }
}

#[test]
fn bandit_recovery() {
    let states = [[0.2, 0.3], [-0.4, 0.6]];
    let optimal = [2usize, 0];
    let mut recovered = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = qfun(100 + seed);
        let mut buf = ReplayBuffer::new(1000);
        let mut updates = 0;
        while updates < 2000 {
            let s = rng.random_range(0..2);
            let a = select_action(&q, states[s], 0.2, &mut rng);
            buf.push(Transition {
                s: states[s],
                a,
                r: if a == optimal[s] { 1.0 } else { 0.0 },
                s_child: states[s],
                a_next: greedy_action(&q.values(states[s])),
            });
            if train_q(&mut q, &buf, 32, 0.0, &mut rng).is_some() {
                updates += 1;
            }
        }
        if (0..2).all(|s| greedy_action(&q.values(states[s])) == optimal[s]) {
            recovered += 1;
        }
    }
    assert!(recovered >= 9, "{recovered}/10");
}

struct Fixture {
    disc: Discriminator,
    parent: Individual,
    z: Array2<f64>,
    c1: Array2<f64>,
    chosen: Vec<Condition>,
    spans: Vec<Span>,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = GanConfig {
        noise_dim: 4,
        generator_hidden: vec![8],
        discriminator_hidden: vec![8],
        pac: 2,
        ..GanConfig::default()
    };
    let spans = vec![
        Span {
            start: 0,
            width: 1,
            activation: Activation::Tanh,
        },
        Span {
            start: 1,
            width: 3,
            activation: Activation::Softmax,
        },
    ];
    let gen = Generator::new(&cfg, spans.clone(), 3, &mut rng);
    let disc = Discriminator::new(&cfg, 4 + 3, &mut rng);
    let n = 10;
    let chosen: Vec<Condition> = (0..n).map(|i| Condition { column: 0, category: i % 3 }).collect();
    let c1 = Array2::from_shape_fn((n, 3), |(i, j)| f64::from(i % 3 == j));
    let z = gen.sample_noise(n, &mut rng);
    let parent = Individual {
        id: 0,
        adam: AdamState::new(&gen.net),
        generator: gen,
        f_u: 0.4,
        f_r: 0.2,
        rank: None,
        crowd: None,
    };
    Fixture {
        disc,
        parent,
        z,
        c1,
        chosen,
        spans: vec![Span {
            start: 1,
            width: 3,
            activation: Activation::Softmax,
        }],
    }
}

#[test]
fn variation_isolates_parent_and_logs_one_transition() {
    let f = fixture();
    let before = f.parent.clone();
    let disc_before = f.disc.clone();
    let adam = AdamConfig::default();
    let batch = VariationBatch {
        z: f.z.view(),
        c1: f.c1.view(),
        chosen: &f.chosen,
        categorical_spans: &f.spans,
        adam: &adam,
    };
    let mut q = qfun(9);
    // force action 2 by making it the greedy choice
    let last = q.net.layers.len() - 1;
    q.net.layers[last].weight.fill(0.0);
    q.net.layers[last].bias = ndarray::array![0.0, 0.0, 1.0];
    let mut buf = ReplayBuffer::new(10);
    let mut rl = ChaCha8Rng::seed_from_u64(1);
    let mut gumbel = ChaCha8Rng::seed_from_u64(2);
    let mut evaluate = |_: &Generator| Ok((0.45, 0.3));
    let out = smart_variation(
        &f.disc,
        &f.parent,
        7,
        &batch,
        &q,
        &mut buf,
        0.0,
        &mut rl,
        &mut gumbel,
        &mut evaluate,
    )
    .unwrap();
    assert_eq!(f.parent, before);
    assert_eq!(f.disc, disc_before);
    assert_eq!(buf.len(), 1);
    assert_eq!(out.transition.a, 2);
    assert_eq!(out.transition.r, 1.0);
    assert_eq!(out.transition.s, [0.2, 0.4]);
    assert_eq!(out.transition.s_child, [0.3, 0.45]);
    assert_eq!(out.child.id, 7);
    assert_eq!((out.child.f_u, out.child.f_r), (0.45, 0.3));
    assert_ne!(out.child.generator, f.parent.generator);
    assert_eq!(out.child.adam.step, 1);
}

#[test]
fn variation_rejects_bad_epsilon() {
    let f = fixture();
    let adam = AdamConfig::default();
    let batch = VariationBatch {
        z: f.z.view(),
        c1: f.c1.view(),
        chosen: &f.chosen,
        categorical_spans: &f.spans,
        adam: &adam,
    };
    let q = qfun(1);
    let mut buf = ReplayBuffer::new(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rng2 = ChaCha8Rng::seed_from_u64(0);
    let mut evaluate = |_: &Generator| Ok((0.0, 0.0));
    let res = smart_variation(&f.disc, &f.parent, 1, &batch, &q, &mut buf, 1.5, &mut rng, &mut rng2, &mut evaluate);
    assert!(res.is_err());
    assert!(buf.is_empty());
}
