use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tabevo::gan::{
    adam_step, generator_objective, AdamConfig, AdamState, Discriminator, GanConfig, Generator, LossKind,
};
use tabevo::nn::flatten;
use tabevo::transform::{Activation, Condition, Span};

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn spans() -> Vec<Span> {
    vec![
        Span {
            start: 0,
            width: 1,
            activation: Activation::Tanh,
        },
        Span {
            start: 1,
            width: 2,
            activation: Activation::Softmax,
        },
        Span {
            start: 3,
            width: 3,
            activation: Activation::Softmax,
        },
    ]
}

fn setup() -> (Generator, Discriminator, Array2<f64>, Array2<f64>, Vec<Condition>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = GanConfig {
        noise_dim: 3,
        generator_hidden: vec![5],
        discriminator_hidden: vec![6, 4],
        pac: 2,
        gumbel_tau: 0.5,
        ..GanConfig::default()
    };
    let gen = Generator::new(&cfg, spans(), 3, &mut rng);
    let disc = Discriminator::new(&cfg, 6 + 3, &mut rng);
    let n = 8;
    let z = gen.sample_noise(n, &mut rng);
    // condition on the second block (categorical column 0 spans output 3..6)
    let chosen: Vec<Condition> = (0..n).map(|i| Condition { column: 0, category: i % 3 }).collect();
    let c1 = Array2::from_shape_fn((n, 3), |(i, j)| f64::from(i % 3 == j));
    (gen, disc, z, c1, chosen)
}

#[test]
fn generator_losses_match_finite_differences_with_hidden_layers() {
    let (mut gen, disc, z, c1, chosen) = setup();
    let cat = vec![spans()[2]];
    for kind in [LossKind::Minimax, LossKind::Heuristic, LossKind::LeastSquare] {
        let eval = |g: &Generator| {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            let o = generator_objective(g, &disc, kind, z.view(), c1.view(), &chosen, &cat, &mut r).unwrap();
            (o.adversarial + o.condition, flatten(&o.grads))
        };
        let (_, analytic) = eval(&gen);
        let base = gen.net.flat_params();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            gen.net.set_flat_params(&p);
            let up = eval(&gen).0;
            p[i] -= 2e-6;
            gen.net.set_flat_params(&p);
            let down = eval(&gen).0;
            gen.net.set_flat_params(&base);
            worst = worst.max(rel_err(analytic[i], (up - down) / 2e-6));
        }
        assert!(worst < 1e-4, "{kind:?}: {worst}");
    }
}

#[test]
fn discriminator_penalty_matches_finite_differences_with_packs() {
    let (_, mut disc, _, _, _) = setup();
    let n = 8;
    let real = Array2::from_shape_fn((n, 9), |(i, j)| ((i * 9 + j) as f64 * 0.31).sin());
    let fake = Array2::from_shape_fn((n, 9), |(i, j)| ((i * 9 + j) as f64 * 0.71).cos());
    let mix = [0.2, 0.5, 0.7, 0.9];
    let analytic = flatten(&disc.loss_with_mix(real.view(), fake.view(), &mix, 10.0).unwrap().grads);
    let base = disc.net.flat_params();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += 1e-6;
        disc.net.set_flat_params(&p);
        let up = disc.loss_with_mix(real.view(), fake.view(), &mix, 10.0).unwrap().total;
        p[i] -= 2e-6;
        disc.net.set_flat_params(&p);
        let down = disc.loss_with_mix(real.view(), fake.view(), &mix, 10.0).unwrap().total;
        disc.net.set_flat_params(&base);
        let e = rel_err(analytic[i], (up - down) / 2e-6);
        assert!(e < 1e-4, "param {i}: {e}");
    }
}

#[test]
fn training_steps_reduce_discriminator_loss_on_separable_data() {
    let (_, mut disc, _, _, _) = setup();
    let real = Array2::from_elem((16, 9), 0.8);
    let fake = Array2::from_elem((16, 9), -0.8);
    let mut state = AdamState::new(&disc.net);
    let cfg = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = disc.loss(real.view(), fake.view(), 1.0, &mut rng).unwrap().classification;
    for _ in 0..50 {
        let l = disc.loss(real.view(), fake.view(), 1.0, &mut rng).unwrap();
        adam_step(&mut disc.net, &l.grads, &cfg, &mut state);
    }
    let last = disc.loss(real.view(), fake.view(), 1.0, &mut rng).unwrap().classification;
    assert!(last < first * 0.5, "{first} -> {last}");
}

#[test]
fn pack_requires_divisible_batch() {
    let (_, disc, _, _, _) = setup();
    let rows = Array2::zeros((7, 9));
    assert!(disc.pack(rows.view()).is_err());
    let rows = Array2::zeros((8, 8));
    assert!(disc.pack(rows.view()).is_err());
}
