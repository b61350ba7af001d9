use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tabevo::evolution::{
    dominates, non_dominated_sort, objective_vector, rank_points, select_indices, select_survivors, Individual,
    ObjectiveVector,
};
use tabevo::gan::{AdamState, GanConfig, Generator};
use tabevo::transform::{Activation, Span};

fn points() -> impl Strategy<Value = Vec<ObjectiveVector>> {
    prop::collection::vec((0u8..6, 0u8..6).prop_map(|(a, b)| [a as f64, b as f64]), 1..20)
}

proptest! {
    #[test]
    fn fronts_partition_the_population(pts in points()) {
        let fronts = non_dominated_sort(&pts);
        let mut all: Vec<usize> = fronts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..pts.len()).collect::<Vec<_>>());
        for front in &fronts {
            for &i in front {
                for &j in front {
                    prop_assert!(!dominates(&pts[i], &pts[j]));
                }
            }
        }
        // every member of front k+1 is dominated by someone in front k
        for w in fronts.windows(2) {
            for &j in &w[1] {
                prop_assert!(w[0].iter().any(|&i| dominates(&pts[i], &pts[j])));
            }
        }
    }

    #[test]
    fn ranks_are_permutation_invariant(pts in points(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<ObjectiveVector> = perm.iter().map(|&i| pts[i]).collect();
        let a = rank_points(&pts);
        let b = rank_points(&shuffled);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(a.rank[old], b.rank[new]);
        }
    }

    #[test]
    fn selection_keeps_best_front_first(pts in points(), mu in 1usize..10) {
        let mu = mu.min(pts.len());
        let (chosen, ranking) = select_indices(&pts, mu);
        prop_assert_eq!(chosen.len(), mu);
        let worst_kept = chosen.iter().map(|&i| ranking.rank[i]).max().unwrap();
        for i in 0..pts.len() {
            if !chosen.contains(&i) {
                prop_assert!(ranking.rank[i] >= worst_kept);
            }
        }
    }
}

fn individual(id: u64, f_u: f64, f_r: f64, gen: &Generator) -> Individual {
    Individual {
        id,
        generator: gen.clone(),
        adam: AdamState::new(&gen.net),
        f_u,
        f_r,
        rank: None,
        crowd: None,
    }
}

#[test]
fn survivors_keep_dominating_parent_and_population_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = GanConfig {
        noise_dim: 2,
        generator_hidden: vec![],
        ..GanConfig::default()
    };
    let spans = vec![Span {
        start: 0,
        width: 2,
        activation: Activation::Softmax,
    }];
    let gen = Generator::new(&cfg, spans, 2, &mut rng);
    let parents = vec![
        individual(0, 0.9, 0.05, &gen),
        individual(1, 0.3, 0.6, &gen),
        individual(2, 0.2, 0.7, &gen),
    ];
    let children = vec![
        individual(3, 0.5, 0.4, &gen),
        individual(4, 0.6, 0.3, &gen),
        individual(5, 0.1, 0.9, &gen),
    ];
    let survivors = select_survivors(parents, children, 0.0);
    assert_eq!(survivors.len(), 3);
    assert_eq!(survivors[0].id, 0);
    assert!(survivors.iter().all(|s| s.rank.is_some() && s.crowd.is_some()));
    let ids: Vec<u64> = survivors.iter().map(|s| s.id).collect();
    assert!(ids.contains(&4) && ids.contains(&3));
}

#[test]
fn negative_risks_are_clipped_before_ranking() {
    let a = objective_vector(0.5, -0.3, 0.0);
    let b = objective_vector(0.5, -0.1, 0.0);
    assert_eq!(a, b);
    assert_eq!(non_dominated_sort(&[a, b]), vec![vec![0, 1]]);
}
