//! NSGA-II survivor selection over (risk, utility).
//!
//! Both objectives are minimized as `(clip_risk(f_r), -f_u)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::gan::{AdamState, Generator};

/// Minimized objective pair.
pub type ObjectiveVector = [f64; 2];

pub fn clip_risk(f_r: f64, floor: f64) -> f64 {
    f_r.max(floor)
}

pub fn objective_vector(f_u: f64, f_r: f64, risk_floor: f64) -> ObjectiveVector {
    [clip_risk(f_r, risk_floor), -f_u]
}

/// Pareto dominance for minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Fast non-dominated sort. Returns fronts of indices, best first; indices
/// inside a front are ascending.
pub fn non_dominated_sort(points: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominated_by_me[i].push(j);
                domination_count[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominated_by_me[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by_me[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
/// Boundary members get +inf; an objective with zero range contributes 0.
pub fn crowding_distance(points: &[ObjectiveVector], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    let mut dist = vec![0.0; m];
    for k in 0..2 {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            points[front[a]][k]
                .total_cmp(&points[front[b]][k])
                .then(front[a].cmp(&front[b]))
        });
        let lo = points[front[order[0]]][k];
        let hi = points[front[order[m - 1]]][k];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        for w in 1..m - 1 {
            let next = points[front[order[w + 1]]][k];
            let prev = points[front[order[w - 1]]][k];
            dist[order[w]] += (next - prev) / range;
        }
    }
    dist
}

/// Rank (1-based) and crowding distance of every point.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub fronts: Vec<Vec<usize>>,
    pub rank: Vec<usize>,
    pub crowd: Vec<f64>,
}

pub fn rank_points(points: &[ObjectiveVector]) -> Ranking {
    let fronts = non_dominated_sort(points);
    let mut rank = vec![0; points.len()];
    let mut crowd = vec![0.0; points.len()];
    for (f, front) in fronts.iter().enumerate() {
        let d = crowding_distance(points, front);
        for (&i, di) in front.iter().zip(d) {
            rank[i] = f + 1;
            crowd[i] = di;
        }
    }
    Ranking { fronts, rank, crowd }
}

/// Indices of the `mu` best points by (rank asc, crowding desc, index asc),
/// plus the ranking they were chosen by.
pub fn select_indices(points: &[ObjectiveVector], mu: usize) -> (Vec<usize>, Ranking) {
    let ranking = rank_points(points);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        ranking.rank[a]
            .cmp(&ranking.rank[b])
            .then_with(|| {
                ranking.crowd[b]
                    .partial_cmp(&ranking.crowd[a])
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
    order.truncate(mu);
    (order, ranking)
}

/// One generator of the population with its cached objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub generator: Generator,
    pub adam: AdamState,
    pub f_u: f64,
    pub f_r: f64,
    pub rank: Option<usize>,
    #[serde(with = "crowd_serde")]
    pub crowd: Option<f64>,
}

/// Crowding distances are infinite at front boundaries; JSON has no infinity,
/// so non-finite values are stored as the strings "inf" / "-inf" / "nan".
mod crowd_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|x| {
            if x.is_finite() {
                Repr::Num(x)
            } else {
                Repr::Text(x.to_string())
            }
        })
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

impl Individual {
    pub fn objectives(&self, risk_floor: f64) -> ObjectiveVector {
        objective_vector(self.f_u, self.f_r, risk_floor)
    }
}

/// Sort a population into fronts, writing rank and crowding back.
pub fn assign_ranks(pop: &mut [Individual], risk_floor: f64) -> Vec<Vec<usize>> {
    let points: Vec<ObjectiveVector> = pop.iter().map(|i| i.objectives(risk_floor)).collect();
    let ranking = rank_points(&points);
    for (i, ind) in pop.iter_mut().enumerate() {
        ind.rank = Some(ranking.rank[i]);
        ind.crowd = Some(ranking.crowd[i]);
    }
    ranking.fronts
}

/// NSGA-II environmental selection over `parents ++ children`.
pub fn select_survivors(
    parents: Vec<Individual>,
    children: Vec<Individual>,
    risk_floor: f64,
) -> Vec<Individual> {
    let mu = parents.len();
    let mut pool: Vec<Option<Individual>> = parents.into_iter().chain(children).map(Some).collect();
    let points: Vec<ObjectiveVector> = pool
        .iter()
        .map(|i| i.as_ref().unwrap().objectives(risk_floor))
        .collect();
    let (chosen, ranking) = select_indices(&points, mu);
    chosen
        .into_iter()
        .map(|i| {
            let mut ind = pool[i].take().unwrap();
            ind.rank = Some(ranking.rank[i]);
            ind.crowd = Some(ranking.crowd[i]);
            ind
        })
        .collect()
}
