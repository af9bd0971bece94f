//! NSGA-II survival: fast non-dominated sorting and crowding-distance
//! truncation over minimised objectives.

use crate::model::Individual;

/// `a` dominates `b` when it is no worse in every objective and strictly
/// better in at least one.
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

/// Fronts of the fast non-dominated sort, best first. Indices within a front
/// are ascending.
pub fn non_dominated_fronts<O: AsRef<[f64]>>(objectives: &[O]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in p + 1..n {
            let (a, b) = (objectives[p].as_ref(), objectives[q].as_ref());
            if dominates(a, b) {
                dominated_by[p].push(q);
                domination_count[q] += 1;
            } else if dominates(b, a) {
                dominated_by[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
/// Extreme points in any objective get infinite distance.
pub fn crowding_distance<O: AsRef<[f64]>>(objectives: &[O], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    let mut dist = vec![0.0; k];
    if k == 0 {
        return dist;
    }
    let n_obj = objectives[front[0]].as_ref().len();
    for m in 0..n_obj {
        let value = |pos: usize| objectives[front[pos]].as_ref()[m];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(front[a].cmp(&front[b])));
        let lo = value(order[0]);
        let hi = value(order[k - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[k - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..k.saturating_sub(1) {
                dist[order[w]] += (value(order[w + 1]) - value(order[w - 1])) / (hi - lo);
            }
        }
    }
    dist
}

/// Indices of the `capacity` survivors: whole fronts in rank order, the
/// front that does not fit truncated by descending crowding distance with
/// ties broken by lower index.
pub fn nsga2_select<O: AsRef<[f64]>>(objectives: &[O], capacity: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(capacity);
    for front in non_dominated_fronts(objectives) {
        if chosen.len() >= capacity {
            break;
        }
        if chosen.len() + front.len() <= capacity {
            chosen.extend_from_slice(&front);
            continue;
        }
        let dist = crowding_distance(objectives, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(front[a].cmp(&front[b])));
        let room = capacity - chosen.len();
        chosen.extend(order.into_iter().take(room).map(|p| front[p]));
    }
    chosen
}

/// The objectives used for survival: fitness and complexity, both minimised.
pub fn survival_objectives(ind: &Individual) -> [f64; 2] {
    [ind.fitness(), ind.complexity() as f64]
}

/// Keeps `capacity` of `candidates` by NSGA-II on (fitness, complexity).
pub fn nsga2_survive(candidates: Vec<Individual>, capacity: usize) -> Vec<Individual> {
    let objectives: Vec<[f64; 2]> = candidates.iter().map(survival_objectives).collect();
    let keep = nsga2_select(&objectives, capacity);
    let mut slots: Vec<Option<Individual>> = candidates.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("survivor chosen once"))
        .collect()
}
