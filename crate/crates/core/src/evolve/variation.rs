//! Crossover and mutation of tree-collection individuals.

use rand::Rng as _;

use crate::expr::{self, ExprTree};
use crate::model::Individual;
use crate::rng::Rng;

/// Structural limits shared by all variation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariationLimits {
    pub max_depth: usize,
    pub max_dimensions: usize,
    pub n_features: usize,
}

/// Attempts at a depth-respecting subtree crossover before giving up.
pub const CROSSOVER_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrossoverKind {
    Subtree,
    FeatureSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutationKind {
    Point,
    Insert,
    Delete,
    InsertDimension,
    DeleteDimension,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::Point,
        MutationKind::Insert,
        MutationKind::Delete,
        MutationKind::InsertDimension,
        MutationKind::DeleteDimension,
    ];
}

/// Subtree crossover or whole-feature swap with equal probability. The child
/// is an unfitted copy of `p1` with material from `p2`.
pub fn crossover(p1: &Individual, p2: &Individual, limits: &VariationLimits, rng: &mut Rng) -> Individual {
    crossover_with_kind(p1, p2, limits, rng).0
}

pub fn crossover_with_kind(
    p1: &Individual,
    p2: &Individual,
    limits: &VariationLimits,
    rng: &mut Rng,
) -> (Individual, CrossoverKind) {
    let mut child = p1.clone();
    let donors = p2.features();
    if rng.random_bool(0.5) {
        for _ in 0..CROSSOVER_RETRIES {
            let ti = rng.random_range(0..child.dimensions());
            let donor_tree = &donors[rng.random_range(0..donors.len())];
            let target = &child.features()[ti];
            let ni = rng.random_range(0..target.size());
            let nj = rng.random_range(0..donor_tree.size());
            let donor = donor_tree.node(nj).expect("index below size").clone();
            let level = target.level_of(ni).expect("index below size");
            if level - 1 + donor.depth() <= limits.max_depth {
                child.features_mut()[ti].replace(ni, donor);
                return (child, CrossoverKind::Subtree);
            }
        }
        child.features_mut();
        (child, CrossoverKind::Subtree)
    } else {
        let ti = rng.random_range(0..child.dimensions());
        let donor = donors[rng.random_range(0..donors.len())].clone();
        child.features_mut()[ti] = donor;
        (child, CrossoverKind::FeatureSwap)
    }
}

/// Preorder positions in `tree` that can be wrapped by a new operator without
/// exceeding `max_depth`.
fn insertable_nodes(tree: &ExprTree, max_depth: usize) -> Vec<usize> {
    (0..tree.size())
        .filter(|&i| {
            let level = tree.level_of(i).expect("index below size");
            let depth = tree.node(i).expect("index below size").depth();
            level + depth <= max_depth
        })
        .collect()
}

fn applicable(kind: MutationKind, ind: &Individual, limits: &VariationLimits) -> bool {
    match kind {
        MutationKind::Point | MutationKind::Delete => true,
        MutationKind::Insert => ind
            .features()
            .iter()
            .any(|t| !insertable_nodes(t, limits.max_depth).is_empty()),
        MutationKind::InsertDimension => ind.dimensions() < limits.max_dimensions,
        MutationKind::DeleteDimension => ind.dimensions() > 1,
    }
}

/// One of point, insert, delete, insert-dimension or delete-dimension,
/// chosen uniformly among those applicable under the limits.
pub fn mutate(ind: &Individual, limits: &VariationLimits, rng: &mut Rng) -> Individual {
    mutate_with_kind(ind, limits, rng).0
}

pub fn mutate_with_kind(ind: &Individual, limits: &VariationLimits, rng: &mut Rng) -> (Individual, MutationKind) {
    let kinds: Vec<MutationKind> = MutationKind::ALL
        .into_iter()
        .filter(|&k| applicable(k, ind, limits))
        .collect();
    let kind = kinds[rng.random_range(0..kinds.len())];
    let mut child = ind.clone();
    let nf = limits.n_features;
    match kind {
        MutationKind::Point => {
            let ti = rng.random_range(0..child.dimensions());
            let tree = &mut child.features_mut()[ti];
            let ni = rng.random_range(0..tree.size());
            let node = tree.node_mut(ni).expect("index below size");
            if node.is_leaf() {
                *node = expr::random_leaf(nf, rng);
            } else {
                let op = expr::random_function(node.op().arity(), rng);
                node.set_op(op).expect("same arity");
            }
        }
        MutationKind::Insert => {
            let eligible: Vec<(usize, Vec<usize>)> = child
                .features()
                .iter()
                .enumerate()
                .map(|(i, t)| (i, insertable_nodes(t, limits.max_depth)))
                .filter(|(_, v)| !v.is_empty())
                .collect();
            let (ti, nodes) = &eligible[rng.random_range(0..eligible.len())];
            let ni = nodes[rng.random_range(0..nodes.len())];
            let tree = &mut child.features_mut()[*ti];
            let level = tree.level_of(ni).expect("index below size");
            let slot = tree.node_mut(ni).expect("index below size");
            let old = std::mem::replace(slot, ExprTree::constant(0.0));
            let n_fn = expr::Op::UNARY.len() + expr::Op::BINARY.len();
            *slot = if rng.random_range(0..n_fn) < expr::Op::UNARY.len() {
                ExprTree::unary(expr::random_function(1, rng), old)
            } else {
                let op = expr::random_function(2, rng);
                let extra = expr::random_tree(limits.max_depth - level, nf, rng);
                if rng.random_bool(0.5) {
                    ExprTree::binary(op, old, extra)
                } else {
                    ExprTree::binary(op, extra, old)
                }
            };
        }
        MutationKind::Delete => {
            let ti = rng.random_range(0..child.dimensions());
            let tree = &mut child.features_mut()[ti];
            let ni = rng.random_range(0..tree.size());
            let slot = tree.node_mut(ni).expect("index below size");
            if slot.is_leaf() {
                *slot = expr::random_leaf(nf, rng);
            } else {
                let old = std::mem::replace(slot, ExprTree::constant(0.0));
                let mut kids = old.into_children();
                let k = rng.random_range(0..kids.len());
                *slot = kids.swap_remove(k);
            }
        }
        MutationKind::InsertDimension => {
            let depth = rng.random_range(1..=limits.max_depth);
            let tree = expr::random_tree(depth, nf, rng);
            child.features_mut().push(tree);
        }
        MutationKind::DeleteDimension => {
            let ti = rng.random_range(0..child.dimensions());
            child.features_mut().remove(ti);
        }
    }
    let table = crate::expr::ComplexityTable::default();
    child.recompute_measures(&table);
    (child, kind)
}
