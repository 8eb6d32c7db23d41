//! Independence oracle, greedy optima and backward ranks.
//!
//! `OPT_V(B)` is the maximum-weight subset of `V ∩ B` that is independent in
//! the matroid. The greedy scan in weight order returns it; with the strict
//! total order of [`weight_order`](crate::model::weight_order) it is unique,
//! which is what lets the exhaustive oracle compare sets rather than weights.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ElementId, FSum, Index, LaminarInstance, NodeId};

/// Largest `|V ∩ B|` accepted by [`brute_force_opt`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Per-node usage counts for incremental independence tests.
pub(crate) struct UsageCounter<'a> {
    index: &'a Index,
    counts: Vec<u32>,
}

impl<'a> UsageCounter<'a> {
    pub fn new(index: &'a Index) -> Self {
        UsageCounter {
            index,
            counts: vec![0; index.capacity.len()],
        }
    }

    /// Inserts the element if every node on its chain to the root has room.
    pub fn try_insert(&mut self, elem: usize) -> bool {
        let path = &self.index.up[self.index.home[elem]];
        if path
            .iter()
            .any(|&b| self.counts[b] >= self.index.capacity[b])
        {
            return false;
        }
        for &b in path {
            self.counts[b] += 1;
        }
        true
    }
}

/// Greedy optimum over the elements of `node` accepted by `keep`, heaviest first.
pub(crate) fn greedy_dense(index: &Index, node: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut counter = UsageCounter::new(index);
    let cap = index.capacity[node] as usize;
    let mut out = Vec::with_capacity(cap);
    for &e in &index.by_key {
        if out.len() == cap {
            break;
        }
        if index.elem_in(e, node) && keep(e) && counter.try_insert(e) {
            out.push(e);
        }
    }
    out
}

/// `OPT(B)` for every node, heaviest first, indexed by node index.
pub(crate) fn true_optima(index: &Index) -> Vec<Vec<usize>> {
    (0..index.capacity.len())
        .map(|b| greedy_dense(index, b, |_| true))
        .collect()
}

/// A node's optimum on a subset, sorted by increasing weight (`a_1 < … < a_m`).
#[derive(Clone, Debug, PartialEq)]
pub struct RankedOptimum {
    pub node: NodeId,
    pub elements: Vec<ElementId>,
    pub weight: f64,
}

impl RankedOptimum {
    fn from_desc(inst: &LaminarInstance, node: usize, desc: &[usize]) -> Self {
        let weight = desc.iter().map(|&e| inst.index().weight[e]).fsum();
        RankedOptimum {
            node: inst.node_id(node),
            elements: desc.iter().rev().map(|&e| inst.elem_id(e)).collect(),
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.elements.contains(&id)
    }
}

pub(crate) fn subset_mask(inst: &LaminarInstance, ids: &[ElementId]) -> Result<Vec<bool>> {
    let mut mask = vec![false; inst.len()];
    for &id in ids {
        mask[inst.elem_idx(id)?] = true;
    }
    Ok(mask)
}

/// True iff `|X ∩ B| <= μ(B)` for every node `B`. Repeated ids count once.
pub fn is_independent(inst: &LaminarInstance, elements: &[ElementId]) -> Result<bool> {
    let mask = subset_mask(inst, elements)?;
    let mut counter = UsageCounter::new(inst.index());
    Ok((0..inst.len())
        .filter(|&e| mask[e])
        .all(|e| counter.try_insert(e)))
}

/// `OPT_V(B)` by the matroid greedy algorithm.
pub fn greedy_opt(
    inst: &LaminarInstance,
    subset: &[ElementId],
    node: NodeId,
) -> Result<RankedOptimum> {
    let b = inst.node_idx(node)?;
    let mask = subset_mask(inst, subset)?;
    let desc = greedy_dense(inst.index(), b, |e| mask[e]);
    Ok(RankedOptimum::from_desc(inst, b, &desc))
}

/// `OPT(B) = OPT_U(B)`.
pub fn opt(inst: &LaminarInstance, node: NodeId) -> Result<RankedOptimum> {
    let b = inst.node_idx(node)?;
    let desc = greedy_dense(inst.index(), b, |_| true);
    Ok(RankedOptimum::from_desc(inst, b, &desc))
}

/// `R(B) = OPT_S(B)` for every node, each computed independently.
pub fn all_reference_sets(
    inst: &LaminarInstance,
    sample: &[ElementId],
) -> Result<BTreeMap<NodeId, RankedOptimum>> {
    let mask = subset_mask(inst, sample)?;
    Ok((0..inst.nodes().len())
        .map(|b| {
            let desc = greedy_dense(inst.index(), b, |e| mask[e]);
            (inst.node_id(b), RankedOptimum::from_desc(inst, b, &desc))
        })
        .collect())
}

/// Backward rank: the number of elements of `OPT_V(B)` strictly below `elem`
/// in the weight order. With `padded`, the `μ(B) − |OPT_V(B)|` padding
/// elements are counted too; they sit below every real element.
pub fn brank(
    inst: &LaminarInstance,
    elem: ElementId,
    node: NodeId,
    subset: &[ElementId],
    padded: bool,
) -> Result<usize> {
    let e = inst.elem_idx(elem)?;
    let b = inst.node_idx(node)?;
    let ix = inst.index();
    if !ix.elem_in(e, b) {
        return Err(Error::ElementNotInNode {
            element: elem,
            node,
        });
    }
    let mask = subset_mask(inst, subset)?;
    let desc = greedy_dense(ix, b, |x| mask[x]);
    Ok(brank_dense(ix, e, b, &desc, padded))
}

pub(crate) fn brank_dense(
    ix: &Index,
    elem: usize,
    node: usize,
    opt_desc: &[usize],
    padded: bool,
) -> usize {
    let below = opt_desc
        .iter()
        .filter(|&&x| ix.key[x] > ix.key[elem])
        .count();
    if padded {
        below + ix.capacity[node] as usize - opt_desc.len()
    } else {
        below
    }
}

/// Exhaustive `OPT_V(B)`: the heaviest independent subset of `V ∩ B`, with
/// ties on total weight resolved by the weight order (lexicographically
/// heaviest element list wins).
pub fn brute_force_opt(
    inst: &LaminarInstance,
    subset: &[ElementId],
    node: NodeId,
) -> Result<RankedOptimum> {
    let b = inst.node_idx(node)?;
    let mask = subset_mask(inst, subset)?;
    let ix = inst.index();
    // Ground elements sorted heaviest first so that subsets enumerate in a
    // canonical order and weights are summed in a fixed order.
    let ground: Vec<usize> = ix
        .by_key
        .iter()
        .copied()
        .filter(|&e| mask[e] && ix.elem_in(e, b))
        .collect();
    if ground.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            what: "V ∩ B",
            size: ground.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    let mut counts = vec![0u32; ix.capacity.len()];
    let mut best_bits = 0u32;
    let mut best_weight = 0.0;
    'subsets: for bits in 1u32..(1u32 << ground.len()) {
        counts.fill(0);
        let mut weight = 0.0;
        for (j, &e) in ground.iter().enumerate() {
            if bits >> j & 1 == 0 {
                continue;
            }
            for &a in &ix.up[ix.home[e]] {
                counts[a] += 1;
                if counts[a] > ix.capacity[a] {
                    continue 'subsets;
                }
            }
            weight += ix.weight[e];
        }
        // Equal totals: the set holding the heaviest element where they differ wins.
        let heavier_on_tie = {
            let diff = bits ^ best_bits;
            diff != 0 && bits & (diff & diff.wrapping_neg()) != 0
        };
        if weight > best_weight || (weight == best_weight && heavier_on_tie) {
            best_bits = bits;
            best_weight = weight;
        }
    }
    let best: Vec<usize> = (0..ground.len())
        .filter(|&j| best_bits >> j & 1 == 1)
        .map(|j| ground[j])
        .collect();
    Ok(RankedOptimum::from_desc(inst, b, &best))
}
