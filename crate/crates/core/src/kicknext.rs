//! The KickNext online algorithm.
//!
//! A trial splits the ground set into a sample `S` (observed, never
//! selected) and a selection phase `T` that arrives in random order. Every
//! node `B` starts with the reference set `R(B) = OPT_S(B)`. An arriving
//! element `i` walks `Chain[M(i), U]` from the inside out; at each node it is
//! accepted iff `R(B)` still holds an element lighter than `i`, and then the
//! heaviest such element is evicted. The first node without a lighter
//! element stops the walk. Acceptances at inner nodes stay in place when an
//! outer node stops the walk. The output is `SOL(U)`.
//!
//! With padding on, every `R(B)` is filled up to `μ(B)` with weight-zero
//! virtual elements. They rank below every real element, can be evicted, and
//! are never selected.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matroid::greedy_dense;
use crate::model::{Element, ElementId, FSum, Index, LaminarInstance, NodeId};

/// One realization of the algorithm's randomness.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub seed: u64,
    pub p: f64,
    /// `S`, sorted by id.
    pub sample: Vec<ElementId>,
    /// Arrival order of `T = U − S`.
    pub arrival_order: Vec<ElementId>,
}

/// Dense form of a trial: sample mask and arrival order by element index.
#[derive(Clone, Debug)]
pub(crate) struct DenseTrial {
    pub in_sample: Vec<bool>,
    pub order: Vec<usize>,
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "p",
            value: p,
            expected: "0 < p < 1",
        })
    }
}

/// Each element lands in `T` independently with probability `p`, then `T`
/// is shuffled. Only `S` and the order of `T` are visible to the algorithm,
/// so this matches drawing `t ~ Binom(n, 1 − p)` and taking a uniform
/// permutation's first `t` elements as the sample.
pub(crate) fn draw_dense(n: usize, p: f64, seed: u64) -> DenseTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_sample = vec![true; n];
    let mut order = Vec::new();
    for (e, s) in in_sample.iter_mut().enumerate() {
        if rng.random_bool(p) {
            *s = false;
            order.push(e);
        }
    }
    order.shuffle(&mut rng);
    DenseTrial { in_sample, order }
}

pub fn make_trial(inst: &LaminarInstance, p: f64, seed: u64) -> Result<Trial> {
    check_p(p)?;
    let dense = draw_dense(inst.len(), p, seed);
    let mut sample: Vec<ElementId> = (0..inst.len())
        .filter(|&e| dense.in_sample[e])
        .map(|e| inst.elem_id(e))
        .collect();
    sample.sort();
    let arrival_order = dense.order.iter().map(|&e| inst.elem_id(e)).collect();
    Ok(Trial {
        seed,
        p,
        sample,
        arrival_order,
    })
}

impl Trial {
    /// A hand-specified trial. `sample` and `arrival_order` must partition the elements.
    pub fn new(
        inst: &LaminarInstance,
        p: f64,
        seed: u64,
        sample: Vec<ElementId>,
        arrival_order: Vec<ElementId>,
    ) -> Result<Trial> {
        check_p(p)?;
        let mut sample = sample;
        sample.sort();
        let trial = Trial {
            seed,
            p,
            sample,
            arrival_order,
        };
        trial.dense(inst)?;
        Ok(trial)
    }

    pub(crate) fn dense(&self, inst: &LaminarInstance) -> Result<DenseTrial> {
        let mut seen = vec![false; inst.len()];
        let mut in_sample = vec![false; inst.len()];
        let mark = |id: ElementId, seen: &mut [bool]| -> Result<usize> {
            let e = inst.elem_idx(id)?;
            if std::mem::replace(&mut seen[e], true) {
                return Err(Error::InvalidTrial(format!("element {id} appears twice")));
            }
            Ok(e)
        };
        for &id in &self.sample {
            let e = mark(id, &mut seen)?;
            in_sample[e] = true;
        }
        let order = self
            .arrival_order
            .iter()
            .map(|&id| mark(id, &mut seen))
            .collect::<Result<Vec<_>>>()?;
        if let Some(e) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTrial(format!(
                "element {} is neither sampled nor arriving",
                inst.elem_id(e)
            )));
        }
        Ok(DenseTrial { in_sample, order })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub padding: bool,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            padding: true,
            trace: false,
        }
    }
}

/// Reference sets `R(B)` for every node.
///
/// Elements are held as weight-order keys, heaviest first: real element keys
/// are `0..n`, padding keys start at `n`. Padding key `n + j` has id
/// `max_real_id + 1 + j`, allocated node by node in instance order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSets {
    pub(crate) sets: Vec<Vec<u32>>,
    real: u32,
    padding_id_base: u64,
    padded: bool,
}

impl ReferenceSets {
    pub(crate) fn build(inst: &LaminarInstance, in_sample: &[bool], padding: bool) -> Self {
        let ix = inst.index();
        let real = inst.len() as u32;
        let mut next_virtual = real;
        let sets = (0..ix.capacity.len())
            .map(|b| {
                let mut keys: Vec<u32> = greedy_dense(ix, b, |e| in_sample[e])
                    .iter()
                    .map(|&e| ix.key[e])
                    .collect();
                if padding {
                    while keys.len() < ix.capacity[b] as usize {
                        keys.push(next_virtual);
                        next_virtual += 1;
                    }
                }
                keys
            })
            .collect();
        ReferenceSets {
            sets,
            real,
            padding_id_base: inst.padding_id_base(),
            padded: padding,
        }
    }

    pub fn is_padded(&self) -> bool {
        self.padded
    }

    pub(crate) fn element(&self, inst: &LaminarInstance, key: u32) -> Element {
        if key < self.real {
            inst.elements()[inst.index().by_key[key as usize]].clone()
        } else {
            Element::padding(ElementId(self.padding_id_base + u64::from(key - self.real)))
        }
    }

    /// Current `R(B)` in increasing weight order.
    pub fn get(&self, inst: &LaminarInstance, node: NodeId) -> Result<Vec<Element>> {
        let b = inst.node_idx(node)?;
        Ok(self.ascending(inst, b))
    }

    fn ascending(&self, inst: &LaminarInstance, b: usize) -> Vec<Element> {
        self.sets[b]
            .iter()
            .rev()
            .map(|&k| self.element(inst, k))
            .collect()
    }

    fn to_map(&self, inst: &LaminarInstance) -> BTreeMap<NodeId, Vec<Element>> {
        (0..self.sets.len())
            .map(|b| (inst.node_id(b), self.ascending(inst, b)))
            .collect()
    }

    /// True iff `R(B)` has an element strictly lighter than the element with key `k`.
    pub(crate) fn has_below(&self, b: usize, k: u32) -> bool {
        self.sets[b].last().is_some_and(|&m| m > k)
    }

    pub(crate) fn qualifies_dense(&self, ix: &Index, x: usize, b: usize) -> bool {
        let k = ix.key[x];
        ix.chain_to(x, b).iter().all(|&a| self.has_below(a, k))
    }
}

/// `R(B) = OPT_S(B)` for every node, optionally padded to `μ(B)`.
pub fn reference_sets(
    inst: &LaminarInstance,
    sample: &[ElementId],
    padding: bool,
) -> Result<ReferenceSets> {
    let mask = crate::matroid::subset_mask(inst, sample)?;
    Ok(ReferenceSets::build(inst, &mask, padding))
}

/// `x` qualifies for `B` iff on every node of `Chain[M(x), B]` the lightest
/// reference element is lighter than `x`. An empty reference set has no
/// lightest element, so nothing qualifies through it.
pub fn qualifies(
    inst: &LaminarInstance,
    x: ElementId,
    node: NodeId,
    refs: &ReferenceSets,
) -> Result<bool> {
    let e = inst.elem_idx(x)?;
    let b = inst.node_idx(node)?;
    if !inst.index().elem_in(e, b) {
        return Err(Error::ElementNotInNode { element: x, node });
    }
    Ok(refs.qualifies_dense(inst.index(), e, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Accept,
    Break,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    /// 1-based arrival position within `T`.
    pub step: usize,
    pub element: ElementId,
    pub node: NodeId,
    pub action: Action,
    pub evicted: Option<Element>,
}

/// `AllKicked` outcome for one element of `OPT ∩ T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllKickedRecord {
    pub element: ElementId,
    /// Node where the walk stopped, `None` if the element entered `SOL(U)`.
    pub break_node: Option<NodeId>,
    /// Every `B ∈ F(i)` whose reference elements lighter than `i` were all
    /// gone when `i` arrived.
    pub kicked_nodes: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// `SOL(U)` in acceptance order.
    pub sol_root: Vec<ElementId>,
    pub sol_weight: f64,
    pub sol_per_node: BTreeMap<NodeId, Vec<ElementId>>,
    pub initial_reference: BTreeMap<NodeId, Vec<Element>>,
    pub final_reference: BTreeMap<NodeId, Vec<Element>>,
    /// Empty unless tracing was requested.
    pub events: Vec<TraceEvent>,
    pub allkicked: Vec<AllKickedRecord>,
}

pub(crate) struct RawEvent {
    pub step: usize,
    pub elem: usize,
    pub node: usize,
    pub evicted: Option<u32>,
}

pub(crate) struct RawKicked {
    pub elem: usize,
    pub break_node: Option<usize>,
    pub kicked_nodes: Vec<usize>,
}

pub(crate) struct RawRun {
    pub sol_per_node: Vec<Vec<usize>>,
    pub sol_root: Vec<usize>,
    pub events: Vec<RawEvent>,
    pub kicked: Vec<RawKicked>,
}

/// Runs the selection phase against `refs`, consuming it in place.
/// `track` marks the elements whose `AllKicked` status is recorded.
pub(crate) fn execute(
    ix: &Index,
    refs: &mut ReferenceSets,
    order: &[usize],
    track: &[bool],
    record: bool,
) -> RawRun {
    let mut sol_per_node = vec![Vec::new(); ix.capacity.len()];
    let mut sol_root = Vec::new();
    let mut events = Vec::new();
    let mut kicked = Vec::new();

    for (pos, &i) in order.iter().enumerate() {
        let ki = ix.key[i];
        let chain = &ix.up[ix.home[i]];
        let kicked_nodes: Vec<usize> = if track[i] {
            chain
                .iter()
                .copied()
                .filter(|&b| !refs.has_below(b, ki))
                .collect()
        } else {
            Vec::new()
        };

        let mut break_node = None;
        for &b in chain {
            let set = &mut refs.sets[b];
            if set.last().is_some_and(|&m| m > ki) {
                // Keys are sorted; the first key past `ki` is the heaviest lighter element.
                let at = set.partition_point(|&k| k < ki);
                let evicted = set.remove(at);
                sol_per_node[b].push(i);
                if record {
                    events.push(RawEvent {
                        step: pos + 1,
                        elem: i,
                        node: b,
                        evicted: Some(evicted),
                    });
                }
            } else {
                if record {
                    events.push(RawEvent {
                        step: pos + 1,
                        elem: i,
                        node: b,
                        evicted: None,
                    });
                }
                break_node = Some(b);
                break;
            }
        }
        if break_node.is_none() {
            sol_root.push(i);
        }
        if track[i] {
            kicked.push(RawKicked {
                elem: i,
                break_node,
                kicked_nodes,
            });
        }
    }
    RawRun {
        sol_per_node,
        sol_root,
        events,
        kicked,
    }
}

/// Membership mask of `OPT(U)`.
pub(crate) fn opt_root_mask(inst: &LaminarInstance) -> Vec<bool> {
    let ix = inst.index();
    let mut mask = vec![false; inst.len()];
    for e in greedy_dense(ix, ix.root, |_| true) {
        mask[e] = true;
    }
    mask
}

pub fn run_kicknext(inst: &LaminarInstance, trial: &Trial, config: RunConfig) -> Result<RunResult> {
    let dense = trial.dense(inst)?;
    let track = opt_root_mask(inst);
    let ix = inst.index();
    let initial = ReferenceSets::build(inst, &dense.in_sample, config.padding);
    let mut refs = initial.clone();
    let raw = execute(ix, &mut refs, &dense.order, &track, config.trace);

    let ids = |v: &[usize]| v.iter().map(|&e| inst.elem_id(e)).collect::<Vec<_>>();
    let mut sol_weights: Vec<f64> = raw.sol_root.iter().map(|&e| ix.weight[e]).collect();
    sol_weights.sort_by(|a, b| b.total_cmp(a));
    let events = raw
        .events
        .iter()
        .map(|ev| TraceEvent {
            step: ev.step,
            element: inst.elem_id(ev.elem),
            node: inst.node_id(ev.node),
            action: if ev.evicted.is_some() {
                Action::Accept
            } else {
                Action::Break
            },
            evicted: ev.evicted.map(|k| refs.element(inst, k)),
        })
        .collect();
    let allkicked = raw
        .kicked
        .iter()
        .map(|k| AllKickedRecord {
            element: inst.elem_id(k.elem),
            break_node: k.break_node.map(|b| inst.node_id(b)),
            kicked_nodes: k.kicked_nodes.iter().map(|&b| inst.node_id(b)).collect(),
        })
        .collect();

    Ok(RunResult {
        sol_root: ids(&raw.sol_root),
        sol_weight: sol_weights.iter().copied().fsum(),
        sol_per_node: raw
            .sol_per_node
            .iter()
            .enumerate()
            .map(|(b, s)| (inst.node_id(b), ids(s)))
            .collect(),
        initial_reference: initial.to_map(inst),
        final_reference: refs.to_map(inst),
        events,
        allkicked,
    })
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    element_id: u64,
    node_id: u64,
    action: Action,
    evicted_id: Option<u64>,
    evicted_virtual: u8,
}

/// Trace CSV: `step,element_id,node_id,action,evicted_id,evicted_virtual`.
pub fn write_trace_csv<W: Write>(events: &[TraceEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for ev in events {
        w.serialize(TraceRow {
            step: ev.step,
            element_id: ev.element.0,
            node_id: ev.node.0,
            action: ev.action,
            evicted_id: ev.evicted.as_ref().map(|e| e.id.0),
            evicted_virtual: u8::from(ev.evicted.as_ref().is_some_and(|e| e.virtual_flag)),
        })?;
    }
    if events.is_empty() {
        w.write_record([
            "step",
            "element_id",
            "node_id",
            "action",
            "evicted_id",
            "evicted_virtual",
        ])?;
    }
    w.flush()?;
    Ok(())
}
