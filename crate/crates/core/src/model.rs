//! Laminar matroid instances.
//!
//! A laminar family is stored as a rooted tree of capacity nodes. Every
//! element is attached to the innermost node containing it (`M(i)`); the
//! member set of a node is everything attached to it or to a descendant.
//! The root stands for the whole ground set and always carries an explicit
//! capacity.
//!
//! Equal raw weights are legal. All modules compare elements with
//! [`weight_order`]: heavier first, and among equal weights the smaller id
//! first. This is the fixed perturbation that makes every optimum unique.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest id accepted from an instance file (ids must be exact in JSON doubles).
pub const MAX_ID: u64 = 1 << 53;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    pub weight: f64,
    /// Padding element of weight zero; never part of a loaded instance.
    #[serde(default, rename = "virtual", skip_serializing_if = "is_false")]
    pub virtual_flag: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Element {
    pub fn real(id: u64, weight: f64) -> Self {
        Element {
            id: ElementId(id),
            weight,
            virtual_flag: false,
        }
    }

    pub fn padding(id: ElementId) -> Self {
        Element {
            id,
            weight: 0.0,
            virtual_flag: true,
        }
    }
}

/// Float sum starting from `+0.0`; `Iterator::sum` on an empty `f64`
/// iterator yields `-0.0`, which would leak into printed output.
pub(crate) trait FSum: Iterator<Item = f64> + Sized {
    fn fsum(self) -> f64 {
        self.fold(0.0, |a, x| a + x)
    }
}

impl<I: Iterator<Item = f64>> FSum for I {}

/// Strict total order on elements: `Less` means `a` is heavier than `b`
/// (or equally heavy with a smaller id).
pub fn weight_order(a: &Element, b: &Element) -> Ordering {
    b.weight.total_cmp(&a.weight).then(a.id.cmp(&b.id))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyNode {
    pub id: NodeId,
    pub capacity: u32,
    pub parent: Option<NodeId>,
    /// Sorted by id; derived from the parent links.
    pub children: Vec<NodeId>,
}

impl FamilyNode {
    pub fn new(id: u64, capacity: u32, parent: Option<u64>) -> Self {
        FamilyNode {
            id: NodeId(id),
            capacity,
            parent: parent.map(NodeId),
            children: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    elements: Vec<ElementRecord>,
    nodes: Vec<NodeRecord>,
    membership: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementRecord {
    id: u64,
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: u64,
    capacity: i64,
    parent: Option<u64>,
}

/// A validated laminar matroid. Immutable once built.
#[derive(Clone, Debug)]
pub struct LaminarInstance {
    name: String,
    elements: Vec<Element>,
    nodes: Vec<FamilyNode>,
    membership: BTreeMap<ElementId, NodeId>,
    index: Index,
}

/// Dense lookup tables. Element and node indices follow the input order.
#[derive(Clone, Debug)]
pub(crate) struct Index {
    pub elem_of: HashMap<ElementId, usize>,
    pub node_of: HashMap<NodeId, usize>,
    pub root: usize,
    /// Element index -> node index of `M(i)`.
    pub home: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub capacity: Vec<u32>,
    /// Node index -> path of node indices from the node up to the root.
    pub up: Vec<Vec<usize>>,
    /// Euler-tour interval of every node; `tin[a] <= tin[b] < tout[a]` iff b is in a's subtree.
    pub tin: Vec<usize>,
    pub tout: Vec<usize>,
    /// Element index -> position in the weight order (0 = heaviest).
    pub key: Vec<u32>,
    /// Position in the weight order -> element index.
    pub by_key: Vec<usize>,
    pub weight: Vec<f64>,
}

impl Index {
    pub fn node_in_subtree(&self, node: usize, ancestor: usize) -> bool {
        self.tin[ancestor] <= self.tin[node] && self.tin[node] < self.tout[ancestor]
    }

    pub fn elem_in(&self, elem: usize, node: usize) -> bool {
        self.node_in_subtree(self.home[elem], node)
    }

    /// Node indices from `M(elem)` up to and including `node`.
    pub fn chain_to(&self, elem: usize, node: usize) -> &[usize] {
        let path = &self.up[self.home[elem]];
        let len = path
            .iter()
            .position(|&b| b == node)
            .map_or(path.len(), |p| p + 1);
        &path[..len]
    }
}

impl LaminarInstance {
    /// Validates the parts and builds an instance. `children` of the given
    /// nodes are ignored and recomputed from the parent links.
    pub fn new(
        name: impl Into<String>,
        elements: Vec<Element>,
        nodes: Vec<FamilyNode>,
        membership: BTreeMap<ElementId, NodeId>,
    ) -> Result<Self> {
        let mut elem_of = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if e.id.0 > MAX_ID {
                return Err(Error::IdOutOfRange(e.id.0));
            }
            if elem_of.insert(e.id, i).is_some() {
                return Err(Error::DuplicateElement(e.id));
            }
            if e.virtual_flag {
                return Err(Error::VirtualInInstance(e.id));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::InvalidWeight {
                    element: e.id,
                    weight: e.weight,
                });
            }
        }

        let mut node_of = HashMap::with_capacity(nodes.len());
        for (i, b) in nodes.iter().enumerate() {
            if b.id.0 > MAX_ID {
                return Err(Error::IdOutOfRange(b.id.0));
            }
            if node_of.insert(b.id, i).is_some() {
                return Err(Error::DuplicateNode(b.id));
            }
            if b.capacity == 0 {
                return Err(Error::NonPositiveCapacity(b.id));
            }
        }

        let roots: Vec<NodeId> = nodes
            .iter()
            .filter(|b| b.parent.is_none())
            .map(|b| b.id)
            .collect();
        let root = match roots.as_slice() {
            [] => return Err(Error::NoRoot),
            [r] => node_of[r],
            _ => return Err(Error::MultipleRoots(roots)),
        };

        let mut parent = vec![None; nodes.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, b) in nodes.iter().enumerate() {
            if let Some(pid) = b.parent {
                let p = *node_of.get(&pid).ok_or(Error::UnknownParent {
                    node: b.id,
                    parent: pid,
                })?;
                parent[i] = Some(p);
                children[p].push(i);
            }
        }
        for c in children.iter_mut() {
            c.sort_by_key(|&i| nodes[i].id);
        }

        // Iterative DFS for the Euler tour; nodes left unvisited sit on a cycle.
        let n_nodes = nodes.len();
        let mut tin = vec![usize::MAX; n_nodes];
        let mut tout = vec![0; n_nodes];
        let mut clock = 0;
        let mut stack = vec![(root, 0usize)];
        tin[root] = clock;
        clock += 1;
        while let Some(&mut (b, ref mut next)) = stack.last_mut() {
            if *next < children[b].len() {
                let c = children[b][*next];
                *next += 1;
                tin[c] = clock;
                clock += 1;
                stack.push((c, 0));
            } else {
                tout[b] = clock;
                stack.pop();
            }
        }
        if let Some(i) = (0..n_nodes)
            .filter(|&i| tin[i] == usize::MAX)
            .min_by_key(|&i| nodes[i].id)
        {
            return Err(Error::Cycle(nodes[i].id));
        }

        let up: Vec<Vec<usize>> = (0..n_nodes)
            .map(|b| {
                let mut path = vec![b];
                let mut cur = b;
                while let Some(p) = parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path
            })
            .collect();

        for (&eid, &nid) in &membership {
            if !elem_of.contains_key(&eid) {
                return Err(Error::UnknownMembershipElement(eid));
            }
            if !node_of.contains_key(&nid) {
                return Err(Error::UnknownMembershipNode {
                    element: eid,
                    node: nid,
                });
            }
        }
        let mut home = Vec::with_capacity(elements.len());
        for e in &elements {
            let nid = membership
                .get(&e.id)
                .ok_or(Error::MissingMembership(e.id))?;
            home.push(node_of[nid]);
        }

        let mut by_key: Vec<usize> = (0..elements.len()).collect();
        by_key.sort_by(|&a, &b| weight_order(&elements[a], &elements[b]));
        let mut key = vec![0u32; elements.len()];
        for (k, &e) in by_key.iter().enumerate() {
            key[e] = k as u32;
        }

        let index = Index {
            elem_of,
            node_of,
            root,
            home,
            parent,
            capacity: nodes.iter().map(|b| b.capacity).collect(),
            up,
            tin,
            tout,
            key,
            by_key,
            weight: elements.iter().map(|e| e.weight).collect(),
        };

        let child_ids: Vec<Vec<NodeId>> = children
            .iter()
            .map(|cs| cs.iter().map(|&c| nodes[c].id).collect())
            .collect();
        let nodes = nodes
            .into_iter()
            .zip(child_ids)
            .map(|(mut b, cs)| {
                b.children = cs;
                b
            })
            .collect();

        Ok(LaminarInstance {
            name: name.into(),
            elements,
            nodes,
            membership,
            index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let elements = file
            .elements
            .iter()
            .map(|e| Element::real(e.id, e.weight))
            .collect();
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for b in &file.nodes {
            if b.id > MAX_ID {
                return Err(Error::IdOutOfRange(b.id));
            }
            if b.capacity <= 0 {
                return Err(Error::NonPositiveCapacity(NodeId(b.id)));
            }
            let capacity = u32::try_from(b.capacity).map_err(|_| Error::OutOfRange {
                name: "capacity",
                value: b.capacity as f64,
                expected: "at most 2^32 - 1",
            })?;
            nodes.push(FamilyNode::new(b.id, capacity, b.parent));
        }
        let mut membership = BTreeMap::new();
        for (k, &v) in &file.membership {
            let id: u64 = k
                .trim()
                .parse()
                .map_err(|_| Error::BadMembershipKey(k.clone()))?;
            membership.insert(ElementId(id), NodeId(v));
        }
        LaminarInstance::new(file.name, elements, nodes, membership)
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            name: self.name.clone(),
            elements: self
                .elements
                .iter()
                .map(|e| ElementRecord {
                    id: e.id.0,
                    weight: e.weight,
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|b| NodeRecord {
                    id: b.id.0,
                    capacity: i64::from(b.capacity),
                    parent: b.parent.map(|p| p.0),
                })
                .collect(),
            membership: self
                .membership
                .iter()
                .map(|(e, b)| (e.0.to_string(), b.0))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn nodes(&self) -> &[FamilyNode] {
        &self.nodes
    }

    pub fn membership(&self) -> &BTreeMap<ElementId, NodeId> {
        &self.membership
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.nodes[self.index.root].id
    }

    pub fn element(&self, id: ElementId) -> Result<&Element> {
        Ok(&self.elements[self.elem_idx(id)?])
    }

    pub fn node(&self, id: NodeId) -> Result<&FamilyNode> {
        Ok(&self.nodes[self.node_idx(id)?])
    }

    pub fn capacity(&self, id: NodeId) -> Result<u32> {
        Ok(self.node(id)?.capacity)
    }

    /// `M(i)`: the innermost node containing the element.
    pub fn home(&self, id: ElementId) -> Result<NodeId> {
        Ok(self.nodes[self.index.home[self.elem_idx(id)?]].id)
    }

    pub fn contains(&self, node: NodeId, elem: ElementId) -> Result<bool> {
        let b = self.node_idx(node)?;
        let e = self.elem_idx(elem)?;
        Ok(self.index.elem_in(e, b))
    }

    /// Members of the node's set, in instance order.
    pub fn members(&self, node: NodeId) -> Result<Vec<ElementId>> {
        let b = self.node_idx(node)?;
        Ok((0..self.len())
            .filter(|&e| self.index.elem_in(e, b))
            .map(|e| self.elements[e].id)
            .collect())
    }

    /// `Chain[from, to]`: node ids from `from` up to `to` following parent links.
    pub fn chain(&self, from: NodeId, to: NodeId) -> Result<Vec<NodeId>> {
        let a = self.node_idx(from)?;
        let b = self.node_idx(to)?;
        if !self.index.node_in_subtree(a, b) {
            return Err(Error::NotContained { from, to });
        }
        let path = &self.index.up[a];
        let len = path
            .iter()
            .position(|&x| x == b)
            .expect("ancestor lies on the path")
            + 1;
        Ok(path[..len].iter().map(|&x| self.nodes[x].id).collect())
    }

    /// `F(i) = Chain[M(i), U]`.
    pub fn family_of(&self, elem: ElementId) -> Result<Vec<NodeId>> {
        let home = self.home(elem)?;
        self.chain(home, self.root())
    }

    pub fn total_weight(&self, ids: &[ElementId]) -> Result<f64> {
        let mut ws = ids
            .iter()
            .map(|&id| Ok(self.element(id)?.weight))
            .collect::<Result<Vec<_>>>()?;
        ws.sort_by(|a, b| b.total_cmp(a));
        Ok(ws.iter().copied().fsum())
    }

    /// True iff every non-root node has capacity strictly below its parent's.
    pub fn is_normalized(&self) -> bool {
        (0..self.nodes.len()).all(|b| {
            self.index.parent[b].is_none_or(|p| self.index.capacity[b] < self.index.capacity[p])
        })
    }

    /// Removes every node whose capacity is not strictly below the capacity
    /// of all its proper ancestors. Elements and children of a removed node
    /// move to the nearest surviving ancestor. The independent sets do not
    /// change: a removed node's constraint is implied by the ancestor's.
    pub fn normalize_family(&self) -> LaminarInstance {
        let ix = &self.index;
        let keep: Vec<bool> = (0..self.nodes.len())
            .map(|b| {
                ix.up[b][1..]
                    .iter()
                    .all(|&a| ix.capacity[b] < ix.capacity[a])
            })
            .collect();
        if keep.iter().all(|&k| k) {
            return self.clone();
        }
        let survivor = |b: usize| -> usize {
            *ix.up[b]
                .iter()
                .find(|&&a| keep[a])
                .expect("root is always kept")
        };

        let nodes = (0..self.nodes.len())
            .filter(|&b| keep[b])
            .map(|b| FamilyNode {
                id: self.nodes[b].id,
                capacity: ix.capacity[b],
                parent: ix.parent[b].map(|p| self.nodes[survivor(p)].id),
                children: Vec::new(),
            })
            .collect();
        let membership = self
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| (el.id, self.nodes[survivor(ix.home[e])].id))
            .collect();
        LaminarInstance::new(self.name.clone(), self.elements.clone(), nodes, membership)
            .expect("normalization preserves validity")
    }

    /// Pairwise check that member sets are nested or disjoint, computed from
    /// explicit member lists rather than the tree intervals.
    pub fn is_laminar_bruteforce(&self) -> bool {
        use std::collections::BTreeSet;
        let sets: Vec<BTreeSet<ElementId>> = self
            .nodes
            .iter()
            .map(|b| {
                // Walk parent links from each element's home node.
                self.elements
                    .iter()
                    .filter(|e| {
                        let mut cur = Some(self.membership[&e.id]);
                        while let Some(c) = cur {
                            if c == b.id {
                                return true;
                            }
                            cur = self.node(c).ok().and_then(|n| n.parent);
                        }
                        false
                    })
                    .map(|e| e.id)
                    .collect()
            })
            .collect();
        for (i, a) in sets.iter().enumerate() {
            for b in &sets[i + 1..] {
                let disjoint = a.is_disjoint(b);
                if !(disjoint || a.is_subset(b) || b.is_subset(a)) {
                    return false;
                }
            }
        }
        sets[self.index.root].len() == self.len()
    }

    pub(crate) fn index(&self) -> &Index {
        &self.index
    }

    pub(crate) fn elem_idx(&self, id: ElementId) -> Result<usize> {
        self.index
            .elem_of
            .get(&id)
            .copied()
            .ok_or(Error::UnknownElement(id))
    }

    pub(crate) fn node_idx(&self, id: NodeId) -> Result<usize> {
        self.index
            .node_of
            .get(&id)
            .copied()
            .ok_or(Error::UnknownNode(id))
    }

    pub(crate) fn elem_id(&self, idx: usize) -> ElementId {
        self.elements[idx].id
    }

    pub(crate) fn node_id(&self, idx: usize) -> NodeId {
        self.nodes[idx].id
    }

    /// Largest element id plus one; padding ids are allocated from here.
    pub(crate) fn padding_id_base(&self) -> u64 {
        self.elements.iter().map(|e| e.id.0 + 1).max().unwrap_or(0)
    }
}

impl PartialEq for LaminarInstance {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.elements == other.elements
            && self.nodes == other.nodes
            && self.membership == other.membership
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// a=0 (w 10), b=1 (w 7), c=2 (w 5), d=3 (w 2); root 0 (cap 3), node 1 (cap 1) holding a and b.
    pub fn four_element() -> LaminarInstance {
        LaminarInstance::from_json(FOUR_ELEMENT_JSON).unwrap()
    }

    pub const FOUR_ELEMENT_JSON: &str = r#"{
        "name": "four",
        "elements": [
            {"id": 0, "weight": 10}, {"id": 1, "weight": 7},
            {"id": 2, "weight": 5}, {"id": 3, "weight": 2}
        ],
        "nodes": [
            {"id": 0, "capacity": 3, "parent": null},
            {"id": 1, "capacity": 1, "parent": 0}
        ],
        "membership": {"0": 1, "1": 1, "2": 0, "3": 0}
    }"#;

    pub fn ids(v: &[u64]) -> Vec<ElementId> {
        v.iter().map(|&i| ElementId(i)).collect()
    }

    /// Nodes given root-to-leaf as a path, one element per node.
    pub fn path(caps: &[u32]) -> LaminarInstance {
        let nodes = caps
            .iter()
            .enumerate()
            .map(|(i, &c)| FamilyNode::new(i as u64, c, i.checked_sub(1).map(|p| p as u64)))
            .collect();
        let elements = (0..caps.len())
            .map(|i| Element::real(i as u64, 1.0 + i as f64))
            .collect();
        let membership = (0..caps.len())
            .map(|i| (ElementId(i as u64), NodeId(i as u64)))
            .collect();
        LaminarInstance::new("path", elements, nodes, membership).unwrap()
    }
}
