//! Seeded instance families.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Pareto};

use crate::error::{Error, Result};
use crate::model::{Element, ElementId, FamilyNode, LaminarInstance, NodeId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// A single root of capacity `k`.
    Uniform { k: u32 },
    /// `parts` leaves under the root, each of capacity `capacity`; the root
    /// capacity is `parts·capacity`, so it never binds.
    Partition { parts: u32, capacity: u32 },
    /// A path of `depth` nodes; capacities grow strictly toward the root.
    Chain { depth: u32 },
    /// A random tree with at most `max_branching` children per node.
    RandomTree { max_branching: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightDist {
    /// Uniform on (0, 1].
    Uniform,
    /// Standard exponential.
    Exponential,
    /// Pareto with scale 1 and the given shape.
    PowerLaw(f64),
    /// Integers 1..=3, so equal raw weights are common.
    NearTies,
}

impl fmt::Display for WeightDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightDist::Uniform => write!(f, "uniform"),
            WeightDist::Exponential => write!(f, "exponential"),
            WeightDist::PowerLaw(a) => write!(f, "power_law:{a}"),
            WeightDist::NearTies => write!(f, "near_ties"),
        }
    }
}

impl FromStr for WeightDist {
    type Err = Error;

    /// `uniform`, `exponential`, `power_law[:EXPONENT]` (default 2), `near_ties`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = s.split_once(':').map_or((s, None), |(h, a)| (h, Some(a)));
        match (head.replace('-', "_").as_str(), arg) {
            ("uniform", None) => Ok(WeightDist::Uniform),
            ("exponential", None) => Ok(WeightDist::Exponential),
            ("near_ties", None) => Ok(WeightDist::NearTies),
            ("power_law", a) => {
                let shape = a
                    .map_or(Ok(2.0), |a| a.parse::<f64>())
                    .map_err(|_| bad_dist(s))?;
                if shape > 0.0 && shape.is_finite() {
                    Ok(WeightDist::PowerLaw(shape))
                } else {
                    Err(bad_dist(s))
                }
            }
            _ => Err(bad_dist(s)),
        }
    }
}

fn bad_dist(s: &str) -> Error {
    Error::InvalidSpec(format!("unknown weight distribution {s:?}"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub weights: WeightDist,
}

impl GenSpec {
    pub fn new(family: Family, n: usize, seed: u64, weights: WeightDist) -> Self {
        GenSpec {
            family,
            n,
            seed,
            weights,
        }
    }

    fn name(&self) -> String {
        let fam = match self.family {
            Family::Uniform { k } => format!("uniform-k{k}"),
            Family::Partition { parts, capacity } => format!("partition-{parts}x{capacity}"),
            Family::Chain { depth } => format!("chain-d{depth}"),
            Family::RandomTree { max_branching } => format!("tree-b{max_branching}"),
        };
        format!("{fam}-n{}-{}-s{}", self.n, self.weights, self.seed)
    }
}

fn draw_weight(dist: WeightDist, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let w = match dist {
            WeightDist::Uniform => 1.0 - rng.random::<f64>(),
            WeightDist::Exponential => Exp1.sample(rng),
            WeightDist::PowerLaw(shape) => Pareto::new(1.0, shape)
                .expect("validated shape")
                .sample(rng),
            WeightDist::NearTies => f64::from(rng.random_range(1..=3u32)),
        };
        if w > 0.0 && w.is_finite() {
            return w;
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

/// Builds an instance from the spec; the same spec always yields the same instance.
pub fn generate(spec: &GenSpec) -> Result<LaminarInstance> {
    if spec.n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;

    // (capacity, parent) per node, node 0 is the root; plus each element's home.
    let (nodes, home): (Vec<(u32, Option<usize>)>, Vec<usize>) = match spec.family {
        Family::Uniform { k } => {
            if k == 0 || k as usize > n {
                return Err(invalid(format!(
                    "uniform rank k = {k} must satisfy 1 <= k <= n = {n}"
                )));
            }
            (vec![(k, None)], vec![0; n])
        }
        Family::Partition { parts, capacity } => {
            if parts < 2 || capacity == 0 {
                return Err(invalid(
                    "partition needs at least 2 parts and capacity >= 1",
                ));
            }
            let mut nodes = vec![(parts * capacity, None)];
            nodes.extend((0..parts).map(|_| (capacity, Some(0))));
            // Round-robin first so every part is non-empty when n allows it.
            let home = (0..n)
                .map(|e| {
                    if e < parts as usize {
                        1 + e
                    } else {
                        1 + rng.random_range(0..parts as usize)
                    }
                })
                .collect();
            (nodes, home)
        }
        Family::Chain { depth } => {
            if depth == 0 {
                return Err(invalid("chain depth must be at least 1"));
            }
            // Leaf capacity 1; each step toward the root adds 1 or 2.
            let mut caps = vec![1u32];
            for _ in 1..depth {
                let last = *caps.last().unwrap();
                caps.push(last + rng.random_range(1..=2));
            }
            caps.reverse();
            let nodes = (0..depth as usize)
                .map(|i| (caps[i], i.checked_sub(1)))
                .collect();
            let home = (0..n)
                .map(|_| rng.random_range(0..depth as usize))
                .collect();
            (nodes, home)
        }
        Family::RandomTree { max_branching } => {
            if max_branching == 0 {
                return Err(invalid("max_branching must be at least 1"));
            }
            random_tree(n, max_branching as usize, &mut rng)
        }
    };

    let elements: Vec<Element> = (0..n)
        .map(|e| Element::real(e as u64, draw_weight(spec.weights, &mut rng)))
        .collect();
    let family = nodes
        .iter()
        .enumerate()
        .map(|(i, &(cap, parent))| FamilyNode::new(i as u64, cap, parent.map(|p| p as u64)))
        .collect();
    let membership: BTreeMap<ElementId, NodeId> = home
        .iter()
        .enumerate()
        .map(|(e, &b)| (ElementId(e as u64), NodeId(b as u64)))
        .collect();
    LaminarInstance::new(spec.name(), elements, family, membership)
}

/// Sequential parent attachment, then capacities bottom-up: a leaf gets 1..=2
/// (at most its element count when it has any), an internal node gets a value
/// strictly above its largest child and at most the sum of its children's
/// capacities plus its own elements.
fn random_tree(
    n: usize,
    max_branching: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<(u32, Option<usize>)>, Vec<usize>) {
    let node_count = 1 + rng.random_range(0..=n.div_ceil(2));
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut child_count = vec![0usize];
    for _ in 1..node_count {
        let open: Vec<usize> = (0..parent.len())
            .filter(|&b| child_count[b] < max_branching)
            .collect();
        let p = open[rng.random_range(0..open.len())];
        parent.push(Some(p));
        child_count[p] += 1;
        child_count.push(0);
    }
    let home: Vec<usize> = (0..n).map(|_| rng.random_range(0..node_count)).collect();
    let mut own = vec![0u32; node_count];
    for &b in &home {
        own[b] += 1;
    }

    // Children have larger indices than their parents, so a reverse scan is bottom-up.
    let mut cap = vec![0u32; node_count];
    let mut max_child = vec![0u32; node_count];
    let mut sum_child = vec![0u32; node_count];
    for b in (0..node_count).rev() {
        cap[b] = if child_count[b] == 0 {
            let hi = if own[b] == 0 { 2 } else { own[b].min(2) };
            rng.random_range(1..=hi)
        } else {
            let lo = max_child[b] + 1;
            let hi = (sum_child[b] + own[b]).max(lo);
            rng.random_range(lo..=hi)
        };
        if let Some(p) = parent[b] {
            max_child[p] = max_child[p].max(cap[b]);
            sum_child[p] += cap[b];
        }
    }
    (cap.into_iter().zip(parent).collect(), home)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matroid::{brute_force_opt, opt};

    #[test]
    fn uniform_shape() {
        let inst = generate(&GenSpec::new(
            Family::Uniform { k: 2 },
            5,
            1,
            WeightDist::Uniform,
        ))
        .unwrap();
        assert_eq!(inst.nodes().len(), 1);
        assert_eq!(inst.nodes()[0].capacity, 2);
        assert_eq!(inst.len(), 5);
    }

    #[test]
    fn chain_shape() {
        let inst = generate(&GenSpec::new(
            Family::Chain { depth: 3 },
            6,
            4,
            WeightDist::Exponential,
        ))
        .unwrap();
        assert_eq!(inst.nodes().len(), 3);
        let leaf = inst
            .nodes()
            .iter()
            .find(|b| b.children.is_empty())
            .unwrap()
            .id;
        let chain = inst.chain(leaf, inst.root()).unwrap();
        assert_eq!(chain.len(), 3);
        let caps: Vec<u32> = chain.iter().map(|&b| inst.capacity(b).unwrap()).collect();
        assert!(caps.windows(2).all(|w| w[0] < w[1]), "{caps:?}");
    }

    #[test]
    fn random_tree_is_deterministic() {
        let spec = GenSpec::new(
            Family::RandomTree { max_branching: 3 },
            12,
            7,
            WeightDist::PowerLaw(2.5),
        );
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        assert!(generate(&GenSpec::new(
            Family::Uniform { k: 6 },
            5,
            0,
            WeightDist::Uniform
        ))
        .is_err());
        assert!(generate(&GenSpec::new(
            Family::Uniform { k: 1 },
            0,
            0,
            WeightDist::Uniform
        ))
        .is_err());
        assert!(generate(&GenSpec::new(
            Family::Partition {
                parts: 1,
                capacity: 1
            },
            5,
            0,
            WeightDist::Uniform
        ))
        .is_err());
        assert!(generate(&GenSpec::new(
            Family::Chain { depth: 0 },
            5,
            0,
            WeightDist::Uniform
        ))
        .is_err());
    }

    #[test]
    fn weight_distribution_parsing() {
        assert_eq!(
            "uniform".parse::<WeightDist>().unwrap(),
            WeightDist::Uniform
        );
        assert_eq!(
            "power_law:3".parse::<WeightDist>().unwrap(),
            WeightDist::PowerLaw(3.0)
        );
        assert_eq!(
            "power-law".parse::<WeightDist>().unwrap(),
            WeightDist::PowerLaw(2.0)
        );
        assert_eq!(
            "near_ties".parse::<WeightDist>().unwrap(),
            WeightDist::NearTies
        );
        assert!("gaussian".parse::<WeightDist>().is_err());
        assert!("power_law:-1".parse::<WeightDist>().is_err());
    }

    #[test]
    fn families_are_valid_and_normalized() {
        let families = [
            Family::Uniform { k: 3 },
            Family::Partition {
                parts: 3,
                capacity: 2,
            },
            Family::Chain { depth: 4 },
            Family::RandomTree { max_branching: 2 },
            Family::RandomTree { max_branching: 4 },
        ];
        let dists = [
            WeightDist::Uniform,
            WeightDist::Exponential,
            WeightDist::PowerLaw(1.5),
            WeightDist::NearTies,
        ];
        for (f, family) in families.iter().enumerate() {
            for (d, &weights) in dists.iter().enumerate() {
                for seed in 0..20 {
                    let inst = generate(&GenSpec::new(
                        *family,
                        3 + seed as usize % 10,
                        seed + 100 * (f * 4 + d) as u64,
                        weights,
                    ))
                    .unwrap();
                    assert!(inst.is_normalized(), "{}", inst.name());
                    assert!(inst.is_laminar_bruteforce(), "{}", inst.name());
                    assert_eq!(inst.normalize_family(), inst);
                }
            }
        }
    }

    #[test]
    fn partition_optimum_is_per_part_top() {
        for seed in 0..30 {
            let inst = generate(&GenSpec::new(
                Family::Partition {
                    parts: 3,
                    capacity: 2,
                },
                12,
                seed,
                WeightDist::NearTies,
            ))
            .unwrap();
            let mut expect = Vec::new();
            for part in inst.nodes().iter().filter(|b| b.parent.is_some()) {
                let mut members = inst.members(part.id).unwrap();
                members.sort_by(|&a, &b| {
                    crate::model::weight_order(inst.element(a).unwrap(), inst.element(b).unwrap())
                });
                expect.extend(members.into_iter().take(part.capacity as usize));
            }
            expect.sort();
            let mut got = opt(&inst, inst.root()).unwrap().elements;
            got.sort();
            assert_eq!(got, expect);
            let all: Vec<_> = inst.elements().iter().map(|e| e.id).collect();
            let mut bf = brute_force_opt(&inst, &all, inst.root()).unwrap().elements;
            bf.sort();
            assert_eq!(bf, expect);
        }
    }
}
