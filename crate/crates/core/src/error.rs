use std::io;

use thiserror::Error;

use crate::model::{ElementId, NodeId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed instance: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("duplicate element id {0}")]
    DuplicateElement(ElementId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("id {0} exceeds 2^53")]
    IdOutOfRange(u64),
    #[error("element {element}: invalid weight {weight} (real elements need a finite weight > 0)")]
    InvalidWeight { element: ElementId, weight: f64 },
    #[error("element {0}: virtual elements cannot appear in an instance")]
    VirtualInInstance(ElementId),
    #[error("node {0}: non-positive capacity")]
    NonPositiveCapacity(NodeId),
    #[error("no root: every node has a parent")]
    NoRoot,
    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<NodeId>),
    #[error("node {node}: parent {parent} does not exist")]
    UnknownParent { node: NodeId, parent: NodeId },
    #[error("node {0}: parent links form a cycle")]
    Cycle(NodeId),
    #[error("membership key {0:?} is not an element id")]
    BadMembershipKey(String),
    #[error("membership of element {element} references unknown node {node}")]
    UnknownMembershipNode { element: ElementId, node: NodeId },
    #[error("membership references unknown element {0}")]
    UnknownMembershipElement(ElementId),
    #[error("element {0} has no membership entry")]
    MissingMembership(ElementId),

    #[error("unknown element id {0}")]
    UnknownElement(ElementId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {from} is not contained in node {to}")]
    NotContained { from: NodeId, to: NodeId },
    #[error("element {element} is not a member of node {node}")]
    ElementNotInNode { element: ElementId, node: NodeId },

    #[error("{what} has {size} elements, exhaustive limit is {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error("parameter {name} = {value} out of range: {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid trial: {0}")]
    InvalidTrial(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("instance optimum has zero weight")]
    DegenerateInstance,
}
