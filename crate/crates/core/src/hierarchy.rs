//! The annotation decision tree: internal nodes carry one auxiliary
//! classifier each, leaves are the fourteen techniques.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::technique::{Technique, NUM_TECHNIQUES};

pub const DEFAULT_HIERARCHY: &str = include_str!("../data/default_hierarchy.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cycle detected through node {0:?}")]
    Cycle(String),
    #[error("duplicate parent for node {0:?}")]
    DuplicateParent(String),
    #[error("unknown technique name {0:?}")]
    UnknownTechnique(String),
    #[error("expected {NUM_TECHNIQUES} technique leaves, found {0}")]
    LeafCount(usize),
    #[error("internal node {name:?} has {children} child(ren); at least 2 required")]
    TooFewChildren { name: String, children: usize },
    #[error("technique {0:?} cannot have children")]
    LeafWithChildren(String),
    #[error("expected exactly one root, found {0}")]
    RootCount(usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Internal node with its auxiliary classifier index.
    Internal {
        classifier: usize,
    },
    Leaf(Technique),
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// One step of a root-to-leaf path: classifier at `node` picks edge `edge`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub node: NodeId,
    pub classifier: usize,
    pub edge: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LeafPath {
    pub steps: Vec<PathStep>,
    pub leaf: NodeId,
}

impl LeafPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Validated, immutable decision tree. Node ids are assigned in preorder,
/// so the root is always `NodeId(0)` and classifier indices follow preorder
/// over internal nodes.
#[derive(Clone, Debug)]
pub struct HierarchyTree {
    nodes: Vec<Node>,
    classifiers: Vec<NodeId>,
    leaf_of: [NodeId; NUM_TECHNIQUES],
    paths: Vec<LeafPath>,
}

struct RawTree {
    names: Vec<String>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
}

impl RawTree {
    fn new() -> Self {
        RawTree { names: Vec::new(), children: Vec::new(), parent: Vec::new() }
    }

    fn add(&mut self, name: &str) -> usize {
        self.names.push(name.to_string());
        self.children.push(Vec::new());
        self.parent.push(None);
        self.names.len() - 1
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_outline(text: &str) -> Result<RawTree, HierarchyError> {
    let mut raw = RawTree::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    // stack[d] = node currently open at depth d
    let mut stack: Vec<usize> = Vec::new();
    let mut roots = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let indent = line.len() - line.trim_start_matches(' ').len();
        if line[indent..].starts_with('\t') {
            return Err(HierarchyError::Syntax { line: lineno, message: "tabs are not allowed".into() });
        }
        if !indent.is_multiple_of(2) {
            return Err(HierarchyError::Syntax {
                line: lineno,
                message: "indentation must be a multiple of two spaces".into(),
            });
        }
        let depth = indent / 2;
        if depth > stack.len() {
            return Err(HierarchyError::Syntax {
                line: lineno,
                message: "indentation jumps more than one level".into(),
            });
        }
        let name = line.trim();
        if by_name.contains_key(name) {
            return Err(HierarchyError::DuplicateParent(name.to_string()));
        }
        let id = raw.add(name);
        by_name.insert(name.to_string(), id);
        stack.truncate(depth);
        match stack.last() {
            Some(&p) => {
                raw.parent[id] = Some(p);
                raw.children[p].push(id);
            }
            None => roots += 1,
        }
        stack.push(id);
    }
    if roots != 1 {
        return Err(HierarchyError::RootCount(roots));
    }
    Ok(raw)
}

fn parse_edge_list(text: &str) -> Result<RawTree, HierarchyError> {
    let mut raw = RawTree::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut intern =
        |raw: &mut RawTree, name: &str| -> usize { *by_name.entry(name.to_string()).or_insert_with(|| raw.add(name)) };
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let (parent, child) = line
            .split_once("->")
            .ok_or_else(|| HierarchyError::Syntax { line: lineno + 1, message: "expected `parent -> child`".into() })?;
        let (parent, child) = (parent.trim(), child.trim());
        if parent.is_empty() || child.is_empty() {
            return Err(HierarchyError::Syntax { line: lineno + 1, message: "empty node name".into() });
        }
        let p = intern(&mut raw, parent);
        let c = intern(&mut raw, child);
        if p == c {
            return Err(HierarchyError::Cycle(parent.to_string()));
        }
        if raw.parent[c].is_some() {
            return Err(HierarchyError::DuplicateParent(child.to_string()));
        }
        raw.parent[c] = Some(p);
        raw.children[p].push(c);
    }
    // Any node whose ancestor chain revisits itself is on a cycle.
    for start in 0..raw.names.len() {
        let mut cur = start;
        for _ in 0..=raw.names.len() {
            match raw.parent[cur] {
                Some(p) if p == start => return Err(HierarchyError::Cycle(raw.names[start].clone())),
                Some(p) => cur = p,
                None => break,
            }
        }
    }
    let roots = raw.parent.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(HierarchyError::RootCount(roots));
    }
    Ok(raw)
}

impl HierarchyTree {
    /// Parses either an indented outline or a `parent -> child` edge list.
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        let is_edge_list = text.lines().any(|l| strip_comment(l).contains("->"));
        let raw = if is_edge_list { parse_edge_list(text)? } else { parse_outline(text)? };
        Self::from_raw(raw)
    }

    pub fn default_tree() -> Self {
        Self::parse(DEFAULT_HIERARCHY).expect("shipped hierarchy is valid")
    }

    fn from_raw(raw: RawTree) -> Result<Self, HierarchyError> {
        let root = raw.parent.iter().position(|p| p.is_none()).ok_or(HierarchyError::RootCount(0))?;
        // Re-number in preorder.
        let mut order = Vec::with_capacity(raw.names.len());
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(raw.children[n].iter().rev());
        }
        let mut new_id = vec![usize::MAX; raw.names.len()];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }

        let mut nodes = Vec::with_capacity(order.len());
        let mut classifiers = Vec::new();
        let mut leaf_of: [Option<NodeId>; NUM_TECHNIQUES] = [None; NUM_TECHNIQUES];
        let mut leaf_count = 0;
        for (i, &old) in order.iter().enumerate() {
            let name = &raw.names[old];
            let children: Vec<NodeId> = raw.children[old].iter().map(|&c| NodeId(new_id[c])).collect();
            let kind = match Technique::from_name(name) {
                Some(t) => {
                    if !children.is_empty() {
                        return Err(HierarchyError::LeafWithChildren(name.clone()));
                    }
                    if leaf_of[t.index()].is_some() {
                        return Err(HierarchyError::DuplicateParent(name.clone()));
                    }
                    leaf_of[t.index()] = Some(NodeId(i));
                    leaf_count += 1;
                    NodeKind::Leaf(t)
                }
                None => {
                    if children.is_empty() {
                        return Err(HierarchyError::UnknownTechnique(name.clone()));
                    }
                    if children.len() < 2 {
                        return Err(HierarchyError::TooFewChildren { name: name.clone(), children: children.len() });
                    }
                    classifiers.push(NodeId(i));
                    NodeKind::Internal { classifier: classifiers.len() - 1 }
                }
            };
            nodes.push(Node { name: name.clone(), kind, parent: raw.parent[old].map(|p| NodeId(new_id[p])), children });
        }
        if leaf_count != NUM_TECHNIQUES {
            return Err(HierarchyError::LeafCount(leaf_count));
        }
        let leaf_of = leaf_of.map(|l| l.expect("all techniques present when leaf count matches"));
        let mut tree = HierarchyTree { nodes, classifiers, leaf_of, paths: Vec::new() };
        tree.paths = Technique::ALL.iter().map(|&t| tree.compute_path(tree.leaf_of[t.index()])).collect();
        Ok(tree)
    }

    fn compute_path(&self, leaf: NodeId) -> LeafPath {
        let mut steps = Vec::new();
        let mut cur = leaf;
        while let Some(parent) = self.nodes[cur.0].parent {
            let edge = self.nodes[parent.0].children.iter().position(|&c| c == cur).expect("child listed under parent");
            let classifier = match self.nodes[parent.0].kind {
                NodeKind::Internal { classifier } => classifier,
                NodeKind::Leaf(_) => unreachable!("leaves have no children"),
            };
            steps.push(PathStep { node: parent, classifier, edge });
            cur = parent;
        }
        steps.reverse();
        LeafPath { steps, leaf }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, HierarchyError> {
        self.nodes.get(id.0).ok_or(HierarchyError::UnknownNode(id.0))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// K, the number of internal nodes (auxiliary classifiers).
    pub fn num_classifiers(&self) -> usize {
        self.classifiers.len()
    }

    pub fn classifier_node(&self, classifier: usize) -> NodeId {
        self.classifiers[classifier]
    }

    /// C_k for every classifier, in classifier order.
    pub fn classifier_arities(&self) -> Vec<usize> {
        self.classifiers.iter().map(|n| self.nodes[n.0].children.len()).collect()
    }

    pub fn leaf_of(&self, t: Technique) -> NodeId {
        self.leaf_of[t.index()]
    }

    pub fn technique_at(&self, id: NodeId) -> Option<Technique> {
        match self.nodes.get(id.0)?.kind {
            NodeKind::Leaf(t) => Some(t),
            NodeKind::Internal { .. } => None,
        }
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Root-to-leaf classifier/edge path for a leaf node.
    pub fn path_to_leaf(&self, leaf: NodeId) -> Result<&LeafPath, HierarchyError> {
        match self.node(leaf)?.kind {
            NodeKind::Leaf(t) => Ok(&self.paths[t.index()]),
            NodeKind::Internal { .. } => Err(HierarchyError::NotALeaf(leaf.0)),
        }
    }

    pub fn path_of(&self, t: Technique) -> &LeafPath {
        &self.paths[t.index()]
    }

    /// Number of nodes from the root down to `id`, both ends inclusive.
    pub fn node_depth(&self, id: NodeId) -> Result<usize, HierarchyError> {
        let mut cur = self.node(id)?;
        let mut depth = 1;
        while let Some(p) = cur.parent {
            depth += 1;
            cur = &self.nodes[p.0];
        }
        Ok(depth)
    }

    pub fn lowest_common_ancestor(&self, a: NodeId, b: NodeId) -> Result<NodeId, HierarchyError> {
        let (mut a, mut b) = (a, b);
        let mut da = self.node_depth(a)?;
        let mut db = self.node_depth(b)?;
        while da > db {
            a = self.nodes[a.0].parent.expect("depth > 1 has parent");
            da -= 1;
        }
        while db > da {
            b = self.nodes[b.0].parent.expect("depth > 1 has parent");
            db -= 1;
        }
        while a != b {
            a = self.nodes[a.0].parent.expect("distinct nodes below root");
            b = self.nodes[b.0].parent.expect("distinct nodes below root");
        }
        Ok(a)
    }

    /// Harmonic mean of L_lca/L_pred and L_lca/L_gold for two leaves.
    pub fn tree_f1(&self, gold: NodeId, pred: NodeId) -> Result<f64, HierarchyError> {
        for n in [gold, pred] {
            if let NodeKind::Internal { .. } = self.node(n)?.kind {
                return Err(HierarchyError::NotALeaf(n.0));
            }
        }
        let lca = self.lowest_common_ancestor(gold, pred)?;
        let lk = self.node_depth(lca)? as f64;
        let precision = lk / self.node_depth(pred)? as f64;
        let recall = lk / self.node_depth(gold)? as f64;
        Ok(2.0 * precision * recall / (precision + recall))
    }

    pub fn tree_f1_techniques(&self, gold: Technique, pred: Technique) -> f64 {
        self.tree_f1(self.leaf_of(gold), self.leaf_of(pred)).expect("techniques map to leaves")
    }

    /// Leaf nodes in preorder.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).map(NodeId).filter(|&n| self.technique_at(n).is_some()).collect()
    }

    /// Same topology with techniques reassigned to the leaves (taken in
    /// preorder) from `assignment`, which must be a permutation.
    pub fn with_leaf_assignment(&self, assignment: &[Technique]) -> Result<Self, HierarchyError> {
        let leaves = self.leaves();
        if assignment.len() != leaves.len() {
            return Err(HierarchyError::LeafCount(assignment.len()));
        }
        let mut tree = self.clone();
        let mut seen = [false; NUM_TECHNIQUES];
        for (&leaf, &t) in leaves.iter().zip(assignment) {
            if std::mem::replace(&mut seen[t.index()], true) {
                return Err(HierarchyError::DuplicateParent(t.name().to_string()));
            }
            tree.nodes[leaf.0].kind = NodeKind::Leaf(t);
            tree.nodes[leaf.0].name = t.name().to_string();
            tree.leaf_of[t.index()] = leaf;
        }
        tree.paths = Technique::ALL.iter().map(|&t| tree.compute_path(tree.leaf_of[t.index()])).collect();
        Ok(tree)
    }

    /// Leaf techniques permuted uniformly at random, topology unchanged.
    pub fn shuffle_leaves(&self, seed: u64) -> Self {
        let mut assignment: Vec<Technique> = self.leaves().iter().map(|&l| self.technique_at(l).unwrap()).collect();
        assignment.shuffle(&mut seed::rng(seed));
        self.with_leaf_assignment(&assignment).expect("a permutation of valid leaves is valid")
    }

    /// Canonical outline text; parsing it yields an identical tree.
    pub fn to_outline(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((n, depth)) = stack.pop() {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&self.nodes[n.0].name);
            out.push('\n');
            for &c in self.nodes[n.0].children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}

impl fmt::Display for HierarchyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_outline())
    }
}
