//! Per-attribute hierarchy of Dirichlet-distributed conditional tables.
//!
//! The tree for attribute `X_c` branches on the class at depth 1 and on
//! each parent of `X_c` below that. Every node carries the collapsed
//! Chinese-restaurant statistics: `n[k]` (data counts at the deepest level,
//! otherwise the sum of the children's `t[k]`) and `t[k]`, the number of
//! tables serving dish `k`, which is what the node passes up to its parent.

use statrs::function::gamma::digamma;

use crate::counts::{CountTree, NO_CHILD};
use crate::data::{Dataset, UNKNOWN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub n: Vec<u64>,
    pub t: Vec<u64>,
    pub n_dot: u64,
    pub t_dot: u64,
    pub parent: Option<usize>,
    /// Dense branch table of node ids ([`NO_CHILD`] when unobserved), empty
    /// at the deepest level.
    pub children: Vec<u32>,
    pub depth: usize,
    /// Index into [`ContextTree::params`]; `None` for the root, whose
    /// concentration is [`ContextTree::root_alpha`].
    pub concentration: Option<usize>,
    /// Running mean of the per-iteration estimates.
    pub estimate: Vec<f64>,
    pub sample_count: u64,
}

impl TreeNode {
    fn new(card: usize, depth: usize, parent: Option<usize>) -> Self {
        TreeNode {
            n: vec![0; card],
            t: vec![0; card],
            n_dot: 0,
            t_dot: 0,
            parent,
            children: Vec::new(),
            depth,
            concentration: None,
            estimate: vec![0.0; card],
            sample_count: 0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(|&c| c == NO_CHILD)
    }
}

/// A concentration value shared by a set of nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationParam {
    pub value: f64,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextTree {
    pub child: usize,
    pub child_card: usize,
    /// Attribute parents below the class level, in branching order.
    pub parents: Vec<usize>,
    /// Cardinalities of the branching variables: `|Y|`, then each parent.
    pub branch_cards: Vec<usize>,
    /// Nodes in breadth-first order; each level is sorted by path.
    pub nodes: Vec<TreeNode>,
    /// Node ids per depth, root level first.
    pub levels: Vec<Vec<usize>>,
    pub params: Vec<ConcentrationParam>,
    pub root_alpha: f64,
    phi: Vec<f64>,
}

/// Builds the tree for `child` with the given attribute parents (the class
/// is always the first branching variable). One streaming pass.
pub fn build_tree(dataset: &Dataset, child: usize, parents: &[usize]) -> Result<ContextTree> {
    let mut counts = CountTree::new(dataset.schema(), child, parents)?;
    dataset.for_each(|inst| counts.add(inst))?;
    Ok(ContextTree::from_count_tree(&counts))
}

impl ContextTree {
    /// Copies the shape of a count tree; only its deepest level keeps data
    /// counts; everything above is derived during initialisation.
    pub fn from_count_tree(src: &CountTree) -> ContextTree {
        let card = src.child_card;
        let last = src.levels();
        let mut nodes = vec![TreeNode::new(card, 0, None)];
        let mut origin = vec![0usize];
        let mut levels = vec![vec![0usize]];
        let mut head = 0;
        while head < nodes.len() {
            let id = head;
            head += 1;
            let s = &src.nodes[origin[id]];
            if s.depth == last {
                nodes[id].n.clone_from(&s.counts);
                nodes[id].n_dot = s.counts.iter().sum();
                continue;
            }
            let mut children = vec![NO_CHILD; s.children.len()];
            for (v, &c) in s.children.iter().enumerate() {
                if c == NO_CHILD {
                    continue;
                }
                let depth = s.depth + 1;
                let new = nodes.len();
                nodes.push(TreeNode::new(card, depth, Some(id)));
                origin.push(c as usize);
                if levels.len() <= depth {
                    levels.push(Vec::new());
                }
                levels[depth].push(new);
                children[v] = new as u32;
            }
            nodes[id].children = children;
        }
        if last > 0 && nodes[0].children.is_empty() {
            nodes[0].children = vec![NO_CHILD; src.branch_cards[0]];
        }
        let mut tree = ContextTree {
            child: src.child,
            child_card: card,
            parents: src.parents.clone(),
            branch_cards: src.branch_cards.clone(),
            phi: vec![0.0; nodes.len() * card],
            nodes,
            levels,
            params: Vec::new(),
            root_alpha: 2.0,
        };
        // Start from the smallest coupled state, one table per observed
        // value, so the invariants hold before initialisation.
        for depth in (0..tree.levels.len()).rev() {
            for i in 0..tree.levels[depth].len() {
                let id = tree.levels[depth][i];
                tree.gather_children(id);
                let node = &mut tree.nodes[id];
                for k in 0..card {
                    node.t[k] = node.n[k].min(1);
                }
                node.t_dot = node.t.iter().sum();
            }
        }
        tree
    }

    /// Sets an internal node's `n` to the tables its children pass up.
    fn gather_children(&mut self, id: usize) {
        if self.nodes[id].is_leaf() {
            return;
        }
        let mut n = vec![0u64; self.child_card];
        for &c in self.nodes[id].children.iter().filter(|&&c| c != NO_CHILD) {
            for (acc, t) in n.iter_mut().zip(&self.nodes[c as usize].t) {
                *acc += t;
            }
        }
        let node = &mut self.nodes[id];
        node.n_dot = n.iter().sum();
        node.n = n;
    }

    /// Number of levels including the root (parent count + 2 for a tree
    /// with the class and every parent observed).
    pub fn depth(&self) -> usize {
        self.branch_cards.len() + 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Concentration of node `id`.
    pub fn alpha(&self, id: usize) -> f64 {
        match self.nodes[id].concentration {
            None => self.root_alpha,
            Some(p) => self.params[p].value,
        }
    }

    /// Sets `t` from `n` bottom-up, deriving each internal `n` from its
    /// children first.
    pub fn init_parameters(&mut self) -> Result<()> {
        if self.nodes.iter().skip(1).any(|node| node.concentration.is_none()) {
            return Err(Error::invalid("concentrations must be assigned before initialisation"));
        }
        for depth in (0..self.levels.len()).rev() {
            for i in 0..self.levels[depth].len() {
                let id = self.levels[depth][i];
                self.init_node(id);
            }
        }
        Ok(())
    }

    fn init_node(&mut self, id: usize) {
        let card = self.child_card;
        self.gather_children(id);
        let alpha = self.alpha(id);
        let node = &mut self.nodes[id];
        let is_root = node.parent.is_none();
        let spread = if node.n_dot > 0 {
            alpha * (digamma(alpha + node.n_dot as f64) - digamma(alpha))
        } else {
            0.0
        };
        for k in 0..card {
            let n = node.n[k];
            node.t[k] = if is_root {
                n.min(1)
            } else if n <= 1 {
                n
            } else {
                (spread.floor().max(1.0) as u64).min(n)
            };
        }
        node.t_dot = node.t.iter().sum();
    }

    /// Current (single-iteration) estimates of every node, computed top-down:
    /// the root shrinks towards uniform with `root_alpha`, every other node
    /// towards its parent's estimate with its own concentration.
    pub fn compute_estimates(&mut self) -> &[f64] {
        let card = self.child_card;
        for depth in 0..self.levels.len() {
            for &id in &self.levels[depth] {
                let node = &self.nodes[id];
                let alpha = match node.concentration {
                    None => self.root_alpha,
                    Some(p) => self.params[p].value,
                };
                let denom = node.n_dot as f64 + alpha;
                let base = id * card;
                match node.parent {
                    None => {
                        for k in 0..card {
                            self.phi[base + k] = (node.n[k] as f64 + alpha / card as f64) / denom;
                        }
                    }
                    Some(p) => {
                        let pb = p * card;
                        for k in 0..card {
                            self.phi[base + k] = (node.n[k] as f64 + alpha * self.phi[pb + k]) / denom;
                        }
                    }
                }
            }
        }
        &self.phi
    }

    /// Folds the current estimates into every node's running mean.
    pub fn record(&mut self) {
        self.compute_estimates();
        let card = self.child_card;
        for (id, node) in self.nodes.iter_mut().enumerate() {
            node.sample_count += 1;
            let w = 1.0 / node.sample_count as f64;
            for k in 0..card {
                let cur = self.phi[id * card + k];
                node.estimate[k] += (cur - node.estimate[k]) * w;
            }
        }
    }

    pub fn sample_count(&self) -> u64 {
        self.nodes[0].sample_count
    }

    /// Deepest node along `context` (`[y, parent values...]`), backing off at
    /// the first unobserved or unknown branch.
    pub fn deepest(&self, context: &[u32]) -> usize {
        let mut id = 0usize;
        for (level, &v) in context.iter().enumerate().take(self.branch_cards.len()) {
            let node = &self.nodes[id];
            if v == UNKNOWN || v as usize >= node.children.len() {
                break;
            }
            match node.children[v as usize] {
                NO_CHILD => break,
                c => id = c as usize,
            }
            debug_assert_eq!(self.nodes[id].depth, level + 1);
        }
        id
    }

    /// Estimated distribution of the child at the deepest node on the path.
    /// Uses the averaged estimate once sampling has recorded any iteration,
    /// otherwise a single-shot estimate from the current state.
    pub fn lookup_distribution(&self, context: &[u32]) -> Vec<f64> {
        let id = self.deepest(context);
        if self.nodes[id].sample_count > 0 {
            return self.nodes[id].estimate.clone();
        }
        let mut tree = self.clone();
        tree.compute_estimates();
        tree.phi[id * self.child_card..(id + 1) * self.child_card].to_vec()
    }

    pub fn lookup_estimate(&self, context: &[u32], child_value: u32) -> Result<f64> {
        if child_value as usize >= self.child_card {
            return Err(Error::invalid(format!(
                "child value {child_value} out of range (cardinality {})",
                self.child_card
            )));
        }
        Ok(self.lookup_distribution(context)[child_value as usize])
    }

    /// Checks every structural invariant of the collapsed statistics.
    pub fn audit(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            let fail = |msg: String| Err(Error::Invariant(format!("attribute {} node {id}: {msg}", self.child)));
            if node.n.iter().sum::<u64>() != node.n_dot {
                return fail("n_dot out of sync".into());
            }
            if node.t.iter().sum::<u64>() != node.t_dot {
                return fail("t_dot out of sync".into());
            }
            for k in 0..self.child_card {
                let (n, t) = (node.n[k], node.t[k]);
                if t > n || (n >= 1 && t == 0) || (n <= 1 && t != n) {
                    return fail(format!("t[{k}] = {t} with n[{k}] = {n}"));
                }
            }
            if !node.is_leaf() {
                for k in 0..self.child_card {
                    let sum: u64 = node
                        .children
                        .iter()
                        .filter(|&&c| c != NO_CHILD)
                        .map(|&c| self.nodes[c as usize].t[k])
                        .sum();
                    if sum != node.n[k] {
                        return fail(format!("n[{k}] = {} but children pass up {sum}", node.n[k]));
                    }
                }
            }
        }
        Ok(())
    }
}
