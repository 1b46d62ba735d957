//! Integer frequency tables gathered in streaming passes.

use crate::data::{Instance, Schema, UNKNOWN};
use crate::error::{Error, Result};

/// Joint frequencies of `(X_i, Y)` for every attribute and, optionally, of
/// `(X_i, X_j, Y)` for every pair `i < j`. One pass fills it; structure
/// learners only read it.
#[derive(Clone, Debug, PartialEq)]
pub struct CountCube {
    cards: Vec<usize>,
    n_classes: usize,
    total: u64,
    class: Vec<u64>,
    single: Vec<Vec<u64>>,
    pairs: Vec<Vec<u64>>,
    with_pairs: bool,
}

impl CountCube {
    pub fn new(schema: &Schema, with_pairs: bool) -> Self {
        let cards = schema.cardinalities();
        let n_classes = schema.n_classes();
        let n = cards.len();
        let single = cards.iter().map(|&c| vec![0; c * n_classes]).collect();
        let mut pairs = Vec::new();
        if with_pairs {
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push(vec![0; cards[i] * cards[j] * n_classes]);
                }
            }
        }
        CountCube {
            cards,
            n_classes,
            total: 0,
            class: vec![0; n_classes],
            single,
            pairs,
            with_pairs,
        }
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        let n = self.cards.len();
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    }

    pub fn add(&mut self, inst: &Instance) {
        let y = inst.y as usize;
        let nc = self.n_classes;
        self.total += 1;
        self.class[y] += 1;
        for (i, &v) in inst.x.iter().enumerate() {
            self.single[i][v as usize * nc + y] += 1;
        }
        if self.with_pairs {
            let mut p = 0;
            for i in 0..self.cards.len() {
                let vi = inst.x[i] as usize;
                for j in i + 1..self.cards.len() {
                    let vj = inst.x[j] as usize;
                    self.pairs[p][(vi * self.cards[j] + vj) * nc + y] += 1;
                    p += 1;
                }
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class
    }

    pub fn n_attributes(&self) -> usize {
        self.cards.len()
    }

    pub fn has_pairs(&self) -> bool {
        self.with_pairs
    }

    /// `(X_i, Y)` table laid out as `[v * |Y| + y]`.
    pub fn attribute_class(&self, i: usize) -> &[u64] {
        &self.single[i]
    }

    /// `(X_i, X_j, Y)` table laid out as `[(vi * |X_j| + vj) * |Y| + y]`, for
    /// any `i != j`.
    pub fn pair_class(&self, i: usize, j: usize) -> Vec<u64> {
        assert!(self.with_pairs, "cube was built without pair tables");
        assert_ne!(i, j);
        if i < j {
            return self.pairs[self.pair_index(i, j)].clone();
        }
        let src = &self.pairs[self.pair_index(j, i)];
        let (ci, cj, nc) = (self.cards[i], self.cards[j], self.n_classes);
        let mut out = vec![0; src.len()];
        for vj in 0..cj {
            for vi in 0..ci {
                for y in 0..nc {
                    out[(vi * cj + vj) * nc + y] = src[(vj * ci + vi) * nc + y];
                }
            }
        }
        out
    }

    /// `I(X_i; Y)` in nats.
    pub fn mi_with_class(&self, i: usize) -> Result<f64> {
        mutual_information(&self.single[i], self.cards[i], self.n_classes)
    }

    /// `I(X_i; X_j | Y)` in nats.
    pub fn cmi(&self, i: usize, j: usize) -> Result<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        conditional_mutual_information(
            &self.pairs[self.pair_index(a, b)],
            [self.cards[a], self.cards[b], self.n_classes],
        )
    }
}

/// Plug-in mutual information (nats) of a `rows x cols` table in row-major
/// order.
pub fn mutual_information(counts: &[u64], rows: usize, cols: usize) -> Result<f64> {
    if counts.len() != rows * cols {
        return Err(Error::invalid(format!(
            "table of {} cells is not {rows}x{cols}",
            counts.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("mutual information of an all-zero table"));
    }
    let mut row_sum = vec![0u64; rows];
    let mut col_sum = vec![0u64; cols];
    for r in 0..rows {
        for c in 0..cols {
            row_sum[r] += counts[r * cols + c];
            col_sum[c] += counts[r * cols + c];
        }
    }
    let n = total as f64;
    let mut mi = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let nrc = counts[r * cols + c];
            if nrc > 0 {
                let nrc = nrc as f64;
                mi += nrc / n * (nrc * n / (row_sum[r] as f64 * col_sum[c] as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Plug-in conditional mutual information `I(A; B | C)` (nats) of a table
/// indexed `[(a * |B| + b) * |C| + c]`.
pub fn conditional_mutual_information(counts: &[u64], dims: [usize; 3]) -> Result<f64> {
    let [da, db, dc] = dims;
    if counts.len() != da * db * dc {
        return Err(Error::invalid(format!(
            "table of {} cells is not {da}x{db}x{dc}",
            counts.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("conditional mutual information of an all-zero table"));
    }
    let mut ac = vec![0u64; da * dc];
    let mut bc = vec![0u64; db * dc];
    let mut c_sum = vec![0u64; dc];
    for a in 0..da {
        for b in 0..db {
            for c in 0..dc {
                let v = counts[(a * db + b) * dc + c];
                ac[a * dc + c] += v;
                bc[b * dc + c] += v;
                c_sum[c] += v;
            }
        }
    }
    let n = total as f64;
    let mut cmi = 0.0;
    for a in 0..da {
        for b in 0..db {
            for c in 0..dc {
                let v = counts[(a * db + b) * dc + c];
                if v > 0 {
                    let v = v as f64;
                    let ratio = v * c_sum[c] as f64 / (ac[a * dc + c] as f64 * bc[b * dc + c] as f64);
                    cmi += v / n * ratio.ln();
                }
            }
        }
    }
    Ok(cmi.max(0.0))
}

/// Marker for an absent child in [`CountNode::children`].
pub const NO_CHILD: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountNode {
    /// Frequencies of the child attribute's values in this context.
    pub counts: Vec<u64>,
    /// Dense branch table indexed by the next branching value, or empty for
    /// the deepest level.
    pub children: Vec<u32>,
    pub depth: usize,
}

impl CountNode {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Prefix tree of child-value frequencies for one attribute, branching on
/// the class and then on each parent in order. Every level keeps its own
/// counts, so any context prefix can be read without another pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTree {
    /// Attribute whose values are counted.
    pub child: usize,
    pub child_card: usize,
    /// Attribute indices branched on below the class level.
    pub parents: Vec<usize>,
    /// Cardinalities of the branching variables: `|Y|`, then each parent.
    pub branch_cards: Vec<usize>,
    pub nodes: Vec<CountNode>,
}

impl CountTree {
    pub fn new(schema: &Schema, child: usize, parents: &[usize]) -> Result<Self> {
        if parents.contains(&child) {
            return Err(Error::invalid(format!("attribute {child} cannot be its own parent")));
        }
        if let Some(&p) = parents.iter().find(|&&p| p >= schema.n_attributes()) {
            return Err(Error::invalid(format!("parent {p} out of range")));
        }
        let mut branch_cards = vec![schema.n_classes()];
        branch_cards.extend(parents.iter().map(|&p| schema.cardinality(p)));
        let child_card = schema.cardinality(child);
        Ok(CountTree {
            child,
            child_card,
            parents: parents.to_vec(),
            branch_cards,
            nodes: vec![Self::node(child_card, 0, parents.len() + 1, schema.n_classes())],
        })
    }

    fn node(child_card: usize, depth: usize, levels: usize, branch: usize) -> CountNode {
        CountNode {
            counts: vec![0; child_card],
            children: if depth < levels {
                vec![NO_CHILD; branch]
            } else {
                Vec::new()
            },
            depth,
        }
    }

    /// Number of branching levels below the root.
    pub fn levels(&self) -> usize {
        self.branch_cards.len()
    }

    fn context_value(&self, inst: &Instance, level: usize) -> u32 {
        if level == 0 {
            inst.y
        } else {
            inst.x[self.parents[level - 1]]
        }
    }

    /// Adds (`delta = 1`) or removes (`delta = -1`) one instance.
    pub fn update(&mut self, inst: &Instance, delta: i64) {
        let x = inst.x[self.child] as usize;
        let mut id = 0usize;
        self.bump(id, x, delta);
        for level in 0..self.levels() {
            let v = self.context_value(inst, level) as usize;
            let next = self.nodes[id].children[v];
            id = if next == NO_CHILD {
                debug_assert!(delta > 0, "removing an instance that was never added");
                let new = self.nodes.len();
                let branch = self.branch_cards.get(level + 1).copied().unwrap_or(0);
                self.nodes
                    .push(Self::node(self.child_card, level + 1, self.levels(), branch));
                self.nodes[id].children[v] = new as u32;
                new
            } else {
                next as usize
            };
            self.bump(id, x, delta);
        }
    }

    fn bump(&mut self, id: usize, x: usize, delta: i64) {
        let c = &mut self.nodes[id].counts[x];
        *c = c.checked_add_signed(delta).expect("count underflow");
    }

    pub fn add(&mut self, inst: &Instance) {
        self.update(inst, 1);
    }

    /// Node ids along the context path, root first, stopping at the first
    /// missing branch or [`UNKNOWN`] value. `context` is `[y, parent values...]`.
    pub fn path(&self, context: &[u32]) -> Vec<usize> {
        let mut out = vec![0];
        let mut id = 0usize;
        for (level, &v) in context.iter().enumerate().take(self.levels()) {
            if v == UNKNOWN || v as usize >= self.branch_cards[level] {
                break;
            }
            let next = self.nodes[id].children[v as usize];
            if next == NO_CHILD {
                break;
            }
            id = next as usize;
            out.push(id);
        }
        out
    }

    /// Copy restricted to the class level plus the first `k` parents.
    pub fn truncated(&self, k: usize) -> CountTree {
        let k = k.min(self.parents.len());
        let levels = k + 1;
        let mut out = CountTree {
            child: self.child,
            child_card: self.child_card,
            parents: self.parents[..k].to_vec(),
            branch_cards: self.branch_cards[..levels].to_vec(),
            nodes: Vec::new(),
        };
        let mut stack = vec![(0usize, None::<(usize, usize)>)];
        while let Some((src, link)) = stack.pop() {
            let node = &self.nodes[src];
            let id = out.nodes.len();
            let children = if node.depth < levels {
                vec![NO_CHILD; self.branch_cards[node.depth]]
            } else {
                Vec::new()
            };
            out.nodes.push(CountNode {
                counts: node.counts.clone(),
                children,
                depth: node.depth,
            });
            if let Some((parent, v)) = link {
                out.nodes[parent].children[v] = id as u32;
            }
            if node.depth < levels {
                for (v, &c) in node.children.iter().enumerate().rev() {
                    if c != NO_CHILD {
                        stack.push((c as usize, Some((id, v))));
                    }
                }
            }
        }
        out
    }
}

/// Count trees for every attribute plus class totals, filled in one pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountForest {
    pub class: Vec<u64>,
    pub trees: Vec<Option<CountTree>>,
}

impl CountForest {
    /// `parents[i] = None` leaves attribute `i` uncounted.
    pub fn new(schema: &Schema, parents: &[Option<Vec<usize>>]) -> Result<Self> {
        let trees = parents
            .iter()
            .enumerate()
            .map(|(i, p)| p.as_ref().map(|p| CountTree::new(schema, i, p)).transpose())
            .collect::<Result<_>>()?;
        Ok(CountForest {
            class: vec![0; schema.n_classes()],
            trees,
        })
    }

    pub fn update(&mut self, inst: &Instance, delta: i64) {
        let c = &mut self.class[inst.y as usize];
        *c = c.checked_add_signed(delta).expect("class count underflow");
        for tree in self.trees.iter_mut().flatten() {
            tree.update(inst, delta);
        }
    }

    pub fn add(&mut self, inst: &Instance) {
        self.update(inst, 1);
    }

    pub fn total(&self) -> u64 {
        self.class.iter().sum()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().flatten().map(|t| t.nodes.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::schema;

    #[test]
    fn mi_examples() {
        assert!(mutual_information(&[25, 25, 25, 25], 2, 2).unwrap().abs() < 1e-15);
        let d = mutual_information(&[50, 0, 0, 50], 2, 2).unwrap();
        assert!((d - 2f64.ln()).abs() < 1e-12);
        let want = {
            let t = [[30.0, 10.0], [10.0, 50.0]];
            let n = 100.0;
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    let p: f64 = t[r][c] / n;
                    let pr = (t[r][0] + t[r][1]) / n;
                    let pc = (t[0][c] + t[1][c]) / n;
                    s += p * (p / (pr * pc)).ln();
                }
            }
            s
        };
        let got = mutual_information(&[30, 10, 10, 50], 2, 2).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(mutual_information(&[0, 0], 1, 2).is_err());
    }

    #[test]
    fn cmi_examples() {
        // X_j = X_i, Y independent and uniform.
        let mut t = vec![0u64; 8];
        for a in 0..2 {
            for c in 0..2 {
                t[(a * 2 + a) * 2 + c] = 10;
            }
        }
        let v = conditional_mutual_information(&t, [2, 2, 2]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let indep = vec![5u64; 8];
        assert!(conditional_mutual_information(&indep, [2, 2, 2]).unwrap() < 1e-15);
        assert!(conditional_mutual_information(&[0; 8], [2, 2, 2]).is_err());
    }

    #[test]
    fn cube_marginals_consistent() {
        let s = schema(&[2, 3, 2], 2);
        let mut cube = CountCube::new(&s, true);
        let rows = [
            Instance::new(vec![0, 2, 1], 0),
            Instance::new(vec![1, 0, 1], 1),
            Instance::new(vec![1, 2, 0], 1),
            Instance::new(vec![0, 1, 0], 0),
        ];
        for r in &rows {
            cube.add(r);
        }
        // Summing X_j out of (X_i, X_j, Y) gives (X_i, Y).
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let t = cube.pair_class(i, j);
                let cj = s.cardinality(j);
                for vi in 0..s.cardinality(i) {
                    for y in 0..2 {
                        let sum: u64 = (0..cj).map(|vj| t[(vi * cj + vj) * 2 + y]).sum();
                        assert_eq!(sum, cube.attribute_class(i)[vi * 2 + y]);
                    }
                }
            }
        }
        assert_eq!(cube.class_counts(), &[2, 2]);
        assert!((cube.cmi(0, 2).unwrap() - cube.cmi(2, 0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn count_tree_levels_and_truncation() {
        let s = schema(&[2, 2, 3], 2);
        let mut tree = CountTree::new(&s, 0, &[2, 1]).unwrap();
        let rows = [
            Instance::new(vec![0, 1, 2], 0),
            Instance::new(vec![1, 1, 2], 0),
            Instance::new(vec![1, 0, 0], 1),
        ];
        for r in &rows {
            tree.add(r);
        }
        assert_eq!(tree.nodes[0].counts, vec![1, 2]);
        let path = tree.path(&[0, 2, 1]);
        assert_eq!(path.len(), 4);
        assert_eq!(tree.nodes[path[3]].counts, vec![1, 1]);
        assert_eq!(tree.path(&[1, 2, 0]).len(), 2);
        assert_eq!(tree.path(&[0, UNKNOWN, 1]).len(), 2);

        let short = tree.truncated(1);
        assert_eq!(short.levels(), 2);
        assert_eq!(short.nodes.len(), 1 + 2 + 2);
        assert!(short
            .nodes
            .iter()
            .filter(|n| n.depth == 2)
            .all(|n| n.children.is_empty()));
        assert_eq!(short.nodes[short.path(&[0, 2])[2]].counts, vec![1, 1]);

        for r in &rows {
            tree.update(r, -1);
        }
        assert!(tree.nodes.iter().all(|n| n.total() == 0));
    }

    #[test]
    fn self_parent_rejected() {
        let s = schema(&[2, 2], 2);
        assert!(CountTree::new(&s, 1, &[0, 1]).is_err());
    }
}
