//! Structure learning: naive Bayes, TAN, kDB and selective kDB.
//!
//! Every learner works from a [`CountCube`] filled in a single pass, so the
//! pass budget of a pipeline is fixed by the structure alone.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{CountCube, CountForest, CountTree};
use crate::data::{Dataset, Instance, Schema};
use crate::error::{Error, Result};

/// Per-attribute parent lists. The class is an implicit first parent of
/// every selected attribute and is not stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnStructure {
    /// `parents[i]` in selection order (most informative first).
    pub parents: Vec<Vec<usize>>,
    /// Topological order of the attributes: every parent precedes its child.
    pub order: Vec<usize>,
    /// Upper bound on attribute parents per attribute.
    pub k: usize,
    /// Attributes that take part in classification.
    pub selected: Vec<bool>,
}

impl BnStructure {
    /// Naive Bayes over `n` attributes.
    pub fn naive(n: usize) -> Self {
        BnStructure {
            parents: vec![Vec::new(); n],
            order: (0..n).collect(),
            k: 0,
            selected: vec![true; n],
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.parents.len()
    }

    /// Selected attributes in structure order.
    pub fn selected_attributes(&self) -> Vec<usize> {
        self.order.iter().copied().filter(|&i| self.selected[i]).collect()
    }

    /// Largest parent count actually used.
    pub fn k_used(&self) -> usize {
        self.parents.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Keeps the first `n_star` attributes of the order, each with at most
    /// its first `k_star` parents.
    pub fn restrict(&self, n_star: usize, k_star: usize) -> BnStructure {
        let mut out = self.clone();
        out.k = k_star;
        for (rank, &a) in self.order.iter().enumerate() {
            if rank < n_star && self.selected[a] {
                out.parents[a].truncate(k_star);
            } else {
                out.selected[a] = false;
                out.parents[a].clear();
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_attributes();
        let mut rank = vec![usize::MAX; n];
        for (r, &a) in self.order.iter().enumerate() {
            if a >= n || rank[a] != usize::MAX {
                return Err(Error::Invariant("order is not a permutation".into()));
            }
            rank[a] = r;
        }
        if self.order.len() != n || self.selected.len() != n {
            return Err(Error::Invariant("structure arrays disagree in length".into()));
        }
        for (a, ps) in self.parents.iter().enumerate() {
            if ps.len() > self.k {
                return Err(Error::Invariant(format!(
                    "attribute {a} has {} parents, limit {}",
                    ps.len(),
                    self.k
                )));
            }
            if !self.selected[a] && !ps.is_empty() {
                return Err(Error::Invariant(format!("unselected attribute {a} has parents")));
            }
            for &p in ps {
                if p >= n || !self.selected[p] || rank[p] >= rank[a] {
                    return Err(Error::Invariant(format!(
                        "parent {p} of attribute {a} does not precede it"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text form: `# order:` and `# k:` header lines, then one
    /// `i: parents...` line per attribute (`i: -` when unselected).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        writeln!(s, "# order: {}", join(&self.order)).unwrap();
        writeln!(s, "# k: {}", self.k).unwrap();
        for (i, ps) in self.parents.iter().enumerate() {
            if self.selected[i] {
                writeln!(s, "{i}: {}", join(ps)).unwrap();
            } else {
                writeln!(s, "{i}: -").unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            row: line + 1,
            msg: msg.to_string(),
        };
        let nums = |line: usize, s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(line, "expected an attribute index")))
                .collect()
        };
        let mut order = None;
        let mut k = None;
        let mut rows = Vec::new();
        for (line, raw) in text.lines().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("order:") {
                    order = Some(nums(line, v)?);
                } else if let Some(v) = rest.strip_prefix("k:") {
                    k = Some(v.trim().parse().map_err(|_| bad(line, "bad k"))?);
                }
                continue;
            }
            let (idx, ps) = raw.split_once(':').ok_or_else(|| bad(line, "expected 'i: parents'"))?;
            let idx: usize = idx.trim().parse().map_err(|_| bad(line, "bad attribute index"))?;
            if idx != rows.len() {
                return Err(bad(line, "attribute lines out of sequence"));
            }
            let ps = ps.trim();
            rows.push(if ps == "-" { None } else { Some(nums(line, ps)?) });
        }
        let n = rows.len();
        let selected = rows.iter().map(Option::is_some).collect();
        let parents: Vec<Vec<usize>> = rows.into_iter().map(Option::unwrap_or_default).collect();
        let s = BnStructure {
            k: k.unwrap_or_else(|| parents.iter().map(Vec::len).max().unwrap_or(0)),
            order: order.unwrap_or_else(|| (0..n).collect()),
            parents,
            selected,
        };
        s.validate()?;
        Ok(s)
    }
}

fn or_zero(v: Result<f64>, total: u64) -> Result<f64> {
    if total == 0 {
        Ok(0.0)
    } else {
        v
    }
}

/// Attributes sorted by descending `I(X_i; Y)`, ties by ascending index,
/// together with the scores.
pub fn mi_order(cube: &CountCube) -> Result<(Vec<usize>, Vec<f64>)> {
    let mi = (0..cube.n_attributes())
        .map(|i| or_zero(cube.mi_with_class(i), cube.total()))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..mi.len()).collect();
    order.sort_by(|&a, &b| mi[b].total_cmp(&mi[a]).then(a.cmp(&b)));
    Ok((order, mi))
}

/// Symmetric matrix of `I(X_i; X_j | Y)`.
pub fn cmi_matrix(cube: &CountCube) -> Result<Vec<Vec<f64>>> {
    let n = cube.n_attributes();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| or_zero(cube.cmi(i, j), cube.total()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (off, &v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

pub fn learn_nb(schema: &Schema) -> BnStructure {
    BnStructure::naive(schema.n_attributes())
}

fn fill_cube(dataset: &Dataset) -> Result<CountCube> {
    let mut cube = CountCube::new(dataset.schema(), true);
    dataset.for_each(|inst| cube.add(inst))?;
    Ok(cube)
}

/// Chow–Liu tree over `I(X_i; X_j | Y)` rooted at the attribute most
/// informative about the class. One streaming pass.
pub fn learn_tan(dataset: &Dataset) -> Result<BnStructure> {
    tan_from_cube(&fill_cube(dataset)?)
}

pub fn tan_from_cube(cube: &CountCube) -> Result<BnStructure> {
    let n = cube.n_attributes();
    if n == 0 {
        return Ok(BnStructure::naive(0));
    }
    let (mi_rank, _) = mi_order(cube)?;
    let w = cmi_matrix(cube)?;
    let root = mi_rank[0];
    let mut parents = vec![Vec::new(); n];
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut link = vec![root; n];
    let mut order = Vec::with_capacity(n);
    let mut next = root;
    // Prim's algorithm; insertion order is a topological order of the tree.
    for _ in 0..n {
        in_tree[next] = true;
        order.push(next);
        if next != root {
            parents[next].push(link[next]);
        }
        for j in 0..n {
            if !in_tree[j] && w[next][j] > best[j] {
                best[j] = w[next][j];
                link[j] = next;
            }
        }
        let mut pick = None;
        for j in 0..n {
            if !in_tree[j] && pick.is_none_or(|p: usize| best[j] > best[p]) {
                pick = Some(j);
            }
        }
        match pick {
            Some(j) => next = j,
            None => break,
        }
    }
    Ok(BnStructure {
        parents,
        order,
        k: 1,
        selected: vec![true; n],
    })
}

/// k-dependence Bayesian classifier. One streaming pass.
pub fn learn_kdb(dataset: &Dataset, k: usize) -> Result<BnStructure> {
    kdb_from_cube(&fill_cube(dataset)?, k)
}

pub fn kdb_from_cube(cube: &CountCube, k: usize) -> Result<BnStructure> {
    let n = cube.n_attributes();
    let (order, _) = mi_order(cube)?;
    if k == 0 {
        return Ok(BnStructure {
            parents: vec![Vec::new(); n],
            order,
            k: 0,
            selected: vec![true; n],
        });
    }
    let w = cmi_matrix(cube)?;
    let mut parents = vec![Vec::new(); n];
    for (rank, &a) in order.iter().enumerate() {
        let mut cands: Vec<usize> = order[..rank].to_vec();
        cands.sort_by(|&p, &q| w[a][q].total_cmp(&w[a][p]).then(p.cmp(&q)));
        cands.truncate(k);
        parents[a] = cands;
    }
    Ok(BnStructure {
        parents,
        order,
        k,
        selected: vec![true; n],
    })
}

/// Outcome of the selective-kDB search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkdbSelection {
    pub n_star: usize,
    pub k_star: usize,
    /// Leave-one-out RMSE indexed `[k][n - 1]`.
    pub rmse: Vec<Vec<f64>>,
}

/// Selective kDB: kDB(`k_max`) order and parents, then the best
/// `(n*, k*)` by leave-one-out RMSE. Three streaming passes.
pub fn learn_skdb(dataset: &Dataset, k_max: usize) -> Result<(BnStructure, SkdbSelection)> {
    let full = learn_kdb(dataset, k_max)?;
    let parents: Vec<Option<Vec<usize>>> = full.parents.iter().cloned().map(Some).collect();
    let mut forest = CountForest::new(dataset.schema(), &parents)?;
    dataset.for_each(|inst| forest.add(inst))?;
    let sel = skdb_select(dataset, &full, &forest)?;
    Ok((full.restrict(sel.n_star, sel.k_star), sel))
}

/// Leave-one-out m-estimate (`m = 1`) of `P(x | context)` read from `tree`,
/// with back-off past contexts that are empty once the instance is removed.
/// `own` says whether the instance under test lies on this context path.
fn loo_log_prob(tree: &CountTree, path: &[usize], depth: usize, x: usize, own: bool) -> f64 {
    let card = tree.child_card as f64;
    let mut d = depth.min(path.len() - 1);
    loop {
        let node = &tree.nodes[path[d]];
        let removed = u64::from(d == 0 || own);
        let total = node.total() - removed;
        if total >= 1 || d == 0 {
            let c = (node.counts[x] - removed) as f64;
            return ((c + 1.0 / card) / (total as f64 + 1.0)).ln();
        }
        d -= 1;
    }
}

/// The selection pass of selective kDB.
///
/// Every instance is scored against counts that include it, with its own
/// contribution subtracted, for every prefix of the attribute order and
/// every parent limit up to `full.k`.
pub fn skdb_select(dataset: &Dataset, full: &BnStructure, forest: &CountForest) -> Result<SkdbSelection> {
    let order = full.selected_attributes();
    let n = order.len();
    let k_max = full.k;
    let n_classes = forest.class.len();
    let total = forest.total();
    let mut sse = vec![vec![0.0f64; n]; k_max + 1];
    let mut context = Vec::new();
    let mut paths: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    let mut scores = vec![vec![0.0f64; n_classes]; k_max + 1];
    let mut visit = |inst: &Instance| {
        let y = inst.y as usize;
        for (c, s) in scores.iter_mut().flat_map(|row| row.iter_mut().enumerate()) {
            let nc = forest.class[c] - u64::from(c == y);
            *s = ((nc as f64 + 1.0 / n_classes as f64) / (total as f64)).ln();
        }
        for (r, &a) in order.iter().enumerate() {
            let tree = forest.trees[a].as_ref().expect("selected attributes are counted");
            let x = inst.x[a] as usize;
            for (c, path) in paths.iter_mut().enumerate() {
                context.clear();
                context.push(c as u32);
                context.extend(tree.parents.iter().map(|&p| inst.x[p]));
                *path = tree.path(&context);
            }
            let own_parents = tree.parents.len();
            for (kk, row) in scores.iter_mut().enumerate() {
                let depth = 1 + kk.min(own_parents);
                for (c, s) in row.iter_mut().enumerate() {
                    *s += loo_log_prob(tree, &paths[c], depth, x, c == y);
                }
                sse[kk][r] += (1.0 - softmax_at(row, y)).powi(2);
            }
        }
    };
    if total > 0 {
        dataset.for_each(&mut visit)?;
    }
    let rmse: Vec<Vec<f64>> = sse
        .iter()
        .map(|row| row.iter().map(|s| (s / total.max(1) as f64).sqrt()).collect())
        .collect();
    let mut best = (f64::INFINITY, 0, 0);
    for (kk, row) in rmse.iter().enumerate() {
        for (r, &v) in row.iter().enumerate() {
            if v < best.0 {
                best = (v, kk, r + 1);
            }
        }
    }
    Ok(SkdbSelection {
        n_star: best.2,
        k_star: best.1,
        rmse,
    })
}

/// `exp(scores[i]) / sum(exp(scores))` computed stably.
pub(crate) fn softmax_at(scores: &[f64], i: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 1.0 / scores.len() as f64;
    }
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    (scores[i] - max).exp() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::schema;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(n: usize, rows: usize, seed: u64) -> (CountCube, Vec<Instance>, Schema) {
        let s = schema(&vec![3; n], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Instance> = (0..rows)
            .map(|_| {
                let y = rng.random_range(0..2);
                let mut x: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
                // Some structure so the weights are not all ties.
                if n > 1 && rng.random_bool(0.6) {
                    x[1] = x[0];
                }
                if rng.random_bool(0.7) {
                    x[0] = y;
                }
                Instance::new(x, y)
            })
            .collect();
        let mut cube = CountCube::new(&s, true);
        for inst in &data {
            cube.add(inst);
        }
        (cube, data, s)
    }

    #[test]
    fn nb_has_no_parents() {
        let s = learn_nb(&schema(&[2, 2, 2, 2], 2));
        assert!(s.parents.iter().all(Vec::is_empty));
        s.validate().unwrap();
        let empty = learn_nb(&schema(&[], 2));
        assert_eq!(empty.n_attributes(), 0);
        empty.validate().unwrap();
    }

    #[test]
    fn kdb_zero_is_nb_and_ranks_cap_parents() {
        let (cube, _, _) = random_cube(5, 300, 1);
        let k0 = kdb_from_cube(&cube, 0).unwrap();
        assert!(k0.parents.iter().all(Vec::is_empty));
        let k9 = kdb_from_cube(&cube, 9).unwrap();
        for (rank, &a) in k9.order.iter().enumerate() {
            assert_eq!(k9.parents[a].len(), rank);
        }
        k9.validate().unwrap();
    }

    #[test]
    fn tan_single_attribute_is_nb() {
        let (cube, _, _) = random_cube(1, 50, 2);
        let t = tan_from_cube(&cube).unwrap();
        assert_eq!(t.parents, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn tan_root_has_highest_mi() {
        let (cube, _, _) = random_cube(4, 400, 3);
        let t = tan_from_cube(&cube).unwrap();
        let (rank, _) = mi_order(&cube).unwrap();
        assert_eq!(t.order[0], rank[0]);
        assert!(t.parents[rank[0]].is_empty());
        for &a in &t.order[1..] {
            assert_eq!(t.parents[a].len(), 1);
        }
        t.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let (cube, _, _) = random_cube(5, 300, 4);
        let s = kdb_from_cube(&cube, 2).unwrap().restrict(3, 1);
        let text = s.to_text();
        assert!(text.lines().any(|l| l.ends_with(": -")));
        assert_eq!(BnStructure::from_text(&text).unwrap(), s);
        assert!(BnStructure::from_text("0: 1\n1:\n").is_err());
    }

    #[test]
    fn restrict_keeps_prefix() {
        let (cube, _, _) = random_cube(5, 300, 5);
        let full = kdb_from_cube(&cube, 3).unwrap();
        let r = full.restrict(2, 1);
        assert_eq!(r.selected_attributes(), full.order[..2].to_vec());
        r.validate().unwrap();
    }

    #[test]
    fn softmax_handles_all_neg_inf() {
        assert_eq!(softmax_at(&[f64::NEG_INFINITY; 4], 2), 0.25);
        assert!((softmax_at(&[0.0, 2f64.ln()], 1) - 2.0 / 3.0).abs() < 1e-15);
    }
}
