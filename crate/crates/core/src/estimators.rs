//! Frequency-based estimators: maximum likelihood and the m-estimate with
//! back-off, plus holdout selection of `m`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::counts::{CountForest, CountTree};
use crate::data::{Dataset, Instance, UNKNOWN};
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::structure::{softmax_at, BnStructure};

pub const DEFAULT_M_GRID: [f64; 6] = [0.0, 0.05, 0.2, 1.0, 5.0, 20.0];

#[derive(Clone, Debug, PartialEq)]
pub struct MEstimateConfig {
    pub m_grid: Vec<f64>,
    /// Cap on the holdout size.
    pub max_holdout: usize,
    /// Holdout loss minimised by [`select_m`].
    pub metric: Metric,
}

impl Default for MEstimateConfig {
    fn default() -> Self {
        MEstimateConfig {
            m_grid: DEFAULT_M_GRID.to_vec(),
            max_holdout: 5000,
            metric: Metric::Rmse,
        }
    }
}

impl MEstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() {
            return Err(Error::invalid("m grid is empty"));
        }
        if let Some(m) = self.m_grid.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(Error::invalid(format!("m = {m} is not a nonnegative number")));
        }
        Ok(())
    }

    /// `min(N / 10, max_holdout)`, at least one instance.
    pub fn holdout_size(&self, n: usize) -> usize {
        (n / 10).min(self.max_holdout).max(1)
    }
}

/// Relative frequencies.
pub fn mle_estimate(counts: &[u64]) -> Result<Vec<f64>> {
    m_estimate(counts, 0.0)
}

/// `(counts[k] + m / |X|) / (total + m)`.
pub fn m_estimate(counts: &[u64], m: f64) -> Result<Vec<f64>> {
    if m.is_nan() || m < 0.0 {
        return Err(Error::invalid(format!("m = {m} must be nonnegative")));
    }
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + m;
    if counts.is_empty() || denom <= 0.0 {
        return Err(Error::invalid("no counts to estimate from"));
    }
    let prior = m / counts.len() as f64;
    Ok(counts.iter().map(|&c| (c as f64 + prior) / denom).collect())
}

/// Counts at the deepest context along `context` (`[y, parent values...]`)
/// holding at least one instance, and the number of context variables used.
pub fn backoff_lookup<'a>(tree: &'a CountTree, context: &[u32]) -> Result<(&'a [u64], usize)> {
    let path = tree.path(context);
    for (depth, &id) in path.iter().enumerate().rev() {
        let node = &tree.nodes[id];
        if node.total() >= 1 {
            return Ok((&node.counts, depth));
        }
    }
    Err(Error::invalid(format!("attribute {} has no counts at all", tree.child)))
}

fn class_context(tree: &CountTree, inst: &Instance, y: u32, buf: &mut Vec<u32>) {
    buf.clear();
    buf.push(y);
    buf.extend(tree.parents.iter().map(|&p| inst.x[p]));
}

/// Class posterior from raw counts under the m-estimate, backing off past
/// empty contexts.
pub fn m_posterior(forest: &CountForest, structure: &BnStructure, inst: &Instance, m: f64) -> Vec<f64> {
    let n_classes = forest.class.len();
    let mut scores: Vec<f64> = match m_estimate(&forest.class, m) {
        Ok(p) => p.iter().map(|p| p.ln()).collect(),
        Err(_) => vec![0.0; n_classes],
    };
    let mut ctx = Vec::new();
    for a in structure.selected_attributes() {
        let x = inst.x[a];
        if x == UNKNOWN {
            continue;
        }
        let Some(tree) = forest.trees[a].as_ref() else {
            continue;
        };
        for (y, s) in scores.iter_mut().enumerate() {
            class_context(tree, inst, y as u32, &mut ctx);
            if let Ok((counts, _)) = backoff_lookup(tree, &ctx) {
                let total: u64 = counts.iter().sum();
                let card = counts.len() as f64;
                *s += ((counts[x as usize] as f64 + m / card) / (total as f64 + m)).ln();
            }
        }
    }
    (0..n_classes).map(|y| softmax_at(&scores, y)).collect()
}

/// Decides, while streaming, which instances form a class-stratified holdout
/// of a fixed size. Class totals must be known up front.
#[derive(Clone, Debug)]
pub struct HoldoutPlan {
    chosen: Vec<Vec<bool>>,
    seen: Vec<usize>,
}

impl HoldoutPlan {
    pub fn new(class_counts: &[u64], size: usize, seed: u64) -> Self {
        let total: u64 = class_counts.iter().sum();
        let size = size.min(total as usize);
        let mut quota: Vec<usize> = vec![0; class_counts.len()];
        if total > 0 {
            let exact: Vec<f64> = class_counts
                .iter()
                .map(|&c| size as f64 * c as f64 / total as f64)
                .collect();
            for (q, e) in quota.iter_mut().zip(&exact) {
                *q = e.floor() as usize;
            }
            let mut rest: Vec<usize> = (0..class_counts.len()).collect();
            rest.sort_by(|&a, &b| {
                (exact[b] - exact[b].floor())
                    .total_cmp(&(exact[a] - exact[a].floor()))
                    .then(a.cmp(&b))
            });
            let mut missing = size - quota.iter().sum::<usize>();
            for &c in rest.iter().cycle().take(rest.len() * 2) {
                if missing == 0 {
                    break;
                }
                if (quota[c] as u64) < class_counts[c] {
                    quota[c] += 1;
                    missing -= 1;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = class_counts
            .iter()
            .zip(&quota)
            .map(|(&n, &q)| {
                let mut mask = vec![false; n as usize];
                for i in sample(&mut rng, n as usize, q).iter() {
                    mask[i] = true;
                }
                mask
            })
            .collect();
        HoldoutPlan {
            chosen,
            seen: vec![0; class_counts.len()],
        }
    }

    /// Whether the next instance of class `y` in stream order is held out.
    pub fn next(&mut self, y: u32) -> bool {
        let y = y as usize;
        let i = self.seen[y];
        self.seen[y] += 1;
        self.chosen[y].get(i).copied().unwrap_or(false)
    }
}

fn holdout_loss(forest: &CountForest, structure: &BnStructure, holdout: &[Instance], m: f64, metric: Metric) -> f64 {
    let posts: Vec<Vec<f64>> = holdout
        .iter()
        .map(|inst| m_posterior(forest, structure, inst, m))
        .collect();
    let truth: Vec<u32> = holdout.iter().map(|i| i.y).collect();
    metric.score(&posts, &truth).unwrap_or(f64::INFINITY)
}

/// Holdout loss of every grid value, computed with the holdout's own counts
/// temporarily removed from `forest`. Returns the chosen `m` (smallest among
/// ties) and the losses in grid order.
pub fn select_m_from_counts(
    forest: &mut CountForest,
    holdout: &[Instance],
    structure: &BnStructure,
    config: &MEstimateConfig,
) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    if holdout.is_empty() || config.m_grid.len() == 1 {
        return Ok((config.m_grid[0], vec![f64::NAN; config.m_grid.len()]));
    }
    for inst in holdout {
        forest.update(inst, -1);
    }
    let losses: Vec<f64> = {
        let forest = &*forest;
        config
            .m_grid
            .par_iter()
            .map(|&m| holdout_loss(forest, structure, holdout, m, config.metric))
            .collect()
    };
    for inst in holdout {
        forest.update(inst, 1);
    }
    let mut best = 0;
    for i in 1..losses.len() {
        let (l, b) = (losses[i], losses[best]);
        if l < b || (l == b && config.m_grid[i] < config.m_grid[best]) {
            best = i;
        }
    }
    Ok((config.m_grid[best], losses))
}

/// Chooses `m` from the grid on a stratified holdout of `dataset`, training
/// counts for `structure` on the remainder. One streaming pass.
pub fn select_m(dataset: &Dataset, structure: &BnStructure, config: &MEstimateConfig, seed: u64) -> Result<f64> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::invalid("holdout selection needs at least 2 instances"));
    }
    let parents: Vec<Option<Vec<usize>>> = (0..structure.n_attributes())
        .map(|a| structure.selected[a].then(|| structure.parents[a].clone()))
        .collect();
    let mut forest = CountForest::new(dataset.schema(), &parents)?;
    let mut plan = HoldoutPlan::new(dataset.class_counts(), config.holdout_size(dataset.len()), seed);
    let mut holdout = Vec::new();
    dataset.for_each(|inst| {
        forest.add(inst);
        if plan.next(inst.y) {
            holdout.push(inst.clone());
        }
    })?;
    dataset.stats().note_buffered(holdout.len());
    Ok(select_m_from_counts(&mut forest, &holdout, structure, config)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::schema;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn mle_examples() {
        assert!(close(&mle_estimate(&[20, 5]).unwrap(), &[0.8, 0.2], 1e-15));
        assert!(close(&mle_estimate(&[2, 0]).unwrap(), &[1.0, 0.0], 1e-15));
        assert!(close(&mle_estimate(&[7]).unwrap(), &[1.0], 1e-15));
        assert!(mle_estimate(&[0, 0]).is_err());
    }

    #[test]
    fn m_estimate_examples() {
        assert!(close(
            &m_estimate(&[2, 0], 1.0).unwrap(),
            &[2.5 / 3.0, 0.5 / 3.0],
            1e-15
        ));
        assert!(close(
            &m_estimate(&[20, 5], 1.0).unwrap(),
            &[20.5 / 26.0, 5.5 / 26.0],
            1e-15
        ));
        assert_eq!(m_estimate(&[3, 1, 0], 0.0).unwrap(), mle_estimate(&[3, 1, 0]).unwrap());
        assert!(m_estimate(&[0, 0], 0.0).is_err());
        assert!(close(&m_estimate(&[0, 0], 2.0).unwrap(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn backoff_drops_last_parent() {
        let s = schema(&[2, 2, 2], 2);
        let mut tree = CountTree::new(&s, 0, &[1, 2]).unwrap();
        tree.add(&Instance::new(vec![1, 0, 0], 0));
        tree.add(&Instance::new(vec![0, 0, 1], 0));
        tree.add(&Instance::new(vec![0, 1, 1], 1));
        let (c, d) = backoff_lookup(&tree, &[0, 0, 1]).unwrap();
        assert_eq!((c, d), (&[1u64, 0][..], 3));
        // (y=0, x1=1) never seen: fall back to the class-only context.
        let (c, d) = backoff_lookup(&tree, &[0, 1, 1]).unwrap();
        assert_eq!((c, d), (&[1u64, 1][..], 1));
        let (c, d) = backoff_lookup(&tree, &[1, 0, UNKNOWN]).unwrap();
        assert_eq!((c, d), (&[1u64, 0][..], 1));
        let empty = CountTree::new(&s, 0, &[]).unwrap();
        assert!(backoff_lookup(&empty, &[0]).is_err());
    }

    #[test]
    fn holdout_sizes() {
        let cfg = MEstimateConfig::default();
        assert_eq!(cfg.holdout_size(100_000), 5000);
        assert_eq!(cfg.holdout_size(500), 50);
        assert_eq!(cfg.holdout_size(5), 1);
    }

    #[test]
    fn holdout_plan_is_stratified() {
        let counts = [70u64, 20, 10];
        let mut plan = HoldoutPlan::new(&counts, 10, 3);
        let mut taken = [0; 3];
        for (y, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                if plan.next(y as u32) {
                    taken[y] += 1;
                }
            }
        }
        assert_eq!(taken, [7, 2, 1]);
    }

    #[test]
    fn single_grid_value_is_returned() {
        let s = schema(&[2], 2);
        let rows: Vec<Instance> = (0..20).map(|i| Instance::new(vec![i % 2], (i / 3) % 2)).collect();
        let ds = Dataset::from_instances(s, &rows).unwrap();
        let cfg = MEstimateConfig {
            m_grid: vec![5.0],
            ..Default::default()
        };
        assert_eq!(select_m(&ds, &BnStructure::naive(1), &cfg, 0).unwrap(), 5.0);
    }
}
