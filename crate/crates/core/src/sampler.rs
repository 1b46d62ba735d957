//! Collapsed Gibbs sampler over the table counts of a [`ContextTree`].
//!
//! One iteration sweeps every non-root node from the deepest level up,
//! resampling each `t[k]` within a window around its current value, then
//! resamples the tied concentrations through a Beta auxiliary variable, and
//! after burn-in folds the current estimates into each node's running mean.

use std::str::FromStr;

use log::{debug, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::context_tree::{ConcentrationParam, ContextTree};
use crate::counts::NO_CHILD;
use crate::error::{Error, Result};
use crate::stirling::{log_rising_factorial, StirlingCache, StirlingLookup};

/// How concentration parameters are shared between nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tying {
    /// One parameter for every non-root node.
    Single,
    /// One parameter per depth.
    #[default]
    Level,
    /// The children of each node share one parameter.
    #[serde(rename = "parent")]
    SameParent,
}

impl FromStr for Tying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "s" => Ok(Tying::Single),
            "level" | "l" => Ok(Tying::Level),
            "parent" | "same-parent" | "sameparent" | "sp" => Ok(Tying::SameParent),
            other => Err(Error::invalid(format!("unknown tying strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for Tying {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tying::Single => "single",
            Tying::Level => "level",
            Tying::SameParent => "parent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    /// Defaults to a tenth of `iterations`.
    pub burn_in: Option<usize>,
    /// Half-width of the proposal window for each `t[k]`.
    pub window: usize,
    pub tying: Tying,
    pub seed: u64,
    /// Gamma prior `(shape, rate)` on every sampled concentration.
    pub gamma_prior: (f64, f64),
    /// Starting value of every non-root concentration.
    pub initial_concentration: f64,
    /// Fixed concentration of the root.
    pub root_concentration: f64,
    /// Also resample from the class-level nodes (depth 1). Off by default:
    /// with only `|Y|` nodes under an improper prior the draw tends to run
    /// off to very large values.
    pub sample_class_level: bool,
    /// Check every tree invariant after each sweep.
    pub audit: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 50_000,
            burn_in: None,
            window: 10,
            tying: Tying::Level,
            seed: 0,
            gamma_prior: (0.0, 0.0),
            initial_concentration: 1.0,
            root_concentration: 2.0,
            sample_class_level: false,
            audit: false,
        }
    }
}

impl SamplerConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("sampler needs at least one iteration"));
        }
        if self.burn_in() >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in(),
                self.iterations
            )));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.initial_concentration) || !positive(self.root_concentration) {
            return Err(Error::invalid("concentrations must be positive"));
        }
        let (shape, rate) = self.gamma_prior;
        if !(shape >= 0.0 && rate >= 0.0) {
            return Err(Error::invalid("gamma prior must be nonnegative"));
        }
        Ok(())
    }

    fn min_sampled_depth(&self) -> usize {
        if self.sample_class_level {
            1
        } else {
            2
        }
    }
}

/// Independent RNG stream for the tree of `attribute`.
pub fn tree_rng(seed: u64, attribute: usize) -> ChaCha8Rng {
    let mut z = seed ^ (attribute as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Creates the concentration parameters of `tree` and attaches every
/// non-root node to one. Returns the number of parameters.
pub fn assign_tying(tree: &mut ContextTree, strategy: Tying, initial: f64) -> usize {
    let mut params: Vec<ConcentrationParam> = Vec::new();
    let mut new_param = |nodes: Vec<usize>| {
        params.push(ConcentrationParam { value: initial, nodes });
        params.len() - 1
    };
    let mut owner = vec![None; tree.nodes.len()];
    match strategy {
        Tying::Single => {
            let nodes: Vec<usize> = tree.levels.iter().skip(1).flatten().copied().collect();
            if !nodes.is_empty() {
                let p = new_param(nodes.clone());
                nodes.iter().for_each(|&id| owner[id] = Some(p));
            }
        }
        Tying::Level => {
            for level in tree.levels.iter().skip(1) {
                if !level.is_empty() {
                    let p = new_param(level.clone());
                    level.iter().for_each(|&id| owner[id] = Some(p));
                }
            }
        }
        Tying::SameParent => {
            for level in &tree.levels {
                for &id in level {
                    let kids: Vec<usize> = tree.nodes[id]
                        .children
                        .iter()
                        .filter(|&&c| c != NO_CHILD)
                        .map(|&c| c as usize)
                        .collect();
                    if !kids.is_empty() {
                        let p = new_param(kids.clone());
                        kids.iter().for_each(|&c| owner[c] = Some(p));
                    }
                }
            }
        }
    }
    for (node, p) in tree.nodes.iter_mut().zip(owner) {
        node.concentration = p;
    }
    tree.params = params;
    tree.params.len()
}

fn parent_of(tree: &ContextTree, id: usize) -> Result<usize> {
    tree.nodes[id]
        .parent
        .ok_or_else(|| Error::invalid("the root's table counts are fixed"))
}

/// Sets `t[k]` of non-root node `id` to `new_value`, keeping the parent's
/// counts coupled, and returns the log of the unnormalised conditional
/// weight of the new state:
/// `alpha^t S(n[k], t) S(parent.n[k], parent.t[k]) / parent_alpha^(parent.n_dot)`
/// with the last factor a rising factorial.
///
/// When the change would leave the parent with fewer customers than
/// tables, nothing is modified and `-inf` is returned.
pub fn change_tk_and_get_log_probability(
    tree: &mut ContextTree,
    id: usize,
    k: usize,
    new_value: u64,
    lookup: &mut StirlingLookup<'_>,
) -> Result<f64> {
    if k >= tree.child_card {
        return Err(Error::invalid(format!("value index {k} out of range")));
    }
    let p = parent_of(tree, id)?;
    let node = &tree.nodes[id];
    if new_value > node.n[k] || (new_value == 0 && node.n[k] > 0) {
        return Ok(f64::NEG_INFINITY);
    }
    let delta = new_value as i64 - node.t[k] as i64;
    let parent = &tree.nodes[p];
    if (parent.n[k] as i64 + delta) < parent.t[k] as i64 {
        return Ok(f64::NEG_INFINITY);
    }
    let node = &mut tree.nodes[id];
    node.t[k] = new_value;
    node.t_dot = node.t_dot.checked_add_signed(delta).expect("t_dot underflow");
    let parent = &mut tree.nodes[p];
    parent.n[k] = parent.n[k].checked_add_signed(delta).expect("n underflow");
    parent.n_dot = parent.n_dot.checked_add_signed(delta).expect("n_dot underflow");
    if parent.parent.is_none() {
        let t = parent.n[k].min(1);
        parent.t_dot = parent.t_dot + t - parent.t[k];
        parent.t[k] = t;
    }
    let (alpha, parent_alpha) = (tree.alpha(id), tree.alpha(p));
    let node = &tree.nodes[id];
    let parent = &tree.nodes[p];
    Ok(new_value as f64 * alpha.ln()
        + lookup.log_s(node.n[k] as usize, new_value as usize)
        + lookup.log_s(parent.n[k] as usize, parent.t[k] as usize)
        - log_rising_factorial(parent_alpha, parent.n_dot as usize))
}

/// Candidate range `[lo, hi]` for `t[k]` of node `id` and the log weight
/// of each candidate, computed without touching the tree. Agrees with
/// [`change_tk_and_get_log_probability`] candidate by candidate.
pub fn candidate_log_weights(
    tree: &ContextTree,
    id: usize,
    k: usize,
    window: usize,
    lookup: &mut StirlingLookup<'_>,
) -> (u64, Vec<f64>) {
    let node = &tree.nodes[id];
    let p = node.parent.expect("root is never resampled");
    let parent = &tree.nodes[p];
    let (n, t) = (node.n[k], node.t[k]);
    let w = window as u64;
    let lo = t.saturating_sub(w).max(1);
    let hi = (t + w).min(n);
    let ln_alpha = tree.alpha(id).ln();
    let parent_alpha = tree.alpha(p);
    let root_parent = parent.parent.is_none();
    // Parent counts for candidate c are base + c.
    let base_nk = parent.n[k] - t;
    let base_ndot = parent.n_dot - t;
    let mut rising = log_rising_factorial(parent_alpha, (base_ndot + lo) as usize);
    let mut out = Vec::with_capacity((hi + 1 - lo) as usize);
    for c in lo..=hi {
        if c > lo {
            rising += (parent_alpha + (base_ndot + c - 1) as f64).ln();
        }
        let pn = base_nk + c;
        let pt = if root_parent { pn.min(1) } else { parent.t[k] };
        if pn < pt {
            out.push(f64::NEG_INFINITY);
            continue;
        }
        out.push(
            c as f64 * ln_alpha + lookup.log_s(n as usize, c as usize) + lookup.log_s(pn as usize, pt as usize)
                - rising,
        );
    }
    (lo, out)
}

/// Index drawn proportionally to `exp(log_weights)`; `None` when every
/// weight is zero.
pub fn draw_log_weighted(log_weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in log_weights.iter().enumerate() {
        if *w == f64::NEG_INFINITY {
            continue;
        }
        last = i;
        u -= (w - max).exp();
        if u < 0.0 {
            return Some(i);
        }
    }
    Some(last)
}

fn commit_tk(tree: &mut ContextTree, id: usize, k: usize, new_value: u64) {
    let p = tree.nodes[id].parent.expect("non-root");
    let node = &mut tree.nodes[id];
    let delta = new_value as i64 - node.t[k] as i64;
    if delta == 0 {
        return;
    }
    node.t[k] = new_value;
    node.t_dot = node.t_dot.wrapping_add_signed(delta);
    let parent = &mut tree.nodes[p];
    parent.n[k] = parent.n[k].wrapping_add_signed(delta);
    parent.n_dot = parent.n_dot.wrapping_add_signed(delta);
    if parent.parent.is_none() {
        let t = parent.n[k].min(1);
        parent.t_dot = parent.t_dot + t - parent.t[k];
        parent.t[k] = t;
    }
}

/// Resamples every `t[k]` of non-root node `id` with `n[k] >= 2`; the
/// others are determined by `n[k]`.
pub fn sample_node(
    tree: &mut ContextTree,
    id: usize,
    window: usize,
    lookup: &mut StirlingLookup<'_>,
    rng: &mut impl Rng,
) {
    if tree.nodes[id].parent.is_none() {
        return;
    }
    for k in 0..tree.child_card {
        if tree.nodes[id].n[k] <= 1 {
            continue;
        }
        let (lo, weights) = candidate_log_weights(tree, id, k, window, lookup);
        if let Some(i) = draw_log_weighted(&weights, rng) {
            commit_tk(tree, id, k, lo + i as u64);
        }
    }
}

/// One bottom-up pass over every non-root node, each level in path order.
pub fn sweep(tree: &mut ContextTree, window: usize, lookup: &mut StirlingLookup<'_>, rng: &mut impl Rng) {
    for depth in (1..tree.levels.len()).rev() {
        for i in 0..tree.levels[depth].len() {
            let id = tree.levels[depth][i];
            sample_node(tree, id, window, lookup, rng);
        }
    }
}

/// Gamma posterior `(shape, rate)` of parameter `param` given fresh Beta
/// auxiliary draws, over its nodes at depth `min_depth` or deeper. `None`
/// when no node contributes.
pub fn concentration_shape_rate(
    tree: &ContextTree,
    param: usize,
    min_depth: usize,
    prior: (f64, f64),
    rng: &mut impl Rng,
) -> Option<(f64, f64)> {
    let p = &tree.params[param];
    let alpha = p.value;
    let (mut shape, mut rate) = prior;
    let mut any = false;
    for &id in &p.nodes {
        let node = &tree.nodes[id];
        if node.depth < min_depth {
            continue;
        }
        any = true;
        shape += node.t_dot as f64;
        if node.n_dot > 0 {
            let q = match Beta::new(alpha, node.n_dot as f64) {
                Ok(b) => b.sample(rng).max(f64::MIN_POSITIVE),
                Err(_) => continue,
            };
            rate -= q.ln();
        }
    }
    any.then_some((shape, rate))
}

/// Draws from `Gamma(shape, rate)`, or `None` for a degenerate posterior.
pub fn draw_gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> Option<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return None;
    }
    let v = Gamma::new(shape, 1.0 / rate).ok()?.sample(rng);
    (v > 0.0 && v.is_finite()).then_some(v)
}

/// Resamples concentration `param`; returns whether it changed.
pub fn sample_concentration(tree: &mut ContextTree, param: usize, config: &SamplerConfig, rng: &mut impl Rng) -> bool {
    let Some((shape, rate)) =
        concentration_shape_rate(tree, param, config.min_sampled_depth(), config.gamma_prior, rng)
    else {
        return false;
    };
    match draw_gamma(shape, rate, rng) {
        Some(v) => {
            tree.params[param].value = v;
            true
        }
        None => false,
    }
}

/// Runs the full sampler on `tree` and leaves averaged estimates in every
/// node. The RNG stream depends only on the seed and the tree's attribute.
pub fn estimate_prob_hdp(tree: &mut ContextTree, config: &SamplerConfig, cache: &StirlingCache) -> Result<()> {
    config.validate()?;
    assign_tying(tree, config.tying, config.initial_concentration);
    tree.root_alpha = config.root_concentration;
    tree.init_parameters()?;
    if config.audit {
        tree.audit()?;
    }
    let mut lookup = StirlingLookup::new(cache);
    let mut rng = tree_rng(config.seed, tree.child);
    let burn_in = config.burn_in();
    let report_every = (config.iterations / 10).max(1);
    for it in 0..config.iterations {
        sweep(tree, config.window, &mut lookup, &mut rng);
        for p in 0..tree.params.len() {
            sample_concentration(tree, p, config, &mut rng);
        }
        if config.audit {
            tree.audit()?;
        }
        if it >= burn_in {
            tree.record();
        }
        if (it + 1) % report_every == 0 {
            let alphas: Vec<String> = tree.params.iter().map(|p| format!("{:.4}", p.value)).collect();
            debug!(
                "attribute {} iteration {} alpha [{}]",
                tree.child,
                it + 1,
                alphas.join(" ")
            );
        }
    }
    trace!(
        "attribute {}: {} overflow stirling rows",
        tree.child,
        lookup.overflow_rows()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::CountTree;
    use crate::data::Instance;
    use crate::testutil::schema;

    fn tree_from(cards: &[usize], parents: &[usize], rows: &[(Vec<u32>, u32)]) -> ContextTree {
        let s = schema(cards, 2);
        let mut counts = CountTree::new(&s, 0, parents).unwrap();
        for (x, y) in rows {
            counts.add(&Instance::new(x.clone(), *y));
        }
        ContextTree::from_count_tree(&counts)
    }

    fn repeated(x: Vec<u32>, y: u32, times: usize) -> Vec<(Vec<u32>, u32)> {
        vec![(x, y); times]
    }

    fn deep_tree() -> ContextTree {
        let mut rows = repeated(vec![0, 0], 0, 5);
        rows.extend(repeated(vec![1, 1], 0, 7));
        rows.extend(repeated(vec![0, 1], 1, 4));
        rows.extend(repeated(vec![1, 2], 1, 3));
        rows.extend(repeated(vec![0, 2], 1, 6));
        tree_from(&[2, 3], &[1], &rows)
    }

    #[test]
    fn tying_counts() {
        let mut nb = tree_from(&[2], &[], &[(vec![0], 0), (vec![1], 1)]);
        assert_eq!(assign_tying(&mut nb, Tying::Level, 1.0), 1);
        assert_eq!(assign_tying(&mut nb, Tying::Single, 1.0), 1);
        let mut deep = deep_tree();
        assert_eq!(deep.depth(), 3);
        assert_eq!(assign_tying(&mut deep, Tying::Level, 1.0), 2);
        assert_eq!(assign_tying(&mut deep, Tying::SameParent, 1.0), 3);
        assert_eq!(assign_tying(&mut deep, Tying::Single, 1.0), 1);
        assert!(deep.nodes.iter().skip(1).all(|n| n.concentration == Some(0)));
    }

    #[test]
    fn tying_parse() {
        assert_eq!("level".parse::<Tying>().unwrap(), Tying::Level);
        assert_eq!("parent".parse::<Tying>().unwrap(), Tying::SameParent);
        assert!("bogus".parse::<Tying>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = SamplerConfig {
            iterations: 10,
            ..Default::default()
        };
        assert_eq!(c.burn_in(), 1);
        c.validate().unwrap();
        c.burn_in = Some(10);
        assert!(c.validate().is_err());
        c.burn_in = None;
        c.window = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn change_tk_round_trip_and_guard() {
        let cache = StirlingCache::new(64);
        let mut lookup = StirlingLookup::new(&cache);
        let mut tree = deep_tree();
        assign_tying(&mut tree, Tying::Level, 1.0);
        tree.init_parameters().unwrap();
        let leaf = tree.levels[2][1];
        assert_eq!(tree.nodes[leaf].n, vec![0, 7]);
        let before = tree.clone();
        let cur = tree.nodes[leaf].t[1];
        let w = change_tk_and_get_log_probability(&mut tree, leaf, 1, cur, &mut lookup).unwrap();
        assert!(w.is_finite());
        assert_eq!(tree, before);
        change_tk_and_get_log_probability(&mut tree, leaf, 1, cur + 1, &mut lookup).unwrap();
        assert_ne!(tree, before);
        change_tk_and_get_log_probability(&mut tree, leaf, 1, cur, &mut lookup).unwrap();
        assert_eq!(tree, before);

        // Push the class-level node's t up to its n, then try to take
        // customers away from it.
        let mid = tree.nodes[leaf].parent.unwrap();
        let n = tree.nodes[mid].n[1];
        change_tk_and_get_log_probability(&mut tree, mid, 1, n, &mut lookup).unwrap();
        let frozen = tree.clone();
        let w = change_tk_and_get_log_probability(&mut tree, leaf, 1, cur - 1, &mut lookup);
        if cur > 1 {
            assert_eq!(w.unwrap(), f64::NEG_INFINITY);
            assert_eq!(tree, frozen);
        }
        assert!(change_tk_and_get_log_probability(&mut tree, leaf, 5, 1, &mut lookup).is_err());
        assert!(change_tk_and_get_log_probability(&mut tree, 0, 0, 1, &mut lookup).is_err());
    }

    #[test]
    fn fast_weights_match_mutating_path() {
        let cache = StirlingCache::new(64);
        let mut lookup = StirlingLookup::new(&cache);
        let mut tree = deep_tree();
        assign_tying(&mut tree, Tying::Level, 1.3);
        tree.root_alpha = 2.0;
        tree.params[0].value = 0.7;
        tree.init_parameters().unwrap();
        for depth in 1..tree.levels.len() {
            for &id in &tree.levels[depth].clone() {
                for k in 0..2 {
                    if tree.nodes[id].n[k] <= 1 {
                        continue;
                    }
                    let (lo, fast) = candidate_log_weights(&tree, id, k, 10, &mut lookup);
                    for (i, &f) in fast.iter().enumerate() {
                        let mut probe = tree.clone();
                        let slow =
                            change_tk_and_get_log_probability(&mut probe, id, k, lo + i as u64, &mut lookup).unwrap();
                        if slow == f64::NEG_INFINITY {
                            assert_eq!(f, slow);
                        } else {
                            assert!((f - slow).abs() <= 1e-10 * slow.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sparse_leaves_stay_fixed() {
        let cache = StirlingCache::new(16);
        let mut tree = tree_from(
            &[3, 2],
            &[1],
            &[(vec![0, 0], 0), (vec![1, 1], 0), (vec![2, 0], 1), (vec![0, 1], 1)],
        );
        let cfg = SamplerConfig {
            iterations: 50,
            audit: true,
            ..Default::default()
        };
        estimate_prob_hdp(&mut tree, &cfg, &cache).unwrap();
        for &leaf in &tree.levels[2] {
            assert_eq!(tree.nodes[leaf].t, tree.nodes[leaf].n);
        }
    }

    #[test]
    fn shape_sums_tied_tables() {
        let mut rows = repeated(vec![0, 0], 0, 2);
        rows.extend(repeated(vec![1, 0], 0, 3));
        rows.extend(repeated(vec![0, 1], 1, 3));
        rows.extend(repeated(vec![1, 1], 1, 4));
        let mut tree = tree_from(&[2, 2], &[1], &rows);
        assign_tying(&mut tree, Tying::Level, 1.0);
        tree.init_parameters().unwrap();
        let leaf = |n_dot: u64| {
            *tree.levels[2]
                .iter()
                .find(|&&id| tree.nodes[id].n_dot == n_dot)
                .unwrap()
        };
        let (a, b) = (leaf(5), leaf(7));
        assert_eq!(
            (tree.nodes[a].n.clone(), tree.nodes[b].n.clone()),
            (vec![2, 3], vec![3, 4])
        );
        let cache = StirlingCache::new(16);
        let mut lookup = StirlingLookup::new(&cache);
        for (id, k) in [(a, 1), (b, 0)] {
            let lp = change_tk_and_get_log_probability(&mut tree, id, k, 3, &mut lookup).unwrap();
            assert!(lp.is_finite());
        }
        assert_eq!((tree.nodes[a].t[1], tree.nodes[b].t[0]), (3, 3));
        for id in [a, b] {
            assert_eq!(tree.nodes[id].t_dot, tree.nodes[id].t.iter().sum::<u64>());
        }
        let level: u64 = tree.levels[2].iter().map(|&id| tree.nodes[id].t_dot).sum();
        let mut rng = tree_rng(1, 0);
        let (shape, rate) = concentration_shape_rate(&tree, 1, 2, (0.0, 0.0), &mut rng).unwrap();
        assert_eq!(shape, level as f64);
        let (shape, _) = concentration_shape_rate(&tree, 1, 2, (1.5, 0.0), &mut rng).unwrap();
        assert_eq!(shape, level as f64 + 1.5);
        assert!(rate > 0.0);
        // The class level has no contributors unless asked for.
        assert!(concentration_shape_rate(&tree, 0, 2, (0.0, 0.0), &mut rng).is_none());
    }

    #[test]
    fn gamma_mean() {
        let mut rng = tree_rng(9, 0);
        let (shape, rate) = (3.0, 2.0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| draw_gamma(shape, rate, &mut rng).unwrap()).sum::<f64>() / n as f64;
        let sd = (shape / (rate * rate) / n as f64).sqrt();
        assert!((mean - shape / rate).abs() < 3.0 * sd);
        assert!(draw_gamma(0.0, 1.0, &mut rng).is_none());
        assert!(draw_gamma(1.0, 0.0, &mut rng).is_none());
    }

    #[test]
    fn deterministic_given_seed() {
        let cache = StirlingCache::new(64);
        let cfg = SamplerConfig {
            iterations: 200,
            seed: 5,
            ..Default::default()
        };
        let mut a = deep_tree();
        let mut b = deep_tree();
        estimate_prob_hdp(&mut a, &cfg, &cache).unwrap();
        estimate_prob_hdp(&mut b, &cfg, &cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_count(), 180);
    }
}
