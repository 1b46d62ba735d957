//! Training pipelines and the serialized classifier.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context_tree::ContextTree;
use crate::counts::{CountCube, CountForest, CountTree, NO_CHILD};
use crate::data::{Dataset, Discretizer, Instance, Schema, UNKNOWN};
use crate::error::{Error, Result};
use crate::estimators::{m_estimate, select_m_from_counts, HoldoutPlan, MEstimateConfig};
use crate::sampler::{estimate_prob_hdp, SamplerConfig};
use crate::stirling::{StirlingCache, DEFAULT_DENSE_LIMIT};
use crate::structure::{kdb_from_cube, skdb_select, softmax_at, tan_from_cube, BnStructure, SkdbSelection};

/// Version tag written into model files.
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Nb,
    Tan,
    Kdb(usize),
    Skdb(usize),
}

impl StructureKind {
    /// Streaming passes needed to learn structure and counts.
    pub fn passes(&self) -> usize {
        match self {
            StructureKind::Nb => 1,
            StructureKind::Tan | StructureKind::Kdb(_) => 2,
            StructureKind::Skdb(_) => 3,
        }
    }

    /// Builds a kind from a name and an optional `k`.
    pub fn from_parts(name: &str, k: Option<usize>) -> Result<Self> {
        match (name.to_ascii_lowercase().as_str(), k) {
            ("nb", None) => Ok(StructureKind::Nb),
            ("tan", None) => Ok(StructureKind::Tan),
            ("kdb", Some(k)) => Ok(StructureKind::Kdb(k)),
            ("skdb", Some(k)) => Ok(StructureKind::Skdb(k)),
            ("kdb" | "skdb", None) => Err(Error::invalid(format!("{name} requires k"))),
            ("nb" | "tan", Some(_)) => Err(Error::invalid(format!("{name} takes no k"))),
            (other, _) => Err(Error::invalid(format!("unknown structure '{other}'"))),
        }
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    /// `nb`, `tan`, `kdb:K` or `skdb:K`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => (
                name,
                Some(k.parse().map_err(|_| Error::invalid(format!("bad k in '{s}'")))?),
            ),
            None => (s, None),
        };
        StructureKind::from_parts(name, k)
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureKind::Nb => write!(f, "nb"),
            StructureKind::Tan => write!(f, "tan"),
            StructureKind::Kdb(k) => write!(f, "kdb:{k}"),
            StructureKind::Skdb(k) => write!(f, "skdb:{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mle,
    /// m-estimate with back-off; `None` selects `m` on a holdout.
    M(Option<f64>),
    Hdp,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// `mle`, `m`, `m:VALUE` or `hdp`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(EstimatorKind::Mle),
            "hdp" => Ok(EstimatorKind::Hdp),
            "m" => Ok(EstimatorKind::M(None)),
            other => match other.strip_prefix("m:").map(str::parse::<f64>) {
                Some(Ok(m)) if m >= 0.0 && m.is_finite() => Ok(EstimatorKind::M(Some(m))),
                _ => Err(Error::invalid(format!("unknown estimator '{s}'"))),
            },
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Mle => write!(f, "mle"),
            EstimatorKind::M(None) => write!(f, "m"),
            EstimatorKind::M(Some(m)) => write!(f, "m:{m}"),
            EstimatorKind::Hdp => write!(f, "hdp"),
        }
    }
}

/// A structure learner, an estimator and their settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub structure: StructureKind,
    pub estimator: EstimatorKind,
    pub sampler: SamplerConfig,
    pub m_config: MEstimateConfig,
    /// Seed for holdout selection; the sampler has its own.
    pub seed: u64,
    /// Largest `n` held in the dense Stirling table.
    pub stirling_limit: usize,
}

impl PipelineConfig {
    pub fn new(structure: StructureKind, estimator: EstimatorKind) -> Self {
        PipelineConfig {
            structure,
            estimator,
            sampler: SamplerConfig::default(),
            m_config: MEstimateConfig::default(),
            seed: 0,
            stirling_limit: DEFAULT_DENSE_LIMIT,
        }
    }

    /// Parses `STRUCTURE/ESTIMATOR`, e.g. `kdb:5/hdp`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (s, e) = spec
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("pipeline '{spec}' is not STRUCTURE/ESTIMATOR")))?;
        Ok(PipelineConfig::new(s.trim().parse()?, e.trim().parse()?))
    }

    /// Same pipeline with every seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.sampler.seed = seed;
        c
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.structure, self.estimator)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateNode {
    pub children: Vec<u32>,
    pub p: Vec<f64>,
}

/// Conditional distributions of one attribute over its observed contexts.
/// Prediction reads the deepest node on the context path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SerializedTree", try_from = "SerializedTree")]
pub struct EstimateTree {
    pub attribute: usize,
    pub parents: Vec<usize>,
    pub branch_cards: Vec<usize>,
    pub nodes: Vec<EstimateNode>,
}

#[derive(Serialize, Deserialize)]
struct SerializedEntry {
    path: Vec<u32>,
    p: Vec<f64>,
}

/// Depth-first `(path, distribution)` listing of an [`EstimateTree`].
#[derive(Serialize, Deserialize)]
struct SerializedTree {
    attribute: usize,
    parents: Vec<usize>,
    branch_cards: Vec<usize>,
    entries: Vec<SerializedEntry>,
}

impl From<EstimateTree> for SerializedTree {
    fn from(tree: EstimateTree) -> Self {
        let mut entries = Vec::with_capacity(tree.nodes.len());
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            let node = &tree.nodes[id];
            for (v, &c) in node.children.iter().enumerate().rev() {
                if c != NO_CHILD {
                    let mut p = path.clone();
                    p.push(v as u32);
                    stack.push((c as usize, p));
                }
            }
            entries.push(SerializedEntry {
                path,
                p: node.p.clone(),
            });
        }
        SerializedTree {
            attribute: tree.attribute,
            parents: tree.parents,
            branch_cards: tree.branch_cards,
            entries,
        }
    }
}

impl TryFrom<SerializedTree> for EstimateTree {
    type Error = Error;

    fn try_from(s: SerializedTree) -> Result<Self> {
        let mut tree = EstimateTree {
            attribute: s.attribute,
            parents: s.parents,
            branch_cards: s.branch_cards,
            nodes: Vec::new(),
        };
        for entry in s.entries {
            let depth = entry.path.len();
            if depth > tree.branch_cards.len() {
                return Err(Error::Model("path deeper than the tree".into()));
            }
            let children = if depth < tree.branch_cards.len() {
                vec![NO_CHILD; tree.branch_cards[depth]]
            } else {
                Vec::new()
            };
            let id = tree.nodes.len() as u32;
            if depth == 0 {
                if id != 0 {
                    return Err(Error::Model("second root entry".into()));
                }
            } else {
                let (&last, head) = entry.path.split_last().expect("non-empty path");
                let parent = tree
                    .find(head)
                    .ok_or_else(|| Error::Model("entry before its parent".into()))?;
                let slot = tree.nodes[parent]
                    .children
                    .get_mut(last as usize)
                    .ok_or_else(|| Error::Model("branch value out of range".into()))?;
                *slot = id;
            }
            tree.nodes.push(EstimateNode { children, p: entry.p });
        }
        if tree.nodes.is_empty() {
            return Err(Error::Model("tree without a root".into()));
        }
        Ok(tree)
    }
}

impl EstimateTree {
    fn find(&self, path: &[u32]) -> Option<usize> {
        let mut id = 0usize;
        for &v in path {
            match self.nodes.get(id)?.children.get(v as usize) {
                Some(&c) if c != NO_CHILD => id = c as usize,
                _ => return None,
            }
        }
        self.nodes.get(id).map(|_| id)
    }

    /// Distribution at the deepest node along `context` (`[y, parents...]`).
    pub fn lookup(&self, context: &[u32]) -> &[f64] {
        let mut id = 0usize;
        for &v in context {
            if v == UNKNOWN {
                break;
            }
            match self.nodes[id].children.get(v as usize) {
                Some(&c) if c != NO_CHILD => id = c as usize,
                _ => break,
            }
        }
        &self.nodes[id].p
    }

    fn from_counts(tree: &CountTree, m: f64) -> Result<Self> {
        let uniform = vec![1.0 / tree.child_card as f64; tree.child_card];
        let nodes = tree
            .nodes
            .iter()
            .map(|n| {
                let p = if n.total() == 0 {
                    uniform.clone()
                } else {
                    m_estimate(&n.counts, m)?
                };
                Ok(EstimateNode {
                    children: n.children.clone(),
                    p,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EstimateTree {
            attribute: tree.child,
            parents: tree.parents.clone(),
            branch_cards: tree.branch_cards.clone(),
            nodes,
        }
        .preorder())
    }

    fn from_context_tree(tree: &ContextTree) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| EstimateNode {
                children: n.children.clone(),
                p: n.estimate.clone(),
            })
            .collect();
        EstimateTree {
            attribute: tree.child,
            parents: tree.parents.clone(),
            branch_cards: tree.branch_cards.clone(),
            nodes,
        }
        .preorder()
    }

    /// Renumbers nodes in depth-first order, the order they are saved in.
    fn preorder(self) -> Self {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(
                self.nodes[id]
                    .children
                    .iter()
                    .rev()
                    .filter(|&&c| c != NO_CHILD)
                    .map(|&c| c as usize),
            );
        }
        let mut new_id = vec![NO_CHILD; self.nodes.len()];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i as u32;
        }
        let mut old_nodes: Vec<Option<EstimateNode>> = self.nodes.into_iter().map(Some).collect();
        let nodes = order
            .iter()
            .map(|&old| {
                let mut node = old_nodes[old].take().expect("each node visited once");
                for c in node.children.iter_mut().filter(|c| **c != NO_CHILD) {
                    *c = new_id[*c as usize];
                }
                node
            })
            .collect();
        EstimateTree { nodes, ..self }
    }
}

/// A trained classifier, serializable as versioned JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub schema: Schema,
    pub structure: BnStructure,
    pub estimator: EstimatorKind,
    /// The `m` used by an m-estimate model.
    pub m: Option<f64>,
    pub class_prior: Vec<f64>,
    /// One table per selected attribute.
    pub tables: Vec<Option<EstimateTree>>,
}

/// What happened during training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub passes: usize,
    /// Nodes across all per-attribute trees.
    pub node_count: usize,
    /// Largest node count held at once, before SkDB trims its trees.
    pub peak_nodes: usize,
    /// Most instances held in memory at once while streaming.
    pub peak_buffered: usize,
    pub m: Option<f64>,
    pub skdb: Option<SkdbSelection>,
    pub stirling_max_n: usize,
    /// Wall-clock time; not serialized, so reports stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

fn count_pass(
    dataset: &Dataset,
    forest: &mut CountForest,
    plan: &mut Option<HoldoutPlan>,
    holdout: &mut Vec<Instance>,
) -> Result<()> {
    dataset.for_each(|inst| {
        forest.add(inst);
        if let Some(plan) = plan.as_mut() {
            if plan.next(inst.y) {
                holdout.push(inst.clone());
            }
        }
    })?;
    dataset.stats().note_buffered(holdout.len());
    Ok(())
}

/// Learns structure and parameters from `dataset`. Numeric attributes are
/// discretized on `dataset` first.
pub fn train(dataset: &Dataset, config: &PipelineConfig) -> Result<(TrainedModel, TrainReport)> {
    let start = Instant::now();
    if config.estimator == EstimatorKind::Hdp {
        config.sampler.validate()?;
    }
    config.m_config.validate()?;
    let discretized;
    let ds = if dataset.schema().is_discrete() {
        dataset
    } else {
        discretized = dataset.discretized()?;
        &discretized
    };
    let passes_before = ds.stats().passes();
    let schema = ds.schema().clone();
    let n_attr = schema.n_attributes();

    let mut plan = matches!(config.estimator, EstimatorKind::M(None))
        .then(|| HoldoutPlan::new(ds.class_counts(), config.m_config.holdout_size(ds.len()), config.seed));
    let mut holdout = Vec::new();

    let cube_structure = |kind: StructureKind| -> Result<BnStructure> {
        let mut cube = CountCube::new(&schema, true);
        ds.for_each(|inst| cube.add(inst))?;
        info!("pass {}: joint counts for {} attributes", ds.stats().passes(), n_attr);
        match kind {
            StructureKind::Tan => tan_from_cube(&cube),
            StructureKind::Kdb(k) | StructureKind::Skdb(k) => kdb_from_cube(&cube, k),
            StructureKind::Nb => Ok(BnStructure::naive(n_attr)),
        }
    };
    let full = match config.structure {
        StructureKind::Nb => BnStructure::naive(n_attr),
        kind => cube_structure(kind)?,
    };
    let parents: Vec<Option<Vec<usize>>> = full.parents.iter().cloned().map(Some).collect();
    let mut forest = CountForest::new(&schema, &parents)?;
    count_pass(ds, &mut forest, &mut plan, &mut holdout)?;
    let peak_nodes = forest.node_count();
    info!("pass {}: {peak_nodes} count-tree nodes", ds.stats().passes());

    let (structure, skdb) = match config.structure {
        StructureKind::Skdb(_) => {
            let sel = skdb_select(ds, &full, &forest)?;
            info!(
                "pass {}: selected n* = {}, k* = {}",
                ds.stats().passes(),
                sel.n_star,
                sel.k_star
            );
            let s = full.restrict(sel.n_star, sel.k_star);
            for (a, tree) in forest.trees.iter_mut().enumerate() {
                *tree = if s.selected[a] {
                    tree.take().map(|t| t.truncated(s.parents[a].len()))
                } else {
                    None
                };
            }
            (s, Some(sel))
        }
        _ => (full, None),
    };
    structure.validate()?;

    let m = match config.estimator {
        EstimatorKind::Mle => Some(0.0),
        EstimatorKind::M(Some(m)) => Some(m),
        EstimatorKind::M(None) => {
            let (m, losses) = select_m_from_counts(&mut forest, &holdout, &structure, &config.m_config)?;
            info!("chose m = {m} on a holdout of {} (losses {losses:?})", holdout.len());
            Some(m)
        }
        EstimatorKind::Hdp => None,
    };
    drop(holdout);

    let n_classes = schema.n_classes();
    let total = forest.total() as f64;
    let class_prior: Vec<f64> = match m {
        Some(m) if total + m > 0.0 => m_estimate(&forest.class, m)?,
        Some(_) => vec![1.0 / n_classes as f64; n_classes],
        None => {
            let a0 = config.sampler.root_concentration;
            forest
                .class
                .iter()
                .map(|&c| (c as f64 + a0 / n_classes as f64) / (total + a0))
                .collect()
        }
    };

    let mut stirling_max_n = 0;
    let (tables, node_count): (Vec<Option<EstimateTree>>, usize) = match m {
        Some(m) => {
            let tables = forest
                .trees
                .iter()
                .map(|t| t.as_ref().map(|t| EstimateTree::from_counts(t, m)).transpose())
                .collect::<Result<Vec<_>>>()?;
            (tables, forest.node_count())
        }
        None => {
            let deepest = forest
                .trees
                .iter()
                .flatten()
                .flat_map(|t| t.nodes.iter().filter(move |n| n.depth == t.levels()))
                .map(|n| n.total() as usize)
                .max()
                .unwrap_or(0);
            stirling_max_n = deepest.min(config.stirling_limit).max(1);
            let cache = StirlingCache::new(stirling_max_n);
            let trees: Vec<Option<ContextTree>> = forest
                .trees
                .par_iter()
                .map(|t| {
                    t.as_ref()
                        .map(|t| {
                            let mut ct = ContextTree::from_count_tree(t);
                            estimate_prob_hdp(&mut ct, &config.sampler, &cache)?;
                            Ok(ct)
                        })
                        .transpose()
                })
                .collect::<Result<_>>()?;
            let nodes = trees.iter().flatten().map(ContextTree::len).sum();
            let tables = trees
                .iter()
                .map(|t| t.as_ref().map(EstimateTree::from_context_tree))
                .collect();
            (tables, nodes)
        }
    };

    let model = TrainedModel {
        version: MODEL_VERSION,
        schema,
        structure,
        estimator: config.estimator,
        m: if config.estimator == EstimatorKind::Hdp {
            None
        } else {
            m
        },
        class_prior,
        tables,
    };
    let report = TrainReport {
        passes: ds.stats().passes() - passes_before,
        node_count,
        peak_nodes: peak_nodes.max(node_count),
        peak_buffered: ds.stats().peak_buffered(),
        m: model.m,
        skdb,
        stirling_max_n,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.class_prior.len()
    }

    /// Cut points learned during training, for binning new data.
    pub fn discretizer(&self) -> Discretizer {
        Discretizer {
            cuts: self.schema.attributes.iter().map(|a| a.cuts.clone()).collect(),
        }
    }

    /// Class posterior for attribute values `x`. Values of [`UNKNOWN`] are
    /// skipped as children and cut the context short as parents.
    pub fn predict_posterior(&self, x: &[u32]) -> Result<Vec<f64>> {
        let n = self.schema.n_attributes();
        if x.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} attribute values, got {}",
                x.len()
            )));
        }
        let prior: Vec<f64> = self.class_prior.iter().map(|p| p.ln()).collect();
        let mut scores = prior.clone();
        let mut ctx = Vec::new();
        for (a, table) in self.tables.iter().enumerate() {
            let Some(table) = table else { continue };
            let v = x[a];
            if v == UNKNOWN || v as usize >= self.schema.cardinality(a) {
                continue;
            }
            for (y, s) in scores.iter_mut().enumerate() {
                ctx.clear();
                ctx.push(y as u32);
                ctx.extend(table.parents.iter().map(|&p| x[p]));
                *s += table.lookup(&ctx)[v as usize].ln();
            }
        }
        if scores.iter().all(|&s| s == f64::NEG_INFINITY) {
            scores = prior;
        }
        Ok((0..scores.len()).map(|y| softmax_at(&scores, y)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        model.structure.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
