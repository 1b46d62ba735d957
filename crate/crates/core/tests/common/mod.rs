//! Data generators and independent reference computations for the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use hdpbnc::{Dataset, Instance, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform categorical data; every class is guaranteed at least one row.
pub fn random_instances(rng: &mut impl Rng, cards: &[usize], classes: usize, n: usize) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let y = if i < classes {
                i as u32
            } else {
                rng.random_range(0..classes as u32)
            };
            Instance::new(cards.iter().map(|&c| rng.random_range(0..c as u32)).collect(), y)
        })
        .collect()
}

/// Data where every attribute is a noisy copy of the class or of the
/// previous attribute, so that dependencies are real but uneven.
pub fn chained_instances(rng: &mut impl Rng, cards: &[usize], classes: usize, n: usize) -> Vec<Instance> {
    let keep: Vec<f64> = cards.iter().map(|_| rng.random_range(0.2..0.9)).collect();
    (0..n)
        .map(|i| {
            let y = if i < classes {
                i as u32
            } else {
                rng.random_range(0..classes as u32)
            };
            let mut x: Vec<u32> = Vec::with_capacity(cards.len());
            for (a, &c) in cards.iter().enumerate() {
                let source = if a == 0 || rng.random_bool(0.5) { y } else { x[a - 1] };
                let v = if rng.random_bool(keep[a]) {
                    source % c as u32
                } else {
                    rng.random_range(0..c as u32)
                };
                x.push(v);
            }
            Instance::new(x, y)
        })
        .collect()
}

pub fn dataset(cards: &[usize], classes: usize, instances: &[Instance]) -> Dataset {
    Dataset::from_instances(Schema::categorical(cards, classes), instances).unwrap()
}

/// Two binary variables with the given `[x=0, x=1]` counts for `y = 0` and
/// `y = 1`.
pub fn two_by_two(y0: [usize; 2], y1: [usize; 2]) -> Dataset {
    let mut rows = Vec::new();
    for (y, counts) in [y0, y1].iter().enumerate() {
        for (x, &c) in counts.iter().enumerate() {
            rows.extend(std::iter::repeat_n(Instance::new(vec![x as u32], y as u32), c));
        }
    }
    dataset(&[2], 2, &rows)
}

/// Eight ternary attributes; the class depends only on the first three
/// through a random conditional table.
pub struct SparseSignal {
    table: Vec<f64>,
}

impl SparseSignal {
    pub const ATTRIBUTES: usize = 8;
    pub const CARD: usize = 3;

    pub fn new(rng: &mut impl Rng) -> Self {
        let table = (0..Self::CARD.pow(3))
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.05..0.3)
                } else {
                    rng.random_range(0.7..0.95)
                }
            })
            .collect();
        SparseSignal { table }
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<Instance> {
        (0..n)
            .map(|_| {
                let x: Vec<u32> = (0..Self::ATTRIBUTES)
                    .map(|_| rng.random_range(0..Self::CARD as u32))
                    .collect();
                let cell = (x[0] as usize * Self::CARD + x[1] as usize) * Self::CARD + x[2] as usize;
                Instance::new(x, rng.random_bool(self.table[cell]) as u32)
            })
            .collect()
    }

    pub fn schema() -> Schema {
        Schema::categorical(&[Self::CARD; Self::ATTRIBUTES], 2)
    }
}

/// Writes instances as CSV using the schema's labels, class last.
pub fn write_csv(path: &Path, schema: &Schema, instances: &[Instance]) {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let names: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
    writeln!(f, "{},{}", names.join(","), schema.class.name).unwrap();
    for inst in instances {
        for (i, &v) in inst.x.iter().enumerate() {
            write!(f, "{},", schema.attributes[i].labels[v as usize]).unwrap();
        }
        writeln!(f, "{}", schema.class.labels[inst.y as usize]).unwrap();
    }
}

/// `I(X_a; Y)` from raw rows, in nats.
pub fn mi_reference(rows: &[Instance], a: usize) -> f64 {
    let n = rows.len() as f64;
    let mut joint: HashMap<(u32, u32), f64> = HashMap::new();
    let mut px: HashMap<u32, f64> = HashMap::new();
    let mut py: HashMap<u32, f64> = HashMap::new();
    for r in rows {
        *joint.entry((r.x[a], r.y)).or_default() += 1.0;
        *px.entry(r.x[a]).or_default() += 1.0;
        *py.entry(r.y).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| c / n * (c * n / (px[&x] * py[&y])).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `I(X_a; X_b | Y)` from raw rows, in nats.
pub fn cmi_reference(rows: &[Instance], a: usize, b: usize) -> f64 {
    let n = rows.len() as f64;
    let mut abc: HashMap<(u32, u32, u32), f64> = HashMap::new();
    let mut ac: HashMap<(u32, u32), f64> = HashMap::new();
    let mut bc: HashMap<(u32, u32), f64> = HashMap::new();
    let mut c: HashMap<u32, f64> = HashMap::new();
    for r in rows {
        *abc.entry((r.x[a], r.x[b], r.y)).or_default() += 1.0;
        *ac.entry((r.x[a], r.y)).or_default() += 1.0;
        *bc.entry((r.x[b], r.y)).or_default() += 1.0;
        *c.entry(r.y).or_default() += 1.0;
    }
    abc.iter()
        .map(|(&(x, z, y), &v)| v / n * (v * c[&y] / (ac[&(x, y)] * bc[&(z, y)])).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Logs of the unsigned Stirling numbers of the first kind (`-inf` for
/// zero), row by row from `S(n, t) = (n - 1) S(n - 1, t) + S(n - 1, t - 1)`.
pub fn log_stirling_table(max_n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0]];
    for n in 1..=max_n {
        let prev = &rows[n - 1];
        let mut row = vec![f64::NEG_INFINITY; n + 1];
        for t in 1..=n {
            let a = if t < n {
                prev[t] + ((n - 1) as f64).ln()
            } else {
                f64::NEG_INFINITY
            };
            let b = prev[t - 1];
            let hi = a.max(b);
            row[t] = if hi == f64::NEG_INFINITY {
                hi
            } else {
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            };
        }
        rows.push(row);
    }
    rows
}

/// `ln(alpha (alpha + 1) ... (alpha + n - 1))` as a plain product of logs.
pub fn log_rising_reference(alpha: f64, n: u64) -> f64 {
    (0..n).map(|i| (alpha + i as f64).ln()).sum()
}

/// Every labelled tree on `n` vertices, decoded from its Prüfer sequence.
pub fn spanning_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n == 1 {
        return vec![vec![]];
    }
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let mut out = Vec::new();
    let len = n - 2;
    for code in 0..n.pow(len as u32) {
        let mut seq = Vec::with_capacity(len);
        let mut c = code;
        for _ in 0..len {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            edges.push((leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        out.push(edges);
    }
    out
}

/// Greedy kDB from raw-row statistics: attributes by falling MI with the
/// class, each taking up to `k` earlier attributes by falling CMI.
pub fn kdb_oracle(rows: &[Instance], n: usize, k: usize) -> Vec<Vec<usize>> {
    let mi: Vec<f64> = (0..n).map(|a| mi_reference(rows, a)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mi[b].total_cmp(&mi[a]).then(a.cmp(&b)));
    let mut parents = vec![Vec::new(); n];
    for (rank, &a) in order.iter().enumerate() {
        let mut scored: Vec<(f64, usize)> = order[..rank].iter().map(|&p| (cmi_reference(rows, a, p), p)).collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        parents[a] = scored.into_iter().take(k).map(|(_, p)| p).collect();
    }
    parents
}
