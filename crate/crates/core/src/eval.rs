//! Metrics, repeated stratified cross-validation and win/draw/loss tests.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{train, PipelineConfig};

/// Metric differences below this count as a draw.
pub const DRAW_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Root mean squared `1 - p(true class)`.
    #[default]
    Rmse,
    /// Root mean squared error over every class probability.
    Brier,
    ZeroOne,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Metric::Rmse),
            "brier" | "rmse-all" => Ok(Metric::Brier),
            "zero-one" | "01" | "0-1" | "error" => Ok(Metric::ZeroOne),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

impl Metric {
    pub fn score(&self, posteriors: &[Vec<f64>], truth: &[u32]) -> Result<f64> {
        match self {
            Metric::Rmse => rmse(posteriors, truth),
            Metric::Brier => rmse_all_classes(posteriors, truth),
            Metric::ZeroOne => {
                let predicted: Vec<u32> = posteriors.iter().map(|p| argmax(p)).collect();
                zero_one_loss(&predicted, truth)
            }
        }
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u32
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::invalid("no predictions to score"));
    }
    Ok(())
}

/// Fraction of mismatched labels.
pub fn zero_one_loss(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    check_lengths(predicted.len(), truth.len())?;
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// `sqrt(mean((1 - p(true class))^2))`.
pub fn rmse(posteriors: &[Vec<f64>], truth: &[u32]) -> Result<f64> {
    check_lengths(posteriors.len(), truth.len())?;
    let sse: f64 = posteriors
        .iter()
        .zip(truth)
        .map(|(p, &y)| (1.0 - p[y as usize]).powi(2))
        .sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// `sqrt(mean over instances and classes of (indicator - p)^2)`.
pub fn rmse_all_classes(posteriors: &[Vec<f64>], truth: &[u32]) -> Result<f64> {
    check_lengths(posteriors.len(), truth.len())?;
    let mut sse = 0.0;
    let mut cells = 0usize;
    for (p, &y) in posteriors.iter().zip(truth) {
        for (c, &v) in p.iter().enumerate() {
            let target = if c == y as usize { 1.0 } else { 0.0 };
            sse += (target - v).powi(2);
        }
        cells += p.len();
    }
    Ok((sse / cells as f64).sqrt())
}

/// Seed derived from a parent seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold index of every instance. Each class is shuffled separately and dealt
/// round-robin, continuing the rotation from one class to the next.
pub fn stratified_folds(classes: &[u32], n_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in classes.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let mut assignment = vec![0; classes.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub rep: usize,
    pub fold: usize,
    /// Seed of the fold's pipeline.
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub zero_one: f64,
    pub rmse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub pipeline: String,
    pub folds: Vec<FoldResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean_zero_one(&self) -> f64 {
        mean(self.folds.iter().map(|f| f.zero_one))
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(self.folds.iter().map(|f| f.rmse))
    }

    /// One row per (rep, fold). Timing is left out so that the file is
    /// reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pipeline,rep,fold,seed,train_size,test_size,zero_one,rmse\n");
        for f in &self.folds {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.pipeline, f.rep, f.fold, f.seed, f.train_size, f.test_size, f.zero_one, f.rmse
            )
            .unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} folds, mean 0-1 loss {:.4}, mean RMSE {:.4}",
            self.pipeline,
            self.folds.len(),
            self.mean_zero_one(),
            self.mean_rmse()
        )
    }
}

/// Trains `pipeline` on one split and scores it on the other.
pub fn evaluate_split(train_set: &Dataset, test_set: &Dataset, pipeline: &PipelineConfig) -> Result<(f64, f64)> {
    let (model, _) = train(train_set, pipeline)?;
    let test = model.discretizer().apply(test_set)?;
    let mut posts = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    test.try_for_each(|inst| {
        posts.push(model.predict_posterior(&inst.x)?);
        truth.push(inst.y);
        Ok(())
    })?;
    Ok((Metric::ZeroOne.score(&posts, &truth)?, rmse(&posts, &truth)?))
}

/// `reps` rounds of stratified `folds`-fold cross-validation. Every training
/// split is discretized and tuned on its own.
pub fn repeated_cv(
    dataset: &Dataset,
    pipeline: &PipelineConfig,
    folds: usize,
    reps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if dataset.len() < folds {
        return Err(Error::invalid(format!(
            "{} instances cannot fill {folds} folds",
            dataset.len()
        )));
    }
    let classes = dataset.classes()?;
    let n_classes = dataset.schema().n_classes();
    // (rep, fold, seed, train rows, test rows)
    type Job = (usize, usize, u64, Vec<usize>, Vec<usize>);
    let jobs: Vec<Job> = (0..reps)
        .flat_map(|rep| {
            let rep_seed = derive_seed(seed, rep as u64);
            let assignment = stratified_folds(&classes, n_classes, folds, rep_seed);
            (0..folds)
                .map(|fold| {
                    let (test, train): (Vec<usize>, Vec<usize>) =
                        (0..classes.len()).partition(|&i| assignment[i] == fold);
                    (rep, fold, derive_seed(rep_seed, fold as u64), train, test)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|(rep, fold, fold_seed, train_rows, test_rows)| {
            let start = Instant::now();
            let train_set = dataset.subset(train_rows)?;
            let test_set = dataset.subset(test_rows)?;
            for (y, &c) in train_set.class_counts().iter().enumerate() {
                if c == 0 {
                    warn!(
                        "rep {rep} fold {fold}: class '{}' absent from training data",
                        dataset.schema().class.labels[y]
                    );
                }
            }
            let (zero_one, rmse) = evaluate_split(&train_set, &test_set, &pipeline.with_seed(*fold_seed))?;
            Ok(FoldResult {
                rep: *rep,
                fold: *fold,
                seed: *fold_seed,
                train_size: train_rows.len(),
                test_size: test_rows.len(),
                zero_one,
                rmse,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        pipeline: pipeline.label(),
        folds: results,
    })
}

/// Exact two-tailed binomial sign test with success probability 1/2.
pub fn sign_test(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let tail: f64 = (wins.max(losses)..=n).map(|i| (ln_binomial(n, i) - ln2n).exp()).sum();
    (2.0 * tail).min(1.0)
}

/// Win/draw/loss tally of A against B on a lower-is-better metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Wdl {
    pub wins: u64,
    pub draws: u64,
    pub losses: u64,
}

impl Wdl {
    pub fn tally(a: &[f64], b: &[f64]) -> Wdl {
        let mut w = Wdl::default();
        for (x, y) in a.iter().zip(b) {
            if (x - y).abs() <= DRAW_TOLERANCE {
                w.draws += 1;
            } else if x < y {
                w.wins += 1;
            } else {
                w.losses += 1;
            }
        }
        w
    }

    pub fn p_value(&self) -> f64 {
        sign_test(self.wins, self.losses)
    }
}

impl std::fmt::Display for Wdl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}-{}", self.wins, self.draws, self.losses)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub dataset: String,
    pub a: EvalReport,
    pub b: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<CompareRow>,
    pub zero_one: Wdl,
    pub rmse: Wdl,
}

impl CompareReport {
    /// Mean metrics of both pipelines per dataset.
    pub fn datasets_csv(&self) -> String {
        let mut s = String::from("dataset,a_zero_one,b_zero_one,a_rmse,b_rmse\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.dataset,
                r.a.mean_zero_one(),
                r.b.mean_zero_one(),
                r.a.mean_rmse(),
                r.b.mean_rmse()
            )
            .unwrap();
        }
        s
    }

    /// W-D-L of A against B with sign-test p-values, one row per metric.
    pub fn wdl_csv(&self) -> String {
        let mut s = String::from("a,b,metric,wins,draws,losses,p_value\n");
        for (name, w) in [("zero_one", self.zero_one), ("rmse", self.rmse)] {
            writeln!(
                s,
                "{},{},{name},{},{},{},{}",
                self.label_a,
                self.label_b,
                w.wins,
                w.draws,
                w.losses,
                w.p_value()
            )
            .unwrap();
        }
        s
    }
}

/// Runs both pipelines on every dataset under the same folds and seeds.
pub fn compare(
    datasets: &[(String, Dataset)],
    a: &PipelineConfig,
    b: &PipelineConfig,
    folds: usize,
    reps: usize,
    seed: u64,
) -> Result<CompareReport> {
    if datasets.is_empty() {
        return Err(Error::invalid("comparison needs at least one dataset"));
    }
    let mut rows = Vec::with_capacity(datasets.len());
    for (name, ds) in datasets {
        rows.push(CompareRow {
            dataset: name.clone(),
            a: repeated_cv(ds, a, folds, reps, seed)?,
            b: repeated_cv(ds, b, folds, reps, seed)?,
        });
    }
    let pick = |f: fn(&EvalReport) -> f64, side_a: bool| -> Vec<f64> {
        rows.iter().map(|r| f(if side_a { &r.a } else { &r.b })).collect()
    };
    let zero_one = Wdl::tally(
        &pick(EvalReport::mean_zero_one, true),
        &pick(EvalReport::mean_zero_one, false),
    );
    let rmse = Wdl::tally(&pick(EvalReport::mean_rmse, true), &pick(EvalReport::mean_rmse, false));
    Ok(CompareReport {
        label_a: a.label(),
        label_b: b.label(),
        rows,
        zero_one,
        rmse,
    })
}

/// Seeded subsample of `fraction` of the instances, kept in file order.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("subsample fraction {fraction} not in (0, 1]")));
    }
    let n = dataset.len();
    let keep = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    rows.sort_unstable();
    dataset.subset(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_one_examples() {
        assert_eq!(zero_one_loss(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(zero_one_loss(&[1, 0], &[0, 1]).unwrap(), 1.0);
        let truth = [0u32; 10];
        let mut pred = [0u32; 10];
        pred[..3].fill(1);
        assert!((zero_one_loss(&pred, &truth).unwrap() - 0.3).abs() < 1e-15);
        assert!(zero_one_loss(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap(), 0.0);
        assert!((rmse(&vec![vec![0.5, 0.5]; 4], &[0, 1, 0, 1]).unwrap() - 0.5).abs() < 1e-15);
        let mixed = rmse(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![1.0, 0.0]], &[0, 0, 1]).unwrap();
        assert!((mixed - (1.25f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn brier_variant() {
        let v = rmse_all_classes(&[vec![0.5, 0.5]], &[0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sign_test_examples() {
        assert_eq!(sign_test(10, 10), 1.0);
        assert_eq!(sign_test(0, 0), 1.0);
        let p = sign_test(41, 23);
        assert!((p - 0.0326).abs() < 5e-4, "{p}");
        let p = sign_test(40, 28);
        assert!((p - 0.182).abs() < 1e-3, "{p}");
        assert!((sign_test(3, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn wdl_counts() {
        let w = Wdl::tally(&[0.1, 0.2, 0.3], &[0.2, 0.1, 0.4]);
        assert_eq!(w.to_string(), "2-0-1");
        let same = Wdl::tally(&[0.1, 0.2], &[0.1, 0.2]);
        assert_eq!((same.draws, same.p_value()), (2, 1.0));
    }

    #[test]
    fn folds_are_stratified_partitions() {
        let classes: Vec<u32> = (0..101).map(|i| (i % 3 == 0) as u32).collect();
        let a = stratified_folds(&classes, 2, 2, 7);
        let sizes = [
            a.iter().filter(|&&f| f == 0).count(),
            a.iter().filter(|&&f| f == 1).count(),
        ];
        assert!(sizes[0].abs_diff(sizes[1]) <= 1);
        for y in 0..2 {
            let per: Vec<usize> = (0..2)
                .map(|f| (0..101).filter(|&i| classes[i] == y && a[i] == f).count())
                .collect();
            assert!(per[0].abs_diff(per[1]) <= 1);
        }
        assert_eq!(a, stratified_folds(&classes, 2, 2, 7));
    }
}
