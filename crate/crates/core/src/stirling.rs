//! Log-space unsigned Stirling numbers of the first kind.
//!
//! `S(n, t)` counts the permutations of `n` elements with exactly `t` cycles.
//! They weight the number of tables `t` that `n` customers occupy in a
//! Chinese restaurant, and overflow `f64` near `n = 170`, so every value here
//! is stored as a natural logarithm.
//!
//! [`StirlingCache`] is a dense triangular table shared read-only by every
//! context tree of a model. Rows beyond its capacity are served by
//! [`StirlingLookup`], a per-tree overlay that computes truncated rows on
//! demand.

use std::collections::BTreeMap;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest dense row built when sizing a cache from data.
pub const DEFAULT_DENSE_LIMIT: usize = 2048;

/// Numerically stable `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Dense triangular table of `ln S(n, t)` for `0 <= t <= n <= max_n`.
///
/// The table is immutable once built. Growing it requires `&mut self`, so the
/// borrow checker enforces the exclusive-access contract: grow during setup,
/// then share `&StirlingCache` (or an `Arc`) across sampling threads.
#[derive(Clone, Debug, PartialEq)]
pub struct StirlingCache {
    max_n: usize,
    table: Vec<f64>,
}

#[inline]
fn row_offset(n: usize) -> usize {
    n * (n + 1) / 2
}

impl StirlingCache {
    pub fn new(max_n: usize) -> Self {
        let mut cache = StirlingCache {
            max_n: 0,
            table: vec![0.0],
        };
        cache.extend_to(max_n);
        cache
    }

    /// Largest `n` held by the table.
    pub fn max_n(&self) -> usize {
        self.max_n
    }

    /// `ln S(n, t)`. Zero entries (`t = 0 < n` or `t > n`) are `-inf`.
    pub fn log_stirling(&self, n: usize, t: usize) -> Result<f64> {
        if n > self.max_n {
            return Err(Error::Capacity { n, max_n: self.max_n });
        }
        Ok(self.get(n, t))
    }

    /// Unchecked variant of [`log_stirling`](Self::log_stirling); panics when
    /// `n` exceeds the capacity.
    #[inline]
    pub fn get(&self, n: usize, t: usize) -> f64 {
        if t > n {
            return f64::NEG_INFINITY;
        }
        self.table[row_offset(n) + t]
    }

    /// Grows geometrically so that `n` fits. Returns whether a rebuild happened.
    pub fn ensure(&mut self, n: usize) -> bool {
        if n <= self.max_n {
            return false;
        }
        let target = n.max(self.max_n.saturating_mul(2));
        self.extend_to(target);
        true
    }

    fn extend_to(&mut self, max_n: usize) {
        if max_n <= self.max_n {
            return;
        }
        self.table.reserve(row_offset(max_n + 1) - self.table.len());
        for n in self.max_n..max_n {
            // Row n + 1 from row n: S(n+1, t) = n S(n, t) + S(n, t-1).
            let prev = row_offset(n);
            let ln_n = (n as f64).ln();
            self.table.push(f64::NEG_INFINITY);
            for t in 1..=n + 1 {
                let stay = if t <= n {
                    self.table[prev + t] + ln_n
                } else {
                    f64::NEG_INFINITY
                };
                let open = self.table[prev + t - 1];
                self.table.push(log_add_exp(stay, open));
            }
        }
        self.max_n = max_n;
    }
}

/// `ln(alpha (alpha + 1) ... (alpha + n - 1))`; zero for `n = 0`.
pub fn log_rising_factorial(alpha: f64, n: usize) -> f64 {
    if n <= 24 {
        return (0..n).map(|j| (alpha + j as f64).ln()).sum();
    }
    let nf = n as f64;
    if alpha >= 1e4 {
        // Difference of Stirling series, arranged so nothing cancels when
        // alpha dwarfs n.
        let z = alpha + nf;
        return nf * z.ln() + (alpha - 0.5) * (nf / alpha).ln_1p() - nf + (1.0 / z - 1.0 / alpha) / 12.0
            - (1.0 / (z * z * z) - 1.0 / (alpha * alpha * alpha)) / 360.0;
    }
    ln_gamma(alpha + nf) - ln_gamma(alpha)
}

/// Log-probability of `t` tables under the Chinese restaurant distribution
/// with `n` customers and concentration `alpha`:
/// `Gamma(alpha) / Gamma(alpha + n) * alpha^t * S(n, t)`.
pub fn crd_log_prob(cache: &StirlingCache, t: usize, n: usize, alpha: f64) -> Result<f64> {
    if n > cache.max_n() {
        return Err(Error::Capacity {
            n,
            max_n: cache.max_n(),
        });
    }
    if t > n || (t == 0 && n > 0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(t as f64 * alpha.ln() + cache.get(n, t) - log_rising_factorial(alpha, n))
}

/// `ln S(n, t)` for `t in 0..=t_max` and a single, possibly very large, `n`.
///
/// Uses `S(n, t) = (n-1)! e_{t-1}(1, 1/2, ..., 1/(n-1))` where `e_m` is the
/// elementary symmetric polynomial. Each `e_m` is carried scaled by
/// `m! / H^m` (with `H` the harmonic number) which keeps the recursion inside
/// `[0, 1]`. Cost is `O(n * t_max)`.
pub fn large_row(n: usize, t_max: usize) -> Vec<f64> {
    let t_max = t_max.min(n);
    let mut row = vec![f64::NEG_INFINITY; t_max + 1];
    if n == 0 {
        row[0] = 0.0;
        return row;
    }
    if t_max == 0 {
        return row;
    }
    let degree = t_max - 1;
    let harmonic: f64 = (1..n).map(|j| 1.0 / j as f64).sum();
    let mut scaled = vec![0.0f64; degree + 1];
    scaled[0] = 1.0;
    if n > 1 {
        let ratio: Vec<f64> = (0..=degree).map(|m| m as f64 / harmonic).collect();
        for j in 1..n {
            let inv_j = 1.0 / j as f64;
            let top = degree.min(j);
            for m in (1..=top).rev() {
                scaled[m] += scaled[m - 1] * ratio[m] * inv_j;
            }
        }
    }
    let ln_fact = ln_gamma(n as f64);
    let ln_h = if n > 1 { harmonic.ln() } else { 0.0 };
    for (t, cell) in row.iter_mut().enumerate().take(t_max + 1).skip(1) {
        let m = t - 1;
        let value = scaled[m];
        *cell = if value > 0.0 {
            ln_fact + value.ln() + m as f64 * ln_h - ln_gamma(t as f64)
        } else {
            f64::NEG_INFINITY
        };
    }
    row
}

/// Overflow rows within this distance above a known row are derived from
/// it with the recurrence instead of from scratch.
const STEP_LIMIT: usize = 256;

/// Overflow rows kept before the memo is flushed.
const MAX_WIDE_ROWS: usize = 4096;

/// Per-tree view over a shared [`StirlingCache`], serving rows past its
/// capacity from lazily computed truncated rows.
#[derive(Debug)]
pub struct StirlingLookup<'a> {
    dense: &'a StirlingCache,
    wide: BTreeMap<usize, Vec<f64>>,
}

impl<'a> StirlingLookup<'a> {
    pub fn new(dense: &'a StirlingCache) -> Self {
        StirlingLookup {
            dense,
            wide: BTreeMap::new(),
        }
    }

    pub fn dense(&self) -> &StirlingCache {
        self.dense
    }

    /// `ln S(n, t)`, computing an overflow row when `n` is past the dense table.
    pub fn log_s(&mut self, n: usize, t: usize) -> f64 {
        if n <= self.dense.max_n() {
            return self.dense.get(n, t);
        }
        if t > n {
            return f64::NEG_INFINITY;
        }
        if let Some(row) = self.wide.get(&n) {
            if t < row.len() {
                return row[t];
            }
        }
        let row = self.build_row(n, t);
        let value = row[t];
        if self.wide.len() >= MAX_WIDE_ROWS {
            self.wide.clear();
        }
        self.wide.insert(n, row);
        value
    }

    fn build_row(&self, n: usize, t: usize) -> Vec<f64> {
        let low = n.saturating_sub(STEP_LIMIT);
        let base = self
            .wide
            .range(low..n)
            .rev()
            .find(|(_, row)| row.len() > t)
            .map(|(&m, row)| (m, row.clone()));
        let base = base.or_else(|| {
            let m = self.dense.max_n();
            (m >= low && m >= t).then(|| {
                let width = (2 * t).max(64).min(m) + 1;
                (m, (0..width).map(|j| self.dense.get(m, j)).collect())
            })
        });
        match base {
            Some((m, mut row)) => {
                for k in m..n {
                    // Row k + 1 from row k, truncated to the base width.
                    let ln_k = (k as f64).ln();
                    for j in (1..row.len()).rev() {
                        row[j] = log_add_exp(row[j] + ln_k, row[j - 1]);
                    }
                    row[0] = f64::NEG_INFINITY;
                }
                row
            }
            None => large_row(n, (2 * t).max(64).min(n)),
        }
    }

    /// Number of overflow rows currently memoized.
    pub fn overflow_rows(&self) -> usize {
        self.wide.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integer table from the recurrence, independent of the log path.
    fn exact(max_n: usize) -> Vec<Vec<u128>> {
        let mut s = vec![vec![0u128; max_n + 1]; max_n + 1];
        s[0][0] = 1;
        for n in 0..max_n {
            for t in 1..=n + 1 {
                s[n + 1][t] = n as u128 * s[n][t] + s[n][t - 1];
            }
        }
        s
    }

    #[test]
    fn diagonal_is_one() {
        let cache = StirlingCache::new(300);
        for n in 0..=300 {
            assert_eq!(cache.log_stirling(n, n).unwrap(), 0.0);
        }
    }

    #[test]
    fn known_values() {
        let cache = StirlingCache::new(10);
        assert!((cache.log_stirling(4, 1).unwrap() - 6f64.ln()).abs() < 1e-14);
        assert!((cache.log_stirling(3, 2).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert_eq!(cache.log_stirling(5, 0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(cache.log_stirling(3, 7).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn matches_exact_integers() {
        let s = exact(30);
        let cache = StirlingCache::new(30);
        for n in 1..=30 {
            for t in 1..=n {
                let want = (s[n][t] as f64).ln();
                let got = cache.get(n, t);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "S({n},{t})");
            }
        }
    }

    #[test]
    fn capacity_error() {
        let cache = StirlingCache::new(5);
        assert!(matches!(
            cache.log_stirling(6, 1),
            Err(Error::Capacity { n: 6, max_n: 5 })
        ));
    }

    #[test]
    fn growth_matches_fresh_build() {
        let mut grown = StirlingCache::new(10);
        assert!(grown.ensure(50));
        assert!(grown.max_n() >= 50);
        let fresh = StirlingCache::new(grown.max_n());
        assert_eq!(grown, fresh);
        assert!(!grown.ensure(12));
    }

    #[test]
    fn recurrence_in_exp_space() {
        let cache = StirlingCache::new(120);
        for n in 1..120 {
            for t in 1..=n {
                let lhs = cache.get(n + 1, t);
                let rhs = log_add_exp((n as f64).ln() + cache.get(n, t), cache.get(n, t - 1));
                assert!(((lhs - rhs).exp() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rising_factorial_values() {
        assert_eq!(log_rising_factorial(3.7, 0), 0.0);
        assert!((log_rising_factorial(2.0, 3) - 24f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn crd_small_cases() {
        let cache = StirlingCache::new(10);
        for &alpha in &[0.1, 1.0, 10.0] {
            assert!(crd_log_prob(&cache, 1, 1, alpha).unwrap().abs() < 1e-14);
        }
        let p1 = crd_log_prob(&cache, 1, 2, 1.0).unwrap().exp();
        let p2 = crd_log_prob(&cache, 2, 2, 1.0).unwrap().exp();
        assert!((p1 - 0.5).abs() < 1e-14 && (p2 - 0.5).abs() < 1e-14);
        assert_eq!(crd_log_prob(&cache, 0, 3, 1.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(crd_log_prob(&cache, 4, 3, 1.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn large_row_agrees_with_dense() {
        let cache = StirlingCache::new(400);
        for &n in &[1usize, 2, 7, 150, 400] {
            let row = large_row(n, 40);
            for (t, &v) in row.iter().enumerate() {
                let want = cache.get(n, t);
                if want == f64::NEG_INFINITY {
                    assert_eq!(v, want);
                } else {
                    assert!((v - want).abs() <= 1e-10 * want.abs().max(1.0), "n={n} t={t}");
                }
            }
        }
    }

    #[test]
    fn lookup_switches_to_overflow_rows() {
        let small = StirlingCache::new(50);
        let big = StirlingCache::new(300);
        let mut lookup = StirlingLookup::new(&small);
        for &(n, t) in &[(10, 3), (200, 5), (200, 90), (300, 1)] {
            let want = big.get(n, t);
            let got = lookup.log_s(n, t);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        assert_eq!(lookup.overflow_rows(), 2);
    }

    #[test]
    fn stepped_rows_match_dense() {
        let small = StirlingCache::new(100);
        let big = StirlingCache::new(1200);
        let mut lookup = StirlingLookup::new(&small);
        // 150 steps off the dense edge, then 990 starts from scratch and
        // 1000..1010 step from it.
        for &(n, t) in &[(150, 3), (151, 40), (990, 7), (1000, 7), (1010, 30), (1010, 2)] {
            let want = big.get(n, t);
            let got = lookup.log_s(n, t);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "n={n} t={t}");
        }
    }

    #[test]
    fn rising_factorial_large_alpha() {
        for &alpha in &[1e4, 3.7e6, 1e12] {
            for &n in &[25usize, 300, 5000] {
                let want: f64 = (0..n).map(|j| (alpha + j as f64).ln()).sum();
                let got = log_rising_factorial(alpha, n);
                assert!((got - want).abs() <= 1e-12 * want.abs(), "alpha={alpha} n={n}");
            }
        }
    }
}
