//! Monte Carlo estimates and the deterministic parallel accumulation driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::real::Real;

/// Paths per work unit. Chunk boundaries are fixed so partial sums are
/// combined in the same order whatever the number of worker threads.
pub const CHUNK: usize = 512;

/// Running mean and second central moment (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford<R> {
    pub n: usize,
    pub mean: R,
    pub m2: R,
}

impl<R: Real> Welford<R> {
    #[inline]
    pub fn push(&mut self, v: R) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / R::of_usize(self.n);
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&mut self, o: &Self) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let (na, nb, nn) = (R::of_usize(self.n), R::of_usize(o.n), R::of_usize(n));
        self.mean += d * nb / nn;
        self.m2 += o.m2 + d * d * na * nb / nn;
        self.n = n;
    }

    pub fn variance(&self) -> R {
        if self.n < 2 {
            R::zero()
        } else {
            (self.m2 / R::of_usize(self.n - 1)).max(R::zero())
        }
    }

    pub fn std_error(&self) -> R {
        if self.n < 2 {
            R::zero()
        } else {
            (self.variance() / R::of_usize(self.n)).sqrt()
        }
    }
}

/// Numerical settings echoed with every estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate<R> {
    pub mean: R,
    pub std_error: R,
    pub n_paths: usize,
    pub meta: EstimateMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<R: Real> MCEstimate<R> {
    pub fn from_welford(acc: &Welford<R>, meta: EstimateMeta) -> Result<Self> {
        if acc.n < 2 {
            return Err(LabError::InvalidParameter(format!(
                "an estimate needs at least 2 paths, got {}",
                acc.n
            )));
        }
        Ok(Self {
            mean: acc.mean,
            std_error: acc.std_error(),
            n_paths: acc.n,
            meta,
            warnings: Vec::new(),
        })
    }

    /// Deterministic rescaling; used for the `exp(-lambda t)` killing weight.
    pub fn scaled(&self, c: R) -> Self {
        Self {
            mean: self.mean * c,
            std_error: self.std_error * c.abs(),
            ..self.clone()
        }
    }

    pub fn with_warning(mut self, w: impl Into<String>) -> Self {
        self.warnings.push(w.into());
        self
    }

    /// `|mean - target| <= k * std_error + abs_budget`.
    pub fn agrees_with(&self, target: R, k: R, abs_budget: R) -> bool {
        (self.mean - target).abs() <= k * self.std_error + abs_budget
    }
}

/// Monte Carlo settings shared by the estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McParams<R> {
    pub n_paths: usize,
    pub dt: R,
    pub seed: u64,
}

impl<R: Real> McParams<R> {
    pub fn new(n_paths: usize, dt: R, seed: u64) -> Result<Self> {
        let p = Self { n_paths, dt, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(LabError::InvalidParameter("n_paths must be >= 2".into()));
        }
        if !(self.dt > R::zero()) || !self.dt.is_finite() {
            return Err(LabError::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn meta(&self, horizon: R) -> EstimateMeta {
        EstimateMeta {
            dt: self.dt.as_f64(),
            horizon: horizon.as_f64(),
            seed: self.seed,
        }
    }

    pub fn with_paths(self, n_paths: usize) -> Self {
        Self { n_paths, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Evaluates `f(scratch, i)` for every path index `i < n` and accumulates the
/// `K` outputs. Paths are grouped into fixed chunks that run in parallel; the
/// chunk partials are merged in index order, so the result is bit-identical
/// for any worker count.
pub fn accumulate<R, S, I, F, const K: usize>(n: usize, init: I, f: F) -> [Welford<R>; K]
where
    R: Real,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize) -> [R; K] + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<[Welford<R>; K]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = init();
            let mut acc = [Welford::default(); K];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(&mut scratch, i);
                for (a, x) in acc.iter_mut().zip(v) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = [Welford::default(); K];
    for p in &partials {
        for (t, x) in total.iter_mut().zip(p) {
            t.merge(x);
        }
    }
    total
}

/// Variant of [`accumulate`] with a run-time number of outputs per path.
pub fn accumulate_dyn<R, S, I, F>(n: usize, k: usize, init: I, f: F) -> Vec<Welford<R>>
where
    R: Real,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [R]) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Vec<Welford<R>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = init();
            let mut out = vec![R::zero(); k];
            let mut acc = vec![Welford::default(); k];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                out.iter_mut().for_each(|v| *v = R::zero());
                f(&mut scratch, i, &mut out);
                for (a, &x) in acc.iter_mut().zip(&out) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Welford::default(); k];
    for p in &partials {
        for (t, x) in total.iter_mut().zip(p) {
            t.merge(x);
        }
    }
    total
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`. Sorts its inputs.
pub fn ks_statistic<R: Real>(a: &mut [R], b: &mut [R]) -> R {
    assert!(!a.is_empty() && !b.is_empty(), "KS statistic needs non-empty samples");
    a.sort_by(|x, y| x.partial_cmp(y).expect("NaN in KS sample"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("NaN in KS sample"));
    let (na, nb) = (R::of_usize(a.len()), R::of_usize(b.len()));
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = R::zero();
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((R::of_usize(i) / na - R::of_usize(j) / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at significance `level`.
pub fn ks_critical_value(n: usize, m: usize, level: f64) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn median<R: Real>(values: &[R]) -> R {
    if values.is_empty() {
        return R::zero();
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / R::of(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_relative_eq!(w.mean, mean, epsilon = 1e-12);
        assert_relative_eq!(w.variance(), var, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn merge_equals_sequential(xs in prop::collection::vec(-100.0f64..100.0, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut all = Welford::default();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (Welford::default(), Welford::default());
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.n, all.n);
            prop_assert!((a.mean - all.mean).abs() < 1e-9);
            prop_assert!((a.m2 - all.m2).abs() < 1e-6 * (1.0 + all.m2.abs()));
        }
    }

    #[test]
    fn accumulate_is_worker_count_independent() {
        let f = |_: &mut (), i: usize| [((i * 7919) % 1009) as f64 / 1009.0, i as f64];
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| accumulate(5000, || (), f))
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a[0].mean.to_bits(), b[0].mean.to_bits());
        assert_eq!(a[0].m2.to_bits(), b[0].m2.to_bits());
        assert_eq!(a[1].n, 5000);
    }

    #[test]
    fn estimate_needs_two_paths() {
        let mut w = Welford::<f64>::default();
        w.push(1.0);
        let meta = EstimateMeta { dt: 0.1, horizon: 1.0, seed: 0 };
        assert!(MCEstimate::from_welford(&w, meta).is_err());
        w.push(3.0);
        let e = MCEstimate::from_welford(&w, meta).unwrap();
        assert_relative_eq!(e.mean, 2.0);
        assert_relative_eq!(e.std_error, 1.0);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = vec![1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&mut a, &mut b), 0.0);
        let mut c = vec![10.0, 11.0];
        assert_eq!(ks_statistic(&mut a, &mut c), 1.0);
        // ties across samples are resolved jointly
        let mut d = vec![0.0, 0.0, 0.0, 1.0];
        let mut e = vec![0.0, 0.0, 1.0, 1.0];
        assert_relative_eq!(ks_statistic(&mut d, &mut e), 0.25);
    }

    #[test]
    fn ks_critical_value_table() {
        // c(0.01) = 1.6276 for the two-sample statistic
        let c = ks_critical_value(10_000, 10_000, 0.01);
        assert_relative_eq!(c, 1.627_624 * (2.0f64 / 10_000.0).sqrt(), epsilon = 1e-6);
    }
}
