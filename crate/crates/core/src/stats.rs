//! Statistical utilities: deterministic parallel accumulation,
//! normal-distribution transforms, Kolmogorov-Smirnov tests and
//! log-log regression.

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::ops::Range;

/// Fixed chunk size for parallel replicate loops. Partial results are
/// produced per chunk and merged in chunk order, so totals do not
/// depend on thread count or scheduling.
pub const CHUNK: u64 = 256;

/// Split `0..total` into consecutive ranges of at most `chunk` items.
pub fn chunk_ranges(total: u64, chunk: u64) -> Vec<Range<u64>> {
    assert!(chunk > 0);
    let mut out = Vec::with_capacity(((total + chunk - 1) / chunk) as usize);
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        out.push(start..end);
        start = end;
    }
    out
}

/// Run `f` over fixed chunks of `0..total` in parallel and return the
/// per-chunk results in chunk order.
pub fn par_chunked<A, F>(total: u64, f: F) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(Range<u64>) -> Result<A> + Sync + Send,
{
    chunk_ranges(total, CHUNK).into_par_iter().map(f).collect()
}

/// Streaming mean/variance accumulator (Welford) with an exact merge,
/// so chunked parallel accumulation reproduces the sequential result
/// up to the fixed merge order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accum {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accum {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accum) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n;
        self.n += other.n;
    }

    pub fn merge_in_order<'a>(parts: impl IntoIterator<Item = &'a Accum>) -> Accum {
        let mut total = Accum::default();
        for p in parts {
            total.merge(p);
        }
        total
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (ddof = 1); zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Multivariate Welford accumulator: means and the full cross-moment
/// matrix of a fixed-length observation vector. Merging is exact, so
/// chunked accumulation stays deterministic.
#[derive(Clone, Debug)]
pub struct CoAccum {
    dim: usize,
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    delta: Vec<f64>,
}

impl CoAccum {
    pub fn new(dim: usize) -> Self {
        CoAccum {
            dim,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            delta: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for a in 0..self.dim {
            self.delta[a] = x[a] - self.mean[a];
            self.mean[a] += self.delta[a] * inv;
        }
        for a in 0..self.dim {
            let row = a * self.dim;
            for b in 0..self.dim {
                self.m2[row + b] += self.delta[a] * (x[b] - self.mean[b]);
            }
        }
    }

    pub fn merge(&mut self, other: &CoAccum) {
        assert_eq!(self.dim, other.dim);
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            self.n = other.n;
            self.mean.copy_from_slice(&other.mean);
            self.m2.copy_from_slice(&other.m2);
            return;
        }
        let n = (self.n + other.n) as f64;
        let w = self.n as f64 * other.n as f64 / n;
        for a in 0..self.dim {
            self.delta[a] = other.mean[a] - self.mean[a];
        }
        for a in 0..self.dim {
            let row = a * self.dim;
            for b in 0..self.dim {
                self.m2[row + b] += other.m2[row + b] + self.delta[a] * self.delta[b] * w;
            }
            self.mean[a] += self.delta[a] * other.n as f64 / n;
        }
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self, a: usize) -> f64 {
        self.mean[a]
    }

    /// Sample covariance (ddof = 1).
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2[a * self.dim + b] / (self.n - 1) as f64
        }
    }

    pub fn variance(&self, a: usize) -> f64 {
        self.covariance(a, a)
    }
}

/// Inverse of the standard normal CDF (Wichura's PPND16 rational
/// approximations, accurate to full double precision). This is the
/// transform turning counter-based uniforms into gaussians; it is a
/// pure function of `p`, so a path's increments depend only on its
/// stream, never on scheduling.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_1e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_6;
        let den = ((((((5.226_495_278_852_854_6e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751_1e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_8e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::standard().cdf(x)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(lambda) = P(sup|B(t)| > lambda)`.
/// Small arguments use the theta-series form of the CDF; large ones
/// the alternating-series form of the survival function. Both branches
/// converge to machine precision in a handful of terms.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let t = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in (1..20).step_by(2) {
            let term = (-t * (k * k) as f64).exp();
            cdf += term;
            if term < 1e-300 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = -2.0 * lambda * lambda;
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..100 {
            let term = sign * (x * (k * k) as f64).exp();
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sided one-sample Kolmogorov-Smirnov test against the standard
/// normal law, with no parameter estimation: under an exact N(0, 1)
/// null the p-value is uniform.
pub fn ks_against_standard_normal(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 20 {
        return Err(Error::invalid(format!(
            "the KS test needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    let mut z = samples.to_vec();
    z.sort_by(|a, b| a.total_cmp(b));
    let n = z.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in z.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
    }
    let p = kolmogorov_survival(n.sqrt() * d);
    Ok((d, p))
}

/// Two-sided Kolmogorov-Smirnov test of normality.
///
/// Samples are standardized by their empirical mean and (ddof = 1)
/// standard deviation, then compared against the standard normal CDF.
/// The p-value uses the asymptotic Kolmogorov distribution and is
/// conservative (estimating the parameters can only improve the fit);
/// with fewer than ~100 samples treat it as indicative.
pub fn ks_normality(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 20 {
        return Err(Error::invalid(format!(
            "ks_normality needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    let mut acc = Accum::default();
    for &x in samples {
        acc.push(x);
    }
    let sd = acc.std_dev();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::DegenerateSample(
            "zero variance sample in ks_normality".into(),
        ));
    }
    let z: Vec<f64> = samples.iter().map(|&x| (x - acc.mean()) / sd).collect();
    ks_against_standard_normal(&z)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("ks_two_sample needs two nonempty samples"));
    }
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|u, v| u.total_cmp(v));
    ys.sort_by(|u, v| u.total_cmp(v));
    let (na, nb) = (xs.len(), ys.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while ia < na && ib < nb {
        let t = xs[ia].min(ys[ib]);
        while ia < na && xs[ia] <= t {
            ia += 1;
        }
        while ib < nb && ys[ib] <= t {
            ib += 1;
        }
        d = d.max((ia as f64 / na as f64 - ib as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok((d, kolmogorov_survival(n_eff.sqrt() * d)))
}

/// Ordinary least squares fit of `log y` against `log x`.
/// Returns the slope and its standard error.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::invalid("loglog_slope needs at least 3 points"));
    }
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 {
            return Err(Error::invalid(format!(
                "loglog_slope needs positive coordinates, got ({x}, {y})"
            )));
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("loglog_slope needs distinct x values"));
    }
    let sxy: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = (ss_res / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}
