//! Brownian increments on the nested fine grid, coarse aggregation and
//! within-cell permutations, with deterministic per-replicate streams.
//!
//! Time is fixed to the unit interval: a grid with `n` coarse cells and
//! refinement factor `m` carries the increments `delta_w[i][k]`, each a
//! q-vector distributed N(0, 1/(n m)), and the coarse increment of cell
//! `i` is defined (not resampled) as the sum over `k`.

use crate::error::{Error, Result};
use crate::stats::inverse_normal_cdf;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// What an independent random stream is used for. Streams with
/// different purposes never collide even for equal level/replicate
/// indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    Rates,
    Noise,
    MlmcLevel,
    CltReplicate,
    Ablation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Rates => 0x52415445,
            Purpose::Noise => 0x4e4f4953,
            Purpose::MlmcLevel => 0x4d4c4d43,
            Purpose::CltReplicate => 0x434c5452,
            Purpose::Ablation => 0x41424c54,
        }
    }
}

/// Identifies one independent random stream. Equal keys reproduce the
/// bit-identical increment sequence; distinct keys give statistically
/// independent streams. Streams are derived, never split from a shared
/// generator, so results do not depend on worker count or scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub purpose: Purpose,
    pub level_index: i64,
    pub replicate_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: Purpose, level_index: i64, replicate_index: u64) -> Self {
        StreamKey {
            master_seed,
            purpose,
            level_index,
            replicate_index,
        }
    }

    /// Expand the key into a 256-bit ChaCha seed by chaining a
    /// SplitMix64 finalizer over the fields.
    fn chacha_seed(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        for field in [
            self.purpose.tag(),
            self.level_index as u64,
            self.replicate_index,
        ] {
            state = splitmix64(state ^ field.wrapping_mul(0x9E3779B97F4A7C15));
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        seed
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.chacha_seed())
    }

    /// Derive a fresh 64-bit master seed for a sub-experiment.
    pub fn derived_seed(&self) -> u64 {
        u64::from_le_bytes(self.chacha_seed()[..8].try_into().unwrap())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One uniform draw in the open interval (0, 1), 53-bit resolution.
#[inline]
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// One standard gaussian via the inverse-CDF transform.
#[inline]
pub(crate) fn standard_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    inverse_normal_cdf(open_uniform(rng))
}

/// The nested Brownian increments of one path: `n` coarse cells, each
/// refined into `m` subintervals, driving `q` noise components.
/// Storage is row-major in (cell, subinterval, component).
#[derive(Clone, Debug, PartialEq)]
pub struct FineIncrementGrid {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    delta: Vec<f64>,
}

impl FineIncrementGrid {
    /// The fine increment vector of cell `i`, subinterval `k`
    /// (0-based indices).
    #[inline]
    pub fn delta(&self, i: usize, k: usize) -> &[f64] {
        let at = (i * self.m + k) * self.q;
        &self.delta[at..at + self.q]
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    /// Coarse increments defined by exact summation over the `m`
    /// subintervals; shape (n, q) row-major. Each component is summed
    /// in ascending value order, so the result is invariant under
    /// within-cell permutations bit for bit, not just in exact
    /// arithmetic.
    pub fn coarse_increments(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.q];
        let mut scratch = Vec::with_capacity(self.m);
        for i in 0..self.n {
            let row_at = i * self.q;
            let row = &mut out[row_at..row_at + self.q];
            self.cell_sum_into(i, row, &mut scratch);
        }
        out
    }

    /// The coarse increment of cell `i`: per component, the m fine
    /// values summed in ascending value order (canonical, so every
    /// permutation of the cell yields the identical float).
    pub(crate) fn cell_sum_into(&self, i: usize, out: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(out.len(), self.q);
        scratch.resize(self.m, 0.0);
        for j in 0..self.q {
            for k in 0..self.m {
                scratch[k] = self.delta[(i * self.m + k) * self.q + j];
            }
            scratch.sort_unstable_by(|a, b| a.total_cmp(b));
            out[j] = scratch.iter().sum();
        }
    }

    /// Terminal value of the driving Brownian motion, `W_1`, as the
    /// cell-ordered sum of the coarse increments.
    pub fn terminal_w(&self) -> Vec<f64> {
        let coarse = self.coarse_increments();
        let mut w = vec![0.0; self.q];
        for i in 0..self.n {
            for (acc, &d) in w.iter_mut().zip(&coarse[i * self.q..(i + 1) * self.q]) {
                *acc += d;
            }
        }
        w
    }

    /// Apply a within-cell permutation: cell i's k-th increment of the
    /// result is the sigma(k)-th increment of `self`. The input is
    /// unchanged; the coarse increments are invariant.
    pub fn permuted(&self, sigma: &Permutation) -> Result<FineIncrementGrid> {
        if sigma.order() != self.m {
            return Err(Error::invalid(format!(
                "permutation order {} does not match grid refinement {}",
                sigma.order(),
                self.m
            )));
        }
        let mut delta = vec![0.0; self.delta.len()];
        for i in 0..self.n {
            for k in 0..self.m {
                let src = self.delta(i, sigma.image(k));
                let at = (i * self.m + k) * self.q;
                delta[at..at + self.q].copy_from_slice(src);
            }
        }
        Ok(FineIncrementGrid {
            n: self.n,
            m: self.m,
            q: self.q,
            delta,
        })
    }

    /// Iterate over cells without materializing anything extra; each
    /// item is the (i, per-cell slice of m*q values).
    pub fn cells(&self) -> impl Iterator<Item = (usize, &[f64])> {
        let stride = self.m * self.q;
        self.delta.chunks(stride).enumerate()
    }

    /// Build a grid directly from raw values (row-major (i, k, j)).
    /// Intended for tests and debugging.
    pub fn from_values(n: usize, m: usize, q: usize, delta: Vec<f64>) -> Result<Self> {
        if delta.len() != n * m * q {
            return Err(Error::invalid(format!(
                "expected {} values for a ({n}, {m}, {q}) grid, got {}",
                n * m * q,
                delta.len()
            )));
        }
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(FineIncrementGrid { n, m, q, delta })
    }
}

/// Sample the `n * m * q` independent N(0, 1/(n m)) increments of one
/// path. Deterministic given the key; repeated calls are bit-identical.
pub fn sample_grid(key: &StreamKey, n: usize, m: usize, q: usize) -> Result<FineIncrementGrid> {
    let mut grid = FineIncrementGrid {
        n: 0,
        m: 0,
        q: 0,
        delta: Vec::new(),
    };
    sample_grid_into(key, n, m, q, &mut grid)?;
    Ok(grid)
}

/// Same as [`sample_grid`] but reuses the allocation of `grid`.
pub fn sample_grid_into(
    key: &StreamKey,
    n: usize,
    m: usize,
    q: usize,
    grid: &mut FineIncrementGrid,
) -> Result<()> {
    if n < 1 {
        return Err(Error::invalid("grid needs n >= 1 coarse cells"));
    }
    if m < 2 {
        return Err(Error::invalid(
            "refinement factor must satisfy m >= 2; the antithetic construction permutes m >= 2 subintervals",
        ));
    }
    if q < 1 {
        return Err(Error::invalid("noise dimension must satisfy q >= 1"));
    }
    let std = (1.0 / (n * m) as f64).sqrt();
    let mut rng = key.rng();
    grid.n = n;
    grid.m = m;
    grid.q = q;
    grid.delta.clear();
    grid.delta.reserve(n * m * q);
    for _ in 0..n * m * q {
        grid.delta.push(std * standard_gaussian(&mut rng));
    }
    Ok(())
}

/// A permutation of {1, .., m}, applied to the m fine increments
/// within each coarse cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    images: Vec<usize>, // 0-based internally
}

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Permutation {
            images: (0..m).collect(),
        }
    }

    /// The reversal sigma(k) = m - k + 1, the scheme's default choice:
    /// it is the only strictly decreasing permutation of {1, .., m}.
    pub fn reversal(m: usize) -> Self {
        Permutation {
            images: (0..m).rev().collect(),
        }
    }

    /// Build from 1-based images, e.g. `[3, 2, 1]` for the reversal of
    /// order 3. Must be a bijection of {1, .., m}.
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        let m = images.len();
        if m == 0 {
            return Err(Error::invalid("empty permutation"));
        }
        let mut seen = vec![false; m];
        for &v in images {
            if v < 1 || v > m || seen[v - 1] {
                return Err(Error::invalid(format!(
                    "images {images:?} are not a bijection of 1..={m}"
                )));
            }
            seen[v - 1] = true;
        }
        Ok(Permutation {
            images: images.iter().map(|&v| v - 1).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.images.len()
    }

    /// sigma(k) with 0-based k, returning a 0-based image.
    #[inline]
    pub fn image(&self, k: usize) -> usize {
        self.images[k]
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(k, &v)| k == v)
    }

    pub fn one_based_images(&self) -> Vec<usize> {
        self.images.iter().map(|&v| v + 1).collect()
    }

    /// Printable cycle-free form, e.g. "(3,2,1)".
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .one_based_images()
            .iter()
            .map(|v| v.to_string())
            .collect();
        format!("({})", parts.join(","))
    }
}

/// Dump a grid as CSV rows `(i, k, j, delta)` with 1-based indices and
/// 17-significant-digit floats; the debugging interchange format.
pub fn write_grid_csv<W: std::io::Write>(grid: &FineIncrementGrid, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "i,k,j,delta")?;
    for i in 0..grid.n {
        for k in 0..grid.m {
            for (j, &v) in grid.delta(i, k).iter().enumerate() {
                writeln!(out, "{},{},{},{:.16e}", i + 1, k + 1, j + 1, v)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Accum;

    fn key(rep: u64) -> StreamKey {
        StreamKey::new(42, Purpose::Noise, 64, rep)
    }

    #[test]
    fn grid_is_deterministic_and_key_sensitive() {
        let a = sample_grid(&key(3), 4, 2, 2).unwrap();
        let b = sample_grid(&key(3), 4, 2, 2).unwrap();
        assert_eq!(a, b);
        let c = sample_grid(&key(4), 4, 2, 2).unwrap();
        assert_ne!(a, c);
        let d = sample_grid(&StreamKey::new(42, Purpose::Rates, 64, 3), 4, 2, 2).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn grid_moments_match_gaussian_law() {
        // Monte Carlo oracle: increments are N(0, 1/(n m)) with
        // n = 4, m = 2, so the variance is 1/8.
        let mut acc = Accum::default();
        let mut rep = 0;
        while acc.count() < 1_000_000 {
            let g = sample_grid(&key(rep), 4, 2, 1).unwrap();
            for &v in g.values() {
                acc.push(v);
            }
            rep += 1;
        }
        let se = acc.std_err();
        assert!(acc.mean().abs() < 4.0 * se, "mean {} se {}", acc.mean(), se);
        let var = acc.variance();
        assert!(
            (var - 0.125).abs() < 0.01 * 0.125,
            "variance {var} not within 1% of 1/8"
        );
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(sample_grid(&key(0), 0, 2, 1).is_err());
        assert!(sample_grid(&key(0), 4, 1, 1).is_err());
        assert!(sample_grid(&key(0), 4, 2, 0).is_err());
    }

    #[test]
    fn coarse_increments_sum_cells() {
        let g = FineIncrementGrid::from_values(1, 2, 1, vec![0.3, -0.1]).unwrap();
        let coarse = g.coarse_increments();
        assert_eq!(coarse.len(), 1);
        assert!((coarse[0] - 0.2).abs() < 1e-16);

        let zero = FineIncrementGrid::from_values(3, 2, 2, vec![0.0; 12]).unwrap();
        assert!(zero.coarse_increments().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permutation_constructors_and_validation() {
        let rev = Permutation::reversal(3);
        assert_eq!(rev.one_based_images(), vec![3, 2, 1]);
        assert!(Permutation::identity(4).is_identity());
        assert!(!rev.is_identity());
        assert!(Permutation::from_one_based(&[1, 1, 3]).is_err());
        assert!(Permutation::from_one_based(&[0, 1, 2]).is_err());
        assert!(Permutation::from_one_based(&[]).is_err());
        assert_eq!(rev.label(), "(3,2,1)");
    }

    #[test]
    fn permute_grid_reorders_cells() {
        // m = 3 reversal sends cell (a, b, c) to (c, b, a).
        let g = FineIncrementGrid::from_values(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p = g.permuted(&Permutation::reversal(3)).unwrap();
        assert_eq!(p.values(), &[3.0, 2.0, 1.0]);
        // Identity is a no-op; double reversal restores the input.
        assert_eq!(g.permuted(&Permutation::identity(3)).unwrap(), g);
        assert_eq!(
            p.permuted(&Permutation::reversal(3)).unwrap(),
            g,
            "reversal must be an involution"
        );
        // Order mismatch is an argument error.
        assert!(g.permuted(&Permutation::reversal(2)).is_err());
    }

    #[test]
    fn permutation_preserves_cell_multiset_and_coarse_sums() {
        let g = sample_grid(&key(11), 5, 4, 3).unwrap();
        for sigma in [
            Permutation::reversal(4),
            Permutation::from_one_based(&[2, 4, 1, 3]).unwrap(),
        ] {
            let p = g.permuted(&sigma).unwrap();
            assert_eq!(p.coarse_increments(), g.coarse_increments());
            for i in 0..g.n {
                let mut orig: Vec<Vec<u64>> = (0..g.m)
                    .map(|k| g.delta(i, k).iter().map(|v| v.to_bits()).collect())
                    .collect();
                let mut perm: Vec<Vec<u64>> = (0..g.m)
                    .map(|k| p.delta(i, k).iter().map(|v| v.to_bits()).collect())
                    .collect();
                orig.sort();
                perm.sort();
                assert_eq!(orig, perm);
            }
        }
    }

    #[test]
    fn streams_with_distinct_replicates_look_independent() {
        let n = 100_000usize;
        let a = sample_grid(&key(0), n / 2, 2, 1).unwrap();
        let b = sample_grid(&key(1), n / 2, 2, 1).unwrap();
        let entry_var = 1.0 / n as f64;
        let mut cross = 0.0;
        for (x, y) in a.values().iter().zip(b.values()) {
            cross += x * y;
        }
        let corr = cross / (n as f64 * entry_var);
        assert!(
            corr.abs() < 4.0 / (n as f64).sqrt(),
            "paired correlation {corr} too large"
        );
    }

    #[test]
    fn grid_csv_dump_shape() {
        let g = FineIncrementGrid::from_values(1, 2, 1, vec![0.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,k,j,delta");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1,1,"));
        assert!(lines[2].starts_with("1,2,1,"));
    }
}
