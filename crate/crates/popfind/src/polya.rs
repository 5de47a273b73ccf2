//! Median-zero Pólya-tree prior for the residual distribution, centered at
//! N(0, sigma^2).
//!
//! The partition is dyadic in the centering distribution: the level-m bins
//! are the intervals between the k/2^m quantiles of N(0, sigma^2). The
//! level-1 split is pinned at zero with probability exactly 1/2, which is
//! what keeps the residual median at zero; deeper splits get Beta(alpha_m,
//! alpha_m) weights with alpha_m = c * m^2. With the random distribution
//! integrated out, the joint density of a residual vector has a closed form
//! that this module evaluates as a product of sequential predictive
//! densities; only its ratio to the plain Gaussian likelihood ever enters
//! the samplers.

use rand::Rng;

use crate::stats::{normal_logpdf, sample_std_normal_truncated, std_normal_cdf, std_normal_quantile};

/// Hyperparameters of the truncated Pólya tree, plus the standardized
/// partition edges derived from the truncation depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyaTreeSpec {
    depth: usize,
    c: f64,
    sigma2: f64,
    edges_std: Vec<f64>,
}

impl PolyaTreeSpec {
    /// `depth` is the truncation level M >= 1, `c` the precision constant in
    /// alpha_m = c * m^2, and `sigma2` the centering variance.
    pub fn new(depth: usize, c: f64, sigma2: f64) -> Self {
        assert!(depth >= 1, "depth must be at least 1");
        assert!(c > 0.0, "precision constant must be positive");
        assert!(sigma2 > 0.0, "centering variance must be positive");
        Self {
            depth,
            c,
            sigma2,
            edges_std: standard_edges(depth),
        }
    }

    /// Same tree with a different centering variance. The standardized
    /// partition is unchanged; all bin boundaries scale with sigma.
    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        assert!(sigma2 > 0.0);
        Self {
            depth: self.depth,
            c: self.c,
            sigma2,
            edges_std: self.edges_std.clone(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    #[inline]
    fn alpha(&self, level: usize) -> f64 {
        self.c * (level * level) as f64
    }

    /// Lower edge of leaf `k` on the standardized (sigma = 1) scale;
    /// `edge_std(0)` is -inf and `edge_std(2^M)` is +inf.
    pub fn edge_std(&self, k: usize) -> f64 {
        self.edges_std[k]
    }

    /// Index of the depth-M bin containing `u`. Bins are left-closed: a
    /// value on a boundary joins the upper bin, so zero lands in the right
    /// half.
    #[inline]
    pub fn leaf_index(&self, u: f64) -> usize {
        let t = u / self.sigma();
        // Largest k with edge_std[k] <= t; edges are strictly increasing.
        self.edges_std.partition_point(|e| *e <= t) - 1
    }

    /// Path of branch choices from the root down to depth M for the bin
    /// containing `u` (0 = lower child, 1 = upper child).
    pub fn bin_path(&self, u: f64) -> Vec<u8> {
        let leaf = self.leaf_index(u);
        (1..=self.depth)
            .map(|m| ((leaf >> (self.depth - m)) & 1) as u8)
            .collect()
    }
}

fn standard_edges(depth: usize) -> Vec<f64> {
    let leaves = 1usize << depth;
    let mut edges: Vec<f64> = (0..=leaves)
        .map(|k| std_normal_quantile(k as f64 / leaves as f64))
        .collect();
    edges[leaves / 2] = 0.0; // pin the median boundary exactly
    edges
}

/// Residual counts per partition node, levels 1..=M, flattened so that the
/// node reached by path prefix of length m for leaf `l` sits at
/// `offset(m) + (l >> (M - m))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyaTreeCounts {
    depth: usize,
    counts: Vec<u32>,
    total: u32,
}

#[inline]
fn level_offset(m: usize) -> usize {
    (1 << m) - 2
}

impl PolyaTreeCounts {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            counts: vec![0; (1 << (depth + 1)) - 2],
            total: 0,
        }
    }

    pub fn from_residuals(spec: &PolyaTreeSpec, us: &[f64]) -> Self {
        let mut counts = Self::new(spec.depth());
        for &u in us {
            counts.add_leaf(spec.leaf_index(u));
        }
        counts
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Count at the level-m node on the path to `leaf`.
    #[inline]
    pub fn node(&self, level: usize, leaf: usize) -> u32 {
        self.counts[level_offset(level) + (leaf >> (self.depth - level))]
    }

    /// Count at the idx-th node (left to right) of one level.
    #[inline]
    pub fn node_by_index(&self, level: usize, idx: usize) -> u32 {
        self.counts[level_offset(level) + idx]
    }

    pub fn add_leaf(&mut self, leaf: usize) {
        for m in 1..=self.depth {
            self.counts[level_offset(m) + (leaf >> (self.depth - m))] += 1;
        }
        self.total += 1;
    }

    pub fn remove_leaf(&mut self, leaf: usize) {
        for m in 1..=self.depth {
            let slot = &mut self.counts[level_offset(m) + (leaf >> (self.depth - m))];
            debug_assert!(*slot > 0, "removing from an empty node");
            *slot -= 1;
        }
        self.total -= 1;
    }

    /// Checks parent/child count consistency; used by debug assertions in
    /// the samplers.
    pub fn is_consistent(&self) -> bool {
        if self.depth >= 1 {
            let lvl1 = self.counts[0] + self.counts[1];
            if lvl1 != self.total {
                return false;
            }
        }
        for m in 1..self.depth {
            for idx in 0..(1 << m) {
                let parent = self.counts[level_offset(m) + idx];
                let c0 = self.counts[level_offset(m + 1) + 2 * idx];
                let c1 = self.counts[level_offset(m + 1) + 2 * idx + 1];
                if parent != c0 + c1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Log of the product of per-level predictive factors for a residual in
/// `leaf`, given counts over the other residuals. The level-1 factor is
/// identically one because the root split is pinned at 1/2.
#[inline]
fn log_level_factors(spec: &PolyaTreeSpec, counts: &PolyaTreeCounts, leaf: usize) -> f64 {
    let mut lf = 0.0;
    for m in 2..=spec.depth() {
        let alpha = spec.alpha(m);
        let child = counts.node(m, leaf) as f64;
        let parent = counts.node(m - 1, leaf) as f64;
        lf += (2.0 * (alpha + child)).ln() - (2.0 * alpha + parent).ln();
    }
    lf
}

/// Sum of the log predictive factors over a residual sequence, folding
/// counts in sequentially. This equals the log marginal minus the Gaussian
/// log likelihood at the same sigma^2, and is the only quantity the
/// samplers' acceptance ratios need.
pub fn correction_factor(us: &[f64], spec: &PolyaTreeSpec) -> f64 {
    let mut counts = PolyaTreeCounts::new(spec.depth());
    let mut total = 0.0;
    for &u in us {
        let leaf = spec.leaf_index(u);
        total += log_level_factors(spec, &counts, leaf);
        counts.add_leaf(leaf);
    }
    total
}

/// Log of the closed-form joint density of the residual vector with the
/// random residual distribution integrated out.
pub fn marginal_loglik(us: &[f64], spec: &PolyaTreeSpec) -> f64 {
    let g0: f64 = us.iter().map(|&u| normal_logpdf(u, 0.0, spec.sigma2())).sum();
    g0 + correction_factor(us, spec)
}

/// Predictive residual distribution given fixed counts: bin masses over the
/// depth-M partition plus the truncated centering Gaussian within bins.
#[derive(Debug, Clone)]
pub struct PtPredictive {
    depth: usize,
    sigma: f64,
    sigma2: f64,
    edges_std: Vec<f64>,
    /// Predictive mass of each depth-M bin; sums to one.
    masses: Vec<f64>,
    /// cum_above[k] = sum of masses[k..].
    cum_above: Vec<f64>,
}

impl PtPredictive {
    pub fn new(spec: &PolyaTreeSpec, counts: &PolyaTreeCounts) -> Self {
        assert_eq!(spec.depth(), counts.depth());
        let leaves = spec.n_leaves();
        // Walk the tree top-down, splitting each node's mass between its
        // children in posterior-predictive proportions. Level 1 is the fixed
        // even split.
        let mut masses = vec![0.5, 0.5];
        for m in 2..=spec.depth() {
            let alpha = spec.alpha(m);
            let mut next = Vec::with_capacity(1 << m);
            for (idx, &parent_mass) in masses.iter().enumerate() {
                let parent = counts.counts[level_offset(m - 1) + idx] as f64;
                let c0 = counts.counts[level_offset(m) + 2 * idx] as f64;
                let c1 = counts.counts[level_offset(m) + 2 * idx + 1] as f64;
                let denom = 2.0 * alpha + parent;
                next.push(parent_mass * (alpha + c0) / denom);
                next.push(parent_mass * (alpha + c1) / denom);
            }
            masses = next;
        }
        debug_assert_eq!(masses.len(), leaves);
        let mut cum_above = vec![0.0; leaves + 1];
        for k in (0..leaves).rev() {
            cum_above[k] = cum_above[k + 1] + masses[k];
        }
        Self {
            depth: spec.depth(),
            sigma: spec.sigma(),
            sigma2: spec.sigma2(),
            edges_std: spec.edges_std.clone(),
            masses,
            cum_above,
        }
    }

    #[inline]
    fn leaf_index(&self, u: f64) -> usize {
        let t = u / self.sigma;
        self.edges_std.partition_point(|e| *e <= t) - 1
    }

    /// Predictive density at `u`.
    pub fn density(&self, u: f64) -> f64 {
        let leaf = self.leaf_index(u);
        let scale = (1u64 << self.depth) as f64;
        normal_logpdf(u, 0.0, self.sigma2).exp() * self.masses[leaf] * scale
    }

    /// Predictive probability of exceeding `t`.
    pub fn tail(&self, t: f64) -> f64 {
        if t == f64::NEG_INFINITY {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        let k = self.leaf_index(t);
        let frac_above = self.bin_fraction_above(k, t);
        (self.cum_above[k + 1] + self.masses[k] * frac_above).clamp(0.0, 1.0)
    }

    /// Fraction of bin k's centering mass lying above `t` (t inside bin k).
    #[inline]
    fn bin_fraction_above(&self, k: usize, t: f64) -> f64 {
        let scale = (1u64 << self.depth) as f64;
        let hi = self.edges_std[k + 1];
        let cdf_hi = if hi.is_infinite() { 1.0 } else { std_normal_cdf(hi) };
        ((cdf_hi - std_normal_cdf(t / self.sigma)) * scale).clamp(0.0, 1.0)
    }

    /// Draws a residual from the predictive restricted to (lower, inf):
    /// first a bin from the restricted bin masses, then a point from the
    /// centering Gaussian truncated to that bin's overlap with (lower, inf).
    /// The result is strictly greater than `lower`.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, lower: f64, rng: &mut R) -> f64 {
        assert!(lower < f64::INFINITY, "truncation bound must be below +inf");
        let leaves = self.masses.len();
        let k0 = if lower == f64::NEG_INFINITY { 0 } else { self.leaf_index(lower) };
        let w0 = if lower == f64::NEG_INFINITY {
            self.masses[k0]
        } else {
            self.masses[k0] * self.bin_fraction_above(k0, lower)
        };
        let total = w0 + self.cum_above[k0 + 1];
        assert!(total > 0.0, "no predictive mass above the truncation bound");
        let mut v = rng.random_range(0.0..total);
        let mut k = k0;
        let mut w = w0;
        while v >= w && k + 1 < leaves {
            v -= w;
            k += 1;
            w = self.masses[k];
        }
        let lo_std = if k == k0 && lower != f64::NEG_INFINITY {
            lower / self.sigma
        } else {
            self.edges_std[k]
        };
        let hi_std = self.edges_std[k + 1];
        let mut draw = sample_std_normal_truncated(lo_std, hi_std, rng) * self.sigma;
        while draw <= lower {
            draw = next_up(draw.max(lower));
        }
        draw
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() && x > 0.0 {
        return x;
    }
    let bits = if x == 0.0 {
        1
    } else if x > 0.0 {
        x.to_bits() + 1
    } else {
        x.to_bits() - 1
    };
    f64::from_bits(bits)
}

/// Predictive density at a point given explicit counts.
pub fn predictive_density(u: f64, counts: &PolyaTreeCounts, spec: &PolyaTreeSpec) -> f64 {
    PtPredictive::new(spec, counts).density(u)
}

/// Predictive exceedance probability P(u > t) given explicit counts.
pub fn predictive_tail(t: f64, counts: &PolyaTreeCounts, spec: &PolyaTreeSpec) -> f64 {
    PtPredictive::new(spec, counts).tail(t)
}

/// Draws from the predictive restricted to (lower, inf).
pub fn sample_truncated<R: Rng + ?Sized>(
    lower: f64,
    counts: &PolyaTreeCounts,
    spec: &PolyaTreeSpec,
    rng: &mut R,
) -> f64 {
    PtPredictive::new(spec, counts).sample_truncated(lower, rng)
}
