//! Neighborhood geometry: which key/value pixels each query attends to,
//! and how a (query, neighbor) pair indexes the relative positional bias
//! table.
//!
//! A query's window on one axis is the contiguous run of `min(L, n)`
//! indices nearest to it. Interior queries are centered; queries near a
//! border keep the same window length by sliding (clamping) the window
//! inward instead of shrinking it, so the receptive field is identical for
//! every query. When `L >= n` the window is the whole axis and the
//! mechanism degenerates to ordinary self attention.

use crate::error::{Error, Result};

/// Attention neighborhood configuration: the per-axis window extent `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    kernel: usize,
}

impl NeighborhoodSpec {
    /// `kernel` must be odd and at least 3.
    pub fn new(kernel: usize) -> Result<Self> {
        if kernel < 3 || kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "neighborhood kernel must be an odd integer >= 3, got {kernel}"
            )));
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Half-width `(L - 1) / 2`.
    pub fn radius(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Side length of the (square) relative bias table, `2L - 1`.
    pub fn bias_extent(&self) -> usize {
        2 * self.kernel - 1
    }
}

/// One axis of a query's window: first index and effective length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub start: usize,
    pub len: usize,
}

/// Window of query `i` on an axis of extent `n`.
///
/// If `L >= n` the window covers the axis. Otherwise it has exactly `L`
/// entries, centered when `i` has at least `(L-1)/2` slack on both sides
/// and clamped to the border otherwise. The query always lies inside.
pub fn window_start(i: usize, n: usize, spec: NeighborhoodSpec) -> Result<WindowGeometry> {
    if i >= n {
        return Err(Error::Index(format!(
            "query index {i} outside axis of extent {n}"
        )));
    }
    let kernel = spec.kernel();
    if kernel >= n {
        return Ok(WindowGeometry { start: 0, len: n });
    }
    let start = i.saturating_sub(spec.radius()).min(n - kernel);
    Ok(WindowGeometry { start, len: kernel })
}

/// Neighbor pixel coordinates for query `(i, j)` on an `H x W` map, as the
/// row-major Cartesian product of the two axis windows. Cardinality is
/// `min(L, H) * min(L, W)`, equal to `L^2` whenever the kernel fits.
pub fn neighborhood_indices(
    i: usize,
    j: usize,
    height: usize,
    width: usize,
    spec: NeighborhoodSpec,
) -> Result<Vec<(usize, usize)>> {
    let rows = window_start(i, height, spec)?;
    let cols = window_start(j, width, spec)?;
    let mut out = Vec::with_capacity(rows.len * cols.len);
    for pi in rows.start..rows.start + rows.len {
        for pj in cols.start..cols.start + cols.len {
            out.push((pi, pj));
        }
    }
    Ok(out)
}

/// Index of neighbor `p` relative to query `i` into one axis of the bias
/// table: `(p - i) + (L - 1)`, spanning `0..=2L-2` over all legal pairs.
pub fn rel_bias_index(i: usize, p: usize, spec: NeighborhoodSpec) -> Result<usize> {
    let offset = p as isize - i as isize;
    let half = (spec.kernel() - 1) as isize;
    if offset < -half || offset > half {
        return Err(Error::Index(format!(
            "neighbor {p} lies outside the window of query {i} for kernel {}",
            spec.kernel()
        )));
    }
    Ok((offset + half) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kernel: usize) -> NeighborhoodSpec {
        NeighborhoodSpec::new(kernel).unwrap()
    }

    #[test]
    fn kernel_must_be_odd_and_at_least_three() {
        assert!(NeighborhoodSpec::new(1).is_err());
        assert!(NeighborhoodSpec::new(4).is_err());
        assert!(NeighborhoodSpec::new(0).is_err());
        assert!(NeighborhoodSpec::new(3).is_ok());
        assert!(NeighborhoodSpec::new(7).is_ok());
    }

    #[test]
    fn window_start_examples() {
        let s = spec(3);
        assert_eq!(window_start(0, 7, s).unwrap(), WindowGeometry { start: 0, len: 3 });
        assert_eq!(window_start(3, 7, s).unwrap(), WindowGeometry { start: 2, len: 3 });
        assert_eq!(window_start(6, 7, s).unwrap(), WindowGeometry { start: 4, len: 3 });
        // Kernel exceeding the axis covers it entirely.
        assert_eq!(window_start(2, 5, spec(7)).unwrap(), WindowGeometry { start: 0, len: 5 });
    }

    #[test]
    fn window_start_rejects_out_of_range_query() {
        assert!(window_start(7, 7, spec(3)).is_err());
    }

    #[test]
    fn neighborhood_indices_examples() {
        let s = spec(3);
        // A 3x3 map is fully covered for every query.
        let all: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        assert_eq!(neighborhood_indices(0, 0, 3, 3, s).unwrap(), all);

        // Centered interior query.
        let centered = neighborhood_indices(2, 2, 5, 5, s).unwrap();
        let expect: Vec<(usize, usize)> =
            (1..4).flat_map(|i| (1..4).map(move |j| (i, j))).collect();
        assert_eq!(centered, expect);

        // Corner query keeps 9 neighbors but is not centered among them.
        let corner = neighborhood_indices(4, 0, 5, 5, s).unwrap();
        let expect: Vec<(usize, usize)> =
            (2..5).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        assert_eq!(corner, expect);
        assert!(corner.contains(&(4, 0)));
    }

    #[test]
    fn rel_bias_index_examples() {
        let s = spec(3);
        assert_eq!(rel_bias_index(0, 2, s).unwrap(), 4);
        assert_eq!(rel_bias_index(3, 2, s).unwrap(), 1);
        assert_eq!(rel_bias_index(9, 7, s).unwrap(), 0);
        assert!(rel_bias_index(0, 3, s).is_err());
    }

    #[test]
    fn rel_bias_index_image_is_full_range() {
        // Over all legal (i, p) pairs on an axis of extent >= L the image
        // is exactly {0, .., 2L-2}.
        for kernel in [3usize, 5, 7] {
            let s = spec(kernel);
            let n = kernel + 4;
            let mut seen = vec![false; 2 * kernel - 1];
            for i in 0..n {
                let w = window_start(i, n, s).unwrap();
                for p in w.start..w.start + w.len {
                    seen[rel_bias_index(i, p, s).unwrap()] = true;
                }
            }
            assert!(seen.iter().all(|&b| b), "kernel {kernel}");
        }
    }

    proptest! {
        #[test]
        fn window_properties(
            kernel_half in 1usize..6,
            n in 1usize..40,
            seed in 0usize..1000,
        ) {
            let kernel = 2 * kernel_half + 1;
            let s = spec(kernel);
            let i = seed % n;
            let w = window_start(i, n, s).unwrap();
            // Query membership and contiguity bounds.
            prop_assert!(w.start <= i && i < w.start + w.len);
            prop_assert_eq!(w.len, kernel.min(n));
            prop_assert!(w.start + w.len <= n);
            // Receptive-field constancy / degeneracy to full attention.
            if kernel >= n {
                prop_assert_eq!(w.start, 0);
                prop_assert_eq!(w.len, n);
            }
            // Monotonicity of start in the query index.
            if i + 1 < n {
                let next = window_start(i + 1, n, s).unwrap();
                prop_assert!(next.start >= w.start);
            }
        }

        #[test]
        fn translation_covariance_for_interior_queries(
            kernel_half in 1usize..4,
            d in 0usize..4,
            e in 0usize..4,
        ) {
            let kernel = 2 * kernel_half + 1;
            let s = spec(kernel);
            let (h, w) = (16usize, 14usize);
            let (i, j) = (kernel_half + 2, kernel_half + 3);
            prop_assume!(i + d + kernel_half < h && j + e + kernel_half < w);
            let base = neighborhood_indices(i, j, h, w, s).unwrap();
            let moved = neighborhood_indices(i + d, j + e, h, w, s).unwrap();
            let shifted: Vec<(usize, usize)> =
                base.iter().map(|&(pi, pj)| (pi + d, pj + e)).collect();
            prop_assert_eq!(moved, shifted);
        }
    }
}
