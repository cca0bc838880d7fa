//! Quantile histogram bins.
//!
//! Edges are strictly increasing thresholds. A value `x` falls in bin
//! `#{edges < x}`, so a value equal to an edge lands in the lower bin and the
//! test `bin(x) > b` is exactly `x > edges[b]`.

/// Midpoint of two distinct values that still separates them after rounding
/// to `f32`.
fn separating_midpoint(lo: f32, hi: f32) -> f32 {
    let mid = ((f64::from(lo) + f64::from(hi)) / 2.0) as f32;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Bin edges for one feature column.
///
/// With at most `n_bins` distinct values every gap between neighbours gets an
/// edge. Otherwise the edges sit at the `i/n_bins` quantiles.
pub fn compute_bin_edges(column: &[f32], n_bins: usize) -> Vec<f32> {
    let mut sorted: Vec<f32> = column.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f32::total_cmp);
    let mut unique = sorted.clone();
    unique.dedup();

    let mut edges: Vec<f32> = if unique.len() <= n_bins {
        unique
            .windows(2)
            .map(|w| separating_midpoint(w[0], w[1]))
            .collect()
    } else {
        // Each quantile value closes its bin (ties go low); the maximum
        // instead opens the last bin.
        let n = sorted.len();
        (1..n_bins)
            .map(|i| {
                let q = sorted[(i * n / n_bins).min(n - 1)];
                let k = unique.partition_point(|&u| u < q);
                if k + 1 < unique.len() {
                    separating_midpoint(unique[k], unique[k + 1])
                } else {
                    separating_midpoint(unique[k - 1], unique[k])
                }
            })
            .collect()
    };
    edges.dedup();
    edges
}

#[inline]
pub fn bin_index(edges: &[f32], x: f32) -> usize {
    edges.partition_point(|&e| e < x)
}
