use serde::{Deserialize, Serialize};

use super::binning::{bin_index, compute_bin_edges};
use super::{Dataset, GbdtError, GbdtModel, GbdtParams, ObliviousTree, Result, Split};
use crate::par;

/// Rows per partial histogram. Fixed so that the floating-point merge order,
/// and therefore the model bytes, do not depend on the thread count.
const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training MSE before the first tree and after every stage.
    pub train_mse: Vec<f64>,
    /// Validation MSE at the same points; empty without a validation split.
    pub val_mse: Vec<f64>,
    pub trees_built: usize,
    pub trees_kept: usize,
    pub stopped_early: bool,
}

struct Binned {
    bins: Vec<u16>,
    n_features: usize,
}

impl Binned {
    fn new(data: &Dataset, edges: &[Vec<f32>]) -> Binned {
        let bins = data
            .rows()
            .flat_map(|row| row.iter().zip(edges).map(|(&x, e)| bin_index(e, x) as u16))
            .collect();
        Binned {
            bins,
            n_features: data.n_features,
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[u16] {
        &self.bins[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Per-node, per-feature, per-bin residual sums and counts.
struct Histogram {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

struct Layout {
    n_features: usize,
    n_bins: usize,
}

impl Layout {
    #[inline]
    fn slot(&self, node: usize, feature: usize, bin: usize) -> usize {
        (node * self.n_features + feature) * self.n_bins + bin
    }
}

fn build_histogram(
    binned: &Binned,
    residuals: &[f64],
    nodes: &[u32],
    n_nodes: usize,
    layout: &Layout,
) -> Histogram {
    let size = n_nodes * layout.n_features * layout.n_bins;
    let ranges: Vec<(usize, usize)> = (0..residuals.len())
        .step_by(CHUNK_ROWS)
        .map(|s| (s, (s + CHUNK_ROWS).min(residuals.len())))
        .collect();
    let partials = par::map(&ranges, |&(start, end)| {
        let mut h = Histogram {
            sums: vec![0.0; size],
            counts: vec![0; size],
        };
        for i in start..end {
            let node = nodes[i] as usize;
            for (f, &b) in binned.row(i).iter().enumerate() {
                let s = layout.slot(node, f, b as usize);
                h.sums[s] += residuals[i];
                h.counts[s] += 1;
            }
        }
        h
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or(Histogram {
        sums: vec![0.0; size],
        counts: vec![0; size],
    });
    for h in iter {
        for (a, b) in total.sums.iter_mut().zip(&h.sums) {
            *a += b;
        }
        for (a, b) in total.counts.iter_mut().zip(&h.counts) {
            *a += b;
        }
    }
    total
}

#[inline]
fn leaf_score(sum: f64, count: u32, l2: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum * sum / (f64::from(count) + l2)
    }
}

/// Best shared `(feature, bin)` split over all current nodes; ties keep the
/// lowest feature, then the lowest bin.
fn best_split(
    hist: &Histogram,
    n_nodes: usize,
    edges: &[Vec<f32>],
    layout: &Layout,
    l2: f64,
) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    let mut left_sum = vec![0.0f64; n_nodes];
    let mut left_cnt = vec![0u32; n_nodes];
    let mut tot_sum = vec![0.0f64; n_nodes];
    let mut tot_cnt = vec![0u32; n_nodes];
    for (f, fe) in edges.iter().enumerate() {
        if fe.is_empty() {
            continue;
        }
        let n_feature_bins = fe.len() + 1;
        for node in 0..n_nodes {
            left_sum[node] = 0.0;
            left_cnt[node] = 0;
            tot_sum[node] = 0.0;
            tot_cnt[node] = 0;
            for b in 0..n_feature_bins {
                let s = layout.slot(node, f, b);
                tot_sum[node] += hist.sums[s];
                tot_cnt[node] += hist.counts[s];
            }
        }
        for b in 0..fe.len() {
            let mut score = 0.0;
            for node in 0..n_nodes {
                let s = layout.slot(node, f, b);
                left_sum[node] += hist.sums[s];
                left_cnt[node] += hist.counts[s];
                let rs = tot_sum[node] - left_sum[node];
                let rc = tot_cnt[node] - left_cnt[node];
                score += leaf_score(left_sum[node], left_cnt[node], l2) + leaf_score(rs, rc, l2);
            }
            if best.is_none_or(|(bs, _, _)| score > bs) {
                best = Some((score, f, b));
            }
        }
    }
    best.map(|(_, f, b)| (f, b))
}

fn mse_of(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64
}

fn check_dataset(d: &Dataset, n_features: usize, what: &'static str) -> Result<()> {
    if d.n_features != n_features {
        return Err(GbdtError::DimensionMismatch {
            expected: n_features,
            found: d.n_features,
        });
    }
    if let Some(i) = d.features.iter().position(|v| !v.is_finite()) {
        return Err(GbdtError::NonFinite(i % n_features));
    }
    if d.targets.iter().any(|v| !v.is_finite()) {
        return Err(GbdtError::InvalidParams(format!(
            "{what} has non-finite targets"
        )));
    }
    Ok(())
}

/// Fits a boosted ensemble of oblivious trees to `train`.
///
/// When `valid` is non-empty and early stopping is configured, training
/// halts after `early_stop_rounds` stages without a strict improvement in
/// validation MSE and the ensemble is cut back to its best prefix.
pub fn train(
    train: &Dataset,
    valid: Option<&Dataset>,
    params: &GbdtParams,
) -> Result<(GbdtModel, TrainReport)> {
    params.validate()?;
    if train.is_empty() {
        return Err(GbdtError::EmptySplit("training split"));
    }
    let n_features = train.n_features;
    check_dataset(train, n_features, "training split")?;
    let valid = valid.filter(|v| !v.is_empty());
    if let Some(v) = valid {
        check_dataset(v, n_features, "validation split")?;
    }

    let n = train.len();
    let base_score = train.targets.iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64;

    let edges: Vec<Vec<f32>> = (0..n_features)
        .map(|f| {
            let column: Vec<f32> = train.rows().map(|r| r[f]).collect();
            compute_bin_edges(&column, params.n_bins as usize)
        })
        .collect();
    let max_bins = edges.iter().map(|e| e.len() + 1).max().unwrap_or(1);
    let layout = Layout {
        n_features,
        n_bins: max_bins,
    };
    let binned = Binned::new(train, &edges);

    let mut residuals: Vec<f64> = train
        .targets
        .iter()
        .map(|&y| f64::from(y) - base_score)
        .collect();
    let mut val_residuals: Vec<f64> = valid
        .map(|v| {
            v.targets
                .iter()
                .map(|&y| f64::from(y) - base_score)
                .collect()
        })
        .unwrap_or_default();

    let mut report = TrainReport {
        train_mse: vec![mse_of(&residuals)],
        val_mse: Vec::new(),
        trees_built: 0,
        trees_kept: 0,
        stopped_early: false,
    };
    if valid.is_some() {
        report.val_mse.push(mse_of(&val_residuals));
    }
    let mut best_val = report.val_mse.first().copied().unwrap_or(f64::INFINITY);
    let mut best_len = 0usize;

    let depth = params.depth as usize;
    let splittable = edges.iter().any(|e| !e.is_empty());
    let mut trees: Vec<ObliviousTree> = Vec::new();
    let mut nodes = vec![0u32; n];

    while splittable
        && trees.len() < params.n_trees as usize
        && report.train_mse.last() != Some(&0.0)
    {
        nodes.iter_mut().for_each(|v| *v = 0);
        let mut splits = Vec::with_capacity(depth);
        for level in 0..depth {
            let n_nodes = 1usize << level;
            let hist = build_histogram(&binned, &residuals, &nodes, n_nodes, &layout);
            let (f, b) = best_split(&hist, n_nodes, &edges, &layout, params.l2_leaf)
                .expect("a splittable feature exists");
            splits.push(Split {
                feature: f as u32,
                threshold: edges[f][b],
            });
            for (i, node) in nodes.iter_mut().enumerate() {
                if binned.row(i)[f] as usize > b {
                    *node |= 1 << level;
                }
            }
        }

        let n_leaves = 1usize << depth;
        let mut sums = vec![0.0f64; n_leaves];
        let mut counts = vec![0u32; n_leaves];
        for (&leaf, &r) in nodes.iter().zip(&residuals) {
            sums[leaf as usize] += r;
            counts[leaf as usize] += 1;
        }
        let leaves: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| {
                if c == 0 {
                    0.0
                } else {
                    params.learning_rate * s / (f64::from(c) + params.l2_leaf)
                }
            })
            .collect();
        for (r, &leaf) in residuals.iter_mut().zip(&nodes) {
            *r -= leaves[leaf as usize];
        }
        let tree = ObliviousTree { splits, leaves };
        report.train_mse.push(mse_of(&residuals));

        if let Some(v) = valid {
            for (r, row) in val_residuals.iter_mut().zip(v.rows()) {
                *r -= tree.predict(row);
            }
            let vm = mse_of(&val_residuals);
            report.val_mse.push(vm);
            trees.push(tree);
            if vm < best_val {
                best_val = vm;
                best_len = trees.len();
            }
            if let Some(patience) = params.patience() {
                if trees.len() - best_len >= patience as usize {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            trees.push(tree);
            best_len = trees.len();
        }
    }

    report.trees_built = trees.len();
    if valid.is_some() && params.patience().is_some() {
        trees.truncate(best_len);
    }
    report.trees_kept = trees.len();

    let model = GbdtModel {
        params: params.clone(),
        base_score,
        feature_count: n_features,
        bin_edges: edges,
        trees,
    };
    Ok((model, report))
}
