//! Distribution instrumentation: Sturges-binned histograms of weight
//! gradients and hidden representations, spread and tail statistics, and the
//! variance model of a pruned pre-activation sum.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mode, Network, Scalar};
use crate::prune::lambda_of;

/// `ceil(log2 n) + 1`, computed exactly on integers.
pub fn sturges_bin_count(n: usize) -> usize {
    assert!(n >= 1, "Sturges rule needs at least one sample");
    let ceil_log2 = if n == 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    };
    ceil_log2 + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: u64,
    pub mean: f64,
    pub sample_std: f64,
    pub tail_lo: f64,
    pub tail_hi: f64,
    /// Fraction of samples below `tail_lo` or above `tail_hi`.
    pub tail_mass: f64,
}

/// Equal-width bins on `[min, max]` with the Sturges bin count. The last bin
/// is closed on the right; a constant sample gets a single unit-width bin
/// centred on the value.
pub fn build_histogram(values: &[f64], tail_lo: f64, tail_hi: f64) -> Result<HistogramReport> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(tail_lo < tail_hi) {
        return Err(Error::InvalidArgs(format!(
            "tail_lo {tail_lo} must be below tail_hi {tail_hi}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFault("non-finite histogram sample".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bin_edges = if min == max {
        vec![min - 0.5, min + 0.5]
    } else {
        let bins = sturges_bin_count(values.len());
        let width = (max - min) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| min + i as f64 * width).collect();
        edges.push(max);
        edges
    };
    let mut counts = vec![0u64; bin_edges.len() - 1];
    for &v in values {
        counts[bin_index(&bin_edges, v)] += 1;
    }
    let (mean, sample_std) = mean_and_sample_std(values);
    let tails = values.iter().filter(|&&v| v < tail_lo || v > tail_hi).count();
    Ok(HistogramReport {
        bin_edges,
        counts,
        n: values.len() as u64,
        mean,
        sample_std,
        tail_lo,
        tail_hi,
        tail_mass: tails as f64 / values.len() as f64,
    })
}

/// Bin of `v` such that `edges[i] <= v < edges[i + 1]` (last bin closed).
/// Values outside the edges clamp to the outer bins.
fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let width = (edges[bins] - edges[0]) / bins as f64;
    let mut i = (((v - edges[0]) / width).floor().max(0.0) as usize).min(bins - 1);
    // the division can land one bin off near an edge
    while i > 0 && v < edges[i] {
        i -= 1;
    }
    while i + 1 < bins && v >= edges[i + 1] {
        i += 1;
    }
    i
}

/// Mean and `n - 1` standard deviation (0 for a single sample).
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Nearest-rank quantile of `|v|`, `q` in `[0, 1]`.
pub fn abs_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    Ok(mags[rank - 1])
}

impl HistogramReport {
    /// Adds another report over identical bin edges. The tail thresholds must
    /// agree as well.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.bin_edges != other.bin_edges || self.tail_lo != other.tail_lo || self.tail_hi != other.tail_hi {
            return Err(Error::InvalidArgs("histograms are not bin-aligned".into()));
        }
        let n = self.n + other.n;
        let (na, nb, nt) = (self.n as f64, other.n as f64, n as f64);
        let mean = (na * self.mean + nb * other.mean) / nt;
        let ss = |r: &Self| r.sample_std * r.sample_std * (r.n as f64 - 1.0).max(0.0);
        let d = other.mean - self.mean;
        let total_ss = ss(self) + ss(other) + d * d * na * nb / nt;
        Ok(Self {
            bin_edges: self.bin_edges.clone(),
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            n,
            mean,
            sample_std: if n > 1 { (total_ss / (nt - 1.0)).sqrt() } else { 0.0 },
            tail_lo: self.tail_lo,
            tail_hi: self.tail_hi,
            tail_mass: (self.tail_mass * na + other.tail_mass * nb) / nt,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }
}

/// Pre-activation variance of a sum of `n` i.i.d. terms of variance `v`
/// before and after `k` of them are pruned.
pub fn variance_model(n: usize, k: usize, v: f64) -> Result<(f64, f64)> {
    if k > n {
        return Err(Error::InvalidArgs(format!("cannot prune {k} of {n} inputs")));
    }
    if !(v >= 0.0) {
        return Err(Error::InvalidArgs(format!("per-term variance must be >= 0, got {v}")));
    }
    Ok((n as f64 * v, (n - k) as f64 * v))
}

/// Symmetric tail thresholds `[-t, t]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBand {
    pub lo: f64,
    pub hi: f64,
}

impl TailBand {
    pub fn symmetric(t: f64) -> Self {
        Self { lo: -t, hi: t }
    }

    /// Band at the `q`-quantile of `|v|`, made strictly non-degenerate.
    pub fn from_abs_quantile(values: &[f64], q: f64) -> Result<Self> {
        let t = abs_quantile(values, q)?;
        Ok(Self::symmetric(if t > 0.0 { t } else { f64::MIN_POSITIVE }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSnapshot {
    pub cycle: u32,
    pub lambda: f64,
    pub gradients: HistogramReport,
    pub hidden: HistogramReport,
}

/// Alive-weight gradient samples, layer by layer.
pub fn alive_gradient_values<T: Scalar>(net: &Network<T>, grads: &Gradients<T>) -> Vec<f64> {
    grads
        .weights
        .iter()
        .zip(net.masks())
        .flat_map(|(g, m)| g.iter().zip(m.iter()).filter(|(_, &a)| a).map(|(g, _)| g.as_f64()))
        .collect()
}

/// All hidden post-activations of `batch` in eval mode.
pub fn hidden_values<T: Scalar>(net: &Network<T>, batch: ArrayView2<T>) -> Result<Vec<f64>> {
    let trace = net.forward(batch, Mode::Eval)?;
    Ok(trace
        .hidden_representations()
        .flat_map(|h| h.iter().map(|v| v.as_f64()))
        .collect())
}

/// Histograms of alive-weight gradients and of hidden representations for
/// one fixed batch, tagged with the current sparsity.
pub fn snapshot_distributions<T: Scalar>(
    net: &Network<T>,
    grads: &Gradients<T>,
    batch: ArrayView2<T>,
    cycle: u32,
    grad_band: TailBand,
    hidden_band: TailBand,
) -> Result<DistributionSnapshot> {
    let gradients = build_histogram(&alive_gradient_values(net, grads), grad_band.lo, grad_band.hi)?;
    let hidden = build_histogram(&hidden_values(net, batch)?, hidden_band.lo, hidden_band.hi)?;
    Ok(DistributionSnapshot {
        cycle,
        lambda: lambda_of(net.masks()),
        gradients,
        hidden,
    })
}
