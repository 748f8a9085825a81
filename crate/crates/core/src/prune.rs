//! Mask-based pruning: scoring, threshold selection, structured neuron
//! removal, lottery-ticket rewinding and sparsity accounting.
//!
//! Only weight matrices are prunable. Biases and batch-norm parameters are
//! never masked and do not count towards `lambda`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoringRule {
    GlobalMagnitude,
    LayerMagnitude,
    GlobalGradient,
    LayerGradient,
    StructuredL1,
}

impl ScoringRule {
    pub const ALL: [ScoringRule; 5] = [
        Self::GlobalMagnitude,
        Self::LayerMagnitude,
        Self::GlobalGradient,
        Self::LayerGradient,
        Self::StructuredL1,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::GlobalMagnitude => "global_magnitude",
            Self::LayerMagnitude => "layer_magnitude",
            Self::GlobalGradient => "global_gradient",
            Self::LayerGradient => "layer_gradient",
            Self::StructuredL1 => "structured_l1",
        }
    }

    pub fn needs_gradients(&self) -> bool {
        matches!(self, Self::GlobalGradient | Self::LayerGradient)
    }

    pub fn is_global(&self) -> bool {
        matches!(self, Self::GlobalMagnitude | Self::GlobalGradient)
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgs(format!("unknown pruning criterion `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneCriterion {
    pub rule: ScoringRule,
    /// Rewind surviving weights to their initial values after pruning.
    pub imp_rewind: bool,
}

impl PruneCriterion {
    pub fn new(rule: ScoringRule) -> Self {
        Self {
            rule,
            imp_rewind: false,
        }
    }

    /// Iterative magnitude pruning: global magnitude plus rewinding.
    pub fn imp() -> Self {
        Self {
            rule: ScoringRule::GlobalMagnitude,
            imp_rewind: true,
        }
    }
}

/// Scores of alive weights, one list of `(flat index, score)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightScores {
    pub per_layer: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityState {
    pub cycle: u32,
    pub alive_per_layer: Vec<usize>,
    pub total_per_layer: Vec<usize>,
    /// Percent of prunable weights remaining.
    pub lambda: f64,
}

impl SparsityState {
    pub fn of<T: Scalar>(net: &Network<T>, cycle: u32) -> Self {
        let alive_per_layer: Vec<usize> = net.masks().iter().map(count_alive).collect();
        let total_per_layer: Vec<usize> = net.masks().iter().map(|m| m.len()).collect();
        Self {
            cycle,
            lambda: lambda_of(net.masks()),
            alive_per_layer,
            total_per_layer,
        }
    }

    pub fn alive(&self) -> usize {
        self.alive_per_layer.iter().sum()
    }
}

fn count_alive(mask: &Array2<bool>) -> usize {
    mask.iter().filter(|&&a| a).count()
}

/// `100 * alive / total` over all masks.
pub fn lambda_of(masks: &[Array2<bool>]) -> f64 {
    let total: usize = masks.iter().map(|m| m.len()).sum();
    if total == 0 {
        return 100.0;
    }
    let alive: usize = masks.iter().map(count_alive).sum();
    100.0 * alive as f64 / total as f64
}

/// Magnitude score `|w|` or gradient score `|w * g|` for every alive weight.
pub fn score<T: Scalar>(net: &Network<T>, rule: ScoringRule, grads: Option<&Gradients<T>>) -> Result<WeightScores> {
    let grads = if rule.needs_gradients() {
        let g = grads.ok_or_else(|| Error::MissingInput(format!("{rule} needs end-of-training gradients")))?;
        if g.weights.len() != net.num_layers()
            || g.weights
                .iter()
                .zip(net.layers())
                .any(|(g, l)| g.raw_dim() != l.weights.raw_dim())
        {
            return Err(Error::InvalidShape("gradients do not match network".into()));
        }
        Some(g)
    } else {
        None
    };
    let per_layer = net
        .layers()
        .iter()
        .zip(net.masks())
        .enumerate()
        .map(|(l, (layer, mask))| {
            let w = layer.weights.as_slice().expect("standard layout");
            let mask = mask.as_slice().expect("standard layout");
            let g = grads.map(|g| g.weights[l].as_slice().expect("standard layout"));
            mask.iter()
                .enumerate()
                .filter(|(_, &alive)| alive)
                .map(|(i, _)| {
                    let s = match g {
                        Some(g) => (w[i].as_f64() * g[i].as_f64()).abs(),
                        None => w[i].as_f64().abs(),
                    };
                    (i, s)
                })
                .collect()
        })
        .collect();
    Ok(WeightScores { per_layer })
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidRate(p))
    }
}

/// Number of entries removed at rate `p` from `alive` survivors.
pub fn prune_count(p: f64, alive: usize) -> usize {
    (p * alive as f64).floor() as usize
}

fn by_score_then_position(a: &(usize, usize, f64), b: &(usize, usize, f64)) -> Ordering {
    a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
}

/// Returns `(layer, flat index)` of the `k` lowest-scored entries, ties broken
/// by position.
pub fn select_lowest(candidates: Vec<(usize, usize, f64)>, k: usize) -> Vec<(usize, usize)> {
    let mut candidates = candidates;
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, by_score_then_position);
        candidates.truncate(k);
    }
    candidates.sort_by(by_score_then_position);
    candidates.into_iter().map(|(l, i, _)| (l, i)).collect()
}

/// One unstructured pruning step at rate `p`. Gradient rules need the
/// end-of-training gradients.
pub fn prune_step<T: Scalar>(
    net: &mut Network<T>,
    criterion: PruneCriterion,
    p: f64,
    grads: Option<&Gradients<T>>,
    cycle: u32,
) -> Result<SparsityState> {
    check_rate(p)?;
    if criterion.rule == ScoringRule::StructuredL1 {
        structured_prune_step(net, p)?;
    } else {
        let scores = score(net, criterion.rule, grads)?;
        let victims = if criterion.rule.is_global() {
            let alive: usize = scores.per_layer.iter().map(Vec::len).sum();
            let flat = scores
                .per_layer
                .into_iter()
                .enumerate()
                .flat_map(|(l, s)| s.into_iter().map(move |(i, v)| (l, i, v)))
                .collect();
            select_lowest(flat, prune_count(p, alive))
        } else {
            scores
                .per_layer
                .into_iter()
                .enumerate()
                .flat_map(|(l, s)| {
                    let k = prune_count(p, s.len());
                    select_lowest(s.into_iter().map(|(i, v)| (l, i, v)).collect(), k)
                })
                .collect()
        };
        let masks = net.masks_mut();
        for (l, i) in victims {
            masks[l].as_slice_mut().expect("standard layout")[i] = false;
        }
        net.apply_mask();
    }
    if criterion.imp_rewind {
        imp_rewind(net);
    }
    Ok(SparsityState::of(net, cycle))
}

/// Alive neurons of hidden layer `layer`: rows with at least one alive
/// incoming weight.
pub fn alive_neurons<T: Scalar>(net: &Network<T>, layer: usize) -> Vec<usize> {
    net.masks()[layer]
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&a| a))
        .map(|(j, _)| j)
        .collect()
}

/// Removes `floor(p * alive)` neurons with the smallest incoming L1 norm from
/// every hidden layer. The output layer is never touched.
pub fn structured_prune_step<T: Scalar>(net: &mut Network<T>, p: f64) -> Result<()> {
    check_rate(p)?;
    let hidden_layers = net.num_layers() - 1;
    let mut removals = Vec::with_capacity(hidden_layers);
    for l in 0..hidden_layers {
        let alive = alive_neurons(net, l);
        let k = prune_count(p, alive.len());
        if alive.len() <= k {
            return Err(Error::ExhaustedLayer { layer: l });
        }
        let weights = &net.layers()[l].weights;
        let candidates = alive
            .into_iter()
            .map(|j| {
                let norm: f64 = weights.row(j).iter().map(|w| w.as_f64().abs()).sum();
                (l, j, norm)
            })
            .collect();
        removals.push(select_lowest(candidates, k));
    }
    let masks = net.masks_mut();
    for (l, neurons) in removals.into_iter().enumerate() {
        for (_, j) in neurons {
            masks[l].row_mut(j).fill(false);
            masks[l + 1].column_mut(j).fill(false);
        }
    }
    net.apply_mask();
    Ok(())
}

/// Lottery-ticket rewind: alive weights, biases and batch-norm parameters
/// return to their initial values; pruned weights stay zero.
pub fn imp_rewind<T: Scalar>(net: &mut Network<T>) {
    net.rewind_to_init();
}

/// True when every weight pruned in `earlier` is also pruned in `later`.
pub fn masks_nested(earlier: &[Array2<bool>], later: &[Array2<bool>]) -> bool {
    earlier.len() == later.len()
        && earlier
            .iter()
            .zip(later)
            .all(|(a, b)| a.raw_dim() == b.raw_dim() && a.iter().zip(b.iter()).all(|(&a, &b)| a || !b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use ndarray::{array, Array1};

    fn single_layer(weights: Array2<f64>) -> Network<f64> {
        let out = weights.nrows();
        Network::from_layers(vec![DenseLayer::new(weights, Array1::zeros(out))]).unwrap()
    }

    #[test]
    fn magnitude_scores() {
        let net = single_layer(array![[0.5, -0.1, 0.3, -0.05]]);
        let s = score(&net, ScoringRule::GlobalMagnitude, None).unwrap();
        assert_eq!(s.per_layer[0], vec![(0, 0.5), (1, 0.1), (2, 0.3), (3, 0.05)]);
    }

    #[test]
    fn gradient_scores() {
        let net = single_layer(array![[0.5, -0.1]]);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0] = array![[0.01, -2.0]];
        let s = score(&net, ScoringRule::GlobalGradient, Some(&g)).unwrap();
        assert!((s.per_layer[0][0].1 - 0.005).abs() < 1e-15);
        assert!((s.per_layer[0][1].1 - 0.2).abs() < 1e-15);
        assert!(matches!(
            score(&net, ScoringRule::LayerGradient, None),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn pruned_positions_are_not_scored() {
        let mut net = single_layer(array![[0.5, -0.1, 0.3]]);
        net.set_mask(0, array![[true, false, true]]).unwrap();
        let s = score(&net, ScoringRule::LayerMagnitude, None).unwrap();
        assert_eq!(s.per_layer[0].iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn ten_weights_at_rate_point_two_lose_two() {
        let net0 = Network::<f32>::new(&[5, 2], false, 3).unwrap();
        let mut net = net0.clone();
        let state = prune_step(
            &mut net,
            PruneCriterion::new(ScoringRule::GlobalMagnitude),
            0.2,
            None,
            1,
        )
        .unwrap();
        assert_eq!(state.alive(), 8);
        assert_eq!(state.lambda, 80.0);
    }

    #[test]
    fn lowest_scores_go_first() {
        let mut net = single_layer(array![[0.5, 0.1, 0.3, 0.05, 0.2]]);
        prune_step(&mut net, PruneCriterion::new(ScoringRule::LayerMagnitude), 0.4, None, 1).unwrap();
        assert_eq!(net.masks()[0], array![[true, false, true, false, true]]);
    }

    #[test]
    fn ties_break_by_position() {
        let picked = select_lowest(vec![(1, 0, 0.5), (0, 3, 0.5), (0, 1, 0.5), (0, 2, 0.1)], 3);
        assert_eq!(picked, vec![(0, 2), (0, 1), (0, 3)]);
    }

    #[test]
    fn invalid_rates_rejected() {
        let mut net = single_layer(array![[1.0, 2.0]]);
        for p in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                prune_step(&mut net, PruneCriterion::new(ScoringRule::GlobalMagnitude), p, None, 1),
                Err(Error::InvalidRate(_))
            ));
        }
    }

    #[test]
    fn structured_removes_lowest_l1_neuron() {
        let l0 = DenseLayer::new(
            array![[3.0, 0.0], [0.1, -0.1], [1.0, 0.5], [-0.45, 0.45]],
            Array1::zeros(4),
        );
        let l1 = DenseLayer::new(Array2::from_elem((2, 4), 1.0), Array1::zeros(2));
        let mut net = Network::<f64>::from_layers(vec![l0, l1]).unwrap();
        structured_prune_step(&mut net, 0.25).unwrap();
        assert!(net.masks()[0].row(1).iter().all(|&a| !a));
        assert!(net.masks()[1].column(1).iter().all(|&a| !a));
        assert_eq!(alive_neurons(&net, 0), vec![0, 2, 3]);
        // output layer rows are untouched
        assert_eq!(alive_neurons(&net, 1), vec![0, 1]);
    }

    #[test]
    fn structured_rate_zero_is_noop() {
        let mut net = Network::<f32>::new(&[3, 4, 4, 2], false, 9).unwrap();
        let before = net.masks().to_vec();
        structured_prune_step(&mut net, 0.0).unwrap();
        assert_eq!(net.masks(), &before[..]);
    }

    #[test]
    fn structured_on_empty_layer_is_exhausted() {
        let mut net = Network::<f32>::new(&[3, 2, 2], false, 9).unwrap();
        net.set_mask(0, Array2::from_elem((2, 3), false)).unwrap();
        assert!(matches!(
            structured_prune_step(&mut net, 0.5),
            Err(Error::ExhaustedLayer { layer: 0 })
        ));
    }

    #[test]
    fn structured_equals_unstructured_removal_of_incident_weights() {
        let mut a = Network::<f32>::new(&[3, 5, 2], false, 21).unwrap();
        let mut b = a.clone();
        let norms: Vec<f32> = a.layers()[0]
            .weights
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|w| w.abs()).sum())
            .collect();
        let victim = (0..5).min_by(|&i, &j| norms[i].total_cmp(&norms[j])).unwrap();
        structured_prune_step(&mut a, 0.2).unwrap();
        let mut m0 = Array2::from_elem((5, 3), true);
        m0.row_mut(victim).fill(false);
        let mut m1 = Array2::from_elem((2, 5), true);
        m1.column_mut(victim).fill(false);
        b.set_mask(0, m0).unwrap();
        b.set_mask(1, m1).unwrap();
        assert_eq!(a.masks(), b.masks());
        assert_eq!(a.layers(), b.layers());
    }

    #[test]
    fn lambda_counts() {
        let net = Network::<f32>::new(&[2, 2], false, 0).unwrap();
        assert_eq!(lambda_of(net.masks()), 100.0);
        assert_eq!(lambda_of(&[array![[true, false], [true, true]]]), 75.0);
    }

    #[test]
    fn global_equals_layer_on_single_layer() {
        let net = Network::<f32>::new(&[20, 7], false, 5).unwrap();
        let mut a = net.clone();
        let mut b = net;
        for m in 1..5 {
            prune_step(&mut a, PruneCriterion::new(ScoringRule::GlobalMagnitude), 0.3, None, m).unwrap();
            prune_step(&mut b, PruneCriterion::new(ScoringRule::LayerMagnitude), 0.3, None, m).unwrap();
        }
        assert_eq!(a.masks(), b.masks());
    }

    #[test]
    fn rewind_with_full_mask_restores_init() {
        let mut net = Network::<f32>::new(&[4, 3, 2], true, 8).unwrap();
        let init = net.clone();
        net.layer_mut(0).weights.mapv_inplace(|w| w - 0.5);
        net.layer_mut(0).bn.as_mut().unwrap().scale.fill(3.0);
        imp_rewind(&mut net);
        assert_eq!(net.layers(), init.layers());
    }

    #[test]
    fn nested_mask_check() {
        let a = vec![array![[true, true, false]]];
        let b = vec![array![[true, false, false]]];
        assert!(masks_nested(&a, &b));
        assert!(!masks_nested(&b, &a));
    }
}
