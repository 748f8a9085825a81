//! Experiment orchestration: the prune / freeze / retrain loop, early
//! stopping, multi-seed aggregation and the greedy oracle grid search.
//!
//! Every random stream is derived from the run seed, so a `(config, seed)`
//! pair always reproduces the same record stream.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Dataset, SplitDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::instrument::{alive_gradient_values, hidden_values, snapshot_distributions, DistributionSnapshot, TailBand};
use crate::nn::{argmax_rows, derive_seed, Gradients, Mode, Network};
use crate::optim::{Optimizer, OptimizerKind};
use crate::prune::{lambda_of, prune_step, PruneCriterion, ScoringRule, SparsityState};
use crate::sched::ScheduleSpec;

const INIT_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 1_000;
const EVAL_CHUNK: usize = 1024;

/// Tolerance of the oracle's feasible region, in accuracy fraction
/// (0.5 percentage points).
pub const FEASIBLE_TOLERANCE: f64 = 0.005;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Self::Idx { images, labels } => crate::data::load_idx(images, labels),
            Self::Synthetic(spec) => spec.generate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub dataset: DatasetSource,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleSpec,
    pub criterion: PruneCriterion,
    pub prune_rate: f64,
    /// Number of pruning cycles `L`; records cover cycles `0..=L`.
    pub cycles: u32,
    /// Maximum training epochs per cycle `t`.
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Epochs without validation improvement before stopping; `None` never
    /// stops early.
    pub patience: Option<usize>,
    /// Rows of the fixed held-out batch used for hidden-representation
    /// histograms.
    pub snapshot_rows: usize,
    /// Tail thresholds sit at this quantile of the unpruned network's
    /// absolute values.
    pub tail_quantile: f64,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: three hidden layers of 256 units, SGD with
    /// momentum 0.9 and weight decay 1e-4, batch 64, global magnitude pruning
    /// at rate 0.2.
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            batch_norm: false,
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            optimizer: OptimizerKind::sgd(0.9, 1e-4),
            schedule: ScheduleSpec::Constant { a: 1e-2 },
            criterion: PruneCriterion::new(ScoringRule::GlobalMagnitude),
            prune_rate: 0.2,
            cycles: 25,
            epochs: 60,
            batch_size: 64,
            seeds: vec![0, 1, 2, 3, 4],
            patience: Some(10),
            snapshot_rows: 1024,
            tail_quantile: 0.94,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.cycles < 1 {
            return bad("cycles", "need at least one pruning cycle".into());
        }
        if self.epochs < 1 {
            return bad("epochs", "need at least one epoch per cycle".into());
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(Error::InvalidRate(self.prune_rate));
        }
        if self.seeds.is_empty() {
            return bad("seeds", "seed list is empty".into());
        }
        if self.batch_size < 1 || (self.batch_norm && self.batch_size < 2) {
            return bad("batch_size", format!("batch size {} is too small", self.batch_size));
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "hidden widths must be >= 1".into());
        }
        if self.patience == Some(0) {
            return bad("patience", "patience must be >= 1 (or inf)".into());
        }
        if self.snapshot_rows == 0 {
            return bad("snapshot_rows", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tail_quantile) {
            return bad("tail_quantile", format!("{} is not in [0, 1]", self.tail_quantile));
        }
        if self.schedule.scyc_params().is_some() && self.prune_rate == 0.0 {
            return bad("schedule", "scyc needs a pruning rate in (0, 1)".into());
        }
        self.schedule
            .validate()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| Error::config("optimizer", e.to_string()))?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate().map_err(|e| Error::config("dataset", e.to_string()))?;
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect()
    }
}

/// One row of the records CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    /// Completed pruning cycles when this cycle trained.
    pub m: u32,
    pub lambda: f64,
    pub max_lr: f64,
    pub best_val_acc: f64,
    pub early_stop_test_acc: f64,
    pub grad_std: f64,
    pub grad_tail_mass: f64,
    pub seed: u64,
}

/// Result of training one cycle with early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleTraining {
    pub best_val_acc: f64,
    pub early_stop_test_acc: f64,
    /// 1-based epoch of the best validation accuracy.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub max_lr: f64,
}

#[derive(Clone, Debug)]
pub struct CycleOutcome {
    pub record: CycleRecord,
    pub training: CycleTraining,
    pub snapshot: DistributionSnapshot,
    pub wallclock_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Diverged,
    LayerExhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub cycle: u32,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub cycles: Vec<CycleOutcome>,
    pub failure: Option<RunFailure>,
}

impl RunOutcome {
    pub fn records(&self) -> Vec<CycleRecord> {
        self.cycles.iter().map(|c| c.record.clone()).collect()
    }
}

/// Hooks into a run, for instrumentation and invariant checks.
pub trait RunObserver {
    /// After pruning (and rewinding) and before training cycle `m`.
    fn on_cycle_start(&mut self, _m: u32, _net: &Network<f32>) {}
    /// After every optimizer step.
    fn on_step(&mut self, _m: u32, _net: &Network<f32>) {}
    /// After the best checkpoint of cycle `m` has been restored.
    fn on_cycle_end(&mut self, _outcome: &CycleOutcome, _net: &Network<f32>) {}
}

impl RunObserver for () {}

/// A configured experiment bound to one dataset split and one seed.
pub struct Experiment<'a> {
    config: &'a ExperimentConfig,
    data: SplitDataset,
    snapshot_batch: Array2<f32>,
    seed: u64,
}

impl<'a> Experiment<'a> {
    pub fn new(config: &'a ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        if dataset.len() < 5 {
            return Err(Error::InvalidArgs(format!(
                "dataset of {} examples is too small to split",
                dataset.len()
            )));
        }
        let data = split_dataset(dataset, derive_seed(seed, SPLIT_STREAM));
        let rows = config.snapshot_rows.min(data.val.len());
        let snapshot_batch = data.val.features.slice(s![..rows, ..]).to_owned();
        Ok(Self {
            config,
            data,
            snapshot_batch,
            seed,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.config
    }

    pub fn data(&self) -> &SplitDataset {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_network(&self) -> Result<Network<f32>> {
        let classes = self.data.train.classes.max(2);
        let sizes = self.config.layer_sizes(self.data.train.dim(), classes);
        Network::new(&sizes, self.config.batch_norm, derive_seed(self.seed, INIT_STREAM))
    }

    /// Prunes at the configured rate before cycle `m` (a no-op for `m == 0`)
    /// and rewinds for IMP.
    pub fn prune_for_cycle(
        &self,
        net: &mut Network<f32>,
        m: u32,
        grads: Option<&Gradients<f32>>,
    ) -> Result<SparsityState> {
        if m == 0 {
            return Ok(SparsityState::of(net, 0));
        }
        prune_step(net, self.config.criterion, self.config.prune_rate, grads, m)
    }

    /// Trains cycle `m` from iteration 0 of `schedule` with a fresh optimizer,
    /// then restores the best-validation checkpoint into `net`.
    pub fn train_cycle(
        &self,
        net: &mut Network<f32>,
        schedule: &ScheduleSpec,
        m: u32,
        observer: &mut dyn RunObserver,
    ) -> Result<CycleTraining> {
        let cfg = self.config;
        let train = &self.data.train;
        let mut optimizer = Optimizer::new(cfg.optimizer);
        let mut clock = schedule.on_cycle_start(m);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, SHUFFLE_STREAM + m as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();

        let mut best: Option<(f64, f64, usize, Network<f32>)> = None;
        let mut since_best = 0;
        let mut epochs_run = 0;
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                // batch norm cannot normalize a lone trailing example
                if chunk.len() < 2 && cfg.batch_norm {
                    continue;
                }
                let x = train.features.select(Axis(0), chunk);
                let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
                let trace = net.forward(x.view(), Mode::Train)?;
                let mut grads = net.backward(&trace, &labels)?;
                if !grads.loss.is_finite() {
                    return Err(Error::NumericFault(format!(
                        "loss became {} in cycle {m}, epoch {epoch}, iteration {}",
                        grads.loss, clock.iteration
                    )));
                }
                net.freeze_gradients(&mut grads);
                optimizer.step(net, &grads, schedule.lr_at(clock))?;
                net.update_running_stats(&trace);
                clock.tick();
                observer.on_step(m, net);
            }
            epochs_run = epoch;
            let val = accuracy(net, &self.data.val)?;
            if best.as_ref().is_none_or(|b| val > b.0) {
                let test = accuracy(net, &self.data.test)?;
                best = Some((val, test, epoch, net.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
        let (best_val_acc, early_stop_test_acc, best_epoch, checkpoint) = best.expect("at least one epoch");
        *net = checkpoint;
        Ok(CycleTraining {
            best_val_acc,
            early_stop_test_acc,
            best_epoch,
            epochs_run,
            max_lr: schedule.max_lr(m),
        })
    }

    /// Mean loss gradient over one pass of the training set (eval-mode
    /// forward), pruned positions frozen.
    pub fn end_of_cycle_gradients(&self, net: &Network<f32>) -> Result<Gradients<f32>> {
        full_pass_gradients(net, &self.data.train)
    }

    pub fn snapshot_batch(&self) -> &Array2<f32> {
        &self.snapshot_batch
    }

    /// Tail bands at the configured quantile of the current distributions.
    pub fn tail_bands(&self, net: &Network<f32>, grads: &Gradients<f32>) -> Result<(TailBand, TailBand)> {
        let q = self.config.tail_quantile;
        Ok((
            TailBand::from_abs_quantile(&alive_gradient_values(net, grads), q)?,
            TailBand::from_abs_quantile(&hidden_values(net, self.snapshot_batch.view())?, q)?,
        ))
    }

    /// The full iterative pruning run: cycle 0 trains the dense network,
    /// every later cycle prunes, rewinds the schedule, resets the optimizer
    /// and retrains.
    pub fn run(&self, observer: &mut dyn RunObserver) -> Result<RunOutcome> {
        let cfg = self.config;
        let mut net = self.initial_network()?;
        let mut cycles = Vec::with_capacity(cfg.cycles as usize + 1);
        let mut grads: Option<Gradients<f32>> = None;
        let mut bands: Option<(TailBand, TailBand)> = None;
        for m in 0..=cfg.cycles {
            let started = Instant::now();
            match self.prune_for_cycle(&mut net, m, grads.as_ref()) {
                Ok(_) => {}
                Err(Error::ExhaustedLayer { layer }) => {
                    return Ok(RunOutcome {
                        seed: self.seed,
                        cycles,
                        failure: Some(RunFailure {
                            cycle: m,
                            kind: FailureKind::LayerExhausted,
                            message: format!("hidden layer {layer} has no neurons left"),
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
            observer.on_cycle_start(m, &net);
            let training = match self.train_cycle(&mut net, &cfg.schedule, m, observer) {
                Ok(t) => t,
                Err(Error::NumericFault(message)) => {
                    return Ok(RunOutcome {
                        seed: self.seed,
                        cycles,
                        failure: Some(RunFailure {
                            cycle: m,
                            kind: FailureKind::Diverged,
                            message,
                        }),
                    });
                }
                Err(e) => return Err(e),
            };
            let g = self.end_of_cycle_gradients(&net)?;
            let (grad_band, hidden_band) = match bands {
                Some(b) => b,
                None => *bands.insert(self.tail_bands(&net, &g)?),
            };
            let snapshot = snapshot_distributions(&net, &g, self.snapshot_batch.view(), m, grad_band, hidden_band)?;
            let record = CycleRecord {
                cycle: m,
                m,
                lambda: snapshot.lambda,
                max_lr: training.max_lr,
                best_val_acc: training.best_val_acc,
                early_stop_test_acc: training.early_stop_test_acc,
                grad_std: snapshot.gradients.sample_std,
                grad_tail_mass: snapshot.gradients.tail_mass,
                seed: self.seed,
            };
            let outcome = CycleOutcome {
                record,
                training,
                snapshot,
                wallclock_secs: started.elapsed().as_secs_f64(),
            };
            observer.on_cycle_end(&outcome, &net);
            cycles.push(outcome);
            grads = Some(g);
        }
        Ok(RunOutcome {
            seed: self.seed,
            cycles,
            failure: None,
        })
    }

    /// Greedy oracle: at every cycle, trains one branch per grid peak from the
    /// same pre-cycle checkpoint, commits the branch with the best validation
    /// accuracy and reports the feasible region.
    pub fn oracle(&self, grid: &[f64]) -> Result<OracleResult> {
        if grid.is_empty() {
            return Err(Error::InvalidArgs("oracle grid is empty".into()));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgs(
                "oracle grid must be non-negative and strictly ascending".into(),
            ));
        }
        let cfg = self.config;
        let mut net = self.initial_network()?;
        let mut grads: Option<Gradients<f32>> = None;
        let mut cycles = Vec::with_capacity(cfg.cycles as usize + 1);
        for m in 0..=cfg.cycles {
            self.prune_for_cycle(&mut net, m, grads.as_ref())?;
            let checkpoint = net.clone();
            let branches: Vec<(BranchResult, Network<f32>)> = grid
                .par_iter()
                .map(|&peak| {
                    let mut branch = checkpoint.clone();
                    let t = self.train_cycle(&mut branch, &cfg.schedule.with_peak(peak), m, &mut ())?;
                    Ok((
                        BranchResult {
                            max_lr: peak,
                            val_acc: t.best_val_acc,
                            test_acc: t.early_stop_test_acc,
                        },
                        branch,
                    ))
                })
                .collect::<Result<_>>()?;
            let results: Vec<BranchResult> = branches.iter().map(|(b, _)| b.clone()).collect();
            let region = feasible_region(&results, FEASIBLE_TOLERANCE);
            let scyc_estimate = cfg.schedule.scyc_params().map(|p| p.max_lr(m));
            net = branches
                .into_iter()
                .nth(region.best_index)
                .map(|(_, n)| n)
                .expect("best index in range");
            grads = Some(self.end_of_cycle_gradients(&net)?);
            cycles.push(OracleCycle {
                m,
                lambda: lambda_of(net.masks()),
                well_tuned_max_lr: region.well_tuned,
                region_lo: region.lo,
                region_hi: region.hi,
                scyc_estimate,
                branches: results,
            });
        }
        Ok(OracleResult {
            seed: self.seed,
            cycles,
        })
    }
}

/// Fraction of correctly classified examples (eval mode).
pub fn accuracy(net: &Network<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let trace = net.forward(data.features.slice(s![start..end, ..]), Mode::Eval)?;
        correct += argmax_rows(trace.logits())
            .iter()
            .zip(&data.labels[start..end])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean gradient over every example of `data`, pruned positions frozen.
pub fn full_pass_gradients(net: &Network<f32>, data: &Dataset) -> Result<Gradients<f32>> {
    let mut total = Gradients::zeros_like(net);
    let n = data.len() as f32;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let trace = net.forward(data.features.slice(s![start..end, ..]), Mode::Eval)?;
        let g = net.backward(&trace, &data.labels[start..end])?;
        total.add_scaled(&g, (end - start) as f32 / n);
    }
    net.freeze_gradients(&mut total);
    Ok(total)
}

/// Convenience wrapper: trains cycle `m` of `net` under `config` for `seed`.
pub fn train_one_cycle(
    net: &mut Network<f32>,
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    m: u32,
) -> Result<CycleTraining> {
    let exp = Experiment::new(config, dataset, seed)?;
    exp.train_cycle(net, &config.schedule, m, &mut ())
}

pub fn run_iterative_pruning(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunOutcome> {
    Experiment::new(config, dataset, seed)?.run(&mut ())
}

/// Runs every configured seed (in parallel on the current rayon pool);
/// results are returned in seed order.
pub fn run_all_seeds(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<RunOutcome>> {
    config
        .seeds
        .par_iter()
        .map(|&seed| run_iterative_pruning(config, dataset, seed))
        .collect()
}

pub fn oracle_grid_search(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    grid: &[f64],
) -> Result<OracleResult> {
    Experiment::new(config, dataset, seed)?.oracle(grid)
}

/// `per_decade` log-spaced points per decade over `[1e-4, 1e-1]`.
pub fn default_lr_grid(per_decade: usize) -> Vec<f64> {
    let steps = 3 * per_decade;
    (0..=steps)
        .map(|i| 1e-4 * 10f64.powf(i as f64 / per_decade as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchResult {
    pub max_lr: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCycle {
    pub m: u32,
    pub lambda: f64,
    pub well_tuned_max_lr: f64,
    pub region_lo: f64,
    pub region_hi: f64,
    pub scyc_estimate: Option<f64>,
    pub branches: Vec<BranchResult>,
}

impl OracleCycle {
    pub fn scyc_in_region(&self) -> Option<bool> {
        self.scyc_estimate.map(|s| self.region_lo <= s && s <= self.region_hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub seed: u64,
    pub cycles: Vec<OracleCycle>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibleRegion {
    pub best_index: usize,
    pub well_tuned: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Best branch by validation accuracy (the lowest learning rate wins ties)
/// and the smallest / largest learning rates within `tolerance` of it.
pub fn feasible_region(branches: &[BranchResult], tolerance: f64) -> FeasibleRegion {
    assert!(!branches.is_empty(), "no branches");
    let mut best_index = 0;
    for (i, b) in branches.iter().enumerate() {
        if b.val_acc > branches[best_index].val_acc {
            best_index = i;
        }
    }
    let floor = branches[best_index].val_acc - tolerance;
    let feasible = branches.iter().filter(|b| b.val_acc >= floor - 1e-12).map(|b| b.max_lr);
    let (lo, hi) = feasible.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    FeasibleRegion {
        best_index,
        well_tuned: branches[best_index].max_lr,
        lo,
        hi,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<f64>,
}

impl MeanStd {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.len() >= 2).then(|| {
            let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            sq.sort_by(f64::total_cmp);
            (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleAggregate {
    pub m: u32,
    pub runs: usize,
    pub lambda: MeanStd,
    pub max_lr: MeanStd,
    pub best_val_acc: MeanStd,
    pub early_stop_test_acc: MeanStd,
}

/// Per-cycle mean and sample standard deviation across seeds.
pub fn aggregate_runs(runs: &[Vec<CycleRecord>]) -> Vec<CycleAggregate> {
    let max_m = runs.iter().flatten().map(|r| r.m).max();
    let Some(max_m) = max_m else {
        return Vec::new();
    };
    (0..=max_m)
        .filter_map(|m| {
            let rows: Vec<&CycleRecord> = runs.iter().flatten().filter(|r| r.m == m).collect();
            if rows.is_empty() {
                return None;
            }
            let col = |f: fn(&CycleRecord) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(CycleAggregate {
                m,
                runs: rows.len(),
                lambda: col(|r| r.lambda),
                max_lr: col(|r| r.max_lr),
                best_val_acc: col(|r| r.best_val_acc),
                early_stop_test_acc: col(|r| r.early_stop_test_acc),
            })
        })
        .collect()
}
