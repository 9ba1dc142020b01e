//! DFedAvgM: K local heavy-ball SGD steps per node, then one mixing step.
//!
//! Momentum is called `beta` throughout (some derivations write it as θ,
//! which here names the mixing-family parameter instead).

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mixing::{mix_rows, MixingMatrix};
use crate::models::{accuracy, norm, Objective};
use crate::rng::{rng_from, Rng};

const STREAM_SAMPLING: u64 = 1;
const STREAM_FAILURES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Constant(f64),
    /// `η_t = c / t` with rounds counted from 1.
    Decay { c: f64 },
}

impl StepSize {
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            StepSize::Constant(eta) => eta,
            StepSize::Decay { c } => c / (round + 1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub step: StepSize,
    pub beta: f64,
    pub local_steps: usize,
    pub rounds: usize,
    /// Samples per stochastic gradient, drawn with replacement; `None` uses
    /// the whole shard (deterministic full-batch gradient).
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Evaluate every this many rounds (the final round is always evaluated).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step: StepSize::Constant(0.05),
            beta: 0.0,
            local_steps: 1,
            rounds: 1,
            batch_size: None,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = match self.step {
            StepSize::Constant(eta) => eta,
            StepSize::Decay { c } => c,
        };
        if !(positive > 0.0 && positive.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {positive}"
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Warning text when a constant step exceeds `1/(8LK)` for the given
    /// smoothness constant.
    pub fn stepsize_warning(&self, smoothness: f64) -> Option<String> {
        let StepSize::Constant(eta) = self.step else {
            return None;
        };
        let limit = 1.0 / (8.0 * smoothness * self.local_steps as f64);
        (eta > limit).then(|| {
            format!("step size {eta} exceeds 1/(8LK) = {limit:.6} for L = {smoothness}")
        })
    }
}

/// One participant: current parameters, the previous local iterate for the
/// momentum term, and the rows it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: usize,
    pub params: Vec<f64>,
    pub prev_params: Vec<f64>,
    pub shard: Vec<usize>,
}

impl NodeState {
    pub fn new(id: usize, params: Vec<f64>, shard: Vec<usize>) -> Self {
        NodeState {
            id,
            prev_params: params.clone(),
            params,
            shard,
        }
    }
}

/// Stream for node `id` in round `round`.
pub fn node_rng(seed: u64, id: usize, round: usize) -> Rng {
    rng_from(seed, &[STREAM_SAMPLING, id as u64, round as u64])
}

/// Running maximum of the gradient norm seen by [`local_round`].
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub max_grad_norm: f64,
}

/// Exactly K momentum steps
/// `w ← w − η ∇f(w; ξ) + β (w − w_prev)` starting from `w_prev = w`.
pub fn local_round(
    node: &mut NodeState,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    data: &Dataset,
    round: usize,
) -> Result<StepStats> {
    let eta = cfg.step.at(round);
    let mut rng = node_rng(cfg.seed, node.id, round);
    let mut grad = vec![0.0; node.params.len()];
    let mut batch = Vec::with_capacity(cfg.batch_size.unwrap_or(0));
    let mut stats = StepStats::default();
    node.prev_params.copy_from_slice(&node.params);
    for k in 0..cfg.local_steps {
        let rows: &[usize] = match cfg.batch_size {
            None => &node.shard,
            Some(b) => {
                batch.clear();
                batch.extend((0..b).map(|_| node.shard[rng.random_range(0..node.shard.len())]));
                &batch
            }
        };
        objective.grad_into(&node.params, data, rows, &mut grad);
        stats.max_grad_norm = stats.max_grad_norm.max(norm(&grad));
        for ((w, p), g) in node.params.iter_mut().zip(node.prev_params.iter_mut()).zip(&grad) {
            let next = *w - eta * g + cfg.beta * (*w - *p);
            *p = *w;
            *w = next;
        }
        if node.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                round,
                step: k,
                node: node.id,
            });
        }
    }
    Ok(stats)
}

/// Mixing barrier. Alive nodes replace their parameters with the
/// alive-renormalized row of `M` applied to the stacked parameters; failed
/// nodes neither send nor receive and keep stale state.
pub fn communication_round(
    states: &mut [NodeState],
    mixing: &MixingMatrix,
    alive: &[bool],
) -> Result<()> {
    let n = mixing.n();
    if states.len() != n || alive.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if states.len() != n { states.len() } else { alive.len() },
        });
    }
    if !alive.iter().any(|&a| a) {
        return Err(Error::AllNodesFailed(n));
    }
    let stacked: Vec<Vec<f64>> = states.iter().map(|s| s.params.clone()).collect();
    let mixed = if alive.iter().all(|&a| a) {
        mix_rows(mixing.matrix(), &stacked)?
    } else {
        mix_rows(&mixing.with_failures(alive), &stacked)?
    };
    for ((s, new), &a) in states.iter_mut().zip(mixed).zip(alive) {
        if a {
            s.params = new;
            s.prev_params.copy_from_slice(&s.params);
        }
    }
    Ok(())
}

/// `‖X − 𝟙 x̄ᵀ‖_F` for stacked parameter rows `X`.
pub fn consensus_distance<'a>(params: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let rows: Vec<&[f64]> = params.into_iter().collect();
    let Some(first) = rows.first() else {
        return 0.0;
    };
    let mean = mean_vector(&rows, first.len());
    rows.iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn mean_vector(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// A fresh random subset is down in every round.
    Transient,
    /// One subset drawn before training stays down for the whole run.
    Permanent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailurePlan {
    pub fraction: f64,
    pub mode: FailureMode,
    pub seed: u64,
}

impl FailurePlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(Error::InvalidArgument(format!(
                "failure fraction must lie in [0, 1), got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    /// Alive mask for `round`: exactly `round(fraction · n)` nodes are down.
    pub fn alive_mask(&self, n: usize, round: usize) -> Vec<bool> {
        let draw = match self.mode {
            FailureMode::Transient => round as u64,
            FailureMode::Permanent => 0,
        };
        failure_mask(n, self.fraction, rng_from(self.seed, &[STREAM_FAILURES, draw]))
    }
}

/// Uniformly random mask with `round(fraction · n)` failed nodes.
pub fn failure_mask(n: usize, fraction: f64, mut rng: Rng) -> Vec<bool> {
    let down = ((fraction * n as f64).round() as usize).min(n);
    let mut alive = vec![true; n];
    for i in sample(&mut rng, n, down) {
        alive[i] = false;
    }
    alive
}

/// Averages over the nodes alive in that round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub round: usize,
    /// Mean of each node's loss on its own shard.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub consensus_dist: f64,
    pub cum_comm_cost: u64,
    /// Global objective `(1/N) Σ f_i` at the averaged parameters.
    pub mean_model_loss: f64,
    /// `‖∇f(w̄)‖²` with `∇f = (1/N) Σ ∇f_i`.
    pub mean_model_grad_sq: f64,
    pub alive: usize,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "round,train_loss,test_loss,test_acc,consensus_dist,cum_comm_cost";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.train_loss,
            opt(self.test_loss),
            opt(self.test_acc),
            self.consensus_dist,
            self.cum_comm_cost
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Empirical constants observed along a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ObservedConstants {
    /// Largest local gradient norm seen (local steps and evaluation points).
    pub max_grad_norm: f64,
    /// Largest `‖∇f_i(w̄) − ∇f(w̄)‖` over nodes and evaluated rounds.
    pub max_heterogeneity: f64,
    /// Smallest `‖∇f(w̄)‖²` over evaluated rounds.
    pub min_mean_grad_sq: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub observed: ObservedConstants,
    pub final_params: Vec<Vec<f64>>,
    /// Set when the run stopped early; `records` holds what was completed.
    pub abort: Option<Error>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<RunOutput> {
        match self.abort {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Stateful DFedAvgM run over a fixed topology.
pub struct Simulation<'a> {
    objective: &'a dyn Objective,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    graph: &'a Graph,
    mixing: &'a MixingMatrix,
    cfg: TrainConfig,
    failures: Option<FailurePlan>,
    states: Vec<NodeState>,
    round: usize,
    cum_comm_cost: u64,
    observed: ObservedConstants,
}

impl<'a> Simulation<'a> {
    pub fn new(
        objective: &'a dyn Objective,
        train: &'a Dataset,
        partition: &Partition,
        graph: &'a Graph,
        mixing: &'a MixingMatrix,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        objective.check(train)?;
        let n = mixing.n();
        if graph.n() != n || partition.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if graph.n() != n { graph.n() } else { partition.len() },
            });
        }
        let init = objective.init_params(cfg.seed);
        let states = partition
            .shards()
            .iter()
            .enumerate()
            .map(|(i, s)| NodeState::new(i, init.clone(), s.clone()))
            .collect();
        Ok(Simulation {
            objective,
            train,
            test: None,
            graph,
            mixing,
            cfg,
            failures: None,
            states,
            round: 0,
            cum_comm_cost: 0,
            observed: ObservedConstants {
                min_mean_grad_sq: f64::INFINITY,
                ..Default::default()
            },
        })
    }

    pub fn with_test_set(mut self, test: &'a Dataset) -> Result<Self> {
        self.objective.check(test)?;
        self.test = Some(test);
        Ok(self)
    }

    pub fn with_failures(mut self, plan: FailurePlan) -> Result<Self> {
        plan.validate()?;
        self.failures = Some(plan);
        Ok(self)
    }

    /// Replace every node's starting point (e.g. to study pure gossip).
    pub fn with_initial_params(mut self, params: Vec<Vec<f64>>) -> Result<Self> {
        if params.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.states.len(),
                got: params.len(),
            });
        }
        let p = self.objective.param_count();
        for (s, w) in self.states.iter_mut().zip(params) {
            if w.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: w.len(),
                });
            }
            s.prev_params = w.clone();
            s.params = w;
        }
        Ok(self)
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn alive_mask(&self, round: usize) -> Vec<bool> {
        match &self.failures {
            Some(plan) => plan.alive_mask(self.states.len(), round),
            None => vec![true; self.states.len()],
        }
    }

    /// One communication round: local steps on alive nodes, then mixing.
    pub fn step(&mut self) -> Result<Vec<bool>> {
        let round = self.round;
        let alive = self.alive_mask(round);
        let (cfg, objective, train) = (&self.cfg, self.objective, self.train);
        let stats: Vec<StepStats> = self
            .states
            .par_iter_mut()
            .zip(alive.par_iter())
            .filter(|(_, &a)| a)
            .map(|(s, _)| local_round(s, cfg, objective, train, round))
            .collect::<Result<_>>()?;
        for s in stats {
            self.observed.max_grad_norm = self.observed.max_grad_norm.max(s.max_grad_norm);
        }
        communication_round(&mut self.states, self.mixing, &alive)?;
        let live_edges = self.graph.alive_edge_count(&alive) as u64;
        self.cum_comm_cost += 2 * live_edges * self.objective.param_count() as u64;
        self.round += 1;
        Ok(alive)
    }

    /// Metrics over the nodes in `alive`.
    pub fn evaluate(&mut self, alive: &[bool]) -> Result<MetricsRecord> {
        let objective = self.objective;
        let train = self.train;
        let live: Vec<&NodeState> = self
            .states
            .iter()
            .zip(alive)
            .filter_map(|(s, &a)| a.then_some(s))
            .collect();
        if live.is_empty() {
            return Err(Error::AllNodesFailed(self.states.len()));
        }
        let count = live.len() as f64;
        let train_loss = live
            .par_iter()
            .map(|s| objective.loss(&s.params, train, &s.shard))
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            / count;
        let (test_loss, test_acc) = match self.test {
            None => (None, None),
            Some(test) => {
                let rows: Vec<usize> = (0..test.rows()).collect();
                let per_node: Vec<(f64, Option<f64>)> = live
                    .par_iter()
                    .map(|s| {
                        let loss = objective.loss(&s.params, test, &rows);
                        let acc = objective
                            .is_classifier()
                            .then(|| accuracy(objective, &s.params, test, &rows))
                            .transpose()?;
                        Ok((loss, acc))
                    })
                    .collect::<Result<_>>()?;
                let loss = per_node.iter().map(|p| p.0).sum::<f64>() / count;
                let acc = objective
                    .is_classifier()
                    .then(|| per_node.iter().filter_map(|p| p.1).sum::<f64>() / count);
                (Some(loss), acc)
            }
        };
        let param_rows: Vec<&[f64]> = live.iter().map(|s| s.params.as_slice()).collect();
        let consensus_dist = consensus_distance(param_rows.iter().copied());
        let mean = mean_vector(&param_rows, objective.param_count());

        // Global objective and its gradient at the average over all nodes'
        // shards (f = (1/N) Σ f_i).
        let per_node: Vec<(f64, Vec<f64>)> = self
            .states
            .par_iter()
            .map(|s| {
                (
                    objective.loss(&mean, train, &s.shard),
                    objective.grad(&mean, train, &s.shard),
                )
            })
            .collect();
        let n = per_node.len() as f64;
        let mean_model_loss = per_node.iter().map(|p| p.0).sum::<f64>() / n;
        let mut full_grad = vec![0.0; mean.len()];
        for (_, g) in &per_node {
            for (f, gi) in full_grad.iter_mut().zip(g) {
                *f += gi / n;
            }
        }
        let mean_model_grad_sq = full_grad.iter().map(|x| x * x).sum::<f64>();
        for (_, g) in &per_node {
            let dev = g.iter().zip(&full_grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            self.observed.max_heterogeneity = self.observed.max_heterogeneity.max(dev);
            self.observed.max_grad_norm = self.observed.max_grad_norm.max(norm(g));
        }
        self.observed.min_mean_grad_sq = self.observed.min_mean_grad_sq.min(mean_model_grad_sq);

        Ok(MetricsRecord {
            round: self.round,
            train_loss,
            test_loss,
            test_acc,
            consensus_dist,
            cum_comm_cost: self.cum_comm_cost,
            mean_model_loss,
            mean_model_grad_sq,
            alive: live.len(),
        })
    }

    /// Run the remaining rounds. Errors stop the run and are returned in
    /// [`RunOutput::abort`] together with the metrics gathered so far.
    pub fn run(mut self) -> RunOutput {
        let mut records = Vec::new();
        let mut abort = None;
        while self.round < self.cfg.rounds {
            let result = self.step().and_then(|alive| {
                let due = self.round % self.cfg.eval_every == 0 || self.round == self.cfg.rounds;
                if due {
                    records.push(self.evaluate(&alive)?);
                }
                Ok(())
            });
            if let Err(e) = result {
                abort = Some(e);
                break;
            }
        }
        RunOutput {
            records,
            observed: self.observed,
            final_params: self.states.into_iter().map(|s| s.params).collect(),
            abort,
        }
    }
}

/// Convenience wrapper around [`Simulation`].
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    cfg: &TrainConfig,
    graph: &Graph,
    mixing: &MixingMatrix,
    objective: &dyn Objective,
    train: &Dataset,
    partition: &Partition,
    test: Option<&Dataset>,
    failures: Option<FailurePlan>,
) -> Result<RunOutput> {
    let mut sim = Simulation::new(objective, train, partition, graph, mixing, cfg.clone())?;
    if let Some(test) = test {
        sim = sim.with_test_set(test)?;
    }
    if let Some(plan) = failures {
        sim = sim.with_failures(plan)?;
    }
    Ok(sim.run())
}
