//! Declarative experiment configs, artifact writing, topology comparison and
//! failure sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams, BoundsReport};
use crate::data::{self, Dataset, Partition};
use crate::engine::{
    failure_mask, metrics_csv, run_experiment, FailureMode, FailurePlan, MetricsRecord,
    RunOutput, StepSize, TrainConfig,
};
use crate::error::{Error, Result};
use crate::graph::{self, Graph, GraphJson};
use crate::mixing::{self, MixingMatrix};
use crate::models::{self, LeastSquares, Logistic, Mlp, Objective};
use crate::overlay::OverlayNetwork;
use crate::rng::rng_from;
use crate::spectral::{self, SpectralSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    ErdosRenyi,
    /// Even `d`: union of `d/2` random virtual rings. `d = 3`: ring plus a
    /// random perfect matching.
    Expander,
    /// Built by running the overlay join protocol with `d/2` rings.
    Overlay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    /// Parse `ring`, `complete`, `expander:<d>`, `overlay:<d>` or `er:<p>`.
    pub fn parse_shorthand(s: &str, n: usize, seed: u64) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let bad = |msg: &str| Error::Config(format!("topology {s:?}: {msg}"));
        let int_arg = || -> Result<Option<usize>> {
            arg.map(|a| a.parse::<usize>().map_err(|_| bad("expected an integer degree")))
                .transpose()
        };
        let spec = |kind, d, p| TopologySpec { kind, n, d, p, seed };
        match name.trim() {
            "ring" => Ok(spec(TopologyKind::Ring, None, None)),
            "complete" => Ok(spec(TopologyKind::Complete, None, None)),
            "expander" => Ok(spec(TopologyKind::Expander, Some(int_arg()?.unwrap_or(4)), None)),
            "overlay" => Ok(spec(TopologyKind::Overlay, Some(int_arg()?.unwrap_or(4)), None)),
            "er" | "erdos_renyi" => {
                let p = arg
                    .ok_or_else(|| bad("needs an edge probability, e.g. er:0.3"))?
                    .parse::<f64>()
                    .map_err(|_| bad("expected a probability"))?;
                Ok(spec(TopologyKind::ErdosRenyi, None, Some(p)))
            }
            _ => Err(bad("unknown kind")),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            TopologyKind::Ring => "ring".into(),
            TopologyKind::Complete => "complete".into(),
            TopologyKind::Expander => format!("expander:{}", self.d.unwrap_or(4)),
            TopologyKind::Overlay => format!("overlay:{}", self.d.unwrap_or(4)),
            TopologyKind::ErdosRenyi => format!("er:{}", self.p.unwrap_or(0.0)),
        }
    }

    pub fn build(&self) -> Result<Graph> {
        let need_d = || {
            self.d
                .ok_or_else(|| Error::Config(format!("topology {:?} needs `d`", self.kind)))
        };
        match self.kind {
            TopologyKind::Ring => graph::make_ring(self.n),
            TopologyKind::Complete => graph::make_complete(self.n),
            TopologyKind::ErdosRenyi => {
                let p = self
                    .p
                    .ok_or_else(|| Error::Config("erdos_renyi topology needs `p`".into()))?;
                graph::make_connected_erdos_renyi(
                    self.n,
                    p,
                    self.seed,
                    graph::DEFAULT_RESAMPLE_BUDGET,
                )
            }
            TopologyKind::Expander => match need_d()? {
                3 => graph::make_ring_matching(self.n, self.seed),
                d => graph::make_regular_expander(self.n, d, self.seed),
            },
            TopologyKind::Overlay => {
                let d = need_d()?;
                if d < 2 || d % 2 != 0 {
                    return Err(Error::Config(format!(
                        "overlay degree must be even and at least 2, got {d}"
                    )));
                }
                let g = OverlayNetwork::build(self.n, d / 2, self.seed)?.equivalent_graph();
                if !g.is_connected() {
                    return Err(Error::Disconnected);
                }
                Ok(g)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    #[default]
    Laplacian,
    MetropolisHastings,
    MaxDegree,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    #[serde(default)]
    pub kind: MixingKind,
    /// Laplacian family parameter; omitted means the optimal `1/κ`.
    #[serde(default)]
    pub theta: Option<f64>,
}

impl MixingSpec {
    /// The matrix and, for the Laplacian family, the θ used.
    pub fn build(&self, g: &Graph) -> Result<(MixingMatrix, Option<f64>)> {
        match (self.kind, self.theta) {
            (MixingKind::Laplacian, None) => {
                let (m, theta) = mixing::optimal_laplacian_mixing(g)?;
                Ok((m, Some(theta)))
            }
            (MixingKind::Laplacian, Some(theta)) => Ok((mixing::laplacian_mixing(g, theta)?, Some(theta))),
            (MixingKind::MetropolisHastings, _) => Ok((mixing::metropolis_hastings_mixing(g)?, None)),
            (MixingKind::MaxDegree, _) => Ok((mixing::max_degree_mixing(g)?, None)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Constant step size.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Decaying step size `c/t`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub beta: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

fn default_shift() -> f64 {
    1.0
}

fn default_spread() -> f64 {
    0.5
}

impl TrainSpec {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let step = match (self.eta, self.c) {
            (Some(eta), None) => StepSize::Constant(eta),
            (None, Some(c)) => StepSize::Decay { c },
            _ => {
                return Err(Error::Config(
                    "train needs exactly one of `eta` (constant) or `c` (c/t schedule)".into(),
                ))
            }
        };
        let cfg = TrainConfig {
            step,
            beta: self.beta,
            local_steps: self.k,
            rounds: self.t,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_every: self.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    /// Classes dealt round-robin to nodes.
    Label,
    /// Regression groups dealt round-robin to nodes.
    Group,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    SyntheticClassification {
        samples: usize,
        test_samples: usize,
        dims: usize,
        classes: usize,
        cluster_sep: f64,
        #[serde(default)]
        seed: u64,
        partition: PartitionKind,
    },
    SyntheticRegression {
        samples: usize,
        dims: usize,
        groups: usize,
        /// Spread of the per-group feature means.
        #[serde(default = "default_shift")]
        shift: f64,
        /// Spread of the per-group true weights around a shared base.
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
        partition: PartitionKind,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        /// Keep only the first `limit` training rows.
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        seed: u64,
        partition: PartitionKind,
    },
}

/// Loaded training data, its client split, and an optional global test set.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub partition: Partition,
    pub test: Option<Dataset>,
}

impl DataSpec {
    pub fn prepare(&self, nodes: usize, base_dir: &Path) -> Result<PreparedData> {
        match self {
            DataSpec::SyntheticClassification {
                samples,
                test_samples,
                dims,
                classes,
                cluster_sep,
                seed,
                partition,
            } => {
                let (train, test) = data::synthetic_classification_split(
                    *samples,
                    *test_samples,
                    *dims,
                    *classes,
                    *cluster_sep,
                    *seed,
                )?;
                let partition = split(&train, None, *partition, nodes, *seed)?;
                Ok(PreparedData {
                    train,
                    partition,
                    test: (*test_samples > 0).then_some(test),
                })
            }
            DataSpec::SyntheticRegression {
                samples,
                dims,
                groups,
                shift,
                spread,
                noise,
                seed,
                partition,
            } => {
                let (train, group_of) =
                    data::synthetic_regression(*samples, *dims, *groups, *shift, *spread, *noise, *seed)?;
                let partition = split(&train, Some((&group_of, *groups)), *partition, nodes, *seed)?;
                Ok(PreparedData {
                    train,
                    partition,
                    test: None,
                })
            }
            DataSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                limit,
                seed,
                partition,
            } => {
                let mut train = data::load_idx(base_dir.join(images), base_dir.join(labels))?;
                if let Some(limit) = limit {
                    let rows: Vec<usize> = (0..(*limit).min(train.rows())).collect();
                    train = train.subset(&rows);
                }
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(data::load_idx(base_dir.join(i), base_dir.join(l))?),
                    (None, None) => None,
                    _ => {
                        return Err(Error::Config(
                            "give both `test_images` and `test_labels` or neither".into(),
                        ))
                    }
                };
                let partition = split(&train, None, *partition, nodes, *seed)?;
                Ok(PreparedData {
                    train,
                    partition,
                    test,
                })
            }
        }
    }
}

fn split(
    ds: &Dataset,
    groups: Option<(&[usize], usize)>,
    kind: PartitionKind,
    nodes: usize,
    seed: u64,
) -> Result<Partition> {
    match (kind, groups) {
        (PartitionKind::Iid, _) => data::partition_iid(ds, nodes, seed),
        (PartitionKind::Label, _) => data::partition_by_label(ds, nodes),
        (PartitionKind::Group, Some((keys, count))) => data::partition_by_key(keys, count, nodes),
        (PartitionKind::Group, None) => Err(Error::Config(
            "`group` partition applies to synthetic_regression only".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    LeastSquares,
    Logistic {
        #[serde(default)]
        l2: f64,
    },
    Mlp {
        hidden: usize,
    },
}

impl ModelSpec {
    pub fn build(&self, ds: &Dataset) -> Result<Box<dyn Objective>> {
        Ok(match self {
            ModelSpec::LeastSquares => Box::new(LeastSquares::for_dataset(ds)?),
            ModelSpec::Logistic { l2 } => Box::new(Logistic::for_dataset(ds, *l2)?),
            ModelSpec::Mlp { hidden } => {
                let classes = ds.classes().ok_or_else(|| {
                    Error::Config("mlp needs a classification dataset".into())
                })?;
                let m = Mlp::new(ds.dims(), *hidden, classes)?;
                m.check(ds)?;
                Box::new(m)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    #[serde(default)]
    pub mixing: MixingSpec,
    pub train: TrainSpec,
    pub data: DataSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub failures: Option<FailurePlan>,
    /// Output directory (the CLI's `--out` takes precedence).
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub evaluate_bounds: bool,
    /// Loss target for rounds-to-threshold on non-convex models.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Topology shorthands (`ring`, `expander:4`, ...) for `compare`.
    #[serde(default)]
    pub compare: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }
}

/// Everything built from a config before training starts.
pub struct Setup {
    pub graph: Graph,
    pub mixing: MixingMatrix,
    pub theta: Option<f64>,
    pub data: PreparedData,
    pub objective: Box<dyn Objective>,
    pub train: TrainConfig,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let train = cfg.train.to_config()?;
        if let Some(plan) = &cfg.failures {
            plan.validate()?;
        }
        let graph = cfg.topology.build()?;
        let (mixing, theta) = cfg.mixing.build(&graph)?;
        let data = cfg.data.prepare(graph.n(), base_dir)?;
        let objective = cfg.model.build(&data.train)?;
        Ok(Setup {
            graph,
            mixing,
            theta,
            data,
            objective,
            train,
        })
    }

    pub fn run(&self, failures: Option<FailurePlan>) -> Result<RunOutput> {
        run_experiment(
            &self.train,
            &self.graph,
            &self.mixing,
            self.objective.as_ref(),
            &self.data.train,
            &self.data.partition,
            self.data.test.as_ref(),
            failures,
        )
    }

    pub fn spectral_summary(&self) -> Result<SpectralSummary> {
        spectral::summarize(&self.graph, self.mixing.lambda())
    }

    /// Global optimum of `(1/N) Σ f_i` for least squares; `None` otherwise.
    pub fn convex_optimum(&self) -> Result<Option<f64>> {
        if self.data.train.values().is_none() {
            return Ok(None);
        }
        let (_, f_star) =
            models::least_squares_federated_optimum(&self.data.train, self.data.partition.shards())?;
        Ok(Some(f_star))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TopologyJson {
    pub label: String,
    #[serde(flatten)]
    pub graph: GraphJson,
    pub degrees: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralJson {
    #[serde(flatten)]
    pub summary: SpectralSummary,
    pub theta: Option<f64>,
}

/// Constants plugged into the bounds, with where each came from.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsJson {
    pub params: BoundParams,
    pub report: BoundsReport,
    pub observed_min_grad_sq: f64,
    pub notes: Vec<String>,
}

/// Result of [`run_from_config`].
pub struct RunArtifacts {
    pub output: RunOutput,
    pub spectral: SpectralSummary,
    pub bounds: Option<BoundsJson>,
    pub dir: PathBuf,
}

/// Build, run and write `metrics.csv`, `topology.json`, `spectral.json`
/// and, when requested, `bounds.json` into `out`. Metrics gathered before a
/// numeric failure are still written; the failure is then returned.
pub fn run_from_config(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<RunArtifacts> {
    let setup = Setup::new(cfg, base_dir)?;
    let spectral = setup.spectral_summary()?;
    fs::create_dir_all(out)?;
    let topo = TopologyJson {
        label: cfg.topology.label(),
        graph: setup.graph.to_json(),
        degrees: setup.graph.degrees(),
    };
    write_atomic(&out.join("topology.json"), &serde_json::to_string_pretty(&topo)?)?;
    let spec_json = SpectralJson {
        summary: spectral,
        theta: setup.theta,
    };
    write_atomic(&out.join("spectral.json"), &serde_json::to_string_pretty(&spec_json)?)?;

    let output = setup.run(cfg.failures)?;
    write_atomic(&out.join("metrics.csv"), &metrics_csv(&output.records))?;
    if let Some(e) = output.abort {
        return Err(e);
    }
    let bounds = if cfg.evaluate_bounds {
        let b = measured_bounds(&setup, &output)?;
        write_atomic(&out.join("bounds.json"), &serde_json::to_string_pretty(&b)?)?;
        Some(b)
    } else {
        None
    };
    Ok(RunArtifacts {
        output,
        spectral,
        bounds,
        dir: out.to_path_buf(),
    })
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Bound constants from a finished run. Least squares gets its exact
/// smoothness constant and optimum; other objectives use sampled estimates.
pub fn measured_bounds(setup: &Setup, output: &RunOutput) -> Result<BoundsJson> {
    let obj = setup.objective.as_ref();
    let train = &setup.data.train;
    let shards = setup.data.partition.shards();
    let mut notes = Vec::new();
    let init = obj.init_params(setup.train.seed);
    let f_init = models::global_loss(obj, &init, train, shards);
    let (l, f_star) = match setup.convex_optimum()? {
        Some(f_star) => {
            let l = shards
                .iter()
                .map(|s| models::least_squares_smoothness(train, s))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            notes.push("L is the exact largest shard smoothness constant".into());
            notes.push("min f from the normal equations".into());
            (l, f_star)
        }
        None => {
            let l = models::estimate_smoothness(obj, train, shards, &init, 32, setup.train.seed)?;
            notes.push("L estimated from sampled gradient-difference ratios".into());
            notes.push("min f taken as 0 (losses are nonnegative)".into());
            (l, 0.0)
        }
    };
    let sigma = match setup.train.batch_size {
        None => {
            notes.push("sigma = 0 (full-batch gradients)".into());
            0.0
        }
        Some(b) => {
            let mean = mean_params(&output.final_params);
            notes.push("sigma estimated at the final averaged model".into());
            models::estimate_gradient_noise(obj, train, shards, &mean, b, 64, setup.train.seed)
        }
    };
    notes.push("zeta and B are the maxima observed during the run".into());
    let (eta, c) = match setup.train.step {
        StepSize::Constant(eta) => (eta, 0.0),
        StepSize::Decay { c } => (0.0, c),
    };
    let params = BoundParams {
        l,
        sigma,
        zeta: output.observed.max_heterogeneity,
        b: output.observed.max_grad_norm,
        k: setup.train.local_steps as f64,
        t: setup.train.rounds as f64,
        eta,
        c,
        beta: setup.train.beta,
        lambda: setup.mixing.lambda(),
        nodes: shards.len() as f64,
        n: shards.iter().map(Vec::len).min().unwrap_or(0) as f64,
        f_gap: (f_init - f_star).max(0.0),
        sup_f: output
            .records
            .iter()
            .map(|r| r.train_loss)
            .fold(f_init, f64::max),
    };
    let report = bounds::report(&params, 10_000)?;
    Ok(BoundsJson {
        params,
        report,
        observed_min_grad_sq: output.observed.min_mean_grad_sq,
        notes,
    })
}

fn mean_params(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / rows.len() as f64;
        }
    }
    mean
}

/// First evaluated round whose loss is at or below `target`.
pub fn rounds_to_threshold(records: &[MetricsRecord], target: f64, use_mean_model: bool) -> Option<usize> {
    records
        .iter()
        .find(|r| {
            let loss = if use_mean_model { r.mean_model_loss } else { r.train_loss };
            loss <= target
        })
        .map(|r| r.round)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub topology: String,
    pub edges: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub rounds_to_threshold: Option<usize>,
    pub final_train_loss: f64,
    pub final_accuracy: Option<f64>,
    pub comm_cost: u64,
    #[serde(skip)]
    pub records: Vec<MetricsRecord>,
}

pub const COMPARE_CSV_HEADER: &str =
    "topology,edges,kappa,lambda,rounds_to_threshold,final_train_loss,final_accuracy,comm_cost";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.topology,
            r.edges,
            r.kappa,
            r.lambda,
            r.rounds_to_threshold.map(|v| v.to_string()).unwrap_or_default(),
            r.final_train_loss,
            r.final_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.comm_cost
        ));
    }
    out
}

/// Run the same training setup on each topology. The threshold is
/// `(1 + 1e-3)·min f` on the averaged model for least squares, otherwise
/// the config's `threshold` on the mean local training loss.
pub fn compare_topologies(
    cfg: &ExperimentConfig,
    topologies: &[TopologySpec],
    base_dir: &Path,
) -> Result<Vec<CompareRow>> {
    topologies
        .iter()
        .map(|topo| {
            let mut c = cfg.clone();
            c.topology = topo.clone();
            let setup = Setup::new(&c, base_dir)?;
            let output = setup.run(c.failures)?.into_result()?;
            let (target, mean_model) = match setup.convex_optimum()? {
                Some(f_star) => (Some((1.0 + 1e-3) * f_star), true),
                None => (c.threshold, false),
            };
            let last = output.last().cloned();
            Ok(CompareRow {
                topology: topo.label(),
                edges: setup.graph.edge_count(),
                kappa: spectral::reduced_condition_number(&setup.graph)?,
                lambda: setup.mixing.lambda(),
                rounds_to_threshold: target
                    .and_then(|t| rounds_to_threshold(&output.records, t, mean_model)),
                final_train_loss: last.as_ref().map_or(f64::NAN, |r| r.train_loss),
                final_accuracy: last.as_ref().and_then(|r| r.test_acc),
                comm_cost: last.as_ref().map_or(0, |r| r.cum_comm_cost),
                records: output.records,
            })
        })
        .collect()
}

/// How often a topology's alive subgraph stays connected under random node
/// failures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConnectivityStats {
    pub trials: usize,
    pub connected: usize,
    pub mean_components: f64,
}

pub fn connectivity_under_failures(g: &Graph, fraction: f64, trials: usize, seed: u64) -> ConnectivityStats {
    let results: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let alive = failure_mask(g.n(), fraction, rng_from(seed, &[t as u64]));
            g.component_count(&alive)
        })
        .collect();
    ConnectivityStats {
        trials,
        connected: results.iter().filter(|&&c| c == 1).count(),
        mean_components: results.iter().sum::<usize>() as f64 / trials.max(1) as f64,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureRow {
    pub topology: String,
    pub fraction: f64,
    pub seeds: usize,
    pub mean_final_accuracy: Option<f64>,
    pub mean_final_train_loss: f64,
    /// Baseline minus failed accuracy (or failed minus baseline loss for
    /// non-classifiers), averaged over seeds.
    pub degradation: f64,
    pub connected_fraction: f64,
    pub mean_components: f64,
}

pub const FAILURE_CSV_HEADER: &str =
    "topology,fraction,seeds,mean_final_accuracy,mean_final_train_loss,degradation,connected_fraction,mean_components";

pub fn failure_csv(rows: &[FailureRow]) -> String {
    let mut out = format!("{FAILURE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.topology,
            r.fraction,
            r.seeds,
            r.mean_final_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.mean_final_train_loss,
            r.degradation,
            r.connected_fraction,
            r.mean_components
        ));
    }
    out
}

/// Final quality of one run: accuracy if available, else negative loss, so
/// that larger is better in both cases.
fn score(output: &RunOutput) -> (Option<f64>, f64, f64) {
    let last = output.last().expect("at least one evaluated round");
    let quality = last.test_acc.unwrap_or(-last.train_loss);
    (last.test_acc, last.train_loss, quality)
}

/// For each fraction, rerun the config over `seeds` training seeds with
/// seeded failure masks, and report mean quality, degradation relative to
/// the failure-free run with the same seed, and connectivity of the alive
/// subgraph in every failed round.
pub fn failure_sweep(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    seeds: usize,
    mode: FailureMode,
    base_dir: &Path,
) -> Result<Vec<FailureRow>> {
    if seeds == 0 {
        return Err(Error::Config("failure sweep needs at least one seed".into()));
    }
    let setups: Vec<Setup> = (0..seeds as u64)
        .map(|s| {
            let mut c = cfg.clone();
            c.train.seed = cfg.train.seed.wrapping_add(s);
            Setup::new(&c, base_dir)
        })
        .collect::<Result<_>>()?;
    let baselines: Vec<f64> = setups
        .par_iter()
        .map(|s| Ok(score(&s.run(None)?.into_result()?).2))
        .collect::<Result<_>>()?;
    fractions
        .iter()
        .map(|&fraction| {
            let per_seed: Vec<(Option<f64>, f64, f64, usize, usize)> = setups
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let plan = FailurePlan {
                        fraction,
                        mode,
                        seed: s.train.seed,
                    };
                    let out = s.run((fraction > 0.0).then_some(plan))?.into_result()?;
                    let (acc, loss, quality) = score(&out);
                    let (mut connected, mut components) = (0, 0);
                    for round in 0..s.train.rounds {
                        let c = s.graph.component_count(&plan.alive_mask(s.graph.n(), round));
                        connected += usize::from(c == 1);
                        components += c;
                    }
                    Ok((acc, loss, baselines[i] - quality, connected, components))
                })
                .collect::<Result<_>>()?;
            let k = per_seed.len() as f64;
            let rounds = (setups[0].train.rounds.max(1) * per_seed.len()) as f64;
            let accs: Vec<f64> = per_seed.iter().filter_map(|r| r.0).collect();
            Ok(FailureRow {
                topology: cfg.topology.label(),
                fraction,
                seeds,
                mean_final_accuracy: (!accs.is_empty())
                    .then(|| accs.iter().sum::<f64>() / accs.len() as f64),
                mean_final_train_loss: per_seed.iter().map(|r| r.1).sum::<f64>() / k,
                degradation: per_seed.iter().map(|r| r.2).sum::<f64>() / k,
                connected_fraction: per_seed.iter().map(|r| r.3).sum::<usize>() as f64 / rounds,
                mean_components: per_seed.iter().map(|r| r.4).sum::<usize>() as f64 / rounds,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "topology": {"kind": "ring", "n": 4},
        "train": {"eta": 0.05, "K": 2, "T": 3, "seed": 1},
        "data": {"kind": "synthetic_regression", "samples": 40, "dims": 3, "groups": 4,
                 "noise": 0.1, "partition": "group"},
        "model": {"kind": "least_squares"}
    }"#;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(SMALL).unwrap();
        assert_eq!(cfg.mixing.kind, MixingKind::Laplacian);
        assert_eq!(cfg.train.eval_every, 1);
        assert!(cfg.failures.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SMALL.replace("\"K\": 2", "\"K\": 2, \"momentum\": 0.9");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("momentum"), "{err}");
        let bad = SMALL.replace("\"noise\": 0.1", "\"noise\": 0.1, \"extra\": 1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn step_size_must_be_exactly_one_kind() {
        let both = SMALL.replace("\"eta\": 0.05", "\"eta\": 0.05, \"c\": 1.0");
        let cfg = ExperimentConfig::from_json(&both).unwrap();
        assert!(matches!(cfg.train.to_config(), Err(Error::Config(_))));
    }

    #[test]
    fn shorthand_topologies() {
        let t = TopologySpec::parse_shorthand("expander:3", 10, 2).unwrap();
        assert_eq!((t.kind, t.d), (TopologyKind::Expander, Some(3)));
        assert_eq!(t.build().unwrap().regular_degree(), Some(3));
        let t = TopologySpec::parse_shorthand("er:0.5", 10, 2).unwrap();
        assert_eq!(t.p, Some(0.5));
        assert!(TopologySpec::parse_shorthand("star", 10, 0).is_err());
        assert!(TopologySpec::parse_shorthand("er", 10, 0).is_err());
    }

    #[test]
    fn single_topology_comparison_has_one_row() {
        let cfg = ExperimentConfig::from_json(SMALL).unwrap();
        let rows = compare_topologies(&cfg, &[cfg.topology.clone()], Path::new(".")).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(compare_csv(&rows).starts_with(COMPARE_CSV_HEADER));
    }

    #[test]
    fn connectivity_of_complete_graph_survives() {
        let g = graph::make_complete(20).unwrap();
        let s = connectivity_under_failures(&g, 0.5, 10, 0);
        assert_eq!(s.connected, 10);
    }
}
