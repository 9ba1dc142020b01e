//! Connectivity of ring and expander graphs under random node loss, then
//! the accuracy cost of failures during training.

use std::path::Path;

use dflmesh::engine::FailureMode;
use dflmesh::experiments::{
    connectivity_under_failures, failure_csv, failure_sweep, ExperimentConfig, TopologySpec,
};
use dflmesh::graph;

fn main() -> dflmesh::Result<()> {
    let ring = graph::make_ring(100)?;
    let expander = graph::make_regular_expander(100, 4, 3)?;
    for fraction in [0.05, 0.1, 0.2, 0.3] {
        let r = connectivity_under_failures(&ring, fraction, 200, 1);
        let e = connectivity_under_failures(&expander, fraction, 200, 1);
        println!(
            "{:>4.0}% down: ring connected {:>3}/200 ({:.1} components), expander {:>3}/200 ({:.2})",
            fraction * 100.0,
            r.connected,
            r.mean_components,
            e.connected,
            e.mean_components
        );
    }

    let mut cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/classification.json"))?;
    for label in ["ring", "expander:4"] {
        cfg.topology = TopologySpec::parse_shorthand(label, cfg.topology.n, 0)?;
        let rows = failure_sweep(&cfg, &[0.0, 0.1, 0.2, 0.3], 3, FailureMode::Transient, Path::new("."))?;
        print!("{}", failure_csv(&rows));
    }
    Ok(())
}
