//! Same label-sharded classification task on ring, 3-regular and complete
//! graphs.

use std::path::Path;

use dflmesh::experiments::{compare_csv, compare_topologies, ExperimentConfig, TopologySpec};

fn main() -> dflmesh::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/classification.json"))?;
    let specs = ["ring", "expander:3", "expander:4", "complete"]
        .iter()
        .map(|s| TopologySpec::parse_shorthand(s, cfg.topology.n, 0))
        .collect::<dflmesh::Result<Vec<_>>>()?;
    let rows = compare_topologies(&cfg, &specs, Path::new("."))?;
    print!("{}", compare_csv(&rows));
    Ok(())
}
