//! Grow a two-ring overlay by joins, fail nodes one at a time and in an
//! adjacent pair, and print the repair events.

use dflmesh::overlay::{OverlayEvent, OverlayNetwork};
use dflmesh::spectral;

fn main() -> dflmesh::Result<()> {
    let mut net = OverlayNetwork::build(64, 2, 11)?;
    let g = net.equivalent_graph();
    println!(
        "64 nodes, {} edges, max degree {}, κ = {:.3}",
        g.edge_count(),
        g.max_degree(),
        spectral::reduced_condition_number(&g)?
    );
    let hops = net.lookup_cost(2000, 1)?;
    println!("lookup: mean {:.2} hops, max {}", hops.mean, hops.max);

    let seen = net.event_log().len();
    let ids = net.ids();
    net.fail_node(ids[5])?;
    net.fail_node(ids[40])?;
    // two ring-neighbors at once leave a gap the two-hop table cannot close
    let order: Vec<_> = {
        let mut v: Vec<_> = net.nodes().map(|n| (n.coords[0], n.id)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.into_iter().map(|(_, id)| id).collect()
    };
    net.fail_simultaneous(&[order[10], order[11]])?;
    net.join_random(1000)?;

    for e in &net.event_log()[seen..] {
        match e {
            OverlayEvent::Join { id, hops } => println!("join {id} after {hops:?} hops"),
            OverlayEvent::Fail { ids } => println!("fail {ids:?}"),
            OverlayEvent::Recover { ring, pred, succ, via } => {
                println!("  ring {ring}: {pred} ↔ {succ} via {via:?}")
            }
            OverlayEvent::Unrecoverable { ring, orphan, failed_run } => {
                println!("  ring {ring}: {orphan} lost {failed_run:?}")
            }
            other => println!("  {other:?}"),
        }
    }
    match net.check() {
        Ok(()) => println!("{} nodes, rings and two-hop tables consistent", net.len()),
        Err(msg) => println!("inconsistent: {msg}"),
    }
    Ok(())
}
