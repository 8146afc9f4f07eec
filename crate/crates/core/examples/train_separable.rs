// Training the projection head on a task where every cell is its own
// cluster and there is no noise; retrieval becomes perfect.

use patchsem::harness::{train, FinalMetrics, RunConfig};

pub fn config() -> RunConfig {
    RunConfig::from_json(include_str!("../configs/separable.json")).expect("bundled config is valid")
}

pub fn run_example() -> patchsem::Result<FinalMetrics> {
    let cfg = config();
    let out = train(&cfg)?;
    for r in &out.metrics.records {
        println!("step {:>4}  loss {:.4}  npc {:.4}", r.step, r.l_semantic, r.npc_mean);
    }
    let m = out.metrics.last;
    println!("top1 {:.4}  src_div {:.4}", m.top1_retrieval, m.src_div);
    Ok(m)
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    run_example().map(|_| ())
}
