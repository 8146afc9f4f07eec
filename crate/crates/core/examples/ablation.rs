// A short ablation over the seven loss configurations.
//
// `cargo run --release --example ablation -- 20` runs the full 20-seed table.

use patchsem::harness::ablation::sign_test;
use patchsem::harness::{run_ablation, AblationGrid, AblationTable, RunConfig};

pub fn run_example(seeds: u64) -> patchsem::Result<AblationTable> {
    let base = RunConfig::from_json(include_str!("../configs/ablation.json"))?;
    let grid = AblationGrid::default();
    let seeds: Vec<u64> = (0..seeds).collect();
    let table = run_ablation(&base, &grid, &seeds, 1)?;
    print!("{}", table.to_csv());

    let full = grid.index_of("DCE+SRC+HNeg").expect("row exists");
    let plain = grid.index_of("InfoNCE").expect("row exists");
    let top1 = |c| table.column(c, |m| m.top1_retrieval);
    let (wins, losses, p) = sign_test(&top1(full), &top1(plain));
    println!("DCE+SRC+HNeg vs InfoNCE: {wins} wins, {losses} losses, p = {p:.4}");
    Ok(table)
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    run_example(seeds).map(|_| ())
}
