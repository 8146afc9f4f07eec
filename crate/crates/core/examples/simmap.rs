// Similarity of one query cell to every cell after training on a noiseless
// eight-cluster map, drawn as text.

use patchsem::harness::{export_simmap, train, RunConfig, SimilarityGrids};

pub fn run_example(query: (usize, usize)) -> patchsem::Result<(SimilarityGrids, Vec<usize>)> {
    let cfg = RunConfig::from_json(include_str!("../configs/noiseless.json"))?;
    let out = train(&cfg)?;
    let grids = export_simmap(&out.pair.input, &out.pair.output, &out.heads, query)?;
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for h in 0..grids.height {
        let line: String = (0..grids.width)
            .map(|w| {
                let v = grids.input[h * grids.width + w];
                shades[(((v + 1.0) / 2.0) * 9.0).round().clamp(0.0, 9.0) as usize]
            })
            .collect();
        println!("{line}");
    }
    Ok((grids, out.pair.labels))
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    run_example((3, 12)).map(|_| ())
}
