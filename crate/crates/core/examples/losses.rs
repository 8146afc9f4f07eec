// Every loss on one small batch, with the coupling diagnostic.
//
// Run with `cargo run --example losses`.

use patchsem::contrast::npc_paper_approx;
use patchsem::{dce, hdce, infonce, src_loss, ContrastConfig, RelationConfig, RngState};

pub fn run_example() -> patchsem::Result<()> {
    let mut rng = RngState::new(7);
    let z = rng.unit_rows(16, 8);
    // Outputs near their inputs: positives are easy, so coupling is strong.
    let mut w = z.clone();
    w.axpy(0.2, &rng.gaussian_matrix(16, 8, 1.0))?;
    let w = patchsem::numerics::l2_normalize_rows(&w)?;

    let cfg = ContrastConfig::default();
    let nce = infonce(&z, &w, &cfg)?;
    let dec = dce(&z, &w, &cfg)?;
    let hard = hdce(&z, &w, &ContrastConfig { gamma: 2.0, ..cfg })?;
    let src = src_loss(&z, &w, &RelationConfig::default())?;
    println!("infonce {:.6}", nce.loss);
    println!("dce     {:.6}", dec.loss);
    println!("hdce    {:.6}  (gamma = 2)", hard.loss);
    println!("src     {:.6}", src.loss);

    let approx = npc_paper_approx(&z, &w, &cfg)?;
    for k in 0..4 {
        println!("npc[{k}] exact {:.4}  approx {:.4}", nce.npc[k], approx[k]);
    }
    // The InfoNCE gradient on each query is the DCE gradient scaled by npc.
    let (a, b) = (nce.grad_w.row(0), dec.grad_w.row(0));
    println!("grad_w[0] ratio {:.6} vs npc {:.6}", a[0] / b[0], nce.npc[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    run_example()
}
