// Writing and reading FMAP1 feature maps.

use patchsem::harness::fmap::{decode_fmap, encode_fmap};
use patchsem::harness::{generate_pair, read_fmap, write_fmap, SyntheticTaskSpec};
use patchsem::RngState;

pub fn run_example() -> patchsem::Result<()> {
    let spec = SyntheticTaskSpec { height: 4, width: 6, channels: 3, clusters: 2, ..Default::default() };
    let pair = generate_pair(&mut RngState::new(1), &spec)?;

    let dir = std::env::temp_dir().join(format!("patchsem-fmap-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("input.fmap");
    write_fmap(&path, &pair.input)?;
    let back = read_fmap(&path)?;
    println!("{} bytes, {}x{}x{}", std::fs::metadata(&path)?.len(), back.height(), back.width(), back.channels());
    // Values are stored as f32, so a second round trip is exact.
    assert_eq!(read_fmap(&path)?, back);

    let mut bytes = encode_fmap(&back)?;
    bytes.truncate(bytes.len() - 5);
    match decode_fmap(&bytes) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => unreachable!("truncated input decodes"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> patchsem::Result<()> {
    run_example()
}
