//! Regenerates the bundled scenes: `cargo run -p nif-core --example gen_scenes -- scenes`

fn main() -> nif_core::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "scenes".into());
    for p in nif_core::scene_io::write_bundled_scenes(dir.as_ref())? {
        println!("{}", p.display());
    }
    Ok(())
}
