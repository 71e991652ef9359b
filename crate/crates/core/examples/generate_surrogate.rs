//! Writes the surrogate classroom fixture.
//!
//! `cargo run -p peergroups --example generate_surrogate [path]`

use std::path::PathBuf;

fn main() -> std::io::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/surrogate_classroom.txt"));
    std::fs::write(&path, peergroups::fixtures::generate_surrogate_text())?;
    println!("wrote {}", path.display());
    Ok(())
}
