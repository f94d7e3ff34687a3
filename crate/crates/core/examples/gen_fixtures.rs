//! Regenerate the bundled fixtures.
//!
//! ```text
//! cargo run -p exist-core --example gen_fixtures -- fixtures
//! ```

use std::path::PathBuf;

use exist_core::synth;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;
    for (name, body) in synth::fixture_files(synth::DEFAULT_SEED) {
        std::fs::write(dir.join(name), body)?;
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}
