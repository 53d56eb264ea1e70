//! Writes a synthetic interaction log for trying out the pipeline without
//! downloading a public dataset.
//!
//! ```text
//! cargo run --release --example make_demo_data [PATH] [SEED]
//! ```

use hamrec::synth::{generate, to_tsv, SynthConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "demo_interactions.tsv".to_owned());
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(7);

    let dataset = generate(&SynthConfig::movielens_scale(seed));
    std::fs::write(&path, to_tsv(&dataset))?;
    eprintln!(
        "wrote {} events ({} users, {} items) to {path}",
        dataset.num_events(),
        dataset.num_users(),
        dataset.num_items()
    );
    Ok(())
}
