//! Generates a config + random weights + random input for a preset, so
//! the CLI's `forward` command can be exercised without a training
//! pipeline:
//!
//! ```text
//! cargo run --release -p nat-core --example gen_fixtures -- desk 32 /tmp/nat 42
//! nat forward --config /tmp/nat/config.json --weights /tmp/nat/weights.natw \
//!     --input /tmp/nat/input.ntsr --output /tmp/nat/logits.ntsr
//! ```

use std::path::PathBuf;

use nat_core::io::{config_to_json, write_natw, write_ntsr};
use nat_core::model::{NatConfig, NatWeights};
use nat_core::{Rng, Tensor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 4 {
        eprintln!("usage: gen_fixtures <preset> <resolution> <out_dir> [seed]");
        std::process::exit(2);
    }
    let preset = &args[1];
    let res: usize = args[2].parse().expect("resolution must be an integer");
    let out_dir = PathBuf::from(&args[3]);
    let seed: u64 = args.get(4).map(|s| s.parse().expect("seed")).unwrap_or(42);

    let config = NatConfig::preset(preset).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(2);
    });
    std::fs::create_dir_all(&out_dir).expect("create output dir");

    let mut rng = Rng::new(seed);
    let weights = NatWeights::<f32>::random_init(&config, &mut rng).expect("init weights");
    let image = Tensor::<f32>::random_normal(vec![res, res, 3], &mut rng).expect("image");

    std::fs::write(out_dir.join("config.json"), config_to_json(&config)).expect("write config");
    write_natw(&out_dir.join("weights.natw"), &weights).expect("write weights");
    write_ntsr(&out_dir.join("input.ntsr"), &image).expect("write input");
    println!(
        "wrote config.json, weights.natw, input.ntsr for preset '{preset}' at {res}x{res} (seed {seed}) into {}",
        out_dir.display()
    );
}
