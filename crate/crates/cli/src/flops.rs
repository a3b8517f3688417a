//! `nat flops`: analytic parameter and MAC accounting for a model config
//! at a given input resolution.

use std::path::PathBuf;

use nat_core::analysis::model_stats;
use nat_core::io::read_config;
use nat_core::model::NatConfig;

use crate::report::{EXIT_IO, EXIT_OK, EXIT_USAGE};

pub fn run(preset: Option<&str>, config_path: Option<&PathBuf>, res: usize) -> i32 {
    let config = match (preset, config_path) {
        (Some(name), None) => match NatConfig::preset(name) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        (None, Some(path)) => match read_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_IO;
            }
        },
        _ => {
            eprintln!("error: provide exactly one of --preset or --config");
            return EXIT_USAGE;
        }
    };
    match model_stats(&config, res, res) {
        Ok(stats) => {
            println!("{}", stats.to_json());
            eprintln!(
                "{:.2}M params, {:.3}G macs at {res}x{res}",
                stats.params as f64 / 1e6,
                stats.macs as f64 / 1e9
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
