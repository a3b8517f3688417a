//! `nat forward`: run the model on an NTSR image and write the logits.

use std::path::Path;

use nat_core::io::{read_config, read_natw, read_ntsr, write_ntsr};
use nat_core::model::nat_forward;
use nat_core::{Error, Scalar, Tensor};
use serde_json::json;

use crate::report::{EXIT_IO, EXIT_OK};

pub fn run(
    config_path: &Path,
    weights_path: &Path,
    input_path: &Path,
    output_path: &Path,
    precision: &str,
) -> i32 {
    let result = match precision {
        "f32" => infer::<f32>(config_path, weights_path, input_path, output_path),
        _ => infer::<f64>(config_path, weights_path, input_path, output_path),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
    }
}

fn infer<T: Scalar>(
    config_path: &Path,
    weights_path: &Path,
    input_path: &Path,
    output_path: &Path,
) -> Result<String, Error> {
    let config = read_config(config_path)?;
    let weights = read_natw::<T>(weights_path, &config)?;
    let image: Tensor<T> = read_ntsr(input_path)?.to_tensor();
    let logits = nat_forward(&image, &config, &weights)?;
    write_ntsr(output_path, &logits)?;

    let scores: Vec<f64> = logits.data().iter().map(|v| v.to_f64()).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite logits"));
    let top5: Vec<usize> = order.iter().take(5).copied().collect();
    let summary = json!({
        "argmax": top5[0],
        "top5": top5,
        "num_classes": scores.len(),
        "output": output_path.display().to_string(),
    });
    eprintln!("wrote {} logits to {}", scores.len(), output_path.display());
    Ok(summary.to_string())
}
