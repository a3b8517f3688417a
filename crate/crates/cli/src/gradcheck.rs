//! `nat gradcheck`: analytic gradients of the fused attention against
//! central finite differences, in double precision.

use std::time::Instant;

use nat_core::attention::{na_backward, na_forward};
use nat_core::neighborhood::NeighborhoodSpec;
use nat_core::{Rng, Tensor};

use crate::report::{Check, RunReport};

pub struct GradcheckArgs {
    pub step: f64,
    pub height: usize,
    pub width: usize,
    pub head_dim: usize,
    pub kernel: usize,
    pub zero_cotangent: bool,
}

/// Relative error with an absolute floor: entries whose true gradient is
/// below the floor are judged in absolute terms.
const REL_FLOOR: f64 = 1e-4;

pub fn run(report: &mut RunReport, seed: u64, args: &GradcheckArgs) -> Result<(), String> {
    let spec = NeighborhoodSpec::new(args.kernel).map_err(|e| e.to_string())?;
    let (h, w, d, heads) = (args.height, args.width, args.head_dim, 1usize);
    let start = Instant::now();

    let mut rng = Rng::new(seed);
    let q = Tensor::<f64>::random_normal(vec![h, w, heads, d], &mut rng).map_err(|e| e.to_string())?;
    let k = Tensor::<f64>::random_normal(vec![h, w, heads, d], &mut rng).map_err(|e| e.to_string())?;
    let v = Tensor::<f64>::random_normal(vec![h, w, heads, d], &mut rng).map_err(|e| e.to_string())?;
    let table = 2 * args.kernel - 1;
    let bias = Tensor::<f64>::random_normal(vec![heads, table, table], &mut rng)
        .map_err(|e| e.to_string())?;
    let d_out = if args.zero_cotangent {
        Tensor::<f64>::zeros(vec![h, w, heads, d]).map_err(|e| e.to_string())?
    } else {
        Tensor::<f64>::random_normal(vec![h, w, heads, d], &mut rng).map_err(|e| e.to_string())?
    };

    let grads = na_backward(&q, &k, &v, &bias, spec, &d_out).map_err(|e| e.to_string())?;

    let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        na_forward(q, k, v, b, spec)
            .unwrap()
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&o, &g)| o * g)
            .sum()
    };

    let inputs = [(&q, &grads.d_q, "dq"), (&k, &grads.d_k, "dk"), (&v, &grads.d_v, "dv"), (&bias, &grads.d_bias, "dbias")];
    for (which, (input, analytic, name)) in inputs.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut grad_mass = 0.0f64;
        for flat in 0..input.numel() {
            let mut plus = (*input).clone();
            plus.data_mut()[flat] += args.step;
            let mut minus = (*input).clone();
            minus.data_mut()[flat] -= args.step;
            let eval = |t: &Tensor<f64>| match which {
                0 => loss(t, &k, &v, &bias),
                1 => loss(&q, t, &v, &bias),
                2 => loss(&q, &k, t, &bias),
                _ => loss(&q, &k, &v, t),
            };
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * args.step);
            let got = analytic.data()[flat];
            grad_mass += got.abs();
            worst = worst.max((got - numeric).abs() / got.abs().max(numeric.abs()).max(REL_FLOOR));
        }
        report.push(Check::at_most(name, worst, 1e-4));
        report.measure(&format!("{name}_abs_sum"), grad_mass);
    }
    report.time("gradcheck", start.elapsed().as_secs_f64() * 1e3);
    report.measure("step", args.step);
    Ok(())
}
