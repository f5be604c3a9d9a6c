//! Prints the layer table of the default network with and without quantile
//! heads, then runs one forward pass and splits the output per quantile.
//!
//!     cargo run --example architecture

use mqnowcast::model::{architecture_table, extract_quantile, forward, init_parameters, ModelConfig, QuantileSpec};
use mqnowcast::tensor::Tensor;

fn main() -> mqnowcast::Result<()> {
    let point = ModelConfig::default().with_quantiles(None);
    let spec = QuantileSpec::default();
    let multi = ModelConfig::default().with_quantiles(Some(spec.clone()));

    println!("single output\n{}", architecture_table(&point));
    println!("{} quantile heads {:?}\n{}", spec.len(), spec.levels(), architecture_table(&multi));

    let params = init_parameters(&multi)?;
    let (h, w) = (multi.grid_h, multi.grid_w);
    let n = 2 * multi.input_frames * h * w;
    let x = Tensor::from_vec(vec![2, multi.input_frames, h, w], (0..n).map(|i| (i % 17) as f32 / 17.0).collect())?;
    let y = forward(&params, &multi, &x)?;
    println!("input  {:?}\noutput {:?} (lead-time-major channels)", x.shape(), y.shape());
    for (k, q) in spec.levels().iter().enumerate() {
        let part = extract_quantile(&y, k, spec.len())?;
        let mean = part.values().iter().sum::<f32>() / part.len() as f32;
        println!("  q{q}: {:?}, mean {mean:.5}", part.shape());
    }
    Ok(())
}
