//! Evaluates the point and quantile objectives on a hand example, then finds
//! the constant minimising the pinball loss of a skewed sample and compares
//! it with the sample quantile.
//!
//!     cargo run --example losses

use mqnowcast::model::QuantileSpec;
use mqnowcast::objectives::{rho, LossKind};
use mqnowcast::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() -> mqnowcast::Result<()> {
    // one pixel, target 2, three quantile predictions
    let y = Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0f64])?;
    let p = Tensor::from_vec(vec![1, 3, 1, 1], vec![1.0f64, 3.0, 4.0])?;
    for w in [0.5, 1.0, 2.0] {
        let loss = LossKind::MultiQuantile(QuantileSpec::median_and_upper(w));
        println!("upper weight {w}: multi-quantile loss {:.6}", loss.value(&y, &p)?);
    }
    let point = Tensor::from_vec(vec![1, 1, 1, 1], vec![3.0f64])?;
    println!("mse {}  mae {}", LossKind::Mse.value(&y, &point)?, LossKind::Mae.value(&y, &point)?);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dist = LogNormal::new(0.0, 1.0).expect("log-normal");
    let mut xs: Vec<f64> = (0..2000).map(|_| dist.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    println!("\n{:>5} {:>12} {:>12}", "q", "argmin", "quantile");
    for q in [0.5, 0.9, 0.95] {
        // the loss is piecewise linear with corners at the samples
        let best = xs
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let la: f64 = xs.iter().map(|&x| rho(x - a, q)).sum();
                let lb: f64 = xs.iter().map(|&x| rho(x - b, q)).sum();
                la.total_cmp(&lb)
            })
            .unwrap();
        let k = (q * xs.len() as f64).ceil() as usize - 1;
        println!("{q:>5} {best:>12.5} {:>12.5}", xs[k]);
    }
    Ok(())
}
