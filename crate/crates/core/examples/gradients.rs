//! Records a small separable-conv block on the tape, back-propagates, and
//! compares a few gradient entries with central differences in f64.
//!
//!     cargo run --example gradients

use mqnowcast::tensor::{Tape, Tensor, Var};

fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0 - 0.5) * scale).collect();
    Tensor::from_vec(shape.to_vec(), v).unwrap()
}

/// depthwise 3x3 -> pointwise -> leaky -> mean, as a scalar.
fn block(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], grads: bool) -> mqnowcast::Result<(Var, Vec<Var>)> {
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grads)).collect();
    let y = tape.depthwise_conv2d(v[0], v[1], v[2], 1)?;
    let y = tape.pointwise_conv2d(y, v[3], v[4])?;
    let y = tape.leaky_relu(y, 0.01)?;
    let y = tape.square(y)?;
    let n = tape.value(y).len() as f64;
    let s = tape.sum(y)?;
    Ok((tape.scale(s, 1.0 / n)?, v))
}

fn main() -> mqnowcast::Result<()> {
    let inputs = vec![
        ramp(&[2, 3, 6, 6], 2.0),
        ramp(&[3, 1, 3, 3], 1.0),
        ramp(&[3], 0.2),
        ramp(&[4, 3, 1, 1], 1.5),
        ramp(&[4], 0.2),
    ];
    let names = ["input", "dw.weight", "dw.bias", "pw.weight", "pw.bias"];

    let mut tape = Tape::new();
    let (loss, vars) = block(&mut tape, &inputs, true)?;
    println!("loss {:.6}  ({} tape nodes)", tape.values(loss)[0], tape.len());
    tape.backward(loss)?;

    let h = 1e-6;
    let eval = |t: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let (l, _) = block(&mut tape, t, false).unwrap();
        tape.values(l)[0]
    };
    println!("{:<10} {:>5} {:>14} {:>14} {:>9}", "tensor", "index", "analytic", "numeric", "rel err");
    for (ti, name) in names.iter().enumerate() {
        let g = tape.grad(vars[ti]).expect("gradient");
        for ei in [0, inputs[ti].len() / 2, inputs[ti].len() - 1] {
            let mut plus = inputs.clone();
            plus[ti].values_mut()[ei] += h;
            let mut minus = inputs.clone();
            minus[ti].values_mut()[ei] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (g[ei] - numeric).abs() / g[ei].abs().max(numeric.abs()).max(1e-12);
            println!("{name:<10} {ei:>5} {:>14.6e} {numeric:>14.6e} {err:>9.1e}", g[ei]);
        }
    }
    Ok(())
}
