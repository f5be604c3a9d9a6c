//! Central finite-difference oracle.
//!
//! Rebuilds the whole computation from scratch for every perturbed element
//! and never touches the tape's backward rules.

use mqnowcast::tensor::{Real, Tape, Tensor, Var};
use mqnowcast::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries left out because a kink lies within `±h` (see
    /// [`check_skipping_kinks`]).
    pub skipped: usize,
    /// Input index, element index, analytic and numeric value of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error whose denominator never drops below `floor`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every element of every input whose `check` flag is set.
///
/// Each entry's error is relative to `max(|analytic|, |numeric|, floor)`
/// with `floor = floor_frac · max|analytic|` over all checked entries.
/// `floor_frac = 1` gives the normwise relative error; a tiny fraction makes
/// the check elementwise.
/// `build` must record a one-element loss from the given input handles.
pub fn check<T, F>(inputs: &[Tensor<T>], check: &[bool], h: f64, floor_frac: f64, build: F) -> GradReport
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check_impl(inputs, check, h, floor_frac, None, build)
}

/// Like [`check`], but an entry whose one-sided differences over `±h` and
/// `±h/2` disagree by more than `kink_tol` (relative, same floor) is
/// counted in `skipped` instead of compared: the loss is not differentiable
/// inside `±h` there, so the central difference means nothing. A wrong
/// analytic gradient on a smooth stretch cannot cause a skip.
pub fn check_skipping_kinks<T, F>(inputs: &[Tensor<T>], check: &[bool], h: f64, floor_frac: f64, kink_tol: f64, build: F) -> GradReport
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    check_impl(inputs, check, h, floor_frac, Some(kink_tol), build)
}

fn check_impl<T, F>(inputs: &[Tensor<T>], check: &[bool], h: f64, floor_frac: f64, kink_tol: Option<f64>, build: F) -> GradReport
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let run = |tensors: &[Tensor<T>], grads: bool| -> (f64, Vec<Option<Vec<T>>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .zip(check)
            .map(|(t, &c)| tape.leaf(t.clone(), grads && c))
            .collect();
        let loss = build(&mut tape, &vars).expect("forward");
        let value = tape.values(loss)[0].as_f64();
        if grads {
            tape.backward(loss).expect("backward");
        }
        let g = vars.iter().map(|&v| tape.grad(v).map(|s| s.to_vec())).collect();
        (value, g)
    };

    let (center, analytic) = run(inputs, true);
    let scale = analytic
        .iter()
        .zip(check)
        .filter(|(_, &c)| c)
        .flat_map(|(g, _)| g.as_ref().expect("gradient populated").iter())
        .fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let floor = (floor_frac * scale).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut checked = 0;
    let mut skipped = 0;
    for (ti, tensor) in inputs.iter().enumerate() {
        if !check[ti] {
            continue;
        }
        let grad = analytic[ti].as_ref().expect("gradient populated");
        for ei in 0..tensor.len() {
            let mut plus = inputs.to_vec();
            let base = plus[ti].values()[ei].as_f64();
            plus[ti].values_mut()[ei] = T::from_f64(base + h);
            let mut minus = inputs.to_vec();
            minus[ti].values_mut()[ei] = T::from_f64(base - h);
            // Use the step actually representable in T.
            let step = plus[ti].values()[ei].as_f64() - minus[ti].values()[ei].as_f64();
            let (fp, fm) = (run(&plus, false).0, run(&minus, false).0);
            if let Some(tol) = kink_tol {
                // one-sided slopes over full and half steps on both sides
                let mut slopes = vec![(fp - center) / (plus[ti].values()[ei].as_f64() - base), (center - fm) / (base - minus[ti].values()[ei].as_f64())];
                for sign in [1.0, -1.0] {
                    let mut half = inputs.to_vec();
                    half[ti].values_mut()[ei] = T::from_f64(base + sign * h / 2.0);
                    let dx = half[ti].values()[ei].as_f64() - base;
                    slopes.push((run(&half, false).0 - center) / dx);
                }
                let lo = slopes.iter().copied().fold(f64::MAX, f64::min);
                let hi = slopes.iter().copied().fold(f64::MIN, f64::max);
                if rel_err(lo, hi, floor) > tol {
                    skipped += 1;
                    continue;
                }
            }
            let numeric = (fp - fm) / step;
            let err = rel_err(grad[ei].as_f64(), numeric, floor);
            if err > worst {
                worst = err;
                worst_at = Some((ti, ei, grad[ei].as_f64(), numeric));
            }
            checked += 1;
        }
    }
    GradReport { max_rel_err: worst, checked, skipped, worst: worst_at }
}

/// Reduces a 4-D output to a scalar with a fixed random projection so
/// that every output element carries a distinct weight.
pub fn project<T: Real>(tape: &mut Tape<T>, out: Var, weights: &Tensor<T>) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.leaf(weights.clone().reshape(shape)?, false);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}
