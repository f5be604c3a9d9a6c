//! Scores a forecast field against an observed one at several rain-rate
//! thresholds: contingency counts, CSI, POD, FAR and MCC.
//!
//!     cargo run --example verification

use mqnowcast::verification::{accumulate_confusion, binarize, ConfusionCounts, EventScores};

fn show(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

fn main() -> mqnowcast::Result<()> {
    // a rain band, and a forecast displaced by one column and slightly weak
    let (h, w) = (12, 12);
    let band = |i: usize, j: usize, shift: usize, gain: f64| {
        let d = (j as f64 - (4 + shift) as f64 - 0.3 * i as f64).abs();
        (25.0 * gain * (-d * d / 4.0).exp()).max(0.0)
    };
    let obs: Vec<f64> = (0..h * w).map(|k| band(k / w, k % w, 0, 1.0)).collect();
    let fc: Vec<f64> = (0..h * w).map(|k| band(k / w, k % w, 1, 0.8)).collect();

    println!("{:>6} {:>4} {:>4} {:>4} {:>4} {:>6} {:>6} {:>6} {:>7}", "mm/h", "tp", "fp", "fn", "tn", "csi", "pod", "far", "mcc");
    for thr in [0.5, 5.0, 10.0, 20.0] {
        let mut c = ConfusionCounts::default();
        accumulate_confusion(&binarize(&fc, thr), &binarize(&obs, thr), &mut c)?;
        let s = EventScores::from_counts(&c);
        println!(
            "{thr:>6} {:>4} {:>4} {:>4} {:>4} {:>6} {:>6} {:>6} {:>7.3}",
            c.tp,
            c.fp,
            c.r#fn,
            c.tn,
            show(s.csi),
            show(s.pod),
            show(s.far),
            s.mcc
        );
    }
    Ok(())
}
