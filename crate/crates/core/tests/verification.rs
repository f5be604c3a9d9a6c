mod common;

use mqnowcast::data::{Dataset, DatasetManifest};
use mqnowcast::model::{interleave_quantiles, ModelConfig, QuantileSpec};
use mqnowcast::tensor::Tensor;
use mqnowcast::verification::{
    accumulate_confusion, binarize, coverage, csi, eval_events, eval_regression, far, mcc, output_heads, pod,
    quantile_head, read_csv, stack_targets, ConfusionCounts, CurveRow, EvaluationReport, SummaryRow, DEFAULT_THRESHOLDS,
};
use mqnowcast::Error;
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
    ConfusionCounts { tp, fp, r#fn: fn_, tn }
}

fn small_dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let manifest = DatasetManifest { n_frames: 600, grid_h: 16, grid_w: 16, seed: 3, ..DatasetManifest::default() };
        Dataset::build(&manifest).unwrap()
    })
}

// Regression

#[test]
fn regression_perfect_and_constant_error() {
    let mut r = common::rng(1);
    let y: Tensor<f32> = common::random_tensor(&mut r, &[4, 3, 5, 5], 0.0, 1.0);
    let perfect = eval_regression(&y, &y).unwrap();
    assert_eq!((perfect.mse, perfect.mae), (0.0, 0.0));

    let y = Tensor::full(vec![2, 3, 4, 4], 0.5f32);
    let p = Tensor::full(vec![2, 3, 4, 4], 0.5f32 + 0.1);
    let s = eval_regression(&p, &y).unwrap();
    let e = (0.5f32 + 0.1) as f64 - 0.5;
    assert_eq!(s.mae, e);
    assert_eq!(s.mse, e * e);
    assert!((s.mse - 0.01).abs() < 1e-7 && (s.mae - 0.1).abs() < 1e-7);
}

#[test]
fn regression_matches_separate_accumulator() {
    let mut r = common::rng(2);
    let shape = [5, 3, 6, 6];
    let y: Tensor<f32> = common::random_tensor(&mut r, &shape, 0.0, 1.0);
    let p: Tensor<f32> = common::random_tensor(&mut r, &shape, 0.0, 1.0);
    let s = eval_regression(&p, &y).unwrap();
    // Per-sample means, then the mean of those.
    let per = 3 * 6 * 6;
    let (mut mse, mut mae) = (0.0, 0.0);
    for i in 0..5 {
        let (a, b) = (&y.values()[i * per..(i + 1) * per], &p.values()[i * per..(i + 1) * per]);
        mse += a.iter().zip(b).map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2)).sum::<f64>() / per as f64;
        mae += a.iter().zip(b).map(|(a, b)| ((*a as f64) - (*b as f64)).abs()).sum::<f64>() / per as f64;
    }
    assert!((s.mse - mse / 5.0).abs() < 1e-12 * mse.max(1.0));
    assert!((s.mae - mae / 5.0).abs() < 1e-12 * mae.max(1.0));
}

#[test]
fn regression_errors() {
    let a = Tensor::<f32>::zeros(vec![0, 1, 2, 2]);
    assert!(matches!(eval_regression(&a, &a), Err(Error::Contract(_))));
    let b = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
    let c = Tensor::<f32>::zeros(vec![1, 1, 2, 3]);
    assert!(matches!(eval_regression(&b, &c), Err(Error::Dimension(_))));
}

// Masks and counts

#[test]
fn binarize_is_inclusive_and_monotone() {
    assert_eq!(binarize(&[0.5, 0.49, 0.51], 0.5), vec![true, false, true]);
    assert!(binarize(&[0.0, 0.0, 3.0], 0.0).iter().all(|&b| b));
    let mut r = common::rng(4);
    let field: Vec<f64> = (0..500).map(|_| r.gen_range(0.0..40.0)).collect();
    let (m10, m20) = (binarize(&field, 10.0), binarize(&field, 20.0));
    assert!(m20.iter().zip(&m10).all(|(&a, &b)| !a || b));
}

#[test]
fn accumulate_simple_cases() {
    let mut c = ConfusionCounts::default();
    accumulate_confusion(&[true; 7], &[true; 7], &mut c).unwrap();
    assert_eq!(c, counts(7, 0, 0, 0));
    let mut c = ConfusionCounts::default();
    accumulate_confusion(&[true; 7], &[false; 7], &mut c).unwrap();
    assert_eq!(c, counts(0, 7, 0, 0));
    assert!(matches!(accumulate_confusion(&[true; 3], &[true; 4], &mut c), Err(Error::Dimension(_))));
}

/// Scores from per-pixel recounting with independent formulas.
fn brute_scores(pred: &[bool], obs: &[bool]) -> (Option<f64>, Option<f64>, Option<f64>, f64) {
    let (mut a, mut b, mut c, mut d) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        if pred[i] && obs[i] {
            a += 1;
        } else if pred[i] {
            b += 1;
        } else if obs[i] {
            c += 1;
        } else {
            d += 1;
        }
    }
    let div = |n: u64, m: u64| if m == 0 { None } else { Some(n as f64 / m as f64) };
    let [af, bf, cf, df] = [a, b, c, d].map(|v| v as f64);
    let root = ((af + bf) * (af + cf) * (df + bf) * (df + cf)).sqrt();
    let m = if root == 0.0 { 0.0 } else { (af * df - bf * cf) / root };
    (div(a, a + b + c), div(a, a + c), div(b, a + b), m)
}

#[test]
fn pooled_scores_equal_per_pixel_recount_on_100_pairs() {
    let mut r = common::rng(5);
    for k in 0..100 {
        let n = r.gen_range(1..400);
        let (pp, po) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let pred: Vec<bool> = (0..n).map(|_| r.gen_bool(pp)).collect();
        let obs: Vec<bool> = (0..n).map(|_| r.gen_bool(po)).collect();
        // Pool over chunks to exercise merging.
        let mut pooled = ConfusionCounts::default();
        for (p, o) in pred.chunks(37).zip(obs.chunks(37)) {
            let mut part = ConfusionCounts::default();
            accumulate_confusion(p, o, &mut part).unwrap();
            pooled.merge(&part);
        }
        assert_eq!(pooled.total(), n as u64);
        let got = (csi(&pooled), pod(&pooled), far(&pooled), mcc(&pooled));
        assert_eq!(got, brute_scores(&pred, &obs), "pair {k}");
    }
}

#[test]
fn hand_cases() {
    assert_eq!(csi(&counts(3, 1, 2, 0)), Some(0.5));
    assert_eq!(pod(&counts(8, 0, 2, 0)), Some(0.8));
    assert_eq!(far(&counts(3, 1, 0, 0)), Some(0.25));
    assert_eq!(mcc(&counts(5, 0, 0, 5)), 1.0);
    assert_eq!(mcc(&counts(0, 5, 5, 0)), -1.0);
}

#[test]
fn degenerate_denominators_give_sentinels() {
    let dry = counts(0, 0, 0, 10);
    assert_eq!((csi(&dry), pod(&dry), far(&dry), mcc(&dry)), (None, None, None, 0.0));
    assert_eq!(mcc(&counts(4, 0, 0, 0)), 0.0);
    assert_eq!(pod(&counts(0, 3, 0, 1)), None);
    assert_eq!(far(&counts(0, 0, 3, 1)), None);
}

proptest! {
    #[test]
    fn score_ranges_and_orderings(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let c = counts(tp, fp, fn_, tn);
        for v in [csi(&c), pod(&c), far(&c)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let m = mcc(&c);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m));
        if let (Some(a), Some(b)) = (csi(&c), pod(&c)) {
            prop_assert!(a <= b);
        }
        let perfect = fp == 0 && fn_ == 0 && tp > 0 && tn > 0;
        prop_assert_eq!((m - 1.0).abs() < 1e-12, perfect);
        let inverse = tp == 0 && tn == 0 && fp > 0 && fn_ > 0;
        prop_assert_eq!((m + 1.0).abs() < 1e-12, inverse);
    }
}

// Event evaluation

fn report_for(heads: &[(String, Tensor<f32>)]) -> EvaluationReport {
    let d = small_dataset();
    EvaluationReport {
        heads: eval_events("m", heads, &d.splits.test, &d.stats, d.steps_per_hour, &DEFAULT_THRESHOLDS).unwrap(),
    }
}

#[test]
fn exact_forecast_scores_perfectly() {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let rep = report_for(&[("deterministic".into(), y)]);
    let h = &rep.heads[0];
    assert_eq!((h.regression.mse, h.regression.mae), (0.0, 0.0));
    let mut checked = 0;
    for t in &h.thresholds {
        for (c, s) in t.counts.iter().zip(&t.per_lead) {
            if c.observed() > 0 {
                assert_eq!((s.csi, s.pod, s.far), (Some(1.0), Some(1.0), Some(0.0)), "threshold {}", t.threshold);
                if c.tn > 0 {
                    assert_eq!(s.mcc, 1.0);
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 3);
}

#[test]
fn dry_forecast_detects_nothing() {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let zero = Tensor::zeros(y.shape().to_vec());
    let rep = report_for(&[("deterministic".into(), zero)]);
    for t in &rep.heads[0].thresholds {
        for (c, s) in t.counts.iter().zip(&t.per_lead) {
            if c.observed() > 0 {
                assert_eq!((s.csi, s.pod), (Some(0.0), Some(0.0)));
                assert_eq!(s.far, None);
            }
        }
    }
}

#[test]
fn observed_event_counts_fall_with_threshold() {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let rep = report_for(&[("deterministic".into(), y)]);
    let t = &rep.heads[0].thresholds;
    for l in 0..3 {
        let obs: Vec<u64> = t.iter().map(|t| t.counts[l].observed()).collect();
        assert!(obs[0] >= obs[1] && obs[1] >= obs[2], "{obs:?}");
        let n = (d.splits.test.len() * 16 * 16) as u64;
        assert!(t.iter().all(|t| t.counts[l].total() == n));
    }
}

fn noisy_forecast(seed: u64) -> Tensor<f32> {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let mut r = common::rng(seed);
    let v = y.values().iter().map(|&v| (v * r.gen_range(0.5..1.6) + r.gen_range(0.0..0.02)).max(0.0)).collect();
    Tensor::from_vec(y.shape().to_vec(), v).unwrap()
}

#[test]
fn summary_equals_average_of_curve_rows() {
    let rep = report_for(&[("deterministic".into(), noisy_forecast(6))]);
    let summary: Vec<SummaryRow> = read_csv(&rep.summary_csv().unwrap()).unwrap();
    let curves: Vec<CurveRow> = read_csv(&rep.curves_csv().unwrap()).unwrap();
    assert_eq!(summary.len(), 3);
    assert_eq!(curves.len(), 9);
    let avg = |v: Vec<Option<f64>>| {
        let v: Vec<f64> = v.into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    for s in &summary {
        let rows: Vec<&CurveRow> = curves.iter().filter(|c| c.threshold == s.threshold && c.output == s.output).collect();
        assert_eq!(rows.iter().map(|r| r.lead_time).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(s.csi, avg(rows.iter().map(|r| r.csi).collect()));
        assert_eq!(s.pod, avg(rows.iter().map(|r| r.pod).collect()));
        assert_eq!(s.far, avg(rows.iter().map(|r| r.far).collect()));
        assert_eq!(Some(s.mcc), avg(rows.iter().map(|r| Some(r.mcc)).collect()));
    }
}

#[test]
fn csv_headers_and_empty_cells() {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let rep = report_for(&[("deterministic".into(), Tensor::zeros(y.shape().to_vec()))]);
    let s = rep.summary_csv().unwrap();
    assert!(s.starts_with("model,output,threshold,csi,pod,far,mcc,mse,mae\n"));
    assert!(s.lines().nth(1).unwrap().contains(",,"), "undefined FAR is an empty cell");
    assert!(rep.curves_csv().unwrap().starts_with("model,output,threshold,lead_time,csi,pod,far,mcc\n"));
}

#[test]
fn scores_do_not_depend_on_sample_order() {
    let d = small_dataset();
    let f = noisy_forecast(8);
    let a = report_for(&[("deterministic".into(), f.clone())]);

    let n = d.splits.test.len();
    let per = f.len() / n;
    let mut order: Vec<usize> = (0..n).collect();
    order.reverse();
    let test: Vec<_> = order.iter().map(|&i| d.splits.test[i].clone()).collect();
    let vals: Vec<f32> = order.iter().flat_map(|&i| f.values()[i * per..(i + 1) * per].to_vec()).collect();
    let g = Tensor::from_vec(f.shape().to_vec(), vals).unwrap();
    let b = eval_events("m", &[("deterministic".into(), g)], &test, &d.stats, d.steps_per_hour, &DEFAULT_THRESHOLDS).unwrap();
    for (x, y) in a.heads[0].thresholds.iter().zip(&b[0].thresholds) {
        assert_eq!(x.counts, y.counts);
    }
    assert!((a.heads[0].regression.mse - b[0].regression.mse).abs() < 1e-15);
}

#[test]
fn quantile_heads_are_named_and_checked() {
    let d = small_dataset();
    let y = stack_targets(&d.splits.test, &d.stats).unwrap();
    let scaled = |k: f32| Tensor::from_vec(y.shape().to_vec(), y.values().iter().map(|v| v * k).collect()).unwrap();
    let out = interleave_quantiles(&[scaled(1.0), scaled(1.5), scaled(2.0)]).unwrap();
    let model = ModelConfig { quantiles: Some(QuantileSpec::default()), lead_times: 3, ..ModelConfig::default() };
    let heads = output_heads(&model, &out).unwrap();
    let names: Vec<&str> = heads.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["q0.5", "q0.9", "q0.95"]);
    assert_eq!(quantile_head(&model, &out, 0.9).unwrap(), heads[1].1);
    assert!(matches!(quantile_head(&model, &out, 0.75), Err(Error::Contract(_))));
    let point = ModelConfig { quantiles: None, ..model.clone() };
    assert!(matches!(quantile_head(&point, &y, 0.5), Err(Error::Contract(_))));

    let rep = report_for(&heads);
    assert_eq!(rep.summary_rows().len(), 9);
    // Inflated forecasts detect at least as much.
    for t in 0..3 {
        let pods: Vec<f64> = rep.heads.iter().map(|h| h.thresholds[t].mean.pod.unwrap_or(0.0)).collect();
        assert!(pods[0] <= pods[1] && pods[1] <= pods[2], "{pods:?}");
    }
}

#[test]
fn coverage_counts_targets_at_or_below() {
    let y = Tensor::from_vec(vec![1, 1, 1, 4], vec![0.0f32, 1.0, 2.0, 3.0]).unwrap();
    let p = Tensor::from_vec(vec![1, 1, 1, 4], vec![0.0f32, 0.5, 2.0, 4.0]).unwrap();
    assert_eq!(coverage(&p, &y).unwrap(), 0.75);
}

#[test]
fn empty_test_set_is_a_contract_error() {
    let d = small_dataset();
    let e = eval_events("m", &[], &[], &d.stats, 12, &DEFAULT_THRESHOLDS);
    assert!(matches!(e, Err(Error::Contract(_))));
}
