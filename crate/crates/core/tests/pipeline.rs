use mpq_core::metrics::{build_report, mse_report, render_report, ReportFormat, REPORT_CSV_HEADER};
use mpq_core::pwq::{
    expected_error_uniform, find_breakpoint, quantize_layer, round_trip_uniform, EmpiricalCdf,
};
use mpq_core::synth::{gen_model, sample_weights, ArchDescriptor, GenOptions, WeightDist};
use mpq_core::{dequantize_model, partition, quantize_model, ImportanceConfig, LayerKind, ModelBundle};

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn uniform_error_model_predicts_measured_mse() {
    let w = sample_weights(WeightDist::Uniform { bound: 0.25 }, 9, 0, 100_000);
    let d = round_trip_uniform(&w, 8).unwrap();
    let l = w.iter().fold(0f32, |m, v| m.max(v.abs()));
    let predicted = expected_error_uniform(8, -f64::from(l), f64::from(l)).unwrap();
    let measured = mse(&w, &d);
    assert!((measured / predicted - 1.0).abs() < 0.10, "measured {measured:e} predicted {predicted:e}");
}

#[test]
fn heavier_tails_push_the_breakpoint_inward() {
    let n = 50_000;
    let p_of = |dist| {
        let w = sample_weights(dist, 4, 0, n);
        let bp = find_breakpoint(&EmpiricalCdf::from_weights(&w).unwrap(), 6, 200).unwrap();
        bp.p / bp.l
    };
    let uniform = p_of(WeightDist::Uniform { bound: 1.0 });
    let gauss = p_of(WeightDist::Gaussian { sigma: 1.0 });
    let laplace = p_of(WeightDist::Laplace { scale: 1.0 });
    assert!(laplace < gauss && gauss < uniform, "{laplace} {gauss} {uniform}");
}

fn resnet_slice() -> ModelBundle {
    let arch = ArchDescriptor::from_json(
        r#"{"name":"slice","layers":[["conv",64,3,7],["conv",64,64,1],["conv",64,64,3],["conv",256,64,1],["fc",100,256,1]]}"#,
    )
    .unwrap();
    gen_model(
        &arch,
        &GenOptions {
            dist: WeightDist::Gaussian { sigma: 0.05 },
            seed: 1,
            layer_spread: 0.5,
        },
    )
}

#[test]
fn mixed_precision_error_sits_between_uniform_extremes() {
    let b = resnet_slice();
    let run = |alpha, beta, hi, lo| {
        let cfg = ImportanceConfig {
            alpha,
            beta,
            bits_important: hi,
            bits_other: lo,
            normalize_layer_score: false,
        };
        let qm = quantize_model(&b, &partition(&b, &cfg).unwrap(), 200).unwrap();
        mse_report(&b, &qm).unwrap().total
    };
    let all_low = run(0.0, 1.0, 8, 2);
    let all_high = run(100.0, 1.0, 8, 2);
    let mixed = run(40.0, 0.75, 8, 2);
    assert!(all_high < mixed && mixed < all_low, "{all_high} {mixed} {all_low}");
}

#[test]
fn decoded_model_keeps_structure() {
    let b = resnet_slice();
    let cfg = ImportanceConfig { alpha: 20.0, ..ImportanceConfig::default() };
    let qm = quantize_model(&b, &partition(&b, &cfg).unwrap(), 200).unwrap();
    let d = dequantize_model(&qm).unwrap();
    assert_eq!(d.layers, b.layers);
    d.validate().unwrap();
    for layer in &b.layers {
        let (o, q) = (&b.tensors[&layer.tensor_name], &d.tensors[&layer.tensor_name]);
        assert_eq!(o.shape, q.shape);
        // no sign flips
        assert!(o.data.iter().zip(&q.data).all(|(a, b)| a * b >= 0.0));
    }
}

#[test]
fn report_fields_are_consistent() {
    let b = resnet_slice();
    let cfg = ImportanceConfig { alpha: 40.0, beta: 0.75, ..ImportanceConfig::default() };
    let qm = quantize_model(&b, &partition(&b, &cfg).unwrap(), 200).unwrap();
    let r = build_report(&b, &qm, 8).unwrap();
    assert_eq!(r.params as usize, b.weight_count());
    assert_eq!(r.baseline_bits, 32 * r.params);
    assert!((r.size_reduction_pct - 100.0 * (1.0 - r.quantized_bits as f64 / r.baseline_bits as f64)).abs() < 1e-12);
    assert_eq!(r.per_layer_mse.len(), b.layers.len());
    assert!((r.per_layer_bops.iter().sum::<f64>() - r.total_bops).abs() <= 1e-9 * r.total_bops);

    let csv = render_report(&r, ReportFormat::Csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(REPORT_CSV_HEADER));
    assert_eq!(lines.count(), b.layers.len());
    let json: serde_json::Value = serde_json::from_str(&render_report(&r, ReportFormat::Json).unwrap()).unwrap();
    assert_eq!(json["params"].as_u64(), Some(r.params));
}

#[test]
fn single_layer_with_constant_bits() {
    let mut b = ModelBundle::new("one");
    let w = sample_weights(WeightDist::Gaussian { sigma: 0.1 }, 2, 0, 4 * 9 * 9);
    b.push_layer(LayerKind::Conv, 4, 9, 3, w).unwrap();
    let layer = &b.layers[0];
    let ql = quantize_layer(layer, &b.tensors[&layer.tensor_name], &[5; 4], 5, 200).unwrap();
    assert_eq!(ql.codes_nbits, 5 * 4 * 81);
    assert_eq!(ql.mask_nbits, 4 * 81);
    assert!(0.0 < ql.p && ql.p <= ql.l / 2.0);
}
