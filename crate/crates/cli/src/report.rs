use anyhow::Result;
use qmamba::fixpoint::Counters;
use qmamba::metrics::ErrorMetrics;
use qmamba::model::{is_quantized, model_prefill, FloatModel, Forward, ModelInput, QuantModel};
use qmamba::scalar::Scalar;
use serde::Serialize;

use crate::commands::{load, load_config};
use crate::ErrorReportArgs;

#[derive(Debug, Serialize)]
struct LayerError {
    layer: usize,
    #[serde(flatten)]
    metrics: ErrorMetrics,
}

#[derive(Debug, Serialize)]
struct Report {
    version: u32,
    /// `"quantized"` or `"float"`.
    candidate: &'static str,
    layers: Vec<LayerError>,
    output: ErrorMetrics,
    counters: Counters,
}

fn flat<T: Scalar>(m: &qmamba::tensor::Matrix<T>) -> Vec<f64> {
    m.data().iter().map(|v| v.as_f64()).collect()
}

fn compare<T: Scalar>(cand: &Forward<T>, reference: &Forward<f64>) -> Result<(Vec<LayerError>, ErrorMetrics)> {
    let layers = cand
        .layers
        .iter()
        .zip(&reference.layers)
        .enumerate()
        .map(|(layer, (c, r))| Ok(LayerError { layer, metrics: ErrorMetrics::between(&flat(c), r.data())? }))
        .collect::<Result<_>>()?;
    Ok((layers, ErrorMetrics::between(&flat(&cand.output), reference.output.data())?))
}

/// Per-layer and end-to-end error of a candidate checkpoint against the
/// FP64 evaluation of a float checkpoint.
pub fn error_report(a: ErrorReportArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let input = ModelInput::from_fmw(&load(&a.input)?)?;
    let reference = FloatModel::from_fmw(&load(&a.weights_f)?, &cfg)?.cast::<f64>();
    let (ref_out, _) = model_prefill(&reference, &input)?;
    let cand = load(&a.weights_q)?;
    let (candidate, (layers, output), counters) = if is_quantized(&cand) {
        let (f, _) = model_prefill(&QuantModel::from_fmw(&cand, &cfg)?, &input)?;
        ("quantized", compare(&f, &ref_out)?, f.counters)
    } else {
        let (f, _) = model_prefill(&FloatModel::from_fmw(&cand, &cfg)?.cast::<f64>(), &input)?;
        ("float", compare(&f, &ref_out)?, f.counters)
    };
    let report = Report { version: 1, candidate, layers, output, counters };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("candidate: {candidate}");
    println!("{:<8} {:>12} {:>12} {:>12}", "layer", "rel_l2", "cosine", "max_abs");
    let row = |name: String, m: &ErrorMetrics| println!("{:<8} {:>12.4e} {:>12.8} {:>12.4e}", name, m.rel_l2, m.cosine, m.max_abs);
    for l in &report.layers {
        row(l.layer.to_string(), &l.metrics);
    }
    row("output".into(), &report.output);
    println!("saturated: {}", counters.saturated);
    println!("exp_clamped: {}", counters.exp_clamped);
    Ok(())
}
