use serde::Serialize;
use starstream::predictor::{
    evaluate_on_trace, MetricsAccumulator, PredictError, PredictorKind, PredictorMetrics,
    DEFAULT_CONTEXT,
};
use starstream::trace::{load_network_trace, NetworkTrace};

use crate::config::RunConfig;
use crate::error::{Class, ClassExt, CliError, CliResult};
use crate::files::{network_trace_files, write_csv, write_json};

#[derive(Debug, Serialize)]
struct Row {
    predictor: String,
    traces: usize,
    metrics: Option<PredictorMetrics>,
    error: Option<String>,
}

pub fn load_traces(cfg: &RunConfig) -> CliResult<Vec<NetworkTrace>> {
    if cfg.network_traces.is_empty() {
        return Err(CliError::usage("no network traces given (--network or `network_traces`)"));
    }
    let files = network_trace_files(&cfg.network_traces)?;
    if files.is_empty() {
        return Err(CliError::validation("no trace CSV files found"));
    }
    files
        .iter()
        .map(|p| load_network_trace(p, cfg.params.delta).class(Class::Validation))
        .collect()
}

fn evaluate(spec: &str, kind: &PredictorKind, traces: &[&NetworkTrace], cfg: &RunConfig) -> Result<PredictorMetrics, PredictError> {
    let mut predictor = kind.build()?;
    let m = cfg.params.lookback;
    let mut acc = MetricsAccumulator::default();
    for trace in traces {
        tracing::debug!(predictor = spec, trace = %trace.trace_id, "evaluating");
        evaluate_on_trace(predictor.as_mut(), trace, m, cfg.params.lookahead, DEFAULT_CONTEXT.min(m), &mut acc)?;
    }
    acc.finish()
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir()?;
    if cfg.predictors.is_empty() {
        return Err(CliError::usage("no predictors given (--predictor or `predictors`)"));
    }
    let kinds = cfg
        .predictors
        .iter()
        .map(|s| PredictorKind::parse(s).map_err(CliError::validation))
        .collect::<CliResult<Vec<_>>>()?;
    for kind in &kinds {
        if let PredictorKind::External {
            endpoint: starstream::predictor::Endpoint::File(p),
        } = kind
        {
            crate::files::require_existing(std::slice::from_ref(p), "prediction files")?;
        }
    }
    let all = load_traces(cfg)?;
    let (m, n) = (cfg.params.lookback, cfg.params.lookahead);
    let traces: Vec<&NetworkTrace> = all
        .iter()
        .filter(|t| match t.ensure_covers(m, n) {
            Ok(()) => true,
            Err(e) => {
                tracing::warn!(trace = %t.trace_id, "skipped: {e}");
                false
            }
        })
        .collect();
    if traces.is_empty() {
        return Err(CliError::validation(format!(
            "no trace is long enough for {m} lookback and {n} lookahead samples"
        )));
    }

    let rows: Vec<Row> = cfg
        .predictors
        .iter()
        .zip(&kinds)
        .map(|(spec, kind)| match evaluate(spec, kind, &traces, cfg) {
            Ok(metrics) => Row {
                predictor: spec.clone(),
                traces: traces.len(),
                metrics: Some(metrics),
                error: None,
            },
            Err(e) => {
                tracing::error!(predictor = %spec, "{e}");
                Row {
                    predictor: spec.clone(),
                    traces: traces.len(),
                    metrics: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();

    write_json(&out.join("predictors.json"), &rows)?;
    write_csv(&out.join("predictors.csv"), |w| {
        w.write_record([
            "predictor", "mae", "rmse", "mape", "r2", "shift_accuracy", "shift_f1", "samples", "error",
        ])?;
        for r in &rows {
            let mut rec = vec![r.predictor.clone()];
            match &r.metrics {
                Some(m) => {
                    for v in [m.mae, m.rmse, m.mape, m.r2, m.shift_accuracy, m.shift_f1] {
                        rec.push(format!("{v:.6}"));
                    }
                    rec.push(m.samples.to_string());
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 7)),
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        Ok(())
    })?;

    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.predictor.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            Class::Protocol,
            anyhow::anyhow!("predictors failed: {}", failed.join(", ")),
        ))
    }
}
