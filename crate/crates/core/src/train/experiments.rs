use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, Dataset, EvalReport, TrainConfig};
use crate::encoding::PositionalKind;
use crate::error::{Error, Result};
use crate::model::{AttentionMode, TimeDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub positional: PositionalKind,
    pub attention: AttentionMode,
    pub distribution: TimeDistribution,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub scales: usize,
    pub report: EvalReport,
}

/// Trains and tests every combination of positional encoding, attention
/// mode and time distribution under the same seed.
pub fn ablation_grid(data: &Dataset, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(8);
    for positional in [PositionalKind::Base, PositionalKind::Fcpe] {
        for attention in [AttentionMode::Dense, AttentionMode::CrossScale] {
            for distribution in [TimeDistribution::Exponential, TimeDistribution::Weibull] {
                let mut cfg = base.clone();
                cfg.model.positional = positional;
                cfg.model.attention = attention;
                cfg.model.distribution = distribution;
                let result = train(data, &cfg)?;
                let report = evaluate(&result.model, &data.test, &data.norm)?;
                log::info!(
                    "ablation {positional:?}/{attention:?}/{distribution:?}: acc {:.4} nll {:.4}",
                    report.accuracy,
                    report.mean_nll
                );
                rows.push(AblationRow {
                    positional,
                    attention,
                    distribution,
                    report,
                });
            }
        }
    }
    Ok(rows)
}

/// Trains cross-scale models with each largest scale in `scales`.
pub fn sensitivity_sweep(data: &Dataset, base: &TrainConfig, scales: &[usize]) -> Result<Vec<SensitivityRow>> {
    if let Some(&s) = scales.iter().find(|&&s| s == 0 || s >= base.window) {
        return Err(Error::Config(format!(
            "scale {s} is invalid for window {}",
            base.window
        )));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut cfg = base.clone();
        cfg.model.attention = AttentionMode::CrossScale;
        cfg.model.scales = s;
        let result = train(data, &cfg)?;
        let report = evaluate(&result.model, &data.test, &data.norm)?;
        log::info!("sensitivity S={s}: acc {:.4}", report.accuracy);
        rows.push(SensitivityRow { scales: s, report });
    }
    Ok(rows)
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(String::from))
        .unwrap_or_default()
}

const METRIC_HEADER: &str = "accuracy,macro_f1,rmse,mean_nll,num_examples";

fn metric_cells(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.accuracy, r.macro_f1, r.rmse, r.mean_nll, r.num_examples
    )
}

pub fn write_ablation_csv(rows: &[AblationRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "positional,attention,distribution,{METRIC_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            snake(&r.positional),
            snake(&r.attention),
            snake(&r.distribution),
            metric_cells(&r.report)
        )?;
    }
    Ok(())
}

pub fn write_sensitivity_csv(rows: &[SensitivityRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "scales,{METRIC_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{}", r.scales, metric_cells(&r.report))?;
    }
    Ok(())
}

/// One-row CSV of a report.
pub fn write_report_csv(r: &EvalReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRIC_HEADER}")?;
    writeln!(w, "{}", metric_cells(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{generate_multiscale, MultiscaleConfig, NormMode};
    use crate::model::ModelConfig;

    fn setup() -> (Dataset, TrainConfig) {
        let seqs = generate_multiscale(&MultiscaleConfig {
            num_seqs: 8,
            bursts_per_seq: 3,
            burst_size: 3,
            num_types: 3,
            ..Default::default()
        })
        .unwrap();
        let data = Dataset::from_sequences(&seqs, 4, NormMode::ShiftAndScale, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            window: 4,
            model: ModelConfig {
                d_model: 8,
                scales: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        (data, cfg)
    }

    #[test]
    fn grid_shape_and_modes() {
        let (data, cfg) = setup();
        let rows = ablation_grid(&data, &cfg).unwrap();
        assert_eq!(rows.len(), 8);
        let mut buf = Vec::new();
        write_ablation_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().nth(1).unwrap().starts_with("base,dense,exponential,"));
    }

    #[test]
    fn sweep_rows_and_dense_equivalence() {
        let (data, cfg) = setup();
        let rows = sensitivity_sweep(&data, &cfg, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        let mut dense = cfg.clone();
        dense.model.attention = AttentionMode::Dense;
        let r = evaluate(&train(&data, &dense).unwrap().model, &data.test, &data.norm).unwrap();
        assert_eq!(rows[0].report, r);
        assert!(matches!(sensitivity_sweep(&data, &cfg, &[4]), Err(Error::Config(_))));
    }
}
