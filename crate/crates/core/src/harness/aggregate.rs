use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use super::metrics::{read_metrics, MetricRow};
use crate::error::{Error, Result};

/// Percentile of sorted `values` with linear interpolation between order
/// statistics at rank `q · (n − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PercentileRow {
    pub env_step: u64,
    pub metric: String,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

const METRICS: [(&str, fn(&MetricRow) -> f64); 4] = [
    ("win_rate", |r| r.win_rate),
    ("mean_defeated", |r| r.mean_defeated),
    ("mean_reward", |r| r.mean_reward),
    ("loss", |r| r.loss),
];

/// 25/50/75 percentiles across runs, per evaluation step and metric.
pub fn aggregate_rows(runs: &[Vec<MetricRow>]) -> Result<Vec<PercentileRow>> {
    if runs.len() < 2 {
        return Err(Error::Invalid(format!("aggregation needs at least 2 runs, got {}", runs.len())));
    }
    let step_sets: Vec<BTreeSet<u64>> = runs.iter().map(|r| r.iter().map(|m| m.env_step).collect()).collect();
    let all: BTreeSet<u64> = step_sets.iter().flatten().copied().collect();
    let mut problems = Vec::new();
    for (i, steps) in step_sets.iter().enumerate() {
        let missing: Vec<u64> = all.difference(steps).copied().collect();
        if !missing.is_empty() {
            problems.push(format!("run {i} missing steps {missing:?}"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Invalid(format!("misaligned evaluation steps: {}", problems.join("; "))));
    }
    let mut out = Vec::new();
    for &step in &all {
        for (name, get) in METRICS {
            let mut values: Vec<f64> = runs
                .iter()
                .map(|r| get(r.iter().find(|m| m.env_step == step).unwrap()))
                .collect();
            values.sort_by(f64::total_cmp);
            out.push(PercentileRow {
                env_step: step,
                metric: name.into(),
                p25: percentile(&values, 0.25),
                p50: percentile(&values, 0.5),
                p75: percentile(&values, 0.75),
            });
        }
    }
    Ok(out)
}

/// Reads one metric file per seed and writes the percentile table to `out`.
pub fn aggregate_percentiles(inputs: &[&Path], out: &Path) -> Result<Vec<PercentileRow>> {
    let runs = inputs.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    let rows = aggregate_rows(&runs)?;
    let mut w = csv::Writer::from_path(out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(values: &[(u64, f64)]) -> Vec<MetricRow> {
        values
            .iter()
            .map(|&(step, v)| MetricRow {
                run_id: "r".into(),
                seed: 0,
                env_step: step,
                win_rate: v,
                mean_defeated: v,
                mean_reward: v,
                loss: v,
                epsilon: 0.1,
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn five_seed_quartiles() {
        let runs: Vec<_> = [3.0, 1.0, 5.0, 2.0, 4.0].iter().map(|&v| run(&[(10, v)])).collect();
        let rows = aggregate_rows(&runs).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!((r.p25, r.p50, r.p75), (2.0, 3.0, 4.0));
        }
    }

    #[test]
    fn interpolates_between_order_statistics() {
        assert_eq!(percentile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(percentile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn identical_and_invalid_inputs() {
        let same = vec![run(&[(1, 0.4), (2, 0.6)]); 3];
        for r in aggregate_rows(&same).unwrap() {
            assert!(r.p25 == r.p50 && r.p50 == r.p75);
        }
        assert!(aggregate_rows(&[run(&[(1, 0.0)])]).is_err());
        let err = aggregate_rows(&[run(&[(1, 0.0), (2, 0.0)]), run(&[(1, 0.0)])]).unwrap_err();
        assert!(err.to_string().contains("missing steps [2]"), "{err}");
    }
}
