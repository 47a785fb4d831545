use serde::Serialize;

use crate::error::{Error, Result};
use crate::time::SimTime;

/// Outcome of one completed composition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub composition: u64,
    pub client: u32,
    pub mode: String,
    pub arrival: SimTime,
    pub completion_time: f64,
    /// Engine service time per DAG node; zero for memo hits and groups.
    pub per_node: Vec<f64>,
    pub inter_rack_hops: u64,
    pub result: u64,
}

pub fn mean_completion(records: &[MetricsRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().map(|r| r.completion_time).sum::<f64>() / records.len() as f64)
}

/// Sample standard deviation of completion times as a percentage of their
/// mean.
pub fn deviation(records: &[MetricsRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::Scenario(format!(
            "deviation needs at least 2 records, got {}",
            records.len()
        )));
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.completion_time).sum::<f64>() / n;
    let var = records
        .iter()
        .map(|r| (r.completion_time - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(var.sqrt() / mean * 100.0)
}

pub fn total_hops(records: &[MetricsRecord]) -> u64 {
    records.iter().map(|r| r.inter_rack_hops).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> MetricsRecord {
        MetricsRecord {
            composition: 0,
            client: 0,
            mode: "base".into(),
            arrival: SimTime::ZERO,
            completion_time: t,
            per_node: vec![],
            inter_rack_hops: 0,
            result: 0,
        }
    }

    #[test]
    fn constant_series_has_no_deviation() {
        assert_eq!(deviation(&[rec(10.0), rec(10.0), rec(10.0)]).unwrap(), 0.0);
    }

    #[test]
    fn two_point_deviation() {
        // s = sqrt(50), mean 15
        let expected = 50f64.sqrt() / 15.0 * 100.0;
        let got = deviation(&[rec(10.0), rec(20.0)]).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 47.14).abs() < 0.01);
    }

    #[test]
    fn single_record_is_an_error() {
        assert!(deviation(&[rec(1.0)]).is_err());
        assert!(deviation(&[]).is_err());
    }
}
