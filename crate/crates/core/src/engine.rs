//! Simulated service engines: admission, completion, health statistics and a
//! linear congestion penalty above capacity.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::DeploymentId;
use crate::time::SimTime;
use crate::topology::HostId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("completion on `{0}` with no request in flight")]
    Underflow(DeploymentId),
    #[error("counter conservation broken on `{deployment}`: {admissions} admissions vs {in_flight} in flight + {completed} completed + {failed} failed")]
    Conservation {
        deployment: DeploymentId,
        admissions: u64,
        in_flight: u64,
        completed: u64,
        failed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Simple,
    #[serde(alias = "map_reduce")]
    MapReduce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    /// Concurrent requests served before the penalty starts.
    pub capacity: u32,
    pub base_service_time: f64,
    pub kind: EngineKind,
    /// Multiplies the base time of MapReduce engines.
    pub job_size_factor: f64,
    pub failure_probability: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            capacity: 4,
            base_service_time: 10.0,
            kind: EngineKind::Simple,
            job_size_factor: 1.0,
            failure_probability: 0.0,
        }
    }
}

impl EngineParams {
    /// Unloaded service time.
    pub fn effective_base(&self) -> f64 {
        match self.kind {
            EngineKind::Simple => self.base_service_time,
            EngineKind::MapReduce => self.base_service_time * self.job_size_factor,
        }
    }

    /// Service time of a request admitted when `in_flight` requests
    /// (including itself) are running.
    pub fn service_time(&self, in_flight: u64) -> f64 {
        let cap = f64::from(self.capacity.max(1));
        let excess = in_flight.saturating_sub(u64::from(self.capacity)) as f64;
        self.effective_base() * (1.0 + excess / cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineReport {
    pub deployment: DeploymentId,
    pub mean_service_time: f64,
    pub in_flight: u64,
    pub over_threshold: bool,
}

#[derive(Debug, Clone)]
pub struct EngineState {
    pub host: HostId,
    pub deployment: DeploymentId,
    pub params: EngineParams,
    in_flight: u64,
    completed: u64,
    failed: u64,
    admissions: u64,
    /// `(completion time, service time)` of recent completions.
    recent: VecDeque<(SimTime, f64)>,
}

impl EngineState {
    pub fn new(deployment: DeploymentId, host: HostId, params: EngineParams) -> Self {
        Self {
            host,
            deployment,
            params,
            in_flight: 0,
            completed: 0,
            failed: 0,
            admissions: 0,
            recent: VecDeque::new(),
        }
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn failed(&self) -> u64 {
        self.failed
    }

    pub fn admissions(&self) -> u64 {
        self.admissions
    }

    /// Accepts a request and returns its predicted service time.
    pub fn admit(&mut self) -> f64 {
        self.in_flight += 1;
        self.admissions += 1;
        self.params.service_time(self.in_flight)
    }

    pub fn complete(
        &mut self,
        outcome: Outcome,
        now: SimTime,
        service_time: f64,
    ) -> Result<(), EngineError> {
        if self.in_flight == 0 {
            return Err(EngineError::Underflow(self.deployment.clone()));
        }
        self.in_flight -= 1;
        match outcome {
            Outcome::Ok => {
                self.completed += 1;
                self.recent.push_back((now, service_time));
            }
            Outcome::Failed => self.failed += 1,
        }
        Ok(())
    }

    /// Mean service time of completions in `(now - window, now]`, or the
    /// unloaded time when there are none. Over threshold when that mean
    /// exceeds `threshold` or more requests are in flight than capacity.
    pub fn health_report(&mut self, now: SimTime, window: f64, threshold: f64) -> EngineReport {
        let horizon = now.as_f64() - window;
        while self.recent.front().is_some_and(|(t, _)| t.as_f64() <= horizon) {
            self.recent.pop_front();
        }
        let mean = if self.recent.is_empty() {
            self.params.effective_base()
        } else {
            self.recent.iter().map(|(_, d)| d).sum::<f64>() / self.recent.len() as f64
        };
        EngineReport {
            deployment: self.deployment.clone(),
            mean_service_time: mean,
            in_flight: self.in_flight,
            over_threshold: mean > threshold || self.in_flight > u64::from(self.params.capacity),
        }
    }

    pub fn check_conservation(&self) -> Result<(), EngineError> {
        if self.admissions == self.in_flight + self.completed + self.failed {
            Ok(())
        } else {
            Err(EngineError::Conservation {
                deployment: self.deployment.clone(),
                admissions: self.admissions,
                in_flight: self.in_flight,
                completed: self.completed,
                failed: self.failed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn engine(capacity: u32, base: f64) -> EngineState {
        EngineState::new(
            DeploymentId::new("s", "i", "d"),
            HostId(0),
            EngineParams {
                capacity,
                base_service_time: base,
                ..EngineParams::default()
            },
        )
    }

    #[test]
    fn unloaded_admission_takes_base_time() {
        let mut e = engine(4, 10.0);
        assert_eq!(e.admit(), 10.0);
        assert_eq!(e.in_flight(), 1);
    }

    #[test]
    fn eighth_request_on_capacity_four_doubles() {
        let mut e = engine(4, 10.0);
        let mut last = 0.0;
        for _ in 0..8 {
            last = e.admit();
        }
        // 10 * (1 + (8 - 4) / 4)
        assert_eq!(last, 20.0);
    }

    #[test]
    fn mapreduce_job_factor() {
        let mut e = engine(4, 10.0);
        e.params.kind = EngineKind::MapReduce;
        e.params.job_size_factor = 50.0;
        assert_eq!(e.admit(), 500.0);
    }

    #[test]
    fn completion_counters() {
        let mut e = engine(4, 10.0);
        e.admit();
        e.complete(Outcome::Ok, SimTime(10.0), 10.0).unwrap();
        assert_eq!((e.in_flight(), e.completed(), e.failed()), (0, 1, 0));

        for _ in 0..3 {
            e.admit();
        }
        e.complete(Outcome::Failed, SimTime(11.0), 1.0).unwrap();
        assert_eq!((e.in_flight(), e.completed(), e.failed()), (2, 1, 1));
        e.check_conservation().unwrap();
    }

    #[test]
    fn completion_underflow() {
        let mut e = engine(4, 10.0);
        assert_eq!(
            e.complete(Outcome::Ok, SimTime::ZERO, 1.0),
            Err(EngineError::Underflow(e.deployment.clone()))
        );
    }

    #[test]
    fn unloaded_report_under_threshold() {
        let mut e = engine(4, 10.0);
        let r = e.health_report(SimTime(0.0), 100.0, 100.0);
        assert_eq!(r.mean_service_time, 10.0);
        assert!(!r.over_threshold);
    }

    #[test]
    fn in_flight_above_capacity_trips_report() {
        let mut e = engine(4, 10.0);
        for _ in 0..9 {
            e.admit();
        }
        assert!(e.health_report(SimTime(0.0), 100.0, 1e9).over_threshold);
    }

    #[test]
    fn mean_of_recent_completions() {
        let mut e = engine(4, 10.0);
        e.admit();
        e.admit();
        e.complete(Outcome::Ok, SimTime(90.0), 90.0).unwrap();
        e.complete(Outcome::Ok, SimTime(130.0), 130.0).unwrap();
        let r = e.health_report(SimTime(130.0), 1000.0, 100.0);
        assert_eq!(r.mean_service_time, 110.0);
        assert!(r.over_threshold);
        // the window drops stale completions
        let r = e.health_report(SimTime(1200.0), 1000.0, 100.0);
        assert_eq!(r.mean_service_time, 10.0);
    }

    proptest! {
        #[test]
        fn service_time_monotone_and_flat_below_capacity(
            capacity in 1u32..16, base in 0.1f64..100.0, n in 0u64..64,
        ) {
            let p = EngineParams { capacity, base_service_time: base, ..EngineParams::default() };
            prop_assert!(p.service_time(n) <= p.service_time(n + 1));
            if n <= u64::from(capacity) {
                prop_assert_eq!(p.service_time(n), base);
            }
        }
    }
}
