//! Delay factors.

use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, Request, RequestId};
use crate::rational::{Duration, Rational, TimePoint};
use crate::trace::ScheduleTrace;

pub fn slack(r: &Request) -> Duration {
    r.slack()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestFactor {
    pub request: String,
    pub arrival: TimePoint,
    pub slack: Duration,
    pub finish: TimePoint,
    pub factor: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DelayFactorReport {
    pub overall: Rational,
    /// Request with the largest factor; the earliest on ties.
    pub witness: Option<String>,
    #[serde(skip)]
    pub witness_id: Option<RequestId>,
    pub per_request: Vec<RequestFactor>,
}

impl DelayFactorReport {
    pub fn factor(&self, id: RequestId) -> &Rational {
        &self.per_request[id.0].factor
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("request `{0}` is never satisfied")]
    Unsatisfied(String),
}

/// `max(1, max_i (f_i - a_i) / S_i)` over every request of `instance`.
pub fn delay_factor(instance: &Instance, trace: &ScheduleTrace) -> Result<DelayFactorReport, MetricsError> {
    let mut per_request = Vec::with_capacity(instance.len());
    let mut overall = Rational::one();
    let mut best: Option<(Rational, RequestId)> = None;
    for r in &instance.requests {
        let f = trace
            .finish(r.id)
            .ok_or_else(|| MetricsError::Unsatisfied(r.name.clone()))?;
        let s = r.slack();
        let factor = (f - &r.arrival) / &s;
        if best.as_ref().map_or(true, |(b, _)| factor > *b) {
            best = Some((factor.clone(), r.id));
        }
        if factor > overall {
            overall = factor.clone();
        }
        per_request.push(RequestFactor {
            request: r.name.clone(),
            arrival: r.arrival.clone(),
            slack: s,
            finish: f.clone(),
            factor,
        });
    }
    let witness_id = best.map(|(_, id)| id);
    Ok(DelayFactorReport {
        overall,
        witness: witness_id.map(|id| instance.request(id).name.clone()),
        witness_id,
        per_request,
    })
}

/// Running delay factor at `t`: the larger of one, the factors of requests
/// finished by `t`, and the ages `(t - a) / S` of requests alive at `t`.
pub fn current_alpha(instance: &Instance, trace: &ScheduleTrace, t: &TimePoint) -> Rational {
    let mut alpha = Rational::one();
    for r in &instance.requests {
        if r.arrival > *t {
            continue;
        }
        let value = match trace.finish(r.id) {
            Some(f) if f <= t => (f - &r.arrival) / r.slack(),
            _ => (t - &r.arrival) / r.slack(),
        };
        if value > alpha {
            alpha = value;
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, PageCatalog, RequestSpec};

    fn q(n: i64) -> Rational {
        Rational::integer(n)
    }

    fn instance(reqs: &[(i64, i64, i64)]) -> Instance {
        let specs = reqs
            .iter()
            .enumerate()
            .map(|(i, &(a, d, l))| RequestSpec {
                name: format!("r{}", i),
                arrival: q(a),
                deadline: q(d),
                length: q(l),
                page: None,
            })
            .collect();
        Instance::new(Mode::Unicast, 1, PageCatalog::default(), specs)
    }

    fn finished(inst: &Instance, f: &[Option<i64>]) -> ScheduleTrace {
        let mut t = ScheduleTrace::new(q(1), 1, inst.len());
        t.finish = f.iter().map(|x| x.map(q)).collect();
        t
    }

    #[test]
    fn on_time_floor() {
        let inst = instance(&[(0, 10, 1)]);
        let rep = delay_factor(&inst, &finished(&inst, &[Some(10)])).unwrap();
        assert_eq!(rep.overall, q(1));
    }

    #[test]
    fn late_by_double() {
        let inst = instance(&[(0, 10, 1)]);
        let rep = delay_factor(&inst, &finished(&inst, &[Some(20)])).unwrap();
        assert_eq!(rep.overall, q(2));
        assert_eq!(rep.witness.as_deref(), Some("r0"));
    }

    #[test]
    fn forced_sequential() {
        let inst = instance(&[(0, 1, 1), (0, 1, 1)]);
        let rep = delay_factor(&inst, &finished(&inst, &[Some(1), Some(2)])).unwrap();
        assert_eq!(rep.overall, q(2));
        assert_eq!(rep.witness_id, Some(RequestId(1)));
    }

    #[test]
    fn unsatisfied_is_named() {
        let inst = instance(&[(0, 1, 1), (0, 1, 1)]);
        let err = delay_factor(&inst, &finished(&inst, &[Some(1), None])).unwrap_err();
        assert_eq!(err, MetricsError::Unsatisfied("r1".into()));
    }

    #[test]
    fn alpha_at_zero_is_one() {
        let inst = instance(&[]);
        assert_eq!(current_alpha(&inst, &finished(&inst, &[]), &q(0)), q(1));
    }

    #[test]
    fn alpha_counts_alive_ages() {
        let inst = instance(&[(0, 4, 1)]);
        assert_eq!(current_alpha(&inst, &finished(&inst, &[None]), &q(8)), q(2));
    }

    #[test]
    fn alpha_takes_max_of_finished_and_alive() {
        let inst = instance(&[(0, 1, 1), (0, 2, 1)]);
        let t = finished(&inst, &[Some(3), None]);
        assert_eq!(current_alpha(&inst, &t, &q(4)), q(3));
    }
}
