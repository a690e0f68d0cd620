use delayfactor::broadcast::{
    check_busy_property, check_start_finish_order, check_waiting_property, replay_transmissions, BroadcastViolation,
};
use delayfactor::trace::{check_trace, TraceViolation};
use delayfactor::unicast::{check_dispatch, check_volume_balance_over_run, BalanceViolation};
use delayfactor::{Instance, Mode, Rational, ScheduleTrace};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("instance is {actual} but {requested} rules were requested")]
pub struct RulesMismatch {
    pub requested: Mode,
    pub actual: Mode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Rule set to apply; defaults to the instance's mode.
    pub rules: Option<Mode>,
    /// Wait constant of the scheduler that produced a broadcast trace.
    /// Enables the waiting, busy and start-order checks.
    pub wait_c: Option<Rational>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub trace: Vec<TraceViolation>,
    pub volume_balance: Vec<BalanceViolation>,
    pub dispatch: Vec<String>,
    pub broadcast: Vec<BroadcastViolation>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.trace.is_empty() && self.volume_balance.is_empty() && self.dispatch.is_empty() && self.broadcast.is_empty()
    }

    pub fn count(&self) -> usize {
        self.trace.len() + self.volume_balance.len() + self.dispatch.len() + self.broadcast.len()
    }
}

/// Runs every invariant family that applies to the trace.
pub fn check(instance: &Instance, trace: &ScheduleTrace, options: &CheckOptions) -> Result<CheckReport, RulesMismatch> {
    let rules = options.rules.unwrap_or(instance.mode);
    if rules != instance.mode {
        return Err(RulesMismatch {
            requested: rules,
            actual: instance.mode,
        });
    }
    let mut report = CheckReport {
        trace: check_trace(instance, trace),
        ..CheckReport::default()
    };
    match rules {
        Mode::Unicast => {
            if trace.machines > 1 {
                report.volume_balance = check_volume_balance_over_run(instance, trace);
                report.dispatch = check_dispatch(instance, trace)
                    .into_iter()
                    .map(|id| instance.request(id).name.clone())
                    .collect();
            }
        }
        Mode::Broadcast => {
            let (records, violations) = replay_transmissions(instance, trace);
            report.broadcast = violations;
            if let Some(c) = &options.wait_c {
                report.broadcast.extend(check_waiting_property(instance, trace, c));
                report.broadcast.extend(check_busy_property(instance, trace, c));
                report.broadcast.extend(check_start_finish_order(instance, &records));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_experiment, ExperimentSpec, SchedulerKind};
    use crate::gen::{generate, GenParams, Profile};
    use delayfactor::trace::Subject;

    #[test]
    fn clean_ssf_id_trace() {
        let p = GenParams {
            requests: 25,
            machines: 3,
            ..GenParams::default()
        };
        let inst = generate(3, Profile::UnicastRandom, &p);
        let spec = ExperimentSpec::new(SchedulerKind::SsfId, Rational::new(3, 2));
        let (out, _) = run_experiment(&inst, &spec).unwrap();
        let report = check(&inst, &out.trace, &CheckOptions::default()).unwrap();
        assert!(report.is_clean(), "{:?}", report);
    }

    #[test]
    fn overlap_is_reported() {
        let inst = generate(4, Profile::UnicastRandom, &GenParams::default());
        let spec = ExperimentSpec::new(SchedulerKind::Ssf, Rational::one());
        let (out, _) = run_experiment(&inst, &spec).unwrap();
        let mut trace = out.trace.clone();
        let i = trace
            .segments
            .iter()
            .position(|s| &s.end - &s.start > Rational::new(1, 8))
            .unwrap();
        let mut dup = trace.segments[i].clone();
        dup.start = &dup.start + Rational::new(1, 16);
        dup.work = (&dup.end - &dup.start) * &trace.speed;
        dup.subject = Subject::Request(delayfactor::RequestId(0));
        trace.segments.push(dup);
        let report = check(&inst, &trace, &CheckOptions::default()).unwrap();
        assert!(report.trace.iter().any(|v| matches!(v, TraceViolation::Overlap { .. })));
    }

    #[test]
    fn broadcast_rules_on_unicast_instance() {
        let inst = generate(5, Profile::UnicastRandom, &GenParams::default());
        let trace = ScheduleTrace::new(Rational::one(), 1, inst.len());
        let options = CheckOptions {
            rules: Some(Mode::Broadcast),
            wait_c: None,
        };
        assert!(check(&inst, &trace, &options).is_err());
    }

    #[test]
    fn clean_ssfw_trace() {
        let p = GenParams {
            requests: 12,
            pages: 3,
            ..GenParams::default()
        };
        let inst = generate(9, Profile::BurstyPage, &p);
        let c = Rational::new(1, 4);
        let spec = ExperimentSpec::new(SchedulerKind::Ssfw, Rational::new(5, 2)).with_c(c.clone());
        let (out, _) = run_experiment(&inst, &spec).unwrap();
        let options = CheckOptions {
            rules: None,
            wait_c: Some(c),
        };
        let report = check(&inst, &out.trace, &options).unwrap();
        assert!(report.is_clean(), "{:?}", report);
    }
}
