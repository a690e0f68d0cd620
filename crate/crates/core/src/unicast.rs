//! Shortest-slack-first schedulers for independent jobs, and volume
//! accounting for immediate dispatch across machines.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::engine::{Action, Decision, Scheduler, SimView};
use crate::model::{Instance, Request, RequestId};
use crate::rational::{Duration, Rational, TimePoint};
use crate::trace::{ScheduleTrace, Subject};

fn ssf_key(r: &Request) -> (Rational, RequestId) {
    (r.slack(), r.id)
}

fn min_slack<'a>(requests: impl Iterator<Item = &'a Request>) -> Option<&'a Request> {
    requests.min_by(|a, b| ssf_key(a).cmp(&ssf_key(b)))
}

/// Preemptive shortest slack first on machine 0. Ties go to the earlier
/// arrival, then the lower id.
#[derive(Debug, Clone, Default)]
pub struct Ssf;

impl Scheduler for Ssf {
    fn name(&self) -> String {
        "ssf".into()
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        match min_slack(view.alive()) {
            Some(r) => Decision::single(Action::Process(r.id)),
            None => Decision::default(),
        }
    }
}

/// Shortest slack first without preemption: a started request runs to
/// completion.
#[derive(Debug, Clone, Default)]
pub struct SsfNonPreemptive;

impl Scheduler for SsfNonPreemptive {
    fn name(&self) -> String {
        "ssf-np".into()
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        if let Some(Subject::Request(id)) = view.running(0) {
            return Decision::single(Action::Process(id));
        }
        match min_slack(view.alive()) {
            Some(r) => Decision::single(Action::Process(r.id)),
            None => Decision::default(),
        }
    }
}

/// `k` with `S` in `[2^k, 2^(k+1))`. Classes may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SlackClass(pub i64);

impl SlackClass {
    pub fn of(slack: &Duration) -> Self {
        SlackClass(slack.floor_log2())
    }

    pub fn lower(self) -> Rational {
        Rational::pow2(self.0)
    }

    pub fn upper(self) -> Rational {
        Rational::pow2(self.0 + 1)
    }
}

/// Per-machine assigned volume by class, as kept by the dispatcher.
#[derive(Debug, Clone, Default)]
struct Dispatcher {
    assigned: Vec<BTreeMap<SlackClass, Rational>>,
}

impl Dispatcher {
    fn new(machines: usize) -> Self {
        Dispatcher {
            assigned: vec![BTreeMap::new(); machines],
        }
    }

    fn dispatch(&mut self, r: &Request) -> usize {
        let k = SlackClass::of(&r.slack());
        let zero = Rational::zero();
        let mut best = 0;
        for x in 1..self.assigned.len() {
            let ux = self.assigned[x].get(&k).unwrap_or(&zero);
            let ub = self.assigned[best].get(&k).unwrap_or(&zero);
            if ux < ub {
                best = x;
            }
        }
        *self.assigned[best].entry(k).or_insert_with(Rational::zero) += &r.length;
        best
    }
}

/// Immediate dispatch on arrival to the machine with the least assigned
/// volume in the request's slack class (lowest index on ties), then
/// preemptive shortest slack first on each machine. Requests never migrate.
#[derive(Debug, Clone, Default)]
pub struct SsfId {
    dispatcher: Option<Dispatcher>,
    assignment: Vec<usize>,
}

impl SsfId {
    pub fn new() -> Self {
        SsfId::default()
    }

    /// Machine of every request dispatched so far, by id.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

impl Scheduler for SsfId {
    fn name(&self) -> String {
        "ssf-id".into()
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        let dispatcher = self
            .dispatcher
            .get_or_insert_with(|| Dispatcher::new(view.machines()));
        for &id in view.arrived_now() {
            debug_assert_eq!(id.0, self.assignment.len());
            self.assignment.push(dispatcher.dispatch(view.request(id)));
        }
        let mut best: Vec<Option<&Request>> = vec![None; view.machines()];
        for r in view.alive() {
            let slot = &mut best[self.assignment[r.id.0]];
            if slot.map_or(true, |b| ssf_key(r) < ssf_key(b)) {
                *slot = Some(r);
            }
        }
        Decision {
            actions: best
                .into_iter()
                .map(|r| r.map_or(Action::Idle, |r| Action::Process(r.id)))
                .collect(),
            ..Decision::default()
        }
    }
}

/// Machine each request of `instance` is dispatched to. Dispatch depends only
/// on arrival order, slacks and lengths, so it can be recomputed offline.
pub fn dispatch(instance: &Instance, machines: usize) -> Vec<usize> {
    let mut d = Dispatcher::new(machines);
    instance.requests.iter().map(|r| d.dispatch(r)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassVolumes {
    /// Volume assigned so far (`U`).
    pub assigned: Rational,
    /// Volume processed so far (`P`).
    pub processed: Rational,
    /// Volume still to process (`R = U - P`).
    pub residual: Rational,
}

/// Per-machine, per-class volumes at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MachineClassLedger {
    pub time: TimePoint,
    pub machines: usize,
    pub classes: BTreeMap<SlackClass, Vec<ClassVolumes>>,
}

impl MachineClassLedger {
    pub fn new(time: TimePoint, machines: usize) -> Self {
        MachineClassLedger {
            time,
            machines,
            classes: BTreeMap::new(),
        }
    }

    pub fn entry(&mut self, k: SlackClass, machine: usize) -> &mut ClassVolumes {
        let m = self.machines;
        &mut self
            .classes
            .entry(k)
            .or_insert_with(|| vec![ClassVolumes::default(); m])[machine]
    }

    fn prefix(&self, k: SlackClass, machine: usize, field: fn(&ClassVolumes) -> &Rational) -> Rational {
        self.classes
            .range(..=k)
            .map(|(_, v)| field(&v[machine]).clone())
            .sum()
    }

    pub fn assigned_eq(&self, k: SlackClass, machine: usize) -> Rational {
        self.classes
            .get(&k)
            .map(|v| v[machine].assigned.clone())
            .unwrap_or_else(Rational::zero)
    }

    pub fn assigned_le(&self, k: SlackClass, machine: usize) -> Rational {
        self.prefix(k, machine, |v| &v.assigned)
    }

    pub fn processed_le(&self, k: SlackClass, machine: usize) -> Rational {
        self.prefix(k, machine, |v| &v.processed)
    }

    pub fn residual_le(&self, k: SlackClass, machine: usize) -> Rational {
        self.prefix(k, machine, |v| &v.residual)
    }
}

/// Ledger at `t` from a finished trace and the dispatch map. Requests count
/// as assigned from their arrival on; processing is read from segments.
pub fn ledger_at(instance: &Instance, trace: &ScheduleTrace, assignment: &[usize], t: &TimePoint) -> MachineClassLedger {
    let machines = trace.machines.max(assignment.iter().map(|x| x + 1).max().unwrap_or(1));
    let mut ledger = MachineClassLedger::new(t.clone(), machines);
    for r in &instance.requests {
        if r.arrival <= *t {
            ledger.entry(SlackClass::of(&r.slack()), assignment[r.id.0]).assigned += &r.length;
        }
    }
    for seg in &trace.segments {
        let Subject::Request(id) = seg.subject else {
            continue;
        };
        if seg.start >= *t {
            continue;
        }
        let end = if seg.end < *t { seg.end.clone() } else { t.clone() };
        let k = SlackClass::of(&instance.request(id).slack());
        ledger.entry(k, seg.machine).processed += &trace.speed * (end - &seg.start);
    }
    for volumes in ledger.classes.values_mut() {
        for v in volumes.iter_mut() {
            v.residual = &v.assigned - &v.processed;
        }
    }
    ledger
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceFamily {
    /// `|U^x_{=k} - U^y_{=k}| <= 2^(k+1)`
    AssignedEq,
    /// `|U^x_{<=k} - U^y_{<=k}| <= 2^(k+2)`
    AssignedLe,
    /// `|P^x_{<=k} - P^y_{<=k}| <= 2^(k+2)`
    ProcessedLe,
    /// `|R^x_{<=k} - R^y_{<=k}| <= 2^(k+3)`
    ResidualLe,
}

impl BalanceFamily {
    pub const ALL: [BalanceFamily; 4] = [
        BalanceFamily::AssignedEq,
        BalanceFamily::AssignedLe,
        BalanceFamily::ProcessedLe,
        BalanceFamily::ResidualLe,
    ];

    pub fn bound(self, k: SlackClass) -> Rational {
        let shift = match self {
            BalanceFamily::AssignedEq => 1,
            BalanceFamily::AssignedLe | BalanceFamily::ProcessedLe => 2,
            BalanceFamily::ResidualLe => 3,
        };
        Rational::pow2(k.0 + shift)
    }

    fn value(self, ledger: &MachineClassLedger, k: SlackClass, machine: usize) -> Rational {
        match self {
            BalanceFamily::AssignedEq => ledger.assigned_eq(k, machine),
            BalanceFamily::AssignedLe => ledger.assigned_le(k, machine),
            BalanceFamily::ProcessedLe => ledger.processed_le(k, machine),
            BalanceFamily::ResidualLe => ledger.residual_le(k, machine),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceViolation {
    pub time: TimePoint,
    pub family: BalanceFamily,
    pub class: SlackClass,
    pub high: usize,
    pub low: usize,
    pub difference: Rational,
    pub bound: Rational,
}

/// Largest pairwise difference per family and class; one violation for each
/// that exceeds its bound. Also flags `P < 0` or `R < 0` entries.
pub fn check_volume_balance(ledger: &MachineClassLedger) -> Vec<BalanceViolation> {
    let mut out = Vec::new();
    if ledger.machines < 2 {
        return out;
    }
    for &k in ledger.classes.keys() {
        for family in BalanceFamily::ALL {
            let values: Vec<Rational> = (0..ledger.machines).map(|x| family.value(ledger, k, x)).collect();
            let (mut hi, mut lo) = (0, 0);
            for x in 1..values.len() {
                if values[x] > values[hi] {
                    hi = x;
                }
                if values[x] < values[lo] {
                    lo = x;
                }
            }
            let difference = &values[hi] - &values[lo];
            let bound = family.bound(k);
            if difference > bound {
                out.push(BalanceViolation {
                    time: ledger.time.clone(),
                    family,
                    class: k,
                    high: hi,
                    low: lo,
                    difference,
                    bound,
                });
            }
        }
    }
    out
}

/// Every instant at which a ledger can change: arrivals and segment
/// boundaries.
pub fn event_instants(instance: &Instance, trace: &ScheduleTrace) -> Vec<TimePoint> {
    let mut set: BTreeSet<TimePoint> = instance.requests.iter().map(|r| r.arrival.clone()).collect();
    for seg in &trace.segments {
        set.insert(seg.start.clone());
        set.insert(seg.end.clone());
    }
    set.into_iter().collect()
}

/// Runs [`check_volume_balance`] at every event instant of a run, using the
/// recomputed dispatch map.
pub fn check_volume_balance_over_run(instance: &Instance, trace: &ScheduleTrace) -> Vec<BalanceViolation> {
    let assignment = dispatch(instance, trace.machines);
    event_instants(instance, trace)
        .iter()
        .flat_map(|t| check_volume_balance(&ledger_at(instance, trace, &assignment, t)))
        .collect()
}

/// Requests whose segments ran on a machine other than their dispatch target.
pub fn check_dispatch(instance: &Instance, trace: &ScheduleTrace) -> Vec<RequestId> {
    let assignment = dispatch(instance, trace.machines);
    let mut bad = BTreeSet::new();
    for seg in &trace.segments {
        if let Subject::Request(id) = seg.subject {
            if assignment.get(id.0) != Some(&seg.machine) {
                bad.insert(id);
            }
        }
    }
    bad.into_iter().collect()
}
