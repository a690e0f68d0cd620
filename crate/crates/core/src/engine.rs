//! Event-driven simulation over exact time.
//!
//! At each event instant the loop settles completions, asks the source for
//! arrivals, asks the scheduler for one action per machine, and then jumps to
//! the earliest of: a completion, the source's next arrival, the scheduler's
//! requested wake-up, or the horizon. Nothing changes between instants, so
//! work accounting is exact.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{Instance, Mode, PageCatalog, PageId, Request, RequestId, RequestSpec};
use crate::rational::{Duration, Rational, TimePoint};
use crate::trace::{Abandonment, EligibilityMark, ScheduleTrace, Segment, Subject, TransmissionStart};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub speed: Rational,
    pub machines: usize,
    pub horizon: Option<TimePoint>,
    pub max_events: usize,
}

impl EngineConfig {
    pub fn new(speed: Rational, machines: usize) -> Self {
        EngineConfig {
            speed,
            machines,
            horizon: None,
            max_events: 5_000_000,
        }
    }

    pub fn with_horizon(mut self, horizon: TimePoint) -> Self {
        self.horizon = Some(horizon);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Idle,
    /// Work on a unicast request.
    Process(RequestId),
    /// Work on `page`: continue its active transmission, or start one
    /// triggered by `trigger` if none is active.
    Transmit { page: PageId, trigger: RequestId },
    /// Abandon the active transmission of `page` (its progress is lost) and
    /// start a fresh one triggered by `trigger`.
    Restart { page: PageId, trigger: RequestId },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decision {
    /// One entry per machine; missing entries mean idle.
    pub actions: Vec<Action>,
    /// Ask to be consulted again at this instant even if nothing happens.
    pub wake_at: Option<TimePoint>,
    /// Requests that became eligible at this instant.
    pub marks: Vec<RequestId>,
}

impl Decision {
    pub fn single(action: Action) -> Self {
        Decision {
            actions: vec![action],
            ..Decision::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveTransmission {
    pub page: PageId,
    pub trigger: RequestId,
    pub start: TimePoint,
    pub work: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub machine: usize,
    pub subject: Subject,
    /// Start of the completed transmission (broadcast only).
    pub started: Option<TimePoint>,
}

pub trait Scheduler {
    fn name(&self) -> String;
    fn decide(&mut self, view: &SimView<'_>) -> Decision;
}

pub trait RequestSource {
    fn mode(&self) -> Mode;
    fn pages(&self) -> &PageCatalog;
    fn is_adaptive(&self) -> bool;
    /// Horizon to use when the configuration gives none.
    fn default_horizon(&self, _speed: &Rational) -> Option<TimePoint> {
        None
    }
    /// Requests arriving exactly at `view.now()`.
    fn emit(&mut self, view: &SimView<'_>) -> Vec<RequestSpec>;
    /// Next instant, strictly after now, at which the source wants to be
    /// consulted.
    fn next_arrival(&self, view: &SimView<'_>) -> Option<TimePoint>;
}

#[derive(Debug, Clone)]
struct Running {
    subject: Subject,
    since: TimePoint,
}

#[derive(Debug)]
struct State {
    now: TimePoint,
    mode: Mode,
    speed: Rational,
    machines: usize,
    pages: PageCatalog,
    requests: Vec<Request>,
    alive: BTreeSet<RequestId>,
    remaining: Vec<Duration>,
    arrived_now: Vec<RequestId>,
    completed_now: Vec<Completion>,
    running: Vec<Option<Running>>,
    transmissions: BTreeMap<PageId, ActiveTransmission>,
    alpha_finished: Rational,
    trace: ScheduleTrace,
}

/// Read-only snapshot handed to schedulers and sources.
pub struct SimView<'a> {
    state: &'a State,
}

impl<'a> SimView<'a> {
    pub fn now(&self) -> &'a TimePoint {
        &self.state.now
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn speed(&self) -> &'a Rational {
        &self.state.speed
    }

    pub fn machines(&self) -> usize {
        self.state.machines
    }

    pub fn pages(&self) -> &'a PageCatalog {
        &self.state.pages
    }

    /// Every request emitted so far, indexed by id.
    pub fn requests(&self) -> &'a [Request] {
        &self.state.requests
    }

    pub fn request(&self, id: RequestId) -> &'a Request {
        &self.state.requests[id.0]
    }

    /// Arrived, unsatisfied requests in id order.
    pub fn alive(&self) -> impl Iterator<Item = &'a Request> + 'a {
        let reqs = &self.state.requests;
        self.state.alive.iter().map(move |id| &reqs[id.0])
    }

    pub fn alive_count(&self) -> usize {
        self.state.alive.len()
    }

    pub fn is_alive(&self, id: RequestId) -> bool {
        self.state.alive.contains(&id)
    }

    pub fn remaining(&self, id: RequestId) -> &'a Duration {
        &self.state.remaining[id.0]
    }

    pub fn finish(&self, id: RequestId) -> Option<&'a TimePoint> {
        self.state.trace.finish(id)
    }

    pub fn arrived_now(&self) -> &'a [RequestId] {
        &self.state.arrived_now
    }

    pub fn completed_now(&self) -> &'a [Completion] {
        &self.state.completed_now
    }

    pub fn running(&self, machine: usize) -> Option<Subject> {
        self.state.running[machine].as_ref().map(|r| r.subject)
    }

    pub fn transmission(&self, page: PageId) -> Option<&'a ActiveTransmission> {
        self.state.transmissions.get(&page)
    }

    pub fn transmissions(&self) -> impl Iterator<Item = &'a ActiveTransmission> + 'a {
        self.state.transmissions.values()
    }

    /// Largest finished factor so far, at least one.
    pub fn alpha_finished(&self) -> &'a Rational {
        &self.state.alpha_finished
    }

    /// Running delay factor including the ages of alive requests.
    pub fn alpha(&self) -> Rational {
        let mut alpha = self.state.alpha_finished.clone();
        for r in self.alive() {
            let age = (&self.state.now - &r.arrival) / r.slack();
            if age > alpha {
                alpha = age;
            }
        }
        alpha
    }

    /// Trace recorded so far.
    pub fn trace(&self) -> &'a ScheduleTrace {
        &self.state.trace
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("online violation at {time}: request `{request}` acted on before it arrived")]
    OnlineViolation { time: TimePoint, request: String },
    #[error("invalid action at {time}: {detail}")]
    InvalidAction { time: TimePoint, detail: String },
    #[error("unknown page index {page} at {time}")]
    UnknownPage { time: TimePoint, page: usize },
    #[error("invalid emission at {time}: {detail}")]
    InvalidEmission { time: TimePoint, detail: String },
    #[error("adaptive sources require an explicit horizon")]
    HorizonRequired,
    #[error("event limit of {0} reached")]
    EventLimit(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutcome {
    /// Every emitted request, ids in emission order.
    pub instance: Instance,
    pub trace: ScheduleTrace,
    /// The horizon cut the run short.
    pub truncated: bool,
    pub events: usize,
}

/// Wraps a fixed instance.
#[derive(Debug, Clone)]
pub struct StaticSource {
    instance: Instance,
    next: usize,
}

impl StaticSource {
    pub fn new(instance: Instance) -> Self {
        StaticSource { instance, next: 0 }
    }
}

/// `4 * (last arrival + total work / speed + sum of slacks)`.
pub fn default_horizon(instance: &Instance, speed: &Rational) -> TimePoint {
    let slacks: Rational = instance.requests.iter().map(Request::slack).sum();
    Rational::integer(4) * (instance.last_arrival() + instance.total_work() / speed + slacks)
}

impl RequestSource for StaticSource {
    fn mode(&self) -> Mode {
        self.instance.mode
    }

    fn pages(&self) -> &PageCatalog {
        &self.instance.pages
    }

    fn is_adaptive(&self) -> bool {
        false
    }

    fn default_horizon(&self, speed: &Rational) -> Option<TimePoint> {
        Some(default_horizon(&self.instance, speed))
    }

    fn emit(&mut self, view: &SimView<'_>) -> Vec<RequestSpec> {
        let mut out = Vec::new();
        while let Some(r) = self.instance.requests.get(self.next) {
            if r.arrival > *view.now() {
                break;
            }
            out.push(RequestSpec {
                name: r.name.clone(),
                arrival: r.arrival.clone(),
                deadline: r.deadline.clone(),
                length: r.length.clone(),
                page: r.page,
            });
            self.next += 1;
        }
        out
    }

    fn next_arrival(&self, _view: &SimView<'_>) -> Option<TimePoint> {
        self.instance.requests.get(self.next).map(|r| r.arrival.clone())
    }
}

/// Runs `scheduler` on a fixed instance with the instance's machine count.
pub fn simulate_instance(
    instance: &Instance,
    scheduler: &mut dyn Scheduler,
    speed: &Rational,
) -> Result<SimOutcome, EngineError> {
    let mut source = StaticSource::new(instance.clone());
    simulate(&mut source, scheduler, &EngineConfig::new(speed.clone(), instance.machines))
}

pub fn simulate(
    source: &mut dyn RequestSource,
    scheduler: &mut dyn Scheduler,
    config: &EngineConfig,
) -> Result<SimOutcome, EngineError> {
    if !config.speed.is_positive() {
        return Err(EngineError::Config("speed must be positive".into()));
    }
    if config.machines == 0 {
        return Err(EngineError::Config("machine count must be at least 1".into()));
    }
    let horizon = match &config.horizon {
        Some(h) => h.clone(),
        None if source.is_adaptive() => return Err(EngineError::HorizonRequired),
        None => source
            .default_horizon(&config.speed)
            .ok_or(EngineError::HorizonRequired)?,
    };
    let mut state = State {
        now: Rational::zero(),
        mode: source.mode(),
        speed: config.speed.clone(),
        machines: config.machines,
        pages: source.pages().clone(),
        requests: Vec::new(),
        alive: BTreeSet::new(),
        remaining: Vec::new(),
        arrived_now: Vec::new(),
        completed_now: Vec::new(),
        running: vec![None; config.machines],
        transmissions: BTreeMap::new(),
        alpha_finished: Rational::one(),
        trace: ScheduleTrace::new(config.speed.clone(), config.machines, 0),
    };
    let mut events = 0usize;
    let mut truncated = false;
    loop {
        events += 1;
        if events > config.max_events {
            return Err(EngineError::EventLimit(config.max_events));
        }
        let specs = source.emit(&SimView { state: &state });
        for spec in specs {
            state.admit(spec)?;
        }
        let decision = scheduler.decide(&SimView { state: &state });
        state.apply(&decision)?;

        let view = SimView { state: &state };
        let mut next: Option<TimePoint> = None;
        let mut consider = |t: TimePoint| {
            if next.as_ref().map_or(true, |n| t < *n) {
                next = Some(t);
            }
        };
        for t in state.completion_times().into_iter().flatten() {
            consider(t);
        }
        let source_pending = source.next_arrival(&view);
        if let Some(t) = source_pending.clone() {
            if t <= state.now {
                return Err(EngineError::InvalidEmission {
                    time: state.now.clone(),
                    detail: format!("next arrival {} is not after now", t),
                });
            }
            consider(t);
        }
        if let Some(t) = decision.wake_at {
            if t > state.now {
                consider(t);
            }
        }
        let Some(next) = next else {
            break;
        };
        if next > horizon {
            if horizon > state.now {
                state.advance(&horizon);
            }
            state.close_all();
            truncated = !state.alive.is_empty() || source_pending.is_some();
            break;
        }
        state.advance(&next);
    }
    let instance = Instance {
        mode: state.mode,
        machines: state.machines,
        pages: state.pages,
        requests: state.requests,
    };
    let mut trace = state.trace;
    trace
        .segments
        .sort_by(|a, b| a.end.cmp(&b.end).then(a.machine.cmp(&b.machine)));
    Ok(SimOutcome {
        instance,
        trace,
        truncated,
        events,
    })
}

impl State {
    fn admit(&mut self, spec: RequestSpec) -> Result<(), EngineError> {
        let bad = |detail: String| EngineError::InvalidEmission {
            time: self.now.clone(),
            detail,
        };
        if spec.arrival != self.now {
            return Err(bad(format!("request `{}` arrives at {} instead of now", spec.name, spec.arrival)));
        }
        if spec.deadline <= spec.arrival {
            return Err(bad(format!("request `{}` has non-positive slack", spec.name)));
        }
        let length = match (self.mode, spec.page) {
            (Mode::Unicast, None) => {
                if !spec.length.is_positive() || spec.length > &spec.deadline - &spec.arrival {
                    return Err(bad(format!("request `{}` has invalid length", spec.name)));
                }
                spec.length
            }
            (Mode::Broadcast, Some(p)) => match self.pages.get(p) {
                Some(page) => page.length.clone(),
                None => return Err(bad(format!("request `{}` names an unknown page", spec.name))),
            },
            _ => return Err(bad(format!("request `{}` does not match the mode", spec.name))),
        };
        let id = RequestId(self.requests.len());
        self.requests.push(Request {
            id,
            name: spec.name,
            arrival: spec.arrival,
            deadline: spec.deadline,
            length: length.clone(),
            page: spec.page,
        });
        self.remaining.push(length);
        self.trace.finish.push(None);
        self.alive.insert(id);
        self.arrived_now.push(id);
        Ok(())
    }

    fn check_trigger(&self, page: PageId, trigger: RequestId) -> Result<(), EngineError> {
        let Some(r) = self.requests.get(trigger.0) else {
            return Err(EngineError::OnlineViolation {
                time: self.now.clone(),
                request: format!("#{}", trigger.0),
            });
        };
        if !self.alive.contains(&trigger) {
            return Err(EngineError::InvalidAction {
                time: self.now.clone(),
                detail: format!("trigger `{}` is not alive", r.name),
            });
        }
        if r.page != Some(page) {
            return Err(EngineError::InvalidAction {
                time: self.now.clone(),
                detail: format!("trigger `{}` is not a request for the transmitted page", r.name),
            });
        }
        Ok(())
    }

    fn apply(&mut self, decision: &Decision) -> Result<(), EngineError> {
        for &id in &decision.marks {
            self.trace.eligibility.push(EligibilityMark {
                request: id,
                time: self.now.clone(),
            });
        }
        let mut desired: Vec<Option<Subject>> = vec![None; self.machines];
        let mut fresh: Vec<(usize, PageId, RequestId, bool)> = Vec::new();
        let mut used = BTreeSet::new();
        for (machine, action) in decision.actions.iter().enumerate() {
            if machine >= self.machines {
                if *action != Action::Idle {
                    return Err(EngineError::InvalidAction {
                        time: self.now.clone(),
                        detail: format!("machine {} does not exist", machine),
                    });
                }
                continue;
            }
            let subject = match action {
                Action::Idle => None,
                Action::Process(id) => {
                    if self.mode != Mode::Unicast {
                        return Err(EngineError::InvalidAction {
                            time: self.now.clone(),
                            detail: "process action in broadcast mode".into(),
                        });
                    }
                    if id.0 >= self.requests.len() {
                        return Err(EngineError::OnlineViolation {
                            time: self.now.clone(),
                            request: format!("#{}", id.0),
                        });
                    }
                    if !self.alive.contains(id) {
                        return Err(EngineError::InvalidAction {
                            time: self.now.clone(),
                            detail: format!("request `{}` is already finished", self.requests[id.0].name),
                        });
                    }
                    Some(Subject::Request(*id))
                }
                Action::Transmit { page, trigger } | Action::Restart { page, trigger } => {
                    if self.mode != Mode::Broadcast {
                        return Err(EngineError::InvalidAction {
                            time: self.now.clone(),
                            detail: "transmit action in unicast mode".into(),
                        });
                    }
                    if page.0 >= self.pages.len() {
                        return Err(EngineError::UnknownPage {
                            time: self.now.clone(),
                            page: page.0,
                        });
                    }
                    let restart = matches!(action, Action::Restart { .. });
                    if restart || !self.transmissions.contains_key(page) {
                        self.check_trigger(*page, *trigger)?;
                        fresh.push((machine, *page, *trigger, restart));
                    }
                    Some(Subject::Page(*page))
                }
            };
            if let Some(s) = subject {
                if !used.insert(s) {
                    return Err(EngineError::InvalidAction {
                        time: self.now.clone(),
                        detail: format!("{:?} scheduled on two machines", s),
                    });
                }
            }
            desired[machine] = subject;
        }
        let restarted: BTreeSet<PageId> = fresh.iter().filter(|f| f.3).map(|f| f.1).collect();
        for machine in 0..self.machines {
            let changed = match (&self.running[machine], &desired[machine]) {
                (Some(run), Some(want)) => {
                    run.subject != *want || matches!(want, Subject::Page(p) if restarted.contains(p))
                }
                (None, None) => false,
                _ => true,
            };
            if changed {
                self.close(machine);
            }
        }
        for (machine, page, trigger, restart) in fresh {
            if restart {
                if let Some(old) = self.transmissions.remove(&page) {
                    self.trace.abandonments.push(Abandonment {
                        machine,
                        page,
                        started: old.start,
                        time: self.now.clone(),
                        work_lost: old.work,
                    });
                }
            }
            self.transmissions.insert(
                page,
                ActiveTransmission {
                    page,
                    trigger,
                    start: self.now.clone(),
                    work: Rational::zero(),
                },
            );
            self.trace.starts.push(TransmissionStart {
                machine,
                page,
                trigger,
                time: self.now.clone(),
            });
        }
        for (machine, want) in desired.into_iter().enumerate() {
            if self.running[machine].is_none() {
                if let Some(subject) = want {
                    self.running[machine] = Some(Running {
                        subject,
                        since: self.now.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn close(&mut self, machine: usize) {
        if let Some(run) = self.running[machine].take() {
            if self.now > run.since {
                self.trace.segments.push(Segment {
                    machine,
                    subject: run.subject,
                    work: &self.speed * (&self.now - &run.since),
                    start: run.since,
                    end: self.now.clone(),
                });
            }
        }
    }

    fn close_all(&mut self) {
        for machine in 0..self.machines {
            self.close(machine);
        }
    }

    fn completion_times(&self) -> Vec<Option<TimePoint>> {
        self.running
            .iter()
            .map(|run| {
                let run = run.as_ref()?;
                let left = match run.subject {
                    Subject::Request(id) => self.remaining[id.0].clone(),
                    Subject::Page(p) => {
                        self.pages.length(p) - &self.transmissions[&p].work
                    }
                };
                Some(&self.now + left / &self.speed)
            })
            .collect()
    }

    fn advance(&mut self, to: &TimePoint) {
        let work = &self.speed * (to - &self.now);
        self.now = to.clone();
        self.arrived_now.clear();
        self.completed_now.clear();
        for machine in 0..self.machines {
            let Some(subject) = self.running[machine].as_ref().map(|r| r.subject) else {
                continue;
            };
            match subject {
                Subject::Request(id) => {
                    self.remaining[id.0] -= &work;
                    debug_assert!(!self.remaining[id.0].is_negative());
                    if self.remaining[id.0].is_zero() {
                        self.close(machine);
                        self.satisfy(id);
                        self.completed_now.push(Completion {
                            machine,
                            subject,
                            started: None,
                        });
                    }
                }
                Subject::Page(page) => {
                    let done = {
                        let tr = self.transmissions.get_mut(&page).expect("running page has a transmission");
                        tr.work += &work;
                        debug_assert!(tr.work <= *self.pages.length(page));
                        tr.work == *self.pages.length(page)
                    };
                    if done {
                        let tr = self.transmissions.remove(&page).unwrap();
                        self.close(machine);
                        let covered: Vec<RequestId> = self
                            .alive
                            .iter()
                            .copied()
                            .filter(|id| {
                                let r = &self.requests[id.0];
                                r.page == Some(page) && r.arrival <= tr.start
                            })
                            .collect();
                        for id in covered {
                            self.satisfy(id);
                        }
                        self.completed_now.push(Completion {
                            machine,
                            subject,
                            started: Some(tr.start),
                        });
                    }
                }
            }
        }
    }

    fn satisfy(&mut self, id: RequestId) {
        self.alive.remove(&id);
        let r = &self.requests[id.0];
        let factor = (&self.now - &r.arrival) / r.slack();
        if factor > self.alpha_finished {
            self.alpha_finished = factor;
        }
        self.trace.finish[id.0] = Some(self.now.clone());
    }
}

/// `max(alpha_fin, max_j (t - a_j) / S_j)` over `alive` pairs `(a_j, S_j)`.
pub fn alpha_at(alive: &[(TimePoint, Duration)], alpha_fin: &Rational, t: &TimePoint) -> Rational {
    let mut alpha = alpha_fin.clone();
    for (a, s) in alive {
        if a <= t {
            let age = (t - a) / s;
            if age > alpha {
                alpha = age;
            }
        }
    }
    alpha
}

/// Whether a request `(a, S)` has waited `c * alpha_t * S` by `t`.
pub fn is_eligible(
    a: &TimePoint,
    s: &Duration,
    alive: &[(TimePoint, Duration)],
    alpha_fin: &Rational,
    c: &Rational,
    t: &TimePoint,
) -> bool {
    t - a >= c * alpha_at(alive, alpha_fin, t) * s
}

/// Earliest `t* >= t` at which some request in `pending` becomes eligible,
/// assuming the alive set and `alpha_fin` stay fixed. Between events
/// `alpha_t` is the maximum of `alpha_fin` and one line per alive request, so
/// every crossing is the root of one of those linear pieces; each root is
/// confirmed by direct evaluation. Crossings after `before` are dropped.
pub fn next_eligibility_crossing(
    pending: &[(TimePoint, Duration)],
    alive: &[(TimePoint, Duration)],
    alpha_fin: &Rational,
    c: &Rational,
    t: &TimePoint,
    before: Option<&TimePoint>,
) -> Option<TimePoint> {
    let one = Rational::one();
    let mut best: Option<TimePoint> = None;
    for (a_i, s_i) in pending {
        if is_eligible(a_i, s_i, alive, alpha_fin, c, t) {
            return Some(t.clone());
        }
        let mut candidates = vec![a_i + c * alpha_fin * s_i];
        for (a_j, s_j) in alive {
            let slope = c * s_i / s_j;
            if slope < one {
                candidates.push((a_i - &slope * a_j) / (&one - &slope));
            }
        }
        candidates.retain(|x| x >= t);
        candidates.sort();
        candidates.dedup();
        for x in candidates {
            if best.as_ref().is_some_and(|b| x >= *b) {
                break;
            }
            if is_eligible(a_i, s_i, alive, alpha_fin, c, &x) {
                best = Some(x);
                break;
            }
        }
    }
    match (best, before) {
        (Some(b), Some(limit)) if b > *limit => None,
        (b, _) => b,
    }
}
