//! Adaptive lower-bound constructions. Each is a [`RequestSource`] that
//! watches the online schedule and, after the run, produces a certificate
//! schedule for the requests it emitted.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive};
use serde::Serialize;
use thiserror::Error;

use crate::engine::{simulate, EngineConfig, EngineError, RequestSource, Scheduler, SimOutcome, SimView};
use crate::metrics::{delay_factor, MetricsError};
use crate::model::{Instance, Mode, PageCatalog, PageId, RequestId, RequestSpec};
use crate::rational::{Rational, TimePoint};
use crate::trace::{ScheduleTrace, Segment, Subject, TransmissionStart};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("construction needs {0}")]
    Precondition(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("certificate is invalid: {0}")]
    Certificate(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmittedRequest {
    pub id: String,
    pub arrival: TimePoint,
    pub deadline: TimePoint,
    pub length: Rational,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdversaryTranscript {
    pub kind: String,
    pub parameter: Rational,
    pub branch: String,
    pub requests: Vec<EmittedRequest>,
    /// Lower bound on the online factor implied by the construction.
    pub claimed_online_lower: Rational,
    /// Upper bound on the certificate's factor.
    pub claimed_certificate_upper: Rational,
    /// Factor of the certificate, computed from its schedule.
    pub certificate_factor: Rational,
    #[serde(skip)]
    pub certificate: ScheduleTrace,
}

/// Outcome of one adversarial run.
#[derive(Debug, Clone)]
pub struct AdversaryRun {
    pub outcome: SimOutcome,
    pub transcript: AdversaryTranscript,
}

/// Nearest multiple of `2^-bits` to `base^(num/den)`, computed exactly.
pub fn dyadic_power(base: &Rational, num: u32, den: u32, bits: u32) -> Rational {
    let target = pow(base, num);
    let unit = Rational::pow2(-(bits as i64));
    let reach = |k: &BigInt| pow(&(Rational::from_bigints(k.clone(), BigInt::one()) * &unit), den);
    let mut lo = BigInt::from(0);
    let mut hi = BigInt::one();
    while reach(&hi) <= target {
        hi *= 2;
    }
    while &hi - &lo > BigInt::one() {
        let mid: BigInt = (&lo + &hi) / 2;
        if reach(&mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let midpoint = (Rational::from_bigints(lo.clone(), BigInt::one()) + Rational::new(1, 2)) * &unit;
    let k = if target < pow(&midpoint, den) { lo } else { hi };
    Rational::from_bigints(k, BigInt::one()) * unit
}

fn pow(x: &Rational, e: u32) -> Rational {
    let mut out = Rational::one();
    for _ in 0..e {
        out = out * x;
    }
    out
}

const BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnicastBranch {
    /// Type 1 still unfinished at the decision time; no more requests.
    Type1Unfinished,
    /// Type 1 finished in time; unit requests follow.
    Type3,
}

/// Stretch instance with three request types, scaled by `P`:
/// one job of length and slack `P` at time 0; jobs of length and slack
/// `P^0.6` every `P^0.6` from `P - P^0.6` up to `P^1.16 - P^0.6`; and, only
/// if the first job finished by `P^1.16`, `P^1.2 - P^0.6` unit jobs of slack
/// one, one per time unit, starting just after `P^1.16`.
#[derive(Debug, Clone)]
pub struct UnicastStretchAdversary {
    p: Rational,
    p06: Rational,
    p116: Rational,
    p02: Rational,
    p04: Rational,
    type2: Vec<TimePoint>,
    type3_start: TimePoint,
    type3_count: usize,
    next_type2: usize,
    next_type3: usize,
    emitted_type1: bool,
    branch: Option<UnicastBranch>,
    pages: PageCatalog,
}

impl UnicastStretchAdversary {
    pub fn new(p: Rational) -> Result<Self, AdversaryError> {
        if p <= Rational::one() {
            return Err(AdversaryError::Precondition("P > 1".into()));
        }
        let p06 = dyadic_power(&p, 3, 5, BITS);
        let p116 = dyadic_power(&p, 29, 25, BITS);
        let p12 = dyadic_power(&p, 6, 5, BITS);
        let p02 = dyadic_power(&p, 1, 5, BITS);
        let p04 = dyadic_power(&p, 2, 5, BITS);
        if &p116 - &p06 <= p {
            return Err(AdversaryError::Precondition(format!(
                "P^1.16 - P^0.6 > P (got {} - {} <= {})",
                p116.approx(4),
                p06.approx(4),
                p
            )));
        }
        if &p12 - &p06 < Rational::one() {
            return Err(AdversaryError::Precondition("P^1.2 - P^0.6 >= 1".into()));
        }
        let mut type2 = Vec::new();
        let mut t = &p - &p06;
        let last = &p116 - &p06;
        while t <= last {
            type2.push(t.clone());
            t += &p06;
        }
        let type3_start = &p116 + Rational::pow2(-(BITS as i64));
        let type3_count = (&p12 - &p06).floor().to_usize().unwrap_or(0);
        Ok(UnicastStretchAdversary {
            p,
            p06,
            p116,
            p02,
            p04,
            type2,
            type3_start,
            type3_count,
            next_type2: 0,
            next_type3: 0,
            emitted_type1: false,
            branch: None,
            pages: PageCatalog::default(),
        })
    }

    pub fn branch(&self) -> Option<UnicastBranch> {
        self.branch
    }

    /// Rounded `P^0.4 / 2`, the ratio the construction targets.
    pub fn target_ratio(&self) -> Rational {
        &self.p04 / Rational::integer(2)
    }

    /// Rounded `P^0.4`: the slack ratio seen before the unit jobs arrive.
    pub fn early_slack_ratio(&self) -> Rational {
        &self.p / &self.p06
    }

    pub fn decision_time(&self) -> &TimePoint {
        &self.p116
    }

    pub fn suggested_horizon(&self) -> TimePoint {
        let work = &self.p + &self.p06 * Rational::integer(self.type2.len() as i64);
        Rational::integer(2) * (&self.type3_start + Rational::integer(self.type3_count as i64) + work) + Rational::one()
    }

    fn type3_time(&self, k: usize) -> TimePoint {
        &self.type3_start + Rational::integer(k as i64)
    }

    /// Certificate and claims for the requests emitted during `outcome`.
    pub fn transcript(&self, outcome: &SimOutcome) -> Result<AdversaryTranscript, AdversaryError> {
        let inst = &outcome.instance;
        let branch = self.branch.unwrap_or(UnicastBranch::Type1Unfinished);
        let mut pieces: Vec<(RequestId, TimePoint, TimePoint)> = Vec::new();
        let (lower, upper) = match branch {
            UnicastBranch::Type1Unfinished => {
                let mut t = Rational::zero();
                for r in &inst.requests {
                    let start = if t > r.arrival { t.clone() } else { r.arrival.clone() };
                    let end = &start + &r.length;
                    pieces.push((r.id, start, end.clone()));
                    t = end;
                }
                (&self.p116 / &self.p, Rational::integer(2))
            }
            UnicastBranch::Type3 => {
                let first = &self.p - &self.p06;
                pieces.push((RequestId(0), Rational::zero(), first));
                let mut last_end = Rational::zero();
                for r in inst.requests.iter().skip(1) {
                    let end = &r.arrival + &r.length;
                    pieces.push((r.id, r.arrival.clone(), end.clone()));
                    last_end = end;
                }
                pieces.push((RequestId(0), last_end.clone(), &last_end + &self.p06));
                let total = inst.total_work();
                let last2 = self.type2.last().cloned().unwrap_or_else(Rational::zero);
                let last3 = self.type3_time(self.type3_count.saturating_sub(1));
                let via2 = (&total - &last2) / &self.p06;
                let via3 = &total - &last3;
                let lower = if via2 < via3 { via2 } else { via3 };
                (lower, Rational::integer(2) * &self.p02)
            }
        };
        let certificate = single_machine_trace(inst, &pieces, |id| Subject::Request(id));
        let factor = delay_factor(inst, &certificate)?.overall;
        Ok(AdversaryTranscript {
            kind: "unicast".into(),
            parameter: self.p.clone(),
            branch: match branch {
                UnicastBranch::Type1Unfinished => "type1-unfinished".into(),
                UnicastBranch::Type3 => "type3".into(),
            },
            requests: emitted(inst, |r| {
                if r.id.0 == 0 {
                    "type-1".into()
                } else if r.length == self.p06 && r.arrival < self.type3_start {
                    "type-2".into()
                } else {
                    "type-3".into()
                }
            }),
            claimed_online_lower: lower,
            claimed_certificate_upper: upper,
            certificate_factor: factor,
            certificate,
        })
    }
}

impl RequestSource for UnicastStretchAdversary {
    fn mode(&self) -> Mode {
        Mode::Unicast
    }

    fn pages(&self) -> &PageCatalog {
        &self.pages
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn emit(&mut self, view: &SimView<'_>) -> Vec<RequestSpec> {
        let now = view.now();
        let mut out = Vec::new();
        if !self.emitted_type1 && now.is_zero() {
            self.emitted_type1 = true;
            out.push(RequestSpec {
                name: "t1".into(),
                arrival: now.clone(),
                deadline: self.p.clone(),
                length: self.p.clone(),
                page: None,
            });
        }
        if self.type2.get(self.next_type2) == Some(now) {
            out.push(RequestSpec {
                name: format!("t2-{}", self.next_type2),
                arrival: now.clone(),
                deadline: now + &self.p06,
                length: self.p06.clone(),
                page: None,
            });
            self.next_type2 += 1;
        }
        if self.branch.is_none() && *now == self.type3_start {
            let done = view.finish(RequestId(0)).is_some_and(|f| *f <= self.p116);
            self.branch = Some(if done {
                UnicastBranch::Type3
            } else {
                UnicastBranch::Type1Unfinished
            });
        }
        if self.branch == Some(UnicastBranch::Type3)
            && self.next_type3 < self.type3_count
            && self.type3_time(self.next_type3) == *now
        {
            out.push(RequestSpec {
                name: format!("t3-{}", self.next_type3),
                arrival: now.clone(),
                deadline: now + Rational::one(),
                length: Rational::one(),
                page: None,
            });
            self.next_type3 += 1;
        }
        out
    }

    fn next_arrival(&self, view: &SimView<'_>) -> Option<TimePoint> {
        let now = view.now();
        let mut next: Vec<TimePoint> = Vec::new();
        if let Some(t) = self.type2.get(self.next_type2) {
            next.push(t.clone());
        }
        match self.branch {
            None => next.push(self.type3_start.clone()),
            Some(UnicastBranch::Type3) if self.next_type3 < self.type3_count => next.push(self.type3_time(self.next_type3)),
            _ => {}
        }
        next.into_iter().filter(|t| t > now).min()
    }
}

/// Broadcast construction over `n` unit pages. Pages `1..=n/2` are requested
/// at time 0 with slack `n/2`; until `n/4`, each page in that range is
/// requested again, with slack `n/2`, the moment the online schedule finishes
/// broadcasting it; then page `n/2 + i` is requested with slack one at times
/// `j * n/2 + i - 1` for `j = 1..=n`.
#[derive(Debug, Clone)]
pub struct BroadcastCyclicAdversary {
    n: usize,
    pages: PageCatalog,
    started: bool,
    mirrors: usize,
    next_cyclic: usize,
}

impl BroadcastCyclicAdversary {
    pub fn new(n: usize) -> Result<Self, AdversaryError> {
        if n < 8 || n % 2 != 0 {
            return Err(AdversaryError::Precondition(format!("an even n >= 8, got {}", n)));
        }
        Ok(BroadcastCyclicAdversary {
            n,
            pages: PageCatalog::unit(n),
            started: false,
            mirrors: 0,
            next_cyclic: n / 2,
        })
    }

    fn half(&self) -> Rational {
        Rational::integer((self.n / 2) as i64)
    }

    fn last_cyclic(&self) -> usize {
        self.n * self.n / 2 + self.n / 2 - 1
    }

    pub fn suggested_horizon(&self) -> TimePoint {
        Rational::integer((4 * (self.n * self.n + 4 * self.n)) as i64)
    }

    pub fn transcript(&self, outcome: &SimOutcome) -> Result<AdversaryTranscript, AdversaryError> {
        let inst = &outcome.instance;
        let half = self.n / 2;
        let mut last_mirror: BTreeMap<PageId, TimePoint> = BTreeMap::new();
        for r in &inst.requests {
            let p = r.page.unwrap();
            if p.0 < half && r.arrival.is_positive() {
                last_mirror.insert(p, r.arrival.clone());
            }
        }
        let mut order: Vec<PageId> = (0..half).map(PageId).filter(|p| !last_mirror.contains_key(p)).collect();
        let mut mirrored: Vec<(TimePoint, PageId)> = last_mirror.iter().map(|(p, t)| (t.clone(), *p)).collect();
        mirrored.sort();
        order.extend(mirrored.into_iter().map(|(_, p)| p));
        let mut sends: Vec<(PageId, TimePoint)> = order
            .into_iter()
            .enumerate()
            .map(|(k, p)| (p, Rational::integer(k as i64)))
            .collect();
        for r in &inst.requests {
            if r.page.unwrap().0 >= half {
                sends.push((r.page.unwrap(), r.arrival.clone()));
            }
        }
        let certificate = unit_broadcast_trace(inst, &sends);
        let factor = delay_factor(inst, &certificate)?.overall;
        Ok(AdversaryTranscript {
            kind: "broadcast".into(),
            parameter: Rational::integer(self.n as i64),
            branch: "cyclic".into(),
            requests: emitted(inst, |r| {
                let p = r.page.unwrap().0;
                if p >= half {
                    "cyclic".into()
                } else if r.arrival.is_zero() {
                    "initial".into()
                } else {
                    "mirror".into()
                }
            }),
            claimed_online_lower: Rational::integer((self.n / 4) as i64),
            claimed_certificate_upper: Rational::one(),
            certificate_factor: factor,
            certificate,
        })
    }
}

impl RequestSource for BroadcastCyclicAdversary {
    fn mode(&self) -> Mode {
        Mode::Broadcast
    }

    fn pages(&self) -> &PageCatalog {
        &self.pages
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn emit(&mut self, view: &SimView<'_>) -> Vec<RequestSpec> {
        let now = view.now();
        let half = self.n / 2;
        let mut out = Vec::new();
        if !self.started {
            self.started = true;
            for p in 0..half {
                out.push(RequestSpec {
                    name: format!("p{}-0", p + 1),
                    arrival: now.clone(),
                    deadline: now + self.half(),
                    length: Rational::one(),
                    page: Some(PageId(p)),
                });
            }
        }
        let quarter = Rational::new(self.n as i64, 4);
        if now.is_positive() && *now <= quarter {
            for c in view.completed_now() {
                if let Subject::Page(p) = c.subject {
                    if p.0 < half {
                        self.mirrors += 1;
                        out.push(RequestSpec {
                            name: format!("p{}-m{}", p.0 + 1, self.mirrors),
                            arrival: now.clone(),
                            deadline: now + self.half(),
                            length: Rational::one(),
                            page: Some(p),
                        });
                    }
                }
            }
        }
        if self.next_cyclic <= self.last_cyclic() && Rational::integer(self.next_cyclic as i64) == *now {
            let t = self.next_cyclic;
            let i = t % half + 1;
            let j = t / half;
            out.push(RequestSpec {
                name: format!("p{}-c{}", half + i, j),
                arrival: now.clone(),
                deadline: now + Rational::one(),
                length: Rational::one(),
                page: Some(PageId(half + i - 1)),
            });
            self.next_cyclic += 1;
        }
        out
    }

    fn next_arrival(&self, view: &SimView<'_>) -> Option<TimePoint> {
        if self.next_cyclic > self.last_cyclic() {
            return None;
        }
        let t = Rational::integer(self.next_cyclic as i64);
        (t > *view.now()).then_some(t)
    }
}

fn emitted(inst: &Instance, reason: impl Fn(&crate::model::Request) -> String) -> Vec<EmittedRequest> {
    inst.requests
        .iter()
        .map(|r| EmittedRequest {
            id: r.name.clone(),
            arrival: r.arrival.clone(),
            deadline: r.deadline.clone(),
            length: r.length.clone(),
            page: r.page.map(|p| inst.pages.name(p).to_string()),
            reason: reason(r),
        })
        .collect()
}

/// Speed-one single-machine trace from `(request, start, end)` pieces; a
/// request finishes at the end of its last piece.
fn single_machine_trace(
    inst: &Instance,
    pieces: &[(RequestId, TimePoint, TimePoint)],
    subject: impl Fn(RequestId) -> Subject,
) -> ScheduleTrace {
    let mut trace = ScheduleTrace::new(Rational::one(), 1, inst.len());
    for (id, start, end) in pieces {
        trace.segments.push(Segment {
            machine: 0,
            subject: subject(*id),
            start: start.clone(),
            end: end.clone(),
            work: end - start,
        });
        let f = &mut trace.finish[id.0];
        if f.as_ref().map_or(true, |f| end > f) {
            *f = Some(end.clone());
        }
    }
    trace
        .segments
        .sort_by(|a, b| a.end.cmp(&b.end).then(a.machine.cmp(&b.machine)));
    trace
}

/// Speed-one trace of unit transmissions `(page, start)`, applying the
/// covering rule in start order.
fn unit_broadcast_trace(inst: &Instance, sends: &[(PageId, TimePoint)]) -> ScheduleTrace {
    let mut trace = ScheduleTrace::new(Rational::one(), 1, inst.len());
    let mut sends = sends.to_vec();
    sends.sort_by(|a, b| a.1.cmp(&b.1));
    for (page, start) in sends {
        let end = &start + Rational::one();
        let covered: Vec<usize> = inst
            .requests
            .iter()
            .filter(|r| r.page == Some(page) && r.arrival <= start && trace.finish[r.id.0].is_none())
            .map(|r| r.id.0)
            .collect();
        let Some(&trigger) = covered
            .iter()
            .min_by(|&&a, &&b| (inst.requests[a].slack(), a).cmp(&(inst.requests[b].slack(), b)))
        else {
            continue;
        };
        trace.starts.push(TransmissionStart {
            machine: 0,
            page,
            trigger: RequestId(trigger),
            time: start.clone(),
        });
        trace.segments.push(Segment {
            machine: 0,
            subject: Subject::Page(page),
            start,
            end: end.clone(),
            work: Rational::one(),
        });
        for i in covered {
            trace.finish[i] = Some(end.clone());
        }
    }
    trace
}

/// Runs the unicast construction with parameter `p` against `scheduler` at
/// speed one.
pub fn run_unicast(p: Rational, scheduler: &mut dyn Scheduler) -> Result<AdversaryRun, AdversaryError> {
    let mut adv = UnicastStretchAdversary::new(p)?;
    let config = EngineConfig::new(Rational::one(), 1).with_horizon(adv.suggested_horizon());
    let outcome = simulate(&mut adv, scheduler, &config)?;
    let transcript = adv.transcript(&outcome)?;
    Ok(AdversaryRun { outcome, transcript })
}

/// Runs the broadcast construction over `n` pages against `scheduler` at
/// speed one.
pub fn run_broadcast(n: usize, scheduler: &mut dyn Scheduler) -> Result<AdversaryRun, AdversaryError> {
    let mut adv = BroadcastCyclicAdversary::new(n)?;
    let config = EngineConfig::new(Rational::one(), 1).with_horizon(adv.suggested_horizon());
    let outcome = simulate(&mut adv, scheduler, &config)?;
    let transcript = adv.transcript(&outcome)?;
    Ok(AdversaryRun { outcome, transcript })
}
