//! Broadcast schedulers and trace checks.
//!
//! A transmission of page `p` that starts at `t1` satisfies, on completion,
//! every outstanding request for `p` that arrived at or before `t1`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{is_eligible, next_eligibility_crossing, Action, Decision, Scheduler, SimView};
use crate::metrics::{current_alpha, delay_factor};
use crate::model::{Instance, PageId, Request, RequestId};
use crate::rational::{Duration, Rational, TimePoint};
use crate::trace::{ScheduleTrace, Subject};

/// Shortest slack first with waiting: a request may trigger a transmission
/// only after it has waited `c * alpha_t * S`, where `alpha_t` is the running
/// delay factor including the ages of alive requests. Once met, eligibility
/// is kept.
///
/// Unit mode never preempts. Varying mode reconsiders at every event: the
/// started transmissions and the eligible requests compete by slack;
/// switching pages keeps the paused transmission's progress, while a new
/// request for a page with an active transmission restarts that page.
#[derive(Debug, Clone)]
pub struct SsfW {
    c: Rational,
    varying: bool,
    eligible: Vec<bool>,
}

impl SsfW {
    pub fn unit(c: Rational) -> Self {
        SsfW {
            c,
            varying: false,
            eligible: Vec::new(),
        }
    }

    pub fn varying(c: Rational) -> Self {
        SsfW {
            c,
            varying: true,
            eligible: Vec::new(),
        }
    }

    pub fn c(&self) -> &Rational {
        &self.c
    }

    fn refresh(&mut self, view: &SimView<'_>) -> (Vec<RequestId>, Option<TimePoint>) {
        self.eligible.resize(view.requests().len(), false);
        let now = view.now();
        let alpha = view.alpha();
        let mut marks = Vec::new();
        for r in view.alive() {
            if !self.eligible[r.id.0] && now - &r.arrival >= &self.c * &alpha * r.slack() {
                self.eligible[r.id.0] = true;
                marks.push(r.id);
            }
        }
        let alive: Vec<(TimePoint, Duration)> = view.alive().map(|r| (r.arrival.clone(), r.slack())).collect();
        let pending: Vec<(TimePoint, Duration)> = view
            .alive()
            .filter(|r| !self.eligible[r.id.0])
            .map(|r| (r.arrival.clone(), r.slack()))
            .collect();
        let wake = if pending.is_empty() {
            None
        } else {
            next_eligibility_crossing(&pending, &alive, view.alpha_finished(), &self.c, now, None)
        };
        (marks, wake)
    }

    fn best_eligible<'a>(&self, view: &SimView<'a>, skip: impl Fn(&Request) -> bool) -> Option<&'a Request> {
        view.alive()
            .filter(|r| self.eligible[r.id.0] && !skip(r))
            .min_by(|a, b| new_key(a).cmp(&new_key(b)))
    }
}

fn new_key(r: &Request) -> (Rational, Rational, PageId, RequestId) {
    (r.slack(), r.arrival.clone(), r.page.expect("broadcast request"), r.id)
}

impl Scheduler for SsfW {
    fn name(&self) -> String {
        if self.varying {
            format!("ssfw-varying(c={})", self.c)
        } else {
            format!("ssfw(c={})", self.c)
        }
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        let (marks, wake_at) = self.refresh(view);
        let action = if self.varying {
            self.decide_varying(view)
        } else {
            self.decide_unit(view)
        };
        Decision {
            actions: vec![action],
            wake_at,
            marks,
        }
    }
}

impl SsfW {
    fn decide_unit(&self, view: &SimView<'_>) -> Action {
        if let Some(Subject::Page(page)) = view.running(0) {
            let trigger = view.transmission(page).expect("running page").trigger;
            return Action::Transmit { page, trigger };
        }
        match self.best_eligible(view, |_| false) {
            Some(r) => Action::Transmit {
                page: r.page.unwrap(),
                trigger: r.id,
            },
            None => Action::Idle,
        }
    }

    fn decide_varying(&self, view: &SimView<'_>) -> Action {
        let started = view
            .transmissions()
            .map(|tr| {
                let key = (view.request(tr.trigger).slack(), 0u8, tr.start.clone(), tr.page, tr.trigger);
                (key, tr.page, tr.trigger)
            })
            .min();
        let triggers: Vec<RequestId> = view.transmissions().map(|tr| tr.trigger).collect();
        let fresh = self
            .best_eligible(view, |r| triggers.contains(&r.id))
            .map(|r| ((r.slack(), 1u8, r.arrival.clone(), r.page.unwrap(), r.id), r.page.unwrap(), r.id));
        match (started, fresh) {
            (None, None) => Action::Idle,
            (Some((_, page, trigger)), None) => Action::Transmit { page, trigger },
            (Some((ks, page, trigger)), Some((kf, _, _))) if ks < kf => Action::Transmit { page, trigger },
            (_, Some((_, page, trigger))) => {
                if view.transmission(page).is_some() {
                    Action::Restart { page, trigger }
                } else {
                    Action::Transmit { page, trigger }
                }
            }
        }
    }
}

/// Earliest unsatisfied request first, without preemption. Ties go to the
/// lower page index.
#[derive(Debug, Clone, Default)]
pub struct Fifo;

impl Scheduler for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        if let Some(Subject::Page(page)) = view.running(0) {
            let trigger = view.transmission(page).expect("running page").trigger;
            return Decision::single(Action::Transmit { page, trigger });
        }
        let pick = view
            .alive()
            .min_by(|a, b| (&a.arrival, a.page, a.id).cmp(&(&b.arrival, b.page, b.id)));
        match pick {
            Some(r) => Decision::single(Action::Transmit {
                page: r.page.expect("broadcast request"),
                trigger: r.id,
            }),
            None => Decision::default(),
        }
    }
}

/// One transmission reconstructed from a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransmissionRecord {
    pub page: PageId,
    pub trigger: RequestId,
    pub machine: usize,
    pub start: TimePoint,
    pub completed: Option<TimePoint>,
    pub abandoned: Option<TimePoint>,
    pub satisfied: Vec<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum BroadcastViolation {
    /// Recorded finish differs from the first completed covering transmission.
    MergeWindow {
        request: String,
        recorded: Option<TimePoint>,
        expected: Option<TimePoint>,
    },
    WorkOverrun { page: String, time: TimePoint },
    UntrackedWork { page: String, time: TimePoint },
    BadTrigger { request: String, time: TimePoint },
    MissingEligibility { request: String },
    Waiting { request: String, eligible_at: TimePoint },
    Idle { from: TimePoint, to: TimePoint },
    SlackOrder { request: String, start: TimePoint },
    FinishOrder { first: String, second: String },
}

/// Rebuilds transmissions from start, abandon and segment records and checks
/// that recorded satisfactions follow the covering rule exactly.
pub fn replay_transmissions(instance: &Instance, trace: &ScheduleTrace) -> (Vec<TransmissionRecord>, Vec<BroadcastViolation>) {
    let mut violations = Vec::new();
    let mut records = Vec::new();
    let mut by_page: BTreeMap<PageId, Vec<usize>> = BTreeMap::new();
    for (i, st) in trace.starts.iter().enumerate() {
        let trig = instance.request(st.trigger);
        if trig.page != Some(st.page) || trig.arrival > st.time {
            violations.push(BroadcastViolation::BadTrigger {
                request: trig.name.clone(),
                time: st.time.clone(),
            });
        }
        by_page.entry(st.page).or_default().push(i);
    }
    for (page, starts) in &by_page {
        let length = instance.pages.length(*page);
        let name = instance.pages.name(*page).to_string();
        let mut segs: Vec<_> = trace
            .segments
            .iter()
            .filter(|s| s.subject == Subject::Page(*page))
            .collect();
        segs.sort_by(|a, b| a.start.cmp(&b.start));
        let mut seg_idx = 0;
        for (n, &si) in starts.iter().enumerate() {
            let st = &trace.starts[si];
            let window_end = starts.get(n + 1).map(|&j| trace.starts[j].time.clone());
            let abandoned = trace
                .abandonments
                .iter()
                .find(|a| a.page == *page && a.started == st.time && window_end.as_ref().map_or(true, |w| a.time <= *w))
                .map(|a| a.time.clone());
            let mut work = Rational::zero();
            let mut completed = None;
            while let Some(seg) = segs.get(seg_idx) {
                if window_end.as_ref().is_some_and(|w| seg.start >= *w) {
                    break;
                }
                if seg.start < st.time {
                    violations.push(BroadcastViolation::UntrackedWork {
                        page: name.clone(),
                        time: seg.start.clone(),
                    });
                }
                seg_idx += 1;
                work += &seg.work;
                if work == *length {
                    completed = Some(seg.end.clone());
                    break;
                }
                if work > *length {
                    violations.push(BroadcastViolation::WorkOverrun {
                        page: name.clone(),
                        time: seg.end.clone(),
                    });
                    break;
                }
            }
            records.push(TransmissionRecord {
                page: *page,
                trigger: st.trigger,
                machine: st.machine,
                start: st.time.clone(),
                completed,
                abandoned,
                satisfied: Vec::new(),
            });
        }
        for seg in &segs[seg_idx..] {
            violations.push(BroadcastViolation::UntrackedWork {
                page: name.clone(),
                time: seg.start.clone(),
            });
        }
    }
    records.sort_by(|a, b| a.start.cmp(&b.start).then(a.page.cmp(&b.page)));
    for r in &instance.requests {
        let page = r.page.expect("broadcast request");
        let mut expected: Option<(usize, TimePoint)> = None;
        for (i, rec) in records.iter().enumerate() {
            if rec.page != page || rec.start < r.arrival {
                continue;
            }
            if let Some(done) = &rec.completed {
                if expected.as_ref().map_or(true, |(_, e)| done < e) {
                    expected = Some((i, done.clone()));
                }
            }
        }
        let recorded = trace.finish(r.id).cloned();
        if let Some((i, _)) = &expected {
            records[*i].satisfied.push(r.id);
        }
        let expected = expected.map(|(_, t)| t);
        if recorded != expected {
            violations.push(BroadcastViolation::MergeWindow {
                request: r.name.clone(),
                recorded,
                expected,
            });
        }
    }
    (records, violations)
}

/// Every transmission trigger was marked eligible no later than its start,
/// the mark met `t - a >= c * alpha_t * S`, and hence `f - a >= c * alpha_t * S`.
pub fn check_waiting_property(instance: &Instance, trace: &ScheduleTrace, c: &Rational) -> Vec<BroadcastViolation> {
    let mut first_mark: BTreeMap<RequestId, &TimePoint> = BTreeMap::new();
    for m in &trace.eligibility {
        first_mark.entry(m.request).or_insert(&m.time);
    }
    let mut out = Vec::new();
    for st in &trace.starts {
        let r = instance.request(st.trigger);
        let Some(te) = first_mark.get(&st.trigger) else {
            out.push(BroadcastViolation::MissingEligibility { request: r.name.clone() });
            continue;
        };
        let need = c * current_alpha(instance, trace, te) * r.slack();
        let waited = *te - &r.arrival;
        let finished_late_enough = trace.finish(r.id).map_or(true, |f| f - &r.arrival >= need);
        if **te > st.time || waited < need || !finished_late_enough {
            out.push(BroadcastViolation::Waiting {
                request: r.name.clone(),
                eligible_at: (*te).clone(),
            });
        }
    }
    out
}

/// For the maximum-factor request `w` (when its factor is at least one),
/// machine 0 is busy throughout `[a_w + c (f_w - a_w), f_w]` and every
/// transmission started in that window has trigger slack at most `S_w`.
pub fn check_busy_property(instance: &Instance, trace: &ScheduleTrace, c: &Rational) -> Vec<BroadcastViolation> {
    let Ok(report) = delay_factor(instance, trace) else {
        return Vec::new();
    };
    let Some(w) = report.witness_id else {
        return Vec::new();
    };
    if *report.factor(w) < Rational::one() {
        return Vec::new();
    }
    let req = instance.request(w);
    let f = trace.finish(w).expect("reported request is finished").clone();
    let from = &req.arrival + c * (&f - &req.arrival);
    let mut out = Vec::new();
    let mut segs: Vec<_> = trace.segments.iter().filter(|s| s.machine == 0).collect();
    segs.sort_by(|a, b| a.start.cmp(&b.start));
    let mut covered = from.clone();
    for s in segs {
        if s.end <= covered {
            continue;
        }
        if s.start > covered && covered < f {
            out.push(BroadcastViolation::Idle {
                from: covered.clone(),
                to: s.start.clone().min(f.clone()),
            });
        }
        covered = s.end.clone();
        if covered >= f {
            break;
        }
    }
    if covered < f {
        out.push(BroadcastViolation::Idle { from: covered, to: f.clone() });
    }
    let s_w = req.slack();
    for st in &trace.starts {
        if st.time >= from && st.time < f && instance.request(st.trigger).slack() > s_w {
            out.push(BroadcastViolation::SlackOrder {
                request: instance.request(st.trigger).name.clone(),
                start: st.time.clone(),
            });
        }
    }
    out
}

/// Among completed transmissions whose triggers have equal slack, the one
/// started first completes first.
pub fn check_start_finish_order(instance: &Instance, records: &[TransmissionRecord]) -> Vec<BroadcastViolation> {
    let done: Vec<&TransmissionRecord> = records.iter().filter(|r| r.completed.is_some()).collect();
    let mut out = Vec::new();
    for (i, x) in done.iter().enumerate() {
        for y in &done[i + 1..] {
            let sx = instance.request(x.trigger).slack();
            let sy = instance.request(y.trigger).slack();
            if sx != sy || x.start == y.start {
                continue;
            }
            let (first, second) = if x.start < y.start { (x, y) } else { (y, x) };
            if first.completed > second.completed {
                out.push(BroadcastViolation::FinishOrder {
                    first: instance.request(first.trigger).name.clone(),
                    second: instance.request(second.trigger).name.clone(),
                });
            }
        }
    }
    out
}

/// Whether `r` would be eligible at `t` under the given running state.
pub fn eligible_now(r: &Request, alive: &[(TimePoint, Duration)], alpha_fin: &Rational, c: &Rational, t: &TimePoint) -> bool {
    is_eligible(&r.arrival, &r.slack(), alive, alpha_fin, c, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate_instance;
    use crate::model::{Mode, Page, PageCatalog, RequestSpec};

    fn q(n: i64) -> Rational {
        Rational::integer(n)
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn spec(name: &str, page: usize, a: Rational, s: Rational) -> RequestSpec {
        RequestSpec {
            name: name.into(),
            deadline: &a + &s,
            arrival: a,
            length: q(1),
            page: Some(PageId(page)),
        }
    }

    fn broadcast(pages: PageCatalog, specs: Vec<RequestSpec>) -> Instance {
        Instance::new(Mode::Broadcast, 1, pages, specs)
    }

    #[test]
    fn eligibility_threshold() {
        let req = Request {
            id: RequestId(0),
            name: "x".into(),
            arrival: q(0),
            deadline: q(4),
            length: q(1),
            page: Some(PageId(0)),
        };
        let c = r(1, 2);
        assert!(eligible_now(&req, &[], &q(1), &c, &q(2)));
        assert!(!eligible_now(&req, &[], &q(1), &c, &q(1)));
        assert!(!eligible_now(&req, &[], &q(2), &c, &q(2)));
    }

    #[test]
    fn unit_picks_min_slack_page() {
        // Both eligible at t=1 with c=1/4 (thresholds 1/2 and 5/4 after
        // waiting); A has the smaller slack.
        let inst = broadcast(
            PageCatalog::unit(2),
            vec![spec("a", 0, q(0), q(2)), spec("b", 1, q(0), q(5))],
        );
        let out = simulate_instance(&inst, &mut SsfW::unit(r(1, 4)), &q(1)).unwrap();
        assert_eq!(out.trace.starts[0].page, PageId(0));
        assert_eq!(out.trace.starts[0].time, r(1, 2));
    }

    #[test]
    fn merge_window_includes_arrivals_before_start() {
        let inst = broadcast(
            PageCatalog::unit(1),
            vec![spec("x", 0, q(0), q(2)), spec("y", 0, r(1, 5), q(2))],
        );
        // c = 1/2: x eligible at 1; y arrived before that start.
        let out = simulate_instance(&inst, &mut SsfW::unit(r(1, 2)), &q(1)).unwrap();
        assert_eq!(out.trace.starts.len(), 1);
        assert_eq!(out.trace.starts[0].time, q(1));
        assert_eq!(out.trace.finish, vec![Some(q(2)), Some(q(2))]);
        let (_, v) = replay_transmissions(&inst, &out.trace);
        assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn arrival_mid_transmission_waits() {
        let inst = broadcast(
            PageCatalog::unit(1),
            vec![spec("x", 0, q(0), q(2)), spec("late", 0, r(3, 2), q(2))],
        );
        let out = simulate_instance(&inst, &mut SsfW::unit(r(1, 2)), &q(1)).unwrap();
        assert_eq!(out.trace.finish[0], Some(q(2)));
        assert!(out.trace.finish[1].clone().unwrap() > q(2));
        assert_eq!(out.trace.starts.len(), 2);
    }

    #[test]
    fn varying_cross_page_preemption_keeps_progress() {
        let pages = PageCatalog::new(vec![
            Page { id: "A".into(), length: q(2) },
            Page { id: "B".into(), length: q(1) },
        ]);
        // A triggers at 0 (c small); B arrives at 1/2 with smaller slack.
        let inst = broadcast(
            pages,
            vec![spec("a", 0, q(0), q(6)), spec("b", 1, r(1, 2), r(1, 100))],
        );
        let out = simulate_instance(&inst, &mut SsfW::varying(r(1, 1000)), &q(1)).unwrap();
        assert!(out.trace.abandonments.is_empty());
        let a_work: Rational = out
            .trace
            .segments
            .iter()
            .filter(|s| s.subject == Subject::Page(PageId(0)))
            .map(|s| s.work.clone())
            .sum();
        assert_eq!(a_work, q(2));
        assert_eq!(out.trace.starts.len(), 2);
        let (_, v) = replay_transmissions(&inst, &out.trace);
        assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn varying_same_page_smaller_slack_restarts() {
        let pages = PageCatalog::new(vec![Page { id: "A".into(), length: q(2) }]);
        let inst = broadcast(
            pages,
            vec![spec("slow", 0, q(0), q(6)), spec("urgent", 0, q(1), q(2))],
        );
        let out = simulate_instance(&inst, &mut SsfW::varying(r(1, 1000)), &q(1)).unwrap();
        assert_eq!(out.trace.abandonments.len(), 1);
        let ab = &out.trace.abandonments[0];
        assert_eq!(ab.started, r(3, 500));
        assert!(ab.work_lost.is_positive());
        assert!(out.trace.is_complete());
        let (recs, v) = replay_transmissions(&inst, &out.trace);
        assert!(v.is_empty(), "{:?}", v);
        assert_eq!(recs.len(), 2);
    }

    #[test]
    fn idle_until_crossing() {
        let inst = broadcast(PageCatalog::unit(1), vec![spec("x", 0, q(0), q(4))]);
        let out = simulate_instance(&inst, &mut SsfW::unit(r(1, 2)), &q(1)).unwrap();
        assert_eq!(out.trace.starts[0].time, q(2));
        assert_eq!(out.trace.eligibility[0].time, q(2));
        assert!(check_waiting_property(&inst, &out.trace, &r(1, 2)).is_empty());
        assert!(check_busy_property(&inst, &out.trace, &r(1, 2)).is_empty());
    }

    #[test]
    fn fifo_order_and_ties() {
        let inst = broadcast(
            PageCatalog::unit(3),
            vec![spec("b", 1, q(0), q(9)), spec("a", 0, q(0), q(9)), spec("c", 2, q(1), q(1))],
        );
        let out = simulate_instance(&inst, &mut Fifo, &q(1)).unwrap();
        let pages: Vec<usize> = out.trace.starts.iter().map(|s| s.page.0).collect();
        assert_eq!(pages, vec![0, 1, 2]);
    }

    #[test]
    fn fifo_empty_is_idle() {
        let inst = broadcast(PageCatalog::unit(1), vec![]);
        let out = simulate_instance(&inst, &mut Fifo, &q(1)).unwrap();
        assert!(out.trace.starts.is_empty());
    }

    #[test]
    fn corrupted_finish_is_caught() {
        let inst = broadcast(PageCatalog::unit(1), vec![spec("x", 0, q(0), q(4))]);
        let mut out = simulate_instance(&inst, &mut Fifo, &q(1)).unwrap();
        out.trace.finish[0] = Some(q(7));
        let (_, v) = replay_transmissions(&inst, &out.trace);
        assert_eq!(v.len(), 1);
    }
}
