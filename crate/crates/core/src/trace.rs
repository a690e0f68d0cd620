//! Schedule traces, their JSON-lines form and structural validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{Instance, Mode, PageId, RequestId};
use crate::rational::{Duration, Rational, TimePoint};

/// What a machine works on: a unicast request or a broadcast page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Request(RequestId),
    Page(PageId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub machine: usize,
    pub subject: Subject,
    pub start: TimePoint,
    pub end: TimePoint,
    pub work: Duration,
}

/// First instant a broadcast transmission is picked, with the request that
/// triggered it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionStart {
    pub machine: usize,
    pub page: PageId,
    pub trigger: RequestId,
    pub time: TimePoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abandonment {
    pub machine: usize,
    pub page: PageId,
    pub started: TimePoint,
    pub time: TimePoint,
    pub work_lost: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EligibilityMark {
    pub request: RequestId,
    pub time: TimePoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub speed: Rational,
    pub machines: usize,
    /// Ordered by end time, then machine.
    pub segments: Vec<Segment>,
    pub starts: Vec<TransmissionStart>,
    pub abandonments: Vec<Abandonment>,
    /// Finish time per request, indexed by request id.
    pub finish: Vec<Option<TimePoint>>,
    pub eligibility: Vec<EligibilityMark>,
}

impl ScheduleTrace {
    pub fn new(speed: Rational, machines: usize, requests: usize) -> Self {
        ScheduleTrace {
            speed,
            machines,
            segments: Vec::new(),
            starts: Vec::new(),
            abandonments: Vec::new(),
            finish: vec![None; requests],
            eligibility: Vec::new(),
        }
    }

    pub fn finish(&self, id: RequestId) -> Option<&TimePoint> {
        self.finish.get(id.0).and_then(Option::as_ref)
    }

    pub fn unsatisfied(&self) -> Vec<RequestId> {
        self.finish
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_none())
            .map(|(i, _)| RequestId(i))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.finish.iter().all(Option::is_some)
    }

    /// Latest segment end, or zero.
    pub fn makespan(&self) -> TimePoint {
        Rational::max_of(self.segments.iter().map(|s| &s.end)).unwrap_or_else(Rational::zero)
    }

    /// Work done on `machine` within `[from, to]`.
    pub fn work_in(&self, machine: usize, from: &TimePoint, to: &TimePoint) -> Duration {
        self.segments
            .iter()
            .filter(|s| s.machine == machine)
            .map(|s| {
                let lo = Rational::max_of([&s.start, from]).unwrap();
                let hi = Rational::min_of([&s.end, to]).unwrap();
                if hi > lo {
                    &self.speed * (hi - lo)
                } else {
                    Rational::zero()
                }
            })
            .sum()
    }

    /// Serializes every event as one JSON object per line. Events are ordered
    /// by time, then by kind (completions before arrivals), then by record
    /// order.
    pub fn to_jsonl(&self, instance: &Instance) -> String {
        let mut events: Vec<(TimePoint, u8, usize, Value)> = Vec::new();
        let mut seq = 0usize;
        let mut push = |time: &TimePoint, kind: EventKind, machine: Option<usize>, subject: String, work: Option<&Rational>| {
            let mut obj = json!({
                "time-num": time.numer().to_string(),
                "time-den": time.denom().to_string(),
                "kind": kind.as_str(),
                "subject": subject,
            });
            if let Some(m) = machine {
                obj["machine"] = json!(m);
            }
            if let Some(w) = work {
                obj["work"] = json!(w.to_string());
            }
            events.push((time.clone(), kind.order(), seq, obj));
            seq += 1;
        };
        let subject = |s: &Subject| subject_label(instance, s);
        for r in &instance.requests {
            push(&r.arrival, EventKind::Arrival, None, format!("request:{}", r.name), None);
        }
        for seg in &self.segments {
            push(&seg.start, EventKind::SegmentStart, Some(seg.machine), subject(&seg.subject), None);
            push(&seg.end, EventKind::SegmentEnd, Some(seg.machine), subject(&seg.subject), Some(&seg.work));
        }
        for st in &self.starts {
            push(
                &st.time,
                EventKind::Start,
                Some(st.machine),
                format!("request:{}", instance.request(st.trigger).name),
                None,
            );
        }
        for ab in &self.abandonments {
            push(
                &ab.time,
                EventKind::Abandon,
                Some(ab.machine),
                format!("page:{}", instance.pages.name(ab.page)),
                Some(&ab.work_lost),
            );
        }
        for mark in &self.eligibility {
            push(
                &mark.time,
                EventKind::Eligible,
                None,
                format!("request:{}", instance.request(mark.request).name),
                None,
            );
        }
        for (i, f) in self.finish.iter().enumerate() {
            if let Some(f) = f {
                push(f, EventKind::Satisfy, None, format!("request:{}", instance.requests[i].name), None);
            }
        }
        events.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut out = String::new();
        for (_, _, _, obj) in events {
            out.push_str(&obj.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the JSON-lines form back against `instance`. The speed is
    /// inferred from the first segment (one when there are none).
    pub fn from_jsonl(text: &str, instance: &Instance) -> Result<ScheduleTrace, TraceParseError> {
        let mut trace = ScheduleTrace::new(Rational::one(), instance.machines, instance.len());
        let mut open: BTreeMap<(usize, Subject), TimePoint> = BTreeMap::new();
        let mut last_start: BTreeMap<(usize, PageId), TimePoint> = BTreeMap::new();
        let mut speed: Option<Rational> = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| TraceParseError { line: line_no, message: msg };
            let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let time = parse_time(&v).map_err(err)?;
            let kind = v
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| err("missing kind".into()))?;
            let subject_text = v
                .get("subject")
                .and_then(Value::as_str)
                .ok_or_else(|| err("missing subject".into()))?;
            let subject = parse_subject(instance, subject_text).map_err(err)?;
            let machine = v.get("machine").and_then(Value::as_u64).map(|m| m as usize);
            let work = match v.get("work") {
                Some(Value::String(s)) => Some(s.parse::<Rational>().map_err(|e| err(e.to_string()))?),
                Some(_) => return Err(err("work must be a rational string".into())),
                None => None,
            };
            let need_machine = || machine.ok_or_else(|| err(format!("{} without machine", kind)));
            match kind {
                "arrival" => {}
                "segment-start" => {
                    let m = need_machine()?;
                    if open.insert((m, subject), time).is_some() {
                        return Err(err(format!("{} already has an open segment on machine {}", subject_text, m)));
                    }
                }
                "segment-end" => {
                    let m = need_machine()?;
                    let start = open
                        .remove(&(m, subject))
                        .ok_or_else(|| err(format!("segment end without start for {} on machine {}", subject_text, m)))?;
                    let work = work.ok_or_else(|| err("segment end without work".into()))?;
                    let dur = &time - &start;
                    if speed.is_none() && dur.is_positive() {
                        speed = Some(&work / &dur);
                    }
                    trace.segments.push(Segment {
                        machine: m,
                        subject,
                        start,
                        end: time,
                        work,
                    });
                }
                "start" => {
                    let m = need_machine()?;
                    let Subject::Request(trigger) = subject else {
                        return Err(err("start subject must be a request".into()));
                    };
                    let page = instance
                        .request(trigger)
                        .page
                        .ok_or_else(|| err("start trigger has no page".into()))?;
                    last_start.insert((m, page), time.clone());
                    trace.starts.push(TransmissionStart {
                        machine: m,
                        page,
                        trigger,
                        time,
                    });
                }
                "abandon" => {
                    let m = need_machine()?;
                    let Subject::Page(page) = subject else {
                        return Err(err("abandon subject must be a page".into()));
                    };
                    let started = last_start
                        .get(&(m, page))
                        .cloned()
                        .ok_or_else(|| err("abandon without a start".into()))?;
                    trace.abandonments.push(Abandonment {
                        machine: m,
                        page,
                        started,
                        time,
                        work_lost: work.unwrap_or_else(Rational::zero),
                    });
                }
                "satisfy" => {
                    let Subject::Request(r) = subject else {
                        return Err(err("satisfy subject must be a request".into()));
                    };
                    if trace.finish[r.0].is_some() {
                        return Err(err(format!("request {} satisfied twice", instance.request(r).name)));
                    }
                    trace.finish[r.0] = Some(time);
                }
                "eligible" => {
                    let Subject::Request(r) = subject else {
                        return Err(err("eligible subject must be a request".into()));
                    };
                    trace.eligibility.push(EligibilityMark { request: r, time });
                }
                other => return Err(err(format!("unknown kind `{}`", other))),
            }
        }
        if let Some(((m, _), _)) = open.into_iter().next() {
            return Err(TraceParseError {
                line: text.lines().count(),
                message: format!("unterminated segment on machine {}", m),
            });
        }
        if let Some(s) = speed {
            trace.speed = s;
        }
        trace.machines = trace
            .segments
            .iter()
            .map(|s| s.machine + 1)
            .chain(std::iter::once(instance.machines))
            .max()
            .unwrap_or(1);
        trace
            .segments
            .sort_by(|a, b| a.end.cmp(&b.end).then(a.machine.cmp(&b.machine)));
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    SegmentEnd,
    Satisfy,
    Abandon,
    Arrival,
    Eligible,
    Start,
    SegmentStart,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::SegmentEnd => "segment-end",
            EventKind::Satisfy => "satisfy",
            EventKind::Abandon => "abandon",
            EventKind::Arrival => "arrival",
            EventKind::Eligible => "eligible",
            EventKind::Start => "start",
            EventKind::SegmentStart => "segment-start",
        }
    }

    fn order(self) -> u8 {
        self as u8
    }
}

fn subject_label(instance: &Instance, subject: &Subject) -> String {
    match subject {
        Subject::Request(r) => format!("request:{}", instance.request(*r).name),
        Subject::Page(p) => format!("page:{}", instance.pages.name(*p)),
    }
}

fn parse_time(v: &Value) -> Result<TimePoint, String> {
    let part = |key: &str| -> Result<String, String> {
        match v.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(format!("missing {}", key)),
        }
    };
    let text = format!("{}/{}", part("time-num")?, part("time-den")?);
    text.parse::<Rational>().map_err(|e| e.to_string())
}

fn parse_subject(instance: &Instance, text: &str) -> Result<Subject, String> {
    let (kind, name) = text
        .split_once(':')
        .ok_or_else(|| format!("malformed subject `{}`", text))?;
    match kind {
        "request" => instance
            .find(name)
            .map(Subject::Request)
            .ok_or_else(|| format!("unknown request `{}`", name)),
        "page" => instance
            .pages
            .find(name)
            .map(Subject::Page)
            .ok_or_else(|| format!("unknown page `{}`", name)),
        _ => Err(format!("malformed subject `{}`", text)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum TraceViolation {
    Overlap { machine: usize, at: TimePoint },
    WorkMismatch { machine: usize, start: TimePoint },
    EmptySegment { machine: usize, start: TimePoint },
    UnknownMachine { machine: usize },
    BeforeArrival { request: String, start: TimePoint },
    WorkTotal { request: String, expected: Duration, actual: Duration },
    FinishMismatch { request: String, recorded: TimePoint, expected: TimePoint },
    Unsatisfied { request: String },
    ModeMismatch { expected: String },
    ParallelWork { request: String, at: TimePoint },
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", serde_json::to_string(self).unwrap_or_default())
    }
}

/// Structural checks shared by both modes: machine segments are disjoint,
/// segment work equals speed times duration, and every request is satisfied.
/// Unicast traces are additionally checked for exact work totals, online
/// starts and finish times.
pub fn check_trace(instance: &Instance, trace: &ScheduleTrace) -> Vec<TraceViolation> {
    let mut out = Vec::new();
    let mut per_machine: BTreeMap<usize, Vec<&Segment>> = BTreeMap::new();
    for seg in &trace.segments {
        if seg.machine >= trace.machines {
            out.push(TraceViolation::UnknownMachine { machine: seg.machine });
        }
        if seg.end <= seg.start {
            out.push(TraceViolation::EmptySegment {
                machine: seg.machine,
                start: seg.start.clone(),
            });
        }
        if seg.work != &trace.speed * (&seg.end - &seg.start) {
            out.push(TraceViolation::WorkMismatch {
                machine: seg.machine,
                start: seg.start.clone(),
            });
        }
        let mode_ok = matches!(
            (instance.mode, seg.subject),
            (Mode::Unicast, Subject::Request(_)) | (Mode::Broadcast, Subject::Page(_))
        );
        if !mode_ok {
            out.push(TraceViolation::ModeMismatch {
                expected: instance.mode.to_string(),
            });
            return out;
        }
        per_machine.entry(seg.machine).or_default().push(seg);
    }
    for (machine, mut segs) in per_machine {
        segs.sort_by(|a, b| a.start.cmp(&b.start));
        for w in segs.windows(2) {
            if w[1].start < w[0].end {
                out.push(TraceViolation::Overlap {
                    machine,
                    at: w[1].start.clone(),
                });
            }
        }
    }
    if instance.mode == Mode::Unicast {
        let mut by_request: Vec<Vec<&Segment>> = vec![Vec::new(); instance.len()];
        for seg in &trace.segments {
            if let Subject::Request(r) = seg.subject {
                if r.0 < by_request.len() {
                    by_request[r.0].push(seg);
                }
            }
        }
        for r in &instance.requests {
            let mut segs = by_request[r.id.0].clone();
            segs.sort_by(|a, b| a.start.cmp(&b.start));
            for w in segs.windows(2) {
                if w[1].start < w[0].end {
                    out.push(TraceViolation::ParallelWork {
                        request: r.name.clone(),
                        at: w[1].start.clone(),
                    });
                }
            }
            if let Some(first) = segs.first() {
                if first.start < r.arrival {
                    out.push(TraceViolation::BeforeArrival {
                        request: r.name.clone(),
                        start: first.start.clone(),
                    });
                }
            }
            let done: Rational = segs.iter().map(|s| &s.work).sum();
            match trace.finish(r.id) {
                Some(f) => {
                    if done != r.length {
                        out.push(TraceViolation::WorkTotal {
                            request: r.name.clone(),
                            expected: r.length.clone(),
                            actual: done,
                        });
                    }
                    let last = segs.iter().map(|s| &s.end).max().cloned().unwrap_or_else(|| r.arrival.clone());
                    if *f != last {
                        out.push(TraceViolation::FinishMismatch {
                            request: r.name.clone(),
                            recorded: f.clone(),
                            expected: last,
                        });
                    }
                }
                None => out.push(TraceViolation::Unsatisfied {
                    request: r.name.clone(),
                }),
            }
        }
    } else {
        for r in &instance.requests {
            if trace.finish(r.id).is_none() {
                out.push(TraceViolation::Unsatisfied {
                    request: r.name.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PageCatalog, RequestSpec};

    fn q(n: i64) -> Rational {
        Rational::integer(n)
    }

    fn unicast_two() -> Instance {
        let specs = vec![
            RequestSpec {
                name: "a".into(),
                arrival: q(0),
                deadline: q(4),
                length: q(2),
                page: None,
            },
            RequestSpec {
                name: "b".into(),
                arrival: q(1),
                deadline: q(2),
                length: q(1),
                page: None,
            },
        ];
        Instance::new(Mode::Unicast, 1, PageCatalog::default(), specs)
    }

    fn seg(subject: Subject, s: i64, e: i64) -> Segment {
        Segment {
            machine: 0,
            subject,
            start: q(s),
            end: q(e),
            work: q(e - s),
        }
    }

    fn preempted_trace() -> ScheduleTrace {
        let mut t = ScheduleTrace::new(q(1), 1, 2);
        t.segments = vec![
            seg(Subject::Request(RequestId(0)), 0, 1),
            seg(Subject::Request(RequestId(1)), 1, 2),
            seg(Subject::Request(RequestId(0)), 2, 3),
        ];
        t.finish = vec![Some(q(3)), Some(q(2))];
        t
    }

    #[test]
    fn clean_trace_has_no_violations() {
        assert!(check_trace(&unicast_two(), &preempted_trace()).is_empty());
    }

    #[test]
    fn overlapping_segments_are_reported() {
        let mut t = preempted_trace();
        t.segments[1] = Segment {
            machine: 0,
            subject: Subject::Request(RequestId(1)),
            start: Rational::new(1, 2),
            end: Rational::new(3, 2),
            work: q(1),
        };
        t.finish[1] = Some(Rational::new(3, 2));
        let v = check_trace(&unicast_two(), &t);
        assert!(v.iter().any(|v| matches!(v, TraceViolation::Overlap { .. })), "{:?}", v);
    }

    #[test]
    fn jsonl_round_trip() {
        let inst = unicast_two();
        let t = preempted_trace();
        let text = t.to_jsonl(&inst);
        assert_eq!(text.lines().count(), 2 + 6 + 2);
        let back = ScheduleTrace::from_jsonl(&text, &inst).unwrap();
        let mut expected = t.clone();
        expected
            .segments
            .sort_by(|a, b| a.end.cmp(&b.end).then(a.machine.cmp(&b.machine)));
        assert_eq!(back, expected);
        assert_eq!(back.to_jsonl(&inst), text);
    }

    #[test]
    fn completions_precede_arrivals_at_equal_time() {
        let text = preempted_trace().to_jsonl(&unicast_two());
        let lines: Vec<&str> = text.lines().collect();
        let end = lines.iter().position(|l| l.contains("segment-end")).unwrap();
        let arrival = lines.iter().position(|l| l.contains("arrival") && l.contains("request:b")).unwrap();
        assert!(end < arrival);
    }

    #[test]
    fn parse_error_names_line() {
        let inst = unicast_two();
        let text = "{\"time-num\":\"0\",\"time-den\":\"1\",\"kind\":\"arrival\",\"subject\":\"request:a\"}\nnot json\n";
        let e = ScheduleTrace::from_jsonl(text, &inst).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn work_in_window() {
        let t = preempted_trace();
        assert_eq!(t.work_in(0, &Rational::new(1, 2), &q(5)), Rational::new(5, 2));
    }
}
