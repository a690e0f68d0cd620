//! Offline optimum of the maximum delay factor.
//!
//! Unicast: feasibility of virtual deadlines `a + alpha * S` is monotone in
//! `alpha`, so a binary search over preemptive-EDF (one machine) or max-flow
//! (several machines) probes brackets the optimum. Broadcast: exhaustive
//! branch-and-bound over slotted schedules.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use serde::Serialize;
use thiserror::Error;

use crate::engine::{simulate_instance, Action, Decision, Scheduler, SimView};
use crate::model::{Instance, Mode, PageId, RequestId};
use crate::rational::{Rational, TimePoint};
use crate::trace::{ScheduleTrace, Segment, Subject, TransmissionStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    EdfExact,
    Flow,
    BruteForce,
}

impl std::fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleMethod::EdfExact => "edf-exact",
            OracleMethod::Flow => "flow",
            OracleMethod::BruteForce => "brute-force",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Probe {
    pub alpha: Rational,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleReport {
    /// No schedule achieves a factor below this, except when equal to `alpha_hi`.
    pub alpha_lo: Rational,
    /// The witness achieves this factor or better.
    pub alpha_hi: Rational,
    pub method: OracleMethod,
    pub probes: Vec<Probe>,
    #[serde(skip)]
    pub witness: ScheduleTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle needs a {0} instance")]
    Mode(Mode),
    #[error("search space {pages}^{slots} exceeds 10^7; use a smaller instance")]
    Guard { pages: usize, slots: usize },
    #[error("brute force handles at most 64 requests, got {0}")]
    TooManyRequests(usize),
    #[error("page `{page}` length / speed is not a multiple of the slot {slot}")]
    SlotMismatch { page: String, slot: Rational },
    #[error("no feasible factor found after 64 doublings")]
    Unbounded,
    #[error("feasibility is not monotone: infeasible at {infeasible}, feasible at {feasible}")]
    NonMonotone { feasible: Rational, infeasible: Rational },
    #[error("flow capacities do not fit in 128-bit integers")]
    Overflow,
    #[error("invalid oracle input: {0}")]
    Input(String),
}

/// Preemptive earliest deadline first; ties go to the lower id.
#[derive(Debug, Clone, Default)]
pub struct Edf;

impl Scheduler for Edf {
    fn name(&self) -> String {
        "edf".into()
    }

    fn decide(&mut self, view: &SimView<'_>) -> Decision {
        match view.alive().min_by(|a, b| (&a.deadline, a.id).cmp(&(&b.deadline, b.id))) {
            Some(r) => Decision::single(Action::Process(r.id)),
            None => Decision::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Schedule meeting every virtual deadline, when feasible.
    pub schedule: Option<ScheduleTrace>,
}

fn virtual_deadlines(instance: &Instance, alpha: &Rational) -> Vec<TimePoint> {
    instance
        .requests
        .iter()
        .map(|r| &r.arrival + alpha * r.slack())
        .collect()
}

/// Single-machine feasibility of deadlines `a + alpha * S` at `speed`, by
/// running preemptive EDF.
pub fn edf_feasible(instance: &Instance, alpha: &Rational, speed: &Rational) -> Feasibility {
    let deadlines = virtual_deadlines(instance, alpha);
    let mut virt = instance.clone();
    virt.machines = 1;
    for (r, d) in virt.requests.iter_mut().zip(&deadlines) {
        r.deadline = d.clone();
        if r.slack() < r.length {
            r.deadline = &r.arrival + &r.length;
        }
    }
    let out = simulate_instance(&virt, &mut Edf, speed).expect("EDF on a static instance cannot fail");
    let feasible = out.trace.is_complete()
        && out
            .trace
            .finish
            .iter()
            .zip(&deadlines)
            .all(|(f, d)| f.as_ref().is_some_and(|f| f <= d));
    Feasibility {
        feasible,
        schedule: feasible.then_some(out.trace),
    }
}

/// Feasibility of deadlines `a + alpha * S` on `machines` identical machines
/// at `speed`, with preemption and migration, as a max-flow from jobs to the
/// elementary intervals between release times and deadlines. The witness is
/// built interval by interval with wrap-around packing.
pub fn flow_feasible(instance: &Instance, alpha: &Rational, speed: &Rational, machines: usize) -> Result<Feasibility, OracleError> {
    let n = instance.len();
    let deadlines = virtual_deadlines(instance, alpha);
    let mut points: Vec<TimePoint> = instance
        .requests
        .iter()
        .map(|r| r.arrival.clone())
        .chain(deadlines.iter().cloned())
        .collect();
    points.sort();
    points.dedup();
    let intervals: Vec<(TimePoint, TimePoint)> = points.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    let m = Rational::integer(machines as i64);

    let mut caps: Vec<Rational> = Vec::new();
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let source = 0;
    let sink = 1 + n + intervals.len();
    for (i, r) in instance.requests.iter().enumerate() {
        edges.push((source, 1 + i, caps.len()));
        caps.push(r.length.clone());
    }
    let mut job_edges: Vec<(usize, usize, usize)> = Vec::new();
    for (i, r) in instance.requests.iter().enumerate() {
        for (j, (lo, hi)) in intervals.iter().enumerate() {
            if r.arrival <= *lo && *hi <= deadlines[i] {
                job_edges.push((i, j, edges.len()));
                edges.push((1 + i, 1 + n + j, caps.len()));
                caps.push(speed * (hi - lo));
            }
        }
    }
    for (j, (lo, hi)) in intervals.iter().enumerate() {
        edges.push((1 + n + j, sink, caps.len()));
        caps.push(&m * speed * (hi - lo));
    }
    let scale = caps
        .iter()
        .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
    let to_int = |c: &Rational| -> Result<i128, OracleError> {
        let v = c.numer() * (&scale / c.denom());
        v.to_i128().ok_or(OracleError::Overflow)
    };
    let mut net = Dinic::new(sink + 1);
    let mut handles = Vec::with_capacity(edges.len());
    for &(u, v, ci) in &edges {
        handles.push(net.add_edge(u, v, to_int(&caps[ci])?));
    }
    let total: Rational = instance.total_work();
    let flow = net.max_flow(source, sink);
    let feasible = Rational::from_bigints(BigInt::from(flow), scale.clone()) == total;
    if !feasible {
        return Ok(Feasibility {
            feasible,
            schedule: None,
        });
    }
    let mut amounts: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); intervals.len()];
    for &(i, j, e) in &job_edges {
        let f = net.flow_on(handles[e]);
        if f > 0 {
            amounts[j].push((i, Rational::from_bigints(BigInt::from(f), scale.clone())));
        }
    }
    let mut trace = ScheduleTrace::new(speed.clone(), machines, n);
    for (j, (lo, hi)) in intervals.iter().enumerate() {
        let len = hi - lo;
        let mut machine = 0;
        let mut offset = Rational::zero();
        for (i, work) in &amounts[j] {
            let mut dur = work / speed;
            while dur.is_positive() {
                let room = &len - &offset;
                let take = if dur < room { dur.clone() } else { room };
                let start = lo + &offset;
                let end = &start + &take;
                push_merged(&mut trace, machine, Subject::Request(RequestId(*i)), start, end, speed);
                offset += &take;
                dur -= &take;
                if offset == len {
                    machine += 1;
                    offset = Rational::zero();
                }
            }
        }
    }
    for seg in &trace.segments {
        if let Subject::Request(id) = seg.subject {
            let slot = &mut trace.finish[id.0];
            if slot.as_ref().map_or(true, |f| seg.end > *f) {
                *slot = Some(seg.end.clone());
            }
        }
    }
    trace
        .segments
        .sort_by(|a, b| a.end.cmp(&b.end).then(a.machine.cmp(&b.machine)));
    Ok(Feasibility {
        feasible,
        schedule: Some(trace),
    })
}

fn push_merged(trace: &mut ScheduleTrace, machine: usize, subject: Subject, start: TimePoint, end: TimePoint, speed: &Rational) {
    if let Some(prev) = trace
        .segments
        .iter_mut()
        .rev()
        .find(|s| s.machine == machine)
    {
        if prev.subject == subject && prev.end == start {
            prev.end = end;
            prev.work = speed * (&prev.end - &prev.start);
            return;
        }
    }
    trace.segments.push(Segment {
        machine,
        subject,
        work: speed * (&end - &start),
        start,
        end,
    });
}

struct Dinic {
    graph: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i128>,
    original: Vec<i128>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic {
            graph: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            original: Vec::new(),
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: i128) -> usize {
        let e = self.to.len();
        self.graph[u].push(e);
        self.to.push(v);
        self.cap.push(c);
        self.original.push(c);
        self.graph[v].push(e + 1);
        self.to.push(u);
        self.cap.push(0);
        self.original.push(0);
        e
    }

    fn flow_on(&self, e: usize) -> i128 {
        self.original[e] - self.cap[e]
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.graph[u] {
                let v = self.to[e];
                if self.cap[e] > 0 && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, f: i128) -> i128 {
        if u == t {
            return f;
        }
        while self.iter[u] < self.graph[u].len() {
            let e = self.graph[u][self.iter[u]];
            let v = self.to[e];
            if self.cap[e] > 0 && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, t, f.min(self.cap[e]));
                if d > 0 {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i128 {
        let mut flow = 0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return flow;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, i128::MAX);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
    }
}

pub fn default_tolerance() -> Rational {
    Rational::new(1, 1024)
}

/// Brackets the optimal unicast factor to within `tolerance`. Probes use EDF
/// on one machine and max-flow otherwise.
pub fn optimal_alpha_unicast(
    instance: &Instance,
    speed: &Rational,
    machines: usize,
    tolerance: &Rational,
) -> Result<OracleReport, OracleError> {
    if instance.mode != Mode::Unicast {
        return Err(OracleError::Mode(Mode::Unicast));
    }
    if !tolerance.is_positive() || !speed.is_positive() || machines == 0 {
        return Err(OracleError::Input("tolerance, speed and machines must be positive".into()));
    }
    let method = if machines == 1 {
        OracleMethod::EdfExact
    } else {
        OracleMethod::Flow
    };
    let mut probes = Vec::new();
    let mut probe = |alpha: &Rational| -> Result<Option<ScheduleTrace>, OracleError> {
        let res = if machines == 1 {
            edf_feasible(instance, alpha, speed)
        } else {
            flow_feasible(instance, alpha, speed, machines)?
        };
        probes.push(Probe {
            alpha: alpha.clone(),
            feasible: res.feasible,
        });
        Ok(res.schedule)
    };
    let one = Rational::one();
    let (lo, hi, witness) = if let Some(w) = probe(&one)? {
        (one.clone(), one.clone(), w)
    } else {
        let t_end = instance.last_arrival() + instance.total_work() / speed;
        let mut hi = Rational::max_of(
            instance
                .requests
                .iter()
                .map(|r| (&t_end - &r.arrival) / r.slack())
                .collect::<Vec<_>>()
                .iter(),
        )
        .unwrap_or_else(Rational::one);
        if hi <= one {
            hi = Rational::integer(2);
        }
        let mut witness = probe(&hi)?;
        let mut doublings = 0;
        while witness.is_none() {
            doublings += 1;
            if doublings > 64 {
                return Err(OracleError::Unbounded);
            }
            hi = hi * Rational::integer(2);
            witness = probe(&hi)?;
        }
        let mut witness = witness.unwrap();
        let mut lo = one.clone();
        while &hi - &lo > *tolerance {
            let mid = (&lo + &hi) / Rational::integer(2);
            match probe(&mid)? {
                Some(w) => {
                    hi = mid;
                    witness = w;
                }
                None => lo = mid,
            }
        }
        (lo, hi, witness)
    };
    check_monotone(&probes)?;
    Ok(OracleReport {
        alpha_lo: lo,
        alpha_hi: hi,
        method,
        probes,
        witness,
    })
}

fn check_monotone(probes: &[Probe]) -> Result<(), OracleError> {
    let max_infeasible = probes.iter().filter(|p| !p.feasible).map(|p| &p.alpha).max();
    let min_feasible = probes.iter().filter(|p| p.feasible).map(|p| &p.alpha).min();
    if let (Some(i), Some(f)) = (max_infeasible, min_feasible) {
        if i >= f {
            return Err(OracleError::NonMonotone {
                feasible: f.clone(),
                infeasible: i.clone(),
            });
        }
    }
    Ok(())
}

/// Default slot: the rational gcd of all arrivals and of `length / speed` for
/// every requested page, but never below 1/4.
pub fn default_slot(instance: &Instance, speed: &Rational) -> Rational {
    let mut g = Rational::zero();
    for r in &instance.requests {
        g = g.gcd(&r.arrival);
        g = g.gcd(&(&r.length / speed));
    }
    let floor = Rational::new(1, 4);
    if g < floor {
        floor
    } else {
        g
    }
}

const GUARD: u128 = 10_000_000;

/// Exact optimum over schedules that make one decision per slot: idle,
/// continue a page's started transmission, or start a page. Transmissions may
/// be paused for other pages and resumed later.
pub fn optimal_alpha_broadcast_bruteforce(
    instance: &Instance,
    speed: &Rational,
    slot: Option<&Rational>,
) -> Result<OracleReport, OracleError> {
    if instance.mode != Mode::Broadcast {
        return Err(OracleError::Mode(Mode::Broadcast));
    }
    let n = instance.len();
    if n > 64 {
        return Err(OracleError::TooManyRequests(n));
    }
    let slot = slot.cloned().unwrap_or_else(|| default_slot(instance, speed));
    if !slot.is_positive() {
        return Err(OracleError::Input("slot must be positive".into()));
    }
    let mut pages: Vec<PageId> = instance.requests.iter().filter_map(|r| r.page).collect();
    pages.sort();
    pages.dedup();
    let page_index = |p: PageId| pages.iter().position(|&x| x == p).unwrap();
    let mut dur = Vec::with_capacity(pages.len());
    for &p in &pages {
        let d = instance.pages.length(p) / speed / &slot;
        if !d.is_integer() {
            return Err(OracleError::SlotMismatch {
                page: instance.pages.name(p).to_string(),
                slot,
            });
        }
        dur.push(d.floor().to_usize().unwrap_or(usize::MAX));
    }
    let arrival_slot: Vec<usize> = instance
        .requests
        .iter()
        .map(|r| (&r.arrival / &slot).ceil().to_usize().unwrap_or(usize::MAX))
        .collect();
    let last = arrival_slot.iter().copied().max().unwrap_or(0);
    let horizon = last + dur.iter().copied().max().unwrap_or(0) + dur.iter().sum::<usize>();
    if !pages.is_empty() {
        let space = (pages.len() as u128).checked_pow(horizon as u32);
        if space.map_or(true, |s| s > GUARD) {
            return Err(OracleError::Guard {
                pages: pages.len(),
                slots: horizon,
            });
        }
    }
    // Factor of request i completing at slot boundary e, floored at one, as
    // a dense rank.
    let mut values: Vec<Rational> = Vec::new();
    let factor = |i: usize, e: usize| {
        let r = &instance.requests[i];
        let f = (&slot * Rational::integer(e as i64) - &r.arrival) / r.slack();
        if f < Rational::one() {
            Rational::one()
        } else {
            f
        }
    };
    for i in 0..n {
        for e in 0..=horizon {
            values.push(factor(i, e));
        }
    }
    values.push(Rational::one());
    values.sort();
    values.dedup();
    let rank: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            (0..=horizon)
                .map(|e| values.binary_search(&factor(i, e)).unwrap() as u32)
                .collect()
        })
        .collect();
    let search = Search {
        n,
        horizon,
        dur,
        req_page: instance.requests.iter().map(|r| page_index(r.page.unwrap())).collect(),
        arrival_slot,
        slack_order: {
            let mut order: Vec<usize> = (0..pages.len()).collect();
            let min_slack = |p: usize| {
                instance
                    .requests
                    .iter()
                    .filter(|r| page_index(r.page.unwrap()) == p)
                    .map(|r| r.slack())
                    .min()
                    .unwrap()
            };
            order.sort_by_key(|&p| min_slack(p));
            order
        },
        rank,
    };
    let (best, path) = search.run();
    let witness = build_witness(instance, &pages, &search, &path, &slot, speed);
    let alpha = values[best as usize].clone();
    Ok(OracleReport {
        alpha_lo: alpha.clone(),
        alpha_hi: alpha,
        method: OracleMethod::BruteForce,
        probes: Vec::new(),
        witness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Choice {
    Idle,
    Continue(usize),
    Start(usize),
}

/// Per page: `(start slot, slots done)` of its active transmission.
type Active = Vec<Option<(u16, u16)>>;

struct Search {
    n: usize,
    horizon: usize,
    dur: Vec<usize>,
    req_page: Vec<usize>,
    arrival_slot: Vec<usize>,
    slack_order: Vec<usize>,
    rank: Vec<Vec<u32>>,
}

struct Frame {
    best: u32,
    best_path: Vec<Choice>,
    path: Vec<Choice>,
    seen: HashMap<(usize, u64, Active), u32>,
}

impl Search {
    fn run(&self) -> (u32, Vec<Choice>) {
        let mut frame = Frame {
            best: u32::MAX,
            best_path: Vec::new(),
            path: Vec::new(),
            seen: HashMap::new(),
        };
        let active: Active = vec![None; self.dur.len()];
        if self.n == 0 {
            return (0, Vec::new());
        }
        self.dfs(0, 0, &active, 0, &mut frame);
        (frame.best, frame.best_path)
    }

    fn lower_bound(&self, k: usize, sat: u64, active: &Active) -> u32 {
        let mut lb = 0;
        for i in 0..self.n {
            if sat >> i & 1 == 1 {
                continue;
            }
            let p = self.req_page[i];
            let a = self.arrival_slot[i];
            let e = match active[p] {
                Some((start, done)) if a <= start as usize => k + self.dur[p] - done as usize,
                Some((_, done)) => a.max(k + self.dur[p] - done as usize) + self.dur[p],
                None => a.max(k) + self.dur[p],
            };
            let e = e.min(self.horizon);
            lb = lb.max(self.rank[i][e]);
        }
        lb
    }

    fn dfs(&self, k: usize, sat: u64, active: &Active, cur: u32, frame: &mut Frame) {
        let all = if self.n == 64 { u64::MAX } else { (1u64 << self.n) - 1 };
        if sat == all {
            if cur < frame.best {
                frame.best = cur;
                frame.best_path = frame.path.clone();
            }
            return;
        }
        if frame.best == 0 || k >= self.horizon {
            return;
        }
        if cur.max(self.lower_bound(k, sat, active)) >= frame.best {
            return;
        }
        let key = (k, sat, active.clone());
        if let Some(&seen) = frame.seen.get(&key) {
            if seen <= cur {
                return;
            }
        }
        frame.seen.insert(key, cur);

        let mut choices = Vec::new();
        for &p in &self.slack_order {
            if active[p].is_some() {
                choices.push(Choice::Continue(p));
            }
        }
        for &p in &self.slack_order {
            if active[p].is_none()
                && (0..self.n).any(|i| sat >> i & 1 == 0 && self.req_page[i] == p && self.arrival_slot[i] <= k)
            {
                choices.push(Choice::Start(p));
            }
        }
        if self.arrival_slot.iter().any(|&a| a > k) {
            choices.push(Choice::Idle);
        }
        for choice in choices {
            let mut next = active.clone();
            let mut sat2 = sat;
            let mut cur2 = cur;
            let p = match choice {
                Choice::Idle => None,
                Choice::Continue(p) => {
                    let (s, d) = next[p].unwrap();
                    next[p] = Some((s, d + 1));
                    Some(p)
                }
                Choice::Start(p) => {
                    next[p] = Some((k as u16, 1));
                    Some(p)
                }
            };
            if let Some(p) = p {
                let (s, d) = next[p].unwrap();
                if d as usize == self.dur[p] {
                    next[p] = None;
                    for i in 0..self.n {
                        if sat2 >> i & 1 == 0 && self.req_page[i] == p && self.arrival_slot[i] <= s as usize {
                            sat2 |= 1 << i;
                            cur2 = cur2.max(self.rank[i][k + 1]);
                        }
                    }
                }
            }
            frame.path.push(choice);
            self.dfs(k + 1, sat2, &next, cur2, frame);
            frame.path.pop();
        }
    }
}

fn build_witness(instance: &Instance, pages: &[PageId], search: &Search, path: &[Choice], slot: &Rational, speed: &Rational) -> ScheduleTrace {
    let mut trace = ScheduleTrace::new(speed.clone(), 1, instance.len());
    let mut active: Active = vec![None; pages.len()];
    let mut sat = 0u64;
    let at = |k: usize| slot * Rational::integer(k as i64);
    for (k, choice) in path.iter().enumerate() {
        let p = match *choice {
            Choice::Idle => continue,
            Choice::Continue(p) => {
                let (s, d) = active[p].unwrap();
                active[p] = Some((s, d + 1));
                p
            }
            Choice::Start(p) => {
                active[p] = Some((k as u16, 1));
                let trigger = (0..instance.len())
                    .filter(|&i| sat >> i & 1 == 0 && search.req_page[i] == p && search.arrival_slot[i] <= k)
                    .min_by_key(|&i| (instance.requests[i].slack(), i))
                    .expect("starts cover a request");
                trace.starts.push(TransmissionStart {
                    machine: 0,
                    page: pages[p],
                    trigger: RequestId(trigger),
                    time: at(k),
                });
                p
            }
        };
        let fresh = matches!(choice, Choice::Start(_));
        let subject = Subject::Page(pages[p]);
        let (start, end) = (at(k), at(k + 1));
        match trace.segments.last_mut() {
            Some(prev) if !fresh && prev.subject == subject && prev.end == start => {
                prev.end = end;
                prev.work = speed * (&prev.end - &prev.start);
            }
            _ => trace.segments.push(Segment {
                machine: 0,
                subject,
                work: speed * (&end - &start),
                start,
                end,
            }),
        }
        let (s, d) = active[p].unwrap();
        if d as usize == search.dur[p] {
            active[p] = None;
            for i in 0..instance.len() {
                if sat >> i & 1 == 0 && search.req_page[i] == p && search.arrival_slot[i] <= s as usize {
                    sat |= 1 << i;
                    trace.finish[i] = Some(at(k + 1));
                }
            }
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::delay_factor;
    use crate::model::{Page, PageCatalog, RequestSpec};

    fn q(n: i64) -> Rational {
        Rational::integer(n)
    }

    fn unicast(machines: usize, reqs: &[(i64, i64, i64)]) -> Instance {
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
        Instance::new(Mode::Unicast, machines, PageCatalog::default(), specs)
    }

    fn bcast(pages: PageCatalog, reqs: &[(usize, i64, i64)]) -> Instance {
        let specs = reqs
            .iter()
            .enumerate()
            .map(|(i, &(p, a, d))| RequestSpec {
                name: format!("r{}", i),
                arrival: q(a),
                deadline: q(d),
                length: q(1),
                page: Some(PageId(p)),
            })
            .collect();
        Instance::new(Mode::Broadcast, 1, pages, specs)
    }

    #[test]
    fn edf_single_request() {
        let i = unicast(1, &[(0, 1, 1)]);
        let f = edf_feasible(&i, &q(1), &q(1));
        assert!(f.feasible);
        assert_eq!(f.schedule.unwrap().finish[0], Some(q(1)));
    }

    #[test]
    fn edf_two_units_need_double() {
        let i = unicast(1, &[(0, 1, 1), (0, 1, 1)]);
        assert!(!edf_feasible(&i, &q(1), &q(1)).feasible);
        let f = edf_feasible(&i, &q(2), &q(1));
        assert!(f.feasible);
        assert_eq!(f.schedule.unwrap().finish, vec![Some(q(1)), Some(q(2))]);
    }

    #[test]
    fn flow_two_machines() {
        let two = unicast(2, &[(0, 1, 1), (0, 1, 1)]);
        assert!(flow_feasible(&two, &q(1), &q(1), 2).unwrap().feasible);
        let three = unicast(2, &[(0, 1, 1), (0, 1, 1), (0, 1, 1)]);
        assert!(!flow_feasible(&three, &q(1), &q(1), 2).unwrap().feasible);
        let f = flow_feasible(&three, &q(2), &q(1), 2).unwrap();
        assert!(f.feasible);
        let w = f.schedule.unwrap();
        assert!(crate::trace::check_trace(&three, &w).is_empty());
        assert!(delay_factor(&three, &w).unwrap().overall <= q(2));
    }

    #[test]
    fn flow_matches_edf_on_one_machine() {
        let i = unicast(1, &[(0, 6, 2), (1, 3, 1), (2, 4, 2), (2, 9, 1)]);
        for k in 2..16 {
            let alpha = Rational::new(k, 4);
            assert_eq!(
                edf_feasible(&i, &alpha, &q(1)).feasible,
                flow_feasible(&i, &alpha, &q(1), 1).unwrap().feasible,
                "alpha {}",
                alpha
            );
        }
    }

    #[test]
    fn on_time_instance_has_alpha_one() {
        let i = unicast(1, &[(0, 5, 1)]);
        let rep = optimal_alpha_unicast(&i, &q(1), 1, &default_tolerance()).unwrap();
        assert_eq!(rep.alpha_lo, q(1));
        assert_eq!(rep.alpha_hi, q(1));
        assert_eq!(delay_factor(&i, &rep.witness).unwrap().overall, q(1));
    }

    #[test]
    fn forced_pair_brackets_two() {
        let i = unicast(1, &[(0, 1, 1), (0, 1, 1)]);
        let tol = default_tolerance();
        let rep = optimal_alpha_unicast(&i, &q(1), 1, &tol).unwrap();
        assert!(rep.alpha_lo < q(2) && q(2) <= rep.alpha_hi);
        assert!(&rep.alpha_hi - &rep.alpha_lo <= tol);
        assert!(delay_factor(&i, &rep.witness).unwrap().overall <= rep.alpha_hi);
    }

    #[test]
    fn ssf_example_is_optimal_at_one() {
        let i = unicast(1, &[(0, 4, 2), (1, 2, 1)]);
        let rep = optimal_alpha_unicast(&i, &q(1), 1, &default_tolerance()).unwrap();
        assert_eq!(rep.alpha_hi, q(1));
    }

    #[test]
    fn broadcast_single_request() {
        let i = bcast(PageCatalog::unit(1), &[(0, 0, 1)]);
        let rep = optimal_alpha_broadcast_bruteforce(&i, &q(1), None).unwrap();
        assert_eq!(rep.alpha_hi, q(1));
        assert_eq!(rep.witness.segments[0].start, q(0));
        assert_eq!(rep.witness.segments[0].end, q(1));
    }

    #[test]
    fn broadcast_merge() {
        let i = bcast(PageCatalog::unit(1), &[(0, 0, 2), (0, 1, 3)]);
        let rep = optimal_alpha_broadcast_bruteforce(&i, &q(1), None).unwrap();
        assert_eq!(rep.alpha_hi, q(1));
        let f = delay_factor(&i, &rep.witness).unwrap();
        assert_eq!(f.overall, q(1));
    }

    #[test]
    fn broadcast_contention() {
        // Two pages both due at 1: one must be late by a factor of two.
        let i = bcast(PageCatalog::unit(2), &[(0, 0, 1), (1, 0, 1)]);
        let rep = optimal_alpha_broadcast_bruteforce(&i, &q(1), None).unwrap();
        assert_eq!(rep.alpha_hi, q(2));
        let (_, v) = crate::broadcast::replay_transmissions(&i, &rep.witness);
        assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn broadcast_guard() {
        let pages = PageCatalog::unit(8);
        let reqs: Vec<(usize, i64, i64)> = (0..8).map(|p| (p, 0, 1)).collect();
        let i = bcast(pages, &reqs);
        assert!(matches!(
            optimal_alpha_broadcast_bruteforce(&i, &q(1), None),
            Err(OracleError::Guard { .. })
        ));
    }

    #[test]
    fn slot_mismatch() {
        let pages = PageCatalog::new(vec![Page {
            id: "A".into(),
            length: Rational::new(1, 3),
        }]);
        let i = bcast(pages, &[(0, 0, 1)]);
        assert!(matches!(
            optimal_alpha_broadcast_bruteforce(&i, &q(1), Some(&Rational::new(1, 4))),
            Err(OracleError::SlotMismatch { .. })
        ));
    }
}
