//! Requests, pages and problem instances.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{Duration, Rational, TimePoint};

/// Position of a request in its instance, which is sorted by
/// `(arrival, file order)`; comparing ids therefore breaks arrival ties by
/// file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub usize);

/// Position of a page in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub usize);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "page#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unicast,
    Broadcast,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Unicast => f.write_str("unicast"),
            Mode::Broadcast => f.write_str("broadcast"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub name: String,
    pub arrival: TimePoint,
    pub deadline: TimePoint,
    /// Work units. In broadcast mode this is the page length.
    pub length: Duration,
    pub page: Option<PageId>,
}

impl Request {
    pub fn slack(&self) -> Duration {
        &self.deadline - &self.arrival
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub length: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageCatalog {
    pages: Vec<Page>,
}

impl PageCatalog {
    pub fn new(pages: Vec<Page>) -> Self {
        PageCatalog { pages }
    }

    /// `count` pages named `1..=count`, all of length one.
    pub fn unit(count: usize) -> Self {
        PageCatalog {
            pages: (1..=count)
                .map(|i| Page {
                    id: i.to_string(),
                    length: Rational::one(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn get(&self, page: PageId) -> Option<&Page> {
        self.pages.get(page.0)
    }

    pub fn length(&self, page: PageId) -> &Duration {
        &self.pages[page.0].length
    }

    pub fn name(&self, page: PageId) -> &str {
        &self.pages[page.0].id
    }

    pub fn find(&self, name: &str) -> Option<PageId> {
        self.pages.iter().position(|p| p.id == name).map(PageId)
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn ids(&self) -> impl Iterator<Item = PageId> {
        (0..self.pages.len()).map(PageId)
    }

    pub fn is_unit(&self) -> bool {
        self.pages.iter().all(|p| p.length == Rational::one())
    }
}

/// Request data before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestSpec {
    pub name: String,
    pub arrival: TimePoint,
    pub deadline: TimePoint,
    pub length: Duration,
    pub page: Option<PageId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub mode: Mode,
    pub machines: usize,
    pub pages: PageCatalog,
    pub requests: Vec<Request>,
}

impl Instance {
    /// Sorts `specs` stably by arrival and assigns ids in that order. For
    /// broadcast requests the length is taken from the catalog.
    pub fn new(mode: Mode, machines: usize, pages: PageCatalog, specs: Vec<RequestSpec>) -> Self {
        let mut specs: Vec<(usize, RequestSpec)> = specs.into_iter().enumerate().collect();
        specs.sort_by(|(ia, a), (ib, b)| a.arrival.cmp(&b.arrival).then(ia.cmp(ib)));
        let requests = specs
            .into_iter()
            .enumerate()
            .map(|(idx, (_, spec))| {
                let length = match (mode, spec.page) {
                    (Mode::Broadcast, Some(p)) if p.0 < pages.len() => pages.length(p).clone(),
                    _ => spec.length,
                };
                Request {
                    id: RequestId(idx),
                    name: spec.name,
                    arrival: spec.arrival,
                    deadline: spec.deadline,
                    length,
                    page: spec.page,
                }
            })
            .collect();
        Instance {
            mode,
            machines,
            pages,
            requests,
        }
    }

    pub fn request(&self, id: RequestId) -> &Request {
        &self.requests[id.0]
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<RequestId> {
        self.requests.iter().position(|r| r.name == name).map(RequestId)
    }

    /// Ratio of maximum to minimum slack; `None` for an empty instance.
    pub fn slack_ratio(&self) -> Option<Rational> {
        let slacks: Vec<Rational> = self.requests.iter().map(Request::slack).collect();
        let max = Rational::max_of(&slacks)?;
        let min = Rational::min_of(&slacks)?;
        if !min.is_positive() {
            return None;
        }
        Some(max / min)
    }

    pub fn last_arrival(&self) -> TimePoint {
        self.requests
            .last()
            .map(|r| r.arrival.clone())
            .unwrap_or_else(Rational::zero)
    }

    pub fn total_work(&self) -> Duration {
        self.requests.iter().map(|r| &r.length).sum()
    }

    /// Requests for `page`, in arrival order.
    pub fn page_requests(&self, page: PageId) -> impl Iterator<Item = &Request> {
        self.requests.iter().filter(move |r| r.page == Some(page))
    }

    /// Copy of the instance with deadlines rewritten to `a + ℓ`, so that the
    /// delay factor becomes the stretch.
    pub fn with_stretch_deadlines(&self) -> Instance {
        let mut out = self.clone();
        for r in &mut out.requests {
            r.deadline = &r.arrival + &r.length;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Error)]
pub enum Violation {
    #[error("machine count must be at least 1")]
    NoMachines,
    #[error("duplicate page id `{0}`")]
    DuplicatePage(String),
    #[error("page `{0}`: length must be positive")]
    PageLength(String),
    #[error("request `{0}`: duplicate request id")]
    DuplicateRequest(String),
    #[error("request `{0}`: negative arrival")]
    NegativeArrival(String),
    #[error("request `{0}`: deadline must be after arrival")]
    NonPositiveSlack(String),
    #[error("request `{0}`: length must be positive")]
    NonPositiveLength(String),
    #[error("request `{0}`: slack < length")]
    SlackBelowLength(String),
    #[error("request `{0}`: unknown page `{1}`")]
    UnknownPage(String, String),
    #[error("request `{0}`: broadcast request without a page")]
    MissingPage(String),
    #[error("request `{0}`: unicast request carries a page")]
    UnexpectedPage(String),
    #[error("requests are not ordered by arrival")]
    Unordered,
}

/// Checks every request and instance invariant. Violations are reported in
/// instance order, request by request.
pub fn validate(instance: &Instance) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if instance.machines == 0 {
        violations.push(Violation::NoMachines);
    }
    let mut page_names = BTreeSet::new();
    for page in instance.pages.pages() {
        if !page_names.insert(page.id.as_str()) {
            violations.push(Violation::DuplicatePage(page.id.clone()));
        }
        if !page.length.is_positive() {
            violations.push(Violation::PageLength(page.id.clone()));
        }
    }
    let mut names = BTreeSet::new();
    for (idx, r) in instance.requests.iter().enumerate() {
        if r.id != RequestId(idx) {
            violations.push(Violation::Unordered);
        }
        if idx > 0 && instance.requests[idx - 1].arrival > r.arrival {
            violations.push(Violation::Unordered);
        }
        if !names.insert(r.name.as_str()) {
            violations.push(Violation::DuplicateRequest(r.name.clone()));
        }
        if r.arrival.is_negative() {
            violations.push(Violation::NegativeArrival(r.name.clone()));
        }
        if r.deadline <= r.arrival {
            violations.push(Violation::NonPositiveSlack(r.name.clone()));
        }
        match instance.mode {
            Mode::Unicast => {
                if !r.length.is_positive() {
                    violations.push(Violation::NonPositiveLength(r.name.clone()));
                } else if r.deadline > r.arrival && r.slack() < r.length {
                    violations.push(Violation::SlackBelowLength(r.name.clone()));
                }
                if r.page.is_some() {
                    violations.push(Violation::UnexpectedPage(r.name.clone()));
                }
            }
            Mode::Broadcast => match r.page {
                None => violations.push(Violation::MissingPage(r.name.clone())),
                Some(p) if p.0 >= instance.pages.len() => violations.push(Violation::UnknownPage(
                    r.name.clone(),
                    p.0.to_string(),
                )),
                Some(_) => {}
            },
        }
    }
    violations.dedup();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// On-disk instance layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub mode: Mode,
    pub machines: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pages: Vec<Page>,
    pub requests: Vec<RequestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    pub arrival: TimePoint,
    pub deadline: TimePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<Duration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
}

fn de_id<'de, D: serde::Deserializer<'de>>(deserializer: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(deserializer)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("invalid id {}", other))),
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed instance: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl InstanceFile {
    /// Resolves page names and builds a validated [`Instance`].
    pub fn into_instance(self) -> Result<Instance, Vec<Violation>> {
        let catalog = PageCatalog::new(self.pages);
        let mut violations = Vec::new();
        let mut specs = Vec::with_capacity(self.requests.len());
        for rec in self.requests {
            let page = match (&rec.page, self.mode) {
                (Some(name), _) => match catalog.find(name) {
                    Some(p) => Some(p),
                    None => {
                        violations.push(Violation::UnknownPage(rec.id.clone(), name.clone()));
                        continue;
                    }
                },
                (None, _) => None,
            };
            let length = match (self.mode, page) {
                (Mode::Broadcast, Some(p)) => catalog.length(p).clone(),
                _ => match rec.length {
                    Some(l) => l,
                    None => {
                        violations.push(Violation::NonPositiveLength(rec.id.clone()));
                        continue;
                    }
                },
            };
            specs.push(RequestSpec {
                name: rec.id,
                arrival: rec.arrival,
                deadline: rec.deadline,
                length,
                page,
            });
        }
        let instance = Instance::new(self.mode, self.machines, catalog, specs);
        if let Err(more) = validate(&instance) {
            violations.extend(more);
        }
        if violations.is_empty() {
            Ok(instance)
        } else {
            Err(violations)
        }
    }

    pub fn from_instance(instance: &Instance) -> Self {
        InstanceFile {
            mode: instance.mode,
            machines: instance.machines,
            pages: instance.pages.pages().to_vec(),
            requests: instance
                .requests
                .iter()
                .map(|r| RequestRecord {
                    id: r.name.clone(),
                    arrival: r.arrival.clone(),
                    deadline: r.deadline.clone(),
                    length: match instance.mode {
                        Mode::Unicast => Some(r.length.clone()),
                        Mode::Broadcast => None,
                    },
                    page: r.page.map(|p| instance.pages.name(p).to_string()),
                })
                .collect(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text)?;
    file.into_instance().map_err(InstanceError::Invalid)
}

pub fn instance_to_json(instance: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(instance))
        .expect("instance serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64) -> Rational {
        Rational::integer(n)
    }

    fn spec(name: &str, a: i64, d: i64, l: i64) -> RequestSpec {
        RequestSpec {
            name: name.into(),
            arrival: q(a),
            deadline: q(d),
            length: q(l),
            page: None,
        }
    }

    #[test]
    fn slack_is_deadline_minus_arrival() {
        let inst = Instance::new(
            Mode::Unicast,
            1,
            PageCatalog::default(),
            vec![spec("a", 0, 10, 1), spec("b", 3, 4, 1)],
        );
        assert_eq!(inst.request(RequestId(0)).slack(), q(10));
        assert_eq!(inst.request(RequestId(1)).slack(), q(1));
    }

    #[test]
    fn zero_slack_is_rejected_by_validation() {
        let inst = Instance::new(Mode::Unicast, 1, PageCatalog::default(), vec![spec("a", 5, 5, 1)]);
        let errs = validate(&inst).unwrap_err();
        assert_eq!(errs, vec![Violation::NonPositiveSlack("a".into())]);
    }

    #[test]
    fn slack_below_length() {
        let inst = Instance::new(Mode::Unicast, 1, PageCatalog::default(), vec![spec("a", 0, 2, 3)]);
        let errs = validate(&inst).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].to_string(), "request `a`: slack < length");
    }

    #[test]
    fn unknown_page_in_file() {
        let text = r#"{"mode":"broadcast","machines":1,
            "pages":[{"id":"A","length":"1"}],
            "requests":[{"id":"r1","arrival":"0","deadline":"2","page":"B"}]}"#;
        let file: InstanceFile = serde_json::from_str(text).unwrap();
        let errs = file.into_instance().unwrap_err();
        assert_eq!(errs, vec![Violation::UnknownPage("r1".into(), "B".into())]);
    }

    #[test]
    fn well_formed_instance_round_trips() {
        let text = r#"{"mode":"broadcast","machines":1,
            "pages":[{"id":"A","length":"1"},{"id":"B","length":{"num":3,"den":2}}],
            "requests":[{"id":2,"arrival":"1","deadline":"3","page":"B"},
                        {"id":"x","arrival":"0.5","deadline":"4","page":"A"}]}"#;
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.requests[0].name, "x");
        assert_eq!(inst.requests[1].name, "2");
        assert_eq!(inst.requests[1].length, Rational::new(3, 2));
        let again = parse_instance(&instance_to_json(&inst)).unwrap();
        assert_eq!(again, inst);
    }

    #[test]
    fn ties_keep_file_order() {
        let inst = Instance::new(
            Mode::Unicast,
            1,
            PageCatalog::default(),
            vec![spec("late", 2, 5, 1), spec("first", 0, 5, 1), spec("second", 0, 5, 1)],
        );
        let names: Vec<_> = inst.requests.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["first", "second", "late"]);
    }

    #[test]
    fn slack_ratio() {
        let inst = Instance::new(
            Mode::Unicast,
            1,
            PageCatalog::default(),
            vec![spec("a", 0, 8, 1), spec("b", 0, 2, 1)],
        );
        assert_eq!(inst.slack_ratio(), Some(q(4)));
    }
}
