use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io;
use std::path::Path;
use std::sync::mpsc;

use delayfactor::Rational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{compare, ExperimentSpec, OracleSettings, RatioRow, SchedulerKind};
use crate::gen::{generate, GenParams, Profile};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub profile: Profile,
    #[serde(default)]
    pub params: GenParams,
    pub schedulers: Vec<SchedulerKind>,
    /// Speed augmentation over each scheduler's base speed.
    pub eps: Vec<Rational>,
    /// Wait constants for the waiting schedulers; `eps / 2` when absent.
    #[serde(default)]
    pub c: Vec<Rational>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tolerance: Option<Rational>,
    #[serde(default)]
    pub slot: Option<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPoint {
    pub key: String,
    pub seed: u64,
    pub eps: Rational,
    pub spec: ExperimentSpec,
}

impl GridSpec {
    /// Cross product in scheduler, eps, c, seed order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &kind in &self.schedulers {
            for eps in &self.eps {
                let cs: Vec<Option<Rational>> = if !kind.needs_c() {
                    vec![None]
                } else if self.c.is_empty() {
                    vec![Some(eps / Rational::integer(2))]
                } else {
                    self.c.iter().cloned().map(Some).collect()
                };
                for c in cs {
                    for &seed in &self.seeds {
                        let mut spec = ExperimentSpec::new(kind, kind.base_speed() + eps);
                        spec.machines = Some(self.params.machines.max(1));
                        spec.c = c.clone();
                        let key = format!(
                            "{}|{}|{}|{}",
                            kind,
                            eps,
                            c.as_ref().map(|c| c.to_string()).unwrap_or_default(),
                            seed
                        );
                        out.push(GridPoint {
                            key,
                            seed,
                            eps: eps.clone(),
                            spec,
                        });
                    }
                }
            }
        }
        out
    }

    fn settings(&self) -> OracleSettings {
        let mut s = OracleSettings::default();
        if let Some(t) = &self.tolerance {
            s.tolerance = t.clone();
        }
        s.slot = self.slot.clone();
        s
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("existing output is not a sweep file: {0}")]
    Corrupt(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SweepSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
    pub bound_violations: usize,
}

pub fn header() -> Vec<&'static str> {
    let mut h = vec!["key", "profile", "seed", "eps"];
    h.extend(RatioRow::COLUMNS);
    h
}

/// Keys already present in `path`. A torn last line is cut off first.
fn completed(path: &Path) -> Result<Option<HashSet<String>>, SweepError> {
    let io_err = |source| SweepError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(e)),
    };
    if text.is_empty() {
        return Ok(None);
    }
    let keep = match text.rfind('\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep < text.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err)?;
        f.set_len(keep as u64).map_err(io_err)?;
    }
    let text = &text[..keep];
    if text.is_empty() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| SweepError::Corrupt(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != header() {
        return Err(SweepError::Corrupt(path.display().to_string()));
    }
    let mut keys = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| SweepError::Corrupt(e.to_string()))?;
        keys.insert(rec[0].to_string());
    }
    Ok(Some(keys))
}

/// Runs every grid point not already in `out`, appending rows in grid order.
/// Rows run concurrently on up to `threads` workers; one writer appends and
/// flushes each row as soon as all earlier rows are written.
pub fn run_sweep(grid: &GridSpec, out: &Path, threads: Option<usize>) -> Result<SweepSummary, SweepError> {
    let io_err = |source| SweepError::Io {
        path: out.display().to_string(),
        source,
    };
    let done = completed(out)?;
    let fresh = done.is_none();
    let done = done.unwrap_or_default();
    let points = grid.points();
    let pending: Vec<&GridPoint> = points.iter().filter(|p| !done.contains(&p.key)).collect();
    let mut summary = SweepSummary {
        skipped: points.len() - pending.len(),
        ..SweepSummary::default()
    };
    let file = OpenOptions::new().create(true).append(true).open(out).map_err(io_err)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        writer.write_record(header()).map_err(|e| io_err(e.into()))?;
        writer.flush().map_err(io_err)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| SweepError::Pool(e.to_string()))?;
    let settings = grid.settings();
    let (tx, rx) = mpsc::channel::<(usize, Vec<String>, bool, bool)>();
    std::thread::scope(|scope| -> Result<(), SweepError> {
        let pending = &pending;
        let settings = &settings;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().enumerate().for_each_with(tx, |tx, (i, p)| {
                    let inst = generate(p.seed, grid.profile, &grid.params);
                    let id = format!("{}-{}", grid.profile, p.seed);
                    let row = compare(&id, &inst, &p.spec, settings);
                    let mut fields = vec![p.key.clone(), grid.profile.to_string(), p.seed.to_string(), p.eps.to_string()];
                    fields.extend(row.values());
                    let failed = row.status != "ok" && !row.status.starts_with("oracle-skipped");
                    let _ = tx.send((i, fields, failed, row.failed()));
                });
            });
        });
        let mut buffered: BTreeMap<usize, (Vec<String>, bool, bool)> = BTreeMap::new();
        let mut next = 0;
        for (i, fields, failed, above) in rx {
            buffered.insert(i, (fields, failed, above));
            while let Some((fields, failed, above)) = buffered.remove(&next) {
                writer.write_record(&fields).map_err(|e| io_err(e.into()))?;
                writer.flush().map_err(io_err)?;
                summary.written += 1;
                summary.failed += failed as usize;
                summary.bound_violations += above as usize;
                next += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn grid(seeds: Vec<u64>) -> GridSpec {
        GridSpec {
            profile: Profile::UnicastRandom,
            params: GenParams {
                requests: 6,
                ..GenParams::default()
            },
            schedulers: vec![SchedulerKind::Ssf],
            eps: vec![Rational::new(1, 4), Rational::new(1, 2), Rational::one()],
            c: vec![],
            seeds,
            tolerance: None,
            slot: None,
        }
    }

    #[test]
    fn cross_product_size() {
        assert_eq!(grid((0..10).collect()).points().len(), 30);
    }

    #[test]
    fn empty_grid_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.csv");
        let s = run_sweep(&grid(vec![]), &out, Some(2)).unwrap();
        assert_eq!(s, SweepSummary::default());
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("key,profile,seed,eps,instance"));
    }

    #[test]
    fn resume_skips_done_rows_and_repairs_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.csv");
        run_sweep(&grid(vec![1, 2]), &out, Some(2)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&out).unwrap();
        f.write_all(b"ssf|1|").unwrap();
        drop(f);
        let s = run_sweep(&grid(vec![1, 2, 3]), &out, Some(3)).unwrap();
        assert_eq!(s.skipped, 6);
        assert_eq!(s.written, 3);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 10);
        let keys: HashSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(keys.len(), 9);
    }
}
