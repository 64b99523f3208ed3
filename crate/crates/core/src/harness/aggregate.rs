use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{RunOutcome, CURVE_CSV_HEADER};
use crate::envs::mean_std;
use crate::error::{Error, Result};

/// Evaluation returns of one seed, as read back from its CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub config_hash: String,
    pub seed: u64,
    pub steps: Vec<u64>,
    pub returns: Vec<f64>,
    pub failed: bool,
}

impl Curve {
    pub fn from_run(run: &RunOutcome) -> Self {
        let ok = run.points.iter().filter(|p| !p.failed);
        Self {
            config_hash: run.config_hash.clone(),
            seed: run.seed,
            steps: ok.clone().map(|p| p.step).collect(),
            returns: ok.map(|p| p.return_mean).collect(),
            failed: run.failed(),
        }
    }
}

/// Across-seed statistics on a shared evaluation grid. Standard deviations
/// use the `n - 1` denominator.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub config_hash: String,
    pub seeds: usize,
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Maximum over evaluation steps of the across-seed mean.
    pub max_average_return: f64,
    pub max_step: u64,
    pub std_at_max: f64,
}

impl Summary {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty grid")
    }

    pub fn final_std(&self) -> f64 {
        *self.std.last().expect("non-empty grid")
    }
}

pub fn aggregate(curves: &[Curve]) -> Result<Summary> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Precondition("aggregate needs at least one curve".into()))?;
    if first.steps.is_empty() {
        return Err(Error::Precondition(format!("seed {} has no evaluations", first.seed)));
    }
    for c in curves {
        if c.config_hash != first.config_hash {
            return Err(Error::Alignment(format!(
                "mixed config hashes {} and {}",
                first.config_hash, c.config_hash
            )));
        }
        if c.steps != first.steps || c.returns.len() != c.steps.len() {
            return Err(Error::Alignment(format!(
                "seed {} is evaluated at different steps than seed {}",
                c.seed, first.seed
            )));
        }
    }
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for i in 0..first.steps.len() {
        let column: Vec<f64> = curves.iter().map(|c| c.returns[i]).collect();
        let (m, s) = mean_std(&column);
        mean.push(m);
        std.push(s);
    }
    let best = (0..mean.len()).fold(0, |b, i| if mean[i] > mean[b] { i } else { b });
    Ok(Summary {
        config_hash: first.config_hash.clone(),
        seeds: curves.len(),
        steps: first.steps.clone(),
        max_average_return: mean[best],
        max_step: first.steps[best],
        std_at_max: std[best],
        mean,
        std,
    })
}

pub fn read_curve_csv(text: &str) -> Result<Curve> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CURVE_CSV_HEADER => {}
        other => return Err(Error::Parse(format!("expected curve header, found {other:?}"))),
    }
    let mut curve: Option<Curve> = None;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Parse(format!("curve row has {} columns: {line}", cols.len())));
        }
        let bad = |what: &str| Error::Parse(format!("bad {what} in curve row: {line}"));
        let seed: u64 = cols[1].parse().map_err(|_| bad("seed"))?;
        let step: u64 = cols[2].parse().map_err(|_| bad("step"))?;
        let c = curve.get_or_insert_with(|| Curve {
            config_hash: cols[0].to_string(),
            seed,
            steps: Vec::new(),
            returns: Vec::new(),
            failed: false,
        });
        if c.config_hash != cols[0] || c.seed != seed {
            return Err(Error::Parse("a curve file mixes runs".into()));
        }
        match cols[8] {
            "ok" => {
                c.steps.push(step);
                c.returns.push(cols[3].parse().map_err(|_| bad("return"))?);
            }
            "failed" => c.failed = true,
            _ => return Err(bad("status")),
        }
    }
    curve.ok_or_else(|| Error::Parse("curve file has no rows".into()))
}

/// Summary of all curve files in one directory.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    /// Directory relative to the aggregation root, e.g. `pendulum/td3`.
    pub group: String,
    pub runs: usize,
    pub failed: usize,
    /// `None` when every run failed.
    pub summary: Option<Summary>,
}

fn is_curve_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    name.strip_prefix("seed")
        .and_then(|r| r.strip_suffix(".csv"))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if is_curve_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Aggregates every `seed<N>.csv` below `root`, grouped by directory.
/// Failed runs are counted and excluded.
pub fn aggregate_dir(root: &Path) -> Result<Vec<GroupSummary>> {
    let mut files = Vec::new();
    collect(root, &mut files)?;
    let mut groups: BTreeMap<String, Vec<Curve>> = BTreeMap::new();
    for f in files {
        let rel = f.parent().and_then(|p| p.strip_prefix(root).ok()).unwrap_or(Path::new(""));
        let group = rel.to_string_lossy().replace('\\', "/");
        let curve = read_curve_csv(&std::fs::read_to_string(&f)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", f.display())))?;
        groups.entry(group).or_default().push(curve);
    }
    groups
        .into_iter()
        .map(|(group, mut curves)| {
            curves.sort_by_key(|c| c.seed);
            let runs = curves.len();
            let ok: Vec<Curve> = curves.into_iter().filter(|c| !c.failed).collect();
            let summary = if ok.is_empty() { None } else { Some(aggregate(&ok)?) };
            Ok(GroupSummary {
                group,
                runs,
                failed: runs - ok.len(),
                summary,
            })
        })
        .collect()
}

pub fn summary_csv(groups: &[GroupSummary]) -> String {
    let mut s = String::from(
        "# td3lab summary v1\ngroup,config_hash,runs,failed,max_average_return,std_at_max,max_step,final_mean,final_std\n",
    );
    for g in groups {
        match &g.summary {
            Some(m) => writeln!(
                s,
                "{},{},{},{},{:?},{:?},{},{:?},{:?}",
                g.group,
                m.config_hash,
                g.runs,
                g.failed,
                m.max_average_return,
                m.std_at_max,
                m.max_step,
                m.final_mean(),
                m.final_std()
            ),
            None => writeln!(s, "{},,{},{},,,,,", g.group, g.runs, g.failed),
        }
        .unwrap();
    }
    s
}
