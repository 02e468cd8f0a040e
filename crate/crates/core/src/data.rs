//! Sparse two-sample functional data and its long-format CSV representation.
//!
//! Each subject carries its own irregular schedule of `(time, value)` pairs.
//! Times live on the rescaled domain `[0, 1]`; [`rescale_time`] maps raw
//! schedules (days, wavenumbers, ...) onto it. Datasets are plain values and
//! are never mutated in place by the statistics built on top of them.
//!
//! The file format is one observation per row:
//!
//! ```text
//! subject_id,group,time,value
//! s1,x,0.10,1.25
//! s1,x,0.55,0.80
//! s2,y,0.30,-0.12
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationPoint {
    pub time: f64,
    pub value: f64,
}

impl ObservationPoint {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub points: Vec<ObservationPoint>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, points: Vec<ObservationPoint>) -> Self {
        Self {
            id: id.into(),
            points,
        }
    }

    /// Builds a record from parallel time and value slices.
    pub fn from_pairs(id: impl Into<String>, times: &[f64], values: &[f64]) -> Self {
        assert_eq!(times.len(), values.len(), "times and values differ in length");
        let points = times
            .iter()
            .zip(values)
            .map(|(&t, &v)| ObservationPoint::new(t, v))
            .collect();
        Self::new(id, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    X,
    Y,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::X => "x",
            Group::Y => "y",
        }
    }

    fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "x" => Some(Group::X),
            "y" => Some(Group::Y),
            _ => None,
        }
    }
}

/// The X sample (`n` subjects) followed by the Y sample (`m` subjects).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleDataset {
    pub x_subjects: Vec<SubjectRecord>,
    pub y_subjects: Vec<SubjectRecord>,
}

impl TwoSampleDataset {
    pub fn new(x_subjects: Vec<SubjectRecord>, y_subjects: Vec<SubjectRecord>) -> Self {
        Self {
            x_subjects,
            y_subjects,
        }
    }

    pub fn n(&self) -> usize {
        self.x_subjects.len()
    }

    pub fn m(&self) -> usize {
        self.y_subjects.len()
    }

    pub fn group(&self, group: Group) -> &[SubjectRecord] {
        match group {
            Group::X => &self.x_subjects,
            Group::Y => &self.y_subjects,
        }
    }

    /// Subjects in pooled order: all of X, then all of Y.
    pub fn pooled(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.x_subjects.iter().chain(&self.y_subjects)
    }

    pub fn total_points(&self) -> usize {
        self.pooled().map(SubjectRecord::len).sum()
    }

    /// Same subjects with the group labels exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.y_subjects.clone(), self.x_subjects.clone())
    }

    /// Applies `f` to every observed value, keeping times and ids.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let map_group = |subjects: &[SubjectRecord]| {
            subjects
                .iter()
                .map(|s| SubjectRecord {
                    id: s.id.clone(),
                    points: s
                        .points
                        .iter()
                        .map(|p| ObservationPoint::new(p.time, f(p.value)))
                        .collect(),
                })
                .collect()
        };
        Self::new(map_group(&self.x_subjects), map_group(&self.y_subjects))
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_dataset(self)
    }

    /// `Ok` if every invariant holds, otherwise all violations as one error.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_dataset(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(MedError::InvalidDataset(violations))
        }
    }

    /// Serializes to the long CSV format read by [`parse_long_csv`].
    ///
    /// Values are written with the shortest round-trip representation so that
    /// parsing the output reproduces the dataset exactly.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("subject_id,group,time,value\n");
        for (group, subjects) in [(Group::X, &self.x_subjects), (Group::Y, &self.y_subjects)] {
            for subject in subjects {
                for p in &subject.points {
                    out.push_str(&csv_field(&subject.id));
                    out.push(',');
                    out.push_str(group.label());
                    out.push_str(&format!(",{},{}\n", p.time, p.value));
                }
            }
        }
        out
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// A broken dataset invariant, attributed to a subject where possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub subject: Option<String>,
    pub rule: String,
}

impl Violation {
    fn dataset(rule: impl Into<String>) -> Self {
        Self {
            subject: None,
            rule: rule.into(),
        }
    }

    fn subject(id: &str, rule: impl Into<String>) -> Self {
        Self {
            subject: Some(id.to_string()),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(id) => write!(f, "subject {id}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

pub fn validate_dataset(dataset: &TwoSampleDataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    if dataset.n() < 2 {
        violations.push(Violation::dataset(format!(
            "n >= 2 required, X group has {} subject(s)",
            dataset.n()
        )));
    }
    if dataset.m() < 2 {
        violations.push(Violation::dataset(format!(
            "m >= 2 required, Y group has {} subject(s)",
            dataset.m()
        )));
    }

    let mut seen = HashSet::new();
    for subject in dataset.pooled() {
        if !seen.insert(subject.id.as_str()) {
            violations.push(Violation::subject(&subject.id, "duplicate subject id"));
        }
        if subject.points.is_empty() {
            violations.push(Violation::subject(&subject.id, "N_i >= 1 required"));
        }
        if subject.points.iter().any(|p| !p.value.is_finite()) {
            violations.push(Violation::subject(&subject.id, "non-finite value"));
        }
        if subject
            .points
            .iter()
            .any(|p| !p.time.is_finite() || !(0.0..=1.0).contains(&p.time))
        {
            violations.push(Violation::subject(&subject.id, "time out of [0,1]"));
        }
    }
    violations
}

/// Parses long CSV without checking the time domain (raw schedules).
pub fn parse_long_csv_raw(text: &str) -> Result<TwoSampleDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| MedError::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (id_col, group_col, time_col, value_col) =
        (column("subject_id")?, column("group")?, column("time")?, column("value")?);

    // Subject order follows first appearance in the file.
    let mut order: Vec<(Group, String)> = Vec::new();
    let mut index: HashMap<String, (Group, usize)> = HashMap::new();
    let mut points: Vec<Vec<ObservationPoint>> = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let fallback_line = row as u64 + 2;
        let record = record.map_err(|e| csv_error(e, fallback_line))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(fallback_line);
        let field = |col: usize| record.get(col).unwrap_or("");

        let id = field(id_col);
        if id.is_empty() {
            return Err(parse_error(line, "empty subject_id"));
        }
        let group = Group::parse(field(group_col)).ok_or_else(|| {
            parse_error(
                line,
                format!("group label `{}` is not x or y", field(group_col)),
            )
        })?;
        let time = parse_number(field(time_col), "time", line)?;
        let value = parse_number(field(value_col), "value", line)?;

        let slot = match index.get(id) {
            Some(&(existing, slot)) => {
                if existing != group {
                    return Err(parse_error(
                        line,
                        format!("subject `{id}` appears in both groups"),
                    ));
                }
                slot
            }
            None => {
                let slot = points.len();
                index.insert(id.to_string(), (group, slot));
                order.push((group, id.to_string()));
                points.push(Vec::new());
                slot
            }
        };
        points[slot].push(ObservationPoint::new(time, value));
    }

    let mut x_subjects = Vec::new();
    let mut y_subjects = Vec::new();
    for ((group, id), pts) in order.into_iter().zip(points) {
        let record = SubjectRecord::new(id, pts);
        match group {
            Group::X => x_subjects.push(record),
            Group::Y => y_subjects.push(record),
        }
    }
    for (group, subjects) in [(Group::X, &x_subjects), (Group::Y, &y_subjects)] {
        if subjects.is_empty() {
            return Err(MedError::Parse {
                line: 0,
                message: format!("group {} is empty", group.label()),
            });
        }
    }
    Ok(TwoSampleDataset::new(x_subjects, y_subjects))
}

/// Parses long CSV whose times are already on `[0, 1]`.
pub fn parse_long_csv(text: &str) -> Result<TwoSampleDataset> {
    let dataset = parse_long_csv_raw(text)?;
    check_time_domain(text, 0.0, 1.0)?;
    Ok(dataset)
}

/// Parses long CSV with raw times in `[lo, hi]` and rescales them to `[0, 1]`.
pub fn parse_long_csv_with_range(text: &str, lo: f64, hi: f64) -> Result<TwoSampleDataset> {
    let dataset = parse_long_csv_raw(text)?;
    check_time_domain(text, lo, hi)?;
    rescale_time(&dataset, lo, hi)
}

// Re-scan to attach the offending line number to domain errors.
fn check_time_domain(text: &str, lo: f64, hi: f64) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let Some(time_col) = headers.iter().position(|h| h.eq_ignore_ascii_case("time")) else {
        return Ok(());
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let time: f64 = record
            .get(time_col)
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN);
        if !(lo..=hi).contains(&time) {
            return Err(parse_error(
                line,
                if lo == 0.0 && hi == 1.0 {
                    format!("time {time} out of [0,1]")
                } else {
                    format!("time {time} out of [{lo},{hi}]")
                },
            ));
        }
    }
    Ok(())
}

fn parse_number(raw: &str, what: &str, line: u64) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| parse_error(line, format!("cannot parse {what} `{raw}`")))?;
    if !value.is_finite() {
        return Err(parse_error(line, format!("non-finite {what} `{raw}`")));
    }
    Ok(value)
}

fn parse_error(line: u64, message: impl Into<String>) -> MedError {
    MedError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(err: csv::Error, fallback_line: u64) -> MedError {
    let line = err
        .position()
        .map(|p| p.line())
        .unwrap_or(fallback_line);
    parse_error(line, format!("malformed row: {err}"))
}

/// Maps every time `t` to `(t - lo) / (hi - lo)`.
pub fn rescale_time(dataset: &TwoSampleDataset, lo: f64, hi: f64) -> Result<TwoSampleDataset> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MedError::InvalidConfig(format!(
            "time range requires lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut violations = Vec::new();
    let span = hi - lo;
    let rescale = |subjects: &[SubjectRecord], violations: &mut Vec<Violation>| {
        subjects
            .iter()
            .map(|s| {
                if s.points.iter().any(|p| !(lo..=hi).contains(&p.time)) {
                    violations.push(Violation::subject(
                        &s.id,
                        format!("time outside [{lo}, {hi}]"),
                    ));
                }
                SubjectRecord {
                    id: s.id.clone(),
                    points: s
                        .points
                        .iter()
                        .map(|p| ObservationPoint::new((p.time - lo) / span, p.value))
                        .collect(),
                }
            })
            .collect::<Vec<_>>()
    };
    let x = rescale(&dataset.x_subjects, &mut violations);
    let y = rescale(&dataset.y_subjects, &mut violations);
    if !violations.is_empty() {
        return Err(MedError::InvalidDataset(violations));
    }
    Ok(TwoSampleDataset::new(x, y))
}

/// Fully observed curves on one shared grid, as used by the dense baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSample {
    pub grid: Vec<f64>,
    pub x_curves: Vec<Vec<f64>>,
    pub y_curves: Vec<Vec<f64>>,
}

/// Parses wide CSV: `subject_id,group,<t_1>,...,<t_G>` with one curve per row.
pub fn parse_wide_csv(text: &str) -> Result<DenseSample> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    if headers.len() < 4 {
        return Err(parse_error(
            1,
            "wide CSV needs subject_id, group and at least two grid columns",
        ));
    }
    if !headers[0].eq_ignore_ascii_case("subject_id") || !headers[1].eq_ignore_ascii_case("group")
    {
        return Err(parse_error(1, "first columns must be subject_id,group"));
    }
    let grid = headers
        .iter()
        .skip(2)
        .map(|h| parse_number(h, "grid time", 1))
        .collect::<Result<Vec<_>>>()?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(parse_error(1, "grid times must be strictly increasing"));
    }

    let mut x_curves = Vec::new();
    let mut y_curves = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, row as u64 + 2))?;
        let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
        let group = Group::parse(&record[1])
            .ok_or_else(|| parse_error(line, format!("group label `{}` is not x or y", &record[1])))?;
        let curve = record
            .iter()
            .skip(2)
            .map(|v| parse_number(v, "value", line))
            .collect::<Result<Vec<_>>>()?;
        match group {
            Group::X => x_curves.push(curve),
            Group::Y => y_curves.push(curve),
        }
    }
    Ok(DenseSample {
        grid,
        x_curves,
        y_curves,
    })
}
