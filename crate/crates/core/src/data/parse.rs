//! Delimited-text sensor and annotation readers, plus dataset loaders for
//! the canonical layout and the KFall distribution layout.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{ActivityKind, SensorInstance, AXES};
use crate::error::{Error, Result};

/// Which columns of a sensor file hold the frame counter and the nine
/// sensor values. Column indices are zero-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnLayout {
    /// `None` numbers frames by row.
    pub frame_column: Option<usize>,
    pub value_columns: [usize; AXES],
    /// Exact column count every row must have.
    pub columns: usize,
}

impl ColumnLayout {
    /// Frame counter followed by nine values.
    pub fn canonical() -> Self {
        ColumnLayout {
            frame_column: Some(0),
            value_columns: std::array::from_fn(|i| i + 1),
            columns: AXES + 1,
        }
    }

    /// Nine values, no counter.
    pub fn values_only() -> Self {
        ColumnLayout {
            frame_column: None,
            value_columns: std::array::from_fn(|i| i),
            columns: AXES,
        }
    }

    /// KFall: TimeStamp, FrameCounter, then acc, gyr, euler.
    pub fn kfall() -> Self {
        ColumnLayout {
            frame_column: Some(1),
            value_columns: std::array::from_fn(|i| i + 2),
            columns: AXES + 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let max = self
            .value_columns
            .iter()
            .chain(self.frame_column.iter())
            .max()
            .copied()
            .unwrap_or(0);
        if max >= self.columns {
            return Err(Error::Config(format!(
                "column layout references column {max} but rows have {} columns",
                self.columns
            )));
        }
        Ok(())
    }
}

/// Raw frames of one sensor file.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTable {
    pub path: PathBuf,
    pub frame_counters: Vec<i64>,
    /// Row-major `frames x 9`.
    pub samples: Vec<f32>,
}

impl SensorTable {
    pub fn frames(&self) -> usize {
        self.frame_counters.len()
    }

    /// Row of the first frame whose counter is at least `counter`.
    pub fn row_of_counter(&self, counter: i64) -> Option<usize> {
        let row = self.frame_counters.partition_point(|&c| c < counter);
        (row < self.frames()).then_some(row)
    }

    /// Joins an annotation given in frame-counter units and builds the
    /// instance.
    pub fn into_instance(
        self,
        subject_id: u32,
        instance_id: &str,
        kind: ActivityKind,
        annotation: Option<&Annotation>,
    ) -> Result<SensorInstance> {
        let rows = match annotation {
            Some(a) => {
                let map = |c: i64| {
                    self.row_of_counter(c).ok_or_else(|| {
                        Error::Data(format!(
                            "{instance_id}: annotated frame {c} is past the end of {}",
                            self.path.display()
                        ))
                    })
                };
                Some((map(a.onset)?, map(a.impact)?))
            }
            None => None,
        };
        SensorInstance::new(subject_id, instance_id, kind, self.samples, rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Delim {
    Comma,
    Semicolon,
    Space,
}

impl Delim {
    fn detect(line: &str) -> Self {
        if line.contains(',') {
            Delim::Comma
        } else if line.contains(';') {
            Delim::Semicolon
        } else {
            Delim::Space
        }
    }

    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delim::Comma => line.split(',').map(str::trim).collect(),
            Delim::Semicolon => line.split(';').map(str::trim).collect(),
            Delim::Space => line.split_whitespace().collect(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their one-based line numbers, a detected
/// delimiter, and the header (if the first line is not numeric) removed.
fn records<'a>(path: &Path, text: &'a str, is_data: impl Fn(&[&str]) -> bool) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let Some(&(_, first)) = lines.peek() else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "file is empty".into(),
        });
    };
    let delim = Delim::detect(first);
    let mut out: Vec<(usize, Vec<&str>)> = lines.map(|(n, l)| (n, delim.split(l))).collect();
    if !is_data(&out[0].1) {
        out.remove(0);
    }
    Ok(out)
}

fn parse_counter(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        let f = s.parse::<f64>().ok()?;
        (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
    })
}

/// Reads one sensor file, validating the column count of every row and
/// that frame counters strictly increase.
pub fn parse_sensor_file(path: &Path, layout: &ColumnLayout) -> Result<SensorTable> {
    layout.validate()?;
    let text = read_text(path)?;
    let is_data = |f: &[&str]| {
        layout
            .value_columns
            .iter()
            .all(|&c| f.get(c).is_some_and(|v| v.parse::<f64>().is_ok()))
    };
    let rows = records(path, &text, is_data)?;
    let perr = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut counters = Vec::with_capacity(rows.len());
    let mut samples = Vec::with_capacity(rows.len() * AXES);
    for (row_idx, (line, fields)) in rows.iter().enumerate() {
        if fields.len() != layout.columns {
            return Err(perr(
                *line,
                format!("expected {} columns, found {}", layout.columns, fields.len()),
            ));
        }
        let counter = match layout.frame_column {
            Some(c) => {
                parse_counter(fields[c]).ok_or_else(|| perr(*line, format!("bad frame counter `{}`", fields[c])))?
            }
            None => row_idx as i64,
        };
        if let Some(&previous) = counters.last() {
            if counter <= previous {
                return Err(Error::NonMonotoneFrames {
                    path: path.to_path_buf(),
                    line: *line,
                    previous,
                    frame: counter,
                });
            }
        }
        counters.push(counter);
        for &c in &layout.value_columns {
            let v: f32 = fields[c]
                .parse()
                .map_err(|_| perr(*line, format!("bad value `{}` in column {c}", fields[c])))?;
            if !v.is_finite() {
                return Err(perr(*line, format!("non-finite value in column {c}")));
            }
            samples.push(v);
        }
    }
    Ok(SensorTable {
        path: path.to_path_buf(),
        frame_counters: counters,
        samples,
    })
}

/// Onset and impact in frame-counter units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub instance_id: String,
    pub onset: i64,
    pub impact: i64,
}

/// Reads `instance_id, onset_frame, impact_frame` rows.
pub fn parse_label_file(path: &Path) -> Result<Vec<Annotation>> {
    let text = read_text(path)?;
    let rows = records(path, &text, |f| f.get(1).is_some_and(|v| parse_counter(v).is_some()))?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        let perr = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 columns, found {}", fields.len())));
        }
        let onset = parse_counter(fields[1]).ok_or_else(|| perr(format!("bad onset `{}`", fields[1])))?;
        let impact = parse_counter(fields[2]).ok_or_else(|| perr(format!("bad impact `{}`", fields[2])))?;
        if onset >= impact {
            return Err(perr(format!("onset {onset} is not before impact {impact}")));
        }
        if seen.insert(fields[0].to_string(), line).is_some() {
            return Err(perr(format!("duplicate annotation for `{}`", fields[0])));
        }
        out.push(Annotation {
            instance_id: fields[0].to_string(),
            onset,
            impact,
        });
    }
    Ok(out)
}

/// Subject, task, and trial numbers of a `SxxTxxRxx` file stem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrialName {
    pub subject: u32,
    pub task: u32,
    pub trial: u32,
}

impl TrialName {
    pub fn parse(stem: &str) -> Option<Self> {
        let s = stem.strip_prefix(['S', 's'])?;
        let t = s.find(['T', 't'])?;
        let r = s.find(['R', 'r'])?;
        if r < t {
            return None;
        }
        Some(TrialName {
            subject: s[..t].parse().ok()?,
            task: s[t + 1..r].parse().ok()?,
            trial: s[r + 1..].parse().ok()?,
        })
    }

    pub fn id(&self) -> String {
        format!("S{:02}T{:02}R{:02}", self.subject, self.task, self.trial)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// `manifest.csv` plus `labels.csv`.
    #[default]
    Canonical,
    /// `sensor_data/SAxx/SxxTxxRxx.csv` plus `label_data/*.csv`.
    Kfall,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingAnnotationPolicy {
    #[default]
    Error,
    Skip,
}

/// Column positions in a KFall label export (one file per subject).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfallLabelColumns {
    pub task: usize,
    pub trial: usize,
    pub onset: usize,
    pub impact: usize,
}

impl Default for KfallLabelColumns {
    fn default() -> Self {
        KfallLabelColumns {
            task: 0,
            trial: 2,
            onset: 3,
            impact: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    /// Overrides the format's default sensor column layout.
    pub sensor_columns: Option<ColumnLayout>,
    /// KFall task numbers recorded as falls; every other task is ADL.
    pub fall_tasks: Vec<u32>,
    pub kfall_label_columns: KfallLabelColumns,
    pub missing_annotation: MissingAnnotationPolicy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            format: DatasetFormat::Canonical,
            sensor_columns: None,
            fall_tasks: (20..=34).collect(),
            kfall_label_columns: KfallLabelColumns::default(),
            missing_annotation: MissingAnnotationPolicy::Error,
        }
    }
}

impl DatasetConfig {
    fn layout(&self) -> ColumnLayout {
        self.sensor_columns.clone().unwrap_or_else(|| match self.format {
            DatasetFormat::Canonical => ColumnLayout::canonical(),
            DatasetFormat::Kfall => ColumnLayout::kfall(),
        })
    }
}

/// Loads every instance under `dir`, sorted by instance id.
pub fn load_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Vec<SensorInstance>> {
    let mut out = match cfg.format {
        DatasetFormat::Canonical => load_canonical(dir, cfg)?,
        DatasetFormat::Kfall => load_kfall(dir, cfg)?,
    };
    out.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    if out.is_empty() {
        return Err(Error::Data(format!("no instances found under {}", dir.display())));
    }
    Ok(out)
}

fn join(
    table: SensorTable,
    subject: u32,
    id: &str,
    kind: ActivityKind,
    labels: &HashMap<String, Annotation>,
    policy: MissingAnnotationPolicy,
) -> Result<Option<SensorInstance>> {
    let ann = labels.get(id);
    if kind == ActivityKind::Fall && ann.is_none() && policy == MissingAnnotationPolicy::Skip {
        log::warn!("skipping fall instance {id}: no annotation");
        return Ok(None);
    }
    let ann = if kind == ActivityKind::Fall { ann } else { None };
    table.into_instance(subject, id, kind, ann).map(Some)
}

fn load_canonical(dir: &Path, cfg: &DatasetConfig) -> Result<Vec<SensorInstance>> {
    let manifest = dir.join("manifest.csv");
    let text = read_text(&manifest)?;
    let rows = records(&manifest, &text, |f| f.get(1).is_some_and(|v| v.parse::<u32>().is_ok()))?;
    let labels_path = dir.join("labels.csv");
    let labels: HashMap<String, Annotation> = if labels_path.exists() {
        parse_label_file(&labels_path)?
            .into_iter()
            .map(|a| (a.instance_id.clone(), a))
            .collect()
    } else {
        HashMap::new()
    };
    let layout = cfg.layout();
    let mut out = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        let perr = |reason: String| Error::Parse {
            path: manifest.clone(),
            line,
            reason,
        };
        if fields.len() != 4 {
            return Err(perr(format!("expected 4 columns, found {}", fields.len())));
        }
        let subject: u32 = fields[1]
            .parse()
            .map_err(|_| perr(format!("bad subject id `{}`", fields[1])))?;
        let kind = match fields[2].to_ascii_lowercase().as_str() {
            "adl" => ActivityKind::Adl,
            "fall" => ActivityKind::Fall,
            other => return Err(perr(format!("kind must be adl or fall, got `{other}`"))),
        };
        let table = parse_sensor_file(&dir.join(fields[3]), &layout)?;
        if let Some(inst) = join(table, subject, fields[0], kind, &labels, cfg.missing_annotation)? {
            out.push(inst);
        }
    }
    Ok(out)
}

/// Integer runs in a cell, e.g. `F01 (20)` gives `[1, 20]`.
fn integers(cell: &str) -> Vec<u32> {
    cell.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect()
}

/// Reads a per-subject KFall label export. Task cells may be blank on
/// continuation rows (merged cells); the last seen task carries forward.
/// The task number is the last integer in the cell.
pub fn parse_kfall_label_file(path: &Path, subject: u32, cols: &KfallLabelColumns) -> Result<Vec<Annotation>> {
    let text = read_text(path)?;
    let rows = records(path, &text, |f| {
        f.get(cols.onset).is_some_and(|v| parse_counter(v).is_some())
    })?;
    let mut task = None;
    let mut out = Vec::new();
    for (line, fields) in rows {
        let perr = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let need = cols.task.max(cols.trial).max(cols.onset).max(cols.impact) + 1;
        if fields.len() < need {
            return Err(perr(format!(
                "expected at least {need} columns, found {}",
                fields.len()
            )));
        }
        if let Some(&t) = integers(fields[cols.task]).last() {
            task = Some(t);
        }
        let task = task.ok_or_else(|| perr("no task code before this row".into()))?;
        let trial = *integers(fields[cols.trial])
            .last()
            .ok_or_else(|| perr(format!("bad trial `{}`", fields[cols.trial])))?;
        let onset =
            parse_counter(fields[cols.onset]).ok_or_else(|| perr(format!("bad onset `{}`", fields[cols.onset])))?;
        let impact =
            parse_counter(fields[cols.impact]).ok_or_else(|| perr(format!("bad impact `{}`", fields[cols.impact])))?;
        out.push(Annotation {
            instance_id: TrialName { subject, task, trial }.id(),
            onset,
            impact,
        });
    }
    Ok(out)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_kfall(dir: &Path, cfg: &DatasetConfig) -> Result<Vec<SensorInstance>> {
    let mut labels = HashMap::new();
    let label_dir = dir.join("label_data");
    if label_dir.is_dir() {
        for p in csv_files(&label_dir)? {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some(&subject) = integers(stem).first() else {
                log::warn!("ignoring label file without a subject number: {}", p.display());
                continue;
            };
            for a in parse_kfall_label_file(&p, subject, &cfg.kfall_label_columns)? {
                labels.insert(a.instance_id.clone(), a);
            }
        }
    }
    let layout = cfg.layout();
    let mut by_id = BTreeMap::new();
    for p in csv_files(&dir.join("sensor_data"))? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some(name) = TrialName::parse(stem) else {
            log::warn!("ignoring sensor file with unrecognized name: {}", p.display());
            continue;
        };
        by_id.insert(name.id(), (name, p));
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (id, (name, p)) in by_id {
        let kind = if cfg.fall_tasks.contains(&name.task) {
            ActivityKind::Fall
        } else {
            ActivityKind::Adl
        };
        let table = parse_sensor_file(&p, &layout)?;
        if let Some(inst) = join(table, name.subject, &id, kind, &labels, cfg.missing_annotation)? {
            out.push(inst);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_names() {
        assert_eq!(
            TrialName::parse("S06T20R03"),
            Some(TrialName {
                subject: 6,
                task: 20,
                trial: 3
            })
        );
        assert_eq!(TrialName::parse("S06R03T20"), None);
        assert_eq!(TrialName::parse("readme"), None);
        assert_eq!(TrialName::parse("S6T1R1").unwrap().id(), "S06T01R01");
    }

    #[test]
    fn delimiter_detection() {
        assert_eq!(Delim::detect("1,2,3"), Delim::Comma);
        assert_eq!(Delim::detect("1;2;3"), Delim::Semicolon);
        assert_eq!(Delim::detect("1 2\t3"), Delim::Space);
        assert_eq!(Delim::Space.split(" 1  2\t3 "), vec!["1", "2", "3"]);
    }

    #[test]
    fn task_cells() {
        assert_eq!(integers("F01 (20)"), vec![1, 20]);
        assert_eq!(integers("34"), vec![34]);
        assert!(integers("").is_empty());
    }

    #[test]
    fn counters_map_to_rows() {
        let t = SensorTable {
            path: PathBuf::new(),
            frame_counters: vec![5, 6, 8, 9],
            samples: vec![0.0; 36],
        };
        assert_eq!(t.row_of_counter(0), Some(0));
        assert_eq!(t.row_of_counter(7), Some(2));
        assert_eq!(t.row_of_counter(9), Some(3));
        assert_eq!(t.row_of_counter(10), None);
    }
}
