//! Long-format intensive longitudinal data: per-record mediator
//! observations joined to subject-level treatment, covariates, and
//! outcome.

use std::collections::HashMap;
use std::io;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Subject-level variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub treatment: f64,
    pub covariates: Vec<f64>,
    pub outcome: f64,
}

/// One mediator observation; `subject` indexes into the dataset's
/// subject list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediatorRecord {
    pub subject: usize,
    pub time: f64,
    pub value: f64,
}

/// Long-format dataset. Records are kept sorted by subject and time;
/// subjects may have differing record counts and irregular times, and a
/// subject with zero records is legal (it is dropped by the minimum-
/// observations filter downstream).
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset {
    subjects: Vec<Subject>,
    records: Vec<MediatorRecord>,
    /// Half-open row ranges into `records`, one per subject.
    offsets: Vec<(usize, usize)>,
    t_min: f64,
    t_max: f64,
    n_covariates: usize,
}

impl LongDataset {
    /// Builds a dataset with the time range taken from the observed
    /// records.
    pub fn new(subjects: Vec<Subject>, records: Vec<MediatorRecord>) -> Result<Self> {
        let (t_min, t_max) = range_from_records(&records)?;
        Self::with_range(subjects, records, t_min, t_max)
    }

    /// Builds a dataset with an explicit time range; all record times
    /// must fall inside it.
    pub fn with_range(
        subjects: Vec<Subject>,
        mut records: Vec<MediatorRecord>,
        t_min: f64,
        t_max: f64,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidInput("dataset has no subjects".into()));
        }
        if !(t_min < t_max) {
            return Err(Error::InvalidInput(format!(
                "degenerate time range [{t_min}, {t_max}]"
            )));
        }
        let n_covariates = subjects[0].covariates.len();
        for s in &subjects {
            if s.covariates.len() != n_covariates {
                return Err(Error::DimensionMismatch(format!(
                    "subject {} has {} covariates, expected {n_covariates}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if !s.treatment.is_finite() || !s.outcome.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "subject {} has a non-finite treatment or outcome",
                    s.id
                )));
            }
        }
        for r in &records {
            if r.subject >= subjects.len() {
                return Err(Error::InvalidInput(format!(
                    "record references unknown subject index {}",
                    r.subject
                )));
            }
            if !r.time.is_finite() || !r.value.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "record for subject {} has a non-finite time or value",
                    subjects[r.subject].id
                )));
            }
            if r.time < t_min || r.time > t_max {
                return Err(Error::TimeOutOfRange {
                    time: r.time,
                    t_min,
                    t_max,
                });
            }
        }
        records.sort_by(|a, b| {
            a.subject
                .cmp(&b.subject)
                .then(a.time.partial_cmp(&b.time).expect("finite times"))
        });
        let offsets = build_offsets(subjects.len(), &records);
        Ok(Self {
            subjects,
            records,
            offsets,
            t_min,
            t_max,
            n_covariates,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn records(&self) -> &[MediatorRecord] {
        &self.records
    }

    pub fn records_for(&self, subject: usize) -> &[MediatorRecord] {
        let (lo, hi) = self.offsets[subject];
        &self.records[lo..hi]
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn treatment_vec(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.treatment).collect()
    }

    pub fn outcome_vec(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.outcome).collect()
    }

    pub fn covariate_matrix(&self) -> Array2<f64> {
        let mut c = Array2::zeros((self.subjects.len(), self.n_covariates));
        for (i, s) in self.subjects.iter().enumerate() {
            for (j, &v) in s.covariates.iter().enumerate() {
                c[[i, j]] = v;
            }
        }
        c
    }

    /// Drops subjects with fewer than `min_obs` records, keeping the
    /// original time range. Returns the filtered dataset and the dropped
    /// subject ids.
    pub fn filter_min_obs(&self, min_obs: usize) -> Result<(LongDataset, Vec<String>)> {
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for (i, s) in self.subjects.iter().enumerate() {
            if self.records_for(i).len() >= min_obs {
                keep.push(i);
            } else {
                dropped.push(s.id.clone());
            }
        }
        if keep.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no subjects remain after requiring at least {min_obs} observations"
            )));
        }
        let mut new_index = vec![usize::MAX; self.subjects.len()];
        let subjects: Vec<Subject> = keep
            .iter()
            .enumerate()
            .map(|(new_i, &old_i)| {
                new_index[old_i] = new_i;
                self.subjects[old_i].clone()
            })
            .collect();
        let records: Vec<MediatorRecord> = self
            .records
            .iter()
            .filter(|r| new_index[r.subject] != usize::MAX)
            .map(|r| MediatorRecord {
                subject: new_index[r.subject],
                time: r.time,
                value: r.value,
            })
            .collect();
        let filtered = LongDataset::with_range(subjects, records, self.t_min, self.t_max)?;
        Ok((filtered, dropped))
    }

    /// Resamples subjects with replacement; every record of a drawn
    /// subject moves with it. The time range is preserved so refits stay
    /// on the same interval.
    pub fn resample_subjects(&self, draw: &[usize]) -> Result<LongDataset> {
        let mut subjects = Vec::with_capacity(draw.len());
        let mut records = Vec::new();
        for (new_i, &old_i) in draw.iter().enumerate() {
            if old_i >= self.subjects.len() {
                return Err(Error::InvalidInput(format!(
                    "resample index {old_i} out of range"
                )));
            }
            subjects.push(self.subjects[old_i].clone());
            for r in self.records_for(old_i) {
                records.push(MediatorRecord {
                    subject: new_i,
                    time: r.time,
                    value: r.value,
                });
            }
        }
        LongDataset::with_range(subjects, records, self.t_min, self.t_max)
    }

    /// Number of distinct observation times across all records.
    pub fn n_distinct_times(&self) -> usize {
        let mut times: Vec<f64> = self.records.iter().map(|r| r.time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        times.len()
    }

    /// Mediator values as a vector aligned with `records()`.
    pub fn mediator_vec(&self) -> Array1<f64> {
        Array1::from_iter(self.records.iter().map(|r| r.value))
    }
}

fn range_from_records(records: &[MediatorRecord]) -> Result<(f64, f64)> {
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for r in records {
        t_min = t_min.min(r.time);
        t_max = t_max.max(r.time);
    }
    if !(t_min < t_max) {
        return Err(Error::InvalidInput(
            "records must span at least two distinct times".into(),
        ));
    }
    Ok((t_min, t_max))
}

fn build_offsets(n_subjects: usize, records: &[MediatorRecord]) -> Vec<(usize, usize)> {
    let mut offsets = vec![(0usize, 0usize); n_subjects];
    let mut i = 0;
    for s in 0..n_subjects {
        let lo = i;
        while i < records.len() && records[i].subject == s {
            i += 1;
        }
        offsets[s] = (lo, i);
    }
    offsets
}

/// Column names binding a long-format CSV to the dataset fields.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ColumnSpec {
    pub id: String,
    pub time: String,
    pub mediator: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            id: "subject_id".into(),
            time: "time".into(),
            mediator: "mediator".into(),
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            covariates: vec![],
        }
    }
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| Error::BadField {
        row,
        column: column.to_string(),
        message: format!("cannot parse '{raw}' as a number"),
    })
}

/// Reads a long-format CSV with a header row. One row per subject-time
/// record; subject-level columns are repeated on every row and must be
/// consistent within a subject. A row with an empty mediator cell
/// registers the subject without contributing a record (a subject with
/// no mediator data at all).
pub fn read_long_csv<R: io::Read>(reader: R, spec: &ColumnSpec) -> Result<LongDataset> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let id_idx = find_column(&headers, &spec.id)?;
    let time_idx = find_column(&headers, &spec.time)?;
    let med_idx = find_column(&headers, &spec.mediator)?;
    let trt_idx = find_column(&headers, &spec.treatment)?;
    let out_idx = find_column(&headers, &spec.outcome)?;
    let cov_idx: Vec<usize> = spec
        .covariates
        .iter()
        .map(|c| find_column(&headers, c))
        .collect::<Result<_>>()?;

    let mut subjects: Vec<Subject> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records: Vec<MediatorRecord> = Vec::new();

    for (row_number, row) in csv_reader.records().enumerate() {
        let row = row?;
        // Header is line 1; data rows start at 2.
        let line = row_number + 2;
        let id = row.get(id_idx).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::BadField {
                row: line,
                column: spec.id.clone(),
                message: "empty subject id".into(),
            });
        }
        let treatment = parse_field(&row, trt_idx, line, &spec.treatment)?;
        let outcome = parse_field(&row, out_idx, line, &spec.outcome)?;
        let covariates: Vec<f64> = cov_idx
            .iter()
            .zip(&spec.covariates)
            .map(|(&idx, name)| parse_field(&row, idx, line, name))
            .collect::<Result<_>>()?;

        let subject_idx = match index.get(&id) {
            Some(&i) => {
                let existing = &subjects[i];
                if existing.treatment != treatment
                    || existing.outcome != outcome
                    || existing.covariates != covariates
                {
                    return Err(Error::BadField {
                        row: line,
                        column: spec.id.clone(),
                        message: format!(
                            "subject {id} has inconsistent subject-level values across rows"
                        ),
                    });
                }
                i
            }
            None => {
                let i = subjects.len();
                index.insert(id.clone(), i);
                subjects.push(Subject {
                    id,
                    treatment,
                    covariates,
                    outcome,
                });
                i
            }
        };

        let mediator_raw = row.get(med_idx).unwrap_or("").trim();
        if mediator_raw.is_empty() {
            continue;
        }
        let value = parse_field(&row, med_idx, line, &spec.mediator)?;
        let time = parse_field(&row, time_idx, line, &spec.time)?;
        records.push(MediatorRecord {
            subject: subject_idx,
            time,
            value,
        });
    }

    LongDataset::new(subjects, records)
}

/// Writes the dataset in the long-format schema `read_long_csv` accepts.
/// Subjects without records get one row with empty time and mediator
/// cells so the round trip preserves them.
pub fn write_long_csv<W: io::Write>(
    writer: W,
    data: &LongDataset,
    spec: &ColumnSpec,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        spec.id.clone(),
        spec.time.clone(),
        spec.mediator.clone(),
        spec.treatment.clone(),
        spec.outcome.clone(),
    ];
    header.extend(spec.covariates.iter().cloned());
    w.write_record(&header)?;
    for (i, s) in data.subjects().iter().enumerate() {
        let records = data.records_for(i);
        let mut write_row = |time: Option<f64>, value: Option<f64>| -> Result<()> {
            let mut row = vec![
                s.id.clone(),
                time.map_or(String::new(), |t| format!("{t}")),
                value.map_or(String::new(), |v| format!("{v}")),
                format!("{}", s.treatment),
                format!("{}", s.outcome),
            ];
            row.extend(s.covariates.iter().map(|c| format!("{c}")));
            w.write_record(&row)?;
            Ok(())
        };
        if records.is_empty() {
            write_row(None, None)?;
        } else {
            for r in records {
                write_row(Some(r.time), Some(r.value))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
