//! Evaluation records, their canonical ordering, and persistence as
//! line-delimited JSON (lossless) and CSV (9 significant digits).

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::error::{Error, Result};

/// One attacked grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub video_id: String,
    /// Campaign label of the attack configuration.
    pub attack: String,
    pub attack_kind: AttackKind,
    pub white_box_metric: String,
    pub epsilon: f64,
    pub iterations: usize,
    pub clean_score: f64,
    pub attacked_score: Option<f64>,
    pub error: Option<String>,
}

/// Identity of a grid cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub video_id: String,
    pub attack: String,
    pub white_box_metric: String,
    pub epsilon_bits: u64,
    pub iterations: usize,
}

impl Record {
    pub fn key(&self) -> CellKey {
        CellKey {
            video_id: self.video_id.clone(),
            attack: self.attack.clone(),
            white_box_metric: self.white_box_metric.clone(),
            epsilon_bits: self.epsilon.to_bits(),
            iterations: self.iterations,
        }
    }
}

fn sort_key(r: &Record) -> (String, String, String, u64, usize) {
    // Non-negative floats order like their bit patterns.
    (
        r.attack.clone(),
        r.white_box_metric.clone(),
        r.video_id.clone(),
        r.epsilon.to_bits(),
        r.iterations,
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationTable {
    pub records: Vec<Record>,
    pub grid_epsilons: Vec<f64>,
    pub grid_iterations: Vec<usize>,
}

impl EvaluationTable {
    /// Builds a table in canonical order; the grids are the sorted distinct
    /// values present unless given explicitly.
    pub fn new(mut records: Vec<Record>) -> Self {
        records.sort_by_key(sort_key);
        let eps: BTreeSet<u64> = records.iter().map(|r| r.epsilon.to_bits()).collect();
        let its: BTreeSet<usize> = records.iter().map(|r| r.iterations).collect();
        Self {
            records,
            grid_epsilons: eps.into_iter().map(f64::from_bits).collect(),
            grid_iterations: its.into_iter().collect(),
        }
    }

    pub fn with_grids(records: Vec<Record>, mut epsilons: Vec<f64>, mut iterations: Vec<usize>) -> Self {
        let mut t = Self::new(records);
        epsilons.sort_by(f64::total_cmp);
        epsilons.dedup();
        iterations.sort_unstable();
        iterations.dedup();
        t.grid_epsilons = epsilons;
        t.grid_iterations = iterations;
        t
    }

    /// Distinct attack labels in canonical order.
    pub fn attacks(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.attack.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn videos(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.video_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(read_records(path.as_ref(), false)?))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        w.write_record([
            "video_id",
            "attack",
            "attack_kind",
            "white_box_metric",
            "epsilon",
            "iterations",
            "clean_score",
            "attacked_score",
            "error",
        ])
        .map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.video_id.clone(),
                r.attack.clone(),
                r.attack_kind.to_string(),
                r.white_box_metric.clone(),
                fmt_sig(r.epsilon),
                r.iterations.to_string(),
                fmt_sig(r.clean_score),
                r.attacked_score.map(fmt_sig).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
            records.push(Record {
                video_id: row.video_id,
                attack: row.attack,
                attack_kind: row.attack_kind.parse()?,
                white_box_metric: row.white_box_metric,
                epsilon: row.epsilon,
                iterations: row.iterations,
                clean_score: row.clean_score,
                attacked_score: row.attacked_score,
                error: row.error.filter(|e| !e.is_empty()),
            });
        }
        Ok(Self::new(records))
    }
}

#[derive(Deserialize)]
struct CsvRow {
    video_id: String,
    attack: String,
    attack_kind: String,
    white_box_metric: String,
    epsilon: f64,
    iterations: usize,
    clean_score: f64,
    attacked_score: Option<f64>,
    error: Option<String>,
}

/// Formats with 9 significant digits, then as the shortest string that
/// reads back to that rounded value.
pub fn fmt_sig(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

fn read_records(path: &Path, tolerate_torn_tail: bool) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            // An interrupted append can leave a partial final line.
            Err(_) if tolerate_torn_tail && i == last => {
                log::warn!("{}: ignoring torn final record", path.display());
            }
            Err(e) => return Err(Error::Serde(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Append-only record log that lets interrupted grids resume.
pub struct Journal {
    path: PathBuf,
    file: File,
    done: BTreeSet<CellKey>,
    records: Vec<Record>,
}

impl Journal {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let records = if path.exists() {
            read_records(&path, true)?
        } else {
            Vec::new()
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // Drop a torn tail so the next append starts on a fresh line.
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if !text.is_empty() && !text.ends_with('\n') {
            let keep: String = records
                .iter()
                .map(|r| serde_json::to_string(r).map(|s| s + "\n"))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Serde(e.to_string()))?;
            std::fs::write(&path, keep).map_err(|e| Error::io(&path, e))?;
            file = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
        }
        let done = records.iter().map(Record::key).collect();
        Ok(Self {
            path,
            file,
            done,
            records,
        })
    }

    pub fn contains(&self, key: &CellKey) -> bool {
        self.done.contains(key)
    }

    pub fn append(&mut self, record: Record) -> Result<()> {
        let line = serde_json::to_string(&record).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.done.insert(record.key());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(video: &str, eps: f64, it: usize, score: f64) -> Record {
        Record {
            video_id: video.into(),
            attack: "a".into(),
            attack_kind: AttackKind::Ic2vqa,
            white_box_metric: "m".into(),
            epsilon: eps,
            iterations: it,
            clean_score: 0.5,
            attacked_score: Some(score),
            error: None,
        }
    }

    #[test]
    fn canonical_order_and_grids() {
        let t = EvaluationTable::new(vec![rec("b", 0.2, 1, 0.1), rec("a", 0.1, 2, 0.2), rec("a", 0.1, 1, 0.3)]);
        assert_eq!(t.records[0].video_id, "a");
        assert_eq!(t.records[0].iterations, 1);
        assert_eq!(t.grid_epsilons, vec![0.1, 0.2]);
        assert_eq!(t.grid_iterations, vec![1, 2]);
    }

    #[test]
    fn jsonl_is_lossless_and_csv_keeps_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let t = EvaluationTable::new(vec![rec("v", 1.0 / 255.0, 1, 0.123_456_789_123)]);
        t.write_jsonl(dir.path().join("t.jsonl")).unwrap();
        assert_eq!(EvaluationTable::read_jsonl(dir.path().join("t.jsonl")).unwrap(), t);
        t.write_csv(dir.path().join("t.csv")).unwrap();
        let back = EvaluationTable::read_csv(dir.path().join("t.csv")).unwrap();
        let s = back.records[0].attacked_score.unwrap();
        assert!((s - 0.123_456_789_123).abs() < 1e-9);
    }

    #[test]
    fn fmt_sig_rounds_to_nine_digits() {
        assert_eq!(fmt_sig(0.123_456_789_49), "0.123456789");
        assert_eq!(fmt_sig(1.0), "1");
    }

    #[test]
    fn journal_resumes_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        {
            let mut j = Journal::open(&path).unwrap();
            j.append(rec("v", 0.1, 1, 0.2)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"video_id\": \"v\", \"att").unwrap();
        drop(f);
        let mut j = Journal::open(&path).unwrap();
        assert_eq!(j.records().len(), 1);
        assert!(j.contains(&rec("v", 0.1, 1, 0.0).key()));
        j.append(rec("v", 0.2, 1, 0.3)).unwrap();
        let j = Journal::open(&path).unwrap();
        assert_eq!(j.records().len(), 2);
    }
}
