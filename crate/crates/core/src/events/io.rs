//! CSV and JSONL event files.
//!
//! CSV: header `seq_id,time,type`, rows grouped by `seq_id`, times ascending
//! within a group. JSONL: one `{"id": ..., "times": [...], "types": [...]}`
//! object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde_json::{json, Value};

use super::EventSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::Config(format!("unknown event file format {other:?}"))),
        }
    }
}

/// Maps external string labels to dense type ids, one label per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    labels: Vec<String>,
}

impl Vocabulary {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Config(format!("duplicate vocabulary label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Number of types; inferred as `max type + 1` when absent.
    pub num_types: Option<usize>,
    /// When present, the type column holds labels from this vocabulary.
    pub vocab: Option<Vocabulary>,
}

struct Raw {
    id: String,
    times: Vec<f64>,
    types: Vec<usize>,
    line: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_type(path: &Path, line: usize, field: &str, opts: &LoadOptions) -> Result<usize> {
    let field = field.trim();
    if let Some(v) = &opts.vocab {
        return v
            .id(field)
            .ok_or_else(|| parse_err(path, line, format!("unknown type label {field:?}")));
    }
    let k: usize = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("unknown type id {field:?}")))?;
    if let Some(n) = opts.num_types {
        if k >= n {
            return Err(parse_err(path, line, format!("unknown type id {k} (num_types = {n})")));
        }
    }
    Ok(k)
}

fn parse_time(path: &Path, line: usize, field: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(t) if t.is_finite() => Ok(t),
        _ => Err(parse_err(path, line, format!("invalid time {field:?}"))),
    }
}

fn read_csv(path: &Path, opts: &LoadOptions) -> Result<Vec<Raw>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != ["seq_id", "time", "type"] {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header seq_id,time,type, got {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    let mut out: Vec<Raw> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        let t = parse_time(path, line, &rec[1])?;
        let k = parse_type(path, line, &rec[2], opts)?;
        match out.last_mut() {
            Some(cur) if cur.id == id => {
                let prev = *cur.times.last().expect("group has a row");
                if t < prev {
                    return Err(parse_err(
                        path,
                        line,
                        format!("time {t} precedes previous time {prev} in sequence {id}"),
                    ));
                }
                cur.times.push(t);
                cur.types.push(k);
            }
            _ => {
                if let Some(cur) = out.last() {
                    finished.insert(cur.id.clone());
                }
                if finished.contains(&id) {
                    return Err(parse_err(
                        path,
                        line,
                        format!("rows of sequence {id} are not contiguous"),
                    ));
                }
                out.push(Raw {
                    id,
                    times: vec![t],
                    types: vec![k],
                    line,
                });
            }
        }
    }
    Ok(out)
}

fn read_jsonl(path: &Path, opts: &LoadOptions) -> Result<Vec<Raw>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let id = match v.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(parse_err(path, line_no, "missing or invalid \"id\"")),
        };
        let times = v
            .get("times")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(path, line_no, "missing \"times\" array"))?;
        let types = v
            .get("types")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(path, line_no, "missing \"types\" array"))?;
        if times.len() != types.len() {
            return Err(parse_err(path, line_no, "times and types differ in length"));
        }
        let mut raw = Raw {
            id,
            times: Vec::with_capacity(times.len()),
            types: Vec::with_capacity(types.len()),
            line: line_no,
        };
        for (t, k) in times.iter().zip(types) {
            let t = t
                .as_f64()
                .filter(|t| t.is_finite())
                .ok_or_else(|| parse_err(path, line_no, format!("invalid time {t}")))?;
            if let Some(&prev) = raw.times.last() {
                if t < prev {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("time {t} precedes previous time {prev} in sequence {}", raw.id),
                    ));
                }
            }
            let field = match k {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            raw.times.push(t);
            raw.types.push(parse_type(path, line_no, &field, opts)?);
        }
        out.push(raw);
    }
    Ok(out)
}

/// Nudges tied timestamps forward by `1e-9 x` the sequence's mean gap so
/// every sequence is strictly increasing. Returns the number of nudges.
fn break_ties(times: &mut [f64]) -> usize {
    let n = times.len();
    if n < 2 {
        return 0;
    }
    let mean_gap = (times[n - 1] - times[0]) / (n - 1) as f64;
    let eps = if mean_gap > 0.0 { 1e-9 * mean_gap } else { 1e-9 };
    let mut nudged = 0;
    for i in 1..n {
        if times[i] <= times[i - 1] {
            times[i] = times[i - 1] + eps;
            nudged += 1;
        }
    }
    nudged
}

/// Reads and validates event sequences. Times must already be sorted within
/// each sequence; they are never re-sorted.
pub fn load_sequences(path: &Path, format: Format, opts: &LoadOptions) -> Result<Vec<EventSequence>> {
    let raws = match format {
        Format::Csv => read_csv(path, opts)?,
        Format::Jsonl => read_jsonl(path, opts)?,
    };
    if raws.is_empty() {
        warn!("{}: no event sequences found", path.display());
        return Ok(Vec::new());
    }
    let num_types = match (&opts.vocab, opts.num_types) {
        (Some(v), _) => v.len(),
        (None, Some(n)) => n,
        (None, None) => raws.iter().flat_map(|r| r.types.iter()).max().map_or(1, |m| m + 1),
    };
    let mut out = Vec::with_capacity(raws.len());
    for mut r in raws {
        let nudged = break_ties(&mut r.times);
        if nudged > 0 {
            warn!(
                "{}:{}: sequence {} has {nudged} duplicate timestamp(s); later events nudged forward",
                path.display(),
                r.line,
                r.id
            );
        }
        out.push(EventSequence::new(r.id, r.times, r.types, num_types)?);
    }
    Ok(out)
}

pub fn write_sequences(path: &Path, format: Format, seqs: &[EventSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(PathBuf::from(path), e);
    match format {
        Format::Csv => {
            writeln!(w, "seq_id,time,type").map_err(io_err)?;
            for s in seqs {
                for (t, k) in s.times.iter().zip(&s.types) {
                    writeln!(w, "{},{t},{k}", s.id).map_err(io_err)?;
                }
            }
        }
        Format::Jsonl => {
            for s in seqs {
                let v = json!({"id": s.id, "times": s.times, "types": s.types});
                writeln!(w, "{v}").map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "seq_id,time,type\n0,0.0,1\n0,2.5,0\n");
        let seqs = load_sequences(&p, Format::Csv, &LoadOptions::default()).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].times, vec![0.0, 2.5]);
        assert_eq!(seqs[0].types, vec![1, 0]);
        assert_eq!(seqs[0].num_types, 2);
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "");
        assert!(load_sequences(&p, Format::Csv, &LoadOptions::default())
            .unwrap()
            .is_empty());
        let p = write(&dir, "e.jsonl", "");
        assert!(load_sequences(&p, Format::Jsonl, &LoadOptions::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn time_regression_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "seq_id,time,type\n0,1.0,0\n0,3.0,0\n0,2.0,1\n");
        let err = load_sequences(&p, Format::Csv, &LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_type_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "seq_id,time,type\n0,1.0,0\n0,3.0,7\n");
        let opts = LoadOptions {
            num_types: Some(3),
            vocab: None,
        };
        assert!(matches!(
            load_sequences(&p, Format::Csv, &opts),
            Err(Error::Parse { line: 3, .. })
        ));
        let p = write(&dir, "n.csv", "seq_id,time,type\n0,1.0,-1\n");
        assert!(load_sequences(&p, Format::Csv, &LoadOptions::default()).is_err());
    }

    #[test]
    fn non_contiguous_groups_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "g.csv", "seq_id,time,type\na,1,0\nb,1,0\na,2,0\n");
        assert!(load_sequences(&p, Format::Csv, &LoadOptions::default()).is_err());
    }

    #[test]
    fn duplicates_are_nudged() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "seq_id,time,type\n0,0,0\n0,1,0\n0,1,0\n0,2,0\n");
        let s = &load_sequences(&p, Format::Csv, &LoadOptions::default()).unwrap()[0];
        assert!(s.times.windows(2).all(|w| w[1] > w[0]));
        assert!((s.times[2] - 1.0 - 1e-9 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jsonl_with_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "v.jsonl",
            "{\"id\":7,\"times\":[0,1.5],\"types\":[\"b\",\"a\"]}\n",
        );
        let opts = LoadOptions {
            num_types: None,
            vocab: Some(Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap()),
        };
        let s = &load_sequences(&p, Format::Jsonl, &opts).unwrap()[0];
        assert_eq!(s.id, "7");
        assert_eq!(s.types, vec![1, 0]);
        assert_eq!(s.num_types, 3);
    }

    #[test]
    fn write_then_load_matches() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = vec![
            EventSequence::new("0", vec![0.0, 0.1, 1.0 / 3.0], vec![0, 2, 1], 3).unwrap(),
            EventSequence::new("1", vec![5.0, 7.25], vec![2, 2], 3).unwrap(),
        ];
        for fmt in [Format::Csv, Format::Jsonl] {
            let p = dir.path().join("out");
            write_sequences(&p, fmt, &seqs).unwrap();
            let back = load_sequences(&p, fmt, &LoadOptions::default()).unwrap();
            assert_eq!(back, seqs);
        }
    }
}
