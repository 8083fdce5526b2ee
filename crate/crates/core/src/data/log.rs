use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::AngleReport;
use crate::model::EpochRecord;

pub const LOG_COLUMNS: [&str; 10] = [
    "epoch",
    "train_loss",
    "train_acc",
    "test_acc",
    "intra_train_deg",
    "intra_test_deg",
    "inter_deg",
    "iir_train",
    "iir_test",
    "wall_ms",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Picks the format from a file extension; anything but `.jsonl` is CSV.
    pub fn from_path(path: &Path) -> LogFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn row(r: &EpochRecord) -> Vec<String> {
    let a = &r.angles;
    vec![
        r.epoch.to_string(),
        cell(Some(r.train_loss)),
        cell(Some(r.train_acc)),
        cell(r.test_acc),
        cell(Some(a.intra_train)),
        cell(a.intra_test),
        cell(Some(a.inter)),
        cell(Some(a.iir_train)),
        cell(a.iir_test),
        r.wall_ms.to_string(),
    ]
}

pub fn write_log(records: &[EpochRecord], path: &Path, format: LogFormat) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    match format {
        LogFormat::Csv => {
            writeln!(w, "{}", LOG_COLUMNS.join(",")).map_err(io)?;
            for r in records {
                writeln!(w, "{}", row(r).join(",")).map_err(io)?;
            }
        }
        LogFormat::Jsonl => {
            for r in records {
                let mut obj = serde_json::Map::new();
                for (k, v) in LOG_COLUMNS.iter().zip(row(r)) {
                    let val = if v.is_empty() {
                        serde_json::Value::Null
                    } else {
                        serde_json::from_str(&v).map_err(|e| Error::format(path, e.to_string()))?
                    };
                    obj.insert((*k).to_string(), val);
                }
                writeln!(w, "{}", serde_json::Value::Object(obj)).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn parse_fields(path: &Path, line_no: usize, get: impl Fn(usize) -> Option<String>) -> Result<EpochRecord> {
    let num = |i: usize| -> Result<Option<f64>> {
        match get(i) {
            None => Ok(None),
            Some(s) if s.is_empty() => Ok(None),
            Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
                Error::format(path, format!("line {line_no}, column {}: bad number {s:?}", LOG_COLUMNS[i]))
            }),
        }
    };
    let req = |i: usize| -> Result<f64> {
        num(i)?.ok_or_else(|| Error::format(path, format!("line {line_no}: missing {}", LOG_COLUMNS[i])))
    };
    Ok(EpochRecord {
        epoch: req(0)? as usize,
        train_loss: req(1)?,
        train_acc: req(2)?,
        test_acc: num(3)?,
        angles: AngleReport {
            intra_train: req(4)?,
            intra_test: num(5)?,
            inter: req(6)?,
            iir_train: req(7)?,
            iir_test: num(8)?,
        },
        wall_ms: req(9)? as u64,
    })
}

/// Reads a log written by [`write_log`]; the format follows the contents.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let Some(first) = lines.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    if first.trim_start().starts_with('{') {
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            out.push(parse_fields(path, i + 1, |c| {
                v.get(LOG_COLUMNS[c]).and_then(|x| match x {
                    serde_json::Value::Null => None,
                    other => Some(other.to_string()),
                })
            })?);
        }
    } else {
        let header: Vec<&str> = first.split(',').collect();
        if header != LOG_COLUMNS {
            return Err(Error::format(path, format!("unexpected header {first:?}")));
        }
        for (i, line) in lines.iter().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != LOG_COLUMNS.len() {
                return Err(Error::format(
                    path,
                    format!("line {}: expected {} cells, found {}", i + 1, LOG_COLUMNS.len(), cells.len()),
                ));
            }
            out.push(parse_fields(path, i + 1, |c| Some(cells[c].to_string()))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, test: bool) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.1 * epoch as f64 + 1.0 / 3.0,
            train_acc: 0.5,
            test_acc: test.then_some(0.25),
            angles: AngleReport {
                intra_train: 12.5,
                intra_test: test.then_some(14.0),
                inter: 60.0,
                iir_train: 12.5 / 60.0,
                iir_test: test.then_some(14.0 / 60.0),
            },
            wall_ms: 17,
        }
    }

    #[test]
    fn round_trips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record(1, true), record(2, false)];
        for (name, fmt) in [("log.csv", LogFormat::Csv), ("log.jsonl", LogFormat::Jsonl)] {
            let p = dir.path().join(name);
            write_log(&recs, &p, fmt).unwrap();
            assert_eq!(LogFormat::from_path(&p), fmt);
            assert_eq!(read_log(&p).unwrap(), recs);
        }
    }

    #[test]
    fn absent_values_are_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_log(&[record(1, false)], &p, LogFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let line = text.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[3], "");
        assert_eq!(cells[5], "");
        assert_eq!(cells[8], "");
        assert_eq!(text.lines().next().unwrap(), LOG_COLUMNS.join(","));
    }

    #[test]
    fn bad_cell_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        std::fs::write(&p, format!("{}\n1,x,0,,1,,1,1,,0\n", LOG_COLUMNS.join(","))).unwrap();
        let msg = read_log(&p).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("train_loss"), "{msg}");
    }
}
