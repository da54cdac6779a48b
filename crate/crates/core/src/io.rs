//! CSV formats for sample sets and value tables.
//!
//! Sample files have the header `x1..xn,u1..um,y1..yn` and one transition
//! per row. Floats are written with 17 significant digits, so a write/read
//! cycle reproduces every value bit for bit. All writes go to a temporary
//! file in the destination directory and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::embedding::{SampleMeta, SampleSet};
use crate::error::{ReachError, Result};
use crate::points::Points;
use crate::reach::ValueField;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(s: &str, line: usize, column: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| ReachError::Input(format!("line {line}, column {column}: cannot parse {s:?} as a number")))
}

/// Writes `bytes` to `path` via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| ReachError::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| ReachError::Io(std::io::Error::other(e.to_string())))
}

fn numbered(prefix: &str, count: usize, start: usize) -> impl Iterator<Item = String> + '_ {
    (start..start + count).map(move |i| format!("{prefix}{i}"))
}

pub fn sample_header(n: usize, m: usize) -> Vec<String> {
    numbered("x", n, 1)
        .chain(numbered("u", m, 1))
        .chain(numbered("y", n, 1))
        .collect()
}

pub fn samples_to_csv(samples: &SampleSet) -> Result<Vec<u8>> {
    let header = sample_header(samples.state_dim(), samples.control_dim());
    let rows = (0..samples.len()).map(|i| {
        samples
            .states()
            .row(i)
            .iter()
            .chain(samples.controls().row(i))
            .chain(samples.successors().row(i))
            .map(|v| format_float(*v))
            .collect()
    });
    csv_bytes(&header, rows)
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<()> {
    write_atomic(path, &samples_to_csv(samples)?)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Counts the leading `prefix1, prefix2, …` columns starting at `from`.
fn run_length(header: &[String], from: usize, prefix: &str, first: usize) -> usize {
    header[from..]
        .iter()
        .enumerate()
        .take_while(|(i, h)| **h == format!("{prefix}{}", i + first))
        .count()
}

pub fn samples_from_csv(header: &[String], rows: &[Vec<String>]) -> Result<SampleSet> {
    let n = run_length(header, 0, "x", 1);
    let m = run_length(header, n, "u", 1);
    let ny = run_length(header, n + m, "y", 1);
    if n == 0 || ny != n || header.len() != 2 * n + m {
        return Err(ReachError::Input(format!(
            "sample header must read x1..xn,u1..um,y1..yn; got {}",
            header.join(",")
        )));
    }
    if rows.is_empty() {
        return Err(ReachError::Input("sample file has no data rows".into()));
    }
    let mut xs = Vec::with_capacity(rows.len() * n);
    let mut us = Vec::with_capacity(rows.len() * m);
    let mut ys = Vec::with_capacity(rows.len() * n);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(ReachError::Input(format!(
                "line {}: expected {} fields, found {}",
                r + 2,
                header.len(),
                row.len()
            )));
        }
        for (c, cell) in row.iter().enumerate() {
            let v = parse_float(cell, r + 2, &header[c])?;
            if !v.is_finite() {
                return Err(ReachError::Input(format!("line {}: non-finite value in {}", r + 2, header[c])));
            }
            if c < n {
                xs.push(v);
            } else if c < n + m {
                us.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let controls = if m == 0 {
        Points::zero_dim(rows.len())
    } else {
        Points::new(m, us)?
    };
    SampleSet::new(Points::new(n, xs)?, controls, Points::new(n, ys)?, SampleMeta::default())
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let (header, rows) = read_table(path)?;
    samples_from_csv(&header, &rows)
}

/// Per-point values with optional oracle comparison columns.
///
/// Columns: `x1..xn, v0..vN`, then `oracle`, `abs_error`, `half_width`,
/// `choice0..choice{N-1}` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub points: Points,
    /// `values[k][j]` is `V_k` at `points[j]`.
    pub values: Vec<Vec<f64>>,
    pub oracle: Option<Vec<f64>>,
    pub abs_error: Option<Vec<f64>>,
    pub half_width: Option<Vec<f64>>,
    pub choices: Option<Vec<Vec<usize>>>,
}

impl ResultTable {
    pub fn new(points: Points, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self {
            points,
            values,
            oracle: None,
            abs_error: None,
            half_width: None,
            choices: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_field(field: &ValueField) -> Result<Self> {
        let mut t = Self::new(field.points.clone(), field.values.clone())?;
        t.choices = field.policy_choices.clone();
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.points.len();
        if self.values.is_empty() {
            return Err(ReachError::Input("result table has no value columns".into()));
        }
        let columns = self
            .values
            .iter()
            .chain(self.oracle.iter())
            .chain(self.abs_error.iter())
            .chain(self.half_width.iter());
        for col in columns {
            if col.len() != p {
                return Err(ReachError::dim(p, col.len(), "result column length"));
            }
        }
        for row in self.values.iter().chain(self.oracle.iter()) {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ReachError::Numerical(format!("value {v} outside [0, 1]")));
            }
        }
        if let Some(ch) = &self.choices {
            if ch.iter().any(|c| c.len() != p) {
                return Err(ReachError::Input("policy choice column length mismatch".into()));
            }
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = numbered("x", self.points.dim(), 1)
            .chain(numbered("v", self.values.len(), 0))
            .collect();
        if self.oracle.is_some() {
            h.push("oracle".into());
        }
        if self.abs_error.is_some() {
            h.push("abs_error".into());
        }
        if self.half_width.is_some() {
            h.push("half_width".into());
        }
        if let Some(c) = &self.choices {
            h.extend(numbered("choice", c.len(), 0));
        }
        h
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let rows = (0..self.len()).map(|j| {
            let mut row: Vec<String> = self.points.row(j).iter().map(|v| format_float(*v)).collect();
            row.extend(self.values.iter().map(|col| format_float(col[j])));
            for col in [&self.oracle, &self.abs_error, &self.half_width].into_iter().flatten() {
                row.push(format_float(col[j]));
            }
            if let Some(c) = &self.choices {
                row.extend(c.iter().map(|col| col[j].to_string()));
            }
            row
        });
        csv_bytes(&self.header(), rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = read_table(path)?;
        let n = run_length(&header, 0, "x", 1);
        let k = run_length(&header, n, "v", 0);
        if n == 0 || k == 0 {
            return Err(ReachError::Input(format!(
                "result header must start with x1..xn,v0..vN; got {}",
                header.join(",")
            )));
        }
        let mut pos = n + k;
        let mut take = |name: &str| {
            if header.get(pos).map(String::as_str) == Some(name) {
                pos += 1;
                Some(pos - 1)
            } else {
                None
            }
        };
        let oracle_col = take("oracle");
        let err_col = take("abs_error");
        let hw_col = take("half_width");
        let c = run_length(&header, pos, "choice", 0);
        if pos + c != header.len() {
            return Err(ReachError::Input(format!("unrecognized result columns in {}", header.join(","))));
        }
        if rows.is_empty() {
            return Err(ReachError::Input("result file has no data rows".into()));
        }
        let mut coords = Vec::with_capacity(rows.len() * n);
        let mut values = vec![Vec::with_capacity(rows.len()); k];
        let mut oracle = oracle_col.map(|_| Vec::with_capacity(rows.len()));
        let mut abs_error = err_col.map(|_| Vec::with_capacity(rows.len()));
        let mut half_width = hw_col.map(|_| Vec::with_capacity(rows.len()));
        let mut choices = (c > 0).then(|| vec![Vec::with_capacity(rows.len()); c]);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(ReachError::Input(format!(
                    "line {}: expected {} fields, found {}",
                    r + 2,
                    header.len(),
                    row.len()
                )));
            }
            let num = |i: usize| parse_float(&row[i], r + 2, &header[i]);
            for i in 0..n {
                coords.push(num(i)?);
            }
            for (kk, col) in values.iter_mut().enumerate() {
                col.push(num(n + kk)?);
            }
            for (col, idx) in [(&mut oracle, oracle_col), (&mut abs_error, err_col), (&mut half_width, hw_col)] {
                if let (Some(col), Some(i)) = (col.as_mut(), idx) {
                    col.push(num(i)?);
                }
            }
            if let Some(ch) = choices.as_mut() {
                for (kk, col) in ch.iter_mut().enumerate() {
                    let cell = &row[pos + kk];
                    col.push(cell.parse().map_err(|_| {
                        ReachError::Input(format!("line {}: bad control index {cell:?}", r + 2))
                    })?);
                }
            }
        }
        let t = Self {
            points: Points::new(n, coords)?,
            values,
            oracle,
            abs_error,
            half_width,
            choices,
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set(n: usize, m: usize, rows: usize, vals: &[f64]) -> SampleSet {
        let take = |off: usize, len: usize| -> Vec<f64> { (0..len).map(|i| vals[(off + i) % vals.len()]).collect() };
        let controls = if m == 0 {
            Points::zero_dim(rows)
        } else {
            Points::new(m, take(7, m * rows)).unwrap()
        };
        SampleSet::new(
            Points::new(n, take(0, n * rows)).unwrap(),
            controls,
            Points::new(n, take(3, n * rows)).unwrap(),
            SampleMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn header_format() {
        assert_eq!(sample_header(2, 1).join(","), "x1,x2,u1,y1,y2");
        assert_eq!(sample_header(1, 0).join(","), "x1,y1");
    }

    proptest! {
        #[test]
        fn sample_round_trip_is_exact(
            n in 1usize..4,
            m in 0usize..3,
            rows in 1usize..6,
            vals in proptest::collection::vec(-1e6f64..1e6, 1..40),
            tiny in proptest::num::f64::NORMAL,
        ) {
            let mut vals = vals;
            vals.push(tiny);
            let s = sample_set(n, m, rows, &vals);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            write_samples(&path, &s).unwrap();
            let back = read_samples(&path).unwrap();
            prop_assert_eq!(back.states(), s.states());
            prop_assert_eq!(back.controls(), s.controls());
            prop_assert_eq!(back.successors(), s.successors());
        }
    }

    #[test]
    fn bad_sample_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "x1,u1,y2\n1,2,3\n",
            "x1,x2,u1,y1,y2\n",
            "x1,u1,y1\n1,2\n",
            "x1,u1,y1\n1,abc,3\n",
            "x1,u1,y1\n1,NaN,3\n",
        ];
        for (i, body) in cases.iter().enumerate() {
            let p = dir.path().join(format!("bad{i}.csv"));
            fs::write(&p, body).unwrap();
            assert!(read_samples(&p).is_err(), "case {i} accepted");
        }
        assert!(matches!(read_samples(&dir.path().join("missing.csv")), Err(ReachError::Csv(_) | ReachError::Io(_))));
    }

    #[test]
    fn result_table_round_trip() {
        let pts = Points::from_rows(&[[0.0, 0.5], [1.0, -0.25]]).unwrap();
        let mut t = ResultTable::new(pts, vec![vec![0.25, 0.0], vec![1.0, 0.0]]).unwrap();
        t.oracle = Some(vec![0.3, 0.0]);
        t.abs_error = Some(vec![0.05, 0.0]);
        t.choices = Some(vec![vec![2, 0]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        t.write(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x1,x2,v0,v1,oracle,abs_error,choice0\n"));
        assert_eq!(ResultTable::read(&p).unwrap(), t);
        assert!(ResultTable::new(Points::from_rows(&[[0.0]]).unwrap(), vec![vec![1.5]]).is_err());
    }
}
