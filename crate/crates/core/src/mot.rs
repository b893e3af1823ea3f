//! MOTChallenge text rows and the per-detection feature sidecar.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracklet::BBox;

/// One `frame,id,x,y,w,h,conf,...` row.
///
/// `raw` keeps the original text after the id column so rewritten files carry
/// the boxes byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct MotRow {
    pub frame: i64,
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    /// Position of this row among the rows of its frame, in file order.
    pub index: usize,
    pub raw: String,
}

impl MotRow {
    pub fn new(frame: i64, id: i64, bbox: BBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            bbox,
            conf,
            index: 0,
            raw: format!("{:.2},{:.2},{:.2},{:.2},{},-1,-1,-1", bbox.x, bbox.y, bbox.w, bbox.h, conf),
        }
    }
}

fn field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} `{}`", s.trim()),
    })
}

/// Parses MOTChallenge text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_mot(text: &str) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    let mut per_frame: HashMap<i64, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 6 columns, found {}", cols.len()),
            });
        }
        let frame: f64 = field(cols[0], line_no, "frame")?;
        let id: f64 = field(cols[1], line_no, "id")?;
        if frame.fract() != 0.0 || id.fract() != 0.0 {
            return Err(Error::Parse {
                line: line_no,
                msg: "frame and id must be integers".into(),
            });
        }
        let (frame, id) = (frame as i64, id as i64);
        let x: f64 = field(cols[2], line_no, "x")?;
        let y: f64 = field(cols[3], line_no, "y")?;
        let w: f64 = field(cols[4], line_no, "width")?;
        let h: f64 = field(cols[5], line_no, "height")?;
        let conf: f64 = match cols.get(6) {
            Some(c) => field(c, line_no, "confidence")?,
            None => 1.0,
        };
        if ![x, y, w, h, conf].iter().all(|v| v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: "non-finite value".into(),
            });
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("negative box size {w}x{h}"),
            });
        }
        if let Some(prev) = seen.insert((frame, id), line_no) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate row for frame {frame}, id {id} (first on line {prev})"),
            });
        }
        let slot = per_frame.entry(frame).or_default();
        let index = *slot;
        *slot += 1;
        let raw_start = cols[0].len() + cols[1].len() + 2;
        rows.push(MotRow {
            frame,
            id,
            bbox: BBox::new(x, y, w, h),
            conf,
            index,
            raw: line[raw_start..].to_string(),
        });
    }
    Ok(rows)
}

pub fn read_mot(path: &Path) -> Result<Vec<MotRow>> {
    parse_mot(&std::fs::read_to_string(path)?)
}

/// Serializes rows sorted by `(frame, id)`.
pub fn to_mot_string(rows: &[MotRow]) -> String {
    let mut order: Vec<&MotRow> = rows.iter().collect();
    order.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::new();
    for r in order {
        s.push_str(&format!("{},{},{}\n", r.frame, r.id, r.raw));
    }
    s
}

pub fn write_mot(path: &Path, rows: &[MotRow]) -> Result<()> {
    std::fs::write(path, to_mot_string(rows))?;
    Ok(())
}

/// Row indices per identity, each list ordered by frame.
pub fn group_by_id(rows: &[MotRow]) -> BTreeMap<i64, Vec<usize>> {
    let mut m: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        m.entry(r.id).or_default().push(i);
    }
    for v in m.values_mut() {
        v.sort_by_key(|&i| rows[i].frame);
    }
    m
}

/// Recomputes `index` from the current row order.
pub fn reindex(rows: &mut [MotRow]) {
    let mut per_frame: HashMap<i64, usize> = HashMap::new();
    for r in rows {
        let slot = per_frame.entry(r.frame).or_default();
        r.index = *slot;
        *slot += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: i64,
    pub index: usize,
    pub features: Vec<f32>,
}

/// Feature vectors keyed by `(frame, row index within frame)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    map: HashMap<(i64, usize), Vec<f32>>,
}

impl FeatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: i64, index: usize, features: Vec<f32>) {
        self.map.insert((frame, index), features);
    }

    pub fn get(&self, frame: i64, index: usize) -> Option<&Vec<f32>> {
        self.map.get(&(frame, index))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup(&self, row: &MotRow) -> Result<&Vec<f32>> {
        self.get(row.frame, row.index).ok_or(Error::MissingFeature {
            frame: row.frame,
            index: row.index,
        })
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut t = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
            t.insert(rec.frame, rec.index, rec.features);
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Writes records sorted by key.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut keys: Vec<_> = self.map.keys().copied().collect();
        keys.sort_unstable();
        for (frame, index) in keys {
            let rec = FeatureRecord {
                frame,
                index,
                features: self.map[&(frame, index)].clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAND: &str = "1,1,10,20,30,40,1,-1,-1,-1\n1,2,50,60,30,40,0.9,-1,-1,-1\n2,1,12,20,30,40,1,-1,-1,-1\n";

    #[test]
    fn hand_file_gives_two_tracks() {
        let rows = parse_mot(HAND).unwrap();
        let g = group_by_id(&rows);
        assert_eq!(g.len(), 2);
        let spans: Vec<Vec<i64>> = g.values().map(|v| v.iter().map(|&i| rows[i].frame).collect()).collect();
        assert_eq!(spans, vec![vec![1, 2], vec![1]]);
        assert_eq!(rows[1].index, 1);
        assert_eq!(rows[2].index, 0);
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let rows = parse_mot(HAND).unwrap();
        assert_eq!(to_mot_string(&rows), HAND);
        let shuffled: String = HAND.lines().rev().map(|l| format!("{l}\n")).collect();
        assert_eq!(to_mot_string(&parse_mot(&shuffled).unwrap()), HAND);
    }

    #[test]
    fn negative_width_reports_line() {
        let bad = "1,1,0,0,5,5,1\n\n3,1,0,0,-5,5,1\n";
        match parse_mot(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(parse_mot("1,1,0,0,5,5,1\n1,1,3,3,5,5,1\n").is_err());
        assert!(parse_mot("1,1,0,0,5\n").is_err());
        assert!(parse_mot("1,x,0,0,5,5\n").is_err());
    }

    #[test]
    fn feature_table_round_trip() {
        let mut t = FeatureTable::new();
        t.insert(2, 0, vec![0.5, 1.0]);
        t.insert(1, 1, vec![-0.25]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(FeatureTable::from_reader(&buf[..]).unwrap(), t);
    }
}
