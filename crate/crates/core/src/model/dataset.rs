use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, structural, Error, Result};
use crate::io::fmt17;

/// One observation as it appears in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub subj: i64,
    pub item: Option<i64>,
    pub x: f64,
    pub rt: f64,
}

/// One observation with subject and item ids remapped to `0..S` and `0..I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub subj: usize,
    pub item: Option<usize>,
    pub x: f64,
    pub rt: f64,
}

/// A design cell without a response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub subj: usize,
    pub item: Option<usize>,
    pub x: f64,
}

/// Response-time observations with sum-coded condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<Row>,
    n_subjects: usize,
    n_items: usize,
    subject_ids: Vec<i64>,
    item_ids: Vec<i64>,
}

fn check_x(x: f64) -> Result<()> {
    if x == 1.0 || x == -1.0 {
        Ok(())
    } else {
        Err(domain(format!("condition code must be -1 or +1, got {x}")))
    }
}

fn check_rt(rt: f64) -> Result<()> {
    if rt > 0.0 && rt.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("response time must be positive and finite, got {rt}")))
    }
}

impl Dataset {
    /// Validates raw rows and remaps ids to contiguous indices (ascending id order).
    pub fn from_raw(raw: &[RawRow]) -> Result<Self> {
        if raw.is_empty() {
            return Err(structural("dataset has no rows"));
        }
        let has_items = raw[0].item.is_some();
        let mut subj_map = BTreeMap::new();
        let mut item_map = BTreeMap::new();
        for r in raw {
            check_x(r.x)?;
            check_rt(r.rt)?;
            if r.item.is_some() != has_items {
                return Err(structural("item column must be present for every row or for none"));
            }
            subj_map.insert(r.subj, 0usize);
            if let Some(i) = r.item {
                item_map.insert(i, 0usize);
            }
        }
        for (k, v) in subj_map.values_mut().enumerate() {
            *v = k;
        }
        for (k, v) in item_map.values_mut().enumerate() {
            *v = k;
        }
        let rows = raw
            .iter()
            .map(|r| Row { subj: subj_map[&r.subj], item: r.item.map(|i| item_map[&i]), x: r.x, rt: r.rt })
            .collect();
        Ok(Self {
            rows,
            n_subjects: subj_map.len(),
            n_items: item_map.len(),
            subject_ids: subj_map.keys().copied().collect(),
            item_ids: item_map.keys().copied().collect(),
        })
    }

    /// Attaches responses to a design skeleton; ids are the design indices.
    pub fn from_design(design: &[DesignRow], rts: &[f64]) -> Result<Self> {
        if design.len() != rts.len() {
            return Err(structural(format!("design has {} rows but {} responses were given", design.len(), rts.len())));
        }
        let raw: Vec<RawRow> = design
            .iter()
            .zip(rts)
            .map(|(d, &rt)| RawRow { subj: d.subj as i64, item: d.item.map(|i| i as i64), x: d.x, rt })
            .collect();
        Self::from_raw(&raw)
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn has_items(&self) -> bool {
        self.n_items > 0
    }

    pub fn subject_ids(&self) -> &[i64] {
        &self.subject_ids
    }

    pub fn item_ids(&self) -> &[i64] {
        &self.item_ids
    }

    /// The design skeleton (rows without responses).
    pub fn design(&self) -> Vec<DesignRow> {
        self.rows.iter().map(|r| DesignRow { subj: r.subj, item: r.item, x: r.x }).collect()
    }

    /// Same design with new responses.
    pub fn with_rts(&self, rts: &[f64]) -> Result<Self> {
        if rts.len() != self.rows.len() {
            return Err(structural("response vector length does not match the dataset"));
        }
        for &rt in rts {
            check_rt(rt)?;
        }
        let mut out = self.clone();
        for (row, &rt) in out.rows.iter_mut().zip(rts) {
            row.rt = rt;
        }
        Ok(out)
    }

    pub fn rts(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rt).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let subj = col("subj").ok_or_else(|| structural("missing column `subj`"))?;
        let x = col("x").ok_or_else(|| structural("missing column `x`"))?;
        let rt = col("rt").ok_or_else(|| structural("missing column `rt`"))?;
        let item = col("item");
        let parse_f = |s: &str, what: &str, line: usize| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse(format!("line {line}: cannot parse {what} `{s}`")))
        };
        let parse_i = |s: &str, what: &str, line: usize| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::Parse(format!("line {line}: cannot parse {what} `{s}`")))
        };
        let mut raw = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let get = |i: usize| rec.get(i).unwrap_or("");
            raw.push(RawRow {
                subj: parse_i(get(subj), "subj", line)?,
                item: match item {
                    Some(i) => Some(parse_i(get(i), "item", line)?),
                    None => None,
                },
                x: parse_f(get(x), "x", line)?,
                rt: parse_f(get(rt), "rt", line)?,
            });
        }
        Self::from_raw(&raw)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes `subj,item,x,rt` (item omitted when absent) with original ids
    /// and full-precision response times.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.has_items() {
            w.write_record(["subj", "item", "x", "rt"])?;
        } else {
            w.write_record(["subj", "x", "rt"])?;
        }
        for r in &self.rows {
            let subj = self.subject_ids[r.subj].to_string();
            let x = format!("{}", r.x as i64);
            let rt = fmt17(r.rt);
            match r.item {
                Some(i) => w.write_record([subj, self.item_ids[i].to_string(), x, rt])?,
                None => w.write_record([subj, x, rt])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
