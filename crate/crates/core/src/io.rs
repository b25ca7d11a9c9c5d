//! CSV interchange.
//!
//! Population files carry the header `unit_id,y1,y0[,stratum][,cluster]`;
//! observed-data files carry `unit_id,z,yobs[,stratum][,cluster]`. Outcomes
//! are parsed as exact decimals and written back losslessly (`p/q` when the
//! value has no terminating decimal form), so a read-write-read cycle
//! reproduces the population exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;

use crate::design::{Assignment, Design, Layout};
use crate::error::{Error, Result};
use crate::estimator::ObservedData;
use crate::population::{FinitePopulation, Outcome, Unit};
use crate::scalar::{format_exact, parse_decimal};

struct Columns {
    id: usize,
    first: usize,
    second: usize,
    stratum: Option<usize>,
    cluster: Option<usize>,
}

fn columns(header: &StringRecord, first: &str, second: &str) -> Result<Columns> {
    let expected = format!("unit_id,{first},{second}[,stratum][,cluster]");
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    for h in header.iter() {
        if !["unit_id", first, second, "stratum", "cluster"].contains(&h.trim()) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unknown column {h:?}; expected header {expected}"),
            });
        }
    }
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::Parse {
            line: 1,
            reason: format!("missing column {name:?}; expected header {expected}"),
        })
    };
    Ok(Columns {
        id: need("unit_id")?,
        first: need(first)?,
        second: need(second)?,
        stratum: find("stratum"),
        cluster: find("cluster"),
    })
}

struct Row {
    line: usize,
    id: String,
    first: String,
    second: String,
    stratum: Option<String>,
    cluster: Option<String>,
}

fn rows<R: Read>(reader: R, first: &str, second: &str) -> Result<Vec<Row>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = csv.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let cols = columns(&header, first, second)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let id = record[cols.id].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, reason: "empty unit_id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse { line, reason: format!("duplicate unit_id {id:?}") });
        }
        out.push(Row {
            line,
            first: record[cols.first].to_string(),
            second: record[cols.second].to_string(),
            stratum: cols.stratum.map(|c| record[c].to_string()),
            cluster: cols.cluster.map(|c| record[c].to_string()),
            id,
        });
    }
    Ok(out)
}

fn number(row: &Row, column: &str, text: &str) -> Result<Outcome> {
    parse_decimal(text).map(Outcome::Exact).map_err(|e| Error::Parse {
        line: row.line,
        reason: format!("unit {:?}, column {column}: {e}", row.id),
    })
}

fn label(row: &Row, column: &str, value: &Option<String>) -> Result<Option<String>> {
    match value {
        Some(v) if v.is_empty() => Err(Error::Parse {
            line: row.line,
            reason: format!("unit {:?}: empty {column} label", row.id),
        }),
        other => Ok(other.clone()),
    }
}

pub fn read_population<R: Read>(reader: R) -> Result<FinitePopulation> {
    let mut units = Vec::new();
    for row in rows(reader, "y1", "y0")? {
        let mut unit = Unit::new(row.id.clone(), number(&row, "y1", &row.first)?, number(&row, "y0", &row.second)?);
        unit.stratum = label(&row, "stratum", &row.stratum)?;
        unit.cluster = label(&row, "cluster", &row.cluster)?;
        units.push(unit);
    }
    FinitePopulation::new(units)
}

pub fn read_population_file(path: &Path) -> Result<FinitePopulation> {
    read_population(File::open(path)?)
}

pub fn format_outcome(y: &Outcome) -> String {
    match y {
        Outcome::Exact(q) => format_exact(q),
        Outcome::Float(x) => x.to_string(),
    }
}

pub fn write_population<W: Write>(writer: W, pop: &FinitePopulation) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let strata = pop.strata().is_some();
    let clusters = pop.clusters().is_some();
    let mut header = vec!["unit_id", "y1", "y0"];
    if strata {
        header.push("stratum");
    }
    if clusters {
        header.push("cluster");
    }
    csv.write_record(&header)?;
    for u in pop.units() {
        let mut row = vec![u.id.clone(), format_outcome(&u.y1), format_outcome(&u.y0)];
        row.extend(u.stratum.clone());
        row.extend(u.cluster.clone());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Rows of an observed-data file, before a design is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedRows {
    pub ids: Vec<String>,
    pub z: Assignment,
    pub yobs: Vec<Outcome>,
    pub strata: Option<Vec<String>>,
    pub clusters: Option<Vec<String>>,
}

impl ObservedRows {
    /// Resolves `design` against the file's labels and validates `z`.
    pub fn with_design(&self, design: &Design) -> Result<ObservedData> {
        let layout = Layout::resolve(design, self.ids.len(), self.strata.as_deref(), self.clusters.as_deref())?;
        ObservedData::new(layout, self.z.clone(), self.yobs.clone())
    }
}

fn all_or_none(values: Vec<Option<String>>, column: &'static str) -> Result<Option<Vec<String>>> {
    let present = values.iter().filter(|v| v.is_some()).count();
    if present == 0 {
        Ok(None)
    } else if present == values.len() {
        Ok(Some(values.into_iter().flatten().collect()))
    } else {
        Err(Error::PartialLabels { label: column })
    }
}

pub fn read_observed<R: Read>(reader: R) -> Result<ObservedRows> {
    let rows = rows(reader, "z", "yobs")?;
    if rows.len() < 2 {
        return Err(Error::TooFewUnits(rows.len()));
    }
    let mut z = Vec::with_capacity(rows.len());
    let mut yobs = Vec::with_capacity(rows.len());
    let mut strata = Vec::with_capacity(rows.len());
    let mut clusters = Vec::with_capacity(rows.len());
    for row in &rows {
        z.push(match row.first.as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line: row.line,
                    reason: format!("unit {:?}: z must be 0 or 1, got {other:?}", row.id),
                })
            }
        });
        yobs.push(number(row, "yobs", &row.second)?);
        strata.push(label(row, "stratum", &row.stratum)?);
        clusters.push(label(row, "cluster", &row.cluster)?);
    }
    Ok(ObservedRows {
        ids: rows.into_iter().map(|r| r.id).collect(),
        z: Assignment::new(z),
        yobs,
        strata: all_or_none(strata, "stratum")?,
        clusters: all_or_none(clusters, "cluster")?,
    })
}

pub fn read_observed_file(path: &Path) -> Result<ObservedRows> {
    read_observed(File::open(path)?)
}

/// One marginal sample: a single column of decimals, with an optional
/// non-numeric header line.
pub fn read_marginal<R: Read>(mut reader: R) -> Result<Vec<Outcome>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        match parse_decimal(field) {
            Ok(q) => values.push(Outcome::Exact(q)),
            Err(_) if values.is_empty() && i == 0 => continue,
            Err(e) => return Err(Error::Parse { line: i + 1, reason: e.to_string() }),
        }
    }
    Ok(values)
}

pub fn read_marginal_file(path: &Path) -> Result<Vec<Outcome>> {
    read_marginal(File::open(path)?)
}
