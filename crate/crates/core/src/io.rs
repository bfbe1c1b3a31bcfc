//! CSV ingestion for panels and edge lists.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::EdgeRecord;
use crate::panel::{PanelDataset, RawPanel};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// A CSV file read fully into memory: header plus string records.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(path, io),
            other => csv_err(path, format!("{other:?}")),
        })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, format!("row {}: {e}", i + 1)))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

/// Indices of columns named `<prefix>1..<prefix>K`, in numeric order.
fn numbered_columns(path: &Path, header: &[String], prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(c, h)| {
            let rest = h.strip_prefix(prefix)?;
            rest.parse::<usize>().ok().map(|num| (num, c))
        })
        .collect();
    found.sort_unstable();
    for (expect, &(num, _)) in (1..).zip(&found) {
        if num != expect {
            return Err(csv_err(
                path,
                format!("columns {prefix}1..{prefix}{} are not contiguous (missing {prefix}{expect})", found.len()),
            ));
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

fn parse_cell<T: std::str::FromStr>(path: &Path, row: usize, col: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| {
        csv_err(
            path,
            format!("row {}, column {col}: cannot parse {s:?}", row + 1),
        )
    })
}

fn id_column(path: &Path, header: &[String]) -> Result<usize> {
    header
        .iter()
        .position(|h| h == "unit_id")
        .ok_or_else(|| csv_err(path, "missing unit_id column"))
}

/// Reads `unit_id,w1..wK,y1..yK,x1..xd`.
pub fn read_panel_csv(path: &Path) -> Result<RawPanel> {
    let t = read_table(path)?;
    let id = id_column(path, &t.header)?;
    let wc = numbered_columns(path, &t.header, 'w')?;
    let yc = numbered_columns(path, &t.header, 'y')?;
    let xc = numbered_columns(path, &t.header, 'x')?;
    if wc.is_empty() {
        return Err(csv_err(path, "no treatment columns w1..wK"));
    }
    let mut raw = RawPanel {
        k: wc.len(),
        d: xc.len(),
        ..Default::default()
    };
    if yc.len() != wc.len() {
        return Err(csv_err(
            path,
            format!("{} treatment columns but {} outcome columns", wc.len(), yc.len()),
        ));
    }
    for (r, row) in t.rows.iter().enumerate() {
        raw.unit_ids.push(row[id].clone());
        for &c in &wc {
            raw.w.push(parse_cell(path, r, &t.header[c], &row[c])?);
        }
        for &c in &yc {
            raw.y.push(parse_cell(path, r, &t.header[c], &row[c])?);
        }
        for &c in &xc {
            raw.x.push(parse_cell(path, r, &t.header[c], &row[c])?);
        }
    }
    Ok(raw)
}

/// Reads separate treatment, outcome and covariate files joined on
/// `unit_id`. Unit order follows the treatment file.
pub fn read_panel_split(treatments: &Path, outcomes: &Path, covariates: &Path) -> Result<RawPanel> {
    let tw = read_table(treatments)?;
    let ty = read_table(outcomes)?;
    let tx = read_table(covariates)?;
    let value_cols = |path: &Path, t: &Table| -> Result<(usize, Vec<usize>)> {
        let id = id_column(path, &t.header)?;
        Ok((id, (0..t.header.len()).filter(|&c| c != id).collect()))
    };
    let (wid, wc) = value_cols(treatments, &tw)?;
    let (yid, yc) = value_cols(outcomes, &ty)?;
    let (xid, xc) = value_cols(covariates, &tx)?;
    if wc.is_empty() || wc.len() != yc.len() {
        return Err(csv_err(
            outcomes,
            format!("{} treatment columns but {} outcome columns", wc.len(), yc.len()),
        ));
    }
    let index = |path: &Path, t: &Table, id: usize| -> Result<HashMap<String, usize>> {
        let mut m = HashMap::new();
        for (r, row) in t.rows.iter().enumerate() {
            if m.insert(row[id].clone(), r).is_some() {
                return Err(csv_err(path, format!("row {}: duplicate unit id {:?}", r + 1, row[id])));
            }
        }
        Ok(m)
    };
    let yi = index(outcomes, &ty, yid)?;
    let xi = index(covariates, &tx, xid)?;
    if yi.len() != tw.rows.len() || xi.len() != tw.rows.len() {
        return Err(Error::input(format!(
            "files disagree on the number of units ({} treatments, {} outcomes, {} covariates)",
            tw.rows.len(),
            yi.len(),
            xi.len()
        )));
    }
    let mut raw = RawPanel {
        k: wc.len(),
        d: xc.len(),
        ..Default::default()
    };
    for (r, row) in tw.rows.iter().enumerate() {
        let uid = &row[wid];
        raw.unit_ids.push(uid.clone());
        for &c in &wc {
            raw.w.push(parse_cell(treatments, r, &tw.header[c], &row[c])?);
        }
        let ry = *yi
            .get(uid)
            .ok_or_else(|| csv_err(outcomes, format!("unit id {uid:?} missing")))?;
        for &c in &yc {
            raw.y.push(parse_cell(outcomes, ry, &ty.header[c], &ty.rows[ry][c])?);
        }
        let rx = *xi
            .get(uid)
            .ok_or_else(|| csv_err(covariates, format!("unit id {uid:?} missing")))?;
        for &c in &xc {
            raw.x.push(parse_cell(covariates, rx, &tx.header[c], &tx.rows[rx][c])?);
        }
    }
    Ok(raw)
}

/// Column means of the treatment matrix, used when allocation
/// probabilities are not supplied.
pub fn infer_pi(raw: &RawPanel) -> Vec<f64> {
    let n = raw.unit_ids.len().max(1) as f64;
    (0..raw.k)
        .map(|c| {
            raw.w
                .chunks(raw.k)
                .map(|row| f64::from(row[c]))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Attaches allocation probabilities (or infers them) and validates.
pub fn finish_panel(mut raw: RawPanel, pi: Option<Vec<f64>>) -> Result<(PanelDataset, Vec<String>)> {
    let mut warnings = Vec::new();
    raw.pi = match pi {
        Some(p) => p,
        None => {
            let p = infer_pi(&raw);
            warnings.push(format!(
                "treatment probabilities not given; using observed treated fractions {p:?}"
            ));
            p
        }
    };
    Ok((PanelDataset::try_from(raw)?, warnings))
}

/// Reads an edge list: CSV with a `src,dst[,weight]` header, or
/// whitespace-separated pairs (lines starting with `#` or `%` skipped).
pub fn read_edge_records(path: &Path) -> Result<Vec<EdgeRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#') && !l.starts_with('%'))
        .unwrap_or("");
    if first.contains(',') {
        let t = read_table(path)?;
        let col = |name: &str| t.header.iter().position(|h| h == name);
        let (src, dst) = match (col("src"), col("dst")) {
            (Some(s), Some(d)) => (s, d),
            _ => return Err(csv_err(path, "edge list needs src and dst columns")),
        };
        let weight = col("weight");
        t.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                Ok(EdgeRecord {
                    src: row[src].clone(),
                    dst: row[dst].clone(),
                    weight: match weight {
                        Some(c) => Some(parse_cell(path, r, "weight", &row[c])?),
                        None => None,
                    },
                })
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for (r, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 2 {
                return Err(csv_err(path, format!("line {}: expected two vertex ids", r + 1)));
            }
            out.push(EdgeRecord {
                src: parts[0].to_string(),
                dst: parts[1].to_string(),
                weight: match parts.get(2) {
                    Some(w) => Some(parse_cell(path, r, "weight", w)?),
                    None => None,
                },
            });
        }
        Ok(out)
    }
}
