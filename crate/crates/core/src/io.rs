//! CSV data files.
//!
//! `survival.csv` has header `id,time,status,<scalar names...>` with status 1
//! for an event and 0 for censoring. `functional.csv` is wide: header
//! `id,<grid values...>`, one curve per row. Grid values are rescaled to
//! [0, 1] on input and restored on output. Rows are matched by id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::SurvivalDataset;
use crate::error::{FttmError, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| FttmError::Parse(format!("{what}: `{s}` is not a number")))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| FttmError::MissingColumn(name.to_string()))
}

pub fn read_dataset(survival: &Path, functional: &Path) -> Result<SurvivalDataset> {
    let mut rdr = csv::Reader::from_path(survival)?;
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "id")?;
    let time_col = column(&headers, "time")?;
    let status_col = column(&headers, "status")?;
    let scalar_cols: Vec<usize> = (0..headers.len())
        .filter(|c| ![id_col, time_col, status_col].contains(c))
        .collect();
    let scalar_names: Vec<String> = scalar_cols.iter().map(|&c| headers[c].trim().to_string()).collect();

    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut xs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec[id_col].trim().to_string();
        y.push(parse_f64(&rec[time_col], &format!("time of `{id}`"))?);
        delta.push(match rec[status_col].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(FttmError::Parse(format!(
                    "status on data line {} must be 0 or 1, got `{other}`",
                    line + 1
                )))
            }
        });
        for &c in &scalar_cols {
            xs.push(parse_f64(&rec[c], &format!("{} of `{id}`", &headers[c]))?);
        }
        ids.push(id);
    }
    let n = ids.len();
    let x = DMatrix::from_row_slice(n, scalar_cols.len(), &xs);

    let mut rdr = csv::Reader::from_path(functional)?;
    let fheaders = rdr.headers()?.clone();
    let fid = column(&fheaders, "id")?;
    let grid_cols: Vec<usize> = (0..fheaders.len()).filter(|&c| c != fid).collect();
    let raw_grid: Vec<f64> = grid_cols
        .iter()
        .map(|&c| parse_f64(&fheaders[c], "functional grid header"))
        .collect::<Result<_>>()?;
    let mut curves: HashMap<String, Vec<f64>> = HashMap::with_capacity(n);
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec[fid].trim().to_string();
        let vals = grid_cols
            .iter()
            .map(|&c| parse_f64(&rec[c], &format!("functional value of `{id}`")))
            .collect::<Result<Vec<f64>>>()?;
        if curves.insert(id.clone(), vals).is_some() {
            return Err(FttmError::InvalidData(format!("duplicate functional row for id `{id}`")));
        }
    }
    let m = raw_grid.len();
    let mut xf = DMatrix::zeros(n, m);
    for (i, id) in ids.iter().enumerate() {
        let vals = curves
            .get(id)
            .ok_or_else(|| FttmError::InvalidData(format!("no functional row for id `{id}`")))?;
        for (j, v) in vals.iter().enumerate() {
            xf[(i, j)] = *v;
        }
    }

    let (lo, hi) = match (raw_grid.first(), raw_grid.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        _ => return Err(FttmError::InvalidData("functional grid must have increasing endpoints".into())),
    };
    let grid: Vec<f64> = raw_grid.iter().map(|g| (g - lo) / (hi - lo)).collect();
    let mut ds = SurvivalDataset::new(y, delta, x, xf, grid)?
        .with_ids(ids)?
        .with_scalar_names(scalar_names)?;
    ds.grid_range = (lo, hi);
    Ok(ds)
}

pub fn write_dataset(ds: &SurvivalDataset, survival: &Path, functional: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(survival)?;
    let mut header = vec!["id".to_string(), "time".into(), "status".into()];
    header.extend(ds.scalar_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.ids[i].clone(), fmt_f64(ds.y[i]), if ds.delta[i] { "1" } else { "0" }.into()];
        rec.extend(ds.x.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let (lo, hi) = ds.grid_range;
    let mut w = csv::Writer::from_path(functional)?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.grid.iter().map(|g| fmt_f64(lo + g * (hi - lo))));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.ids[i].clone()];
        rec.extend(ds.xf.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a numeric table with the given header.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(FttmError::domain("row width differs from header"));
        }
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes string records (first row is the header).
pub fn write_records(path: &Path, records: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in records {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `text` followed by a newline.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
