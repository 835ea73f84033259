//! CSV input and output for blockwise-missing data and precomputed
//! predictions.
//!
//! A cell is missing when it is empty or equals one of the configured NA
//! tokens. An optional `row_id` column supplies row ids; otherwise rows are
//! numbered from 0.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use blockwise::{Error, ObservedDataset, Result, Schema};

pub const ID_COLUMN: &str = "row_id";

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn parse_cell(cell: &str, na: &[String], id: u64, column: &str) -> Result<f64> {
    if cell.is_empty() || na.iter().any(|t| t == cell) {
        return Ok(f64::NAN);
    }
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_nan() => Err(Error::Parse(format!("row {id}, column {column}: NaN is not a value; leave the cell empty"))),
        Ok(v) => Ok(v),
        Err(_) => Err(Error::Parse(format!("row {id}, column {column}: cannot parse {cell:?}"))),
    }
}

fn parse_id(cell: &str) -> Result<u64> {
    cell.trim().parse().map_err(|_| Error::Parse(format!("invalid {ID_COLUMN} {cell:?}")))
}

pub fn ingest_csv(path: &Path, schema: Arc<Schema>, na: &[String]) -> Result<ObservedDataset> {
    read_dataset(open(path)?, schema, na)
}

pub fn read_dataset<R: Read>(reader: R, schema: Arc<Schema>, na: &[String]) -> Result<ObservedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() {
        return Err(Error::EmptyFile);
    }
    let position = |name: &str| header.iter().position(|h| h == name);
    let cols: Vec<(usize, &str)> = schema
        .column_names()
        .map(|c| position(c).map(|i| (i, c)).ok_or_else(|| Error::UnknownColumn(c.to_string())))
        .collect::<Result<_>>()?;
    let id_col = position(ID_COLUMN);
    let mut data = ObservedDataset::new(schema.clone());
    let mut seen = std::collections::HashSet::new();
    let mut values = vec![0.0; cols.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let id = match id_col {
            Some(i) => parse_id(&rec[i])?,
            None => line as u64,
        };
        if !seen.insert(id) {
            return Err(Error::Parse(format!("duplicate {ID_COLUMN} {id}")));
        }
        for (v, &(i, name)) in values.iter_mut().zip(&cols) {
            *v = parse_cell(rec.get(i).unwrap_or(""), na, id, name)?;
        }
        match data.push_row(id, &values) {
            Err(Error::EmptyMask) => return Err(Error::Parse(format!("row {id} observes no modality"))),
            other => {
                other?;
            }
        }
    }
    if data.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(data)
}

/// Writes `row_id` followed by the schema columns; unobserved cells are
/// empty. Values use the shortest representation that parses back exactly.
pub fn write_dataset<W: Write>(data: &ObservedDataset, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(data.schema().column_names().map(String::from));
    wr.write_record(&header).map_err(csv_err)?;
    for row in data.rows() {
        let mut rec = vec![row.id.to_string()];
        rec.extend(row.values.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush().map_err(Error::Io)
}

/// Reads a prediction file with a `row_id` column followed by `width`
/// value columns.
pub fn read_predictions(path: &Path, width: usize) -> Result<HashMap<u64, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some(ID_COLUMN) {
        return Err(Error::Parse(format!("{}: first column must be {ID_COLUMN}", path.display())));
    }
    if header.len() != width + 1 {
        return Err(Error::PredictorDimension { expected: width, found: header.len() - 1 });
    }
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id = parse_id(&rec[0])?;
        let v: Vec<f64> = (1..=width)
            .map(|j| match parse_cell(&rec[j], &[], id, &header[j])? {
                v if v.is_nan() => Err(Error::MissingPrediction(id)),
                v => Ok(v),
            })
            .collect::<Result<_>>()?;
        if out.insert(id, v).is_some() {
            return Err(Error::Parse(format!("{}: duplicate {ID_COLUMN} {id}", path.display())));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(out)
}
