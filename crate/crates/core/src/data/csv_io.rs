use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DataError, FeatureColumn, FeatureTable, Provenance, Split};

pub const ID_COLUMN: &str = "customer_id";
pub const LABEL_COLUMN: &str = "label_kwh";
pub const SPLIT_COLUMN: &str = "split";

/// Names of the non-feature columns. Everything else is a feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRoles {
    pub id: String,
    pub label: String,
    pub split: String,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        Self { id: ID_COLUMN.into(), label: LABEL_COLUMN.into(), split: SPLIT_COLUMN.into() }
    }
}

/// Loads a corpus from disk. Provenance is the SHA-256 of the file bytes.
pub fn load_csv(path: impl AsRef<Path>, roles: Option<&ColumnRoles>) -> Result<FeatureTable, DataError> {
    let bytes = fs::read(path.as_ref())?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    read_csv(bytes.as_slice(), roles, Provenance::File { sha256 })
}

pub fn read_csv<R: Read>(
    reader: R,
    roles: Option<&ColumnRoles>,
    provenance: Provenance,
) -> Result<FeatureTable, DataError> {
    let default_roles = ColumnRoles::default();
    let roles = roles.unwrap_or(&default_roles);
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "missing header row".into())),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_idx = find(&roles.id).ok_or_else(|| malformed(1, format!("no `{}` column", roles.id)))?;
    let label_idx =
        find(&roles.label).ok_or_else(|| malformed(1, format!("no `{}` column", roles.label)))?;
    let split_idx = find(&roles.split);
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&i| i != id_idx && i != label_idx && Some(i) != split_idx)
        .collect();
    {
        let mut seen = std::collections::HashSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(malformed(1, format!("duplicate column `{h}`")));
            }
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); feature_idx.len()];

    for (row, rec) in records.enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        ids.push(rec[id_idx].trim().to_string());

        let raw_label = rec[label_idx].trim();
        let label: f64 = raw_label.parse().map_err(|_| DataError::NonNumericCell {
            column: roles.label.clone(),
            row,
            value: raw_label.to_string(),
        })?;
        if !(label >= 0.0) || !label.is_finite() {
            return Err(DataError::NegativeLabel { row, value: label });
        }
        labels.push(label);

        split.push(match split_idx {
            Some(i) => rec[i].trim().parse::<Split>().map_err(|reason| malformed(line, reason))?,
            None => Split::Train,
        });

        for (slot, &col) in values.iter_mut().zip(&feature_idx) {
            let cell = rec[col].trim();
            if cell.is_empty() {
                slot.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => slot.push(Some(v)),
                _ => {
                    return Err(DataError::NonNumericCell {
                        column: header[col].clone(),
                        row,
                        value: cell.to_string(),
                    })
                }
            }
        }
    }

    let columns = feature_idx
        .iter()
        .zip(values)
        .map(|(&i, v)| FeatureColumn::new(header[i].clone(), v))
        .collect();
    FeatureTable::new(ids, columns, labels, split, provenance)
}

fn malformed(line: usize, reason: String) -> DataError {
    DataError::MalformedCsv { line, reason }
}

pub fn write_csv(table: &FeatureTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = std::io::BufWriter::new(file);
    write_csv_to(table, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Writes `customer_id,<features...>,label_kwh,split`; missing cells are empty.
pub fn write_csv_to<W: Write>(table: &FeatureTable, out: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(table.columns().iter().map(|c| c.name.clone()));
    header.push(LABEL_COLUMN.into());
    header.push(SPLIT_COLUMN.into());
    wtr.write_record(&header).map_err(csv_io_error)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for row in 0..table.n_rows() {
        record.clear();
        record.push(table.customer_ids()[row].clone());
        for col in table.columns() {
            record.push(col.values[row].map(|v| v.to_string()).unwrap_or_default());
        }
        record.push(table.labels()[row].to_string());
        record.push(table.split()[row].as_str().to_string());
        wtr.write_record(&record).map_err(csv_io_error)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io_error(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}
