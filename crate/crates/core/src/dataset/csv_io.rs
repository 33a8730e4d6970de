use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ColumnKind, DatasetError, FeatureMatrix, FeatureSchema, Scenery, LABEL_COLUMN};

/// Smallest row count accepted from a file: clustering needs a pair.
const MIN_ROWS: usize = 2;

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
) -> Result<FeatureMatrix, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

/// Parses a headed CSV whose columns are the schema names in order, plus an
/// optional trailing `type` column. Row ids are assigned in file order.
/// Row numbers in errors are 0-based data rows.
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<FeatureMatrix, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let q = schema.len();

    for (pos, expected) in schema.names().enumerate() {
        match header.get(pos) {
            Some(h) if h == expected => {}
            Some(h) if schema.index_of(h).is_none() && h != LABEL_COLUMN => {
                return Err(DatasetError::UnexpectedColumn {
                    name: h.to_owned(),
                    position: pos,
                })
            }
            _ => return Err(DatasetError::MissingColumn(expected.to_owned())),
        }
    }
    let has_labels = match header.len() {
        n if n == q => false,
        n if n == q + 1 && &header[q] == LABEL_COLUMN => true,
        _ => {
            return Err(DatasetError::UnexpectedColumn {
                name: header[q].to_owned(),
                position: q,
            });
        }
    };
    let width = header.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(DatasetError::RowLength {
                row,
                expected: width,
                found: rec.len(),
            });
        }
        for (col, field) in schema.columns().iter().zip(rec.iter()) {
            let v: f64 = field.parse().map_err(|_| DatasetError::NonNumeric {
                row,
                column: col.name.clone(),
                value: field.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFinite {
                    row,
                    column: col.name.clone(),
                    value: v,
                });
            }
            if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                return Err(DatasetError::BinaryViolation {
                    row,
                    column: col.name.clone(),
                    value: v,
                });
            }
            values.push(v);
        }
        if has_labels {
            let s = &rec[q];
            labels.push(
                s.parse::<Scenery>()
                    .map_err(|value| DatasetError::BadLabel { row, value })?,
            );
        }
    }
    let m = values.len() / q;
    if m < MIN_ROWS {
        return Err(DatasetError::TooFewRows {
            min: MIN_ROWS,
            found: m,
        });
    }
    FeatureMatrix::from_parts(
        schema.clone(),
        values,
        (0..m as u64).collect(),
        has_labels.then_some(labels),
    )
}

pub fn save_csv(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(matrix, file)
}

/// Writes the header and one line per row. Values use the shortest decimal
/// form that parses back to the same `f64`. Row ids are not written; the
/// file order is the id order on reload.
pub fn write_csv<W: Write>(matrix: &FeatureMatrix, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let labels = matrix.labels();
    let mut header: Vec<&str> = matrix.schema().names().collect();
    if labels.is_some() {
        header.push(LABEL_COLUMN);
    }
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for (i, row) in matrix.rows().enumerate() {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        if let Some(l) = labels {
            fields.push(l[i].to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
