//! CSV ingestion for flow exports and encoded datasets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, NetFlowRecord};
use crate::features::{log_scale, port_flags, FeatureMatrix, FeatureSchema, Preprocessor, RawRecord, RAW_FIELDS};
use crate::{Error, Result};

/// How feature columns are laid out in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnLayout {
    /// Raw flow-meter fields, preprocessed on load.
    #[default]
    Raw,
    /// Already-encoded columns named after the schema features.
    Encoded,
}

/// Maps raw fields to CSV headers. Headers are matched after trimming whitespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub layout: ColumnLayout,
    /// Raw field name (see `RAW_FIELDS`) to header; missing entries use the defaults.
    pub fields: BTreeMap<String, String>,
    pub label: String,
    pub benign_label: String,
}

const DEFAULT_HEADERS: [&str; 19] = [
    "Dst Port",
    "Tot Fwd Pkts",
    "Tot Bwd Pkts",
    "Fwd Pkt Len Max",
    "Bwd Pkt Len Max",
    "ACK Flag Cnt",
    "SYN Flag Cnt",
    "RST Flag Cnt",
    "Flow Duration",
    "Flow Pkts/s",
    "Fwd Pkts/s",
    "Bwd Pkts/s",
    "Flow IAT Mean",
    "Flow IAT Std",
    "Subflow Fwd Byts",
    "Subflow Bwd Byts",
    "Idle Mean",
    "Active Mean",
    "Fwd Seg Size Min",
];

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            layout: ColumnLayout::Raw,
            fields: RAW_FIELDS.iter().zip(DEFAULT_HEADERS).map(|(f, h)| (f.to_string(), h.to_string())).collect(),
            label: "Label".into(),
            benign_label: "Benign".into(),
        }
    }
}

impl ColumnMap {
    pub fn encoded() -> Self {
        Self { layout: ColumnLayout::Encoded, fields: BTreeMap::new(), ..Self::default() }
    }

    fn header_for(&self, field: &str) -> Result<String> {
        if let Some(h) = self.fields.get(field) {
            return Ok(h.clone());
        }
        RAW_FIELDS
            .iter()
            .position(|f| *f == field)
            .map(|i| DEFAULT_HEADERS[i].to_string())
            .ok_or_else(|| Error::Config(format!("unknown raw field {field:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        for key in self.fields.keys() {
            if !RAW_FIELDS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown raw field {key:?} in column map")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub total_rows: usize,
    pub dropped_rows: usize,
    pub clamped_negatives: usize,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Load(format!("missing column {name:?}")))
}

/// Loads a labeled flow CSV. Rows that fail to parse are dropped and counted.
pub fn load_csv(path: &Path, map: &ColumnMap) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    load_csv_from_reader(file, &name, map)
}

pub fn load_csv_from_reader<R: Read>(reader: R, name: &str, map: &ColumnMap) -> Result<LoadReport> {
    map.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = column_index(&headers, &map.label)?;
    let schema = FeatureSchema::netflow20();
    let feature_idx: Vec<usize> = match map.layout {
        ColumnLayout::Raw => RAW_FIELDS
            .iter()
            .map(|f| column_index(&headers, &map.header_for(f)?))
            .collect::<Result<_>>()?,
        ColumnLayout::Encoded => schema.names().iter().map(|n| column_index(&headers, n)).collect::<Result<_>>()?,
    };

    let mut pre = Preprocessor::new();
    let mut records = Vec::new();
    let (mut total, mut dropped) = (0usize, 0usize);
    for (row, result) in rdr.records().enumerate() {
        total += 1;
        let parsed = result.map_err(Error::from).and_then(|rec| {
            let cells: Vec<&str> = feature_idx
                .iter()
                .map(|&i| rec.get(i).ok_or_else(|| Error::Parse(format!("row {row} is short"))))
                .collect::<Result<_>>()?;
            let label = rec.get(label_idx).ok_or_else(|| Error::Parse(format!("row {row} has no label")))?;
            let features = match map.layout {
                ColumnLayout::Raw => pre.encode(&RawRecord::parse(&cells)?)?.into_vec(),
                ColumnLayout::Encoded => parse_numeric(&cells)?,
            };
            Ok((features, label.trim().to_string()))
        });
        match parsed {
            Ok((features, class_name)) => {
                let malicious = class_name != map.benign_label;
                records.push(NetFlowRecord { id: row as u64, features, class_name, malicious });
            }
            Err(e) => {
                log::debug!("{name}: dropping row {row}: {e}");
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::warn!("{name}: dropped {dropped} of {total} rows");
    }
    if pre.clamped_negatives > 0 {
        log::warn!("{name}: clamped {} negative values to zero", pre.clamped_negatives);
    }
    let dataset = Dataset::new(name, schema, records, &map.benign_label)?;
    Ok(LoadReport { dataset, total_rows: total, dropped_rows: dropped, clamped_negatives: pre.clamped_negatives })
}

fn parse_numeric(cells: &[&str]) -> Result<Vec<f64>> {
    cells
        .iter()
        .map(|c| match c.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse(format!("not a finite number: {c:?}"))),
        })
        .collect()
}

/// Writes a dataset in the encoded layout (schema names plus a `Label` column).
pub fn write_encoded_csv<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = dataset.schema.names();
    header.push("Label".into());
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        row.push(r.class_name.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLoad {
    pub matrix: FeatureMatrix,
    pub total_rows: usize,
    pub dropped_rows: usize,
    /// Columns skipped because the first data row was not numeric.
    pub skipped_columns: Vec<String>,
}

/// Loads every numeric column of a flow CSV for feature ranking.
///
/// Columns named in `drop` are ignored, as is any column whose first value is
/// not numeric. Port columns become well-known/registered flag pairs, columns
/// holding only integers pass through, and the rest are log-scaled. Rows with
/// unparseable or non-finite values are dropped.
pub fn load_feature_matrix<R: Read>(
    reader: R,
    label: &str,
    drop: &[String],
    port_columns: &[String],
) -> Result<MatrixLoad> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| Error::Load(format!("missing column {label:?}")))?;
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => log::debug!("skipping malformed row: {e}"),
        }
    }
    let total = rows.len();
    let first = rows.first().ok_or_else(|| Error::Load("no data rows".into()))?;
    let mut skipped = Vec::new();
    let mut cols = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        if j == label_idx || drop.contains(h) {
            continue;
        }
        if first.get(j).and_then(|c| c.trim().parse::<f64>().ok()).is_some() {
            cols.push(j);
        } else {
            skipped.push(h.clone());
        }
    }

    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    'rows: for r in &rows {
        let mut v = Vec::with_capacity(cols.len());
        for &j in &cols {
            match r.get(j).map(|c| c.trim().parse::<f64>()) {
                Some(Ok(x)) if x.is_finite() => v.push(x),
                _ => continue 'rows,
            }
        }
        let Some(l) = r.get(label_idx) else { continue };
        values.push(v);
        labels_raw.push(l.trim().to_string());
    }
    let dropped = total - values.len();

    let mut names = Vec::new();
    let mut transforms = Vec::new();
    for (k, &j) in cols.iter().enumerate() {
        let h = &headers[j];
        if port_columns.contains(h) {
            names.push(format!("{h} wk"));
            names.push(format!("{h} reg"));
            transforms.push(Transform::Port);
        } else if values.iter().all(|v| v[k].fract() == 0.0) {
            names.push(h.clone());
            transforms.push(Transform::Identity);
        } else {
            names.push(h.clone());
            transforms.push(Transform::Log);
        }
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut matrix_rows = Vec::with_capacity(values.len());
    let mut labels = Vec::with_capacity(values.len());
    'encode: for (v, l) in values.iter().zip(&labels_raw) {
        let mut out = Vec::with_capacity(names.len());
        for (x, t) in v.iter().zip(&transforms) {
            match t {
                Transform::Identity => out.push(*x),
                Transform::Log => out.push(log_scale(*x).0),
                Transform::Port => match port_flags(*x) {
                    Ok((wk, reg)) => {
                        out.push(wk);
                        out.push(reg);
                    }
                    Err(_) => continue 'encode,
                },
            }
        }
        let label = match class_names.iter().position(|c| c == l) {
            Some(i) => i,
            None => {
                class_names.push(l.clone());
                class_names.len() - 1
            }
        };
        matrix_rows.push(out);
        labels.push(label);
    }
    let dropped = dropped + (values.len() - matrix_rows.len());
    Ok(MatrixLoad {
        matrix: FeatureMatrix { names, rows: matrix_rows, labels, class_names },
        total_rows: total,
        dropped_rows: dropped,
        skipped_columns: skipped,
    })
}

enum Transform {
    Identity,
    Log,
    Port,
}
