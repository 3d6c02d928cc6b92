//! CSV batch format.
//!
//! Comma separated, double-quote escaping, mandatory header, `\n` row
//! terminator. Structured cells hold compact JSON. Numbers use the shortest
//! representation that round-trips.

use serde_json::{Map, Value};

use super::codec::{record_from_object, record_to_object, RecordError};
use super::schema::{FieldKind, SchemaConfig};
use super::validate::{validate_record, ValidationReport, Violation};
use super::AnalysisRecord;

fn cell(value: Option<&Value>, kind: FieldKind) -> String {
    match (value, kind) {
        (None | Some(Value::Null), _) => String::new(),
        (Some(Value::Number(n)), _) => match n.as_u64() {
            Some(u) => u.to_string(),
            None => n.as_f64().map(|f| f.to_string()).unwrap_or_default(),
        },
        (Some(Value::String(s)), _) => s.clone(),
        (Some(Value::Bool(b)), _) => b.to_string(),
        (Some(other), _) => other.to_string(),
    }
}

/// Writes records as one CSV text in the schema's column order.
pub fn export_csv(records: &[AnalysisRecord], schema: &SchemaConfig) -> Result<String, RecordError> {
    schema.check()?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| RecordError::RowFailure {
        row: 0,
        message: e.to_string(),
    };
    writer.write_record(&schema.csv_column_order).map_err(io)?;
    for (i, record) in records.iter().enumerate() {
        let report = validate_record(record, schema)?;
        if !report.is_valid() {
            return Err(RecordError::RowViolation { row: i + 1, report });
        }
        let object = record_to_object(record);
        let row: Vec<String> = schema
            .csv_column_order
            .iter()
            .map(|name| {
                let kind = schema.field(name).map(|f| f.kind).unwrap_or(FieldKind::Text);
                cell(object.get(name), kind)
            })
            .collect();
        writer.write_record(&row).map_err(io)?;
    }
    let bytes = writer.into_inner().map_err(|e| RecordError::RowFailure {
        row: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cell_value(
    raw: &str,
    name: &str,
    kind: FieldKind,
    core: bool,
    report: &mut ValidationReport,
) -> Option<Value> {
    if raw.is_empty() && !core {
        return None;
    }
    let bad = |report: &mut ValidationReport, expected: &str| {
        report.push(Violation::new(name, raw, format!("{name} expected {expected}")));
        None
    };
    match kind {
        FieldKind::Integer if core => match raw.parse::<u64>() {
            Ok(v) => Some(Value::from(v)),
            Err(_) => bad(report, "non-negative integer"),
        },
        FieldKind::Numeric | FieldKind::Integer => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => serde_json::Number::from_f64(v).map(Value::Number),
            _ => bad(report, "number"),
        },
        FieldKind::Structured if core => match serde_json::from_str::<Value>(raw) {
            Ok(v) => Some(v),
            Err(_) => bad(report, "structured text"),
        },
        FieldKind::Text | FieldKind::Structured => Some(Value::String(raw.to_string())),
        FieldKind::Flag => match raw {
            "true" => Some(Value::Bool(true)),
            "false" => Some(Value::Bool(false)),
            _ => bad(report, "true or false"),
        },
    }
}

/// Reads a CSV batch written by [`export_csv`] under the same schema.
pub fn import_csv(text: &str, schema: &SchemaConfig) -> Result<Vec<AnalysisRecord>, RecordError> {
    schema.check()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(RecordError::RowFailure {
                row: 0,
                message: e.to_string(),
            })
        }
        None => {
            return Err(RecordError::ParseFailure {
                line: 1,
                column: 1,
                message: "missing header row".into(),
            })
        }
    };
    if !header.iter().eq(schema.csv_column_order.iter().map(String::as_str)) {
        return Err(RecordError::RowFailure {
            row: 0,
            message: format!("header does not match schema {}", schema.version),
        });
    }

    let width = schema.csv_column_order.len();
    let mut out = Vec::new();
    for (i, row) in rows.enumerate() {
        let row_index = i + 1;
        let row = row.map_err(|e| RecordError::RowFailure {
            row: row_index,
            message: e.to_string(),
        })?;
        if row.len() != width {
            return Err(RecordError::RowFailure {
                row: row_index,
                message: format!("expected {width} cells, found {}", row.len()),
            });
        }
        let mut report = ValidationReport::default();
        let mut object = Map::new();
        for (name, raw) in schema.csv_column_order.iter().zip(row.iter()) {
            let kind = schema.field(name).map(|f| f.kind).unwrap_or(FieldKind::Text);
            let core = SchemaConfig::is_core_field(name);
            if let Some(v) = cell_value(raw, name, kind, core, &mut report) {
                object.insert(name.clone(), v);
            }
        }
        if !report.is_valid() {
            return Err(RecordError::RowViolation { row: row_index, report });
        }
        let record = record_from_object(&object, schema)
            .map_err(|report| RecordError::RowViolation { row: row_index, report })?;
        let report = validate_record(&record, schema)?;
        if !report.is_valid() {
            return Err(RecordError::RowViolation { row: row_index, report });
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::record::ExtensionValue;

    #[test]
    fn empty_batch_is_header_only() {
        let schema = SchemaConfig::core();
        let text = export_csv(&[], &schema).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("Score,hiddenNatureNotes,rationaleForWriting"));
        assert!(import_csv(&text, &schema).unwrap().is_empty());
    }

    #[test]
    fn hundred_records_give_hundred_and_one_lines() {
        let schema = SchemaConfig::core();
        let records: Vec<_> = (0..100).map(fixtures::sample_record_cycled).collect();
        let text = export_csv(&records, &schema).unwrap();
        assert_eq!(text.lines().count(), 101);
    }

    #[test]
    fn fixture_round_trip_is_field_identical() {
        let schema = SchemaConfig::core();
        let records = fixtures::sample_records();
        let text = export_csv(&records, &schema).unwrap();
        assert_eq!(import_csv(&text, &schema).unwrap(), records);
    }

    #[test]
    fn wide_schema_round_trip_with_extensions() {
        let schema = SchemaConfig::wide();
        let mut records = fixtures::sample_records();
        records[0]
            .extensions
            .insert("reserved40".into(), ExtensionValue::Text("note, with \"quotes\"".into()));
        records[1]
            .extensions
            .insert("truncated".into(), ExtensionValue::Flag(true));
        let text = export_csv(&records, &schema).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 63);
        assert_eq!(import_csv(&text, &schema).unwrap(), records);
    }

    #[test]
    fn cells_are_compact() {
        let schema = SchemaConfig::core();
        let text = export_csv(&[fixtures::sample_record(0)], &schema).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("8,"), "{row}");
        assert!(row.contains(r#""[{""writerId"":0,""biasLevel"":2.3,"#), "{row}");
        assert!(row.contains(",2.3,"), "{row}");
    }

    #[test]
    fn width_mismatch_reports_row() {
        let schema = SchemaConfig::core();
        let mut text = export_csv(&fixtures::sample_records()[..3], &schema).unwrap();
        text.push_str("1,2,3\n");
        match import_csv(&text, &schema) {
            Err(RecordError::RowFailure { row, message }) => {
                assert_eq!(row, 4);
                assert!(message.contains("expected 20 cells, found 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_mismatch_and_missing_header() {
        let schema = SchemaConfig::core();
        assert!(matches!(
            import_csv("a,b\n", &schema),
            Err(RecordError::RowFailure { row: 0, .. })
        ));
        assert!(matches!(
            import_csv("", &schema),
            Err(RecordError::ParseFailure { .. })
        ));
    }

    #[test]
    fn bad_cells_are_reported_not_coerced() {
        let schema = SchemaConfig::core();
        let text = export_csv(&[fixtures::sample_record(0)], &schema).unwrap();
        let broken = text.replacen(",2.3,", ",high,", 1);
        let err = import_csv(&broken, &schema).unwrap_err();
        assert!(err.report().unwrap().mentions("biasLevel expected number"));
    }

    #[test]
    fn export_rejects_invalid_records() {
        let mut record = fixtures::sample_record(0);
        record.bias_level = 12.0;
        assert!(matches!(
            export_csv(&[record], &SchemaConfig::core()),
            Err(RecordError::RowViolation { row: 1, .. })
        ));
    }
}
