//! Tab-separated datasets with a typed header: `label<TAB>name:C<TAB>name:N...`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use afn_core::data::{Dataset, FieldKind, FieldSchema, Instance, Schema, Value, Vocabulary};

use crate::error::{AppError, AppResult};

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(false)
        .from_reader(input)
}

fn parse_error(line: u64, message: impl Into<String>) -> AppError {
    AppError::Parse {
        line,
        message: message.into(),
    }
}

fn record_error(e: csv::Error) -> AppError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_error(line, format!("expected {expected_len} columns, found {len}"))
        }
        _ => parse_error(line, e.to_string()),
    }
}

fn parse_header(record: &csv::StringRecord) -> AppResult<Vec<(String, FieldKind)>> {
    let mut cols = record.iter();
    if cols.next() != Some("label") {
        return Err(parse_error(1, "header must start with `label`"));
    }
    cols.map(|col| {
        let (name, kind) = col
            .rsplit_once(':')
            .ok_or_else(|| parse_error(1, format!("header column `{col}` is not name:kind")))?;
        let kind = match kind {
            "C" => FieldKind::Categorical,
            "N" => FieldKind::Numerical,
            other => return Err(parse_error(1, format!("unknown field kind `{other}`"))),
        };
        if name.is_empty() {
            return Err(parse_error(1, "empty field name"));
        }
        Ok((name.to_string(), kind))
    })
    .collect()
}

fn parse_number(token: &str, line: u64) -> AppResult<f64> {
    let x: f64 = token
        .parse()
        .map_err(|_| parse_error(line, format!("unparseable number `{token}`")))?;
    if !x.is_finite() {
        return Err(parse_error(line, format!("non-finite value `{token}`")));
    }
    Ok(x)
}

fn parse_label(token: &str, line: u64) -> AppResult<bool> {
    match token {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_error(line, "label must be 0 or 1")),
    }
}

/// Builds the schema and categorical vocabularies from a dataset file.
pub fn fit_schema<R: Read>(input: R) -> AppResult<Schema> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_error(1, "missing header"))?
        .map_err(record_error)?;
    let columns = parse_header(&header)?;
    let mut vocabs: Vec<Vocabulary> = columns.iter().map(|_| Vocabulary::new()).collect();
    for record in records {
        let record = record.map_err(record_error)?;
        let line = record.position().map_or(0, |p| p.line());
        parse_label(&record[0], line)?;
        for (i, (_, kind)) in columns.iter().enumerate() {
            let token = &record[i + 1];
            match kind {
                FieldKind::Categorical => {
                    vocabs[i].observe(token);
                }
                FieldKind::Numerical => {
                    parse_number(token, line)?;
                }
            }
        }
    }
    let fields = columns
        .into_iter()
        .zip(vocabs)
        .enumerate()
        .map(|(id, ((name, kind), vocab))| match kind {
            FieldKind::Categorical => FieldSchema::categorical(id, &name, vocab),
            FieldKind::Numerical => FieldSchema::numerical(id, &name),
        })
        .collect();
    Ok(Schema::new(fields)?)
}

/// Parses a dataset against a fitted schema; unseen tokens map to index 0.
pub fn load_dataset<R: Read>(input: R, schema: Arc<Schema>) -> AppResult<Dataset> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_error(1, "missing header"))?
        .map_err(record_error)?;
    let columns = parse_header(&header)?;
    let expected: Vec<(String, FieldKind)> = schema.fields().iter().map(|f| (f.name.clone(), f.kind)).collect();
    if columns != expected {
        return Err(AppError::Data("file header does not match the schema".into()));
    }
    let mut instances = Vec::new();
    for record in records {
        let record = record.map_err(record_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let label = parse_label(&record[0], line)?;
        let values = schema
            .fields()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let token = &record[i + 1];
                Ok(match f.kind {
                    FieldKind::Categorical => Value::Category(f.vocab.lookup(token)),
                    FieldKind::Numerical => Value::Number(parse_number(token, line)?),
                })
            })
            .collect::<AppResult<Vec<_>>>()?;
        instances.push(Instance::new(label, values));
    }
    Ok(Dataset::new(schema, instances)?)
}

fn open(path: &Path) -> AppResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| AppError::io(path, e))
}

pub fn fit_schema_path(path: &Path) -> AppResult<Schema> {
    fit_schema(open(path)?)
}

pub fn load_dataset_path(path: &Path, schema: Arc<Schema>) -> AppResult<Dataset> {
    load_dataset(open(path)?, schema)
}

/// Writes rows of categorical tokens under a header of categorical fields.
pub fn write_categorical<W: Write>(out: W, names: &[String], rows: &[(bool, Vec<String>)]) -> AppResult<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let csv_err = |e: csv::Error| AppError::Data(e.to_string());
    let mut header = vec!["label".to_string()];
    header.extend(names.iter().map(|n| format!("{n}:C")));
    w.write_record(&header).map_err(csv_err)?;
    for (label, tokens) in rows {
        let mut record = vec![if *label { "1" } else { "0" }];
        record.extend(tokens.iter().map(String::as_str));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = "label\tbrand:C\tage:N\n1\ta\t2.5\n0\tb\t3\n1\ta\t-1\n";

    #[test]
    fn fit_counts_distinct_tokens() {
        let s = fit_schema(FILE.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.field(0).cardinality(), Some(3));
        assert_eq!(s.field(1).kind, FieldKind::Numerical);
    }

    #[test]
    fn header_only_gives_empty_vocabularies() {
        let s = fit_schema("label\tbrand:C\tage:N\n".as_bytes()).unwrap();
        assert_eq!(s.field(0).cardinality(), Some(1));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let e = fit_schema("label\tbrand:X\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("unknown field kind"));
    }

    #[test]
    fn load_maps_tokens_and_oov() {
        let s = Arc::new(fit_schema(FILE.as_bytes()).unwrap());
        let d = load_dataset("label\tbrand:C\tage:N\n1\ta\t2.5\n0\tz\t1\n".as_bytes(), s.clone()).unwrap();
        assert_eq!(
            d.instances()[0],
            Instance::new(true, vec![Value::Category(1), Value::Number(2.5)])
        );
        assert_eq!(d.instances()[1].values[0], Value::Category(0));
        let fitted = load_dataset(FILE.as_bytes(), s.clone()).unwrap();
        assert!(fitted
            .instances()
            .iter()
            .all(|i| matches!(i.values[0], Value::Category(c) if c >= 1)));
        let e = load_dataset("label\tbrand:C\tage:N\n2\ta\t2.5\n".as_bytes(), s.clone()).unwrap_err();
        assert!(e.to_string().contains("label must be 0 or 1"));
        assert!(load_dataset("label\tbrand:C\tage:N\n1\ta\tinf\n".as_bytes(), s.clone()).is_err());
        assert!(load_dataset("label\tbrand:C\tage:N\n1\ta\n".as_bytes(), s).is_err());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(fit_schema("label\tbrand:C\tage:N\n1\ta\n".as_bytes()).is_err());
        assert!(fit_schema("label\tbrand:C\tage:N\n1\ta\tx\n".as_bytes()).is_err());
        assert!(fit_schema("brand:C\n".as_bytes()).is_err());
    }
}
