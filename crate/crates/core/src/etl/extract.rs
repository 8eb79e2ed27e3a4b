//! Reading raw rows from CSV and JSON-lines sources.

use std::collections::BTreeMap;
use std::fs;

use serde_json::Value;

use super::{EtlError, RawBatch, RawRow, SourceDescriptor, SourceFormat};
use crate::clock::Timestamp;

/// Reads the rows after `source.watermark` and advances the watermark to
/// the number of data rows consumed. On error the watermark is untouched.
pub fn extract(source: &mut SourceDescriptor, at: Timestamp) -> Result<RawBatch, EtlError> {
    let text = fs::read_to_string(&source.location).map_err(|e| EtlError::SourceUnreadable {
        source_id: source.source_id.clone(),
        detail: format!("{}: {e}", source.location.display()),
    })?;
    let rows = match source.format {
        SourceFormat::Csv => csv_rows(&text)?,
        SourceFormat::JsonLines => json_rows(&text)?,
    };
    let total = rows.len() as u64;
    let start = source.watermark.min(total);
    if source.watermark > total {
        tracing::warn!(
            source = %source.source_id,
            watermark = source.watermark,
            rows = total,
            "source has fewer rows than its watermark"
        );
    }
    let batch = RawBatch {
        source_id: source.source_id.clone(),
        rows: rows.into_iter().skip(start as usize).collect(),
        extracted_at: at,
        watermark_before: source.watermark,
        watermark_after: source.watermark.max(total),
    };
    source.watermark = batch.watermark_after;
    Ok(batch)
}

/// Parses CSV with a header row into keyed rows.
pub fn csv_rows(text: &str) -> Result<Vec<RawRow>, EtlError> {
    let mut records = parse_csv(text)?.into_iter();
    let Some((_, header)) = records.next() else {
        return Ok(Vec::new());
    };
    let header: Vec<String> = header.into_iter().map(|h| h.trim().to_string()).collect();
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(EtlError::ParseError {
                line: 1,
                detail: format!("duplicate column {h:?}"),
            });
        }
    }
    records
        .map(|(line, fields)| {
            if fields.len() != header.len() {
                return Err(EtlError::ParseError {
                    line,
                    detail: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            Ok(RawRow {
                line,
                fields: header.iter().cloned().zip(fields).collect(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    FieldStart,
    Unquoted,
    Quoted,
    AfterQuote,
}

/// Strict RFC 4180 reader. Returns each record with the line it starts on.
/// Accepts LF, CRLF and bare CR line ends, skips blank lines and a leading
/// byte-order mark, and rejects stray quotes.
pub fn parse_csv(text: &str) -> Result<Vec<(usize, Vec<String>)>, EtlError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut state = State::FieldStart;
    let mut line = 1;
    let mut record_line = 1;
    let mut quote_line = 1;
    let mut started = false;
    let mut chars = text.chars().peekable();

    let err = |line: usize, detail: &str| EtlError::ParseError {
        line,
        detail: detail.to_string(),
    };

    while let Some(c) = chars.next() {
        if !started && c != '\n' && c != '\r' {
            started = true;
            record_line = line;
        }
        let newline = c == '\n' || c == '\r';
        if c == '\r' && chars.peek() == Some(&'\n') && state != State::Quoted {
            chars.next();
        }
        match state {
            State::Quoted => match c {
                '"' => state = State::AfterQuote,
                _ => {
                    if c == '\n' || (c == '\r' && chars.peek() != Some(&'\n')) {
                        line += 1;
                    }
                    field.push(c);
                }
            },
            State::FieldStart | State::Unquoted | State::AfterQuote => match c {
                ',' => {
                    fields.push(std::mem::take(&mut field));
                    state = State::FieldStart;
                }
                _ if newline => {
                    if started {
                        fields.push(std::mem::take(&mut field));
                        out.push((record_line, std::mem::take(&mut fields)));
                        started = false;
                    }
                    state = State::FieldStart;
                    line += 1;
                }
                '"' if state == State::FieldStart => {
                    state = State::Quoted;
                    quote_line = line;
                }
                '"' if state == State::AfterQuote => {
                    field.push('"');
                    state = State::Quoted;
                }
                '"' => return Err(err(line, "quote inside unquoted field")),
                _ if state == State::AfterQuote => {
                    return Err(err(line, &format!("unexpected {c:?} after closing quote")));
                }
                _ => {
                    field.push(c);
                    state = State::Unquoted;
                }
            },
        }
    }
    if state == State::Quoted {
        return Err(err(quote_line, "unterminated quoted field"));
    }
    if started {
        fields.push(field);
        out.push((record_line, fields));
    }
    Ok(out)
}

/// One JSON object per line; scalars become strings, `null` becomes empty,
/// arrays of scalars are joined with commas.
pub fn json_rows(text: &str) -> Result<Vec<RawRow>, EtlError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = if line == 1 {
            raw.trim_start_matches('\u{feff}')
        } else {
            raw
        };
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| EtlError::ParseError {
            line,
            detail: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(EtlError::ParseError {
                line,
                detail: "expected a JSON object".into(),
            });
        };
        let mut fields = BTreeMap::new();
        for (k, v) in map {
            let text = scalar_text(&v).ok_or_else(|| EtlError::ParseError {
                line,
                detail: format!("field {k:?} is not a scalar or list of scalars"),
            })?;
            fields.insert(k, text);
        }
        out.push(RawRow { line, fields });
    }
    Ok(out)
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::Array(_) | Value::Object(_) => None,
                other => scalar_text(other),
            })
            .collect::<Option<Vec<_>>>()
            .map(|parts| parts.join(",")),
        Value::Object(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(r: Result<Vec<(usize, Vec<String>)>, EtlError>) -> usize {
        match r {
            Err(EtlError::ParseError { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn plain_and_quoted_fields() {
        let rows =
            parse_csv("a,b,c\n1,\"x,y\",\"say \"\"hi\"\"\"\r\n\n2,,\"multi\nline\"\n").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows[1],
            (2, vec!["1".into(), "x,y".into(), "say \"hi\"".into()])
        );
        assert_eq!(
            rows[2],
            (4, vec!["2".into(), "".into(), "multi\nline".into()])
        );
    }

    #[test]
    fn missing_final_newline_and_bom() {
        let rows = parse_csv("\u{feff}a,b\n1,2").unwrap();
        assert_eq!(
            rows,
            vec![
                (1, vec!["a".into(), "b".into()]),
                (2, vec!["1".into(), "2".into()])
            ]
        );
        assert_eq!(parse_csv("").unwrap(), vec![]);
        assert_eq!(parse_csv("\n\n").unwrap(), vec![]);
    }

    #[test]
    fn malformed_quotes_report_their_line() {
        let base = "username,name\nzahmed,Zeeshan\nmsaleem,Saleem\n";
        // hand-parsed: line 4 holds `"Ab"c` where a closing quote is followed by `c`
        assert_eq!(line_of(parse_csv(&format!("{base}x,\"Ab\"c\n"))), 4);
        assert_eq!(line_of(parse_csv(&format!("{base}x,A\"b\n"))), 4);
        // an unterminated quote is reported where it opened, not at EOF
        assert_eq!(
            line_of(parse_csv(&format!("{base}x,\"open\nmore\nlines\n"))),
            4
        );
    }

    #[test]
    fn field_count_mismatch() {
        match csv_rows("a,b\n1,2\n3\n") {
            Err(EtlError::ParseError { line: 3, detail }) => assert!(detail.contains("expected 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_lines() {
        let rows =
            json_rows("{\"a\":\"x\",\"n\":3,\"r\":[\"p\",\"q\"],\"z\":null}\n\n{\"a\":\"y\"}\n")
                .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].fields["n"], "3");
        assert_eq!(rows[0].fields["r"], "p,q");
        assert_eq!(rows[0].fields["z"], "");
        assert_eq!(rows[1].line, 3);
        assert!(matches!(
            json_rows("{\"a\":1}\n[1]\n"),
            Err(EtlError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            json_rows("{oops\n"),
            Err(EtlError::ParseError { line: 1, .. })
        ));
    }
}
