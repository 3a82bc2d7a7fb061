//! Block CSV format: a `T,C,K` header, then per sample one `label,subject`
//! line followed by `T` rows of `C` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::tensor::Tensor;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn fields<T: FromStr>(line: usize, text: &str, expected: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} {what} fields, found {}", parts.len()),
        ));
    }
    parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| parse_err(line, format!("cannot parse {p:?} in {what} row"))))
        .collect()
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv_from(File::open(path)?)
}

pub fn read_csv_from(reader: impl Read) -> Result<Dataset> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let mut next = |what: &str| -> Result<Option<(usize, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((n, l)) => Ok(Some((n, l.map_err(|e| parse_err(n, format!("{what}: {e}")))?))),
        }
    };
    let (n, header) = next("header")?.ok_or_else(|| parse_err(1, "empty file"))?;
    let dims: Vec<usize> = fields(n, &header, 3, "header")?;
    let mut ds = Dataset::new(dims[0], dims[1], dims[2]).map_err(|e| parse_err(n, e.to_string()))?;
    let (t, c, k) = (dims[0], dims[1], dims[2]);
    while let Some((n, meta)) = next("metadata")? {
        let parts: Vec<&str> = meta.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(parse_err(n, format!("expected label,subject_id, found {} fields", parts.len())));
        }
        let label: usize = parts[0]
            .parse()
            .map_err(|_| parse_err(n, format!("cannot parse label {:?}", parts[0])))?;
        if label >= k {
            return Err(parse_err(n, format!("unknown label {label}, expected 0..{k}")));
        }
        let subject: i64 = parts[1]
            .parse()
            .map_err(|_| parse_err(n, format!("cannot parse subject id {:?}", parts[1])))?;
        let mut data = Vec::with_capacity(t * c);
        for row in 0..t {
            let (n, text) = next("values")?.ok_or_else(|| {
                parse_err(n + row + 1, format!("sample truncated: expected {t} rows, found {row}"))
            })?;
            let values: Vec<f64> = fields(n, &text, c, "value")?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(n, "non-finite value"));
            }
            data.extend(values);
        }
        ds.push(Sample {
            x: Tensor::new([t, c], data)?,
            label,
            subject,
        })
        .map_err(|e| parse_err(n, e.to_string()))?;
    }
    Ok(ds)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{},{},{}", ds.seq_len(), ds.channels(), ds.n_classes())?;
    for s in ds.samples() {
        writeln!(w, "{},{}", s.label, s.subject)?;
        for row in s.x.data().chunks(ds.channels()) {
            let line: Vec<String> = row.iter().map(|&v| g9(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv_from(text.as_bytes())
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn reads_blocks() {
        let ds = parse("2,2,2\n1,7\n0.5,1\n2,3\n0,-1\n1,1\n1,1\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples()[0].label, 1);
        assert_eq!(ds.samples()[0].subject, 7);
        assert_eq!(ds.samples()[0].x.data(), &[0.5, 1.0, 2.0, 3.0]);
        assert_eq!(ds.samples()[1].subject, -1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(parse("2,2\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("2,2,2\n5,1\n0,0\n0,0\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("2,2,2\n1,1\n0,0\n0\n").unwrap_err()), 4);
        assert_eq!(line_of(parse("2,2,2\n1,1\n0,0\n0,x\n").unwrap_err()), 4);
        assert_eq!(line_of(parse("2,2,2\n1,1\n0,0\n").unwrap_err()), 4);
    }

    #[test]
    fn round_trip_keeps_f32_precision() {
        let mut ds = Dataset::new(3, 2, 2).unwrap();
        ds.push(Sample {
            x: Tensor::from_fn([3, 2], |i| (i as f64 + 0.1).powf(1.7) / 3.0 - 1.0),
            label: 1,
            subject: 42,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.samples()[0].subject, 42);
        for (a, b) in ds.samples()[0].x.data().iter().zip(back.samples()[0].x.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
