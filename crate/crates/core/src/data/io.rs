use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::SeriesDataset;
use crate::{Error, Result};

/// Declared dataset layout: window length, channels, factor count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub t: usize,
    pub d: usize,
    #[serde(default)]
    pub k: usize,
}

fn parse_err(path: &Path, row: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[String]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got.trim() == want => {}
            Some(got) => {
                return Err(parse_err(path, Some(0), format!("column {i} is {got:?}, expected {want:?}")));
            }
            None => return Err(parse_err(path, Some(0), format!("missing column {want:?}"))),
        }
    }
    if header.len() != expected.len() {
        return Err(parse_err(
            path,
            Some(0),
            format!("header has {} columns, schema needs {}", header.len(), expected.len()),
        ));
    }
    Ok(())
}

fn number(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, Some(row), format!("column {column}: {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, Some(row), format!("column {column}: non-finite value {cell:?}")));
    }
    Ok(v)
}

/// Reads `id,domain,label,v0,...` rows; rows are numbered from 1 after the
/// header in error messages.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let width = schema.t * schema.d;
    if width == 0 {
        return Err(Error::Config {
            field: "schema".into(),
            message: "t and d must be positive".into(),
        });
    }
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, Some(0), e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset(format!("{} has no header", path.display())));
    }
    let mut expected: Vec<String> = vec!["id".into(), "domain".into(), "label".into()];
    expected.extend((0..width).map(|i| format!("v{i}")));
    check_header(path, &header, &expected)?;

    let mut windows = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(path, Some(row), e.to_string()))?;
        if rec.len() != width + 3 {
            return Err(parse_err(
                path,
                Some(row),
                format!("expected {} values, found {}", width, rec.len().saturating_sub(3)),
            ));
        }
        ids.push(rec[0].trim().to_string());
        let domain = rec[1]
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&d| d <= 1)
            .ok_or_else(|| parse_err(path, Some(row), format!("domain {:?} is not 0 or 1", &rec[1])))?;
        domains.push(domain);
        let label = rec[2].trim();
        labels.push(if label.is_empty() {
            None
        } else {
            Some(
                label
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, Some(row), format!("label {label:?} is not a class index")))?,
            )
        });
        for (c, cell) in rec.iter().skip(3).enumerate() {
            windows.push(number(path, row, &format!("v{c}"), cell)?);
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    let ds = SeriesDataset::new(schema.t, schema.d, windows, ids, labels, domains)?;
    ds.check_unique_ids().map_err(|e| match e {
        Error::Parse { row, message, .. } => parse_err(path, row, message),
        other => other,
    })?;
    Ok(ds)
}

/// Joins `id,f0,...,f{k-1}` rows onto `ds` by id.
pub fn load_factors(path: impl AsRef<Path>, k: usize, ds: SeriesDataset) -> Result<SeriesDataset> {
    let path = path.as_ref();
    if k == 0 {
        return Err(Error::Config {
            field: "schema.k".into(),
            message: "factor count must be positive when a factors file is given".into(),
        });
    }
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, Some(0), e.to_string()))?
        .clone();
    let mut expected: Vec<String> = vec!["id".into()];
    expected.extend((0..k).map(|i| format!("f{i}")));
    check_header(path, &header, &expected)?;
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(path, Some(row), e.to_string()))?;
        if rec.len() != k + 1 {
            return Err(parse_err(path, Some(row), format!("expected {k} factors, found {}", rec.len().saturating_sub(1))));
        }
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, cell)| number(path, row, &format!("f{c}"), cell))
            .collect::<Result<Vec<_>>>()?;
        if by_id.insert(rec[0].trim().to_string(), values).is_some() {
            return Err(parse_err(path, Some(row), format!("duplicate id {:?}", &rec[0])));
        }
    }
    let factors = ds
        .ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .cloned()
                .ok_or_else(|| parse_err(path, None, format!("no factors for id {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ds.with_factors(factors)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn write_csv(path: impl AsRef<Path>, ds: &SeriesDataset) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut header: Vec<String> = vec!["id".into(), "domain".into(), "label".into()];
    header.extend((0..ds.window_len()).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_io(path))?;
    for i in 0..ds.len() {
        let mut rec = vec![
            ds.ids[i].clone(),
            ds.domains[i].to_string(),
            ds.labels[i].map(|l| l.to_string()).unwrap_or_default(),
        ];
        rec.extend(ds.window(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_factors(path: impl AsRef<Path>, ds: &SeriesDataset) -> Result<()> {
    let path = path.as_ref();
    let factors = ds
        .factors
        .as_ref()
        .ok_or_else(|| Error::contract("dataset has no factors to write"))?;
    let k = ds.num_factors().unwrap_or(0);
    let mut w = writer(path)?;
    let mut header: Vec<String> = vec!["id".into()];
    header.extend((0..k).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_io(path))?;
    for (id, row) in ds.ids.iter().zip(factors) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use std::io::Write;

    fn small() -> SeriesDataset {
        let mut ds = synth_generate(&SynthSpec {
            window: 16,
            samples_per_domain: 5,
            domains: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        ds.labels[7] = None;
        ds
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        let data = dir.path().join("d.csv");
        let fac = dir.path().join("f.csv");
        write_csv(&data, &ds).unwrap();
        write_factors(&fac, &ds).unwrap();
        let schema = Schema { t: 16, d: 1, k: 5 };
        let back = load_factors(&fac, 5, load_csv(&data, &schema).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn short_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "id,domain,label,v0,v1,v2").unwrap();
        writeln!(f, "a,0,1,1,2,3").unwrap();
        writeln!(f, "b,0,1,1,2").unwrap();
        drop(f);
        let err = load_csv(&path, &Schema { t: 3, d: 1, k: 0 }).unwrap_err();
        assert!(matches!(err, Error::Parse { row: Some(2), .. }), "{err}");
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let schema = Schema { t: 2, d: 1, k: 0 };
        let cases = [
            ("id,domain,label,v0,v1\na,0,1,1,x\n", Some(1)),
            ("id,domain,label,v0,v1\na,0,1,1,2\na,0,1,1,2\n", Some(2)),
            ("id,domain,label,v0\na,0,1,1\n", Some(0)),
        ];
        for (text, row) in cases {
            let path = dir.path().join("m.csv");
            std::fs::write(&path, text).unwrap();
            match load_csv(&path, &schema) {
                Err(Error::Parse { row: r, .. }) => assert_eq!(r, row, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(Error::EmptyDataset(_))));
        std::fs::write(&path, "id,domain,label,v0,v1\n").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn multichannel_layout_is_time_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "id,domain,label,v0,v1,v2,v3\nx,1,,1,2,3,4\n").unwrap();
        let ds = load_csv(&path, &Schema { t: 2, d: 2, k: 0 }).unwrap();
        let t = ds.tensor::<f64>().unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.labels[0], None);
        assert_eq!(ds.domains[0], 1);
    }
}
