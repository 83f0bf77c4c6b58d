//! Line-oriented dataset files.
//!
//! One record per line, tab separated:
//!
//! ```text
//! <id>  <H>x<W>x<C>:<hex f64 bits>  <json string report>  <comma separated 0/1 labels>
//! ```
//!
//! Pixels are stored as 16 hex digits of their IEEE-754 bit pattern, so a
//! save/load round trip is bit exact. Lines starting with `#` are comments;
//! `#split=<name>` names the split.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    /// `[H, W, C]`
    pub image: Tensor,
    pub report: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetFile {
    pub split: Option<String>,
    pub records: Vec<Record>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(split) = &self.split {
            let _ = writeln!(s, "#split={split}");
        }
        for r in &self.records {
            let shape: Vec<String> = r.image.shape().iter().map(|d| d.to_string()).collect();
            let _ = write!(s, "{}\t{}:", r.id, shape.join("x"));
            for v in r.image.data() {
                let _ = write!(s, "{:016x}", v.to_bits());
            }
            let report = serde_json::to_string(&r.report).expect("string serializes");
            let labels: Vec<String> = r.labels.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(s, "\t{report}\t{}", labels.join(","));
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut out = DatasetFile::default();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(name) = comment.trim().strip_prefix("split=") {
                    out.split = Some(name.trim().to_string());
                }
                continue;
            }
            let record = parse_record(line).map_err(err)?;
            if let Some(first) = out.records.first() {
                if first.labels.len() != record.labels.len() {
                    return Err(err(format!(
                        "{} labels, earlier records have {}",
                        record.labels.len(),
                        first.labels.len()
                    )));
                }
            }
            out.records.push(record);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn parse_record(line: &str) -> std::result::Result<Record, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    let id = fields[0].parse::<u64>().map_err(|e| format!("bad id: {e}"))?;

    let (dims, hex) = fields[1].split_once(':').ok_or("image field lacks ':'")?;
    let shape = dims
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format!("bad image shape: {e}"))?;
    if shape.len() != 3 {
        return Err(format!("image shape must be HxWxC, got {dims}"));
    }
    if hex.len() % 16 != 0 || !hex.is_ascii() {
        return Err("pixel data is not a sequence of 16-digit hex values".into());
    }
    let data = (0..hex.len() / 16)
        .map(|k| u64::from_str_radix(&hex[16 * k..16 * k + 16], 16).map(f64::from_bits))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format!("bad pixel: {e}"))?;
    let image = Tensor::new(shape, data).map_err(|e| e.to_string())?;

    let report: String = serde_json::from_str(fields[2]).map_err(|e| format!("bad report: {e}"))?;
    let labels = fields[3]
        .split(',')
        .map(|l| match l {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(format!("label {l:?} is not 0 or 1")),
        })
        .collect::<std::result::Result<Vec<u8>, _>>()?;
    Ok(Record {
        id,
        image,
        report,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> Record {
        Record {
            id: 7,
            image: Tensor::new(vec![2, 2, 1], vec![0.1, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
            report: "small \"left\"\teffusion .".into(),
            labels: vec![1, 0, 0],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = DatasetFile {
            split: Some("val".into()),
            records: vec![rec(), Record { id: 8, ..rec() }],
        };
        let back = DatasetFile::from_text(&f.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.records[0].image.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = DatasetFile::from_text("", Path::new("x")).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let good = DatasetFile {
            split: None,
            records: vec![rec()],
        }
        .to_text();
        let text = format!("#split=train\n{good}7\tbroken\n");
        match DatasetFile::from_text(&text, Path::new("d.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_label = good.replace("\t1,0,0", "\t1,2,0");
        assert!(DatasetFile::from_text(&bad_label, Path::new("d")).is_err());
    }
}
