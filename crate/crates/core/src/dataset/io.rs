//! Dataset persistence.
//!
//! CSV: header `f0..f{d-1},true_label,given_label,is_ood`, one row per sample,
//! `is_ood` written as `0`/`1`. OOD rows carry `true_label == class_count`.
//!
//! Binary (little-endian):
//!
//! ```text
//! magic    8 bytes  "SELCDATA"
//! version  u32      1
//! rows     u64
//! dim      u64
//! classes  u64
//! features rows*dim f64, row-major
//! true     rows u32
//! given    rows u32
//! is_ood   rows u8
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SELCDATA";
pub const DATASET_VERSION: u32 = 1;

pub fn write_csv<W: Write>(ds: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.extend(["true_label", "given_label", "is_ood"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let truth = ds.truth();
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(truth.true_labels()[i].to_string());
        rec.push(ds.given_labels()[i].to_string());
        rec.push(if truth.is_ood()[i] { "1" } else { "0" }.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::format("dataset csv", e.to_string()))?;
    Ok(())
}

/// Reads a dataset CSV. The class count is the OOD sentinel when OOD rows
/// exist, otherwise one past the largest label.
pub fn read_csv<R: Read>(input: R) -> Result<LabeledDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let cols = header.len();
    if cols < 4 {
        return Err(Error::format("dataset csv", "expected at least one feature column"));
    }
    let dim = cols - 3;
    for (j, name) in header.iter().take(dim).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::format("dataset csv", format!("column {j} is `{name}`, expected `f{j}`")));
        }
    }
    if header.iter().skip(dim).collect::<Vec<_>>() != ["true_label", "given_label", "is_ood"] {
        return Err(Error::format("dataset csv", "trailing columns must be true_label,given_label,is_ood"));
    }

    let mut data = Vec::new();
    let mut truth = Vec::new();
    let mut given = Vec::new();
    let mut ood = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::format("dataset csv", format!("row {line}: bad {what}"));
        for j in 0..dim {
            data.push(rec[j].parse::<f64>().map_err(|_| bad("feature"))?);
        }
        truth.push(rec[dim].parse::<usize>().map_err(|_| bad("true_label"))?);
        given.push(rec[dim + 1].parse::<usize>().map_err(|_| bad("given_label"))?);
        ood.push(match &rec[dim + 2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("is_ood")),
        });
    }
    let classes = infer_class_count(&truth, &given, &ood);
    let features = Array2::from_shape_vec((given.len(), dim), data)
        .map_err(|e| Error::format("dataset csv", e.to_string()))?;
    LabeledDataset::new(features, truth, given, ood, classes)
}

fn infer_class_count(truth: &[usize], given: &[usize], ood: &[bool]) -> usize {
    if let Some(i) = ood.iter().position(|o| *o) {
        return truth[i];
    }
    truth.iter().chain(given).copied().max().map_or(0, |m| m + 1)
}

pub fn write_binary<W: Write>(ds: &LabeledDataset, mut out: W) -> Result<()> {
    let io = |e| Error::format("dataset binary", format!("write failed: {e}"));
    out.write_all(DATASET_MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(DATASET_VERSION).map_err(io)?;
    out.write_u64::<LittleEndian>(ds.len() as u64).map_err(io)?;
    out.write_u64::<LittleEndian>(ds.dim() as u64).map_err(io)?;
    out.write_u64::<LittleEndian>(ds.class_count() as u64).map_err(io)?;
    for v in ds.features().iter() {
        out.write_f64::<LittleEndian>(*v).map_err(io)?;
    }
    for &y in ds.truth().true_labels() {
        out.write_u32::<LittleEndian>(y as u32).map_err(io)?;
    }
    for &y in ds.given_labels() {
        out.write_u32::<LittleEndian>(y as u32).map_err(io)?;
    }
    for &o in ds.truth().is_ood() {
        out.write_u8(u8::from(o)).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<LabeledDataset> {
    let io = |e: std::io::Error| Error::format("dataset binary", format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("dataset binary", "bad magic header"));
    }
    let version = input.read_u32::<LittleEndian>().map_err(io)?;
    if version != DATASET_VERSION {
        return Err(Error::format("dataset binary", format!("unsupported version {version}")));
    }
    let rows = input.read_u64::<LittleEndian>().map_err(io)? as usize;
    let dim = input.read_u64::<LittleEndian>().map_err(io)? as usize;
    let classes = input.read_u64::<LittleEndian>().map_err(io)? as usize;
    let len = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::format("dataset binary", "size overflow"))?;
    let mut data = vec![0.0; len];
    input.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
    let read_labels = |input: &mut R| -> Result<Vec<usize>> {
        let mut raw = vec![0u32; rows];
        input.read_u32_into::<LittleEndian>(&mut raw).map_err(io)?;
        Ok(raw.into_iter().map(|v| v as usize).collect())
    };
    let truth = read_labels(&mut input)?;
    let given = read_labels(&mut input)?;
    let mut flags = vec![0u8; rows];
    input.read_exact(&mut flags).map_err(io)?;
    let ood = flags.into_iter().map(|f| f != 0).collect();
    let features = Array2::from_shape_vec((rows, dim), data)
        .map_err(|e| Error::format("dataset binary", e.to_string()))?;
    LabeledDataset::new(features, truth, given, ood, classes)
}

/// Writes CSV for `.csv` paths and the binary form otherwise.
pub fn save(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    if is_csv(path) {
        write_csv(ds, w)
    } else {
        write_binary(ds, w)
    }
}

pub fn load(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let r = BufReader::new(file);
    if is_csv(path) {
        read_csv(r)
    } else {
        read_binary(r)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("dataset csv", e.to_string())
}
