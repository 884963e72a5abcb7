//! Line-oriented dataset file: a header object, then one complex per line.
//!
//! ```text
//! {"format":"fusionscreen-dataset","version":1,"count":2,"seed":7,"holdout_fraction":0.1,"gen_params":{...}}
//! {"id":"cx0000000001","seed":1,"label_pk":6.2,"split":"train","atoms":[{"pos":[..],"element":0,"role":"protein"},..]}
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::complex::GenMeta;
use super::{Atom, DataError, GenParams, SyntheticComplex};

pub const DATASET_FORMAT: &str = "fusionscreen-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub gen_params: GenParams,
}

impl DatasetHeader {
    pub fn new(count: usize, seed: u64, holdout_fraction: f64, gen_params: GenParams) -> Self {
        Self { format: DATASET_FORMAT.into(), version: DATASET_VERSION, count, seed, holdout_fraction, gen_params }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Record {
    id: String,
    seed: u64,
    label_pk: f64,
    split: SplitTag,
    atoms: Vec<Atom>,
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, rows: &[(SyntheticComplex, SplitTag)]) -> Result<(), DataError> {
    if header.count != rows.len() {
        return Err(DataError::Manifest(format!("header count {} but {} rows", header.count, rows.len())));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for (c, split) in rows {
        let rec = Record { id: c.complex_id.clone(), seed: c.meta.seed, label_pk: c.label_pk, split: *split, atoms: c.atoms.clone() };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<(SyntheticComplex, SplitTag)>), DataError> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| DataError::Manifest("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(DataError::Manifest(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut rows = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Manifest(format!("line {}: {e}", i + 2)))?;
        let c = SyntheticComplex {
            complex_id: rec.id,
            atoms: rec.atoms,
            label_pk: rec.label_pk,
            meta: GenMeta { seed: rec.seed, params: header.gen_params.clone() },
        };
        rows.push((c, rec.split));
    }
    if rows.len() != header.count {
        return Err(DataError::Manifest(format!("header count {} but {} rows", header.count, rows.len())));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    #[test]
    fn round_trip() {
        let params = GenParams::default();
        let data = generate_dataset(6, 3, &params).unwrap();
        let rows: Vec<_> = data.into_iter().enumerate().map(|(i, c)| (c, if i % 3 == 0 { SplitTag::Validation } else { SplitTag::Train })).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let header = DatasetHeader::new(rows.len(), 3, 0.1, params);
        write_dataset(&p, &header, &rows).unwrap();
        let (h, back) = read_dataset(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, rows);
    }
}
