//! Expression, clone and label files.
//!
//! Expression CSV: header row of gene IDs (first cell ignored), then one row
//! per cell with the cell ID first. Packed binary: `LOTX`, version byte,
//! timepoint byte, `u64` cell and gene counts, length-prefixed UTF-8 IDs,
//! then row-major little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CloneMatrix, DataError, ExpressionMatrix, Fate, FateLabels, Timepoint};
use crate::math::Tensor;

const MAGIC: &[u8; 4] = b"LOTX";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Packed,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("lotx") => MatrixFormat::Packed,
            _ => MatrixFormat::Csv,
        }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> DataError {
    DataError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

pub fn load_expression(
    path: &Path,
    format: MatrixFormat,
    timepoint: Timepoint,
) -> Result<ExpressionMatrix, DataError> {
    match format {
        MatrixFormat::Csv => read_expression_csv(path, timepoint),
        MatrixFormat::Packed => read_packed(path),
    }
}

pub fn write_expression(path: &Path, m: &ExpressionMatrix, format: MatrixFormat) -> Result<(), DataError> {
    match format {
        MatrixFormat::Csv => write_expression_csv(path, m),
        MatrixFormat::Packed => write_packed(path, m),
    }
}

fn read_expression_csv(path: &Path, timepoint: Timepoint) -> Result<ExpressionMatrix, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    if header.len() < 2 {
        return Err(parse_err(path, 1, "header needs a corner cell and at least one gene ID"));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if let Some(dup) = first_duplicate(&gene_ids) {
        return Err(parse_err(path, 1, format!("duplicate gene ID `{dup}`")));
    }
    let width = gene_ids.len();
    let mut cell_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", width + 1, rec.len()),
            ));
        }
        let id = rec[0].to_owned();
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate cell ID `{id}`")));
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, line, format!("non-numeric value `{field}` for gene {}", gene_ids[j]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        cell_ids.push(id);
    }
    if cell_ids.is_empty() {
        return Err(parse_err(path, 2, "no cell rows"));
    }
    let values = Tensor::new(cell_ids.len(), width, values).expect("row widths checked");
    ExpressionMatrix::new(values, cell_ids, gene_ids, timepoint)
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = std::collections::HashSet::new();
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

fn write_expression_csv(path: &Path, m: &ExpressionMatrix) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend(m.gene_ids.iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(m.n_genes() + 1);
    for (i, id) in m.cell_ids.iter().enumerate() {
        row.clear();
        row.push(id.clone());
        row.extend(m.values.row_slice(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_id(w: &mut impl Write, id: &str) -> std::io::Result<()> {
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id.as_bytes())
}

fn write_packed(path: &Path, m: &ExpressionMatrix) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, m.timepoint.code()])?;
    w.write_all(&(m.n_cells() as u64).to_le_bytes())?;
    w.write_all(&(m.n_genes() as u64).to_le_bytes())?;
    for id in m.cell_ids.iter().chain(&m.gene_ids) {
        write_id(&mut w, id)?;
    }
    for v in m.values.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct ByteReader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(parse_err(self.path, 0, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn id(&mut self) -> Result<String, DataError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes).map_err(|_| parse_err(self.path, 0, "ID is not UTF-8"))
    }
}

fn read_packed(path: &Path) -> Result<ExpressionMatrix, DataError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    let mut r = ByteReader { path, buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected LOTX"));
    }
    let head = r.take(2)?;
    let (version, tp) = (head[0], head[1]);
    if version != VERSION {
        return Err(parse_err(path, 0, format!("unsupported version {version}")));
    }
    let timepoint = Timepoint::from_code(tp)
        .ok_or_else(|| parse_err(path, 0, format!("unknown timepoint code {tp}")))?;
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let cell_ids = (0..n).map(|_| r.id()).collect::<Result<Vec<_>, _>>()?;
    let gene_ids = (0..d).map(|_| r.id()).collect::<Result<Vec<_>, _>>()?;
    let values = (0..n * d).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let values = Tensor::new(n, d, values).expect("counted");
    ExpressionMatrix::new(values, cell_ids, gene_ids, timepoint)
}

/// Clone CSV: `cell_id,clone_id,1` triplets, optional header.
pub fn load_clones(path: &Path) -> Result<CloneMatrix, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut memberships = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if i == 0 && rec.get(2).is_some_and(|v| v.trim().parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        match rec[2].trim() {
            "1" => memberships.push((rec[0].to_owned(), rec[1].to_owned())),
            "0" => {}
            other => {
                return Err(parse_err(path, line, format!("membership must be 0 or 1, got `{other}`")))
            }
        }
    }
    if memberships.is_empty() {
        return Err(parse_err(path, 1, "no clone memberships"));
    }
    CloneMatrix::from_memberships(memberships)
}

pub fn write_clones(path: &Path, clones: &CloneMatrix) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "clone_id", "member"])?;
    for &(c, k) in &clones.entries {
        w.write_record([clones.cell_ids[c].as_str(), clones.clone_ids[k].as_str(), "1"])?;
    }
    w.flush()?;
    Ok(())
}

/// Label CSV: `cell_id,fate` with a header row.
pub fn load_labels(path: &Path) -> Result<FateLabels, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = FateLabels::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected `cell_id,fate`"));
        }
        let fate: Fate = rec[1].parse().map_err(|e: String| parse_err(path, line, e))?;
        if out.insert(rec[0].to_owned(), fate).is_some() {
            return Err(parse_err(path, line, format!("duplicate cell ID `{}`", &rec[0])));
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &FateLabels) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "fate"])?;
    for (id, fate) in labels {
        w.write_record([id.as_str(), &fate.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::fs;

    #[test]
    fn parses_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "cell,g1,g2\nc1,1,2\nc2,3,4\n").unwrap();
        let m = load_expression(&p, MatrixFormat::Csv, Timepoint::Day2).unwrap();
        assert_eq!(m.values, Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        assert_eq!(m.cell_ids, ["c1", "c2"]);
        assert_eq!(m.gene_ids, ["g1", "g2"]);
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "").unwrap();
        assert!(matches!(
            load_expression(&p, MatrixFormat::Csv, Timepoint::Day2),
            Err(DataError::Parse { .. })
        ));
    }

    #[test]
    fn reports_line_of_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "cell,g1,g2\nc1,1,2\nc2,3\n").unwrap();
        match load_expression(&p, MatrixFormat::Csv, Timepoint::Day2) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "cell,g1,g2\nc1,1,x\n").unwrap();
        match load_expression(&p, MatrixFormat::Csv, Timepoint::Day2) {
            Err(DataError::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("non-numeric"));
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "cell,g1\nc1,1\nc1,2\n").unwrap();
        assert!(matches!(
            load_expression(&p, MatrixFormat::Csv, Timepoint::Day2),
            Err(DataError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn both_formats_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values = Tensor::from_fn(10, 5, |_, _| rng.random::<f64>() * 1e3 - 17.0);
        let m = ExpressionMatrix::new(
            values,
            (0..10).map(|i| format!("cell{i}")).collect(),
            (0..5).map(|j| format!("gene{j}")).collect(),
            Timepoint::Day4_6,
        )
        .unwrap();
        for (name, fmt) in [("m.csv", MatrixFormat::Csv), ("m.bin", MatrixFormat::Packed)] {
            let p = dir.path().join(name);
            write_expression(&p, &m, fmt).unwrap();
            let back = load_expression(&p, fmt, Timepoint::Day4_6).unwrap();
            let same_bits = back
                .values
                .data()
                .iter()
                .zip(m.values.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{name}");
            assert_eq!(back.cell_ids, m.cell_ids);
            assert_eq!(back.gene_ids, m.gene_ids);
        }
    }

    #[test]
    fn clone_file_rejects_multi_membership() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "cell_id,clone_id,member\na,k1,1\nb,k1,1\na,k2,1\n").unwrap();
        match load_clones(&p) {
            Err(DataError::MultiClone(cells)) => assert_eq!(cells, ["a"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let mut labels = FateLabels::new();
        labels.insert("x".into(), Fate::Monocyte);
        labels.insert("y".into(), Fate::Neutrophil);
        write_labels(&p, &labels).unwrap();
        assert_eq!(load_labels(&p).unwrap(), labels);
    }
}
