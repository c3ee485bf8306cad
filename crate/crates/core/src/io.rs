//! On-disk formats.
//!
//! **Field JSON.** An object with the header keys `d`, `inv_eps`, `alpha`,
//! `beta`, `seed`, `kind`, then `encoding` (`"hex"` or `"csv"`),
//! `occupancy`, and optionally `valleys`. Cells are listed row-major with
//! axis 0 fastest; `1` marks a β-cell. In `hex` encoding cell `i` is bit
//! `i % 8` (least significant first) of byte `i / 8`, bytes written as
//! lowercase hex pairs, unused high bits of the last byte zero. In `csv`
//! encoding the occupancy is a comma-separated string of `0`/`1`.
//!
//! **Matrix dump.** Text lines `row col value` (0-based indices, both
//! triangles, values in shortest round-trip form) after a header line
//! `%%qloc coordinate <n> <nnz>`, plus a JSON sidecar `{n, h, field_hash}`.
//!
//! **CSV artifacts.** Every CSV starts with `# config_hash=<hex>` and
//! `# units: …` comment lines, followed by a header row.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eig::{IterationState, Spectrum, StartBlock};
use crate::error::{Error, Result};
use crate::potential::{Cuboid, FieldKind, GridSpec, PotentialField};
use crate::schwarz::RichardsonStep;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Hex,
    Csv,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    d: usize,
    inv_eps: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    kind: FieldKind,
    encoding: Encoding,
    occupancy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valleys: Option<Vec<Cuboid>>,
}

pub fn encode_hex(bits: &[bool]) -> String {
    let bytes: Vec<u8> = bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i))).collect();
    hex::encode(bytes)
}

pub fn decode_hex(s: &str, n: usize) -> Result<Vec<bool>> {
    let bytes = hex::decode(s).map_err(|e| Error::Parse(format!("occupancy hex: {e}")))?;
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::Parse(format!("occupancy has {} bytes, expected {}", bytes.len(), n.div_ceil(8))));
    }
    let bits: Vec<bool> = (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect();
    if !n.is_multiple_of(8) && bytes[n / 8] >> (n % 8) != 0 {
        return Err(Error::Parse("nonzero padding bits in occupancy".into()));
    }
    Ok(bits)
}

pub fn field_to_json(field: &PotentialField, encoding: Encoding) -> String {
    let occupancy = match encoding {
        Encoding::Hex => encode_hex(&field.occupancy),
        Encoding::Csv => field.occupancy.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(","),
    };
    let f = FieldFile {
        d: field.grid.d,
        inv_eps: field.grid.inv_eps,
        alpha: field.alpha,
        beta: field.beta,
        seed: field.grid.seed,
        kind: field.kind.clone(),
        encoding,
        occupancy,
        valleys: field.valleys.clone(),
    };
    serde_json::to_string_pretty(&f).expect("field serializes")
}

pub fn parse_field(text: &str) -> Result<PotentialField> {
    let f: FieldFile = serde_json::from_str(text)?;
    let grid = GridSpec::new(f.d, f.inv_eps, f.seed)?;
    let n = grid.num_cells();
    let occ = match f.encoding {
        Encoding::Hex => decode_hex(f.occupancy.trim(), n)?,
        Encoding::Csv => {
            let bits = f
                .occupancy
                .split(',')
                .map(|t| match t.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Parse(format!("occupancy entry {other:?} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if bits.len() != n {
                return Err(Error::Parse(format!("occupancy has {} entries, expected {n}", bits.len())));
            }
            bits
        }
    };
    let mut field = PotentialField::from_occupancy(grid, occ, f.alpha, f.beta)?;
    if let Some(v) = &f.valleys {
        let lat = grid.cells();
        for c in v {
            if (0..grid.d).any(|k| c.anchor[k] >= grid.inv_eps || c.sides[k] == 0 || c.sides[k] > grid.inv_eps)
                || (grid.d..crate::lattice::MAX_DIM).any(|k| c.anchor[k] != 0 || c.sides[k] != 1)
            {
                return Err(Error::Parse(format!("valley {c:?} does not fit the grid")));
            }
            if c.cells(lat).iter().any(|&cell| field.is_beta(cell)) {
                return Err(Error::Parse(format!("valley {c:?} covers a β-cell")));
            }
        }
    }
    field.kind = f.kind;
    field.valleys = f.valleys;
    Ok(field)
}

/// SHA-256 of the canonical (hex-encoded) field JSON.
pub fn field_hash(field: &PotentialField) -> String {
    sha256_hex(field_to_json(field, Encoding::Hex).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSidecar {
    pub n: usize,
    pub h: f64,
    pub field_hash: String,
}

pub fn matrix_to_coordinate(a: &CsrMatrix) -> String {
    let mut out = String::with_capacity(a.nnz() * 32);
    let _ = writeln!(out, "%%qloc coordinate {} {}", a.n(), a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(out, "{i} {j} {v:?}");
    }
    out
}

pub fn parse_matrix_dump(text: &str) -> Result<CsrMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix dump".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "%%qloc" || parts[1] != "coordinate" {
        return Err(Error::Parse(format!("bad matrix header {header:?}")));
    }
    let n: usize = parts[2].parse().map_err(|_| Error::Parse("bad dimension".into()))?;
    let nnz: usize = parts[3].parse().map_err(|_| Error::Parse("bad entry count".into()))?;
    if n > 1 << 26 || nnz > 1 << 28 {
        return Err(Error::Parse("matrix dump too large".into()));
    }
    let mut trip = Vec::with_capacity(nnz.min(1 << 20));
    let mut last: Option<(usize, usize)> = None;
    for line in lines {
        let mut it = line.split_whitespace();
        let (Some(r), Some(c), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("bad matrix line {line:?}")));
        };
        let r: usize = r.parse().map_err(|_| Error::Parse(format!("bad row {r:?}")))?;
        let c: usize = c.parse().map_err(|_| Error::Parse(format!("bad column {c:?}")))?;
        let v: f64 = v.parse().map_err(|_| Error::Parse(format!("bad value {v:?}")))?;
        if r >= n || c >= n || !v.is_finite() {
            return Err(Error::Parse(format!("entry ({r}, {c}, {v}) out of range")));
        }
        if last.is_some_and(|p| p >= (r, c)) {
            return Err(Error::Parse("entries must be strictly sorted by (row, col)".into()));
        }
        last = Some((r, c));
        trip.push((r, c, v));
    }
    if trip.len() != nnz {
        return Err(Error::Parse(format!("header announces {nnz} entries, found {}", trip.len())));
    }
    Ok(CsrMatrix::from_triplets(n, trip))
}

/// Comment lines heading every CSV artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvHeader {
    pub config_hash: String,
    pub units: String,
}

impl CsvHeader {
    fn write(&self, out: &mut String) {
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# units: {}", self.units);
    }
}

pub fn vector_to_csv(header: &CsvHeader, v: &[f64]) -> String {
    let mut out = String::new();
    header.write(&mut out);
    out.push_str("index,value\n");
    for (i, x) in v.iter().enumerate() {
        let _ = writeln!(out, "{i},{x:?}");
    }
    out
}

pub fn parse_vector_csv(text: &str) -> Result<Vec<f64>> {
    let mut rows = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match rows.next() {
        Some(h) if h.trim() == "index,value" => {}
        other => return Err(Error::Parse(format!("expected header \"index,value\", got {other:?}"))),
    }
    let mut out = Vec::new();
    for (expected, line) in rows.enumerate() {
        let (i, v) = line.split_once(',').ok_or_else(|| Error::Parse(format!("bad vector line {line:?}")))?;
        let i: usize = i.trim().parse().map_err(|_| Error::Parse(format!("bad index {i:?}")))?;
        if i != expected {
            return Err(Error::Parse(format!("index {i} out of sequence (expected {expected})")));
        }
        let v: f64 = v.trim().parse().map_err(|_| Error::Parse(format!("bad value {v:?}")))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("non-finite value at index {i}")));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn spectrum_to_csv(header: &CsvHeader, s: &Spectrum) -> String {
    let mut out = String::new();
    header.write(&mut out);
    out.push_str("index,eigenvalue,residual\n");
    for (i, (e, r)) in s.values.iter().zip(&s.residuals).enumerate() {
        let _ = writeln!(out, "{},{e:?},{r:e}", i + 1);
    }
    out
}

pub fn iteration_to_csv(header: &CsvHeader, st: &IterationState) -> String {
    let mut out = String::new();
    header.write(&mut out);
    out.push_str("step,err,rate,support_cells\n");
    for k in 0..st.support_history.len() {
        let err = st.history.get(k).copied();
        let rate = if k > 0 { st.history.get(k).zip(st.history.get(k - 1)).map(|(a, b)| a / b) } else { None };
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        let _ = writeln!(out, "{k},{},{},{}", fmt(err), fmt(rate), st.support_history[k]);
    }
    out
}

pub fn richardson_to_csv(header: &CsvHeader, history: &[RichardsonStep]) -> String {
    let mut out = String::new();
    header.write(&mut out);
    out.push_str("step,energy_error,residual_a_norm,support_cells,gamma_running\n");
    for h in history {
        let e = h.energy_error.map_or(String::new(), |v| format!("{v:e}"));
        let _ = writeln!(out, "{},{e},{:e},{},{:e}", h.step, h.residual, h.support_cells, h.gamma_running);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StartBlockReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub c_inv_norm: Option<f64>,
    pub max_rayleigh: f64,
    pub labels: Vec<String>,
    pub config_hash: String,
}

pub fn start_block_report(block: &StartBlock, config_hash: &str) -> String {
    let r = StartBlockReport {
        k: block.k(),
        c_inv_norm: block.c_inv_norm,
        max_rayleigh: block.max_rayleigh(),
        labels: block.labels.clone(),
        config_hash: config_hash.to_string(),
    };
    serde_json::to_string_pretty(&r).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{gen_iid, gen_tensor};

    #[test]
    fn hex_bit_order() {
        let bits = [true, false, false, false, false, false, false, false, false, true];
        assert_eq!(encode_hex(&bits), "0102");
        assert_eq!(decode_hex("0102", 10).unwrap(), bits);
        assert!(decode_hex("0106", 10).is_err());
        assert!(decode_hex("01", 10).is_err());
    }

    #[test]
    fn field_roundtrip_both_encodings() {
        let grid = GridSpec::new(2, 6, 9).unwrap();
        let field = gen_tensor(grid, 0.5, 1.0, 40.0).unwrap();
        for enc in [Encoding::Hex, Encoding::Csv] {
            let back = parse_field(&field_to_json(&field, enc)).unwrap();
            assert_eq!(back, field);
        }
        let other = gen_iid(grid, 0.5, 1.0, 40.0).unwrap();
        assert_ne!(field_hash(&field), field_hash(&other));
        assert_eq!(field_hash(&field).len(), 64);
    }

    #[test]
    fn rejects_malformed_fields() {
        let bad = [
            "",
            "{}",
            r#"{"d":1,"inv_eps":4,"alpha":1,"beta":2,"seed":0,"kind":{"type":"custom"},"encoding":"csv","occupancy":"1,0,1"}"#,
            r#"{"d":1,"inv_eps":4,"alpha":3,"beta":2,"seed":0,"kind":{"type":"custom"},"encoding":"csv","occupancy":"1,0,1,0"}"#,
            r#"{"d":1,"inv_eps":4,"alpha":1,"beta":2,"seed":0,"kind":{"type":"custom"},"encoding":"csv","occupancy":"1,0,2,0"}"#,
            r#"{"d":9,"inv_eps":4,"alpha":1,"beta":2,"seed":0,"kind":{"type":"custom"},"encoding":"hex","occupancy":"05"}"#,
            r#"{"d":1,"inv_eps":4,"alpha":1,"beta":2,"seed":0,"kind":{"type":"custom"},"encoding":"csv","occupancy":"1,0,1,0","valleys":[{"anchor":[0,0,0],"sides":[1,1,1]}]}"#,
        ];
        for b in bad {
            assert!(parse_field(b).is_err(), "accepted {b}");
        }
    }

    #[test]
    fn matrix_roundtrip() {
        let a = CsrMatrix::from_triplets(3, vec![(0, 0, 2.5), (0, 2, -1.0 / 3.0), (2, 0, -1.0 / 3.0), (1, 1, 1e-300)]);
        let text = matrix_to_coordinate(&a);
        assert_eq!(parse_matrix_dump(&text).unwrap(), a);
        assert!(parse_matrix_dump("%%qloc coordinate 2 1\n0 5 1.0\n").is_err());
        assert!(parse_matrix_dump("%%qloc coordinate 2 2\n0 0 1.0\n").is_err());
        assert!(parse_matrix_dump("%%qloc coordinate 2 2\n1 0 1.0\n0 0 1.0\n").is_err());
    }

    #[test]
    fn vector_roundtrip() {
        let h = CsvHeader { config_hash: "abc".into(), units: "nodal coefficient".into() };
        let v = vec![0.1, -2.0, 1e-17];
        let text = vector_to_csv(&h, &v);
        assert!(text.starts_with("# config_hash=abc\n"));
        assert_eq!(parse_vector_csv(&text).unwrap(), v);
        assert!(parse_vector_csv("index,value\n1,0.5\n").is_err());
        assert!(parse_vector_csv("index,value\n0,NaN\n").is_err());
    }
}
