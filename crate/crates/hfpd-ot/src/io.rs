//! Output writers and the binary sample-block codec.
//!
//! Every text output starts with a comment line carrying the config hash and
//! seed, so a result file is traceable to the exact run that produced it.

use crate::core::{CostMatrix, TransportPlan};
use crate::error::{HfpdError, Result};

pub const SAMPLE_BLOCK_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Hard cap on decoded sample-block payloads (1 GiB of floats).
const MAX_BLOCK_VALUES: u64 = (1 << 30) / 8;

pub fn provenance_comment(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

/// Renders an m x n matrix as CSV with the provenance comment on top.
pub fn matrix_csv(config_hash: &str, seed: u64, rows: usize, entries: &[f64]) -> String {
    assert!(rows > 0 && entries.len() % rows == 0);
    let cols = entries.len() / rows;
    let mut out = provenance_comment(config_hash, seed);
    for i in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|j| format!("{:.17e}", entries[i * cols + j]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders a table with a header row; each record is one CSV line.
pub fn table_csv(
    config_hash: &str,
    seed: u64,
    columns: &[&str],
    records: &[Vec<String>],
) -> String {
    let mut out = provenance_comment(config_hash, seed);
    out.push_str(&columns.join(","));
    out.push('\n');
    for rec in records {
        assert_eq!(rec.len(), columns.len());
        out.push_str(&rec.join(","));
        out.push('\n');
    }
    out
}

/// A batch of transport-plan samples plus the provenance needed to replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl SampleBlock {
    pub fn from_plans(plans: &[TransportPlan], seed: u64) -> Result<Self> {
        let first = plans
            .first()
            .ok_or_else(|| HfpdError::Parameter("sample block needs at least one plan".into()))?;
        let (rows, cols) = (first.rows(), first.cols());
        let mut values = Vec::with_capacity(plans.len() * rows * cols);
        for p in plans {
            if p.rows() != rows || p.cols() != cols {
                return Err(HfpdError::Dimension(
                    "all plans in a block must share a shape".into(),
                ));
            }
            values.extend_from_slice(p.entries());
        }
        Ok(Self {
            rows,
            cols,
            seed,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.values.len() / (self.rows * self.cols)
    }

    pub fn plan(&self, index: usize) -> Result<TransportPlan> {
        let cell = self.rows * self.cols;
        let start = index * cell;
        if start + cell > self.values.len() {
            return Err(HfpdError::Parameter(format!(
                "plan index {index} out of range"
            )));
        }
        TransportPlan::new(self.values[start..start + cell].to_vec(), self.rows, self.cols)
    }
}

/// Header: m (u32), n (u32), count (u64), seed (u64); then count*m*n
/// little-endian f64 values.
pub fn encode_sample_block(block: &SampleBlock) -> Vec<u8> {
    let count = block.count() as u64;
    let mut buf = Vec::with_capacity(SAMPLE_BLOCK_HEADER_LEN + block.values.len() * 8);
    buf.extend_from_slice(&(block.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(block.cols as u32).to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&block.seed.to_le_bytes());
    for v in &block.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_sample_block(bytes: &[u8]) -> Result<SampleBlock> {
    if bytes.len() < SAMPLE_BLOCK_HEADER_LEN {
        return Err(HfpdError::Config("sample block shorter than header".into()));
    }
    let m = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as u64;
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if m < 2 || n < 2 || count == 0 {
        return Err(HfpdError::Config(
            "sample block header requires m >= 2, n >= 2, count >= 1".into(),
        ));
    }
    let total = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(count))
        .ok_or_else(|| HfpdError::Config("sample block size overflows".into()))?;
    if total > MAX_BLOCK_VALUES {
        return Err(HfpdError::Capacity(format!(
            "sample block declares {total} values, cap is {MAX_BLOCK_VALUES}"
        )));
    }
    let payload = &bytes[SAMPLE_BLOCK_HEADER_LEN..];
    if payload.len() != total as usize * 8 {
        return Err(HfpdError::Config(format!(
            "sample block payload is {} bytes, header implies {}",
            payload.len(),
            total * 8
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SampleBlock {
        rows: m as usize,
        cols: n as usize,
        seed,
        values,
    })
}

/// Parses a cost matrix from CSV text. Lines starting with '#' are comments;
/// every data row must have the same number of finite, nonnegative fields.
pub fn parse_cost_matrix_csv(text: &str) -> Result<CostMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in trimmed.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                HfpdError::Config(format!("line {}: bad number {field:?}", lineno + 1))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(HfpdError::Config(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
        if rows.len() > 4096 {
            return Err(HfpdError::Capacity("cost matrix exceeds 4096 rows".into()));
        }
    }
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if n > 4096 {
        return Err(HfpdError::Capacity("cost matrix exceeds 4096 columns".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    CostMatrix::new(flat, m, n)
}
