//! Dense per-observation parameter storage.

use std::io::{BufRead, Write};

use crate::env::{ObsKey, ObservationIndex, StateId};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("table format error on line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Fixed-width parameter vectors, one per interned observation. States never
/// written read as the default value (zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    width: usize,
    data: Vec<f64>,
}

impl ParamTable {
    pub fn zeros(n_states: usize, width: usize) -> Self {
        ParamTable {
            width,
            data: vec![0.0; n_states * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_states(&self) -> usize {
        self.data.len() / self.width
    }

    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let i = s.index() * self.width;
        &self.data[i..i + self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, s: StateId) -> &mut [f64] {
        let i = s.index() * self.width;
        &mut self.data[i..i + self.width]
    }

    /// Scalar read for width-1 tables.
    #[inline]
    pub fn scalar(&self, s: StateId) -> f64 {
        debug_assert_eq!(self.width, 1);
        self.data[s.index()]
    }

    #[inline]
    pub fn scalar_mut(&mut self, s: StateId) -> &mut f64 {
        debug_assert_eq!(self.width, 1);
        &mut self.data[s.index()]
    }

    pub fn get(&self, index: &ObservationIndex, key: &ObsKey) -> Vec<f64> {
        match index.lookup(key) {
            Some(s) => self.row(s).to_vec(),
            None => vec![0.0; self.width],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &[f64])> {
        self.data
            .chunks_exact(self.width)
            .enumerate()
            .map(|(i, r)| (StateId(i as u32), r))
    }
}

/// Line-delimited record file for expert tables.
///
/// ```text
/// priorlab-table v1 width=<W>
/// <81 hex digits: observation key> <visits> <v_0> ... <v_{W-1}>
/// ```
///
/// Only states with at least one visit are written; values use the shortest
/// representation that round-trips exactly.
pub fn write_records<W: Write>(
    out: &mut W,
    index: &ObservationIndex,
    table: &ParamTable,
    visits: &[u32],
) -> Result<(), TableError> {
    writeln!(out, "priorlab-table v1 width={}", table.width())?;
    for (s, row) in table.iter() {
        let n = visits[s.index()];
        if n == 0 {
            continue;
        }
        write!(out, "{} {}", index.key(s).to_hex(), n)?;
        for v in row {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a record file back into a table over `index`.
pub fn read_records<R: BufRead>(input: R, index: &ObservationIndex) -> Result<(ParamTable, Vec<u32>), TableError> {
    let fail = |line: usize, msg: String| TableError::Format { line, msg };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| fail(1, "empty file".into()))??;
    let width: usize = header
        .strip_prefix("priorlab-table v1 width=")
        .and_then(|w| w.trim().parse().ok())
        .ok_or_else(|| fail(1, format!("bad header '{header}'")))?;
    let mut table = ParamTable::zeros(index.len(), width);
    let mut visits = vec![0u32; index.len()];
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts
            .next()
            .and_then(ObsKey::from_hex)
            .ok_or_else(|| fail(lineno, "bad key".into()))?;
        let s = index
            .lookup(&key)
            .ok_or_else(|| fail(lineno, "observation does not occur in this world".into()))?;
        visits[s.index()] = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail(lineno, "bad visit count".into()))?;
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fail(lineno, e.to_string()))?;
        if values.len() != width {
            return Err(fail(lineno, format!("expected {width} values, got {}", values.len())));
        }
        table.row_mut(s).copy_from_slice(&values);
    }
    Ok((table, visits))
}
