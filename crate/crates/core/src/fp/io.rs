//! Little-endian binary container for grid functions and sparse operators.
//!
//! ```text
//! magic    8 bytes  "HYPOMIX\0"
//! version  u32      1
//! kind     u32      0 = grid values, 1 = sparse operator
//! dim      u32
//! n        u32      cells per axis
//! radius   f64
//! epsilon  f64
//! delta    f64
//! label    u32 length + UTF-8 bytes
//! payload  grid values: u64 count, f64 values in row-major cell order
//!          operator:    u64 rows, u64 nnz, u64 row_ptr[rows + 1],
//!                       u64 cols[nnz], f64 vals[nnz]
//! ```

use std::io::{Read, Write};

use super::sparse::SparseMatrix;
use super::GridSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HYPOMIX\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSnapshot {
    pub grid: GridSpec,
    pub epsilon: f64,
    pub delta: f64,
    pub label: String,
    pub values: Vec<f64>,
}

impl GridSnapshot {
    /// One row per cell: center coordinates then the value.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.grid.dim {
            s.push_str(&format!("x{},", a + 1));
        }
        s.push_str("value\n");
        for (i, v) in self.values.iter().enumerate() {
            for c in self.grid.center(i) {
                s.push_str(&format!("{c},"));
            }
            s.push_str(&format!("{v}\n"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Container {
    Grid(GridSnapshot),
    Operator {
        grid: GridSpec,
        epsilon: f64,
        delta: f64,
        label: String,
        matrix: SparseMatrix,
    },
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        msg: msg.into(),
    }
}

pub fn write_container(w: &mut impl Write, c: &Container) -> Result<()> {
    let (kind, grid, eps, delta, label) = match c {
        Container::Grid(s) => (0, &s.grid, s.epsilon, s.delta, &s.label),
        Container::Operator {
            grid,
            epsilon,
            delta,
            label,
            ..
        } => (1, grid, *epsilon, *delta, label),
    };
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, kind)?;
    put_u32(w, grid.dim as u32)?;
    put_u32(w, grid.n as u32)?;
    put_f64(w, grid.radius)?;
    put_f64(w, eps)?;
    put_f64(w, delta)?;
    put_u32(w, label.len() as u32)?;
    w.write_all(label.as_bytes())?;
    match c {
        Container::Grid(s) => {
            put_u64(w, s.values.len() as u64)?;
            for &v in &s.values {
                put_f64(w, v)?;
            }
        }
        Container::Operator { matrix, .. } => {
            put_u64(w, matrix.n as u64)?;
            put_u64(w, matrix.nnz() as u64)?;
            for &p in &matrix.row_ptr {
                put_u64(w, p as u64)?;
            }
            for &c in &matrix.cols {
                put_u64(w, c as u64)?;
            }
            for &v in &matrix.vals {
                put_f64(w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> Result<Container> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a hypomix container"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let kind = get_u32(r)?;
    let dim = get_u32(r)? as usize;
    let n = get_u32(r)? as usize;
    let radius = get_f64(r)?;
    let grid = GridSpec::new(dim, radius, n)?;
    let epsilon = get_f64(r)?;
    let delta = get_f64(r)?;
    let len = get_u32(r)? as usize;
    let mut label = vec![0u8; len];
    r.read_exact(&mut label)?;
    let label = String::from_utf8(label).map_err(|_| bad("label is not UTF-8"))?;
    match kind {
        0 => {
            let count = get_u64(r)? as usize;
            if count != grid.cells() {
                return Err(bad(format!("expected {} values, header says {count}", grid.cells())));
            }
            let values = (0..count).map(|_| get_f64(r)).collect::<Result<_>>()?;
            Ok(Container::Grid(GridSnapshot {
                grid,
                epsilon,
                delta,
                label,
                values,
            }))
        }
        1 => {
            let rows = get_u64(r)? as usize;
            let nnz = get_u64(r)? as usize;
            if rows != grid.cells() {
                return Err(bad("operator size does not match the grid"));
            }
            let row_ptr: Vec<usize> = (0..=rows)
                .map(|_| get_u64(r).map(|v| v as usize))
                .collect::<Result<_>>()?;
            let cols: Vec<usize> = (0..nnz)
                .map(|_| get_u64(r).map(|v| v as usize))
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = (0..nnz).map(|_| get_f64(r)).collect::<Result<_>>()?;
            if row_ptr.last() != Some(&nnz) || cols.iter().any(|&c| c >= rows) {
                return Err(bad("corrupt sparse payload"));
            }
            Ok(Container::Operator {
                grid,
                epsilon,
                delta,
                label,
                matrix: SparseMatrix {
                    n: rows,
                    row_ptr,
                    cols,
                    vals,
                },
            })
        }
        k => Err(bad(format!("unknown container kind {k}"))),
    }
}
