//! Field serialisation. Two formats: a `#`-commented text table for eyeballs
//! and scripts, and a little-endian binary container for bit-exact round
//! trips. Both store slices t-major, x fastest within a slice, components
//! innermost, which is exactly the in-memory layout of `GridSection`.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::manifold::Grid;
use crate::sections::GridSection;

pub const TEXT_HEADER: &str = "# wavelab-field v1";
pub const BINARY_MAGIC: &[u8; 4] = b"WVLB";
pub const BINARY_VERSION: u32 = 1;

/// Shape carried by a field file, so files load without the producing grid.
/// `nx[1] == 1` for one spatial dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldShape {
    pub nt: usize,
    pub nx: [usize; 2],
    pub dim: usize,
    pub rank: usize,
}

impl FieldShape {
    pub fn of(grid: &Grid, rank: usize) -> Self {
        Self { nt: grid.nt, nx: grid.nx, dim: grid.dim, rank }
    }

    pub fn cells(&self) -> usize {
        self.nx[0] * self.nx[1]
    }

    fn values(&self) -> usize {
        self.nt * self.cells() * self.rank
    }
}

#[derive(Debug, Clone)]
pub struct LoadedField {
    pub shape: FieldShape,
    pub section: GridSection,
}

fn check_shape(grid: &Grid, field: &GridSection) -> Result<()> {
    if field.nt != grid.nt || field.cells != grid.cells() {
        return Err(Error::GridMismatch(format!(
            "field is {}x{}, grid is {}x{}",
            field.nt,
            field.cells,
            grid.nt,
            grid.cells()
        )));
    }
    if field.rank == 0 {
        return Err(Error::Format("rank 0 field".into()));
    }
    Ok(())
}

/// Text format: header line, one `# shape` comment, then one row per
/// (slice, cell) holding `t_index, x_index[, y_index]` and a re,im pair per
/// component. Values print as shortest round-tripping decimals, so
/// write -> read -> write is byte-stable.
pub fn write_text<W: Write>(grid: &Grid, field: &GridSection, w: &mut W) -> Result<()> {
    check_shape(grid, field)?;
    writeln!(w, "{TEXT_HEADER}")?;
    if grid.dim == 2 {
        writeln!(
            w,
            "# shape nt={} nx={} ny={} rank={}",
            field.nt, grid.nx[0], grid.nx[1], field.rank
        )?;
    } else {
        writeln!(w, "# shape nt={} nx={} rank={}", field.nt, grid.nx[0], field.rank)?;
    }
    let mut line = String::new();
    for slice in 0..field.nt {
        for cell in 0..field.cells {
            line.clear();
            let (jx, jy) = grid.cell_coords(cell);
            line.push_str(&format!("{slice},{jx}"));
            if grid.dim == 2 {
                line.push_str(&format!(",{jy}"));
            }
            for k in 0..field.rank {
                let v = field.get(slice, cell, k);
                line.push_str(&format!(",{},{}", v.re, v.im));
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

fn parse_shape_comment(line: &str) -> Result<FieldShape> {
    let mut nt = None;
    let mut nx = None;
    let mut ny = None;
    let mut rank = None;
    for tok in line.trim_start_matches('#').split_whitespace().skip(1) {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad shape token {tok:?}")))?;
        let n: usize = val
            .parse()
            .map_err(|_| Error::Format(format!("bad shape value {tok:?}")))?;
        match key {
            "nt" => nt = Some(n),
            "nx" => nx = Some(n),
            "ny" => ny = Some(n),
            "rank" => rank = Some(n),
            _ => return Err(Error::Format(format!("unknown shape key {key:?}"))),
        }
    }
    match (nt, nx, rank) {
        (Some(nt), Some(nx), Some(rank)) if nt > 0 && nx > 0 && rank > 0 => Ok(FieldShape {
            nt,
            nx: [nx, ny.unwrap_or(1)],
            dim: if ny.is_some() { 2 } else { 1 },
            rank,
        }),
        _ => Err(Error::Format("shape comment missing nt/nx/rank".into())),
    }
}

struct RawRow {
    indices: Vec<usize>,
    reim: Vec<f64>,
    line_no: usize,
}

/// Reads the text format. The `# shape` comment is honoured when present;
/// otherwise the shape is inferred from the column count (dim 1 rows have an
/// even number of columns, dim 2 rows an odd one) and the largest indices.
pub fn read_text<R: BufRead>(r: R) -> Result<LoadedField> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::Format("empty field file".into())),
        }
    };
    if header.trim_end() != TEXT_HEADER {
        return Err(Error::Format(format!("bad header line {header:?}")));
    }

    let mut shape: Option<FieldShape> = None;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut cols = None;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if rest.trim_start().starts_with("shape") {
                shape = Some(parse_shape_comment(trimmed)?);
            }
            continue;
        }
        let toks: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match cols {
            None => {
                if toks.len() < 4 {
                    return Err(Error::Format(format!(
                        "line {line_no}: expected at least 4 columns, got {}",
                        toks.len()
                    )));
                }
                cols = Some(toks.len());
            }
            Some(c) if c != toks.len() => {
                return Err(Error::Format(format!(
                    "line {line_no}: expected {c} columns, got {}",
                    toks.len()
                )))
            }
            _ => {}
        }
        let dim = match &shape {
            Some(s) => s.dim,
            // 1 + dim index columns plus 2*rank value columns
            None => {
                if toks.len() % 2 == 0 {
                    1
                } else {
                    2
                }
            }
        };
        let mut indices = Vec::with_capacity(1 + dim);
        for tok in &toks[..1 + dim] {
            indices.push(
                tok.parse::<usize>()
                    .map_err(|_| Error::Format(format!("line {line_no}: bad index {tok:?}")))?,
            );
        }
        let mut reim = Vec::with_capacity(toks.len() - 1 - dim);
        for tok in &toks[1 + dim..] {
            reim.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {line_no}: bad value {tok:?}")))?,
            );
        }
        rows.push(RawRow { indices, reim, line_no });
    }

    let shape = match shape {
        Some(s) => s,
        None => infer_shape(&rows)?,
    };
    if rows.iter().any(|r| r.reim.len() != 2 * shape.rank || r.indices.len() != 1 + shape.dim) {
        return Err(Error::Format(format!(
            "rows do not match shape nt={} nx={:?} rank={}",
            shape.nt, shape.nx, shape.rank
        )));
    }

    let mut values = vec![C64::new(0.0, 0.0); shape.values()];
    let mut filled = vec![false; shape.nt * shape.cells()];
    for row in &rows {
        let slice = row.indices[0];
        let jx = row.indices[1];
        let jy = if shape.dim == 2 { row.indices[2] } else { 0 };
        if slice >= shape.nt || jx >= shape.nx[0] || jy >= shape.nx[1] {
            return Err(Error::Format(format!(
                "line {}: index ({slice},{jx},{jy}) outside shape",
                row.line_no
            )));
        }
        let cell = jy * shape.nx[0] + jx;
        let node = slice * shape.cells() + cell;
        if filled[node] {
            return Err(Error::Format(format!("line {}: duplicate node", row.line_no)));
        }
        filled[node] = true;
        for k in 0..shape.rank {
            values[node * shape.rank + k] = C64::new(row.reim[2 * k], row.reim[2 * k + 1]);
        }
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::Format(format!(
            "missing row for slice {} cell {}",
            missing / shape.cells(),
            missing % shape.cells()
        )));
    }

    Ok(LoadedField {
        shape,
        section: GridSection {
            nt: shape.nt,
            cells: shape.cells(),
            rank: shape.rank,
            values,
        },
    })
}

fn infer_shape(rows: &[RawRow]) -> Result<FieldShape> {
    let first = rows.first().ok_or_else(|| Error::Format("no data rows".into()))?;
    let cols = first.indices.len() + first.reim.len();
    let dim = if cols % 2 == 0 { 1 } else { 2 };
    let rank = (cols - 1 - dim) / 2;
    if rank == 0 {
        return Err(Error::Format(format!("{cols} columns leave no components")));
    }
    let mut nt = 0;
    let mut nx = [0usize; 2];
    for row in rows {
        nt = nt.max(row.indices[0] + 1);
        nx[0] = nx[0].max(row.indices[1] + 1);
        if dim == 2 {
            nx[1] = nx[1].max(row.indices[2] + 1);
        }
    }
    if dim == 1 {
        nx[1] = 1;
    }
    Ok(FieldShape { nt, nx, dim, rank })
}

/// Binary format: magic `WVLB`, then u32 little-endian version, rank, Nt, Nx
/// and (two spatial dimensions only) Ny, then the payload as f64 LE pairs
/// re,im per component. A reader distinguishes the five and six word headers
/// by payload length; 16-byte values make the two cases disjoint.
pub fn write_binary<W: Write>(grid: &Grid, field: &GridSection, w: &mut W) -> Result<()> {
    check_shape(grid, field)?;
    for n in [field.nt, grid.nx[0], grid.nx[1], field.rank] {
        if n > u32::MAX as usize {
            return Err(Error::Format(format!("dimension {n} exceeds u32")));
        }
    }
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(field.rank as u32).to_le_bytes())?;
    w.write_all(&(field.nt as u32).to_le_bytes())?;
    w.write_all(&(grid.nx[0] as u32).to_le_bytes())?;
    if grid.dim == 2 {
        w.write_all(&(grid.nx[1] as u32).to_le_bytes())?;
    }
    for v in &field.values {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::Format("truncated header".into()));
    }
    Ok(u32::from_le_bytes(bytes[at..end].try_into().unwrap()))
}

pub fn read_binary(bytes: &[u8]) -> Result<LoadedField> {
    if bytes.len() < 4 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Format("missing WVLB magic".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rank = read_u32(bytes, 8)? as usize;
    let nt = read_u32(bytes, 12)? as usize;
    let nx0 = read_u32(bytes, 16)? as usize;
    if rank == 0 || nt == 0 || nx0 == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let rest = bytes.len() - 20;
    let len_1d = nt
        .checked_mul(nx0)
        .and_then(|n| n.checked_mul(rank))
        .and_then(|n| n.checked_mul(16))
        .ok_or_else(|| Error::Format("header overflow".into()))?;
    let (shape, payload) = if rest == len_1d {
        (FieldShape { nt, nx: [nx0, 1], dim: 1, rank }, &bytes[20..])
    } else {
        let ny = read_u32(bytes, 20)? as usize;
        if ny == 0 {
            return Err(Error::Format("zero Ny in header".into()));
        }
        let len_2d = len_1d
            .checked_mul(ny)
            .ok_or_else(|| Error::Format("header overflow".into()))?;
        if rest != 4 + len_2d {
            return Err(Error::Format(format!(
                "payload is {rest} bytes, expected {len_1d} (1d) or {} (2d)",
                4 + len_2d
            )));
        }
        (FieldShape { nt, nx: [nx0, ny], dim: 2, rank }, &bytes[24..])
    };

    let values: Vec<C64> = payload
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(LoadedField {
        shape,
        section: GridSection {
            nt: shape.nt,
            cells: shape.cells(),
            rank: shape.rank,
            values,
        },
    })
}

pub fn save_text(path: &Path, grid: &Grid, field: &GridSection) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_text(grid, field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_binary(path: &Path, grid: &Grid, field: &GridSection) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(grid, field, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads either format, sniffing the magic bytes.
pub fn load_field(path: &Path) -> Result<LoadedField> {
    let bytes = std::fs::read(path)?;
    if bytes.len() >= 4 && &bytes[..4] == BINARY_MAGIC {
        read_binary(&bytes)
    } else {
        read_text(bytes.as_slice())
    }
}

/// Plot series: physical coordinates and per-component re, im, magnitude,
/// slices separated by blank lines so gnuplot's `every :::n::n` selects one.
pub fn write_plot<W: Write>(grid: &Grid, field: &GridSection, w: &mut W) -> Result<()> {
    check_shape(grid, field)?;
    write!(w, "# t x")?;
    if grid.dim == 2 {
        write!(w, " y")?;
    }
    for k in 0..field.rank {
        write!(w, " re{k} im{k} abs{k}")?;
    }
    writeln!(w)?;
    for slice in 0..field.nt {
        let t = grid.t(slice);
        for cell in 0..field.cells {
            let x = grid.cell_center(cell);
            write!(w, "{t} {}", x[0])?;
            if grid.dim == 2 {
                write!(w, " {}", x[1])?;
            }
            for k in 0..field.rank {
                let v = field.get(slice, cell, k);
                write!(w, " {} {} {}", v.re, v.im, v.norm())?;
            }
            writeln!(w)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
