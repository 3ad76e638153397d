//! Field serialization.
//!
//! CSV: header `x1[,x2],value`, one row per grid point in flat-index order.
//! Binary: little-endian `f64` throughout; a three-value header `d, M, R`
//! followed by the `M^d` values in flat-index order (axis 0 fastest).

use super::{GridError, GridField, SpatialGrid};
use std::io::{Read, Write};

pub fn write_csv<W: Write>(grid: &SpatialGrid, field: &GridField, mut out: W) -> Result<(), GridError> {
    let io = |e: std::io::Error| GridError::Io(e.to_string());
    let header = if grid.dim() == 1 { "x1,value" } else { "x1,x2,value" };
    write!(out, "{header}\r\n").map_err(io)?;
    for idx in 0..grid.len() {
        let x = grid.coords(idx);
        if grid.dim() == 1 {
            write!(out, "{},{}\r\n", x[0], field[idx]).map_err(io)?;
        } else {
            write!(out, "{},{},{}\r\n", x[0], x[1], field[idx]).map_err(io)?;
        }
    }
    Ok(())
}

pub fn write_binary<W: Write>(grid: &SpatialGrid, field: &GridField, mut out: W) -> Result<(), GridError> {
    let io = |e: std::io::Error| GridError::Io(e.to_string());
    let header = [grid.dim() as f64, grid.points_per_dim() as f64, grid.half_width()];
    for v in header.iter().chain(field.iter()) {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<(SpatialGrid, GridField), GridError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| GridError::Io(e.to_string()))?;
    if bytes.len() % 8 != 0 || bytes.len() < 24 {
        return Err(GridError::Malformed(format!(
            "{} bytes is not a valid dump",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (d, m, r) = (values[0], values[1], values[2]);
    if d.fract() != 0.0 || m.fract() != 0.0 {
        return Err(GridError::Malformed(format!("non-integral header d={d}, M={m}")));
    }
    let grid = SpatialGrid::new(d as usize, r, m as usize)?;
    let body = values[3..].to_vec();
    if body.len() != grid.len() {
        return Err(GridError::Malformed(format!(
            "header promises {} values, found {}",
            grid.len(),
            body.len()
        )));
    }
    Ok((grid, GridField::from_vec(body)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let g = SpatialGrid::new(2, 1.25, 8).unwrap();
        let f = g.sample(|x| (x[0] * 3.0).sin() + x[1].exp());
        let mut buf = Vec::new();
        write_binary(&g, &f, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (3 + 64));
        let (g2, f2) = read_binary(buf.as_slice()).unwrap();
        assert_eq!(g, g2);
        assert!(f.iter().zip(f2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let g = SpatialGrid::new(1, 1.0, 8).unwrap();
        let mut buf = Vec::new();
        write_binary(&g, &g.zeros(), &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(matches!(read_binary(buf.as_slice()), Err(GridError::Malformed(_))));
    }

    #[test]
    fn csv_layout() {
        let g = SpatialGrid::new(1, 4.0, 8).unwrap();
        let mut buf = Vec::new();
        write_csv(&g, &g.constant(0.5), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.split("\r\n").collect();
        assert_eq!(lines[0], "x1,value");
        assert_eq!(lines[1], "-4,0.5");
        assert_eq!(lines.len(), 10);
    }
}
