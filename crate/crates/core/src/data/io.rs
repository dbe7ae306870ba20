use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Field};
use crate::diff::Tensor;

pub const FIELD_MAGIC: &[u8; 4] = b"FLD1";
pub const FIELD_VERSION: u32 = 1;

/// Serializes a field. Values are stored as little-endian `f32`, so the
/// round trip is exact for data already representable in single precision.
pub fn write_field(field: &Field, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(64 + field.data.numel() * 4);
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    let grid = field.grid_shape.as_deref().unwrap_or(&[]);
    buf.push(grid.len() as u8);
    for &d in grid {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(field.frames() as u64).to_le_bytes());
    buf.extend_from_slice(&(field.points() as u64).to_le_bytes());
    buf.extend_from_slice(&field.dt_physical.to_le_bytes());
    let (flag, (lo, hi)) = match field.scale {
        Some(s) => (1u8, s),
        None => (0u8, (0.0, 0.0)),
    };
    buf.push(flag);
    buf.extend_from_slice(&lo.to_le_bytes());
    buf.extend_from_slice(&hi.to_le_bytes());
    for &x in field.data.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(DataError::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }

    fn f64(&mut self, section: &'static str) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }
}

fn to_usize(v: u64, what: &str) -> Result<usize, DataError> {
    usize::try_from(v).map_err(|_| DataError::DimensionOverflow(format!("{what} = {v}")))
}

pub fn read_field(bytes: &[u8]) -> Result<Field, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != FIELD_MAGIC {
        return Err(DataError::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let version = r.u32("header")?;
    if version != FIELD_VERSION {
        return Err(DataError::Version(version));
    }
    let ndims = r.u8("header")? as usize;
    let mut grid = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        grid.push(to_usize(r.u64("grid dims")?, "grid dimension")?);
    }
    let t = to_usize(r.u64("header")?, "frame count")?;
    let n = to_usize(r.u64("header")?, "point count")?;
    let dt = r.f64("header")?;
    let flag = r.u8("scale")?;
    let lo = r.f64("scale")?;
    let hi = r.f64("scale")?;
    let count = t
        .checked_mul(n)
        .ok_or_else(|| DataError::DimensionOverflow(format!("{t} × {n} values")))?;
    let payload_len = count
        .checked_mul(4)
        .ok_or_else(|| DataError::DimensionOverflow(format!("{count} f32 values")))?;
    if ndims > 0 {
        let prod = grid
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| DataError::DimensionOverflow(format!("grid {grid:?}")))?;
        if prod != n {
            return Err(DataError::GridMismatch { grid, n });
        }
    }
    if t == 0 || n == 0 {
        return Err(DataError::Parameter(format!("empty field {t}×{n}")));
    }
    let payload = r.take(payload_len, "payload")?;
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let mut field = Field::new(Tensor::matrix(t, n, data), (ndims > 0).then_some(grid), dt)?;
    field.scale = match flag {
        0 => None,
        1 => Some((lo, hi)),
        other => return Err(DataError::Parameter(format!("scale flag {other}"))),
    };
    Ok(field)
}

pub fn save_field(field: &Field, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    write_field(field, &mut file).map_err(io)?;
    file.flush().map_err(io)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_field(&bytes)
}
