//! Flat binary container, CSV export and PGM previews.
//!
//! Container layout: `b"DEXC"`, then little-endian `u32` version, rows and
//! cols (16 bytes in total), followed by `rows * cols` little-endian `f64`
//! values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Image, Sinogram};

pub const MAGIC: &[u8; 4] = b"DEXC";
pub const VERSION: u32 = 1;

pub fn write_container<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if rows * cols != data.len() {
        return Err(Error::Format(format!(
            "{rows}x{cols} header for {} values",
            data.len()
        )));
    }
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim(rows)?.to_le_bytes())?;
    w.write_all(&dim(cols)?.to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Returns `(rows, cols, values)`.
pub fn read_container<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("short header: {e}")))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    write_container(w, img.size(), img.size(), img.as_slice())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let (rows, cols, data) = read_container(BufReader::new(File::open(path)?))?;
    if rows != cols {
        return Err(Error::Format(format!(
            "{}: image must be square, found {rows}x{cols}",
            path.display()
        )));
    }
    Image::from_vec(rows, data)
}

/// Rows are angles, columns detector bins.
pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    write_container(w, sino.n_angles(), sino.n_detectors(), sino.as_slice())
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let (rows, cols, data) = read_container(BufReader::new(File::open(path)?))?;
    Sinogram::from_vec(rows, cols, data)
}

/// Debug export: one matrix row per line, comma separated, shortest
/// round-trip float formatting.
pub fn write_matrix_csv<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if rows * cols != data.len() {
        return Err(Error::Format("csv shape mismatch".into()));
    }
    for row in data.chunks(cols.max(1)).take(rows) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

/// Binary PGM with linear scaling of `[min, max]` onto the full grey range.
/// Returns the `(min, max)` used so the scaling can be recorded.
pub fn write_pgm<W: Write>(mut w: W, img: &Image, depth: PgmDepth) -> Result<(f64, f64)> {
    let (lo, hi) = (img.min(), img.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let maxval: u32 = match depth {
        PgmDepth::Eight => 255,
        PgmDepth::Sixteen => 65535,
    };
    write!(w, "P5\n{} {}\n{}\n", img.size(), img.size(), maxval)?;
    for &v in img.as_slice() {
        let q = (((v - lo) / span) * maxval as f64)
            .round()
            .clamp(0.0, maxval as f64) as u32;
        match depth {
            PgmDepth::Eight => w.write_all(&[q as u8])?,
            PgmDepth::Sixteen => w.write_all(&(q as u16).to_be_bytes())?,
        }
    }
    Ok((lo, hi))
}

pub fn save_pgm(path: &Path, img: &Image, depth: PgmDepth) -> Result<(f64, f64)> {
    let mut w = BufWriter::new(File::create(path)?);
    let range = write_pgm(&mut w, img, depth)?;
    w.flush()?;
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let mut buf = Vec::new();
        write_container(&mut buf, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(&buf[0..4], b"DEXC");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_corrupt_containers() {
        assert!(read_container(&b"XXXX"[..]).is_err());
        let mut buf = Vec::new();
        write_container(&mut buf, 2, 2, &[0.0; 4]).unwrap();
        assert!(read_container(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'Q';
        assert!(read_container(&buf[..]).is_err());
        assert!(write_container(Vec::new(), 3, 3, &[0.0; 4]).is_err());
    }

    #[test]
    fn pgm_scaling() {
        let img = Image::from_vec(2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        let range = write_pgm(&mut buf, &img, PgmDepth::Eight).unwrap();
        assert_eq!(range, (0.0, 4.0));
        assert!(buf.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&buf[buf.len() - 4..], &[0, 64, 128, 255]);
        let mut buf16 = Vec::new();
        write_pgm(&mut buf16, &img, PgmDepth::Sixteen).unwrap();
        assert_eq!(&buf16[buf16.len() - 2..], &[255, 255]);
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, 2, 2, &[1.0, 0.5, -2.0, 3.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.0,0.5\n-2.0,3.25\n");
    }

    proptest! {
        #[test]
        fn container_round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) >> 2))
                .collect();
            let mut buf = Vec::new();
            write_container(&mut buf, rows, cols, &data).unwrap();
            let (r, c, back) = read_container(&buf[..]).unwrap();
            prop_assert_eq!((r, c), (rows, cols));
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
