//! Versioned binary checkpoint container: magic `MTCK1\0`, then ordered
//! named parameter blobs with shapes, little-endian f64 data.

use super::{Array, ParamSet};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MTCK1\0";
const VERSION: u32 = 1;

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    // write-to-temp then rename so readers never observe a partial file
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, value) in params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(value.rows() as u32).to_le_bytes())?;
            w.write_all(&(value.cols() as u32).to_le_bytes())?;
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a MTCK1 checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("non-utf8 parameter name".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.add(&name, Array::from_vec(rows, cols, data)?);
    }
    Ok(params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let mut params = ParamSet::new();
        params.add("a/w", Array::from_vec(2, 3, vec![1.5, -2.25, 0.1, 4.0, 1e-300, -0.0]).unwrap());
        params.add("b/bias", Array::row(&[0.25, 0.5]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.mtck");
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(params.len(), loaded.len());
        for ((n1, v1), (n2, v2)) in params.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2);
            for (a, b) in v1.data().iter().zip(v2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.mtck");
        std::fs::write(&path, b"NOTCK\0rest").unwrap();
        assert!(load_params(&path).is_err());
    }
}
