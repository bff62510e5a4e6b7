//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   8 bytes  magic "L2AUGCKP"
//!          4 bytes  u32 format version
//!          4 bytes  u32 record count
//! record   u32 name length, name bytes (UTF-8)
//!          u32 rank, rank x u64 dimensions
//!          product(dimensions) x f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{AutodiffError, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"L2AUGCKP";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AutodiffError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| AutodiffError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(store)
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    write_params(BufWriter::new(File::create(path)?), store)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    read_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("emb", Tensor::from_vec(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, -0.0]).unwrap());
        s.insert("bias", Tensor::scalar(f64::MIN_POSITIVE));
        s
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let mut buf = Vec::new();
        write_params(&mut buf, &ParamStore::new()).unwrap();
        assert_eq!(buf.len(), 16);
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), VERSION);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample();
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back, store);
        let bits = |s: &ParamStore| -> Vec<u64> {
            s.iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
        };
        assert_eq!(bits(&back), bits(&store));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut buf = Vec::new();
        write_params(&mut buf, &sample()).unwrap();
        buf[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_params(buf.as_slice()), Err(AutodiffError::UnsupportedVersion(7))));
    }

    #[test]
    fn bad_magic_and_truncation_are_errors() {
        let mut buf = Vec::new();
        write_params(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_params(bad.as_slice()), Err(AutodiffError::Checkpoint(_))));
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(AutodiffError::Io(_))));
    }
}
