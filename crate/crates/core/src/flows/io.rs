//! Versioned binary container: `TFLW1`, a JSON manifest and a list of
//! little-endian `f64` matrices.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::Tensor;

pub const MAGIC: &[u8; 5] = b"TFLW1";

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub fn write_container(mut w: impl Write, manifest: &serde_json::Value, tensors: &[Tensor]) -> Result<()> {
    let json = serde_json::to_vec(manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&u32_of(json.len(), "manifest length")?.to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&u32_of(tensors.len(), "tensor count")?.to_le_bytes())?;
    for t in tensors {
        w.write_all(&u32_of(t.rows(), "rows")?.to_le_bytes())?;
        w.write_all(&u32_of(t.cols(), "cols")?.to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn read_container(mut r: impl Read) -> Result<(serde_json::Value, Vec<Tensor>)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let len = read_u32(&mut r)?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest = serde_json::from_slice(&json)?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (rows, cols) = (read_u32(&mut r)?, read_u32(&mut r)?);
        let mut data = vec![0.0; rows * cols];
        let mut b = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        tensors.push(Tensor::new(rows, cols, data)?);
    }
    Ok((manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let ts = vec![
            Tensor::new(2, 3, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, 1e300]).unwrap(),
            Tensor::zeros(0, 4),
        ];
        let m = serde_json::json!({"kind": "test", "n": 2});
        let mut buf = Vec::new();
        write_container(&mut buf, &m, &ts).unwrap();
        assert_eq!(&buf[..5], b"TFLW1");
        let (m2, ts2) = read_container(buf.as_slice()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(ts, ts2);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_container(&b"TFLW2...."[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_container(&mut buf, &serde_json::json!({}), &[Tensor::zeros(2, 2)]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_container(buf.as_slice()).is_err());
    }
}
