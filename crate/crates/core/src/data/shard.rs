//! Shard record layout, little-endian throughout:
//!
//! ```text
//! "MPPTRAJ1" | u32 version | u32 n_dims | u32 shape[n_dims] | f32 payload (row-major)
//! ```

use std::io::{Read, Write};

use ndarray::{ArrayD, IxDyn};

use crate::error::{MppError, Result};

pub const SHARD_MAGIC: &[u8; 8] = b"MPPTRAJ1";
pub const SHARD_VERSION: u32 = 1;

/// Writes one record and returns the number of bytes written.
pub fn write_record<W: Write>(out: &mut W, data: &ArrayD<f32>) -> Result<u64> {
    let shape = data.shape();
    out.write_all(SHARD_MAGIC)?;
    out.write_all(&SHARD_VERSION.to_le_bytes())?;
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| MppError::shape("axis too long for shard header"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for x in data.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok((8 + 4 + 4 + 4 * shape.len() + buf.len()) as u64)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one record from the current position.
pub fn read_record<R: Read>(input: &mut R) -> Result<ArrayD<f32>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SHARD_MAGIC {
        return Err(MppError::format("<shard>", "bad record magic"));
    }
    let version = read_u32(input)?;
    if version != SHARD_VERSION {
        return Err(MppError::format("<shard>", format!("unsupported record version {version}")));
    }
    let n_dims = read_u32(input)? as usize;
    if n_dims == 0 || n_dims > 8 {
        return Err(MppError::format("<shard>", format!("implausible rank {n_dims}")));
    }
    let shape = (0..n_dims).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 4];
    input.read_exact(&mut bytes)?;
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| MppError::shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 1, 3]), vec![1.0f32, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap();
        let mut buf = Vec::new();
        let n = write_record(&mut buf, &a).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(&buf[..8], b"MPPTRAJ1");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1u32.to_le_bytes());
        assert_eq!(&buf[24..28], &3u32.to_le_bytes());
        assert_eq!(&buf[28..32], &1.0f32.to_le_bytes());
        assert_eq!(&buf[32..36], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = b"NOTATRAJ".to_vec();
        buf.extend_from_slice(&[0u8; 16]);
        assert!(read_record(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in proptest::collection::vec(1usize..5, 1..5), seed in any::<u32>()) {
            let len: usize = dims.iter().product();
            let vals: Vec<f32> = (0..len).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff)).collect();
            let a = ArrayD::from_shape_vec(IxDyn(&dims), vals).unwrap();
            let mut buf = Vec::new();
            write_record(&mut buf, &a).unwrap();
            let b = read_record(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(a.shape(), b.shape());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
