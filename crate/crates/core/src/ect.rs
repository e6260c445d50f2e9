//! `.ect` tensor container.
//!
//! Layout (little-endian): magic `ECT1`, one `u8` rank, `rank` × `u32`
//! extents, then the `f32` payload in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"ECT1";

pub fn encode(tensor: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.push(tensor.rank() as u8);
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.reserve(tensor.numel() * 4);
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    encode(tensor, &mut out);
    out
}

/// Decode one tensor from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "tensor header")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "tensor",
            expected: MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let rank = cur.take(1, "tensor header")?[0] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Malformed {
            what: "tensor",
            detail: format!("rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = u32::from_le_bytes(cur.take(4, "tensor extents")?.try_into().unwrap());
        shape.push(e as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Malformed {
            what: "tensor",
            detail: format!("extents {shape:?} overflow"),
        })?;
    let payload = cur.take(numel * 4, "tensor payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::from_vec(shape, data).map_err(|e| Error::Malformed {
        what: "tensor",
        detail: e.to_string(),
    })?;
    Ok((t, cur.pos))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, used) = decode(bytes)?;
    if used != bytes.len() {
        return Err(Error::Malformed {
            what: "tensor",
            detail: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(t)
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                what,
                detail: format!(
                    "need {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec(vec![2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = to_bytes(&t);
        let mut expected = b"ECT1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::from_vec(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut b = to_bytes(&t);
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::BadMagic { .. })));
        let b = to_bytes(&t);
        assert!(matches!(from_bytes(&b[..b.len() - 2]), Err(Error::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..=5),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::from_vec(shape, data).unwrap();
            let back = from_bytes(&to_bytes(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
