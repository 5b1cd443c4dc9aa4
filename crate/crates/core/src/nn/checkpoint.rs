//! Versioned binary parameter file.
//!
//! ```text
//! magic    8 bytes  "PEGNNCKP"
//! version  u32 LE
//! count    u32 LE
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, values f64 LE x prod(dims) }
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Params, Real};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"PEGNNCKP";
pub const VERSION: u32 = 1;

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Blocks for every parameter of `net`, names prefixed with `prefix.`.
pub fn blocks_of<T: Real, N: Params<T>>(prefix: &str, net: &N) -> Vec<Block> {
    net.params()
        .into_iter()
        .map(|(name, t)| Block {
            name: format!("{prefix}.{name}"),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| x.f64()).collect(),
        })
        .collect()
}

/// Fill `net` from the blocks named `prefix.*`; every parameter must be present
/// with a matching shape.
pub fn load_blocks<T: Real, N: Params<T>>(
    prefix: &str,
    net: &mut N,
    blocks: &[Block],
) -> Result<()> {
    let names: Vec<String> = net
        .params()
        .into_iter()
        .map(|(n, _)| format!("{prefix}.{n}"))
        .collect();
    for (name, t) in names.iter().zip(net.params_mut()) {
        let b = blocks
            .iter()
            .find(|b| &b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
        if b.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "block {name}: shape {:?}, expected {:?}",
                b.shape,
                t.shape()
            )));
        }
        for (dst, &src) in t.data_mut().iter_mut().zip(&b.data) {
            *dst = T::of(src);
        }
    }
    Ok(())
}

pub fn encode(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Block>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut blocks = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("block name is not utf-8".to_string()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        let mut n: usize = 1;
        for _ in 0..ndim {
            let d = usize::try_from(r.u64()?)
                .map_err(|_| Error::Checkpoint(format!("{name}: dimension overflow")))?;
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
            shape.push(d);
        }
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Block { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetConfig, PolicyNet};
    use rand::SeedableRng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut r = crate::Rng::seed_from_u64(1);
        let p = PolicyNet::<f32>::init(&NetConfig::default(), &mut r);
        let bytes = encode(&blocks_of("policy", &p));
        let blocks = decode(&bytes).unwrap();
        let mut q = PolicyNet::<f32>::init(&NetConfig::default(), &mut r);
        assert_ne!(p, q);
        load_blocks("policy", &mut q, &blocks).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode(&blocks), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let blocks = alloc::vec![Block {
            name: "x".into(),
            shape: alloc::vec![2],
            data: alloc::vec![1.0, 2.0]
        }];
        let mut bytes = encode(&blocks);
        assert_eq!(decode(&bytes).unwrap(), blocks);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        bytes[8] = 9;
        assert_eq!(
            decode(&bytes),
            Err(Error::Version {
                found: 9,
                expected: VERSION
            })
        );
        assert!(decode(b"NOTACKPT").is_err());
    }

    #[test]
    fn missing_or_misshaped_block() {
        let mut r = crate::Rng::seed_from_u64(2);
        let mut p = PolicyNet::<f64>::init(&NetConfig::default(), &mut r);
        let mut blocks = blocks_of("policy", &p);
        blocks[0].shape = alloc::vec![1];
        assert!(load_blocks("policy", &mut p, &blocks).is_err());
        blocks.remove(0);
        assert!(load_blocks("policy", &mut p, &blocks).is_err());
    }
}
