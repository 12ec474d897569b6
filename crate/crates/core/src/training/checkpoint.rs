//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `DIH1`, `u32` version, `u32` length plus
//! UTF-8 architecture text, `u64` iteration, RNG state (32-byte seed, `u64`
//! stream, `u128` word position), every parameter then every running
//! statistic as `f32`, and a trailing CRC-32 of all preceding bytes.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{ArchConfig, Network};

pub const MAGIC: &[u8; 4] = b"DIH1";
pub const FORMAT_VERSION: u32 = 1;

/// A network plus the optimizer-side state needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn f32s(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (v, chunk) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let arch = self.network.config().to_text();
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        for p in self.network.params() {
            p.value.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for s in self.network.running_stats() {
            s.mean.iter().chain(&s.var).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 8 {
            return Err(Error::Checksum);
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if found != FORMAT_VERSION {
            return Err(Error::CheckpointVersion { found, expected: FORMAT_VERSION });
        }
        if bytes.len() < 12 {
            return Err(Error::Checksum);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(Error::Checksum);
        }

        let mut r = Reader { bytes: body, pos: 8 };
        let arch_len = u32::from_le_bytes(r.array()?) as usize;
        let text = std::str::from_utf8(r.take(arch_len)?)
            .map_err(|_| Error::Checkpoint("architecture text is not UTF-8".into()))?;
        let arch = ArchConfig::from_text(text)?;
        let iteration = u64::from_le_bytes(r.array()?);
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(r.array()?);
        rng.set_stream(u64::from_le_bytes(r.array()?));
        rng.set_word_pos(u128::from_le_bytes(r.array()?));

        let mut network = Network::<f32>::build(arch, 0)?;
        for p in network.params_mut() {
            r.f32s(p.value.data_mut())?;
        }
        for s in network.running_stats_mut() {
            r.f32s(&mut s.mean)?;
            r.f32s(&mut s.var)?;
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { network, iteration, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
