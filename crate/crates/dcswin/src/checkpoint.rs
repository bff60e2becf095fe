//! Binary checkpoint format: magic, version, config snapshot, normalization
//! statistics, named f32 tensor records, and a trailing CRC-32. Everything is
//! little-endian and written in a fixed order so identical models produce
//! identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::{named_tensors, Module, NamedTensors};
use crate::tensor::Element;

pub const MAGIC: &[u8; 8] = b"DCSWINCK";
pub const VERSION: u32 = 1;

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), the variant used by
/// zip and PNG. Computed over every byte of the file before the checksum.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 == 1 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// One saved tensor: name, shape, raw f32 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// A deserialized (or to-be-serialized) checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub stats: NormStats,
    pub records: Vec<Record>,
}

fn collect<T: Element>(named: &NamedTensors<T>) -> Vec<Record> {
    named
        .params
        .iter()
        .chain(named.buffers.iter())
        .map(|(name, t)| Record {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.to_vec().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect()
}

impl Checkpoint {
    /// Snapshot a module's parameters and buffers together with the run
    /// configuration text and the input normalization in force.
    pub fn from_module<T: Element, M: Module<T>>(
        module: &M,
        config_text: &str,
        stats: &NormStats,
    ) -> Self {
        Checkpoint {
            config_text: config_text.to_string(),
            stats: *stats,
            records: collect(&named_tensors(module)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg);
        for v in self.stats.mean.iter().chain(self.stats.std.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            let name = r.name.as_bytes();
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(r.shape.len() as u64).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            debug_assert_eq!(r.shape.iter().product::<usize>(), r.data.len());
            for &v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 + 4 {
            return Err(bad("file too short to be a checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }

        struct Cursor<'a> {
            body: &'a [u8],
            pos: usize,
        }
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8]> {
                if self.pos + n > self.body.len() {
                    return Err(Error::Checkpoint("truncated checkpoint".into()));
                }
                let s = &self.body[self.pos..self.pos + n];
                self.pos += n;
                Ok(s)
            }
            fn u64(&mut self) -> Result<u64> {
                Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
        }
        let mut c = Cursor { body, pos: 0 };

        if c.take(MAGIC.len())? != MAGIC {
            return Err(bad("bad magic: not a checkpoint file"));
        }
        let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let cfg_len = c.u64()? as usize;
        let config_text = String::from_utf8(c.take(cfg_len)?.to_vec())
            .map_err(|_| bad("config snapshot is not valid UTF-8"))?;
        let mut ms = [0f32; 6];
        for v in ms.iter_mut() {
            *v = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
        }
        let stats = NormStats {
            mean: [ms[0], ms[1], ms[2]],
            std: [ms[3], ms[4], ms[5]],
        };

        let count = c.u64()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = c.u64()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| bad("tensor name is not valid UTF-8"))?;
            let rank = c.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(c.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = c.take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        if c.pos != body.len() {
            return Err(bad("trailing bytes after final tensor record"));
        }
        Ok(Checkpoint { config_text, stats, records })
    }

    /// Copy every record into the identically named tensor of `module`.
    /// The checkpoint and module must carry exactly the same name set with
    /// matching shapes; any difference is reported in full.
    pub fn apply_to<T: Element, M: Module<T>>(&self, module: &M) -> Result<()> {
        let named = named_tensors(module);
        let targets: BTreeMap<&str, &crate::tensor::Tensor<T>> = named
            .params
            .iter()
            .chain(named.buffers.iter())
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let sources: BTreeMap<&str, &Record> =
            self.records.iter().map(|r| (r.name.as_str(), r)).collect();

        let missing: Vec<&str> = targets
            .keys()
            .filter(|n| !sources.contains_key(*n))
            .copied()
            .collect();
        let unexpected: Vec<&str> = sources
            .keys()
            .filter(|n| !targets.contains_key(*n))
            .copied()
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::Checkpoint(format!(
                "tensor names do not match the model: missing from file {:?}, unknown to model {:?}",
                missing, unexpected
            )));
        }
        for (name, rec) in &sources {
            let t = targets[name];
            if t.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: file has {:?}, model has {:?}",
                    name,
                    rec.shape,
                    t.shape()
                )));
            }
            let mut d = t.data_mut();
            for (dst, &src) in d.iter_mut().zip(rec.data.iter()) {
                *dst = T::of_f64(src as f64);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DcSwin, ModelConfig, Variant};
    use crate::nn::Linear;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model() -> DcSwin<f32> {
        let mc = ModelConfig {
            preset: "custom".into(),
            embed_dim: 8,
            depths: [2, 2, 2, 2],
            num_heads: [1, 1, 2, 2],
            window_size: 4,
            patch_size: 4,
            mlp_ratio: 1.0,
            num_classes: 3,
            variant: Variant::Full,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        DcSwin::new(&mc, &mut rng).unwrap()
    }

    #[test]
    fn crc32_known_vectors() {
        // Standard check value for the ASCII digits, plus corner cases.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(b"a"), 0xE8B7_BE43);
    }

    #[test]
    fn round_trip_preserves_every_byte_of_state() {
        let model = tiny_model();
        let stats = NormStats { mean: [0.1, 0.2, 0.3], std: [1.0, 0.9, 0.8] };
        let ck = Checkpoint::from_module(&model, "preset = custom\n", &stats);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);

        // Load into a differently initialized clone and compare outputs.
        let other = tiny_model();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Tensor<f32> = crate::tensor::init::uniform(vec![1, 3, 32, 32], 1.0, &mut rng);
        back.apply_to(&other).unwrap();
        let a = model.forward(&x, crate::nn::Phase::Eval);
        let b = other.forward(&x, crate::nn::Phase::Eval);
        assert_eq!(a.to_vec(), b.to_vec(), "restored model must reproduce outputs exactly");
    }

    #[test]
    fn corrupted_byte_is_caught_by_checksum() {
        let model = tiny_model();
        let ck = Checkpoint::from_module(&model, "", &NormStats::identity());
        let mut bytes = ck.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(format!("{err}").contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let ck = Checkpoint {
            config_text: String::new(),
            stats: NormStats::identity(),
            records: vec![],
        };
        let mut bytes = ck.to_bytes();
        bytes[0] = b'X';
        let body_len = bytes.len() - 4;
        let crc = crc32(&bytes[..body_len]).to_le_bytes();
        bytes[body_len..].copy_from_slice(&crc);
        assert!(format!("{}", Checkpoint::from_bytes(&bytes).unwrap_err()).contains("magic"));

        let mut bytes = ck.to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let crc = crc32(&bytes[..body_len]).to_le_bytes();
        bytes[body_len..].copy_from_slice(&crc);
        assert!(format!("{}", Checkpoint::from_bytes(&bytes).unwrap_err()).contains("version"));
    }

    #[test]
    fn name_set_differences_are_reported_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Linear<f32> = Linear::new(4, 2, true, &mut rng);
        let ck = Checkpoint::from_module(&a, "", &NormStats::identity());

        // Extra record in the file.
        let mut extra = ck.clone();
        extra.records.push(Record { name: "ghost".into(), shape: vec![1], data: vec![0.0] });
        let msg = format!("{}", extra.apply_to(&a).unwrap_err());
        assert!(msg.contains("ghost"), "{msg}");

        // Record missing from the file.
        let mut short = ck.clone();
        short.records.pop();
        let msg = format!("{}", short.apply_to(&a).unwrap_err());
        assert!(msg.contains("missing"), "{msg}");

        // Same names, wrong shape.
        let mut warped = ck;
        warped.records[0].shape = vec![2, 4];
        let msg = format!("{}", warped.apply_to(&a).unwrap_err());
        assert!(msg.contains("shape mismatch"), "{msg}");
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("dcswin-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Linear<f32> = Linear::new(3, 3, true, &mut rng);
        let ck = Checkpoint::from_module(&m, "x = 1\n", &NormStats::identity());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
