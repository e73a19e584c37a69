//! Binary `S7DC` checkpoints. The byte layout is listed in `docs/formats.md`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian7D, NUM_STATIC_PARAMS};
use crate::refine::{feature_len, Mlp, MlpRefiner, HEAD_OUTPUTS};
use crate::render::RenderSettings;
use crate::shading::{FourierShConfig, ShadingMode};
use crate::slice::{OpacityMode, SliceConfig, SlicingMode};

pub const MAGIC: &[u8; 4] = b"S7DC";
pub const VERSION: u32 = 1;

/// Everything needed to render or resume a fitted scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Slice configuration (including `λ_t`, `λ_d`), color model and background.
    pub settings: RenderSettings,
    pub cloud: Vec<Gaussian7D>,
    /// `None` when refinement is disabled; stored as a zero-length section.
    pub nets: Option<MlpRefiner>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(ck.iteration);
    w.u64(ck.cloud.len() as u64);

    let s = &ck.settings;
    w.f64(s.slice.lambda_t);
    w.f64(s.slice.lambda_d);
    w.u32(match s.slice.opacity_mode {
        OpacityMode::Product => 0,
        OpacityMode::SqrtProduct => 1,
    });
    w.u32(match s.slice.slicing_mode {
        SlicingMode::Joint => 0,
        SlicingMode::TwoStage => 1,
    });
    w.f64(s.slice.epsilon_jitter);
    w.f64(s.slice.epsilon_pd);
    let (terms, period) = match s.shading {
        ShadingMode::Static => (0, 0.0),
        ShadingMode::Fourier(cfg) => (cfg.terms as u32, cfg.period),
    };
    w.u32(terms);
    w.f64(period);
    for c in s.background {
        w.f64(c);
    }
    w.u32(s.tile_size as u32);

    match &ck.nets {
        Some(nets) => {
            w.u32(nets.num_frequencies as u32);
            w.u32(nets.position.hidden as u32);
            w.u64(nets.num_params() as u64);
        }
        None => {
            w.u32(0);
            w.u32(0);
            w.u64(0);
        }
    }
    for g in &ck.cloud {
        for v in g.to_flat() {
            w.f64(v);
        }
    }
    if let Some(nets) = &ck.nets {
        for head in nets.heads() {
            for v in &head.params {
                w.f64(*v);
            }
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
    }
    let iteration = r.u64()?;
    let count = r.u64()? as usize;

    let lambda_t = r.f64()?;
    let lambda_d = r.f64()?;
    let opacity_mode = match r.u32()? {
        0 => OpacityMode::Product,
        1 => OpacityMode::SqrtProduct,
        v => return Err(Error::CorruptCheckpoint(format!("unknown opacity mode {v}"))),
    };
    let slicing_mode = match r.u32()? {
        0 => SlicingMode::Joint,
        1 => SlicingMode::TwoStage,
        v => return Err(Error::CorruptCheckpoint(format!("unknown slicing mode {v}"))),
    };
    let epsilon_jitter = r.f64()?;
    let epsilon_pd = r.f64()?;
    let terms = r.u32()? as usize;
    let period = r.f64()?;
    let shading = if terms == 0 { ShadingMode::Static } else { ShadingMode::Fourier(FourierShConfig { terms, period }) };
    let background = [r.f64()?, r.f64()?, r.f64()?];
    let tile_size = r.u32()? as usize;
    let settings = RenderSettings {
        slice: SliceConfig { lambda_t, lambda_d, opacity_mode, slicing_mode, epsilon_jitter, epsilon_pd },
        shading,
        background,
        tile_size,
    };

    let num_frequencies = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let net_params = r.u64()? as usize;

    let fourier_len = shading.fourier_len();
    let per = NUM_STATIC_PARAMS + fourier_len;
    let needed = count.checked_mul(per).and_then(|n| n.checked_add(net_params)).and_then(|n| n.checked_mul(8));
    match needed {
        Some(n) if bytes.len() - r.pos == n => {}
        _ => return Err(Error::CorruptCheckpoint("payload length does not match the header".into())),
    }
    let mut cloud = Vec::with_capacity(count);
    let mut flat = vec![0.0; per];
    for _ in 0..count {
        for v in flat.iter_mut() {
            *v = r.f64()?;
        }
        cloud.push(Gaussian7D::from_flat(&flat, fourier_len)?);
    }
    let nets = if net_params == 0 {
        None
    } else {
        let inputs = feature_len(num_frequencies);
        let mut heads = Vec::with_capacity(4);
        let mut total = 0;
        for outputs in HEAD_OUTPUTS {
            let n = Mlp::param_count(inputs, hidden, outputs);
            total += n;
            if total > net_params {
                return Err(Error::CorruptCheckpoint("network section shorter than its shapes".into()));
            }
            let mut params = Vec::with_capacity(n);
            for _ in 0..n {
                params.push(r.f64()?);
            }
            heads.push(Mlp { inputs, hidden, outputs, params });
        }
        if total != net_params {
            return Err(Error::CorruptCheckpoint("network section length mismatch".into()));
        }
        let mut it = heads.into_iter();
        Some(MlpRefiner {
            num_frequencies,
            position: it.next().unwrap(),
            time: it.next().unwrap(),
            direction: it.next().unwrap(),
            covariance: it.next().unwrap(),
        })
    };
    Ok(Checkpoint { iteration, settings, cloud, nets })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    super::write_atomic(path, &encode(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{active_nets, random_gaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, nets: bool, fourier: bool) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let mut settings = RenderSettings::default();
        settings.slice.lambda_t = 0.31;
        settings.slice.opacity_mode = OpacityMode::SqrtProduct;
        if fourier {
            settings.shading = ShadingMode::Fourier(FourierShConfig { terms: 3, period: 1.5 });
        }
        let cloud = (0..n)
            .map(|i| {
                let mut g = random_gaussian(&mut rng);
                g.sh[5] = i as f64 * 0.1;
                g.sh_fourier = (0..settings.shading.fourier_len()).map(|k| k as f64 * 1e-3 + i as f64).collect();
                g
            })
            .collect();
        Checkpoint { iteration: 77, settings, cloud, nets: nets.then(|| active_nets(&mut rng, 0.1)) }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let ck = sample(0, false, false);
        assert_eq!(decode(&encode(&ck)).unwrap(), ck);
    }

    #[test]
    fn bitwise_round_trip() {
        for (nets, fourier) in [(true, false), (false, true), (true, true)] {
            let ck = sample(1000, nets, fourier);
            let bytes = encode(&ck);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn no_agr_has_empty_net_section() {
        let ck = sample(3, false, false);
        let bytes = encode(&ck);
        let per = NUM_STATIC_PARAMS * 8;
        assert_eq!(bytes.len() % 8, (4 + 4) % 8);
        let header = bytes.len() - 3 * per;
        assert_eq!(u64::from_le_bytes(bytes[header - 8..header].try_into().unwrap()), 0);
    }

    #[test]
    fn flipped_magic_is_corrupt() {
        let mut bytes = encode(&sample(2, true, false));
        bytes[0] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample(2, false, false));
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion { found: 9, expected: VERSION })));
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = encode(&sample(4, true, false));
        for cut in [10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.s7dc");
        let ck = sample(5, true, false);
        save_checkpoint(&p, &ck).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), ck);
    }
}
