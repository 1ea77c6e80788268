//! Versioned binary checkpoints.
//!
//! Layout (all little-endian, documented bit-exactly in `docs/formats.md`):
//! 8-byte magic, u32 version, the training configuration, the full cloud,
//! the base environment cubemap, and the optimizer state. Float arrays are
//! written verbatim so a save/load round trip is bitwise lossless. Writes go
//! through a temp file and an atomic rename.

use std::io::{Read, Write};
use std::path::Path;

use glam::{DQuat, DVec2, DVec3};

use crate::cubemap::CubeMap;
use crate::error::{Error, Result};
use crate::field::GaussianCloud;
use crate::rng::Rng;
use crate::trainer::{AdamBuf, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"RLSPLATC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub env_base: CubeMap,
    pub state: TrainState,
    pub config: TrainConfig,
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: impl Iterator<Item = f64>) -> Result<()> {
        for v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
    fn array(&mut self, vs: &[f64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        self.f64s(vs.iter().copied())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn array(&mut self, cap: usize) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > cap {
            return Err(Error::CorruptCheckpoint(format!(
                "array length {n} exceeds sanity cap {cap}"
            )));
        }
        self.f64s(n)
    }
}

const ARRAY_CAP: usize = 1 << 28;

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = Writer {
            inner: std::io::BufWriter::new(file),
        };
        w.inner.write_all(MAGIC)?;
        w.u32(VERSION)?;
        write_config(&mut w, &ckpt.config)?;
        write_cloud(&mut w, &ckpt.cloud)?;
        w.u32(ckpt.env_base.res as u32)?;
        w.f64s(ckpt.env_base.data.iter().flat_map(|v| v.to_array()))?;
        write_state(&mut w, &ckpt.state)?;
        w.inner.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: std::io::BufReader::new(file),
    };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let config = read_config(&mut r)?;
    let cloud = read_cloud(&mut r)?;
    let env_res = r.u32()? as usize;
    let env_data = r.f64s(3 * 6 * env_res * env_res)?;
    let env_base = CubeMap {
        res: env_res,
        data: env_data
            .chunks_exact(3)
            .map(DVec3::from_slice)
            .collect(),
    };
    let state = read_state(&mut r)?;
    // Reject trailing garbage.
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::CorruptCheckpoint(
                "trailing bytes after checkpoint payload".into(),
            ))
        }
        Err(e) => return Err(e.into()),
    }
    let ckpt = Checkpoint {
        cloud,
        env_base,
        state,
        config,
    };
    ckpt.cloud.validate()?;
    Ok(ckpt)
}

fn write_config<W: Write>(w: &mut Writer<W>, c: &TrainConfig) -> Result<()> {
    w.u64(c.iterations)?;
    w.f64s(
        [
            c.lr_position,
            c.lr_position_final,
            c.lr_rotation,
            c.lr_scale,
            c.lr_albedo,
            c.lr_roughness,
            c.lr_metallic,
            c.lr_sdf,
            c.lr_log_gamma,
            c.lr_environment,
            c.adam.beta1,
            c.adam.beta2,
            c.adam.epsilon,
            c.median_gate,
            c.projection_epsilon,
            c.densify_grad_threshold,
            c.densify_split_size,
            c.prune_opacity,
            c.init_radius,
            c.init_gamma,
            c.init_sdf,
            c.weights.color,
            c.weights.normal,
            c.weights.distortion,
            c.weights.gamma,
            c.weights.projection,
            c.weights.smoothness,
            c.weights.mask,
            c.weights.ssim_mix,
        ]
        .into_iter(),
    )?;
    w.u64(c.projection_warmup)?;
    w.u64(c.densify_interval)?;
    w.u64(c.densify_start)?;
    w.u64(c.densify_stop)?;
    w.u64(c.max_primitives as u64)?;
    w.u64(c.init_primitives as u64)?;
    w.u64(c.env_resolution as u64)?;
    w.u64(c.checkpoint_interval as u64)?;
    w.u64(c.seed)?;
    w.u8(c.printed_spec_form as u8)?;
    Ok(())
}

fn read_config<R: Read>(r: &mut Reader<R>) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    c.iterations = r.u64()?;
    let f = r.f64s(29)?;
    c.lr_position = f[0];
    c.lr_position_final = f[1];
    c.lr_rotation = f[2];
    c.lr_scale = f[3];
    c.lr_albedo = f[4];
    c.lr_roughness = f[5];
    c.lr_metallic = f[6];
    c.lr_sdf = f[7];
    c.lr_log_gamma = f[8];
    c.lr_environment = f[9];
    c.adam.beta1 = f[10];
    c.adam.beta2 = f[11];
    c.adam.epsilon = f[12];
    c.median_gate = f[13];
    c.projection_epsilon = f[14];
    c.densify_grad_threshold = f[15];
    c.densify_split_size = f[16];
    c.prune_opacity = f[17];
    c.init_radius = f[18];
    c.init_gamma = f[19];
    c.init_sdf = f[20];
    c.weights.color = f[21];
    c.weights.normal = f[22];
    c.weights.distortion = f[23];
    c.weights.gamma = f[24];
    c.weights.projection = f[25];
    c.weights.smoothness = f[26];
    c.weights.mask = f[27];
    c.weights.ssim_mix = f[28];
    c.projection_warmup = r.u64()?;
    c.densify_interval = r.u64()?;
    c.densify_start = r.u64()?;
    c.densify_stop = r.u64()?;
    c.max_primitives = r.u64()? as usize;
    c.init_primitives = r.u64()? as usize;
    c.env_resolution = r.u64()? as usize;
    c.checkpoint_interval = r.u64()?;
    c.seed = r.u64()?;
    c.printed_spec_form = r.u8()? != 0;
    Ok(c)
}

fn write_cloud<W: Write>(w: &mut Writer<W>, cloud: &GaussianCloud) -> Result<()> {
    w.u64(cloud.len() as u64)?;
    w.f64s(cloud.positions.iter().flat_map(|v| v.to_array()))?;
    w.f64s(cloud.rotations.iter().flat_map(|q| [q.x, q.y, q.z, q.w]))?;
    w.f64s(cloud.scales.iter().flat_map(|v| v.to_array()))?;
    w.f64s(cloud.sdf_values.iter().copied())?;
    w.f64s(cloud.albedo.iter().flat_map(|v| v.to_array()))?;
    w.f64s(cloud.roughness.iter().copied())?;
    w.f64s(cloud.metallic.iter().copied())?;
    w.f64(cloud.log_gamma)?;
    Ok(())
}

fn read_cloud<R: Read>(r: &mut Reader<R>) -> Result<GaussianCloud> {
    let n = r.u64()? as usize;
    if n > ARRAY_CAP {
        return Err(Error::CorruptCheckpoint(format!(
            "unreasonable primitive count {n}"
        )));
    }
    let positions = r
        .f64s(3 * n)?
        .chunks_exact(3)
        .map(DVec3::from_slice)
        .collect();
    let rotations = r
        .f64s(4 * n)?
        .chunks_exact(4)
        .map(|c| DQuat::from_xyzw(c[0], c[1], c[2], c[3]))
        .collect();
    let scales = r
        .f64s(2 * n)?
        .chunks_exact(2)
        .map(|c| DVec2::new(c[0], c[1]))
        .collect();
    let sdf_values = r.f64s(n)?;
    let albedo = r
        .f64s(3 * n)?
        .chunks_exact(3)
        .map(DVec3::from_slice)
        .collect();
    let roughness = r.f64s(n)?;
    let metallic = r.f64s(n)?;
    let log_gamma = r.f64()?;
    Ok(GaussianCloud {
        positions,
        rotations,
        scales,
        sdf_values,
        albedo,
        roughness,
        metallic,
        log_gamma,
    })
}

fn write_adam<W: Write>(w: &mut Writer<W>, buf: &AdamBuf) -> Result<()> {
    w.array(&buf.m)?;
    w.array(&buf.v)
}

fn read_adam<R: Read>(r: &mut Reader<R>) -> Result<AdamBuf> {
    let m = r.array(ARRAY_CAP)?;
    let v = r.array(ARRAY_CAP)?;
    if m.len() != v.len() {
        return Err(Error::CorruptCheckpoint(
            "adam moment arrays disagree in length".into(),
        ));
    }
    Ok(AdamBuf { m, v })
}

fn write_state<W: Write>(w: &mut Writer<W>, s: &TrainState) -> Result<()> {
    w.u64(s.iteration)?;
    w.u8(s.median_loss_active as u8)?;
    w.u64(s.rng.state())?;
    write_adam(w, &s.adam_positions)?;
    write_adam(w, &s.adam_rotations)?;
    write_adam(w, &s.adam_scales)?;
    write_adam(w, &s.adam_sdf)?;
    write_adam(w, &s.adam_albedo)?;
    write_adam(w, &s.adam_roughness)?;
    write_adam(w, &s.adam_metallic)?;
    write_adam(w, &s.adam_log_gamma)?;
    write_adam(w, &s.adam_env)?;
    w.array(&s.densify_grad_accum)?;
    w.u64(s.densify_count.len() as u64)?;
    for c in &s.densify_count {
        w.u32(*c)?;
    }
    Ok(())
}

fn read_state<R: Read>(r: &mut Reader<R>) -> Result<TrainState> {
    let iteration = r.u64()?;
    let median_loss_active = r.u8()? != 0;
    let rng = Rng::from_state(r.u64()?);
    let adam_positions = read_adam(r)?;
    let adam_rotations = read_adam(r)?;
    let adam_scales = read_adam(r)?;
    let adam_sdf = read_adam(r)?;
    let adam_albedo = read_adam(r)?;
    let adam_roughness = read_adam(r)?;
    let adam_metallic = read_adam(r)?;
    let adam_log_gamma = read_adam(r)?;
    let adam_env = read_adam(r)?;
    let densify_grad_accum = r.array(ARRAY_CAP)?;
    let n_counts = r.u64()? as usize;
    if n_counts > ARRAY_CAP {
        return Err(Error::CorruptCheckpoint("unreasonable count array".into()));
    }
    let mut densify_count = Vec::with_capacity(n_counts);
    for _ in 0..n_counts {
        densify_count.push(r.u32()?);
    }
    Ok(TrainState {
        iteration,
        adam_positions,
        adam_rotations,
        adam_scales,
        adam_sdf,
        adam_albedo,
        adam_roughness,
        adam_metallic,
        adam_log_gamma,
        adam_env,
        median_loss_active,
        densify_grad_accum,
        densify_count,
        rng,
    })
}
