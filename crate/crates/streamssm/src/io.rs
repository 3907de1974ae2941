//! File containers and synthetic data.
//!
//! Raw tensor file: `b"SSMTENS\0"` + u32 dtype (0 = f32, 1 = f64) + u32 ndim
//! + u64 dims + little-endian floats. Used for video clips and teacher
//! feature files alike.

use crate::error::{ModelError, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read as _, Write as _};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 8] = b"SSMTENS\0";

pub fn write_tensor<F: Real>(path: &Path, tensor: &Tensor<F>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(TENSOR_MAGIC)?;
    let dtype: u32 = if F::is_f32() { 0 } else { 1 };
    file.write_all(&dtype.to_le_bytes())?;
    file.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        file.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.len() * if F::is_f32() { 4 } else { 8 });
    for &v in tensor.data() {
        if F::is_f32() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        } else {
            buf.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<F: Real>(path: &Path) -> Result<Tensor<F>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err(ModelError::Format(format!("bad tensor magic in {}", path.display())));
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let expect: u32 = if F::is_f32() { 0 } else { 1 };
    if dtype != expect {
        return Err(ModelError::ConfigMismatch(format!(
            "tensor file dtype {} does not match requested precision",
            if dtype == 0 { "f32" } else { "f64" }
        )));
    }
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + ndim * 8 {
        return Err(ModelError::Format("tensor header truncated".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let at = 16 + i * 8;
        shape.push(u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize);
    }
    let count: usize = shape.iter().product();
    let width = if F::is_f32() { 4 } else { 8 };
    let data_at = 16 + ndim * 8;
    if bytes.len() != data_at + count * width {
        return Err(ModelError::Format("tensor payload size mismatch".into()));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = data_at + i * width;
        let v = if F::is_f32() {
            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
        };
        data.push(F::from_f64(v));
    }
    Ok(Tensor::from_vec(&shape, data))
}

/// Loads every `.ten` file in a directory, sorted by filename.
pub fn load_clip_dir<F: Real>(dir: &Path) -> Result<Vec<Tensor<F>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ten").unwrap_or(false))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_tensor(p)).collect()
}

/// Synthetic clip: moving colored rectangles over a static gradient
/// background, values in [0, 1]. Shape (1, 3, time, h, w), seed-controlled.
pub fn synthetic_clip<F: Real>(time: usize, h: usize, w: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shapes = 3;
    struct Shape {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
        size: f64,
        color: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            x: rng.gen_range(0.0..w as f64),
            y: rng.gen_range(0.0..h as f64),
            vx: rng.gen_range(-2.0..2.0),
            vy: rng.gen_range(-2.0..2.0),
            size: rng.gen_range(0.15..0.4) * h.min(w) as f64,
            color: [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)],
        })
        .collect();

    let mut video = Tensor::zeros(&[1, 3, time, h, w]);
    for t in 0..time {
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    // gradient background
                    let mut v = 0.1 + 0.2 * (x as f64 / w as f64) + 0.1 * (y as f64 / h as f64);
                    for s in &shapes {
                        let sx = (s.x + s.vx * t as f64).rem_euclid(w as f64);
                        let sy = (s.y + s.vy * t as f64).rem_euclid(h as f64);
                        let dx = (x as f64 - sx).abs().min(w as f64 - (x as f64 - sx).abs());
                        let dy = (y as f64 - sy).abs().min(h as f64 - (y as f64 - sy).abs());
                        if dx < s.size / 2.0 && dy < s.size / 2.0 {
                            v = s.color[ch];
                        }
                    }
                    let idx = ((ch * time + t) * h + y) * w + x;
                    video.data_mut()[idx] = F::from_f64(v);
                }
            }
        }
    }
    video
}
