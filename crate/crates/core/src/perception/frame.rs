//! RGB-D frames, the pinhole camera, and the on-disk frame formats.
//!
//! RGB is written as binary PPM (`P6`, maxval 255). Depth is a separate file:
//! width and height as little-endian `u32`, then `width * height` little-endian
//! `f32` values in metres, row-major, 0 meaning no return.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation; camera axes are right, down, forward.
    pub rotation: Matrix3<f64>,
    /// Camera centre in world coordinates.
    pub position: Vector3<f64>,
}

impl Camera {
    /// Camera at `position` looking along world −x with world +z up.
    pub fn facing_negative_x(width: usize, height: usize, focal: f64, position: Vector3<f64>) -> Self {
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            0.0, 0.0, -1.0,
            1.0, 0.0, 0.0,
            0.0, -1.0, 0.0,
        );
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            position,
        }
    }

    /// Ray direction (world frame) through continuous pixel coordinates,
    /// scaled so that its camera-frame depth component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.rotation * Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World point at camera depth `depth` along the ray through `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.position + self.ray(u, v) * depth
    }

    /// Continuous pixel coordinates and depth of a world point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let c = self.rotation.transpose() * (p - self.position);
        (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Axis-aligned pixel box, half-open: `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub camera: Camera,
    pub rgb: Vec<[u8; 3]>,
    pub depth: Vec<f32>,
}

impl RgbdFrame {
    pub fn new(camera: Camera, rgb: Vec<[u8; 3]>, depth: Vec<f32>) -> Result<Self> {
        let n = camera.pixel_count();
        if rgb.len() != n || depth.len() != n {
            return Err(Error::InvalidArgument(format!(
                "frame buffers ({}, {}) do not match {}x{}",
                rgb.len(),
                depth.len(),
                camera.width,
                camera.height
            )));
        }
        if depth.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidArgument("depth must be non-negative".into()));
        }
        Ok(Self { camera, rgb, depth })
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.camera.width + x
    }
}

pub fn write_ppm(w: &mut impl Write, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::InvalidArgument("pixel count does not match dimensions".into()));
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = rgb.iter().flatten().copied().collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Reads a binary PPM with maxval 255; returns `(width, height, pixels)`.
pub fn read_ppm(r: &mut impl Read) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    if ppm_token(&bytes, &mut pos)? != "P6" {
        return Err(Error::Format("not a binary PPM".into()));
    }
    let num = |pos: &mut usize| -> Result<usize> {
        let t = ppm_token(&bytes, pos)?;
        t.parse().map_err(|_| Error::Format(format!("bad PPM header field {t:?}")))
    };
    let (width, height, maxval) = (num(&mut pos)?, num(&mut pos)?, num(&mut pos)?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    pos += 1;
    let n = width * height;
    let data = bytes.get(pos..pos + 3 * n).ok_or_else(|| Error::Format("truncated PPM data".into()))?;
    Ok((width, height, data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

pub fn write_depth(w: &mut impl Write, width: usize, height: usize, depth: &[f32]) -> Result<()> {
    if depth.len() != width * height {
        return Err(Error::InvalidArgument("depth count does not match dimensions".into()));
    }
    let dims = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArgument("frame too large".into()));
    w.write_all(&dims(width)?.to_le_bytes())?;
    w.write_all(&dims(height)?.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(4 * depth.len());
    for d in depth {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_depth(r: &mut impl Read) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Format("truncated depth header".into()));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * width * height {
        return Err(Error::Format(format!("depth plane has {} bytes, expected {}", body.len(), 4 * width * height)));
    }
    Ok((width, height, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
}
