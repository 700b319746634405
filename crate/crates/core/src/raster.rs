//! Plain float rasters. Pixel `(x, y)` has its center at integer coordinates.

use std::path::Path;

/// Linear RGB image, channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    /// Rec. 709 luma.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.data.iter().map(|c| luma(*c)).collect() }
    }

    /// 8-bit quantized PNG encoding.
    pub fn save_png(&self, path: &Path) -> Result<(), String> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            let c = self.data[i];
            *px = image::Rgb([quantize(c[0]), quantize(c[1]), quantize(c[2])]);
        }
        img.save(path).map_err(|e| e.to_string())
    }

    pub fn load_png(path: &Path) -> Result<Self, String> {
        let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        Ok(Self { width: w as usize, height: h as usize, data })
    }

    /// Per-channel 8-bit round trip, matching what a PNG save/load would give.
    pub fn quantized(&self) -> Self {
        let q = |v: f32| quantize(v) as f32 / 255.0;
        Self { width: self.width, height: self.height, data: self.data.iter().map(|c| [q(c[0]), q(c[1]), q(c[2])]).collect() }
    }
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear lookup; `None` outside `[0, w-1] × [0, h-1]`.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0) as f64;
        let v10 = self.get(x1, y0) as f64;
        let v01 = self.get(x0, y1) as f64;
        let v11 = self.get(x1, y1) as f64;
        Some((1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11))
    }

    /// Grayscale PNG with values scaled from `[0, max]`.
    pub fn save_png(&self, path: &Path, max: f32) -> Result<(), String> {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = image::Luma([quantize(self.data[i] / max)]);
        }
        img.save(path).map_err(|e| e.to_string())
    }
}

#[inline]
pub fn luma(c: [f32; 3]) -> f32 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Little-endian single-channel PFM. Rows are stored bottom-to-top per the
/// format convention.
pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<(), String> {
    let mut buf = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| e.to_string())
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "Pf" {
        return Err(format!("expected single-channel 'Pf' header, found '{}'", tokens[0]));
    }
    let width: usize = tokens[1].parse().map_err(|_| "bad PFM width")?;
    let height: usize = tokens[2].parse().map_err(|_| "bad PFM height")?;
    let scale: f32 = tokens[3].parse().map_err(|_| "bad PFM scale")?;
    if scale >= 0.0 {
        return Err("big-endian PFM not supported".into());
    }
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != 4 * width * height {
        return Err(format!("expected {} data bytes, found {}", 4 * width * height, body.len()));
    }
    let mut data = vec![0.0f32; width * height];
    for (r, chunk) in body.chunks_exact(4 * width).enumerate() {
        let y = height - 1 - r;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            data[y * width + x] = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    Ok((width, height, data))
}
