use serde::{Deserialize, Serialize};

use crate::Vec3;

pub type Rgb = [f64; 3];

/// Procedural albedo over surface position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Albedo {
    Solid { color: Rgb },
    /// 3D checkerboard with cells of size `1/frequency`.
    Checker { a: Rgb, b: Rgb, frequency: f64 },
    /// Smooth band-limited pattern: a sum of plane waves with seeded
    /// directions and phases, blended between `a` and `b`.
    Noise { a: Rgb, b: Rgb, frequency: f64, seed: u64 },
}

/// Directional light; `direction` points from the surface toward the light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Light {
    pub direction: Vec3,
    pub intensity: Rgb,
}

/// Phong lobe evaluated on the reflection direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specular {
    pub ks: f64,
    pub shininess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadingModel {
    pub albedo: Albedo,
    pub lights: Vec<Light>,
    pub ambient: Rgb,
    pub specular: Specular,
    #[serde(default = "default_background")]
    pub background: Rgb,
}

fn default_background() -> Rgb {
    [0.5, 0.5, 0.5]
}

pub(crate) fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn unit_f64(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// `count` plane waves (unit direction, phase) drawn from `seed`.
pub(crate) fn plane_waves(seed: u64, count: usize) -> Vec<(Vec3, f64)> {
    let mut s = seed ^ 0xA076_1D64_78BD_642F;
    (0..count)
        .map(|_| {
            let z = 2.0 * unit_f64(&mut s) - 1.0;
            let phi = std::f64::consts::TAU * unit_f64(&mut s);
            let r = (1.0 - z * z).sqrt();
            let phase = std::f64::consts::TAU * unit_f64(&mut s);
            (Vec3::new(r * phi.cos(), r * phi.sin(), z), phase)
        })
        .collect()
}

const NOISE_WAVES: usize = 6;

impl Albedo {
    pub fn at(&self, p: &Vec3) -> Rgb {
        match self {
            Albedo::Solid { color } => *color,
            Albedo::Checker { a, b, frequency } => {
                let s = (p * *frequency).map(f64::floor).sum() as i64;
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Albedo::Noise { a, b, frequency, seed } => {
                let waves = plane_waves(*seed, NOISE_WAVES);
                let mut v = 0.0;
                for (m, (d, phase)) in waves.iter().enumerate() {
                    // spread the wavelengths over roughly an octave
                    let w = frequency * std::f64::consts::TAU * (1.0 + 0.8 * m as f64 / NOISE_WAVES as f64);
                    v += (w * d.dot(p) + phase).sin();
                }
                let s = (0.5 + 0.5 * v / (0.5 * NOISE_WAVES as f64)).clamp(0.0, 1.0);
                [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
            }
        }
    }
}

/// Mirror of `v` about `n`: `2(n·v)n − v`.
#[inline]
pub fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    2.0 * n.dot(v) * n - v
}

impl ShadingModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.specular.ks < 0.0 {
            return Err("specular ks must be >= 0".into());
        }
        if self.specular.shininess < 1.0 {
            return Err("specular shininess must be >= 1".into());
        }
        for l in &self.lights {
            if (l.direction.norm() - 1.0).abs() > 1e-6 {
                return Err("light directions must be unit vectors".into());
            }
        }
        Ok(())
    }

    /// Lambertian part only: the color a `ks = 0` material shows from any viewpoint.
    pub fn diffuse(&self, p: &Vec3, n: &Vec3) -> Rgb {
        let alb = self.albedo.at(p);
        let mut irr = self.ambient;
        for l in &self.lights {
            let c = n.dot(&l.direction).max(0.0);
            for ch in 0..3 {
                irr[ch] += c * l.intensity[ch];
            }
        }
        [alb[0] * irr[0], alb[1] * irr[1], alb[2] * irr[2]]
    }

    /// View-dependent Phong term for the unit direction `to_eye`.
    pub fn specular_term(&self, n: &Vec3, to_eye: &Vec3) -> Rgb {
        let mut out = [0.0; 3];
        if self.specular.ks == 0.0 {
            return out;
        }
        let wr = reflect(to_eye, n);
        for l in &self.lights {
            let c = wr.dot(&l.direction).max(0.0).powf(self.specular.shininess) * self.specular.ks;
            for ch in 0..3 {
                out[ch] += c * l.intensity[ch];
            }
        }
        out
    }

    /// Ambient + Lambert + Phong, clamped per channel to `[0, 1]`.
    pub fn shade(&self, p: &Vec3, n: &Vec3, to_eye: &Vec3) -> Rgb {
        let d = self.diffuse(p, n);
        let s = self.specular_term(n, to_eye);
        [(d[0] + s[0]).clamp(0.0, 1.0), (d[1] + s[1]).clamp(0.0, 1.0), (d[2] + s[2]).clamp(0.0, 1.0)]
    }

    /// Textured, softly lit Lambertian material.
    pub fn lambertian_noise(seed: u64, frequency: f64) -> Self {
        Self {
            albedo: Albedo::Noise { a: [0.1, 0.12, 0.15], b: [0.95, 0.9, 0.8], frequency, seed },
            lights: vec![Light { direction: Vec3::new(0.3, -0.4, 0.866).normalize(), intensity: [0.45, 0.45, 0.45] }],
            ambient: [0.5, 0.5, 0.5],
            specular: Specular { ks: 0.0, shininess: 1.0 },
            background: default_background(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_identities() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(reflect(&n, &n), n);
        let v = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(reflect(&v, &n), -v);
    }

    #[test]
    fn phong_lobe_separates_mirror_and_off_axis_views() {
        let m = ShadingModel {
            albedo: Albedo::Solid { color: [0.3, 0.3, 0.3] },
            lights: vec![Light { direction: Vec3::new(0.0, 0.6, 0.8), intensity: [1.0, 1.0, 1.0] }],
            ambient: [0.1, 0.1, 0.1],
            specular: Specular { ks: 0.8, shininess: 64.0 },
            background: [0.5; 3],
        };
        let n = Vec3::z();
        let p = Vec3::zeros();
        // mirror-aligned eye sees the full lobe ks * 1^64, the off-axis eye (30° away) sees almost none
        let mirror = reflect(&Vec3::new(0.0, 0.6, 0.8), &n);
        let off = Vec3::new(0.5, 0.0, 0.75f64.sqrt());
        let lobe_off = reflect(&off, &n).dot(&Vec3::new(0.0, 0.6, 0.8)).max(0.0).powf(64.0) * 0.8;
        let a = m.shade(&p, &n, &mirror);
        let b = m.shade(&p, &n, &off);
        assert!(lobe_off < 1e-3);
        assert!((a[0] - b[0]).abs() > 0.05);
    }

    #[test]
    fn noise_albedo_in_range_and_deterministic() {
        let a = Albedo::Noise { a: [0.0; 3], b: [1.0; 3], frequency: 3.0, seed: 11 };
        for i in 0..200 {
            let p = Vec3::new(i as f64 * 0.013, (i as f64 * 0.7).sin(), -0.2);
            let c = a.at(&p);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(c, a.at(&p));
        }
    }
}
