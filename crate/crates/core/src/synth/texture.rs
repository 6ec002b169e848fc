use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// One planar sinusoid `amplitude * sin(2 pi f . x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    /// Spatial frequency in cycles per unit length.
    pub frequency: Vector2<f64>,
    pub phase: f64,
    pub amplitude: f64,
}

/// Smooth X-junction `amplitude * tanh(x / w) * tanh(y / w)` in a frame
/// centered at `center` and rotated by `angle`: four alternating quadrants
/// meeting at a corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub center: Vector2<f64>,
    pub amplitude: f64,
    pub width: f64,
    pub angle: f64,
}

impl Corner {
    fn local(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        let d = x - self.center;
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y) / self.width
    }
}

/// Band-limited procedural intensity function on a 2D domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub base: f64,
    pub sinusoids: Vec<Sinusoid>,
    pub corner: Option<Corner>,
}

impl Texture {
    pub fn constant(value: f64) -> Self {
        Self { base: value, sinusoids: Vec::new(), corner: None }
    }

    /// `count` sinusoids with uniformly random orientation and phase and
    /// wavelengths uniform in `[min_wavelength, max_wavelength]`, each of
    /// amplitude `127.5 / count` around 127.5, so values stay in [0, 255].
    pub fn random<R: Rng + ?Sized>(rng: &mut R, count: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        Self { base: 127.5, sinusoids: random_sinusoids(rng, count, min_wavelength, max_wavelength, 127.5), corner: None }
    }

    pub fn with_corner(mut self, corner: Corner) -> Self {
        self.corner = Some(corner);
        self
    }

    pub fn value(&self, x: &Vector2<f64>) -> f64 {
        let mut v = self.base;
        for s in &self.sinusoids {
            v += s.amplitude * (std::f64::consts::TAU * s.frequency.dot(x) + s.phase).sin();
        }
        if let Some(c) = &self.corner {
            let d = c.local(x);
            v += c.amplitude * d.x.tanh() * d.y.tanh();
        }
        v
    }

    pub fn gradient(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let mut g = Vector2::zeros();
        for s in &self.sinusoids {
            let w = std::f64::consts::TAU;
            g += s.frequency * (s.amplitude * w * (w * s.frequency.dot(x) + s.phase).cos());
        }
        if let Some(c) = &self.corner {
            let d = c.local(x);
            let (tx, ty) = (d.x.tanh(), d.y.tanh());
            let local = Vector2::new((1.0 - tx * tx) * ty, tx * (1.0 - ty * ty)) * (c.amplitude / c.width);
            let (s, co) = c.angle.sin_cos();
            g += Vector2::new(co * local.x - s * local.y, s * local.x + co * local.y);
        }
        g
    }
}

/// Random sinusoids sharing a total amplitude budget.
pub fn random_sinusoids<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    min_wavelength: f64,
    max_wavelength: f64,
    total_amplitude: f64,
) -> Vec<Sinusoid> {
    let angle = Uniform::new(0.0, std::f64::consts::TAU).unwrap();
    let wavelength = Uniform::new_inclusive(min_wavelength, max_wavelength).unwrap();
    (0..count)
        .map(|_| {
            let a: f64 = angle.sample(rng);
            let l: f64 = wavelength.sample(rng);
            Sinusoid {
                frequency: Vector2::new(a.cos(), a.sin()) / l,
                phase: angle.sample(rng),
                amplitude: total_amplitude / count as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_texture_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Texture::random(&mut rng, 8, 0.01, 0.05);
        for i in 0..1000 {
            let x = Vector2::new(i as f64 * 0.0137, (i * 7 % 13) as f64 * 0.021);
            let v = t.value(&x);
            assert!((0.0..=255.0).contains(&v));
        }
        for s in &t.sinusoids {
            let l = 1.0 / s.frequency.norm();
            assert!((0.01 - 1e-12..=0.05 + 1e-12).contains(&l));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Texture::random(&mut rng, 8, 4.0, 20.0).with_corner(Corner { center: Vector2::new(1.0, 2.0), amplitude: 60.0, width: 1.5, angle: 0.4 });
        for i in 0..50 {
            let x = Vector2::new(i as f64 * 0.37 - 5.0, 3.0 - i as f64 * 0.21);
            let h = 1e-5;
            let fd = Vector2::new(
                (t.value(&(x + Vector2::x() * h)) - t.value(&(x - Vector2::x() * h))) / (2.0 * h),
                (t.value(&(x + Vector2::y() * h)) - t.value(&(x - Vector2::y() * h))) / (2.0 * h),
            );
            assert!((fd - t.gradient(&x)).norm() < 1e-6 * (1.0 + fd.norm()));
        }
    }

    #[test]
    fn constant_texture_is_flat() {
        let t = Texture::constant(42.0);
        assert_eq!(t.value(&Vector2::new(3.0, -1.0)), 42.0);
        assert_eq!(t.gradient(&Vector2::new(3.0, -1.0)), Vector2::zeros());
    }
}
