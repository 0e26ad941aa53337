use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DomainPair, Sample};
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, RealGrid};

/// Domain-fixed additive shading: a random sum of low-frequency cosines
/// (every nonzero frequency up to `max_cycles` per image side), scaled to
/// root-mean-square `strength`. `seed` fixes the pattern for the whole
/// domain; each image rescales it by a factor in `1 ± jitter`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shading {
    pub strength: f64,
    pub max_cycles: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl Shading {
    pub fn none() -> Self {
        Self {
            strength: 0.0,
            max_cycles: 0,
            seed: 0,
            jitter: 0.0,
        }
    }

    /// The unscaled pattern on a `size x size` grid, unit RMS.
    pub fn pattern(&self, size: usize) -> Vec<f64> {
        let mut out = vec![0.0; size * size];
        if self.max_cycles == 0 || self.strength == 0.0 {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.max_cycles as i64;
        let tau = 2.0 * std::f64::consts::PI / size as f64;
        // one term per frequency pair (ky, kx) ~ (-ky, -kx)
        for ky in 0..=k {
            for kx in -k..=k {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                let amp: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
                let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                for y in 0..size {
                    for x in 0..size {
                        let t = tau * (ky as f64 * y as f64 + kx as f64 * x as f64) + phase;
                        out[y * size + x] += amp * t.cos();
                    }
                }
            }
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
        if rms > 0.0 {
            out.iter_mut().for_each(|v| *v /= rms);
        }
        out
    }
}

/// How one domain renders a label map into an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    /// Base intensity per class id.
    pub class_intensity: Vec<f64>,
    /// Exponent applied to the blurred intensities (which are non-negative).
    pub gamma: f64,
    pub shading: Shading,
    pub noise_sigma: f64,
    /// Gaussian blur of the label-driven intensities, in pixels.
    pub blur_sigma: f64,
}

impl ShiftProfile {
    pub fn source(n_classes: usize) -> Self {
        Self {
            class_intensity: spread(n_classes, 0.1, 1.0),
            gamma: 1.0,
            shading: Shading::none(),
            noise_sigma: 0.05,
            blur_sigma: 0.8,
        }
    }

    /// Rescaled and offset intensities (undone by standardization), more
    /// noise, and a fixed low-frequency shading pattern.
    pub fn target(n_classes: usize) -> Self {
        Self {
            class_intensity: spread(n_classes, 0.5, 1.85),
            gamma: 1.0,
            shading: Shading {
                strength: 0.25,
                max_cycles: 7,
                seed: 0x5ade,
                jitter: 0.1,
            },
            noise_sigma: 0.075,
            blur_sigma: 0.8,
        }
    }
}

/// Evenly spaced intensities from `lo` (background) to `hi`.
fn spread(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|c| lo + (hi - lo) * c as f64 / (n.max(2) - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub size: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub source: ShiftProfile,
    pub target: ShiftProfile,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::new(64, 4, 40, 10)
    }
}

impl GeneratorConfig {
    pub fn new(size: usize, n_classes: usize, n_train: usize, n_test: usize) -> Self {
        Self {
            size,
            n_classes,
            n_train,
            n_test,
            source: ShiftProfile::source(n_classes),
            target: ShiftProfile::target(n_classes),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 4 != 0 {
            return Err(Error::invalid(format!(
                "image size {} must be a positive multiple of 4",
                self.size
            )));
        }
        if self.n_classes < 2 || self.n_classes > 255 {
            return Err(Error::invalid("class count must be in 2..=255"));
        }
        for p in [&self.source, &self.target] {
            if p.class_intensity.len() != self.n_classes {
                return Err(Error::invalid("one intensity per class required"));
            }
            if p.class_intensity.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::invalid("class intensities must be finite and non-negative"));
            }
            if !(p.gamma > 0.0) || !(p.noise_sigma >= 0.0) || !(p.blur_sigma >= 0.0) {
                return Err(Error::invalid("gamma > 0, noise and blur >= 0 required"));
            }
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
}

impl Ellipse {
    /// Membership on the torus of side `size`.
    fn contains(&self, y: f64, x: f64, size: f64) -> bool {
        let wrap = |d: f64| d - size * (d / size).round();
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (wrap(y - self.cy), wrap(x - self.cx));
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

/// Background plus one ellipse per foreground class, painted in class order.
/// Positions are uniform and shapes wrap around the image edges, so every
/// location is equally likely to hold any class.
fn geometry(size: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> LabelGrid {
    let s = size as f64;
    let shapes: Vec<Ellipse> = (1..n_classes)
        .map(|_| Ellipse {
            cy: rng.gen_range(0.0..1.0) * s,
            cx: rng.gen_range(0.0..1.0) * s,
            ay: rng.gen_range(0.1..0.2) * s,
            ax: rng.gen_range(0.1..0.2) * s,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        })
        .collect();
    let mut label = LabelGrid::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            for (i, e) in shapes.iter().enumerate() {
                if e.contains(y as f64 + 0.5, x as f64 + 0.5, s) {
                    label.set(y, x, (i + 1) as u8);
                }
            }
        }
    }
    label
}

/// Periodic separable Gaussian blur.
fn blur(img: &mut [f64], size: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = size as isize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).rem_euclid(n);
                acc += w * img[(y * n + xx) as usize];
            }
            tmp[(y * n + x) as usize] = acc / norm;
        }
    }
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).rem_euclid(n);
                acc += w * tmp[(yy * n + x) as usize];
            }
            img[(y * n + x) as usize] = acc / norm;
        }
    }
}

fn render(label: &LabelGrid, profile: &ShiftProfile, rng: &mut ChaCha8Rng) -> RealGrid<f64> {
    let size = label.height();
    let mut img: Vec<f64> = label
        .data()
        .iter()
        .map(|&c| profile.class_intensity[c as usize])
        .collect();
    blur(&mut img, size, profile.blur_sigma);
    let sh = &profile.shading;
    let scale = sh.strength * (1.0 + sh.jitter * rng.gen_range(-1.0..1.0));
    let pattern = sh.pattern(size);
    let noise = Normal::new(0.0, profile.noise_sigma.max(0.0)).unwrap();
    for (v, f) in img.iter_mut().zip(&pattern) {
        let n = if profile.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        *v = (v.max(0.0).powf(profile.gamma) + scale * f + n) as f32 as f64;
    }
    RealGrid::from_vec(size, size, 1, img).expect("generator produces finite pixels")
}

/// Generates both domains. Sample `i` of each split has the same geometry,
/// hence the same labels, in source and target; only the rendering differs.
/// `(cfg, seed)` determines every pixel.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<DomainPair<f64>> {
    cfg.validate()?;
    let split = |offset: u64, count: usize| -> (Vec<Sample<f64>>, Vec<Sample<f64>>) {
        (0..count)
            .map(|i| {
                let sample_seed = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(offset + i as u64);
                let mut geo_rng = ChaCha8Rng::seed_from_u64(sample_seed);
                let label = geometry(cfg.size, cfg.n_classes, &mut geo_rng);
                let mut src_rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0x5352_4300);
                let mut tgt_rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0x5447_5400);
                (
                    Sample {
                        image: render(&label, &cfg.source, &mut src_rng),
                        label: label.clone(),
                    },
                    Sample {
                        image: render(&label, &cfg.target, &mut tgt_rng),
                        label,
                    },
                )
            })
            .unzip()
    };
    let (src_train, tgt_train) = split(0, cfg.n_train);
    let (src_test, tgt_test) = split(1 << 32, cfg.n_test);
    Ok(DomainPair {
        source: Dataset {
            n_classes: cfg.n_classes,
            train: src_train,
            test: src_test,
        },
        target: Dataset {
            n_classes: cfg.n_classes,
            train: tgt_train,
            test: tgt_test,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = GeneratorConfig::new(32, 3, 3, 2);
        assert_eq!(generate(&cfg, 7).unwrap(), generate(&cfg, 7).unwrap());
        assert_ne!(generate(&cfg, 7).unwrap(), generate(&cfg, 8).unwrap());
    }

    #[test]
    fn labels_shared_across_domains() {
        let pair = generate(&GeneratorConfig::new(32, 4, 4, 2), 1).unwrap();
        for (s, t) in pair.source.train.iter().zip(&pair.target.train) {
            assert_eq!(s.label, t.label);
            assert_ne!(s.image, t.image);
        }
    }

    #[test]
    fn label_histogram() {
        let cfg = GeneratorConfig::new(64, 4, 20, 0);
        let pair = generate(&cfg, 3).unwrap();
        let mut counts = [0usize; 4];
        for s in &pair.source.train {
            for &l in s.label.data() {
                counts[l as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        assert!(counts[0] * 2 > total, "background is the majority");
        for (c, &n) in counts.iter().enumerate().skip(1) {
            assert!(n as f64 / total as f64 >= 0.01, "class {c}: {n}/{total}");
        }
    }

    #[test]
    fn class_one_intensity_shift() {
        let pair = generate(&GeneratorConfig::new(64, 4, 10, 0), 5).unwrap();
        let mean = |d: &Dataset<f64>| {
            let (mut s, mut n) = (0.0, 0usize);
            for smp in &d.train {
                for (v, &l) in smp.image.data().iter().zip(smp.label.data()) {
                    if l == 1 {
                        s += v;
                        n += 1;
                    }
                }
            }
            s / n as f64
        };
        assert!((mean(&pair.source) - mean(&pair.target)).abs() >= 0.4);
    }

    #[test]
    fn shading_is_low_frequency_unit_rms() {
        let sh = Shading {
            strength: 1.0,
            max_cycles: 3,
            seed: 4,
            jitter: 0.0,
        };
        let p = sh.pattern(32);
        let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        let spectrum = crate::grid::fft2_real(&RealGrid::from_vec(32, 32, 1, p).unwrap()).unwrap();
        for ky in 0..32usize {
            for kx in 0..32usize {
                let fy = ky.min(32 - ky);
                let fx = kx.min(32 - kx);
                if fy > 3 || fx > 3 || (fy == 0 && fx == 0) {
                    assert!(spectrum.get(ky, kx, 0).norm() < 1e-9, "({ky}, {kx})");
                }
            }
        }
        assert!(Shading::none().pattern(8).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(generate(&GeneratorConfig::new(30, 4, 1, 1), 0).is_err());
        assert!(generate(&GeneratorConfig::new(32, 1, 1, 1), 0).is_err());
    }
}
