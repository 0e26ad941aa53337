//! Figure output as binary PGM (P5) and PPM (P6) files.

use std::path::{Path, PathBuf};

use clap::Args;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use fvp_core::data::{load_dataset, preprocess, standardize};
use fvp_core::grid::{fft2_real, fftshift, ifft2, ComplexGrid, LabelGrid, RealGrid};
use fvp_core::metrics::predict;
use fvp_core::prompt::{embed_centered, load_prompt, Prompt, VisualPrompt};
use fvp_core::pseudo::{reliable_labels, ReliableLabel, SelectionConfig};
use fvp_core::segnet::{load_model, SegModel};

use crate::{read_config, require, usage, CliError, CliResult};

/// Class colours; background is drawn from the image itself.
const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 60, 50],
    [60, 180, 75],
    [50, 110, 230],
    [245, 200, 40],
    [170, 70, 200],
    [40, 200, 210],
    [240, 130, 40],
];

fn color(class: u8) -> [u8; 3] {
    PALETTE[class as usize % PALETTE.len()]
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> CliResult<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> CliResult<()> {
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend(rgb.iter().flatten());
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Min-max scales values to 0..=255; a constant plane maps to mid-gray.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// First channel of a grid, row-major.
fn plane(x: &RealGrid<f64>) -> Vec<f64> {
    x.data().iter().step_by(x.channels()).copied().collect()
}

/// Replaces the centre value (the zero frequency of a shifted spectrum) by
/// the mean of its eight neighbours, so it does not dominate the scaling.
pub fn fill_center(values: &mut [f64], height: usize, width: usize) {
    let (cy, cx) = (height / 2, width / 2);
    let mut sum = 0.0;
    let mut n = 0;
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let (y, x) = (cy as isize + dy, cx as isize + dx);
            if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                sum += values[y as usize * width + x as usize];
                n += 1;
            }
        }
    }
    if n > 0 {
        values[cy * width + cx] = sum / n as f64;
    }
}

fn spectrum_planes(z: &ComplexGrid<f64>) -> (Vec<f64>, Vec<f64>) {
    let c = z.channels();
    let re = z.data().iter().step_by(c).map(|v| v.re).collect();
    let im = z.data().iter().step_by(c).map(|v| v.im).collect();
    (re, im)
}

fn write_spectrum(out: &Path, stem: &str, centered: &ComplexGrid<f64>, imag: bool) -> CliResult<()> {
    let (h, w) = (centered.height(), centered.width());
    let (mut re, mut im) = spectrum_planes(centered);
    fill_center(&mut re, h, w);
    write_pgm(&out.join(format!("{stem}_real.pgm")), w, h, &to_gray(&re))?;
    if imag {
        fill_center(&mut im, h, w);
        write_pgm(&out.join(format!("{stem}_imag.pgm")), w, h, &to_gray(&im))?;
    }
    Ok(())
}

/// Image in gray with labelled pixels tinted by class.
pub fn overlay(image: &[f64], labels: &LabelGrid) -> Vec<[u8; 3]> {
    to_gray(image)
        .into_iter()
        .zip(labels.data())
        .map(|(g, &l)| {
            if l == 0 {
                [g; 3]
            } else {
                let c = color(l);
                let mix = |a: u8| ((a as u16 + g as u16) / 2) as u8;
                [mix(c[0]), mix(c[1]), mix(c[2])]
            }
        })
        .collect()
}

/// Pseudo-label classes in colour, unselected pixels black.
pub fn pseudo_label_map(label: &ReliableLabel) -> Vec<[u8; 3]> {
    label
        .labels()
        .iter()
        .zip(label.selected())
        .map(|(&l, &t)| if !t { [0, 0, 0] } else if l == 0 { [128, 128, 128] } else { color(l) })
        .collect()
}

/// Adds zero-mean complex Gaussian noise to the centred `r x r` low-frequency
/// box of the image spectrum. Returns the noisy image and the centred noise.
pub fn noise_sim(
    x: &RealGrid<f64>,
    r: usize,
    sigma: f64,
    seed: u64,
) -> CliResult<(RealGrid<f64>, ComplexGrid<f64>)> {
    let (h, w, c) = x.shape();
    if r == 0 || r > h || r > w {
        return Err(usage(format!("noise box {r} does not fit {h}x{w}")));
    }
    let spectrum = fft2_real(x)?;
    let mut noise = ComplexGrid::zeros(h, w, c);
    let normal = Normal::new(0.0, sigma * (h * w) as f64).map_err(|e| usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y0, x0) = (h / 2 - r / 2, w / 2 - r / 2);
    for y in y0..y0 + r {
        for xx in x0..x0 + r {
            for ch in 0..c {
                let v = Complex::new(normal.sample(&mut rng), normal.sample(&mut rng));
                noise.set(y, xx, ch, v);
            }
        }
    }
    let noisy = ifft2(&spectrum.add(&fftshift(&noise, true))?)?.re();
    Ok((noisy, noise))
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labeled target dataset directory.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    /// train | test (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// Sample index within the split.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Also write a noise-simulated prompt and the resulting image.
    #[arg(long)]
    pub noise_sim: bool,
    /// Box side for --noise-sim.
    #[arg(long)]
    pub r: Option<usize>,
    /// Noise standard deviation in image intensity units (--noise-sim).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, env = "FVP_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl RenderArgs {
    fn merged(mut self) -> CliResult<Self> {
        if let Some(path) = self.config.clone() {
            let f: RenderArgs = read_config(&path)?;
            macro_rules! fill {
                ($($x:ident),*) => { $( if self.$x.is_none() { self.$x = f.$x; } )* };
            }
            fill!(out, model, target, prompt, split, index, lambda, k, r, sigma, seed);
            self.noise_sim |= f.noise_sim;
        }
        Ok(self)
    }
}

pub fn render(args: RenderArgs) -> CliResult<()> {
    let args = args.merged()?;
    let out = require(&args.out, "out")?;
    let model_path = require(&args.model, "model")?;
    let target = require(&args.target, "target")?;
    let selection = SelectionConfig {
        lambda: args.lambda.unwrap_or(0.01),
        k: args.k.unwrap_or(0.8),
        ..SelectionConfig::default()
    };
    selection.validate()?;
    let sigma = args.sigma.unwrap_or(0.05);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage("--sigma must be non-negative"));
    }
    let model: SegModel<f64> = load_model(&model_path)?;
    let (_, data) = load_dataset::<f64>(&target)?;
    let split = args.split.clone().unwrap_or_else(|| "test".into());
    let samples = match split.as_str() {
        "train" => &data.train,
        "test" => &data.test,
        other => return Err(usage(format!("unknown split `{other}` (train|test)"))),
    };
    let index = args.index.unwrap_or(0);
    let sample = samples
        .get(index)
        .ok_or_else(|| usage(format!("index {index} out of range ({} samples)", samples.len())))?;
    let prompt: Option<Prompt<f64>> = args.prompt.as_ref().map(load_prompt).transpose()?;
    let (h, w, _) = sample.image.shape();
    if args.noise_sim {
        let r = args.r.unwrap_or(16);
        if r == 0 || r > h || r > w {
            return Err(usage(format!("noise box {r} does not fit {h}x{w}")));
        }
    }

    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let image = plane(&sample.image);
    write_pgm(&out.join("original.pgm"), w, h, &to_gray(&image))?;
    write_ppm(&out.join("overlay_truth.ppm"), w, h, &overlay(&image, &sample.label))?;
    let src_pred = predict(&model, None, std::slice::from_ref(&sample.image))?;
    write_ppm(&out.join("overlay_source_only.ppm"), w, h, &overlay(&image, &src_pred[0]))?;
    let reliable = reliable_labels(&model, &preprocess(&sample.image), &selection)?;
    write_ppm(&out.join("pseudo_labels.ppm"), w, h, &pseudo_label_map(&reliable))?;

    if let Some(p) = &prompt {
        let std_img = standardize(&sample.image).0;
        let prompted = p.apply_batch(std::slice::from_ref(&std_img))?.images.remove(0);
        write_pgm(&out.join("prompted.pgm"), w, h, &to_gray(&plane(&prompted)))?;
        let delta: Vec<f64> = plane(&prompted).iter().zip(plane(&std_img)).map(|(a, b)| a - b).collect();
        write_pgm(&out.join("prompt_spatial.pgm"), w, h, &to_gray(&delta))?;
        if let Prompt::Spectrum(sp) = p {
            let centered = embed_centered(sp, h, w)?;
            let complex = sp.variant() == fvp_core::prompt::FvpVariant::Complex;
            write_spectrum(&out, "prompt", &centered, complex)?;
        }
        let dyn_p: &dyn VisualPrompt<f64> = p;
        let pred = predict(&model, Some(dyn_p), std::slice::from_ref(&sample.image))?;
        write_ppm(&out.join("overlay_prompted.ppm"), w, h, &overlay(&image, &pred[0]))?;
    }

    if args.noise_sim {
        let r = args.r.unwrap_or(16);
        let (noisy, noise) = noise_sim(&sample.image, r, sigma, args.seed.unwrap_or(0))?;
        write_pgm(&out.join("noise_sim.pgm"), w, h, &to_gray(&plane(&noisy)))?;
        write_spectrum(&out, "noise_sim_prompt", &noise, true)?;
    }
    Ok(())
}
