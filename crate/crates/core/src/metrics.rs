//! Dice and average surface distance, aggregated per class over a set of
//! images.

use serde::{Deserialize, Serialize};

use crate::adapt::prepare_batch;
use crate::data::{preprocess, Sample};
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, RealGrid};
use crate::prompt::VisualPrompt;
use crate::scalar::Scalar;
use crate::segnet::SegModel;

fn check_pair(pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape("prediction and ground truth differ in size"));
    }
    Ok(())
}

/// `2|P ∩ G| / (|P| + |G|)` for one class; 1 when both are empty.
pub fn dice(pred: &LabelGrid, gt: &LabelGrid, class: u8) -> Result<f64> {
    let mut counts = DiceCounts::new(class as usize + 1);
    counts.add(pred, gt)?;
    Ok(counts.dice(class as usize))
}

/// Overlap counts accumulated over many images, so that Dice is computed on
/// the pooled voxels rather than averaged per image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub intersection: Vec<u64>,
    pub predicted: Vec<u64>,
    pub truth: Vec<u64>,
}

impl DiceCounts {
    pub fn new(n_classes: usize) -> Self {
        Self {
            intersection: vec![0; n_classes],
            predicted: vec![0; n_classes],
            truth: vec![0; n_classes],
        }
    }

    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        check_pair(pred, gt)?;
        let n = self.intersection.len();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as usize, g as usize);
            if p < n {
                self.predicted[p] += 1;
            }
            if g < n {
                self.truth[g] += 1;
            }
            if p == g && p < n {
                self.intersection[p] += 1;
            }
        }
        Ok(())
    }

    pub fn dice(&self, class: usize) -> f64 {
        let sum = self.predicted[class] + self.truth[class];
        if sum == 0 {
            1.0
        } else {
            2.0 * self.intersection[class] as f64 / sum as f64
        }
    }
}

/// Mask pixels with a 4-neighbour outside the mask; the image border counts
/// as outside.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let inside = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width && mask[y as usize * width + x as usize]
    };
    (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            mask[i] && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1))
        })
        .collect()
}

/// Exact squared Euclidean distance transform of a 1-D sampled function.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest `true` pixel, infinite
/// when there is none.
pub fn squared_distance_map(sites: &[bool], height: usize, width: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; height];
    let mut tmp = vec![0.0; height.max(width)];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        edt_1d(&col, &mut tmp[..height]);
        for y in 0..height {
            grid[y * width + x] = tmp[y];
        }
    }
    for y in 0..height {
        let row = grid[y * width..(y + 1) * width].to_vec();
        edt_1d(&row, &mut grid[y * width..(y + 1) * width]);
    }
    grid
}

/// Symmetric average surface distance between the class boundaries of
/// prediction and ground truth, in pixels. `None` when either mask is empty.
pub fn asd(pred: &LabelGrid, gt: &LabelGrid, class: u8) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let (h, w) = (gt.height(), gt.width());
    let (pm, gm) = (pred.mask(class), gt.mask(class));
    if !pm.iter().any(|&v| v) || !gm.iter().any(|&v| v) {
        return Ok(None);
    }
    let (pb, gb) = (boundary(&pm, h, w), boundary(&gm, h, w));
    let (dp, dg) = (squared_distance_map(&pb, h, w), squared_distance_map(&gb, h, w));
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..h * w {
        if pb[i] {
            total += dg[i].sqrt();
            count += 1;
        }
        if gb[i] {
            total += dp[i].sqrt();
            count += 1;
        }
    }
    Ok(Some(total / count as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_classes: usize,
    pub samples: usize,
    /// Dice per class (index 0 is background) over the pooled voxels.
    pub dice: Vec<f64>,
    /// Per-class ASD averaged over images where it is defined; `null` when
    /// it is defined for none.
    pub asd: Vec<Option<f64>>,
    pub mean_fg_dice: f64,
    /// Mean over foreground classes with a defined ASD.
    pub mean_fg_asd: Option<f64>,
}

/// Argmax predictions for raw images, optionally prompted.
pub fn predict<T: Scalar>(
    model: &SegModel<T>,
    prompt: Option<&dyn VisualPrompt<T>>,
    images: &[RealGrid<T>],
) -> Result<Vec<LabelGrid>> {
    let mut preds = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        let inputs = match prompt {
            Some(p) => prepare_batch(p, chunk)?.inputs,
            None => chunk.iter().map(preprocess).collect(),
        };
        let (outs, _) = model.forward_batch(&inputs)?;
        preds.extend(outs.iter().map(|o| LabelGrid::argmax(&o.probs)));
    }
    Ok(preds)
}

pub fn evaluate<T: Scalar>(
    model: &SegModel<T>,
    prompt: Option<&dyn VisualPrompt<T>>,
    samples: &[Sample<T>],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let images: Vec<RealGrid<T>> = samples.iter().map(|s| s.image.clone()).collect();
    let preds = predict(model, prompt, &images)?;
    let labels: Vec<&LabelGrid> = samples.iter().map(|s| &s.label).collect();
    report_from_predictions(&preds, &labels, model.n_classes())
}

pub fn report_from_predictions(
    preds: &[LabelGrid],
    labels: &[&LabelGrid],
    n_classes: usize,
) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::shape("one prediction per label required"));
    }
    let mut counts = DiceCounts::new(n_classes);
    let mut asd_sum = vec![0.0; n_classes];
    let mut asd_n = vec![0usize; n_classes];
    for (p, g) in preds.iter().zip(labels) {
        counts.add(p, g)?;
        for c in 0..n_classes {
            if let Some(d) = asd(p, g, c as u8)? {
                asd_sum[c] += d;
                asd_n[c] += 1;
            }
        }
    }
    let dice: Vec<f64> = (0..n_classes).map(|c| counts.dice(c)).collect();
    let asd: Vec<Option<f64>> = asd_sum
        .iter()
        .zip(&asd_n)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let fg = n_classes.saturating_sub(1).max(1) as f64;
    let mean_fg_dice = dice.iter().skip(1).sum::<f64>() / fg;
    let defined: Vec<f64> = asd.iter().skip(1).flatten().copied().collect();
    let mean_fg_asd = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalReport {
        n_classes,
        samples: preds.len(),
        dice,
        asd,
        mean_fg_dice,
        mean_fg_asd,
    })
}
