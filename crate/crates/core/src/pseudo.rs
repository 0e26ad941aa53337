//! Reliable pseudo labels from a frozen model's own predictions.
//!
//! Probabilities are filtered by a global floor `lambda` and a per-class
//! top-`k` threshold, the survivors are arg-maxed into one-hot labels with a
//! selection mask, and pixels whose nearest class prototype (a
//! probability-weighted mean feature) disagrees with their label are
//! dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_lowest, RealGrid};
use crate::scalar::Scalar;
use crate::segnet::{SegModel, SegOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Global probability floor.
    pub lambda: f64,
    /// Fraction of each class channel kept by the intra-class threshold.
    pub k: f64,
    pub use_global: bool,
    pub use_intra: bool,
    pub use_prototype: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            k: 0.8,
            use_global: true,
            use_intra: true,
            use_prototype: true,
        }
    }
}

impl SelectionConfig {
    /// No filtering at all: plain argmax labels, every pixel selected.
    pub fn none() -> Self {
        Self {
            use_global: false,
            use_intra: false,
            use_prototype: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(Error::invalid(format!("k {} outside (0, 1]", self.k)));
        }
        Ok(())
    }
}

/// One-hot pseudo label (stored as a class id) and binary selection mask per
/// pixel. Where the mask is 0 the label is class 0 and carries no meaning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReliableLabel {
    height: usize,
    width: usize,
    n_classes: usize,
    labels: Vec<u8>,
    selected: Vec<bool>,
}

impl ReliableLabel {
    pub fn new(
        height: usize,
        width: usize,
        n_classes: usize,
        labels: Vec<u8>,
        selected: Vec<bool>,
    ) -> Result<Self> {
        if labels.len() != height * width || selected.len() != height * width {
            return Err(Error::shape("reliable label size"));
        }
        if labels.iter().any(|&l| l as usize >= n_classes) {
            return Err(Error::invalid("pseudo label class out of range"));
        }
        Ok(Self {
            height,
            width,
            n_classes,
            labels,
            selected,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Class id per pixel (`argmax` of the one-hot `y`).
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Selection mask `T`.
    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&t| t).count()
    }

    /// One-hot vector of pixel `i`.
    pub fn one_hot(&self, i: usize) -> Vec<u8> {
        let mut v = vec![0; self.n_classes];
        v[self.labels[i] as usize] = 1;
        v
    }

    /// `(N_c + 1)`-way one-hot encoding: the pseudo class where selected,
    /// the extra "ignore" slot otherwise. Row-major, `N_c + 1` entries per
    /// pixel.
    pub fn encode_r(&self) -> Vec<u8> {
        let width = self.n_classes + 1;
        let mut r = vec![0u8; self.labels.len() * width];
        for (i, (&l, &t)) in self.labels.iter().zip(&self.selected).enumerate() {
            let slot = if t { l as usize } else { self.n_classes };
            r[i * width + slot] = 1;
        }
        r
    }
}

/// Per-class weighted-mean feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes<T> {
    pub vectors: Vec<Vec<T>>,
    /// False where the class has zero selected probability mass.
    pub active: Vec<bool>,
}

/// `delta[c]` is the `m`-th largest value of channel `c`, with
/// `m = clamp(ceil(k * H * W), 1, H * W)`.
pub fn intra_class_thresholds<T: Scalar>(probs: &RealGrid<T>, k: f64) -> Result<Vec<T>> {
    if probs.is_empty() {
        return Err(Error::invalid("threshold of an empty probability grid"));
    }
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::invalid(format!("k {k} outside (0, 1]")));
    }
    let n = probs.height() * probs.width();
    let m = ((k * n as f64).ceil() as usize).clamp(1, n);
    let nc = probs.channels();
    Ok((0..nc)
        .map(|c| {
            let mut channel: Vec<T> = probs.data().iter().skip(c).step_by(nc).copied().collect();
            let (_, nth, _) = channel.select_nth_unstable_by(m - 1, |a, b| b.partial_cmp(a).unwrap());
            *nth
        })
        .collect())
}

/// Zeroes every probability below its class threshold or below `lambda`.
pub fn select_probs<T: Scalar>(probs: &RealGrid<T>, delta: &[T], lambda: T) -> Result<RealGrid<T>> {
    let nc = probs.channels();
    if delta.len() != nc {
        return Err(Error::shape(format!("{} thresholds for {nc} classes", delta.len())));
    }
    let data = probs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| if p >= delta[i % nc] && p >= lambda { p } else { T::zero() })
        .collect();
    Ok(probs.with_data(data))
}

/// Argmax labels of the revised probabilities and the mask of pixels where
/// any class survived.
pub fn make_pseudo_label<T: Scalar>(revised: &RealGrid<T>) -> ReliableLabel {
    let nc = revised.channels();
    let mut labels = Vec::with_capacity(revised.height() * revised.width());
    let mut selected = Vec::with_capacity(labels.capacity());
    for row in revised.data().chunks_exact(nc) {
        let any = row.iter().copied().sum::<T>() > T::zero();
        selected.push(any);
        labels.push(if any { argmax_lowest(row) as u8 } else { 0 });
    }
    ReliableLabel {
        height: revised.height(),
        width: revised.width(),
        n_classes: nc,
        labels,
        selected,
    }
}

pub fn prototypes<T: Scalar>(features: &RealGrid<T>, revised: &RealGrid<T>) -> Result<Prototypes<T>> {
    if (features.height(), features.width()) != (revised.height(), revised.width()) {
        return Err(Error::shape("features and probabilities differ in size"));
    }
    let (nc, l) = (revised.channels(), features.channels());
    let mut sums = vec![vec![T::zero(); l]; nc];
    let mut mass = vec![T::zero(); nc];
    for (e, p) in features.data().chunks_exact(l).zip(revised.data().chunks_exact(nc)) {
        for c in 0..nc {
            if p[c] > T::zero() {
                mass[c] += p[c];
                for (s, &f) in sums[c].iter_mut().zip(e) {
                    *s += f * p[c];
                }
            }
        }
    }
    let active: Vec<bool> = mass.iter().map(|&m| m > T::zero()).collect();
    let vectors = sums
        .into_iter()
        .zip(&mass)
        .map(|(s, &m)| {
            if m > T::zero() {
                s.into_iter().map(|v| v / m).collect()
            } else {
                vec![T::zero(); l]
            }
        })
        .collect();
    Ok(Prototypes { vectors, active })
}

/// Keeps a selected pixel only if its nearest active prototype is the class
/// of its pseudo label. Nearest-prototype ties go to the lowest class index.
pub fn prototype_refine<T: Scalar>(
    label: &ReliableLabel,
    features: &RealGrid<T>,
    protos: &Prototypes<T>,
) -> Result<ReliableLabel> {
    if (features.height(), features.width()) != (label.height, label.width) {
        return Err(Error::shape("features and labels differ in size"));
    }
    if protos.vectors.len() != label.n_classes {
        return Err(Error::shape("prototype count != class count"));
    }
    if !protos.active.iter().any(|&a| a) {
        return Err(Error::NoActiveClass);
    }
    let l = features.channels();
    let mut out = label.clone();
    for (i, e) in features.data().chunks_exact(l).enumerate() {
        if !label.selected[i] {
            continue;
        }
        let mut best: Option<(usize, T)> = None;
        for (c, z) in protos.vectors.iter().enumerate() {
            if !protos.active[c] {
                continue;
            }
            let d2 = e.iter().zip(z).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
            if best.map_or(true, |(_, bd)| d2 < bd) {
                best = Some((c, d2));
            }
        }
        let nearest = best.map(|(c, _)| c).expect("at least one active prototype");
        out.selected[i] = nearest == label.labels[i] as usize;
    }
    Ok(out)
}

/// Full selection chain on an existing model output.
pub fn reliable_from_output<T: Scalar>(out: &SegOutput<T>, cfg: &SelectionConfig) -> Result<ReliableLabel> {
    cfg.validate()?;
    let nc = out.probs.channels();
    let delta = if cfg.use_intra {
        intra_class_thresholds(&out.probs, cfg.k)?
    } else {
        vec![T::zero(); nc]
    };
    let lambda = if cfg.use_global { T::lit(cfg.lambda) } else { T::zero() };
    let revised = select_probs(&out.probs, &delta, lambda)?;
    let label = make_pseudo_label(&revised);
    // with nothing selected there is no prototype to compare against
    if !cfg.use_prototype || label.selected_count() == 0 {
        return Ok(label);
    }
    let protos = prototypes(&out.features, &revised)?;
    prototype_refine(&label, &out.features, &protos)
}

/// Runs the frozen model on an (unprompted, preprocessed) image and selects
/// reliable labels from its prediction.
pub fn reliable_labels<T: Scalar>(
    model: &SegModel<T>,
    input: &RealGrid<T>,
    cfg: &SelectionConfig,
) -> Result<ReliableLabel> {
    if model.mode() != crate::segnet::Mode::Eval {
        return Err(Error::Mode {
            required: "eval",
            actual: "train",
        });
    }
    let (out, _) = model.forward(input)?;
    reliable_from_output(&out, cfg)
}
