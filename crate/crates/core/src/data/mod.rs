//! Synthetic source/target datasets, input standardization and the on-disk
//! image, label and manifest formats.

mod generate;
mod io;
mod standardize;

pub use generate::{generate, GeneratorConfig, Shading, ShiftProfile};
pub use io::{
    load_dataset, load_grid, load_label, read_grid, read_label, save_grid, save_label,
    write_dataset, write_grid, write_label, DatasetManifest, Domain, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use standardize::{preprocess, standardize, StandardizeTape, STANDARDIZE_EPS};

use crate::grid::{LabelGrid, RealGrid};
use crate::scalar::Scalar;

/// One image with its ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: RealGrid<T>,
    pub label: LabelGrid,
}

/// Train and test splits of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub n_classes: usize,
    pub train: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn train_images(&self) -> Vec<RealGrid<T>> {
        self.train.iter().map(|s| s.image.clone()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let cast = |v: &[Sample<T>]| {
            v.iter()
                .map(|s| Sample {
                    image: s.image.cast(),
                    label: s.label.clone(),
                })
                .collect()
        };
        Dataset {
            n_classes: self.n_classes,
            train: cast(&self.train),
            test: cast(&self.test),
        }
    }
}

/// The two domains of a generated benchmark, sharing geometry sample by
/// sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair<T> {
    pub source: Dataset<T>,
    pub target: Dataset<T>,
}
