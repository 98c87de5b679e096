use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::coco::DatasetIndex;
use crate::error::{Error, Result};
use crate::rng::PortableRng;

/// Grouping key for splitting. Images without a patient id form their own group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatientKey {
    Patient(String),
    Image(u64),
}

pub fn patient_key(image: &super::coco::ImageInfo) -> PatientKey {
    match &image.patient_id {
        Some(p) => PatientKey::Patient(p.clone()),
        None => PatientKey::Image(image.id),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_images: usize,
    pub test_images: usize,
    pub train_patients: usize,
    pub test_patients: usize,
    pub target_fraction: f64,
    pub achieved_fraction: f64,
}

/// Splits images by patient so no patient lands in both halves.
///
/// Patients are shuffled with the seeded generator and moved into the
/// training split until it holds at least `train_fraction` of all images.
pub fn patient_split(idx: &DatasetIndex, train_fraction: f64, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    // BTreeMap gives a platform-independent order before shuffling.
    let mut groups: BTreeMap<PatientKey, Vec<u64>> = BTreeMap::new();
    for im in &idx.images {
        groups.entry(patient_key(im)).or_default().push(im.id);
    }
    let mut patients: Vec<Vec<u64>> = groups.into_values().collect();
    PortableRng::seed_from_u64(seed).shuffle(&mut patients);

    let target = train_fraction * idx.images.len() as f64;
    let mut train: HashSet<u64> = HashSet::new();
    let mut test: HashSet<u64> = HashSet::new();
    for images in patients {
        if (train.len() as f64) < target {
            train.extend(images);
        } else {
            test.extend(images);
        }
    }
    Ok((idx.subset(&train), idx.subset(&test)))
}

pub fn summarize(train: &DatasetIndex, test: &DatasetIndex, target_fraction: f64) -> SplitSummary {
    let patients = |d: &DatasetIndex| d.images.iter().map(patient_key).collect::<HashSet<_>>().len();
    let total = train.images.len() + test.images.len();
    SplitSummary {
        train_images: train.images.len(),
        test_images: test.images.len(),
        train_patients: patients(train),
        test_patients: patients(test),
        target_fraction,
        achieved_fraction: if total == 0 {
            0.0
        } else {
            train.images.len() as f64 / total as f64
        },
    }
}
