//! Small on-disk datasets with hand-countable statistics.
#![allow(dead_code)]

use std::path::Path;

use semcd::layout::write_dataset;
use semcd_core::nomenclature::Nomenclature;
use semcd_core::raster::{Image, ImagePair, LabelMap};

/// A 10x10 pair that is agricultural (2) on both dates except `changed`
/// pixels that became artificial (1).
pub fn transition_pair(id: &str, changed: usize) -> ImagePair {
    let (l1, bin) = (Nomenclature::l1(), Nomenclature::binary_change());
    let mut after = vec![2u8; 100];
    let mut change = vec![0u8; 100];
    for i in 0..changed {
        after[i * 7] = 1;
        change[i * 7] = 1;
    }
    let img = |v: f32| Image::filled(10, 10, 3, v);
    ImagePair::new(
        id,
        img(40.0),
        img(90.0),
        Some(LabelMap::filled(10, 10, 2, &l1).unwrap()),
        Some(LabelMap::new(10, 10, after, &l1).unwrap()),
        Some(LabelMap::new(10, 10, change, &bin).unwrap()),
    )
    .unwrap()
}

/// One 100-pixel pair with three 2→1 pixels, written as a dataset.
pub fn write_transition_fixture(root: &Path, changed: usize) {
    write_dataset(root, &[transition_pair("fixture", changed)], Some(0)).unwrap();
}
