//! Binary and semantic change products derived from land-cover maps.

use alloc::vec::Vec;

use crate::error::Result;
use crate::nomenclature::Nomenclature;
use crate::raster::{same_shape, LabelMap};

/// Marks a pixel changed iff both maps carry scored codes and those codes
/// differ. Output is bound to [`Nomenclature::binary_change`].
pub fn compare_lcms(nomenclature: &Nomenclature, lcm1: &LabelMap, lcm2: &LabelMap) -> Result<LabelMap> {
    lcm1.check_bound_to(nomenclature)?;
    lcm2.check_bound_to(nomenclature)?;
    same_shape(lcm1.shape(), lcm2.shape(), "lcm1 vs lcm2")?;
    let data = lcm1
        .data()
        .iter()
        .zip(lcm2.data())
        .map(|(&a, &b)| u8::from(a != b && nomenclature.is_scored(a) && nomenclature.is_scored(b)))
        .collect();
    LabelMap::new(lcm1.height(), lcm1.width(), data, &Nomenclature::binary_change())
}

/// One pixel of a semantic change product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticPixel {
    Unchanged,
    Changed { from: u8, to: u8 },
    /// Marked changed although both land-cover codes agree.
    Inconsistent { class: u8 },
}

/// Binary change mask plus the from/to class planes. Unchanged pixels carry
/// code 0 in both class planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticChangeMap {
    pub height: usize,
    pub width: usize,
    pub change: Vec<u8>,
    pub from: Vec<u8>,
    pub to: Vec<u8>,
}

impl SemanticChangeMap {
    pub fn pixel(&self, i: usize) -> SemanticPixel {
        if self.change[i] == 0 {
            SemanticPixel::Unchanged
        } else if self.from[i] == self.to[i] {
            SemanticPixel::Inconsistent { class: self.from[i] }
        } else {
            SemanticPixel::Changed { from: self.from[i], to: self.to[i] }
        }
    }

    pub fn inconsistent_count(&self) -> usize {
        (0..self.change.len())
            .filter(|&i| matches!(self.pixel(i), SemanticPixel::Inconsistent { .. }))
            .count()
    }
}

/// Attaches the land-cover transition to every changed pixel.
pub fn compose_semantic_change(change: &LabelMap, lcm1: &LabelMap, lcm2: &LabelMap) -> Result<SemanticChangeMap> {
    same_shape(change.shape(), lcm1.shape(), "change vs lcm1")?;
    same_shape(change.shape(), lcm2.shape(), "change vs lcm2")?;
    let n = change.len();
    let mut from = alloc::vec![0u8; n];
    let mut to = alloc::vec![0u8; n];
    let mut mask = alloc::vec![0u8; n];
    for i in 0..n {
        if change.data()[i] != 0 {
            mask[i] = 1;
            from[i] = lcm1.data()[i];
            to[i] = lcm2.data()[i];
        }
    }
    Ok(SemanticChangeMap { height: change.height(), width: change.width(), change: mask, from, to })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn lcm(codes: &[u8]) -> LabelMap {
        LabelMap::new(1, codes.len(), codes.to_vec(), &Nomenclature::l1()).unwrap()
    }

    fn change(codes: &[u8]) -> LabelMap {
        LabelMap::new(1, codes.len(), codes.to_vec(), &Nomenclature::binary_change()).unwrap()
    }

    #[test]
    fn identical_maps_have_no_change() {
        let l1 = Nomenclature::l1();
        let a = lcm(&[1, 2, 3, 0, 5]);
        assert_eq!(compare_lcms(&l1, &a, &a).unwrap().data(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn uniform_disagreement_is_all_change() {
        let l1 = Nomenclature::l1();
        let out = compare_lcms(&l1, &lcm(&[2; 6]), &lcm(&[1; 6])).unwrap();
        assert_eq!(out.data(), &[1; 6]);
        assert_eq!(out.nomenclature_id(), crate::nomenclature::CHANGE_ID);
    }

    #[test]
    fn no_information_never_changes() {
        let l1 = Nomenclature::l1();
        let out = compare_lcms(&l1, &lcm(&[1, 0, 2]), &lcm(&[1, 5, 1])).unwrap();
        assert_eq!(out.data(), &[0, 0, 1]);
    }

    #[test]
    fn shape_and_binding_errors() {
        let l1 = Nomenclature::l1();
        assert!(compare_lcms(&l1, &lcm(&[1, 2]), &lcm(&[1])).is_err());
        assert!(compare_lcms(&l1, &change(&[1, 0]), &lcm(&[1, 2])).is_err());
        assert!(compose_semantic_change(&change(&[1]), &lcm(&[1, 2]), &lcm(&[1, 2])).is_err());
    }

    #[test]
    fn zero_mask_dominates() {
        let s = compose_semantic_change(&change(&[0, 0]), &lcm(&[2, 3]), &lcm(&[1, 4])).unwrap();
        assert_eq!(s.change, vec![0, 0]);
        assert_eq!(s.from, vec![0, 0]);
        assert_eq!(s.pixel(1), SemanticPixel::Unchanged);
    }

    #[test]
    fn four_pixel_fixture() {
        let s = compose_semantic_change(&change(&[1, 0, 1, 1]), &lcm(&[2, 3, 4, 5]), &lcm(&[1, 1, 4, 3])).unwrap();
        assert_eq!(s.change, vec![1, 0, 1, 1]);
        assert_eq!(s.from, vec![2, 0, 4, 5]);
        assert_eq!(s.to, vec![1, 0, 4, 3]);
        assert_eq!(s.pixel(0), SemanticPixel::Changed { from: 2, to: 1 });
        assert_eq!(s.pixel(1), SemanticPixel::Unchanged);
        assert_eq!(s.pixel(2), SemanticPixel::Inconsistent { class: 4 });
        assert_eq!(s.pixel(3), SemanticPixel::Changed { from: 5, to: 3 });
        assert_eq!(s.inconsistent_count(), 1);
    }

    proptest! {
        #[test]
        fn compare_is_reflexive_and_symmetric(
            a in prop::collection::vec(0u8..6, 1..64),
            seed in any::<u64>(),
        ) {
            let l1 = Nomenclature::l1();
            let b: Vec<u8> = a.iter().enumerate()
                .map(|(i, _)| ((seed.rotate_left(i as u32 % 64) ^ i as u64) % 6) as u8)
                .collect();
            let (ma, mb) = (lcm(&a), lcm(&b));
            prop_assert!(compare_lcms(&l1, &ma, &ma).unwrap().data().iter().all(|&c| c == 0));
            prop_assert_eq!(compare_lcms(&l1, &ma, &mb).unwrap(), compare_lcms(&l1, &mb, &ma).unwrap());
        }

        #[test]
        fn composition_restricted_to_mask_is_the_input_pair(
            px in prop::collection::vec((0u8..2, 0u8..6, 0u8..6), 1..64),
        ) {
            let m: Vec<u8> = px.iter().map(|p| p.0).collect();
            let a: Vec<u8> = px.iter().map(|p| p.1).collect();
            let b: Vec<u8> = px.iter().map(|p| p.2).collect();
            let s = compose_semantic_change(&change(&m), &lcm(&a), &lcm(&b)).unwrap();
            for i in 0..m.len() {
                if m[i] == 1 {
                    prop_assert_eq!((s.from[i], s.to[i]), (a[i], b[i]));
                } else {
                    prop_assert_eq!(s.pixel(i), SemanticPixel::Unchanged);
                }
            }
        }
    }
}
