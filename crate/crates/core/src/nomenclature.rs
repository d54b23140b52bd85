//! Class tables binding integer label codes to names.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Identifier of the built-in Urban Atlas L1 land-cover table.
pub const L1_ID: &str = "urban-atlas-l1";
/// Identifier of the built-in binary change table.
pub const CHANGE_ID: &str = "binary-change";

/// Code used for "No information" pixels in land-cover tables.
pub const NO_INFORMATION: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassEntry {
    pub code: u8,
    pub name: String,
    /// Whether pixels of this class are scored by losses and metrics.
    pub counts_toward_metrics: bool,
}

impl ClassEntry {
    pub fn new(code: u8, name: impl Into<String>, counts_toward_metrics: bool) -> Self {
        Self { code, name: name.into(), counts_toward_metrics }
    }
}

/// Ordered table of classes.
///
/// Class *positions* (the order of `classes`) index confusion matrices.
/// Network heads only predict scored classes and use the position within
/// [`Nomenclature::scored_codes`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Nomenclature {
    id: String,
    classes: Vec<ClassEntry>,
    position: [Option<u8>; 256],
    head_index: [Option<u8>; 256],
}

impl Nomenclature {
    /// Builds a table, checking that codes are unique.
    pub fn new(id: impl Into<String>, classes: Vec<ClassEntry>) -> Result<Self> {
        let id = id.into();
        if classes.is_empty() {
            return Err(Error::InvalidNomenclature(format!("{id}: no classes")));
        }
        let mut position = [None; 256];
        let mut head_index = [None; 256];
        let mut next_head = 0u8;
        for (i, c) in classes.iter().enumerate() {
            if position[c.code as usize].is_some() {
                return Err(Error::InvalidNomenclature(format!(
                    "{id}: duplicate code {}",
                    c.code
                )));
            }
            position[c.code as usize] = Some(i as u8);
            if c.counts_toward_metrics {
                head_index[c.code as usize] = Some(next_head);
                next_head += 1;
            }
        }
        Ok(Self { id, classes, position, head_index })
    }

    /// Builds a land-cover table. Code 0, when present, must be the
    /// unscored "No information" class.
    pub fn land_cover(id: impl Into<String>, classes: Vec<ClassEntry>) -> Result<Self> {
        let n = Self::new(id, classes)?;
        if let Some(c) = n.class(NO_INFORMATION) {
            if c.counts_toward_metrics {
                return Err(Error::InvalidNomenclature(format!(
                    "{}: code 0 is reserved for unscored \"No information\"",
                    n.id
                )));
            }
        }
        Ok(n)
    }

    /// Urban Atlas hierarchical level L1.
    pub fn l1() -> Self {
        Self::land_cover(
            L1_ID,
            alloc::vec![
                ClassEntry::new(0, "No information", false),
                ClassEntry::new(1, "Artificial surfaces", true),
                ClassEntry::new(2, "Agricultural areas", true),
                ClassEntry::new(3, "Forests", true),
                ClassEntry::new(4, "Wetlands", true),
                ClassEntry::new(5, "Water", true),
            ],
        )
        .expect("static table")
    }

    /// Binary change table: 0 = no change, 1 = change. Both scored.
    pub fn binary_change() -> Self {
        Self::new(
            CHANGE_ID,
            alloc::vec![ClassEntry::new(0, "No change", true), ClassEntry::new(1, "Change", true)],
        )
        .expect("static table")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, code: u8) -> Option<&ClassEntry> {
        self.position[code as usize].map(|p| &self.classes[p as usize])
    }

    pub fn contains(&self, code: u8) -> bool {
        self.position[code as usize].is_some()
    }

    /// Position of `code` in the table.
    pub fn position(&self, code: u8) -> Option<usize> {
        self.position[code as usize].map(usize::from)
    }

    pub fn is_scored(&self, code: u8) -> bool {
        self.head_index[code as usize].is_some()
    }

    /// Index of `code` among the scored classes, i.e. the network head channel.
    pub fn head_index(&self, code: u8) -> Option<usize> {
        self.head_index[code as usize].map(usize::from)
    }

    pub fn scored_codes(&self) -> Vec<u8> {
        self.classes.iter().filter(|c| c.counts_toward_metrics).map(|c| c.code).collect()
    }

    pub fn n_scored(&self) -> usize {
        self.classes.iter().filter(|c| c.counts_toward_metrics).count()
    }

    /// Code predicted by head channel `index`.
    pub fn code_of_head(&self, index: usize) -> Option<u8> {
        self.classes.iter().filter(|c| c.counts_toward_metrics).nth(index).map(|c| c.code)
    }

    pub fn name(&self, code: u8) -> Option<&str> {
        self.class(code).map(|c| c.name.as_str())
    }
}

/// Multiclass change nomenclature: code 0 is "no change", followed by one
/// class per ordered pair of distinct scored land-cover classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangePairs {
    nomenclature: Nomenclature,
    pairs: Vec<(u8, u8)>,
}

impl ChangePairs {
    pub fn from_land_cover(base: &Nomenclature) -> Result<Self> {
        let codes = base.scored_codes();
        let mut classes = alloc::vec![ClassEntry::new(0, "No change", true)];
        let mut pairs = alloc::vec![(0, 0)];
        for &from in &codes {
            for &to in &codes {
                if from == to {
                    continue;
                }
                let code = u8::try_from(pairs.len()).map_err(|_| {
                    Error::InvalidNomenclature(format!(
                        "{}: too many classes for 8-bit change-pair codes",
                        base.id()
                    ))
                })?;
                classes.push(ClassEntry::new(code, format!("{from}->{to}"), true));
                pairs.push((from, to));
            }
        }
        let id = format!("{}-change-pairs", base.id());
        Ok(Self { nomenclature: Nomenclature::new(id, classes)?, pairs })
    }

    pub fn nomenclature(&self) -> &Nomenclature {
        &self.nomenclature
    }

    /// Change-pair code for a transition, `Some(0)` when unchanged.
    pub fn encode(&self, from: u8, to: u8) -> Option<u8> {
        if from == to {
            return Some(0);
        }
        self.pairs.iter().position(|&p| p == (from, to)).map(|i| i as u8)
    }

    /// `None` for "no change", otherwise `(from, to)`.
    pub fn decode(&self, code: u8) -> Option<(u8, u8)> {
        match code {
            0 => None,
            c => self.pairs.get(c as usize).copied(),
        }
    }

    pub fn label(&self, code: u8) -> String {
        match self.decode(code) {
            None => "no change".to_string(),
            Some((a, b)) => format!("{a}->{b}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_table_matches_urban_atlas() {
        let n = Nomenclature::l1();
        let codes: Vec<u8> = n.classes().iter().map(|c| c.code).collect();
        assert_eq!(codes, [0, 1, 2, 3, 4, 5]);
        assert_eq!(n.name(0), Some("No information"));
        assert_eq!(n.name(2), Some("Agricultural areas"));
        assert_eq!(n.name(5), Some("Water"));
        assert!(!n.is_scored(0));
        assert_eq!(n.n_scored(), 5);
        assert_eq!(n.head_index(1), Some(0));
        assert_eq!(n.code_of_head(4), Some(5));
    }

    #[test]
    fn duplicate_codes_rejected() {
        let r = Nomenclature::new(
            "dup",
            alloc::vec![ClassEntry::new(1, "a", true), ClassEntry::new(1, "b", true)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn scored_code_zero_rejected_for_land_cover() {
        let r = Nomenclature::land_cover("bad", alloc::vec![ClassEntry::new(0, "x", true)]);
        assert!(r.is_err());
    }

    #[test]
    fn change_pairs_has_twenty_one_classes_for_l1() {
        let cp = ChangePairs::from_land_cover(&Nomenclature::l1()).unwrap();
        assert_eq!(cp.nomenclature().len(), 21);
        let c = cp.encode(2, 1).unwrap();
        assert_ne!(c, 0);
        assert_eq!(cp.decode(c), Some((2, 1)));
        assert_eq!(cp.encode(3, 3), Some(0));
        assert_eq!(cp.decode(0), None);
        assert_eq!(cp.encode(0, 1), None);
    }
}
