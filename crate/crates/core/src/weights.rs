//! Class-frequency statistics: inverse-frequency loss weights and the
//! change-transition imbalance table.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nomenclature::Nomenclature;
use crate::raster::{same_shape, LabelMap};

pub const DEFAULT_CLIP_MAX: f64 = 1000.0;

/// Per-code pixel counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts(pub [u64; 256]);

impl Default for ClassCounts {
    fn default() -> Self {
        Self([0; 256])
    }
}

impl ClassCounts {
    pub fn add_map(&mut self, map: &LabelMap) {
        for &c in map.data() {
            self.0[c as usize] += 1;
        }
    }

    pub fn from_maps<'a>(maps: impl IntoIterator<Item = &'a LabelMap>) -> Self {
        let mut c = Self::default();
        for m in maps {
            c.add_map(m);
        }
        c
    }

    pub fn get(&self, code: u8) -> u64 {
        self.0[code as usize]
    }
}

/// Loss weight per class of a nomenclature, indexed by class position.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub nomenclature_id: String,
    pub weights: Vec<f64>,
    pub clip_max: f64,
}

impl ClassWeights {
    /// All scored classes weigh 1, unscored 0.
    pub fn uniform(nomenclature: &Nomenclature) -> Self {
        let weights = nomenclature
            .classes()
            .iter()
            .map(|c| if c.counts_toward_metrics { 1.0 } else { 0.0 })
            .collect();
        Self { nomenclature_id: nomenclature.id().to_string(), weights, clip_max: DEFAULT_CLIP_MAX }
    }

    pub fn weight(&self, nomenclature: &Nomenclature, code: u8) -> Option<f64> {
        nomenclature.position(code).map(|p| self.weights[p])
    }

    /// Weights of the scored classes in head order.
    pub fn head_weights(&self, nomenclature: &Nomenclature) -> Vec<f64> {
        nomenclature.scored_codes().iter().map(|&c| self.weight(nomenclature, c).unwrap()).collect()
    }
}

/// Non-fatal finding produced while computing weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightWarning {
    pub code: u8,
    pub message: String,
}

/// Inverse-frequency weights over scored classes, normalised to a mean of
/// one, then clipped so that no weight exceeds `clip_max` times the
/// smallest. Classes without any pixel get `clip_max` times the mean and a
/// warning. Unscored classes weigh 0.
pub fn class_weights(
    counts: &ClassCounts,
    nomenclature: &Nomenclature,
    clip_max: f64,
) -> Result<(ClassWeights, Vec<WeightWarning>)> {
    if !(clip_max >= 1.0) {
        return Err(Error::InvalidArgument(format!("clip_max must be >= 1, got {clip_max}")));
    }
    let scored = nomenclature.scored_codes();
    if scored.iter().all(|&c| counts.get(c) == 0) {
        return Err(Error::InvalidArgument(format!(
            "no labelled pixels for any scored class of {}",
            nomenclature.id()
        )));
    }
    let raw: Vec<Option<f64>> = scored
        .iter()
        .map(|&c| match counts.get(c) {
            0 => None,
            n => Some(1.0 / n as f64),
        })
        .collect();
    let present: Vec<f64> = raw.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let mut normalized: Vec<f64> = raw.iter().map(|r| r.map_or(clip_max, |v| v / mean)).collect();
    let mut warnings = Vec::new();
    for (&code, r) in scored.iter().zip(&raw) {
        if r.is_none() {
            warnings.push(WeightWarning {
                code,
                message: format!("class {code} has no training pixels; weight set to clip_max x mean"),
            });
        }
    }
    let floor = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    let cap = floor * clip_max;
    for w in &mut normalized {
        if *w > cap {
            *w = cap;
        }
    }
    let mut weights = vec![0.0; nomenclature.len()];
    for (&code, w) in scored.iter().zip(normalized) {
        weights[nomenclature.position(code).unwrap()] = w;
    }
    Ok((ClassWeights { nomenclature_id: nomenclature.id().to_string(), weights, clip_max }, warnings))
}

/// Change-transition statistics over labelled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImbalanceTable {
    /// Scored land-cover codes, in nomenclature order.
    pub classes: Vec<u8>,
    /// `transitions[i][j]`: changed pixels going from `classes[i]` to `classes[j]`.
    pub transitions: Vec<Vec<u64>>,
    pub no_change: u64,
    /// Pixels whose two land-cover codes are both scored.
    pub labelled: u64,
}

impl ImbalanceTable {
    pub fn new(nomenclature: &Nomenclature) -> Self {
        let classes = nomenclature.scored_codes();
        let k = classes.len();
        Self { classes, transitions: vec![vec![0; k]; k], no_change: 0, labelled: 0 }
    }

    /// Adds one pair of land-cover maps with its change map.
    pub fn add(&mut self, nomenclature: &Nomenclature, lcm1: &LabelMap, lcm2: &LabelMap, change: &LabelMap) -> Result<()> {
        lcm1.check_bound_to(nomenclature)?;
        lcm2.check_bound_to(nomenclature)?;
        same_shape(lcm1.shape(), lcm2.shape(), "lcm1 vs lcm2")?;
        same_shape(lcm1.shape(), change.shape(), "lcm vs change")?;
        let index = |code: u8| self.classes.iter().position(|&c| c == code);
        let mut delta = vec![vec![0u64; self.classes.len()]; self.classes.len()];
        let (mut nc, mut lab) = (0, 0);
        for ((&a, &b), &ch) in lcm1.data().iter().zip(lcm2.data()).zip(change.data()) {
            let (Some(i), Some(j)) = (index(a), index(b)) else { continue };
            lab += 1;
            if ch == 0 {
                nc += 1;
            } else {
                delta[i][j] += 1;
            }
        }
        for (row, drow) in self.transitions.iter_mut().zip(delta) {
            for (c, d) in row.iter_mut().zip(drow) {
                *c += d;
            }
        }
        self.no_change += nc;
        self.labelled += lab;
        Ok(())
    }

    fn pct(&self, n: u64) -> f64 {
        if self.labelled == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.labelled as f64
        }
    }

    pub fn no_change_percent(&self) -> f64 {
        self.pct(self.no_change)
    }

    pub fn transition_percent(&self, from: u8, to: u8) -> Option<f64> {
        let i = self.classes.iter().position(|&c| c == from)?;
        let j = self.classes.iter().position(|&c| c == to)?;
        Some(self.pct(self.transitions[i][j]))
    }

    /// Tab-separated rendering: header of target classes, one row per source
    /// class, then the no-change row. Percentages with three decimals.
    pub fn render(&self) -> String {
        let mut s = String::from("from\\to");
        for c in &self.classes {
            s.push_str(&format!("\t{c}"));
        }
        s.push('\n');
        for (i, from) in self.classes.iter().enumerate() {
            s.push_str(&from.to_string());
            for j in 0..self.classes.len() {
                s.push_str(&format!("\t{:.3}%", self.pct(self.transitions[i][j])));
            }
            s.push('\n');
        }
        s.push_str(&format!("No change\t{:.3}%\n", self.no_change_percent()));
        s
    }
}
