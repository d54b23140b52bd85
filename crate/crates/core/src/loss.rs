//! Pixel-wise weighted cross entropy and the multitask objectives built
//! from it.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{ForwardPass, GroupSet, ModelGraph, Real, Tensor};
use crate::nomenclature::Nomenclature;
use crate::raster::LabelMap;

/// Target value of pixels excluded from the loss.
pub const IGNORE: u32 = u32::MAX;

/// Loss value and gradient w.r.t. the logits.
#[derive(Clone, Debug)]
pub struct CeOutput<T> {
    /// `None` when every pixel was excluded.
    pub loss: Option<T>,
    pub grad: Tensor<T>,
    pub counted: usize,
}

/// Mean over non-excluded pixels of `weight[target] · −ln softmax(target)`.
/// `targets` holds head channel indices in `n·h·w` order, [`IGNORE`] for
/// excluded pixels; `weights` is indexed by head channel.
pub fn weighted_ce<T: Real>(logits: &Tensor<T>, targets: &[u32], weights: &[T]) -> Result<CeOutput<T>> {
    let plane = logits.plane();
    if targets.len() != logits.n * plane {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} targets for {} pixels",
            targets.len(),
            logits.n * plane
        )));
    }
    if weights.len() != logits.c {
        return Err(Error::ShapeMismatch(alloc::format!("{} weights for {} classes", weights.len(), logits.c)));
    }
    if let Some(&t) = targets.iter().find(|&&t| t != IGNORE && t as usize >= logits.c) {
        return Err(Error::InvalidArgument(alloc::format!("target class {t} out of range")));
    }
    let counted = targets.iter().filter(|&&t| t != IGNORE).count();
    let mut grad = Tensor::zeros(logits.n, logits.c, logits.h, logits.w);
    if counted == 0 {
        return Ok(CeOutput { loss: None, grad, counted });
    }
    let inv = T::one() / T::of(counted as f64);
    let mut total = T::zero();
    let mut probs = alloc::vec![T::zero(); logits.c];
    for s in 0..logits.n {
        let z = logits.sample(s);
        let g = grad.sample_mut(s);
        for p in 0..plane {
            let t = targets[s * plane + p];
            if t == IGNORE {
                continue;
            }
            let t = t as usize;
            let mut m = T::neg_infinity();
            for c in 0..logits.c {
                m = m.max(z[c * plane + p]);
            }
            let mut sum = T::zero();
            for c in 0..logits.c {
                probs[c] = (z[c * plane + p] - m).exp();
                sum += probs[c];
            }
            let log_sum = sum.ln();
            let w = weights[t];
            total += w * (log_sum - (z[t * plane + p] - m));
            for c in 0..logits.c {
                let pc = probs[c] / sum;
                let ind = if c == t { T::one() } else { T::zero() };
                g[c * plane + p] = w * (pc - ind) * inv;
            }
        }
    }
    Ok(CeOutput { loss: Some(total * inv), grad, counted })
}

/// Head channel targets from a label map; unscored codes become [`IGNORE`].
pub fn targets_from_labels(map: &LabelMap, nomenclature: &Nomenclature) -> Result<Vec<u32>> {
    map.check_bound_to(nomenclature)?;
    map.data()
        .iter()
        .map(|&c| {
            if !nomenclature.contains(c) {
                return Err(Error::UnknownCode { code: c, nomenclature: nomenclature.id().to_string() });
            }
            Ok(nomenclature.head_index(c).map_or(IGNORE, |i| i as u32))
        })
        .collect()
}

/// Which loss is minimised and over which heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Weighted cross entropy on the `change` head.
    Change,
    /// Weighted cross entropy on a single land-cover head named `lcm`.
    LandCover,
    /// `L_CD + λ·(L_LCM1 + L_LCM2)` on the integrated net.
    Combined { lambda: f64 },
    /// `L_LCM1 + L_LCM2` on the integrated net.
    LandCoverPair,
}

impl Objective {
    pub fn heads(self) -> &'static [&'static str] {
        match self {
            Objective::Change => &["change"],
            Objective::LandCover => &["lcm"],
            Objective::Combined { .. } => &["change", "lcm1", "lcm2"],
            Objective::LandCoverPair => &["lcm1", "lcm2"],
        }
    }

    fn coefficient(self, head: &str) -> f64 {
        match (self, head) {
            (Objective::Combined { lambda }, "lcm1" | "lcm2") => lambda,
            _ => 1.0,
        }
    }
}

/// Targets and class weights for one head.
#[derive(Clone, Debug)]
pub struct HeadTarget<'a, T> {
    pub head: &'a str,
    pub targets: &'a [u32],
    pub weights: &'a [T],
}

/// Total loss, per-head terms and logit gradients.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub total: T,
    pub terms: Vec<(&'static str, T)>,
    pub head_grads: Vec<(usize, Tensor<T>)>,
}

/// Evaluates `objective` on a forward pass. Returns `Ok(None)` when some
/// term has no scored pixel (the batch should be skipped).
pub fn evaluate<T: Real>(
    graph: &ModelGraph,
    pass: &ForwardPass<T>,
    objective: Objective,
    targets: &[HeadTarget<'_, T>],
) -> Result<Option<LossValue<T>>> {
    let mut total = T::zero();
    let mut terms = Vec::new();
    let mut head_grads = Vec::new();
    for &head in objective.heads() {
        let (idx, _) = graph.head(head).ok_or_else(|| Error::MissingHead(head.to_string()))?;
        let logits = pass.logits(graph, head).ok_or_else(|| Error::MissingHead(head.to_string()))?;
        let t = targets
            .iter()
            .find(|t| t.head == head)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("no targets for head {head}")))?;
        let out = weighted_ce(logits, t.targets, t.weights)?;
        let Some(loss) = out.loss else { return Ok(None) };
        let k = T::of(objective.coefficient(head));
        total += k * loss;
        terms.push((head, loss));
        let mut g = out.grad;
        if k != T::one() {
            for v in &mut g.data {
                *v *= k;
            }
        }
        head_grads.push((idx, g));
    }
    Ok(Some(LossValue { total, terms, head_grads }))
}

/// Groups a stage may update for each objective when nothing else is
/// specified.
pub fn default_trainable(objective: Objective) -> GroupSet {
    match objective {
        Objective::Change => GroupSet::CD,
        Objective::LandCover | Objective::LandCoverPair => GroupSet::LCM,
        Objective::Combined { .. } => GroupSet::ALL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let logits = Tensor::from_vec(1, 2, 1, 2, alloc::vec![100.0f64, -100.0, -100.0, 100.0]);
        let out = weighted_ce(&logits, &[0, 1], &[1.0, 1.0]).unwrap();
        assert!(out.loss.unwrap() < 1e-30);
    }

    #[test]
    fn uniform_predictions_cost_ln_k() {
        let logits = Tensor::<f64>::zeros(2, 5, 3, 3);
        let targets: Vec<u32> = (0..18).map(|i| i % 5).collect();
        let out = weighted_ce(&logits, &targets, &[1.0; 5]).unwrap();
        assert_relative_eq!(out.loss.unwrap(), libm::log(5.0), epsilon = 1e-12);
    }

    #[test]
    fn two_pixel_weighted_case() {
        // p(target) = 0.9 at pixel 0 (weight 1) and 0.6 at pixel 1 (weight 2).
        let l0 = libm::log(0.9 / 0.1);
        let l1 = libm::log(0.6 / 0.4);
        let logits = Tensor::from_vec(1, 2, 1, 2, alloc::vec![l0, 0.0, 0.0, l1]);
        let out = weighted_ce(&logits, &[0, 1], &[1.0, 2.0]).unwrap();
        let expect = -(libm::log(0.9) + 2.0 * libm::log(0.6)) / 2.0;
        assert_relative_eq!(out.loss.unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(out.loss.unwrap(), 0.5635, epsilon = 1e-4);
    }

    #[test]
    fn ignored_pixels_leave_the_denominator() {
        let logits = Tensor::from_vec(1, 2, 1, 2, alloc::vec![0.0f64, 3.0, 0.0, -3.0]);
        let a = weighted_ce(&logits, &[0, IGNORE], &[1.0, 1.0]).unwrap();
        let single = Tensor::from_vec(1, 2, 1, 1, alloc::vec![0.0f64, 0.0]);
        let b = weighted_ce(&single, &[0], &[1.0, 1.0]).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.counted, 1);
        assert_eq!(a.grad.data[1], 0.0);
        assert_eq!(a.grad.data[3], 0.0);
        let none = weighted_ce(&logits, &[IGNORE, IGNORE], &[1.0, 1.0]).unwrap();
        assert_eq!(none.loss, None);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z: Vec<f64> = (0..24).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.5).collect();
        let logits = Tensor::from_vec(2, 3, 2, 2, z.clone());
        let targets = [0, 2, IGNORE, 1, 1, 1, 0, 2];
        let w = [0.5, 2.0, 1.5];
        let out = weighted_ce(&logits, &targets, &w).unwrap();
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += 1e-6;
            let mut zm = z.clone();
            zm[i] -= 1e-6;
            let fp = weighted_ce(&Tensor::from_vec(2, 3, 2, 2, zp), &targets, &w).unwrap().loss.unwrap();
            let fm = weighted_ce(&Tensor::from_vec(2, 3, 2, 2, zm), &targets, &w).unwrap().loss.unwrap();
            assert_relative_eq!((fp - fm) / 2e-6, out.grad.data[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn bad_targets_are_rejected() {
        let logits = Tensor::<f64>::zeros(1, 2, 1, 2);
        assert!(weighted_ce(&logits, &[0], &[1.0, 1.0]).is_err());
        assert!(weighted_ce(&logits, &[0, 2], &[1.0, 1.0]).is_err());
        assert!(weighted_ce(&logits, &[0, 1], &[1.0]).is_err());
    }

    #[test]
    fn label_maps_become_head_targets() {
        let l1 = Nomenclature::l1();
        let m = LabelMap::new(1, 3, alloc::vec![0, 1, 5], &l1).unwrap();
        assert_eq!(targets_from_labels(&m, &l1).unwrap(), alloc::vec![IGNORE, 0, 4]);
    }
}
