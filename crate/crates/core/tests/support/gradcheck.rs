//! Central finite-difference check of network gradients in double precision.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcd_core::loss::{self, evaluate, weighted_ce, HeadTarget, Objective, IGNORE};
use semcd_core::nn::{backward, forward, Architecture, GroupSet, Mode, Model, ModelSpec, ParamGroup, Preset, Tensor};

pub const GRAD_PRESET: Preset = Preset { depth: 2, blocks_per_level: 1, base_width: 2 };
const N_CLASSES: usize = 3;
const SIDE: usize = 8;
const BATCH: usize = 2;
const STEP: f64 = 1e-5;

/// What is differentiated.
#[derive(Clone, Copy, Debug)]
pub enum Loss {
    /// Weighted cross entropy on the first land-cover head alone.
    WeightedCe,
    Objective(Objective),
}

impl Loss {
    pub fn all() -> Vec<(String, Loss)> {
        let mut v = vec![("weighted_ce(lcm1)".to_string(), Loss::WeightedCe)];
        for lambda in [0.0, 0.05, 1.0] {
            v.push((format!("combined(lambda={lambda})"), Loss::Objective(Objective::Combined { lambda })));
        }
        v.push(("land_cover_pair".into(), Loss::Objective(Objective::LandCoverPair)));
        v.push(("change_only".into(), Loss::Objective(Objective::Change)));
        v
    }

    fn heads(self) -> &'static [&'static str] {
        match self {
            Loss::WeightedCe => &["lcm1"],
            Loss::Objective(o) => o.heads(),
        }
    }

    /// Groups that run with batch statistics, as during training.
    fn mode(self) -> Mode {
        match self {
            Loss::WeightedCe => Mode::Train(GroupSet::ALL),
            Loss::Objective(o) => Mode::Train(loss::default_trainable(o)),
        }
    }
}

#[derive(Debug)]
pub struct GroupResult {
    pub group: ParamGroup,
    pub checked: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_err: f64,
}

struct Fixture {
    model: Model<f64>,
    x1: Tensor<f64>,
    x2: Tensor<f64>,
    targets: Vec<(&'static str, Vec<u32>, Vec<f64>)>,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::new(ModelSpec::new(Architecture::Integrated, 3, N_CLASSES, GRAD_PRESET), seed).unwrap();
    for l in &mut model.params.layers {
        for t in &mut l.tensors {
            for v in t {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        for (k, b) in l.buffers.iter_mut().enumerate() {
            for v in b {
                *v = if k % 2 == 0 { rng.random_range(-0.3..0.3) } else { rng.random_range(0.5..1.5) };
            }
        }
    }
    let len = BATCH * 3 * SIDE * SIDE;
    let x1 = Tensor::from_vec(BATCH, 3, SIDE, SIDE, (0..len).map(|_| rng.random_range(-1.5..1.5)).collect());
    let x2 = Tensor::from_vec(BATCH, 3, SIDE, SIDE, (0..len).map(|_| rng.random_range(-1.5..1.5)).collect());
    let px = BATCH * SIDE * SIDE;
    let mut labels = |k: u32| -> Vec<u32> {
        (0..px).map(|_| if rng.random_bool(0.1) { IGNORE } else { rng.random_range(0..k) }).collect()
    };
    let (t1, t2, tc) = (labels(N_CLASSES as u32), labels(N_CLASSES as u32), labels(2));
    let targets = vec![
        ("lcm1", t1, vec![0.4, 1.1, 1.5]),
        ("lcm2", t2, vec![0.4, 1.1, 1.5]),
        ("change", tc, vec![0.3, 1.7]),
    ];
    Fixture { model, x1, x2, targets }
}

fn loss_and_grads(f: &Fixture, which: Loss, want_grads: bool) -> (f64, Option<semcd_core::nn::Grads<f64>>) {
    let m = &f.model;
    let pass = forward(&m.graph, &m.params, &[&f.x1, &f.x2], which.mode(), Some(which.heads())).unwrap();
    let (value, head_grads) = match which {
        Loss::WeightedCe => {
            let (t, w) = f.targets.iter().find(|t| t.0 == "lcm1").map(|t| (&t.1, &t.2)).unwrap();
            let out = weighted_ce(pass.logits(&m.graph, "lcm1").unwrap(), t, w).unwrap();
            (out.loss.unwrap(), vec![(m.graph.head("lcm1").unwrap().0, out.grad)])
        }
        Loss::Objective(o) => {
            let ht: Vec<HeadTarget<'_, f64>> =
                f.targets.iter().map(|(h, t, w)| HeadTarget { head: h, targets: t, weights: w }).collect();
            let v = evaluate(&m.graph, &pass, o, &ht).unwrap().unwrap();
            (v.total, v.head_grads)
        }
    };
    let grads = want_grads.then(|| backward(&m.graph, &m.params, &pass, head_grads, GroupSet::ALL).unwrap());
    (value, grads)
}

/// Compares the analytic gradient with central differences on at most
/// `per_group` randomly chosen scalars of every parameter group.
pub fn check(which: Loss, seed: u64, per_group: usize) -> Vec<GroupResult> {
    let mut f = fixture(seed);
    let (_, grads) = loss_and_grads(&f, which, true);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for group in ParamGroup::ALL {
        let mut coords = Vec::new();
        for (b, binding) in f.model.graph.bindings.iter().enumerate() {
            if binding.group == group {
                for (t, slot) in binding.tensors.iter().enumerate() {
                    coords.extend((0..slot.len).map(|i| (b, t, i)));
                }
            }
        }
        let picked: Vec<(usize, usize, usize)> = if coords.len() <= per_group {
            coords
        } else {
            rand::seq::index::sample(&mut rng, coords.len(), per_group).into_iter().map(|i| coords[i]).collect()
        };
        let (mut diff, mut an, mut nu) = (0.0f64, 0.0f64, 0.0f64);
        for &(b, t, i) in &picked {
            let a = grads.layers[b].as_ref().map_or(0.0, |g| g[t][i]);
            let orig = f.model.params.layers[b].tensors[t][i];
            f.model.params.layers[b].tensors[t][i] = orig + STEP;
            let (lp, _) = loss_and_grads(&f, which, false);
            f.model.params.layers[b].tensors[t][i] = orig - STEP;
            let (lm, _) = loss_and_grads(&f, which, false);
            f.model.params.layers[b].tensors[t][i] = orig;
            let n = (lp - lm) / (2.0 * STEP);
            diff += (a - n).powi(2);
            an += a * a;
            nu += n * n;
        }
        let (an, nu, diff) = (an.sqrt(), nu.sqrt(), diff.sqrt());
        let scale = an.max(nu);
        let rel_err = if scale < 1e-10 { diff } else { diff / scale };
        out.push(GroupResult { group, checked: picked.len(), analytic_norm: an, numeric_norm: nu, rel_err });
    }
    out
}
