//! Freezing, weight-sharing and checkpoint contracts observed on a real
//! sequential training run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcd_core::checkpoint::Checkpoint;
use semcd_core::config::{Strategy, TrainConfig};
use semcd_core::inference::{predict_pair, Role};
use semcd_core::nn::{forward, GroupSet, Mode, Model, Preset, Tensor};
use semcd_core::nomenclature::Nomenclature;
use semcd_core::raster::{Image, ImagePair};
use semcd_core::synth::{generate, SynthSpec};
use semcd_core::tiling::TileSpec;
use semcd_core::train::{Session, TrainEvent};

/// Violations counted per contract over every optimisation step.
#[derive(Debug, Default)]
pub struct ContractReport {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Stage-1 steps after which a change-branch tensor or buffer differed.
    pub cd_changed_in_stage1: usize,
    /// Stage-2 steps after which a land-cover tensor or buffer differed.
    pub lcm_changed_in_stage2: usize,
    /// Stage-2 steps after which the land-cover scores of the probe moved.
    pub probe_changed_in_stage2: usize,
    /// Steps after which identical inputs gave different lcm1/lcm2 scores
    /// or a tie pointed at two parameter sets.
    pub tie_broken: usize,
    /// Whether swapping the inputs swapped lcm1 and lcm2 exactly.
    pub swap_symmetric: bool,
    /// Whether stage 2 moved the change branch at all.
    pub cd_trained_in_stage2: bool,
    pub checkpoint: Option<Checkpoint>,
}

pub fn tiny_config(strategy: Strategy, epochs: u32) -> TrainConfig {
    let mut c = TrainConfig::new(strategy);
    c.set_preset(Preset::DESK);
    c.epochs_stage1 = epochs;
    c.epochs_stage2 = epochs;
    c.crop_size = 32;
    c.crops_per_pair = 2;
    c.batch_size = 4;
    c.learning_rate = 0.01;
    c.tile = TileSpec { tile_size: 64, stride: 64, ..c.tile };
    c
}

pub fn tiny_pairs(seed: u64, n: usize) -> Vec<ImagePair> {
    generate(&SynthSpec::new(seed, n, 64, 0.1), &Nomenclature::l1()).unwrap()
}

fn probe(seed: u64, n: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = || Tensor::from_vec(1, 3, n, n, (0..3 * n * n).map(|_| rng.random_range(-2.0f32..2.0)).collect());
    (t(), t())
}

fn ties_hold(m: &Model<f32>, x: &Tensor<f32>) -> bool {
    let g = &m.graph;
    let shared = g.weight_ties().iter().all(|(a, b)| {
        g.nodes[g.node_index(a).unwrap()].binding == g.nodes[g.node_index(b).unwrap()].binding
    });
    let pass = forward(g, &m.params, &[x, x], Mode::Eval, Some(&["lcm1", "lcm2"])).unwrap();
    shared && pass.logits(g, "lcm1").unwrap().data == pass.logits(g, "lcm2").unwrap().data
}

fn lcm_scores(m: &Model<f32>, a: &Tensor<f32>, b: &Tensor<f32>) -> (Vec<f32>, Vec<f32>) {
    let pass = forward(&m.graph, &m.params, &[a, b], Mode::Eval, Some(&["lcm1", "lcm2"])).unwrap();
    (pass.logits(&m.graph, "lcm1").unwrap().data.clone(), pass.logits(&m.graph, "lcm2").unwrap().data.clone())
}

/// Runs S4_2 on a small synthetic set for `epochs` epochs per stage and
/// checks the contracts after every step.
pub fn sequential_contracts(epochs: u32, seed: u64) -> ContractReport {
    let pairs = tiny_pairs(seed, 6);
    let mut config = tiny_config(Strategy::S4_2, epochs);
    config.seed = seed;
    let mut session = Session::new(config, &Nomenclature::l1(), &pairs).unwrap();
    let (pa, pb) = probe(seed + 1, 32);
    let mut r = ContractReport::default();

    let m = session.models.model(Role::Integrated).unwrap();
    let cd_before = m.params.checksum(&m.graph, GroupSet::CD);
    session
        .stage1_land_cover(&mut |e| {
            if let TrainEvent::Step { model, .. } = e {
                r.stage1_steps += 1;
                if model.params.checksum(&model.graph, GroupSet::CD) != cd_before {
                    r.cd_changed_in_stage1 += 1;
                }
                if !ties_hold(model, &pa) {
                    r.tie_broken += 1;
                }
            }
            Ok(())
        })
        .unwrap();

    let m = session.models.model(Role::Integrated).unwrap();
    let lcm_before = m.params.checksum(&m.graph, GroupSet::LCM);
    let cd_after_stage1 = m.params.checksum(&m.graph, GroupSet::CD);
    let scores_before = lcm_scores(m, &pa, &pb);
    session
        .stage2_change(&mut |e| {
            if let TrainEvent::Step { model, .. } = e {
                r.stage2_steps += 1;
                if model.params.checksum(&model.graph, GroupSet::LCM) != lcm_before {
                    r.lcm_changed_in_stage2 += 1;
                }
                if lcm_scores(model, &pa, &pb) != scores_before {
                    r.probe_changed_in_stage2 += 1;
                }
                if !ties_hold(model, &pa) {
                    r.tie_broken += 1;
                }
                if model.params.checksum(&model.graph, GroupSet::CD) != cd_after_stage1 {
                    r.cd_trained_in_stage2 = true;
                }
            }
            Ok(())
        })
        .unwrap();

    let m = session.models.model(Role::Integrated).unwrap();
    let (ab1, ab2) = lcm_scores(m, &pa, &pb);
    let (ba1, ba2) = lcm_scores(m, &pb, &pa);
    r.swap_symmetric = ab1 == ba2 && ab2 == ba1;
    r.checkpoint = Some(session.checkpoint());
    r
}

/// Random image pairs of assorted tile-compatible sizes.
pub fn random_tiles(seed: u64, n: usize) -> Vec<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (h, w) = (8 * rng.random_range(2..=12), 8 * rng.random_range(2..=12));
            let mut img = || Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0f32..255.0)).collect()).unwrap();
            let (a, b) = (img(), img());
            ImagePair::new(format!("tile{i}"), a, b, None, None, None).unwrap()
        })
        .collect()
}

/// Number of random tiles whose predictions differ between the original
/// checkpoint and the one returned by `round_trip`.
pub fn round_trip_mismatches(ck: &Checkpoint, round_trip: impl FnOnce(&Checkpoint) -> Checkpoint, tiles: usize) -> usize {
    let loaded = round_trip(ck);
    let spec = TileSpec { tile_size: 64, stride: 32, ..ck.config.tile };
    random_tiles(77, tiles)
        .iter()
        .filter(|p| {
            let a = predict_pair(&ck.models, p, &spec).unwrap();
            let b = predict_pair(&loaded.models, p, &spec).unwrap();
            let bits = |s: &semcd_core::inference::PairScores| {
                s.heads.iter().flat_map(|h| h.scores.iter().map(|v| v.to_bits())).collect::<Vec<u32>>()
            };
            bits(&a) != bits(&b) || a.heads.is_empty()
        })
        .count()
}
