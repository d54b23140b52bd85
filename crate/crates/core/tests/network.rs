use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcd_core::nn::{
    forward, Architecture, LayerKind, Mode, Model, ModelSpec, ParamGroup, ParamStore, Preset, Tensor, BN_EPS,
};

const SMALL: Preset = Preset { depth: 2, blocks_per_level: 1, base_width: 4 };

fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect())
}

/// Moves every parameter and running statistic away from its initial value.
fn jitter(params: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut params.layers {
        for t in &mut l.tensors {
            for v in t {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        for (k, b) in l.buffers.iter_mut().enumerate() {
            for v in b {
                *v = if k % 2 == 0 { rng.random_range(-0.5..0.5) } else { rng.random_range(0.5..2.0) };
            }
        }
    }
}

fn integrated(seed: u64) -> Model<f64> {
    let mut m = Model::new(ModelSpec::new(Architecture::Integrated, 3, 5, SMALL), seed).unwrap();
    jitter(&mut m.params, seed + 100);
    m
}

fn node_value<'a>(m: &Model<f64>, pass: &'a semcd_core::nn::ForwardPass<f64>, name: &str) -> &'a Tensor<f64> {
    pass.value(m.graph.node_index(name).unwrap()).unwrap()
}

#[test]
fn zeroed_residual_blocks_are_identity_after_relu() {
    let mut m = integrated(1);
    m.params.zero_residual_branches(&m.graph);
    let x1 = random_tensor(2, 3, 8, 8, 2);
    let x2 = random_tensor(2, 3, 8, 8, 3);
    let pass = forward(&m.graph, &m.params, &[&x1, &x2], Mode::Eval, None).unwrap();
    for (block, prev) in [("lcm1.enc0.res0", "lcm1.enc0.stem"), ("cd.enc1.res0", "cd.enc1.widen"), ("cd.dec0.res0", "cd.dec0.fuse")] {
        assert_eq!(node_value(&m, &pass, block).data, node_value(&m, &pass, prev).data, "{block}");
    }
}

#[test]
fn stem_matches_hand_convolution() {
    let m = integrated(4);
    let x1 = random_tensor(1, 3, 8, 8, 5);
    let x2 = random_tensor(1, 3, 8, 8, 6);
    let pass = forward(&m.graph, &m.params, &[&x1, &x2], Mode::Eval, None).unwrap();
    let node = m.graph.node_index("lcm1.enc0.stem").unwrap();
    let p = &m.params.layers[m.graph.nodes[node].binding.unwrap()];
    let (w, gamma, beta) = (&p.tensors[0], &p.tensors[1], &p.tensors[2]);
    let (mean, var) = (&p.buffers[0], &p.buffers[1]);
    let out = pass.value(node).unwrap();
    let co = out.c;
    for o in 0..co {
        for y in 0..8 {
            for x in 0..8 {
                let mut s = 0.0;
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            if (0..8).contains(&yy) && (0..8).contains(&xx) {
                                s += w[((o * 3 + c) * 3 + ky) * 3 + kx] * x1.at(0, c, yy as usize, xx as usize);
                            }
                        }
                    }
                }
                let bn = gamma[o] * (s - mean[o]) / (var[o] + BN_EPS).sqrt() + beta[o];
                let want = bn.max(0.0);
                assert!((out.at(0, o, y, x) - want).abs() < 1e-12, "{o} {y} {x}");
            }
        }
    }
}

#[test]
fn head_is_a_pointwise_affine_map() {
    let m = integrated(7);
    let x1 = random_tensor(1, 3, 8, 8, 8);
    let x2 = random_tensor(1, 3, 8, 8, 9);
    let pass = forward(&m.graph, &m.params, &[&x1, &x2], Mode::Eval, None).unwrap();
    let (_, head) = m.graph.head("change").unwrap();
    let node = &m.graph.nodes[head.node];
    let input = pass.value(node.inputs[0]).unwrap();
    let p = &m.params.layers[node.binding.unwrap()];
    let logits = pass.logits(&m.graph, "change").unwrap();
    for o in 0..2 {
        for y in 0..8 {
            for x in 0..8 {
                let want = p.tensors[1][o] + (0..input.c).map(|c| p.tensors[0][o * input.c + c] * input.at(0, c, y, x)).sum::<f64>();
                assert!((logits.at(0, o, y, x) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let m = integrated(10);
    let x1 = random_tensor(2, 3, 8, 8, 11);
    let x2 = random_tensor(2, 3, 8, 8, 12);
    let pass = forward(&m.graph, &m.params, &[&x1, &x2], Mode::Eval, None).unwrap();
    for head in ["lcm1", "lcm2", "change"] {
        let p = pass.logits(&m.graph, head).unwrap().softmax();
        let plane = p.plane();
        for s in 0..p.n {
            for i in 0..plane {
                let sum: f64 = (0..p.c).map(|c| p.sample(s)[c * plane + i]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn eval_mode_treats_samples_independently() {
    let m = integrated(13);
    let a1 = random_tensor(1, 3, 8, 8, 14);
    let a2 = random_tensor(1, 3, 8, 8, 15);
    let b1 = random_tensor(1, 3, 8, 8, 16);
    let b2 = random_tensor(1, 3, 8, 8, 17);
    let alone = forward(&m.graph, &m.params, &[&a1, &a2], Mode::Eval, None).unwrap();
    let x1 = Tensor::stack(&[&a1, &b1]);
    let x2 = Tensor::stack(&[&a2, &b2]);
    let batched = forward(&m.graph, &m.params, &[&x1, &x2], Mode::Eval, None).unwrap();
    for head in ["lcm1", "lcm2", "change"] {
        assert_eq!(alone.logits(&m.graph, head).unwrap().sample(0), batched.logits(&m.graph, head).unwrap().sample(0));
    }
}

#[test]
fn identical_images_give_zero_difference_skips() {
    let m = integrated(18);
    let x = random_tensor(1, 3, 8, 8, 19);
    let pass = forward(&m.graph, &m.params, &[&x, &x], Mode::Eval, None).unwrap();
    for l in 0..SMALL.depth {
        assert!(node_value(&m, &pass, &format!("cd.diff{l}")).data.iter().all(|&v| v == 0.0));
    }
    assert_eq!(pass.logits(&m.graph, "lcm1").unwrap().data, pass.logits(&m.graph, "lcm2").unwrap().data);
}

#[test]
fn sharing_halves_the_land_cover_parameters() {
    let m = integrated(20);
    let g = &m.graph;
    assert!(g.param_count() < g.untied_param_count());
    let branch = Model::<f64>::new(ModelSpec::new(Architecture::LcmBranch, 3, 5, SMALL), 0).unwrap();
    assert_eq!(g.untied_param_count() - g.param_count(), branch.graph.param_count());
    assert_eq!(
        g.group_param_count(ParamGroup::EncLcm) + g.group_param_count(ParamGroup::DecLcm),
        branch.graph.param_count()
    );
    let ties = g.weight_ties();
    assert!(!ties.is_empty());
    for (a, b) in &ties {
        assert_eq!(a.strip_prefix("lcm1.").or(a.strip_prefix("head.lcm1")), b.strip_prefix("lcm2.").or(b.strip_prefix("head.lcm2")));
        let (ia, ib) = (g.node_index(a).unwrap(), g.node_index(b).unwrap());
        assert_eq!(g.nodes[ia].binding, g.nodes[ib].binding);
    }
}

#[test]
fn topology_of_the_three_networks() {
    let int = integrated(21).graph;
    assert_eq!(int.input_arity, 2);
    assert_eq!(int.heads.iter().map(|h| h.name.as_str()).collect::<Vec<_>>(), ["lcm1", "lcm2", "change"]);
    assert_eq!(int.head("change").unwrap().1.n_classes, 2);
    assert_eq!(int.head("lcm1").unwrap().1.n_classes, 5);
    for l in 0..SMALL.depth {
        let d = int.node_index(&format!("cd.diff{l}")).unwrap();
        assert_eq!(int.nodes[d].spec.kind, LayerKind::AbsDiff);
        let cat = int.node_index(&format!("cd.dec{l}.cat")).unwrap();
        assert!(int.nodes[cat].inputs.contains(&d));
    }
    let groups = int.param_groups();
    assert_eq!(groups.len(), 4);
    assert!(groups[&ParamGroup::EncCd].iter().all(|n| n.starts_with("cd.enc")));
    assert!(groups[&ParamGroup::EncLcm].iter().all(|n| n.contains(".enc")));

    let ef = Model::<f64>::new(ModelSpec::new(Architecture::FcEfRes, 3, 21, SMALL), 0).unwrap().graph;
    assert_eq!(ef.heads.len(), 1);
    assert_eq!(ef.head("change").unwrap().1.n_classes, 21);
    assert_eq!(ef.nodes[ef.node_index("enc0.stem").unwrap()].spec.in_channels, 6);
    let br = Model::<f64>::new(ModelSpec::new(Architecture::LcmBranch, 3, 5, SMALL), 0).unwrap().graph;
    assert_eq!(br.input_arity, 1);
    assert_eq!(br.taps.len(), SMALL.depth);
    assert!(int.describe().contains("tie lcm1.enc0.stem == lcm2.enc0.stem"));
}

#[test]
fn bad_input_sizes_are_rejected() {
    let m = integrated(22);
    let x = random_tensor(1, 3, 6, 8, 0);
    assert!(forward(&m.graph, &m.params, &[&x, &x], Mode::Eval, None).is_err());
    let x = random_tensor(1, 3, 8, 8, 0);
    assert!(forward(&m.graph, &m.params, &[&x], Mode::Eval, None).is_err());
    let y = random_tensor(1, 4, 8, 8, 0);
    assert!(forward(&m.graph, &m.params, &[&x, &y], Mode::Eval, None).is_err());
}

#[test]
fn head_filter_skips_unrelated_branches() {
    let m = integrated(23);
    let x = random_tensor(1, 3, 8, 8, 1);
    let pass = forward(&m.graph, &m.params, &[&x, &x], Mode::Eval, Some(&["lcm1"])).unwrap();
    assert!(pass.logits(&m.graph, "lcm1").is_some());
    assert!(pass.logits(&m.graph, "change").is_none());
    assert!(pass.logits(&m.graph, "lcm2").is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn swapping_the_inputs_swaps_the_land_cover_maps(seed in 0u64..1000) {
        let m = integrated(seed);
        let a = random_tensor(1, 3, 8, 8, seed + 1);
        let b = random_tensor(1, 3, 8, 8, seed + 2);
        let ab = forward(&m.graph, &m.params, &[&a, &b], Mode::Eval, None).unwrap();
        let ba = forward(&m.graph, &m.params, &[&b, &a], Mode::Eval, None).unwrap();
        prop_assert_eq!(&ab.logits(&m.graph, "lcm1").unwrap().data, &ba.logits(&m.graph, "lcm2").unwrap().data);
        prop_assert_eq!(&ab.logits(&m.graph, "lcm2").unwrap().data, &ba.logits(&m.graph, "lcm1").unwrap().data);
        for l in 0..SMALL.depth {
            let name = format!("cd.diff{l}");
            prop_assert_eq!(&node_value(&m, &ab, &name).data, &node_value(&m, &ba, &name).data);
        }
    }

    #[test]
    fn outputs_are_finite_for_any_input(seed in 0u64..1000, scale in 0.0f64..100.0) {
        let m = integrated(seed);
        let mut a = random_tensor(2, 3, 8, 8, seed);
        for v in &mut a.data { *v *= scale; }
        let pass = forward(&m.graph, &m.params, &[&a, &a], Mode::Eval, None).unwrap();
        for h in ["lcm1", "lcm2", "change"] {
            prop_assert!(pass.logits(&m.graph, h).unwrap().data.iter().all(|v| v.is_finite()));
        }
    }
}
