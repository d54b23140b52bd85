//! Trains one strategy on a small synthetic dataset and prints the epoch log.
//!
//! cargo run --release -p semcd-core --example desk_train -- S4_2 [epochs] [n_pairs]

use std::time::Instant;

use semcd_core::config::{Strategy, TrainConfig};
use semcd_core::inference::{decode_strategy, predict_pair, score_pair};
use semcd_core::metrics::ConfusionMatrix;
use semcd_core::nn::Preset;
use semcd_core::nomenclature::Nomenclature;
use semcd_core::synth::{generate, SynthSpec};
use semcd_core::train::{train, TrainEvent};

fn main() -> semcd_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strategy: Strategy = args.first().map_or("S4_2", String::as_str).parse()?;
    let epochs: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let n_pairs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let l1 = Nomenclature::l1();
    let pairs = generate(&SynthSpec::new(11, n_pairs + 10, 256, 0.05), &l1)?;
    let (train_pairs, test_pairs) = pairs.split_at(n_pairs);

    let mut cfg = TrainConfig::new(strategy);
    cfg.set_preset(Preset::DESK);
    cfg.crop_size = 64;
    cfg.crops_per_pair = 8;
    cfg.epochs_stage1 = epochs;
    cfg.epochs_stage2 = epochs;
    cfg.tile.tile_size = 256;
    cfg.tile.stride = 256;
    for (key, value) in std::env::vars() {
        if let Some(k) = key.strip_prefix("SEMCD_CFG_") {
            cfg.set(&k.to_ascii_lowercase(), &value)?;
        }
    }
    let t0 = Instant::now();
    let ck = train(cfg.clone(), &l1, train_pairs, &mut |e| {
        match e {
            TrainEvent::Epoch { record, .. } => println!("{:7.1}s {}", t0.elapsed().as_secs_f64(), record.log_line()),
            TrainEvent::Warning(w) => println!("warning: {w}"),
            TrainEvent::Step { .. } => {}
        }
        Ok(())
    })?;
    let bin = Nomenclature::binary_change();
    let mut cd = ConfusionMatrix::new(&bin);
    let mut lc = ConfusionMatrix::new(&l1);
    for p in test_pairs {
        let d = decode_strategy(&predict_pair(&ck.models, p, &cfg.tile)?, strategy, &l1)?;
        let (c, l) = score_pair(&d, p, &l1)?;
        cd = cd.merge(&c)?;
        if let Some(l) = l {
            lc = lc.merge(&l)?;
        }
    }
    println!("test CD {:?}", cd.metrics()?);
    if lc.total() > 0 {
        println!("test LCM {:?}", lc.metrics()?);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
