//! Versioned little-endian binary checkpoints.
//!
//! Layout: the magic `SEMCDCK\0`, a `u32` format version, the sections
//! below in order, and a trailing FNV-1a 64 hash of every preceding byte.
//! Strings are a `u32` byte length followed by UTF-8; floats are stored
//! bit-exactly.
//!
//! 1. training configuration as its `key = value` text
//! 2. land-cover nomenclature
//! 3. input standardisation
//! 4. stage and epoch
//! 5. networks: role, build arguments, a hash of the structural
//!    description, then every tensor and buffer of every binding
//! 6. optimiser states
//! 7. epoch history

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::config::TrainConfig;
use crate::data::InputNorm;
use crate::error::{Error, Result};
use crate::inference::{Role, StrategyModels};
use crate::nn::params::LayerParams;
use crate::nn::{Architecture, Model, ModelSpec, ParamStore};
use crate::nomenclature::{ClassEntry, Nomenclature};
use crate::optim::Adam;
use crate::train::EpochRecord;

pub const MAGIC: &[u8; 8] = b"SEMCDCK\0";
pub const VERSION: u32 = 1;

/// Everything needed to predict with, or continue, a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub models: StrategyModels,
    pub optimizers: Vec<(Role, Adam<f32>)>,
    pub stage: u8,
    pub epoch: u32,
    pub history: Vec<EpochRecord>,
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.len(v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    fn nested(&mut self, v: &[Vec<f32>]) {
        self.len(v.len());
        for t in v {
            self.f32s(t);
        }
    }
}

struct R<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint ({what})"))
}

impl<'a> R<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("unexpected end"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > self.buf.len() {
            return Err(corrupt("length out of range"));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        core::str::from_utf8(self.take(n)?).map(ToString::to_string).map_err(|_| corrupt("invalid utf-8"))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap()))).collect())
    }
    fn nested(&mut self) -> Result<Vec<Vec<f32>>> {
        let n = self.len()?;
        (0..n).map(|_| self.f32s()).collect()
    }
}

fn role(s: &str) -> Result<Role> {
    Role::parse(s).ok_or_else(|| Error::Checkpoint(format!("unknown network role {s:?}")))
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = W(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config.render());

        let nom = &self.models.land_cover;
        w.str(nom.id());
        w.len(nom.len());
        for c in nom.classes() {
            w.u8(c.code);
            w.u8(u8::from(c.counts_toward_metrics));
            w.str(&c.name);
        }
        w.f32s(&self.models.norm.mean);
        w.f32s(&self.models.norm.std);
        w.u8(self.stage);
        w.u32(self.epoch);

        w.len(self.models.models.len());
        for (r, m) in &self.models.models {
            w.str(r.name());
            w.str(m.spec.arch.name());
            for v in [m.spec.input_channels, m.spec.n_classes, m.spec.depth, m.spec.blocks_per_level, m.spec.base_width] {
                w.len(v);
            }
            w.u64(fnv(m.graph.describe().as_bytes()));
            w.len(m.params.layers.len());
            for l in &m.params.layers {
                w.nested(&l.tensors);
                w.nested(&l.buffers);
            }
        }

        w.len(self.optimizers.len());
        for (r, o) in &self.optimizers {
            w.str(r.name());
            for v in [o.lr, o.beta1, o.beta2, o.eps, o.weight_decay] {
                w.f64(v);
            }
            w.len(o.steps.len());
            for (k, &s) in o.steps.iter().enumerate() {
                w.u64(s);
                w.nested(&o.m[k]);
                w.nested(&o.v[k]);
            }
        }

        w.len(self.history.len());
        for h in &self.history {
            w.str(h.role.name());
            w.u8(h.stage);
            w.u32(h.epoch);
            w.f64(h.learning_rate);
            w.u32(h.steps);
            w.u32(h.skipped);
            w.len(h.losses.len());
            for (name, l) in &h.losses {
                w.str(name);
                w.f64(*l);
            }
            match h.val_kappa {
                Some(k) => {
                    w.u8(1);
                    w.f64(k);
                }
                None => w.u8(0),
            }
        }
        let sum = fnv(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = R { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let config = TrainConfig::parse(&r.str()?)?;

        let id = r.str()?;
        let n = r.len()?;
        let mut classes = Vec::with_capacity(n);
        for _ in 0..n {
            let code = r.u8()?;
            let scored = r.u8()? != 0;
            classes.push(ClassEntry::new(code, r.str()?, scored));
        }
        let land_cover = Nomenclature::land_cover(id, classes)?;
        let norm = InputNorm { mean: r.f32s()?, std: r.f32s()? };
        let stage = r.u8()?;
        let epoch = r.u32()?;

        let n_models = r.len()?;
        let mut models = Vec::with_capacity(n_models);
        for _ in 0..n_models {
            let role = role(&r.str()?)?;
            let arch_name = r.str()?;
            let arch = Architecture::parse(&arch_name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown architecture {arch_name:?}")))?;
            let mut dims = [0usize; 5];
            for d in &mut dims {
                *d = r.len()?;
            }
            let spec = ModelSpec {
                arch,
                input_channels: dims[0],
                n_classes: dims[1],
                depth: dims[2],
                blocks_per_level: dims[3],
                base_width: dims[4],
            };
            let structure = r.u64()?;
            let n_layers = r.len()?;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                layers.push(LayerParams { tensors: r.nested()?, buffers: r.nested()? });
            }
            let model = Model::from_parts(spec, ParamStore { layers })?;
            if fnv(model.graph.describe().as_bytes()) != structure {
                return Err(Error::Checkpoint(format!(
                    "{} network structure differs from the one that was saved",
                    role.name()
                )));
            }
            models.push((role, model));
        }

        let n_opt = r.len()?;
        let mut optimizers = Vec::with_capacity(n_opt);
        for _ in 0..n_opt {
            let role = role(&r.str()?)?;
            let (lr, beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let nb = r.len()?;
            let (mut steps, mut m, mut v) = (Vec::with_capacity(nb), Vec::with_capacity(nb), Vec::with_capacity(nb));
            for _ in 0..nb {
                steps.push(r.u64()?);
                m.push(r.nested()?);
                v.push(r.nested()?);
            }
            optimizers.push((role, Adam { lr, beta1, beta2, eps, weight_decay, steps, m, v }));
        }

        let n_hist = r.len()?;
        let mut history = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            let role = role(&r.str()?)?;
            let stage = r.u8()?;
            let epoch = r.u32()?;
            let learning_rate = r.f64()?;
            let steps = r.u32()?;
            let skipped = r.u32()?;
            let nl = r.len()?;
            let mut losses = Vec::with_capacity(nl);
            for _ in 0..nl {
                losses.push((r.str()?, r.f64()?));
            }
            let val_kappa = match r.u8()? {
                0 => None,
                _ => Some(r.f64()?),
            };
            history.push(EpochRecord { role, stage, epoch, learning_rate, steps, skipped, losses, val_kappa });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            models: StrategyModels { strategy: config.strategy, land_cover, norm, models },
            config,
            optimizers,
            stage,
            epoch,
            history,
        })
    }

    /// Structural description of every network, for the text sidecar.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "strategy {} ({})", self.config.strategy, self.config.strategy.describe());
        let _ = writeln!(s, "land_cover {}", self.models.land_cover.id());
        for (r, m) in &self.models.models {
            let _ = writeln!(s, "\n[{}] parameters={}", r.name(), m.graph.param_count());
            s.push_str(&m.graph.describe());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Strategy;
    use crate::nn::Preset;

    fn sample() -> Checkpoint {
        let mut config = TrainConfig::new(Strategy::S4_1);
        config.set_preset(Preset { depth: 2, blocks_per_level: 1, base_width: 2 });
        config.crop_size = 8;
        config.tile.tile_size = 8;
        config.tile.stride = 8;
        let spec = ModelSpec::new(Architecture::Integrated, 3, 5, config.preset());
        let model = Model::<f32>::new(spec, 3).unwrap();
        let mut opt = Adam::new(&model.graph, 1e-3);
        opt.steps[0] = 4;
        opt.m[0][0][0] = 0.25;
        Checkpoint {
            models: StrategyModels {
                strategy: config.strategy,
                land_cover: Nomenclature::l1(),
                norm: InputNorm { mean: alloc::vec![1.0, 2.0, 3.0], std: alloc::vec![4.0, 5.0, 6.5] },
                models: alloc::vec![(Role::Integrated, model)],
            },
            config,
            optimizers: alloc::vec![(Role::Integrated, opt)],
            stage: 1,
            epoch: 3,
            history: alloc::vec![EpochRecord {
                role: Role::Integrated,
                stage: 1,
                epoch: 3,
                learning_rate: 1e-3,
                steps: 10,
                skipped: 1,
                losses: alloc::vec![("change".into(), 0.5), ("lcm1".into(), 1.25)],
                val_kappa: Some(0.75),
            }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().encode();
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(Checkpoint::decode(&flipped).is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
    }

    #[test]
    fn description_names_every_network() {
        let d = sample().describe();
        assert!(d.contains("[integrated]"));
        assert!(d.contains("tie "));
    }
}
