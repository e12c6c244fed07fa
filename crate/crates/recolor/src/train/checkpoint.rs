//! Checkpoint container: one binary file holding named parameter arrays
//! with shapes, the model configurations, optimizer state, the schedule
//! position, and the training RNG position. f64 payloads are written as
//! raw little-endian bits, so save -> load -> forward is bit-identical.

use super::config::{disc_config_from_kv, disc_config_kv, gen_config_from_kv, gen_config_kv};
use super::optim::Adam;
use crate::autodiff::Arr;
use crate::error::{Error, Result};
use crate::model::{
    DiscriminatorConfig, Generator, GeneratorConfig, ParamStore, PatchDiscriminator,
};
use ndarray::IxDyn;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RCCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Arr>,
    pub v: Vec<Arr>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub global_step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

/// Deserialized checkpoint; models are rebuilt from the embedded configs.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub train_cfg_text: String,
    pub gen_cfg: GeneratorConfig,
    pub gen_params: Vec<SavedParam>,
    pub disc: Option<(DiscriminatorConfig, Vec<SavedParam>)>,
    pub adam_g: Option<AdamState>,
    pub adam_d: Option<AdamState>,
}

impl Checkpoint {
    /// Instantiate the generator with the stored parameters.
    pub fn build_generator(&self) -> Result<Generator> {
        let mut gen = Generator::new(self.gen_cfg.clone(), 0)?;
        restore_store(gen.store_mut(), &self.gen_params, "generator")?;
        Ok(gen)
    }

    /// Instantiate the discriminator, if this checkpoint carries one.
    pub fn build_discriminator(&self) -> Result<Option<PatchDiscriminator>> {
        match &self.disc {
            None => Ok(None),
            Some((cfg, params)) => {
                let mut disc = PatchDiscriminator::new(cfg.clone(), 0)?;
                restore_store(disc.store_mut(), params, "discriminator")?;
                Ok(Some(disc))
            }
        }
    }
}

pub fn snapshot_store(store: &ParamStore) -> Vec<SavedParam> {
    store
        .entries()
        .iter()
        .map(|e| SavedParam {
            name: e.name.clone(),
            trainable: e.trainable,
            shape: e.value.shape().to_vec(),
            data: e.value.iter().copied().collect(),
        })
        .collect()
}

pub fn restore_store(store: &mut ParamStore, saved: &[SavedParam], what: &str) -> Result<()> {
    if store.len() != saved.len() {
        return Err(Error::Format(format!(
            "{what}: checkpoint has {} parameters, model expects {}",
            saved.len(),
            store.len()
        )));
    }
    for (i, sp) in saved.iter().enumerate() {
        let entry = &store.entries()[i];
        if entry.name != sp.name || entry.value.shape() != sp.shape.as_slice() {
            return Err(Error::Format(format!(
                "{what}: parameter {i} mismatch: {} {:?} vs {} {:?}",
                sp.name,
                sp.shape,
                entry.name,
                entry.value.shape()
            )));
        }
        store.set_by_index(i, Arr::from_shape_vec(IxDyn(&sp.shape), sp.data.clone()).unwrap());
    }
    Ok(())
}

pub fn adam_state(adam: &Adam) -> AdamState {
    let (t, m, v) = adam.state();
    AdamState { t, m: m.to_vec(), v: v.to_vec() }
}

// --- binary encoding -------------------------------------------------------

struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, data: impl Iterator<Item = f64>) {
        for v in data {
            self.0.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    fn arr(&mut self, a: &Arr) {
        self.u32(a.ndim() as u32);
        for d in a.shape() {
            self.u64(*d as u64);
        }
        self.f64s(a.iter().copied());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint: bad utf-8".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn arr(&mut self) -> Result<Arr> {
        let nd = self.u32()? as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = self.f64s(n)?;
        Arr::from_shape_vec(IxDyn(&shape), data)
            .map_err(|_| Error::Format("checkpoint: bad array shape".into()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_params(enc: &mut Enc, params: &[SavedParam]) {
    enc.u64(params.len() as u64);
    for p in params {
        enc.str(&p.name);
        enc.u8(u8::from(p.trainable));
        enc.u32(p.shape.len() as u32);
        for d in &p.shape {
            enc.u64(*d as u64);
        }
        enc.f64s(p.data.iter().copied());
    }
}

fn decode_params(dec: &mut Dec) -> Result<Vec<SavedParam>> {
    let n = dec.u64()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = dec.str()?;
        let trainable = dec.u8()? != 0;
        let nd = dec.u32()? as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(dec.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let data = dec.f64s(count)?;
        out.push(SavedParam { name, trainable, shape, data });
    }
    Ok(out)
}

fn encode_adam(enc: &mut Enc, st: &AdamState) {
    enc.u64(st.t);
    enc.u64(st.m.len() as u64);
    for a in &st.m {
        enc.arr(a);
    }
    for a in &st.v {
        enc.arr(a);
    }
}

fn decode_adam(dec: &mut Dec) -> Result<AdamState> {
    let t = dec.u64()?;
    let n = dec.u64()? as usize;
    let mut m = Vec::with_capacity(n);
    for _ in 0..n {
        m.push(dec.arr()?);
    }
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(dec.arr()?);
    }
    Ok(AdamState { t, m, v })
}

/// Everything needed to write one checkpoint.
pub struct SaveArgs<'a> {
    pub meta: CheckpointMeta,
    pub train_cfg_text: &'a str,
    pub gen_cfg: &'a GeneratorConfig,
    pub gen_store: &'a ParamStore,
    pub disc: Option<(&'a DiscriminatorConfig, &'a ParamStore)>,
    pub adam_g: Option<&'a Adam>,
    pub adam_d: Option<&'a Adam>,
}

pub fn save_checkpoint(path: &Path, args: &SaveArgs) -> Result<()> {
    let mut enc = Enc(Vec::new());
    enc.0.extend_from_slice(MAGIC);
    enc.u8(args.meta.stage);
    enc.u64(args.meta.global_step);
    enc.u64(args.meta.rng_seed);
    enc.u64((args.meta.rng_word_pos >> 64) as u64);
    enc.u64(args.meta.rng_word_pos as u64);
    enc.str(args.train_cfg_text);
    enc.str(&gen_config_kv(args.gen_cfg));
    encode_params(&mut enc, &snapshot_store(args.gen_store));
    match args.disc {
        Some((cfg, store)) => {
            enc.u8(1);
            enc.str(&disc_config_kv(cfg));
            encode_params(&mut enc, &snapshot_store(store));
        }
        None => enc.u8(0),
    }
    match args.adam_g {
        Some(a) => {
            enc.u8(1);
            encode_adam(&mut enc, &adam_state(a));
        }
        None => enc.u8(0),
    }
    match args.adam_d {
        Some(a) => {
            enc.u8(1);
            encode_adam(&mut enc, &adam_state(a));
        }
        None => enc.u8(0),
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&enc.0).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let mut dec = Dec { buf: &bytes, pos: 8 };
    let stage = dec.u8()?;
    let global_step = dec.u64()?;
    let rng_seed = dec.u64()?;
    let hi = dec.u64()?;
    let lo = dec.u64()?;
    let meta = CheckpointMeta {
        stage,
        global_step,
        rng_seed,
        rng_word_pos: ((hi as u128) << 64) | lo as u128,
    };
    let train_cfg_text = dec.str()?;
    let gen_cfg = gen_config_from_kv(&dec.str()?)?;
    let gen_params = decode_params(&mut dec)?;
    let disc = if dec.u8()? == 1 {
        let cfg = disc_config_from_kv(&dec.str()?)?;
        let params = decode_params(&mut dec)?;
        Some((cfg, params))
    } else {
        None
    };
    let adam_g = if dec.u8()? == 1 { Some(decode_adam(&mut dec)?) } else { None };
    let adam_d = if dec.u8()? == 1 { Some(decode_adam(&mut dec)?) } else { None };
    if !dec.done() {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(Checkpoint { meta, train_cfg_text, gen_cfg, gen_params, disc, adam_g, adam_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColorSpace, Frame};
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_forward_bits() {
        let gen = Generator::new(GeneratorConfig::desk(16, 16), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(
            &path,
            &SaveArgs {
                meta: CheckpointMeta { stage: 1, global_step: 7, rng_seed: 42, rng_word_pos: 1234 },
                train_cfg_text: "stage = 1\n",
                gen_cfg: gen.config(),
                gen_store: gen.store(),
                disc: None,
                adam_g: None,
                adam_d: None,
            },
        )
        .unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta.global_step, 7);
        assert_eq!(ck.meta.rng_word_pos, 1234);
        let gen2 = ck.build_generator().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Frame::new(
            Array3::from_shape_simple_fn((1, 16, 16), || rng.gen_range(-0.9..0.9)),
            ColorSpace::Grayscale,
        )
        .unwrap();
        let a = gen.forward_first(&x).unwrap();
        let b = gen2.forward_first(&x).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn discriminator_and_adam_round_trip() {
        let gen = Generator::new(GeneratorConfig::tiny(4, 4), 1).unwrap();
        let disc = PatchDiscriminator::new(DiscriminatorConfig::desk(), 2).unwrap();
        let mut adam = Adam::new(gen.store(), 0.5, 0.999);
        // Fabricate some state so the round trip is non-trivial.
        let (t, m, v) = adam.state();
        assert_eq!(t, 0);
        let m: Vec<Arr> = m.iter().map(|a| a.mapv(|_| 0.25)).collect();
        let v: Vec<Arr> = v.iter().map(|a| a.mapv(|_| 0.5)).collect();
        adam.restore(9, m, v);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.ckpt");
        save_checkpoint(
            &path,
            &SaveArgs {
                meta: CheckpointMeta { stage: 2, global_step: 100, rng_seed: 5, rng_word_pos: 0 },
                train_cfg_text: "",
                gen_cfg: gen.config(),
                gen_store: gen.store(),
                disc: Some((disc.config(), disc.store())),
                adam_g: Some(&adam),
                adam_d: None,
            },
        )
        .unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let disc2 = ck.build_discriminator().unwrap().unwrap();
        assert_eq!(disc2.store().len(), disc.store().len());
        let st = ck.adam_g.unwrap();
        assert_eq!(st.t, 9);
        assert!(st.m.iter().all(|a| a.iter().all(|&x| x == 0.25)));
        assert!(ck.adam_d.is_none());
    }

    #[test]
    fn rejects_mismatched_parameters() {
        let gen_a = Generator::new(GeneratorConfig::desk(16, 16), 1).unwrap();
        let mut other_cfg = GeneratorConfig::desk(16, 16);
        other_cfg.base_channels = 8;
        let mut gen_b = Generator::new(other_cfg, 1).unwrap();
        let saved = snapshot_store(gen_a.store());
        assert!(restore_store(gen_b.store_mut(), &saved, "generator").is_err());
    }
}
