//! On-disk training state: a network checkpoint, a `key = value` sidecar,
//! the replay contents and the rollout workers' episode states.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use peginsert_core::nn::checkpoint::{self as ckpt, Block};
use peginsert_core::nn::{Params, Real};
use peginsert_core::sac::{ReplayBuffer, ReplayParts, TransitionShape};
use peginsert_core::Rng;
use rand::SeedableRng;

use crate::error::{HarnessError, Result};

pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.txt";
pub const REPLAY_FILE: &str = "replay.bin";
pub const WORKERS_FILE: &str = "workers.json";
pub const CONFIG_FILE: &str = "config.toml";
/// Version of the sidecar and replay layouts.
pub const STATE_VERSION: u32 = 1;
const REPLAY_MAGIC: &[u8; 8] = b"PEGREPLY";

pub fn write_model(path: &Path, blocks: &[Block]) -> Result<()> {
    std::fs::write(path, ckpt::encode(blocks)).map_err(HarnessError::io(path))
}

pub fn read_model(path: &Path) -> Result<Vec<Block>> {
    let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
    Ok(ckpt::decode(&bytes)?)
}

/// Load the network stored under `prefix` in a model file into `net`.
pub fn load_net<T: Real, N: Params<T>>(blocks: &[Block], prefix: &str, net: &mut N) -> Result<()> {
    Ok(ckpt::load_blocks(prefix, net, blocks)?)
}

/// `seed:stream:word_pos`, seed in hex.
pub fn rng_to_text(rng: &Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

pub fn rng_from_text(text: &str) -> Result<Rng> {
    let bad = || HarnessError::Config(format!("malformed generator state {text:?}"));
    let mut parts = text.trim().split(':');
    let (Some(seed), Some(stream), Some(pos), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if seed.len() != 64 {
        return Err(bad());
    }
    let mut bytes = [0u8; 32];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = Rng::from_seed(bytes);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

/// Ordered `key = value` text file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar(pub BTreeMap<String, String>);

impl Sidecar {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| HarnessError::Config(format!("checkpoint state lacks {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| HarnessError::Config(format!("checkpoint state {key} = {v:?} is malformed")))
    }

    /// Optional float written with [`Sidecar::set_opt`].
    pub fn parse_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key)? {
            "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    pub fn set_opt(&mut self, key: &str, v: Option<f64>) {
        match v {
            Some(x) => self.set(key, x),
            None => self.set(key, "none"),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = format!("format = {STATE_VERSION}\n");
        for (k, v) in &self.0 {
            text.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path, text).map_err(HarnessError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| HarnessError::Parse {
                path: path.to_path_buf(),
                row: n + 1,
                column: String::new(),
                message: "expected `key = value`".into(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let found: u32 = map
            .get("format")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| HarnessError::Config(format!("{} has no format line", path.display())))?;
        if found != STATE_VERSION {
            return Err(peginsert_core::Error::Version { found, expected: STATE_VERSION }.into());
        }
        map.remove("format");
        Ok(Self(map))
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_replay(path: &Path, replay: &ReplayBuffer) -> Result<()> {
    let parts = replay.export();
    let f = File::create(path).map_err(HarnessError::io(path))?;
    let mut w = BufWriter::new(f);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(REPLAY_MAGIC)?;
        w.write_all(&STATE_VERSION.to_le_bytes())?;
        let s = replay.shape();
        for v in [s.proprio, s.window, s.action, replay.capacity(), parts.cursor] {
            put_u64(w, v as u64)?;
        }
        w.write_all(&replay.alpha().to_le_bytes())?;
        w.write_all(&parts.max_priority.to_le_bytes())?;
        put_u64(w, parts.weights.len() as u64)?;
        for x in &parts.weights {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in [&parts.proprio, &parts.window, &parts.action, &parts.reward, &parts.next_proprio, &parts.next_window] {
            put_f32s(w, v)?;
        }
        let flags: Vec<u8> = parts.terminal.iter().map(|&t| t as u8).collect();
        put_u64(w, flags.len() as u64)?;
        w.write_all(&flags)?;
        w.flush()
    };
    run(&mut w).map_err(HarnessError::io(path))
}

pub fn read_replay(path: &Path) -> Result<ReplayBuffer> {
    let f = File::open(path).map_err(HarnessError::io(path))?;
    let mut r = BufReader::new(f);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(HarnessError::io(path))?;
    let bad = |m: &str| HarnessError::Config(format!("{}: {m}", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated replay file"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != REPLAY_MAGIC {
        return Err(bad("not a replay file"));
    }
    let found = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if found != STATE_VERSION {
        return Err(peginsert_core::Error::Version { found, expected: STATE_VERSION }.into());
    }
    let mut u64s = [0u64; 5];
    for v in &mut u64s {
        *v = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let alpha = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let max_priority = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        weights.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let mut arrays: Vec<Vec<f32>> = Vec::with_capacity(6);
    for _ in 0..6 {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(len.checked_mul(4).ok_or_else(|| bad("corrupt length"))?)?;
        arrays.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
    }
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let terminal: Vec<bool> = take(len)?.iter().map(|&b| b != 0).collect();
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let mut it = arrays.into_iter();
    let mut next = || it.next().unwrap();
    let parts = ReplayParts {
        cursor: u64s[4] as usize,
        max_priority,
        weights,
        proprio: next(),
        window: next(),
        action: next(),
        reward: next(),
        next_proprio: next(),
        next_window: next(),
        terminal,
    };
    let shape = TransitionShape { proprio: u64s[0] as usize, window: u64s[1] as usize, action: u64s[2] as usize };
    Ok(ReplayBuffer::restore(shape, u64s[3] as usize, alpha, parts)?)
}

/// Checkpoint directory for a step inside a run directory.
pub fn step_dir(run: &Path, step: u64) -> PathBuf {
    run.join("checkpoints").join(format!("step-{step:09}"))
}

/// Record `dir` as the newest checkpoint of the run.
pub fn mark_latest(run: &Path, dir: &Path) -> Result<()> {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let p = run.join("checkpoints").join("latest");
    std::fs::write(&p, format!("{name}\n")).map_err(HarnessError::io(&p))
}

/// Resolve a user-supplied checkpoint path: a checkpoint directory, a model
/// file inside one, or a run directory (its latest checkpoint).
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.parent().map(Path::to_path_buf).unwrap_or_default());
    }
    if path.join(MODEL_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    let latest = path.join("checkpoints").join("latest");
    if let Ok(name) = std::fs::read_to_string(&latest) {
        return Ok(path.join("checkpoints").join(name.trim()));
    }
    Err(HarnessError::Config(format!("no checkpoint found at {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use peginsert_core::sac::Transition;
    use rand::RngCore;

    #[test]
    fn rng_text_roundtrip() {
        let mut r = Rng::seed_from_u64(5);
        r.set_stream(7);
        for _ in 0..13 {
            r.next_u32();
        }
        let mut back = rng_from_text(&rng_to_text(&r)).unwrap();
        assert_eq!(back.next_u64(), r.clone().next_u64());
        assert!(rng_from_text("zz:1:2").is_err());
    }

    #[test]
    fn sidecar_roundtrip_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(STATE_FILE);
        let mut s = Sidecar::default();
        s.set("step", 42);
        s.set("alpha", 0.1f64 + 0.2);
        s.set_opt("loss", None);
        s.write(&p).unwrap();
        let back = Sidecar::read(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.parse::<f64>("alpha").unwrap(), 0.1 + 0.2);
        assert_eq!(back.parse_opt("loss").unwrap(), None);
        std::fs::write(&p, "format = 9\nstep = 1\n").unwrap();
        assert!(matches!(
            Sidecar::read(&p),
            Err(HarnessError::Core(peginsert_core::Error::Version { found: 9, expected: 1 }))
        ));
    }

    #[test]
    fn replay_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(REPLAY_FILE);
        let shape = TransitionShape { proprio: 2, window: 3, action: 1 };
        let mut b = ReplayBuffer::new(shape, 3, 0.6).unwrap();
        for k in 0..4 {
            let v = k as f64 / 3.0;
            b.push(&Transition {
                proprio: vec![v; 2],
                window: vec![v; 3],
                action: vec![v],
                reward: -v,
                next_proprio: vec![v; 2],
                next_window: vec![v; 3],
                terminal: k % 2 == 0,
            })
            .unwrap();
        }
        b.update_priorities(&[2], &[0.3]).unwrap();
        write_replay(&p, &b).unwrap();
        assert_eq!(read_replay(&p).unwrap(), b);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_replay(&p).is_err());
    }
}
