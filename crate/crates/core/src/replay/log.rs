//! Binary episode log for offline datasets.
//!
//! Layout (little endian): magic `SPKRLEP1`, `u32` obs dim, `u32` action
//! dim, `u64` episode count, then per episode a `u64` length followed by
//! transitions as `s`, `a`, `r`, a flag byte (bit 0 terminal, bit 1
//! truncated, bit 2 guide) and `s_next`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::buffer::{Episode, ReplayBuffer, ReplayConfig, Source, Transition};
use crate::error::{Error, Result};

pub const LOG_MAGIC: &[u8; 8] = b"SPKRLEP1";

fn dims(episodes: &[&Episode]) -> Result<(usize, usize)> {
    let first = episodes
        .iter()
        .flat_map(|e| e.transitions.first())
        .next()
        .map_or((0, 0), |t| (t.s.len(), t.a.len()));
    for t in episodes.iter().flat_map(|e| &e.transitions) {
        if (t.s.len(), t.a.len()) != first || t.s_next.len() != first.0 {
            return Err(Error::Contract("episodes mix observation or action widths".into()));
        }
    }
    Ok(first)
}

pub fn write_episodes(path: &Path, episodes: &[&Episode]) -> Result<()> {
    let (obs_dim, act_dim) = dims(episodes)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(LOG_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(obs_dim as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(act_dim as u32).map_err(io)?;
    w.write_u64::<LittleEndian>(episodes.len() as u64).map_err(io)?;
    for ep in episodes {
        w.write_u64::<LittleEndian>(ep.len() as u64).map_err(io)?;
        for t in &ep.transitions {
            for v in t.s.iter().chain(&t.a).chain([&t.r]) {
                w.write_f64::<LittleEndian>(*v).map_err(io)?;
            }
            let flags = u8::from(t.d) | u8::from(t.truncated) << 1 | u8::from(t.source == Source::Guide) << 2;
            w.write_u8(flags).map_err(io)?;
            for v in &t.s_next {
                w.write_f64::<LittleEndian>(*v).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_episodes(path: &Path) -> Result<Vec<Vec<Transition>>> {
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != LOG_MAGIC {
        return Err(Error::Contract(format!("{} is not an episode log", path.display())));
    }
    let obs_dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let act_dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(io)?;
    let read_vec = |r: &mut BufReader<File>, n: usize| -> Result<Vec<f64>> {
        (0..n).map(|_| r.read_f64::<LittleEndian>().map_err(io)).collect()
    };
    let mut episodes = Vec::new();
    for _ in 0..count {
        let len = r.read_u64::<LittleEndian>().map_err(io)?;
        let mut ep = Vec::new();
        for _ in 0..len {
            let s = read_vec(&mut r, obs_dim)?;
            let a = read_vec(&mut r, act_dim)?;
            let rew = r.read_f64::<LittleEndian>().map_err(io)?;
            let flags = r.read_u8().map_err(io)?;
            let s_next = read_vec(&mut r, obs_dim)?;
            ep.push(Transition {
                s,
                a,
                r: rew,
                d: flags & 1 != 0,
                truncated: flags & 2 != 0,
                s_next,
                source: if flags & 4 != 0 { Source::Guide } else { Source::Policy },
            });
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

impl ReplayBuffer {
    pub fn save_log(&self, path: &Path) -> Result<()> {
        let eps: Vec<&Episode> = self.episodes().collect();
        write_episodes(path, &eps)
    }

    pub fn load_log(path: &Path, config: ReplayConfig) -> Result<Self> {
        let mut buf = ReplayBuffer::new(config)?;
        for ep in read_episodes(path)? {
            if !ep.is_empty() {
                buf.push_episode(ep)?;
            }
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        for (len, crash) in [(120, true), (60, false), (30, true)] {
            let ep: Vec<Transition> = (0..len)
                .map(|t| Transition {
                    s: vec![t as f64 * 0.1, -1.5],
                    a: vec![0.3, f64::MIN_POSITIVE, -2.0],
                    r: 1.0 / (t + 1) as f64,
                    d: crash && t + 1 == len,
                    truncated: !crash && t + 1 == len,
                    s_next: vec![(t + 1) as f64 * 0.1, -1.5],
                    source: if t % 3 == 0 { Source::Guide } else { Source::Policy },
                })
                .collect();
            buf.push_episode(ep).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.bin");
        buf.save_log(&path).unwrap();
        let loaded = ReplayBuffer::load_log(&path, ReplayConfig::default()).unwrap();
        let a: Vec<&Vec<Transition>> = buf.episodes().map(|e| &e.transitions).collect();
        let b: Vec<&Vec<Transition>> = loaded.episodes().map(|e| &e.transitions).collect();
        assert_eq!(a, b);
        assert_eq!(loaded.num_slices(), buf.num_slices());
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTALOG!rest").unwrap();
        assert!(read_episodes(&path).is_err());
    }
}
