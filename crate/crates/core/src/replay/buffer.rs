use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Guide,
    Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    /// Terminal: the episode ended in a crash and must not bootstrap.
    pub d: bool,
    /// The episode was cut by the step limit; bootstrapping continues.
    pub truncated: bool,
    pub s_next: Vec<f64>,
    pub source: Source,
}

/// One stored episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Actions `a_{t−h} … a_{t−1}` flattened oldest first, zeros before the
    /// episode start.
    pub fn action_history(&self, t: usize, h: usize, act_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * act_dim];
        for (slot, back) in (1..=h).rev().enumerate() {
            if let Some(i) = t.checked_sub(back) {
                out[slot * act_dim..(slot + 1) * act_dim].copy_from_slice(&self.transitions[i].a);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Transitions held before the oldest episodes are evicted.
    pub capacity: usize,
    pub n_seq: usize,
    pub n_warmup: usize,
    pub stride: usize,
    /// Add one extra right-aligned slice when the stride leaves an uncovered
    /// tail, so episode endings are always sampled.
    pub align_tail: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 2_000_000,
            n_seq: 100,
            n_warmup: 50,
            stride: 10,
            align_tail: true,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.n_seq == 0 {
            return Err(Error::Config("stride and sequence length must be positive".into()));
        }
        if self.n_warmup >= self.n_seq {
            return Err(Error::Config(format!(
                "warm-up {} must be shorter than the sequence {}",
                self.n_warmup, self.n_seq
            )));
        }
        if self.capacity < self.n_seq {
            return Err(Error::Config("capacity must hold at least one sequence".into()));
        }
        Ok(())
    }

    /// Start offsets and lengths of the slices cut from an episode of
    /// length `len`. Full windows step by the stride; an episode shorter than
    /// one window but longer than the warm-up yields a single padded slice.
    pub fn slice_starts(&self, len: usize) -> Vec<(usize, usize)> {
        if len >= self.n_seq {
            let last = len - self.n_seq;
            let mut starts: Vec<(usize, usize)> =
                (0..=last).step_by(self.stride).map(|s| (s, self.n_seq)).collect();
            if self.align_tail && last % self.stride != 0 {
                starts.push((last, self.n_seq));
            }
            starts
        } else if len > self.n_warmup {
            vec![(0, len)]
        } else {
            Vec::new()
        }
    }
}

/// A window of `n_seq` steps into a stored episode. Steps past `len` are
/// padding: they repeat the last real transition and are masked out.
#[derive(Debug, Clone)]
pub struct SequenceSlice {
    pub episode: Arc<Episode>,
    pub start: usize,
    pub len: usize,
    pub n_seq: usize,
    pub n_warmup: usize,
}

impl SequenceSlice {
    /// Transition at slice position `i` (padding repeats the last one).
    pub fn transition(&self, i: usize) -> &Transition {
        &self.episode.transitions[self.start + i.min(self.len - 1)]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.episode.transitions[self.start..self.start + self.len]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        i < self.len
    }

    /// `false` on the first `n_warmup` steps.
    pub fn warm_up_mask(&self) -> Vec<bool> {
        (0..self.n_seq).map(|i| i >= self.n_warmup).collect()
    }

    pub fn validity_mask(&self) -> Vec<bool> {
        (0..self.n_seq).map(|i| self.is_valid(i)).collect()
    }

    /// Steps that contribute actor loss: past warm-up and not padding.
    pub fn loss_mask(&self) -> Vec<bool> {
        (0..self.n_seq).map(|i| i >= self.n_warmup && self.is_valid(i)).collect()
    }

    pub fn action_history(&self, i: usize, h: usize) -> Vec<f64> {
        let act_dim = self.transition(0).a.len();
        self.episode.action_history(self.start + i.min(self.len - 1), h, act_dim)
    }
}

/// Time-major tensors for a batch of slices: index `[t]` then row `b`.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub next_obs: Vec<Array2<f64>>,
    /// Action history preceding `obs[t]`; empty columns when not requested.
    pub history: Vec<Array2<f64>>,
    /// Action history preceding `next_obs[t]`, i.e. ending with `actions[t]`.
    pub next_history: Vec<Array2<f64>>,
    pub rewards: Array2<f64>,
    pub dones: Array2<f64>,
    pub valid: Array2<bool>,
    pub loss_mask: Array2<bool>,
    pub from_guide: Array2<bool>,
}

impl SequenceBatch {
    pub fn from_slices(slices: &[SequenceSlice], history_len: usize) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Contract("cannot batch zero slices".into()))?;
        let (steps, batch) = (first.n_seq, slices.len());
        if slices.iter().any(|s| s.n_seq != steps) {
            return Err(Error::Contract("slices in a batch must share a length".into()));
        }
        let obs_dim = first.transition(0).s.len();
        let act_dim = first.transition(0).a.len();
        let hist_dim = history_len * act_dim;

        let mut out = Self {
            obs: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            next_obs: Vec::with_capacity(steps),
            history: Vec::with_capacity(steps),
            next_history: Vec::with_capacity(steps),
            rewards: Array2::zeros((steps, batch)),
            dones: Array2::zeros((steps, batch)),
            valid: Array2::from_elem((steps, batch), false),
            loss_mask: Array2::from_elem((steps, batch), false),
            from_guide: Array2::from_elem((steps, batch), false),
        };
        for t in 0..steps {
            let mut o = Array2::zeros((batch, obs_dim));
            let mut a = Array2::zeros((batch, act_dim));
            let mut o2 = Array2::zeros((batch, obs_dim));
            let mut h = Array2::zeros((batch, hist_dim));
            let mut h2 = Array2::zeros((batch, hist_dim));
            for (b, slice) in slices.iter().enumerate() {
                let tr = slice.transition(t);
                o.row_mut(b).assign(&ndarray::aview1(&tr.s));
                a.row_mut(b).assign(&ndarray::aview1(&tr.a));
                o2.row_mut(b).assign(&ndarray::aview1(&tr.s_next));
                if history_len > 0 {
                    let pos = slice.start + t.min(slice.len - 1);
                    let full = slice.episode.action_history(pos + 1, history_len + 1, act_dim);
                    h.row_mut(b).assign(&ndarray::aview1(&full[..hist_dim]));
                    h2.row_mut(b).assign(&ndarray::aview1(&full[act_dim..]));
                }
                out.rewards[[t, b]] = tr.r;
                out.dones[[t, b]] = if tr.d { 1.0 } else { 0.0 };
                out.valid[[t, b]] = slice.is_valid(t);
                out.loss_mask[[t, b]] = slice.is_valid(t) && t >= slice.n_warmup;
                out.from_guide[[t, b]] = tr.source == Source::Guide;
            }
            out.obs.push(o);
            out.actions.push(a);
            out.next_obs.push(o2);
            out.history.push(h);
            out.next_history.push(h2);
        }
        Ok(out)
    }

    pub fn steps(&self) -> usize {
        self.obs.len()
    }

    pub fn batch(&self) -> usize {
        self.rewards.ncols()
    }
}

#[derive(Debug, Clone)]
struct StoredEpisode {
    episode: Arc<Episode>,
    slices: Vec<(usize, usize)>,
}

/// Episode store with FIFO eviction by transition count.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    episodes: VecDeque<StoredEpisode>,
    transitions: usize,
    slices: usize,
    /// Cumulative slice counts per stored episode, for uniform sampling.
    cumulative: Vec<usize>,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            episodes: VecDeque::new(),
            transitions: 0,
            slices: 0,
            cumulative: Vec::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len_transitions(&self) -> usize {
        self.transitions
    }

    pub fn num_slices(&self) -> usize {
        self.slices
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().map(|e| e.episode.as_ref())
    }

    /// Stores an episode and returns the number of slices it contributed.
    pub fn push_episode(&mut self, transitions: Vec<Transition>) -> Result<usize> {
        if transitions.is_empty() {
            return Err(Error::Contract("episode is empty".into()));
        }
        if transitions.len() > self.config.capacity {
            return Err(Error::Contract(format!(
                "episode of {} transitions exceeds capacity {}",
                transitions.len(),
                self.config.capacity
            )));
        }
        if transitions[..transitions.len() - 1].iter().any(|t| t.d || t.truncated) {
            return Err(Error::Contract("only the last transition may end an episode".into()));
        }
        let slices = self.config.slice_starts(transitions.len());
        let added = slices.len();
        self.transitions += transitions.len();
        self.slices += added;
        self.episodes.push_back(StoredEpisode {
            episode: Arc::new(Episode {
                id: self.next_id,
                transitions,
            }),
            slices,
        });
        self.next_id += 1;
        while self.transitions > self.config.capacity {
            let old = self.episodes.pop_front().expect("over capacity implies non-empty");
            self.transitions -= old.episode.len();
            self.slices -= old.slices.len();
        }
        self.reindex();
        Ok(added)
    }

    fn reindex(&mut self) {
        let mut acc = 0;
        self.cumulative = self
            .episodes
            .iter()
            .map(|e| {
                acc += e.slices.len();
                acc
            })
            .collect();
    }

    fn slice_at(&self, index: usize) -> SequenceSlice {
        let ep = self.cumulative.partition_point(|&c| c <= index);
        let before = if ep == 0 { 0 } else { self.cumulative[ep - 1] };
        let stored = &self.episodes[ep];
        let (start, len) = stored.slices[index - before];
        SequenceSlice {
            episode: Arc::clone(&stored.episode),
            start,
            len,
            n_seq: self.config.n_seq,
            n_warmup: self.config.n_warmup,
        }
    }

    /// Uniform sampling of slices with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<SequenceSlice>> {
        if batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if self.slices < batch_size {
            return Err(Error::NotReady(format!(
                "{} slices stored, {batch_size} requested",
                self.slices
            )));
        }
        Ok((0..batch_size).map(|_| self.slice_at(rng.gen_range(0..self.slices))).collect())
    }

    /// Uniform sampling of single transitions with replacement, returned as
    /// `(episode, index)` pairs so callers can rebuild action histories.
    pub fn sample_transitions<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(Arc<Episode>, usize)>> {
        if self.transitions == 0 {
            return Err(Error::NotReady("buffer is empty".into()));
        }
        Ok((0..n)
            .map(|_| {
                let mut k = rng.gen_range(0..self.transitions);
                let stored = self
                    .episodes
                    .iter()
                    .find(|e| {
                        if k < e.episode.len() {
                            true
                        } else {
                            k -= e.episode.len();
                            false
                        }
                    })
                    .expect("index within total");
                (Arc::clone(&stored.episode), k)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn episode(len: usize, crash: bool) -> Vec<Transition> {
        (0..len)
            .map(|t| Transition {
                s: vec![t as f64, 0.0],
                a: vec![t as f64; 2],
                r: 1.0,
                d: crash && t + 1 == len,
                truncated: !crash && t + 1 == len,
                s_next: vec![(t + 1) as f64, 0.0],
                source: if t < 10 { Source::Guide } else { Source::Policy },
            })
            .collect()
    }

    #[test]
    fn slicing_examples() {
        let cfg = ReplayConfig::default();
        assert_eq!(cfg.slice_starts(100).len(), 1);
        assert_eq!(ReplayConfig { stride: 50, ..cfg.clone() }.slice_starts(500).len(), 9);
        assert_eq!(cfg.slice_starts(40).len(), 0);
        assert_eq!(cfg.slice_starts(50).len(), 0);
        assert_eq!(cfg.slice_starts(51), vec![(0, 51)]);
    }

    #[test]
    fn tail_alignment_covers_the_last_transition() {
        let cfg = ReplayConfig::default();
        let starts = cfg.slice_starts(135);
        assert_eq!(starts.last(), Some(&(35, 100)));
        let plain = ReplayConfig { align_tail: false, ..cfg }.slice_starts(135);
        assert_eq!(plain.last(), Some(&(30, 100)));
    }

    #[test]
    fn masks_for_full_and_padded_slices() {
        let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        buf.push_episode(episode(70, true)).unwrap();
        let s = &buf.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()[0];
        assert_eq!(s.len, 70);
        let wm = s.warm_up_mask();
        assert!(wm[..50].iter().all(|m| !m) && wm[50..].iter().all(|&m| m));
        let lm = s.loss_mask();
        assert_eq!(lm.iter().filter(|&&m| m).count(), 20);
        assert_eq!(s.transition(99), s.transition(69));
    }

    #[test]
    fn fifo_eviction_respects_capacity() {
        let mut buf = ReplayBuffer::new(ReplayConfig {
            capacity: 250,
            ..ReplayConfig::default()
        })
        .unwrap();
        for _ in 0..5 {
            buf.push_episode(episode(100, false)).unwrap();
            assert!(buf.len_transitions() <= 250);
        }
        assert_eq!(buf.num_episodes(), 2);
        assert_eq!(buf.episodes().next().unwrap().id, 3);
    }

    #[test]
    fn not_ready_until_enough_slices() {
        let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::NotReady(_))));
        buf.push_episode(episode(100, false)).unwrap();
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::NotReady(_))));
        buf.push_episode(episode(60, true)).unwrap();
        assert_eq!(buf.sample(2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn rejects_empty_and_mid_episode_terminals() {
        let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        assert!(buf.push_episode(Vec::new()).is_err());
        let mut bad = episode(80, true);
        bad[10].d = true;
        assert!(buf.push_episode(bad).is_err());
    }

    #[test]
    fn action_history_zero_pads_and_ends_with_newest() {
        let ep = Episode {
            id: 0,
            transitions: episode(5, false),
        };
        assert_eq!(ep.action_history(0, 3, 2), vec![0.0; 6]);
        assert_eq!(ep.action_history(2, 3, 2), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(ep.action_history(4, 3, 2), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn batch_histories_shift_by_one_step() {
        let mut buf = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        buf.push_episode(episode(130, false)).unwrap();
        let slices = buf.sample(3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let batch = SequenceBatch::from_slices(&slices, 4).unwrap();
        for t in 0..batch.steps() - 1 {
            assert_eq!(batch.next_history[t], batch.history[t + 1]);
            assert_eq!(batch.next_obs[t], batch.obs[t + 1]);
        }
        for (b, s) in slices.iter().enumerate() {
            let t = 7;
            let expect = s.action_history(t, 4);
            assert_eq!(batch.history[t].row(b).to_vec(), expect);
        }
    }
}
