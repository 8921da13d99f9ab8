use std::collections::VecDeque;

/// Fixed-length history of executed actions, zero-filled at episode start,
/// newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionHistory {
    steps: usize,
    act_dim: usize,
    buf: VecDeque<Vec<f64>>,
}

impl ActionHistory {
    pub fn new(steps: usize, act_dim: usize) -> Self {
        Self {
            steps,
            act_dim,
            buf: std::iter::repeat(vec![0.0; act_dim]).take(steps).collect(),
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.steps, self.act_dim);
    }

    pub fn push(&mut self, action: &[f64]) {
        if self.steps == 0 {
            return;
        }
        self.buf.pop_front();
        self.buf.push_back(action.to_vec());
    }

    pub fn flat(&self) -> Vec<f64> {
        self.buf.iter().flatten().copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.steps * self.act_dim
    }
}

/// Observation followed by the flattened action history.
pub fn privileged_input(obs: &[f64], history: &ActionHistory) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.len() + history.dim());
    x.extend_from_slice(obs);
    x.extend(history.buf.iter().flatten());
    x
}

pub fn privileged_dim(obs_dim: usize, history_len: usize, act_dim: usize) -> usize {
    obs_dim + history_len * act_dim
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_width_is_146() {
        assert_eq!(privileged_dim(18, 32, 4), 146);
        let h = ActionHistory::new(32, 4);
        assert_eq!(privileged_input(&[0.0; 18], &h).len(), 146);
    }

    #[test]
    fn zero_padded_newest_last() {
        let mut h = ActionHistory::new(3, 2);
        assert_eq!(h.flat(), vec![0.0; 6]);
        h.push(&[1.0, 1.5]);
        h.push(&[2.0, 2.5]);
        assert_eq!(h.flat(), vec![0.0, 0.0, 1.0, 1.5, 2.0, 2.5]);
        h.push(&[3.0, 3.5]);
        h.push(&[4.0, 4.5]);
        assert_eq!(h.flat(), vec![2.0, 2.5, 3.0, 3.5, 4.0, 4.5]);
        h.reset();
        assert_eq!(h.flat(), vec![0.0; 6]);
    }
}
