use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::adam::{clip_grad_norm, Adam};
use super::config::Td3Config;
use crate::error::{Error, Result};
use crate::networks::{soft_update, Activation, Dense, MlpNetwork, ParamGrads, SnnPolicy, SpikeMode};
use crate::replay::SequenceBatch;

pub const ACTION_LIMIT: f64 = 2.0;

/// Flat batch of critic samples; `x` is the privileged input.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub x: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub d: Array1<f64>,
    pub x_next: Array2<f64>,
    /// Target-policy action at `x_next`, smoothing noise included.
    pub a_next: Array2<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// `y = r + γ (1 − d) q_next`.
pub fn td_targets(r: &Array1<f64>, d: &Array1<f64>, q_next: &Array1<f64>, gamma: f64) -> Array1<f64> {
    let mut y = r.clone();
    ndarray::Zip::from(&mut y)
        .and(d)
        .and(q_next)
        .for_each(|y, &d, &q| *y += gamma * (1.0 - d) * q);
    y
}

/// Adds clipped Gaussian smoothing noise and clamps to the action range.
pub fn smooth_target_actions<R: Rng + ?Sized>(a: &mut Array2<f64>, td3: &Td3Config, rng: &mut R) {
    let noise = Normal::new(0.0, td3.policy_noise.max(0.0)).expect("finite std");
    a.mapv_inplace(|v| {
        let eps = if td3.policy_noise > 0.0 { noise.sample(rng) } else { 0.0 };
        (v + eps.clamp(-td3.noise_clip, td3.noise_clip)).clamp(-ACTION_LIMIT, ACTION_LIMIT)
    });
}

fn hstack(parts: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    concatenate(Axis(1), parts).expect("row counts agree")
}

/// Twin Q networks with targets and optimizers.
#[derive(Debug, Clone)]
pub struct TwinCritic {
    pub q: [MlpNetwork; 2],
    pub target: [MlpNetwork; 2],
    opt: [Adam; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub mean_q: f64,
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, act_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![input_dim + act_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = MlpNetwork::new(&sizes, Activation::Relu, rng)?;
        let q2 = MlpNetwork::new(&sizes, Activation::Relu, rng)?;
        let opt = [Adam::new(&q1.layers, lr), Adam::new(&q2.layers, lr)];
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            q: [q1, q2],
            opt,
        })
    }

    pub fn q1(&self, x: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.q[0].forward_batch(hstack(&[x.view(), a.view()]).view())?.column(0).to_owned())
    }

    /// Clipped double-Q targets.
    pub fn targets(&self, batch: &TransitionBatch, gamma: f64) -> Result<Array1<f64>> {
        let input = hstack(&[batch.x_next.view(), batch.a_next.view()]);
        let q1 = self.target[0].forward_batch(input.view())?;
        let q2 = self.target[1].forward_batch(input.view())?;
        let q_next = Array1::from_iter(q1.column(0).iter().zip(q2.column(0)).map(|(a, b)| a.min(*b)));
        Ok(td_targets(&batch.r, &batch.d, &q_next, gamma))
    }

    /// One regression step of both critics toward the shared target.
    pub fn update(&mut self, batch: &TransitionBatch, td3: &Td3Config) -> Result<CriticStats> {
        if batch.is_empty() {
            return Err(Error::Contract("critic batch is empty".into()));
        }
        let y = self.targets(batch, td3.gamma)?;
        let input = hstack(&[batch.x.view(), batch.a.view()]);
        let m = batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for j in 0..2 {
            let cache = self.q[j].forward_cached(input.view())?;
            let q = cache.activations.last().expect("output layer").column(0).to_owned();
            let err = &q - &y;
            loss += err.mapv(|e| e * e).sum() / m;
            if j == 0 {
                mean_q = q.sum() / m;
            }
            let dq = (err * (2.0 / m)).insert_axis(Axis(1));
            let (mut grads, _) = self.q[j].backward(&cache, dq.view(), None)?;
            clip_grad_norm(&mut grads, td3.grad_clip);
            self.opt[j].step(&mut self.q[j].layers, &grads);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("critic loss {loss}")));
        }
        Ok(CriticStats { loss: loss / 2.0, mean_q })
    }

    pub fn soft_update_targets(&mut self, tau: f64) {
        for j in 0..2 {
            soft_update(&mut self.target[j].layers, &self.q[j].layers, tau);
        }
    }

    /// `∂Q1/∂a` at each row, with `Q1` values.
    pub fn action_gradient(&self, x: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let input = hstack(&[x.view(), a.view()]);
        let cache = self.q[0].forward_cached(input.view())?;
        let q = cache.activations.last().expect("output layer").column(0).to_owned();
        let ones = Array2::ones((input.nrows(), 1));
        let (_, dx) = self.q[0].backward(&cache, ones.view(), None)?;
        Ok((q, dx.slice(s![.., x.ncols()..]).to_owned()))
    }
}

/// Valid steps of a sequence batch flattened into critic samples. The
/// target actions come from `target_actor` unrolled over `next_obs` from
/// zero state.
pub fn sequence_transitions<R: Rng + ?Sized>(
    batch: &SequenceBatch,
    target_actor: &SnnPolicy,
    td3: &Td3Config,
    rng: &mut R,
) -> Result<TransitionBatch> {
    let (next_actions, _) = target_actor.forward_batch(&batch.next_obs, None, SpikeMode::Spiking)?;
    let mut rows = Vec::new();
    for t in 0..batch.steps() {
        for b in 0..batch.batch() {
            if batch.valid[[t, b]] {
                rows.push((t, b));
            }
        }
    }
    let gather = |src: &[Array2<f64>], extra: Option<&[Array2<f64>]>| -> Array2<f64> {
        let width = src[0].ncols() + extra.map_or(0, |e| e[0].ncols());
        let mut out = Array2::zeros((rows.len(), width));
        for (i, &(t, b)) in rows.iter().enumerate() {
            let w0 = src[t].ncols();
            out.slice_mut(s![i, ..w0]).assign(&src[t].row(b));
            if let Some(e) = extra {
                out.slice_mut(s![i, w0..]).assign(&e[t].row(b));
            }
        }
        out
    };
    let mut a_next = gather(&next_actions, None);
    smooth_target_actions(&mut a_next, td3, rng);
    Ok(TransitionBatch {
        x: gather(&batch.obs, Some(&batch.history)),
        a: gather(&batch.actions, None),
        r: rows.iter().map(|&(t, b)| batch.rewards[[t, b]]).collect(),
        d: rows.iter().map(|&(t, b)| batch.dones[[t, b]]).collect(),
        x_next: gather(&batch.next_obs, Some(&batch.next_history)),
        a_next,
    })
}

/// Zeroes `∂L/∂a` components that would push an out-of-range action
/// further out; the critic was only trained inside the range.
fn gate_out_of_range(a: f64, g: f64) -> f64 {
    if (a > ACTION_LIMIT && g < 0.0) || (a < -ACTION_LIMIT && g > 0.0) {
        0.0
    } else {
        g
    }
}

/// Weights of the actor objective
/// `−(α / mean|Q|)·Q + λ‖a − a_buf‖²` over loss-masked steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorObjective {
    /// `None` drops the Q term (pure behaviour cloning).
    pub alpha: Option<f64>,
    pub lambda_bc: f64,
    pub bc_guide_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorGradients {
    pub grads: ParamGrads,
    pub loss: f64,
    pub masked_in: usize,
}

/// Loss and BPTT gradients of the spiking actor on a sequence batch.
pub fn actor_gradients(
    actor: &SnnPolicy,
    critic: Option<&TwinCritic>,
    batch: &SequenceBatch,
    objective: &ActorObjective,
    mode: SpikeMode,
) -> Result<ActorGradients> {
    let (actions, tape) = actor.forward_batch(&batch.obs, None, mode)?;
    let act_dim = actor.act_dim();
    let mut rows = Vec::new();
    for t in 0..batch.steps() {
        for b in 0..batch.batch() {
            if batch.loss_mask[[t, b]] {
                rows.push((t, b));
            }
        }
    }
    let mut output_grads: Vec<Array2<f64>> = actions.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
    if rows.is_empty() {
        log::warn!("actor batch has no loss-masked steps; skipping update");
        return Ok(ActorGradients {
            grads: ParamGrads::zeros_like(&actor.layers),
            loss: 0.0,
            masked_in: 0,
        });
    }
    let m = rows.len() as f64;
    let mut loss = 0.0;

    if let (Some(alpha), Some(critic)) = (objective.alpha, critic) {
        let obs_w = batch.obs[0].ncols();
        let hist_w = batch.history[0].ncols();
        let mut x = Array2::zeros((rows.len(), obs_w + hist_w));
        let mut a = Array2::zeros((rows.len(), act_dim));
        for (i, &(t, b)) in rows.iter().enumerate() {
            x.slice_mut(s![i, ..obs_w]).assign(&batch.obs[t].row(b));
            x.slice_mut(s![i, obs_w..]).assign(&batch.history[t].row(b));
            a.row_mut(i)
                .assign(&actions[t].row(b).mapv(|v| v.clamp(-ACTION_LIMIT, ACTION_LIMIT)));
        }
        let (q, dq_da) = critic.action_gradient(x.view(), a.view())?;
        let scale = q.mapv(f64::abs).sum() / m;
        let coef = alpha / scale.max(1e-6);
        loss -= coef * q.sum() / m;
        for (i, &(t, b)) in rows.iter().enumerate() {
            for j in 0..act_dim {
                let g = -coef * dq_da[[i, j]] / m;
                output_grads[t][[b, j]] += gate_out_of_range(actions[t][[b, j]], g);
            }
        }
    }
    if objective.lambda_bc > 0.0 {
        let mut bc_rows = 0usize;
        let mut bc = 0.0;
        for &(t, b) in &rows {
            if objective.bc_guide_only && !batch.from_guide[[t, b]] {
                continue;
            }
            bc_rows += 1;
            for j in 0..act_dim {
                let diff = actions[t][[b, j]] - batch.actions[t][[b, j]];
                bc += diff * diff;
                output_grads[t][[b, j]] += 2.0 * objective.lambda_bc * diff / m;
            }
        }
        if bc_rows > 0 {
            loss += objective.lambda_bc * bc / m;
        }
    }
    let grads = actor.backward(&tape, &output_grads, batch.loss_mask.view(), actor.slope)?;
    Ok(ActorGradients {
        grads,
        loss,
        masked_in: rows.len(),
    })
}

/// Spiking actor with its target copy and optimizer.
#[derive(Debug, Clone)]
pub struct ActorLearner {
    pub actor: SnnPolicy,
    pub target: SnnPolicy,
    opt: Adam,
}

impl ActorLearner {
    pub fn new(actor: SnnPolicy, lr: f64) -> Self {
        let opt = Adam::new(&actor.layers, lr);
        Self {
            target: actor.clone(),
            actor,
            opt,
        }
    }

    pub fn set_slope(&mut self, k: f64) {
        self.actor.slope = k;
        self.target.slope = k;
    }

    pub fn update(
        &mut self,
        critic: Option<&TwinCritic>,
        batch: &SequenceBatch,
        objective: &ActorObjective,
        grad_clip: Option<f64>,
    ) -> Result<f64> {
        let mut g = actor_gradients(&self.actor, critic, batch, objective, SpikeMode::Spiking)?;
        if g.masked_in == 0 {
            return Ok(0.0);
        }
        if !g.loss.is_finite() || !g.grads.is_finite() {
            return Err(Error::Diverged(format!("actor loss {}", g.loss)));
        }
        clip_grad_norm(&mut g.grads, grad_clip);
        self.opt.step(&mut self.actor.layers, &g.grads);
        Ok(g.loss)
    }

    pub fn soft_update_target(&mut self, tau: f64) {
        soft_update(&mut self.target.layers, &self.actor.layers, tau);
    }
}

/// Dense deterministic actor trained with plain TD3 (the guide).
#[derive(Debug, Clone)]
pub struct DenseActorLearner {
    pub actor: MlpNetwork,
    pub target: MlpNetwork,
    opt: Adam,
}

impl DenseActorLearner {
    pub fn new(actor: MlpNetwork, lr: f64) -> Self {
        let opt = Adam::new(&actor.layers, lr);
        Self {
            target: actor.clone(),
            actor,
            opt,
        }
    }

    /// Ascends `mean Q1(x, π(x))`.
    pub fn update(&mut self, critic: &TwinCritic, x: ArrayView2<'_, f64>, grad_clip: Option<f64>) -> Result<f64> {
        let cache = self.actor.forward_cached(x)?;
        let a = cache.activations.last().expect("output layer").clone();
        let clipped = a.mapv(|v| v.clamp(-ACTION_LIMIT, ACTION_LIMIT));
        let (q, dq_da) = critic.action_gradient(x, clipped.view())?;
        let m = x.nrows() as f64;
        let mut da = dq_da.mapv(|g| -g / m);
        ndarray::Zip::from(&mut da).and(&a).for_each(|g, &v| *g = gate_out_of_range(v, *g));
        let (mut grads, _) = self.actor.backward(&cache, da.view(), None)?;
        let loss = -q.sum() / m;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged(format!("guide actor loss {loss}")));
        }
        clip_grad_norm(&mut grads, grad_clip);
        self.opt.step(&mut self.actor.layers, &grads);
        Ok(loss)
    }

    pub fn soft_update_target(&mut self, tau: f64) {
        soft_update(&mut self.target.layers, &self.actor.layers, tau);
    }
}

/// Sets the output layer to a near-constant `bias` command.
pub fn bias_output_layer(layers: &mut [Dense], bias: f64, weight_scale: f64) {
    if let Some(out) = layers.last_mut() {
        out.weights.mapv_inplace(|w| w * weight_scale);
        out.bias.fill(bias);
    }
}
