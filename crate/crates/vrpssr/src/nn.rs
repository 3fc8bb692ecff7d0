//! The dueling Q-network, written out by hand: two stride-2 convolutions over
//! the three feature planes, the remaining-time scalar concatenated after
//! flattening, a shared dense layer, and value/advantage heads combined as
//! Q = V + A - mean(A). Forward, analytic backward, and RMSprop live here.
//!
//! Everything is generic over the float type: f32 for training, f64 for
//! finite-difference gradient checks.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const INPUT_PLANES: usize = 3;
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub dense_units: usize,
    pub head_units: usize,
}

fn conv_out(n: usize) -> usize {
    (n + 2 * PADDING - KERNEL) / STRIDE + 1
}

impl NetConfig {
    pub fn for_grid(height: u32, width: u32) -> Self {
        NetConfig {
            input_h: height as usize,
            input_w: width as usize,
            conv1_filters: 16,
            conv2_filters: 32,
            dense_units: 256,
            head_units: 128,
        }
    }

    pub fn h1(&self) -> usize {
        conv_out(self.input_h)
    }
    pub fn w1(&self) -> usize {
        conv_out(self.input_w)
    }
    pub fn h2(&self) -> usize {
        conv_out(self.h1())
    }
    pub fn w2(&self) -> usize {
        conv_out(self.w1())
    }
    /// Flattened conv output plus the time scalar.
    pub fn dense_in(&self) -> usize {
        self.conv2_filters * self.h2() * self.w2() + 1
    }
    pub fn input_len(&self) -> usize {
        INPUT_PLANES * self.input_h * self.input_w + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_h + 2 * PADDING < KERNEL || self.h2() == 0 || self.w2() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} too small for two stride-{STRIDE} convolutions",
                self.input_w, self.input_h
            )));
        }
        Ok(())
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub conv1_w: (usize, usize),
    pub conv1_b: (usize, usize),
    pub conv2_w: (usize, usize),
    pub conv2_b: (usize, usize),
    pub dense_w: (usize, usize),
    pub dense_b: (usize, usize),
    pub val1_w: (usize, usize),
    pub val1_b: (usize, usize),
    pub val2_w: (usize, usize),
    pub val2_b: (usize, usize),
    pub adv1_w: (usize, usize),
    pub adv1_b: (usize, usize),
    pub adv2_w: (usize, usize),
    pub adv2_b: (usize, usize),
    pub total: usize,
}

impl Layout {
    pub fn of(cfg: &NetConfig) -> Layout {
        let k2 = KERNEL * KERNEL;
        let mut at = 0usize;
        let mut block = |len: usize| {
            let r = (at, at + len);
            at += len;
            r
        };
        let conv1_w = block(cfg.conv1_filters * INPUT_PLANES * k2);
        let conv1_b = block(cfg.conv1_filters);
        let conv2_w = block(cfg.conv2_filters * cfg.conv1_filters * k2);
        let conv2_b = block(cfg.conv2_filters);
        let dense_w = block(cfg.dense_units * cfg.dense_in());
        let dense_b = block(cfg.dense_units);
        let val1_w = block(cfg.head_units * cfg.dense_units);
        let val1_b = block(cfg.head_units);
        let val2_w = block(cfg.head_units);
        let val2_b = block(1);
        let adv1_w = block(cfg.head_units * cfg.dense_units);
        let adv1_b = block(cfg.head_units);
        let adv2_w = block(NUM_ACTIONS * cfg.head_units);
        let adv2_b = block(NUM_ACTIONS);
        Layout {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense_w,
            dense_b,
            val1_w,
            val1_b,
            val2_w,
            val2_b,
            adv1_w,
            adv1_b,
            adv2_w,
            adv2_b,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams<F> {
    pub cfg: NetConfig,
    pub data: Vec<F>,
}

/// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases
/// zero. Deterministic in the seed; draws happen in layout order as f64 so
/// f32 and f64 nets from one seed agree up to rounding.
pub fn init_params<F: Float>(cfg: NetConfig, seed: u64) -> Result<QNetworkParams<F>> {
    cfg.validate()?;
    let layout = Layout::of(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![F::zero(); layout.total];
    let k2 = KERNEL * KERNEL;
    let mut fill = |range: (usize, usize), fan_in: usize, data: &mut Vec<F>| {
        let limit = 1.0 / (fan_in as f64).sqrt();
        for slot in &mut data[range.0..range.1] {
            let u: f64 = rng.random();
            *slot = F::from((2.0 * u - 1.0) * limit).unwrap();
        }
    };
    fill(layout.conv1_w, INPUT_PLANES * k2, &mut data);
    fill(layout.conv2_w, cfg.conv1_filters * k2, &mut data);
    fill(layout.dense_w, cfg.dense_in(), &mut data);
    fill(layout.val1_w, cfg.dense_units, &mut data);
    fill(layout.val2_w, cfg.head_units, &mut data);
    fill(layout.adv1_w, cfg.dense_units, &mut data);
    fill(layout.adv2_w, cfg.head_units, &mut data);
    Ok(QNetworkParams { cfg, data })
}

impl<F: Float> QNetworkParams<F> {
    pub fn layout(&self) -> Layout {
        Layout::of(&self.cfg)
    }

    /// Deep copy for the target network.
    pub fn sync_target(&self) -> QNetworkParams<F> {
        self.clone()
    }

    pub fn cast<G: Float>(&self) -> QNetworkParams<G> {
        QNetworkParams {
            cfg: self.cfg,
            data: self
                .data
                .iter()
                .map(|v| G::from(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Per-sample activations kept for the backward pass.
struct Cache<F> {
    a1: Vec<F>, // post-relu conv1, f1*h1*w1
    a2: Vec<F>, // post-relu conv2, f2*h2*w2
    dense_in: Vec<F>,
    a3: Vec<F>, // post-relu dense
    a4v: Vec<F>,
    a4a: Vec<F>,
    q: Vec<F>,
}

fn conv_forward<F: Float>(
    input: &[F],
    in_planes: usize,
    in_h: usize,
    in_w: usize,
    weights: &[F],
    biases: &[F],
    out_planes: usize,
) -> Vec<F> {
    let out_h = conv_out(in_h);
    let out_w = conv_out(in_w);
    let mut out = vec![F::zero(); out_planes * out_h * out_w];
    for f in 0..out_planes {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut sum = biases[f];
                for c in 0..in_planes {
                    let wbase = ((f * in_planes) + c) * KERNEL * KERNEL;
                    let ibase = c * in_h * in_w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            let w = weights[wbase + ky * KERNEL + kx];
                            let x = input[ibase + iy as usize * in_w + ix as usize];
                            sum = sum + w * x;
                        }
                    }
                }
                out[(f * out_h + oy) * out_w + ox] = sum;
            }
        }
    }
    out
}

/// Accumulates conv gradients; returns the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Float>(
    input: &[F],
    in_planes: usize,
    in_h: usize,
    in_w: usize,
    weights: &[F],
    out_planes: usize,
    dout: &[F], // gradient wrt pre-activation conv output
    dweights: &mut [F],
    dbiases: &mut [F],
) -> Vec<F> {
    let out_h = conv_out(in_h);
    let out_w = conv_out(in_w);
    let mut dinput = vec![F::zero(); in_planes * in_h * in_w];
    for f in 0..out_planes {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let g = dout[(f * out_h + oy) * out_w + ox];
                if g == F::zero() {
                    continue;
                }
                dbiases[f] = dbiases[f] + g;
                for c in 0..in_planes {
                    let wbase = ((f * in_planes) + c) * KERNEL * KERNEL;
                    let ibase = c * in_h * in_w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            let ii = ibase + iy as usize * in_w + ix as usize;
                            let wi = wbase + ky * KERNEL + kx;
                            dweights[wi] = dweights[wi] + g * input[ii];
                            dinput[ii] = dinput[ii] + g * weights[wi];
                        }
                    }
                }
            }
        }
    }
    dinput
}

fn relu<F: Float>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

fn dense_forward<F: Float>(input: &[F], weights: &[F], biases: &[F], out_len: usize) -> Vec<F> {
    let in_len = input.len();
    let mut out = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let row = &weights[o * in_len..(o + 1) * in_len];
        let mut sum = biases[o];
        for (w, x) in row.iter().zip(input) {
            sum = sum + *w * *x;
        }
        out.push(sum);
    }
    out
}

fn dense_backward<F: Float>(
    input: &[F],
    weights: &[F],
    dout: &[F],
    dweights: &mut [F],
    dbiases: &mut [F],
) -> Vec<F> {
    let in_len = input.len();
    let mut dinput = vec![F::zero(); in_len];
    for (o, g) in dout.iter().enumerate() {
        if *g == F::zero() {
            continue;
        }
        dbiases[o] = dbiases[o] + *g;
        let row = &weights[o * in_len..(o + 1) * in_len];
        let drow = &mut dweights[o * in_len..(o + 1) * in_len];
        for i in 0..in_len {
            drow[i] = drow[i] + *g * input[i];
            dinput[i] = dinput[i] + *g * row[i];
        }
    }
    dinput
}

fn forward_cached<F: Float>(params: &QNetworkParams<F>, input: &[F]) -> Cache<F> {
    let cfg = &params.cfg;
    let l = params.layout();
    let d = &params.data;
    let (h, w) = (cfg.input_h, cfg.input_w);

    let planes = &input[..INPUT_PLANES * h * w];
    let time = input[INPUT_PLANES * h * w];

    let mut a1 = conv_forward(
        planes,
        INPUT_PLANES,
        h,
        w,
        &d[l.conv1_w.0..l.conv1_w.1],
        &d[l.conv1_b.0..l.conv1_b.1],
        cfg.conv1_filters,
    );
    relu(&mut a1);
    let mut a2 = conv_forward(
        &a1,
        cfg.conv1_filters,
        cfg.h1(),
        cfg.w1(),
        &d[l.conv2_w.0..l.conv2_w.1],
        &d[l.conv2_b.0..l.conv2_b.1],
        cfg.conv2_filters,
    );
    relu(&mut a2);

    let mut dense_in = a2.clone();
    dense_in.push(time);

    let mut a3 = dense_forward(
        &dense_in,
        &d[l.dense_w.0..l.dense_w.1],
        &d[l.dense_b.0..l.dense_b.1],
        cfg.dense_units,
    );
    relu(&mut a3);

    let mut a4v = dense_forward(
        &a3,
        &d[l.val1_w.0..l.val1_w.1],
        &d[l.val1_b.0..l.val1_b.1],
        cfg.head_units,
    );
    relu(&mut a4v);
    let v = dense_forward(&a4v, &d[l.val2_w.0..l.val2_w.1], &d[l.val2_b.0..l.val2_b.1], 1)[0];

    let mut a4a = dense_forward(
        &a3,
        &d[l.adv1_w.0..l.adv1_w.1],
        &d[l.adv1_b.0..l.adv1_b.1],
        cfg.head_units,
    );
    relu(&mut a4a);
    let adv = dense_forward(
        &a4a,
        &d[l.adv2_w.0..l.adv2_w.1],
        &d[l.adv2_b.0..l.adv2_b.1],
        NUM_ACTIONS,
    );

    let mean = adv.iter().fold(F::zero(), |acc, x| acc + *x)
        / F::from(NUM_ACTIONS).unwrap();
    let q = adv.iter().map(|a| v + *a - mean).collect();

    Cache {
        a1,
        a2,
        dense_in,
        a3,
        a4v,
        a4a,
        q,
    }
}

/// Q-vectors for a batch of flattened observations (`Observation::to_input`).
pub fn forward<F: Float>(params: &QNetworkParams<F>, inputs: &[Vec<F>]) -> Result<Vec<Vec<F>>> {
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let expect = params.cfg.input_len();
    for (i, input) in inputs.iter().enumerate() {
        if input.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "input {i} has length {}, expected {expect}",
                input.len()
            )));
        }
    }
    Ok(inputs
        .iter()
        .map(|input| forward_cached(params, input).q)
        .collect())
}

pub fn forward_single<F: Float>(params: &QNetworkParams<F>, input: &[F]) -> Vec<F> {
    forward_cached(params, input).q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Plain squared TD error (the default).
    SquaredError,
    /// Huber with the given threshold; optional, off by default.
    Huber(f64),
}

pub struct BackwardResult<F> {
    /// Gradient of the weighted mean loss, same layout as `params.data`.
    pub grads: Vec<F>,
    /// Per-sample TD errors (target - Q(s, a)), for priority updates.
    pub td_errors: Vec<F>,
}

fn relu_mask_mul<F: Float>(grad: &mut [F], post: &[F]) {
    for (g, a) in grad.iter_mut().zip(post) {
        if *a == F::zero() {
            *g = F::zero();
        }
    }
}

/// Gradients of the importance-weighted mean loss over the taken actions.
pub fn backward<F: Float>(
    params: &QNetworkParams<F>,
    inputs: &[Vec<F>],
    actions: &[usize],
    targets: &[F],
    weights: &[F],
    loss: LossKind,
) -> Result<BackwardResult<F>> {
    let batch = inputs.len();
    if batch == 0 || actions.len() != batch || targets.len() != batch || weights.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "batch lengths differ: {} inputs, {} actions, {} targets, {} weights",
            batch,
            actions.len(),
            targets.len(),
            weights.len()
        )));
    }
    let cfg = &params.cfg;
    let l = params.layout();
    let d = &params.data;
    let mut grads = vec![F::zero(); l.total];
    let mut td_errors = Vec::with_capacity(batch);
    let inv_batch = F::one() / F::from(batch).unwrap();

    for i in 0..batch {
        let cache = forward_cached(params, &inputs[i]);
        let a = actions[i];
        let delta = targets[i] - cache.q[a];
        td_errors.push(delta);

        // d(loss_i)/d(q_a); loss averaged over the batch.
        let dloss_dq = match loss {
            LossKind::SquaredError => -(F::one() + F::one()) * weights[i] * delta * inv_batch,
            LossKind::Huber(kappa) => {
                let k = F::from(kappa).unwrap();
                let clipped = if delta > k {
                    k
                } else if delta < -k {
                    -k
                } else {
                    delta
                };
                -weights[i] * clipped * inv_batch
            }
        };
        if dloss_dq == F::zero() {
            continue;
        }

        // Dueling combine: q[b] = v + adv[b] - mean(adv); only q[a] is hit.
        let dv = dloss_dq;
        let inv_a = F::one() / F::from(NUM_ACTIONS).unwrap();
        let mut dadv = vec![-dloss_dq * inv_a; NUM_ACTIONS];
        dadv[a] = dadv[a] + dloss_dq;

        // Advantage head.
        let (adv2_w_grad, rest) = grads[l.adv2_w.0..].split_at_mut(l.adv2_w.1 - l.adv2_w.0);
        let adv2_b_grad = &mut rest[..NUM_ACTIONS];
        let mut da4a = dense_backward(
            &cache.a4a,
            &d[l.adv2_w.0..l.adv2_w.1],
            &dadv,
            adv2_w_grad,
            adv2_b_grad,
        );
        relu_mask_mul(&mut da4a, &cache.a4a);
        let (adv1_w_grad, rest) = grads[l.adv1_w.0..].split_at_mut(l.adv1_w.1 - l.adv1_w.0);
        let adv1_b_grad = &mut rest[..cfg.head_units];
        let da3_adv = dense_backward(
            &cache.a3,
            &d[l.adv1_w.0..l.adv1_w.1],
            &da4a,
            adv1_w_grad,
            adv1_b_grad,
        );

        // Value head.
        let dv_vec = [dv];
        let (val2_w_grad, rest) = grads[l.val2_w.0..].split_at_mut(l.val2_w.1 - l.val2_w.0);
        let val2_b_grad = &mut rest[..1];
        let mut da4v = dense_backward(
            &cache.a4v,
            &d[l.val2_w.0..l.val2_w.1],
            &dv_vec,
            val2_w_grad,
            val2_b_grad,
        );
        relu_mask_mul(&mut da4v, &cache.a4v);
        let (val1_w_grad, rest) = grads[l.val1_w.0..].split_at_mut(l.val1_w.1 - l.val1_w.0);
        let val1_b_grad = &mut rest[..cfg.head_units];
        let da3_val = dense_backward(
            &cache.a3,
            &d[l.val1_w.0..l.val1_w.1],
            &da4v,
            val1_w_grad,
            val1_b_grad,
        );

        let mut da3: Vec<F> = da3_adv
            .iter()
            .zip(&da3_val)
            .map(|(a, b)| *a + *b)
            .collect();
        relu_mask_mul(&mut da3, &cache.a3);

        let (dense_w_grad, rest) = grads[l.dense_w.0..].split_at_mut(l.dense_w.1 - l.dense_w.0);
        let dense_b_grad = &mut rest[..cfg.dense_units];
        let ddense_in = dense_backward(
            &cache.dense_in,
            &d[l.dense_w.0..l.dense_w.1],
            &da3,
            dense_w_grad,
            dense_b_grad,
        );

        // Drop the time-scalar slot; the rest is the conv2 output gradient.
        let mut da2 = ddense_in[..ddense_in.len() - 1].to_vec();
        relu_mask_mul(&mut da2, &cache.a2);

        let (conv2_w_grad, rest) = grads[l.conv2_w.0..].split_at_mut(l.conv2_w.1 - l.conv2_w.0);
        let conv2_b_grad = &mut rest[..cfg.conv2_filters];
        let mut da1 = conv_backward(
            &cache.a1,
            cfg.conv1_filters,
            cfg.h1(),
            cfg.w1(),
            &d[l.conv2_w.0..l.conv2_w.1],
            cfg.conv2_filters,
            &da2,
            conv2_w_grad,
            conv2_b_grad,
        );
        relu_mask_mul(&mut da1, &cache.a1);

        let planes = &inputs[i][..INPUT_PLANES * cfg.input_h * cfg.input_w];
        let (conv1_w_grad, rest) = grads[l.conv1_w.0..].split_at_mut(l.conv1_w.1 - l.conv1_w.0);
        let conv1_b_grad = &mut rest[..cfg.conv1_filters];
        conv_backward(
            planes,
            INPUT_PLANES,
            cfg.input_h,
            cfg.input_w,
            &d[l.conv1_w.0..l.conv1_w.1],
            cfg.conv1_filters,
            &da1,
            conv1_w_grad,
            conv1_b_grad,
        );
    }

    Ok(BackwardResult { grads, td_errors })
}

/// Weighted mean loss value itself; the finite-difference oracle in the tests
/// differentiates this.
pub fn loss_value<F: Float>(
    params: &QNetworkParams<F>,
    inputs: &[Vec<F>],
    actions: &[usize],
    targets: &[F],
    weights: &[F],
    loss: LossKind,
) -> F {
    let batch = inputs.len();
    let mut total = F::zero();
    for i in 0..batch {
        let q = forward_single(params, &inputs[i]);
        let delta = targets[i] - q[actions[i]];
        let term = match loss {
            LossKind::SquaredError => delta * delta,
            LossKind::Huber(kappa) => {
                let k = F::from(kappa).unwrap();
                let half = F::from(0.5).unwrap();
                if delta.abs() <= k {
                    half * delta * delta
                } else {
                    k * (delta.abs() - half * k)
                }
            }
        };
        total = total + weights[i] * term;
    }
    total / F::from(batch).unwrap()
}

#[derive(Debug, Clone)]
pub struct RmsPropState<F> {
    /// Per-parameter squared-gradient accumulator.
    pub v: Vec<F>,
    pub decay: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<F: Float> RmsPropState<F> {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        RmsPropState {
            v: vec![F::zero(); num_params],
            decay: 0.99,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// v <- decay*v + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(v) + eps)
pub fn rmsprop_update<F: Float>(
    params: &mut QNetworkParams<F>,
    grads: &[F],
    state: &mut RmsPropState<F>,
) -> Result<()> {
    if grads.len() != params.data.len() || state.v.len() != params.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {} / grads {} / accumulator {}",
            params.data.len(),
            grads.len(),
            state.v.len()
        )));
    }
    let decay = F::from(state.decay).unwrap();
    let one_minus = F::one() - decay;
    let eps = F::from(state.epsilon).unwrap();
    let lr = F::from(state.learning_rate).unwrap();
    for ((theta, v), g) in params.data.iter_mut().zip(&mut state.v).zip(grads) {
        *v = decay * *v + one_minus * *g * *g;
        *theta = *theta - lr * *g / (v.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            input_h: 6,
            input_w: 6,
            conv1_filters: 2,
            conv2_filters: 3,
            dense_units: 8,
            head_units: 4,
        }
    }

    fn random_input(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = cfg.input_len();
        let mut v: Vec<f64> = (0..n - 1)
            .map(|_| if rng.random::<f64>() < 0.1 { 1.0 } else { 0.0 })
            .collect();
        v.push(rng.random::<f64>());
        v
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = tiny_cfg();
        let a: QNetworkParams<f64> = init_params(cfg, 3).unwrap();
        let b: QNetworkParams<f64> = init_params(cfg, 3).unwrap();
        let c: QNetworkParams<f64> = init_params(cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fresh_forward_is_finite() {
        let cfg = NetConfig::for_grid(32, 32);
        let params: QNetworkParams<f32> = init_params(cfg, 0).unwrap();
        let input = vec![0.0f32; cfg.input_len()];
        let q = forward_single(&params, &input);
        assert_eq!(q.len(), NUM_ACTIONS);
        assert!(q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dueling_constant_advantage_cancels() {
        let cfg = tiny_cfg();
        let mut params: QNetworkParams<f64> = init_params(cfg, 11).unwrap();
        let l = params.layout();
        // Zero the advantage output layer: A(s, .) == bias == c for all a.
        for i in l.adv2_w.0..l.adv2_w.1 {
            params.data[i] = 0.0;
        }
        let c = 3.7;
        for i in l.adv2_b.0..l.adv2_b.1 {
            params.data[i] = c;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = random_input(&cfg, &mut rng);
        let q = forward_single(&params, &input);
        // Constant advantages cancel: Q == V for every action.
        for a in 1..NUM_ACTIONS {
            assert!((q[a] - q[0]).abs() < 1e-12);
        }

        // Adding a constant k to all advantage biases leaves Q unchanged.
        let before = q.clone();
        for i in l.adv2_b.0..l.adv2_b.1 {
            params.data[i] = params.data[i] + 42.0;
        }
        let after = forward_single(&params, &input);
        for a in 0..NUM_ACTIONS {
            assert!((after[a] - before[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_q_equals_argmax_advantage() {
        let cfg = tiny_cfg();
        let params: QNetworkParams<f64> = init_params(cfg, 5).unwrap();
        // A value-head-free copy outputs A - mean(A), which orders actions
        // exactly like the advantages themselves.
        let mut adv_only = params.clone();
        let l = adv_only.layout();
        for i in l.val1_w.0..l.val2_b.1 {
            adv_only.data[i] = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        for _ in 0..100 {
            let input = random_input(&cfg, &mut rng);
            let q = forward_single(&params, &input);
            let adv_centered = forward_single(&adv_only, &input);
            assert_eq!(argmax(&q), argmax(&adv_centered));
        }
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let cfg = tiny_cfg();
        let params: QNetworkParams<f64> = init_params(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![random_input(&cfg, &mut rng), random_input(&cfg, &mut rng)];
        let res = backward(
            &params,
            &inputs,
            &[0, 3],
            &[1.0, -2.0],
            &[0.0, 0.0],
            LossKind::SquaredError,
        )
        .unwrap();
        assert!(res.grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn target_equal_to_q_gives_zero_gradient() {
        let cfg = tiny_cfg();
        let params: QNetworkParams<f64> = init_params(cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_input(&cfg, &mut rng);
        let q = forward_single(&params, &input);
        let res = backward(
            &params,
            &[input],
            &[2],
            &[q[2]],
            &[1.0],
            LossKind::SquaredError,
        )
        .unwrap();
        assert!(res.grads.iter().all(|g| *g == 0.0));
        assert_eq!(res.td_errors[0], 0.0);
    }

    fn gradient_check(cfg: NetConfig, seed: u64, loss: LossKind) {
        let mut params: QNetworkParams<f64> = init_params(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        // Jitter every parameter (biases included) off exact zero so no ReLU
        // sits precisely on its kink, where finite differences are undefined.
        for p in &mut params.data {
            *p += rng.random::<f64>() * 0.02 - 0.01;
        }
        let batch = 3;
        let inputs: Vec<Vec<f64>> = (0..batch).map(|_| random_input(&cfg, &mut rng)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..NUM_ACTIONS)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let weights: Vec<f64> = (0..batch).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect();

        let analytic = backward(&params, &inputs, &actions, &targets, &weights, loss)
            .unwrap()
            .grads;

        let h = 1e-5;
        let mut p = params.clone();
        let mut checked = 0usize;
        for i in 0..p.data.len() {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = loss_value(&p, &inputs, &actions, &targets, &weights, loss);
            p.data[i] = orig - h;
            let down = loss_value(&p, &inputs, &actions, &targets, &weights, loss);
            p.data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
            let rel = (numeric - analytic[i]).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs numeric {} (rel {rel})",
                analytic[i],
                numeric
            );
            checked += 1;
        }
        assert_eq!(checked, p.data.len());
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(tiny_cfg(), 17, LossKind::SquaredError);
    }

    #[test]
    fn huber_gradients_match_finite_differences() {
        gradient_check(tiny_cfg(), 23, LossKind::Huber(1.0));
    }

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let cfg = tiny_cfg();
        let mut params: QNetworkParams<f64> = init_params(cfg, 0).unwrap();
        let before = params.data.clone();
        let mut state = RmsPropState::new(params.data.len(), 0.001);
        let grads = vec![0.0; params.data.len()];
        rmsprop_update(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.data, before);
    }

    #[test]
    fn rmsprop_single_step_matches_hand_formula() {
        // One scalar parameter, g=1, v=0:
        //   v' = 0.99*0 + 0.01*1 = 0.01
        //   step = 0.001 * 1 / (sqrt(0.01) + 1e-8)
        let cfg = tiny_cfg();
        let mut params: QNetworkParams<f64> = init_params(cfg, 0).unwrap();
        let theta0 = params.data[0];
        let mut state = RmsPropState::new(params.data.len(), 0.001);
        let mut grads = vec![0.0; params.data.len()];
        grads[0] = 1.0;
        rmsprop_update(&mut params, &grads, &mut state).unwrap();
        let expected_step = 0.001 / (0.01f64.sqrt() + 1e-8);
        assert!((theta0 - params.data[0] - expected_step).abs() < 1e-15);
        assert!((state.v[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_constant_gradient_step_approaches_lr() {
        let cfg = tiny_cfg();
        let mut params: QNetworkParams<f64> = init_params(cfg, 0).unwrap();
        let mut state = RmsPropState::new(params.data.len(), 0.001);
        let mut grads = vec![0.0; params.data.len()];
        grads[0] = 0.5;
        let mut prev = params.data[0];
        let mut step = 0.0;
        for _ in 0..2000 {
            rmsprop_update(&mut params, &grads, &mut state).unwrap();
            step = prev - params.data[0];
            prev = params.data[0];
        }
        // v converges to g^2, so the step approaches lr * sign(g).
        assert!((step - 0.001).abs() < 1e-6, "step {step}");
    }

    #[test]
    fn sync_target_is_deep_and_idempotent() {
        let cfg = tiny_cfg();
        let mut online: QNetworkParams<f64> = init_params(cfg, 7).unwrap();
        let target = online.sync_target();
        assert_eq!(online, target);
        let again = online.sync_target();
        assert_eq!(target, again);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = random_input(&cfg, &mut rng);
        let before = forward_single(&target, &input);
        // Update online; target must not move.
        let mut state = RmsPropState::new(online.data.len(), 0.01);
        let grads = vec![1.0; online.data.len()];
        rmsprop_update(&mut online, &grads, &mut state).unwrap();
        let after = forward_single(&target, &input);
        assert_eq!(before, after);
        assert_ne!(forward_single(&online, &input), before);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let cfg = tiny_cfg();
        let params: QNetworkParams<f64> = init_params(cfg, 0).unwrap();
        let err = forward(&params, &[vec![0.0; 5]]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }
}
