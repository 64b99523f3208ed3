//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer, each layer storing its
//! weight matrix (row-major, `out x in`) followed by its bias. The same layout
//! is used by [`Gradients`], the Adam moment tables and the snapshot format, so
//! optimizer and Polyak updates are plain element-wise loops.
//!
//! Batches are row-major `n x dim` slices.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            other => Err(Error::Parse(format!("unknown activation code {other}"))),
        }
    }
}

/// A multilayer perceptron: rectifier hidden layers and an identity or tanh head.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
    // Identity of the current parameter values; changes on every mutation so
    // that a cache from an older forward pass is rejected by `backward`.
    id: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes
            && self.hidden == other.hidden
            && self.output == other.output
            && self.params == other.params
    }
}

/// Values retained from one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    net_id: u64,
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }

    /// Network output for the cached batch (`batch x out`).
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients in the network's flat layout, summed over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least two layer sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

/// `c = a * b + beta * c` for row-major-with-strides operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every index touched by dgemm in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Builds a network with weights uniform in `±scale/sqrt(fan_in)` and zero biases.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Config(format!("init scale must be >= 0, got {scale}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = scale / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let u: f64 = rng.random();
                params.push(bound * (2.0 * u - 1.0));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
            id: fresh_id(),
        })
    }

    /// Builds a network from explicit parameters in the flat layout.
    pub fn from_params(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        check_len("mlp parameters", param_count(sizes), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
            id: fresh_id(),
        })
    }

    /// Network whose every parameter is zero.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        Self::from_params(sizes, hidden, output, vec![0.0; param_count(sizes)])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Mutable access to the flat parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.id = fresh_id();
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Row-major `out x in` weight matrix of `layer`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let start = self.layer_offset(layer);
        let len = self.sizes[layer] * self.sizes[layer + 1];
        &self.params[start..start + len]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let start = self.layer_offset(layer) + self.sizes[layer] * self.sizes[layer + 1];
        &self.params[start..start + self.sizes[layer + 1]]
    }

    /// Flat-parameter ranges holding weight matrices (biases excluded).
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.layer_count())
            .map(|layer| {
                let start = self.layer_offset(layer);
                start..start + self.sizes[layer] * self.sizes[layer + 1]
            })
            .collect()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Cheap order-sensitive digest of the parameter bits.
    pub fn fingerprint(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, p| {
            crate::rng::mix64(h ^ p.to_bits())
        })
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(input, 1)
    }

    /// Output only, no cache retained.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.0)
    }

    /// Forward pass over a row-major batch of `batch` inputs.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("mlp forward input", batch * self.input_dim(), input.len())?;
        let layers = self.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for layer in 0..layers {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let x = if layer == 0 {
                input
            } else {
                post[layer - 1].as_slice()
            };
            let bias = self.bias(layer);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            // z = x * W^T + b
            gemm(
                batch,
                fan_in,
                fan_out,
                x,
                (fan_in, 1),
                self.weights(layer),
                (1, fan_in),
                1.0,
                &mut z,
            );
            let act = self.activation_of(layer);
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let output = post.last().cloned().unwrap_or_default();
        Ok((
            output,
            ForwardCache {
                net_id: self.id,
                batch,
                input: input.to_vec(),
                pre,
                post,
            },
        ))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.net_id != self.id || cache.pre.len() != self.layer_count() {
            return Err(Error::Contract(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        Ok(())
    }

    /// Reverse pass: parameter gradients (summed over the batch) and input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let (grads, input_grad) = self.reverse(cache, output_grad, true)?;
        Ok((grads.unwrap_or_else(|| Gradients(vec![0.0; self.param_count()])), input_grad))
    }

    /// Reverse pass that only propagates to the input, skipping weight gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        Ok(self.reverse(cache, output_grad, false)?.1)
    }

    fn reverse(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        want_params: bool,
    ) -> Result<(Option<Gradients>, Vec<f64>)> {
        self.check_cache(cache)?;
        let batch = cache.batch;
        check_len(
            "mlp backward output gradient",
            batch * self.output_dim(),
            output_grad.len(),
        )?;
        let mut grads = want_params.then(|| vec![0.0; self.param_count()]);
        let mut delta = output_grad.to_vec();
        for layer in (0..self.layer_count()).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let act = self.activation_of(layer);
            if act != Activation::Identity {
                let z = &cache.pre[layer];
                let a = &cache.post[layer];
                for ((d, &zv), &av) in delta.iter_mut().zip(z).zip(a) {
                    *d *= act.derivative(zv, av);
                }
            }
            let x = if layer == 0 {
                cache.input.as_slice()
            } else {
                cache.post[layer - 1].as_slice()
            };
            if let Some(g) = grads.as_mut() {
                let w_off = self.layer_offset(layer);
                let b_off = w_off + fan_in * fan_out;
                // dW = delta^T * x
                gemm(
                    fan_out,
                    batch,
                    fan_in,
                    &delta,
                    (1, fan_out),
                    x,
                    (fan_in, 1),
                    0.0,
                    &mut g[w_off..b_off],
                );
                let db = &mut g[b_off..b_off + fan_out];
                for row in delta.chunks_exact(fan_out) {
                    for (acc, d) in db.iter_mut().zip(row) {
                        *acc += d;
                    }
                }
            }
            // dx = delta * W
            let mut dx = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                (fan_out, 1),
                self.weights(layer),
                (fan_in, 1),
                0.0,
                &mut dx,
            );
            delta = dx;
        }
        Ok((grads.map(Gradients), delta))
    }

    /// `self <- tau * live + (1 - tau) * self`, element-wise.
    pub fn polyak_toward(&mut self, live: &Mlp, tau: f64) -> Result<()> {
        if self.sizes != live.sizes {
            return Err(Error::Contract("polyak update between differently shaped networks".into()));
        }
        let keep = 1.0 - tau;
        for (t, &l) in self.params_mut().iter_mut().zip(&live.params) {
            *t = tau * l + keep * *t;
        }
        Ok(())
    }

    /// Little-endian snapshot: magic, layer sizes, activations, then parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.sizes.len() + self.params.len()));
        out.extend_from_slice(b"MLP1");
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.push(self.hidden.code());
        out.push(self.output.code());
        for &p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Decodes a snapshot written by [`Mlp::to_bytes`]; returns the network and
    /// the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != b"MLP1" {
            return Err(Error::Parse("bad network snapshot magic".into()));
        }
        let n = r.u32()? as usize;
        let sizes = (0..n).map(|_| r.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        validate_sizes(&sizes).map_err(|e| Error::Parse(e.to_string()))?;
        let hidden = Activation::from_code(r.u8()?)?;
        let output = Activation::from_code(r.u8()?)?;
        let params = (0..param_count(&sizes)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let net = Self::from_params(&sizes, hidden, output, params)?;
        Ok((net, r.pos))
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Parse("unexpected end of snapshot".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
