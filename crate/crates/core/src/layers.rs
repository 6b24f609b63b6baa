//! Parameterized building blocks. Vectors are `1 x n` rows and weights are
//! applied on the right (`x W`).

use graphsum_numerics::{Graph, Init, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers named parameters with the standard initializers.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        Ok(self.store.add(name, rows, cols, Init::XavierUniform, self.rng)?)
    }

    pub fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        Ok(self.store.add(name, 1, cols, Init::Zeros, self.rng)?)
    }

    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        Ok(self.store.add(name, rows, cols, Init::Uniform(0.1), self.rng)?)
    }

    pub fn ones(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        Ok(self.store.add(name, 1, cols, Init::Constant(1.0), self.rng)?)
    }
}

/// Embedding dropout. Inactive when there is no RNG (inference, gradient
/// checks) or the rate is zero.
pub struct Dropout {
    pub rate: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => Ok(g.dropout(x, self.rate, rng)?),
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            w: b.weight(&format!("{name}.w"), input, output)?,
            b: if bias {
                Some(b.bias(&format!("{name}.b"), output)?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                Ok(g.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// LSTM cell. Gate columns are ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(b: &mut Builder, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            wx: b.weight(&format!("{name}.wx"), input, 4 * hidden)?,
            wh: b.weight(&format!("{name}.wh"), hidden, 4 * hidden)?,
            b: b.bias(&format!("{name}.b"), 4 * hidden)?,
            hidden,
        })
    }

    /// Input contribution plus bias for a whole sequence at once.
    pub fn input_proj(&self, g: &mut Graph, xs: Var) -> Result<Var> {
        let wx = g.param(self.wx);
        let b = g.param(self.b);
        let p = g.matmul(xs, wx)?;
        Ok(g.add_row(p, b)?)
    }

    /// One step from a precomputed input projection row. Returns `(h, c)`.
    pub fn step_proj(&self, g: &mut Graph, xp: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let wh = g.param(self.wh);
        let hh = g.matmul(h, wh)?;
        let z = g.add(xp, hh)?;
        let n = self.hidden;
        let i = g.slice_cols(z, 0, n)?;
        let f = g.slice_cols(z, n, 2 * n)?;
        let u = g.slice_cols(z, 2 * n, 3 * n)?;
        let o = g.slice_cols(z, 3 * n, 4 * n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, u)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xp = self.input_proj(g, x)?;
        self.step_proj(g, xp, h, c)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: b.ones(&format!("{name}.gain"), dim)?,
            bias: b.bias(&format!("{name}.bias"), dim)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, Self::EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain)?;
        Ok(g.add_row(y, bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(b, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(b, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(b, &format!("{name}.v"), dim, dim, true)?,
            o: Linear::new(b, &format!("{name}.o"), dim, dim, true)?,
            heads,
            dim,
        })
    }

    /// Scaled dot-product attention of `queries` (m x d) over `memory`
    /// (n x d). With `causal`, query `i` sees memory rows `0..=i`.
    pub fn forward(&self, g: &mut Graph, queries: Var, memory: Var, causal: bool) -> Result<Var> {
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let (m, n) = (g.shape(q).rows, g.shape(k).rows);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask: Vec<bool> = (0..m)
            .flat_map(|i| (0..n).map(move |j| !causal || j <= i))
            .collect();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale);
            let a = if causal {
                g.masked_softmax(s, &mask)?
            } else {
                g.softmax(s)
            };
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat_cols(&outs)?;
        self.o.forward(g, cat)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(b: &mut Builder, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(b, &format!("{name}.inner"), dim, hidden, true)?,
            outer: Linear::new(b, &format!("{name}.outer"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}

/// Sinusoidal position encodings for positions `0..n`.
pub fn positions(n: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(n, dim);
    for pos in 0..n {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

/// Draw a seed for a derived RNG stream.
pub fn fork(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen()
}
