//! A pointer-generator LSTM step written with plain `f64` loops, reading the
//! parameters of a graph-off LSTM model by name. Shares no code with the
//! model's forward pass.

use graphsum_core::numerics::ParamStore;

struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn by_name(store: &ParamStore, name: &str) -> Mat {
        let id = store.id(name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
        let t = store.value(id);
        Mat {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }

    /// `x W` for a row vector `x`.
    fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * self.data[i * self.cols + j];
            }
        }
        out
    }

    fn row(&self, r: usize) -> Vec<f64> {
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

struct Cell {
    wx: Mat,
    wh: Mat,
    b: Vec<f64>,
}

impl Cell {
    fn load(store: &ParamStore, name: &str) -> Cell {
        Cell {
            wx: Mat::by_name(store, &format!("{name}.wx")),
            wh: Mat::by_name(store, &format!("{name}.wh")),
            b: Mat::by_name(store, &format!("{name}.b")).data,
        }
    }

    /// Gates in column blocks: input, forget, candidate, output.
    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let z = add(&add(&self.wx.left_mul(x), &self.wh.left_mul(h)), &self.b);
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[n + k]);
            let g = z[2 * n + k].tanh();
            let o = sigmoid(z[3 * n + k]);
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }
}

pub struct PlainPointerGenerator<'a> {
    store: &'a ParamStore,
    enc_layers: usize,
    copy: bool,
}

impl<'a> PlainPointerGenerator<'a> {
    pub fn new(store: &'a ParamStore, enc_layers: usize, copy: bool) -> Self {
        Self { store, enc_layers, copy }
    }

    fn m(&self, name: &str) -> Mat {
        Mat::by_name(self.store, name)
    }

    /// Output distributions for every step of teacher forcing on `inputs`
    /// (base-vocabulary ids, BOS first). `source` holds base ids (OOV as UNK)
    /// and `source_ext` the extended ids used for copying.
    pub fn distributions(
        &self,
        source: &[usize],
        source_ext: &[usize],
        extended_size: usize,
        inputs: &[usize],
    ) -> Vec<Vec<f64>> {
        let emb = self.m("embedding");
        let n = source.len();
        let mut xs: Vec<Vec<f64>> = source.iter().map(|&id| emb.row(id)).collect();
        let mut last = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for l in 0..self.enc_layers {
            let fwd = Cell::load(self.store, &format!("enc.l{l}.fwd"));
            let bwd = Cell::load(self.store, &format!("enc.l{l}.bwd"));
            let hidden = fwd.wh.rows;
            let mut hf = vec![vec![0.0; hidden]; n];
            let mut hb = vec![vec![0.0; hidden]; n];
            let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
            for t in 0..n {
                (h, c) = fwd.step(&xs[t], &h, &c);
                hf[t] = h.clone();
            }
            let (fh, fc) = (h, c);
            let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
            for t in (0..n).rev() {
                (h, c) = bwd.step(&xs[t], &h, &c);
                hb[t] = h.clone();
            }
            last = (fh, fc, h, c);
            xs = (0..n).map(|t| cat(&[&hf[t], &hb[t]])).collect();
        }
        let (fh, fc, bh, bc) = last;
        let mut s = cat(&[&fh, &bh]);
        let mut c = cat(&[&fc, &bc]);

        let dec = Cell::load(self.store, "dec.lstm");
        let (ws, wq, p) = (self.m("att_src.w_state"), self.m("att_src.w_query"), self.m("att_src.p"));
        let (q, q_out) = (self.m("out.q"), self.m("out.q_out"));
        let proj: Vec<Vec<f64>> = xs.iter().map(|x| ws.left_mul(x)).collect();
        let mut out = Vec::new();
        for &prev in inputs {
            let y = emb.row(prev);
            (s, c) = dec.step(&y, &s, &c);
            let qs = wq.left_mul(&s);
            let scores: Vec<f64> = proj
                .iter()
                .map(|pr| {
                    let act: Vec<f64> = add(pr, &qs).iter().map(|v| v.tanh()).collect();
                    p.left_mul(&act)[0]
                })
                .collect();
            let a = softmax(&scores);
            let mut ctx = vec![0.0; xs[0].len()];
            for (ai, x) in a.iter().zip(&xs) {
                for (cv, xv) in ctx.iter_mut().zip(x) {
                    *cv += ai * xv;
                }
            }
            let hidden: Vec<f64> = q.left_mul(&cat(&[&s, &ctx])).iter().map(|v| v.tanh()).collect();
            let p_vocab = softmax(&q_out.left_mul(&hidden));
            if !self.copy {
                out.push(p_vocab);
                continue;
            }
            let w = self.m("pgen.w");
            let b = self.m("pgen.b").data[0];
            let p_gen = sigmoid(w.left_mul(&cat(&[&ctx, &s, &y]))[0] + b);
            let mut dist = vec![0.0; extended_size];
            for (k, pv) in p_vocab.iter().enumerate() {
                dist[k] = p_gen * pv;
            }
            for (ai, &id) in a.iter().zip(source_ext) {
                dist[id] += (1.0 - p_gen) * ai;
            }
            out.push(dist);
        }
        out
    }
}
