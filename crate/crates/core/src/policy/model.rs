//! Tiny decoder-only transformer with hand-written forward and backward
//! passes over a flat f32 parameter vector.
//!
//! Pre-norm blocks (RMSNorm without gain), multi-head causal attention,
//! squared-ReLU MLP, untied output head. Residual-output projections start at
//! zero so a fresh model samples near-uniformly.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "STUDENT")]
    Student,
    #[serde(rename = "TEACHER")]
    Teacher,
    #[serde(rename = "REFLECTOR")]
    Reflector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.n_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of each weight tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    v: usize,
    d: usize,
    layer_size: usize,
    layers_base: usize,
    out_base: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d) = (cfg.vocab_size, cfg.d_model);
        let layer_size = 4 * d * d + 2 * d * cfg.mlp_dim();
        let layers_base = v * d;
        let out_base = layers_base + cfg.n_layers * layer_size;
        Layout {
            v,
            d,
            layer_size,
            layers_base,
            out_base,
            total: out_base + v * d,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn wte(&self) -> Range<usize> {
        0..self.v * self.d
    }

    fn layer(&self, l: usize) -> usize {
        self.layers_base + l * self.layer_size
    }

    pub fn wq(&self, l: usize) -> Range<usize> {
        let s = self.layer(l);
        s..s + self.d * self.d
    }

    pub fn wk(&self, l: usize) -> Range<usize> {
        let s = self.layer(l) + self.d * self.d;
        s..s + self.d * self.d
    }

    pub fn wv(&self, l: usize) -> Range<usize> {
        let s = self.layer(l) + 2 * self.d * self.d;
        s..s + self.d * self.d
    }

    pub fn wo(&self, l: usize) -> Range<usize> {
        let s = self.layer(l) + 3 * self.d * self.d;
        s..s + self.d * self.d
    }

    pub fn w1(&self, l: usize) -> Range<usize> {
        let s = self.layer(l) + 4 * self.d * self.d;
        s..s + 4 * self.d * self.d
    }

    pub fn w2(&self, l: usize) -> Range<usize> {
        let s = self.layer(l) + 8 * self.d * self.d;
        s..s + 4 * self.d * self.d
    }

    pub fn wout(&self) -> Range<usize> {
        self.out_base..self.out_base + self.v * self.d
    }
}

const RMS_EPS: f32 = 1e-5;

/// ALiBi attention-bias slope for one head: head 0 is distance-blind
/// (slope 0) so content-keyed lookups reach arbitrarily far back; the rest
/// follow the 2^(-8h/H) ladder.
#[inline]
fn alibi_slope(head: usize, n_heads: usize) -> f32 {
    if head == 0 {
        0.0
    } else {
        (2.0f32).powf(-8.0 * head as f32 / n_heads as f32)
    }
}

#[inline]
fn matvec(w: &[f32], x: &[f32], out: &mut [f32], rows: usize, cols: usize) {
    for o in 0..rows {
        let row = &w[o * cols..(o + 1) * cols];
        let mut acc = 0f32;
        for i in 0..cols {
            acc += row[i] * x[i];
        }
        out[o] = acc;
    }
}

/// dx += W^T dy
#[inline]
fn matvec_t_accum(w: &[f32], dy: &[f32], dx: &mut [f32], rows: usize, cols: usize) {
    for o in 0..rows {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &w[o * cols..(o + 1) * cols];
        for i in 0..cols {
            dx[i] += g * row[i];
        }
    }
}

/// dW += dy x^T
#[inline]
fn outer_accum(dw: &mut [f32], dy: &[f32], x: &[f32], rows: usize, cols: usize) {
    for o in 0..rows {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let drow = &mut dw[o * cols..(o + 1) * cols];
        for i in 0..cols {
            drow[i] += g * x[i];
        }
    }
}

#[inline]
fn rmsnorm(x: &[f32], out: &mut [f32]) -> f32 {
    let ms: f32 = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let ri = 1.0 / (ms + RMS_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(x.iter()) {
        *o = v * ri;
    }
    ri
}

#[inline]
fn rmsnorm_bwd(dy: &[f32], x: &[f32], ri: f32, dx: &mut [f32]) {
    let n = x.len() as f32;
    let dot: f32 = dy.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let coef = ri * ri * ri / n * dot;
    for i in 0..x.len() {
        dx[i] += ri * dy[i] - coef * x[i];
    }
}

struct LayerCache {
    x_in: Vec<f32>,
    xn_attn: Vec<f32>,
    ri_attn: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    /// Attention weights, `[h][t][j]` flattened as h*t_len*t_len + t*t_len + j.
    aw: Vec<f32>,
    ho: Vec<f32>,
    x_mid: Vec<f32>,
    xn_mlp: Vec<f32>,
    ri_mlp: Vec<f32>,
    h1: Vec<f32>,
    h1a: Vec<f32>,
}

/// Activations retained by a teacher-forcing forward pass for backward.
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    x_final: Vec<f32>,
    xfn: Vec<f32>,
    ri_final: Vec<f32>,
}

impl ForwardCache {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Clone)]
pub struct KvCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub cfg: ModelConfig,
    pub role: Role,
    pub params: Vec<f32>,
    layout: Layout,
}

impl PolicyModel {
    pub fn new(cfg: ModelConfig, role: Role, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0f32; layout.total()];
        let mut init = |range: Range<usize>, name: &str, std: f32| {
            let mut rng = Rng::derive(seed, name, &[]);
            for p in &mut params[range] {
                *p = (rng.gaussian() as f32) * std;
            }
        };
        init(layout.wte(), "wte", 0.02);
        for l in 0..cfg.n_layers {
            init(layout.wq(l), &format!("wq{l}"), 0.02);
            init(layout.wk(l), &format!("wk{l}"), 0.02);
            init(layout.wv(l), &format!("wv{l}"), 0.02);
            init(layout.w1(l), &format!("w1{l}"), 0.02);
            // wo and w2 stay zero.
        }
        init(layout.wout(), "wout", 0.02);
        Ok(PolicyModel {
            cfg,
            role,
            params,
            layout,
        })
    }

    pub fn from_parts(cfg: ModelConfig, role: Role, params: Vec<f32>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total() {
            return Err(Error::Config(format!(
                "parameter blob has {} values, layout needs {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(PolicyModel {
            cfg,
            role,
            params,
            layout,
        })
    }

    pub fn with_role(&self, role: Role) -> Self {
        let mut m = self.clone();
        m.role = role;
        m
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// FNV-1a over the exact parameter bits.
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for b in p.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    fn check_len(&self, t_len: usize) -> Result<()> {
        if t_len > self.cfg.max_seq_len {
            return Err(Error::Input(format!(
                "context overflow: sequence length {} exceeds model context {}",
                t_len, self.cfg.max_seq_len
            )));
        }
        if t_len == 0 {
            return Err(Error::Input("empty sequence".into()));
        }
        Ok(())
    }

    /// Teacher-forcing forward pass. Returns logits for every position
    /// (row-major `t_len x vocab`) and, when requested, the activation cache
    /// needed by [`PolicyModel::backward`].
    pub fn forward(&self, ids: &[u32], need_cache: bool) -> Result<(Vec<f32>, Option<ForwardCache>)> {
        let t_len = ids.len();
        self.check_len(t_len)?;
        let d = self.cfg.d_model;
        let hd = self.cfg.head_dim();
        let heads = self.cfg.n_heads;
        let md = self.cfg.mlp_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![0f32; t_len * d];
        let wte = &p[lay.wte()];
        for (t, &id) in ids.iter().enumerate() {
            x[t * d..(t + 1) * d]
                .copy_from_slice(&wte[id as usize * d..(id as usize + 1) * d]);
        }

        let mut layer_caches = Vec::new();
        let mut xn = vec![0f32; t_len * d];
        let mut ri_buf = vec![0f32; t_len];
        for l in 0..self.cfg.n_layers {
            let x_in = if need_cache { x.clone() } else { Vec::new() };
            for t in 0..t_len {
                ri_buf[t] = rmsnorm(&x[t * d..(t + 1) * d], &mut xn[t * d..(t + 1) * d]);
            }
            let ri_attn = ri_buf.clone();
            let xn_attn = xn.clone();

            let mut q = vec![0f32; t_len * d];
            let mut k = vec![0f32; t_len * d];
            let mut v = vec![0f32; t_len * d];
            let (wq, wk, wv) = (&p[lay.wq(l)], &p[lay.wk(l)], &p[lay.wv(l)]);
            for t in 0..t_len {
                let xt = &xn_attn[t * d..(t + 1) * d];
                matvec(wq, xt, &mut q[t * d..(t + 1) * d], d, d);
                matvec(wk, xt, &mut k[t * d..(t + 1) * d], d, d);
                matvec(wv, xt, &mut v[t * d..(t + 1) * d], d, d);
            }

            let mut aw = vec![0f32; heads * t_len * t_len];
            let mut ho = vec![0f32; t_len * d];
            let mut row = vec![0f32; t_len];
            for h in 0..heads {
                let hoff = h * hd;
                let slope = alibi_slope(h, heads);
                for t in 0..t_len {
                    let qt = &q[t * d + hoff..t * d + hoff + hd];
                    let mut max = f32::NEG_INFINITY;
                    for (j, r) in row.iter_mut().enumerate().take(t + 1) {
                        let kj = &k[j * d + hoff..j * d + hoff + hd];
                        let mut acc = 0f32;
                        for i in 0..hd {
                            acc += qt[i] * kj[i];
                        }
                        *r = acc * scale - slope * (t - j) as f32;
                        if *r > max {
                            max = *r;
                        }
                    }
                    let mut sum = 0f32;
                    for r in row.iter_mut().take(t + 1) {
                        *r = (*r - max).exp();
                        sum += *r;
                    }
                    let inv = 1.0 / sum;
                    let aw_row = &mut aw[h * t_len * t_len + t * t_len..];
                    let out = &mut ho[t * d + hoff..t * d + hoff + hd];
                    for j in 0..=t {
                        let w = row[j] * inv;
                        aw_row[j] = w;
                        let vj = &v[j * d + hoff..j * d + hoff + hd];
                        for i in 0..hd {
                            out[i] += w * vj[i];
                        }
                    }
                }
            }

            let wo = &p[lay.wo(l)];
            let mut attn_out = vec![0f32; d];
            for t in 0..t_len {
                matvec(wo, &ho[t * d..(t + 1) * d], &mut attn_out, d, d);
                for i in 0..d {
                    x[t * d + i] += attn_out[i];
                }
            }
            let x_mid = if need_cache { x.clone() } else { Vec::new() };

            for t in 0..t_len {
                ri_buf[t] = rmsnorm(&x[t * d..(t + 1) * d], &mut xn[t * d..(t + 1) * d]);
            }
            let ri_mlp = ri_buf.clone();
            let xn_mlp = xn.clone();

            let (w1, w2) = (&p[lay.w1(l)], &p[lay.w2(l)]);
            let mut h1 = vec![0f32; t_len * md];
            let mut h1a = vec![0f32; t_len * md];
            let mut mlp_out = vec![0f32; d];
            for t in 0..t_len {
                matvec(w1, &xn_mlp[t * d..(t + 1) * d], &mut h1[t * md..(t + 1) * md], md, d);
                for i in 0..md {
                    let z = h1[t * md + i];
                    h1a[t * md + i] = if z > 0.0 { z * z } else { 0.0 };
                }
                matvec(w2, &h1a[t * md..(t + 1) * md], &mut mlp_out, d, md);
                for i in 0..d {
                    x[t * d + i] += mlp_out[i];
                }
            }

            if need_cache {
                layer_caches.push(LayerCache {
                    x_in,
                    xn_attn,
                    ri_attn,
                    q,
                    k,
                    v,
                    aw,
                    ho,
                    x_mid,
                    xn_mlp,
                    ri_mlp,
                    h1,
                    h1a,
                });
            }
        }

        let mut xfn = vec![0f32; t_len * d];
        let mut ri_final = vec![0f32; t_len];
        for t in 0..t_len {
            ri_final[t] = rmsnorm(&x[t * d..(t + 1) * d], &mut xfn[t * d..(t + 1) * d]);
        }
        let vsz = self.cfg.vocab_size;
        let wout = &p[lay.wout()];
        let mut logits = vec![0f32; t_len * vsz];
        for t in 0..t_len {
            matvec(
                wout,
                &xfn[t * d..(t + 1) * d],
                &mut logits[t * vsz..(t + 1) * vsz],
                vsz,
                d,
            );
        }

        let cache = if need_cache {
            Some(ForwardCache {
                ids: ids.to_vec(),
                layers: layer_caches,
                x_final: x,
                xfn,
                ri_final,
            })
        } else {
            None
        };
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients for `d(loss)/d(logits)` given as a
    /// dense `t_len x vocab` row-major buffer. `grads` must have
    /// `n_params()` entries.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f32], grads: &mut [f32]) {
        let t_len = cache.ids.len();
        let d = self.cfg.d_model;
        let hd = self.cfg.head_dim();
        let heads = self.cfg.n_heads;
        let md = self.cfg.mlp_dim();
        let vsz = self.cfg.vocab_size;
        let scale = 1.0 / (hd as f32).sqrt();
        let p = &self.params;
        let lay = &self.layout;
        assert_eq!(dlogits.len(), t_len * vsz);
        assert_eq!(grads.len(), self.params.len());

        // Output head and final norm.
        let wout = &p[lay.wout()];
        let mut dx = vec![0f32; t_len * d];
        {
            let mut dxfn = vec![0f32; d];
            for t in 0..t_len {
                let dl = &dlogits[t * vsz..(t + 1) * vsz];
                dxfn.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_accum(wout, dl, &mut dxfn, vsz, d);
                outer_accum(
                    &mut grads[lay.wout()],
                    dl,
                    &cache.xfn[t * d..(t + 1) * d],
                    vsz,
                    d,
                );
                rmsnorm_bwd(
                    &dxfn,
                    &cache.x_final[t * d..(t + 1) * d],
                    cache.ri_final[t],
                    &mut dx[t * d..(t + 1) * d],
                );
            }
        }

        for l in (0..self.cfg.n_layers).rev() {
            let lc = &cache.layers[l];
            let (w1, w2, wo) = (&p[lay.w1(l)], &p[lay.w2(l)], &p[lay.wo(l)]);

            // MLP: x_out = x_mid + W2 relu2(W1 rmsnorm(x_mid))
            let mut d_xmid = vec![0f32; t_len * d];
            {
                let mut dh1a = vec![0f32; md];
                let mut dh1 = vec![0f32; md];
                let mut dxn = vec![0f32; d];
                for t in 0..t_len {
                    let dy = &dx[t * d..(t + 1) * d];
                    dh1a.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_accum(w2, dy, &mut dh1a, d, md);
                    outer_accum(&mut grads[lay.w2(l)], dy, &lc.h1a[t * md..(t + 1) * md], d, md);
                    for i in 0..md {
                        let z = lc.h1[t * md + i];
                        dh1[i] = if z > 0.0 { dh1a[i] * 2.0 * z } else { 0.0 };
                    }
                    dxn.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_accum(w1, &dh1, &mut dxn, md, d);
                    outer_accum(&mut grads[lay.w1(l)], &dh1, &lc.xn_mlp[t * d..(t + 1) * d], md, d);
                    // Residual plus norm path.
                    for i in 0..d {
                        d_xmid[t * d + i] += dy[i];
                    }
                    rmsnorm_bwd(
                        &dxn,
                        &lc.x_mid[t * d..(t + 1) * d],
                        lc.ri_mlp[t],
                        &mut d_xmid[t * d..(t + 1) * d],
                    );
                }
            }

            // Attention: x_mid = x_in + Wo ho(attn(rmsnorm(x_in)))
            let mut d_xin = d_xmid.clone(); // residual path
            let mut dq = vec![0f32; t_len * d];
            let mut dk = vec![0f32; t_len * d];
            let mut dv = vec![0f32; t_len * d];
            {
                let mut dho = vec![0f32; t_len * d];
                for t in 0..t_len {
                    let dy = &d_xmid[t * d..(t + 1) * d];
                    matvec_t_accum(wo, dy, &mut dho[t * d..(t + 1) * d], d, d);
                    outer_accum(&mut grads[lay.wo(l)], dy, &lc.ho[t * d..(t + 1) * d], d, d);
                }
                let mut d_aw = vec![0f32; t_len];
                for h in 0..heads {
                    let hoff = h * hd;
                    for t in 0..t_len {
                        let dho_t = &dho[t * d + hoff..t * d + hoff + hd];
                        let aw_row = &lc.aw[h * t_len * t_len + t * t_len..h * t_len * t_len + t * t_len + t + 1];
                        let mut dot = 0f32;
                        for j in 0..=t {
                            let vj = &lc.v[j * d + hoff..j * d + hoff + hd];
                            let mut acc = 0f32;
                            for i in 0..hd {
                                acc += dho_t[i] * vj[i];
                                dv[j * d + hoff + i] += aw_row[j] * dho_t[i];
                            }
                            d_aw[j] = acc;
                            dot += acc * aw_row[j];
                        }
                        // Softmax backward, then q/k.
                        let qt = &lc.q[t * d + hoff..t * d + hoff + hd];
                        for j in 0..=t {
                            let dlogit = aw_row[j] * (d_aw[j] - dot) * scale;
                            if dlogit == 0.0 {
                                continue;
                            }
                            let kj = &lc.k[j * d + hoff..j * d + hoff + hd];
                            for i in 0..hd {
                                dq[t * d + hoff + i] += dlogit * kj[i];
                                dk[j * d + hoff + i] += dlogit * qt[i];
                            }
                        }
                    }
                }
            }
            let (wq, wk, wv) = (&p[lay.wq(l)], &p[lay.wk(l)], &p[lay.wv(l)]);
            {
                let mut dxn = vec![0f32; d];
                for t in 0..t_len {
                    let xt = &lc.xn_attn[t * d..(t + 1) * d];
                    dxn.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_accum(wq, &dq[t * d..(t + 1) * d], &mut dxn, d, d);
                    matvec_t_accum(wk, &dk[t * d..(t + 1) * d], &mut dxn, d, d);
                    matvec_t_accum(wv, &dv[t * d..(t + 1) * d], &mut dxn, d, d);
                    outer_accum(&mut grads[lay.wq(l)], &dq[t * d..(t + 1) * d], xt, d, d);
                    outer_accum(&mut grads[lay.wk(l)], &dk[t * d..(t + 1) * d], xt, d, d);
                    outer_accum(&mut grads[lay.wv(l)], &dv[t * d..(t + 1) * d], xt, d, d);
                    rmsnorm_bwd(
                        &dxn,
                        &lc.x_in[t * d..(t + 1) * d],
                        lc.ri_attn[t],
                        &mut d_xin[t * d..(t + 1) * d],
                    );
                }
            }
            dx = d_xin;
        }

        // Embeddings.
        for (t, &id) in cache.ids.iter().enumerate() {
            for i in 0..d {
                grads[id as usize * d + i] += dx[t * d + i];
            }
        }
    }

    /// Runs the prompt through the model, filling a KV cache. Returns the
    /// cache and the logits after the last prompt token.
    pub fn prefill(&self, ids: &[u32]) -> Result<(KvCache, Vec<f32>)> {
        self.check_len(ids.len())?;
        let mut kv = KvCache {
            k: vec![Vec::new(); self.cfg.n_layers],
            v: vec![Vec::new(); self.cfg.n_layers],
            len: 0,
        };
        let mut logits = Vec::new();
        for &id in ids {
            logits = self.decode_step(&mut kv, id)?;
        }
        Ok((kv, logits))
    }

    /// Appends one token and returns the next-token logits.
    pub fn decode_step(&self, kv: &mut KvCache, id: u32) -> Result<Vec<f32>> {
        let t = kv.len;
        if t + 1 > self.cfg.max_seq_len {
            return Err(Error::Input(format!(
                "context overflow: sequence length {} exceeds model context {}",
                t + 1,
                self.cfg.max_seq_len
            )));
        }
        let d = self.cfg.d_model;
        let hd = self.cfg.head_dim();
        let heads = self.cfg.n_heads;
        let md = self.cfg.mlp_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![0f32; d];
        x.copy_from_slice(&p[lay.wte()][id as usize * d..(id as usize + 1) * d]);

        let mut xn = vec![0f32; d];
        let mut q = vec![0f32; d];
        let mut kt = vec![0f32; d];
        let mut vt = vec![0f32; d];
        for l in 0..self.cfg.n_layers {
            rmsnorm(&x, &mut xn);
            matvec(&p[lay.wq(l)], &xn, &mut q, d, d);
            matvec(&p[lay.wk(l)], &xn, &mut kt, d, d);
            matvec(&p[lay.wv(l)], &xn, &mut vt, d, d);
            kv.k[l].extend_from_slice(&kt);
            kv.v[l].extend_from_slice(&vt);

            let all_k = &kv.k[l];
            let all_v = &kv.v[l];
            let mut ho = vec![0f32; d];
            let mut row = vec![0f32; t + 1];
            for h in 0..heads {
                let hoff = h * hd;
                let slope = alibi_slope(h, heads);
                let qh = &q[hoff..hoff + hd];
                let mut max = f32::NEG_INFINITY;
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &all_k[j * d + hoff..j * d + hoff + hd];
                    let mut acc = 0f32;
                    for i in 0..hd {
                        acc += qh[i] * kj[i];
                    }
                    *r = acc * scale - slope * (t - j) as f32;
                    if *r > max {
                        max = *r;
                    }
                }
                let mut sum = 0f32;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                let inv = 1.0 / sum;
                for (j, r) in row.iter().enumerate() {
                    let w = r * inv;
                    let vj = &all_v[j * d + hoff..j * d + hoff + hd];
                    for i in 0..hd {
                        ho[hoff + i] += w * vj[i];
                    }
                }
            }
            let mut attn_out = vec![0f32; d];
            matvec(&p[lay.wo(l)], &ho, &mut attn_out, d, d);
            for i in 0..d {
                x[i] += attn_out[i];
            }

            rmsnorm(&x, &mut xn);
            let mut h1 = vec![0f32; md];
            matvec(&p[lay.w1(l)], &xn, &mut h1, md, d);
            for z in h1.iter_mut() {
                *z = if *z > 0.0 { *z * *z } else { 0.0 };
            }
            let mut mlp = vec![0f32; d];
            matvec(&p[lay.w2(l)], &h1, &mut mlp, d, md);
            for i in 0..d {
                x[i] += mlp[i];
            }
        }
        kv.len = t + 1;

        rmsnorm(&x, &mut xn);
        let vsz = self.cfg.vocab_size;
        let wout = &p[lay.wout()];
        let mut logits = vec![0f32; vsz];
        matvec(wout, &xn, &mut logits, vsz, d);
        Ok(logits)
    }
}

/// `teacher <- tau*teacher + (1-tau)*student`, elementwise.
pub fn ema_update(teacher: &mut PolicyModel, student: &PolicyModel, tau: f64) -> Result<()> {
    if teacher.cfg != student.cfg {
        return Err(Error::Config(
            "ema_update requires matching architectures".into(),
        ));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must be in [0,1], got {tau}")));
    }
    let tau = tau as f32;
    for (t, s) in teacher.params.iter_mut().zip(student.params.iter()) {
        *t = tau * *t + (1.0 - tau) * *s;
    }
    Ok(())
}
