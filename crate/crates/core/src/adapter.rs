//! Small dense reference of the visual fusion block, the learned-query
//! tokenizer and the plan cross-entropy, with hand-written gradients and a
//! finite-difference check. Dimensions are toy sized.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::seeding::SeedHasher;

/// Encoder layers whose outputs feed the fusion block.
pub const STAGE_LAYERS: [usize; 3] = [13, 26, 39];
/// Learned query count used when none is given.
pub const DEFAULT_QUERIES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{logits} logit rows but {targets} targets")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("target token {token} outside a vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("width {d} is not divisible by {heads} heads")]
    Heads { d: usize, heads: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// `T × d` token features.
pub type FeatureMap = Mat;

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn t(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Columns `start..start + width`.
    pub fn cols_slice(&self, start: usize, width: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, width);
        for i in 0..self.rows {
            for j in 0..width {
                out[(i, j)] = self[(i, start + j)];
            }
        }
        out
    }

    fn set_cols(&mut self, start: usize, block: &Mat) {
        for i in 0..self.rows {
            for j in 0..block.cols {
                self[(i, start + j)] = block[(i, j)];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..m.rows {
        let row = &mut out.data[i * m.cols..(i + 1) * m.cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    out
}

/// Gradient through a row softmax: `A ⊙ (dA - rowsum(dA ⊙ A))`.
fn softmax_rows_backward(a: &Mat, da: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let dot: f64 = a.row(i).iter().zip(da.row(i)).map(|(x, y)| x * y).sum();
        for j in 0..a.cols {
            out[(i, j)] = a[(i, j)] * (da[(i, j)] - dot);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterParams {
    pub heads: usize,
    /// Query, key and value projections, `d × d`; head `h` uses columns
    /// `h·d/heads .. (h+1)·d/heads`.
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    /// Output projection of the concatenated heads.
    pub wo: Mat,
    /// Linear projection applied after the attention output.
    pub wl: Mat,
    /// `K × d` learned queries of the tokenizer.
    pub queries: Mat,
    /// Tokenizer key and value projections, `d × d`.
    pub tk: Mat,
    pub tv: Mat,
    /// `d × d_lang` projector into the language width.
    pub proj: Mat,
}

pub const PARAM_NAMES: [&str; 9] = ["wq", "wk", "wv", "wo", "wl", "queries", "tk", "tv", "proj"];

impl AdapterParams {
    pub fn random(seed: u64, d: usize, heads: usize, n_queries: usize, d_lang: usize) -> Result<Self, AdapterError> {
        if heads == 0 || d % heads != 0 {
            return Err(AdapterError::Heads { d, heads });
        }
        let mut rng = SeedHasher::new("adapter-params").u64(seed).rng();
        let s = 1.0 / (d as f64).sqrt();
        Ok(Self {
            heads,
            wq: Mat::random(d, d, s, &mut rng),
            wk: Mat::random(d, d, s, &mut rng),
            wv: Mat::random(d, d, s, &mut rng),
            wo: Mat::random(d, d, s, &mut rng),
            wl: Mat::random(d, d, s, &mut rng),
            queries: Mat::random(n_queries, d, 1.0, &mut rng),
            tk: Mat::random(d, d, s, &mut rng),
            tv: Mat::random(d, d, s, &mut rng),
            proj: Mat::random(d, d_lang, s, &mut rng),
        })
    }

    pub fn width(&self) -> usize {
        self.wq.rows
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows, m.cols);
        Self {
            heads: self.heads,
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            wl: z(&self.wl),
            queries: z(&self.queries),
            tk: z(&self.tk),
            tv: z(&self.tv),
            proj: z(&self.proj),
        }
    }

    /// Parameter matrices in [`PARAM_NAMES`] order.
    pub fn mats(&self) -> [&Mat; 9] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.wl, &self.queries, &self.tk, &self.tv, &self.proj]
    }

    pub fn mats_mut(&mut self) -> [&mut Mat; 9] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.wl,
            &mut self.queries,
            &mut self.tk,
            &mut self.tv,
            &mut self.proj,
        ]
    }

    fn check(&self) -> Result<(), AdapterError> {
        let d = self.width();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(AdapterError::Heads { d, heads: self.heads });
        }
        let square = [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo), ("wl", &self.wl)];
        for (what, m) in square.into_iter().chain([("tk", &self.tk), ("tv", &self.tv)]) {
            expect_shape(what, m, (d, d))?;
        }
        expect_shape("queries", &self.queries, (self.queries.rows, d))?;
        expect_shape("proj", &self.proj, (d, self.proj.cols))
    }
}

fn expect_shape(what: &'static str, m: &Mat, expected: (usize, usize)) -> Result<(), AdapterError> {
    if m.shape() != expected || m.rows == 0 || m.cols == 0 {
        return Err(AdapterError::ShapeMismatch {
            what,
            expected,
            got: m.shape(),
        });
    }
    Ok(())
}

struct AdapterCache {
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>,
    heads_out: Mat,
    y: Mat,
}

fn adapter_forward_cached(vi: &Mat, vj: &Mat, vk: &Mat, p: &AdapterParams) -> Result<(Mat, AdapterCache), AdapterError> {
    p.check()?;
    let d = p.width();
    expect_shape("vk", vk, (vk.rows, d))?;
    expect_shape("vi", vi, vk.shape())?;
    expect_shape("vj", vj, vk.shape())?;
    let dh = d / p.heads;
    let (q, k, v) = (vi.matmul(&p.wq), vj.matmul(&p.wk), vk.matmul(&p.wv));
    let mut heads_out = Mat::zeros(vk.rows, d);
    let mut attn = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = (q.cols_slice(h * dh, dh), k.cols_slice(h * dh, dh), v.cols_slice(h * dh, dh));
        let a = softmax_rows(&qh.matmul(&kh.t()).scale(1.0 / (dh as f64).sqrt()));
        heads_out.set_cols(h * dh, &a.matmul(&vh));
        attn.push(a);
    }
    let y = heads_out.matmul(&p.wo);
    let out = y.matmul(&p.wl).add(vk);
    Ok((
        out,
        AdapterCache {
            q,
            k,
            v,
            attn,
            heads_out,
            y,
        },
    ))
}

/// Fusion block: multi-head attention with queries from `vi`, keys from
/// `vj` and values from `vk`, output projection, linear projection, plus
/// `vk` as residual. Output has the shape of `vk`.
pub fn adapter_forward(vi: &FeatureMap, vj: &FeatureMap, vk: &FeatureMap, p: &AdapterParams) -> Result<FeatureMap, AdapterError> {
    adapter_forward_cached(vi, vj, vk, p).map(|(out, _)| out)
}

struct TokenizerCache {
    keys: Mat,
    values: Mat,
    attn: Mat,
    pooled: Mat,
}

fn tokenize_cached(vext: &Mat, p: &AdapterParams) -> Result<(Mat, TokenizerCache), AdapterError> {
    p.check()?;
    let d = p.width();
    expect_shape("vext", vext, (vext.rows, d))?;
    let keys = vext.matmul(&p.tk);
    let values = vext.matmul(&p.tv);
    let attn = softmax_rows(&p.queries.matmul(&keys.t()).scale(1.0 / (d as f64).sqrt()));
    let pooled = attn.matmul(&values);
    let out = pooled.matmul(&p.proj);
    Ok((
        out,
        TokenizerCache {
            keys,
            values,
            attn,
            pooled,
        },
    ))
}

/// Learned queries cross-attend to `vext`; the pooled rows are projected to
/// the language width. Output is `K × d_lang` whatever the token count.
pub fn tokenize_visual(vext: &FeatureMap, p: &AdapterParams) -> Result<FeatureMap, AdapterError> {
    tokenize_cached(vext, p).map(|(out, _)| out)
}

fn check_targets(logits: &Mat, target: &[usize]) -> Result<(), AdapterError> {
    if logits.rows != target.len() || target.is_empty() {
        return Err(AdapterError::LengthMismatch {
            logits: logits.rows,
            targets: target.len(),
        });
    }
    if let Some(&token) = target.iter().find(|&&t| t >= logits.cols) {
        return Err(AdapterError::TokenOutOfRange {
            token,
            vocab: logits.cols,
        });
    }
    Ok(())
}

/// Mean negative log-probability of each target token under the row
/// softmax of `logits`.
pub fn plan_ce_loss(logits: &Mat, target: &[usize]) -> Result<f64, AdapterError> {
    check_targets(logits, target)?;
    let total: f64 = target
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            lse - row[t]
        })
        .sum();
    Ok(total / target.len() as f64)
}

fn plan_ce_grad(logits: &Mat, target: &[usize]) -> Mat {
    let mut g = softmax_rows(logits);
    for (i, &t) in target.iter().enumerate() {
        g[(i, t)] -= 1.0;
    }
    g.scale(1.0 / target.len() as f64)
}

/// One training example for the composed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub vi: FeatureMap,
    pub vj: FeatureMap,
    pub vk: FeatureMap,
    /// One target token per learned query.
    pub target: Vec<usize>,
}

impl Example {
    pub fn random(seed: u64, tokens: usize, d: usize, n_queries: usize, vocab: usize) -> Self {
        let mut rng = SeedHasher::new("adapter-example").u64(seed).rng();
        Self {
            vi: Mat::random(tokens, d, 1.0, &mut rng),
            vj: Mat::random(tokens, d, 1.0, &mut rng),
            vk: Mat::random(tokens, d, 1.0, &mut rng),
            target: (0..n_queries).map(|_| rng.random_range(0..vocab)).collect(),
        }
    }
}

/// Loss of the full composition: fusion, tokenizer, cross-entropy.
pub fn composed_loss(p: &AdapterParams, x: &Example) -> Result<f64, AdapterError> {
    let vext = adapter_forward(&x.vi, &x.vj, &x.vk, p)?;
    plan_ce_loss(&tokenize_visual(&vext, p)?, &x.target)
}

/// Loss and its gradient with respect to every parameter matrix.
pub fn composed_grad(p: &AdapterParams, x: &Example) -> Result<(f64, AdapterParams), AdapterError> {
    let (vext, ac) = adapter_forward_cached(&x.vi, &x.vj, &x.vk, p)?;
    let (logits, tc) = tokenize_cached(&vext, p)?;
    let loss = plan_ce_loss(&logits, &x.target)?;
    let mut g = p.zeros_like();
    let d = p.width();

    // tokenizer
    let dlogits = plan_ce_grad(&logits, &x.target);
    g.proj = tc.pooled.t().matmul(&dlogits);
    let dpooled = dlogits.matmul(&p.proj.t());
    let dattn = dpooled.matmul(&tc.values.t());
    let dvalues = tc.attn.t().matmul(&dpooled);
    let dscores = softmax_rows_backward(&tc.attn, &dattn).scale(1.0 / (d as f64).sqrt());
    g.queries = dscores.matmul(&tc.keys);
    let dkeys = dscores.t().matmul(&p.queries);
    g.tk = vext.t().matmul(&dkeys);
    g.tv = vext.t().matmul(&dvalues);
    let dvext = dkeys.matmul(&p.tk.t()).add(&dvalues.matmul(&p.tv.t()));

    // fusion block; the residual carries no parameters
    g.wl = ac.y.t().matmul(&dvext);
    let dy = dvext.matmul(&p.wl.t());
    g.wo = ac.heads_out.t().matmul(&dy);
    let dheads = dy.matmul(&p.wo.t());
    let dh = d / p.heads;
    let (mut dq, mut dk, mut dv) = (Mat::zeros(x.vk.rows, d), Mat::zeros(x.vk.rows, d), Mat::zeros(x.vk.rows, d));
    for (h, a) in ac.attn.iter().enumerate() {
        let s = h * dh;
        let (qh, kh, vh) = (ac.q.cols_slice(s, dh), ac.k.cols_slice(s, dh), ac.v.cols_slice(s, dh));
        let doh = dheads.cols_slice(s, dh);
        let da = doh.matmul(&vh.t());
        dv.set_cols(s, &a.t().matmul(&doh));
        let ds = softmax_rows_backward(a, &da).scale(1.0 / (dh as f64).sqrt());
        dq.set_cols(s, &ds.matmul(&kh));
        dk.set_cols(s, &ds.t().matmul(&qh));
    }
    g.wq = x.vi.t().matmul(&dq);
    g.wk = x.vj.t().matmul(&dk);
    g.wv = x.vk.t().matmul(&dv);
    Ok((loss, g))
}

/// Per-parameter worst relative error between analytic and central
/// finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Relative error with the denominator floored at `1e-4`, so entries whose
/// true gradient is essentially zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub fn grad_check(p: &AdapterParams, x: &Example, epsilon: f64) -> Result<GradCheck, AdapterError> {
    let (_, analytic) = composed_grad(p, x)?;
    let mut probe = p.clone();
    let mut per_param = Vec::with_capacity(PARAM_NAMES.len());
    for (slot, name) in PARAM_NAMES.iter().enumerate() {
        let n = analytic.mats()[slot].data.len();
        let mut worst = 0.0f64;
        for idx in 0..n {
            let orig = probe.mats()[slot].data[idx];
            probe.mats_mut()[slot].data[idx] = orig + epsilon;
            let up = composed_loss(&probe, x)?;
            probe.mats_mut()[slot].data[idx] = orig - epsilon;
            let down = composed_loss(&probe, x)?;
            probe.mats_mut()[slot].data[idx] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.mats()[slot].data[idx], numeric));
        }
        per_param.push((name.to_string(), worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheck { per_param, max_rel_error })
}

/// Gradient check on random parameters and inputs drawn from `seed`.
pub fn grad_check_seed(seed: u64, d: usize, heads: usize, tokens: usize, n_queries: usize, vocab: usize, epsilon: f64) -> Result<GradCheck, AdapterError> {
    let p = AdapterParams::random(seed, d, heads, n_queries, vocab)?;
    let x = Example::random(seed, tokens, d, n_queries, vocab);
    grad_check(&p, &x, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.shape() == b.shape() && a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn nulled_values_leave_the_residual() {
        let mut p = AdapterParams::random(3, 8, 2, 4, 5).unwrap();
        p.wv = Mat::zeros(8, 8);
        let x = Example::random(3, 6, 8, 4, 5);
        assert_eq!(adapter_forward(&x.vi, &x.vj, &x.vk, &p).unwrap(), x.vk);
    }

    #[test]
    fn single_token_matches_hand_products() {
        let p = AdapterParams::random(1, 4, 2, 2, 3).unwrap();
        let vk = Mat::from_rows(&[&[0.5, -1.0, 2.0, 0.25]]);
        let vi = Mat::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]);
        let vj = Mat::from_rows(&[&[-1.0, 0.0, 1.0, 0.0]]);
        let out = adapter_forward(&vi, &vj, &vk, &p).unwrap();
        // one key, so every attention weight is 1
        let mut expect = [0.0; 4];
        for (c, e) in expect.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..4 {
                let mut y = 0.0;
                for b in 0..4 {
                    let v: f64 = (0..4).map(|r| vk[(0, r)] * p.wv[(r, b)]).sum();
                    y += v * p.wo[(b, a)];
                }
                acc += y * p.wl[(a, c)];
            }
            *e = acc + vk[(0, c)];
        }
        assert!(close(&out, &Mat::from_rows(&[&expect]), 1e-12), "{out:?} vs {expect:?}");
    }

    #[test]
    fn shapes() {
        let p = AdapterParams::random(0, 8, 4, DEFAULT_QUERIES, 16).unwrap();
        let x = Example::random(0, 16, 8, DEFAULT_QUERIES, 16);
        let vext = adapter_forward(&x.vi, &x.vj, &x.vk, &p).unwrap();
        assert_eq!(vext.shape(), (16, 8));
        assert_eq!(tokenize_visual(&vext, &p).unwrap().shape(), (32, 16));
        let short = Example::random(1, 3, 8, DEFAULT_QUERIES, 16);
        assert_eq!(tokenize_visual(&short.vk, &p).unwrap().shape(), (32, 16));
        assert!(matches!(
            adapter_forward(&x.vi, &short.vj, &x.vk, &p),
            Err(AdapterError::ShapeMismatch { what: "vj", .. })
        ));
        assert!(matches!(AdapterParams::random(0, 6, 4, 2, 2), Err(AdapterError::Heads { .. })));
    }

    #[test]
    fn uniform_tokens_give_identical_rows() {
        let p = AdapterParams::random(5, 4, 2, 6, 3).unwrap();
        let row = [0.3, -0.2, 0.9, 0.1];
        let vext = Mat::from_rows(&[&row, &row, &row]);
        let out = tokenize_visual(&vext, &p).unwrap();
        for i in 1..out.rows {
            assert!(out.row(i).iter().zip(out.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn single_query_single_token_is_value_projection() {
        let mut p = AdapterParams::random(2, 4, 1, 1, 4).unwrap();
        p.proj = Mat::identity(4);
        let token = Mat::from_rows(&[&[1.0, -2.0, 0.5, 3.0]]);
        assert!(close(&tokenize_visual(&token, &p).unwrap(), &token.matmul(&p.tv), 1e-12));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SeedHasher::new("t").rng();
        let s = softmax_rows(&Mat::random(7, 9, 30.0, &mut rng));
        for i in 0..7 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_examples() {
        let uniform = Mat::zeros(4, 10);
        assert!((plan_ce_loss(&uniform, &[0, 3, 9, 2]).unwrap() - 10f64.ln()).abs() < 1e-12);

        let sharp = Mat::from_rows(&[&[60.0, 0.0, 0.0]]);
        assert!(plan_ce_loss(&sharp, &[0]).unwrap() < 1e-20);

        let e = std::f64::consts::E;
        let hand = Mat::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        let expect = (-(e / (e + 2.0)).ln() - (e * e / (e * e + 2.0)).ln()) / 2.0;
        assert!((plan_ce_loss(&hand, &[0, 1]).unwrap() - expect).abs() < 1e-12);

        assert_eq!(plan_ce_loss(&hand, &[0]), Err(AdapterError::LengthMismatch { logits: 2, targets: 1 }));
        assert!(matches!(plan_ce_loss(&hand, &[0, 3]), Err(AdapterError::TokenOutOfRange { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let a = grad_check_seed(0, 4, 2, 3, 3, 5, 1e-5).unwrap();
        assert!(a.max_rel_error < 1e-4, "{:?}", a.per_param);
        let b = grad_check_seed(0, 4, 2, 3, 3, 5, 1e-5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn confident_predictions_have_tiny_gradients() {
        let mut p = AdapterParams::random(4, 4, 2, 3, 5).unwrap();
        let mut x = Example::random(4, 3, 4, 3, 5);
        p.proj = p.proj.scale(200.0);
        let vext = adapter_forward(&x.vi, &x.vj, &x.vk, &p).unwrap();
        let logits = tokenize_visual(&vext, &p).unwrap();
        x.target = (0..logits.rows)
            .map(|i| (0..logits.cols).max_by(|&a, &b| logits[(i, a)].total_cmp(&logits[(i, b)])).unwrap())
            .collect();
        let (loss, g) = composed_grad(&p, &x).unwrap();
        assert!(loss < 1e-6, "{loss}");
        assert!(g.mats().iter().all(|m| m.max_abs() < 1e-4));
    }
}
