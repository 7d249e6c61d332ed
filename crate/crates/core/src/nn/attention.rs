use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::{join, softmax_rows, Linear, Matrix, Param, Parameters};

/// Multi-head scaled dot-product self-attention over stacked sequences.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    input: Matrix,
    qkv: Matrix,
    /// Row-stochastic attention matrices, indexed `sample * heads + head`.
    pub probs: Vec<Matrix>,
    context: Matrix,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        Self {
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.proj.outputs()
    }

    pub fn forward(&self, x: &ArrayView2<f64>, seq: usize) -> (Matrix, AttentionCache) {
        let dim = self.dim();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let batch = x.nrows() / seq;
        debug_assert_eq!(batch * seq, x.nrows());

        let qkv = self.qkv.forward(x);
        let mut context = Matrix::zeros((x.nrows(), dim));
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * head_dim;
                let q = qkv.slice(s![rows.clone(), c..c + head_dim]);
                let k = qkv.slice(s![rows.clone(), dim + c..dim + c + head_dim]);
                let v = qkv.slice(s![rows.clone(), 2 * dim + c..2 * dim + c + head_dim]);
                let mut p = q.dot(&k.t());
                p *= scale;
                softmax_rows(&mut p);
                context
                    .slice_mut(s![rows.clone(), c..c + head_dim])
                    .assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let out = self.proj.forward(&context.view());
        (
            out,
            AttentionCache {
                input: x.to_owned(),
                qkv,
                probs,
                context,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &ArrayView2<f64>, seq: usize) -> Matrix {
        let dim = self.dim();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let batch = dy.nrows() / seq;

        let d_context = self.proj.backward(&cache.context.view(), dy);
        let mut d_qkv = Array2::zeros(cache.qkv.raw_dim());
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * head_dim;
                let p = &cache.probs[b * self.heads + h];
                let q = cache.qkv.slice(s![rows.clone(), c..c + head_dim]);
                let k = cache.qkv.slice(s![rows.clone(), dim + c..dim + c + head_dim]);
                let v = cache
                    .qkv
                    .slice(s![rows.clone(), 2 * dim + c..2 * dim + c + head_dim]);
                let d_ctx = d_context.slice(s![rows.clone(), c..c + head_dim]);

                let d_v = p.t().dot(&d_ctx);
                let mut d_scores = d_ctx.dot(&v.t());
                for (mut ds, pr) in d_scores.rows_mut().into_iter().zip(p.rows()) {
                    let dot = ds.dot(&pr);
                    ds.zip_mut_with(&pr, |g, &pi| *g = pi * (*g - dot) * scale);
                }
                let d_q = d_scores.dot(&k);
                let d_k = d_scores.t().dot(&q);
                d_qkv.slice_mut(s![rows.clone(), c..c + head_dim]).assign(&d_q);
                d_qkv
                    .slice_mut(s![rows.clone(), dim + c..dim + c + head_dim])
                    .assign(&d_k);
                d_qkv
                    .slice_mut(s![rows.clone(), 2 * dim + c..2 * dim + c + head_dim])
                    .assign(&d_v);
            }
        }
        self.qkv.backward(&cache.input.view(), &d_qkv.view())
    }
}

impl AttentionCache {
    /// Attention of token 0 (the class token) over the remaining tokens for
    /// one sample, averaged over heads and renormalized to sum to one.
    pub fn class_token_attention(&self, sample: usize, heads: usize) -> Vec<f64> {
        let seq = self.probs[0].nrows();
        let mut acc = vec![0.0; seq - 1];
        for h in 0..heads {
            let row = self.probs[sample * heads + h].row(0);
            for (a, &p) in acc.iter_mut().zip(row.iter().skip(1)) {
                *a += p;
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        acc
    }
}

impl Parameters for MultiHeadAttention {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.qkv.visit(&join(prefix, "qkv"), out);
        self.proj.visit(&join(prefix, "proj"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.qkv.visit_mut(&join(prefix, "qkv"), out);
        self.proj.visit_mut(&join(prefix, "proj"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut attn = MultiHeadAttention::new(6, 2, &mut rng);
        let seq = 4;
        let x = Matrix::from_shape_simple_fn((2 * seq, 6), || rng.random_range(-1.0..1.0));
        let w = Matrix::from_shape_simple_fn((2 * seq, 6), || rng.random_range(-1.0..1.0));
        let loss = |m: &MultiHeadAttention, x: &Matrix| (m.forward(&x.view(), seq).0 * &w).sum();

        let (_, cache) = attn.forward(&x.view(), seq);
        let dx = attn.backward(&cache, &w.view(), seq);
        let h = 1e-6;
        for &(i, j) in &[(0, 0), (3, 5), (5, 2), (7, 1)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let n = (loss(&attn, &xp) - loss(&attn, &xm)) / (2.0 * h);
            assert!((dx[[i, j]] - n).abs() < 1e-7, "{} vs {n}", dx[[i, j]]);
        }
        for &(i, j) in &[(0, 0), (2, 7), (5, 16)] {
            let g = attn.qkv.weight.grad[[i, j]];
            let mut p = attn.clone();
            p.qkv.weight.value[[i, j]] += h;
            let mut m = attn.clone();
            m.qkv.weight.value[[i, j]] -= h;
            let n = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((g - n).abs() < 1e-7, "{g} vs {n}");
        }
    }

    #[test]
    fn sequences_do_not_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = MultiHeadAttention::new(4, 2, &mut rng);
        let x = Matrix::from_shape_simple_fn((6, 4), || rng.random_range(-1.0..1.0));
        let (y, _) = attn.forward(&x.view(), 3);
        let mut x2 = x.clone();
        x2.row_mut(4).fill(9.0);
        let (y2, _) = attn.forward(&x2.view(), 3);
        assert_eq!(y.slice(s![0..3, ..]), y2.slice(s![0..3, ..]));
    }

    #[test]
    fn class_token_attention_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let attn = MultiHeadAttention::new(8, 4, &mut rng);
        let x = Matrix::from_shape_simple_fn((10, 8), || rng.random_range(-1.0..1.0));
        let (_, cache) = attn.forward(&x.view(), 5);
        for s in 0..2 {
            let a = cache.class_token_attention(s, 4);
            assert_eq!(a.len(), 4);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
