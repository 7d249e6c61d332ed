use ndarray::ArrayView2;
use rand::Rng;

use super::{
    gelu, gelu_backward, join, AttentionCache, LayerNorm, LayerNormCache, Linear, Matrix,
    MultiHeadAttention, Param, Parameters,
};

/// Pre-norm transformer encoder layer:
/// `x + MHSA(LN(x))`, then `x + MLP(LN(x))` with a GELU MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    norm1: LayerNormCache,
    pub attn: AttentionCache,
    norm2: LayerNormCache,
    mlp_in: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(dim, dim * mlp_ratio, rng),
            fc2: Linear::new(dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>, seq: usize) -> (Matrix, BlockCache) {
        let (h1, norm1) = self.norm1.forward(x);
        let (a, attn) = self.attn.forward(&h1.view(), seq);
        let x2 = &a + x;
        let (mlp_in, norm2) = self.norm2.forward(&x2.view());
        let hidden_pre = self.fc1.forward(&mlp_in.view());
        let hidden = gelu(&hidden_pre);
        let y = self.fc2.forward(&hidden.view()) + &x2;
        (
            y,
            BlockCache {
                norm1,
                attn,
                norm2,
                mlp_in,
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &ArrayView2<f64>, seq: usize) -> Matrix {
        let d_hidden = self.fc2.backward(&cache.hidden.view(), dy);
        let d_pre = gelu_backward(&cache.hidden_pre, &d_hidden);
        let d_mlp_in = self.fc1.backward(&cache.mlp_in.view(), &d_pre.view());
        let mut dx2 = self.norm2.backward(&cache.norm2, &d_mlp_in.view());
        dx2 += dy;
        let d_h1 = self.attn.backward(&cache.attn, &dx2.view(), seq);
        let mut dx = self.norm1.backward(&cache.norm1, &d_h1.view());
        dx += &dx2;
        dx
    }

    /// Zeroes the attention and MLP output projections, turning the block
    /// into the identity map.
    pub fn zero_output_projections(&mut self) {
        for lin in [&mut self.attn.proj, &mut self.fc2] {
            lin.weight.value.fill(0.0);
            lin.bias.value.fill(0.0);
        }
    }
}

impl Parameters for TransformerBlock {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.attn.visit(&join(prefix, "attn"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.norm1.visit_mut(&join(prefix, "norm1"), out);
        self.attn.visit_mut(&join(prefix, "attn"), out);
        self.norm2.visit_mut(&join(prefix, "norm2"), out);
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}

/// A stack of [`TransformerBlock`]s.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<TransformerBlock>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        layers: usize,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: (0..layers)
                .map(|_| TransformerBlock::new(dim, heads, mlp_ratio, rng))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn forward(&self, x: &ArrayView2<f64>, seq: usize) -> (Matrix, Vec<BlockCache>) {
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&h.view(), seq);
            h = next;
            caches.push(cache);
        }
        (h, caches)
    }

    pub fn backward(&mut self, caches: &[BlockCache], dy: &ArrayView2<f64>, seq: usize) -> Matrix {
        let mut d = dy.to_owned();
        for (block, cache) in self.blocks.iter_mut().zip(caches).rev() {
            d = block.backward(cache, &d.view(), seq);
        }
        d
    }
}

impl Parameters for Encoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.blocks.visit(prefix, out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.blocks.visit_mut(prefix, out);
    }
}
