//! The hierarchical vision transformer.
//!
//! ```text
//! image ─ patchify ─ backbone ─┬─ attribute branch 1 ─ c¹ ─ head ─ ŷ_attr₁ ─┐
//!                              ├─ ...                                       ├─ (c¹..cᴬ) ─ target branch ─ ŷ_tar
//!                              ├─ attribute branch A ─ cᴬ ─ head ─ ŷ_attrᴬ ─┘
//!                              └─ decoder ─ ŷ_mask (optional)
//! ```
//!
//! Every attribute branch is its own transformer encoder over the full
//! backbone sequence; its attribute vector `cᵃ` is the normalized class-token
//! output. The target branch only ever sees the `A` attribute vectors.

mod config;
mod output;

pub use config::ModelConfig;
pub use output::{BatchOutput, ModelOutput, Score};
pub(crate) use output::argmax;

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array3, Array4, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    join, sigmoid, BlockCache, Encoder, LayerNorm, LayerNormCache, Linear, Matrix, Param,
    Parameters,
};
use crate::schema::Scale;

const TOKEN_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct AttributeBranch {
    pub encoder: Encoder,
    pub norm: LayerNorm,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct TargetBranch {
    pub proj: Linear,
    pub cls_token: Param,
    pub pos_embed: Option<Param>,
    pub encoder: Encoder,
    pub norm: LayerNorm,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub encoder: Encoder,
    pub norm: LayerNorm,
    pub head: Linear,
}

/// Output of a single attribute branch for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeOutput {
    pub vector: Array1<f64>,
    pub score: Score,
    /// `[grid, grid]`, sums to one.
    pub attention: Matrix,
}

#[derive(Clone, Debug)]
pub struct HierViT {
    config: ModelConfig,
    pub patch_proj: Linear,
    pub cls_token: Param,
    pub pos_embed: Param,
    pub backbone: Encoder,
    pub branches: Vec<AttributeBranch>,
    pub target: TargetBranch,
    pub decoder: Option<Decoder>,
}

/// Intermediate activations kept by [`HierViT::forward_train`].
pub struct ForwardCache {
    batch: usize,
    patches: Matrix,
    backbone: Vec<BlockCache>,
    branches: Vec<BranchCache>,
    target: TargetCache,
    decoder: Option<DecoderCache>,
}

struct BranchCache {
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    vectors: Matrix,
}

struct TargetCache {
    inputs: Matrix,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    cls: Matrix,
}

struct DecoderCache {
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    normed: Matrix,
    masks: Array3<f64>,
}

/// Upstream gradients with respect to everything in a [`BatchOutput`].
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub attr_scores: Vec<Matrix>,
    /// Extra gradient on the attribute vectors, e.g. from the prototype loss.
    pub attr_vectors: Vec<Matrix>,
    pub target: Matrix,
    /// Gradient with respect to the post-sigmoid mask.
    pub masks: Option<Array3<f64>>,
}

impl OutputGrads {
    pub fn zeros_like(out: &BatchOutput) -> Self {
        Self {
            attr_scores: out
                .attr_scores
                .iter()
                .map(|m| Matrix::zeros(m.raw_dim()))
                .collect(),
            attr_vectors: out
                .attr_vectors
                .iter()
                .map(|m| Matrix::zeros(m.raw_dim()))
                .collect(),
            target: Matrix::zeros(out.target_scores.raw_dim()),
            masks: out.masks.as_ref().map(|m| Array3::zeros(m.raw_dim())),
        }
    }
}

impl HierViT {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.embed_dim;
        let (heads, ratio) = (config.heads, config.mlp_ratio);
        let a = config.num_attributes();

        let patch_proj = Linear::new(config.patch_dim(), d, &mut rng);
        let cls_token = Param::normal(1, d, TOKEN_INIT_STD, &mut rng);
        let pos_embed = Param::normal(config.num_patches() + 1, d, TOKEN_INIT_STD, &mut rng);
        let backbone = Encoder::new(config.backbone_layers, d, heads, ratio, &mut rng);

        let branches = config
            .attributes
            .iter()
            .map(|attr| AttributeBranch {
                encoder: Encoder::new(config.attr_layers_per_branch, d, heads, ratio, &mut rng),
                norm: LayerNorm::new(d),
                head: scoring_head(d, &attr.scale),
            })
            .collect();

        let target = TargetBranch {
            proj: Linear::new(d, d, &mut rng),
            cls_token: Param::normal(1, d, TOKEN_INIT_STD, &mut rng),
            pos_embed: config
                .target_positional_embedding
                .then(|| Param::normal(a + 1, d, TOKEN_INIT_STD, &mut rng)),
            encoder: Encoder::new(config.target_layers, d, heads, ratio, &mut rng),
            norm: LayerNorm::new(d),
            head: scoring_head(d, &config.target.scale),
        };

        let decoder = config.decoder_enabled.then(|| Decoder {
            encoder: Encoder::new(config.decoder_layers, d, heads, ratio, &mut rng),
            norm: LayerNorm::new(d),
            head: Linear::new(d, config.patch_size * config.patch_size, &mut rng),
        });

        Ok(Self {
            config,
            patch_proj,
            cls_token,
            pos_embed,
            backbone,
            branches,
            target,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn attr_scales(&self) -> Vec<&Scale> {
        self.config.attributes.iter().map(|a| &a.scale).collect()
    }

    fn seq_len(&self) -> usize {
        self.config.num_patches() + 1
    }

    fn check_images(&self, images: &ArrayView4<f64>) -> Result<()> {
        let c = &self.config;
        let shape = images.shape();
        if shape[1] != c.image_size || shape[2] != c.image_size || shape[3] != c.channels {
            return Err(Error::Config(format!(
                "expected images of shape [_, {s}, {s}, {}], got {:?}",
                c.channels,
                shape,
                s = c.image_size
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &Matrix) -> Result<()> {
        if tokens.nrows() != self.seq_len() || tokens.ncols() != self.config.embed_dim {
            return Err(Error::Config(format!(
                "expected token sequence [{}, {}], got {:?}",
                self.seq_len(),
                self.config.embed_dim,
                tokens.shape()
            )));
        }
        Ok(())
    }

    /// Flattens non-overlapping patches to rows `[batch * N, p * p * C]`,
    /// patches in raster order, pixels `(row, col, channel)` within a patch.
    pub fn extract_patches(&self, images: &ArrayView4<f64>) -> Result<Matrix> {
        self.check_images(images)?;
        let p = self.config.patch_size;
        let g = self.config.grid_size();
        let ch = self.config.channels;
        let n = self.config.num_patches();
        let mut out = Matrix::zeros((images.shape()[0] * n, self.config.patch_dim()));
        for (b, image) in images.outer_iter().enumerate() {
            for gy in 0..g {
                for gx in 0..g {
                    let mut row = out.row_mut(b * n + gy * g + gx);
                    let patch = image.slice(s![gy * p..(gy + 1) * p, gx * p..(gx + 1) * p, ..]);
                    for (dst, &v) in row.iter_mut().zip(patch.iter()) {
                        *dst = v;
                    }
                    debug_assert_eq!(patch.len(), p * p * ch);
                }
            }
        }
        Ok(out)
    }

    fn embed(&self, patches: &Matrix, batch: usize) -> Matrix {
        let n = self.config.num_patches();
        let projected = self.patch_proj.forward(&patches.view());
        let mut seq = Matrix::zeros((batch * (n + 1), self.config.embed_dim));
        for b in 0..batch {
            let base = b * (n + 1);
            let mut block = seq.slice_mut(s![base..base + n + 1, ..]);
            block.row_mut(0).assign(&self.cls_token.value.row(0));
            block
                .slice_mut(s![1.., ..])
                .assign(&projected.slice(s![b * n..(b + 1) * n, ..]));
            block += &self.pos_embed.value;
        }
        seq
    }

    /// Token sequence `[N + 1, D]` for one `[H, W, C]` image.
    pub fn patchify(&self, image: &ArrayView3<f64>) -> Result<Matrix> {
        let batch = image.to_owned().insert_axis(Axis(0));
        let patches = self.extract_patches(&batch.view())?;
        Ok(self.embed(&patches, 1))
    }

    /// Runs the backbone encoder stack over one token sequence.
    pub fn backbone_forward(&self, tokens: &Matrix) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        Ok(self.backbone.forward(&tokens.view(), self.seq_len()).0)
    }

    fn branch_batch(&self, a: usize, tokens: &Matrix, batch: usize) -> (Matrix, Matrix, BranchCache) {
        let seq = self.seq_len();
        let branch = &self.branches[a];
        let (h, blocks) = branch.encoder.forward(&tokens.view(), seq);
        let cls = h.select(Axis(0), &cls_rows(batch, seq));
        let (vectors, norm) = branch.norm.forward(&cls.view());
        let scores = branch.head.forward(&vectors.view());
        (
            vectors.clone(),
            scores,
            BranchCache {
                blocks,
                norm,
                vectors,
            },
        )
    }

    fn branch_attention(&self, cache: &BranchCache, batch: usize) -> Array3<f64> {
        let g = self.config.grid_size();
        let mut out = Array3::zeros((batch, g, g));
        for b in 0..batch {
            let weights = match cache.blocks.last() {
                Some(last) => last.attn.class_token_attention(b, self.config.heads),
                None => vec![1.0 / (g * g) as f64; g * g],
            };
            for (dst, w) in out.slice_mut(s![b, .., ..]).iter_mut().zip(weights) {
                *dst = w;
            }
        }
        out
    }

    /// Attention rollout for branch `a` of one sample: backbone attention
    /// maps (head-averaged, mixed half-and-half with the identity for the
    /// residual path) multiplied through, then the branch's class-token row.
    pub fn attention_rollout(&self, cache: &ForwardCache, a: usize, sample: usize) -> Result<Matrix> {
        if a >= cache.branches.len() || sample >= cache.batch {
            return Err(Error::Config(format!(
                "attribute {a} / sample {sample} out of range"
            )));
        }
        let seq = self.seq_len();
        let heads = self.config.heads;
        let mean_heads = |c: &BlockCache| {
            let mut m = Matrix::zeros((seq, seq));
            for h in 0..heads {
                m += &c.attn.probs[sample * heads + h];
            }
            m / heads as f64
        };
        let mut rollout = Matrix::eye(seq);
        for block in &cache.backbone {
            let mixed = (mean_heads(block) + Matrix::eye(seq)) * 0.5;
            rollout = mixed.dot(&rollout);
        }
        let branch = &cache.branches[a].blocks;
        for block in branch.iter().take(branch.len().saturating_sub(1)) {
            let mixed = (mean_heads(block) + Matrix::eye(seq)) * 0.5;
            rollout = mixed.dot(&rollout);
        }
        let row = match branch.last() {
            Some(last) => mean_heads(last).row(0).dot(&rollout),
            None => rollout.row(0).to_owned(),
        };
        let g = self.config.grid_size();
        let mut out = Matrix::from_shape_vec((g, g), row.iter().skip(1).cloned().collect())
            .expect("grid shape");
        let total = out.sum();
        if total > 0.0 {
            out /= total;
        }
        Ok(out)
    }

    /// Attribute vector, score and class-token attention of branch `a`.
    pub fn attribute_forward(&self, tokens: &Matrix, a: usize) -> Result<AttributeOutput> {
        self.check_tokens(tokens)?;
        if a >= self.branches.len() {
            return Err(Error::Config(format!(
                "attribute index {a} out of range (A = {})",
                self.branches.len()
            )));
        }
        let (vectors, scores, cache) = self.branch_batch(a, tokens, 1);
        let attention = self.branch_attention(&cache, 1).index_axis_move(Axis(0), 0);
        Ok(AttributeOutput {
            vector: vectors.row(0).to_owned(),
            score: Score::from_row(scores.row(0), &self.config.attributes.attributes[a].scale),
            attention,
        })
    }

    fn target_batch(&self, vectors: &[Matrix]) -> Result<(Matrix, TargetCache)> {
        let a = self.config.num_attributes();
        if vectors.len() != a {
            return Err(Error::Config(format!(
                "target branch expects {a} attribute vectors, got {}",
                vectors.len()
            )));
        }
        let batch = vectors[0].nrows();
        let d = self.config.embed_dim;
        if vectors.iter().any(|v| v.nrows() != batch || v.ncols() != d) {
            return Err(Error::Config("attribute vector shapes disagree".into()));
        }
        let t = &self.target;
        // sample-major stacking: row b * A + i holds attribute i of sample b
        let mut inputs = Matrix::zeros((batch * a, d));
        for (i, v) in vectors.iter().enumerate() {
            for b in 0..batch {
                inputs.row_mut(b * a + i).assign(&v.row(b));
            }
        }
        let projected = t.proj.forward(&inputs.view());
        let seq = a + 1;
        let mut tokens = Matrix::zeros((batch * seq, d));
        for b in 0..batch {
            let mut block = tokens.slice_mut(s![b * seq..(b + 1) * seq, ..]);
            block.row_mut(0).assign(&t.cls_token.value.row(0));
            block
                .slice_mut(s![1.., ..])
                .assign(&projected.slice(s![b * a..(b + 1) * a, ..]));
            if let Some(pos) = &t.pos_embed {
                block += &pos.value;
            }
        }
        let (h, blocks) = t.encoder.forward(&tokens.view(), seq);
        let cls = h.select(Axis(0), &cls_rows(batch, seq));
        let (cls, norm) = t.norm.forward(&cls.view());
        let scores = t.head.forward(&cls.view());
        Ok((
            scores,
            TargetCache {
                inputs,
                blocks,
                norm,
                cls,
            },
        ))
    }

    /// Target scores `[batch, head_width]` from `A` matrices of attribute
    /// vectors `[batch, D]`.
    pub fn target_forward_batch(&self, vectors: &[Matrix]) -> Result<Matrix> {
        Ok(self.target_batch(vectors)?.0)
    }

    /// Target score from one sample's stacked attribute vectors `[A, D]`.
    pub fn target_forward(&self, attr_vectors: &Matrix) -> Result<Score> {
        if attr_vectors.nrows() != self.config.num_attributes() {
            return Err(Error::Config(format!(
                "expected {} attribute vectors, got {}",
                self.config.num_attributes(),
                attr_vectors.nrows()
            )));
        }
        let vectors: Vec<Matrix> = attr_vectors
            .rows()
            .into_iter()
            .map(|r| r.to_owned().insert_axis(Axis(0)))
            .collect();
        let scores = self.target_forward_batch(&vectors)?;
        Ok(Score::from_row(scores.row(0), &self.config.target.scale))
    }

    fn decoder_batch(&self, tokens: &Matrix, batch: usize) -> Option<(Array3<f64>, DecoderCache)> {
        let decoder = self.decoder.as_ref()?;
        let n = self.config.num_patches();
        let (p, g, size) = (
            self.config.patch_size,
            self.config.grid_size(),
            self.config.image_size,
        );
        let patch_tokens = tokens.select(Axis(0), &patch_rows(batch, n + 1));
        let (h, blocks) = decoder.encoder.forward(&patch_tokens.view(), n);
        let (normed, norm) = decoder.norm.forward(&h.view());
        let logits = decoder.head.forward(&normed.view());
        let mut masks = Array3::zeros((batch, size, size));
        for b in 0..batch {
            for gy in 0..g {
                for gx in 0..g {
                    let row = logits.row(b * n + gy * g + gx);
                    let mut dst = masks.slice_mut(s![b, gy * p..(gy + 1) * p, gx * p..(gx + 1) * p]);
                    for (d, &z) in dst.iter_mut().zip(row.iter()) {
                        *d = sigmoid(z);
                    }
                }
            }
        }
        Some((
            masks.clone(),
            DecoderCache {
                blocks,
                norm,
                normed,
                masks,
            },
        ))
    }

    /// Segmentation mask `[S, S]` from one backbone output sequence.
    pub fn decoder_forward(&self, tokens: &Matrix) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        match self.decoder_batch(tokens, 1) {
            Some((m, _)) => Ok(m.index_axis_move(Axis(0), 0)),
            None => Err(Error::Usage("decoder is disabled in this model".into())),
        }
    }

    pub fn forward(&self, image: &ArrayView3<f64>) -> Result<ModelOutput> {
        let batch = image.to_owned().insert_axis(Axis(0));
        let out = self.forward_batch(&batch.view())?;
        Ok(out.sample(0, &self.attr_scales(), &self.config.target.scale))
    }

    pub fn forward_batch(&self, images: &ArrayView4<f64>) -> Result<BatchOutput> {
        Ok(self.forward_train(images)?.0)
    }

    /// Batched forward pass that also keeps what [`HierViT::backward`] needs.
    pub fn forward_train(&self, images: &ArrayView4<f64>) -> Result<(BatchOutput, ForwardCache)> {
        let batch = images.shape()[0];
        let patches = self.extract_patches(images)?;
        let embedded = self.embed(&patches, batch);
        let (tokens, backbone) = self.backbone.forward(&embedded.view(), self.seq_len());

        let mut attr_vectors = Vec::with_capacity(self.branches.len());
        let mut attr_scores = Vec::with_capacity(self.branches.len());
        let mut attention = Vec::with_capacity(self.branches.len());
        let mut branches = Vec::with_capacity(self.branches.len());
        for a in 0..self.branches.len() {
            let (v, sc, cache) = self.branch_batch(a, &tokens, batch);
            attention.push(self.branch_attention(&cache, batch));
            attr_vectors.push(v);
            attr_scores.push(sc);
            branches.push(cache);
        }
        let (target_scores, target) = self.target_batch(&attr_vectors)?;
        let (masks, decoder) = match self.decoder_batch(&tokens, batch) {
            Some((m, c)) => (Some(m), Some(c)),
            None => (None, None),
        };
        Ok((
            BatchOutput {
                attr_vectors,
                attr_scores,
                target_scores,
                masks,
                attention,
            },
            ForwardCache {
                batch,
                patches,
                backbone,
                branches,
                target,
                decoder,
            },
        ))
    }

    /// Backpropagates `grads` through the whole network, accumulating into
    /// every parameter's gradient.
    pub fn backward(&mut self, cache: &ForwardCache, grads: &OutputGrads) {
        let batch = cache.batch;
        let a_count = self.branches.len();
        let d = self.config.embed_dim;
        let seq = self.seq_len();
        let n = self.config.num_patches();

        let mut d_vectors = grads.attr_vectors.clone();

        // target branch
        {
            let t = &mut self.target;
            let tc = &cache.target;
            let tseq = a_count + 1;
            let d_cls = t.head.backward(&tc.cls.view(), &grads.target.view());
            let d_cls = t.norm.backward(&tc.norm, &d_cls.view());
            let mut d_h = Matrix::zeros((batch * tseq, d));
            scatter_rows(&mut d_h, &cls_rows(batch, tseq), &d_cls);
            let d_tokens = t.encoder.backward(&tc.blocks, &d_h.view(), tseq);
            let mut d_projected = Matrix::zeros((batch * a_count, d));
            for b in 0..batch {
                let block = d_tokens.slice(s![b * tseq..(b + 1) * tseq, ..]);
                t.cls_token.grad += &block.slice(s![0..1, ..]);
                if let Some(pos) = &mut t.pos_embed {
                    pos.grad += &block;
                }
                d_projected
                    .slice_mut(s![b * a_count..(b + 1) * a_count, ..])
                    .assign(&block.slice(s![1.., ..]));
            }
            let d_inputs = t.proj.backward(&tc.inputs.view(), &d_projected.view());
            for (i, dv) in d_vectors.iter_mut().enumerate() {
                for b in 0..batch {
                    let mut row = dv.row_mut(b);
                    row += &d_inputs.row(b * a_count + i);
                }
            }
        }

        let mut d_tokens = Matrix::zeros((batch * seq, d));

        // attribute branches
        for (a, (branch, bc)) in self.branches.iter_mut().zip(&cache.branches).enumerate() {
            let mut dv = branch
                .head
                .backward(&bc.vectors.view(), &grads.attr_scores[a].view());
            dv += &d_vectors[a];
            let d_cls = branch.norm.backward(&bc.norm, &dv.view());
            let mut d_h = Matrix::zeros((batch * seq, d));
            scatter_rows(&mut d_h, &cls_rows(batch, seq), &d_cls);
            d_tokens += &branch.encoder.backward(&bc.blocks, &d_h.view(), seq);
        }

        // decoder
        if let (Some(decoder), Some(dc), Some(d_masks)) =
            (&mut self.decoder, &cache.decoder, &grads.masks)
        {
            let p = self.config.patch_size;
            let g = self.config.grid_size();
            let mut d_logits = Matrix::zeros((batch * n, p * p));
            for b in 0..batch {
                for gy in 0..g {
                    for gx in 0..g {
                        let region = s![b, gy * p..(gy + 1) * p, gx * p..(gx + 1) * p];
                        let m = dc.masks.slice(region);
                        let dm = d_masks.slice(region);
                        let mut row = d_logits.row_mut(b * n + gy * g + gx);
                        for ((dst, &mv), &g) in row.iter_mut().zip(m.iter()).zip(dm.iter()) {
                            *dst = g * mv * (1.0 - mv);
                        }
                    }
                }
            }
            let d_normed = decoder.head.backward(&dc.normed.view(), &d_logits.view());
            let d_h = decoder.norm.backward(&dc.norm, &d_normed.view());
            let d_patch_tokens = decoder.encoder.backward(&dc.blocks, &d_h.view(), n);
            for (i, row) in patch_rows(batch, seq).into_iter().enumerate() {
                let mut dst = d_tokens.row_mut(row);
                dst += &d_patch_tokens.row(i);
            }
        }

        // backbone and embedding
        let d_embedded = self.backbone.backward(&cache.backbone, &d_tokens.view(), seq);
        let mut d_projected = Matrix::zeros((batch * n, d));
        for b in 0..batch {
            let block = d_embedded.slice(s![b * seq..(b + 1) * seq, ..]);
            self.pos_embed.grad += &block;
            self.cls_token.grad += &block.slice(s![0..1, ..]);
            d_projected
                .slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&block.slice(s![1.., ..]));
        }
        self.patch_proj
            .backward_params(&cache.patches.view(), &d_projected.view());
    }

    /// Copies externally supplied arrays (e.g. pre-trained backbone weights)
    /// into parameters of the same hierarchical name. Returns how many were
    /// loaded. With `strict`, every name must exist in the model.
    pub fn import_weights(&mut self, weights: &BTreeMap<String, Matrix>, strict: bool) -> Result<usize> {
        let mut params: BTreeMap<String, &mut Param> = self.named_params_mut().into_iter().collect();
        let mut loaded = 0;
        for (name, value) in weights {
            match params.get_mut(name) {
                Some(p) if p.value.shape() == value.shape() => {
                    p.value.assign(value);
                    loaded += 1;
                }
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch for {name}: model {:?}, supplied {:?}",
                        p.value.shape(),
                        value.shape()
                    )))
                }
                None if strict => {
                    return Err(Error::Checkpoint(format!("unknown parameter {name}")))
                }
                None => {}
            }
        }
        Ok(loaded)
    }
}

fn scoring_head(d: usize, scale: &Scale) -> Linear {
    // zero weights: the first optimizer steps cannot swing the scores far
    let mut head = Linear::zeroed(d, scale.head_width());
    if let Scale::Ordinal { lo, hi } = scale {
        // start regressing from the middle of the rating range
        head.bias.value.fill((*lo + *hi) as f64 / 2.0);
    }
    head
}

fn cls_rows(batch: usize, seq: usize) -> Vec<usize> {
    (0..batch).map(|b| b * seq).collect()
}

fn patch_rows(batch: usize, seq: usize) -> Vec<usize> {
    (0..batch)
        .flat_map(|b| (1..seq).map(move |i| b * seq + i))
        .collect()
}

fn scatter_rows(dst: &mut Matrix, rows: &[usize], src: &Matrix) {
    for (&r, row) in rows.iter().zip(src.rows()) {
        dst.row_mut(r).assign(&row);
    }
}

/// Stacks `[H, W, C]` images into a batch.
pub fn stack_images(images: &[ArrayView3<f64>]) -> Array4<f64> {
    let views: Vec<_> = images.iter().map(|i| i.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("images share a shape")
}

impl Parameters for AttributeBranch {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.norm.visit(&join(prefix, "norm"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.norm.visit_mut(&join(prefix, "norm"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

impl Parameters for TargetBranch {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.proj.visit(&join(prefix, "proj"), out);
        out.push((join(prefix, "cls_token"), &self.cls_token));
        if let Some(p) = &self.pos_embed {
            out.push((join(prefix, "pos_embed"), p));
        }
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.norm.visit(&join(prefix, "norm"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.proj.visit_mut(&join(prefix, "proj"), out);
        out.push((join(prefix, "cls_token"), &mut self.cls_token));
        if let Some(p) = &mut self.pos_embed {
            out.push((join(prefix, "pos_embed"), p));
        }
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.norm.visit_mut(&join(prefix, "norm"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

impl Parameters for Decoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.norm.visit(&join(prefix, "norm"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.norm.visit_mut(&join(prefix, "norm"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

impl Parameters for HierViT {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.patch_proj.visit(&join(prefix, "patch_proj"), out);
        out.push((join(prefix, "cls_token"), &self.cls_token));
        out.push((join(prefix, "pos_embed"), &self.pos_embed));
        self.backbone.visit(&join(prefix, "backbone"), out);
        for (branch, attr) in self.branches.iter().zip(self.config.attributes.iter()) {
            branch.visit(&join(prefix, &format!("attr.{}", attr.name)), out);
        }
        self.target.visit(&join(prefix, "target"), out);
        if let Some(dec) = &self.decoder {
            dec.visit(&join(prefix, "decoder"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.patch_proj.visit_mut(&join(prefix, "patch_proj"), out);
        out.push((join(prefix, "cls_token"), &mut self.cls_token));
        out.push((join(prefix, "pos_embed"), &mut self.pos_embed));
        self.backbone.visit_mut(&join(prefix, "backbone"), out);
        for (branch, attr) in self.branches.iter_mut().zip(self.config.attributes.iter()) {
            branch.visit_mut(&join(prefix, &format!("attr.{}", attr.name)), out);
        }
        self.target.visit_mut(&join(prefix, "target"), out);
        if let Some(dec) = &mut self.decoder {
            dec.visit_mut(&join(prefix, "decoder"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Attribute, AttributeSchema, TargetSpec};
    use ndarray::Array3;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            channels: 1,
            embed_dim: 8,
            heads: 2,
            mlp_ratio: 2,
            backbone_layers: 1,
            attr_layers_per_branch: 1,
            target_layers: 1,
            decoder_enabled: true,
            decoder_layers: 1,
            target_positional_embedding: false,
            init_seed: 4,
            attributes: AttributeSchema::new(vec![
                Attribute::new("round", Scale::ordinal(1, 5)),
                Attribute::new("color", Scale::nominal(["a", "b", "c"])),
            ])
            .unwrap(),
            target: TargetSpec::new("t", Scale::ordinal(1, 5)),
        }
    }

    #[test]
    fn patch_order_is_raster() {
        let model = HierViT::new(tiny()).unwrap();
        let img = Array3::from_shape_fn((8, 8, 1), |(y, x, _)| (y * 8 + x) as f64);
        let batch = img.insert_axis(Axis(0));
        let patches = model.extract_patches(&batch.view()).unwrap();
        assert_eq!(patches.shape(), &[4, 16]);
        assert_eq!(patches[[1, 0]], 4.0); // patch (0,1) starts at column 4
        assert_eq!(patches[[2, 0]], 32.0); // patch (1,0) starts at row 4
        assert_eq!(patches[[3, 5]], 4.0 * 8.0 + 4.0 + 8.0 + 1.0);
    }

    #[test]
    fn single_sample_ops_compose_to_forward() {
        let model = HierViT::new(tiny()).unwrap();
        let img = Array3::from_shape_fn((8, 8, 1), |(y, x, _)| ((y * 3 + x) % 5) as f64 / 5.0);
        let full = model.forward(&img.view()).unwrap();
        let tokens = model.backbone_forward(&model.patchify(&img.view()).unwrap()).unwrap();
        let mut rows = Vec::new();
        for a in 0..2 {
            let out = model.attribute_forward(&tokens, a).unwrap();
            assert_eq!(out.score, full.attr_scores[a]);
            assert_eq!(out.attention, full.attr_attention[a]);
            rows.push(out.vector.insert_axis(Axis(0)));
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).unwrap();
        assert_eq!(stacked, full.attr_vectors);
        assert_eq!(model.target_forward(&stacked).unwrap(), full.target_score);
        assert_eq!(&model.decoder_forward(&tokens).unwrap(), full.mask.as_ref().unwrap());
        assert!(matches!(model.attribute_forward(&tokens, 2), Err(Error::Config(_))));
        assert!(matches!(full.attr_scores[1], Score::Logits(ref l) if l.len() == 3));
    }

    #[test]
    fn decoder_disabled_is_usage_error() {
        let cfg = ModelConfig {
            decoder_enabled: false,
            ..tiny()
        };
        let model = HierViT::new(cfg).unwrap();
        let img = Array3::zeros((8, 8, 1));
        let tokens = model.patchify(&img.view()).unwrap();
        assert!(matches!(model.decoder_forward(&tokens), Err(Error::Usage(_))));
        assert!(model.forward(&img.view()).unwrap().mask.is_none());
    }

    #[test]
    fn wrong_image_shape_is_config_error() {
        let model = HierViT::new(tiny()).unwrap();
        let img = Array3::zeros((9, 9, 1));
        assert!(matches!(model.forward(&img.view()), Err(Error::Config(_))));
        let img = Array3::zeros((8, 8, 3));
        assert!(matches!(model.patchify(&img.view()), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_names_are_unique() {
        let model = HierViT::new(tiny()).unwrap();
        let names: Vec<_> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"attr.color.head.weight".to_string()));
        assert!(names.contains(&"decoder.encoder.0.attn.qkv.weight".to_string()));
    }

    #[test]
    fn import_weights_checks_shapes() {
        let mut model = HierViT::new(tiny()).unwrap();
        let mut w = BTreeMap::new();
        w.insert("cls_token".to_string(), Matrix::ones((1, 8)));
        assert_eq!(model.import_weights(&w, true).unwrap(), 1);
        assert_eq!(model.cls_token.value, Matrix::ones((1, 8)));
        w.insert("cls_token".to_string(), Matrix::ones((1, 9)));
        assert!(model.import_weights(&w, false).is_err());
        let mut w = BTreeMap::new();
        w.insert("nope".to_string(), Matrix::ones((1, 1)));
        assert_eq!(model.import_weights(&w, false).unwrap(), 0);
        assert!(model.import_weights(&w, true).is_err());
    }
}
