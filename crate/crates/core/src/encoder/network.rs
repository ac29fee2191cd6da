//! 1-D residual encoder with a projection head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, Act, ChannelNorm,
    Conv1d, Dense, NormCache,
};
use super::params::{grad_slice, EncoderParams, ParamId, ParamInfo};
use super::scalar::Scalar;
use super::{l2_normalize_backward, l2_normalize_into, EncoderConfig};
use crate::error::{param_err, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv1d,
    norm1: ChannelNorm,
    conv2: Conv1d,
    norm2: ChannelNorm,
    shortcut: Option<(Conv1d, ChannelNorm)>,
}

#[derive(Debug)]
struct BlockCache<T> {
    input: Act<T>,
    norm1: NormCache<T>,
    mid: Act<T>,
    norm2: NormCache<T>,
    short_norm: Option<NormCache<T>>,
    output: Act<T>,
}

/// Intermediate values retained by [`Encoder::forward_train`].
#[derive(Debug)]
pub struct ForwardCache<T> {
    input: Act<T>,
    stem_norm: NormCache<T>,
    blocks: Vec<BlockCache<T>>,
    features: Vec<T>,
    hidden: Vec<T>,
    pre_norm: Vec<T>,
    rows: usize,
}

/// Per-row outputs: backbone features and normalized projections.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub features: Matrix<T>,
    pub projections: Matrix<T>,
}

/// Architecture plus parameter layout; holds no weights.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    stem: Conv1d,
    stem_norm: ChannelNorm,
    blocks: Vec<Block>,
    dense1: Dense,
    dense2: Dense,
    layout: Vec<ParamInfo>,
}

struct LayoutBuilder {
    entries: Vec<ParamInfo>,
    offset: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let len = shape.iter().product();
        self.entries.push(ParamInfo {
            name,
            shape,
            offset: self.offset,
            len,
        });
        self.offset += len;
        ParamId(self.entries.len() - 1)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Conv1d {
        Conv1d {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            weight: self.add(format!("{name}.weight"), vec![cout, cin, kernel]),
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> ChannelNorm {
        ChannelNorm {
            channels,
            gamma: self.add(format!("{name}.gamma"), vec![channels]),
            beta: self.add(format!("{name}.beta"), vec![channels]),
        }
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Dense {
        Dense {
            inputs,
            outputs,
            weight: self.add(format!("{name}.weight"), vec![outputs, inputs]),
            bias: self.add(format!("{name}.bias"), vec![outputs]),
        }
    }
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut lb = LayoutBuilder {
            entries: Vec::new(),
            offset: 0,
        };
        let c0 = cfg.stage_channels[0];
        let stem = lb.conv("stem.conv", 1, c0, cfg.stem_kernel, cfg.stem_stride);
        let stem_norm = lb.norm("stem.norm", c0);

        let mut blocks = Vec::new();
        let mut cin = c0;
        for (s, &width) in cfg.stage_channels.iter().enumerate() {
            for j in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && j == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{j}");
                let conv1 = lb.conv(&format!("{name}.conv1"), cin, width, cfg.block_kernel, stride);
                let norm1 = lb.norm(&format!("{name}.norm1"), width);
                let conv2 = lb.conv(&format!("{name}.conv2"), width, width, cfg.block_kernel, 1);
                let norm2 = lb.norm(&format!("{name}.norm2"), width);
                let shortcut = (stride != 1 || cin != width).then(|| {
                    (
                        lb.conv(&format!("{name}.shortcut.conv"), cin, width, 1, stride),
                        lb.norm(&format!("{name}.shortcut.norm"), width),
                    )
                });
                blocks.push(Block {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    shortcut,
                });
                cin = width;
            }
        }
        let dense1 = lb.dense("head.dense1", cfg.proj_dims[0], cfg.proj_dims[1]);
        let dense2 = lb.dense("head.dense2", cfg.proj_dims[1], cfg.proj_dims[2]);
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stem_norm,
            blocks,
            dense1,
            dense2,
            layout: lb.entries,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &[ParamInfo] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.iter().map(|e| e.len).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn projection_dim(&self) -> usize {
        self.cfg.proj_dims[2]
    }

    /// He-normal convolution and dense weights, unit norm scales, zero offsets.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> EncoderParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = EncoderParams::empty();
        for e in &self.layout {
            let data: Vec<T> = if e.name.ends_with(".gamma") {
                vec![T::one(); e.len]
            } else if e.name.ends_with(".beta") || e.name.ends_with(".bias") {
                vec![T::zero(); e.len]
            } else {
                let fan_in: usize = e.shape[1..].iter().product();
                let gain = if e.name.starts_with("head.dense2") { 1.0 } else { 2.0 };
                let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
                (0..e.len).map(|_| T::of(dist.sample(&mut rng))).collect()
            };
            params.register(e.name.clone(), e.shape.clone(), data);
        }
        params
    }

    /// Checks that `params` has exactly this encoder's layout.
    pub fn check_params<T: Scalar>(&self, params: &EncoderParams<T>) -> Result<()> {
        if params.entries() != self.layout.as_slice() {
            return param_err("parameter registry does not match the encoder architecture");
        }
        Ok(())
    }

    fn input_act<T: Scalar>(&self, batch: &Matrix<T>) -> Result<Act<T>> {
        if batch.cols() != self.cfg.input_len {
            return param_err(format!(
                "batch rows have length {}, encoder expects {}",
                batch.cols(),
                self.cfg.input_len
            ));
        }
        if batch.rows() == 0 {
            return param_err("empty batch");
        }
        Ok(Act {
            c: 1,
            b: batch.rows(),
            l: batch.cols(),
            data: batch.as_slice().to_vec(),
        })
    }

    pub fn forward<T: Scalar>(&self, params: &EncoderParams<T>, batch: &Matrix<T>) -> Result<EncoderOutput<T>> {
        Ok(self.forward_train(params, batch)?.0)
    }

    /// Backbone features only (no projection head), as used for export.
    pub fn features<T: Scalar>(&self, params: &EncoderParams<T>, batch: &Matrix<T>) -> Result<Matrix<T>> {
        let x = self.input_act(batch)?;
        let (_, last) = self.backbone(params, x, false);
        Matrix::from_vec(batch.rows(), self.feature_dim(), global_avg_pool(&last))
    }

    fn backbone<T: Scalar>(
        &self,
        params: &EncoderParams<T>,
        x: Act<T>,
        keep: bool,
    ) -> (Option<(Act<T>, NormCache<T>, Vec<BlockCache<T>>)>, Act<T>) {
        let h = self.stem.forward(params.get(self.stem.weight), &x);
        let (mut h, stem_cache) = self.stem_norm.forward(
            params.get(self.stem_norm.gamma),
            params.get(self.stem_norm.beta),
            &h,
        );
        relu_inplace(&mut h.data);

        let mut caches = Vec::new();
        for blk in &self.blocks {
            let input = h;
            let a = blk.conv1.forward(params.get(blk.conv1.weight), &input);
            let (mut mid, norm1) =
                blk.norm1
                    .forward(params.get(blk.norm1.gamma), params.get(blk.norm1.beta), &a);
            relu_inplace(&mut mid.data);
            let b = blk.conv2.forward(params.get(blk.conv2.weight), &mid);
            let (mut out, norm2) =
                blk.norm2
                    .forward(params.get(blk.norm2.gamma), params.get(blk.norm2.beta), &b);
            let short_norm = match &blk.shortcut {
                Some((conv, norm)) => {
                    let s = conv.forward(params.get(conv.weight), &input);
                    let (s, cache) = norm.forward(params.get(norm.gamma), params.get(norm.beta), &s);
                    out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += *v);
                    Some(cache)
                }
                None => {
                    out.data.iter_mut().zip(&input.data).for_each(|(o, v)| *o += *v);
                    None
                }
            };
            relu_inplace(&mut out.data);
            if keep {
                caches.push(BlockCache {
                    input,
                    norm1,
                    mid,
                    norm2,
                    short_norm,
                    output: out.clone(),
                });
            }
            h = out;
        }
        let kept = keep.then_some((x, stem_cache, caches));
        (kept, h)
    }

    /// Forward pass retaining everything [`Encoder::backward`] needs.
    pub fn forward_train<T: Scalar>(
        &self,
        params: &EncoderParams<T>,
        batch: &Matrix<T>,
    ) -> Result<(EncoderOutput<T>, ForwardCache<T>)> {
        self.check_params(params)?;
        let rows = batch.rows();
        let x = self.input_act(batch)?;
        let (kept, last) = self.backbone(params, x, true);
        let (input, stem_norm, blocks) = kept.expect("caches requested");
        let features = global_avg_pool(&last);

        let mut hidden = self.dense1.forward(
            params.get(self.dense1.weight),
            params.get(self.dense1.bias),
            &features,
            rows,
        );
        relu_inplace(&mut hidden);
        let pre_norm = self.dense2.forward(
            params.get(self.dense2.weight),
            params.get(self.dense2.bias),
            &hidden,
            rows,
        );
        let out_dim = self.projection_dim();
        let mut proj = vec![T::zero(); pre_norm.len()];
        let eps = T::of(self.cfg.eps_norm);
        for r in 0..rows {
            l2_normalize_into(&pre_norm[r * out_dim..][..out_dim], eps, &mut proj[r * out_dim..][..out_dim]);
        }
        let output = EncoderOutput {
            features: Matrix::from_vec(rows, self.feature_dim(), features.clone())?,
            projections: Matrix::from_vec(rows, out_dim, proj)?,
        };
        Ok((
            output,
            ForwardCache {
                input,
                stem_norm,
                blocks,
                features,
                hidden,
                pre_norm,
                rows,
            },
        ))
    }

    /// Parameter gradients given the loss gradient w.r.t. the normalized projections.
    pub fn backward<T: Scalar>(
        &self,
        params: &EncoderParams<T>,
        cache: &ForwardCache<T>,
        d_proj: &Matrix<T>,
    ) -> Vec<T> {
        let mut grads = params.zeros_like();
        let layout = params.entries();
        let rows = cache.rows;
        let out_dim = self.projection_dim();
        let eps = T::of(self.cfg.eps_norm);

        let mut d_pre = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            l2_normalize_backward(
                &cache.pre_norm[r * out_dim..][..out_dim],
                d_proj.row(r),
                eps,
                &mut d_pre[r * out_dim..][..out_dim],
            );
        }

        let (dw, db) = two_grads(layout, &mut grads, self.dense2.weight, self.dense2.bias);
        let mut d_hidden =
            self.dense2
                .backward(params.get(self.dense2.weight), &cache.hidden, &d_pre, rows, dw, db);
        relu_backward(&cache.hidden, &mut d_hidden);
        let (dw, db) = two_grads(layout, &mut grads, self.dense1.weight, self.dense1.bias);
        let d_feat =
            self.dense1
                .backward(params.get(self.dense1.weight), &cache.features, &d_hidden, rows, dw, db);

        let last = cache.blocks.last().map(|b| &b.output);
        let (c, l) = match last {
            Some(a) => (a.c, a.l),
            None => unreachable!("encoder has at least one block"),
        };
        let mut d = global_avg_pool_backward(&d_feat, c, rows, l);

        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            relu_backward(&bc.output.data, &mut d.data);
            let d_sum = d;

            let (dg, dbeta) = two_grads(layout, &mut grads, blk.norm2.gamma, blk.norm2.beta);
            let d_b = blk.norm2.backward(params.get(blk.norm2.gamma), &bc.norm2, &d_sum, dg, dbeta);
            let dw = grad_slice(layout, &mut grads, blk.conv2.weight);
            let mut d_mid = blk.conv2.backward(params.get(blk.conv2.weight), &bc.mid, &d_b, dw);
            relu_backward(&bc.mid.data, &mut d_mid.data);
            let (dg, dbeta) = two_grads(layout, &mut grads, blk.norm1.gamma, blk.norm1.beta);
            let d_a = blk.norm1.backward(params.get(blk.norm1.gamma), &bc.norm1, &d_mid, dg, dbeta);
            let dw = grad_slice(layout, &mut grads, blk.conv1.weight);
            let mut d_in = blk.conv1.backward(params.get(blk.conv1.weight), &bc.input, &d_a, dw);

            match (&blk.shortcut, &bc.short_norm) {
                (Some((conv, norm)), Some(nc)) => {
                    let (dg, dbeta) = two_grads(layout, &mut grads, norm.gamma, norm.beta);
                    let d_s = norm.backward(params.get(norm.gamma), nc, &d_sum, dg, dbeta);
                    let dw = grad_slice(layout, &mut grads, conv.weight);
                    let d_x = conv.backward(params.get(conv.weight), &bc.input, &d_s, dw);
                    d_in.data.iter_mut().zip(&d_x.data).for_each(|(a, b)| *a += *b);
                }
                _ => d_in.data.iter_mut().zip(&d_sum.data).for_each(|(a, b)| *a += *b),
            }
            d = d_in;
        }

        // the stem output is the first block's input, which went through a ReLU
        relu_backward(&cache.blocks[0].input.data, &mut d.data);
        let (dg, dbeta) = two_grads(layout, &mut grads, self.stem_norm.gamma, self.stem_norm.beta);
        let d_h = self
            .stem_norm
            .backward(params.get(self.stem_norm.gamma), &cache.stem_norm, &d, dg, dbeta);
        let dw = grad_slice(layout, &mut grads, self.stem.weight);
        self.stem.backward(params.get(self.stem.weight), &cache.input, &d_h, dw);
        grads
    }
}

/// Disjoint mutable views of two parameter gradients.
fn two_grads<'a, T>(layout: &[ParamInfo], grads: &'a mut [T], a: ParamId, b: ParamId) -> (&'a mut [T], &'a mut [T]) {
    let (ea, eb) = (&layout[a.0], &layout[b.0]);
    assert!(ea.offset + ea.len <= eb.offset, "gradient slices must be ordered and disjoint");
    let (left, right) = grads.split_at_mut(eb.offset);
    (&mut left[ea.offset..ea.offset + ea.len], &mut right[..eb.len])
}
