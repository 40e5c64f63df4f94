//! Attention blocks of the context-mining decoder head.
//!
//! All blocks work on `d x h x w` feature maps and flatten them to `T x d`
//! token matrices (`T = h * w`, row-major over space) internally.

use crate::error::TensorError;
use crate::init::ParamInit;
use crate::tensor::{
    add, batchnorm_relu, conv2d, map_to_tokens, matmul, softmax_rows, tokens_to_map, transpose2d,
    BatchNormSpec, ConvSpec, Tensor,
};

/// `Conv(1x1, d) -> BatchNorm -> ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub conv: ConvSpec,
    pub bn: BatchNormSpec,
}

impl Projection {
    pub fn init(init: &ParamInit, name: &str, dim: usize) -> Result<Self, TensorError> {
        Ok(Self {
            conv: init.conv(&format!("{name}.conv"), 1, dim, dim, 1, 1, false)?,
            bn: init.batchnorm(dim),
        })
    }

    /// Identity 1x1 weights, zero bias, unit batch statistics.
    pub fn identity(dim: usize) -> Self {
        let weight = Tensor::eye(dim).reshape(&[dim, dim, 1, 1]).expect("square");
        Self {
            conv: ConvSpec::new(
                1,
                dim,
                dim,
                1,
                1,
                false,
                weight,
                Some(Tensor::zeros(&[dim])),
            )
            .expect("valid 1x1"),
            bn: BatchNormSpec::identity(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            conv: ConvSpec::zeros(1, dim, dim, 1, 1, false).expect("valid 1x1"),
            bn: BatchNormSpec::zeroed(dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        batchnorm_relu(&conv2d(x, &self.conv)?, &self.bn)
    }

    pub fn dim(&self) -> usize {
        self.conv.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// Fully connected layer `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn init(init: &ParamInit, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f32).sqrt();
        let scope = init.scope(name);
        Self {
            weight: scope.uniform("weight", &[out_dim, in_dim], bound),
            bias: Some(scope.uniform("bias", &[out_dim], bound)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Tensor::eye(dim),
            bias: Some(Tensor::zeros(&[dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut y = matmul(x, &transpose2d(&self.weight)?)?;
        if let Some(b) = &self.bias {
            let n = b.len();
            let bias = b.data();
            for row in y.data_mut().chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Single-head self attention with convolutional projections.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionWeights {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    pub output: Projection,
}

impl SelfAttentionWeights {
    pub fn init(init: &ParamInit, dim: usize) -> Result<Self, TensorError> {
        Ok(Self {
            query: Projection::init(init, "query", dim)?,
            key: Projection::init(init, "key", dim)?,
            value: Projection::init(init, "value", dim)?,
            output: Projection::init(init, "output", dim)?,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            query: Projection::identity(dim),
            key: Projection::identity(dim),
            value: Projection::identity(dim),
            output: Projection::identity(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            query: Projection::zeros(dim),
            key: Projection::zeros(dim),
            value: Projection::zeros(dim),
            output: Projection::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.dim()
    }

    pub fn param_count(&self) -> usize {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .map(|p| p.param_count())
            .sum()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Axis {
            op,
            axis: "shape",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Attention weights `G = softmax(Q' K'^T)` (`T x T`) of a self-attention block.
///
/// No `1/sqrt(d)` temperature is applied here.
pub fn self_attention_map(
    q: &Tensor,
    k: &Tensor,
    w: &SelfAttentionWeights,
) -> Result<Tensor, TensorError> {
    let qp = map_to_tokens(&w.query.forward(q)?)?;
    let kp = map_to_tokens(&w.key.forward(k)?)?;
    softmax_rows(&matmul(&qp, &transpose2d(&kp)?)?)
}

pub fn self_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    w: &SelfAttentionWeights,
) -> Result<Tensor, TensorError> {
    same_shape("self_attention", q, k)?;
    same_shape("self_attention", q, v)?;
    let (_, h, wd) = q.chw()?;
    let g = self_attention_map(q, k, w)?;
    let vp = map_to_tokens(&w.value.forward(v)?)?;
    let mixed = tokens_to_map(&matmul(&g, &vp)?, h, wd)?;
    w.output.forward(&mixed)
}

/// Class-token cross attention weights: query/key FC projections and the
/// `S x d` learnable class tokens, which double as (unprojected) values.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionWeights {
    pub query: Linear,
    pub key: Linear,
    pub class_tokens: Tensor,
}

impl CrossAttentionWeights {
    pub fn init(init: &ParamInit, dim: usize, classes: usize) -> Self {
        Self {
            query: Linear::init(init, "query", dim, dim),
            key: Linear::init(init, "key", dim, dim),
            class_tokens: init.uniform("class_tokens", &[classes, dim], 1.0 / (dim as f32).sqrt()),
        }
    }

    pub fn dim(&self) -> usize {
        self.class_tokens.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.class_tokens.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.class_tokens.len()
    }

    fn check(&self, d: usize) -> Result<(), TensorError> {
        let td = self.dim();
        for (what, got) in [
            ("query in", self.query.in_dim()),
            ("query out", self.query.out_dim()),
            ("key in", self.key.in_dim()),
            ("key out", self.key.out_dim()),
            ("class token dim", td),
        ] {
            if got != d {
                return Err(TensorError::InvalidSpec(format!(
                    "cross attention {what} is {got}, features have d={d}"
                )));
            }
        }
        Ok(())
    }
}

/// Score matrix `Z = ((f | c) W_q^T)(c W_k^T)^T / sqrt(d)`, shape `(T + S) x S`.
pub fn cross_attention_scores(
    f: &Tensor,
    w: &CrossAttentionWeights,
) -> Result<Tensor, TensorError> {
    let (d, _, _) = f.chw()?;
    w.check(d)?;
    let tokens = map_to_tokens(f)?;
    let mut joint = tokens.into_data();
    joint.extend_from_slice(w.class_tokens.data());
    let rows = joint.len() / d.max(1);
    let joint = Tensor::new(vec![rows, d], joint)?;
    let q = w.query.forward(&joint)?;
    let k = w.key.forward(&w.class_tokens)?;
    let z = matmul(&q, &transpose2d(&k)?)?;
    let inv = (1.0 / (d as f64).sqrt()) as f32;
    Ok(z.map(|v| v * inv))
}

/// Keeps the first `t` rows of a score matrix, discarding class-token rows.
pub fn drop_class_rows(z: &Tensor, t: usize) -> Result<Tensor, TensorError> {
    let (rows, s) = z.rows_cols()?;
    if t > rows {
        return Err(TensorError::Axis {
            op: "drop_class_rows",
            axis: "rows",
            expected: t,
            actual: rows,
        });
    }
    Tensor::new(vec![t, s], z.data()[..t * s].to_vec())
}

/// Cross attention weights `G = softmax(drop(Z))`, shape `T x S`.
pub fn cross_attention_map(f: &Tensor, w: &CrossAttentionWeights) -> Result<Tensor, TensorError> {
    let (_, h, wd) = f.chw()?;
    softmax_rows(&drop_class_rows(&cross_attention_scores(f, w)?, h * wd)?)
}

pub fn custom_cross_attention(
    f: &Tensor,
    w: &CrossAttentionWeights,
) -> Result<Tensor, TensorError> {
    let (_, h, wd) = f.chw()?;
    let g = cross_attention_map(f, w)?;
    tokens_to_map(&matmul(&g, &w.class_tokens)?, h, wd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextMiningWeights {
    pub stage1: SelfAttentionWeights,
    pub skip: ConvSpec,
    pub cross: CrossAttentionWeights,
    pub stage2: SelfAttentionWeights,
}

impl ContextMiningWeights {
    pub fn init(init: &ParamInit, dim: usize, classes: usize) -> Result<Self, TensorError> {
        Ok(Self {
            stage1: SelfAttentionWeights::init(&init.scope("stage1"), dim)?,
            skip: init.conv("skip", 1, dim, dim, 1, 1, false)?,
            cross: CrossAttentionWeights::init(&init.scope("cross"), dim, classes),
            stage2: SelfAttentionWeights::init(&init.scope("stage2"), dim)?,
        })
    }

    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            stage1: SelfAttentionWeights::zeros(dim),
            skip: ConvSpec::zeros(1, dim, dim, 1, 1, false).expect("valid 1x1"),
            cross: CrossAttentionWeights {
                query: Linear {
                    weight: Tensor::zeros(&[dim, dim]),
                    bias: Some(Tensor::zeros(&[dim])),
                },
                key: Linear {
                    weight: Tensor::zeros(&[dim, dim]),
                    bias: Some(Tensor::zeros(&[dim])),
                },
                class_tokens: Tensor::zeros(&[classes, dim]),
            },
            stage2: SelfAttentionWeights::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.stage1.dim()
    }

    pub fn param_count(&self) -> usize {
        self.stage1.param_count()
            + self.skip.param_count()
            + self.cross.param_count()
            + self.stage2.param_count()
    }
}

/// `N = skip(f) + SA1(f, f, f) + SA2(f, X, X)` with `X` the class-token cross
/// attention output; summed left to right.
pub fn context_mining(f: &Tensor, w: &ContextMiningWeights) -> Result<Tensor, TensorError> {
    let skip = conv2d(f, &w.skip)?;
    let first = self_attention(f, f, f, &w.stage1)?;
    let class_ctx = custom_cross_attention(f, &w.cross)?;
    let second = self_attention(f, &class_ctx, &class_ctx, &w.stage2)?;
    add(&add(&skip, &first)?, &second)
}
