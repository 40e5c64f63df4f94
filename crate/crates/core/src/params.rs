//! Named traversal of parameter tensors.
//!
//! Names are dotted paths (`mining.stage1.query.conv.weight`) and coincide
//! with the stream names used by [`ParamInit`](crate::init::ParamInit).

use crate::nn::{
    ContextMiningWeights, CrossAttentionWeights, Linear, Projection, SelfAttentionWeights,
};
use crate::tensor::{BatchNormSpec, ConvSpec, Tensor};

pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Total stored scalars, running statistics included.
    fn stored_len(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Tensor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(prefix, self)
    }
}

impl<T: Params> Params for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(p) = self {
            p.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f)
        }
    }
}

/// Implements [`Params`] by visiting the listed fields under their own names.
macro_rules! impl_params {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::Params for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::tensor::Tensor)) {
                $( self.$field.visit(&$crate::params::join(prefix, stringify!($field)), f); )+
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor),
            ) {
                $( self.$field.visit_mut(&$crate::params::join(prefix, stringify!($field)), f); )+
            }
        }
    };
}
pub(crate) use impl_params;

impl_params!(ConvSpec { weight, bias });
impl_params!(BatchNormSpec {
    mean,
    var,
    gamma,
    beta
});
impl_params!(Projection { conv, bn });
impl_params!(Linear { weight, bias });
impl_params!(SelfAttentionWeights {
    query,
    key,
    value,
    output
});
impl_params!(CrossAttentionWeights {
    query,
    key,
    class_tokens
});
impl_params!(ContextMiningWeights {
    stage1,
    skip,
    cross,
    stage2
});
