//! Shared plumbing for module parameter sets: named-tensor traversal used by
//! serialization, parameter counting, and weight loading.

use dyfus_core::tensor::{Scalar, Tensor};

/// Visit every learned tensor under a hierarchical dotted name, in a fixed
/// order. This order defines the weight manifest layout.
pub trait ParamSet<S: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>));

    fn param_count(&self) -> u64 {
        let mut count = 0u64;
        self.visit("", &mut |_, t| count += t.numel() as u64);
        count
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Visit a conv spec's weight (and bias when present).
pub fn visit_conv<S: Scalar>(
    spec: &dyfus_core::ops::ConvSpec<S>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &Tensor<S>),
) {
    f(&join(prefix, "weight"), &spec.weight);
    if let Some(b) = &spec.bias {
        f(&join(prefix, "bias"), b);
    }
}

pub fn visit_conv_mut<S: Scalar>(
    spec: &mut dyfus_core::ops::ConvSpec<S>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Tensor<S>),
) {
    f(&join(prefix, "weight"), &mut spec.weight);
    if let Some(b) = &mut spec.bias {
        f(&join(prefix, "bias"), b);
    }
}
