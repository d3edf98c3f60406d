use serde::{Deserialize, Serialize};

use super::{CnnSpec, ModelSpec, ModelState, VitSpec};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: u64,
    pub bytes_at_32bit: u64,
}

/// Trainable parameter count; batch-norm running statistics are buffers
/// and are excluded.
pub fn count_params<T: Scalar>(state: &ModelState<T>) -> ParamCount {
    let count: u64 = state.params.values().map(|t| t.len() as u64).sum();
    ParamCount {
        count,
        bytes_at_32bit: 4 * count,
    }
}

pub const FLOP_CONVENTIONS: &str = "multiply-add = 2 FLOPs; conv = 2*Cout*Cin*k*k*H*W; \
linear = 2*in*out (bias adds ignored); each attention matmul (QK^T, AV) = 2*T*T*d_head per head; \
norms/activations/softmax = 2 FLOPs per element; residual and position adds = 1 per element; \
max-pool = 1 comparison per input element; dropout is absent at inference";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub name: String,
    pub flops: u64,
}

/// Analytic single-window inference FLOPs, broken down by layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub layers: Vec<LayerFlops>,
    pub total: u64,
    pub conventions: &'static str,
}

impl FlopReport {
    fn from_layers(layers: Vec<(String, u64)>) -> Self {
        let layers: Vec<LayerFlops> = layers
            .into_iter()
            .map(|(name, flops)| LayerFlops { name, flops })
            .collect();
        let total = layers.iter().map(|l| l.flops).sum();
        FlopReport {
            layers,
            total,
            conventions: FLOP_CONVENTIONS,
        }
    }
}

pub fn linear_flops(inputs: usize, outputs: usize) -> u64 {
    2 * inputs as u64 * outputs as u64
}

pub fn conv_flops(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> u64 {
    2 * (cout * cin * k * k * h * w) as u64
}

pub fn count_flops(spec: &ModelSpec) -> FlopReport {
    match spec {
        ModelSpec::Vit(v) => vit_flops(v),
        ModelSpec::Cnn(c) => cnn_flops(c),
    }
}

fn vit_flops(s: &VitSpec) -> FlopReport {
    let (n, t, d) = (s.patch.num_patches(), s.seq_len(), s.hidden);
    let a = s.attn_width();
    let u = |x: usize| x as u64;
    let mut l = vec![
        ("patch_embed".to_string(), u(n) * linear_flops(s.patch.patch_dim(), d)),
        ("pos_embed".to_string(), u(t * d)),
    ];
    for i in 0..s.layers {
        l.push((format!("blocks.{i}.norm1"), 2 * u(t * d)));
        l.push((format!("blocks.{i}.attn.qkv"), 3 * u(t) * linear_flops(d, a)));
        l.push((
            format!("blocks.{i}.attn.scores"),
            u(s.heads) * 2 * u(t * t * s.head_dim),
        ));
        l.push((format!("blocks.{i}.attn.softmax"), 2 * u(s.heads * t * t)));
        l.push((
            format!("blocks.{i}.attn.context"),
            u(s.heads) * 2 * u(t * t * s.head_dim),
        ));
        l.push((format!("blocks.{i}.attn.proj"), u(t) * linear_flops(a, d)));
        l.push((format!("blocks.{i}.residual1"), u(t * d)));
        l.push((format!("blocks.{i}.norm2"), 2 * u(t * d)));
        l.push((format!("blocks.{i}.mlp.fc1"), u(t) * linear_flops(d, s.mlp)));
        l.push((format!("blocks.{i}.mlp.gelu"), 2 * u(t * s.mlp)));
        l.push((format!("blocks.{i}.mlp.fc2"), u(t) * linear_flops(s.mlp, d)));
        l.push((format!("blocks.{i}.residual2"), u(t * d)));
    }
    l.push(("norm".into(), 2 * u(t * d)));
    l.push(("head".into(), linear_flops(d, s.num_classes)));
    FlopReport::from_layers(l)
}

fn cnn_flops(s: &CnnSpec) -> FlopReport {
    let traj = s.spatial_trajectory().expect("validated spec");
    let f = s.filters;
    let mut l = Vec::new();
    let mut cin = 1;
    for (i, &(h, w)) in traj.iter().take(s.conv_blocks).enumerate() {
        let elems = (f * h * w) as u64;
        l.push((format!("blocks.{i}.conv"), conv_flops(cin, f, s.kernel, h, w)));
        l.push((format!("blocks.{i}.bn"), 2 * elems));
        l.push((format!("blocks.{i}.prelu"), 2 * elems));
        l.push((format!("blocks.{i}.pool"), elems));
        cin = f;
    }
    l.push(("fc1".into(), linear_flops(s.flat_features(), s.mlp_hidden)));
    l.push(("fc1.prelu".into(), 2 * s.mlp_hidden as u64));
    l.push(("fc2".into(), linear_flops(s.mlp_hidden, s.num_classes)));
    l.push(("log_softmax".into(), 2 * s.num_classes as u64));
    FlopReport::from_layers(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_conv_formulas() {
        assert_eq!(linear_flops(10, 5), 100);
        assert_eq!(conv_flops(1, 64, 3, 50, 9), 518_400);
    }

    #[test]
    fn student_conv_dominates() {
        let r = count_flops(&ModelSpec::Cnn(CnnSpec::default()));
        let conv1 = r.layers.iter().find(|l| l.name == "blocks.0.conv").unwrap();
        assert_eq!(conv1.flops, 518_400);
        let conv2 = r.layers.iter().find(|l| l.name == "blocks.1.conv").unwrap();
        assert_eq!(conv2.flops, 2 * 64 * 64 * 9 * 50 * 4);
        assert_eq!(r.total, r.layers.iter().map(|l| l.flops).sum::<u64>());
    }
}
