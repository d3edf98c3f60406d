use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::trunc_normal;
use super::patch::{patchify, PatchConfig};
use super::state::{ModelKind, ModelState, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{multi_head_attention, AttentionWeights, Mode, Scalar, Tape, Tensor, Var};

/// ViT-tiny teacher hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitSpec {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp: usize,
    pub dropout: f64,
    pub num_classes: usize,
    /// Per-head width. 64 hidden units do not split evenly over 3 heads, so
    /// heads use 21 units each and an output projection maps 63 back to 64.
    pub head_dim: usize,
    pub init_std: f64,
    pub layer_norm_eps: f64,
    pub patch: PatchConfig,
}

impl Default for VitSpec {
    fn default() -> Self {
        VitSpec {
            layers: 3,
            heads: 3,
            hidden: 64,
            mlp: 256,
            dropout: 0.2,
            num_classes: 2,
            head_dim: 21,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
            patch: PatchConfig::default(),
        }
    }
}

impl VitSpec {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        let positive = [
            self.layers,
            self.heads,
            self.hidden,
            self.mlp,
            self.num_classes,
            self.head_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("vit: all sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("vit: dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Encoder sequence length: patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.patch.num_patches() + 1
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

pub fn build_vit<T: Scalar, R: Rng + ?Sized>(spec: &VitSpec, rng: &mut R) -> Result<ModelState<T>> {
    spec.validate()?;
    let (d, p, a, m) = (spec.hidden, spec.patch.patch_dim(), spec.attn_width(), spec.mlp);
    let std = spec.init_std;
    let mut st = ModelState::new(ModelKind::Vit, spec.fingerprint());
    st.insert_param("patch_embed.weight", trunc_normal(rng, &[p, d], std));
    st.insert_param("patch_embed.bias", Tensor::zeros(vec![d]));
    st.insert_param("cls_token", trunc_normal(rng, &[1, 1, d], std));
    st.insert_param("pos_embed", trunc_normal(rng, &[spec.seq_len(), d], std));
    for l in 0..spec.layers {
        let pre = format!("blocks.{l}");
        st.insert_param(format!("{pre}.norm1.weight"), Tensor::full(vec![d], T::one()));
        st.insert_param(format!("{pre}.norm1.bias"), Tensor::zeros(vec![d]));
        for proj in ["q", "k", "v"] {
            st.insert_param(format!("{pre}.attn.{proj}.weight"), trunc_normal(rng, &[d, a], std));
            st.insert_param(format!("{pre}.attn.{proj}.bias"), Tensor::zeros(vec![a]));
        }
        st.insert_param(format!("{pre}.attn.proj.weight"), trunc_normal(rng, &[a, d], std));
        st.insert_param(format!("{pre}.attn.proj.bias"), Tensor::zeros(vec![d]));
        st.insert_param(format!("{pre}.norm2.weight"), Tensor::full(vec![d], T::one()));
        st.insert_param(format!("{pre}.norm2.bias"), Tensor::zeros(vec![d]));
        st.insert_param(format!("{pre}.mlp.fc1.weight"), trunc_normal(rng, &[d, m], std));
        st.insert_param(format!("{pre}.mlp.fc1.bias"), Tensor::zeros(vec![m]));
        st.insert_param(format!("{pre}.mlp.fc2.weight"), trunc_normal(rng, &[m, d], std));
        st.insert_param(format!("{pre}.mlp.fc2.bias"), Tensor::zeros(vec![d]));
    }
    st.insert_param("norm.weight", Tensor::full(vec![d], T::one()));
    st.insert_param("norm.bias", Tensor::zeros(vec![d]));
    st.insert_param("head.weight", trunc_normal(rng, &[d, spec.num_classes], std));
    st.insert_param("head.bias", Tensor::zeros(vec![spec.num_classes]));
    Ok(st)
}

/// Runs the teacher on `batch` (row-major `B x L x A` windows) and returns
/// `B x num_classes` logits.
pub fn vit_forward<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    spec: &VitSpec,
    vars: &ParamVars,
    batch: &[T],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let wl = spec.patch.window_len();
    if batch.is_empty() || !batch.len().is_multiple_of(wl) {
        return Err(Error::shape(
            "vit_forward",
            format!(
                "batch of {} values is not a whole number of {wl}-value windows",
                batch.len()
            ),
        ));
    }
    let b = batch.len() / wl;
    let (n, pd, d) = (spec.patch.num_patches(), spec.patch.patch_dim(), spec.hidden);
    let mut patches = Vec::with_capacity(batch.len());
    for w in batch.chunks(wl) {
        patches.extend(patchify(w, &spec.patch)?);
    }
    let x = tape.constant(Tensor::new(vec![b, n, pd], patches)?);
    let emb = tape.linear(x, vars.get("patch_embed.weight"), vars.get("patch_embed.bias"))?;
    let cls = tape.expand_batch(vars.get("cls_token"), b)?;
    let seq = tape.concat(cls, emb, 1)?;
    let seq = tape.add(seq, vars.get("pos_embed"))?;
    let mut h = tape.dropout(seq, spec.dropout, mode, rng)?;
    let eps = T::lit(spec.layer_norm_eps);
    for l in 0..spec.layers {
        let p = |s: &str| vars.get(&format!("blocks.{l}.{s}"));
        let y = tape.layer_norm(h, p("norm1.weight"), p("norm1.bias"), eps)?;
        let weights = AttentionWeights {
            wq: p("attn.q.weight"),
            bq: p("attn.q.bias"),
            wk: p("attn.k.weight"),
            bk: p("attn.k.bias"),
            wv: p("attn.v.weight"),
            bv: p("attn.v.bias"),
            wo: p("attn.proj.weight"),
            bo: p("attn.proj.bias"),
        };
        let att = multi_head_attention(tape, y, &weights, spec.heads)?;
        h = tape.add(h, att.output)?;
        let y = tape.layer_norm(h, p("norm2.weight"), p("norm2.bias"), eps)?;
        let y = tape.linear(y, p("mlp.fc1.weight"), p("mlp.fc1.bias"))?;
        let y = tape.gelu(y);
        let y = tape.linear(y, p("mlp.fc2.weight"), p("mlp.fc2.bias"))?;
        let y = tape.dropout(y, spec.dropout, mode, rng)?;
        h = tape.add(h, y)?;
    }
    let h = tape.layer_norm(h, vars.get("norm.weight"), vars.get("norm.bias"), eps)?;
    let cls_out = tape.narrow(h, 1, 0, 1)?;
    let cls_out = tape.reshape(cls_out, &[b, d])?;
    tape.linear(cls_out, vars.get("head.weight"), vars.get("head.bias"))
}
