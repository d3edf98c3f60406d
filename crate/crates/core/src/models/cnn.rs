use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::fan_in_uniform;
use super::state::{ModelKind, ModelState, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Mode, Scalar, Tape, Tensor, Var};

/// Lightweight CNN student hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSpec {
    pub length: usize,
    pub axes: usize,
    pub conv_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Pooling window (time, axis).
    pub pool: (usize, usize),
    pub dropout: f64,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub prelu_init: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            length: 50,
            axes: 9,
            conv_blocks: 2,
            filters: 64,
            kernel: 3,
            pool: (1, 2),
            dropout: 0.1,
            mlp_hidden: 64,
            num_classes: 2,
            prelu_init: 0.25,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl CnnSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.length,
            self.axes,
            self.conv_blocks,
            self.filters,
            self.kernel,
            self.pool.0,
            self.pool.1,
            self.mlp_hidden,
            self.num_classes,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("cnn: all sizes must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("cnn: kernel must be odd for same padding".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("cnn: dropout must lie in [0, 1)".into()));
        }
        self.spatial_trajectory().map(|_| ())
    }

    /// (time, axis) extents entering each block, followed by the extents
    /// after the last pool.
    pub fn spatial_trajectory(&self) -> Result<Vec<(usize, usize)>> {
        let mut cur = (self.length, self.axes);
        let mut out = vec![cur];
        for _ in 0..self.conv_blocks {
            if cur.0 < self.pool.0 || cur.1 < self.pool.1 {
                return Err(Error::Config(format!(
                    "cnn: extent {cur:?} is smaller than pool window {:?}",
                    self.pool
                )));
            }
            cur = (cur.0 / self.pool.0, cur.1 / self.pool.1);
            out.push(cur);
        }
        Ok(out)
    }

    pub fn flat_features(&self) -> usize {
        let last = *self.spatial_trajectory().expect("validated").last().expect("non-empty");
        self.filters * last.0 * last.1
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

pub fn build_cnn<T: Scalar, R: Rng + ?Sized>(spec: &CnnSpec, rng: &mut R) -> Result<ModelState<T>> {
    spec.validate()?;
    let (f, k) = (spec.filters, spec.kernel);
    let mut st = ModelState::new(ModelKind::Cnn, spec.fingerprint());
    let mut cin = 1;
    for i in 0..spec.conv_blocks {
        let pre = format!("blocks.{i}");
        st.insert_param(
            format!("{pre}.conv.weight"),
            fan_in_uniform(rng, &[f, cin, k, k], cin * k * k),
        );
        st.insert_param(format!("{pre}.conv.bias"), fan_in_uniform(rng, &[f], cin * k * k));
        st.insert_param(format!("{pre}.bn.weight"), Tensor::full(vec![f], T::one()));
        st.insert_param(format!("{pre}.bn.bias"), Tensor::zeros(vec![f]));
        st.insert_buffer(format!("{pre}.bn.running_mean"), Tensor::zeros(vec![f]));
        st.insert_buffer(format!("{pre}.bn.running_var"), Tensor::full(vec![f], T::one()));
        st.insert_param(
            format!("{pre}.prelu.alpha"),
            Tensor::full(vec![f], T::lit(spec.prelu_init)),
        );
        cin = f;
    }
    let (flat, hid, nc) = (spec.flat_features(), spec.mlp_hidden, spec.num_classes);
    st.insert_param("fc1.weight", fan_in_uniform(rng, &[flat, hid], flat));
    st.insert_param("fc1.bias", Tensor::zeros(vec![hid]));
    st.insert_param("fc1.prelu.alpha", Tensor::full(vec![hid], T::lit(spec.prelu_init)));
    st.insert_param("fc2.weight", fan_in_uniform(rng, &[hid, nc], hid));
    st.insert_param("fc2.bias", Tensor::zeros(vec![nc]));
    Ok(st)
}

/// Student forward pass.
pub struct CnnOutput<T> {
    /// `B x num_classes` log-probabilities.
    pub log_probs: Var,
    /// Updated batch-norm running statistics (training mode only), keyed
    /// by layer prefix.
    pub bn_updates: Vec<(String, BatchNormStats<T>)>,
}

/// Runs the student on `batch` (row-major `B x L x A` windows, a single
/// input channel).
pub fn cnn_forward<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    spec: &CnnSpec,
    state: &ModelState<T>,
    vars: &ParamVars,
    batch: &[T],
    mode: Mode,
    rng: &mut R,
) -> Result<CnnOutput<T>> {
    let wl = spec.length * spec.axes;
    if batch.is_empty() || !batch.len().is_multiple_of(wl) {
        return Err(Error::shape(
            "cnn_forward",
            format!(
                "batch of {} values is not a whole number of {wl}-value windows",
                batch.len()
            ),
        ));
    }
    let b = batch.len() / wl;
    let mut h = tape.constant(Tensor::new(vec![b, 1, spec.length, spec.axes], batch.to_vec())?);
    let mut bn_updates = Vec::new();
    let (momentum, eps) = (T::lit(spec.bn_momentum), T::lit(spec.bn_eps));
    for i in 0..spec.conv_blocks {
        let pre = format!("blocks.{i}");
        let p = |s: &str| vars.get(&format!("{pre}.{s}"));
        h = tape.conv2d(h, p("conv.weight"), p("conv.bias"))?;
        let stats = state.bn_stats(&format!("{pre}.bn"))?;
        let (y, upd) = tape.batch_norm(h, p("bn.weight"), p("bn.bias"), &stats, mode, momentum, eps)?;
        if let Some(u) = upd {
            bn_updates.push((format!("{pre}.bn"), u));
        }
        h = tape.prelu(y, p("prelu.alpha"))?;
        h = tape.maxpool2d(h, spec.pool)?;
        h = tape.dropout(h, spec.dropout, mode, rng)?;
    }
    let flat = tape.reshape(h, &[b, spec.flat_features()])?;
    let y = tape.linear(flat, vars.get("fc1.weight"), vars.get("fc1.bias"))?;
    let y = tape.prelu(y, vars.get("fc1.prelu.alpha"))?;
    let y = tape.linear(y, vars.get("fc2.weight"), vars.get("fc2.bias"))?;
    let log_probs = tape.log_softmax(y)?;
    Ok(CnnOutput { log_probs, bn_updates })
}
