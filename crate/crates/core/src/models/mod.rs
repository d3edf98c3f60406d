//! The ViT-tiny teacher, the lightweight CNN student, and parameter/FLOP
//! accounting.

mod accounting;
mod cnn;
mod init;
mod patch;
mod state;
mod vit;

pub use accounting::{
    conv_flops, count_flops, count_params, linear_flops, FlopReport, LayerFlops, ParamCount, FLOP_CONVENTIONS,
};
pub use cnn::{build_cnn, cnn_forward, CnnOutput, CnnSpec};
pub use patch::{patchify, unpatchify, PatchConfig};
pub use state::{ModelKind, ModelState, ParamVars};
pub use vit::{build_vit, vit_forward, VitSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Mode, Scalar, Tape, Tensor, Var};

/// Class index convention: ADL is 0, pre-impact fall is 1.
pub const NUM_CLASSES: usize = 2;

/// Either model architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Vit(VitSpec),
    Cnn(CnnSpec),
}

/// Output of [`ModelSpec::forward`].
pub struct Forward<T> {
    /// `B x 2` log-probabilities.
    pub log_probs: Var,
    /// Raw logits for the teacher; the student head already ends in
    /// log-softmax, so this equals `log_probs` for it.
    pub logits: Var,
    pub bn_updates: Vec<(String, BatchNormStats<T>)>,
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Vit(_) => ModelKind::Vit,
            ModelSpec::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            ModelSpec::Vit(v) => v.fingerprint(),
            ModelSpec::Cnn(c) => c.fingerprint(),
        }
    }

    pub fn window_len(&self) -> usize {
        match self {
            ModelSpec::Vit(v) => v.patch.window_len(),
            ModelSpec::Cnn(c) => c.length * c.axes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Vit(v) => v.validate(),
            ModelSpec::Cnn(c) => c.validate(),
        }
    }

    pub fn build<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelState<T>> {
        match self {
            ModelSpec::Vit(v) => build_vit(v, rng),
            ModelSpec::Cnn(c) => build_cnn(c, rng),
        }
    }

    /// Checks that `state` was built from this spec.
    pub fn check_state<T: Scalar>(&self, state: &ModelState<T>) -> Result<()> {
        if state.kind != self.kind() || state.fingerprint != self.fingerprint() {
            return Err(Error::Weights(format!(
                "model state ({:?}, fingerprint {:016x}) does not match spec ({:?}, fingerprint {:016x})",
                state.kind,
                state.fingerprint,
                self.kind(),
                self.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        state: &ModelState<T>,
        vars: &ParamVars,
        batch: &[T],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward<T>> {
        match self {
            ModelSpec::Vit(v) => {
                let logits = vit_forward(tape, v, vars, batch, mode, rng)?;
                let log_probs = tape.log_softmax(logits)?;
                Ok(Forward {
                    log_probs,
                    logits,
                    bn_updates: Vec::new(),
                })
            }
            ModelSpec::Cnn(c) => {
                let out = cnn_forward(tape, c, state, vars, batch, mode, rng)?;
                Ok(Forward {
                    log_probs: out.log_probs,
                    logits: out.log_probs,
                    bn_updates: out.bn_updates,
                })
            }
        }
    }

    /// Eval-mode log-probabilities for a batch of windows, `B x 2`.
    pub fn infer<T: Scalar>(&self, state: &ModelState<T>, batch: &[T]) -> Result<Tensor<T>> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let vars = state.register(&mut tape, false);
        // eval mode draws no random numbers
        let mut rng = crate::rng::stream(0, "eval");
        let out = self.forward(&mut tape, state, &vars, batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.log_probs).clone())
    }

    /// [`ModelSpec::infer`] over `windows` (concatenated, each
    /// `window_len` long) in chunks of `batch_size`.
    pub fn infer_batched<T: Scalar>(
        &self,
        state: &ModelState<T>,
        windows: &[T],
        batch_size: usize,
    ) -> Result<Tensor<T>> {
        let wl = self.window_len();
        if windows.is_empty() || !windows.len().is_multiple_of(wl) {
            return Err(Error::shape(
                "infer",
                format!("{} values is not a whole number of windows", windows.len()),
            ));
        }
        let mut out = Vec::with_capacity(windows.len() / wl * NUM_CLASSES);
        for chunk in windows.chunks(wl * batch_size.max(1)) {
            out.extend_from_slice(self.infer(state, chunk)?.data());
        }
        Tensor::new(vec![windows.len() / wl, NUM_CLASSES], out)
    }
}
