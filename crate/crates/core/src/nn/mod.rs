//! Differentiable-computation substrate shared by every trainable model.

pub mod adam;
pub mod checkpoint;
pub mod ctc;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::{Checkpoint, ModuleKind};
pub use ctc::{ctc_log_prob, ctc_loss, ctc_loss_var, CtcOutput};
pub use gradcheck::{check_params, grad_check, GradCheck};
pub use graph::{sigmoid, Grads, Graph, Var};
pub use layers::{positional_encoding, positional_encoding_scaled, seeded_rng, Conv1d, Ctx, LayerNorm, Linear, Memory, Rng, StackMode, StackOutput, TransformerConfig, TransformerStack};
pub use losses::{mse_to_const, sequence_loss, sequence_loss_var, LossKind, Target};
pub use params::{NamedTensor, ParamId, ParamStore, ParameterBundle};
pub use tensor::{Mat, Real};
