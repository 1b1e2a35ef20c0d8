//! Speaker-independent hybrid CTC/attention recogniser.

mod decode;
mod lm;
mod model;
mod train;

pub use decode::{ctc_prefix_scorer, greedy_attention, recognize, recognize_features, CtcPrefixScorer, CtcState, DecodeConfig, Recognition};
pub use lm::{train_ngram_lm, NgramLm, BOS, EOS};
pub use model::{AsrModel, AsrModelConfig};
pub use train::{train_asr, AsrTrainConfig};

use crate::error::{Error, Result};

/// Output ids: CTC blank, the shared symbols, then decoder start/end.
pub const BLANK: usize = 0;
pub const SOS: usize = crate::tokens::SYMBOLS.len() + 1;
pub const EOS_ID: usize = SOS + 1;
pub const VOCAB_SIZE: usize = EOS_ID + 1;
pub const CTC_CLASSES: usize = SOS;

/// Symbol index (into [`crate::tokens::SYMBOLS`]) → model id.
pub fn symbol_id(index: usize) -> usize {
    index + 1
}

pub fn id_symbol(id: usize) -> Option<usize> {
    (1..SOS).contains(&id).then(|| id - 1)
}

/// `λ·l_ctc + (1−λ)·l_att`.
pub fn hybrid_loss(l_ctc: f64, l_att: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("ctc weight {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(l_att);
    }
    if lambda == 1.0 {
        return Ok(l_ctc);
    }
    Ok(lambda * l_ctc + (1.0 - lambda) * l_att)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_loss_interpolates() {
        assert!((hybrid_loss(2.0, 1.0, 0.3).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(hybrid_loss(2.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(hybrid_loss(2.0, 1.0, 1.0).unwrap(), 2.0);
        assert!(hybrid_loss(2.0, 1.0, 1.5).is_err());
        assert!(hybrid_loss(2.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn id_mapping_round_trips() {
        for i in 0..crate::tokens::SYMBOLS.len() {
            assert_eq!(id_symbol(symbol_id(i)), Some(i));
        }
        assert_eq!(id_symbol(BLANK), None);
        assert_eq!(id_symbol(SOS), None);
        assert_eq!(id_symbol(EOS_ID), None);
    }
}
