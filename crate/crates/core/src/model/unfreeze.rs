use serde::{Deserialize, Serialize};

use super::{ModelError, ParamGroup, ENCODER_LAYERS};

pub const STAGES: usize = 4;

/// Which parameter groups receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrainableMask {
    pub head: bool,
    /// Indexed bottom (0) to top.
    pub layers: [bool; ENCODER_LAYERS],
    pub embedding: bool,
}

impl TrainableMask {
    pub fn all() -> Self {
        TrainableMask {
            head: true,
            layers: [true; ENCODER_LAYERS],
            embedding: true,
        }
    }

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Head => self.head,
            ParamGroup::Layer(l) => self.layers.get(l).copied().unwrap_or(false),
            ParamGroup::Embedding => self.embedding,
            ParamGroup::Decoder => false,
        }
    }

    /// Every group trainable here is trainable in `other`.
    pub fn is_subset_of(&self, other: &TrainableMask) -> bool {
        (!self.head || other.head)
            && (!self.embedding || other.embedding)
            && self.layers.iter().zip(other.layers).all(|(a, b)| !a || b)
    }

    /// Lowest encoder layer that needs gradients, or `None` if the encoder is frozen.
    pub fn lowest_layer(&self) -> Option<usize> {
        if self.embedding {
            return Some(0);
        }
        self.layers.iter().position(|&t| t)
    }
}

/// Gradual unfreezing: head only, then each encoder layer from the top,
/// with the embedding released together with the bottom layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfreezeSchedule {
    pub epochs_per_stage: [usize; STAGES],
}

impl Default for UnfreezeSchedule {
    fn default() -> Self {
        UnfreezeSchedule {
            epochs_per_stage: [1, 1, 1, 2],
        }
    }
}

pub fn apply_stage(
    _schedule: &UnfreezeSchedule,
    stage: usize,
) -> Result<TrainableMask, ModelError> {
    if stage >= STAGES {
        return Err(ModelError::StageOutOfRange(stage));
    }
    let mut layers = [false; ENCODER_LAYERS];
    for (l, slot) in layers.iter_mut().enumerate() {
        *slot = l + stage >= ENCODER_LAYERS;
    }
    Ok(TrainableMask {
        head: true,
        layers,
        embedding: stage == STAGES - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages() {
        let s = UnfreezeSchedule::default();
        let m0 = apply_stage(&s, 0).unwrap();
        assert!(m0.head && !m0.embedding && m0.layers == [false; 3]);
        assert_eq!(m0.lowest_layer(), None);
        let m1 = apply_stage(&s, 1).unwrap();
        assert_eq!(m1.layers, [false, false, true]);
        assert_eq!(apply_stage(&s, 3).unwrap(), TrainableMask::all());
        for k in 0..3 {
            assert!(apply_stage(&s, k)
                .unwrap()
                .is_subset_of(&apply_stage(&s, k + 1).unwrap()));
        }
        assert!(matches!(
            apply_stage(&s, 4),
            Err(ModelError::StageOutOfRange(4))
        ));
    }
}
