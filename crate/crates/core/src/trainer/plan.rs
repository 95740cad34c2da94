use serde::{Deserialize, Serialize};

use crate::losses::{ActiveTerms, LossTerm};
use crate::{Error, Result};

/// Epoch counts of the standard schedule: warmup, segmentation, full.
pub const STANDARD_EPOCHS: [usize; 3] = [25, 25, 55];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub epochs: usize,
    pub terms: ActiveTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum PlanMode {
    /// The three-stage schedule, epochs multiplied by `epoch_scale`
    /// (rounded, at least one per stage).
    Standard {
        #[serde(default = "unit_scale")]
        epoch_scale: f64,
    },
    Custom {
        stages: Vec<Stage>,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for PlanMode {
    fn default() -> Self {
        PlanMode::Standard { epoch_scale: 1.0 }
    }
}

fn terms(list: &[LossTerm]) -> ActiveTerms {
    list.iter().copied().collect()
}

pub fn make_stage_plan(mode: &PlanMode) -> Result<StagePlan> {
    let stages = match mode {
        PlanMode::Standard { epoch_scale } => {
            if !(epoch_scale.is_finite() && *epoch_scale > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "epoch_scale {epoch_scale} must be positive"
                )));
            }
            let scaled = |e: usize| ((e as f64 * epoch_scale).round() as usize).max(1);
            use LossTerm::*;
            vec![
                Stage {
                    name: "warmup".into(),
                    epochs: scaled(STANDARD_EPOCHS[0]),
                    terms: terms(&[Mse]),
                },
                Stage {
                    name: "seg".into(),
                    epochs: scaled(STANDARD_EPOCHS[1]),
                    terms: terms(&[Mse, Seg]),
                },
                Stage {
                    name: "full".into(),
                    epochs: scaled(STANDARD_EPOCHS[2]),
                    terms: terms(&[Mse, Vgg, Adv, Seg]),
                },
            ]
        }
        PlanMode::Custom { stages } => stages.clone(),
    };
    if stages.is_empty() || stages.iter().any(|s| s.epochs == 0 || s.terms.is_empty()) {
        return Err(Error::EmptyPlan);
    }
    Ok(StagePlan { stages })
}

impl StagePlan {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// Stage index running at zero-based global `epoch`.
    pub fn stage_index_at(&self, epoch: usize) -> Option<usize> {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.epochs;
            if epoch < end {
                return Some(i);
            }
        }
        None
    }

    /// First global epoch of stage `index`.
    pub fn stage_start(&self, index: usize) -> usize {
        self.stages[..index].iter().map(|s| s.epochs).sum()
    }

    pub fn uses(&self, term: LossTerm) -> bool {
        self.stages.iter().any(|s| s.terms.contains(&term))
    }
}
