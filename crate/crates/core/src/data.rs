//! Episode records shared by collection, training, probing and file IO.

use serde::{Deserialize, Serialize};

use crate::env::{ObjectSpec, PhaseMarker};

/// One recorded episode: `actions[t]` was applied and produced `observations[t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub seed: u64,
    pub actions: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub label: ObjectSpec,
    pub markers: Vec<PhaseMarker>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The label-free view that dynamics models consume.
    pub fn sensorimotor(&self) -> Episode<'_> {
        Episode { actions: &self.actions, observations: &self.observations }
    }

    /// Sum of all touch readings over the episode.
    pub fn cumulative_touch(&self, touch_dims: std::ops::Range<usize>) -> f64 {
        self.observations.iter().map(|x| x[touch_dims.clone()].iter().sum::<f64>()).sum()
    }

    /// Timesteps where no finger reports touch.
    pub fn no_contact_steps(&self, touch_dims: std::ops::Range<usize>) -> Vec<usize> {
        self.observations
            .iter()
            .enumerate()
            .filter(|(_, x)| x[touch_dims.clone()].iter().all(|&v| v == 0.0))
            .map(|(t, _)| t)
            .collect()
    }
}

/// Actions and observations of one episode, without any ground truth.
#[derive(Clone, Copy, Debug)]
pub struct Episode<'a> {
    pub actions: &'a [Vec<f64>],
    pub observations: &'a [Vec<f64>],
}

impl Episode<'_> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn episodes(dataset: &[Trajectory]) -> Vec<Episode<'_>> {
    dataset.iter().map(Trajectory::sensorimotor).collect()
}
