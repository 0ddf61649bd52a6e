use serde::{Deserialize, Serialize};

use crate::render::{rasterize, CameraConfig, Image};
use crate::tasks::{parse_answer, reward, RewardConfig, TaskInstance, TaskKind, TokenSequence};
use crate::world::WorldConfig;
use crate::Result;

/// World, camera and reward settings shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Environment {
    pub world: WorldConfig,
    pub camera: CameraConfig,
    pub reward: RewardConfig,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.camera.validate()?;
        self.reward.validate()
    }

    /// Generate and render one instance.
    pub fn instance(&self, task: TaskKind, seed: u64) -> Result<(TaskInstance, Image)> {
        let inst = TaskInstance::generate(task, seed, &self.world);
        let img = rasterize(&inst.scene, &self.camera)?;
        Ok((inst, img))
    }

    /// Parse and score an answer; returns `(reward, legal)`.
    pub fn score(&self, instance: &TaskInstance, answer: &TokenSequence) -> (f64, bool) {
        let action = parse_answer(answer, instance.task);
        (
            reward(instance, action, &self.world, &self.reward),
            action.is_legal(),
        )
    }
}
