pub mod heatmap;
pub mod metrics;
pub mod refine;
pub mod simulate;
pub mod train;

use std::path::Path;

/// `seq_0003.poseq.json` → `seq_0003`.
pub(crate) fn pose_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".poseq.json")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(&name)
        .to_string()
}

use elpose_core::lifting::{assemble_prompt, lift, pick_prompts, LifterExample, LifterParams, PosePrior};
use elpose_core::rng;
use elpose_core::skeleton::{PoseSequence2D, PoseSequence3D};

use crate::CliResult;

/// Lifts every 2D input with prompts drawn from `pool`. When the inputs are
/// the pool itself, pass `exclude_self` so a sequence never prompts itself.
pub(crate) fn lift_all(
    lifter: &LifterParams,
    inputs: &[PoseSequence2D],
    pool: &[LifterExample],
    prior: &PosePrior,
    prompt_pairs: usize,
    exclude_self: bool,
    seed: u64,
) -> CliResult<Vec<PoseSequence3D>> {
    let mut rng = rng::stream(seed, "prompts");
    inputs
        .iter()
        .enumerate()
        .map(|(i, pose_2d)| {
            let prompts = pick_prompts(pool, prompt_pairs, exclude_self.then_some(i), &mut rng);
            let batch = assemble_prompt(&prompts, pose_2d, prior)?;
            Ok(lift(&batch, lifter)?)
        })
        .collect()
}
