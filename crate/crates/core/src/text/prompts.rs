use crate::topology::SkeletonTopology;

pub const GLOBAL_ACTION_PROMPT: &str = "Describe the action \"[action name]\" from a global perspective in one sentence. \
Name the body parts and joints that are required to perform it and how they move.";

pub const JOINT_MOTION_PROMPT: &str = "For the action \"[action name]\", describe in one sentence each how the \
following joints move: [joint-list]. Answer with one line per joint in the form `joint: description`.";

/// Returns `(global action prompt, joint motion prompt)` for an action.
pub fn render_prompts(action_name: &str, topology: &SkeletonTopology) -> (String, String) {
    let action = action_name.trim();
    let joints = topology.joint_names.join(", ");
    let global = GLOBAL_ACTION_PROMPT.replace("[action name]", action);
    let joint = JOINT_MOTION_PROMPT
        .replace("[action name]", action)
        .replace("[joint-list]", &joints);
    (global, joint)
}
