//! Shared inputs for the benchmarks.

use evtrack_core::scene::{generate, GeneratedScene, SceneSpec};

/// The standard scene, shortened to `duration_us`.
pub fn standard_scene(duration_us: u64) -> GeneratedScene {
    let mut spec = SceneSpec::preset("standard").expect("standard preset");
    spec.duration = duration_us;
    generate(&spec).expect("standard scene generates")
}
