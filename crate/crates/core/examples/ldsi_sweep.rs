//! Prints filter metrics for each preset on a generated scene.
//!
//! `cargo run --release -p evtrack-core --example ldsi_sweep [scene] [seconds]`

use evtrack_core::ldsi::{filter_metrics, filter_stream, FilterPreset};
use evtrack_core::scene::{generate, SceneSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "standard".into());
    let seconds: f64 = args.next().map(|s| s.parse().expect("seconds")).unwrap_or(2.0);
    let mut spec = SceneSpec::preset(&name).expect("unknown scene preset");
    spec.duration = (seconds * 1e6) as u64;
    let scene = generate(&spec).expect("scene");
    println!(
        "scene {name}: {} events ({} signal)",
        scene.stream.len(),
        scene.signal_count()
    );
    for preset in FilterPreset::ALL {
        let out = filter_stream(&scene.stream, &preset.params()).expect("filter");
        let m = filter_metrics(&scene.stream, &out, &scene.sources, &scene.truth, spec.ball_radius)
            .expect("metrics");
        println!(
            "{:>6}: out {:>8} reduction {:.4} retention {:.4} noise-pass {:.4}",
            preset.name(),
            m.output_events,
            m.reduction.unwrap_or(f64::NAN),
            m.signal_retention.unwrap_or(f64::NAN),
            m.noise_passthrough.unwrap_or(f64::NAN),
        );
    }
}
