//! One scripted grasp-and-release episode on the planar gripper.
//!
//! The object is only felt through blocked joints and touch readings.
//! `cargo run --release --example gripper_rollout`

use proprio::collect::{collect_passive, replay};
use proprio::env::{EnvConfig, Phase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::default();
    let episode = collect_passive(&env, 1, 42)?.remove(0);
    let label = episode.label;
    println!(
        "object: {:?}, half extents ({:.3}, {:.3}), angle {:.3} rad",
        label.shape, label.half_extents[0], label.half_extents[1], label.angle
    );
    println!("{:>3}  {:>6}  {:>28}  {:>28}", "t", "phase", "joint angles", "touch");
    for (t, x) in episode.observations.iter().enumerate() {
        let marker = episode.markers.iter().find(|m| m.t == t).map(|m| match m.phase {
            Phase::Open => "open",
            Phase::Closed => "closed",
        });
        if t % 5 == 0 || marker.is_some() {
            let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:6.3}")).collect::<Vec<_>>().join(" ");
            println!("{t:>3}  {:>6}  {}  {}", marker.unwrap_or(""), fmt(&x[0..4]), fmt(&x[12..16]));
        }
    }
    println!("cumulative touch {:.3}", episode.cumulative_touch(env.touch_dims()));
    println!("no-contact steps {}", episode.no_contact_steps(env.touch_dims()).len());
    assert_eq!(replay(&env, &episode)?, episode.observations);
    println!("replaying the actions reproduces every observation exactly");
    Ok(())
}
