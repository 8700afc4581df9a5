use crate::model::ActionStep;

pub const DEFAULT_SPEED_EPS: f64 = 1e-3;

/// Key steps of a trajectory: the endpoints, every gripper toggle, and every
/// local minimum of the step speed that falls below `speed_eps`.
///
/// Speed at `t` is the forward difference `|p[t+1] − p[t]|`. A flat run of
/// equal speeds counts as one minimum, reported at its first index.
pub fn keyframe_select(actions: &[ActionStep], speed_eps: f64) -> Vec<usize> {
    let n = actions.len();
    if n == 0 {
        return Vec::new();
    }
    let mut keys = vec![0, n - 1];
    for t in 1..n {
        if actions[t].gripper != actions[t - 1].gripper {
            keys.push(t);
        }
    }
    let speed: Vec<f64> = actions
        .windows(2)
        .map(|w| {
            let d = [0, 1, 2].map(|i| w[1].position[i] - w[0].position[i]);
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .collect();
    let mut i = 0;
    while i < speed.len() {
        let mut j = i + 1;
        while j < speed.len() && speed[j] == speed[i] {
            j += 1;
        }
        let left_higher = i == 0 || speed[i - 1] > speed[i];
        let right_higher = j == speed.len() || speed[j] > speed[i];
        if speed[i] < speed_eps && left_higher && right_higher {
            keys.push(i);
        }
        i = j;
    }
    keys.sort_unstable();
    keys.dedup();
    keys
}
