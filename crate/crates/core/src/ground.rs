//! Background behaviour for ground entities: IDM car following, gap-acceptance
//! lane changes, fixed-time signals with emergency preemption, and waypoint
//! pedestrians.

use serde::{Deserialize, Serialize};

use crate::map::{Intersection, SignalPlan};

pub const DEFAULT_PEDESTRIAN_SPEED: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    pub a_max: f64,
    pub b: f64,
    pub v0: f64,
    pub s0: f64,
    #[serde(rename = "T")]
    pub t_headway: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    4.0
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 2.0,
            b: 3.0,
            v0: 15.0,
            s0: 2.0,
            t_headway: 1.5,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn b_emergency(&self) -> f64 {
        3.0 * self.b
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("a_max", self.a_max),
            ("b", self.b),
            ("v0", self.v0),
            ("delta", self.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("s0", self.s0), ("T", self.t_headway)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("gap to leader must be positive, got {0}")]
pub struct InvalidGap(pub f64);

/// Intelligent Driver Model acceleration, clamped to `[-3b, a_max]`.
///
/// `gap` is bumper-to-bumper distance; pass `f64::INFINITY` for a free road.
pub fn idm_accel(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> Result<f64, InvalidGap> {
    if !(gap > 0.0) {
        return Err(InvalidGap(gap));
    }
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = if gap.is_finite() {
        // dynamic part floored at zero so a faster leader never shrinks s* below s0;
        // this keeps the law non-increasing in v
        let dynamic = v * p.t_headway + v * (v - v_lead) / (2.0 * (p.a_max * p.b).sqrt());
        let s_star = p.s0 + dynamic.max(0.0);
        (s_star / gap) * (s_star / gap)
    } else {
        0.0
    };
    Ok((p.a_max * (free - interaction)).clamp(-p.b_emergency(), p.a_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneChange {
    #[default]
    Keep,
    Left,
    Right,
}

/// Nearest neighbours on a candidate target lane, measured from the ego.
/// Absent neighbours are represented by infinite gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGaps {
    pub leader_gap: f64,
    pub follower_gap: f64,
    pub follower_speed: f64,
}

impl TargetGaps {
    pub const EMPTY: TargetGaps = TargetGaps {
        leader_gap: f64::INFINITY,
        follower_gap: f64::INFINITY,
        follower_speed: 0.0,
    };
}

/// A body on a lane, by center arc length and length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneBody {
    pub s: f64,
    pub length: f64,
    pub speed: f64,
}

/// Gaps to the closest leader and follower among `others` when the ego body is
/// projected onto their lane at the same arc length.
pub fn target_gaps(ego: LaneBody, others: &[LaneBody]) -> TargetGaps {
    let mut g = TargetGaps::EMPTY;
    for o in others {
        let half = (ego.length + o.length) / 2.0;
        if o.s >= ego.s {
            let gap = o.s - ego.s - half;
            if gap < g.leader_gap {
                g.leader_gap = gap;
            }
        } else {
            let gap = ego.s - o.s - half;
            if gap < g.follower_gap {
                g.follower_gap = gap;
                g.follower_speed = o.speed;
            }
        }
    }
    g
}

/// Safety gate for moving into a neighbouring lane.
pub fn gaps_acceptable(v: f64, p: &IdmParams, gaps: &TargetGaps) -> bool {
    gaps.leader_gap >= p.s0 + v * p.t_headway
        && gaps.follower_gap >= p.s0 + gaps.follower_speed * p.t_headway
}

/// Decide a lane change. `desire` is what the route (or a controller) asks
/// for; `left`/`right` carry the gaps on those lanes when they exist.
pub fn lane_change_decide(
    v: f64,
    p: &IdmParams,
    desire: LaneChange,
    left: Option<&TargetGaps>,
    right: Option<&TargetGaps>,
) -> LaneChange {
    let target = match desire {
        LaneChange::Keep => return LaneChange::Keep,
        LaneChange::Left => left,
        LaneChange::Right => right,
    };
    match target {
        Some(g) if gaps_acceptable(v, p, g) => desire,
        _ => LaneChange::Keep,
    }
}

/// Movement indices active under the fixed-time plan at `tick`. A phase
/// boundary belongs to the later phase.
pub fn signal_state(plan: &SignalPlan, tick: u64) -> &[usize] {
    &plan.phases[phase_index_at(plan, tick)].movements
}

pub fn phase_index_at(plan: &SignalPlan, tick: u64) -> usize {
    let mut t = tick % plan.cycle();
    for (i, p) in plan.phases.iter().enumerate() {
        if t < p.duration {
            return i;
        }
        t -= p.duration;
    }
    unreachable!("tick mod cycle always falls inside a phase")
}

/// Smallest phase index serving `movement`.
pub fn serving_phase(plan: &SignalPlan, movement: usize) -> Option<usize> {
    plan.phases
        .iter()
        .position(|p| p.movements.contains(&movement))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no phase of `{intersection}` serves movement {movement}")]
pub struct NoServingPhase {
    pub intersection: String,
    pub movement: usize,
}

/// Active movements while a priority vehicle on `approach_movement` is within
/// the preemption distance. Callers fall back to [`signal_state`] otherwise.
pub fn preempt(plan: &SignalPlan, approach_movement: usize) -> Result<&[usize], NoServingPhase> {
    serving_phase(plan, approach_movement)
        .map(|i| plan.phases[i].movements.as_slice())
        .ok_or_else(|| NoServingPhase {
            intersection: plan.intersection_id.clone(),
            movement: approach_movement,
        })
}

/// Whether a vehicle on `movement` may proceed given the active set.
pub fn movement_green(active: &[usize], movement: usize) -> bool {
    active.contains(&movement)
}

/// Whether any pair in `active` conflicts.
pub fn has_conflict(inter: &Intersection, active: &[usize]) -> bool {
    !inter.conflicting_pairs(active).is_empty()
}

/// One constant-speed step of a waypoint walker. Returns the new position,
/// the new waypoint index and the travel direction (None when not moving).
pub fn walker_step(
    pos: [f64; 3],
    waypoints: &[[f64; 3]],
    index: usize,
    speed: f64,
    dt: f64,
) -> ([f64; 3], usize, Option<[f64; 2]>) {
    let mut pos = pos;
    let mut index = index;
    let mut budget = speed * dt;
    let mut dir = None;
    while index < waypoints.len() && budget > 0.0 {
        let w = waypoints[index];
        let d = [w[0] - pos[0], w[1] - pos[1], w[2] - pos[2]];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if dist > 0.0 {
            dir = Some([d[0], d[1]]);
        }
        if dist <= budget {
            pos = w;
            budget -= dist;
            index += 1;
        } else {
            let k = budget / dist;
            pos = [pos[0] + d[0] * k, pos[1] + d[1] * k, pos[2] + d[2] * k];
            budget = 0.0;
        }
    }
    (pos, index, dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Phase;
    use proptest::prelude::*;

    fn plan() -> SignalPlan {
        SignalPlan {
            intersection_id: "j".into(),
            phases: vec![
                Phase {
                    movements: vec![0, 1],
                    duration: 30,
                },
                Phase {
                    movements: vec![2, 3],
                    duration: 30,
                },
            ],
        }
    }

    // Closed form evaluated independently (python, float64):
    // s* = 2 + 10*1.5 + 10*2/(2*sqrt(6)) = 21.08248290463863
    // a  = 2*(1 - (10/15)^4 - (s*/20)^2) = -0.617417155516963
    const IDM_REFERENCE: f64 = -0.617417155516963;

    #[test]
    fn idm_examples() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(15.0, 3.0, f64::INFINITY, &p).unwrap(), 0.0);
        assert_eq!(idm_accel(0.0, 0.0, 2.0, &p).unwrap(), 0.0);
        let a = idm_accel(10.0, 8.0, 20.0, &p).unwrap();
        assert!((a - IDM_REFERENCE).abs() < 1e-12, "{a}");
        assert!((a - -0.617).abs() < 5e-4);
    }

    #[test]
    fn idm_clamps() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(15.0, 0.0, 0.5, &p).unwrap(), -9.0);
        assert_eq!(idm_accel(0.0, 0.0, f64::INFINITY, &p).unwrap(), 2.0);
        assert_eq!(idm_accel(1.0, 0.0, 0.0, &p), Err(InvalidGap(0.0)));
        assert!(idm_accel(1.0, 0.0, -1.0, &p).is_err());
    }

    #[test]
    fn signal_examples() {
        let p = plan();
        assert_eq!(signal_state(&p, 0), &[0, 1]);
        assert_eq!(signal_state(&p, 29), &[0, 1]);
        assert_eq!(signal_state(&p, 30), &[2, 3]);
        assert_eq!(signal_state(&p, 75), &[0, 1]);
    }

    #[test]
    fn preempt_picks_smallest_serving_phase() {
        let mut p = plan();
        p.phases.push(Phase {
            movements: vec![2],
            duration: 5,
        });
        assert_eq!(preempt(&p, 2).unwrap(), &[2, 3]);
        assert_eq!(preempt(&p, 0).unwrap(), &[0, 1]);
        assert!(preempt(&p, 9).is_err());
    }

    #[test]
    fn lane_change_examples() {
        let p = IdmParams::default();
        let empty = TargetGaps::EMPTY;
        assert_eq!(
            lane_change_decide(10.0, &p, LaneChange::Left, Some(&empty), None),
            LaneChange::Left
        );
        let tight = TargetGaps {
            leader_gap: f64::INFINITY,
            follower_gap: 1.0,
            follower_speed: 0.0,
        };
        assert_eq!(
            lane_change_decide(10.0, &p, LaneChange::Left, Some(&tight), None),
            LaneChange::Keep
        );
        // no lane on that side
        assert_eq!(
            lane_change_decide(10.0, &p, LaneChange::Right, Some(&empty), None),
            LaneChange::Keep
        );
    }

    #[test]
    fn walker_reaches_and_advances() {
        let wps = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
        let (pos, idx, _) = walker_step([0.0, 0.0, 0.0], &wps, 0, 1.4, 1.0);
        assert_eq!(idx, 1);
        assert!((pos[1] - 0.4).abs() < 1e-12);
        let (pos, idx, _) = walker_step(pos, &wps, idx, 1.4, 1.0);
        assert_eq!((pos, idx), ([1.0, 1.0, 0.0], 2));
    }

    proptest! {
        #[test]
        fn idm_non_increasing_in_speed(v1 in 0.0f64..15.0, dv in 0.0f64..5.0, vl in 0.0f64..20.0, gap in 0.1f64..200.0) {
            let p = IdmParams::default();
            let v2 = (v1 + dv).min(p.v0);
            let a1 = idm_accel(v1, vl, gap, &p).unwrap();
            let a2 = idm_accel(v2, vl, gap, &p).unwrap();
            prop_assert!(a2 <= a1 + 1e-12, "{a1} {a2}");
        }

        #[test]
        fn idm_non_decreasing_in_gap(v in 0.0f64..15.0, vl in 0.0f64..20.0, g1 in 0.1f64..200.0, dg in 0.0f64..100.0) {
            let p = IdmParams::default();
            let a1 = idm_accel(v, vl, g1, &p).unwrap();
            let a2 = idm_accel(v, vl, g1 + dg, &p).unwrap();
            let a3 = idm_accel(v, vl, f64::INFINITY, &p).unwrap();
            prop_assert!(a2 >= a1 - 1e-12);
            prop_assert!(a3 >= a2 - 1e-12);
        }

        #[test]
        fn signal_periodic(t in 0u64..1_000_000, d1 in 1u64..100, d2 in 1u64..100) {
            let mut p = plan();
            p.phases[0].duration = d1;
            p.phases[1].duration = d2;
            prop_assert_eq!(signal_state(&p, t), signal_state(&p, t + p.cycle()));
        }
    }
}
