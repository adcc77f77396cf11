//! Randomised gradient checks of the horizon cost on a scene that activates
//! every field family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_gradients, OcpConfig, Problem};
use crate::dynamics::{NU, NX};
use crate::error::Result;
use crate::map::MarkingKind;
use crate::potential::{LaneMarking, LightZone, ObstaclePose, PFParams, PotentialScene, Side, StageScene};

/// Straight two-lane road along +x with a stopped vehicle ahead, a leader in
/// the left lane, a pedestrian at the kerb and a red light.
pub fn probe_scene(n: usize, ts: f64, v: f64) -> (Vec<[f64; NX]>, PotentialScene) {
    let x_ref: Vec<[f64; NX]> = (1..=n).map(|k| [v * ts * k as f64, 0.0, 0.0, v, 0.0, 0.0]).collect();
    let w = 3.5;
    let stages = x_ref
        .iter()
        .map(|r| StageScene {
            markings: vec![
                LaneMarking::new(r[0], 0.0, 0.0, Side::Right, MarkingKind::NonCrossable, w),
                LaneMarking::new(r[0], 0.0, 0.0, Side::Left, MarkingKind::Crossable, w),
                LaneMarking::new(r[0], 3.5, 0.0, Side::Left, MarkingKind::NonCrossable, w),
            ],
            vehicles: vec![
                ObstaclePose {
                    px: 14.0,
                    py: 0.0,
                    phi: 0.0,
                    speed: 0.0,
                },
                ObstaclePose {
                    px: 16.0,
                    py: 3.4,
                    phi: 0.03,
                    speed: 6.0,
                },
            ],
            leader: Some(1),
            pedestrians: vec![[10.0, -2.8]],
            light: Some(LightZone {
                stop: [20.0, 0.0],
                phi: 0.0,
                width: w,
                red: true,
            }),
        })
        .collect();
    (
        x_ref,
        PotentialScene {
            stages,
            tracking_boost: false,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSurvey {
    pub points: usize,
    /// Largest relative error over all smooth coordinates of all points.
    pub max_rel_error: f64,
    /// Coordinates skipped because a field kink lies within the probe step.
    pub nonsmooth: usize,
    pub coordinates: usize,
}

impl GradientSurvey {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compare analytic and central-difference gradients of the horizon cost at
/// `points` random trajectories around the probe scene's reference.
pub fn gradient_survey(cfg: &OcpConfig, pf: &PFParams, points: usize, seed: u64) -> Result<GradientSurvey> {
    cfg.validate()?;
    pf.validate()?;
    let (x_ref, scene) = probe_scene(cfg.n, cfg.ts, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradientSurvey {
        points,
        max_rel_error: 0.0,
        nonsmooth: 0,
        coordinates: 0,
    };
    for _ in 0..points {
        let pb = Problem {
            x0: [0.0, rng.gen_range(-0.5..0.5), 0.0, 10.0, 0.0, 0.0],
            x_ref: &x_ref,
            scene: &scene,
            pf,
            u_prev: Some([rng.gen_range(-1.0..1.0), rng.gen_range(-0.05..0.05)]),
        };
        let x: Vec<[f64; NX]> = x_ref
            .iter()
            .map(|r| {
                [
                    r[0] + rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.6..3.2),
                    rng.gen_range(-0.2..0.2),
                    r[3] + rng.gen_range(-3.0..3.0),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.2..0.2),
                ]
            })
            .collect();
        let u: Vec<[f64; NU]> = (0..cfg.n)
            .map(|_| [rng.gen_range(-4.0..2.0), rng.gen_range(-0.3..0.3)])
            .collect();
        let rep = check_gradients(cfg, &pb, &x, &u)?;
        out.max_rel_error = out.max_rel_error.max(rep.max_rel_error);
        out.nonsmooth += rep.flagged();
        out.coordinates += rep.rel_error.len();
    }
    Ok(out)
}
