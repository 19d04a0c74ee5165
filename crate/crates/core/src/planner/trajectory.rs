//! Planned belief trajectories.

use crate::collision::Checker;
use crate::error::{Error, Result};
use crate::geometry::PoseBelief;
use crate::mapping::CumulativeMap;
use crate::motion::{Belief, Control, MotionModel};

use super::dist;

/// A start belief and the `(control, resulting belief)` pairs that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: Belief,
    pub nodes: Vec<(Control, Belief)>,
    /// Planning frame the beliefs are expressed in.
    pub frame: PoseBelief,
    pub total_length: f64,
    pub reaches_goal: bool,
}

impl Trajectory {
    pub fn new(start: Belief, nodes: Vec<(Control, Belief)>, frame: PoseBelief, reaches_goal: bool) -> Self {
        let mut t = Trajectory { start, nodes, frame, total_length: 0.0, reaches_goal };
        t.total_length = t.chord_length();
        t
    }

    /// Sum of distances between consecutive node means.
    pub fn chord_length(&self) -> f64 {
        let mut prev = self.start.position();
        let mut len = 0.0;
        for (_, b) in &self.nodes {
            len += dist(prev, b.position());
            prev = b.position();
        }
        len
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.nodes.iter().map(|(c, _)| c.duration).sum()
    }

    pub fn controls(&self) -> Vec<Control> {
        self.nodes.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &Belief> {
        std::iter::once(&self.start).chain(self.nodes.iter().map(|(_, b)| b))
    }

    pub fn terminal(&self) -> &Belief {
        self.nodes.last().map(|(_, b)| b).unwrap_or(&self.start)
    }

    /// Largest deviation between stored beliefs and a fresh replay of the
    /// controls from the start belief.
    pub fn replay_error(&self, model: &MotionModel) -> Result<f64> {
        let mut cur = self.start.clone();
        let mut worst: f64 = 0.0;
        for (c, b) in &self.nodes {
            cur = model.propagate(&cur, c)?;
            worst = worst.max((&cur.mean - &b.mean).amax()).max((&cur.cov - &b.cov).amax());
        }
        Ok(worst)
    }
}

/// Check every belief of a trajectory against the map.
///
/// Returns `(valid, first invalid index)` where index 0 is the start belief.
pub fn validate_trajectory(traj: &Trajectory, map: &CumulativeMap, checker: &Checker) -> Result<(bool, Option<usize>)> {
    let a = traj.frame.mean();
    let b = map.frame().mean();
    if a.len() != b.len() || (a - b).amax() > 1e-9 {
        return Err(Error::FrameMismatch("trajectory and map are expressed in different frames".into()));
    }
    for (i, belief) in traj.beliefs().enumerate() {
        if !checker.is_safe(belief, map) {
            return Ok((false, Some(i)));
        }
    }
    Ok((true, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::SafetyConfig;
    use crate::geometry::PoseGroup;
    use crate::mapping::{DenseGrid, FusionParams};
    use crate::motion::{ModelKind, ModelParams};

    fn straight(model: &MotionModel, n: usize) -> Trajectory {
        let start = Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut cur = start.clone();
        let mut nodes = Vec::new();
        for _ in 0..n {
            let c = Control::new(vec![1.0, 0.0, 1.0, 0.0], 0.5);
            cur = model.propagate(&cur, &c).unwrap();
            nodes.push((c, cur.clone()));
        }
        Trajectory::new(start, nodes, PoseBelief::identity(PoseGroup::Se2), false)
    }

    #[test]
    fn empty_map_accepts_everything() {
        let model = MotionModel::new(ModelParams::default()).unwrap();
        let checker = Checker::new(SafetyConfig::default(), 0.3).unwrap();
        let map = CumulativeMap::empty(PoseBelief::identity(PoseGroup::Se2), 0.5, &FusionParams::default());
        assert_eq!(validate_trajectory(&straight(&model, 20), &map, &checker).unwrap(), (true, None));
        assert_eq!(validate_trajectory(&straight(&model, 0), &map, &checker).unwrap(), (true, None));
        assert!(straight(&model, 20).replay_error(&model).unwrap() < 1e-12);
    }

    #[test]
    fn blocked_trajectory_reports_first_bad_belief() {
        let model = MotionModel::new(ModelParams::default()).unwrap();
        let checker = Checker::new(SafetyConfig::default(), 0.0).unwrap();
        let mut g = DenseGrid::new([0, -10, 0], [40, 20, 1], 0.0);
        for i in 10..14 {
            for j in 0..20 {
                g.data[i * 20 + j] = 1.0;
            }
        }
        let map = CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.0, 0.0).unwrap();
        let t = straight(&model, 30);
        let (ok, idx) = validate_trajectory(&t, &map, &checker).unwrap();
        assert!(!ok);
        let i = idx.unwrap();
        let beliefs: Vec<&Belief> = t.beliefs().collect();
        assert!(!checker.is_safe(beliefs[i], &map));
        assert!(beliefs[..i].iter().all(|b| checker.is_safe(b, &map)));
        let other = PoseBelief::exact(PoseGroup::Se2, &[1.0, 0.0, 0.0]).unwrap();
        let mut moved = t.clone();
        moved.frame = other;
        assert!(validate_trajectory(&moved, &map, &checker).is_err());
    }
}
