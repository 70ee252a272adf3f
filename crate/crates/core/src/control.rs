//! Piecewise-constant controls on the dyadic time grid `{k 2^{-n}}`.

use crate::actions::{ActionGrid, ActionVec};
use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, SimplexGrid};

/// Dyadic step `2^{-n}`.
pub fn dyadic_step(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

/// Anything that picks an action at each dyadic decision time.
pub trait Policy: Sync {
    /// Dyadic level `n`; decisions are taken every `2^{-n}` time units.
    fn level(&self) -> u32;

    /// Action table that [`Policy::decide`] indexes into.
    fn actions(&self) -> &[ActionVec];

    /// Action index for decision number `step` given the current filter.
    fn decide(&self, step: usize, belief: &AtomicMeasure) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    /// Action indices at successive decision times; the last one is held.
    OpenLoop(Vec<usize>),
    /// Action index per simplex grid node.
    Feedback(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub level: u32,
    pub mode: ScheduleMode,
}

impl ControlSchedule {
    pub fn constant(level: u32, action: usize) -> Self {
        Self {
            level,
            mode: ScheduleMode::OpenLoop(vec![action]),
        }
    }

    pub fn step(&self) -> f64 {
        dyadic_step(self.level)
    }

    pub fn feedback_table(&self) -> Option<&[usize]> {
        match &self.mode {
            ScheduleMode::Feedback(table) => Some(table),
            ScheduleMode::OpenLoop(_) => None,
        }
    }
}

/// A schedule bound to its action grid (and simplex grid for feedback tables).
#[derive(Debug, Clone, Copy)]
pub struct SchedulePolicy<'a> {
    schedule: &'a ControlSchedule,
    actions: &'a ActionGrid,
    grid: Option<&'a SimplexGrid>,
}

impl<'a> SchedulePolicy<'a> {
    pub fn new(
        schedule: &'a ControlSchedule,
        actions: &'a ActionGrid,
        grid: Option<&'a SimplexGrid>,
    ) -> Result<Self> {
        let indices = match &schedule.mode {
            ScheduleMode::OpenLoop(list) => {
                if list.is_empty() {
                    return Err(Error::Config("open-loop schedule is empty".into()));
                }
                list
            }
            ScheduleMode::Feedback(table) => {
                let grid = grid.ok_or_else(|| {
                    Error::Config("feedback schedule needs its simplex grid".into())
                })?;
                if table.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "feedback table has {} entries for {} grid nodes",
                        table.len(),
                        grid.len()
                    )));
                }
                table
            }
        };
        if let Some(bad) = indices.iter().find(|&&i| i >= actions.len()) {
            return Err(Error::Config(format!(
                "action index {bad} out of range for {} candidates",
                actions.len()
            )));
        }
        Ok(Self {
            schedule,
            actions,
            grid,
        })
    }
}

impl Policy for SchedulePolicy<'_> {
    fn level(&self) -> u32 {
        self.schedule.level
    }

    fn actions(&self) -> &[ActionVec] {
        self.actions.candidates()
    }

    fn decide(&self, step: usize, belief: &AtomicMeasure) -> usize {
        match &self.schedule.mode {
            ScheduleMode::OpenLoop(list) => list[step.min(list.len() - 1)],
            ScheduleMode::Feedback(table) => {
                let grid = self.grid.expect("checked at construction");
                table[grid.nearest_node(belief)]
            }
        }
    }
}

/// Holds a single action forever.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    level: u32,
    action: [ActionVec; 1],
}

impl ConstantPolicy {
    pub fn new(level: u32, action: ActionVec) -> Self {
        Self {
            level,
            action: [action],
        }
    }
}

impl Policy for ConstantPolicy {
    fn level(&self) -> u32 {
        self.level
    }

    fn actions(&self) -> &[ActionVec] {
        &self.action
    }

    fn decide(&self, _step: usize, _belief: &AtomicMeasure) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{make_action_grid, ActionGridSpec, LevelSpec};
    use crate::measures::{make_simplex_grid, AtomSet, DEFAULT_NODE_CAP};

    fn grid_actions() -> ActionGrid {
        make_action_grid(&ActionGridSpec {
            radius: 2.0,
            budget: 4.0,
            d: 1,
            levels: LevelSpec::Shared(vec![0.0, 0.5, 1.0]),
            scales: vec![1.0],
            axes_only: false,
        })
        .unwrap()
    }

    #[test]
    fn dyadic_steps() {
        assert_eq!(dyadic_step(0), 1.0);
        assert_eq!(dyadic_step(2), 0.25);
        assert_eq!(ControlSchedule::constant(3, 0).step(), 0.125);
    }

    #[test]
    fn open_loop_holds_last_action() {
        let actions = grid_actions();
        let schedule = ControlSchedule {
            level: 1,
            mode: ScheduleMode::OpenLoop(vec![2, 1]),
        };
        let policy = SchedulePolicy::new(&schedule, &actions, None).unwrap();
        let mu = AtomicMeasure::uniform(AtomSet::new(vec![-1.0, 1.0]).unwrap());
        let picks: Vec<usize> = (0..4).map(|k| policy.decide(k, &mu)).collect();
        assert_eq!(picks, vec![2, 1, 1, 1]);
    }

    #[test]
    fn feedback_uses_nearest_node() {
        let actions = grid_actions();
        let atoms = AtomSet::new(vec![-1.0, 1.0]).unwrap();
        let grid = make_simplex_grid(atoms.clone(), 4, DEFAULT_NODE_CAP).unwrap();
        let schedule = ControlSchedule {
            level: 2,
            mode: ScheduleMode::Feedback(vec![0, 1, 2, 1, 0]),
        };
        let policy = SchedulePolicy::new(&schedule, &actions, Some(&grid)).unwrap();
        let mu = AtomicMeasure::new(atoms, vec![0.52, 0.48]).unwrap();
        assert_eq!(policy.decide(0, &mu), 2);
    }

    #[test]
    fn invalid_schedules_rejected() {
        let actions = grid_actions();
        let atoms = AtomSet::new(vec![-1.0, 1.0]).unwrap();
        let grid = make_simplex_grid(atoms, 4, DEFAULT_NODE_CAP).unwrap();
        let short = ControlSchedule {
            level: 2,
            mode: ScheduleMode::Feedback(vec![0, 1]),
        };
        assert!(SchedulePolicy::new(&short, &actions, Some(&grid)).is_err());
        let bad = ControlSchedule::constant(0, 9);
        assert!(SchedulePolicy::new(&bad, &actions, None).is_err());
        let no_grid = ControlSchedule {
            level: 2,
            mode: ScheduleMode::Feedback(vec![0; 5]),
        };
        assert!(SchedulePolicy::new(&no_grid, &actions, None).is_err());
    }
}
