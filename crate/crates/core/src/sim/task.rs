use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub width: f64,
    pub height: f64,
    pub radius: f64,
    /// Screen units per step per unit decoded velocity.
    pub move_scale: f64,
    pub max_steps: usize,
    /// Distance at which the proportional controller reaches full speed.
    pub slow_zone: f64,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 600.0,
            radius: 50.0,
            move_scale: 5.0,
            max_steps: 300,
            slow_zone: 200.0,
            dt: 0.01,
        }
    }
}

/// Center-out reach: the cursor starts at the screen center each trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTask {
    pub cfg: TaskConfig,
    pub cursor: [f64; 2],
    pub target: [f64; 2],
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub steps: usize,
    pub success: bool,
    /// `steps·dt`, or the full trial duration on timeout.
    pub time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<[f64; 2]>>,
}

impl ReachTask {
    pub fn new(cfg: TaskConfig) -> Self {
        let center = [cfg.width / 2.0, cfg.height / 2.0];
        Self {
            cfg,
            cursor: center,
            target: center,
            steps: 0,
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cfg.width / 2.0, self.cfg.height / 2.0]
    }

    /// Recenters the cursor and draws a target fully on screen and more than
    /// three radii from the center.
    pub fn new_trial(&mut self, rng: &mut impl Rng) {
        let c = self.center();
        let r = self.cfg.radius;
        loop {
            let t = [
                rng.gen_range(r..self.cfg.width - r),
                rng.gen_range(r..self.cfg.height - r),
            ];
            if dist(t, c) > 3.0 * r {
                self.target = t;
                break;
            }
        }
        self.cursor = c;
        self.steps = 0;
    }

    pub fn distance(&self) -> f64 {
        dist(self.target, self.cursor)
    }

    /// Proportional controller: unit direction to the target scaled by
    /// `min(1, dist/slow_zone)`.
    pub fn desired_velocity(&self) -> [f64; 2] {
        let d = self.distance();
        if d == 0.0 {
            return [0.0, 0.0];
        }
        let k = (d / self.cfg.slow_zone).min(1.0) / d;
        [
            (self.target[0] - self.cursor[0]) * k,
            (self.target[1] - self.cursor[1]) * k,
        ]
    }

    /// Moves the cursor by the decoded velocity, clamped to the screen.
    /// Returns whether the cursor is now inside the target.
    pub fn cursor_update(&mut self, v: [f64; 2]) -> bool {
        let s = self.cfg.move_scale;
        let step = |p: f64, dv: f64, hi: f64| {
            let n = p + s * dv;
            if n.is_nan() {
                p
            } else {
                n.clamp(0.0, hi)
            }
        };
        self.cursor = [
            step(self.cursor[0], v[0], self.cfg.width),
            step(self.cursor[1], v[1], self.cfg.height),
        ];
        self.steps += 1;
        self.is_success()
    }

    pub fn is_success(&self) -> bool {
        self.distance() < self.cfg.radius
    }

    pub fn result(&self, success: bool, trajectory: Option<Vec<[f64; 2]>>) -> TrialResult {
        let time_s = if success {
            self.steps as f64 * self.cfg.dt
        } else {
            self.cfg.max_steps as f64 * self.cfg.dt
        };
        TrialResult {
            steps: self.steps,
            success,
            time_s,
            trajectory,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
