use serde::{Deserialize, Serialize};

use super::NetError;

/// Repeating coverage window of a satellite pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub pass_start: f64,
    pub pass_duration: f64,
    pub period: f64,
}

impl Orbit {
    pub fn new(pass_start: f64, pass_duration: f64, period: f64) -> Result<Self, NetError> {
        let o = Self { pass_start, pass_duration, period };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.period > 0.0 && self.pass_duration > 0.0 && self.pass_duration < self.period) {
            return Err(NetError::InvalidLink(format!(
                "orbit needs 0 < pass_duration < period (got {} and {})",
                self.pass_duration, self.period
            )));
        }
        if !(self.pass_start >= 0.0) {
            return Err(NetError::InvalidLink(format!("negative pass start {}", self.pass_start)));
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        if t < self.pass_start {
            return false;
        }
        (t - self.pass_start).rem_euclid(self.period) < self.pass_duration
    }

    pub fn next_window(&self, t: f64) -> (f64, f64) {
        let mut k = if t < self.pass_start { 0.0 } else { ((t - self.pass_start) / self.period).floor() };
        loop {
            let start = self.pass_start + k * self.period;
            let end = start + self.pass_duration;
            if end > t {
                return (start, end);
            }
            k += 1.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MobilityModel {
    Static {
        position: [f64; 3],
    },
    /// Piecewise-linear path, clamped before the first and after the last point.
    Waypoint {
        points: Vec<(f64, [f64; 3])>,
    },
    /// Fixed footprint center, visible only during pass windows.
    Orbit {
        position: [f64; 3],
        #[serde(flatten)]
        orbit: Orbit,
    },
}

impl MobilityModel {
    pub fn position(&self, t: f64) -> [f64; 3] {
        match self {
            MobilityModel::Static { position } | MobilityModel::Orbit { position, .. } => *position,
            MobilityModel::Waypoint { points } => {
                let Some(first) = points.first() else {
                    return [0.0; 3];
                };
                if t <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let (t0, p0) = w[0];
                    let (t1, p1) = w[1];
                    if t <= t1 {
                        let f = (t - t0) / (t1 - t0);
                        return [p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1]), p0[2] + f * (p1[2] - p0[2])];
                    }
                }
                points[points.len() - 1].1
            }
        }
    }

    pub fn in_window(&self, t: f64) -> bool {
        match self {
            MobilityModel::Orbit { orbit, .. } => orbit.contains(t),
            _ => true,
        }
    }

    pub fn orbit(&self) -> Option<&Orbit> {
        match self {
            MobilityModel::Orbit { orbit, .. } => Some(orbit),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        match self {
            MobilityModel::Static { .. } => Ok(()),
            MobilityModel::Orbit { orbit, .. } => orbit.validate(),
            MobilityModel::Waypoint { points } => {
                if points.is_empty() {
                    return Err(NetError::InvalidLink("waypoint list is empty".into()));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(NetError::InvalidLink("waypoint times must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }
}
