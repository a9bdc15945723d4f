use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detection range in metres; farther or absent objects use the sentinel.
pub const DETECTION_RANGE: f64 = 100.0;

pub const RED: u8 = 0;
pub const YELLOW: u8 = 1;
pub const GREEN: u8 = 2;

/// One 1 Hz sample of a target vehicle and its surroundings.
///
/// When an indicator is false the paired distance is [`DETECTION_RANGE`]
/// and the paired speed equals the target speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingRecord {
    pub t: u32,
    /// Target vehicle speed, m/s.
    pub v_target: f64,
    pub v_preceding: f64,
    pub has_preceding: bool,
    pub has_light: bool,
    pub d_preceding: f64,
    /// Distance to the stop line of the next traffic light.
    pub d_light: f64,
    /// Current signal state: red 0, yellow 1, green 2.
    pub light_state: u8,
    /// Signal states for the following seconds, as known at `t`.
    pub light_future: Vec<u8>,
    pub v_side: f64,
    pub has_side: bool,
    pub d_side: f64,
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
    /// Image pixel share of cars and vans.
    pub r_cars: f64,
    /// Image pixel share of buses and trucks.
    pub r_heavy: f64,
    /// Image pixel share of traffic lights.
    pub r_lights: f64,
}

impl DrivingRecord {
    /// Applies the detection cutoff and sentinel encoding in place.
    pub fn canonicalize(&mut self) {
        if self.d_preceding > DETECTION_RANGE {
            self.has_preceding = false;
        }
        if !self.has_preceding {
            self.d_preceding = DETECTION_RANGE;
            self.v_preceding = self.v_target;
        }
        if self.d_light > DETECTION_RANGE {
            self.has_light = false;
        }
        if !self.has_light {
            self.d_light = DETECTION_RANGE;
        }
        if self.d_side > DETECTION_RANGE {
            self.has_side = false;
        }
        if !self.has_side {
            self.d_side = DETECTION_RANGE;
            self.v_side = self.v_target;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(format!("t={}: {m}", self.t)));
        let scalars = [
            self.v_target,
            self.v_preceding,
            self.d_preceding,
            self.d_light,
            self.v_side,
            self.d_side,
            self.throttle,
            self.brake,
            self.steer,
            self.r_cars,
            self.r_heavy,
            self.r_lights,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return fail("non-finite value".into());
        }
        if self.v_target < 0.0 {
            return fail(format!("negative target speed {}", self.v_target));
        }
        if self.v_preceding < 0.0 || self.v_side < 0.0 {
            return fail("negative neighbour speed".into());
        }
        if self.d_preceding < 0.0 || self.d_light < 0.0 || self.d_side < 0.0 {
            return fail("negative distance".into());
        }
        for (name, v) in [("throttle", self.throttle), ("brake", self.brake)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(-1.0..=1.0).contains(&self.steer) {
            return fail(format!("steer {} outside [-1, 1]", self.steer));
        }
        for r in [self.r_cars, self.r_heavy, self.r_lights] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("pixel ratio {r} outside [0, 1]"));
            }
        }
        let total = self.r_cars + self.r_heavy + self.r_lights;
        if total > 1.0 + 1e-12 {
            return fail(format!("pixel ratios sum to {total} > 1"));
        }
        if std::iter::once(&self.light_state)
            .chain(&self.light_future)
            .any(|&s| s > GREEN)
        {
            return fail("signal state outside {0, 1, 2}".into());
        }
        if !self.has_preceding
            && (self.d_preceding != DETECTION_RANGE || self.v_preceding != self.v_target)
        {
            return fail("absent preceding vehicle without sentinel encoding".into());
        }
        if !self.has_light && self.d_light != DETECTION_RANGE {
            return fail("absent traffic light without sentinel distance".into());
        }
        if !self.has_side && (self.d_side != DETECTION_RANGE || self.v_side != self.v_target) {
            return fail("absent side vehicle without sentinel encoding".into());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn sample_record(t: u32, v: f64, horizon: usize) -> DrivingRecord {
    let mut r = DrivingRecord {
        t,
        v_target: v,
        v_preceding: 0.0,
        has_preceding: false,
        has_light: false,
        d_preceding: 0.0,
        d_light: 0.0,
        light_state: GREEN,
        light_future: vec![GREEN; horizon],
        v_side: 0.0,
        has_side: false,
        d_side: 0.0,
        throttle: 0.0,
        brake: 0.0,
        steer: 0.0,
        r_cars: 0.0,
        r_heavy: 0.0,
        r_lights: 0.0,
    };
    r.canonicalize();
    r
}
