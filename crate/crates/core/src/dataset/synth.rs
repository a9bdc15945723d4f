//! Seeded 1 Hz urban driving simulation producing [`DrivingRecord`] traces.
//!
//! The target vehicle tracks a desired speed with a proportional controller.
//! The desired speed is the cruise speed capped by a car-following term for a
//! preceding vehicle, a braking envelope for red lights, turns and occasional
//! parking stops. Leaders, side vehicles and heavy vehicles come and go at
//! random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{DrivingRecord, DETECTION_RANGE, GREEN, RED, YELLOW};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// Scales the speed-tracking gain.
    pub aggressiveness: f64,
    /// Preferred free-flow speed, m/s.
    pub cruise_speed: f64,
    /// Engine strength multiplier of the vehicle.
    pub vehicle_power: f64,
    /// Seconds before the driver reacts to the preceding vehicle.
    pub reaction_delay: f64,
    /// Willingness to stop at yellow, in `(0, 1]`.
    pub stop_tendency: f64,
}

impl DriverProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("aggressiveness", self.aggressiveness),
            ("cruise_speed", self.cruise_speed),
            ("vehicle_power", self.vehicle_power),
            ("reaction_delay", self.reaction_delay),
            ("stop_tendency", self.stop_tendency),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("profile {name} must be positive, got {v}")));
            }
        }
        if self.stop_tendency > 1.0 {
            return Err(Error::Config("profile stop_tendency must be at most 1".into()));
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        self.aggressiveness * self.vehicle_power
    }

    /// Largest speed change per second.
    pub fn max_accel(&self) -> f64 {
        4.0 * self.gain()
    }
}

/// `n` distinct drivers with cruise speeds spread over 6..16 m/s.
pub fn default_profiles(n: usize, seed: u64) -> Vec<DriverProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers = [0.7, 1.0, 1.3];
    let mut slots: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        slots.swap(i, rng.gen_range(0..=i));
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            let frac = (slot as f64 + rng.gen_range(0.25..0.75)) / n.max(1) as f64;
            DriverProfile {
                aggressiveness: rng.gen_range(0.3..0.9),
                cruise_speed: 6.0 + 10.0 * frac,
                vehicle_power: powers[i % powers.len()],
                reaction_delay: rng.gen_range(0.5..2.5),
                stop_tendency: rng.gen_range(0.1..0.95),
            }
        })
        .collect()
}

struct Light {
    pos: f64,
    green: u32,
    cycle: u32,
    offset: u32,
}

impl Light {
    fn random(pos: f64, rng: &mut ChaCha8Rng) -> Self {
        let green = rng.gen_range(18..40);
        let red = rng.gen_range(18..40);
        Light {
            pos,
            green,
            cycle: green + 3 + red,
            offset: rng.gen_range(0..green + 3 + red),
        }
    }

    fn state(&self, t: u32) -> u8 {
        let phase = (t + self.offset) % self.cycle;
        if phase < self.green {
            GREEN
        } else if phase < self.green + 3 {
            YELLOW
        } else {
            RED
        }
    }
}

struct Leader {
    x: f64,
    v: f64,
    goal: f64,
}

struct Side {
    gap: f64,
    dv: f64,
}

#[derive(Clone, Copy)]
struct Seen {
    present: bool,
    gap: f64,
    v: f64,
}

/// Simulates `duration_s` seconds of one driver. Each record carries
/// `horizon` future signal states of the light ahead.
pub fn generate_synthetic_client(
    profile: &DriverProfile,
    duration_s: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<DrivingRecord>> {
    profile.validate()?;
    if duration_s < 2 * horizon {
        return Err(Error::Contract(format!(
            "duration {duration_s}s shorter than one window of {} steps",
            2 * horizon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let a_max = profile.max_accel();
    let gain = profile.gain().min(1.0);
    let headway = 2.6 - 1.5 * profile.aggressiveness;
    let comfort_decel = 1.0 + 2.0 * profile.aggressiveness;
    let delay = profile.reaction_delay.round() as usize;

    let mut x = 0.0f64;
    let mut v = 0.0f64;
    let mut light = Light::random(rng.gen_range(60.0..250.0), &mut rng);
    let mut leader: Option<Leader> = None;
    let mut side: Option<Side> = None;
    let mut cruise_dev = 0.0f64;
    let mut steer = 0.0f64;
    let mut turn: Option<(u32, f64, f64)> = None; // (remaining, speed, steer)
    let mut parked = 0u32;
    let mut heavy: Option<(u32, f64)> = None;
    let mut committed_through = false;
    let mut seen: Vec<Seen> = Vec::with_capacity(duration_s);

    let mut out = Vec::with_capacity(duration_s);
    for step in 0..duration_s {
        let t = step as u32;

        // Environment at time t.
        if x > light.pos + 5.0 {
            light = Light::random(x + rng.gen_range(120.0..400.0), &mut rng);
            committed_through = false;
        }
        let d_light = light.pos - x;
        let light_visible = d_light <= DETECTION_RANGE;
        let lstate = light.state(t);
        let future: Vec<u8> = (1..=horizon).map(|j| light.state(t + j as u32)).collect();

        let gap = leader.as_ref().map(|l| l.x - x);
        let v_lead = leader.as_ref().map(|l| l.v);
        let lead_visible = gap.is_some_and(|g| g <= DETECTION_RANGE);
        seen.push(Seen {
            present: lead_visible,
            gap: gap.unwrap_or(DETECTION_RANGE),
            v: v_lead.unwrap_or(v),
        });

        // Driver decision from (partly delayed) perception.
        cruise_dev = 0.97 * cruise_dev + 0.25 * unit.sample(&mut rng);
        let mut v_des = (profile.cruise_speed + cruise_dev).max(1.0);
        if parked > 0 {
            v_des = 0.0;
            parked -= 1;
        } else if v > 2.0 && rng.gen::<f64>() < 0.0012 {
            parked = rng.gen_range(20..80);
        }
        if let Some((left, sp, st)) = turn.as_mut() {
            v_des = v_des.min(*sp);
            steer = 0.6 * steer + 0.4 * *st;
            *left -= 1;
            if *left == 0 {
                turn = None;
            }
        } else {
            steer = 0.8 * steer + 0.02 * unit.sample(&mut rng);
            if v > 3.0 && !light_visible && rng.gen::<f64>() < 0.006 {
                let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                turn = Some((
                    rng.gen_range(4..9),
                    rng.gen_range(3.5..6.5),
                    dir * rng.gen_range(0.3..0.8),
                ));
            }
        }
        let obs = seen[step.saturating_sub(delay)];
        if obs.present {
            let desired_gap = 4.0 + headway * v;
            let follow = obs.v + 0.45 * (obs.gap - desired_gap);
            v_des = v_des.min(follow.max(0.0));
        }
        if light_visible && d_light > -2.0 {
            let stopping = v * v / (2.0 * comfort_decel);
            let must_stop = match lstate {
                RED => !committed_through,
                YELLOW => {
                    !committed_through
                        && (stopping < d_light || rng.gen::<f64>() < profile.stop_tendency * 0.2)
                }
                _ => false,
            };
            if lstate != GREEN && !must_stop {
                committed_through = true;
            }
            if lstate == GREEN {
                committed_through = false;
            }
            if must_stop && d_light > 0.0 {
                let env = (2.0 * comfort_decel * (d_light - 2.0).max(0.0)).sqrt();
                v_des = v_des.min(env);
            } else if must_stop && stopping > d_light.max(0.0) + 3.0 {
                committed_through = true;
            }
        }

        let noise = (0.05 + 0.1 * profile.aggressiveness) * unit.sample(&mut rng);
        let a = (gain * (v_des - v) + noise).clamp(-a_max, a_max);
        let mut v_next = (v + a).max(0.0);
        if v_des < 0.3 && v_next < 0.25 && v <= a_max {
            v_next = 0.0;
        }
        let dv = v_next - v;

        // Observations recorded at t.
        if side.is_none() {
            if rng.gen::<f64>() < 0.03 {
                side = Some(Side {
                    gap: rng.gen_range(3.0..60.0),
                    dv: unit.sample(&mut rng),
                });
            }
        } else if rng.gen::<f64>() < 0.05 {
            side = None;
        }
        let side_now = side
            .as_ref()
            .map(|s| (s.gap, (v + s.dv).max(0.0)))
            .filter(|(g, _)| *g <= DETECTION_RANGE);
        if heavy.is_none() {
            if rng.gen::<f64>() < 0.008 {
                heavy = Some((rng.gen_range(15..60), rng.gen_range(0.03..0.15)));
            }
        } else if let Some((left, _)) = heavy.as_mut() {
            *left -= 1;
            if *left == 0 {
                heavy = None;
            }
        }
        let r_cars = {
            let mut r = 0.01 * rng.gen::<f64>();
            if lead_visible {
                r += 0.35 * (-gap.unwrap() / 18.0).exp();
            }
            if let Some((g, _)) = side_now {
                r += 0.08 * (-g / 15.0).exp();
            }
            r
        };
        let r_heavy = heavy.map(|(_, r)| r).unwrap_or(0.0);
        let r_lights = if light_visible {
            0.002 + 0.03 * (1.0 - d_light.max(0.0) / DETECTION_RANGE)
        } else {
            0.0
        };
        let (throttle, brake) = if dv > 0.0 {
            ((dv / a_max).min(1.0), 0.0)
        } else if dv < 0.0 {
            (0.0, (-dv / a_max).min(1.0))
        } else {
            (0.0, 0.0)
        };

        let mut rec = DrivingRecord {
            t,
            v_target: v,
            v_preceding: v_lead.unwrap_or(v),
            has_preceding: lead_visible,
            has_light: light_visible,
            d_preceding: gap.unwrap_or(DETECTION_RANGE).max(0.0),
            d_light: d_light.max(0.0),
            light_state: if light_visible { lstate } else { GREEN },
            light_future: if light_visible { future } else { vec![GREEN; horizon] },
            v_side: side_now.map(|s| s.1).unwrap_or(v),
            has_side: side_now.is_some(),
            d_side: side_now.map(|s| s.0).unwrap_or(DETECTION_RANGE),
            throttle,
            brake,
            steer: steer.clamp(-1.0, 1.0),
            r_cars: r_cars.min(0.6),
            r_heavy,
            r_lights,
        };
        rec.canonicalize();
        out.push(rec);

        // Advance the world to t + 1.
        x += 0.5 * (v + v_next);
        v = v_next;
        if let Some(s) = side.as_mut() {
            s.gap = (s.gap + 1.5 * unit.sample(&mut rng)).clamp(2.0, 90.0);
            s.dv = 0.8 * s.dv + 0.4 * unit.sample(&mut rng);
            if s.gap < 15.0 && leader.is_none() && rng.gen::<f64>() < 0.03 {
                leader = Some(Leader {
                    x: x + s.gap,
                    v: (v + s.dv).max(0.0),
                    goal: rng.gen_range(4.0..15.0),
                });
            }
        }
        match leader.as_mut() {
            None => {
                if rng.gen::<f64>() < 0.04 {
                    leader = Some(Leader {
                        x: x + rng.gen_range(15.0..80.0),
                        v: (v + 2.0 * unit.sample(&mut rng)).max(0.0),
                        goal: rng.gen_range(4.0..15.0),
                    });
                }
            }
            Some(l) => {
                if rng.gen::<f64>() < 0.05 {
                    l.goal = rng.gen_range(3.0..16.0);
                }
                let mut want = l.goal;
                let to_light = light.pos - l.x;
                if to_light > 0.0 && to_light < 60.0 && light.state(t + 1) != GREEN {
                    want = want.min((4.0 * (to_light - 1.0).max(0.0)).sqrt());
                }
                let a = (0.6 * (want - l.v)).clamp(-4.0, 2.0);
                l.v = (l.v + a).max(0.0);
                l.x += l.v;
                if l.x < x + 2.0 {
                    l.x = x + 2.0;
                    l.v = l.v.max(v);
                }
                if l.x - x > 110.0 || rng.gen::<f64>() < 0.006 {
                    leader = None;
                }
            }
        }
    }
    Ok(out)
}
