use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::DrivingRecord;
use crate::error::Error;

/// One input column of the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    TargetSpeed,
    PrecedingSpeed,
    HasPreceding,
    HasLight,
    PrecedingDistance,
    LightDistance,
    LightState,
    /// Signal state `j` seconds ahead, `j` in `1..=H`.
    LightFuture(usize),
    SideSpeed,
    HasSide,
    SideDistance,
    Throttle,
    Brake,
    Steer,
    RatioCars,
    RatioHeavy,
    RatioLights,
}

impl Feature {
    /// Continuous features are z-scored; indicators and signal states pass
    /// through unchanged.
    pub fn is_continuous(self) -> bool {
        !matches!(
            self,
            Feature::HasPreceding
                | Feature::HasLight
                | Feature::HasSide
                | Feature::LightState
                | Feature::LightFuture(_)
        )
    }

    pub fn value(self, r: &DrivingRecord) -> f64 {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Feature::TargetSpeed => r.v_target,
            Feature::PrecedingSpeed => r.v_preceding,
            Feature::HasPreceding => flag(r.has_preceding),
            Feature::HasLight => flag(r.has_light),
            Feature::PrecedingDistance => r.d_preceding,
            Feature::LightDistance => r.d_light,
            Feature::LightState => f64::from(r.light_state),
            Feature::LightFuture(j) => f64::from(r.light_future[j - 1]),
            Feature::SideSpeed => r.v_side,
            Feature::HasSide => flag(r.has_side),
            Feature::SideDistance => r.d_side,
            Feature::Throttle => r.throttle,
            Feature::Brake => r.brake,
            Feature::Steer => r.steer,
            Feature::RatioCars => r.r_cars,
            Feature::RatioHeavy => r.r_heavy,
            Feature::RatioLights => r.r_lights,
        }
    }
}

/// Ego, V2V and V2I base set: speeds, indicators, distances, current and
/// future signal states.
pub fn base_features(horizon: usize) -> Vec<Feature> {
    let mut f = vec![
        Feature::TargetSpeed,
        Feature::PrecedingSpeed,
        Feature::HasPreceding,
        Feature::HasLight,
        Feature::PrecedingDistance,
        Feature::LightDistance,
        Feature::LightState,
    ];
    f.extend((1..=horizon).map(Feature::LightFuture));
    f
}

pub const SIDE_FEATURES: [Feature; 3] = [Feature::SideSpeed, Feature::HasSide, Feature::SideDistance];
pub const CONTROL_FEATURES: [Feature; 3] = [Feature::Throttle, Feature::Brake, Feature::Steer];
pub const IMAGE_FEATURES: [Feature; 3] = [Feature::RatioCars, Feature::RatioHeavy, Feature::RatioLights];

fn union(sets: &[&[Feature]]) -> Vec<Feature> {
    let mut out: Vec<Feature> = Vec::new();
    for s in sets {
        for f in s.iter() {
            if !out.contains(f) {
                out.push(*f);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureGroup {
    FG1,
    FG2,
    FG3,
    FG4,
    FG5,
    FG6,
    FG7,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::FG1,
        FeatureGroup::FG2,
        FeatureGroup::FG3,
        FeatureGroup::FG4,
        FeatureGroup::FG5,
        FeatureGroup::FG6,
        FeatureGroup::FG7,
    ];

    /// Ordered input columns; the target speed is always column 0.
    pub fn features(self, horizon: usize) -> Vec<Feature> {
        let base = base_features(horizon);
        let fg2 = || union(&[&base, &SIDE_FEATURES]);
        let fg3 = || union(&[&base, &CONTROL_FEATURES]);
        let fg4 = || union(&[&base, &IMAGE_FEATURES]);
        match self {
            FeatureGroup::FG1 => base.clone(),
            FeatureGroup::FG2 => fg2(),
            FeatureGroup::FG3 => fg3(),
            FeatureGroup::FG4 => fg4(),
            FeatureGroup::FG5 => union(&[&fg2(), &fg4()]),
            FeatureGroup::FG6 => union(&[&fg3(), &fg4()]),
            FeatureGroup::FG7 => union(&[&fg2(), &fg3(), &fg4()]),
        }
    }

    pub fn input_dim(self, horizon: usize) -> usize {
        self.features(horizon).len()
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown feature group `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fg1_width_with_horizon_expansion() {
        assert_eq!(FeatureGroup::FG1.input_dim(5), 12);
        assert_eq!(FeatureGroup::FG1.input_dim(10), 17);
    }

    #[test]
    fn target_speed_is_first_column() {
        for g in FeatureGroup::ALL {
            assert_eq!(g.features(5)[0], Feature::TargetSpeed);
        }
    }

    #[test]
    fn parse_group_names() {
        assert_eq!("fg6".parse::<FeatureGroup>().unwrap(), FeatureGroup::FG6);
        assert!("FG8".parse::<FeatureGroup>().is_err());
    }
}
