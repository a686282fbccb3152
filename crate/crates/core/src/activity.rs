//! Activity vocabulary and sensor channel names.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activity {
    Talk,
    Read,
    Video,
    Walk,
    Type,
    Solve,
    Cycle,
}

pub const NUM_ACTIVITIES: usize = 7;

/// Label written for samples between activity segments.
pub const TRANSITION: &str = "transition";

impl Activity {
    pub const ALL: [Activity; NUM_ACTIVITIES] = [
        Activity::Talk,
        Activity::Read,
        Activity::Video,
        Activity::Walk,
        Activity::Type,
        Activity::Solve,
        Activity::Cycle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Activity> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Talk => "talk",
            Activity::Read => "read",
            Activity::Video => "video",
            Activity::Walk => "walk",
            Activity::Type => "type",
            Activity::Solve => "solve",
            Activity::Cycle => "cycle",
        }
    }

    pub fn is_physical(self) -> bool {
        matches!(self, Activity::Walk | Activity::Cycle)
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown activity `{0}`")]
pub struct UnknownActivity(pub String);

impl FromStr for Activity {
    type Err = UnknownActivity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activity::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownActivity(s.to_string()))
    }
}

/// Per-sample label: an activity, or `None` during transitions.
pub type SampleLabel = Option<Activity>;

pub fn label_name(label: SampleLabel) -> &'static str {
    label.map_or(TRANSITION, Activity::name)
}

pub fn parse_label(s: &str) -> Result<SampleLabel, UnknownActivity> {
    if s == TRANSITION {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// The ten recorded channels, in file and tensor order.
pub const CHANNELS: [&str; 10] = [
    "v1", "d1", "v2", "d2", "accx", "accy", "accz", "gyrx", "gyry", "gyrz",
];
pub const LFI_CHANNELS: [&str; 4] = ["v1", "d1", "v2", "d2"];
pub const IMU_CHANNELS: [&str; 6] = ["accx", "accy", "accz", "gyrx", "gyry", "gyrz"];

pub const LFI_RATE: f64 = 1000.0;
pub const IMU_RATE: f64 = 860.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Activity::ALL {
            assert_eq!(a.name().parse::<Activity>().unwrap(), a);
            assert_eq!(Activity::from_index(a.index()), Some(a));
        }
        assert_eq!(parse_label("transition").unwrap(), None);
        assert!("jog".parse::<Activity>().is_err());
    }
}
