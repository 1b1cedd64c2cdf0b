//! Context sources and the raw values they read off a snapshot.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ContextSnapshot, UsageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceId {
    Time,
    #[serde(alias = "accel")]
    Movement,
    Gps,
    Cell,
    PriorWeb,
    PriorPhone,
    PriorApp,
}

impl SourceId {
    pub const ALL: [SourceId; 7] = [
        SourceId::Time,
        SourceId::Movement,
        SourceId::Gps,
        SourceId::Cell,
        SourceId::PriorWeb,
        SourceId::PriorPhone,
        SourceId::PriorApp,
    ];

    /// The sensors whose readings cost energy.
    pub const COSTLY: [SourceId; 3] = [SourceId::Movement, SourceId::Cell, SourceId::Gps];

    pub fn prior(kind: UsageKind) -> SourceId {
        match kind {
            UsageKind::Web => SourceId::PriorWeb,
            UsageKind::Phone => SourceId::PriorPhone,
            UsageKind::App => SourceId::PriorApp,
        }
    }

    pub fn prior_kind(self) -> Option<UsageKind> {
        match self {
            SourceId::PriorWeb => Some(UsageKind::Web),
            SourceId::PriorPhone => Some(UsageKind::Phone),
            SourceId::PriorApp => Some(UsageKind::App),
            _ => None,
        }
    }

    pub fn shape(self) -> SourceShape {
        match self {
            SourceId::Time | SourceId::Movement => SourceShape::Scalar,
            SourceId::Gps => SourceShape::Point,
            _ => SourceShape::Categorical,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceId::Time => "time",
            SourceId::Movement => "movement",
            SourceId::Gps => "gps",
            SourceId::Cell => "cell",
            SourceId::PriorWeb => "prior_web",
            SourceId::PriorPhone => "prior_phone",
            SourceId::PriorApp => "prior_app",
        }
    }

    pub fn read(self, snapshot: &ContextSnapshot) -> RawValue<'_> {
        match self {
            SourceId::Time => RawValue::Scalar(snapshot.time_of_cycle),
            SourceId::Movement => RawValue::Scalar(snapshot.accel_log_power),
            SourceId::Gps => match snapshot.gps {
                Some((lat, lon)) => RawValue::Point(lat, lon),
                None => RawValue::Missing,
            },
            SourceId::Cell => match &snapshot.cell_id {
                Some(c) => RawValue::Label(c),
                None => RawValue::Missing,
            },
            _ => {
                let kind = self.prior_kind().expect("prior source");
                match snapshot.prior(kind).first() {
                    Some(l) => RawValue::Label(l),
                    None => RawValue::Missing,
                }
            }
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(SourceId::Time),
            "movement" | "accel" => Ok(SourceId::Movement),
            "gps" => Ok(SourceId::Gps),
            "cell" => Ok(SourceId::Cell),
            "prior_web" => Ok(SourceId::PriorWeb),
            "prior_phone" => Ok(SourceId::PriorPhone),
            "prior_app" => Ok(SourceId::PriorApp),
            other => Err(Error::invalid(format!("unknown context source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceShape {
    Scalar,
    Point,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue<'a> {
    Scalar(f64),
    Point(f64, f64),
    Label(&'a str),
    Missing,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_missing_values() {
        let snap = ContextSnapshot {
            time_of_cycle: 5.0,
            accel_log_power: 0.5,
            gps: None,
            cell_id: None,
            prior_usage: [vec!["a".into()], vec![], vec![]],
        };
        assert_eq!(SourceId::Gps.read(&snap), RawValue::Missing);
        assert_eq!(SourceId::Cell.read(&snap), RawValue::Missing);
        assert_eq!(SourceId::PriorWeb.read(&snap), RawValue::Label("a"));
        assert_eq!(SourceId::PriorApp.read(&snap), RawValue::Missing);
        assert_eq!(SourceId::Time.read(&snap), RawValue::Scalar(5.0));
    }

    #[test]
    fn names_round_trip() {
        for s in SourceId::ALL {
            assert_eq!(s.as_str().parse::<SourceId>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<SourceId>(&json).unwrap(), s);
        }
        assert_eq!("accel".parse::<SourceId>().unwrap(), SourceId::Movement);
    }
}
