//! Calendar helpers shared by the world model and the logs.
//!
//! Simulation time is a proleptic Gregorian timestamp at minute precision with
//! no time zone. Wall-clock time (used only for log lines and dialogue turns)
//! is kept at second precision.

use chrono::{NaiveDate, NaiveDateTime, Timelike};

pub const SIM_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M";
pub const WALL_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Largest year the simulation clock may reach.
pub const MAX_YEAR: i32 = 9999;

/// `May 18, 2027, 21:00`
pub fn display_date(t: NaiveDateTime) -> String {
    t.format("%B %d, %Y, %H:%M").to_string()
}

pub fn parse_sim_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), SIM_TIME_FORMAT).ok()
}

pub fn parse_wall_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), WALL_TIME_FORMAT).ok()
}

/// Drops seconds and sub-second parts.
pub fn truncate_to_minute(t: NaiveDateTime) -> NaiveDateTime {
    t.with_second(0)
        .and_then(|t| t.with_nanosecond(0))
        .unwrap_or(t)
}

pub fn truncate_to_second(t: NaiveDateTime) -> NaiveDateTime {
    t.with_nanosecond(0).unwrap_or(t)
}

pub fn ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, 0))
        .expect("valid calendar date")
}

/// Serde adapter for simulation timestamps (`2027-05-18T21:00`).
pub mod sim_format {
    use chrono::NaiveDateTime;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(super::SIM_TIME_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_sim_time(&raw)
            .ok_or_else(|| D::Error::custom(format!("invalid simulation time {raw:?}")))
    }
}

/// Serde adapter for wall-clock timestamps (`2023-05-16T15:26:06`).
pub mod wall_format {
    use chrono::NaiveDateTime;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(super::WALL_TIME_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_wall_time(&raw)
            .ok_or_else(|| D::Error::custom(format!("invalid wall-clock time {raw:?}")))
    }
}
