//! Timestamps, calendar bucketing and the injectable clock.

use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Datelike, Months, NaiveDate, SecondsFormat, TimeZone, Utc};

pub type Timestamp = DateTime<Utc>;

/// Renders a timestamp as ISO-8601 UTC with a trailing `Z`. Sub-second
/// digits are only emitted when non-zero.
pub fn format_ts(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses any RFC 3339 timestamp and converts it to UTC.
pub fn parse_ts(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// Serde adapter writing timestamps with [`format_ts`].
pub mod serde_ts {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        parse_ts(&raw).ok_or_else(|| D::Error::custom(format!("invalid timestamp `{raw}`")))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(ts) => s.serialize_str(&format_ts(ts)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            match Option::<String>::deserialize(d)? {
                None => Ok(None),
                Some(raw) => parse_ts(&raw)
                    .map(Some)
                    .ok_or_else(|| D::Error::custom(format!("invalid timestamp `{raw}`"))),
            }
        }
    }
}

/// Fractional hours between two instants (`later - earlier`).
pub fn hours_between(earlier: &Timestamp, later: &Timestamp) -> f64 {
    let delta = *later - *earlier;
    match delta.num_microseconds() {
        Some(us) => us as f64 / 3_600_000_000.0,
        None => delta.num_milliseconds() as f64 / 3_600_000.0,
    }
}

/// Time bucket granularity used by trend analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    None,
    IsoWeek,
    IsoMonth,
}

/// Start-of-bucket date for a timestamp, in UTC.
fn bucket_start(ts: &Timestamp, bucketing: Bucketing) -> Option<NaiveDate> {
    let date = ts.date_naive();
    match bucketing {
        Bucketing::None => None,
        Bucketing::IsoWeek => {
            let back = date.weekday().num_days_from_monday() as u64;
            date.checked_sub_days(chrono::Days::new(back))
        }
        Bucketing::IsoMonth => NaiveDate::from_ymd_opt(date.year(), date.month(), 1),
    }
}

fn label_of(start: NaiveDate, bucketing: Bucketing) -> String {
    match bucketing {
        Bucketing::IsoWeek => {
            let week = start.iso_week();
            format!("{:04}-W{:02}", week.year(), week.week())
        }
        _ => format!("{:04}-{:02}", start.year(), start.month()),
    }
}

/// Bucket label: `YYYY-Www` (ISO week-numbering year) or `YYYY-MM`.
pub fn bucket_label(ts: &Timestamp, bucketing: Bucketing) -> Option<String> {
    bucket_start(ts, bucketing).map(|d| label_of(d, bucketing))
}

/// Every bucket label from the bucket of `first` to the bucket of `last`,
/// inclusive, in increasing order.
pub fn bucket_range(first: &Timestamp, last: &Timestamp, bucketing: Bucketing) -> Vec<String> {
    let (Some(mut cur), Some(end)) = (bucket_start(first, bucketing), bucket_start(last, bucketing))
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    while cur <= end {
        out.push(label_of(cur, bucketing));
        cur = match bucketing {
            Bucketing::IsoWeek => cur + chrono::Days::new(7),
            _ => cur + Months::new(1),
        };
    }
    out
}

/// Time source. Collectors sleep through this so tests can substitute a
/// virtual clock and simulate `Retry-After` waits without real delays.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration)
    }
}

/// A clock that only moves when somebody sleeps on it.
#[derive(Debug)]
pub struct VirtualClock {
    start: Timestamp,
    elapsed: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            start,
            elapsed: Mutex::new(Duration::ZERO),
            slept: Mutex::new(Vec::new()),
        }
    }

    pub fn starting_at_epoch_secs(secs: i64) -> Self {
        Self::new(Utc.timestamp_opt(secs, 0).single().expect("valid epoch"))
    }

    /// Total virtual time elapsed so far.
    pub fn elapsed(&self) -> Duration {
        *self.elapsed.lock().unwrap()
    }

    /// Every individual sleep, in call order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        let elapsed = *self.elapsed.lock().unwrap();
        self.start + chrono::Duration::from_std(elapsed).unwrap_or_default()
    }

    fn sleep(&self, duration: Duration) {
        *self.elapsed.lock().unwrap() += duration;
        self.slept.lock().unwrap().push(duration);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        parse_ts(s).unwrap()
    }

    #[test]
    fn formats_with_z_and_no_zero_fraction() {
        assert_eq!(format_ts(&ts("2023-01-05T10:00:00.000+00:00")), "2023-01-05T10:00:00Z");
        assert_eq!(format_ts(&ts("2023-01-05T12:00:00+02:00")), "2023-01-05T10:00:00Z");
        assert_eq!(format_ts(&ts("2023-01-05T10:00:00.250Z")), "2023-01-05T10:00:00.250Z");
    }

    #[test]
    fn iso_week_labels_cross_year_boundaries() {
        assert_eq!(bucket_label(&ts("2023-01-02T00:00:00Z"), Bucketing::IsoWeek).unwrap(), "2023-W01");
        assert_eq!(bucket_label(&ts("2023-01-01T23:59:59Z"), Bucketing::IsoWeek).unwrap(), "2022-W52");
        assert_eq!(bucket_label(&ts("2021-01-03T12:00:00Z"), Bucketing::IsoWeek).unwrap(), "2020-W53");
        assert_eq!(bucket_label(&ts("2024-12-30T00:00:00Z"), Bucketing::IsoWeek).unwrap(), "2025-W01");
        assert_eq!(bucket_label(&ts("2023-03-31T00:00:00Z"), Bucketing::IsoMonth).unwrap(), "2023-03");
    }

    #[test]
    fn ranges_fill_gaps() {
        let r = bucket_range(&ts("2022-12-28T00:00:00Z"), &ts("2023-01-10T00:00:00Z"), Bucketing::IsoWeek);
        assert_eq!(r, vec!["2022-W52", "2023-W01", "2023-W02"]);
        let m = bucket_range(&ts("2023-11-15T00:00:00Z"), &ts("2024-02-01T00:00:00Z"), Bucketing::IsoMonth);
        assert_eq!(m, vec!["2023-11", "2023-12", "2024-01", "2024-02"]);
    }

    #[test]
    fn fractional_hours() {
        let a = ts("2023-03-01T10:00:00Z");
        assert_eq!(hours_between(&a, &ts("2023-03-02T10:00:00Z")), 24.0);
        assert_eq!(hours_between(&a, &ts("2023-03-01T10:30:00Z")), 0.5);
    }

    #[test]
    fn virtual_clock_advances_only_on_sleep() {
        let clock = VirtualClock::starting_at_epoch_secs(1_700_000_000);
        let before = clock.now();
        clock.sleep(Duration::from_secs(2));
        assert_eq!((clock.now() - before).num_seconds(), 2);
        assert_eq!(clock.sleeps(), vec![Duration::from_secs(2)]);
    }
}
