//! UTC civil-calendar helpers over epoch minutes.

use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: i64 = 1440;

/// Environmental context of a session start.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvStamp {
    /// 0..=23
    pub hour_of_day: u8,
    /// 0..=6, Monday = 0
    pub day_of_week: u8,
    /// 1..=366
    pub day_of_year: u16,
    pub region: String,
}

impl EnvStamp {
    /// Weekday working hours, Monday to Friday between 09:00 and 17:59.
    pub fn is_working_hours(&self) -> bool {
        self.day_of_week < 5 && (9..=17).contains(&self.hour_of_day)
    }
}

/// Computes the environment stamp for a session starting at `start_utc`
/// epoch minutes. Negative inputs are clamped to the epoch.
pub fn env_stamp(start_utc: i64, region: &str) -> EnvStamp {
    let minutes = start_utc.max(0);
    let days = minutes.div_euclid(MINUTES_PER_DAY);
    let minute_of_day = minutes.rem_euclid(MINUTES_PER_DAY);
    let (year, month, day) = civil_from_days(days);
    EnvStamp {
        hour_of_day: (minute_of_day / 60) as u8,
        // 1970-01-01 was a Thursday.
        day_of_week: (days + 3).rem_euclid(7) as u8,
        day_of_year: day_of_year(year, month, day),
        region: region.to_string(),
    }
}

pub fn is_leap_year(year: i64) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Converts days since 1970-01-01 to a proleptic Gregorian (year, month, day).
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + i64::from(month <= 2);
    (year, month, day)
}

fn day_of_year(year: i64, month: u32, day: u32) -> u16 {
    const CUMULATIVE: [u16; 12] = [0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334];
    let leap = u16::from(month > 2 && is_leap_year(year));
    CUMULATIVE[(month - 1) as usize] + day as u16 + leap
}

#[cfg(test)]
mod tests {
    use super::*;

    fn month_len(year: i64, month: u32) -> u32 {
        match month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            _ if is_leap_year(year) => 29,
            _ => 28,
        }
    }

    /// Advances a (year, month, day, day_of_year) tuple by one day.
    fn next_day((y, m, d, doy): (i64, u32, u32, u16)) -> (i64, u32, u32, u16) {
        if d < month_len(y, m) {
            (y, m, d + 1, doy + 1)
        } else if m < 12 {
            (y, m + 1, 1, doy + 1)
        } else {
            (y + 1, 1, 1, 1)
        }
    }

    #[test]
    fn epoch_is_thursday_first_day() {
        let s = env_stamp(0, "eu");
        assert_eq!((s.hour_of_day, s.day_of_week, s.day_of_year), (0, 3, 1));
    }

    #[test]
    fn one_day_and_one_hour_later() {
        let s = env_stamp(1440, "eu");
        assert_eq!((s.hour_of_day, s.day_of_year), (0, 2));
        let s = env_stamp(60, "eu");
        assert_eq!((s.hour_of_day, s.day_of_year), (1, 1));
    }

    #[test]
    fn matches_day_walk_for_sixty_years() {
        let mut oracle = (1970, 1, 1, 1);
        for days in 0..365 * 60 {
            let (y, m, d, doy) = oracle;
            assert_eq!(civil_from_days(days), (y, m, d), "day {days}");
            assert_eq!(env_stamp(days * 1440, "x").day_of_year, doy, "day {days}");
            oracle = next_day(oracle);
        }
    }

    #[test]
    fn known_dates() {
        // 2000-02-29 is day 11016 and a Tuesday.
        assert_eq!(civil_from_days(11_016), (2000, 2, 29));
        let s = env_stamp(11_016 * 1440 + 13 * 60 + 5, "na");
        assert_eq!((s.hour_of_day, s.day_of_week, s.day_of_year), (13, 1, 60));
        // 2020-12-31 is day 18627, day-of-year 366.
        assert_eq!(env_stamp(18_627 * 1440, "na").day_of_year, 366);
    }
}
