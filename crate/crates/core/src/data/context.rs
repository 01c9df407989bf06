use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

pub const CONTEXT_DIM: usize = 6;

/// Calendar features of an event timestamp, each in `[0, 1]`:
/// `[year_norm, month/12, day/31, weekday/7, hour/24, minute/60]`,
/// weekday counted from Monday = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub [f64; CONTEXT_DIM]);

impl ContextVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Holds the dataset-wide year range used to normalize the year field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFeaturizer {
    pub min_year: i32,
    pub max_year: i32,
}

impl ContextFeaturizer {
    pub fn from_timestamps(ts: impl IntoIterator<Item = i64>) -> Self {
        let mut min_year = i32::MAX;
        let mut max_year = i32::MIN;
        for t in ts {
            let y = utc(t).year();
            min_year = min_year.min(y);
            max_year = max_year.max(y);
        }
        if min_year > max_year {
            min_year = 1970;
            max_year = 1970;
        }
        ContextFeaturizer { min_year, max_year }
    }

    pub fn featurize(&self, timestamp_seconds: i64) -> ContextVector {
        let dt = utc(timestamp_seconds);
        let span = (self.max_year - self.min_year + 1) as f64;
        let year = ((dt.year() - self.min_year) as f64 / span).clamp(0.0, 1.0);
        ContextVector([
            year,
            dt.month() as f64 / 12.0,
            dt.day() as f64 / 31.0,
            dt.weekday().num_days_from_monday() as f64 / 7.0,
            dt.hour() as f64 / 24.0,
            dt.minute() as f64 / 60.0,
        ])
    }
}

fn utc(t: i64) -> chrono::NaiveDateTime {
    DateTime::from_timestamp(t, 0)
        .unwrap_or(DateTime::UNIX_EPOCH)
        .naive_utc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn epoch_zero() {
        let f = ContextFeaturizer::from_timestamps([0]);
        // 1970-01-01 00:00 UTC was a Thursday (Monday = 0 -> 3).
        assert_eq!(
            f.featurize(0).0,
            [0.0, 1.0 / 12.0, 1.0 / 31.0, 3.0 / 7.0, 0.0, 0.0]
        );
    }

    #[test]
    fn weekday_by_day_counting() {
        // Independent route: days since the epoch, offset by Thursday.
        let f = ContextFeaturizer::from_timestamps([0]);
        for days in [0i64, 1, 4, 10, 365, 10_000, 19_000] {
            let expect = ((days + 3) % 7) as f64 / 7.0;
            assert_eq!(f.featurize(days * 86_400 + 5).0[3], expect);
        }
    }

    #[test]
    fn same_minute_same_vector() {
        let f = ContextFeaturizer::from_timestamps([1_600_000_000]);
        let base = 1_600_000_020; // 20 s into a minute
        assert_eq!(f.featurize(base), f.featurize(base + 30));
    }

    #[test]
    fn components_in_unit_interval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let ts: Vec<i64> = (0..10_000).map(|_| rng.random_range(0..2_000_000_000)).collect();
        let f = ContextFeaturizer::from_timestamps(ts.iter().copied());
        for t in ts {
            assert!(f.featurize(t).0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
