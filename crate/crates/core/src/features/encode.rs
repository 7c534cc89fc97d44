//! Min-max scaling and categorical vocabularies, both fit on training data only.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature minimum and maximum seen during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerStats {
    /// Fits over rows of equal width. An empty input yields a scaler whose
    /// features all map to 0.
    pub fn fit<'a, I>(width: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::shape(&[row.len()], &[width], "scaler row width"));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("feature {j} value {v}")));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for j in 0..width {
            if min[j] > max[j] {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        Ok(ScalerStats { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)`, or 0 for a constant feature.
    pub fn scale(&self, feature: usize, x: f64) -> f64 {
        let range = self.max[feature] - self.min[feature];
        if range > 0.0 {
            (x - self.min[feature]) / range
        } else {
            0.0
        }
    }

    pub fn unscale(&self, feature: usize, s: f64) -> f64 {
        self.min[feature] + s * (self.max[feature] - self.min[feature])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }
}

/// Sorted category vocabulary; index 0 is reserved for unseen values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

pub const OOV_TOKEN: &str = "OOV";

impl Vocabulary {
    pub fn build<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = values.into_iter().map(|v| v.as_ref().to_string()).collect();
        let mut tokens = Vec::with_capacity(set.len() + 1);
        tokens.push(OOV_TOKEN.to_string());
        tokens.extend(set);
        Vocabulary { tokens }
    }

    /// Vocabulary over the integers `lo..=hi`, indexed in numeric order.
    pub fn numeric_range(lo: u32, hi: u32) -> Self {
        let mut tokens = vec![OOV_TOKEN.to_string()];
        tokens.extend((lo..=hi).map(|v| v.to_string()));
        Vocabulary { tokens }
    }

    pub fn encode(&self, value: &str) -> usize {
        self.tokens[1..].iter().position(|t| t == value).map_or(0, |i| i + 1)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }
}

/// Categorical vocabularies for the environment and the game context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub hour: Vocabulary,
    pub weekday: Vocabulary,
    pub yearday: Vocabulary,
    pub region: Vocabulary,
    pub game: Vocabulary,
}

impl Vocabularies {
    /// Hour, weekday and day-of-year cover their full calendar domains;
    /// region and game come from the supplied (training) values.
    pub fn fit<'a>(regions: impl IntoIterator<Item = &'a str>, games: impl IntoIterator<Item = &'a str>) -> Self {
        Vocabularies {
            hour: Vocabulary::numeric_range(0, 23),
            weekday: Vocabulary::numeric_range(0, 6),
            yearday: Vocabulary::numeric_range(1, 366),
            region: Vocabulary::build(regions),
            game: Vocabulary::build(games),
        }
    }

    /// Sizes in the order hour, weekday, yearday, region.
    pub fn env_sizes(&self) -> [usize; 4] {
        [
            self.hour.len(),
            self.weekday.len(),
            self.yearday.len(),
            self.region.len(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_examples() {
        let rows = [[0.0], [5.0], [10.0]];
        let s = ScalerStats::fit(1, rows.iter().map(|r| &r[..])).unwrap();
        assert_eq!(s.apply(&[0.0]), [0.0]);
        assert_eq!(s.apply(&[5.0]), [0.5]);
        assert_eq!(s.apply(&[10.0]), [1.0]);
        assert_eq!(s.scale(0, 12.0), 1.2);
        let c = ScalerStats::fit(1, [[3.0], [3.0]].iter().map(|r| &r[..])).unwrap();
        assert_eq!(c.scale(0, 3.0), 0.0);
        assert_eq!(c.scale(0, 7.0), 0.0);
    }

    #[test]
    fn scaler_rejects_width_mismatch() {
        let rows: [&[f64]; 2] = [&[1.0, 2.0], &[1.0]];
        assert!(ScalerStats::fit(2, rows).is_err());
    }

    #[test]
    fn vocab_examples() {
        let v = Vocabulary::build(["na", "eu", "na"]);
        assert_eq!(v.tokens(), ["OOV", "eu", "na"]);
        assert_eq!(v.encode("na"), 2);
        assert_eq!(v.encode("eu"), 1);
        assert_eq!(v.encode("jp"), 0);
        let all = Vocabularies::fit(["eu"], ["g"]);
        assert_eq!(all.hour.len(), 25);
        assert_eq!(all.hour.encode("0"), 1);
        assert_eq!(all.weekday.len(), 8);
        assert_eq!(all.yearday.len(), 367);
        assert_eq!(all.yearday.encode("366"), 366);
    }
}
