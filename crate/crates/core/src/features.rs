//! Platform-flow ratio features: smoothed boarding/alighting ratio per hour,
//! trimmed to the active window and averaged over weekdays and weekends.

use std::io::{Read, Write};
use std::ops::Mul;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DayKind, FlowCube, DAYS, HOURS};

/// Smoothed boarding/alighting ratio, kept as a fraction so that products of
/// ratios stay exact: `pf_ratio(x, y) * pf_ratio(y, x)` has bitwise-equal
/// numerator and denominator and therefore evaluates to exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfRatio {
    pub boarded: f64,
    pub alighted: f64,
}

impl PfRatio {
    pub fn value(self) -> f64 {
        self.boarded / self.alighted
    }

    pub fn recip(self) -> PfRatio {
        PfRatio {
            boarded: self.alighted,
            alighted: self.boarded,
        }
    }
}

impl Mul for PfRatio {
    type Output = PfRatio;

    fn mul(self, rhs: PfRatio) -> PfRatio {
        PfRatio {
            boarded: self.boarded * rhs.boarded,
            alighted: self.alighted * rhs.alighted,
        }
    }
}

/// `(inflow + epsilon) / (outflow + epsilon)`.
pub fn pf_ratio(inflow: u64, outflow: u64, epsilon: f64) -> PfRatio {
    debug_assert!(epsilon > 0.0);
    PfRatio {
        boarded: inflow as f64 + epsilon,
        alighted: outflow as f64 + epsilon,
    }
}

/// Inclusive range of kept hours of the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourWindow {
    pub first: u8,
    pub last: u8,
}

impl Default for HourWindow {
    fn default() -> Self {
        HourWindow { first: 5, last: 23 }
    }
}

impl HourWindow {
    pub fn new(first: u8, last: u8) -> Result<Self> {
        if first > last || last as usize >= HOURS {
            return Err(Error::Config(format!(
                "hour window {first}:{last} must satisfy 0 <= first <= last <= 23"
            )));
        }
        Ok(HourWindow { first, last })
    }

    /// Parse the `A:B` command-line form.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("hour window `{s}` is not of the form A:B"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Self::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }

    pub fn hours(&self) -> std::ops::RangeInclusive<usize> {
        self.first as usize..=self.last as usize
    }

    pub fn len(&self) -> usize {
        (self.last - self.first) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, hour: usize) -> bool {
        self.hours().contains(&hour)
    }
}

/// Keep the window's hours of a 24-hour series.
pub fn trim_hours<T: Copy>(series: &[T], window: HourWindow) -> Vec<T> {
    assert_eq!(series.len(), HOURS, "series must cover 24 hours");
    series[window.hours()].to_vec()
}

/// Averaged ratio features of one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub platform_id: u32,
    pub weekday_ratio: Vec<f64>,
    pub weekend_ratio: Vec<f64>,
    /// Weekly boardings + alightings behind the ratios.
    pub support: u64,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.weekday_ratio.len() + self.weekend_ratio.len()
    }

    /// Concatenated weekday then weekend values, optionally log-transformed.
    pub fn values(&self, log_transform: bool) -> Vec<f64> {
        let it = self.weekday_ratio.iter().chain(&self.weekend_ratio);
        if log_transform {
            it.map(|v| v.ln()).collect()
        } else {
            it.copied().collect()
        }
    }
}

/// Sum that does not depend on the order of `values`.
fn order_free_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average trimmed per-day series within each day kind. Requires exactly five
/// weekdays and two weekend days.
pub fn reduce_week(
    platform_id: u32,
    trimmed: &[Vec<f64>],
    day_kinds: &[DayKind],
    support: u64,
) -> Result<FeatureVector> {
    let weekdays = day_kinds.iter().filter(|k| **k == DayKind::Weekday).count();
    let weekends = day_kinds.len() - weekdays;
    if trimmed.len() != day_kinds.len() || weekdays != 5 || weekends != 2 {
        return Err(Error::Config(format!(
            "expected 5 weekdays and 2 weekend days, got {weekdays} and {weekends} over {} series",
            trimmed.len()
        )));
    }
    let width = trimmed[0].len();
    if trimmed.iter().any(|s| s.len() != width) {
        return Err(Error::Data("per-day series differ in length".into()));
    }
    let mean_of = |kind: DayKind| -> Vec<f64> {
        (0..width)
            .map(|h| {
                let mut vals: Vec<f64> = trimmed
                    .iter()
                    .zip(day_kinds)
                    .filter(|(_, k)| **k == kind)
                    .map(|(s, _)| s[h])
                    .collect();
                order_free_mean(&mut vals)
            })
            .collect()
    };
    Ok(FeatureVector {
        platform_id,
        weekday_ratio: mean_of(DayKind::Weekday),
        weekend_ratio: mean_of(DayKind::Weekend),
        support,
    })
}

/// Sample Pearson correlation; `None` when either side has zero variance or
/// fewer than three observations.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson needs equal-length series");
    let n = a.len();
    if n < 3 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub epsilon: f64,
    pub hour_window: HourWindow,
    /// Cluster on ln(ratio) rather than the raw ratio.
    pub log_transform: bool,
    /// Platforms with less weekly flow than this are left out of clustering.
    pub min_platform_support: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            epsilon: 1.0,
            hour_window: HourWindow::default(),
            log_transform: true,
            min_platform_support: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub window: HourWindow,
    pub vectors: Vec<FeatureVector>,
    /// Platforms dropped for insufficient support.
    pub excluded: Vec<u32>,
}

impl FeatureSet {
    /// Hourly cells per week kept by the window, before weekday/weekend averaging.
    pub fn cells_before_averaging(&self) -> usize {
        DAYS * self.window.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.window.len()
    }

    pub fn column_names(window: HourWindow) -> Vec<String> {
        let hours = window.hours();
        hours
            .clone()
            .map(|h| format!("wd_h{h:02}"))
            .chain(hours.map(|h| format!("we_h{h:02}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["platform_id".to_string()];
        header.extend(Self::column_names(self.window));
        w.write_record(&header)?;
        for v in &self.vectors {
            let mut row = vec![v.platform_id.to_string()];
            row.extend(v.values(false).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    /// Read a feature matrix. Support is not part of the CSV and reads back as 0.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let first = header.get(1).and_then(|h| h.strip_prefix("wd_h"));
        let wd = header.iter().filter(|h| h.starts_with("wd_h")).count();
        let first: u8 = first
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::Data("feature header lacks wd_hNN columns".into()))?;
        if wd == 0 {
            return Err(Error::Data("feature header lacks wd_hNN columns".into()));
        }
        let window = HourWindow::new(first, first + wd as u8 - 1)?;
        let expected = Self::column_names(window);
        if header
            .iter()
            .skip(1)
            .ne(expected.iter().map(String::as_str))
            || header.get(0) != Some("platform_id")
        {
            return Err(Error::Data(
                "feature header does not match the wd/we hour layout".into(),
            ));
        }
        let mut vectors = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let id = row[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad platform id `{}`", &row[0])))?;
            let vals: Vec<f64> = row
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("platform {id}: {e}")))?;
            let (wd, we) = vals.split_at(window.len());
            vectors.push(FeatureVector {
                platform_id: id,
                weekday_ratio: wd.to_vec(),
                weekend_ratio: we.to_vec(),
                support: 0,
            });
        }
        Ok(FeatureSet {
            window,
            vectors,
            excluded: Vec::new(),
        })
    }
}

/// Ratio features for every platform of the cube with enough support.
pub fn build_features(cube: &FlowCube, cfg: &FeatureConfig) -> Result<FeatureSet> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {}",
            cfg.epsilon
        )));
    }
    let per_platform: Vec<Result<Option<FeatureVector>>> = (0..cube.num_platforms())
        .into_par_iter()
        .map(|p| {
            let support = cube.support(p);
            if support < cfg.min_platform_support {
                return Ok(None);
            }
            let trimmed: Vec<Vec<f64>> = (0..DAYS)
                .map(|d| {
                    let ratios: Vec<f64> = cube
                        .inflow_day(p, d)
                        .iter()
                        .zip(cube.outflow_day(p, d))
                        .map(|(&x, &y)| pf_ratio(x, y, cfg.epsilon).value())
                        .collect();
                    trim_hours(&ratios, cfg.hour_window)
                })
                .collect();
            reduce_week(cube.platform_ids[p], &trimmed, &cube.day_kinds, support).map(Some)
        })
        .collect();
    let mut vectors = Vec::new();
    let mut excluded = Vec::new();
    for (p, v) in per_platform.into_iter().enumerate() {
        match v? {
            Some(v) => vectors.push(v),
            None => excluded.push(cube.platform_ids[p]),
        }
    }
    Ok(FeatureSet {
        window: cfg.hour_window,
        vectors,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPairCorrelation {
    pub hour: usize,
    pub day_a: usize,
    pub day_b: usize,
    pub kind: DayKind,
    /// `None` when one of the hour columns is constant across platforms.
    pub r: Option<f64>,
}

/// Consistency of same-hour inflow across days of one kind, the evidence for
/// averaging weekdays and weekends. Diagnostic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    pub pairs: Vec<DayPairCorrelation>,
    pub weekday_mean_r: Option<f64>,
    pub weekend_mean_r: Option<f64>,
    pub undefined: usize,
}

pub fn pearson_report(cube: &FlowCube, window: HourWindow) -> PearsonReport {
    let column = |d: usize, h: usize| -> Vec<f64> {
        (0..cube.num_platforms())
            .map(|p| cube.inflow(p, d, h) as f64)
            .collect()
    };
    let mut pairs = Vec::new();
    for h in window.hours() {
        for a in 0..DAYS {
            for b in a + 1..DAYS {
                if cube.day_kinds[a] != cube.day_kinds[b] {
                    continue;
                }
                pairs.push(DayPairCorrelation {
                    hour: h,
                    day_a: a,
                    day_b: b,
                    kind: cube.day_kinds[a],
                    r: pearson(&column(a, h), &column(b, h)),
                });
            }
        }
    }
    let mean_r = |kind: DayKind| {
        let rs: Vec<f64> = pairs
            .iter()
            .filter(|p| p.kind == kind)
            .filter_map(|p| p.r)
            .collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    };
    PearsonReport {
        weekday_mean_r: mean_r(DayKind::Weekday),
        weekend_mean_r: mean_r(DayKind::Weekend),
        undefined: pairs.iter().filter(|p| p.r.is_none()).count(),
        pairs,
    }
}
