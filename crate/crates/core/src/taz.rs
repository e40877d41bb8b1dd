//! Traffic-analysis-zone aggregation: platform → zone assignment, majority
//! vote, per-function rollup and the land-use accuracy check.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use geojson::{Feature, FeatureCollection, Geometry, JsonObject, JsonValue, Value};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::argmax;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::labeler::FunctionLabel;

pub type Ring = Vec<GeoPoint>;

/// Reference land-use classes a zone file may carry as `landuse_<key>` areas (km²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanduseClass {
    Public,
    Residential,
    Commercial,
    Scenic,
    Developing,
}

impl LanduseClass {
    pub const ALL: [LanduseClass; 5] = [
        LanduseClass::Public,
        LanduseClass::Residential,
        LanduseClass::Commercial,
        LanduseClass::Scenic,
        LanduseClass::Developing,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LanduseClass::Public => "public",
            LanduseClass::Residential => "residential",
            LanduseClass::Commercial => "commercial",
            LanduseClass::Scenic => "scenic",
            LanduseClass::Developing => "developing",
        }
    }

    /// Whether a recognized function counts as a hit for this land use.
    pub fn matches(self, label: FunctionLabel) -> bool {
        use FunctionLabel::*;
        match self {
            LanduseClass::Public => label == PublicScienceEduCulture,
            LanduseClass::Residential => matches!(label, MatureResidential | NewResidential),
            LanduseClass::Commercial => label == CommercialEntertainment,
            LanduseClass::Scenic => label == Scenic,
            LanduseClass::Developing => label == Developing,
        }
    }
}

impl fmt::Display for LanduseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for LanduseClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LanduseClass::ALL
            .into_iter()
            .find(|c| c.key() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown land-use class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TazZone {
    pub taz_id: u32,
    /// Polygons, each an outer ring followed by holes.
    pub polygons: Vec<Vec<Ring>>,
    pub area_km2: f64,
    pub population: Option<u64>,
    /// Reference land-use areas, km².
    pub landuse: BTreeMap<LanduseClass, f64>,
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    orient(a, b, p) == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn validate_ring(taz_id: u32, ring: &Ring) -> Result<()> {
    let bad = |reason: String| Err(Error::InvalidPolygon { taz_id, reason });
    if ring.len() < 4 {
        return bad(format!("ring has {} points, need at least 4", ring.len()));
    }
    if ring.first() != ring.last() {
        return bad("ring is not closed".into());
    }
    if ring
        .iter()
        .any(|p| !(p.lon.is_finite() && p.lat.is_finite()))
    {
        return bad("ring has a non-finite coordinate".into());
    }
    let n = ring.len() - 1;
    if ring.windows(2).any(|w| w[0] == w[1]) {
        return bad("ring repeats a vertex consecutively".into());
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return bad(format!("edges {i} and {j} intersect"));
            }
        }
    }
    Ok(())
}

impl TazZone {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_km2 > 0.0) {
            return Err(Error::ZeroAreaZone(self.taz_id));
        }
        if self.polygons.is_empty() {
            return Err(Error::InvalidPolygon {
                taz_id: self.taz_id,
                reason: "no polygons".into(),
            });
        }
        for ring in self.polygons.iter().flatten() {
            validate_ring(self.taz_id, ring)?;
        }
        Ok(())
    }

    fn edges(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        self.polygons
            .iter()
            .flatten()
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn on_boundary(&self, p: GeoPoint) -> bool {
        self.edges().any(|(a, b)| on_segment(p, a, b))
    }

    /// Even-odd ray casting over each polygon's rings.
    pub fn contains_interior(&self, p: GeoPoint) -> bool {
        self.polygons.iter().any(|poly| {
            let mut inside = false;
            for ring in poly {
                for w in ring.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if (a.lat > p.lat) != (b.lat > p.lat)
                        && p.lon < (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon
                    {
                        inside = !inside;
                    }
                }
            }
            inside
        })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.on_boundary(p) || self.contains_interior(p)
    }

    fn geometry(&self) -> Geometry {
        let ring_coords = |r: &Ring| r.iter().map(|p| vec![p.lon, p.lat]).collect::<Vec<_>>();
        let poly = |rings: &Vec<Ring>| rings.iter().map(ring_coords).collect::<Vec<_>>();
        if self.polygons.len() == 1 {
            Geometry::new(Value::Polygon(poly(&self.polygons[0])))
        } else {
            Geometry::new(Value::MultiPolygon(
                self.polygons.iter().map(poly).collect(),
            ))
        }
    }

    fn properties(&self) -> JsonObject {
        let mut props = JsonObject::new();
        props.insert("taz_id".into(), self.taz_id.into());
        props.insert("area_km2".into(), self.area_km2.into());
        if let Some(pop) = self.population {
            props.insert("population".into(), pop.into());
        }
        for (class, area) in &self.landuse {
            props.insert(format!("landuse_{class}"), (*area).into());
        }
        props
    }
}

fn to_rings(taz_id: u32, poly: &[Vec<Vec<f64>>]) -> Result<Vec<Ring>> {
    poly.iter()
        .map(|ring| {
            ring.iter()
                .map(|pos| match pos.as_slice() {
                    [lon, lat, ..] => Ok(GeoPoint::new(*lon, *lat)),
                    _ => Err(Error::InvalidPolygon {
                        taz_id,
                        reason: "position with fewer than two coordinates".into(),
                    }),
                })
                .collect()
        })
        .collect()
}

/// Parse and validate a zone FeatureCollection; zones come back sorted by id.
pub fn read_zones(text: &str) -> Result<Vec<TazZone>> {
    let fc =
        FeatureCollection::from_str(text).map_err(|e| Error::Data(format!("TAZ GeoJSON: {e}")))?;
    let mut zones = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let props = f.properties.clone().unwrap_or_default();
        let num = |key: &str| props.get(key).and_then(JsonValue::as_f64);
        let taz_id = props
            .get("taz_id")
            .and_then(JsonValue::as_u64)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| Error::Data(format!("feature {i} lacks an integer taz_id")))?;
        let area_km2 =
            num("area_km2").ok_or_else(|| Error::Data(format!("zone {taz_id} lacks area_km2")))?;
        let population = props.get("population").and_then(JsonValue::as_u64);
        let landuse = LanduseClass::ALL
            .into_iter()
            .filter_map(|c| num(&format!("landuse_{c}")).map(|a| (c, a)))
            .collect();
        let geom = f
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Data(format!("zone {taz_id} has no geometry")))?;
        let polygons = match &geom.value {
            Value::Polygon(p) => vec![to_rings(taz_id, p)?],
            Value::MultiPolygon(ps) => ps
                .iter()
                .map(|p| to_rings(taz_id, p))
                .collect::<Result<_>>()?,
            _ => {
                return Err(Error::InvalidPolygon {
                    taz_id,
                    reason: "geometry is neither Polygon nor MultiPolygon".into(),
                })
            }
        };
        let zone = TazZone {
            taz_id,
            polygons,
            area_km2,
            population,
            landuse,
        };
        zone.validate()?;
        zones.push(zone);
    }
    zones.sort_by_key(|z| z.taz_id);
    if let Some(w) = zones.windows(2).find(|w| w[0].taz_id == w[1].taz_id) {
        return Err(Error::Data(format!("duplicate taz_id {}", w[0].taz_id)));
    }
    Ok(zones)
}

pub fn zones_to_geojson(zones: &[TazZone]) -> String {
    let features = zones
        .iter()
        .map(|z| Feature {
            geometry: Some(z.geometry()),
            properties: Some(z.properties()),
            ..Feature::default()
        })
        .collect();
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
    .to_string()
}

/// Zone containing `p`. Zones must be sorted by id, so a point on a shared
/// edge goes to the lowest id.
pub fn point_in_taz(p: GeoPoint, zones: &[TazZone]) -> Option<u32> {
    zones.iter().find(|z| z.contains(p)).map(|z| z.taz_id)
}

pub fn assign_platforms(positions: &[GeoPoint], zones: &[TazZone]) -> Vec<Option<u32>> {
    positions
        .par_iter()
        .map(|p| point_in_taz(*p, zones))
        .collect()
}

/// A zone's class: a function label, or sparse when it lacks flow support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TazClass {
    Function(FunctionLabel),
    Sparse,
}

impl TazClass {
    /// Row of the summary table this class is counted in.
    pub fn summary_label(self) -> FunctionLabel {
        match self {
            TazClass::Function(l) => l,
            TazClass::Sparse => FunctionLabel::Unclassified,
        }
    }
}

impl fmt::Display for TazClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TazClass::Function(l) => f.write_str(l.key()),
            TazClass::Sparse => f.write_str("sparse"),
        }
    }
}

impl From<TazClass> for String {
    fn from(c: TazClass) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for TazClass {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s == "sparse" {
            Ok(TazClass::Sparse)
        } else {
            s.parse().map(TazClass::Function)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub min_platforms: usize,
    /// Minimum summed weekly flow of the zone's clustered platforms.
    pub min_support: u64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            min_platforms: 1,
            min_support: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TazLabel {
    pub taz_id: u32,
    pub label: TazClass,
    pub platform_count: usize,
    pub support: u64,
    pub vote_histogram: Vec<u32>,
}

/// Modal cluster of a zone's platforms decides its label (ties → lower cluster).
/// `members` holds (cluster, weekly support) per clustered platform in the zone.
pub fn majority_vote(
    taz_id: u32,
    members: &[(usize, u64)],
    cluster_labels: &[FunctionLabel],
    cfg: &VoteConfig,
) -> TazLabel {
    let mut hist = vec![0u32; cluster_labels.len()];
    for &(c, _) in members {
        hist[c] += 1;
    }
    let support = members.iter().map(|m| m.1).sum();
    let label =
        if members.is_empty() || members.len() < cfg.min_platforms || support < cfg.min_support {
            TazClass::Sparse
        } else {
            let counts: Vec<f64> = hist.iter().map(|&h| h as f64).collect();
            TazClass::Function(cluster_labels[argmax(&counts)])
        };
    TazLabel {
        taz_id,
        label,
        platform_count: members.len(),
        support,
        vote_histogram: hist,
    }
}

/// Vote every zone. Per platform: its zone, its cluster (if clustered) and support.
pub fn label_zones(
    zones: &[TazZone],
    platform_zone: &[Option<u32>],
    platform_cluster: &[Option<usize>],
    platform_support: &[u64],
    cluster_labels: &[FunctionLabel],
    cfg: &VoteConfig,
) -> Vec<TazLabel> {
    let mut members: BTreeMap<u32, Vec<(usize, u64)>> = BTreeMap::new();
    for ((z, c), s) in platform_zone
        .iter()
        .zip(platform_cluster)
        .zip(platform_support)
    {
        if let (Some(z), Some(c)) = (z, c) {
            members.entry(*z).or_default().push((*c, *s));
        }
    }
    zones
        .iter()
        .map(|z| {
            let m = members.get(&z.taz_id).map_or(&[][..], Vec::as_slice);
            majority_vote(z.taz_id, m, cluster_labels, cfg)
        })
        .collect()
}

/// One row of the per-function zone summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub class: String,
    pub taz_count: usize,
    pub area_km2: f64,
    /// `None` when any zone in the row lacks population data.
    pub population: Option<u64>,
}

/// Zone count, area and population per function; sparse zones fall in the
/// unclassified row. Only classes that occur get a row.
pub fn summarize(labels: &[TazLabel], zones: &[TazZone]) -> Result<Vec<SummaryRow>> {
    let by_id: BTreeMap<u32, &TazLabel> = labels.iter().map(|l| (l.taz_id, l)).collect();
    let mut acc: BTreeMap<FunctionLabel, (usize, f64, Option<u64>)> = BTreeMap::new();
    for z in zones {
        let l = by_id
            .get(&z.taz_id)
            .ok_or_else(|| Error::Data(format!("zone {} has no label", z.taz_id)))?;
        let e = acc
            .entry(l.label.summary_label())
            .or_insert((0, 0.0, Some(0)));
        e.0 += 1;
        e.1 += z.area_km2;
        e.2 = e.2.zip(z.population).map(|(a, b)| a + b);
    }
    Ok(acc
        .into_iter()
        .map(|(label, (n, area, pop))| SummaryRow {
            class: if label == FunctionLabel::Unclassified {
                "Unclassified area (sparse)".into()
            } else {
                label.description().into()
            },
            taz_count: n,
            area_km2: area,
            population: pop,
        })
        .collect())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class", "taz_count", "area_km2", "population"])?;
    for r in rows {
        w.write_record([
            r.class.clone(),
            r.taz_count.to_string(),
            format!("{:.4}", r.area_km2),
            r.population.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub class: LanduseClass,
    pub top_n: usize,
    /// Top-ranked zones left after dropping sparse ones.
    pub valid: usize,
    pub matched: usize,
    /// `matched / valid`; `None` when no zone is valid.
    pub rate: Option<f64>,
    pub valid_area_m2: f64,
    pub matched_area_m2: f64,
}

impl AccuracyResult {
    pub fn rate_percent(&self) -> String {
        self.rate
            .map_or_else(|| "n/a".into(), |r| format!("{:.2}%", 100.0 * r))
    }
}

/// Rank zones by their reference area of `class` (zones without any such land
/// are not ranked), keep the top `top_n`, drop sparse zones, and report the
/// share whose label matches the class.
pub fn accuracy_check(
    labels: &[TazLabel],
    zones: &[TazZone],
    class: LanduseClass,
    top_n: usize,
) -> Result<AccuracyResult> {
    if !zones.iter().any(|z| z.landuse.contains_key(&class)) {
        return Err(Error::MissingLanduseClass(class.to_string()));
    }
    let by_id: BTreeMap<u32, TazClass> = labels.iter().map(|l| (l.taz_id, l.label)).collect();
    let mut ranked: Vec<(&TazZone, f64)> = zones
        .iter()
        .filter_map(|z| z.landuse.get(&class).map(|a| (z, *a)))
        .filter(|(_, a)| *a > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.taz_id.cmp(&b.0.taz_id)));
    ranked.truncate(top_n);
    let mut res = AccuracyResult {
        class,
        top_n,
        valid: 0,
        matched: 0,
        rate: None,
        valid_area_m2: 0.0,
        matched_area_m2: 0.0,
    };
    for (z, area) in ranked {
        let label = by_id.get(&z.taz_id).copied().unwrap_or(TazClass::Sparse);
        let TazClass::Function(f) = label else {
            continue;
        };
        res.valid += 1;
        res.valid_area_m2 += area * 1e6;
        if class.matches(f) {
            res.matched += 1;
            res.matched_area_m2 += area * 1e6;
        }
    }
    res.rate = (res.valid > 0).then(|| res.matched as f64 / res.valid as f64);
    Ok(res)
}

/// Zones with their assigned label, vote and platform count as properties.
pub fn labeled_geojson(zones: &[TazZone], labels: &[TazLabel]) -> String {
    let by_id: BTreeMap<u32, &TazLabel> = labels.iter().map(|l| (l.taz_id, l)).collect();
    let features = zones
        .iter()
        .map(|z| {
            let mut props = z.properties();
            if let Some(l) = by_id.get(&z.taz_id) {
                props.insert("label".into(), l.label.to_string().into());
                props.insert("platform_count".into(), l.platform_count.into());
                props.insert("support".into(), l.support.into());
                props.insert(
                    "vote_histogram".into(),
                    JsonValue::Array(l.vote_histogram.iter().map(|&v| v.into()).collect()),
                );
            }
            Feature {
                geometry: Some(z.geometry()),
                properties: Some(props),
                ..Feature::default()
            }
        })
        .collect();
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    }
    .to_string()
}
