//! Cluster function recognition from POI rankings, flow timing signatures and
//! landmark overrides.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HourWindow;
use crate::geo::{haversine_m, GeoPoint};
use crate::ingest::{DayKind, FlowCube, DAYS};
use crate::poi::{PoiCategory, PoiProfile};
use crate::taz::SummaryRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionLabel {
    MatureResidential,
    Developing,
    Scenic,
    CommercialEntertainment,
    PublicScienceEduCulture,
    NewResidential,
    Unclassified,
}

impl FunctionLabel {
    pub const ALL: [FunctionLabel; 7] = [
        FunctionLabel::MatureResidential,
        FunctionLabel::Developing,
        FunctionLabel::Scenic,
        FunctionLabel::CommercialEntertainment,
        FunctionLabel::PublicScienceEduCulture,
        FunctionLabel::NewResidential,
        FunctionLabel::Unclassified,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FunctionLabel::MatureResidential => "mature_residential",
            FunctionLabel::Developing => "developing",
            FunctionLabel::Scenic => "scenic",
            FunctionLabel::CommercialEntertainment => "commercial_entertainment",
            FunctionLabel::PublicScienceEduCulture => "public_science_edu_culture",
            FunctionLabel::NewResidential => "new_residential",
            FunctionLabel::Unclassified => "unclassified",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FunctionLabel::MatureResidential => "Mature residential area",
            FunctionLabel::Developing => "Developing area",
            FunctionLabel::Scenic => "Scenic area",
            FunctionLabel::CommercialEntertainment => "Commercial and entertainment area",
            FunctionLabel::PublicScienceEduCulture => {
                "Area of public management, science, education and culture"
            }
            FunctionLabel::NewResidential => "New residential area",
            FunctionLabel::Unclassified => "Unclassified area",
        }
    }
}

impl fmt::Display for FunctionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FunctionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let label = match s.as_str() {
            "commercial" => FunctionLabel::CommercialEntertainment,
            "public" => FunctionLabel::PublicScienceEduCulture,
            "residential" => FunctionLabel::MatureResidential,
            _ => *FunctionLabel::ALL
                .iter()
                .find(|l| l.key() == s)
                .ok_or_else(|| Error::Config(format!("unknown function label `{s}`")))?,
        };
        Ok(label)
    }
}

/// Timing features of a cluster's flows. Curves cover the hour window and are
/// means per member platform-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSignature {
    pub cluster: usize,
    pub platform_count: usize,
    pub first_hour: u8,
    pub weekday_in: Vec<f64>,
    pub weekday_out: Vec<f64>,
    pub weekend_in: Vec<f64>,
    pub weekend_out: Vec<f64>,
    /// Weekday boardings in the morning hours over the weekday boarding mean.
    pub morning_peak_ratio: f64,
    /// Weekday alightings in the evening hours over the weekday alighting mean.
    pub evening_return_ratio: f64,
    /// Mean weekend-day flow over mean weekday flow.
    pub weekend_uplift: f64,
    /// Mean daily flow per member platform over the same mean for all clustered platforms.
    pub volume_scale: f64,
    pub zero_flow: bool,
}

impl TemporalSignature {
    /// Hour of the day at which a curve peaks (earliest on ties).
    pub fn peak_hour(&self, curve: &[f64]) -> usize {
        self.first_hour as usize + crate::em::argmax(curve)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean per-platform-day hourly curves over `members` (cube row indices).
fn curves(cube: &FlowCube, members: &[usize], window: HourWindow) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; window.len()]);
    let mut days = [0usize; 2];
    for d in 0..DAYS {
        let kind = (cube.day_kinds[d] == DayKind::Weekend) as usize;
        days[kind] += 1;
        for &p in members {
            for (i, h) in window.hours().enumerate() {
                out[2 * kind][i] += cube.inflow(p, d, h) as f64;
                out[2 * kind + 1][i] += cube.outflow(p, d, h) as f64;
            }
        }
    }
    for (c, curve) in out.iter_mut().enumerate() {
        let denom = (days[c / 2] * members.len()).max(1) as f64;
        curve.iter_mut().for_each(|v| *v /= denom);
    }
    out
}

fn daily_flow(curves: &[Vec<f64>; 4]) -> (f64, f64) {
    let wd: f64 = curves[0].iter().chain(&curves[1]).sum();
    let we: f64 = curves[2].iter().chain(&curves[3]).sum();
    (wd, we)
}

fn weekly_mean_daily(curves: &[Vec<f64>; 4], cube: &FlowCube) -> f64 {
    let weekend_days = cube
        .day_kinds
        .iter()
        .filter(|k| **k == DayKind::Weekend)
        .count() as f64;
    let (wd, we) = daily_flow(curves);
    (wd * (DAYS as f64 - weekend_days) + we * weekend_days) / DAYS as f64
}

fn window_offsets(window: HourWindow, hours: [u8; 2]) -> Vec<usize> {
    (hours[0]..=hours[1])
        .map(usize::from)
        .filter(|h| window.contains(*h))
        .map(|h| h - window.first as usize)
        .collect()
}

/// Timing signature of one cluster. `global_daily_mean` is the mean daily flow
/// per platform over every clustered platform.
pub fn flow_signature(
    cluster: usize,
    cube: &FlowCube,
    members: &[usize],
    window: HourWindow,
    global_daily_mean: f64,
    cfg: &RuleConfig,
) -> Result<TemporalSignature> {
    if members.is_empty() {
        return Err(Error::EmptyCluster(cluster));
    }
    let c = curves(cube, members, window);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let peak = |curve: &[f64], hours: [u8; 2]| {
        let idx = window_offsets(window, hours);
        let sel: Vec<f64> = idx.iter().map(|&i| curve[i]).collect();
        ratio(mean(&sel), mean(curve))
    };
    let (wd, we) = daily_flow(&c);
    let daily = weekly_mean_daily(&c, cube);
    let [weekday_in, weekday_out, weekend_in, weekend_out] = c.clone();
    Ok(TemporalSignature {
        cluster,
        platform_count: members.len(),
        first_hour: window.first,
        morning_peak_ratio: peak(&weekday_in, cfg.morning_hours),
        evening_return_ratio: peak(&weekday_out, cfg.evening_hours),
        weekend_uplift: ratio(we, wd),
        volume_scale: ratio(daily, global_daily_mean),
        zero_flow: wd + we == 0.0,
        weekday_in,
        weekday_out,
        weekend_in,
        weekend_out,
    })
}

/// Signatures of clusters `0..k`; `cluster_of[p]` gives the cluster of cube row `p`.
pub fn flow_signatures(
    cube: &FlowCube,
    cluster_of: &[Option<usize>],
    k: usize,
    window: HourWindow,
    cfg: &RuleConfig,
) -> Result<Vec<TemporalSignature>> {
    assert_eq!(cluster_of.len(), cube.num_platforms());
    let clustered: Vec<usize> = (0..cluster_of.len())
        .filter(|&p| cluster_of[p].is_some())
        .collect();
    let global = weekly_mean_daily(&curves(cube, &clustered, window), cube);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = clustered
                .iter()
                .copied()
                .filter(|&p| cluster_of[p] == Some(c))
                .collect();
            flow_signature(c, cube, &members, window, global, cfg)
        })
        .collect()
}

/// Thresholds of the recognition rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub morning_hours: [u8; 2],
    pub evening_hours: [u8; 2],
    pub morning_peak_min: f64,
    pub evening_return_min: f64,
    pub residential_rank_max: u32,
    pub volume_split: f64,
    pub scenic_rcr_max: u32,
    pub weekend_uplift_min: f64,
    pub commercial_top_n: u32,
    pub commercial_min_hits: usize,
    pub commercial_evening_min: f64,
    pub public_rcr_max: u32,
    pub developing_top_n: u32,
    pub developing_min_hits: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            morning_hours: [7, 8],
            evening_hours: [17, 19],
            morning_peak_min: 1.5,
            evening_return_min: 1.5,
            residential_rank_max: 8,
            volume_split: 0.5,
            scenic_rcr_max: 2,
            weekend_uplift_min: 1.1,
            commercial_top_n: 3,
            commercial_min_hits: 2,
            commercial_evening_min: 1.5,
            public_rcr_max: 3,
            developing_top_n: 5,
            developing_min_hits: 3,
        }
    }
}

/// Rule identifiers in evaluation order after landmark overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    R2,
    R4,
    R3,
    R1,
    R5,
    R6,
}

impl Rule {
    pub const PRIORITY: [Rule; 6] = [Rule::R2, Rule::R4, Rule::R3, Rule::R1, Rule::R5, Rule::R6];

    pub fn id(self) -> &'static str {
        match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
            Rule::R4 => "R4",
            Rule::R5 => "R5",
            Rule::R6 => "R6",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Rule::R1 => "morning boarding and evening alighting peaks with residential POI",
            Rule::R2 => "places of interest rank high and weekends are busier",
            Rule::R3 => "catering/shopping/life services rank high with an evening alighting peak",
            Rule::R4 => "government and science/education/culture POI both rank high",
            Rule::R5 => "automobile and motorcycle services dominate the internal ranking",
            Rule::R6 => "no rule matched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: Rule,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub cluster: usize,
    pub label: FunctionLabel,
    /// Identifiers of the rule (or landmark) that decided the label.
    pub rationale: Vec<String>,
    /// Outcome of every rule, in priority order.
    pub checks: Vec<RuleCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub position: GeoPoint,
    pub forced_label: FunctionLabel,
}

pub fn read_landmarks<R: Read>(reader: R) -> Result<Vec<Landmark>> {
    #[derive(Deserialize)]
    struct Row {
        name: String,
        lon: f64,
        lat: f64,
        forced_label: String,
    }
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: Row = row?;
        out.push(Landmark {
            forced_label: row.forced_label.parse()?,
            name: row.name,
            position: GeoPoint::new(row.lon, row.lat),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkOverride {
    pub label: FunctionLabel,
    pub landmarks: Vec<String>,
}

/// Attach each landmark to the cluster of the nearest clustered platform within
/// `radius_m`. Two landmarks forcing different labels on one cluster is an error.
pub fn resolve_landmarks(
    landmarks: &[Landmark],
    platforms: &[(GeoPoint, Option<usize>)],
    radius_m: f64,
) -> Result<BTreeMap<usize, LandmarkOverride>> {
    let mut out: BTreeMap<usize, LandmarkOverride> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for lm in landmarks {
        let nearest = platforms
            .iter()
            .filter_map(|(pos, c)| c.map(|c| (haversine_m(lm.position, *pos), c)))
            .filter(|(d, _)| *d <= radius_m)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, cluster)) = nearest else {
            log::warn!(
                "landmark `{}` has no clustered platform within {radius_m} m",
                lm.name
            );
            continue;
        };
        match out.get_mut(&cluster) {
            Some(o) if o.label != lm.forced_label => conflicts.push(format!(
                "cluster {cluster}: `{}` forces {} but {} force {}",
                lm.name,
                lm.forced_label,
                o.landmarks.join(", "),
                o.label
            )),
            Some(o) => o.landmarks.push(lm.name.clone()),
            None => {
                out.insert(
                    cluster,
                    LandmarkOverride {
                        label: lm.forced_label,
                        landmarks: vec![lm.name.clone()],
                    },
                );
            }
        }
    }
    if conflicts.is_empty() {
        Ok(out)
    } else {
        Err(Error::LandmarkConflict(conflicts))
    }
}

fn hits(
    profile: &PoiProfile,
    cats: &[PoiCategory],
    rank: impl Fn(&PoiProfile, PoiCategory) -> u32,
    max: u32,
) -> usize {
    cats.iter().filter(|&&c| rank(profile, c) <= max).count()
}

fn rule_passes(rule: Rule, p: &PoiProfile, s: &TemporalSignature, cfg: &RuleConfig) -> bool {
    use PoiCategory::*;
    let has_poi = !p.sparse_poi;
    match rule {
        Rule::R2 => {
            has_poi
                && p.rcr_of(PlaceOfInterest) <= cfg.scenic_rcr_max
                && s.weekend_uplift >= cfg.weekend_uplift_min
        }
        Rule::R4 => {
            has_poi
                && p.rcr_of(Government) <= cfg.public_rcr_max
                && p.rcr_of(ScienceEduCulture) <= cfg.public_rcr_max
        }
        Rule::R3 => {
            has_poi
                && hits(
                    p,
                    &[Catering, Shopping, LifeService],
                    PoiProfile::rcr_of,
                    cfg.commercial_top_n,
                ) >= cfg.commercial_min_hits
                && s.evening_return_ratio >= cfg.commercial_evening_min
        }
        Rule::R1 => {
            has_poi
                && s.morning_peak_ratio >= cfg.morning_peak_min
                && s.evening_return_ratio >= cfg.evening_return_min
                && p.internal_rank_of(BusinessResidential) <= cfg.residential_rank_max
        }
        Rule::R5 => {
            has_poi
                && hits(
                    p,
                    &[
                        AutomobileService,
                        VehicleSales,
                        AutomobileMaintenance,
                        MotorcycleService,
                    ],
                    PoiProfile::internal_rank_of,
                    cfg.developing_top_n,
                ) >= cfg.developing_min_hits
        }
        Rule::R6 => true,
    }
}

/// Label one cluster: a landmark override wins, otherwise the first rule in
/// [`Rule::PRIORITY`] that passes decides.
pub fn apply_rules(
    profile: &PoiProfile,
    signature: &TemporalSignature,
    landmark: Option<&LandmarkOverride>,
    cfg: &RuleConfig,
) -> LabelDecision {
    assert_eq!(
        profile.cluster, signature.cluster,
        "profile and signature clusters differ"
    );
    let checks: Vec<RuleCheck> = Rule::PRIORITY
        .iter()
        .map(|&rule| RuleCheck {
            rule,
            passed: rule_passes(rule, profile, signature, cfg),
        })
        .collect();
    let (label, rationale) = if let Some(o) = landmark {
        (
            o.label,
            o.landmarks
                .iter()
                .map(|n| format!("landmark:{n}"))
                .collect(),
        )
    } else {
        let first = checks
            .iter()
            .find(|c| c.passed)
            .expect("R6 always passes")
            .rule;
        let label = match first {
            Rule::R2 => FunctionLabel::Scenic,
            Rule::R4 => FunctionLabel::PublicScienceEduCulture,
            Rule::R3 => FunctionLabel::CommercialEntertainment,
            Rule::R1 if signature.volume_scale >= cfg.volume_split => {
                FunctionLabel::MatureResidential
            }
            Rule::R1 => FunctionLabel::NewResidential,
            Rule::R5 => FunctionLabel::Developing,
            Rule::R6 => FunctionLabel::Unclassified,
        };
        (label, vec![first.id().to_string()])
    };
    LabelDecision {
        cluster: profile.cluster,
        label,
        rationale,
        checks,
    }
}

/// Labels, rules and signatures for every cluster, as written to `labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub rules: RuleConfig,
    pub decisions: Vec<LabelDecision>,
    pub signatures: Vec<TemporalSignature>,
}

impl LabelSet {
    pub fn labels(&self) -> Vec<FunctionLabel> {
        self.decisions.iter().map(|d| d.label).collect()
    }
}

/// Markdown narrative, one section per cluster, plus the zone rollup when available.
pub fn label_report(
    decisions: &[LabelDecision],
    profiles: &[PoiProfile],
    signatures: &[TemporalSignature],
    summary: Option<&[SummaryRow]>,
) -> String {
    let mut md = String::from("# Functional zone report\n\n");
    for d in decisions {
        let p = &profiles[d.cluster];
        let s = &signatures[d.cluster];
        let _ = writeln!(md, "## C{}: {}\n", d.cluster, d.label.description());
        let _ = writeln!(md, "- label: `{}`", d.label);
        let _ = writeln!(md, "- fired: {}", d.rationale.join(", "));
        let _ = writeln!(
            md,
            "- platforms: {}, POIs in service areas: {}",
            s.platform_count, p.total_pois
        );
        let top: Vec<String> = p
            .top_fd(5)
            .iter()
            .map(|c| format!("{} ({:.3}, RCR {})", c.name(), p.fd_of(*c), p.rcr_of(*c)))
            .collect();
        let _ = writeln!(md, "- top FD categories: {}", top.join("; "));
        let _ = writeln!(
            md,
            "- weekday peaks: boarding {:02}:00, alighting {:02}:00; weekend peaks: boarding {:02}:00, alighting {:02}:00",
            s.peak_hour(&s.weekday_in),
            s.peak_hour(&s.weekday_out),
            s.peak_hour(&s.weekend_in),
            s.peak_hour(&s.weekend_out)
        );
        let _ = writeln!(
            md,
            "- morning peak ratio {:.2}, evening return ratio {:.2}, weekend uplift {:.2}, volume scale {:.2}",
            s.morning_peak_ratio, s.evening_return_ratio, s.weekend_uplift, s.volume_scale
        );
        let checks: Vec<String> = d
            .checks
            .iter()
            .map(|c| format!("{}={}", c.rule.id(), if c.passed { "pass" } else { "fail" }))
            .collect();
        let _ = writeln!(md, "- rule checks: {}\n", checks.join(" "));
    }
    if let Some(rows) = summary {
        md.push_str("## Zone summary\n\n| Function | Zones | Area (km²) | Population |\n|---|---:|---:|---:|\n");
        for r in rows {
            let pop = r.population.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {} |",
                r.class, r.taz_count, r.area_km2, pop
            );
        }
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Direction, StudyWeek};
    use crate::poi::NUM_CATEGORIES;

    fn cube_with(f: impl Fn(usize, usize) -> (u64, u64)) -> FlowCube {
        let mut cube = FlowCube::zeros(vec![1], &StudyWeek::default());
        for d in 0..DAYS {
            for h in 0..24 {
                let (i, o) = f(d, h);
                cube.add(0, d, h, Direction::Boarding, i);
                cube.add(0, d, h, Direction::Alighting, o);
            }
        }
        cube
    }

    fn sig(cube: &FlowCube) -> TemporalSignature {
        flow_signatures(
            cube,
            &[Some(0)],
            1,
            HourWindow::default(),
            &RuleConfig::default(),
        )
        .unwrap()
        .remove(0)
    }

    fn blank_profile(cluster: usize) -> PoiProfile {
        PoiProfile {
            cluster,
            platform_count: 1,
            total_pois: 100,
            fd: [0.0; NUM_CATEGORIES],
            cr: [0.0; NUM_CATEGORIES],
            fd_rank: std::array::from_fn(|i| i as u32 + 1),
            rcr: [6; NUM_CATEGORIES],
            sparse_poi: false,
        }
    }

    fn residential_signature(volume_scale: f64) -> TemporalSignature {
        TemporalSignature {
            cluster: 0,
            platform_count: 4,
            first_hour: 5,
            weekday_in: vec![1.0; 19],
            weekday_out: vec![1.0; 19],
            weekend_in: vec![1.0; 19],
            weekend_out: vec![1.0; 19],
            morning_peak_ratio: 3.0,
            evening_return_ratio: 2.5,
            weekend_uplift: 0.8,
            volume_scale,
            zero_flow: false,
        }
    }

    #[test]
    fn uniform_flow_has_unit_morning_ratio() {
        let s = sig(&cube_with(|_, _| (5, 5)));
        assert!((s.morning_peak_ratio - 1.0).abs() < 1e-12);
        assert!((s.evening_return_ratio - 1.0).abs() < 1e-12);
        assert!((s.weekend_uplift - 1.0).abs() < 1e-12);
        assert!((s.volume_scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concentrated_morning_boarding() {
        let s = sig(&cube_with(|_, h| {
            (if (7..=8).contains(&h) { 100 } else { 0 }, 1)
        }));
        assert!(s.morning_peak_ratio > 5.0);
        assert_eq!(s.peak_hour(&s.weekday_in), 7);
    }

    #[test]
    fn zero_flow_is_flagged() {
        let s = sig(&cube_with(|_, _| (0, 0)));
        assert!(s.zero_flow);
        assert_eq!(
            (s.morning_peak_ratio, s.weekend_uplift, s.volume_scale),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn residential_rule_and_volume_split() {
        let mut p = blank_profile(0);
        p.fd_rank[PoiCategory::BusinessResidential.index()] = 1;
        let cfg = RuleConfig::default();
        let d = apply_rules(&p, &residential_signature(1.2), None, &cfg);
        assert_eq!(d.label, FunctionLabel::MatureResidential);
        assert_eq!(d.rationale, vec!["R1"]);
        let d = apply_rules(&p, &residential_signature(0.3), None, &cfg);
        assert_eq!(d.label, FunctionLabel::NewResidential);
    }

    #[test]
    fn empty_cluster_falls_through_to_r6() {
        let mut p = blank_profile(0);
        p.sparse_poi = true;
        p.total_pois = 0;
        p.rcr = [1; NUM_CATEGORIES];
        let s = sig(&cube_with(|_, _| (0, 0)));
        let d = apply_rules(&p, &s, None, &RuleConfig::default());
        assert_eq!(d.label, FunctionLabel::Unclassified);
        assert_eq!(d.rationale, vec!["R6"]);
    }

    #[test]
    fn priority_public_before_commercial() {
        let mut p = blank_profile(0);
        for c in [
            PoiCategory::Government,
            PoiCategory::ScienceEduCulture,
            PoiCategory::Catering,
            PoiCategory::Shopping,
        ] {
            p.rcr[c.index()] = 1;
        }
        let d = apply_rules(
            &p,
            &residential_signature(1.0),
            None,
            &RuleConfig::default(),
        );
        assert_eq!(d.label, FunctionLabel::PublicScienceEduCulture);
        assert!(d.checks.iter().find(|c| c.rule == Rule::R3).unwrap().passed);
    }

    #[test]
    fn developing_rule() {
        let mut p = blank_profile(0);
        p.fd_rank = std::array::from_fn(|i| i as u32 + 1);
        let mut s = residential_signature(1.0);
        s.morning_peak_ratio = 1.0;
        let d = apply_rules(&p, &s, None, &RuleConfig::default());
        assert_eq!(d.label, FunctionLabel::Developing);
    }

    #[test]
    fn landmark_override_wins() {
        let mut p = blank_profile(0);
        p.fd_rank[PoiCategory::BusinessResidential.index()] = 1;
        let o = LandmarkOverride {
            label: FunctionLabel::Scenic,
            landmarks: vec!["Imperial Palace".into()],
        };
        let d = apply_rules(
            &p,
            &residential_signature(1.0),
            Some(&o),
            &RuleConfig::default(),
        );
        assert_eq!(d.label, FunctionLabel::Scenic);
        assert_eq!(d.rationale, vec!["landmark:Imperial Palace"]);
    }

    #[test]
    fn landmarks_resolve_to_nearest_clustered_platform() {
        let palace = GeoPoint::new(116.3972, 39.9163);
        let platforms = vec![
            (GeoPoint::new(116.3975, 39.9165), None),
            (GeoPoint::new(116.3980, 39.9170), Some(2)),
            (GeoPoint::new(116.5, 39.9), Some(0)),
        ];
        let lms = vec![Landmark {
            name: "Imperial Palace".into(),
            position: palace,
            forced_label: FunctionLabel::Scenic,
        }];
        let map = resolve_landmarks(&lms, &platforms, 500.0).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map[&2].label, FunctionLabel::Scenic);

        let mut two = lms.clone();
        two.push(Landmark {
            name: "Beihai Park office".into(),
            position: palace,
            forced_label: FunctionLabel::PublicScienceEduCulture,
        });
        let err = resolve_landmarks(&two, &platforms, 500.0).unwrap_err();
        assert!(
            matches!(err, Error::LandmarkConflict(ref v) if v.len() == 1 && v[0].contains("cluster 2"))
        );
    }

    #[test]
    fn landmark_csv() {
        let csv = "name,lon,lat,forced_label\nImperial Palace,116.3972,39.9163,scenic\n";
        let lms = read_landmarks(csv.as_bytes()).unwrap();
        assert_eq!(lms[0].forced_label, FunctionLabel::Scenic);
        let bad = "name,lon,lat,forced_label\nX,1,2,castle\n";
        assert!(matches!(
            read_landmarks(bad.as_bytes()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn label_parsing() {
        for l in FunctionLabel::ALL {
            assert_eq!(l.key().parse::<FunctionLabel>().unwrap(), l);
        }
        assert_eq!(
            "public".parse::<FunctionLabel>().unwrap(),
            FunctionLabel::PublicScienceEduCulture
        );
    }

    #[test]
    fn report_has_one_section_per_cluster() {
        let profiles: Vec<_> = (0..6).map(blank_profile).collect();
        let sigs: Vec<_> = (0..6)
            .map(|c| TemporalSignature {
                cluster: c,
                ..residential_signature(1.0)
            })
            .collect();
        let decisions: Vec<_> = profiles
            .iter()
            .zip(&sigs)
            .map(|(p, s)| apply_rules(p, s, None, &RuleConfig::default()))
            .collect();
        let md = label_report(&decisions, &profiles, &sigs, None);
        assert_eq!(md.matches("\n## C").count(), 6);
        assert!(md.contains("fired: R"));
        assert!(!md.contains("Zone summary"));
        let rows = vec![SummaryRow {
            class: "Scenic area".into(),
            taz_count: 3,
            area_km2: 7.5,
            population: Some(1200),
        }];
        assert!(label_report(&decisions, &profiles, &sigs, Some(&rows))
            .contains("| Scenic area | 3 | 7.50 | 1200 |"));
    }
}
