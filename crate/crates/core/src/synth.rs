//! Seeded synthetic city with planted functional zones. Every file it writes
//! is in the format the pipeline reads, and the generator keeps its own
//! per-cell tallies and zone labels as ground truth.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, offset_m, GeoPoint};
use crate::ingest::{
    CardType, Direction, FlowCube, Platform, PlatformTable, Pricing, ScdRecord, ScdSchema,
    StudyWeek, DAYS, HOURS, TIMESTAMP_FORMAT,
};
use crate::labeler::FunctionLabel;
use crate::poi::{write_pois, CategoryCounts, Poi, PoiCategory, NUM_CATEGORIES};
use crate::taz::{zones_to_geojson, LanduseClass, TazClass, TazZone};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    MatureResidential,
    Developing,
    Scenic,
    Commercial,
    Public,
    NewResidential,
    Sparse,
}

impl Archetype {
    pub const ALL: [Archetype; 7] = [
        Archetype::MatureResidential,
        Archetype::Developing,
        Archetype::Scenic,
        Archetype::Commercial,
        Archetype::Public,
        Archetype::NewResidential,
        Archetype::Sparse,
    ];

    /// Label the pipeline should recover for zones of this archetype.
    pub fn truth(self) -> TazClass {
        use FunctionLabel::*;
        TazClass::Function(match self {
            Archetype::MatureResidential => MatureResidential,
            Archetype::Developing => Developing,
            Archetype::Scenic => Scenic,
            Archetype::Commercial => CommercialEntertainment,
            Archetype::Public => PublicScienceEduCulture,
            Archetype::NewResidential => NewResidential,
            Archetype::Sparse => return TazClass::Sparse,
        })
    }

    fn landuse(self) -> Option<LanduseClass> {
        match self {
            Archetype::MatureResidential | Archetype::NewResidential => {
                Some(LanduseClass::Residential)
            }
            Archetype::Developing => Some(LanduseClass::Developing),
            Archetype::Scenic => Some(LanduseClass::Scenic),
            Archetype::Commercial => Some(LanduseClass::Commercial),
            Archetype::Public => Some(LanduseClass::Public),
            Archetype::Sparse => None,
        }
    }

    /// Residents per km².
    fn population_density(self) -> f64 {
        match self {
            Archetype::MatureResidential => 12_000.0,
            Archetype::NewResidential => 6_000.0,
            Archetype::Public => 4_000.0,
            Archetype::Commercial => 3_000.0,
            Archetype::Developing => 1_500.0,
            Archetype::Scenic => 500.0,
            Archetype::Sparse => 200.0,
        }
    }
}

/// Hours `from..=to` held at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: u8,
    pub to: u8,
    pub level: f64,
}

/// Piecewise-constant hourly intensity: `base` during service hours (05:00 to 23:59), `night`
/// otherwise, overridden by segments (later segments win).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curve {
    pub base: f64,
    pub night: f64,
    pub segments: Vec<Segment>,
}

impl Default for Curve {
    fn default() -> Self {
        Curve::with(&[])
    }
}

impl Curve {
    pub fn with(segments: &[(u8, u8, f64)]) -> Self {
        Curve {
            base: 1.0,
            night: 0.08,
            segments: segments
                .iter()
                .map(|&(from, to, level)| Segment { from, to, level })
                .collect(),
        }
    }

    pub fn level(&self, hour: usize) -> f64 {
        self.segments
            .iter()
            .rev()
            .find(|s| (s.from as usize..=s.to as usize).contains(&hour))
            .map_or(
                if (5..=23).contains(&hour) {
                    self.base
                } else {
                    self.night
                },
                |s| s.level,
            )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DayTemplate {
    pub volume: f64,
    pub boarding: Curve,
    pub alighting: Curve,
}

impl Default for DayTemplate {
    fn default() -> Self {
        DayTemplate::new(1.0, &[], &[])
    }
}

impl DayTemplate {
    fn new(volume: f64, boarding: &[(u8, u8, f64)], alighting: &[(u8, u8, f64)]) -> Self {
        DayTemplate {
            volume,
            boarding: Curve::with(boarding),
            alighting: Curve::with(alighting),
        }
    }

    fn intensity(&self, direction: Direction, hour: usize) -> f64 {
        self.volume
            * match direction {
                Direction::Boarding => self.boarding.level(hour),
                Direction::Alighting => self.alighting.level(hour),
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeTemplate {
    pub weekday: DayTemplate,
    pub weekend: DayTemplate,
    /// Expected POIs per km², indexed by category code − 1.
    pub poi_density: [f64; NUM_CATEGORIES],
}

const BACKGROUND_POI: f64 = 2.0;

fn poi_mix(boosts: &[(PoiCategory, f64)]) -> [f64; NUM_CATEGORIES] {
    let mut d = [BACKGROUND_POI; NUM_CATEGORIES];
    for &(c, v) in boosts {
        d[c.index()] = v;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Templates {
    pub mature_residential: ArchetypeTemplate,
    pub developing: ArchetypeTemplate,
    pub scenic: ArchetypeTemplate,
    pub commercial: ArchetypeTemplate,
    pub public: ArchetypeTemplate,
    pub new_residential: ArchetypeTemplate,
    pub sparse: ArchetypeTemplate,
}

impl Templates {
    pub fn get(&self, a: Archetype) -> &ArchetypeTemplate {
        match a {
            Archetype::MatureResidential => &self.mature_residential,
            Archetype::Developing => &self.developing,
            Archetype::Scenic => &self.scenic,
            Archetype::Commercial => &self.commercial,
            Archetype::Public => &self.public,
            Archetype::NewResidential => &self.new_residential,
            Archetype::Sparse => &self.sparse,
        }
    }
}

impl Default for Templates {
    fn default() -> Self {
        use PoiCategory::*;
        let t = |weekday, weekend, poi| ArchetypeTemplate {
            weekday,
            weekend,
            poi_density: poi,
        };
        Templates {
            // Morning boarding and evening alighting rush hours.
            mature_residential: t(
                DayTemplate::new(
                    1.0,
                    &[(6, 6, 2.0), (7, 8, 4.0), (17, 22, 0.6)],
                    &[(6, 9, 0.5), (17, 19, 3.5)],
                ),
                DayTemplate::new(0.8, &[(9, 10, 1.8)], &[(18, 20, 1.8)]),
                poi_mix(&[(BusinessResidential, 25.0)]),
            ),
            developing: t(
                DayTemplate::new(0.8, &[(12, 13, 1.8)], &[(13, 14, 1.8)]),
                DayTemplate::new(0.7, &[], &[]),
                poi_mix(&[
                    (AutomobileService, 15.0),
                    (VehicleSales, 15.0),
                    (AutomobileMaintenance, 15.0),
                    (MotorcycleService, 15.0),
                    (Government, 8.0),
                    (RoadFacility, 6.0),
                ]),
            ),
            // Visitors arrive late morning and leave mid-afternoon, mostly at weekends.
            scenic: t(
                DayTemplate::new(1.0, &[(15, 17, 1.8)], &[(9, 11, 1.8)]),
                DayTemplate::new(2.0, &[(15, 18, 4.0)], &[(9, 11, 4.0)]),
                poi_mix(&[
                    (PlaceOfInterest, 30.0),
                    (Catering, 20.0),
                    (Shopping, 12.0),
                    (Accommodation, 10.0),
                    (ScienceEduCulture, 8.0),
                    (LifeService, 6.0),
                ]),
            ),
            commercial: t(
                DayTemplate::new(
                    1.2,
                    &[(6, 9, 0.5), (20, 22, 3.5)],
                    &[(10, 12, 2.5), (17, 19, 3.0)],
                ),
                DayTemplate::new(1.1, &[(20, 22, 3.0)], &[(10, 12, 2.5), (17, 19, 2.5)]),
                poi_mix(&[
                    (Catering, 40.0),
                    (Shopping, 40.0),
                    (LifeService, 30.0),
                    (Finance, 15.0),
                    (Corporation, 10.0),
                    (Government, 6.0),
                ]),
            ),
            // Commuters arrive in the morning and leave in the evening.
            public: t(
                DayTemplate::new(
                    1.0,
                    &[(7, 9, 0.5), (17, 18, 4.0)],
                    &[(7, 9, 4.0), (17, 20, 0.5)],
                ),
                DayTemplate::new(0.4, &[], &[]),
                poi_mix(&[
                    (Government, 30.0),
                    (ScienceEduCulture, 30.0),
                    (LifeService, 12.0),
                    (PlaceOfInterest, 10.0),
                    (Catering, 10.0),
                    (Shopping, 10.0),
                    (HealthCare, 10.0),
                ]),
            ),
            // Earlier, smaller rush hours than the mature areas.
            new_residential: t(
                DayTemplate::new(
                    0.3,
                    &[(5, 7, 4.0), (17, 22, 0.6)],
                    &[(6, 9, 0.5), (18, 21, 3.5)],
                ),
                DayTemplate::new(0.27, &[(8, 10, 3.0)], &[(17, 20, 2.5)]),
                poi_mix(&[(BusinessResidential, 20.0), (ScienceEduCulture, 6.0)]),
            ),
            sparse: t(
                DayTemplate::new(0.0, &[], &[]),
                DayTemplate::new(0.0, &[], &[]),
                poi_mix(&[]),
            ),
        }
    }
}

/// Declarative description of a synthetic city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CitySpec {
    pub seed: u64,
    /// South-west corner of the zone grid.
    pub origin: GeoPoint,
    pub rows: u32,
    pub cols: u32,
    pub zone_size_m: f64,
    /// Archetype per zone in row-major order; a balanced seeded shuffle when empty.
    pub layout: Vec<Archetype>,
    pub platforms_per_zone: u32,
    pub sparse_platforms: u32,
    /// Distance of platforms from the zone centre along each axis.
    pub platform_spread_m: f64,
    pub platform_jitter_m: f64,
    pub study_week_start: NaiveDate,
    /// Expected segmented swipes per platform-hour at intensity 1.
    pub base_rate: f64,
    /// Multiplies every intensity.
    pub scale: f64,
    /// Share of all swipes made on segmented-pricing lines.
    pub segmented_share: f64,
    /// Malformed lines slipped into the SCD file.
    pub corrupt_lines: usize,
    pub templates: Templates,
}

impl Default for CitySpec {
    fn default() -> Self {
        CitySpec {
            seed: 7,
            origin: GeoPoint::new(116.20, 39.80),
            rows: 7,
            cols: 8,
            zone_size_m: 2000.0,
            layout: Vec::new(),
            platforms_per_zone: 4,
            sparse_platforms: 1,
            platform_spread_m: 350.0,
            platform_jitter_m: 100.0,
            study_week_start: StudyWeek::default().start,
            base_rate: 4.5,
            scale: 1.0,
            segmented_share: 0.483,
            corrupt_lines: 0,
            templates: Templates::default(),
        }
    }
}

impl CitySpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("city spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("city spec serializes")
    }

    pub fn zone_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn week(&self) -> StudyWeek {
        StudyWeek {
            start: self.study_week_start,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.zone_size_m > 0.0) {
            return Err(Error::ZeroAreaZone(1));
        }
        if self.zone_count() == 0 {
            return Err(Error::Config("city grid has no zones".into()));
        }
        if !self.layout.is_empty() && self.layout.len() != self.zone_count() {
            return Err(Error::Config(format!(
                "layout names {} zones, grid has {}",
                self.layout.len(),
                self.zone_count()
            )));
        }
        if !(self.scale >= 0.0 && self.base_rate >= 0.0) {
            return Err(Error::Config(
                "scale and base_rate must be non-negative".into(),
            ));
        }
        if !(self.segmented_share > 0.0 && self.segmented_share <= 1.0) {
            return Err(Error::Config("segmented_share must lie in (0, 1]".into()));
        }
        if self.platforms_per_zone == 0
            || self.platforms_per_zone > 99
            || self.sparse_platforms > 99
        {
            return Err(Error::Config(
                "platforms per zone must lie in 1..=99".into(),
            ));
        }
        Ok(())
    }

    /// Archetype of every zone, row-major.
    pub fn archetypes(&self) -> Vec<Archetype> {
        if !self.layout.is_empty() {
            return self.layout.clone();
        }
        let mut v: Vec<Archetype> = (0..self.zone_count())
            .map(|i| Archetype::ALL[i % 7])
            .collect();
        v.shuffle(&mut rng(self.seed, Stream::Layout, 0));
        v
    }

    /// Expected number of SCD records (all pricing kinds) before sampling.
    pub fn expected_records(&self) -> f64 {
        let kinds = self.week().day_kinds();
        let mut total = 0.0;
        for a in self.archetypes() {
            let n = if a == Archetype::Sparse {
                self.sparse_platforms
            } else {
                self.platforms_per_zone
            };
            let t = self.templates.get(a);
            for kind in kinds {
                let day = if kind == crate::ingest::DayKind::Weekend {
                    &t.weekend
                } else {
                    &t.weekday
                };
                for h in 0..HOURS {
                    let b = day.intensity(Direction::Boarding, h);
                    let al = day.intensity(Direction::Alighting, h);
                    total += n as f64 * (b + al) / self.segmented_share;
                }
            }
        }
        total * self.base_rate * self.scale
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Layout = 1,
    Zone = 2,
    Pois = 3,
    Flows = 4,
    Corrupt = 5,
}

/// Independent ChaCha stream per (seed, purpose, zone): parallel generation
/// never changes the output.
fn rng(seed: u64, purpose: Stream, zone: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = purpose as u8;
    let mut r = ChaCha8Rng::from_seed(key);
    r.set_stream(zone as u64);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneTruth {
    pub taz_id: u32,
    pub archetype: Archetype,
    pub label: TazClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformTruth {
    pub platform_id: u32,
    pub taz_id: u32,
    pub archetype: Archetype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub zones: Vec<ZoneTruth>,
    pub platforms: Vec<PlatformTruth>,
}

#[derive(Debug, Clone)]
pub struct City {
    pub spec: CitySpec,
    pub zones: Vec<TazZone>,
    pub platforms: PlatformTable,
    pub pois: Vec<Poi>,
    /// Every swipe, sorted by time; one-ticket swipes included.
    pub records: Vec<ScdRecord>,
    /// Segmented swipes per platform/day/hour as drawn.
    pub tally: FlowCube,
    pub truth: GroundTruth,
}

struct ZoneDraw {
    zone: TazZone,
    platforms: Vec<Platform>,
    truth: Vec<PlatformTruth>,
    pois: Vec<(GeoPoint, PoiCategory)>,
    records: Vec<ScdRecord>,
    /// (platform_id, day, hour, direction, count) for segmented swipes.
    cells: Vec<(u32, usize, usize, Direction, u64)>,
}

fn poisson(r: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda > 0.0 {
        Poisson::new(lambda)
            .expect("finite positive rate")
            .sample(r) as u64
    } else {
        0
    }
}

fn card_type(r: &mut ChaCha8Rng) -> CardType {
    match r.random_range(0..20) {
        0..=15 => CardType::Ordinary,
        16..=18 => CardType::Student,
        _ => CardType::Staff,
    }
}

fn zone_geometry(spec: &CitySpec, row: u32, col: u32) -> (GeoPoint, Vec<GeoPoint>) {
    let s = spec.zone_size_m;
    let corner = |i: u32, j: u32| offset_m(spec.origin, j as f64 * s, i as f64 * s);
    let ring = vec![
        corner(row, col),
        corner(row, col + 1),
        corner(row + 1, col + 1),
        corner(row + 1, col),
        corner(row, col),
    ];
    let centre = offset_m(corner(row, col), s / 2.0, s / 2.0);
    (centre, ring)
}

fn draw_zone(spec: &CitySpec, idx: usize, archetype: Archetype) -> ZoneDraw {
    let taz_id = idx as u32 + 1;
    let (row, col) = (idx as u32 / spec.cols, idx as u32 % spec.cols);
    let (centre, ring) = zone_geometry(spec, row, col);
    let area_km2 = spec.zone_size_m * spec.zone_size_m / 1e6;
    let template = spec.templates.get(archetype);

    let mut zr = rng(spec.seed, Stream::Zone, taz_id);
    let mut landuse = std::collections::BTreeMap::new();
    for class in LanduseClass::ALL {
        let share = if archetype.landuse() == Some(class) {
            zr.random_range(0.55..0.75)
        } else {
            zr.random_range(0.0..0.08)
        };
        landuse.insert(class, (share * area_km2 * 1e4).round() / 1e4);
    }
    let population =
        (archetype.population_density() * area_km2 * zr.random_range(0.8..1.2)).round() as u64;

    let n = if archetype == Archetype::Sparse {
        spec.sparse_platforms
    } else {
        spec.platforms_per_zone
    };
    let mut platforms = Vec::new();
    let mut truth = Vec::new();
    let mut jitter = Vec::new();
    for k in 0..n {
        let (east, north) = if n == 1 {
            (0.0, 0.0)
        } else {
            let angle = std::f64::consts::TAU * k as f64 / n as f64 + std::f64::consts::FRAC_PI_4;
            let r = spec.platform_spread_m * std::f64::consts::SQRT_2;
            (r * angle.cos(), r * angle.sin())
        };
        let j = spec.platform_jitter_m;
        let (dx, dy) = if j > 0.0 {
            (zr.random_range(-j..=j), zr.random_range(-j..=j))
        } else {
            (0.0, 0.0)
        };
        let platform_id = taz_id * 100 + k + 1;
        let stops = (0..zr.random_range(1..=2u32))
            .map(|s| format!("S{platform_id}-{s}"))
            .collect();
        platforms.push(Platform {
            platform_id,
            position: offset_m(centre, east + dx, north + dy),
            stop_ids: stops,
        });
        truth.push(PlatformTruth {
            platform_id,
            taz_id,
            archetype,
        });
        jitter.push(zr.random_range(0.8..1.25));
    }

    let mut pr = rng(spec.seed, Stream::Pois, taz_id);
    let mut pois = Vec::new();
    let sw = ring[0];
    for cat in PoiCategory::ALL {
        for _ in 0..poisson(&mut pr, template.poi_density[cat.index()] * area_km2) {
            let p = offset_m(
                sw,
                pr.random_range(0.0..spec.zone_size_m),
                pr.random_range(0.0..spec.zone_size_m),
            );
            pois.push((p, cat));
        }
    }

    let mut fr = rng(spec.seed, Stream::Flows, taz_id);
    let week = spec.week();
    let days = week.days();
    let kinds = week.day_kinds();
    let one_ticket = (1.0 - spec.segmented_share) / spec.segmented_share;
    let mut records = Vec::new();
    let mut cells = Vec::new();
    let mut seq = 0u64;
    for (p, jit) in platforms.iter().zip(&jitter) {
        for d in 0..DAYS {
            let day = if kinds[d] == crate::ingest::DayKind::Weekend {
                &template.weekend
            } else {
                &template.weekday
            };
            for h in 0..HOURS {
                for dir in [Direction::Boarding, Direction::Alighting] {
                    let rate = spec.base_rate * spec.scale * jit;
                    let seg = poisson(&mut fr, rate * day.intensity(dir, h));
                    // One-ticket lines log boardings only; size them against both directions.
                    let extra = if dir == Direction::Boarding {
                        let both = day.intensity(Direction::Boarding, h)
                            + day.intensity(Direction::Alighting, h);
                        poisson(&mut fr, rate * both * one_ticket)
                    } else {
                        0
                    };
                    if seg > 0 {
                        cells.push((p.platform_id, d, h, dir, seg));
                    }
                    for i in 0..seg + extra {
                        let pricing = if i < seg {
                            Pricing::Segmented
                        } else {
                            Pricing::OneTicket
                        };
                        let stop = &p.stop_ids[fr.random_range(0..p.stop_ids.len())];
                        let minute = fr.random_range(0..60u32);
                        seq += 1;
                        records.push(ScdRecord {
                            card_id: format!("C{taz_id:03}{:06}", fr.random_range(0..1_000_000u32)),
                            timestamp: days[d]
                                .and_hms_opt(h as u32, minute, 0)
                                .expect("valid time"),
                            line_id: match pricing {
                                Pricing::Segmented => {
                                    format!("L{}", (p.platform_id as u64 + seq % 3) % 60)
                                }
                                Pricing::OneTicket => format!("F{}", taz_id % 20),
                            },
                            stop_id: stop.clone(),
                            direction: dir,
                            card_type: card_type(&mut fr),
                            txn_seq: fr.random_range(1..=400),
                            pricing,
                        });
                    }
                }
            }
        }
    }

    ZoneDraw {
        zone: TazZone {
            taz_id,
            polygons: vec![vec![ring]],
            area_km2,
            population: Some(population),
            landuse,
        },
        platforms,
        truth,
        pois,
        records,
        cells,
    }
}

/// Build the whole city. Deterministic per `spec.seed` whatever the thread count.
pub fn generate(spec: &CitySpec) -> Result<City> {
    spec.validate()?;
    let archetypes = spec.archetypes();
    let draws: Vec<ZoneDraw> = archetypes
        .par_iter()
        .enumerate()
        .map(|(i, a)| draw_zone(spec, i, *a))
        .collect();

    let mut zones = Vec::with_capacity(draws.len());
    let mut platforms = Vec::new();
    let mut truth_platforms = Vec::new();
    let mut pois = Vec::new();
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for d in draws {
        zones.push(d.zone);
        platforms.extend(d.platforms);
        truth_platforms.extend(d.truth);
        pois.extend(d.pois);
        records.extend(d.records);
        cells.extend(d.cells);
    }
    let pois = pois
        .into_iter()
        .enumerate()
        .map(|(i, (position, category))| Poi {
            poi_id: format!("P{:06}", i + 1),
            position,
            category,
        })
        .collect();
    records.sort_by_key(|r| r.timestamp);

    let platforms = PlatformTable::new(platforms)?;
    let mut tally = FlowCube::zeros(platforms.ids(), &spec.week());
    for (pid, d, h, dir, n) in cells {
        let p = platforms.index_of(pid).expect("generated platform");
        tally.add(p, d, h, dir, n);
    }
    let truth = GroundTruth {
        seed: spec.seed,
        zones: zones
            .iter()
            .zip(&archetypes)
            .map(|(z, a)| ZoneTruth {
                taz_id: z.taz_id,
                archetype: *a,
                label: a.truth(),
            })
            .collect(),
        platforms: truth_platforms,
    };
    Ok(City {
        spec: spec.clone(),
        zones,
        platforms,
        pois,
        records,
        tally,
        truth,
    })
}

/// Write swipes as SCD CSV with `corrupt_lines` malformed lines slipped in at
/// seeded positions.
pub fn write_scd<W: Write>(
    records: &[ScdRecord],
    corrupt_lines: usize,
    seed: u64,
    writer: W,
) -> Result<()> {
    let mut r = rng(seed, Stream::Corrupt, 0);
    let mut at: Vec<usize> = (0..corrupt_lines)
        .map(|_| r.random_range(0..=records.len()))
        .collect();
    at.sort_unstable();
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record(ScdSchema::default().header())?;
    let mut next = at.iter().peekable();
    let mut corrupt = 0usize;
    let mut write_corrupt = |w: &mut csv::Writer<W>| -> Result<()> {
        let base = [
            "C000000",
            "2008-04-08 09:30",
            "L1",
            "S0-0",
            "B",
            "ordinary",
            "1",
            "seg",
        ];
        let mut row: Vec<&str> = base.to_vec();
        match corrupt % 3 {
            0 => row[1] = "2008-13-45 99:99",
            1 => row[4] = "X",
            _ => row.truncate(5),
        }
        corrupt += 1;
        w.write_record(&row)?;
        Ok(())
    };
    for (i, rec) in records.iter().enumerate() {
        while next.peek().is_some_and(|&&p| p == i) {
            next.next();
            write_corrupt(&mut w)?;
        }
        w.write_record(rec.to_csv_fields())?;
    }
    while next.next().is_some() {
        write_corrupt(&mut w)?;
    }
    w.flush().map_err(|e| Error::io("<scd csv>", e))?;
    Ok(())
}

/// Paths of the files written by [`write_city`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityFiles {
    pub scd: PathBuf,
    pub platforms: PathBuf,
    pub pois: PathBuf,
    pub taz: PathBuf,
    pub truth: PathBuf,
    pub tally: PathBuf,
    pub spec: PathBuf,
}

impl CityFiles {
    pub fn in_dir(dir: &Path) -> Self {
        CityFiles {
            scd: dir.join("scd.csv"),
            platforms: dir.join("platforms.csv"),
            pois: dir.join("pois.csv"),
            taz: dir.join("taz.geojson"),
            truth: dir.join("truth.json"),
            tally: dir.join("tally.csv"),
            spec: dir.join("city.toml"),
        }
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_city(city: &City, dir: &Path) -> Result<CityFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CityFiles::in_dir(dir);
    write_scd(
        &city.records,
        city.spec.corrupt_lines,
        city.spec.seed,
        create(&files.scd)?,
    )?;
    city.platforms.write_csv(create(&files.platforms)?)?;
    write_pois(&city.pois, create(&files.pois)?)?;
    city.tally.write_csv(create(&files.tally)?)?;
    let write =
        |path: &Path, text: String| std::fs::write(path, text).map_err(|e| Error::io(path, e));
    write(&files.taz, zones_to_geojson(&city.zones))?;
    write(&files.truth, serde_json::to_string_pretty(&city.truth)?)?;
    write(&files.spec, city.spec.to_toml())?;
    Ok(files)
}

/// Reference radius counts by exhaustive haversine scan.
pub fn oracle_radius_counts(
    pois: &[Poi],
    centers: &[GeoPoint],
    radius_m: f64,
) -> Vec<CategoryCounts> {
    centers
        .iter()
        .map(|c| {
            let mut counts = [0u32; NUM_CATEGORIES];
            for p in pois {
                if haversine_m(*c, p.position) <= radius_m {
                    counts[p.category.index()] += 1;
                }
            }
            counts
        })
        .collect()
}

/// Render a timestamp the way the SCD writer does.
pub fn format_timestamp(ts: chrono::NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;
    use crate::ingest::{aggregate_flows, filter_segmented, parse_scd};
    use crate::poi::PoiGrid;

    fn small(seed: u64) -> CitySpec {
        CitySpec {
            seed,
            rows: 2,
            cols: 4,
            layout: vec![
                Archetype::MatureResidential,
                Archetype::Developing,
                Archetype::Scenic,
                Archetype::Commercial,
                Archetype::Public,
                Archetype::NewResidential,
                Archetype::Sparse,
                Archetype::MatureResidential,
            ],
            base_rate: 1.0,
            ..CitySpec::default()
        }
    }

    fn scd_bytes(city: &City) -> Vec<u8> {
        let mut buf = Vec::new();
        write_scd(
            &city.records,
            city.spec.corrupt_lines,
            city.spec.seed,
            &mut buf,
        )
        .unwrap();
        buf
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(scd_bytes(&a), scd_bytes(&b));
        assert_eq!(a.pois, b.pois);
        assert_eq!(zones_to_geojson(&a.zones), zones_to_geojson(&b.zones));
        let c = generate(&small(4)).unwrap();
        assert_ne!(scd_bytes(&a), scd_bytes(&c));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let spec = small(5);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| generate(&spec)).unwrap();
        let b = four.install(|| generate(&spec)).unwrap();
        assert_eq!(scd_bytes(&a), scd_bytes(&b));
        assert_eq!(a.tally, b.tally);
    }

    #[test]
    fn zero_scale_gives_empty_scd() {
        let city = generate(&CitySpec {
            scale: 0.0,
            ..small(1)
        })
        .unwrap();
        assert!(city.records.is_empty());
        assert_eq!(city.tally.total_inflow() + city.tally.total_outflow(), 0);
        let text = String::from_utf8(scd_bytes(&city)).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn zero_area_zone_is_rejected() {
        let spec = CitySpec {
            zone_size_m: 0.0,
            ..small(1)
        };
        assert!(matches!(generate(&spec), Err(Error::ZeroAreaZone(_))));
    }

    #[test]
    fn tally_matches_ingested_cube() {
        let city = generate(&CitySpec {
            corrupt_lines: 4,
            ..small(9)
        })
        .unwrap();
        let week = city.spec.week();
        let out = parse_scd(scd_bytes(&city).as_slice(), &ScdSchema::default(), &week).unwrap();
        assert_eq!(out.rejects.len(), 4);
        let (seg, _) = filter_segmented(out.records);
        let (cube, report) = aggregate_flows(&seg, &city.platforms, &week).unwrap();
        assert_eq!(report.orphans, 0);
        assert_eq!(cube, city.tally);
    }

    #[test]
    fn segmented_share_near_target() {
        let city = generate(&small(2)).unwrap();
        let seg = city
            .records
            .iter()
            .filter(|r| r.pricing == Pricing::Segmented)
            .count() as f64;
        let share = seg / city.records.len() as f64;
        assert!((share - 0.483).abs() < 0.02, "{share}");
    }

    #[test]
    fn poisson_cell_means_within_three_sigma() {
        // One mature-residential platform; weekday 07:00 boarding, 100 seeds.
        let base = CitySpec {
            rows: 1,
            cols: 1,
            layout: vec![Archetype::MatureResidential],
            platforms_per_zone: 1,
            platform_jitter_m: 0.0,
            ..CitySpec::default()
        };
        let mut sum = 0.0;
        let mut lambda = 0.0;
        let seeds = 100;
        for seed in 0..seeds {
            let city = generate(&CitySpec {
                seed,
                ..base.clone()
            })
            .unwrap();
            // Recover the platform's volume jitter from its own stream.
            let mut zr = rng(seed, Stream::Zone, 1);
            for _ in LanduseClass::ALL {
                zr.random_range(0.0..1.0);
            }
            zr.random_range(0.8..1.2);
            zr.random_range(1..=2u32);
            let jit: f64 = zr.random_range(0.8..1.25);
            lambda += base.base_rate
                * jit
                * base
                    .templates
                    .mature_residential
                    .weekday
                    .intensity(Direction::Boarding, 7);
            sum += city.tally.inflow(0, 0, 7) as f64;
        }
        let n = seeds as f64;
        let (mean, expect) = (sum / n, lambda / n);
        assert!(
            (mean - expect).abs() < 3.0 * (expect / n).sqrt(),
            "{mean} vs {expect}"
        );
    }

    #[test]
    fn templates_meet_rule_preconditions() {
        let t = Templates::default();
        let window: Vec<usize> = (5..=23).collect();
        let ratio = |c: &Curve, hours: &[usize]| {
            let m = |hs: &[usize]| hs.iter().map(|&h| c.level(h)).sum::<f64>() / hs.len() as f64;
            m(hours) / m(&window)
        };
        let res = &t.mature_residential.weekday;
        assert!(ratio(&res.boarding, &[7, 8]) >= 1.5);
        assert!(ratio(&res.alighting, &[17, 18, 19]) > 2.0);
        let new = &t.new_residential.weekday;
        assert!(ratio(&new.boarding, &[7, 8]) >= 1.5);
        assert!(ratio(&new.alighting, &[17, 18, 19]) >= 1.5);
        assert!(ratio(&t.commercial.weekday.alighting, &[17, 18, 19]) >= 1.5);
        let daily = |d: &DayTemplate| {
            (5..=23)
                .map(|h| d.boarding.level(h) + d.alighting.level(h))
                .sum::<f64>()
                * d.volume
        };
        assert!(daily(&t.scenic.weekend) / daily(&t.scenic.weekday) >= 1.1);
        for a in [
            &t.mature_residential,
            &t.new_residential,
            &t.commercial,
            &t.public,
            &t.developing,
        ] {
            assert!(daily(&a.weekend) / daily(&a.weekday) < 1.1);
        }
    }

    #[test]
    fn default_city_is_desk_scale() {
        let spec = CitySpec::default();
        let arch = spec.archetypes();
        assert_eq!(arch.len(), 56);
        for a in Archetype::ALL {
            assert_eq!(arch.iter().filter(|&&x| x == a).count(), 8);
        }
        let expected = spec.expected_records();
        assert!((400_000.0..=600_000.0).contains(&expected), "{expected}");
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = small(11);
        assert_eq!(CitySpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let partial = CitySpec::from_toml("seed = 3\nscale = 0.5\n").unwrap();
        assert_eq!((partial.seed, partial.scale, partial.rows), (3, 0.5, 7));
    }

    #[test]
    fn oracle_counts_boundary_offsets() {
        let c = GeoPoint::new(116.4, 39.9);
        assert_eq!(
            oracle_radius_counts(&[], &[c], 500.0),
            vec![[0; NUM_CATEGORIES]]
        );
        let poi = |m: f64| Poi {
            poi_id: "P1".into(),
            position: destination(c, 37.0, m),
            category: PoiCategory::Finance,
        };
        assert_eq!(
            oracle_radius_counts(&[poi(499.0)], &[c], 500.0)[0]
                .iter()
                .sum::<u32>(),
            1
        );
        assert_eq!(
            oracle_radius_counts(&[poi(501.0)], &[c], 500.0)[0]
                .iter()
                .sum::<u32>(),
            0
        );
    }

    #[test]
    fn oracle_matches_grid_on_generated_city() {
        let city = generate(&small(6)).unwrap();
        let centers: Vec<GeoPoint> = city
            .platforms
            .platforms()
            .iter()
            .map(|p| p.position)
            .collect();
        let grid = PoiGrid::build(&city.pois, 500.0);
        let oracle = oracle_radius_counts(&city.pois, &centers, 500.0);
        for (c, o) in centers.iter().zip(oracle) {
            assert_eq!(grid.count_in_radius(*c, 500.0), o);
        }
    }

    #[test]
    fn platforms_fall_in_their_zone() {
        let city = generate(&small(8)).unwrap();
        for (p, t) in city.platforms.platforms().iter().zip(&city.truth.platforms) {
            assert_eq!(
                crate::taz::point_in_taz(p.position, &city.zones),
                Some(t.taz_id)
            );
        }
    }
}
