//! Smart-card record parsing and aggregation into per-platform hourly flows.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub const DAYS: usize = 7;
pub const HOURS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Boarding,
    Alighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CardType {
    Ordinary,
    Student,
    Staff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pricing {
    OneTicket,
    Segmented,
}

impl Direction {
    pub fn code(self) -> &'static str {
        match self {
            Direction::Boarding => "B",
            Direction::Alighting => "A",
        }
    }
}

impl CardType {
    pub fn code(self) -> &'static str {
        match self {
            CardType::Ordinary => "ordinary",
            CardType::Student => "student",
            CardType::Staff => "staff",
        }
    }
}

impl Pricing {
    pub fn code(self) -> &'static str {
        match self {
            Pricing::OneTicket => "one",
            Pricing::Segmented => "seg",
        }
    }
}

/// One card swipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScdRecord {
    pub card_id: String,
    pub timestamp: NaiveDateTime,
    pub line_id: String,
    pub stop_id: String,
    pub direction: Direction,
    pub card_type: CardType,
    pub txn_seq: u64,
    pub pricing: Pricing,
}

impl ScdRecord {
    /// Serialize in the default column order.
    pub fn to_csv_fields(&self) -> [String; 8] {
        [
            self.card_id.clone(),
            self.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            self.line_id.clone(),
            self.stop_id.clone(),
            self.direction.code().to_string(),
            self.card_type.code().to_string(),
            self.txn_seq.to_string(),
            self.pricing.code().to_string(),
        ]
    }
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";
const TIMESTAMP_FORMATS: [&str; 4] = [
    TIMESTAMP_FORMAT,
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayKind {
    Weekday,
    Weekend,
}

/// The seven consecutive calendar days under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWeek {
    pub start: NaiveDate,
}

impl Default for StudyWeek {
    fn default() -> Self {
        StudyWeek {
            start: NaiveDate::from_ymd_opt(2008, 4, 7).expect("valid date"),
        }
    }
}

impl StudyWeek {
    pub fn days(&self) -> [NaiveDate; DAYS] {
        std::array::from_fn(|d| self.start + Duration::days(d as i64))
    }

    pub fn day_kinds(&self) -> [DayKind; DAYS] {
        self.days().map(|d| match d.weekday() {
            Weekday::Sat | Weekday::Sun => DayKind::Weekend,
            _ => DayKind::Weekday,
        })
    }

    pub fn day_index(&self, ts: NaiveDateTime) -> Option<usize> {
        let offset = (ts.date() - self.start).num_days();
        (0..DAYS as i64)
            .contains(&offset)
            .then_some(offset as usize)
    }
}

/// Maps each logical SCD field to the header name carrying it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScdSchema {
    pub card_id: String,
    pub timestamp: String,
    pub line_id: String,
    pub stop_id: String,
    pub direction: String,
    pub card_type: String,
    pub txn_seq: String,
    pub pricing: String,
}

impl Default for ScdSchema {
    fn default() -> Self {
        ScdSchema {
            card_id: "card_id".into(),
            timestamp: "timestamp".into(),
            line_id: "line_id".into(),
            stop_id: "stop_id".into(),
            direction: "direction".into(),
            card_type: "card_type".into(),
            txn_seq: "txn_seq".into(),
            pricing: "pricing".into(),
        }
    }
}

impl ScdSchema {
    fn columns(&self) -> [(&'static str, &str); 8] {
        [
            ("card_id", &self.card_id),
            ("timestamp", &self.timestamp),
            ("line_id", &self.line_id),
            ("stop_id", &self.stop_id),
            ("direction", &self.direction),
            ("card_type", &self.card_type),
            ("txn_seq", &self.txn_seq),
            ("pricing", &self.pricing),
        ]
    }

    pub fn header(&self) -> [&str; 8] {
        self.columns().map(|(_, name)| name)
    }

    fn resolve(&self, header: &csv::StringRecord) -> Result<[usize; 8]> {
        let mut idx = [0usize; 8];
        for (slot, (field, name)) in idx.iter_mut().zip(self.columns()) {
            *slot = header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| {
                    Error::Config(format!("SCD header lacks column `{name}` (field {field})"))
                })?;
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    MalformedLine,
    BadTimestamp,
    OutsideStudyWeek,
    BadDirection,
    BadCardType,
    BadTxnSeq,
    BadPricing,
    IllegalAlightOnOneTicket,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number, header included.
    pub line: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<ScdRecord>,
    pub rejects: Vec<Reject>,
}

impl ParseOutcome {
    pub fn reject_counts(&self) -> BTreeMap<RejectReason, u64> {
        let mut counts = BTreeMap::new();
        for r in &self.rejects {
            *counts.entry(r.reason).or_insert(0) += 1;
        }
        counts
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

fn parse_line(
    row: &csv::StringRecord,
    idx: &[usize; 8],
    week: &StudyWeek,
) -> std::result::Result<ScdRecord, RejectReason> {
    let field = |i: usize| {
        row.get(idx[i])
            .map(str::trim)
            .ok_or(RejectReason::MalformedLine)
    };
    let timestamp = parse_timestamp(field(1)?).ok_or(RejectReason::BadTimestamp)?;
    if week.day_index(timestamp).is_none() {
        return Err(RejectReason::OutsideStudyWeek);
    }
    let direction = match field(4)? {
        "B" | "b" => Direction::Boarding,
        "A" | "a" => Direction::Alighting,
        _ => return Err(RejectReason::BadDirection),
    };
    let card_type = match field(5)?.to_ascii_lowercase().as_str() {
        "ordinary" => CardType::Ordinary,
        "student" => CardType::Student,
        "staff" => CardType::Staff,
        _ => return Err(RejectReason::BadCardType),
    };
    let txn_seq = field(6)?.parse().map_err(|_| RejectReason::BadTxnSeq)?;
    let pricing = match field(7)?.to_ascii_lowercase().as_str() {
        "seg" => Pricing::Segmented,
        "one" => Pricing::OneTicket,
        _ => return Err(RejectReason::BadPricing),
    };
    if pricing == Pricing::OneTicket && direction == Direction::Alighting {
        return Err(RejectReason::IllegalAlightOnOneTicket);
    }
    Ok(ScdRecord {
        card_id: field(0)?.to_string(),
        timestamp,
        line_id: field(2)?.to_string(),
        stop_id: field(3)?.to_string(),
        direction,
        card_type,
        txn_seq,
        pricing,
    })
}

/// Parse a headed SCD CSV stream. Bad lines become [`Reject`]s; only a header
/// that cannot satisfy `schema` is fatal.
pub fn parse_scd<R: Read>(reader: R, schema: &ScdSchema, week: &StudyWeek) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let idx = schema.resolve(rdr.headers()?)?;
    let width = rdr.headers()?.len();

    let mut out = ParseOutcome::default();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        line += 1;
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) if row.len() != width => out.rejects.push(Reject {
                line,
                reason: RejectReason::MalformedLine,
            }),
            Ok(true) => match parse_line(&row, &idx, week) {
                Ok(rec) => out.records.push(rec),
                Err(reason) => out.rejects.push(Reject { line, reason }),
            },
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => out.rejects.push(Reject {
                line,
                reason: RejectReason::MalformedLine,
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: u64,
    pub dropped: u64,
}

/// Keep only segmented-pricing records (the lines that log both ends of a trip).
pub fn filter_segmented(records: Vec<ScdRecord>) -> (Vec<ScdRecord>, FilterReport) {
    let total = records.len() as u64;
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| r.pricing == Pricing::Segmented)
        .collect();
    let report = FilterReport {
        retained: kept.len() as u64,
        dropped: total - kept.len() as u64,
    };
    if kept.is_empty() && total > 0 {
        log::warn!("no segmented-pricing records among {total} input records");
    }
    (kept, report)
}

/// A physical platform served by one or more line-level stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub platform_id: u32,
    pub position: GeoPoint,
    pub stop_ids: Vec<String>,
}

/// Platforms ordered by id, with the stop → platform join.
#[derive(Debug, Clone, Default)]
pub struct PlatformTable {
    platforms: Vec<Platform>,
    stop_index: HashMap<String, usize>,
}

#[derive(Debug, Deserialize)]
struct PlatformRow {
    platform_id: u32,
    lon: f64,
    lat: f64,
    stop_id: String,
}

impl PlatformTable {
    pub fn new(mut platforms: Vec<Platform>) -> Result<Self> {
        platforms.sort_by_key(|p| p.platform_id);
        if let Some(w) = platforms
            .windows(2)
            .find(|w| w[0].platform_id == w[1].platform_id)
        {
            return Err(Error::Data(format!(
                "duplicate platform id {}",
                w[0].platform_id
            )));
        }
        let mut stop_index = HashMap::new();
        for (i, p) in platforms.iter().enumerate() {
            for s in &p.stop_ids {
                if let Some(prev) = stop_index.insert(s.clone(), i) {
                    if prev != i {
                        return Err(Error::Data(format!(
                            "stop {s} maps to platforms {} and {}",
                            platforms[prev].platform_id, p.platform_id
                        )));
                    }
                }
            }
        }
        Ok(PlatformTable {
            platforms,
            stop_index,
        })
    }

    /// Load the one-row-per-stop platform CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut by_id: BTreeMap<u32, Platform> = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: PlatformRow = row?;
            if !(row.lon.is_finite() && row.lat.is_finite()) {
                return Err(Error::Data(format!(
                    "platform {} has a non-finite position",
                    row.platform_id
                )));
            }
            let position = GeoPoint::new(row.lon, row.lat);
            let entry = by_id.entry(row.platform_id).or_insert_with(|| Platform {
                platform_id: row.platform_id,
                position,
                stop_ids: Vec::new(),
            });
            if entry.position != position {
                return Err(Error::Data(format!(
                    "platform {} listed with two different positions",
                    row.platform_id
                )));
            }
            entry.stop_ids.push(row.stop_id);
        }
        Self::new(by_id.into_values().collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["platform_id", "lon", "lat", "stop_id"])?;
        for p in &self.platforms {
            for s in &p.stop_ids {
                w.write_record([
                    p.platform_id.to_string(),
                    p.position.lon.to_string(),
                    p.position.lat.to_string(),
                    s.clone(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<platform csv>", e))?;
        Ok(())
    }

    pub fn platforms(&self) -> &[Platform] {
        &self.platforms
    }

    pub fn len(&self) -> usize {
        self.platforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.platforms.is_empty()
    }

    /// Row index (not id) of the platform serving `stop_id`.
    pub fn resolve_stop(&self, stop_id: &str) -> Option<usize> {
        self.stop_index.get(stop_id).copied()
    }

    pub fn index_of(&self, platform_id: u32) -> Option<usize> {
        self.platforms
            .binary_search_by_key(&platform_id, |p| p.platform_id)
            .ok()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.platforms.iter().map(|p| p.platform_id).collect()
    }
}

/// Boarding (inflow) and alighting (outflow) counts, platform × day × hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCube {
    pub platform_ids: Vec<u32>,
    pub days: [NaiveDate; DAYS],
    pub day_kinds: [DayKind; DAYS],
    inflow: Vec<u64>,
    outflow: Vec<u64>,
}

impl FlowCube {
    pub fn zeros(platform_ids: Vec<u32>, week: &StudyWeek) -> Self {
        let n = platform_ids.len() * DAYS * HOURS;
        FlowCube {
            platform_ids,
            days: week.days(),
            day_kinds: week.day_kinds(),
            inflow: vec![0; n],
            outflow: vec![0; n],
        }
    }

    #[inline]
    fn cell(&self, p: usize, d: usize, h: usize) -> usize {
        debug_assert!(p < self.platform_ids.len() && d < DAYS && h < HOURS);
        (p * DAYS + d) * HOURS + h
    }

    pub fn num_platforms(&self) -> usize {
        self.platform_ids.len()
    }

    pub fn inflow(&self, p: usize, d: usize, h: usize) -> u64 {
        self.inflow[self.cell(p, d, h)]
    }

    pub fn outflow(&self, p: usize, d: usize, h: usize) -> u64 {
        self.outflow[self.cell(p, d, h)]
    }

    pub fn add(&mut self, p: usize, d: usize, h: usize, direction: Direction, n: u64) {
        let c = self.cell(p, d, h);
        match direction {
            Direction::Boarding => self.inflow[c] += n,
            Direction::Alighting => self.outflow[c] += n,
        }
    }

    /// Cell-wise sum; both cubes must describe the same platforms and week.
    pub fn merge(&mut self, other: &FlowCube) {
        assert_eq!(
            self.platform_ids, other.platform_ids,
            "platform sets differ"
        );
        assert_eq!(self.days, other.days, "study weeks differ");
        for (a, b) in self.inflow.iter_mut().zip(&other.inflow) {
            *a += b;
        }
        for (a, b) in self.outflow.iter_mut().zip(&other.outflow) {
            *a += b;
        }
    }

    pub fn total_inflow(&self) -> u64 {
        self.inflow.iter().sum()
    }

    pub fn total_outflow(&self) -> u64 {
        self.outflow.iter().sum()
    }

    /// 24-hour inflow series of one platform-day.
    pub fn inflow_day(&self, p: usize, d: usize) -> &[u64] {
        let c = self.cell(p, d, 0);
        &self.inflow[c..c + HOURS]
    }

    pub fn outflow_day(&self, p: usize, d: usize) -> &[u64] {
        let c = self.cell(p, d, 0);
        &self.outflow[c..c + HOURS]
    }

    /// Total boardings plus alightings over the week at one platform.
    pub fn support(&self, p: usize) -> u64 {
        let c = self.cell(p, 0, 0);
        let span = c..c + DAYS * HOURS;
        self.inflow[span.clone()].iter().sum::<u64>() + self.outflow[span].iter().sum::<u64>()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "platform_id",
            "date",
            "day_kind",
            "hour",
            "inflow",
            "outflow",
        ])?;
        for (p, id) in self.platform_ids.iter().enumerate() {
            for d in 0..DAYS {
                let kind = match self.day_kinds[d] {
                    DayKind::Weekday => "weekday",
                    DayKind::Weekend => "weekend",
                };
                for h in 0..HOURS {
                    w.write_record([
                        id.to_string(),
                        self.days[d].to_string(),
                        kind.to_string(),
                        h.to_string(),
                        self.inflow(p, d, h).to_string(),
                        self.outflow(p, d, h).to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<flow csv>", e))?;
        Ok(())
    }

    /// Inverse of [`FlowCube::write_csv`]; the CSV must cover every cell.
    pub fn from_csv<R: Read>(reader: R, week: &StudyWeek) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            platform_id: u32,
            date: NaiveDate,
            hour: usize,
            inflow: u64,
            outflow: u64,
        }
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(reader).deserialize() {
            rows.push(r?);
        }
        let rows: Vec<Row> = rows;
        let mut ids: Vec<u32> = rows.iter().map(|r| r.platform_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if rows.len() != ids.len() * DAYS * HOURS {
            return Err(Error::Data(format!(
                "flow table has {} rows, expected {} for {} platforms",
                rows.len(),
                ids.len() * DAYS * HOURS,
                ids.len()
            )));
        }
        let mut cube = FlowCube::zeros(ids, week);
        for r in rows {
            let p = cube
                .platform_ids
                .binary_search(&r.platform_id)
                .expect("id collected above");
            let d = (r.date - week.start).num_days();
            if !(0..DAYS as i64).contains(&d) || r.hour >= HOURS {
                return Err(Error::Data(format!(
                    "flow row {} {} h{} outside the study week",
                    r.platform_id, r.date, r.hour
                )));
            }
            let c = cube.cell(p, d as usize, r.hour);
            cube.inflow[c] = r.inflow;
            cube.outflow[c] = r.outflow;
        }
        Ok(cube)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub boarding: u64,
    pub alighting: u64,
    /// Records whose stop has no platform mapping.
    pub orphans: u64,
    pub outside_week: u64,
}

/// Fold swipe records into a [`FlowCube`]. Lines through the same platform are
/// summed; unresolvable stops are counted, not fatal.
pub fn aggregate_flows(
    records: &[ScdRecord],
    platforms: &PlatformTable,
    week: &StudyWeek,
) -> Result<(FlowCube, AggregateReport)> {
    if platforms.is_empty() {
        return Err(Error::Config("platform table is empty".into()));
    }
    let ids = platforms.ids();
    let fold = |chunk: &[ScdRecord]| {
        let mut cube = FlowCube::zeros(ids.clone(), week);
        let mut report = AggregateReport::default();
        for r in chunk {
            let Some(p) = platforms.resolve_stop(&r.stop_id) else {
                report.orphans += 1;
                continue;
            };
            let Some(d) = week.day_index(r.timestamp) else {
                report.outside_week += 1;
                continue;
            };
            cube.add(p, d, r.timestamp.hour() as usize, r.direction, 1);
            match r.direction {
                Direction::Boarding => report.boarding += 1,
                Direction::Alighting => report.alighting += 1,
            }
        }
        (cube, report)
    };
    let (cube, report) = records.par_chunks(64 * 1024).map(fold).reduce(
        || {
            (
                FlowCube::zeros(ids.clone(), week),
                AggregateReport::default(),
            )
        },
        |(mut a, ra), (b, rb)| {
            a.merge(&b);
            (
                a,
                AggregateReport {
                    boarding: ra.boarding + rb.boarding,
                    alighting: ra.alighting + rb.alighting,
                    orphans: ra.orphans + rb.orphans,
                    outside_week: ra.outside_week + rb.outside_week,
                },
            )
        },
    );
    if report.orphans > 0 {
        log::warn!(
            "{} records at stops without a platform mapping",
            report.orphans
        );
    }
    Ok((cube, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "card_id,timestamp,line_id,stop_id,direction,card_type,txn_seq,pricing\n";

    fn parse(body: &str) -> ParseOutcome {
        let text = format!("{HEADER}{body}");
        parse_scd(
            text.as_bytes(),
            &ScdSchema::default(),
            &StudyWeek::default(),
        )
        .unwrap()
    }

    fn rec(stop: &str, day: u32, hour: u32, direction: Direction) -> ScdRecord {
        ScdRecord {
            card_id: "C1".into(),
            timestamp: NaiveDate::from_ymd_opt(2008, 4, 7 + day)
                .unwrap()
                .and_hms_opt(hour, 30, 0)
                .unwrap(),
            line_id: "L1".into(),
            stop_id: stop.into(),
            direction,
            card_type: CardType::Ordinary,
            txn_seq: 1,
            pricing: Pricing::Segmented,
        }
    }

    fn table() -> PlatformTable {
        PlatformTable::new(vec![
            Platform {
                platform_id: 1,
                position: GeoPoint::new(116.0, 39.0),
                stop_ids: vec!["S1".into(), "S2".into()],
            },
            Platform {
                platform_id: 2,
                position: GeoPoint::new(116.1, 39.0),
                stop_ids: vec!["S3".into()],
            },
        ])
        .unwrap()
    }

    #[test]
    fn parses_example_line() {
        let out = parse("C001,2008-04-07 07:15,L300,S12,B,ordinary,41,seg\n");
        assert!(out.rejects.is_empty());
        let r = &out.records[0];
        assert_eq!(r.direction, Direction::Boarding);
        assert_eq!(r.pricing, Pricing::Segmented);
        assert_eq!(r.card_type, CardType::Ordinary);
        assert_eq!(r.txn_seq, 41);
        let week = StudyWeek::default();
        let d = week.day_index(r.timestamp).unwrap();
        assert_eq!(week.day_kinds()[d], DayKind::Weekday);
    }

    #[test]
    fn alighting_on_one_ticket_is_rejected() {
        let out = parse("C001,2008-04-07 07:15,L300,S12,A,ordinary,41,one\n");
        assert!(out.records.is_empty());
        assert_eq!(
            out.rejects[0].reason,
            RejectReason::IllegalAlightOnOneTicket
        );
        assert_eq!(out.rejects[0].line, 2);
    }

    #[test]
    fn bad_lines_are_counted_not_fatal() {
        let out = parse(
            "C1,garbage,L1,S1,B,ordinary,1,seg\n\
             C2,2008-04-07 07:15,L1,S1,B,ordinary\n\
             C3,2008-05-01 07:15,L1,S1,B,ordinary,1,seg\n\
             C4,2008-04-08 07:15,L1,S1,X,ordinary,1,seg\n\
             C5,2008-04-08T07:15:00,L1,S1,B,staff,2,seg\n",
        );
        assert_eq!(out.records.len(), 1);
        let counts = out.reject_counts();
        assert_eq!(counts[&RejectReason::BadTimestamp], 1);
        assert_eq!(counts[&RejectReason::MalformedLine], 1);
        assert_eq!(counts[&RejectReason::OutsideStudyWeek], 1);
        assert_eq!(counts[&RejectReason::BadDirection], 1);
    }

    #[test]
    fn missing_column_is_config_error() {
        let text = "card_id,timestamp,line_id,stop_id,direction,card_type,txn_seq\n";
        let err = parse_scd(
            text.as_bytes(),
            &ScdSchema::default(),
            &StudyWeek::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("pricing")));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn renamed_columns_via_schema() {
        let schema = ScdSchema {
            card_id: "CARD".into(),
            ..ScdSchema::default()
        };
        let text = "timestamp,CARD,line_id,stop_id,direction,card_type,txn_seq,pricing\n\
                    2008-04-09 10:00,K9,L1,S1,A,student,3,seg\n";
        let out = parse_scd(text.as_bytes(), &schema, &StudyWeek::default()).unwrap();
        assert_eq!(out.records[0].card_id, "K9");
        assert_eq!(out.records[0].card_type, CardType::Student);
    }

    #[test]
    fn filter_keeps_segmented_only() {
        let mut recs = Vec::new();
        for i in 0..10 {
            let mut r = rec("S1", 0, 8, Direction::Boarding);
            r.txn_seq = i;
            if i >= 6 {
                r.pricing = Pricing::OneTicket;
            }
            recs.push(r);
        }
        let expected: Vec<_> = recs[..6].to_vec();
        let (kept, report) = filter_segmented(recs);
        assert_eq!(kept, expected);
        assert_eq!(
            report,
            FilterReport {
                retained: 6,
                dropped: 4
            }
        );

        let all_one: Vec<_> = expected
            .into_iter()
            .map(|mut r| {
                r.pricing = Pricing::OneTicket;
                r
            })
            .collect();
        let (kept, report) = filter_segmented(all_one);
        assert!(kept.is_empty());
        assert_eq!(report.dropped, 6);
    }

    #[test]
    fn lines_through_one_platform_are_summed() {
        let mut recs = Vec::new();
        recs.extend((0..3).map(|_| rec("S1", 0, 8, Direction::Boarding)));
        recs.extend((0..4).map(|_| rec("S2", 0, 8, Direction::Boarding)));
        recs.push(rec("S3", 6, 23, Direction::Alighting));
        recs.push(rec("S99", 0, 8, Direction::Boarding));
        let week = StudyWeek::default();
        let (cube, report) = aggregate_flows(&recs, &table(), &week).unwrap();
        assert_eq!(cube.inflow(0, 0, 8), 7);
        assert_eq!(cube.outflow(1, 6, 23), 1);
        assert_eq!(report.orphans, 1);
        assert_eq!(cube.total_inflow(), report.boarding);
        assert_eq!(cube.total_outflow(), report.alighting);
        assert_eq!(cube.day_kinds[5], DayKind::Weekend);
        assert_eq!(cube.day_kinds[4], DayKind::Weekday);
    }

    #[test]
    fn empty_input_gives_zero_cube_of_full_shape() {
        let week = StudyWeek::default();
        let (cube, _) = aggregate_flows(&[], &table(), &week).unwrap();
        assert_eq!(cube.num_platforms(), 2);
        assert_eq!(cube.inflow.len(), 2 * DAYS * HOURS);
        assert_eq!(cube.total_inflow() + cube.total_outflow(), 0);
    }

    #[test]
    fn empty_platform_table_is_config_error() {
        let empty = PlatformTable::default();
        let err = aggregate_flows(&[], &empty, &StudyWeek::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stop_on_two_platforms_is_rejected() {
        let csv = "platform_id,lon,lat,stop_id\n1,116,39,S1\n2,117,39,S1\n";
        assert!(PlatformTable::from_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn flow_csv_round_trip() {
        let week = StudyWeek::default();
        let recs = vec![
            rec("S1", 2, 9, Direction::Boarding),
            rec("S3", 5, 13, Direction::Alighting),
        ];
        let (cube, _) = aggregate_flows(&recs, &table(), &week).unwrap();
        let mut buf = Vec::new();
        cube.write_csv(&mut buf).unwrap();
        let back = FlowCube::from_csv(buf.as_slice(), &week).unwrap();
        assert_eq!(back, cube);
    }
}
