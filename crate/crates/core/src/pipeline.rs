//! Stage orchestration. Every stage reads its inputs from the output directory
//! (or the configured input files) and writes its artifacts there, so a chain
//! of single-stage invocations produces exactly what a full run produces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::em::{fit, is_monotone, GmmModel};
use crate::error::{Error, Result};
use crate::features::{build_features, pearson_report, FeatureSet, PearsonReport};
use crate::ingest::{
    aggregate_flows, filter_segmented, parse_scd, AggregateReport, DayKind, FilterReport, FlowCube,
    PlatformTable, Reject,
};
use crate::labeler::{
    apply_rules, flow_signatures, label_report, read_landmarks, resolve_landmarks, FunctionLabel,
    LabelDecision, LabelSet,
};
use crate::metrics::adjusted_rand_index;
use crate::poi::{
    build_profiles, read_pois, service_area_km2, write_profiles_csv, zscore, PoiGrid, PoiProfile,
};
use crate::synth::GroundTruth;
use crate::taz::{
    accuracy_check, assign_platforms, label_zones, labeled_geojson, read_zones, summarize,
    write_summary_csv, AccuracyResult, SummaryRow, TazClass, TazLabel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Features,
    Cluster,
    Profile,
    Label,
    Aggregate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Cluster,
        Stage::Profile,
        Stage::Label,
        Stage::Aggregate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Profile => "profile",
            Stage::Label => "label",
            Stage::Aggregate => "aggregate",
            Stage::Report => "report",
        }
    }

    /// Artifacts the stage writes.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[FLOWS, "ingest.json"],
            Stage::Features => &[FEATURES, "features.json"],
            Stage::Cluster => &[MODEL, ASSIGNMENTS],
            Stage::Profile => &["poi_counts.csv", PROFILES, "profiles.csv"],
            Stage::Label => &[LABELS, "flow_profiles.csv"],
            Stage::Aggregate => &[
                "taz_labels.geojson",
                "taz_labels.csv",
                "taz_summary.csv",
                TAZ_SUMMARY,
                ACCURACY,
                RECOVERY,
            ],
            Stage::Report => &["report.md"],
        }
    }
}

const FLOWS: &str = "flows.csv";
const FEATURES: &str = "features.csv";
const MODEL: &str = "model.json";
const ASSIGNMENTS: &str = "assignments.csv";
const PROFILES: &str = "profiles.json";
const LABELS: &str = "labels.json";
const TAZ_SUMMARY: &str = "taz_summary.json";
const ACCURACY: &str = "accuracy.json";
const RECOVERY: &str = "recovery.json";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

/// Output directory with atomic writes and dependency-aware reads.
struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Workspace { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, producer: Stage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                stage: producer.name(),
                path: p,
            })
        }
    }

    fn open(&self, producer: Stage, name: &str) -> Result<BufReader<File>> {
        open(&self.require(producer, name)?)
    }

    fn read_json<T: DeserializeOwned>(&self, producer: Stage, name: &str) -> Result<T> {
        Ok(serde_json::from_reader(self.open(producer, name)?)?)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let tmp = self.path(&format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        let dst = self.path(name);
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Drop artifacts of `stage` and everything after it, so nothing stale
    /// survives a failed or partial re-run.
    fn invalidate_from(&self, stage: Stage) -> Result<()> {
        let names = Stage::ALL
            .iter()
            .filter(|s| **s >= stage)
            .flat_map(|s| s.outputs().iter().copied())
            .chain([MANIFEST]);
        for name in names {
            let p = self.path(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records_parsed: u64,
    pub rejects: u64,
    pub reject_counts: BTreeMap<String, u64>,
    /// First rejected lines, for diagnosis.
    pub sample_rejects: Vec<Reject>,
    pub filter: FilterReport,
    pub aggregate: AggregateReport,
    pub platforms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub hour_window: [u8; 2],
    pub cells_before_averaging: usize,
    pub dim: usize,
    pub platforms: usize,
    pub excluded: Vec<u32>,
    pub epsilon: f64,
    pub log_transform: bool,
    pub pearson: PearsonReport,
}

/// Fitted mixture plus the components that kept at least one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub model: GmmModel,
    /// `kept[c]` is the mixture component behind output cluster `c`.
    pub kept: Vec<usize>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.kept.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub platform_id: u32,
    pub cluster: usize,
    pub max_responsibility: f64,
}

pub fn read_assignments<R: Read>(reader: R) -> Result<Vec<AssignmentRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub taz_id: u32,
    pub truth: TazClass,
    pub got: TazClass,
}

/// Planted-label recovery against the generator's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub non_sparse_zones: usize,
    pub recovered: usize,
    pub rate: f64,
    pub sparse_zones: usize,
    pub sparse_recovered: usize,
    /// Adjusted Rand index of clusters against planted archetypes, over clustered platforms.
    pub platform_ari: f64,
    pub mismatches: Vec<Mismatch>,
}

fn stage_ingest(cfg: &Config, ws: &Workspace) -> Result<()> {
    let platforms = PlatformTable::from_csv(open(&cfg.require("platforms")?)?)?;
    let week = cfg.week();
    let parsed = parse_scd(open(&cfg.require("scd")?)?, &cfg.ingest.schema, &week)?;
    let reject_counts = parsed
        .reject_counts()
        .into_iter()
        .map(|(k, v)| (format!("{k:?}"), v))
        .collect();
    let records_parsed = parsed.records.len() as u64;
    let rejects = parsed.rejects.len() as u64;
    let sample_rejects = parsed.rejects.iter().take(20).cloned().collect();
    let (seg, filter) = filter_segmented(parsed.records);
    let (cube, aggregate) = aggregate_flows(&seg, &platforms, &week)?;
    ws.write_with(FLOWS, |b| cube.write_csv(b))?;
    ws.write_json(
        "ingest.json",
        &IngestSummary {
            records_parsed,
            rejects,
            reject_counts,
            sample_rejects,
            filter,
            aggregate,
            platforms: platforms.len(),
        },
    )
}

fn read_cube(cfg: &Config, ws: &Workspace) -> Result<FlowCube> {
    FlowCube::from_csv(ws.open(Stage::Ingest, FLOWS)?, &cfg.week())
}

fn stage_features(cfg: &Config, ws: &Workspace) -> Result<()> {
    let cube = read_cube(cfg, ws)?;
    let fs = build_features(&cube, &cfg.features)?;
    let window = cfg.features.hour_window;
    ws.write_with(FEATURES, |b| fs.write_csv(b))?;
    ws.write_json(
        "features.json",
        &FeatureSummary {
            hour_window: [window.first, window.last],
            cells_before_averaging: fs.cells_before_averaging(),
            dim: fs.dim(),
            platforms: fs.vectors.len(),
            excluded: fs.excluded.clone(),
            epsilon: cfg.features.epsilon,
            log_transform: cfg.features.log_transform,
            pearson: pearson_report(&cube, window),
        },
    )
}

fn stage_cluster(cfg: &Config, ws: &Workspace) -> Result<()> {
    let fs = FeatureSet::from_csv(ws.open(Stage::Features, FEATURES)?)?;
    let points: Vec<Vec<f64>> = fs
        .vectors
        .iter()
        .map(|v| v.values(cfg.features.log_transform))
        .collect();
    let fitted = fit(&points, &cfg.em_config())?;
    let mut used = vec![false; fitted.model.k];
    for a in &fitted.assignments {
        used[a.cluster] = true;
    }
    let kept: Vec<usize> = (0..fitted.model.k).filter(|&c| used[c]).collect();
    if kept.len() < fitted.model.k {
        log::warn!(
            "{} of {} mixture components own no platform and are dropped",
            fitted.model.k - kept.len(),
            fitted.model.k
        );
    }
    let renumber: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let rows: Vec<AssignmentRow> = fs
        .vectors
        .iter()
        .zip(&fitted.assignments)
        .map(|(v, a)| AssignmentRow {
            platform_id: v.platform_id,
            cluster: renumber[&a.cluster],
            max_responsibility: a.max_responsibility(),
        })
        .collect();
    ws.write_json(
        MODEL,
        &ClusterModel {
            model: fitted.model,
            kept,
        },
    )?;
    ws.write_with(ASSIGNMENTS, |b| {
        let mut w = csv::Writer::from_writer(b);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(ASSIGNMENTS, e))?;
        Ok(())
    })
}

fn read_clusters(ws: &Workspace) -> Result<(ClusterModel, Vec<AssignmentRow>)> {
    let model: ClusterModel = ws.read_json(Stage::Cluster, MODEL)?;
    let rows = read_assignments(ws.open(Stage::Cluster, ASSIGNMENTS)?)?;
    Ok((model, rows))
}

fn stage_profile(cfg: &Config, ws: &Workspace) -> Result<()> {
    let (model, rows) = read_clusters(ws)?;
    let platforms = PlatformTable::from_csv(open(&cfg.require("platforms")?)?)?;
    let pois = read_pois(open(&cfg.require("pois")?)?)?;
    let grid = PoiGrid::build(&pois, cfg.poi.radius_m);
    let centers = rows
        .iter()
        .map(|r| {
            platforms
                .index_of(r.platform_id)
                .map(|i| platforms.platforms()[i].position)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "platform {} is not in the platform table",
                        r.platform_id
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = centers
        .par_iter()
        .map(|c| grid.count_in_radius(*c, cfg.poi.radius_m))
        .collect();
    let matrix = zscore(rows.iter().map(|r| r.platform_id).collect(), counts);
    let cluster_of: Vec<Option<usize>> = rows.iter().map(|r| Some(r.cluster)).collect();
    let profiles = build_profiles(
        &matrix,
        &cluster_of,
        model.k(),
        service_area_km2(cfg.poi.radius_m),
    )?;
    ws.write_with("poi_counts.csv", |b| matrix.write_csv(b))?;
    ws.write_json(PROFILES, &profiles)?;
    ws.write_with("profiles.csv", |b| write_profiles_csv(&profiles, b))
}

/// Cluster of every cube row (`None` when left out of clustering).
fn cube_clusters(cube: &FlowCube, rows: &[AssignmentRow]) -> Vec<Option<usize>> {
    let by_id: BTreeMap<u32, usize> = rows.iter().map(|r| (r.platform_id, r.cluster)).collect();
    cube.platform_ids
        .iter()
        .map(|id| by_id.get(id).copied())
        .collect()
}

fn stage_label(cfg: &Config, ws: &Workspace) -> Result<()> {
    let cube = read_cube(cfg, ws)?;
    let (model, rows) = read_clusters(ws)?;
    let profiles: Vec<PoiProfile> = ws.read_json(Stage::Profile, PROFILES)?;
    if profiles.len() != model.k() {
        return Err(Error::MissingArtifact {
            stage: Stage::Profile.name(),
            path: ws.path(PROFILES),
        });
    }
    let cluster_of = cube_clusters(&cube, &rows);
    let window = cfg.features.hour_window;
    let signatures = flow_signatures(&cube, &cluster_of, model.k(), window, &cfg.rules)?;
    let overrides = match cfg.optional("landmarks")? {
        Some(path) => {
            let landmarks = read_landmarks(open(&path)?)?;
            let platforms = PlatformTable::from_csv(open(&cfg.require("platforms")?)?)?;
            let located: Vec<_> = cube
                .platform_ids
                .iter()
                .zip(&cluster_of)
                .filter_map(|(id, c)| {
                    platforms
                        .index_of(*id)
                        .map(|i| (platforms.platforms()[i].position, *c))
                })
                .collect();
            resolve_landmarks(&landmarks, &located, cfg.poi.landmark_radius_m)?
        }
        None => BTreeMap::new(),
    };
    let decisions: Vec<LabelDecision> = profiles
        .iter()
        .zip(&signatures)
        .map(|(p, s)| apply_rules(p, s, overrides.get(&p.cluster), &cfg.rules))
        .collect();
    ws.write_with("flow_profiles.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "cluster",
            "label",
            "day_kind",
            "hour",
            "mean_inflow",
            "mean_outflow",
        ])?;
        for (s, d) in signatures.iter().zip(&decisions) {
            for (kind, inflow, outflow) in [
                (DayKind::Weekday, &s.weekday_in, &s.weekday_out),
                (DayKind::Weekend, &s.weekend_in, &s.weekend_out),
            ] {
                for (i, (a, b)) in inflow.iter().zip(outflow).enumerate() {
                    w.write_record([
                        s.cluster.to_string(),
                        d.label.key().to_string(),
                        format!("{kind:?}").to_lowercase(),
                        (window.first as usize + i).to_string(),
                        format!("{a:.6}"),
                        format!("{b:.6}"),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("flow_profiles.csv", e))?;
        Ok(())
    })?;
    ws.write_json(
        LABELS,
        &LabelSet {
            rules: cfg.rules,
            decisions,
            signatures,
        },
    )
}

fn recovery(truth: &GroundTruth, labels: &[TazLabel], rows: &[AssignmentRow]) -> Recovery {
    let got: BTreeMap<u32, TazClass> = labels.iter().map(|l| (l.taz_id, l.label)).collect();
    let mut r = Recovery {
        non_sparse_zones: 0,
        recovered: 0,
        rate: 0.0,
        sparse_zones: 0,
        sparse_recovered: 0,
        platform_ari: 0.0,
        mismatches: Vec::new(),
    };
    for z in &truth.zones {
        let g = got.get(&z.taz_id).copied().unwrap_or(TazClass::Sparse);
        if z.label == TazClass::Sparse {
            r.sparse_zones += 1;
            r.sparse_recovered += (g == TazClass::Sparse) as usize;
        } else {
            r.non_sparse_zones += 1;
            if g == z.label {
                r.recovered += 1;
            } else {
                r.mismatches.push(Mismatch {
                    taz_id: z.taz_id,
                    truth: z.label,
                    got: g,
                });
            }
        }
    }
    if r.non_sparse_zones > 0 {
        r.rate = r.recovered as f64 / r.non_sparse_zones as f64;
    }
    let planted: BTreeMap<u32, usize> = truth
        .platforms
        .iter()
        .map(|p| (p.platform_id, p.archetype as usize))
        .collect();
    let (a, b): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .filter_map(|row| planted.get(&row.platform_id).map(|&t| (row.cluster, t)))
        .unzip();
    if !a.is_empty() {
        r.platform_ari = adjusted_rand_index(&a, &b);
    }
    r
}

fn stage_aggregate(cfg: &Config, ws: &Workspace) -> Result<()> {
    let Some(taz_path) = cfg.optional("taz")? else {
        log::info!("inputs.taz not set; skipping zone aggregation");
        return Ok(());
    };
    let cube = read_cube(cfg, ws)?;
    let (_, rows) = read_clusters(ws)?;
    let label_set: LabelSet = ws.read_json(Stage::Label, LABELS)?;
    let text = std::fs::read_to_string(&taz_path).map_err(|e| Error::io(&taz_path, e))?;
    let zones = read_zones(&text)?;
    let platforms = PlatformTable::from_csv(open(&cfg.require("platforms")?)?)?;

    let positions: Vec<_> = cube
        .platform_ids
        .iter()
        .map(|id| {
            platforms
                .index_of(*id)
                .map(|i| platforms.platforms()[i].position)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "platform {id} in flows is not in the platform table"
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let platform_zone = assign_platforms(&positions, &zones);
    let unzoned = platform_zone.iter().filter(|z| z.is_none()).count();
    if unzoned > 0 {
        log::warn!("{unzoned} platforms lie outside every zone");
    }
    let support: Vec<u64> = (0..cube.num_platforms()).map(|p| cube.support(p)).collect();
    let labels = label_zones(
        &zones,
        &platform_zone,
        &cube_clusters(&cube, &rows),
        &support,
        &label_set.labels(),
        &cfg.taz.vote(),
    );
    let summary = summarize(&labels, &zones)?;
    let accuracy = cfg
        .taz
        .accuracy_classes
        .iter()
        .map(|c| accuracy_check(&labels, &zones, *c, cfg.taz.top_n))
        .collect::<Result<Vec<AccuracyResult>>>()?;

    ws.write(
        "taz_labels.geojson",
        labeled_geojson(&zones, &labels).as_bytes(),
    )?;
    ws.write_with("taz_labels.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["taz_id", "label", "platform_count", "support"])?;
        for l in &labels {
            w.write_record([
                l.taz_id.to_string(),
                l.label.to_string(),
                l.platform_count.to_string(),
                l.support.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("taz_labels.csv", e))?;
        Ok(())
    })?;
    ws.write_with("taz_summary.csv", |b| write_summary_csv(&summary, b))?;
    ws.write_json(TAZ_SUMMARY, &summary)?;
    ws.write_json(ACCURACY, &accuracy)?;
    if let Some(truth_path) = cfg.optional("truth")? {
        let truth: GroundTruth = serde_json::from_reader(open(&truth_path)?)?;
        ws.write_json(RECOVERY, &recovery(&truth, &labels, &rows))?;
    }
    Ok(())
}

fn read_optional<T: DeserializeOwned>(ws: &Workspace, name: &str) -> Result<Option<T>> {
    let p = ws.path(name);
    if p.is_file() {
        Ok(Some(serde_json::from_reader(open(&p)?)?))
    } else {
        Ok(None)
    }
}

fn stage_report(_cfg: &Config, ws: &Workspace) -> Result<()> {
    let labels: LabelSet = ws.read_json(Stage::Label, LABELS)?;
    let profiles: Vec<PoiProfile> = ws.read_json(Stage::Profile, PROFILES)?;
    let summary: Option<Vec<SummaryRow>> = read_optional(ws, TAZ_SUMMARY)?;
    let mut md = label_report(
        &labels.decisions,
        &profiles,
        &labels.signatures,
        summary.as_deref(),
    );
    if let Some(fs) = read_optional::<FeatureSummary>(ws, "features.json")? {
        let _ = writeln!(
            md,
            "\n## Features\n\n- hour window {}–{}: {} cells per week before averaging, {} dimensions after\n- {} platforms clustered, {} excluded for lack of flow",
            fs.hour_window[0],
            fs.hour_window[1],
            fs.cells_before_averaging,
            fs.dim,
            fs.platforms,
            fs.excluded.len()
        );
    }
    if let Some(acc) = read_optional::<Vec<AccuracyResult>>(ws, ACCURACY)? {
        let _ = writeln!(md, "\n## Land-use accuracy\n\n| class | top n | valid | matched | rate |\n|---|---|---|---|---|");
        for a in &acc {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                a.class,
                a.top_n,
                a.valid,
                a.matched,
                a.rate_percent()
            );
        }
    }
    if let Some(r) = read_optional::<Recovery>(ws, RECOVERY)? {
        let _ = writeln!(
            md,
            "\n## Planted-zone recovery\n\n- {} of {} non-sparse zones recovered ({:.1}%)\n- {} of {} sparse zones left sparse\n- platform ARI {:.3}",
            r.recovered,
            r.non_sparse_zones,
            100.0 * r.rate,
            r.sparse_recovered,
            r.sparse_zones,
            r.platform_ari
        );
    }
    ws.write("report.md", md.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSummary {
    pub k: usize,
    pub clusters: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
    pub loglik_first: Option<f64>,
    pub loglik_last: Option<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub cluster: usize,
    pub label: FunctionLabel,
    pub rationale: Vec<String>,
    pub platforms: usize,
}

/// Everything needed to audit and reproduce a run. Stage timings live in a
/// separate file so that the manifest itself is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub ingest: Option<IngestSummary>,
    pub features: Option<serde_json::Value>,
    pub em: Option<EmSummary>,
    pub clusters: Vec<ClusterLabel>,
    pub recovery: Option<serde_json::Value>,
    pub outputs: BTreeMap<String, String>,
    pub timings_file: String,
}

fn build_manifest(cfg: &Config, ws: &Workspace) -> Result<RunManifest> {
    let mut inputs = BTreeMap::new();
    for field in ["scd", "platforms", "pois", "taz", "landmarks", "truth"] {
        if let Ok(Some(path)) = cfg.optional(field) {
            let raw = match field {
                "scd" => &cfg.inputs.scd,
                "platforms" => &cfg.inputs.platforms,
                "pois" => &cfg.inputs.pois,
                "taz" => &cfg.inputs.taz,
                "landmarks" => &cfg.inputs.landmarks,
                _ => &cfg.inputs.truth,
            };
            inputs.insert(
                field.to_string(),
                InputDigest {
                    path: raw.clone().unwrap_or_default(),
                    sha256: sha256_file(&path)?,
                },
            );
        }
    }
    let em = read_optional::<ClusterModel>(ws, MODEL)?.map(|m| EmSummary {
        k: m.model.k,
        clusters: m.k(),
        iterations: m.model.iterations(),
        converged: m.model.converged,
        reseeds: m.model.reseeds,
        loglik_first: m.model.loglik_trace.first().copied(),
        loglik_last: m.model.loglik_trace.last().copied(),
        monotone: is_monotone(&m.model.loglik_trace),
    });
    let clusters = match read_optional::<LabelSet>(ws, LABELS)? {
        Some(ls) => ls
            .decisions
            .iter()
            .zip(&ls.signatures)
            .map(|(d, s)| ClusterLabel {
                cluster: d.cluster,
                label: d.label,
                rationale: d.rationale.clone(),
                platforms: s.platform_count,
            })
            .collect(),
        None => Vec::new(),
    };
    let features = read_optional::<FeatureSummary>(ws, "features.json")?.map(|f| {
        serde_json::json!({
            "hour_window": f.hour_window,
            "cells_before_averaging": f.cells_before_averaging,
            "dim": f.dim,
            "platforms": f.platforms,
            "excluded": f.excluded.len(),
        })
    });
    let mut outputs = BTreeMap::new();
    for name in Stage::ALL.iter().flat_map(|s| s.outputs().iter()) {
        let p = ws.path(name);
        if p.is_file() {
            outputs.insert(name.to_string(), sha256_file(&p)?);
        }
    }
    Ok(RunManifest {
        tool: "dzof".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.snapshot(),
        inputs,
        ingest: read_optional(ws, "ingest.json")?,
        features,
        em,
        clusters,
        recovery: read_optional(ws, RECOVERY)?,
        outputs,
        timings_file: TIMINGS.into(),
    })
}

fn run_one(stage: Stage, cfg: &Config, ws: &Workspace) -> Result<()> {
    match stage {
        Stage::Ingest => stage_ingest(cfg, ws),
        Stage::Features => stage_features(cfg, ws),
        Stage::Cluster => stage_cluster(cfg, ws),
        Stage::Profile => stage_profile(cfg, ws),
        Stage::Label => stage_label(cfg, ws),
        Stage::Aggregate => stage_aggregate(cfg, ws),
        Stage::Report => stage_report(cfg, ws),
    }
}

/// Run `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Outcome of a (partial) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub stages: Vec<String>,
    pub manifest: RunManifest,
}

/// Run `stages` in order, then refresh the manifest. A failing stage leaves no
/// artifacts of its own or of later stages behind.
pub fn run_stages(cfg: &Config, stages: &[Stage]) -> Result<RunOutcome> {
    cfg.validate()?;
    let ws = Workspace::new(cfg.out_dir())?;
    let mut timings = BTreeMap::new();
    with_workers(cfg.workers, || -> Result<()> {
        for &stage in stages {
            ws.invalidate_from(stage)?;
            let t0 = Instant::now();
            log::info!("stage {}", stage.name());
            run_one(stage, cfg, &ws).map_err(|e| e.in_stage(stage.name()))?;
            timings.insert(stage.name().to_string(), t0.elapsed().as_secs_f64());
        }
        Ok(())
    })??;
    let manifest = build_manifest(cfg, &ws)?;
    ws.write_json(MANIFEST, &manifest)?;
    ws.write_json(TIMINGS, &timings)?;
    Ok(RunOutcome {
        out_dir: ws.dir,
        stages: stages.iter().map(|s| s.name().to_string()).collect(),
        manifest,
    })
}

/// The whole chain: ingest → features → cluster → profile → label → aggregate → report.
pub fn run_pipeline(cfg: &Config) -> Result<RunOutcome> {
    run_stages(cfg, &Stage::ALL)
}

/// Recovery metrics of a finished run, when ground truth was configured.
pub fn read_recovery(out_dir: &Path) -> Result<Option<Recovery>> {
    read_optional(
        &Workspace {
            dir: out_dir.to_path_buf(),
        },
        RECOVERY,
    )
}

/// Pipeline config pointing at the files of a generated city in `dir`.
pub fn config_for_city(spec: &crate::synth::CitySpec) -> Config {
    let mut cfg = Config {
        seed: spec.seed,
        ..Config::default()
    };
    cfg.ingest.study_week_start = spec.study_week_start;
    cfg.inputs = crate::config::Inputs {
        scd: Some("scd.csv".into()),
        platforms: Some("platforms.csv".into()),
        pois: Some("pois.csv".into()),
        taz: Some("taz.geojson".into()),
        landmarks: None,
        truth: Some("truth.json".into()),
    };
    cfg
}
