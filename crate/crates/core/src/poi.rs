//! POI service-area counts, Z-score standardization, and the per-cluster
//! frequency-density (FD) and category-ratio (CR) profiles with their rankings.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, GeoPoint, EARTH_RADIUS_M};

pub const NUM_CATEGORIES: usize = 20;

pub type CategoryCounts = [u32; NUM_CATEGORIES];

/// First-level POI classification, codes 01–20.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PoiCategory {
    AutomobileService = 1,
    VehicleSales,
    AutomobileMaintenance,
    MotorcycleService,
    Catering,
    Shopping,
    LifeService,
    SportLeisure,
    HealthCare,
    Accommodation,
    PlaceOfInterest,
    BusinessResidential,
    Government,
    ScienceEduCulture,
    Transport,
    Finance,
    Corporation,
    RoadFacility,
    AddressInfo,
    PublicFacility,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; NUM_CATEGORIES] = {
        use PoiCategory::*;
        [
            AutomobileService,
            VehicleSales,
            AutomobileMaintenance,
            MotorcycleService,
            Catering,
            Shopping,
            LifeService,
            SportLeisure,
            HealthCare,
            Accommodation,
            PlaceOfInterest,
            BusinessResidential,
            Government,
            ScienceEduCulture,
            Transport,
            Finance,
            Corporation,
            RoadFacility,
            AddressInfo,
            PublicFacility,
        ]
    };

    pub fn from_code(code: u8) -> Option<Self> {
        (1..=NUM_CATEGORIES as u8)
            .contains(&code)
            .then(|| Self::ALL[code as usize - 1])
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based column index.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn name(self) -> &'static str {
        use PoiCategory::*;
        match self {
            AutomobileService => "Automobile service",
            VehicleSales => "Vehicle sales",
            AutomobileMaintenance => "Automobile maintenance",
            MotorcycleService => "Motorcycle service",
            Catering => "Catering service",
            Shopping => "Shopping service",
            LifeService => "Life service",
            SportLeisure => "Sport and leisure service",
            HealthCare => "Health care service",
            Accommodation => "Accommodation service",
            PlaceOfInterest => "Place of interest",
            BusinessResidential => "Business and residential area",
            Government => "Government agency and social organization",
            ScienceEduCulture => "Science, educational and cultural service",
            Transport => "Transport facility",
            Finance => "Finance and insurance service",
            Corporation => "Corporation",
            RoadFacility => "Road affiliated facility",
            AddressInfo => "Address information",
            PublicFacility => "Public facility",
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub position: GeoPoint,
    pub category: PoiCategory,
}

pub fn read_pois<R: Read>(reader: R) -> Result<Vec<Poi>> {
    #[derive(Deserialize)]
    struct Row {
        poi_id: String,
        lon: f64,
        lat: f64,
        category_code: String,
    }
    let mut pois = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: Row = row?;
        let category = row
            .category_code
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(PoiCategory::from_code)
            .ok_or_else(|| {
                Error::Data(format!(
                    "POI {} has category code `{}` outside 01-20",
                    row.poi_id, row.category_code
                ))
            })?;
        pois.push(Poi {
            poi_id: row.poi_id,
            position: GeoPoint::new(row.lon, row.lat),
            category,
        });
    }
    Ok(pois)
}

pub fn write_pois<W: Write>(pois: &[Poi], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["poi_id", "lon", "lat", "category_code"])?;
    for p in pois {
        w.write_record([
            p.poi_id.clone(),
            p.position.lon.to_string(),
            p.position.lat.to_string(),
            format!("{:02}", p.category.code()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<poi csv>", e))?;
    Ok(())
}

/// Area of a circular service area, km².
pub fn service_area_km2(radius_m: f64) -> f64 {
    std::f64::consts::PI * (radius_m / 1000.0).powi(2)
}

/// Uniform lat/lon grid over POIs. Cells are roughly `cell_m` on a side at the
/// data's mean latitude; radius queries scan every cell overlapping the
/// circle's exact bounding box and confirm candidates with the haversine distance.
#[derive(Debug, Clone)]
pub struct PoiGrid<'a> {
    pois: &'a [Poi],
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PoiGrid<'a> {
    pub fn build(pois: &'a [Poi], cell_m: f64) -> Self {
        assert!(cell_m > 0.0, "cell size must be positive");
        let cell_lat = (cell_m / EARTH_RADIUS_M).to_degrees();
        let mean_lat = if pois.is_empty() {
            0.0
        } else {
            pois.iter().map(|p| p.position.lat).sum::<f64>() / pois.len() as f64
        };
        let cell_lon = cell_lat / mean_lat.to_radians().cos().max(0.01);
        let mut grid = PoiGrid {
            pois,
            cell_lat,
            cell_lon,
            cells: HashMap::new(),
        };
        for (i, p) in pois.iter().enumerate() {
            let key = grid.key(p.position);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat / self.cell_lat).floor() as i64,
            (p.lon / self.cell_lon).floor() as i64,
        )
    }

    /// Indices of POIs within `radius_m` (inclusive) of `center`.
    pub fn within(&self, center: GeoPoint, radius_m: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut visit = |idx: &[usize]| {
            out.extend(
                idx.iter()
                    .copied()
                    .filter(|&i| haversine_m(center, self.pois[i].position) <= radius_m),
            )
        };
        let delta = radius_m / EARTH_RADIUS_M;
        let dlat = delta.to_degrees() * (1.0 + 1e-6) + 1e-9;
        let (lat_lo, lat_hi) = (center.lat - dlat, center.lat + dlat);
        let lon_arg = delta.sin() / center.lat.to_radians().cos();
        if lat_lo <= -90.0 || lat_hi >= 90.0 || !(lon_arg < 1.0) {
            for idx in self.cells.values() {
                visit(idx);
            }
        } else {
            let dlon = lon_arg.asin().to_degrees() * (1.0 + 1e-6) + 1e-9;
            let (r0, c0) = self.key(GeoPoint::new(center.lon - dlon, lat_lo));
            let (r1, c1) = self.key(GeoPoint::new(center.lon + dlon, lat_hi));
            let span = ((r1 - r0 + 1) * (c1 - c0 + 1)) as usize;
            if span > self.cells.len() {
                for (&(r, c), idx) in &self.cells {
                    if (r0..=r1).contains(&r) && (c0..=c1).contains(&c) {
                        visit(idx);
                    }
                }
            } else {
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        if let Some(idx) = self.cells.get(&(r, c)) {
                            visit(idx);
                        }
                    }
                }
            }
        }
        out
    }

    /// Per-category count of POIs inside the service area.
    pub fn count_in_radius(&self, center: GeoPoint, radius_m: f64) -> CategoryCounts {
        let mut counts = [0u32; NUM_CATEGORIES];
        for i in self.within(center, radius_m) {
            counts[self.pois[i].category.index()] += 1;
        }
        counts
    }
}

/// Raw (s_ij) and standardized (x*_ij) POI counts per platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiCountMatrix {
    pub platform_ids: Vec<u32>,
    pub counts: Vec<CategoryCounts>,
    pub standardized: Vec<[f64; NUM_CATEGORIES]>,
    pub col_means: [f64; NUM_CATEGORIES],
    pub col_stdevs: [f64; NUM_CATEGORIES],
}

/// Column-wise Z-score with population standard deviation; a zero-variance
/// column maps to all zeros.
pub fn zscore(platform_ids: Vec<u32>, counts: Vec<CategoryCounts>) -> PoiCountMatrix {
    assert_eq!(platform_ids.len(), counts.len());
    let n = counts.len();
    let mut standardized = vec![[0.0; NUM_CATEGORIES]; n];
    let mut col_means = [0.0; NUM_CATEGORIES];
    let mut col_stdevs = [0.0; NUM_CATEGORIES];
    if n > 0 {
        for j in 0..NUM_CATEGORIES {
            let col: Vec<f64> = counts.iter().map(|r| r[j] as f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            col_means[j] = mean;
            col_stdevs[j] = sd;
            if sd != 0.0 {
                for (row, x) in standardized.iter_mut().zip(&col) {
                    row[j] = (x - mean) / sd;
                }
            }
        }
    }
    PoiCountMatrix {
        platform_ids,
        counts,
        standardized,
        col_means,
        col_stdevs,
    }
}

impl PoiCountMatrix {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["platform_id".to_string()];
        header.extend(PoiCategory::ALL.iter().map(|c| format!("c{:02}", c.code())));
        w.write_record(&header)?;
        for (id, row) in self.platform_ids.iter().zip(&self.counts) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(u32::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<poi count csv>", e))?;
        Ok(())
    }
}

/// FD: mean standardized count per category over the cluster's platforms,
/// divided by the service-area size. `None` for an empty cluster.
pub fn fd_vector(
    members: &[&[f64; NUM_CATEGORIES]],
    area_km2: f64,
) -> Option<[f64; NUM_CATEGORIES]> {
    if members.is_empty() {
        return None;
    }
    let n = members.len() as f64;
    Some(std::array::from_fn(|j| {
        members.iter().map(|r| r[j]).sum::<f64>() / n / area_km2
    }))
}

/// CR: standardized counts summed over the cluster, divided by the total raw
/// POI count of its service areas. `None` when that total is zero.
pub fn cr_vector(
    standardized: &[&[f64; NUM_CATEGORIES]],
    raw: &[&CategoryCounts],
) -> Option<[f64; NUM_CATEGORIES]> {
    let total: u64 = raw.iter().flat_map(|r| r.iter()).map(|&c| c as u64).sum();
    if total == 0 {
        return None;
    }
    Some(std::array::from_fn(|j| {
        standardized.iter().map(|r| r[j]).sum::<f64>() / total as f64
    }))
}

/// 1-based descending ranks; ties keep index order.
pub fn rank_descending(values: &[f64]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r as u32 + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiProfile {
    pub cluster: usize,
    pub platform_count: usize,
    pub total_pois: u64,
    pub fd: [f64; NUM_CATEGORIES],
    pub cr: [f64; NUM_CATEGORIES],
    /// Internal ranking of categories within this cluster (by CR).
    pub fd_rank: [u32; NUM_CATEGORIES],
    /// External ranking of this cluster among all clusters, per category (by FD).
    pub rcr: [u32; NUM_CATEGORIES],
    /// No POIs at all in the cluster's service areas; CR is left at zero.
    pub sparse_poi: bool,
}

impl PoiProfile {
    pub fn fd_of(&self, c: PoiCategory) -> f64 {
        self.fd[c.index()]
    }

    pub fn rcr_of(&self, c: PoiCategory) -> u32 {
        self.rcr[c.index()]
    }

    pub fn internal_rank_of(&self, c: PoiCategory) -> u32 {
        self.fd_rank[c.index()]
    }

    /// Categories ordered by FD, highest first.
    pub fn top_fd(&self, n: usize) -> Vec<PoiCategory> {
        let ranks = rank_descending(&self.fd);
        let mut cats: Vec<(u32, PoiCategory)> = ranks.into_iter().zip(PoiCategory::ALL).collect();
        cats.sort_unstable();
        cats.into_iter().take(n).map(|(_, c)| c).collect()
    }
}

/// Fill internal (`fd_rank`, by CR within a cluster) and external (`rcr`, by FD
/// across clusters) rankings.
pub fn rank_profiles(profiles: &mut [PoiProfile]) {
    for p in profiles.iter_mut() {
        let r = rank_descending(&p.cr);
        p.fd_rank.copy_from_slice(&r);
    }
    for j in 0..NUM_CATEGORIES {
        let col: Vec<f64> = profiles.iter().map(|p| p.fd[j]).collect();
        for (p, r) in profiles.iter_mut().zip(rank_descending(&col)) {
            p.rcr[j] = r;
        }
    }
}

/// Per-cluster profiles. `cluster_of[i]` is the cluster of matrix row `i`
/// (`None` for platforms left out of clustering).
pub fn build_profiles(
    matrix: &PoiCountMatrix,
    cluster_of: &[Option<usize>],
    k: usize,
    area_km2: f64,
) -> Result<Vec<PoiProfile>> {
    assert_eq!(cluster_of.len(), matrix.counts.len());
    let mut profiles = Vec::with_capacity(k);
    for c in 0..k {
        let rows: Vec<usize> = (0..cluster_of.len())
            .filter(|&i| cluster_of[i] == Some(c))
            .collect();
        let std_rows: Vec<&[f64; NUM_CATEGORIES]> =
            rows.iter().map(|&i| &matrix.standardized[i]).collect();
        let raw_rows: Vec<&CategoryCounts> = rows.iter().map(|&i| &matrix.counts[i]).collect();
        let fd = fd_vector(&std_rows, area_km2).ok_or(Error::EmptyCluster(c))?;
        let cr = cr_vector(&std_rows, &raw_rows);
        if cr.is_none() {
            log::warn!("cluster {c} has no POIs in its service areas; CR set to zero");
        }
        profiles.push(PoiProfile {
            cluster: c,
            platform_count: rows.len(),
            total_pois: raw_rows
                .iter()
                .flat_map(|r| r.iter())
                .map(|&v| v as u64)
                .sum(),
            fd,
            cr: cr.unwrap_or([0.0; NUM_CATEGORIES]),
            fd_rank: [0; NUM_CATEGORIES],
            rcr: [0; NUM_CATEGORIES],
            sparse_poi: cr.is_none(),
        });
    }
    rank_profiles(&mut profiles);
    Ok(profiles)
}

/// Table-2-shaped export: one row per category, FD and RCR per cluster.
pub fn write_profiles_csv<W: Write>(profiles: &[PoiProfile], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["code".to_string(), "category".to_string()];
    for p in profiles {
        header.push(format!("C{}_fd", p.cluster));
        header.push(format!("C{}_rcr", p.cluster));
    }
    w.write_record(&header)?;
    for cat in PoiCategory::ALL {
        let mut row = vec![format!("{:02}", cat.code()), cat.name().to_string()];
        for p in profiles {
            row.push(format!("{:.3}", p.fd_of(cat)));
            row.push(p.rcr_of(cat).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<profile csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;
    use std::f64::consts::PI;

    fn poi(lon: f64, lat: f64, code: u8) -> Poi {
        Poi {
            poi_id: format!("{lon}-{lat}"),
            position: GeoPoint::new(lon, lat),
            category: PoiCategory::from_code(code).unwrap(),
        }
    }

    fn counts_with_column(j: usize, col: &[u32]) -> Vec<CategoryCounts> {
        col.iter()
            .map(|&v| {
                let mut r = [0; NUM_CATEGORIES];
                r[j] = v;
                r
            })
            .collect()
    }

    #[test]
    fn category_codes() {
        assert_eq!(PoiCategory::from_code(5), Some(PoiCategory::Catering));
        assert_eq!(PoiCategory::Catering.index(), 4);
        assert_eq!(PoiCategory::from_code(0), None);
        assert_eq!(PoiCategory::from_code(21), None);
        assert!(PoiCategory::ALL
            .iter()
            .enumerate()
            .all(|(i, c)| c.index() == i));
    }

    #[test]
    fn bad_category_code_is_rejected() {
        let csv = "poi_id,lon,lat,category_code\np1,116,39,21\n";
        assert!(matches!(read_pois(csv.as_bytes()), Err(Error::Data(_))));
        let csv = "poi_id,lon,lat,category_code\np1,116,39,05\n";
        assert_eq!(
            read_pois(csv.as_bytes()).unwrap()[0].category,
            PoiCategory::Catering
        );
    }

    #[test]
    fn empty_radius_is_zero() {
        let pois = vec![poi(116.5, 39.9, 3)];
        let g = PoiGrid::build(&pois, 500.0);
        assert_eq!(
            g.count_in_radius(GeoPoint::new(116.0, 39.9), 500.0),
            [0; 20]
        );
    }

    #[test]
    fn poi_at_center_counts() {
        let pois = vec![poi(116.4, 39.9, 5)];
        let g = PoiGrid::build(&pois, 500.0);
        let c = g.count_in_radius(GeoPoint::new(116.4, 39.9), 500.0);
        assert_eq!(c[4], 1);
        assert_eq!(c.iter().sum::<u32>(), 1);
    }

    #[test]
    fn boundary_offsets() {
        let center = GeoPoint::new(116.4, 39.9);
        let pois = vec![
            Poi {
                poi_id: "in".into(),
                position: destination(center, 45.0, 499.0),
                category: PoiCategory::Catering,
            },
            Poi {
                poi_id: "out".into(),
                position: destination(center, 200.0, 501.0),
                category: PoiCategory::Shopping,
            },
        ];
        let g = PoiGrid::build(&pois, 500.0);
        let c = g.count_in_radius(center, 500.0);
        assert_eq!((c[4], c[5]), (1, 0));
    }

    #[test]
    fn zscore_examples() {
        let m = zscore(vec![1, 2, 3], counts_with_column(0, &[1, 2, 3]));
        let s = 1.5f64.sqrt();
        let got: Vec<f64> = m.standardized.iter().map(|r| r[0]).collect();
        for (g, e) in got.iter().zip([-s, 0.0, s]) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((got[2] - 1.2247).abs() < 1e-4);
        // Degenerate columns stay exactly zero.
        assert!(m
            .standardized
            .iter()
            .all(|r| r[1..].iter().all(|v| *v == 0.0)));
        assert_eq!(m.col_stdevs[1], 0.0);
    }

    #[test]
    fn zscore_is_translation_invariant() {
        let a = zscore(vec![1, 2, 3, 4], counts_with_column(3, &[0, 4, 7, 2]));
        let b = zscore(vec![1, 2, 3, 4], counts_with_column(3, &[10, 14, 17, 12]));
        for (x, y) in a.standardized.iter().zip(&b.standardized) {
            assert!((x[3] - y[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_examples() {
        let zero = [0.0; NUM_CATEGORIES];
        assert_eq!(fd_vector(&[&zero], service_area_km2(500.0)).unwrap(), zero);
        let mut one = [0.0; NUM_CATEGORIES];
        one[4] = PI / 4.0;
        assert_eq!(fd_vector(&[&one], service_area_km2(500.0)).unwrap()[4], 1.0);
        one[4] = 0.785;
        assert!((fd_vector(&[&one], service_area_km2(500.0)).unwrap()[4] - 1.0).abs() < 1e-3);
        assert!(fd_vector(&[], service_area_km2(500.0)).is_none());
    }

    #[test]
    fn cr_examples() {
        let zero = [0.0; NUM_CATEGORIES];
        let raw = [1u32; NUM_CATEGORIES];
        assert_eq!(cr_vector(&[&zero], &[&raw]).unwrap(), zero);
        let mut s = [0.0; NUM_CATEGORIES];
        s[4] = 3.0;
        let mut raw = [0u32; NUM_CATEGORIES];
        raw[4] = 30;
        assert!((cr_vector(&[&s], &[&raw]).unwrap()[4] - 0.1).abs() < 1e-15);
        assert!(cr_vector(&[&s], &[&[0; NUM_CATEGORIES]]).is_none());
    }

    fn profile(cluster: usize, fd: [f64; NUM_CATEGORIES]) -> PoiProfile {
        PoiProfile {
            cluster,
            platform_count: 1,
            total_pois: 1,
            fd,
            cr: fd,
            fd_rank: [0; NUM_CATEGORIES],
            rcr: [0; NUM_CATEGORIES],
            sparse_poi: false,
        }
    }

    #[test]
    fn ties_follow_index_order() {
        let mut ps: Vec<_> = (0..4).map(|c| profile(c, [0.5; NUM_CATEGORIES])).collect();
        rank_profiles(&mut ps);
        for (c, p) in ps.iter().enumerate() {
            assert!(p.rcr.iter().all(|&r| r == c as u32 + 1));
            assert_eq!(p.fd_rank.to_vec(), (1..=20).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn catering_row_external_ranks() {
        let row = [-0.186, -0.109, 0.142, 0.149, 0.205, -0.095];
        let mut ps: Vec<_> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let mut fd = [0.0; NUM_CATEGORIES];
                fd[PoiCategory::Catering.index()] = *v;
                profile(c, fd)
            })
            .collect();
        rank_profiles(&mut ps);
        let ranks: Vec<u32> = ps.iter().map(|p| p.rcr_of(PoiCategory::Catering)).collect();
        assert_eq!(ranks, vec![6, 5, 3, 2, 1, 4]);
    }

    #[test]
    fn build_profiles_rejects_empty_cluster() {
        let m = zscore(vec![1, 2], vec![[1; NUM_CATEGORIES], [2; NUM_CATEGORIES]]);
        let err = build_profiles(&m, &[Some(0), Some(0)], 2, service_area_km2(500.0)).unwrap_err();
        assert!(matches!(err, Error::EmptyCluster(1)));
    }

    #[test]
    fn build_profiles_flags_poi_free_cluster() {
        let mut a = [0; NUM_CATEGORIES];
        a[0] = 4;
        let m = zscore(vec![1, 2], vec![a, [0; NUM_CATEGORIES]]);
        let ps = build_profiles(&m, &[Some(0), Some(1)], 2, service_area_km2(500.0)).unwrap();
        assert!(!ps[0].sparse_poi && ps[1].sparse_poi);
        assert_eq!(ps[1].cr, [0.0; NUM_CATEGORIES]);
        assert_eq!(ps[0].rcr_of(PoiCategory::AutomobileService), 1);
    }
}
