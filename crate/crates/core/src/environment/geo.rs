//! Points of interest and great-circle geometry.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::num::Real;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint<T = f64> {
    pub lat: T,
    pub lon: T,
}

impl<T> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in meters.
pub fn haversine<T: Real>(a: GeoPoint<T>, b: GeoPoint<T>) -> T {
    let two = T::from_f64_lossy(2.0);
    let r = T::from_f64_lossy(EARTH_RADIUS_M);
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / two).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / two).sin().powi(2);
    two * r * h.sqrt().min(T::one()).asin()
}

/// A visitable place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub name: String,
    pub category: String,
    pub location: GeoPoint,
    pub attractiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct SchemaError {
    pub line: u64,
    pub column: usize,
    pub reason: String,
}

impl SchemaError {
    fn new(line: u64, column: usize, reason: impl Into<String>) -> Self {
        Self { line, column, reason: reason.into() }
    }
}

pub const POI_HEADER: [&str; 6] = ["poi_id", "name", "category", "lat", "lon", "attractiveness"];

/// A POI found by a radius query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub poi: &'a Poi,
    pub distance_m: f64,
}

/// POIs bucketed by category and sorted by latitude, so a radius query only
/// examines the latitude band that can contain hits.
#[derive(Debug, Clone, Default)]
pub struct GeoIndex {
    pois: Vec<Poi>,
    by_category: BTreeMap<String, Vec<usize>>,
}

impl GeoIndex {
    pub fn new(pois: Vec<Poi>) -> Self {
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in pois.iter().enumerate() {
            by_category.entry(p.category.clone()).or_default().push(i);
        }
        for ids in by_category.values_mut() {
            ids.sort_by(|&a, &b| pois[a].location.lat.total_cmp(&pois[b].location.lat).then(a.cmp(&b)));
        }
        Self { pois, by_category }
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn get(&self, poi_id: &str) -> Option<&Poi> {
        self.pois.iter().find(|p| p.poi_id == poi_id)
    }

    pub fn categories(&self) -> BTreeSet<String> {
        self.by_category.keys().cloned().collect()
    }

    /// POIs of `category` within `radius_m` of `origin`, in file order.
    pub fn within_radius(&self, origin: GeoPoint, category: &str, radius_m: f64) -> Vec<Candidate<'_>> {
        let Some(ids) = self.by_category.get(category) else {
            return Vec::new();
        };
        // the meridian component alone already exceeds the radius outside this band
        let band = (radius_m / EARTH_RADIUS_M).to_degrees() + 1e-9;
        let lo = ids.partition_point(|&i| self.pois[i].location.lat < origin.lat - band);
        let hi = ids.partition_point(|&i| self.pois[i].location.lat <= origin.lat + band);
        let mut hits: Vec<(usize, f64)> = ids[lo..hi]
            .iter()
            .map(|&i| (i, haversine(origin, self.pois[i].location)))
            .filter(|&(_, d)| d <= radius_m)
            .collect();
        hits.sort_by_key(|&(i, _)| i);
        hits.into_iter().map(|(i, d)| Candidate { poi: &self.pois[i], distance_m: d }).collect()
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let file = std::fs::File::open(path).map_err(|e| SchemaError::new(0, 0, format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    /// Parses the POI CSV schema (`poi_id,name,category,lat,lon,attractiveness`).
    pub fn from_reader(reader: impl Read) -> Result<Self, SchemaError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut rows = rdr.records();
        let header = match rows.next() {
            None => return Ok(Self::default()),
            Some(h) => h.map_err(|e| SchemaError::new(1, 0, e.to_string()))?,
        };
        let found: Vec<&str> = header.iter().map(str::trim).collect();
        if found != POI_HEADER {
            return Err(SchemaError::new(1, 0, format!("expected header {}, found {}", POI_HEADER.join(","), found.join(","))));
        }
        let mut pois = Vec::new();
        let mut seen = BTreeSet::new();
        for row in rows {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                SchemaError::new(line, 0, e.to_string())
            })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() != POI_HEADER.len() {
                return Err(SchemaError::new(line, 0, format!("expected {} fields, found {}", POI_HEADER.len(), row.len())));
            }
            let text = |c: usize| row[c].trim().to_string();
            let num = |c: usize| -> Result<f64, SchemaError> {
                let v: f64 = row[c]
                    .trim()
                    .parse()
                    .map_err(|_| SchemaError::new(line, c + 1, format!("`{}` is not a number", row[c].trim())))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(SchemaError::new(line, c + 1, "value must be finite"))
                }
            };
            let poi_id = text(0);
            if poi_id.is_empty() {
                return Err(SchemaError::new(line, 1, "empty poi_id"));
            }
            if !seen.insert(poi_id.clone()) {
                return Err(SchemaError::new(line, 1, format!("duplicate poi_id `{poi_id}`")));
            }
            let category = text(2);
            if category.is_empty() {
                return Err(SchemaError::new(line, 3, "empty category"));
            }
            let lat = num(3)?;
            if !(-90.0..=90.0).contains(&lat) {
                return Err(SchemaError::new(line, 4, format!("latitude {lat} out of range")));
            }
            let lon = num(4)?;
            if !(-180.0..=180.0).contains(&lon) {
                return Err(SchemaError::new(line, 5, format!("longitude {lon} out of range")));
            }
            let attractiveness = num(5)?;
            if attractiveness < 0.0 {
                return Err(SchemaError::new(line, 6, format!("negative attractiveness {attractiveness}")));
            }
            pois.push(Poi { poi_id, name: text(1), category, location: GeoPoint::new(lat, lon), attractiveness });
        }
        Ok(Self::new(pois))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_points_zero() {
        let p = GeoPoint::new(29.76f64, -95.37);
        assert_eq!(haversine(p, p), 0.0);
    }

    #[test]
    fn one_degree_on_equator() {
        let oracle = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        let d: f64 = haversine(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
        assert!((d - 111_195.0).abs() <= 5.0, "{d}");
        assert!((d - oracle).abs() < 1e-6);
        let d32 = haversine(GeoPoint::new(0.0f32, 0.0), GeoPoint::new(0.0, 1.0));
        assert!((d32 as f64 - oracle).abs() < 5.0);
    }

    #[test]
    fn three_row_fixture() {
        let csv = "poi_id,name,category,lat,lon,attractiveness\n\
                   a,Alpha,shopping,0.0,0.0,1\n\
                   b,Beta,shopping,0.0,0.05,2\n\
                   c,Gamma,dining,0.0,0.01,1\n";
        let idx = GeoIndex::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(idx.len(), 3);
        let hits: Vec<&str> = idx
            .within_radius(GeoPoint::new(0.0, 0.0), "shopping", 2000.0)
            .iter()
            .map(|c| c.poi.poi_id.as_str())
            .collect();
        assert_eq!(hits, ["a"]);
        assert_eq!(idx.within_radius(GeoPoint::new(0.0, 0.0), "shopping", 6000.0).len(), 2);
    }

    #[test]
    fn empty_file_is_empty_index() {
        let idx = GeoIndex::from_reader("".as_bytes()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.within_radius(GeoPoint::new(0.0, 0.0), "shopping", 1e6).is_empty());
        let header_only = GeoIndex::from_reader("poi_id,name,category,lat,lon,attractiveness\n".as_bytes()).unwrap();
        assert!(header_only.is_empty());
    }

    #[test]
    fn negative_attractiveness_rejected_with_position() {
        let csv = "poi_id,name,category,lat,lon,attractiveness\na,A,park,0,0,1\nb,B,park,0,0,-2\n";
        let err = GeoIndex::from_reader(csv.as_bytes()).unwrap_err();
        assert_eq!((err.line, err.column), (3, 6));
    }

    #[test]
    fn bad_number_reports_column() {
        let csv = "poi_id,name,category,lat,lon,attractiveness\na,A,park,north,0,1\n";
        let err = GeoIndex::from_reader(csv.as_bytes()).unwrap_err();
        assert_eq!((err.line, err.column), (2, 4));
    }

    proptest! {
        #[test]
        fn symmetric(a in -80.0f64..80.0, b in -179.0f64..179.0, c in -80.0f64..80.0, d in -179.0f64..179.0) {
            let p = GeoPoint::new(a, b);
            let q = GeoPoint::new(c, d);
            prop_assert!((haversine(p, q) - haversine(q, p)).abs() < 1e-6);
        }

        #[test]
        fn radius_query_equals_linear_scan(
            pts in proptest::collection::vec((29.0f64..31.0, -96.0f64..-94.0, 0usize..3), 0..80),
            olat in 29.0f64..31.0, olon in -96.0f64..-94.0, radius in 100.0f64..150_000.0,
        ) {
            let cats = ["shopping", "dining", "park"];
            let pois: Vec<Poi> = pts.iter().enumerate().map(|(i, &(lat, lon, c))| Poi {
                poi_id: format!("p{i}"), name: String::new(), category: cats[c].into(),
                location: GeoPoint::new(lat, lon), attractiveness: 1.0,
            }).collect();
            let idx = GeoIndex::new(pois.clone());
            let origin = GeoPoint::new(olat, olon);
            for cat in cats {
                let got: Vec<&str> = idx.within_radius(origin, cat, radius).iter().map(|c| c.poi.poi_id.as_str()).collect();
                let want: Vec<&str> = pois.iter()
                    .filter(|p| p.category == cat && haversine(origin, p.location) <= radius)
                    .map(|p| p.poi_id.as_str()).collect();
                prop_assert_eq!(got, want);
            }
        }
    }
}
