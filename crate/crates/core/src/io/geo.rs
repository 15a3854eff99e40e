//! Point events aggregated into GeoJSON polygons.

use std::path::Path;

use serde_json::Value;

use super::ingest::ArealRecord;
use crate::error::{Error, Result};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Closed ring of `(lon, lat)` degrees; first and last positions coincide.
pub type Ring = Vec<(f64, f64)>;

/// Outer ring followed by holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub unit_id: String,
    pub parent_id: String,
    pub parts: Vec<Polygon>,
    bbox: [f64; 4],
}

impl Unit {
    pub fn new(unit_id: String, parent_id: String, parts: Vec<Polygon>) -> Self {
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(x, y) in parts.iter().flat_map(|p| p.rings.iter().flatten()) {
            bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x), bbox[3].max(y)];
        }
        Unit {
            unit_id,
            parent_id,
            parts,
            bbox,
        }
    }

    /// Even-odd rule per part; points on an edge count as inside.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        if lon < x0 || lon > x1 || lat < y0 || lat > y1 {
            return false;
        }
        self.parts.iter().any(|p| polygon_contains(p, lon, lat))
    }

    pub fn area_km2(&self) -> f64 {
        self.parts.iter().map(polygon_area_km2).sum()
    }
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

pub fn polygon_contains(poly: &Polygon, lon: f64, lat: f64) -> bool {
    let mut inside = false;
    for ring in &poly.rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if on_segment((lon, lat), a, b) {
                return true;
            }
            if (a.1 > lat) != (b.1 > lat) {
                let x = a.0 + (lat - a.1) / (b.1 - a.1) * (b.0 - a.0);
                if lon < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Shoelace area of a ring after a sinusoidal (equal-area) projection.
fn ring_area_km2(ring: &Ring) -> f64 {
    let proj: Vec<(f64, f64)> = ring
        .iter()
        .map(|&(lon, lat)| {
            let (l, p) = (lon.to_radians(), lat.to_radians());
            (EARTH_RADIUS_KM * l * p.cos(), EARTH_RADIUS_KM * p)
        })
        .collect();
    let twice: f64 = proj.windows(2).map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1).sum();
    twice.abs() / 2.0
}

/// Outer ring area minus hole areas.
pub fn polygon_area_km2(poly: &Polygon) -> f64 {
    let mut rings = poly.rings.iter();
    let outer = rings.next().map_or(0.0, ring_area_km2);
    outer - rings.map(ring_area_km2).sum::<f64>()
}

fn geometry_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Geometry(format!("{}: {}", path.display(), msg.into()))
}

fn parse_ring(path: &Path, v: &Value, unit: &str) -> Result<Ring> {
    let positions = v
        .as_array()
        .ok_or_else(|| geometry_error(path, format!("unit {unit}: ring is not an array")))?;
    let ring: Ring = positions
        .iter()
        .map(|p| match p.as_array().map(|a| a.as_slice()) {
            Some([x, y, ..]) => x
                .as_f64()
                .zip(y.as_f64())
                .ok_or_else(|| geometry_error(path, format!("unit {unit}: non-numeric position"))),
            _ => Err(geometry_error(path, format!("unit {unit}: bad position"))),
        })
        .collect::<Result<_>>()?;
    if ring.len() < 4 {
        return Err(geometry_error(path, format!("unit {unit}: ring has fewer than 4 positions")));
    }
    if ring.first() != ring.last() {
        return Err(geometry_error(path, format!("unit {unit}: ring is not closed")));
    }
    Ok(ring)
}

fn parse_polygon(path: &Path, v: &Value, unit: &str) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| geometry_error(path, format!("unit {unit}: polygon is not an array of rings")))?
        .iter()
        .map(|r| parse_ring(path, r, unit))
        .collect::<Result<Vec<_>>>()?;
    if rings.is_empty() {
        return Err(geometry_error(path, format!("unit {unit}: polygon without rings")));
    }
    Ok(Polygon { rings })
}

fn property(props: &Value, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parse a FeatureCollection of Polygon / MultiPolygon features carrying
/// `unit_id` and `parent_id` properties.
pub fn parse_units(path: &Path, text: &str) -> Result<Vec<Unit>> {
    let root: Value = serde_json::from_str(text).map_err(|e| geometry_error(path, e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(geometry_error(path, "expected a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| geometry_error(path, "missing features"))?;
    let mut units = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").unwrap_or(&Value::Null);
        let unit_id = property(props, "unit_id")
            .ok_or_else(|| geometry_error(path, format!("feature {i}: missing unit_id")))?;
        let parent_id = property(props, "parent_id")
            .ok_or_else(|| geometry_error(path, format!("unit {unit_id}: missing parent_id")))?;
        let geom = f
            .get("geometry")
            .ok_or_else(|| geometry_error(path, format!("unit {unit_id}: missing geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(path, coords, &unit_id)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| geometry_error(path, format!("unit {unit_id}: bad MultiPolygon")))?
                .iter()
                .map(|p| parse_polygon(path, p, &unit_id))
                .collect::<Result<_>>()?,
            other => {
                return Err(geometry_error(
                    path,
                    format!("unit {unit_id}: unsupported geometry {other:?}"),
                ))
            }
        };
        units.push(Unit::new(unit_id, parent_id, parts));
    }
    Ok(units)
}

pub fn read_units(path: &Path) -> Result<Vec<Unit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_units(path, &text)
}

/// A reported event location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub lon: f64,
    pub lat: f64,
    pub year: Option<i32>,
}

/// Read a CSV with `lon`, `lat` and an optional `year` column.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::input(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::input(path, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (lon, lat) = match (col("lon"), col("lat")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::input(path, "need lon and lat columns")),
    };
    let year = col("year");
    let mut events = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::input(path, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::input(path, format!("line {line}: bad coordinate")))
        };
        let year = match year {
            Some(i) => Some(
                row.get(i)
                    .and_then(|s| s.parse::<i32>().ok())
                    .ok_or_else(|| Error::input(path, format!("line {line}: bad year")))?,
            ),
            None => None,
        };
        events.push(Event {
            lon: num(lon)?,
            lat: num(lat)?,
            year,
        });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub records: Vec<ArealRecord>,
    /// Events inside no polygon.
    pub unassigned: usize,
    /// Number of years the counts are averaged over.
    pub n_years: usize,
}

/// Count events per unit (first matching unit in file order) and average
/// over every year in the observed range, including years without events.
/// Without years the data count as one year.
pub fn aggregate_events(events: &[Event], units: &[Unit]) -> Aggregation {
    let years: Vec<i32> = events.iter().filter_map(|e| e.year).collect();
    let n_years = match (years.iter().min(), years.iter().max()) {
        (Some(lo), Some(hi)) => (hi - lo + 1) as usize,
        _ => 1,
    };
    let mut counts = vec![0usize; units.len()];
    let mut unassigned = 0;
    for e in events {
        match units.iter().position(|u| u.contains(e.lon, e.lat)) {
            Some(u) => counts[u] += 1,
            None => unassigned += 1,
        }
    }
    let records = units
        .iter()
        .zip(&counts)
        .map(|(u, &c)| {
            ArealRecord::from_count(
                u.unit_id.clone(),
                u.parent_id.clone(),
                c as f64 / n_years as f64,
                u.area_km2(),
            )
        })
        .collect();
    Aggregation {
        records,
        unassigned,
        n_years,
    }
}

pub fn aggregate_points(points_path: &Path, polygons_path: &Path) -> Result<Aggregation> {
    let units = read_units(polygons_path)?;
    if let Some(u) = units.iter().find(|u| u.area_km2() <= 0.0) {
        return Err(geometry_error(polygons_path, format!("unit {} has zero area", u.unit_id)));
    }
    Ok(aggregate_events(&read_events(points_path)?, &units))
}
