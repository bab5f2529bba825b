//! GPS trajectory parsing, distance accumulation and route gridding.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for every great-circle distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default sampling-gap threshold in seconds.
pub const DEFAULT_TAU_S: f64 = 300.0;

/// Default grid spacing in meters.
pub const DEFAULT_SPACING_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Great-circle distance in meters.
    pub fn haversine(&self, other: &GeoPoint) -> f64 {
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dphi = phi2 - phi1;
        let dlambda = (other.lon - self.lon).to_radians();
        let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }

    fn lerp(&self, other: &GeoPoint, w: f64) -> GeoPoint {
        GeoPoint::new(
            self.lat + (other.lat - self.lat) * w,
            self.lon + (other.lon - self.lon) * w,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub point: GeoPoint,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

/// A maximal run of fixes of one trip whose adjacent gaps all lie in `(0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub trip_id: String,
    pub fixes: Vec<GpsFix>,
    pub tau: f64,
}

impl Journey {
    /// Departure time as seconds since midnight (UTC).
    pub fn depart_seconds_of_day(&self) -> f64 {
        self.fixes
            .first()
            .map(|f| f.timestamp.rem_euclid(86_400.0))
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Stop,
    Intersection,
    Interpolated,
}

impl SegmentKind {
    pub fn is_landmark(self) -> bool {
        !matches!(self, SegmentKind::Interpolated)
    }

    /// One-hot code in `[stop, intersection, interpolated]` order.
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            SegmentKind::Stop => [1.0, 0.0, 0.0],
            SegmentKind::Intersection => [0.0, 1.0, 0.0],
            SegmentKind::Interpolated => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: usize,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub kind: SegmentKind,
    /// Meters from the route origin.
    pub cum_distance: f64,
    /// Number of bus lines serving this segment.
    pub line_count: u32,
}

/// Ordered discretization of one route.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub route_id: String,
    pub segments: Vec<RoadSegment>,
    pub spacing: f64,
}

impl SegmentGrid {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Index of the final grid point.
    pub fn last_index(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    pub fn route_length(&self) -> f64 {
        self.segments.last().map(|s| s.cum_distance).unwrap_or(0.0)
    }

    pub fn cum_distances(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.cum_distance).collect()
    }

    fn indices_where(&self, pred: impl Fn(SegmentKind) -> bool) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| pred(s.kind))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn stop_indices(&self) -> Vec<usize> {
        self.indices_where(|k| k == SegmentKind::Stop)
    }

    /// Stops and intersections; these are never moved by the selector.
    pub fn landmark_indices(&self) -> Vec<usize> {
        self.indices_where(SegmentKind::is_landmark)
    }

    pub fn interp_indices(&self) -> Vec<usize> {
        self.indices_where(|k| k == SegmentKind::Interpolated)
    }

    /// Reconstruct the route description this grid's landmarks came from.
    pub fn landmark_description(&self, default_line_count: u32) -> RouteDescription {
        let spec = |s: &RoadSegment| LandmarkSpec {
            cum_distance: s.cum_distance,
            lat: s.start.lat,
            lon: s.start.lon,
            line_count: Some(s.line_count),
        };
        RouteDescription {
            route_id: self.route_id.clone(),
            route_length: self.route_length(),
            spacing: self.spacing,
            default_line_count,
            stops: self
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::Stop)
                .map(spec)
                .collect(),
            intersections: self
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::Intersection)
                .map(spec)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSpec {
    pub cum_distance: f64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_count: Option<u32>,
}

impl LandmarkSpec {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING_M
}

fn default_line_count() -> u32 {
    1
}

/// Contents of a route description file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDescription {
    pub route_id: String,
    pub route_length: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_line_count")]
    pub default_line_count: u32,
    #[serde(default)]
    pub stops: Vec<LandmarkSpec>,
    #[serde(default)]
    pub intersections: Vec<LandmarkSpec>,
}

impl RouteDescription {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("route description serializes")
    }

    pub fn grid(&self) -> Result<SegmentGrid> {
        build_segment_grid(self)
    }
}

/// Parse delimited `trip_id,lat,lon,timestamp` rows into journeys.
///
/// Trips come out ordered by `trip_id`. A trip split at gaps larger than
/// `tau` yields `trip`, `trip#1`, `trip#2`, ... in time order.
pub fn parse_trajectories<R: Read>(raw: R, tau: f64) -> Result<Vec<Journey>> {
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (c_trip, c_lat, c_lon, c_ts) = (
        column("trip_id")?,
        column("lat")?,
        column("lon")?,
        column("timestamp")?,
    );

    let mut trips: BTreeMap<String, Vec<GpsFix>> = BTreeMap::new();
    let mut rejected = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or(Error::Parse {
                line,
                message: "missing field".into(),
            })
        };
        let number = |idx: usize| -> Result<f64> {
            let text = field(idx)?;
            text.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: `{text}`"),
            })
        };
        let trip_id = field(c_trip)?.to_string();
        let point = GeoPoint::new(number(c_lat)?, number(c_lon)?);
        let timestamp = number(c_ts)?;
        if !point.is_valid() || !timestamp.is_finite() || timestamp < 0.0 {
            rejected += 1;
            continue;
        }
        trips.entry(trip_id).or_default().push(GpsFix { point, timestamp });
    }
    if rejected > 0 {
        log::warn!("rejected {rejected} fixes with non-finite or out-of-range values");
    }

    let mut journeys = Vec::new();
    for (trip_id, mut fixes) in trips {
        // Stable sort: among equal timestamps the first row in the file wins.
        fixes.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        fixes.dedup_by(|later, earlier| later.timestamp == earlier.timestamp);
        let mut piece = 0usize;
        let mut current: Vec<GpsFix> = Vec::new();
        for fix in fixes {
            if let Some(prev) = current.last() {
                if fix.timestamp - prev.timestamp > tau {
                    journeys.push(Journey {
                        trip_id: piece_name(&trip_id, piece),
                        fixes: std::mem::take(&mut current),
                        tau,
                    });
                    piece += 1;
                }
            }
            current.push(fix);
        }
        if !current.is_empty() {
            journeys.push(Journey {
                trip_id: piece_name(&trip_id, piece),
                fixes: current,
                tau,
            });
        }
    }
    Ok(journeys)
}

fn piece_name(trip_id: &str, piece: usize) -> String {
    if piece == 0 {
        trip_id.to_string()
    } else {
        format!("{trip_id}#{piece}")
    }
}

/// `(meters travelled, seconds elapsed)` for every fix of the journey.
pub fn cumulative_distance(journey: &Journey) -> Vec<(f64, f64)> {
    let Some(first) = journey.fixes.first() else {
        return Vec::new();
    };
    let mut total = 0.0;
    let mut out = Vec::with_capacity(journey.fixes.len());
    out.push((0.0, 0.0));
    for pair in journey.fixes.windows(2) {
        total += pair[0].point.haversine(&pair[1].point);
        out.push((total, pair[1].timestamp - first.timestamp));
    }
    out
}

/// Discretize a route into stops, intersections and evenly spaced points.
///
/// Interpolated points sit at multiples of `spacing` plus the route end; one
/// closer than `spacing / 2` to a landmark is dropped, except the route
/// origin and end, which are kept unless a landmark sits exactly on them.
pub fn build_segment_grid(route: &RouteDescription) -> Result<SegmentGrid> {
    let length = route.route_length;
    let spacing = route.spacing;
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::Config(format!("route_length must be positive, got {length}")));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::Config(format!("spacing must be positive, got {spacing}")));
    }

    struct Landmark {
        at: f64,
        point: GeoPoint,
        kind: SegmentKind,
        line_count: u32,
    }
    let mut landmarks: Vec<Landmark> = Vec::new();
    for (specs, kind) in [
        (&route.stops, SegmentKind::Stop),
        (&route.intersections, SegmentKind::Intersection),
    ] {
        for spec in specs {
            if !(0.0..=length).contains(&spec.cum_distance) {
                return Err(Error::Config(format!(
                    "landmark at {} m lies outside [0, {length}]",
                    spec.cum_distance
                )));
            }
            if !spec.point().is_valid() {
                return Err(Error::Config(format!(
                    "landmark at {} m has invalid coordinates",
                    spec.cum_distance
                )));
            }
            landmarks.push(Landmark {
                at: spec.cum_distance,
                point: spec.point(),
                kind,
                line_count: spec.line_count.unwrap_or(route.default_line_count),
            });
        }
    }
    landmarks.sort_by(|a, b| a.at.total_cmp(&b.at));
    if let Some(w) = landmarks.windows(2).find(|w| w[0].at == w[1].at) {
        return Err(Error::Config(format!(
            "two landmarks share cum_distance {} m",
            w[0].at
        )));
    }

    let near_landmark = |x: f64| landmarks.iter().any(|l| (l.at - x).abs() < spacing / 2.0);
    let mut candidates: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let x = k as f64 * spacing;
        if x >= length || length - x < spacing / 2.0 && k > 0 {
            break;
        }
        candidates.push(x);
        k += 1;
    }
    candidates.push(length);
    let interpolated: Vec<f64> = candidates
        .into_iter()
        .filter(|&x| !near_landmark(x) || x == 0.0 || x == length)
        .filter(|&x| !landmarks.iter().any(|l| l.at == x))
        .collect();

    let coord_at = |x: f64| -> GeoPoint {
        match landmarks.iter().position(|l| l.at >= x) {
            None => landmarks.last().map(|l| l.point).unwrap_or(GeoPoint::new(0.0, 0.0)),
            Some(0) => landmarks[0].point,
            Some(i) => {
                let (a, b) = (&landmarks[i - 1], &landmarks[i]);
                a.point.lerp(&b.point, (x - a.at) / (b.at - a.at))
            }
        }
    };

    let mut points: Vec<(f64, GeoPoint, SegmentKind, u32)> = landmarks
        .iter()
        .map(|l| (l.at, l.point, l.kind, l.line_count))
        .chain(
            interpolated
                .iter()
                .map(|&x| (x, coord_at(x), SegmentKind::Interpolated, route.default_line_count)),
        )
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let segments = points
        .iter()
        .enumerate()
        .map(|(i, &(at, start, kind, line_count))| RoadSegment {
            id: i,
            start,
            end: points.get(i + 1).map(|p| p.1).unwrap_or(start),
            kind,
            cum_distance: at,
            line_count,
        })
        .collect();
    Ok(SegmentGrid {
        route_id: route.route_id.clone(),
        segments,
        spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn route(length: f64, stops: &[f64], spacing: f64) -> RouteDescription {
        RouteDescription {
            route_id: "t".into(),
            route_length: length,
            spacing,
            default_line_count: 1,
            stops: stops
                .iter()
                .map(|&d| LandmarkSpec {
                    cum_distance: d,
                    lat: 39.9,
                    lon: 116.3 + d * 1e-5,
                    line_count: None,
                })
                .collect(),
            intersections: vec![],
        }
    }

    fn csv_rows(rows: &[(&str, f64, f64, f64)]) -> String {
        let mut s = String::from("trip_id,lat,lon,timestamp\n");
        for (t, la, lo, ts) in rows {
            s.push_str(&format!("{t},{la},{lo},{ts}\n"));
        }
        s
    }

    #[test]
    fn empty_stream_gives_no_journeys() {
        let js = parse_trajectories("trip_id,lat,lon,timestamp\n".as_bytes(), 300.0).unwrap();
        assert!(js.is_empty());
    }

    #[test]
    fn large_gap_splits_journey() {
        let ts = [0.0, 60.0, 120.0, 520.0, 580.0];
        let rows: Vec<_> = ts.iter().map(|&t| ("a", 39.9, 116.3, t)).collect();
        let js = parse_trajectories(csv_rows(&rows).as_bytes(), 300.0).unwrap();
        let lens: Vec<_> = js.iter().map(|j| j.fixes.len()).collect();
        assert_eq!(lens, vec![3, 2]);
        assert_eq!(js[1].trip_id, "a#1");
    }

    #[test]
    fn regular_gaps_keep_one_journey() {
        let rows: Vec<_> = (0..4).map(|i| ("a", 39.9, 116.3, 60.0 * i as f64)).collect();
        let js = parse_trajectories(csv_rows(&rows).as_bytes(), 300.0).unwrap();
        assert_eq!(js.len(), 1);
        assert_eq!(js[0].fixes.len(), 4);
    }

    #[test]
    fn duplicates_collapse_to_first_and_rows_sort() {
        let rows = [
            ("a", 39.9, 116.30, 60.0),
            ("a", 39.9, 116.31, 0.0),
            ("a", 39.9, 116.99, 60.0),
        ];
        let js = parse_trajectories(csv_rows(&rows).as_bytes(), 300.0).unwrap();
        assert_eq!(js[0].fixes.len(), 2);
        assert_eq!(js[0].fixes[1].point.lon, 116.30);
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "trip_id,lat,lon,timestamp\na,39.9,116.3,0\na,abc,116.3,60\n";
        match parse_trajectories(text.as_bytes(), 300.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_fix_is_rejected_not_fatal() {
        let text = "trip_id,lat,lon,timestamp\na,39.9,116.3,0\na,NaN,116.3,60\na,39.9,116.3,120\n";
        let js = parse_trajectories(text.as_bytes(), 300.0).unwrap();
        assert_eq!(js[0].fixes.len(), 2);
    }

    #[test]
    fn cumulative_distance_examples() {
        let single = Journey {
            trip_id: "a".into(),
            fixes: vec![GpsFix { point: GeoPoint::new(0.0, 0.0), timestamp: 5.0 }],
            tau: 300.0,
        };
        assert_eq!(cumulative_distance(&single), vec![(0.0, 0.0)]);

        let mut two = single.clone();
        two.fixes.push(GpsFix { point: GeoPoint::new(0.0, 0.001), timestamp: 25.0 });
        let pairs = cumulative_distance(&two);
        assert!((pairs[1].0 - 111.19).abs() < 0.05, "{}", pairs[1].0);
        assert_eq!(pairs[1].1, 20.0);

        let mut still = single.clone();
        still.fixes.push(GpsFix { point: GeoPoint::new(0.0, 0.0), timestamp: 35.0 });
        assert_eq!(cumulative_distance(&still), vec![(0.0, 0.0), (0.0, 30.0)]);
    }

    #[test]
    fn grid_with_end_stops() {
        let g = build_segment_grid(&route(1000.0, &[0.0, 1000.0], 100.0)).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.interp_indices().len(), 9);
        assert_eq!(g.stop_indices(), vec![0, 10]);
    }

    #[test]
    fn coarse_spacing_keeps_only_stops() {
        let g = build_segment_grid(&route(1000.0, &[0.0, 1000.0], 2000.0)).unwrap();
        assert_eq!(g.cum_distances(), vec![0.0, 1000.0]);
    }

    #[test]
    fn stop_absorbs_nearby_grid_point() {
        let g = build_segment_grid(&route(500.0, &[240.0], 100.0)).unwrap();
        assert_eq!(g.cum_distances(), vec![0.0, 100.0, 240.0, 300.0, 400.0, 500.0]);
        assert_eq!(g.segments[2].kind, SegmentKind::Stop);
    }

    #[test]
    fn duplicate_landmarks_rejected() {
        let mut r = route(1000.0, &[0.0, 500.0], 100.0);
        r.intersections.push(r.stops[1].clone());
        assert!(matches!(build_segment_grid(&r), Err(Error::Config(_))));
    }

    #[test]
    fn grid_is_idempotent() {
        let mut r = route(2350.0, &[0.0, 730.0, 2350.0], 100.0);
        r.intersections.push(LandmarkSpec { cum_distance: 1460.0, lat: 39.9, lon: 116.4, line_count: Some(4) });
        let g = build_segment_grid(&r).unwrap();
        let again = build_segment_grid(&g.landmark_description(1)).unwrap();
        assert_eq!(g, again);
    }
}
