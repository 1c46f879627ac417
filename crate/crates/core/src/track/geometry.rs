use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{wrap, ContextFeature, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainClass {
    Ice,
    Concrete,
    Pebbles,
}

/// Terrain over `[start, end)` of the ellipse parameter angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub class: TerrainClass,
    pub slip: f64,
}

/// Geometry and terrain layout. When `segments` is empty the layout is
/// generated from `ice_coverage`: the loop is split into `blocks` equal arcs,
/// the first `ice_coverage` of each is ice and the remainder is concrete with
/// a `pebbles_fraction` share of pebbles at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub half_width: f64,
    pub ice_coverage: f64,
    pub blocks: usize,
    pub pebbles_fraction: f64,
    pub slip_ice: f64,
    pub slip_concrete: f64,
    pub slip_pebbles: f64,
    pub segments: Vec<Segment>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            center_x: 0.0,
            center_y: 0.0,
            semi_major: 10.0,
            semi_minor: 7.0,
            half_width: 1.0,
            ice_coverage: 0.5,
            blocks: 4,
            pebbles_fraction: 0.25,
            slip_ice: 0.1,
            slip_concrete: 0.9,
            slip_pebbles: 0.5,
            segments: Vec::new(),
        }
    }
}

/// Terrain lookup result.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainInfo {
    pub class: TerrainClass,
    pub slip: f64,
    /// Signed distance to the centerline, positive outside the ellipse.
    pub distance: f64,
    /// Ellipse parameter of the nearest centerline point.
    pub param: f64,
}

impl TerrainInfo {
    pub fn feature(&self) -> ContextFeature {
        ContextFeature(vec![self.slip, self.distance])
    }
}

const ARC_TABLE: usize = 4096;

#[derive(Clone, Debug)]
pub struct TerrainTrack {
    cfg: TrackConfig,
    segments: Vec<Segment>,
    /// Cumulative arc length at `t = i * TAU / ARC_TABLE`.
    arc: Vec<f64>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_slip(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
    }
    Ok(())
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center_x", self.center_x),
            ("center_y", self.center_y),
            ("semi_major", self.semi_major),
            ("semi_minor", self.semi_minor),
            ("half_width", self.half_width),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self.semi_minor <= 0.0 || self.semi_major < self.semi_minor {
            return Err(Error::InvalidConfig(format!(
                "need semi_major >= semi_minor > 0, got {} and {}",
                self.semi_major, self.semi_minor
            )));
        }
        if self.half_width <= 0.0 || self.half_width >= self.semi_minor {
            return Err(Error::InvalidConfig(format!(
                "half_width must lie in (0, semi_minor), got {}",
                self.half_width
            )));
        }
        check_unit("ice_coverage", self.ice_coverage)?;
        check_unit("pebbles_fraction", self.pebbles_fraction)?;
        check_slip("slip_ice", self.slip_ice)?;
        check_slip("slip_concrete", self.slip_concrete)?;
        check_slip("slip_pebbles", self.slip_pebbles)?;
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("blocks must be >= 1".into()));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<Segment> {
        let width = TAU / self.blocks as f64;
        let mut out = Vec::new();
        for b in 0..self.blocks {
            let start = b as f64 * width;
            let end = if b + 1 == self.blocks { TAU } else { start + width };
            let ice_end = start + self.ice_coverage * width;
            let rest = end - ice_end;
            let pebble_start = ice_end + (1.0 - self.pebbles_fraction) * rest;
            for (s, e, class, slip) in [
                (start, ice_end, TerrainClass::Ice, self.slip_ice),
                (ice_end, pebble_start, TerrainClass::Concrete, self.slip_concrete),
                (pebble_start, end, TerrainClass::Pebbles, self.slip_pebbles),
            ] {
                if e > s {
                    out.push(Segment {
                        start: s,
                        end: e,
                        class,
                        slip,
                    });
                }
            }
        }
        out
    }
}

fn validate_segments(segments: &[Segment]) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::InvalidConfig("no terrain segments".into()));
    }
    let mut expected = 0.0;
    for s in segments {
        check_slip("segment slip", s.slip)?;
        if (s.start - expected).abs() > 1e-9 || s.end <= s.start {
            return Err(Error::InvalidConfig(format!(
                "segments must partition [0, 2pi) in order; bad segment [{}, {})",
                s.start, s.end
            )));
        }
        expected = s.end;
    }
    if (expected - TAU).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("segments end at {expected}, not 2pi")));
    }
    Ok(())
}

impl TerrainTrack {
    pub fn new(cfg: TrackConfig) -> Result<Self> {
        cfg.validate()?;
        let segments = if cfg.segments.is_empty() {
            cfg.layout()
        } else {
            cfg.segments.clone()
        };
        validate_segments(&segments)?;
        let (a, b) = (cfg.semi_major, cfg.semi_minor);
        let speed = |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
        let h = TAU / ARC_TABLE as f64;
        let mut arc = Vec::with_capacity(ARC_TABLE + 1);
        arc.push(0.0);
        for i in 0..ARC_TABLE {
            // Simpson on each cell
            let t0 = i as f64 * h;
            let inc = h / 6.0 * (speed(t0) + 4.0 * speed(t0 + 0.5 * h) + speed(t0 + h));
            arc.push(arc[i] + inc);
        }
        Ok(Self { cfg, segments, arc })
    }

    pub fn config(&self) -> &TrackConfig {
        &self.cfg
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn half_width(&self) -> f64 {
        self.cfg.half_width
    }

    pub fn perimeter(&self) -> f64 {
        self.arc[ARC_TABLE]
    }

    /// Total ice arc (in parameter angle) over `2 pi`.
    pub fn ice_fraction(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.class == TerrainClass::Ice)
            .map(|s| s.end - s.start)
            .sum::<f64>()
            / TAU
    }

    pub fn centerline(&self, t: f64) -> (f64, f64) {
        (
            self.cfg.center_x + self.cfg.semi_major * t.cos(),
            self.cfg.center_y + self.cfg.semi_minor * t.sin(),
        )
    }

    /// Heading of counterclockwise travel at parameter `t`.
    pub fn tangent_heading(&self, t: f64) -> f64 {
        (self.cfg.semi_minor * t.cos()).atan2(-self.cfg.semi_major * t.sin())
    }

    /// Arc length from `t = 0` to `t` (taken modulo `2 pi`).
    pub fn arc_length(&self, t: f64) -> f64 {
        let t = t.rem_euclid(TAU);
        let x = t / TAU * ARC_TABLE as f64;
        let i = (x.floor() as usize).min(ARC_TABLE - 1);
        let f = x - i as f64;
        self.arc[i] + f * (self.arc[i + 1] - self.arc[i])
    }

    /// Parameter whose arc length is `s` (taken modulo the perimeter).
    pub fn param_at_arc(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.perimeter());
        let i = match self.arc.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i.min(ARC_TABLE - 1),
            Err(i) => i.saturating_sub(1).min(ARC_TABLE - 1),
        };
        let span = self.arc[i + 1] - self.arc[i];
        let f = if span > 0.0 { (s - self.arc[i]) / span } else { 0.0 };
        (i as f64 + f) * TAU / ARC_TABLE as f64
    }

    /// Ellipse parameter of the centerline point nearest `(x, y)`.
    pub fn nearest_param(&self, x: f64, y: f64) -> f64 {
        let (a, b) = (self.cfg.semi_major, self.cfg.semi_minor);
        let (px, py) = (x - self.cfg.center_x, y - self.cfg.center_y);
        let dist2 = |t: f64| (a * t.cos() - px).powi(2) + (b * t.sin() - py).powi(2);
        // coarse scan, then Newton on the stationarity condition
        const COARSE: usize = 72;
        let mut t = 0.0;
        let mut best = f64::INFINITY;
        for i in 0..COARSE {
            let c = i as f64 * TAU / COARSE as f64;
            let d = dist2(c);
            if d < best {
                best = d;
                t = c;
            }
        }
        let step = TAU / COARSE as f64;
        for _ in 0..20 {
            let (s, c) = t.sin_cos();
            let g = (b * b - a * a) * s * c + px * a * s - py * b * c;
            let h = (b * b - a * a) * (c * c - s * s) + px * a * c + py * b * s;
            if h <= 0.0 {
                break;
            }
            let dt = (g / h).clamp(-step, step);
            t -= dt;
            if dt.abs() < 1e-13 {
                break;
            }
        }
        t.rem_euclid(TAU)
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let t = t.rem_euclid(TAU);
        let i = self.segments.partition_point(|s| s.end <= t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    pub fn terrain_at(&self, x: f64, y: f64) -> TerrainInfo {
        let t = self.nearest_param(x, y);
        let (cx, cy) = self.centerline(t);
        let (a, b) = (self.cfg.semi_major, self.cfg.semi_minor);
        let (nx, ny) = (b * t.cos(), a * t.sin());
        let (dx, dy) = (x - cx, y - cy);
        let r = dx.hypot(dy);
        let distance = if dx * nx + dy * ny >= 0.0 { r } else { -r };
        let seg = self.segment_at(t);
        TerrainInfo {
            class: seg.class,
            slip: seg.slip,
            distance,
            param: t,
        }
    }

    /// Signed arc-length progress between the centerline projections of two points,
    /// taken along the shorter way round.
    pub fn progress(&self, from: &State, to: &State) -> f64 {
        let s0 = self.arc_length(self.nearest_param(from.x, from.y));
        let s1 = self.arc_length(self.nearest_param(to.x, to.y));
        let p = self.perimeter();
        let mut d = (s1 - s0).rem_euclid(p);
        if d > 0.5 * p {
            d -= p;
        }
        d
    }

    /// Pose on the centerline at parameter `t`, facing forward.
    pub fn pose_at(&self, t: f64, lateral: f64, heading_offset: f64) -> State {
        let (cx, cy) = self.centerline(t);
        let (a, b) = (self.cfg.semi_major, self.cfg.semi_minor);
        let (nx, ny) = (b * t.cos(), a * t.sin());
        let n = nx.hypot(ny);
        State::new(
            cx + lateral * nx / n,
            cy + lateral * ny / n,
            wrap(self.tangent_heading(t) + heading_offset),
        )
    }

    /// Axis-aligned box containing the track plus `margin`.
    pub fn bounding_box(&self, margin: f64) -> ((f64, f64), (f64, f64)) {
        let (a, b) = (self.cfg.semi_major, self.cfg.semi_minor);
        let ext = self.cfg.half_width + margin;
        (
            (self.cfg.center_x - a - ext, self.cfg.center_x + a + ext),
            (self.cfg.center_y - b - ext, self.cfg.center_y + b + ext),
        )
    }
}
