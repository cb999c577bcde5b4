use serde::{Deserialize, Serialize};

use super::SimError;

/// One constant-input interval of a test schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    /// DC input voltage.
    pub vin: f64,
    /// Peak of the demanded grid current.
    pub ipeak: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Contiguous segments covering `[0, T]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    segments: Vec<Segment>,
}

/// Segment boundaries shared by every canned test schedule.
pub const PRESET_BOUNDARIES: [f64; 5] = [0.0, 0.0708, 0.1625, 0.254, 0.3];

pub const PRESET_NAMES: [&str; 3] = ["c1-c4", "c5-c8", "c9-c12"];

impl Schedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SimError> {
        let mut t = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if (s.t_start - t).abs() > 1e-12 {
                return Err(SimError::Schedule(format!("segment {i} starts at {} s, expected {t} s", s.t_start)));
            }
            if !(s.t_end > s.t_start) || !s.t_end.is_finite() {
                return Err(SimError::Schedule(format!("segment {i} has non-positive length")));
            }
            if !(s.vin > 0.0) || !(s.ipeak >= 0.0) {
                return Err(SimError::Schedule(format!("segment {i} needs vin > 0 and ipeak >= 0")));
            }
            t = s.t_end;
        }
        Ok(Self { segments })
    }

    /// A single segment of constant input voltage and current demand.
    pub fn constant(vin: f64, ipeak: f64, duration: f64) -> Result<Self, SimError> {
        if duration == 0.0 {
            return Ok(Self::default());
        }
        Self::new(vec![Segment { t_start: 0.0, t_end: duration, vin, ipeak }])
    }

    fn from_levels(levels: [(f64, f64); 4]) -> Self {
        let segments = levels
            .iter()
            .enumerate()
            .map(|(i, &(vin, ipeak))| Segment {
                t_start: PRESET_BOUNDARIES[i],
                t_end: PRESET_BOUNDARIES[i + 1],
                vin,
                ipeak,
            })
            .collect();
        Self { segments }
    }

    /// Input-voltage steps at 60 A peak demand.
    pub fn c1_c4() -> Self {
        Self::from_levels([(600.0, 60.0), (850.0, 60.0), (700.0, 60.0), (750.0, 60.0)])
    }

    /// Load steps at the worst-case 850 V input.
    pub fn c5_c8() -> Self {
        Self::from_levels([(850.0, 50.0), (850.0, 10.0), (850.0, 60.0), (850.0, 30.0)])
    }

    /// Same load steps as [`Schedule::c5_c8`]; exercised with the other filter.
    pub fn c9_c12() -> Self {
        Self::c5_c8()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "c1-c4" => Some(Self::c1_c4()),
            "c5-c8" => Some(Self::c5_c8()),
            "c9-c12" => Some(Self::c9_c12()),
            _ => None,
        }
    }

    /// Keeps the segment levels but gives every segment `cycles` grid periods.
    pub fn with_segment_cycles(&self, cycles: f64, fg: f64) -> Self {
        let len = cycles / fg;
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| Segment { t_start: i as f64 * len, t_end: (i + 1) as f64 * len, ..*s })
            .collect();
        Self { segments }
    }

    /// Replaces every segment's input voltage.
    pub fn with_vin(&self, vin: f64) -> Self {
        Self { segments: self.segments.iter().map(|s| Segment { vin, ..*s }).collect() }
    }

    /// Replaces every segment's current demand.
    pub fn with_ipeak(&self, ipeak: f64) -> Self {
        Self { segments: self.segments.iter().map(|s| Segment { ipeak, ..*s }).collect() }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Segment active at `t`; boundaries belong to the later segment.
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.t_end <= t);
        self.segments.get(idx).or_else(|| self.segments.last())
    }

    /// Boundary strictly after `t`, if any.
    pub(crate) fn next_boundary(&self, t: f64) -> Option<f64> {
        self.segments.iter().map(|s| s.t_end).find(|&e| e > t)
    }
}
