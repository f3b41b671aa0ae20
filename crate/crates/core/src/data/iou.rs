/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

/// Intersection over union; degenerate unions yield 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Result of matching a detected body box against labelled face boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouAssignment {
    /// Unique best overlap; `ambiguous` marks an exact IoU tie
    /// (resolved to the lower identity index).
    Match { identity: usize, ambiguous: bool },
    /// Two or more faces overlap the body box above the discard threshold.
    Discard,
    /// Nothing overlaps at all.
    NoMatch,
}

pub const IOU_DISCARD_THRESHOLD: f64 = 0.75;

/// Assign a body box to the identity of the face box with maximal IoU.
/// Boxes containing two or more faces above the discard threshold are
/// dropped as unattributable.
pub fn assign_identity_by_iou(body: &BBox, faces: &[(usize, BBox)]) -> IouAssignment {
    if faces.is_empty() {
        return IouAssignment::NoMatch;
    }
    let scores: Vec<(usize, f64)> = faces
        .iter()
        .map(|(id, fb)| (*id, iou(body, fb)))
        .collect();
    let over = scores
        .iter()
        .filter(|(_, s)| *s > IOU_DISCARD_THRESHOLD)
        .count();
    if over >= 2 {
        return IouAssignment::Discard;
    }
    let best = scores
        .iter()
        .map(|(_, s)| *s)
        .fold(0.0_f64, f64::max);
    if best == 0.0 {
        return IouAssignment::NoMatch;
    }
    let mut tied: Vec<usize> = scores
        .iter()
        .filter(|(_, s)| *s == best)
        .map(|(id, _)| *id)
        .collect();
    tied.sort_unstable();
    IouAssignment::Match {
        identity: tied[0],
        ambiguous: tied.len() > 1,
    }
}
