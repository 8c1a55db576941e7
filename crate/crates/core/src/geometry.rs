//! Landmark-anchored ROI layout: four tibial rectangles spanned in the
//! plateau frame and two femoral squares hung above the condyle-tip line.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image16, Patch, MAX_INTENSITY};

/// Tibial box in plateau-frame units: x in [0.15, 0.85], y in [0.07, 0.23].
pub const TIBIA_BOX_X: (f64, f64) = (0.15, 0.85);
pub const TIBIA_BOX_Y: (f64, f64) = (0.07, 0.23);
pub const TIBIA_ROI_COUNT: usize = 4;
/// Clearance between the condyle-tip line and the femoral squares.
pub const FEMORAL_OFFSET_MM: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotation by +90 degrees in y-down image coordinates.
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point::new(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoiName {
    F0,
    F1,
    T0,
    T1,
    T2,
    T3,
}

impl RoiName {
    /// Canonical order used by layouts and feature vectors.
    pub const ALL: [RoiName; 6] = [
        RoiName::F0,
        RoiName::F1,
        RoiName::T0,
        RoiName::T1,
        RoiName::T2,
        RoiName::T3,
    ];

    pub const TIBIA: [RoiName; 4] = [RoiName::T0, RoiName::T1, RoiName::T2, RoiName::T3];

    pub fn as_str(self) -> &'static str {
        match self {
            RoiName::F0 => "F0",
            RoiName::F1 => "F1",
            RoiName::T0 => "T0",
            RoiName::T1 => "T1",
            RoiName::T2 => "T2",
            RoiName::T3 => "T3",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RoiName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoiName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RoiName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::parse("ROI name", format!("unknown ROI `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Laterality {
    Left,
    Right,
}

impl Laterality {
    pub fn code(self) -> &'static str {
        match self {
            Laterality::Left => "L",
            Laterality::Right => "R",
        }
    }
}

impl FromStr for Laterality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" | "left" => Ok(Laterality::Left),
            "R" | "r" | "right" => Ok(Laterality::Right),
            _ => Err(Error::parse("laterality", format!("expected L or R, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Case,
    Control,
    Unlabeled,
}

impl Label {
    /// `1` for case, `0` for control.
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Label::Case => Some(1),
            Label::Control => Some(0),
            Label::Unlabeled => None,
        }
    }

    pub fn from_binary(v: u8) -> Option<Label> {
        match v {
            1 => Some(Label::Case),
            0 => Some(Label::Control),
            _ => None,
        }
    }
}

/// Closed interval along the condyle-tip axis, measured in pixels from the
/// medial condyle tip toward the lateral one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AxisInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub subject_id: String,
    pub medial_plateau: Point,
    pub lateral_plateau: Point,
    pub medial_condyle_tip: Point,
    pub lateral_condyle_tip: Point,
    pub medial_condyle_extent: AxisInterval,
    pub lateral_condyle_extent: AxisInterval,
    /// Millimetres per pixel.
    pub pixel_spacing: f64,
    pub laterality: Laterality,
    pub label: Label,
}

impl LandmarkSet {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidLandmarks {
                subject: self.subject_id.clone(),
                reason: reason.to_owned(),
            })
        };
        let points = [
            self.medial_plateau,
            self.lateral_plateau,
            self.medial_condyle_tip,
            self.lateral_condyle_tip,
        ];
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return fail("non-finite landmark coordinate");
        }
        if (self.lateral_plateau - self.medial_plateau).norm() <= 0.0 {
            return fail("plateau landmarks coincide");
        }
        if (self.lateral_condyle_tip - self.medial_condyle_tip).norm() <= 0.0 {
            return fail("condyle tips coincide");
        }
        if !(self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite()) {
            return fail("pixel spacing must be positive");
        }
        if !(self.medial_condyle_extent.len() > 0.0) || !(self.lateral_condyle_extent.len() > 0.0) {
            return fail("condyle extents must have positive length");
        }
        Ok(())
    }

    /// Reflect every landmark about the vertical image midline,
    /// x' = (W - 1) - x. Extents are intrinsic to the condyle axis and stay.
    pub fn mirrored(&self, image_width: usize) -> LandmarkSet {
        let w = image_width as f64 - 1.0;
        let flip = |p: Point| Point::new(w - p.x, p.y);
        LandmarkSet {
            medial_plateau: flip(self.medial_plateau),
            lateral_plateau: flip(self.lateral_plateau),
            medial_condyle_tip: flip(self.medial_condyle_tip),
            lateral_condyle_tip: flip(self.lateral_condyle_tip),
            laterality: match self.laterality {
                Laterality::Left => Laterality::Right,
                Laterality::Right => Laterality::Left,
            },
            ..self.clone()
        }
    }

    /// Femoral offset in whole pixels.
    pub fn femoral_offset_px(&self) -> f64 {
        (FEMORAL_OFFSET_MM / self.pixel_spacing).round()
    }
}

/// Bring a landmark set to the canonical side so the plateau frame always
/// runs medial to lateral along +x. Sets already on `canonical` are returned
/// unchanged. The laterality field is kept, only coordinates are reflected.
pub fn mirror_for_laterality(
    landmarks: &LandmarkSet,
    image_width: usize,
    canonical: Laterality,
) -> LandmarkSet {
    if landmarks.laterality == canonical {
        landmarks.clone()
    } else {
        LandmarkSet {
            laterality: landmarks.laterality,
            ..landmarks.mirrored(image_width)
        }
    }
}

/// Similarity map from a unit frame to pixels: `(0,0)` lands on the origin,
/// `(1,0)` on `origin + axis`, and the second unit axis is `axis` turned +90
/// degrees (downward for a left-to-right axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFrame {
    pub origin: Point,
    pub axis: Point,
}

impl SimilarityFrame {
    pub fn map(&self, unit: Point) -> Point {
        self.origin + self.axis * unit.x + self.axis.perp() * unit.y
    }

    /// Pixels per frame unit.
    pub fn scale(&self) -> f64 {
        self.axis.norm()
    }

    pub fn u_axis(&self) -> Point {
        self.axis * (1.0 / self.scale())
    }

    pub fn v_axis(&self) -> Point {
        self.u_axis().perp()
    }
}

pub fn plateau_frame(medial: Point, lateral: Point) -> Result<SimilarityFrame> {
    let axis = lateral - medial;
    if !(axis.norm() > 0.0) {
        return Err(Error::DegenerateFrame);
    }
    Ok(SimilarityFrame {
        origin: medial,
        axis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub name: RoiName,
    /// Top-left corner in the rectangle's own frame.
    pub origin: Point,
    pub u_axis: Point,
    pub v_axis: Point,
    pub width: f64,
    pub height: f64,
    /// Set when a femoral square is wider than the condyle it sits in.
    pub out_of_bone: bool,
}

impl OrientedRect {
    /// Point at local coordinates `(s, t)` in pixels along `(u_axis, v_axis)`.
    pub fn local_to_image(&self, s: f64, t: f64) -> Point {
        self.origin + self.u_axis * s + self.v_axis * t
    }

    /// Corners clockwise (in y-down image space) starting at the origin.
    pub fn corners(&self) -> [Point; 4] {
        [
            self.origin,
            self.local_to_image(self.width, 0.0),
            self.local_to_image(self.width, self.height),
            self.local_to_image(0.0, self.height),
        ]
    }

    /// Sample-grid size: `round(width) x round(height)`.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.width.round() as usize, self.height.round() as usize)
    }
}

/// T0..T3 ordered medial to lateral, each 0.175 x 0.16 frame units.
pub fn tibia_rois(frame: &SimilarityFrame) -> [OrientedRect; 4] {
    let step = (TIBIA_BOX_X.1 - TIBIA_BOX_X.0) / TIBIA_ROI_COUNT as f64;
    let scale = frame.scale();
    let (u, v) = (frame.u_axis(), frame.v_axis());
    std::array::from_fn(|i| OrientedRect {
        name: RoiName::TIBIA[i],
        origin: frame.map(Point::new(TIBIA_BOX_X.0 + step * i as f64, TIBIA_BOX_Y.0)),
        u_axis: u,
        v_axis: v,
        width: step * scale,
        height: (TIBIA_BOX_Y.1 - TIBIA_BOX_Y.0) * scale,
        out_of_bone: false,
    })
}

/// F0 (medial) and F1 (lateral): squares of side `side` aligned with the
/// condyle-tip line, bottom edges `round(4 mm / spacing)` px above it, each
/// centred on its condyle extent.
pub fn femoral_rois(landmarks: &LandmarkSet, side: f64) -> Result<[OrientedRect; 2]> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "femoral ROI side must be positive, got {side}"
        )));
    }
    let frame = plateau_frame(landmarks.medial_condyle_tip, landmarks.lateral_condyle_tip)?;
    let (u, v) = (frame.u_axis(), frame.v_axis());
    let offset = landmarks.femoral_offset_px();
    let square = |name, extent: AxisInterval| {
        let along = extent.midpoint() - 0.5 * side;
        OrientedRect {
            name,
            origin: landmarks.medial_condyle_tip + u * along - v * (offset + side),
            u_axis: u,
            v_axis: v,
            width: side,
            height: side,
            out_of_bone: extent.len() < side,
        }
    };
    Ok([
        square(RoiName::F0, landmarks.medial_condyle_extent),
        square(RoiName::F1, landmarks.lateral_condyle_extent),
    ])
}

/// The six ROIs in canonical order `[F0, F1, T0, T1, T2, T3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiLayout {
    rois: [OrientedRect; 6],
}

impl RoiLayout {
    pub fn from_landmarks(landmarks: &LandmarkSet) -> Result<Self> {
        landmarks.validate()?;
        let frame = plateau_frame(landmarks.medial_plateau, landmarks.lateral_plateau)?;
        let tibia = tibia_rois(&frame);
        let femur = femoral_rois(landmarks, tibia[0].width)?;
        Ok(Self {
            rois: [femur[0], femur[1], tibia[0], tibia[1], tibia[2], tibia[3]],
        })
    }

    pub fn rois(&self) -> &[OrientedRect; 6] {
        &self.rois
    }

    pub fn get(&self, name: RoiName) -> &OrientedRect {
        &self.rois[name.index()]
    }

    /// ROIs flagged as leaving their condyle.
    pub fn warnings(&self) -> impl Iterator<Item = &OrientedRect> {
        self.rois.iter().filter(|r| r.out_of_bone)
    }
}

/// Resample `roi` from `image` on a 1-px grid along its axes with bilinear
/// interpolation, rounding to the nearest integer intensity.
pub fn extract_patch(image: &Image16, roi: &OrientedRect) -> Result<Patch> {
    let (gw, gh) = roi.grid_size();
    let out_of_bounds = || Error::RoiOutOfBounds {
        roi: roi.name,
        width: image.width(),
        height: image.height(),
    };
    if gw == 0 || gh == 0 {
        return Err(out_of_bounds());
    }
    const EPS: f64 = 1e-9;
    let max_x = (image.width() - 1) as f64 + EPS;
    let max_y = (image.height() - 1) as f64 + EPS;
    let last = [
        roi.local_to_image(0.0, 0.0),
        roi.local_to_image((gw - 1) as f64, 0.0),
        roi.local_to_image(0.0, (gh - 1) as f64),
        roi.local_to_image((gw - 1) as f64, (gh - 1) as f64),
    ];
    if last
        .iter()
        .any(|p| !(p.x >= -EPS && p.y >= -EPS && p.x <= max_x && p.y <= max_y))
    {
        return Err(out_of_bounds());
    }
    let mut pixels = Vec::with_capacity(gw * gh);
    for t in 0..gh {
        for s in 0..gw {
            let p = roi.local_to_image(s as f64, t as f64);
            let v = image.sample_bilinear(p.x, p.y).round();
            pixels.push(v.clamp(0.0, f64::from(MAX_INTENSITY)) as u16);
        }
    }
    Ok(Patch::new(gw, gh, pixels)?.with_roi(roi.name))
}
