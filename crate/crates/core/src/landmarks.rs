//! Landmark JSON files: one object (or an array of objects) per image.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{AxisInterval, Label, LandmarkSet, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub landmarks: LandmarkSet,
    /// Image path as written in the file, relative to the file's directory.
    pub image: PathBuf,
}

impl LandmarkRecord {
    pub fn resolve_image(&self, json_dir: &Path) -> PathBuf {
        json_dir.join(&self.image)
    }

    pub fn to_json(&self) -> Value {
        let lm = &self.landmarks;
        let pt = |p: Point| json!([p.x, p.y]);
        let iv = |i: AxisInterval| json!([i.lo, i.hi]);
        json!({
            "subject_id": lm.subject_id,
            "medial_plateau": pt(lm.medial_plateau),
            "lateral_plateau": pt(lm.lateral_plateau),
            "medial_condyle_tip": pt(lm.medial_condyle_tip),
            "lateral_condyle_tip": pt(lm.lateral_condyle_tip),
            "medial_condyle_extent": iv(lm.medial_condyle_extent),
            "lateral_condyle_extent": iv(lm.lateral_condyle_extent),
            "pixel_spacing_mm": lm.pixel_spacing,
            "laterality": lm.laterality.code(),
            "label": match lm.label {
                Label::Case => json!("case"),
                Label::Control => json!("control"),
                Label::Unlabeled => Value::Null,
            },
            "image": self.image.to_string_lossy(),
        })
    }
}

/// Parses a landmark file's contents. A top-level array yields one record
/// per element; subjects without a `subject_id` key are named after
/// `fallback_id` (suffixed with the array index for arrays).
pub fn parse_landmarks(text: &str, fallback_id: &str) -> Result<Vec<LandmarkRecord>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("landmark file `{fallback_id}`"), e.to_string()))?;
    match value {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_record(v, &format!("{fallback_id}_{i}")))
            .collect(),
        v => Ok(vec![parse_record(&v, fallback_id)?]),
    }
}

pub fn read_landmark_file(path: &Path) -> Result<Vec<LandmarkRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().map_or_else(|| "subject".into(), |s| s.to_string_lossy().into_owned());
    parse_landmarks(&text, &stem)
}

fn parse_record(value: &Value, fallback_id: &str) -> Result<LandmarkRecord> {
    let obj = value.as_object().ok_or_else(|| {
        Error::parse(format!("landmarks for subject `{fallback_id}`"), "expected a JSON object")
    })?;
    let subject = match obj.get("subject_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => fallback_id.to_owned(),
    };
    let fields = Fields { obj, subject: &subject };
    let landmarks = LandmarkSet {
        medial_plateau: fields.pair("medial_plateau")?.into(),
        lateral_plateau: fields.pair("lateral_plateau")?.into(),
        medial_condyle_tip: fields.pair("medial_condyle_tip")?.into(),
        lateral_condyle_tip: fields.pair("lateral_condyle_tip")?.into(),
        medial_condyle_extent: {
            let [lo, hi] = fields.pair("medial_condyle_extent")?;
            AxisInterval::new(lo, hi)
        },
        lateral_condyle_extent: {
            let [lo, hi] = fields.pair("lateral_condyle_extent")?;
            AxisInterval::new(lo, hi)
        },
        pixel_spacing: fields.number("pixel_spacing_mm")?,
        laterality: fields
            .string("laterality")?
            .parse()
            .map_err(|e: Error| fields.error(format!("key `laterality`: {e}")))?,
        label: match fields.get("label")? {
            Value::Null => Label::Unlabeled,
            Value::String(s) if s == "case" => Label::Case,
            Value::String(s) if s == "control" => Label::Control,
            other => return Err(fields.error(format!("key `label`: expected \"case\", \"control\" or null, got {other}"))),
        },
        subject_id: subject.clone(),
    };
    landmarks.validate()?;
    Ok(LandmarkRecord {
        landmarks,
        image: PathBuf::from(fields.string("image")?),
    })
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    subject: &'a str,
}

impl Fields<'_> {
    fn error(&self, message: String) -> Error {
        Error::parse(format!("landmarks for subject `{}`", self.subject), message)
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.obj.get(key).ok_or_else(|| self.error(format!("missing key `{key}`")))
    }

    fn number(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| self.error(format!("key `{key}` must be a number")))
    }

    fn string(&self, key: &str) -> Result<&str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| self.error(format!("key `{key}` must be a string")))
    }

    fn pair(&self, key: &str) -> Result<[f64; 2]> {
        match self.get(key)?.as_array().map(|a| a.as_slice()) {
            Some([a, b]) => match (a.as_f64(), b.as_f64()) {
                (Some(a), Some(b)) => Ok([a, b]),
                _ => Err(self.error(format!("key `{key}` must hold two numbers"))),
            },
            _ => Err(self.error(format!("key `{key}` must be a two-element array"))),
        }
    }
}
