//! Image-to-features driver: one subject at a time or a whole directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{mirror_for_laterality, LandmarkSet, Laterality, OrientedRect, RoiLayout};
use crate::landmarks::read_landmark_file;
use crate::matrix::FeatureMatrix;
use crate::raster::Image16;
use crate::texture::{feature_vector, FeatureVector};

/// Side every knee is reflected to before layout.
pub const CANONICAL_SIDE: Laterality = Laterality::Left;

#[derive(Debug, Clone)]
pub struct SubjectFeatures {
    pub vector: FeatureVector,
    /// Layout in canonical (possibly mirrored) image coordinates.
    pub layout: RoiLayout,
    /// ROIs that run past the condyle extent.
    pub warnings: Vec<OrientedRect>,
}

/// Mirrors to `canonical` if needed, lays out the ROIs and describes them.
pub fn extract_subject(image: &Image16, landmarks: &LandmarkSet, canonical: Laterality) -> Result<SubjectFeatures> {
    landmarks.validate()?;
    let mirrored;
    let (image, landmarks) = if landmarks.laterality == canonical {
        (image, landmarks.clone())
    } else {
        mirrored = image.mirrored();
        (&mirrored, mirror_for_laterality(landmarks, image.width(), canonical))
    };
    let layout = RoiLayout::from_landmarks(&landmarks)?;
    let vector = feature_vector(image, &layout, landmarks.subject_id.clone(), landmarks.label)?;
    let warnings = layout.warnings().cloned().collect();
    Ok(SubjectFeatures { vector, layout, warnings })
}

#[derive(Debug)]
pub struct SubjectFailure {
    pub source: PathBuf,
    pub subject_id: String,
    pub error: Error,
}

#[derive(Debug)]
pub struct CohortExtraction {
    /// Successful subjects in file-name order.
    pub subjects: Vec<SubjectFeatures>,
    pub failures: Vec<SubjectFailure>,
}

impl CohortExtraction {
    /// Labeled subjects as a matrix.
    pub fn matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::from_vectors(self.subjects.iter().map(|s| &s.vector))
    }
}

/// Landmark JSON files in `dir` (sorted by name), skipping `ground_truth.json`.
pub fn landmark_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "ground_truth.json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Extracts every subject described by landmark files in `dir`. A subject
/// that fails is reported and skipped; the rest continue.
pub fn extract_cohort(dir: &Path) -> Result<CohortExtraction> {
    let files = landmark_files(dir)?;
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no landmark files in {}", dir.display())));
    }
    let per_file: Vec<Vec<std::result::Result<SubjectFeatures, SubjectFailure>>> = files
        .par_iter()
        .map(|path| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let records = match read_landmark_file(path) {
                Ok(r) => r,
                Err(error) => {
                    return vec![Err(SubjectFailure { source: path.clone(), subject_id: stem, error })];
                }
            };
            let base = path.parent().unwrap_or(Path::new("."));
            records
                .into_iter()
                .map(|rec| {
                    let id = rec.landmarks.subject_id.clone();
                    Image16::load(rec.resolve_image(base))
                        .and_then(|img| extract_subject(&img, &rec.landmarks, CANONICAL_SIDE))
                        .map_err(|error| SubjectFailure { source: path.clone(), subject_id: id, error })
                })
                .collect()
        })
        .collect();
    let mut out = CohortExtraction { subjects: Vec::new(), failures: Vec::new() };
    for r in per_file.into_iter().flatten() {
        match r {
            Ok(s) => out.subjects.push(s),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}
