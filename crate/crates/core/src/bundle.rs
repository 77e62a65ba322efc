//! Embedding-bundle input format.
//!
//! A bundle is a directory holding `manifest.json` plus `embeddings.f32`
//! (raw little-endian IEEE-754 32-bit floats, concatenated vectors). It
//! carries the precomputed frame/keyword/object embeddings that stand in
//! for frozen pretrained encoder outputs. Every manifest `offset` is an
//! element index into the blob; a vector occupies `dim` consecutive
//! elements. All in-memory computation happens in the loaded scalar type
//! (`f64` for the CLI).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "embeddings.f32";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("dimension mismatch: {context} (expected {expected} elements, found {found})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("dangling reference: offset {offset} outside blob of {blob_len} elements ({context})")]
    DanglingReference {
        context: String,
        offset: usize,
        blob_len: usize,
    },
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

/// One detected object: class name, normalized bounding box, embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEntity<T> {
    pub class_name: String,
    /// `[x1, y1, x2, y2]`, normalized to `[0, 1]`, `x1 <= x2`, `y1 <= y2`.
    pub bbox: [f64; 4],
    pub embedding: Vec<T>,
}

/// One frame: 1-based index, frame embedding, detected objects.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord<T> {
    pub t: usize,
    pub embedding: Vec<T>,
    pub objects: Vec<ObjectEntity<T>>,
}

/// One video with its weak (video-level) label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord<T> {
    pub id: String,
    pub label_index: usize,
    pub frames: Vec<FrameRecord<T>>,
}

/// A keyword relation type with its text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordRelation<T> {
    pub id: String,
    pub text: String,
    pub embedding: Vec<T>,
    pub source_label_index: usize,
}

/// The full embedding bundle. The non-violence class is the last entry of
/// `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle<T> {
    pub dim: usize,
    pub class_names: Vec<String>,
    pub keywords: Vec<KeywordRelation<T>>,
    pub videos: Vec<VideoRecord<T>>,
}

impl<T: Real> EmbeddingBundle<T> {
    /// Check every structural invariant; malformed bundles never escape
    /// the loader or the generator.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.dim == 0 {
            return Err(BundleError::MalformedManifest("dim must be positive".into()));
        }
        if self.class_names.len() < 2 {
            return Err(BundleError::MalformedManifest(
                "class_names needs at least 2 entries".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                return Err(BundleError::MalformedManifest(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        let mut kw_ids = HashSet::new();
        for kw in &self.keywords {
            if !kw_ids.insert(kw.id.as_str()) {
                return Err(BundleError::MalformedManifest(format!(
                    "duplicate keyword id {:?}",
                    kw.id
                )));
            }
            if kw.source_label_index >= self.class_names.len() {
                return Err(BundleError::MalformedManifest(format!(
                    "keyword {:?} references class index {} out of range",
                    kw.id, kw.source_label_index
                )));
            }
            check_vector(&kw.embedding, self.dim, &format!("keyword {:?}", kw.id))?;
        }
        for video in &self.videos {
            if video.label_index >= self.class_names.len() {
                return Err(BundleError::MalformedManifest(format!(
                    "video {:?} label index {} out of range",
                    video.id, video.label_index
                )));
            }
            if video.frames.is_empty() {
                return Err(BundleError::MalformedManifest(format!(
                    "video {:?} has no frames",
                    video.id
                )));
            }
            for (pos, frame) in video.frames.iter().enumerate() {
                if frame.t != pos + 1 {
                    return Err(BundleError::MalformedManifest(format!(
                        "video {:?}: frame indices must run 1..=T, found {} at position {}",
                        video.id,
                        frame.t,
                        pos + 1
                    )));
                }
                let ctx = format!("video {:?} frame {}", video.id, frame.t);
                check_vector(&frame.embedding, self.dim, &ctx)?;
                for (i, obj) in frame.objects.iter().enumerate() {
                    let [x1, y1, x2, y2] = obj.bbox;
                    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
                    if !(in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2))
                        || x1 > x2
                        || y1 > y2
                    {
                        return Err(BundleError::MalformedManifest(format!(
                            "{ctx} object {i}: invalid bbox {:?}",
                            obj.bbox
                        )));
                    }
                    check_vector(&obj.embedding, self.dim, &format!("{ctx} object {i}"))?;
                }
            }
        }
        Ok(())
    }

    /// Frame count of video `v`.
    pub fn frame_count(&self, video_index: usize) -> usize {
        self.videos[video_index].frames.len()
    }

    /// Indices of keywords whose source label is `label_index`.
    pub fn keywords_of_class(&self, label_index: usize) -> Vec<usize> {
        self.keywords
            .iter()
            .enumerate()
            .filter(|(_, kw)| kw.source_label_index == label_index)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the non-violence class (last entry by contract).
    pub fn normal_class_index(&self) -> usize {
        self.class_names.len() - 1
    }
}

fn check_vector<T: Real>(v: &[T], dim: usize, context: &str) -> Result<(), BundleError> {
    if v.len() != dim {
        return Err(BundleError::DimensionMismatch {
            context: context.to_string(),
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(BundleError::NonFiniteValue(context.to_string()));
    }
    Ok(())
}

// --- manifest (on-disk JSON schema) ---

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    class_names: Vec<String>,
    keywords: Vec<ManifestKeyword>,
    videos: Vec<ManifestVideo>,
}

#[derive(Serialize, Deserialize)]
struct ManifestKeyword {
    id: String,
    text: String,
    source_label_index: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    label_index: usize,
    frames: Vec<ManifestFrame>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    t: usize,
    offset: usize,
    objects: Vec<ManifestObject>,
}

#[derive(Serialize, Deserialize)]
struct ManifestObject {
    class_name: String,
    bbox: [f64; 4],
    offset: usize,
}

struct Blob(Vec<f32>);

impl Blob {
    fn fetch<T: Real>(&self, offset: usize, dim: usize, context: &str) -> Result<Vec<T>, BundleError> {
        if offset >= self.0.len() && !(offset == 0 && dim == 0) {
            return Err(BundleError::DanglingReference {
                context: context.to_string(),
                offset,
                blob_len: self.0.len(),
            });
        }
        if offset + dim > self.0.len() {
            return Err(BundleError::DimensionMismatch {
                context: context.to_string(),
                expected: dim,
                found: self.0.len() - offset,
            });
        }
        let slice = &self.0[offset..offset + dim];
        if slice.iter().any(|x| !x.is_finite()) {
            return Err(BundleError::NonFiniteValue(context.to_string()));
        }
        Ok(slice
            .iter()
            .map(|&x| T::from_f32(x).expect("f32 widens into scalar type"))
            .collect())
    }
}

/// Load and validate a bundle directory.
pub fn load_bundle<T: Real>(path: &Path) -> Result<EmbeddingBundle<T>, BundleError> {
    let manifest_bytes = fs::read(path.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| BundleError::MalformedManifest(e.to_string()))?;

    let blob_bytes = fs::read(path.join(BLOB_FILE))?;
    if blob_bytes.len() % 4 != 0 {
        return Err(BundleError::MalformedManifest(format!(
            "embeddings.f32 length {} is not a multiple of 4",
            blob_bytes.len()
        )));
    }
    let blob = Blob(
        blob_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    );

    let dim = manifest.dim;
    let keywords = manifest
        .keywords
        .into_iter()
        .map(|kw| {
            let embedding = blob.fetch(kw.offset, dim, &format!("keyword {:?}", kw.id))?;
            Ok(KeywordRelation {
                id: kw.id,
                text: kw.text,
                embedding,
                source_label_index: kw.source_label_index,
            })
        })
        .collect::<Result<Vec<_>, BundleError>>()?;

    let videos = manifest
        .videos
        .into_iter()
        .map(|video| {
            let frames = video
                .frames
                .into_iter()
                .map(|frame| {
                    let ctx = format!("video {:?} frame {}", video.id, frame.t);
                    let embedding = blob.fetch(frame.offset, dim, &ctx)?;
                    let objects = frame
                        .objects
                        .into_iter()
                        .enumerate()
                        .map(|(i, obj)| {
                            let embedding =
                                blob.fetch(obj.offset, dim, &format!("{ctx} object {i}"))?;
                            Ok(ObjectEntity {
                                class_name: obj.class_name,
                                bbox: obj.bbox,
                                embedding,
                            })
                        })
                        .collect::<Result<Vec<_>, BundleError>>()?;
                    Ok(FrameRecord {
                        t: frame.t,
                        embedding,
                        objects,
                    })
                })
                .collect::<Result<Vec<_>, BundleError>>()?;
            Ok(VideoRecord {
                id: video.id,
                label_index: video.label_index,
                frames,
            })
        })
        .collect::<Result<Vec<_>, BundleError>>()?;

    let bundle = EmbeddingBundle {
        dim,
        class_names: manifest.class_names,
        keywords,
        videos,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Write a bundle directory that `load_bundle` reads back to an equal
/// bundle. Vectors are laid out in canonical order: keywords first, then
/// per video each frame embedding followed by its object embeddings.
pub fn write_bundle<T: Real>(bundle: &EmbeddingBundle<T>, path: &Path) -> Result<(), BundleError> {
    bundle.validate()?;
    let mut blob: Vec<f32> = Vec::new();
    let mut overflowed = false;
    let mut push = |v: &[T]| -> usize {
        let offset = blob.len();
        for x in v {
            // values outside f32 range would silently become inf on disk
            let as_f32 = x.to_f32().unwrap_or(f32::INFINITY);
            overflowed |= !as_f32.is_finite();
            blob.push(as_f32);
        }
        offset
    };

    let keywords = bundle
        .keywords
        .iter()
        .map(|kw| ManifestKeyword {
            id: kw.id.clone(),
            text: kw.text.clone(),
            source_label_index: kw.source_label_index,
            offset: push(&kw.embedding),
        })
        .collect();
    let videos = bundle
        .videos
        .iter()
        .map(|video| ManifestVideo {
            id: video.id.clone(),
            label_index: video.label_index,
            frames: video
                .frames
                .iter()
                .map(|frame| ManifestFrame {
                    t: frame.t,
                    offset: push(&frame.embedding),
                    objects: frame
                        .objects
                        .iter()
                        .map(|obj| ManifestObject {
                            class_name: obj.class_name.clone(),
                            bbox: obj.bbox,
                            offset: push(&obj.embedding),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();

    let manifest = Manifest {
        dim: bundle.dim,
        class_names: bundle.class_names.clone(),
        keywords,
        videos,
    };
    if overflowed {
        return Err(BundleError::NonFiniteValue(
            "an embedding value exceeds the f32 range of the blob format".into(),
        ));
    }

    fs::create_dir_all(path)?;
    let manifest_json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| BundleError::MalformedManifest(e.to_string()))?;
    fs::write(path.join(MANIFEST_FILE), manifest_json)?;
    let mut bytes = Vec::with_capacity(blob.len() * 4);
    for x in &blob {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path.join(BLOB_FILE), bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> EmbeddingBundle<f64> {
        EmbeddingBundle {
            dim: 4,
            class_names: vec!["class_0".into(), "normal".into()],
            keywords: vec![KeywordRelation {
                id: "kw_0".into(),
                text: "scene with class_0".into(),
                embedding: vec![0.5, -1.0, 2.0, 0.0],
                source_label_index: 0,
            }],
            videos: vec![VideoRecord {
                id: "video_000".into(),
                label_index: 0,
                frames: vec![FrameRecord {
                    t: 1,
                    embedding: vec![1.0, 2.0, 3.0, 4.0],
                    objects: vec![],
                }],
            }],
        }
    }

    #[test]
    fn minimal_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = tiny_bundle();
        write_bundle(&bundle, dir.path()).unwrap();
        let loaded: EmbeddingBundle<f64> = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
        assert_eq!(loaded.videos[0].frames.len(), 1);
    }

    #[test]
    fn two_videos_sixteen_frames_round_trip() {
        use crate::synth::{generate_synthetic_bundle, SynthSpec};
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            num_videos: 2,
            frames_per_video: 16,
            dim: 16,
            num_classes: 2,
            class_separation: 3.0,
            objects_per_frame: 1,
        };
        let bundle = generate_synthetic_bundle::<f64>(3, &spec).unwrap();
        write_bundle(&bundle, dir.path()).unwrap();
        let loaded: EmbeddingBundle<f64> = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, bundle);
    }

    #[test]
    fn short_vector_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "dim": 8,
            "class_names": ["a", "b"],
            "keywords": [{"id": "k", "text": "t", "source_label_index": 0, "offset": 0}],
            "videos": []
        });
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();
        // blob holds only 7 floats where the manifest implies 8
        let blob: Vec<u8> = (0..7).flat_map(|i| (i as f32).to_le_bytes()).collect();
        fs::write(dir.path().join(BLOB_FILE), blob).unwrap();
        match load_bundle::<f64>(dir.path()) {
            Err(BundleError::DimensionMismatch { expected: 8, found: 7, .. }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn offset_past_blob_is_dangling() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "dim": 2,
            "class_names": ["a", "b"],
            "keywords": [{"id": "k", "text": "t", "source_label_index": 0, "offset": 10}],
            "videos": []
        });
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();
        fs::write(dir.path().join(BLOB_FILE), 1.0f32.to_le_bytes()).unwrap();
        assert!(matches!(
            load_bundle::<f64>(dir.path()),
            Err(BundleError::DanglingReference { offset: 10, .. })
        ));
    }

    #[test]
    fn non_finite_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "dim": 1,
            "class_names": ["a", "b"],
            "keywords": [{"id": "k", "text": "t", "source_label_index": 0, "offset": 0}],
            "videos": []
        });
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();
        fs::write(dir.path().join(BLOB_FILE), f32::NAN.to_le_bytes()).unwrap();
        assert!(matches!(
            load_bundle::<f64>(dir.path()),
            Err(BundleError::NonFiniteValue(_))
        ));
    }

    #[test]
    fn garbled_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), b"{not json").unwrap();
        fs::write(dir.path().join(BLOB_FILE), []).unwrap();
        assert!(matches!(
            load_bundle::<f64>(dir.path()),
            Err(BundleError::MalformedManifest(_))
        ));
    }

    #[test]
    fn values_beyond_f32_range_rejected_at_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut bundle = tiny_bundle();
        bundle.videos[0].frames[0].embedding[0] = 1e300;
        assert!(matches!(
            write_bundle(&bundle, dir.path()),
            Err(BundleError::NonFiniteValue(_))
        ));
    }

    #[test]
    fn write_to_impossible_location_fails() {
        // parent is a file, so the directory cannot be created even as root
        let err = write_bundle(&tiny_bundle(), Path::new("/proc/version/bundle")).unwrap_err();
        assert!(matches!(err, BundleError::IoFailure(_)));
    }

    #[test]
    fn frame_indices_must_be_consecutive() {
        let mut bundle = tiny_bundle();
        bundle.videos[0].frames[0].t = 2;
        assert!(matches!(
            bundle.validate(),
            Err(BundleError::MalformedManifest(_))
        ));
    }

    #[test]
    fn bad_bbox_rejected() {
        let mut bundle = tiny_bundle();
        bundle.videos[0].frames[0].objects.push(ObjectEntity {
            class_name: "person".into(),
            bbox: [0.9, 0.1, 0.2, 0.3],
            embedding: vec![0.0; 4],
        });
        assert!(bundle.validate().is_err());
    }
}
