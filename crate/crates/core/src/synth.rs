//! Deterministic synthetic bundle generator.
//!
//! Builds Gaussian class clouds around separated centroids so that the
//! overfit-style end-to-end checks are achievable by construction. All
//! values are quantized to f32 before storage, so generated bundles
//! round-trip bit-exactly through the on-disk format.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bundle::{
    BundleError, EmbeddingBundle, FrameRecord, KeywordRelation, ObjectEntity, VideoRecord,
};
use crate::scalar::Real;

/// Shape of a synthetic bundle.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub dim: usize,
    /// Total class count including the trailing non-violence class.
    pub num_classes: usize,
    /// Lower bound on pairwise centroid distance.
    pub class_separation: f64,
    pub objects_per_frame: usize,
}

/// Noise scales relative to nothing in particular: absolute standard
/// deviations in embedding space.
const FRAME_NOISE: f64 = 0.25;
const OBJECT_NOISE: f64 = 0.25;
const KEYWORD_NOISE: f64 = 0.05;
/// Centroids are rescaled so the minimum pairwise distance lands slightly
/// above the requested separation; the slack keeps empirical class-mean
/// distances above the bound too.
const SEPARATION_SLACK: f64 = 1.05;

const OBJECT_VOCAB: [&str; 8] = [
    "person", "car", "bag", "door", "window", "phone", "bottle", "chair",
];

/// Generate a bundle deterministically from `(seed, spec)`.
pub fn generate_synthetic_bundle<T: Real>(
    seed: u64,
    spec: &SynthSpec,
) -> Result<EmbeddingBundle<T>, BundleError> {
    if spec.num_videos == 0
        || spec.frames_per_video == 0
        || spec.dim == 0
        || spec.objects_per_frame == 0
    {
        return Err(BundleError::InvalidSpec("all counts must be >= 1".into()));
    }
    if spec.num_classes < 2 {
        return Err(BundleError::InvalidSpec(
            "need at least 2 classes (one violence class plus the non-violence class)".into(),
        ));
    }
    if !(spec.class_separation >= 0.0 && spec.class_separation.is_finite()) {
        return Err(BundleError::InvalidSpec(
            "class_separation must be finite and >= 0".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim;
    let k = spec.num_classes;

    let centroids = draw_centroids(&mut rng, k, d, spec.class_separation)?;

    let mut class_names: Vec<String> = (0..k - 1).map(|c| format!("class_{c}")).collect();
    class_names.push("normal".into());

    // one keyword per class, sitting on the class centroid plus noise
    let keywords = (0..k)
        .map(|c| KeywordRelation {
            id: format!("kw_{c}"),
            text: format!("scene involving {}", class_names[c]),
            embedding: noisy_vector(&mut rng, &centroids[c], KEYWORD_NOISE),
            source_label_index: c,
        })
        .collect();

    let mut videos = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let label = v % k;
        let mut frames = Vec::with_capacity(spec.frames_per_video);
        for t in 1..=spec.frames_per_video {
            let embedding = noisy_vector(&mut rng, &centroids[label], FRAME_NOISE);
            let mut objects = Vec::with_capacity(spec.objects_per_frame);
            for o in 0..spec.objects_per_frame {
                let x1: f64 = rng.gen_range(0.0..0.5);
                let y1: f64 = rng.gen_range(0.0..0.5);
                let x2 = (x1 + rng.gen_range(0.05..0.5)).min(1.0);
                let y2 = (y1 + rng.gen_range(0.05..0.5)).min(1.0);
                objects.push(ObjectEntity {
                    class_name: OBJECT_VOCAB[(v + t + o) % OBJECT_VOCAB.len()].into(),
                    bbox: [x1, y1, x2, y2],
                    embedding: noisy_vector(&mut rng, &centroids[label], OBJECT_NOISE),
                });
            }
            frames.push(FrameRecord {
                t,
                embedding,
                objects,
            });
        }
        videos.push(VideoRecord {
            id: format!("video_{v:03}"),
            label_index: label,
            frames,
        });
    }

    let bundle = EmbeddingBundle {
        dim: d,
        class_names,
        keywords,
        videos,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn draw_centroids(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    separation: f64,
) -> Result<Vec<Vec<f64>>, BundleError> {
    if separation == 0.0 {
        // degenerate by request: all centroids coincide
        return Ok(vec![vec![0.0; d]; k]);
    }
    let mut centroids: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let dist = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    if !min_dist.is_finite() || min_dist <= 0.0 {
        return Err(BundleError::InvalidSpec(
            "degenerate centroid draw; try another seed".into(),
        ));
    }
    let scale = separation * SEPARATION_SLACK / min_dist;
    for c in &mut centroids {
        for x in c {
            *x *= scale;
        }
    }
    Ok(centroids)
}

fn noisy_vector<T: Real>(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<T> {
    center
        .iter()
        .map(|&c| {
            let x = c + sigma * rng.sample::<f64, _>(StandardNormal);
            // quantize to f32 so the on-disk format is lossless
            T::from_f32(x as f32).expect("f32 widens into scalar type")
        })
        .collect()
}
