//! Seeded long-tailed relation data.
//!
//! Predicate classes follow a Zipf law over their index (class 1 is the most
//! frequent). Each class owns a unit-norm prototype in feature space; union
//! features are the prototype plus isotropic Gaussian noise. A configured
//! *similar pair* `(frequent, rare, delta)` places the rare prototype at
//! distance `delta` from the frequent one, which reproduces the confusion
//! between a common predicate and a rare near-synonym.
//!
//! Every image draws from its own ChaCha stream derived from
//! `(seed, split, image index)`, so output does not depend on generation
//! order.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetHeader, ImageRecord, ObjectInstance, RelationInstance, FORMAT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarPair {
    pub frequent: usize,
    pub rare: usize,
    pub delta: f32,
}

impl FromStr for SimilarPair {
    type Err = DataError;

    /// `F:R:delta`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || DataError::Config(format!("similar pair '{s}' must look like F:R:delta"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Self {
            frequent: parts[0].parse().map_err(|_| bad())?,
            rare: parts[1].parse().map_err(|_| bad())?,
            delta: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_images: usize,
    pub num_test_images: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of positive relations per image (capped by the
    /// number of ordered pairs).
    pub relations_per_image: (usize, usize),
    pub num_object_classes: usize,
    /// Number of positive predicate classes; the header adds class 0.
    pub num_predicates: usize,
    pub zipf_s: f64,
    pub d_v: usize,
    /// Per-coordinate standard deviation of union-feature noise.
    pub noise: f32,
    /// Per-coordinate standard deviation of object visual-feature noise.
    pub object_noise: f32,
    pub similar_pairs: Vec<SimilarPair>,
    /// Negative (class 0) candidate pairs per positive relation.
    pub neg_frac: f32,
    /// Multiplier applied to every emitted visual and union feature.
    pub feature_scale: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_images: 2000,
            num_test_images: 500,
            objects_per_image: (4, 8),
            relations_per_image: (3, 8),
            num_object_classes: 20,
            num_predicates: 50,
            zipf_s: 1.5,
            d_v: 32,
            noise: 0.2,
            object_noise: 0.15,
            similar_pairs: vec![
                SimilarPair { frequent: 1, rare: 20, delta: 0.3 },
                SimilarPair { frequent: 2, rare: 25, delta: 0.3 },
                SimilarPair { frequent: 3, rare: 30, delta: 0.3 },
            ],
            neg_frac: 0.25,
            feature_scale: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        let (omin, omax) = self.objects_per_image;
        let (rmin, rmax) = self.relations_per_image;
        if omin < 2 || omin > omax {
            return err(format!("objects per image range {omin}..={omax} must satisfy 2 <= min <= max"));
        }
        if rmin < 1 || rmin > rmax {
            return err(format!("relations per image range {rmin}..={rmax} must satisfy 1 <= min <= max"));
        }
        if self.num_object_classes == 0 || self.num_predicates == 0 || self.d_v == 0 {
            return err("class counts and d_v must be positive".into());
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return err(format!("zipf exponent must be finite and non-negative, got {}", self.zipf_s));
        }
        if !(self.noise >= 0.0 && self.object_noise >= 0.0) {
            return err("noise scales must be non-negative".into());
        }
        if !(self.neg_frac >= 0.0 && self.neg_frac.is_finite()) {
            return err("neg_frac must be non-negative".into());
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return err(format!("feature_scale must be positive, got {}", self.feature_scale));
        }
        for p in &self.similar_pairs {
            if !(p.delta > 0.0 && p.delta.is_finite()) {
                return err(format!("similar pair {}:{} needs delta > 0", p.frequent, p.rare));
            }
            let range = 1..=self.num_predicates;
            if !range.contains(&p.frequent) || !range.contains(&p.rare) || p.frequent == p.rare {
                return err(format!(
                    "similar pair {}:{} must name two distinct classes in 1..={}",
                    p.frequent, p.rare, self.num_predicates
                ));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: FORMAT_VERSION,
            d_v: self.d_v,
            num_object_classes: self.num_object_classes,
            num_predicate_classes: self.num_predicates + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Class prototypes shared by every split generated from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub objects: Vec<Vec<f32>>,
    /// Indexed by predicate class; row 0 is unused.
    pub predicates: Vec<Vec<f32>>,
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Prototypes {
    pub fn sample(cfg: &GeneratorConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let objects = (0..cfg.num_object_classes).map(|_| unit_gaussian(&mut rng, cfg.d_v)).collect();
        let mut predicates: Vec<Vec<f32>> = std::iter::once(vec![0.0; cfg.d_v])
            .chain((0..cfg.num_predicates).map(|_| unit_gaussian(&mut rng, cfg.d_v)))
            .collect();
        for p in &cfg.similar_pairs {
            let dir = unit_gaussian(&mut rng, cfg.d_v);
            predicates[p.rare] = predicates[p.frequent]
                .iter()
                .zip(&dir)
                .map(|(f, d)| f + p.delta * d)
                .collect();
        }
        Self { objects, predicates }
    }
}

fn noisy<R: Rng + ?Sized>(rng: &mut R, center: &[f32], sigma: f32, scale: f32) -> Vec<f32> {
    center
        .iter()
        .map(|&c| {
            let n: f64 = rng.sample(StandardNormal);
            scale * (c + sigma * n as f32)
        })
        .collect()
}

fn sample_bbox<R: Rng + ?Sized>(rng: &mut R) -> [f32; 4] {
    let x1: f32 = rng.random_range(0.0..0.7);
    let y1: f32 = rng.random_range(0.0..0.7);
    let x2 = x1 + rng.random_range(0.05..(1.0 - x1));
    let y2 = y1 + rng.random_range(0.05..(1.0 - y1));
    [x1, y1, x2.min(1.0), y2.min(1.0)]
}

fn generate_image(cfg: &GeneratorConfig, protos: &Prototypes, zipf: &Zipf<f64>, seed: u64, split: Split, index: usize) -> ImageRecord {
    let mut rng = stream_rng(seed, (split.tag() << 32) | index as u64);
    let n_obj = rng.random_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
    let objects: Vec<ObjectInstance> = (0..n_obj)
        .map(|_| {
            let label = rng.random_range(0..cfg.num_object_classes);
            ObjectInstance {
                label,
                bbox: sample_bbox(&mut rng),
                visual: noisy(&mut rng, &protos.objects[label], cfg.object_noise, cfg.feature_scale),
            }
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..n_obj)
        .flat_map(|i| (0..n_obj).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    let max_pos = cfg.relations_per_image.1.min(pairs.len());
    let min_pos = cfg.relations_per_image.0.min(max_pos);
    let n_pos = rng.random_range(min_pos..=max_pos);
    let n_neg = ((n_pos as f32 * cfg.neg_frac).round() as usize).min(pairs.len() - n_pos);

    let mut relations = Vec::with_capacity(n_pos + n_neg);
    for &(subj, obj) in &pairs[..n_pos] {
        let predicate = (zipf.sample(&mut rng) as usize).clamp(1, cfg.num_predicates);
        relations.push(RelationInstance {
            subj,
            obj,
            predicate,
            union: noisy(&mut rng, &protos.predicates[predicate], cfg.noise, cfg.feature_scale),
        });
    }
    for &(subj, obj) in &pairs[n_pos..n_pos + n_neg] {
        let background = unit_gaussian(&mut rng, cfg.d_v);
        relations.push(RelationInstance {
            subj,
            obj,
            predicate: 0,
            union: noisy(&mut rng, &background, cfg.noise, cfg.feature_scale),
        });
    }
    relations.sort_by_key(|r| (r.subj, r.obj));
    ImageRecord {
        image_id: format!("{}-{index:05}", split.prefix()),
        objects,
        relations,
    }
}

/// Generates `num_images` records of one split.
pub fn generate_split(cfg: &GeneratorConfig, seed: u64, split: Split, num_images: usize) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let protos = Prototypes::sample(cfg, seed);
    let zipf = Zipf::new(cfg.num_predicates as f64, cfg.zipf_s).map_err(|e| DataError::Config(format!("zipf: {e}")))?;
    let images = (0..num_images)
        .map(|i| generate_image(cfg, &protos, &zipf, seed, split, i))
        .collect();
    Ok(Dataset {
        header: cfg.header(),
        images,
    })
}

/// Train and test splits sharing one set of prototypes.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let train = generate_split(cfg, seed, Split::Train, cfg.num_images)?;
    let test = generate_split(cfg, seed, Split::Test, cfg.num_test_images)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::compute_frequency_table;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_images: 60,
            num_test_images: 20,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn output_satisfies_record_invariants() {
        let (train, test) = generate_synthetic(&small(), 7).unwrap();
        for img in train.images.iter().chain(&test.images) {
            img.validate(&train.header).unwrap();
        }
        assert!(train.images.iter().any(|im| im.relations.iter().any(|r| r.predicate == 0)));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let (a, _) = generate_synthetic(&small(), 11).unwrap();
        let (b, _) = generate_synthetic(&small(), 11).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let (c, _) = generate_synthetic(&small(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn image_streams_are_independent_of_count() {
        let cfg = small();
        let short = generate_split(&cfg, 5, Split::Train, 10).unwrap();
        let long = generate_split(&cfg, 5, Split::Train, 30).unwrap();
        assert_eq!(short.images[..], long.images[..10]);
    }

    #[test]
    fn similar_pair_prototypes_are_delta_apart() {
        let cfg = small();
        let p = Prototypes::sample(&cfg, 3);
        for sp in &cfg.similar_pairs {
            let d: f32 = p.predicates[sp.frequent]
                .iter()
                .zip(&p.predicates[sp.rare])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                .sqrt();
            assert!((d - sp.delta).abs() < 1e-5, "{d}");
        }
    }

    #[test]
    fn noiseless_data_is_nearest_prototype_separable() {
        let cfg = GeneratorConfig {
            noise: 0.0,
            similar_pairs: vec![],
            ..small()
        };
        let protos = Prototypes::sample(&cfg, 9);
        let (train, _) = generate_synthetic(&cfg, 9).unwrap();
        let mut total = 0;
        for r in train.images.iter().flat_map(|im| im.positive_relations()) {
            let best = (1..=cfg.num_predicates)
                .min_by(|&a, &b| {
                    let da: f32 = protos.predicates[a].iter().zip(&r.union).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f32 = protos.predicates[b].iter().zip(&r.union).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(best, r.predicate);
            total += 1;
        }
        assert!(total > 100);
    }

    #[test]
    fn zipf_marginal_is_long_tailed() {
        // roughly 20k relations
        let cfg = GeneratorConfig {
            num_images: 3700,
            ..GeneratorConfig::default()
        };
        let ds = generate_split(&cfg, 21, Split::Train, cfg.num_images).unwrap();
        let freq = compute_frequency_table(&ds.images, ds.header.num_predicate_classes);
        let total = freq.total() as f64;
        assert!(total >= 19_000.0, "{total}");
        let mut sorted: Vec<u64> = freq.counts[1..].to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
        let median = sorted[sorted.len() / 2];
        assert!(sorted[0] > 10 * median, "head {} median {median}", sorted[0]);

        let norm: f64 = (1..=cfg.num_predicates).map(|k| (k as f64).powf(-cfg.zipf_s)).sum();
        for k in 1..=5 {
            let expected = (k as f64).powf(-cfg.zipf_s) / norm;
            let observed = freq.counts[k] as f64 / total;
            let dev = (observed - expected).abs() / expected;
            assert!(dev < 0.15, "class {k}: observed {observed:.4} expected {expected:.4}");
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = small();
        c.similar_pairs[0].delta = 0.0;
        assert!(matches!(c.validate(), Err(DataError::Config(_))));
        let mut c = small();
        c.noise = -0.1;
        assert!(c.validate().is_err());
        let mut c = small();
        c.objects_per_image = (5, 3);
        assert!(c.validate().is_err());
        let mut c = small();
        c.relations_per_image = (0, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn parses_similar_pairs() {
        let p: SimilarPair = "1:20:0.3".parse().unwrap();
        assert_eq!((p.frequent, p.rare), (1, 20));
        assert!((p.delta - 0.3).abs() < 1e-7);
        assert!("1:20".parse::<SimilarPair>().is_err());
    }
}
