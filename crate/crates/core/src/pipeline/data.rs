use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbedMode, OrderingMode, PosMode, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    apply_rigid, gen_shape, patchify, Point3, PointCloud, RigidTransform, ShapeKind,
};
use crate::geometry::xyz::{read_xyz, write_xyz};
use crate::linalg::symmetric_eigen;
use crate::spectral::{compute_embedding, EigenOptions, GraphParams, SpectralEmbedding, DEFAULT_EPSILON};
use crate::traversal::{
    axis_order, hlt_codes, hlt_orders, random_order, sast_orders, Axis, HltCode, TraversalOrder,
    WithinSegment,
};

pub const MANIFEST_FORMAT: &str = "spectral-order-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub label: usize,
}

/// `manifest.json` of a generated dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub n_points: usize,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub items: Vec<LabeledCloud>,
}

const SHAPE_NOISE: f64 = 0.01;
const POS_GAIN: f64 = 1.0;

impl Dataset {
    pub fn new(classes: Vec<String>, items: Vec<LabeledCloud>) -> Result<Self> {
        if let Some(bad) = items.iter().find(|it| it.label >= classes.len()) {
            return Err(invalid(format!(
                "dataset: label {} but only {} classes",
                bad.label,
                classes.len()
            )));
        }
        Ok(Self { classes, items })
    }

    /// `count` clouds cycling through `kinds`; label = position of the kind in
    /// `kinds`. With `augment`, each cloud gets a random rotation and a
    /// uniform scale in `[0.75, 1.25]`.
    pub fn synthetic(
        kinds: &[ShapeKind],
        count: usize,
        n_points: usize,
        seed: u64,
        augment: bool,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(invalid("dataset: at least one shape kind is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % kinds.len();
            let shape_seed: u64 = rng.random();
            let mut cloud = gen_shape(kinds[label], n_points, shape_seed, SHAPE_NOISE)?;
            if augment {
                let t = RigidTransform::random(&mut rng, 0.0);
                let scale = rng.random_range(0.75..1.25);
                cloud = apply_rigid(&cloud, &t);
                cloud = PointCloud::new(cloud.points().iter().map(|&p| p * scale).collect())?;
            }
            items.push(LabeledCloud { cloud, label });
        }
        Self::new(kinds.iter().map(|k| k.name().to_string()).collect(), items)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Writes `shape_<i>.xyz` per cloud plus `manifest.json`.
    pub fn save_dir(&self, dir: &Path, seed: u64) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.items.len());
        for (i, item) in self.items.iter().enumerate() {
            let file = format!("shape_{i}.xyz");
            write_xyz(dir.join(&file), &item.cloud)?;
            entries.push(ManifestEntry {
                file,
                kind: self.classes[item.label].clone(),
                label: item.label,
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            seed,
            n_points: self.items.first().map_or(0, |it| it.cloud.len()),
            classes: self.classes.clone(),
            entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let items = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(LabeledCloud {
                    cloud: read_xyz(dir.join(&e.file))?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.classes, items)
    }

    /// Seeded split into `(train, test)` with `round(test_fraction * n)` test items.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(invalid("dataset split: test fraction must be in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.items.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let pick = |ids: &[usize]| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            Dataset {
                classes: self.classes.clone(),
                items: ids.iter().map(|&i| self.items[i].clone()).collect(),
            }
        };
        Ok((pick(train), pick(test)))
    }

    /// Same clouds with labels permuted by a seeded shuffle.
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        let mut labels: Vec<usize> = self.items.iter().map(|it| it.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Dataset {
            classes: self.classes.clone(),
            items: self
                .items
                .iter()
                .zip(labels)
                .map(|(it, label)| LabeledCloud {
                    cloud: it.cloud.clone(),
                    label,
                })
                .collect(),
        }
    }
}

/// Everything the model needs from one cloud, computed once.
#[derive(Clone, Debug)]
pub struct PreparedCloud {
    pub label: usize,
    pub centers: Vec<Point3>,
    /// Patch-major rows: point `j` of patch `t` is row `t * N_n + j`.
    pub point_features: Array2<f64>,
    /// Patch points relative to their center (reconstruction targets).
    pub targets: Vec<Vec<Point3>>,
    pub pos_input: Array2<f64>,
    pub embedding: SpectralEmbedding,
    pub hlt: Option<HltCode>,
    ordering: OrderingMode,
    fixed_orders: Vec<TraversalOrder>,
}

impl PreparedCloud {
    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn n_neighbors(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub fn ordering(&self) -> OrderingMode {
        self.ordering
    }

    /// Traversal orders for one forward pass. Hierarchical-code orders shuffle
    /// within segments when `train_seed` is given and follow the first
    /// eigenvector otherwise; other modes are fixed per cloud.
    pub fn orders(&self, train_seed: Option<u64>) -> Result<Vec<TraversalOrder>> {
        match (&self.hlt, self.ordering) {
            (Some(codes), OrderingMode::Hlt) => {
                let within = match train_seed {
                    Some(seed) => WithinSegment::Random(seed),
                    None => WithinSegment::ByFirstEigvec(&self.embedding),
                };
                let (inc, dec) = hlt_orders(codes, within)?;
                Ok(vec![inc, dec])
            }
            _ => Ok(self.fixed_orders.clone()),
        }
    }
}

fn point_features(mode: EmbedMode, patch: &[Point3]) -> Result<Vec<[f64; 4]>> {
    match mode {
        EmbedMode::CenteredXyz => Ok(patch.iter().map(|q| [q.x, q.y, q.z, 0.0]).collect()),
        EmbedMode::Invariant => {
            let n = patch.len() as f64;
            let m = patch.iter().fold(Point3::ORIGIN, |acc, &q| acc + q) * (1.0 / n);
            let mut cov = Array2::<f64>::zeros((3, 3));
            for &q in patch {
                let r = (q - m).to_array();
                for i in 0..3 {
                    for j in 0..3 {
                        cov[[i, j]] += r[i] * r[j] / n;
                    }
                }
            }
            let eig = symmetric_eigen(&cov)?;
            let normal: Point3 = [eig.vectors[[0, 0]], eig.vectors[[1, 0]], eig.vectors[[2, 0]]].into();
            Ok(patch
                .iter()
                .map(|&q| [q.norm(), (q - m).norm(), q.dot(m), q.dot(normal).abs()])
                .collect())
        }
    }
}

/// Patchify, spectral embedding, orders and model inputs for one cloud.
pub fn prepare(cloud: &PointCloud, label: usize, config: &TrainConfig, cloud_seed: u64) -> Result<PreparedCloud> {
    let patches = patchify(Arc::new(cloud.clone()), config.n_centers, config.n_neighbors, 0)?;
    let centers = patches.centers();
    let n_c = centers.len();
    let embedding = compute_embedding(
        &centers,
        &GraphParams::with_k(config.k_neighbors),
        config.s,
        DEFAULT_EPSILON,
        &EigenOptions::default(),
    )?;

    let f = config.embed_mode.n_features();
    let n_n = config.n_neighbors;
    let mut feats = Array2::<f64>::zeros((n_c * n_n, f));
    let mut targets = Vec::with_capacity(n_c);
    for t in 0..n_c {
        let patch = patches.centered_patch(t);
        for (j, row) in point_features(config.embed_mode, &patch)?.into_iter().enumerate() {
            for (k, v) in row.into_iter().take(f).enumerate() {
                feats[[t * n_n + j, k]] = v;
            }
        }
        targets.push(patch);
    }

    let pos_input = match config.pos_mode {
        PosMode::Spectral => {
            let scale = (n_c as f64).sqrt() * POS_GAIN;
            Array2::from_shape_fn((n_c, config.s), |(t, k)| embedding.eigenvectors[k][t] * scale)
        }
        PosMode::RawXyz => Array2::from_shape_fn((n_c, 3), |(t, k)| centers[t].coord(k)),
    };

    let mut hlt = None;
    let fixed_orders = match config.ordering {
        OrderingMode::Sast => sast_orders(&embedding, config.s)?,
        OrderingMode::Hlt => {
            hlt = Some(hlt_codes(&embedding, config.s, config.hlt_threshold)?);
            Vec::new()
        }
        OrderingMode::Axis => {
            let mut v = Vec::with_capacity(6);
            for axis in Axis::ALL {
                let o = axis_order(&centers, axis)?;
                v.push(o.reversed());
                v.insert(v.len() - 1, o);
            }
            v
        }
        OrderingMode::Random => (0..2 * config.s as u64)
            .map(|j| random_order(n_c, cloud_seed.wrapping_add(j)))
            .collect(),
    };

    Ok(PreparedCloud {
        label,
        centers,
        point_features: feats,
        targets,
        pos_input,
        embedding,
        hlt,
        ordering: config.ordering,
        fixed_orders,
    })
}

pub(crate) fn cloud_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Prepares every cloud in parallel; results keep dataset order.
pub fn prepare_all(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<PreparedCloud>> {
    dataset
        .items
        .par_iter()
        .enumerate()
        .map(|(i, it)| prepare(&it.cloud, it.label, config, cloud_seed(config.seed, i)))
        .collect()
}
