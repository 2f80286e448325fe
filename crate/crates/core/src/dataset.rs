//! Trajectory datasets, per-channel normalization and rollout windows.
//!
//! A dataset is one contiguous trajectory cut into train / validation / test
//! segments. Windows for the multi-step loss never cross a segment boundary,
//! and normalization statistics come from the training segment only.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};
use crate::plant::{read_trajectory_csv, write_trajectory_csv, Trajectory};
use crate::{Error, Result};

/// Smallest standard deviation kept by [`fit_normalizer`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Contiguous, ordered, non-overlapping sample ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// Consecutive segments of the given sizes starting at sample 0.
    pub fn from_counts(train: usize, validation: usize, test: usize, total: usize) -> Result<Self> {
        if train + validation + test > total {
            return Err(Error::Config(format!(
                "splits {train}/{validation}/{test} exceed trajectory length {total}"
            )));
        }
        let ranges = Self {
            train: 0..train,
            validation: train..train + validation,
            test: train + validation..train + validation + test,
        };
        ranges.validate(total)?;
        Ok(ranges)
    }

    /// 9 : 1 : 2 proportions (9000/1000/2000 of 12000), scaled to `total`.
    pub fn proportional(total: usize) -> Result<Self> {
        let train = (total as f64 * 0.75).round() as usize;
        let validation = (total as f64 / 12.0).round() as usize;
        Self::from_counts(train, validation, total - train - validation, total)
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn validate(&self, total: usize) -> Result<()> {
        for split in Split::ALL {
            if self.range(split).is_empty() {
                return Err(Error::Config(format!("{split} split is empty")));
            }
        }
        if self.train.end > self.validation.start || self.validation.end > self.test.start || self.test.end > total {
            return Err(Error::Config(format!(
                "splits must be ordered train < validation < test within {total} samples: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectory: Trajectory,
    pub splits: SplitRanges,
    pub source_seed: u64,
}

impl TrajectoryDataset {
    pub fn new(trajectory: Trajectory, splits: SplitRanges, source_seed: u64) -> Result<Self> {
        trajectory.validate()?;
        splits.validate(trajectory.len())?;
        Ok(Self {
            trajectory,
            splits,
            source_seed,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.trajectory.dims()
    }

    pub fn dt(&self) -> f64 {
        self.trajectory.dt
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.range(split).len()
    }
}

/// Mean and standard deviation of one group of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| (v[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| v[i] * self.std[i] + self.mean[i])
    }

    fn fit<'a>(samples: impl Iterator<Item = &'a Vector> + Clone, dim: usize, group: &str) -> Self {
        let count = samples.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for s in samples.clone() {
            for i in 0..dim {
                mean[i] += s[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; dim];
        for s in samples {
            for i in 0..dim {
                var[i] += (s[i] - mean[i]).powi(2);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let sd = (v / count).sqrt();
                if sd < STD_FLOOR {
                    log::warn!("{group} channel {i} is degenerate (std {sd:e}); flooring std");
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    fn validate(&self, dim: usize, group: &str) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::shape(format!("{group} normalizer"), dim, self.mean.len()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("{group} normalizer has invalid statistics")));
        }
        Ok(())
    }
}

/// Per-channel affine normalization for states, inputs and disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state: ChannelStats,
    pub input: ChannelStats,
    pub disturbance: ChannelStats,
}

impl Normalizer {
    pub fn identity(n: usize, m: usize, p: usize) -> Self {
        Self {
            state: ChannelStats::identity(n),
            input: ChannelStats::identity(m),
            disturbance: ChannelStats::identity(p),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.state.dim(), self.input.dim(), self.disturbance.dim())
    }

    pub fn validate(&self, n: usize, m: usize, p: usize) -> Result<()> {
        self.state.validate(n, "state")?;
        self.input.validate(m, "input")?;
        self.disturbance.validate(p, "disturbance")
    }

    pub fn normalize_state(&self, x: &Vector) -> Vector {
        self.state.apply(x)
    }

    pub fn denormalize_state(&self, x: &Vector) -> Vector {
        self.state.invert(x)
    }

    pub fn normalize_input(&self, u: &Vector) -> Vector {
        self.input.apply(u)
    }

    pub fn denormalize_input(&self, u: &Vector) -> Vector {
        self.input.invert(u)
    }

    pub fn normalize_disturbance(&self, p: &Vector) -> Vector {
        self.disturbance.apply(p)
    }

    pub fn denormalize_disturbance(&self, p: &Vector) -> Vector {
        self.disturbance.invert(p)
    }
}

/// Population mean and standard deviation over the training split.
pub fn fit_normalizer(dataset: &TrajectoryDataset) -> Result<Normalizer> {
    let range = dataset.splits.train.clone();
    if range.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let (n, m, p) = dataset.dims();
    let traj = &dataset.trajectory;
    Ok(Normalizer {
        state: ChannelStats::fit(traj.states[range.clone()].iter(), n, "state"),
        input: ChannelStats::fit(traj.inputs[range.clone()].iter(), m, "input"),
        disturbance: ChannelStats::fit(traj.disturbances[range].iter(), p, "disturbance"),
    })
}

/// The whole trajectory in normalized units, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub states: Matrix,
    pub inputs: Matrix,
    pub disturbances: Matrix,
}

impl NormalizedData {
    pub fn new(dataset: &TrajectoryDataset, normalizer: &Normalizer) -> Result<Self> {
        let (n, m, p) = dataset.dims();
        normalizer.validate(n, m, p)?;
        let traj = &dataset.trajectory;
        let len = traj.len();
        let columns = |group: &ChannelStats, rows: usize, data: &[Vector]| {
            let mut out = Matrix::zeros(rows, len);
            for (k, v) in data.iter().enumerate() {
                out.set_column(k, &group.apply(v));
            }
            out
        };
        Ok(Self {
            states: columns(&normalizer.state, n, &traj.states),
            inputs: columns(&normalizer.input, m, &traj.inputs),
            disturbances: columns(&normalizer.disturbance, p, &traj.disturbances),
        })
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `H + 1` consecutive states and the `H` inputs between them, starting at
/// absolute sample index `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RolloutWindow {
    pub split: Split,
    pub start: usize,
    pub horizon: usize,
}

impl RolloutWindow {
    /// Sample indices touched by the window (states `start..=start+H`).
    pub fn indices(&self) -> Range<usize> {
        self.start..self.start + self.horizon + 1
    }

    pub fn state(&self, data: &NormalizedData, j: usize) -> Vector {
        debug_assert!(j <= self.horizon);
        data.states.column(self.start + j).into_owned()
    }

    pub fn input(&self, data: &NormalizedData, j: usize) -> Vector {
        debug_assert!(j < self.horizon);
        data.inputs.column(self.start + j).into_owned()
    }

    pub fn disturbance(&self, data: &NormalizedData, j: usize) -> Vector {
        debug_assert!(j < self.horizon);
        data.disturbances.column(self.start + j).into_owned()
    }
}

/// Every stride-1 window of horizon `horizon` inside `split`.
pub fn make_windows(dataset: &TrajectoryDataset, split: Split, horizon: usize) -> Result<Vec<RolloutWindow>> {
    let range = dataset.splits.range(split);
    if horizon == 0 {
        return Err(Error::Config("rollout horizon must be positive".into()));
    }
    if range.len() < horizon + 1 {
        return Err(Error::Config(format!(
            "{split} split has {} samples, too short for horizon {horizon}",
            range.len()
        )));
    }
    Ok((range.start..range.end - horizon)
        .map(|start| RolloutWindow { split, start, horizon })
        .collect())
}

/// Seeded per-epoch shuffling into mini-batches; the last batch may be short.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    count: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(count: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            count,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Index batches for the next epoch.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.count).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Batches of windows for one epoch; see [`BatchSampler`].
pub fn batch_iterator<'a>(
    windows: &'a [RolloutWindow],
    sampler: &mut BatchSampler,
) -> impl Iterator<Item = Vec<&'a RolloutWindow>> {
    sampler
        .next_epoch()
        .into_iter()
        .map(move |batch| batch.into_iter().map(|i| &windows[i]).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format: String,
    dt: f64,
    source_seed: u64,
    splits: SplitRanges,
    dims: [usize; 3],
    #[serde(default)]
    extra: serde_json::Value,
}

const DATASET_FORMAT: &str = "kmpc-dataset/1";

/// Write `train.csv`, `validation.csv`, `test.csv` and `dataset.json`.
/// `preamble` is copied verbatim to the top of every CSV file; its lines
/// should start with `#`.
pub fn write_dataset(dataset: &TrajectoryDataset, dir: &Path, extra: serde_json::Value, preamble: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traj = &dataset.trajectory;
    for split in Split::ALL {
        let range = dataset.splits.range(split);
        let part = Trajectory {
            dt: traj.dt,
            t0: traj.t0 + range.start as f64 * traj.dt,
            states: traj.states[range.clone()].to_vec(),
            inputs: traj.inputs[range.clone()].to_vec(),
            disturbances: traj.disturbances[range].to_vec(),
        };
        let path = dir.join(format!("{split}.csv"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(preamble.as_bytes()).map_err(|e| Error::io(&path, e))?;
        write_trajectory_csv(&part, out)?;
    }
    let (n, m, p) = dataset.dims();
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        dt: traj.dt,
        source_seed: dataset.source_seed,
        splits: dataset.splits.clone(),
        dims: [n, m, p],
        extra,
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let path = dir.join("dataset.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    if meta.format != DATASET_FORMAT {
        return Err(Error::Config(format!("unsupported dataset format `{}`", meta.format)));
    }
    let mut traj = Trajectory {
        dt: meta.dt,
        t0: 0.0,
        states: Vec::new(),
        inputs: Vec::new(),
        disturbances: Vec::new(),
    };
    let mut cursor = 0;
    for split in Split::ALL {
        let path = dir.join(format!("{split}.csv"));
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let part = read_trajectory_csv(std::io::BufReader::new(file), meta.dt)?;
        let range = meta.splits.range(split);
        if range.start != cursor && !part.is_empty() {
            // Gaps between splits are not persisted; refuse rather than shift indices.
            return Err(Error::Config(format!("{split} split does not follow the previous one")));
        }
        if part.len() != range.len() {
            return Err(Error::Config(format!(
                "{split}.csv has {} rows, metadata says {}",
                part.len(),
                range.len()
            )));
        }
        cursor = range.end;
        traj.states.extend(part.states);
        traj.inputs.extend(part.inputs);
        traj.disturbances.extend(part.disturbances);
    }
    if traj.dims() != (meta.dims[0], meta.dims[1], meta.dims[2]) {
        return Err(Error::shape(
            "dataset dims",
            format!("{:?}", meta.dims),
            format!("{:?}", traj.dims()),
        ));
    }
    TrajectoryDataset::new(traj, meta.splits, meta.source_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_dataset(values: &[f64], splits: SplitRanges) -> TrajectoryDataset {
        let traj = Trajectory {
            dt: 1.0,
            t0: 0.0,
            states: values.iter().map(|&v| Vector::from_element(1, v)).collect(),
            inputs: values.iter().map(|&v| Vector::from_element(1, 2.0 * v + 1.0)).collect(),
            disturbances: vec![Vector::zeros(0); values.len()],
        };
        TrajectoryDataset::new(traj, splits, 0).unwrap()
    }

    fn ramp(len: usize, splits: SplitRanges) -> TrajectoryDataset {
        let values: Vec<f64> = (0..len).map(|k| (k as f64 * 0.37).sin()).collect();
        scalar_dataset(&values, splits)
    }

    #[test]
    fn two_point_statistics_use_population_convention() {
        let ds = scalar_dataset(&[0.0, 2.0, 5.0, 7.0], SplitRanges::from_counts(2, 1, 1, 4).unwrap());
        let norm = fit_normalizer(&ds).unwrap();
        assert_eq!(norm.state.mean, vec![1.0]);
        assert_eq!(norm.state.std, vec![1.0]);
    }

    #[test]
    fn normalized_training_data_is_standardized() {
        let ds = ramp(400, SplitRanges::proportional(400).unwrap());
        let norm = fit_normalizer(&ds).unwrap();
        let data = NormalizedData::new(&ds, &norm).unwrap();
        let train = data.states.columns(0, 300);
        let mean = train.mean();
        let var = train.map(|v| (v - mean).powi(2)).mean();
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);

        // Refitting already-normalized data is the identity.
        let traj = Trajectory {
            states: (0..400).map(|k| data.states.column(k).into_owned()).collect(),
            inputs: (0..400).map(|k| data.inputs.column(k).into_owned()).collect(),
            ..ds.trajectory.clone()
        };
        let again = fit_normalizer(&TrajectoryDataset::new(traj, ds.splits.clone(), 0).unwrap()).unwrap();
        assert!(again.state.mean[0].abs() < 1e-12);
        assert!((again.state.std[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_floored_not_rejected() {
        let ds = scalar_dataset(&[3.0; 10], SplitRanges::from_counts(6, 2, 2, 10).unwrap());
        let norm = fit_normalizer(&ds).unwrap();
        assert_eq!(norm.state.std, vec![STD_FLOOR]);
    }

    #[test]
    fn statistics_ignore_validation_and_test() {
        let splits = SplitRanges::proportional(120).unwrap();
        let ds = ramp(120, splits.clone());
        let mut perturbed = ds.clone();
        for k in splits.validation.start..120 {
            perturbed.trajectory.states[k] *= 100.0;
            perturbed.trajectory.inputs[k][0] -= 7.0;
        }
        assert_eq!(fit_normalizer(&ds).unwrap(), fit_normalizer(&perturbed).unwrap());
    }

    #[test]
    fn proportional_splits_match_reference_sizes() {
        let s = SplitRanges::proportional(12000).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (9000, 1000, 2000));
        let s = SplitRanges::proportional(3000).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2250, 250, 500));
        assert!(SplitRanges::from_counts(10, 5, 5, 15).is_err());
    }

    #[test]
    fn window_counts() {
        let ds = ramp(200, SplitRanges::from_counts(100, 41, 59, 200).unwrap());
        assert_eq!(make_windows(&ds, Split::Train, 40).unwrap().len(), 60);
        assert_eq!(make_windows(&ds, Split::Validation, 40).unwrap().len(), 1);
        let err = make_windows(&ds, Split::Validation, 41).unwrap_err();
        assert!(err.to_string().contains("validation"));
    }

    #[test]
    fn windows_never_straddle_splits() {
        let ds = ramp(300, SplitRanges::from_counts(150, 60, 90, 300).unwrap());
        for h in [1, 5, 20, 59] {
            let mut starts = std::collections::BTreeSet::new();
            for split in Split::ALL {
                let range = ds.splits.range(split);
                let windows = make_windows(&ds, split, h).unwrap();
                for w in &windows {
                    // Exhaustive audit: every touched index lies in the split.
                    assert!(w.indices().all(|i| range.contains(&i)));
                    assert!(starts.insert(w.start), "duplicate start");
                }
                let admissible: Vec<usize> = range
                    .clone()
                    .filter(|&s| (s..=s + h).all(|i| range.contains(&i)))
                    .collect();
                assert_eq!(windows.iter().map(|w| w.start).collect::<Vec<_>>(), admissible);
            }
        }
    }

    #[test]
    fn batches_cover_every_window_once() {
        let mut sampler = BatchSampler::new(5, 2, 7).unwrap();
        let epoch = sampler.next_epoch();
        assert_eq!(epoch.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);

        let mut sampler = BatchSampler::new(257, 16, 3).unwrap();
        for _ in 0..3 {
            let mut seen: Vec<usize> = sampler.next_epoch().into_iter().flatten().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..257).collect::<Vec<_>>());
        }

        let a: Vec<_> = BatchSampler::new(50, 8, 9).unwrap().next_epoch();
        let b: Vec<_> = BatchSampler::new(50, 8, 9).unwrap().next_epoch();
        assert_eq!(a, b);
        assert!(BatchSampler::new(5, 0, 0).is_err());
    }

    #[test]
    fn batch_iterator_yields_windows() {
        let ds = ramp(60, SplitRanges::from_counts(40, 10, 10, 60).unwrap());
        let windows = make_windows(&ds, Split::Train, 5).unwrap();
        let mut sampler = BatchSampler::new(windows.len(), 8, 1).unwrap();
        let total: usize = batch_iterator(&windows, &mut sampler).map(|b| b.len()).sum();
        assert_eq!(total, windows.len());
    }

    #[test]
    fn dataset_files_round_trip() {
        let ds = ramp(90, SplitRanges::proportional(90).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), serde_json::Value::Null, "# note\n").unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.trajectory.states, ds.trajectory.states);
        assert_eq!(back.trajectory.inputs, ds.trajectory.inputs);
    }

    proptest! {
        #[test]
        fn normalization_round_trip(
            values in proptest::collection::vec(-1e6f64..1e6, 3),
            mean in proptest::collection::vec(-1e3f64..1e3, 3),
            std in proptest::collection::vec(1e-3f64..1e3, 3),
        ) {
            let stats = ChannelStats { mean, std };
            let v = Vector::from_vec(values);
            let back = stats.invert(&stats.apply(&v));
            for i in 0..3 {
                prop_assert!((back[i] - v[i]).abs() <= 1e-12 * v[i].abs().max(1.0));
            }
        }
    }
}
