use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DataSource, PatchGeometry, Partitioner, Precision, TrainConfig};
use super::log::{EpochRecord, TrainLog};
use super::TrainError;
use crate::data::{chronological_split, load_dataset, synth_generate, window_starts, MetricAccumulator, MetricReport, Normalizer, RawDataset, SplitRange, Splits};
use crate::model::{stack_transposed, time_index, AttentionMix, EmbeddingConfig, EncoderConfig, ModelConfig, ModelError, ModelInput, PatchModel};
use crate::numerics::{clip_grad_norm, AdamW, Checkpoint, Gradients, Graph, ParamStore, Scalar, Tensor, TensorError};
use crate::spatial::{build_leaf_kdtree, layout_for_tree, LeafKdTree, PatchLayout, Slot};

/// Which chronological split to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split `{other}` (train|val|test)")),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl SplitKind {
    pub fn range(self, s: &Splits) -> SplitRange {
        match self {
            Self::Train => s.train,
            Self::Val => s.val,
            Self::Test => s.test,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation average MAE
    /// (the initialisation when no epoch ran).
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub last: Checkpoint,
    pub log: TrainLog,
}

/// A dataset bound to its split, normaliser, layout and model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: TrainConfig,
    pub dataset: RawDataset,
    pub splits: Splits,
    pub normalizer: Normalizer,
    pub tree: LeafKdTree,
    pub model: PatchModel,
    normalized: Tensor<f64>,
}

pub fn load_source(cfg: &TrainConfig) -> Result<RawDataset, TrainError> {
    Ok(match &cfg.data {
        DataSource::Path(p) => load_dataset(p)?,
        DataSource::Synth(spec) => synth_generate(spec)?,
    })
}

/// Resolves `N_p` for a tree with `leaf_count` leaves.
pub fn leaves_per_patch(geometry: PatchGeometry, leaf_count: usize) -> Result<usize, TrainError> {
    match geometry {
        PatchGeometry::LeavesPerPatch(n) => Ok(n),
        PatchGeometry::Patches(r) => {
            if r == 0 || r > leaf_count || leaf_count % r != 0 {
                return Err(TrainError::Config(format!(
                    "cannot form {r} patches from {leaf_count} leaves; the patch count must be a power of 2 no larger than the leaf count"
                )));
            }
            Ok(leaf_count / r)
        }
    }
}

fn model_config(cfg: &TrainConfig, points: usize, slices_per_day: usize) -> ModelConfig {
    let embedding = EmbeddingConfig {
        history: cfg.history,
        input_width: cfg.input_width,
        week_width: cfg.week_width,
        day_width: cfg.day_width,
        spatial_width: cfg.spatial_width,
        days_per_week: 7,
        slices_per_day,
        points,
    };
    ModelConfig {
        encoder: EncoderConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            width: embedding.width(),
            residual: cfg.residual,
            layer_norm: cfg.layer_norm,
            mix: cfg.attention,
        },
        embedding,
        horizon: cfg.horizon,
    }
}

impl Experiment {
    pub fn prepare(cfg: &TrainConfig) -> Result<Self, TrainError> {
        Self::from_dataset(cfg, load_source(cfg)?)
    }

    /// Splits the data, fits the normaliser and builds the layout from the
    /// training split only.
    pub fn from_dataset(cfg: &TrainConfig, dataset: RawDataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        let splits = chronological_split(dataset.n_slices())?;
        let train_values = dataset.slice_rows(splits.train.start, splits.train.len);
        let normalizer = if cfg.normalize {
            Normalizer::fit(train_values.data())
        } else {
            Normalizer::identity()
        };
        let tree = match cfg.partitioner {
            Partitioner::KdTree => build_leaf_kdtree(&dataset.points, cfg.capacity)?,
            Partitioner::Sequential => LeafKdTree::from_index_order(dataset.n_points(), cfg.capacity)?,
        };
        let np = leaves_per_patch(cfg.geometry, tree.leaf_count())?;
        let layout = layout_for_tree(&tree, &dataset.points, &train_values, np, cfg.padding)?;
        let model = PatchModel::new(model_config(cfg, dataset.n_points(), dataset.slices_per_day()), layout)?;
        let mut normalized = dataset.values.clone();
        normalizer.normalize_in_place(normalized.data_mut());
        Ok(Self {
            config: cfg.clone(),
            dataset,
            splits,
            normalizer,
            tree,
            model,
            normalized,
        })
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.model.layout
    }

    /// Model input for windows starting at `starts`.
    pub fn input_for(&self, starts: &[usize]) -> Result<ModelInput, TrainError> {
        let h = self.config.history;
        let n = self.dataset.n_points();
        let windows: Vec<Tensor<f64>> = starts
            .iter()
            .map(|&s| Tensor::new(vec![h, n], self.normalized.data()[s * n..(s + h) * n].to_vec()).expect("in range"))
            .collect();
        let refs: Vec<&Tensor<f64>> = windows.iter().collect();
        let times = starts
            .iter()
            .map(|&s| time_index(self.dataset.timestamp(s + h - 1), self.dataset.slice_minutes))
            .collect();
        Ok(ModelInput::from_windows(&refs, times)?)
    }

    /// Normalised targets `[B·N, F]` for windows starting at `starts`.
    pub fn target_for(&self, starts: &[usize]) -> Result<Tensor<f64>, TrainError> {
        let (h, f, n) = (self.config.history, self.config.horizon, self.dataset.n_points());
        let futures: Vec<Tensor<f64>> = starts
            .iter()
            .map(|&s| Tensor::new(vec![f, n], self.normalized.data()[(s + h) * n..(s + h + f) * n].to_vec()).expect("in range"))
            .collect();
        let refs: Vec<&Tensor<f64>> = futures.iter().collect();
        Ok(stack_transposed(&refs)?)
    }

    pub fn init_params(&self) -> Result<ParamStore<f64>, TrainError> {
        Ok(self.model.config.init(self.config.seed)?)
    }

    pub fn split(&self, kind: SplitKind) -> SplitRange {
        kind.range(&self.splits)
    }

    /// Metrics in data units over every window of `split`.
    pub fn evaluate<T: Scalar>(&self, store: &ParamStore<T>, split: SplitRange) -> Result<MetricReport, TrainError> {
        let (h, f) = (self.config.history, self.config.horizon);
        let starts = window_starts(split, h, f, self.config.eval_stride)?;
        let mut acc = MetricAccumulator::new(f);
        let n = self.dataset.n_points();
        for chunk in starts.chunks(self.config.batch_size.max(1)) {
            let input = self.input_for(chunk)?;
            let mut g = Graph::<T>::new();
            let out = self.model.forward(&mut g, store, &input, None)?;
            let values: Vec<f64> = g.value(out).to_f64_vec();
            for (b, &s) in chunk.iter().enumerate() {
                let mut pred = Tensor::new(vec![n, f], values[b * n * f..(b + 1) * n * f].to_vec())?.swap_axes(0, 1)?;
                self.normalizer.denormalize_in_place(pred.data_mut());
                acc.add(&pred, &self.dataset.slice_rows(s + h, f))?;
            }
        }
        Ok(acc.report())
    }

    /// Mean loss and gradients for one batch.
    fn batch_gradients<T: Scalar>(&self, store: &ParamStore<T>, starts: &[usize]) -> Result<(f64, Gradients<T>), ModelError> {
        let run = |starts: &[usize]| -> Result<(f64, Gradients<T>), ModelError> {
            let input = self.input_for(starts).map_err(|e| ModelError::Config(e.to_string()))?;
            let target = self.target_for(starts).map_err(|e| ModelError::Config(e.to_string()))?;
            let mut g = Graph::<T>::new();
            let out = self.model.forward(&mut g, store, &input, None)?;
            let loss = g.l1_loss(out, &target.cast())?;
            let grads = g.backward(loss, store)?;
            Ok((g.value(loss).data()[0].as_f64(), grads))
        };
        if !self.config.parallel || starts.len() == 1 {
            return run(starts);
        }
        let parts: Vec<(f64, Gradients<T>)> = starts
            .par_iter()
            .map(|s| run(std::slice::from_ref(s)))
            .collect::<Result<_, _>>()?;
        let scale = T::of(1.0 / starts.len() as f64);
        let mut iter = parts.into_iter();
        let (mut loss, mut total) = iter.next().expect("non-empty batch");
        for (l, grads) in iter {
            loss += l;
            for (name, g) in grads {
                let acc = total.get_mut(&name).expect("same parameter set");
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
        for g in total.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        Ok((loss / starts.len() as f64, total))
    }

    pub fn train(&self) -> Result<TrainOutcome, TrainError> {
        let init = self.init_params()?;
        match self.config.precision {
            Precision::F64 => self.fit(init),
            Precision::F32 => self.fit(init.cast::<f32>()),
        }
    }

    fn fit<T: Scalar>(&self, mut store: ParamStore<T>) -> Result<TrainOutcome, TrainError> {
        let cfg = &self.config;
        let train_starts = window_starts(self.splits.train, cfg.history, cfg.horizon, cfg.train_stride)?;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        let mut log = TrainLog::default();
        let mut best = Checkpoint::new(&store, self.metadata(0));
        let mut best_epoch = 0;
        let mut best_mae = f64::INFINITY;
        for epoch in 1..=cfg.epochs {
            let clock = Instant::now();
            let lr = super::lr_schedule(epoch, cfg.lr, &cfg.lr_milestones);
            let opt = AdamW {
                lr,
                weight_decay: cfg.weight_decay,
                ..AdamW::default()
            };
            let mut order = train_starts.clone();
            order.shuffle(&mut shuffle_rng);
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let diverged = |detail: String| TrainError::Diverged { epoch, batch, detail };
                let (loss, mut grads) = self.batch_gradients(&store, chunk).map_err(|e| match e {
                    ModelError::Tensor(t @ (TensorError::NonFinite { .. } | TensorError::NonFiniteGradient(_))) => diverged(t.to_string()),
                    other => TrainError::Model(other),
                })?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss {loss}")));
                }
                if let Some(max) = cfg.clip_grad {
                    clip_grad_norm(&mut grads, max);
                }
                store.adamw_step(&grads, &opt).map_err(|e| diverged(e.to_string()))?;
                loss_sum += loss * chunk.len() as f64;
                seen += chunk.len();
            }
            let report = self.evaluate(&store, self.splits.val)?;
            let avg = report.average();
            if avg.mae < best_mae {
                best_mae = avg.mae;
                best_epoch = epoch;
                best = Checkpoint::new(&store, self.metadata(epoch));
            }
            let record = EpochRecord {
                epoch,
                lr,
                train_loss: loss_sum / seen.max(1) as f64,
                val_mae: avg.mae,
                val_rmse: avg.rmse,
                val_mape: avg.mape,
                seconds: clock.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: lr {lr:.6} train {:.5} val MAE {:.4} ({:.1}s)",
                record.train_loss,
                record.val_mae,
                record.seconds
            );
            log.epochs.push(record);
        }
        Ok(TrainOutcome {
            best,
            best_epoch,
            last: Checkpoint::new(&store, self.metadata(cfg.epochs)),
            log,
        })
    }

    /// Everything needed to rebuild the model around a checkpoint.
    pub fn metadata(&self, epoch: usize) -> BTreeMap<String, String> {
        let mut m: BTreeMap<String, String> = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("config.{k}"), v))
            .collect();
        let layout = self.layout();
        m.insert("layout.slots".into(), encode_slots(layout.slots()));
        m.insert("layout.points".into(), layout.n_points().to_string());
        m.insert("layout.capacity".into(), layout.capacity().to_string());
        m.insert("layout.leaves_per_patch".into(), layout.leaves_per_patch().to_string());
        m.insert("normalizer.mean".into(), format!("{:?}", self.normalizer.mean));
        m.insert("normalizer.std".into(), format!("{:?}", self.normalizer.std));
        m.insert("data.slices_per_day".into(), self.dataset.slices_per_day().to_string());
        m.insert("epoch".into(), epoch.to_string());
        m
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    Experiment::prepare(cfg)?.train()
}

/// The training configuration a checkpoint was produced with.
pub fn checkpoint_config(checkpoint: &Checkpoint) -> Result<TrainConfig, TrainError> {
    let mut cfg = TrainConfig::default();
    for (k, v) in checkpoint.metadata.iter().filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k, v))) {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Evaluates a checkpoint on one split of `dataset` using the layout and
/// normaliser stored with it.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &RawDataset, split: SplitKind) -> Result<MetricReport, TrainError> {
    let meta = &checkpoint.metadata;
    let get = |k: &str| meta.get(k).ok_or_else(|| TrainError::Checkpoint(format!("missing metadata `{k}`")));
    let num = |k: &str| -> Result<usize, TrainError> { get(k)?.parse().map_err(|_| TrainError::Checkpoint(format!("bad metadata `{k}`"))) };
    let float = |k: &str| -> Result<f64, TrainError> { get(k)?.parse().map_err(|_| TrainError::Checkpoint(format!("bad metadata `{k}`"))) };

    let cfg = checkpoint_config(checkpoint)?;
    let points = num("layout.points")?;
    if points != dataset.n_points() {
        return Err(TrainError::Geometry(format!(
            "checkpoint expects {points} points, dataset has {}",
            dataset.n_points()
        )));
    }
    let per_day = num("data.slices_per_day")?;
    if per_day != dataset.slices_per_day() {
        return Err(TrainError::Geometry(format!(
            "checkpoint expects {per_day} slices per day, dataset has {}",
            dataset.slices_per_day()
        )));
    }
    let capacity = num("layout.capacity")?;
    let np = num("layout.leaves_per_patch")?;
    let layout = PatchLayout::from_slots(decode_slots(get("layout.slots")?)?, points, capacity * np, capacity, np)?;
    let model = PatchModel::new(model_config(&cfg, points, per_day), layout)?;
    model.config.check_params(&checkpoint.params)?;
    let splits = chronological_split(dataset.n_slices())?;
    let normalizer = Normalizer {
        mean: float("normalizer.mean")?,
        std: float("normalizer.std")?,
    };
    let mut normalized = dataset.values.clone();
    normalizer.normalize_in_place(normalized.data_mut());
    let tree = LeafKdTree::from_index_order(points, capacity)?;
    let exp = Experiment {
        config: cfg,
        dataset: dataset.clone(),
        splits,
        normalizer,
        tree,
        model,
        normalized,
    };
    exp.evaluate(&checkpoint.params, split.range(&splits))
}

fn encode_slots(slots: &[Slot]) -> String {
    slots
        .iter()
        .map(|s| match s {
            Slot::Real(p) => p.to_string(),
            Slot::Pad(p) => format!("+{p}"),
            Slot::Zero => "z".to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn decode_slots(text: &str) -> Result<Vec<Slot>, TrainError> {
    text.split(',')
        .map(|t| {
            let bad = || TrainError::Checkpoint(format!("bad layout slot `{t}`"));
            if t == "z" {
                Ok(Slot::Zero)
            } else if let Some(p) = t.strip_prefix('+') {
                p.parse().map(Slot::Pad).map_err(|_| bad())
            } else {
                t.parse().map(Slot::Real).map_err(|_| bad())
            }
        })
        .collect()
}

/// The no-encoder variant of `cfg`: embeddings feed the decoder directly.
pub fn without_encoder(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        attention: AttentionMix::Off,
        ..cfg.clone()
    }
}
