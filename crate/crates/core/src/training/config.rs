//! Flat `key = value` training configuration.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dataset` | unset | dataset directory; when unset a synthetic set is generated from the `synth.*` keys |
//! | `synth.seed`, `synth.points`, `synth.days`, `synth.slice_minutes`, `synth.k_neighbors`, `synth.diffusion`, `synth.noise` | see [`SynthSpec`] | generator settings |
//! | `capacity` | 2 | leaf capacity `C` |
//! | `patches` | 16 | target patch count `R`; ignored when `leaves_per_patch` is set |
//! | `leaves_per_patch` | unset | explicit `N_p` |
//! | `input_width`, `week_width`, `day_width`, `spatial_width` | 128, 32, 32, 32 | embedding widths |
//! | `heads`, `layers` | 4, 5 | attention heads and layers |
//! | `history`, `horizon` | 12, 12 | window lengths |
//! | `lr`, `weight_decay` | 0.002, 0.0001 | AdamW |
//! | `epochs`, `batch_size` | 50, 8 | |
//! | `lr_milestones` | `2,35,40` | epochs at which the rate halves |
//! | `seed` | 0 | initialisation and shuffling |
//! | `precision` | `f64` | `f64` or `f32` |
//! | `normalize` | true | z-score inputs using the training split |
//! | `residual`, `layer_norm` | true, true | attention block extras |
//! | `attention` | `dual` | `dual`, `depth`, `breadth` or `none` |
//! | `padding` | `similarity` | `similarity`, `distance` or `zero` |
//! | `partitioner` | `kdtree` | `kdtree` or `sequential` (index order, no spatial sort) |
//! | `clip_grad` | `none` | global gradient-norm cap |
//! | `parallel` | false | per-sample threads within a batch |
//! | `train_stride`, `eval_stride` | 1, 1 | window strides |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::TrainError;
use crate::data::SynthSpec;
use crate::model::AttentionMix;
use crate::spatial::PadStrategy;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partitioner {
    KdTree,
    /// Leaves filled in original index order; the spatial-grouping ablation.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchGeometry {
    /// Choose `N_p` so that there are this many patches.
    Patches(usize),
    LeavesPerPatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: DataSource,
    pub capacity: usize,
    pub geometry: PatchGeometry,
    pub input_width: usize,
    pub week_width: usize,
    pub day_width: usize,
    pub spatial_width: usize,
    pub heads: usize,
    pub layers: usize,
    pub history: usize,
    pub horizon: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_milestones: Vec<usize>,
    pub seed: u64,
    pub precision: Precision,
    pub normalize: bool,
    pub residual: bool,
    pub layer_norm: bool,
    pub attention: AttentionMix,
    pub padding: PadStrategy,
    pub partitioner: Partitioner,
    pub clip_grad: Option<f64>,
    pub parallel: bool,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthSpec::default()),
            capacity: 2,
            geometry: PatchGeometry::Patches(16),
            input_width: 128,
            week_width: 32,
            day_width: 32,
            spatial_width: 32,
            heads: 4,
            layers: 5,
            history: 12,
            horizon: 12,
            lr: 0.002,
            weight_decay: 1e-4,
            epochs: 50,
            batch_size: 8,
            lr_milestones: vec![2, 35, 40],
            seed: 0,
            precision: Precision::F64,
            normalize: true,
            residual: true,
            layer_norm: true,
            attention: AttentionMix::Dual,
            padding: PadStrategy::Similarity,
            partitioner: Partitioner::KdTree,
            clip_grad: None,
            parallel: false,
            train_stride: 1,
            eval_stride: 1,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(format!("unknown precision `{other}` (f64|f32)")),
        }
    }
}

impl fmt::Display for Partitioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioner::KdTree => "kdtree",
            Partitioner::Sequential => "sequential",
        })
    }
}

impl FromStr for Partitioner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kdtree" => Ok(Partitioner::KdTree),
            "sequential" => Ok(Partitioner::Sequential),
            other => Err(format!("unknown partitioner `{other}` (kdtree|sequential)")),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| TrainError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn synth(cfg: &mut TrainConfig) -> &mut SynthSpec {
            if let DataSource::Path(_) = cfg.data {
                cfg.data = DataSource::Synth(SynthSpec::default());
            }
            match &mut cfg.data {
                DataSource::Synth(s) => s,
                DataSource::Path(_) => unreachable!("replaced above"),
            }
        }
        match key {
            "dataset" => self.data = DataSource::Path(PathBuf::from(value)),
            "synth.seed" => synth(self).seed = parse(key, value)?,
            "synth.points" => synth(self).points = parse(key, value)?,
            "synth.days" => synth(self).days = parse(key, value)?,
            "synth.slice_minutes" => synth(self).slice_minutes = parse(key, value)?,
            "synth.k_neighbors" => synth(self).k_neighbors = parse(key, value)?,
            "synth.diffusion" => synth(self).diffusion = parse(key, value)?,
            "synth.noise" => synth(self).noise = parse(key, value)?,
            "capacity" => self.capacity = parse(key, value)?,
            "patches" => self.geometry = PatchGeometry::Patches(parse(key, value)?),
            "leaves_per_patch" => self.geometry = PatchGeometry::LeavesPerPatch(parse(key, value)?),
            "input_width" => self.input_width = parse(key, value)?,
            "week_width" => self.week_width = parse(key, value)?,
            "day_width" => self.day_width = parse(key, value)?,
            "spatial_width" => self.spatial_width = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "history" => self.history = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_milestones" => {
                self.lr_milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "normalize" => self.normalize = parse(key, value)?,
            "residual" => self.residual = parse(key, value)?,
            "layer_norm" => self.layer_norm = parse(key, value)?,
            "attention" => self.attention = parse(key, value)?,
            "padding" => self.padding = parse(key, value)?,
            "partitioner" => self.partitioner = parse(key, value)?,
            "clip_grad" => {
                self.clip_grad = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "parallel" => self.parallel = parse(key, value)?,
            "train_stride" => self.train_stride = parse(key, value)?,
            "eval_stride" => self.eval_stride = parse(key, value)?,
            other => return Err(TrainError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| TrainError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Every setting as ordered `(key, value)` pairs; [`Self::parse_str`]
    /// of the rendered pairs reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = Vec::new();
        match &self.data {
            DataSource::Path(p) => out.push(("dataset", p.display().to_string())),
            DataSource::Synth(s) => {
                out.push(("synth.seed", s.seed.to_string()));
                out.push(("synth.points", s.points.to_string()));
                out.push(("synth.days", s.days.to_string()));
                out.push(("synth.slice_minutes", s.slice_minutes.to_string()));
                out.push(("synth.k_neighbors", s.k_neighbors.to_string()));
                out.push(("synth.diffusion", format!("{:?}", s.diffusion)));
                out.push(("synth.noise", format!("{:?}", s.noise)));
            }
        }
        out.push(("capacity", self.capacity.to_string()));
        match self.geometry {
            PatchGeometry::Patches(r) => out.push(("patches", r.to_string())),
            PatchGeometry::LeavesPerPatch(n) => out.push(("leaves_per_patch", n.to_string())),
        }
        out.extend([
            ("input_width", self.input_width.to_string()),
            ("week_width", self.week_width.to_string()),
            ("day_width", self.day_width.to_string()),
            ("spatial_width", self.spatial_width.to_string()),
            ("heads", self.heads.to_string()),
            ("layers", self.layers.to_string()),
            ("history", self.history.to_string()),
            ("horizon", self.horizon.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            (
                "lr_milestones",
                self.lr_milestones.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("normalize", self.normalize.to_string()),
            ("residual", self.residual.to_string()),
            ("layer_norm", self.layer_norm.to_string()),
            ("attention", self.attention.to_string()),
            ("padding", self.padding.to_string()),
            ("partitioner", self.partitioner.to_string()),
            ("clip_grad", self.clip_grad.map_or_else(|| "none".into(), |c| format!("{c:?}"))),
            ("parallel", self.parallel.to_string()),
            ("train_stride", self.train_stride.to_string()),
            ("eval_stride", self.eval_stride.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn render(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("capacity", self.capacity),
            ("input_width", self.input_width),
            ("week_width", self.week_width),
            ("day_width", self.day_width),
            ("spatial_width", self.spatial_width),
            ("heads", self.heads),
            ("layers", self.layers),
            ("history", self.history),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("train_stride", self.train_stride),
            ("eval_stride", self.eval_stride),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("`{k}` must be positive")));
        }
        let width = self.input_width + self.week_width + self.day_width + self.spatial_width;
        if width % self.heads != 0 {
            return Err(TrainError::Config(format!("model width {width} is not divisible by {} heads", self.heads)));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(TrainError::Config("lr_milestones must be sorted ascending".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if matches!(self.geometry, PatchGeometry::Patches(0) | PatchGeometry::LeavesPerPatch(0)) {
            return Err(TrainError::Config("patch geometry must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: halved once per milestone already
/// reached.
pub fn lr_schedule(epoch: usize, base_lr: f64, milestones: &[usize]) -> f64 {
    let halvings = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_halves_at_milestones() {
        let m = [2, 35, 40];
        assert_eq!(lr_schedule(1, 0.002, &m), 0.002);
        assert_eq!(lr_schedule(2, 0.002, &m), 0.001);
        assert_eq!(lr_schedule(34, 0.002, &m), 0.001);
        assert_eq!(lr_schedule(35, 0.002, &m), 0.0005);
        assert_eq!(lr_schedule(40, 0.002, &m), 0.00025);
        assert_eq!(lr_schedule(50, 0.002, &m), 0.00025);
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.epochs, c.layers), (0.002, 1e-4, 50, 5));
        assert_eq!(c.input_width + c.week_width + c.day_width + c.spatial_width, 224);
        assert_eq!(c.lr_milestones, vec![2, 35, 40]);
        c.validate().unwrap();
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = TrainConfig::parse_str("epochs = 3\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(TrainConfig::parse_str("heads = 5\n").is_err());
        assert!(TrainConfig::parse_str("lr_milestones = 5,2\n").is_err());
        let c = TrainConfig::parse_str("# comment\nepochs = 3 # trailing\ndataset = /tmp/x\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.data, DataSource::Path(PathBuf::from("/tmp/x")));
    }

    proptest! {
        #[test]
        fn rendered_config_parses_back(
            capacity in 1usize..5,
            np in proptest::option::of(1usize..8),
            lr in 1e-5f64..1.0,
            seed in any::<u64>(),
            diffusion in 0.0f64..1.0,
            clip in proptest::option::of(0.1f64..10.0),
            mix in prop_oneof![Just(AttentionMix::Dual), Just(AttentionMix::DepthOnly), Just(AttentionMix::Off)],
            pad in prop_oneof![Just(PadStrategy::Similarity), Just(PadStrategy::Zero), Just(PadStrategy::Distance)],
        ) {
            let mut c = TrainConfig { capacity, lr, seed, clip_grad: clip, attention: mix, padding: pad, ..TrainConfig::default() };
            if let Some(np) = np {
                c.geometry = PatchGeometry::LeavesPerPatch(np);
            }
            if let DataSource::Synth(s) = &mut c.data {
                s.diffusion = diffusion;
            }
            prop_assert_eq!(TrainConfig::parse_str(&c.render()).unwrap(), c);
        }
    }
}
