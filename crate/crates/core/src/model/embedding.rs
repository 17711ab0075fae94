//! Spatio-temporal embedding: each point's history is projected to `d_e`
//! features and concatenated with day-of-week, time-of-day and per-point
//! identity rows.

use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::Rng;

use super::{init_uniform, require, ModelError};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};

pub const INPUT_WEIGHT: &str = "embed.input.weight";
pub const INPUT_BIAS: &str = "embed.input.bias";
pub const WEEK_TABLE: &str = "embed.week";
pub const DAY_TABLE: &str = "embed.day";
pub const SPATIAL_TABLE: &str = "embed.spatial";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingConfig {
    /// Input window length `H`.
    pub history: usize,
    pub input_width: usize,
    pub week_width: usize,
    pub day_width: usize,
    pub spatial_width: usize,
    pub days_per_week: usize,
    pub slices_per_day: usize,
    pub points: usize,
}

impl EmbeddingConfig {
    /// Total width `d`.
    pub fn width(&self) -> usize {
        self.input_width + self.week_width + self.day_width + self.spatial_width
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("history", self.history),
            ("input_width", self.input_width),
            ("week_width", self.week_width),
            ("day_width", self.day_width),
            ("spatial_width", self.spatial_width),
            ("days_per_week", self.days_per_week),
            ("slices_per_day", self.slices_per_day),
            ("points", self.points),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ModelError::Config(format!("embedding {name} must be positive"))),
            None => Ok(()),
        }
    }

    /// Registers the five embedding tensors. Projections draw from
    /// `±sqrt(1/H)`, dictionaries from `±sqrt(1/width)`, biases start at zero.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f64>, rng: &mut R) {
        init_uniform(store, INPUT_WEIGHT, &[self.input_width, self.history], (1.0 / self.history as f64).sqrt(), rng);
        store.insert(INPUT_BIAS, Tensor::zeros(&[self.input_width]));
        init_uniform(store, WEEK_TABLE, &[self.days_per_week, self.week_width], (1.0 / self.week_width as f64).sqrt(), rng);
        init_uniform(store, DAY_TABLE, &[self.slices_per_day, self.day_width], (1.0 / self.day_width as f64).sqrt(), rng);
        init_uniform(store, SPATIAL_TABLE, &[self.points, self.spatial_width], (1.0 / self.spatial_width as f64).sqrt(), rng);
    }

    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        require(store, INPUT_WEIGHT, &[self.input_width, self.history])?;
        require(store, INPUT_BIAS, &[self.input_width])?;
        require(store, WEEK_TABLE, &[self.days_per_week, self.week_width])?;
        require(store, DAY_TABLE, &[self.slices_per_day, self.day_width])?;
        require(store, SPATIAL_TABLE, &[self.points, self.spatial_width])
    }
}

/// Dictionary rows selected by a window's last timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    /// 0 = Monday.
    pub weekday: usize,
    pub slice: usize,
}

/// Maps a timestamp to its weekday and slice-of-day.
pub fn time_index(ts: NaiveDateTime, slice_minutes: u32) -> TimeIndex {
    let seconds = ts.time().num_seconds_from_midnight() as usize;
    TimeIndex {
        weekday: ts.weekday().num_days_from_monday() as usize,
        slice: seconds / (slice_minutes as usize * 60),
    }
}

impl TimeIndex {
    fn check(&self, cfg: &EmbeddingConfig) -> Result<(), ModelError> {
        if self.weekday >= cfg.days_per_week {
            return Err(ModelError::TimeOutOfRange {
                what: "day-of-week",
                index: self.weekday,
                size: cfg.days_per_week,
            });
        }
        if self.slice >= cfg.slices_per_day {
            return Err(ModelError::TimeOutOfRange {
                what: "time-of-day",
                index: self.slice,
                size: cfg.slices_per_day,
            });
        }
        Ok(())
    }
}

/// Records the embedding of a batch on `g`.
///
/// `history` is `[B·N, H]` (one row per sample and point); `times` has one
/// entry per sample. Returns `[B·N, d]`.
pub fn embed_graph<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &EmbeddingConfig, history: Var, times: &[TimeIndex]) -> Result<Var, ModelError> {
    let n = cfg.points;
    let expected = [times.len() * n, cfg.history];
    if g.shape(history) != expected {
        return Err(ModelError::Config(format!(
            "history rows have shape {:?}, expected {expected:?}",
            g.shape(history)
        )));
    }
    for t in times {
        t.check(cfg)?;
    }
    let w = g.param(store, INPUT_WEIGHT)?;
    let b = g.param(store, INPUT_BIAS)?;
    let proj = g.matmul_nt(history, w)?;
    let proj = g.add(proj, b)?;

    let per_point = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Option<usize>> {
        (0..times.len())
            .flat_map(|s| (0..n).map(move |p| (s, p)))
            .map(|(s, p)| Some(f(s, p)))
            .collect()
    };
    let week = g.param(store, WEEK_TABLE)?;
    let week = g.gather_rows(week, &per_point(&|s, _| times[s].weekday))?;
    let day = g.param(store, DAY_TABLE)?;
    let day = g.gather_rows(day, &per_point(&|s, _| times[s].slice))?;
    let spatial = g.param(store, SPATIAL_TABLE)?;
    let spatial = g.gather_rows(spatial, &per_point(&|_, p| p))?;
    Ok(g.concat_last(&[proj, week, day, spatial])?)
}

/// Embeds one `[H, N]` window into `[N, d]`.
pub fn embed(window: &Tensor<f64>, time: TimeIndex, store: &ParamStore<f64>, cfg: &EmbeddingConfig) -> Result<Tensor<f64>, ModelError> {
    if window.shape() != [cfg.history, cfg.points] {
        return Err(ModelError::Config(format!(
            "window has shape {:?}, expected [{}, {}]",
            window.shape(),
            cfg.history,
            cfg.points
        )));
    }
    let mut g = Graph::new();
    let rows = g.input(window.swap_axes(0, 1)?)?;
    let out = embed_graph(&mut g, store, cfg, rows, &[time])?;
    Ok(g.value(out).clone())
}
