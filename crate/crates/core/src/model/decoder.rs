//! Unpadding decoder and the L1 objective.

use rand::Rng;

use super::{init_uniform, require, ModelError};
use crate::data::Normalizer;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, TensorError, Var};
use crate::spatial::PatchLayout;

pub const DECODE_WEIGHT: &str = "decode.weight";
pub const DECODE_BIAS: &str = "decode.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Forecast length `F`.
    pub horizon: usize,
    pub width: usize,
}

impl DecoderConfig {
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f64>, rng: &mut R) {
        init_uniform(store, DECODE_WEIGHT, &[self.horizon, self.width], (1.0 / self.width as f64).sqrt(), rng);
        store.insert(DECODE_BIAS, Tensor::zeros(&[self.horizon]));
    }

    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        require(store, DECODE_WEIGHT, &[self.horizon, self.width])?;
        require(store, DECODE_BIAS, &[self.horizon])
    }
}

/// `[B·R, P, d]` → `[B·N, F]`: keeps each point's real slot and projects it.
pub fn decode_graph<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &DecoderConfig, encoded: Var, layout: &PatchLayout, batch: usize) -> Result<Var, ModelError> {
    let expected = [batch * layout.patches(), layout.patch_size(), cfg.width];
    if g.shape(encoded) != expected {
        return Err(ModelError::Config(format!(
            "encoder output {:?} does not match layout geometry {expected:?}",
            g.shape(encoded)
        )));
    }
    let flat = g.reshape(encoded, &[batch * layout.slot_count(), cfg.width])?;
    let rows = g.gather_rows(flat, &layout.unpad_index(batch))?;
    let w = g.param(store, DECODE_WEIGHT)?;
    let b = g.param(store, DECODE_BIAS)?;
    let out = g.matmul_nt(rows, w)?;
    Ok(g.add(out, b)?)
}

/// Decodes one `[R, P, d]` encoding into an `[F, N]` forecast, mapped back to
/// data units when `normalizer` is given.
pub fn decode(encoded: &Tensor<f64>, layout: &PatchLayout, store: &ParamStore<f64>, cfg: &DecoderConfig, normalizer: Option<&Normalizer>) -> Result<Tensor<f64>, ModelError> {
    let mut g = Graph::new();
    let x = g.input(encoded.clone())?;
    let out = decode_graph(&mut g, store, cfg, x, layout, 1)?;
    let mut forecast = g.value(out).swap_axes(0, 1)?;
    if let Some(n) = normalizer {
        n.denormalize_in_place(forecast.data_mut());
    }
    Ok(forecast)
}

/// Mean absolute difference over all entries.
pub fn l1_loss(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64, ModelError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "l1_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }
        .into());
    }
    let total: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{build_layout, GeoPoint, PadStrategy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn five_point_layout() -> PatchLayout {
        let pts: Vec<GeoPoint> = (0..5).map(|i| GeoPoint::new(i, i as f64, 0.0)).collect();
        let series = Tensor::from_f64(&[3, 5], &(0..15).map(|i| (i as f64 * 0.7).cos() + 1.5).collect::<Vec<_>>()).unwrap();
        build_layout(&pts, &series, 2, 2, PadStrategy::Similarity).unwrap().1
    }

    fn setup(horizon: usize, width: usize, seed: u64) -> (DecoderConfig, ParamStore<f64>) {
        let cfg = DecoderConfig { horizon, width };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cfg.init(&mut store, &mut rng);
        store.insert(DECODE_BIAS, Tensor::uniform(&[horizon], 1.0, &mut rng));
        (cfg, store)
    }

    #[test]
    fn zero_weight_forecasts_bias() {
        let layout = five_point_layout();
        let (cfg, mut store) = setup(12, 3, 1);
        store.insert(DECODE_WEIGHT, Tensor::zeros(&[12, 3]));
        let x = Tensor::uniform(&[2, 4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let y = decode(&x, &layout, &store, &cfg, None).unwrap();
        let bias = store.get(DECODE_BIAS).unwrap();
        for f in 0..12 {
            for n in 0..5 {
                assert_eq!(y.get(&[f, n]), bias.data()[f]);
            }
        }
    }

    #[test]
    fn forecast_columns_follow_original_order() {
        let layout = five_point_layout();
        let (cfg, store) = setup(12, 3, 3);
        let x = Tensor::uniform(&[2, 4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let y = decode(&x, &layout, &store, &cfg, None).unwrap();
        assert_eq!(y.shape(), &[12, 5]);
        let w = store.get(DECODE_WEIGHT).unwrap().data();
        let b = store.get(DECODE_BIAS).unwrap().data();
        for n in 0..5 {
            let s = layout.real_slots()[n];
            let row = &x.data()[s * 3..s * 3 + 3];
            for f in 0..12 {
                let expect = b[f] + (0..3).map(|c| w[f * 3 + c] * row[c]).sum::<f64>();
                assert!((y.get(&[f, n]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padded_slots_do_not_matter() {
        let layout = five_point_layout();
        let (cfg, store) = setup(4, 3, 5);
        let x = Tensor::uniform(&[2, 4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let mut y = x.clone();
        for s in layout.padded_slots() {
            for c in 0..3 {
                y.data_mut()[s * 3 + c] = 1e6 + c as f64;
            }
        }
        assert_eq!(decode(&x, &layout, &store, &cfg, None).unwrap(), decode(&y, &layout, &store, &cfg, None).unwrap());
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let layout = five_point_layout();
        let (cfg, store) = setup(4, 3, 7);
        assert!(decode(&Tensor::zeros(&[1, 8, 3]), &layout, &store, &cfg, None).is_err());
    }

    #[test]
    fn denormalizes_when_asked() {
        let layout = five_point_layout();
        let (cfg, mut store) = setup(2, 3, 8);
        store.insert(DECODE_WEIGHT, Tensor::zeros(&[2, 3]));
        store.insert(DECODE_BIAS, Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap());
        let norm = Normalizer { mean: 10.0, std: 2.0 };
        let y = decode(&Tensor::zeros(&[2, 4, 3]), &layout, &store, &cfg, Some(&norm)).unwrap();
        assert_eq!(y.get(&[0, 0]), 12.0);
        assert_eq!(y.get(&[1, 4]), 8.0);
    }

    #[test]
    fn l1_examples() {
        let t = Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, -1.25]).unwrap();
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let shifted = Tensor::from_f64(&[2, 3], &t.data().iter().map(|v| v + 1.0).collect::<Vec<_>>()).unwrap();
        assert_eq!(l1_loss(&shifted, &t).unwrap(), 1.0);
        let p: Tensor<f64> = Tensor::uniform(&[2, 3], 5.0, &mut ChaCha8Rng::seed_from_u64(9));
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                oracle += (p.get(&[i, j]) - t.get(&[i, j])).abs();
            }
        }
        assert!((l1_loss(&p, &t).unwrap() - oracle / 6.0).abs() < 1e-12);
        assert!(l1_loss(&p, &Tensor::zeros(&[3, 2])).is_err());
    }

    proptest! {
        #[test]
        fn l1_is_a_symmetric_distance(a in proptest::collection::vec(-100.0f64..100.0, 6), b in proptest::collection::vec(-100.0f64..100.0, 6)) {
            let a = Tensor::from_f64(&[2, 3], &a).unwrap();
            let b = Tensor::from_f64(&[2, 3], &b).unwrap();
            let ab = l1_loss(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, l1_loss(&b, &a).unwrap());
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
