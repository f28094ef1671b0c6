//! Predictive models built from the numerics in [`crate::nn`] and
//! [`crate::lstm`]: the windowed LSTM regressor, the feed-forward baseline,
//! and transfer of a trained recurrent layer onto a fresh head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lstm::{bptt_backward, sequence_forward, BpttCache, LstmParams, LstmState};
use crate::nn::{Linear, ParamSet, Shape, Tensor};
use crate::sncurve::ScalerState;

/// Architecture of an [`LstmRegressor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressorConfig {
    pub hidden_size: usize,
    pub lstm_layers: usize,
    pub fc_units: usize,
    pub window_len: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            hidden_size: 64,
            lstm_layers: 1,
            fc_units: 64,
            window_len: 50,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.lstm_layers == 0 || self.fc_units == 0 || self.window_len == 0 {
            return Err(Error::Argument(format!(
                "regressor sizes must all be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Closed-form value count: LSTM layers, then `fc` and `out`.
    pub fn num_values(&self) -> usize {
        let h = self.hidden_size;
        let first = 4 * (h + h * h + h);
        let rest = 4 * (h * h + h * h + h) * (self.lstm_layers - 1);
        first + rest + (h * self.fc_units + self.fc_units) + (self.fc_units + 1)
    }
}

/// Provenance carried into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// Stacked LSTM over a window of scaled stresses, read out from the last
/// hidden state through a tanh FC layer and a linear output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRegressor {
    pub params: ParamSet,
    pub lstm: Vec<LstmParams>,
    pub fc: Linear,
    pub out: Linear,
    pub scaler: Option<ScalerState>,
    pub config: RegressorConfig,
    pub meta: TrainingMeta,
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct RegressorCache {
    layers: Vec<BpttCache>,
    features: Tensor,
    fc_act: Tensor,
}

pub fn lstm_prefix(layer: usize) -> String {
    format!("lstm{layer}")
}

impl LstmRegressor {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for layer in 0..config.lstm_layers {
            let input = if layer == 0 { 1 } else { config.hidden_size };
            lstm.push(LstmParams::new(&mut params, &lstm_prefix(layer), input, config.hidden_size, &mut rng)?);
        }
        let fc = Linear::new(&mut params, "head.fc", config.hidden_size, config.fc_units, &mut rng)?;
        let out = Linear::new(&mut params, "head.out", config.fc_units, 1, &mut rng)?;
        Ok(LstmRegressor {
            params,
            lstm,
            fc,
            out,
            scaler: None,
            config,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    /// Rebuilds the layer handles over an existing parameter set.
    pub fn from_params(
        params: ParamSet,
        config: RegressorConfig,
        scaler: Option<ScalerState>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        config.validate()?;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for layer in 0..config.lstm_layers {
            let input = if layer == 0 { 1 } else { config.hidden_size };
            lstm.push(LstmParams::bind(&params, &lstm_prefix(layer), input, config.hidden_size)?);
        }
        let fc = Linear::bind(&params, "head.fc", config.hidden_size, config.fc_units)?;
        let out = Linear::bind(&params, "head.out", config.fc_units, 1)?;
        let expected = config.num_values();
        if params.num_values() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter set holds {} values, architecture needs {expected}",
                params.num_values()
            )));
        }
        Ok(LstmRegressor {
            params,
            lstm,
            fc,
            out,
            scaler,
            config,
            meta,
        })
    }

    pub fn window_len(&self) -> usize {
        self.config.window_len
    }

    /// True when no recurrent tensor can change during training.
    pub fn lstm_frozen(&self) -> bool {
        self.lstm
            .iter()
            .flat_map(|l| l.ids())
            .all(|id| self.params.is_frozen(id))
    }

    fn check_windows(&self, windows: &Tensor) -> Result<usize> {
        let (batch, len) = windows.as_rows();
        if len != self.config.window_len {
            return Err(Error::Argument(format!(
                "window length {len} does not match the model's {}",
                self.config.window_len
            )));
        }
        Ok(batch)
    }

    /// Final hidden state of the top LSTM layer for each window row,
    /// starting every window from a zero state.
    pub fn features(&self, windows: &Tensor) -> Result<Tensor> {
        Ok(self.run_lstm(windows)?.0)
    }

    fn run_lstm(&self, windows: &Tensor) -> Result<(Tensor, Vec<BpttCache>)> {
        let batch = self.check_windows(windows)?;
        let w = self.config.window_len;
        let mut inputs: Vec<Tensor> = (0..w)
            .map(|t| {
                let col = (0..batch).map(|r| windows.get(r, t)).collect();
                Tensor::new(Shape::Matrix(batch, 1), col).expect("column")
            })
            .collect();
        let mut caches = Vec::with_capacity(self.lstm.len());
        let mut last = None;
        for layer in &self.lstm {
            let init = LstmState::zeros(batch, layer.hidden_size);
            let (outputs, state, cache) = sequence_forward(layer, &self.params, &inputs, &init)?;
            caches.push(cache);
            last = Some(state.h);
            inputs = outputs;
        }
        Ok((last.expect("at least one layer"), caches))
    }

    /// Head applied to precomputed features.
    pub fn head_forward(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let fc_act = self.fc.forward(&self.params, features)?.map(f64::tanh);
        let pred = self.out.forward(&self.params, &fc_act)?;
        Ok((pred, fc_act))
    }

    /// Batched prediction: `windows` is `(batch, window_len)`, result is
    /// `(batch, 1)`.
    pub fn forward_batch(&self, windows: &Tensor) -> Result<(Tensor, RegressorCache)> {
        let (features, layers) = self.run_lstm(windows)?;
        let (pred, fc_act) = self.head_forward(&features)?;
        Ok((
            pred,
            RegressorCache {
                layers,
                features,
                fc_act,
            },
        ))
    }

    /// Accumulates head gradients for `dpred` (`(batch, 1)`); returns the
    /// gradient with respect to the features.
    pub fn head_backward(&mut self, features: &Tensor, fc_act: &Tensor, dpred: &Tensor) -> Result<Tensor> {
        let d_act = self.out.backward(&mut self.params, fc_act, dpred)?;
        let d_fc = Tensor::new(
            d_act.shape(),
            d_act
                .data()
                .iter()
                .zip(fc_act.data())
                .map(|(g, a)| g * (1.0 - a * a))
                .collect(),
        )?;
        self.fc.backward(&mut self.params, features, &d_fc)
    }

    /// Full backward pass through head and every LSTM layer.
    pub fn backward(&mut self, cache: &RegressorCache, dpred: &Tensor) -> Result<()> {
        let mut d_top = self.head_backward(&cache.features, &cache.fc_act, dpred)?;
        if self.lstm_frozen() {
            return Ok(());
        }
        let steps = self.config.window_len;
        let mut grads: Vec<Option<Tensor>> = vec![None; steps];
        grads[steps - 1] = Some(std::mem::replace(&mut d_top, Tensor::scalar(0.0)));
        for (layer, layer_cache) in self.lstm.iter().zip(&cache.layers).rev() {
            let back = bptt_backward(layer, &mut self.params, layer_cache, &grads)?;
            grads = back.inputs.into_iter().map(Some).collect();
        }
        Ok(())
    }

    /// Predicts the next scaled stress from one window of scaled stresses.
    pub fn predict_next(&self, window: &[f64]) -> Result<f64> {
        let t = Tensor::new(Shape::Matrix(1, window.len()), window.to_vec())?;
        let (pred, _) = self.forward_batch(&t)?;
        Ok(pred.data()[0])
    }
}

/// Zero-state forward over one window; see [`LstmRegressor::predict_next`].
pub fn regressor_forward(model: &LstmRegressor, window: &[f64]) -> Result<f64> {
    model.predict_next(window)
}

pub fn build_lstm_regressor(config: RegressorConfig, seed: u64) -> Result<LstmRegressor> {
    LstmRegressor::new(config, seed)
}

/// Copies the source's recurrent tensors, freezes them, and draws a fresh
/// head from `seed`. The scaler is left unset for the target dataset.
pub fn transfer_surgery(source: &LstmRegressor, seed: u64) -> Result<LstmRegressor> {
    let mut target = source.clone();
    for layer in &target.lstm {
        for id in layer.ids() {
            target.params.set_frozen(id, true);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    target.fc.reinitialize(&mut target.params, &mut rng)?;
    target.out.reinitialize(&mut target.params, &mut rng)?;
    target.params.set_frozen(target.fc.weight, false);
    target.params.set_frozen(target.fc.bias, false);
    target.params.set_frozen(target.out.weight, false);
    target.params.set_frozen(target.out.bias, false);
    target.params.zero_grads();
    target.scaler = None;
    target.meta = TrainingMeta {
        seed,
        ..TrainingMeta::default()
    };
    Ok(target)
}

/// Architecture of a [`DnnBaseline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DnnConfig {
    pub hidden_layers: usize,
    pub units: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig {
            hidden_layers: 4,
            units: 32,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.units == 0 {
            return Err(Error::Argument(format!("DNN sizes must be positive, got {self:?}")));
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        let u = self.units;
        (u + u) + (self.hidden_layers - 1) * (u * u + u) + (u + 1)
    }
}

/// Pointwise regressor from scaled `log10(N)` to scaled stress: tanh hidden
/// layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnBaseline {
    pub params: ParamSet,
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub scaler: Option<ScalerState>,
    /// Min-max bounds of `log10(N)` over the training region.
    pub log_cycle_scaler: Option<ScalerState>,
    pub config: DnnConfig,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone)]
pub struct DnnCache {
    inputs: Vec<Tensor>,
    activations: Vec<Tensor>,
}

impl DnnBaseline {
    pub fn new(config: DnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut hidden = Vec::with_capacity(config.hidden_layers);
        for k in 0..config.hidden_layers {
            let input = if k == 0 { 1 } else { config.units };
            hidden.push(Linear::new(&mut params, &format!("dnn.hidden{k}"), input, config.units, &mut rng)?);
        }
        let out = Linear::new(&mut params, "dnn.out", config.units, 1, &mut rng)?;
        Ok(DnnBaseline {
            params,
            hidden,
            out,
            scaler: None,
            log_cycle_scaler: None,
            config,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    pub fn from_params(
        params: ParamSet,
        config: DnnConfig,
        scaler: Option<ScalerState>,
        log_cycle_scaler: Option<ScalerState>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        config.validate()?;
        let hidden = (0..config.hidden_layers)
            .map(|k| {
                let input = if k == 0 { 1 } else { config.units };
                Linear::bind(&params, &format!("dnn.hidden{k}"), input, config.units)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::bind(&params, "dnn.out", config.units, 1)?;
        if params.num_values() != config.num_values() {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter set holds {} values, architecture needs {}",
                params.num_values(),
                config.num_values()
            )));
        }
        Ok(DnnBaseline {
            params,
            hidden,
            out,
            scaler,
            log_cycle_scaler,
            config,
            meta,
        })
    }

    /// `x` is `(batch, 1)` of scaled log-cycles.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, DnnCache)> {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut activations = Vec::with_capacity(self.hidden.len());
        let mut current = x.clone();
        for layer in &self.hidden {
            let act = layer.forward(&self.params, &current)?.map(f64::tanh);
            inputs.push(std::mem::replace(&mut current, act.clone()));
            activations.push(act);
        }
        let pred = self.out.forward(&self.params, &current)?;
        Ok((pred, DnnCache { inputs, activations }))
    }

    pub fn backward(&mut self, cache: &DnnCache, dpred: &Tensor) -> Result<()> {
        let top = cache.activations.last().expect("at least one hidden layer");
        let mut grad = self.out.backward(&mut self.params, top, dpred)?;
        for (k, layer) in self.hidden.iter().enumerate().rev() {
            let act = &cache.activations[k];
            let d_pre = Tensor::new(
                act.shape(),
                grad.data()
                    .iter()
                    .zip(act.data())
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect(),
            )?;
            grad = layer.backward(&mut self.params, &cache.inputs[k], &d_pre)?;
        }
        Ok(())
    }

    /// Scaled stress predictions for raw cycle counts.
    pub fn predict_scaled(&self, cycles: &[f64]) -> Result<Vec<f64>> {
        let lc = self.log_cycle_scaler.ok_or_else(|| {
            Error::Scaler("DNN has no cycle scaler; train it before predicting".into())
        })?;
        if cycles.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::new(
            Shape::Matrix(cycles.len(), 1),
            cycles.iter().map(|n| lc.scale(n.log10())).collect(),
        )?;
        Ok(self.forward_batch(&x)?.0.into_data())
    }
}

pub fn build_dnn(config: DnnConfig, seed: u64) -> Result<DnnBaseline> {
    DnnBaseline::new(config, seed)
}

/// Either model kind, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lstm(LstmRegressor),
    Dnn(DnnBaseline),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lstm(_) => ModelKind::LstmRegressor,
            Model::Dnn(_) => ModelKind::Dnn,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Lstm(m) => &m.params,
            Model::Dnn(m) => &m.params,
        }
    }

    pub fn scaler(&self) -> Option<ScalerState> {
        match self {
            Model::Lstm(m) => m.scaler,
            Model::Dnn(m) => m.scaler,
        }
    }

    pub fn meta(&self) -> TrainingMeta {
        match self {
            Model::Lstm(m) => m.meta,
            Model::Dnn(m) => m.meta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LstmRegressor,
    Dnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LstmRegressor => "lstm_regressor",
            ModelKind::Dnn => "dnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lstm_regressor" => Some(ModelKind::LstmRegressor),
            "dnn" => Some(ModelKind::Dnn),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;
    use crate::nn::mse_loss;
    use rand::Rng;

    fn tiny() -> RegressorConfig {
        RegressorConfig {
            hidden_size: 3,
            lstm_layers: 1,
            fc_units: 4,
            window_len: 6,
        }
    }

    #[test]
    fn default_architecture() {
        let m = build_lstm_regressor(RegressorConfig::default(), 1).unwrap();
        assert_eq!(m.lstm[0].hidden_size, 64);
        assert_eq!(m.fc.out_dim, 64);
        assert_eq!(m.window_len(), 50);
        // 4 (64 + 64*64 + 64) + (64*64 + 64) + (64 + 1)
        assert_eq!(m.params.num_values(), 16_896 + 4_160 + 65);
        assert_eq!(m.params.num_values(), RegressorConfig::default().num_values());
        assert_eq!(m.lstm[0].num_values(), 16_896);
    }

    #[test]
    fn stacked_parameter_count() {
        let cfg = RegressorConfig {
            lstm_layers: 3,
            ..tiny()
        };
        let m = build_lstm_regressor(cfg, 0).unwrap();
        assert_eq!(m.params.num_values(), cfg.num_values());
        let d = build_dnn(DnnConfig::default(), 0).unwrap();
        // 64 + 3 * (32*32 + 32) + 33
        assert_eq!(d.params.num_values(), 64 + 3 * 1056 + 33);
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        let a = build_lstm_regressor(tiny(), 9).unwrap();
        let b = build_lstm_regressor(tiny(), 9).unwrap();
        assert_eq!(a.params, b.params);
        assert!(build_lstm_regressor(RegressorConfig { hidden_size: 0, ..tiny() }, 1).is_err());
        assert!(build_dnn(DnnConfig { hidden_layers: 0, units: 32 }, 1).is_err());
    }

    #[test]
    fn zero_model_outputs_head_bias() {
        let mut m = build_lstm_regressor(tiny(), 2).unwrap();
        let ids: Vec<_> = m.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            m.params.param_mut(id).value.fill(0.0);
        }
        m.params.param_mut(m.out.bias).value.fill(0.625);
        assert_eq!(regressor_forward(&m, &[0.3, 0.1, 0.9, 0.2, 0.4, 0.8]).unwrap(), 0.625);
    }

    #[test]
    fn golden_forward_value() {
        let cfg = RegressorConfig {
            hidden_size: 2,
            lstm_layers: 1,
            fc_units: 2,
            window_len: 5,
        };
        let m = build_lstm_regressor(cfg, 2024).unwrap();
        let v = regressor_forward(&m, &[1.0, 0.8, 0.6, 0.5, 0.45]).unwrap();
        assert_eq!(v, regressor_forward(&m, &[1.0, 0.8, 0.6, 0.5, 0.45]).unwrap());
        // Captured from this implementation; guards against silent drift.
        assert!((v - GOLDEN_TINY).abs() < 1e-12, "{v:.17}");
    }

    const GOLDEN_TINY: f64 = 0.459_550_435_026_593_87;

    #[test]
    fn wrong_window_length_is_rejected() {
        let m = build_lstm_regressor(tiny(), 1).unwrap();
        assert!(matches!(regressor_forward(&m, &[0.0; 5]), Err(Error::Argument(_))));
        let default = build_lstm_regressor(RegressorConfig::default(), 1).unwrap();
        assert!(regressor_forward(&default, &[0.0; 49]).is_err());
    }

    fn random_windows(rng: &mut ChaCha8Rng, batch: usize, w: usize) -> Tensor {
        Tensor::matrix(batch, w, (0..batch * w).map(|_| rng.gen_range(-0.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn regressor_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for layers in [1, 2] {
            let cfg = RegressorConfig {
                lstm_layers: layers,
                ..tiny()
            };
            let mut m = build_lstm_regressor(cfg, 17).unwrap();
            let x = random_windows(&mut rng, 4, cfg.window_len);
            let y = Tensor::matrix(4, 1, vec![0.1, -0.2, 0.7, 0.3]).unwrap();
            let (pred, cache) = m.forward_batch(&x).unwrap();
            let (_, g) = mse_loss(&pred, &y).unwrap();
            m.backward(&cache, &g).unwrap();
            let probe = m.clone();
            let report = finite_difference_check(
                |p| {
                    let mut view = probe.clone();
                    view.params = p.clone();
                    Ok(mse_loss(&view.forward_batch(&x)?.0, &y)?.0)
                },
                &mut m.params,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{layers} layers: {report:?}");
        }
    }

    #[test]
    fn dnn_gradients_match_finite_differences() {
        let cfg = DnnConfig {
            hidden_layers: 3,
            units: 5,
        };
        let mut d = build_dnn(cfg, 8).unwrap();
        let x = Tensor::matrix(6, 1, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let y = Tensor::matrix(6, 1, vec![1.0, 0.7, 0.5, 0.35, 0.3, 0.28]).unwrap();
        let (pred, cache) = d.forward_batch(&x).unwrap();
        let (_, g) = mse_loss(&pred, &y).unwrap();
        d.backward(&cache, &g).unwrap();
        let probe = d.clone();
        let report = finite_difference_check(
            |p| {
                let mut view = probe.clone();
                view.params = p.clone();
                Ok(mse_loss(&view.forward_batch(&x)?.0, &y)?.0)
            },
            &mut d.params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn surgery_copies_and_freezes_lstm() {
        let source = build_lstm_regressor(tiny(), 3).unwrap();
        let target = transfer_surgery(&source, 99).unwrap();
        for (a, b) in source.lstm[0].ids().zip(target.lstm[0].ids()) {
            let (va, vb) = (source.params.value(a).data(), target.params.value(b).data());
            assert!(va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(target.params.is_frozen(b));
        }
        assert!(target.lstm_frozen());
        assert!(!target.params.is_frozen(target.fc.weight));
        let (hs, ht) = (source.params.value(source.fc.weight), target.params.value(target.fc.weight));
        assert!(hs.data().iter().zip(ht.data()).any(|(x, y)| x != y));
        assert!(target.scaler.is_none());
    }

    #[test]
    fn frozen_backward_only_touches_head() {
        let source = build_lstm_regressor(tiny(), 3).unwrap();
        let mut target = transfer_surgery(&source, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_windows(&mut rng, 3, 6);
        let (pred, cache) = target.forward_batch(&x).unwrap();
        target.backward(&cache, &pred).unwrap();
        for id in target.lstm[0].ids() {
            assert_eq!(target.params.grad(id).sum_squares(), 0.0);
        }
        assert!(target.params.grad(target.fc.weight).sum_squares() > 0.0);
    }
}
