//! Windowing, training loops, autoregressive rollout, RMSE, and the
//! end-to-end experiment: source LSTM on the axial curve, transfer to the
//! torsional curve, and the non-transferred and feed-forward baselines.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{
    build_dnn, build_lstm_regressor, transfer_surgery, DnnBaseline, DnnConfig, LstmRegressor,
    RegressorConfig,
};
use crate::nn::{mse_loss, AdamConfig, AdamState, ParamSet, Shape, Tensor};
use crate::sncurve::{fit_scaler, fit_scaler_on, write_file, ScalerState, SnSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub window_len: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Global gradient-norm cap applied before each optimizer step.
    pub clip_norm: Option<f64>,
    /// Windows per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    pub train_count_axial: usize,
    pub train_count_torsional: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_len: 50,
            epochs: 500,
            adam: AdamConfig::default(),
            seed: 7,
            clip_norm: Some(5.0),
            batch_size: 32,
            train_count_axial: 600,
            train_count_torsional: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 || self.window_len == 0 {
            return Err(Error::Argument(format!(
                "epochs and window_len must be >= 1 (got {} and {})",
                self.epochs, self.window_len
            )));
        }
        for (name, count) in [
            ("train_count_axial", self.train_count_axial),
            ("train_count_torsional", self.train_count_torsional),
        ] {
            if count <= self.window_len {
                return Err(Error::Argument(format!(
                    "{name} = {count} must exceed window_len = {}",
                    self.window_len
                )));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Argument(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Sliding `(window, next value)` pairs over a scaled training series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `(count, window_len)`.
    pub inputs: Tensor,
    /// `(count, 1)`.
    pub targets: Tensor,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.inputs.as_rows().1
    }

    fn gather(&self, rows: &[usize]) -> (Tensor, Tensor) {
        let w = self.window_len();
        let mut x = Vec::with_capacity(rows.len() * w);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.inputs.row(r));
            y.push(self.targets.data()[r]);
        }
        (
            Tensor::new(Shape::Matrix(rows.len(), w), x).expect("sized"),
            Tensor::new(Shape::Matrix(rows.len(), 1), y).expect("sized"),
        )
    }
}

/// Window `i` covers `[i, i + window_len)` and targets `i + window_len`.
pub fn make_windows(series: &[f64], window_len: usize) -> Result<WindowSet> {
    if window_len == 0 || series.len() <= window_len {
        return Err(Error::Argument(format!(
            "series of length {} is too short for windows of {window_len}",
            series.len()
        )));
    }
    let count = series.len() - window_len;
    let mut x = Vec::with_capacity(count * window_len);
    for i in 0..count {
        x.extend_from_slice(&series[i..i + window_len]);
    }
    Ok(WindowSet {
        inputs: Tensor::new(Shape::Matrix(count, window_len), x)?,
        targets: Tensor::new(Shape::Matrix(count, 1), series[window_len..].to_vec())?,
    })
}

/// Shared epoch loop: shuffles sample order (seeded) when mini-batching,
/// calls `step` once per batch with the batch's row indices, and records the
/// sample-weighted mean loss of each epoch.
fn run_epochs(
    samples: usize,
    cfg: &TrainConfig,
    shuffle_seed: u64,
    mut step: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let batch = if cfg.batch_size == 0 || cfg.batch_size >= samples {
        samples
    } else {
        cfg.batch_size
    };
    let mut order: Vec<usize> = (0..samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if batch < samples {
            order.shuffle(&mut rng);
        }
        let mut sse = 0.0;
        for rows in order.chunks(batch) {
            let loss = match step(rows) {
                Ok(l) => l,
                Err(Error::Numeric(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sse += loss * rows.len() as f64;
        }
        history.push(sse / samples as f64);
    }
    Ok(history)
}

fn optimizer_step(params: &mut ParamSet, adam: &mut AdamState, clip: Option<f64>) -> Result<()> {
    if let Some(max) = clip {
        if !params.clip_grad_norm(max).is_finite() {
            return Err(Error::Numeric("gradient norm"));
        }
    }
    adam.step(params)
}

/// Trains `model` on `windows` for `cfg.epochs` epochs; returns per-epoch
/// mean MSE. Frozen tensors are never updated. When every recurrent tensor
/// is frozen the LSTM features are computed once up front, which yields the
/// same numbers as recomputing them per batch.
pub fn train_model(model: &mut LstmRegressor, windows: &WindowSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate_epochs()?;
    if windows.is_empty() {
        return Err(Error::Argument("no training windows".into()));
    }
    if windows.window_len() != model.window_len() {
        return Err(Error::Argument(format!(
            "windows have length {} but the model expects {}",
            windows.window_len(),
            model.window_len()
        )));
    }
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let shuffle_seed = model.meta.seed ^ 0x5eed_5eed;
    let history = if model.lstm_frozen() {
        let features = model.features(&windows.inputs)?;
        let hidden = features.as_rows().1;
        run_epochs(windows.len(), cfg, shuffle_seed, |rows| {
            let mut f = Vec::with_capacity(rows.len() * hidden);
            for &r in rows {
                f.extend_from_slice(features.row(r));
            }
            let feats = Tensor::new(Shape::Matrix(rows.len(), hidden), f)?;
            let (_, y) = windows.gather(rows);
            let (pred, fc_act) = model.head_forward(&feats)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            model.head_backward(&feats, &fc_act, &grad)?;
            optimizer_step(&mut model.params, &mut adam, cfg.clip_norm)?;
            Ok(loss)
        })?
    } else {
        run_epochs(windows.len(), cfg, shuffle_seed, |rows| {
            let (x, y) = windows.gather(rows);
            let (pred, cache) = model.forward_batch(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            model.backward(&cache, &grad)?;
            optimizer_step(&mut model.params, &mut adam, cfg.clip_norm)?;
            Ok(loss)
        })?
    };
    model.meta.epochs_run += history.len();
    model.meta.final_loss = *history.last().expect("epochs >= 1");
    Ok(history)
}

/// Trains the pointwise baseline on `(scaled log10 N, scaled stress)` pairs.
pub fn train_dnn(model: &mut DnnBaseline, inputs: &[f64], targets: &[f64], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate_epochs()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Argument(format!(
            "DNN needs equal, nonempty inputs and targets ({} vs {})",
            inputs.len(),
            targets.len()
        )));
    }
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let shuffle_seed = model.meta.seed ^ 0x5eed_5eed;
    let history = run_epochs(inputs.len(), cfg, shuffle_seed, |rows| {
        let x = Tensor::new(Shape::Matrix(rows.len(), 1), rows.iter().map(|&r| inputs[r]).collect())?;
        let y = Tensor::new(Shape::Matrix(rows.len(), 1), rows.iter().map(|&r| targets[r]).collect())?;
        let (pred, cache) = model.forward_batch(&x)?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        model.backward(&cache, &grad)?;
        optimizer_step(&mut model.params, &mut adam, cfg.clip_norm)?;
        Ok(loss)
    })?;
    model.meta.epochs_run += history.len();
    model.meta.final_loss = *history.last().expect("epochs >= 1");
    Ok(history)
}

impl TrainConfig {
    fn validate_epochs(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Multi-step rollout: step `k` predicts from the last `window_len` values
/// of `tail ++ predictions[..k]`.
pub fn autoregressive_forecast(model: &LstmRegressor, tail: &[f64], horizon: usize) -> Result<Vec<f64>> {
    autoregressive_forecast_observed(model, tail, horizon, |_, _| {})
}

/// As [`autoregressive_forecast`], calling `observe(step, window)` with the
/// exact input of each step (`step` counts from 1).
pub fn autoregressive_forecast_observed(
    model: &LstmRegressor,
    tail: &[f64],
    horizon: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let w = model.window_len();
    if tail.len() != w {
        return Err(Error::Argument(format!(
            "rollout tail has {} values, the model window is {w}",
            tail.len()
        )));
    }
    let mut buffer = Vec::with_capacity(w + horizon);
    buffer.extend_from_slice(tail);
    for step in 1..=horizon {
        let window = &buffer[buffer.len() - w..];
        observe(step, window);
        let next = model.predict_next(window)?;
        if !next.is_finite() {
            return Err(Error::Numeric("autoregressive_forecast"));
        }
        buffer.push(next);
    }
    Ok(buffer.split_off(w))
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "rmse of different lengths ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("rmse of empty vectors".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Predictions of one model over one dataset's test region.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub model: String,
    pub dataset: String,
    pub cycles: Vec<f64>,
    pub truth: Vec<f64>,
    /// MPa.
    pub predicted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Test-region RMSE in MPa (0 when the test region is empty).
    pub rmse: f64,
    /// Same, in scaled units.
    pub rmse_scaled: f64,
    /// One-step-ahead RMSE over the training region, MPa.
    pub train_rmse: f64,
    pub loss_history: Vec<f64>,
}

impl ForecastResult {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: &str,
        dataset: &str,
        cycles: &[f64],
        truth: &[f64],
        predicted: Vec<f64>,
        scaler: &ScalerState,
        train_rmse: f64,
        loss_history: Vec<f64>,
    ) -> Result<Self> {
        let residuals: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p - t).collect();
        let (err, err_scaled) = if predicted.is_empty() {
            (0.0, 0.0)
        } else {
            let e = rmse(&predicted, truth)?;
            (e, e / scaler.range())
        };
        Ok(ForecastResult {
            model: model.to_string(),
            dataset: dataset.to_string(),
            cycles: cycles.to_vec(),
            truth: truth.to_vec(),
            predicted,
            residuals,
            rmse: err,
            rmse_scaled: err_scaled,
            train_rmse,
            loss_history,
        })
    }
}

/// One-step-ahead (teacher forced) predictions over the training windows,
/// in MPa, aligned with `train_stress[window_len..]`.
pub fn one_step_predictions(model: &LstmRegressor, train_stress: &[f64]) -> Result<Vec<f64>> {
    let scaler = require_scaler(model.scaler)?;
    let windows = make_windows(&scaler.scale_all(train_stress), model.window_len())?;
    let (pred, _) = model.forward_batch(&windows.inputs)?;
    Ok(scaler.unscale_all(pred.data()))
}

fn require_scaler(s: Option<ScalerState>) -> Result<ScalerState> {
    s.ok_or_else(|| Error::Scaler("model has no fitted scaler".into()))
}

/// Rolls `model` across the test region of `series`, starting from the
/// last `window_len` training points. `horizon` defaults to the test length.
pub fn forecast_series(
    model: &LstmRegressor,
    name: &str,
    series: &SnSeries,
    horizon: Option<usize>,
    loss_history: Vec<f64>,
) -> Result<ForecastResult> {
    let scaler = require_scaler(model.scaler)?;
    let w = model.window_len();
    let train = series.train_stress();
    if train.len() < w {
        return Err(Error::Argument(format!(
            "training region has {} points, fewer than the window {w}",
            train.len()
        )));
    }
    let test_len = series.test_stress().len();
    let horizon = horizon.unwrap_or(test_len).min(test_len);
    let tail = scaler.scale_all(&train[train.len() - w..]);
    let scaled = autoregressive_forecast(model, &tail, horizon)?;
    let predicted = scaler.unscale_all(&scaled);
    let train_rmse = if train.len() > w {
        rmse(&one_step_predictions(model, train)?, &train[w..])?
    } else {
        0.0
    };
    ForecastResult::assemble(
        name,
        &series.label,
        &series.test_cycles()[..horizon],
        &series.test_stress()[..horizon],
        predicted,
        &scaler,
        train_rmse,
        loss_history,
    )
}

/// Pointwise DNN predictions over the first `horizon` test cycles (all of
/// them when `None`).
pub fn forecast_dnn(
    model: &DnnBaseline,
    name: &str,
    series: &SnSeries,
    horizon: Option<usize>,
    loss_history: Vec<f64>,
) -> Result<ForecastResult> {
    let scaler = require_scaler(model.scaler)?;
    let test_len = series.test_cycles().len();
    let horizon = horizon.unwrap_or(test_len).min(test_len);
    let cycles = &series.test_cycles()[..horizon];
    let predicted = scaler.unscale_all(&model.predict_scaled(cycles)?);
    let train_pred = scaler.unscale_all(&model.predict_scaled(series.train_cycles())?);
    let train_rmse = if train_pred.is_empty() {
        0.0
    } else {
        rmse(&train_pred, series.train_stress())?
    };
    ForecastResult::assemble(
        name,
        &series.label,
        cycles,
        &series.test_stress()[..horizon],
        predicted,
        &scaler,
        train_rmse,
        loss_history,
    )
}

/// Seeds of the individual trainings, derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub source: u64,
    pub transfer_head: u64,
    pub baseline: u64,
    pub dnn_axial: u64,
    pub dnn_torsional: u64,
}

impl StageSeeds {
    pub fn derive(seed: u64) -> Self {
        StageSeeds {
            source: seed,
            transfer_head: seed.wrapping_add(1),
            baseline: seed.wrapping_add(2),
            dnn_axial: seed.wrapping_add(3),
            dnn_torsional: seed.wrapping_add(4),
        }
    }
}

/// Builds a regressor from `seed`, fits its scaler on the training region
/// of `series`, and trains it on the training windows.
pub fn train_regressor_on(
    series: &SnSeries,
    arch: RegressorConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(LstmRegressor, Vec<f64>)> {
    let mut model = build_lstm_regressor(arch, seed)?;
    let history = fit_and_train(&mut model, series, cfg)?;
    Ok((model, history))
}

/// Transfer step: copy and freeze the source LSTM, draw a new head from
/// `seed`, fit the target scaler, and train the head on `series`.
pub fn train_transfer_on(
    source: &LstmRegressor,
    series: &SnSeries,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(LstmRegressor, Vec<f64>)> {
    let mut target = transfer_surgery(source, seed)?;
    let history = fit_and_train(&mut target, series, cfg)?;
    Ok((target, history))
}

fn fit_and_train(model: &mut LstmRegressor, series: &SnSeries, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let scaler = fit_scaler(series)?;
    model.scaler = Some(scaler);
    let windows = make_windows(&scaler.scale_all(series.train_stress()), model.window_len())?;
    train_model(model, &windows, cfg)
}

pub fn train_dnn_on(
    series: &SnSeries,
    arch: DnnConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DnnBaseline, Vec<f64>)> {
    let mut model = build_dnn(arch, seed)?;
    let scaler = fit_scaler(series)?;
    let log_cycles: Vec<f64> = series.train_cycles().iter().map(|n| n.log10()).collect();
    let lc = fit_scaler_on(&log_cycles)?;
    model.scaler = Some(scaler);
    model.log_cycle_scaler = Some(lc);
    let x = lc.scale_all(&log_cycles);
    let y = scaler.scale_all(series.train_stress());
    let history = train_dnn(&mut model, &x, &y, cfg)?;
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Axial series; its training region is set from `train.train_count_axial`.
    pub axial: SnSeries,
    pub torsional: SnSeries,
    pub regressor: RegressorConfig,
    pub dnn: DnnConfig,
    pub train: TrainConfig,
}

/// Result slot for one model: a forecast, or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub name: String,
    pub dataset: String,
    pub result: std::result::Result<ForecastResult, String>,
}

impl ModelOutcome {
    pub fn rmse(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.rmse)
    }
}

pub const SOURCE_LSTM: &str = "source_lstm";
pub const TR_LSTM: &str = "tr_lstm";
pub const BASELINE_LSTM: &str = "baseline_lstm";
pub const DNN: &str = "dnn";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub epochs: usize,
    pub window_len: usize,
    pub batch_size: usize,
    pub outcomes: Vec<ModelOutcome>,
    pub torsional_train_range: f64,
    /// Trained models, for checkpointing (absent for failed trainings).
    pub source: Option<LstmRegressor>,
    pub transfer: Option<LstmRegressor>,
    pub baseline: Option<LstmRegressor>,
    pub dnn_axial: Option<DnnBaseline>,
    pub dnn_torsional: Option<DnnBaseline>,
}

impl ExperimentReport {
    pub fn outcome(&self, name: &str, dataset: &str) -> Option<&ModelOutcome> {
        self.outcomes.iter().find(|o| o.name == name && o.dataset == dataset)
    }

    pub fn rmse(&self, name: &str, dataset: &str) -> Option<f64> {
        self.outcome(name, dataset).and_then(ModelOutcome::rmse)
    }

    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    /// Structured text form; see [`render_report`].
    pub fn render(&self) -> String {
        render_report(
            self.seed,
            self.epochs,
            self.window_len,
            self.batch_size,
            self.torsional_train_range,
            &self.outcomes,
        )
    }
}

/// Runs every stage in order. A failing training is recorded in its slot
/// and the remaining stages still run (the transfer stage needs the source).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.train.validate()?;
    cfg.regressor.validate()?;
    cfg.dnn.validate()?;
    if cfg.regressor.window_len != cfg.train.window_len {
        return Err(Error::Argument(format!(
            "regressor window {} differs from training window {}",
            cfg.regressor.window_len, cfg.train.window_len
        )));
    }
    let seeds = StageSeeds::derive(cfg.train.seed);
    let axial = crate::sncurve::split_series(&cfg.axial, cfg.train.train_count_axial)?;
    let torsional = crate::sncurve::split_series(&cfg.torsional, cfg.train.train_count_torsional)?;
    let torsional_scaler = fit_scaler(&torsional)?;
    let mut outcomes = Vec::new();
    let slot = |name: &str, dataset: &str, r: Result<ForecastResult>| ModelOutcome {
        name: name.to_string(),
        dataset: dataset.to_string(),
        result: r.map_err(|e| e.to_string()),
    };

    let source = train_regressor_on(&axial, cfg.regressor, &cfg.train, seeds.source);
    let (source_model, r) = match source {
        Ok((m, h)) => {
            let r = forecast_series(&m, SOURCE_LSTM, &axial, None, h);
            (Some(m), r)
        }
        Err(e) => (None, Err(e)),
    };
    outcomes.push(slot(SOURCE_LSTM, &axial.label, r));

    let (transfer_model, r) = match &source_model {
        Some(src) => match train_transfer_on(src, &torsional, &cfg.train, seeds.transfer_head) {
            Ok((m, h)) => {
                let r = forecast_series(&m, TR_LSTM, &torsional, None, h);
                (Some(m), r)
            }
            Err(e) => (None, Err(e)),
        },
        None => (None, Err(Error::Argument("source model unavailable".into()))),
    };
    outcomes.push(slot(TR_LSTM, &torsional.label, r));

    let (baseline_model, r) = match train_regressor_on(&torsional, cfg.regressor, &cfg.train, seeds.baseline) {
        Ok((m, h)) => {
            let r = forecast_series(&m, BASELINE_LSTM, &torsional, None, h);
            (Some(m), r)
        }
        Err(e) => (None, Err(e)),
    };
    outcomes.push(slot(BASELINE_LSTM, &torsional.label, r));

    let mut dnns = Vec::new();
    for (series, seed) in [(&axial, seeds.dnn_axial), (&torsional, seeds.dnn_torsional)] {
        let (m, r) = match train_dnn_on(series, cfg.dnn, &cfg.train, seed) {
            Ok((m, h)) => {
                let r = forecast_dnn(&m, DNN, series, None, h);
                (Some(m), r)
            }
            Err(e) => (None, Err(e)),
        };
        outcomes.push(slot(DNN, &series.label, r));
        dnns.push(m);
    }
    let dnn_torsional = dnns.pop().flatten();
    let dnn_axial = dnns.pop().flatten();

    Ok(ExperimentReport {
        seed: cfg.train.seed,
        epochs: cfg.train.epochs,
        window_len: cfg.train.window_len,
        batch_size: cfg.train.batch_size,
        outcomes,
        torsional_train_range: torsional_scaler.range(),
        source: source_model,
        transfer: transfer_model,
        baseline: baseline_model,
        dnn_axial,
        dnn_torsional,
    })
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Key-value report, one section per `(model, dataset)` plus a comparison
/// section for the torsional ordering.
pub fn render_report(
    seed: u64,
    epochs: usize,
    window_len: usize,
    batch_size: usize,
    torsional_train_range: f64,
    outcomes: &[ModelOutcome],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# sn-forecast experiment report");
    let _ = writeln!(s, "format_version = {REPORT_FORMAT_VERSION}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "epochs = {epochs}");
    let _ = writeln!(s, "window_len = {window_len}");
    let _ = writeln!(s, "batch_size = {batch_size}");
    for o in outcomes {
        let _ = writeln!(s, "\n[{}.{}]", o.name, o.dataset);
        match &o.result {
            Ok(r) => {
                let _ = writeln!(s, "status = ok");
                let _ = writeln!(s, "test_points = {}", r.predicted.len());
                let _ = writeln!(s, "test_rmse_mpa = {:?}", r.rmse);
                let _ = writeln!(s, "test_rmse_scaled = {:?}", r.rmse_scaled);
                let _ = writeln!(s, "train_rmse_mpa = {:?}", r.train_rmse);
                let _ = writeln!(s, "epochs_run = {}", r.loss_history.len());
                if let Some(l) = r.loss_history.last() {
                    let _ = writeln!(s, "final_loss = {l:?}");
                }
            }
            Err(msg) => {
                let _ = writeln!(s, "status = failed");
                let _ = writeln!(s, "error = {}", msg.replace('\n', " "));
            }
        }
    }
    let find = |name: &str| {
        outcomes
            .iter()
            .find(|o| o.name == name && o.dataset.starts_with("tors"))
            .and_then(ModelOutcome::rmse)
    };
    let (tr, base, dnn) = (find(TR_LSTM), find(BASELINE_LSTM), find(DNN));
    let _ = writeln!(s, "\n[comparison.torsional]");
    let _ = writeln!(s, "train_range_mpa = {torsional_train_range:?}");
    if let (Some(tr), Some(base)) = (tr, base) {
        let _ = writeln!(s, "tr_lstm_below_baseline_lstm = {}", tr < base);
    }
    if let (Some(base), Some(dnn)) = (base, dnn) {
        let _ = writeln!(s, "baseline_lstm_below_dnn = {}", base < dnn);
    }
    if let Some(tr) = tr {
        let _ = writeln!(s, "tr_lstm_rmse_fraction_of_range = {:?}", tr / torsional_train_range);
    }
    s
}

pub const PREDICTION_CSV_HEADER: &str = "cycles,stress_true_mpa,stress_pred_mpa";
pub const LOSS_CSV_HEADER: &str = "epoch,loss";

pub fn write_prediction_csv(result: &ForecastResult, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(48 * (result.predicted.len() + 1));
    let _ = writeln!(s, "{PREDICTION_CSV_HEADER}");
    for ((c, t), p) in result.cycles.iter().zip(&result.truth).zip(&result.predicted) {
        let _ = writeln!(s, "{c},{t},{p}");
    }
    write_file(path, s.as_bytes())
}

pub fn write_loss_csv(history: &[f64], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(24 * (history.len() + 1));
    let _ = writeln!(s, "{LOSS_CSV_HEADER}");
    for (epoch, loss) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{loss}", epoch + 1);
    }
    write_file(path, s.as_bytes())
}

/// Reads an `epoch,loss` file back.
pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let rows = read_numeric_csv(path, LOSS_CSV_HEADER, 2)?;
    Ok(rows.into_iter().map(|r| r[1]).collect())
}

/// Reads a `cycles,stress_true_mpa,stress_pred_mpa` file back as columns.
pub fn read_prediction_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let rows = read_numeric_csv(path, PREDICTION_CSV_HEADER, 3)?;
    let mut cols = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        cols.0.push(r[0]);
        cols.1.push(r[1]);
        cols.2.push(r[2]);
    }
    Ok(cols)
}

fn read_numeric_csv(path: &Path, header: &str, fields: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                msg: format!("non-numeric field in `{line}`"),
            })?;
        if row.len() != fields {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 2,
                msg: format!("expected {fields} fields, got {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::transfer_surgery;

    fn tiny_arch(window_len: usize) -> RegressorConfig {
        RegressorConfig {
            hidden_size: 4,
            lstm_layers: 1,
            fc_units: 4,
            window_len,
        }
    }

    #[test]
    fn window_counts() {
        let s: Vec<f64> = (0..600).map(f64::from).collect();
        assert_eq!(make_windows(&s, 50).unwrap().len(), 550);
        assert_eq!(make_windows(&s[..300], 50).unwrap().len(), 250);
        let one = make_windows(&s[..51], 50).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.targets.data(), &[50.0]);
        assert_eq!(one.inputs.row(0), &s[..50]);
        assert!(make_windows(&s[..50], 50).is_err());
        let w = make_windows(&s[..60], 50).unwrap();
        assert_eq!(w.inputs.row(3), &s[3..53]);
        assert_eq!(w.targets.data()[3], 53.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((rmse(&[2.0, 2.0], &[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            rmse(&[5.0, 1.0, 3.0], &[4.0, 0.0, 3.5]).unwrap(),
            rmse(&[3.0, 5.0, 1.0], &[3.5, 4.0, 0.0]).unwrap()
        );
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let series = vec![0.5; 30];
        let windows = make_windows(&series, 5).unwrap();
        let mut model = build_lstm_regressor(tiny_arch(5), 3).unwrap();
        let cfg = TrainConfig {
            window_len: 5,
            epochs: 400,
            batch_size: 0,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let history = train_model(&mut model, &windows, &cfg).unwrap();
        assert_eq!(history.len(), 400);
        assert!(history[399] < 1e-6, "{}", history[399]);
        assert!(history[399] < history[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let series: Vec<f64> = (0..40).map(|k| (k as f64 * 0.2).sin()).collect();
        let windows = make_windows(&series, 6).unwrap();
        let cfg = TrainConfig {
            window_len: 6,
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_lstm_regressor(tiny_arch(6), 11).unwrap();
            let h = train_model(&mut m, &windows, &cfg).unwrap();
            (h, m.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_training_leaves_lstm_bitwise() {
        let series: Vec<f64> = (0..40).map(|k| 1.0 - k as f64 / 40.0).collect();
        let windows = make_windows(&series, 6).unwrap();
        let source = build_lstm_regressor(tiny_arch(6), 1).unwrap();
        let mut target = transfer_surgery(&source, 2).unwrap();
        let cfg = TrainConfig {
            window_len: 6,
            epochs: 20,
            batch_size: 4,
            ..TrainConfig::default()
        };
        train_model(&mut target, &windows, &cfg).unwrap();
        for (a, b) in source.lstm[0].ids().zip(target.lstm[0].ids()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(source.params.value(a)), bits(target.params.value(b)));
        }
    }

    #[test]
    fn cached_features_match_recomputed_training() {
        // Training a frozen-LSTM model with cached features must match the
        // generic path that recomputes the LSTM per batch.
        let series: Vec<f64> = (0..30).map(|k| (k as f64 * 0.3).cos()).collect();
        let windows = make_windows(&series, 5).unwrap();
        let source = build_lstm_regressor(tiny_arch(5), 4).unwrap();
        let cfg = TrainConfig {
            window_len: 5,
            epochs: 6,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let mut cached = transfer_surgery(&source, 8).unwrap();
        let h1 = train_model(&mut cached, &windows, &cfg).unwrap();

        let mut manual = transfer_surgery(&source, 8).unwrap();
        let mut adam = AdamState::new(&manual.params, cfg.adam);
        let h2 = run_epochs(windows.len(), &cfg, manual.meta.seed ^ 0x5eed_5eed, |rows| {
            let (x, y) = windows.gather(rows);
            let (pred, cache) = manual.forward_batch(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            manual.backward(&cache, &grad)?;
            optimizer_step(&mut manual.params, &mut adam, cfg.clip_norm)?;
            Ok(loss)
        })
        .unwrap();
        assert_eq!(h1, h2);
        assert_eq!(cached.params, manual.params);
    }

    #[test]
    fn divergence_reports_epoch() {
        let series: Vec<f64> = (0..20).map(f64::from).collect();
        let windows = make_windows(&series, 4).unwrap();
        let mut model = build_lstm_regressor(tiny_arch(4), 0).unwrap();
        let cfg = TrainConfig {
            window_len: 4,
            epochs: 50,
            batch_size: 0,
            clip_norm: None,
            adam: AdamConfig {
                lr: 1e300,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        match train_model(&mut model, &windows, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rollout_edges() {
        let model = build_lstm_regressor(tiny_arch(5), 6).unwrap();
        let tail = [0.9, 0.8, 0.7, 0.65, 0.6];
        assert!(autoregressive_forecast(&model, &tail, 0).unwrap().is_empty());
        let one = autoregressive_forecast(&model, &tail, 1).unwrap();
        assert_eq!(one, vec![regressor_forward_ref(&model, &tail)]);
        assert!(autoregressive_forecast(&model, &tail[..4], 3).is_err());
    }

    fn regressor_forward_ref(m: &LstmRegressor, w: &[f64]) -> f64 {
        crate::models::regressor_forward(m, w).unwrap()
    }

    #[test]
    fn rollout_windows_slide_over_predictions() {
        let model = build_lstm_regressor(tiny_arch(5), 6).unwrap();
        let tail = [0.9, 0.8, 0.7, 0.65, 0.6];
        let mut seen = Vec::new();
        let preds = autoregressive_forecast_observed(&model, &tail, 8, |k, w| seen.push((k, w.to_vec()))).unwrap();
        assert_eq!(seen[0].1, tail);
        assert_eq!(seen[2].1, [0.7, 0.65, 0.6, preds[0], preds[1]]);
        assert_eq!(seen[5].1, preds[..5]);
        assert_eq!(seen[7].1, preds[2..7]);
    }

    #[test]
    fn horizon_additivity() {
        let model = build_lstm_regressor(tiny_arch(5), 6).unwrap();
        let tail = vec![0.9, 0.8, 0.7, 0.65, 0.6];
        let full = autoregressive_forecast(&model, &tail, 12).unwrap();
        let first = autoregressive_forecast(&model, &tail, 7).unwrap();
        let joined: Vec<f64> = tail.iter().chain(&first).copied().collect();
        let rest = autoregressive_forecast(&model, &joined[joined.len() - 5..], 5).unwrap();
        assert_eq!(full, first.into_iter().chain(rest).collect::<Vec<_>>());
    }

    #[test]
    fn csv_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let loss = dir.path().join("loss.csv");
        write_loss_csv(&[0.5, 0.25, 1e-9], &loss).unwrap();
        assert_eq!(read_loss_csv(&loss).unwrap(), vec![0.5, 0.25, 1e-9]);
        let text = std::fs::read_to_string(&loss).unwrap();
        assert!(text.starts_with("epoch,loss\n1,0.5\n"));

        let r = ForecastResult {
            model: "m".into(),
            dataset: "d".into(),
            cycles: vec![1e4, 2e4],
            truth: vec![300.0, 290.5],
            predicted: vec![301.0, 289.0],
            residuals: vec![1.0, -1.5],
            rmse: 0.0,
            rmse_scaled: 0.0,
            train_rmse: 0.0,
            loss_history: vec![],
        };
        let p = dir.path().join("pred.csv");
        write_prediction_csv(&r, &p).unwrap();
        let (c, t, pr) = read_prediction_csv(&p).unwrap();
        assert_eq!((c, t, pr), (r.cycles, r.truth, r.predicted));
    }
}
