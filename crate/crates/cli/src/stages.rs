//! One function per subcommand. Every stage reads its inputs from and
//! writes its outputs under the output directory, so `run-all` is just the
//! stages called in order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sn_forecast::checkpoint::{load_checkpoint, save_checkpoint};
use sn_forecast::models::{DnnBaseline, LstmRegressor, Model};
use sn_forecast::pipeline::{
    forecast_dnn, forecast_series, read_loss_csv, render_report, train_dnn_on, train_regressor_on,
    train_transfer_on, write_loss_csv, write_prediction_csv, ForecastResult, ModelOutcome, StageSeeds,
    BASELINE_LSTM, DNN, SOURCE_LSTM, TR_LSTM,
};
use sn_forecast::sncurve::{fit_scaler, read_series_csv, split_series, synthesize_series, write_series_csv, SnSeries};
use sn_forecast::Error;

use crate::config::Settings;
use crate::failure::{input, runtime, Failure, Outcome};
use crate::plot;

pub const AXIAL: &str = "axial";
pub const TORSIONAL: &str = "torsional";

/// A trained model slot: which model, on which dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub model: &'static str,
    pub dataset: &'static str,
}

impl Slot {
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.model, self.dataset)
    }
}

pub const SLOTS: [Slot; 5] = [
    Slot { model: SOURCE_LSTM, dataset: AXIAL },
    Slot { model: TR_LSTM, dataset: TORSIONAL },
    Slot { model: BASELINE_LSTM, dataset: TORSIONAL },
    Slot { model: DNN, dataset: AXIAL },
    Slot { model: DNN, dataset: TORSIONAL },
];

const SOURCE: Slot = SLOTS[0];
const TRANSFER: Slot = SLOTS[1];
const BASELINE: Slot = SLOTS[2];

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Outcome<Self> {
        fs::create_dir_all(&root)
            .map_err(|e| input(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Layout { root })
    }

    pub fn dataset(&self, label: &str) -> PathBuf {
        self.root.join("data").join(format!("{label}.csv"))
    }

    pub fn split_sidecar(&self) -> PathBuf {
        self.root.join("data").join("split.kv")
    }

    pub fn checkpoint(&self, slot: Slot) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", slot.file_stem()))
    }

    pub fn failure_marker(&self, slot: Slot) -> PathBuf {
        self.root.join("models").join(format!("{}.failed", slot.file_stem()))
    }

    pub fn loss_csv(&self, slot: Slot) -> PathBuf {
        self.root.join("losses").join(format!("{}.csv", slot.file_stem()))
    }

    pub fn prediction_csv(&self, slot: Slot) -> PathBuf {
        self.root.join("predictions").join(format!("{}.csv", slot.file_stem()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn figure(&self, name: &str) -> PathBuf {
        self.root.join("figures").join(format!("{name}.svg"))
    }
}

fn ensure_parent(path: &Path) -> Outcome<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

pub struct Ctx {
    pub settings: Settings,
    pub layout: Layout,
    pub verbose: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[sn-forecast] {}", msg.as_ref());
        }
    }

    fn seeds(&self) -> StageSeeds {
        StageSeeds::derive(self.settings.train.seed)
    }

    fn load_dataset(&self, label: &str) -> Outcome<SnSeries> {
        let path = self.layout.dataset(label);
        if !path.is_file() {
            return Err(input(format!(
                "dataset {} not found; run `generate` first",
                path.display()
            )));
        }
        let series = read_series_csv(&path)?;
        let count = if label == AXIAL {
            self.settings.train.train_count_axial
        } else {
            self.settings.train.train_count_torsional
        };
        Ok(split_series(&series, count).map_err(|e| input(format!("{}: {e}", path.display())))?)
    }

    fn save_model(&self, slot: Slot, model: Model, history: &[f64]) -> Outcome<()> {
        let ckpt = self.layout.checkpoint(slot);
        ensure_parent(&ckpt)?;
        save_checkpoint(&model, &ckpt)?;
        let loss = self.layout.loss_csv(slot);
        ensure_parent(&loss)?;
        write_loss_csv(history, &loss)?;
        let marker = self.layout.failure_marker(slot);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| input(format!("removing {}: {e}", marker.display())))?;
        }
        self.note(format!(
            "{}: {} epochs, final loss {:.3e}",
            slot.file_stem(),
            history.len(),
            history.last().copied().unwrap_or(f64::NAN)
        ));
        Ok(())
    }

    /// Records a failed training so `evaluate` can report it, then passes
    /// the failure on. Stale artifacts of the slot are removed.
    fn record_failure(&self, slot: Slot, err: Error) -> Failure {
        let failure = Failure::from(err).context(format!("training {}", slot.file_stem()));
        for stale in [self.layout.checkpoint(slot), self.layout.loss_csv(slot)] {
            let _ = fs::remove_file(stale);
        }
        let marker = self.layout.failure_marker(slot);
        if ensure_parent(&marker).is_ok() {
            let _ = fs::write(&marker, format!("{failure}\n"));
        }
        failure
    }

    fn load_lstm(&self, slot: Slot) -> Outcome<LstmRegressor> {
        match self.load_model(slot)? {
            Model::Lstm(m) => Ok(m),
            Model::Dnn(_) => Err(input(format!(
                "{} holds a DNN, expected an LSTM regressor",
                self.layout.checkpoint(slot).display()
            ))),
        }
    }

    fn load_dnn(&self, slot: Slot) -> Outcome<DnnBaseline> {
        match self.load_model(slot)? {
            Model::Dnn(m) => Ok(m),
            Model::Lstm(_) => Err(input(format!(
                "{} holds an LSTM regressor, expected a DNN",
                self.layout.checkpoint(slot).display()
            ))),
        }
    }

    fn load_model(&self, slot: Slot) -> Outcome<Model> {
        let path = self.layout.checkpoint(slot);
        if !path.is_file() {
            return Err(input(format!("checkpoint {} not found", path.display())));
        }
        load_checkpoint(&path).map_err(|e| Failure::from(e).context(path.display()))
    }
}

pub fn generate(ctx: &Ctx) -> Outcome<()> {
    let s = &ctx.settings;
    let mut sidecar = String::from("# Train/test split of the generated datasets.\n");
    for (k, (spec, count)) in [
        (&s.axial, s.train.train_count_axial),
        (&s.torsional, s.train.train_count_torsional),
    ]
    .into_iter()
    .enumerate()
    {
        let series = synthesize_series(&spec.params, &spec.label, s.noise_std, s.noise_seed.wrapping_add(k as u64))?;
        let path = ctx.layout.dataset(&spec.label);
        ensure_parent(&path)?;
        write_series_csv(&series, &path)?;
        let train = count.min(series.len());
        sidecar.push_str(&format!(
            "\n[{}]\nfile = {}.csv\npoints = {}\ntrain_count = {}\ntest_count = {}\nlast_train_cycle = {}\n",
            spec.label,
            spec.label,
            series.len(),
            train,
            series.len() - train,
            if train > 0 { series.cycles()[train - 1] } else { f64::NAN },
        ));
        ctx.note(format!("wrote {} ({} points)", path.display(), series.len()));
    }
    let path = ctx.layout.split_sidecar();
    fs::write(&path, sidecar).map_err(|e| input(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

pub fn train_source(ctx: &Ctx) -> Outcome<()> {
    let axial = ctx.load_dataset(AXIAL)?;
    let started = Instant::now();
    match train_regressor_on(&axial, ctx.settings.regressor, &ctx.settings.train, ctx.seeds().source) {
        Ok((model, history)) => {
            ctx.note(format!("source training took {:.1?}", started.elapsed()));
            ctx.save_model(SOURCE, Model::Lstm(model), &history)
        }
        Err(e) => Err(ctx.record_failure(SOURCE, e)),
    }
}

pub fn transfer(ctx: &Ctx) -> Outcome<()> {
    let source = ctx.load_lstm(SOURCE)?;
    let torsional = ctx.load_dataset(TORSIONAL)?;
    match train_transfer_on(&source, &torsional, &ctx.settings.train, ctx.seeds().transfer_head) {
        Ok((model, history)) => ctx.save_model(TRANSFER, Model::Lstm(model), &history),
        Err(e) => Err(ctx.record_failure(TRANSFER, e)),
    }
}

pub fn train_baseline(ctx: &Ctx) -> Outcome<()> {
    let torsional = ctx.load_dataset(TORSIONAL)?;
    match train_regressor_on(&torsional, ctx.settings.regressor, &ctx.settings.train, ctx.seeds().baseline) {
        Ok((model, history)) => ctx.save_model(BASELINE, Model::Lstm(model), &history),
        Err(e) => Err(ctx.record_failure(BASELINE, e)),
    }
}

/// Trains one DNN per dataset. Both are attempted even if the first fails.
pub fn train_dnn(ctx: &Ctx) -> Outcome<()> {
    let seeds = ctx.seeds();
    let mut first_failure = None;
    for (slot, seed) in [(SLOTS[3], seeds.dnn_axial), (SLOTS[4], seeds.dnn_torsional)] {
        let series = ctx.load_dataset(slot.dataset)?;
        let r = match train_dnn_on(&series, ctx.settings.dnn, &ctx.settings.train, seed) {
            Ok((model, history)) => ctx.save_model(slot, Model::Dnn(model), &history),
            Err(e) => Err(ctx.record_failure(slot, e)),
        };
        if let Err(f) = r {
            first_failure.get_or_insert(f);
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn forecast_slot(ctx: &Ctx, slot: Slot, loss_history: Vec<f64>) -> Outcome<ForecastResult> {
    let series = ctx.load_dataset(slot.dataset)?;
    let horizon = ctx.settings.horizon;
    // Model/data disagreements (window longer than the training region,
    // missing scaler) surface here and count as runtime errors.
    let as_runtime = |e: Error| runtime(format!("{}: {e}", slot.file_stem()));
    if slot.model == DNN {
        let model = ctx.load_dnn(slot)?;
        forecast_dnn(&model, slot.model, &series, horizon, loss_history).map_err(as_runtime)
    } else {
        let model = ctx.load_lstm(slot)?;
        forecast_series(&model, slot.model, &series, horizon, loss_history).map_err(as_runtime)
    }
}

/// Writes a prediction CSV for every slot that has a checkpoint.
pub fn forecast(ctx: &Ctx) -> Outcome<()> {
    let mut written = 0;
    for slot in SLOTS {
        if !ctx.layout.checkpoint(slot).is_file() {
            let _ = fs::remove_file(ctx.layout.prediction_csv(slot));
            ctx.note(format!("{}: no checkpoint, skipped", slot.file_stem()));
            continue;
        }
        let result = forecast_slot(ctx, slot, Vec::new())?;
        let path = ctx.layout.prediction_csv(slot);
        ensure_parent(&path)?;
        write_prediction_csv(&result, &path)?;
        written += 1;
    }
    if written == 0 {
        return Err(input(format!(
            "no checkpoints under {}; train a model first",
            ctx.layout.root.join("models").display()
        )));
    }
    Ok(())
}

/// Recomputes every forecast, writes `report.txt`, and prints a summary.
/// Fails with a runtime error when any model is missing or failed.
pub fn evaluate(ctx: &Ctx) -> Outcome<()> {
    let torsional = ctx.load_dataset(TORSIONAL)?;
    let range = fit_scaler(&torsional)?.range();
    let mut outcomes = Vec::new();
    for slot in SLOTS {
        let result = if ctx.layout.checkpoint(slot).is_file() {
            let loss_path = ctx.layout.loss_csv(slot);
            let history = if loss_path.is_file() {
                read_loss_csv(&loss_path)?
            } else {
                Vec::new()
            };
            forecast_slot(ctx, slot, history).map_err(|f| f.to_string())
        } else {
            let marker = ctx.layout.failure_marker(slot);
            Err(fs::read_to_string(&marker)
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|_| "not trained".to_string()))
        };
        outcomes.push(ModelOutcome {
            name: slot.model.to_string(),
            dataset: slot.dataset.to_string(),
            result,
        });
    }
    let t = &ctx.settings.train;
    let text = render_report(t.seed, t.epochs, t.window_len, t.batch_size, range, &outcomes);
    let path = ctx.layout.report();
    fs::write(&path, &text).map_err(|e| input(format!("writing {}: {e}", path.display())))?;

    println!("{:<16} {:<10} {:>14} {:>12} {:>14}", "model", "dataset", "test_rmse_mpa", "test_scaled", "train_rmse_mpa");
    for o in &outcomes {
        match &o.result {
            Ok(r) => println!(
                "{:<16} {:<10} {:>14.4} {:>12.6} {:>14.4}",
                o.name, o.dataset, r.rmse, r.rmse_scaled, r.train_rmse
            ),
            Err(msg) => println!("{:<16} {:<10} failed: {msg}", o.name, o.dataset),
        }
    }
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} models unavailable; see {}", outcomes.len(), path.display())));
    }
    Ok(())
}

pub fn plot(ctx: &Ctx) -> Outcome<()> {
    let figures = plot::render_figures(&ctx.layout)?;
    for (name, svg) in &figures {
        let path = ctx.layout.figure(name);
        ensure_parent(&path)?;
        fs::write(&path, svg).map_err(|e| input(format!("writing {}: {e}", path.display())))?;
        ctx.note(format!("wrote {}", path.display()));
    }
    Ok(())
}

/// Every stage in order. Training failures do not stop later stages; the
/// first failure decides the exit status once the report is written.
pub fn run_all(ctx: &Ctx) -> Outcome<()> {
    generate(ctx)?;
    let mut first_failure: Option<Failure> = None;
    let mut keep = |r: Outcome<()>| -> Outcome<()> {
        match r {
            Err(f) if f.kind == crate::failure::Kind::Runtime => {
                eprintln!("warning: {f}");
                first_failure.get_or_insert(f);
                Ok(())
            }
            other => other,
        }
    };
    keep(train_source(ctx))?;
    if ctx.layout.checkpoint(SOURCE).is_file() {
        keep(transfer(ctx))?;
    } else {
        ctx.record_failure(TRANSFER, Error::Argument("source model unavailable".into()));
    }
    keep(train_baseline(ctx))?;
    keep(train_dnn(ctx))?;
    // After a failed training, forecast and plot may find nothing to work
    // on; the report still gets written and the training failure wins.
    let lenient = |r: Outcome<()>, failed: bool| match r {
        Err(f) if failed => {
            eprintln!("warning: {f}");
            Ok(())
        }
        other => other,
    };
    lenient(forecast(ctx), first_failure.is_some())?;
    let evaluated = evaluate(ctx);
    lenient(plot(ctx), first_failure.is_some())?;
    match first_failure {
        Some(f) => Err(f),
        None => evaluated,
    }
}
