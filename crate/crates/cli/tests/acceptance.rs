//! Acceptance checks, one PASS/FAIL line each. Runs the real binary for the
//! end-to-end criteria, so it needs no other setup than `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sn_forecast::checkpoint::load_checkpoint;
use sn_forecast::kv::KvDocument;
use sn_forecast::models::{build_dnn, build_lstm_regressor, DnnConfig, LstmRegressor, Model, RegressorConfig};
use sn_forecast::nn::{finite_difference_check, mse_loss, ParamSet, Shape, Tensor};
use sn_forecast::pipeline::{autoregressive_forecast_observed, rmse};
use sn_forecast::sncurve::{
    fit_sn_params, log_spaced_grid, read_curve_file, read_series_csv, split_series, synthesize_series,
};

const BIN: &str = env!("CARGO_BIN_EXE_sn-forecast");

type Verdict = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_all(config: &Path, out: &Path) -> Result<Duration, String> {
    let started = Instant::now();
    let o = Command::new(BIN)
        .arg("run-all")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("SN_FORECAST_OUT")
        .output()
        .map_err(|e| format!("cannot start {BIN}: {e}"))?;
    let elapsed = started.elapsed();
    if !o.status.success() {
        return Err(format!(
            "run-all exited with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ));
    }
    Ok(elapsed)
}

/// The default experiment, run once and shared by criteria 3, 4 and 5.
struct FullRun {
    out: PathBuf,
    elapsed: Duration,
}

fn full_run(dir: &Path) -> Result<FullRun, String> {
    let out = dir.join("full");
    let elapsed = run_all(&configs_dir().join("experiment.kv"), &out)?;
    Ok(FullRun { out, elapsed })
}

fn gradient_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    let mut configs = 0;
    let mut long_sequences = 0;

    for case in 0..110 {
        let batch = rng.gen_range(1..=3);
        if case % 5 == 4 {
            let cfg = DnnConfig {
                hidden_layers: rng.gen_range(1..=4),
                units: rng.gen_range(1..=8),
            };
            let mut model = build_dnn(cfg, rng.gen()).map_err(|e| e.to_string())?;
            let x = random_tensor(&mut rng, batch, 1, 1.5);
            let y = random_tensor(&mut rng, batch, 1, 1.0);
            let (pred, cache) = model.forward_batch(&x).map_err(|e| e.to_string())?;
            let (_, grad) = mse_loss(&pred, &y).map_err(|e| e.to_string())?;
            model.backward(&cache, &grad).map_err(|e| e.to_string())?;
            let shadow = model.clone();
            let forward = |p: &ParamSet, x: &Tensor| {
                let mut m = shadow.clone();
                m.params = p.clone();
                Ok(m.forward_batch(x)?.0)
            };
            let report = finite_difference_check(loss_of(&x, &y, &forward), &mut model.params, 1e-5)
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
            coords += report.coords_checked;
        } else {
            let window_len = if case % 3 == 0 { 50 } else { rng.gen_range(2..=50) };
            long_sequences += usize::from(window_len == 50);
            let cfg = RegressorConfig {
                hidden_size: rng.gen_range(1..=8),
                lstm_layers: rng.gen_range(1..=2),
                fc_units: rng.gen_range(1..=6),
                window_len,
            };
            let mut model = build_lstm_regressor(cfg, rng.gen()).map_err(|e| e.to_string())?;
            let x = random_tensor(&mut rng, batch, window_len, 1.2);
            let y = random_tensor(&mut rng, batch, 1, 1.0);
            let (pred, cache) = model.forward_batch(&x).map_err(|e| e.to_string())?;
            let (_, grad) = mse_loss(&pred, &y).map_err(|e| e.to_string())?;
            model.backward(&cache, &grad).map_err(|e| e.to_string())?;
            let shadow = model.clone();
            let forward = |p: &ParamSet, x: &Tensor| {
                let mut m: LstmRegressor = shadow.clone();
                m.params = p.clone();
                Ok(m.forward_batch(x)?.0)
            };
            let report = finite_difference_check(loss_of(&x, &y, &forward), &mut model.params, 1e-5)
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
            coords += report.coords_checked;
        }
        configs += 1;
    }
    let elapsed = started.elapsed();
    let detail = format!(
        "max rel error {worst:.2e} over {configs} configs ({long_sequences} with sequence length 50, {coords} coordinates) in {:.1} s",
        elapsed.as_secs_f64()
    );
    if worst < 1e-5 && configs >= 100 && elapsed < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn loss_of<'a>(
    x: &'a Tensor,
    y: &'a Tensor,
    forward: &'a dyn Fn(&ParamSet, &Tensor) -> sn_forecast::Result<Tensor>,
) -> impl Fn(&ParamSet) -> sn_forecast::Result<f64> + 'a {
    move |p| Ok(mse_loss(&forward(p, x)?, y)?.0)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(Shape::Matrix(rows, cols), data).expect("sized")
}

fn split_consistency() -> Verdict {
    let grid = log_spaced_grid(5e3, 3e6, 1000).map_err(|e| e.to_string())?;
    let axial_end = grid[599];
    let torsional_end = grid[299];
    let detail = format!(
        "600th point {axial_end:.1} cycles ({:+.3}% from 2.31e5), 300th point {torsional_end:.1} ({:+.3}% from 3.4e4)",
        100.0 * (axial_end / 2.31e5 - 1.0),
        100.0 * (torsional_end / 3.4e4 - 1.0)
    );
    if (axial_end / 2.31e5 - 1.0).abs() < 0.01 && (torsional_end / 3.4e4 - 1.0).abs() < 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn freeze_invariance(run: &FullRun) -> Verdict {
    let load = |name: &str| -> Result<LstmRegressor, String> {
        match load_checkpoint(&run.out.join("models").join(name)).map_err(|e| e.to_string())? {
            Model::Lstm(m) => Ok(m),
            Model::Dnn(_) => Err(format!("{name} is not an LSTM checkpoint")),
        }
    };
    let source = load("source_lstm_axial.ckpt")?;
    let transfer = load("tr_lstm_torsional.ckpt")?;
    let mut tensors = 0;
    for (s_layer, t_layer) in source.lstm.iter().zip(&transfer.lstm) {
        for (s, t) in s_layer.ids().zip(t_layer.ids()) {
            let name = &transfer.params.param(t).name;
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(source.params.value(s)) != bits(transfer.params.value(t)) {
                return Err(format!("{name} differs from the source checkpoint"));
            }
            if !transfer.params.is_frozen(t) {
                return Err(format!("{name} is not marked frozen"));
            }
            tensors += 1;
        }
    }
    if transfer.meta.epochs_run != 500 {
        return Err(format!("transfer head trained for {} epochs, expected 500", transfer.meta.epochs_run));
    }
    Ok(format!("{tensors} LSTM tensors bitwise equal after 500 epochs of head training"))
}

fn ordering(run: &FullRun) -> Verdict {
    let doc = KvDocument::read(&run.out.join("report.txt")).map_err(|e| e.to_string())?;
    let get = |section: &str, key: &str| -> Result<f64, String> {
        doc.get_parsed::<f64>(section, key).map_err(|e| e.to_string())
    };
    let tr = get("tr_lstm.torsional", "test_rmse_mpa")?;
    let base = get("baseline_lstm.torsional", "test_rmse_mpa")?;
    let dnn = get("dnn.torsional", "test_rmse_mpa")?;
    let range = get("comparison.torsional", "train_range_mpa")?;
    let secs = run.elapsed.as_secs_f64();
    let detail = format!(
        "torsional test RMSE tr_lstm {tr:.2} MPa, baseline_lstm {base:.2}, dnn {dnn:.2}; 5% of training range = {:.2}; run took {secs:.0} s",
        0.05 * range
    );
    let mut problems = Vec::new();
    if !(tr < base) {
        problems.push("tr_lstm is not below baseline_lstm");
    }
    if !(base < dnn) {
        problems.push("baseline_lstm is not below dnn");
    }
    if !(tr < 0.05 * range) {
        problems.push("tr_lstm is not below 5% of the range");
    }
    if secs >= 300.0 {
        problems.push("run exceeded 5 minutes");
    }
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} ({})", problems.join(", ")))
    }
}

fn rollout_contract(run: &FullRun) -> Verdict {
    let model = match load_checkpoint(&run.out.join("models/source_lstm_axial.ckpt")).map_err(|e| e.to_string())? {
        Model::Lstm(m) => m,
        Model::Dnn(_) => return Err("source checkpoint is not an LSTM".into()),
    };
    let series = read_series_csv(&run.out.join("data/axial.csv")).map_err(|e| e.to_string())?;
    let series = split_series(&series, 600).map_err(|e| e.to_string())?;
    let scaler = model.scaler.ok_or("source checkpoint has no scaler")?;
    let w = model.window_len();
    let tail = scaler.scale_all(&series.train_stress()[600 - w..]);
    let mut step51 = Vec::new();
    let preds = autoregressive_forecast_observed(&model, &tail, 60, |k, window| {
        if k == 51 {
            step51 = window.to_vec();
        }
    })
    .map_err(|e| e.to_string())?;
    if w != 50 {
        return Err(format!("window length is {w}, expected 50"));
    }
    if step51 != preds[..50] {
        return Err("step 51 window is not predictions 1..50".into());
    }
    let train_bits: Vec<u64> = series.train_stress().iter().map(|v| scaler.scale(*v).to_bits()).collect();
    if step51.iter().any(|v| train_bits.contains(&v.to_bits())) {
        return Err("step 51 window contains a training value".into());
    }
    Ok("step 51 input equals predictions 1-50 and holds no training value".into())
}

fn determinism(dir: &Path) -> Verdict {
    // Full architecture and window, fewer epochs: two complete runs stay fast.
    let base = fs::read_to_string(configs_dir().join("experiment.kv")).map_err(|e| e.to_string())?;
    let reduced = base.replace("epochs = 500", "epochs = 8");
    let config = dir.join("determinism.kv");
    fs::write(&config, reduced).map_err(|e| e.to_string())?;
    fs::copy(configs_dir().join("curves.kv"), dir.join("curves.kv")).map_err(|e| e.to_string())?;
    run_all(&config, &dir.join("first"))?;
    run_all(&config, &dir.join("second"))?;
    let a = snapshot(&dir.join("first"));
    let b = snapshot(&dir.join("second"));
    if a.is_empty() {
        return Err("run-all produced no files".into());
    }
    if a != b {
        let differing: Vec<String> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.display().to_string())
            .collect();
        return Err(format!("outputs differ: {}", differing.join(", ")));
    }
    let checkpoints = a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "ckpt")).count();
    let csvs = a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).count();
    Ok(format!(
        "{} files byte-identical across two runs ({checkpoints} checkpoints, {csvs} CSVs, report)",
        a.len()
    ))
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else if let Ok(bytes) = fs::read(&path) {
                acc.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}

fn fitting_round_trip() -> Verdict {
    let curves = read_curve_file(&configs_dir().join("curves.kv")).map_err(|e| e.to_string())?;
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for c in &curves {
        let p = c.params;
        let clean = synthesize_series(&p, &c.label, 0.0, 0).map_err(|e| e.to_string())?;
        let fit = fit_sn_params(&clean).map_err(|e| e.to_string())?;
        worst_abs = worst_abs.max((fit.a - p.a).abs()).max((fit.b - p.b).abs()).max((fit.d - p.d).abs());

        let noisy = synthesize_series(&p, &c.label, 1.0, 42).map_err(|e| e.to_string())?;
        let fit = fit_sn_params(&noisy).map_err(|e| e.to_string())?;
        for (got, want) in [(fit.a, p.a), (fit.b, p.b), (fit.d, p.d)] {
            worst_rel = worst_rel.max((got / want - 1.0).abs());
        }
    }
    let detail = format!(
        "{} curves: noiseless max abs error {worst_abs:.1e}, 1 MPa noise max rel error {:.2}%",
        curves.len(),
        100.0 * worst_rel
    );
    if worst_abs < 1e-6 && worst_rel < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rmse_battery() -> Verdict {
    let r = |p: &[f64], t: &[f64]| rmse(p, t).map_err(|e| e.to_string());
    if r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])? != 0.0 {
        return Err("identical vectors do not give 0".into());
    }
    if (r(&[2.0, 2.0], &[0.0, 2.0])? - 2f64.sqrt()).abs() > 1e-12 {
        return Err("[2,2] vs [0,2] is not sqrt(2)".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..40);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-500.0..500.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-500.0..500.0)).collect();
        let c: f64 = rng.gen_range(-20.0..20.0);
        if r(&x, &x)? != 0.0 {
            return Err("rmse(x, x) != 0".into());
        }
        let base = r(&x, &y)?;
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let scaled = r(&cx, &cy)?;
        if (scaled - c.abs() * base).abs() > 1e-12 * (c.abs() * base).max(1.0) {
            return Err(format!("scale equivariance off: {scaled} vs {}", c.abs() * base));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let px: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if (r(&px, &py)? - base).abs() > 1e-12 * base.max(1.0) {
            return Err("permutation changed the rmse".into());
        }
        cases += 1;
    }
    Ok(format!("tagged examples plus {cases} random identity, permutation and scaling cases"))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let full = full_run(dir.path());
    let from_full = |f: fn(&FullRun) -> Verdict| match &full {
        Ok(run) => f(run),
        Err(e) => Err(e.clone()),
    };

    let results: Vec<(u8, &str, Verdict)> = vec![
        (1, "gradient oracle", gradient_oracle()),
        (2, "split consistency", split_consistency()),
        (3, "freeze invariance", from_full(freeze_invariance)),
        (4, "ordering reproduction", from_full(ordering)),
        (5, "rollout contract", from_full(rollout_contract)),
        (6, "determinism", determinism(dir.path())),
        (7, "fitting round trip", fitting_round_trip()),
        (8, "rmse battery", rmse_battery()),
    ];
    let mut failed = 0;
    for (id, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("criterion {id} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    }
}
