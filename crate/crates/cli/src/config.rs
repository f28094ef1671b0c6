use std::path::{Path, PathBuf};

use sn_forecast::kv::KvDocument;
use sn_forecast::models::{DnnConfig, RegressorConfig};
use sn_forecast::nn::AdamConfig;
use sn_forecast::pipeline::TrainConfig;
use sn_forecast::sncurve::{parse_curve_doc, CurveSpec};

use crate::failure::{input, Outcome};

pub const DEFAULT_EXPERIMENT: &str = include_str!("../../../configs/experiment.kv");
pub const DEFAULT_CURVES: &str = include_str!("../../../configs/curves.kv");

/// Everything a stage needs, resolved from the config file with defaults
/// filled in and validated up front.
#[derive(Debug, Clone)]
pub struct Settings {
    pub axial: CurveSpec,
    pub torsional: CurveSpec,
    pub noise_std: f64,
    pub noise_seed: u64,
    pub regressor: RegressorConfig,
    pub dnn: DnnConfig,
    pub train: TrainConfig,
    pub horizon: Option<usize>,
}

impl Settings {
    pub fn load(config: Option<&Path>, seed_override: Option<u64>) -> Outcome<Self> {
        let defaults = KvDocument::parse(DEFAULT_EXPERIMENT).expect("bundled config parses");
        let (doc, base) = match config {
            Some(path) => {
                let doc = KvDocument::read(path).map_err(|e| input(format!("config: {e}")))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (doc, base)
            }
            None => (defaults.clone(), PathBuf::new()),
        };
        let get = |section: &str, key: &str| -> Outcome<String> {
            doc.get(section, key)
                .or_else(|| defaults.get(section, key))
                .map(str::to_string)
                .ok_or_else(|| input(format!("config: missing key `{key}` in [{section}]")))
        };
        fn num<T: std::str::FromStr>(raw: String, key: &str) -> Outcome<T> {
            raw.parse()
                .map_err(|_| input(format!("config: `{key}` has invalid value `{raw}`")))
        }

        let curves_doc = match (config, doc.get("data", "curves")) {
            (Some(_), Some(rel)) => {
                let path = base.join(rel);
                if !path.is_file() {
                    return Err(input(format!("curve parameter file {} not found", path.display())));
                }
                KvDocument::read(&path).map_err(|e| input(format!("curves: {e}")))?
            }
            _ => KvDocument::parse(DEFAULT_CURVES).expect("bundled curves parse"),
        };
        let mut curves = parse_curve_doc(&curves_doc).map_err(|e| input(format!("curves: {e}")))?;
        let n_points: Option<usize> = match doc.get("data", "n_points") {
            Some(raw) => Some(num(raw.to_string(), "n_points")?),
            None => None,
        };
        for c in &mut curves {
            if let Some(n) = n_points {
                c.params.n_points = n;
            }
            c.params.validate().map_err(|e| input(format!("curve `{}`: {e}", c.label)))?;
        }
        let pick = |label: &str| -> Outcome<CurveSpec> {
            curves
                .iter()
                .find(|c| c.label == label)
                .cloned()
                .ok_or_else(|| input(format!("curve file has no `{label}` curve")))
        };

        let clip: f64 = num(get("training", "clip_norm")?, "clip_norm")?;
        let window_len = num(get("lstm", "window_len")?, "window_len")?;
        let seed = match seed_override {
            Some(s) => s,
            None => num(get("training", "seed")?, "seed")?,
        };
        let train = TrainConfig {
            window_len,
            epochs: num(get("training", "epochs")?, "epochs")?,
            adam: AdamConfig {
                lr: num(get("training", "learning_rate")?, "learning_rate")?,
                beta1: num(get("training", "beta1")?, "beta1")?,
                beta2: num(get("training", "beta2")?, "beta2")?,
                eps: num(get("training", "epsilon")?, "epsilon")?,
            },
            seed,
            clip_norm: (clip > 0.0).then_some(clip),
            batch_size: num(get("training", "batch_size")?, "batch_size")?,
            train_count_axial: num(get("split", "train_count_axial")?, "train_count_axial")?,
            train_count_torsional: num(get("split", "train_count_torsional")?, "train_count_torsional")?,
        };
        let regressor = RegressorConfig {
            hidden_size: num(get("lstm", "lstm_hidden")?, "lstm_hidden")?,
            lstm_layers: num(get("lstm", "lstm_layers")?, "lstm_layers")?,
            fc_units: num(get("lstm", "fc_units")?, "fc_units")?,
            window_len,
        };
        let dnn = DnnConfig {
            hidden_layers: num(get("dnn", "dnn_layers")?, "dnn_layers")?,
            units: num(get("dnn", "dnn_units")?, "dnn_units")?,
        };
        let horizon = match doc.get("forecast", "horizon") {
            Some(raw) => Some(num(raw.to_string(), "horizon")?),
            None => None,
        };
        let settings = Settings {
            axial: pick("axial")?,
            torsional: pick("torsional")?,
            noise_std: num(get("data", "noise_std")?, "noise_std")?,
            noise_seed: num(get("data", "noise_seed")?, "noise_seed")?,
            regressor,
            dnn,
            train,
            horizon,
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Outcome<()> {
        let bad = |e: sn_forecast::Error| input(format!("config: {e}"));
        self.regressor.validate().map_err(bad)?;
        self.dnn.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(input(format!("config: noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}
