//! Versioned model checkpoints.
//!
//! A checkpoint is a UTF-8 text header followed by a binary payload:
//!
//! ```text
//! sn-forecast-checkpoint
//! format_version = 1
//! model_kind = lstm_regressor
//! <key> = <value>            (architecture, scaler, training metadata)
//! tensor = <name> <dims> <byte offset> <frozen|trainable>
//! ...
//! end_header
//! <payload: every tensor, row-major, little-endian f64>
//! ```
//!
//! `<dims>` is `len` or `rowsxcols`. Offsets are relative to the first
//! payload byte, tensors are contiguous and in header order. Floats in the
//! header use shortest round-trip decimal, so reading a checkpoint back
//! reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{
    DnnBaseline, DnnConfig, LstmRegressor, Model, ModelKind, RegressorConfig, TrainingMeta,
};
use crate::nn::{ParamSet, Shape, Tensor};
use crate::sncurve::{write_file, ScalerState};

pub const MAGIC: &str = "sn-forecast-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
const END: &str = "end_header";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_file(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC}");
    let _ = writeln!(h, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(h, "model_kind = {}", model.kind().as_str());
    match model {
        Model::Lstm(m) => {
            let c = m.config;
            let _ = writeln!(h, "hidden_size = {}", c.hidden_size);
            let _ = writeln!(h, "lstm_layers = {}", c.lstm_layers);
            let _ = writeln!(h, "fc_units = {}", c.fc_units);
            let _ = writeln!(h, "window_len = {}", c.window_len);
        }
        Model::Dnn(m) => {
            let _ = writeln!(h, "hidden_layers = {}", m.config.hidden_layers);
            let _ = writeln!(h, "units = {}", m.config.units);
            let _ = writeln!(h, "log_cycle_scaler = {}", scaler_text(m.log_cycle_scaler));
        }
    }
    let _ = writeln!(h, "scaler = {}", scaler_text(model.scaler()));
    let meta = model.meta();
    let _ = writeln!(h, "seed = {}", meta.seed);
    let _ = writeln!(h, "epochs_run = {}", meta.epochs_run);
    let _ = writeln!(h, "final_loss = {:?}", meta.final_loss);

    let mut payload = Vec::with_capacity(8 * model.params().num_values());
    for (_, p) in model.params().iter() {
        let dims = match p.value.shape() {
            Shape::Vector(n) => n.to_string(),
            Shape::Matrix(r, c) => format!("{r}x{c}"),
        };
        let state = if p.frozen { "frozen" } else { "trainable" };
        let _ = writeln!(h, "tensor = {} {} {} {}", p.name, dims, payload.len(), state);
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let _ = writeln!(h, "{END}");
    let mut out = h.into_bytes();
    out.extend_from_slice(&payload);
    out
}

fn scaler_text(s: Option<ScalerState>) -> String {
    match s {
        Some(s) => format!("{:?} {:?}", s.stress_min, s.stress_max),
        None => "none".to_string(),
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct TensorEntry {
    name: String,
    shape: Shape,
    offset: usize,
    frozen: bool,
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let end_marker = format!("\n{END}\n");
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker.as_bytes())
        .ok_or_else(|| corrupt("header terminator not found"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt("header is not UTF-8"))?;
    let payload = &bytes[header_end + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing magic line"));
    }
    let mut fields: Vec<(&str, &str)> = Vec::new();
    let mut tensors = Vec::new();
    for line in lines {
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| corrupt(format!("malformed header line `{line}`")))?;
        if key == "tensor" {
            tensors.push(parse_tensor_line(value)?);
        } else {
            fields.push((key, value));
        }
    }
    let field = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| corrupt(format!("missing header field `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        field(key)?.parse().map_err(|_| corrupt(format!("bad integer for `{key}`")))
    };

    let version: u32 = field("format_version")?
        .parse()
        .map_err(|_| corrupt("bad format_version"))?;
    if version > FORMAT_VERSION || version == 0 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let kind = ModelKind::parse(field("model_kind")?)
        .ok_or_else(|| corrupt(format!("unknown model_kind `{}`", field("model_kind").unwrap_or(""))))?;

    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for t in &tensors {
        if t.offset != expected_offset {
            return Err(corrupt(format!("tensor `{}` at offset {} (expected {expected_offset})", t.name, t.offset)));
        }
        let len = t.shape.numel() * 8;
        let raw = payload
            .get(t.offset..t.offset + len)
            .ok_or_else(|| corrupt(format!("payload truncated inside tensor `{}`", t.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let id = params.register(t.name.clone(), Tensor::new(t.shape, data)?)?;
        params.set_frozen(id, t.frozen);
        expected_offset += len;
    }
    if payload.len() != expected_offset {
        return Err(corrupt(format!(
            "payload is {} bytes, header describes {expected_offset}",
            payload.len()
        )));
    }

    let meta = TrainingMeta {
        seed: field("seed")?.parse().map_err(|_| corrupt("bad seed"))?,
        epochs_run: num("epochs_run")?,
        final_loss: field("final_loss")?.parse().map_err(|_| corrupt("bad final_loss"))?,
    };
    let scaler = parse_scaler(field("scaler")?)?;
    match kind {
        ModelKind::LstmRegressor => {
            let config = RegressorConfig {
                hidden_size: num("hidden_size")?,
                lstm_layers: num("lstm_layers")?,
                fc_units: num("fc_units")?,
                window_len: num("window_len")?,
            };
            Ok(Model::Lstm(LstmRegressor::from_params(params, config, scaler, meta)?))
        }
        ModelKind::Dnn => {
            let config = DnnConfig {
                hidden_layers: num("hidden_layers")?,
                units: num("units")?,
            };
            let log_cycle_scaler = parse_scaler(field("log_cycle_scaler")?)?;
            Ok(Model::Dnn(DnnBaseline::from_params(params, config, scaler, log_cycle_scaler, meta)?))
        }
    }
}

fn parse_tensor_line(value: &str) -> Result<TensorEntry> {
    let parts: Vec<&str> = value.split(' ').collect();
    let [name, dims, offset, state] = parts[..] else {
        return Err(corrupt(format!("malformed tensor entry `{value}`")));
    };
    let dims: Vec<usize> = dims
        .split('x')
        .map(|d| d.parse().map_err(|_| corrupt(format!("bad dims for `{name}`"))))
        .collect::<Result<_>>()?;
    let shape = Shape::from_dims(&dims).ok_or_else(|| corrupt(format!("bad rank for `{name}`")))?;
    let frozen = match state {
        "frozen" => true,
        "trainable" => false,
        other => return Err(corrupt(format!("bad freeze flag `{other}`"))),
    };
    Ok(TensorEntry {
        name: name.to_string(),
        shape,
        offset: offset.parse().map_err(|_| corrupt(format!("bad offset for `{name}`")))?,
        frozen,
    })
}

fn parse_scaler(text: &str) -> Result<Option<ScalerState>> {
    if text == "none" {
        return Ok(None);
    }
    let (lo, hi) = text.split_once(' ').ok_or_else(|| corrupt("bad scaler"))?;
    let lo: f64 = lo.parse().map_err(|_| corrupt("bad scaler minimum"))?;
    let hi: f64 = hi.parse().map_err(|_| corrupt("bad scaler maximum"))?;
    ScalerState::new(lo, hi).map(Some).map_err(|e| corrupt(e.to_string()))
}
