//! Model files: a `key=value` text header closed by `end_header`, followed by
//! the parameters as little-endian f64.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use super::net::{Activation, Anneal, Architecture, Scaling, ScoreModel, TrainMeta};
use crate::error::{Error, Result};

const MAGIC: &str = "hmimo-score-model 1";
const END: &str = "end_header";

pub fn write_model(model: &ScoreModel, mut out: impl Write) -> std::io::Result<()> {
    let a = &model.arch;
    let m = &model.meta;
    writeln!(out, "{MAGIC}")?;
    let fields: [(&str, String); 21] = [
        ("input_dim", a.input_dim.to_string()),
        ("hidden_layers", a.hidden_layers.to_string()),
        ("width", a.width.to_string()),
        ("activation", a.activation.name().into()),
        ("linear_skip", a.linear_skip.to_string()),
        ("scalar_gain", a.scalar_gain.to_string()),
        ("param_count", model.params.len().to_string()),
        ("input_scale", format!("{:e}", model.scaling.input)),
        ("level_scale", format!("{:e}", model.scaling.level)),
        ("epochs", m.epochs.to_string()),
        ("steps", m.steps.to_string()),
        ("lr", m.lr.to_string()),
        ("sigma_min", m.sigma_min.to_string()),
        ("sigma_max", m.sigma_max.to_string()),
        ("batch_size", m.batch_size.to_string()),
        ("lr_halving_period", m.lr_halving_period.to_string()),
        ("anneal", m.anneal.name().into()),
        ("seed", m.seed.to_string()),
        ("dataset_fingerprint", format!("{:016x}", m.dataset_fingerprint)),
        ("train_snr_db", m.train_snr_db.to_string()),
        ("noise_level", m.noise_level.to_string()),
    ];
    for (k, v) in fields {
        writeln!(out, "{k}={v}")?;
    }
    writeln!(out, "{END}")?;
    let mut bytes = Vec::with_capacity(model.params.len() * 8);
    for p in &model.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn read_model(input: impl Read) -> Result<ScoreModel> {
    let mut reader = std::io::BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |reader: &mut std::io::BufReader<_>| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| bad(e.to_string()))? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut reader)? != MAGIC {
        return Err(bad("missing model header"));
    }
    let mut kv = BTreeMap::new();
    loop {
        let l = next_line(&mut reader)?;
        if l == END {
            break;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key {k}")));
    fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| bad(format!("bad value for {k}: {v}")))
    }
    let arch = Architecture {
        input_dim: parse("input_dim", get("input_dim")?)?,
        hidden_layers: parse("hidden_layers", get("hidden_layers")?)?,
        width: parse("width", get("width")?)?,
        activation: Activation::from_name(get("activation")?).ok_or_else(|| bad("unknown activation"))?,
        linear_skip: parse("linear_skip", get("linear_skip")?)?,
        scalar_gain: parse("scalar_gain", get("scalar_gain")?)?,
    };
    arch.validate()?;
    let meta = TrainMeta {
        epochs: parse("epochs", get("epochs")?)?,
        steps: parse("steps", get("steps")?)?,
        lr: parse("lr", get("lr")?)?,
        sigma_min: parse("sigma_min", get("sigma_min")?)?,
        sigma_max: parse("sigma_max", get("sigma_max")?)?,
        batch_size: parse("batch_size", get("batch_size")?)?,
        lr_halving_period: parse("lr_halving_period", get("lr_halving_period")?)?,
        anneal: Anneal::from_name(get("anneal")?).ok_or_else(|| bad("unknown anneal direction"))?,
        seed: parse("seed", get("seed")?)?,
        dataset_fingerprint: u64::from_str_radix(get("dataset_fingerprint")?, 16)
            .map_err(|_| bad("bad dataset fingerprint"))?,
        train_snr_db: parse("train_snr_db", get("train_snr_db")?)?,
        noise_level: parse("noise_level", get("noise_level")?)?,
    };
    let scaling = Scaling {
        input: parse("input_scale", get("input_scale")?)?,
        level: parse("level_scale", get("level_scale")?)?,
    };
    if !(scaling.input > 0.0 && scaling.level > 0.0) {
        return Err(bad("scales must be positive"));
    }
    let count: usize = parse("param_count", get("param_count")?)?;
    if count != arch.param_count() {
        return Err(bad(format!(
            "header declares {count} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| bad("truncated parameter block"))?;
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ScoreModel {
        arch,
        params,
        scaling,
        meta,
    })
}

pub fn save(model: &ScoreModel, path: &std::path::Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()
}

pub fn load(path: &std::path::Path) -> Result<ScoreModel> {
    let file = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_model(file)
}
