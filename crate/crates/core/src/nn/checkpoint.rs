//! Versioned checkpoint files.
//!
//! Layout (version 1):
//!
//! ```text
//! GTSP-CHECKPOINT v1\n
//! precision f64\n
//! seed <u64>\n
//! epoch <u64>\n
//! config <single-line JSON, or -> \n
//! params <count>\n
//! <name> <rows> <cols>\n          (one line per parameter, canonical order)
//! DATA\n
//! <raw little-endian f64 blobs>
//! ```
//!
//! The binary section stores, for each parameter in header order: the values,
//! the first Adam moment, the second Adam moment (rows*cols f64 each), then a
//! single u64 step counter. Keeping optimizer state makes resumed training
//! bit-identical to an uninterrupted run.

use super::store::{Init, ParameterStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const MAGIC: &str = "GTSP-CHECKPOINT v1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// A parsed checkpoint: parameter store plus training coordinates.
pub struct Checkpoint {
    pub store: ParameterStore,
    pub seed: u64,
    pub epoch: u64,
    /// Free-form single-line JSON configuration, when present.
    pub config: Option<String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_checkpoint(
    path: &Path,
    store: &ParameterStore,
    seed: u64,
    epoch: u64,
    config: Option<&str>,
) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let config_line = match config {
        Some(c) => {
            assert!(!c.contains('\n'), "checkpoint config must be single-line");
            c
        }
        None => "-",
    };
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str("precision f64\n");
    header.push_str(&format!("seed {seed}\n"));
    header.push_str(&format!("epoch {epoch}\n"));
    header.push_str(&format!("config {config_line}\n"));
    header.push_str(&format!("params {}\n", store.len()));
    for name in store.names() {
        let id = store.id(name);
        let (rows, cols) = store.shape(id);
        header.push_str(&format!("{name} {rows} {cols}\n"));
    }
    header.push_str("DATA\n");
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    for name in store.names() {
        let id = store.id(name);
        let (m1, m2, step) = store.optimizer_state(id);
        for block in [store.value(id), m1, m2] {
            for v in block {
                w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
            }
        }
        w.write_all(&step.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let next_line = |r: &mut BufReader<std::fs::File>, line: &mut String| -> Result<String, CheckpointError> {
        line.clear();
        r.read_line(line).map_err(io_err(path))?;
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut r, &mut line)? != MAGIC {
        return Err(CheckpointError::Format(format!(
            "bad magic, expected `{MAGIC}`"
        )));
    }
    let precision = next_line(&mut r, &mut line)?;
    if precision != "precision f64" {
        return Err(CheckpointError::Format(format!(
            "unsupported precision line `{precision}`"
        )));
    }
    let parse_field = |text: &str, key: &str| -> Result<String, CheckpointError> {
        text.strip_prefix(&format!("{key} "))
            .map(str::to_string)
            .ok_or_else(|| CheckpointError::Format(format!("expected `{key} ...`, got `{text}`")))
    };
    let seed: u64 = parse_field(&next_line(&mut r, &mut line)?, "seed")?
        .parse()
        .map_err(|e| CheckpointError::Format(format!("bad seed: {e}")))?;
    let epoch: u64 = parse_field(&next_line(&mut r, &mut line)?, "epoch")?
        .parse()
        .map_err(|e| CheckpointError::Format(format!("bad epoch: {e}")))?;
    let config_raw = parse_field(&next_line(&mut r, &mut line)?, "config")?;
    let config = if config_raw == "-" { None } else { Some(config_raw) };
    let count: usize = parse_field(&next_line(&mut r, &mut line)?, "params")?
        .parse()
        .map_err(|e| CheckpointError::Format(format!("bad param count: {e}")))?;

    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let text = next_line(&mut r, &mut line)?;
        let mut parts = text.split(' ');
        let name = parts
            .next()
            .ok_or_else(|| CheckpointError::Format("empty parameter line".into()))?
            .to_string();
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CheckpointError::Format(format!("bad rows in `{text}`")))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CheckpointError::Format(format!("bad cols in `{text}`")))?;
        shapes.push((name, rows, cols));
    }
    if next_line(&mut r, &mut line)? != "DATA" {
        return Err(CheckpointError::Format("missing DATA separator".into()));
    }

    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf8 = [0u8; 8];
    for (name, rows, cols) in &shapes {
        let id = store.add(name, *rows, *cols, Init::Zeros, &mut rng);
        let len = rows * cols;
        let mut read_block = |r: &mut BufReader<std::fs::File>| -> Result<Vec<f64>, CheckpointError> {
            let mut block = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf8).map_err(io_err(path))?;
                block.push(f64::from_le_bytes(buf8));
            }
            Ok(block)
        };
        let values = read_block(&mut r)?;
        let m1 = read_block(&mut r)?;
        let m2 = read_block(&mut r)?;
        let mut step_buf = [0u8; 8];
        r.read_exact(&mut step_buf).map_err(io_err(path))?;
        store.set_value(id, &values);
        store.restore_optimizer_state(id, &m1, &m2, u64::from_le_bytes(step_buf));
    }
    Ok(Checkpoint {
        store,
        seed,
        epoch,
        config,
    })
}
