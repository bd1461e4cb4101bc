//! On-disk formats.
//!
//! Datasets are NDJSON: a header line
//! `{"format":"proprio-episodes","version":1,"env_hash":…,"observation_names":[…],"env":{…}}`
//! followed by one [`Trajectory`] object per line. Floats are written in
//! shortest round-trip decimal, so reading a file back is bit-exact.
//!
//! Checkpoints are a single JSON object holding the model layout, the named
//! parameter arrays, the seed and the hash of the environment config the data
//! came from.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::data::Trajectory;
use crate::env::EnvConfig;
use crate::preco::{PrecoModel, PrecoParams};

pub const DATASET_FORMAT: &str = "proprio-episodes";
pub const CHECKPOINT_FORMAT: &str = "proprio-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON encoding of `env`.
pub fn env_hash(env: &EnvConfig) -> String {
    let json = serde_json::to_string(env).expect("EnvConfig serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub env_hash: String,
    pub observation_names: Vec<String>,
    pub env: EnvConfig,
}

impl DatasetHeader {
    pub fn new(env: &EnvConfig) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            env_hash: env_hash(env),
            observation_names: env.observation_names(),
            env: env.clone(),
        }
    }
}

/// Environment config and episodes read from one or more files.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env: EnvConfig,
    pub episodes: Vec<Trajectory>,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Opens `path` for writing through `f`, creating parent directories.
pub fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn write_dataset(path: &Path, env: &EnvConfig, episodes: &[Trajectory]) -> Result<(), CliError> {
    write_with(path, |w| {
        serde_json::to_writer(&mut *w, &DatasetHeader::new(env))?;
        writeln!(w)?;
        for ep in episodes {
            serde_json::to_writer(&mut *w, ep)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

fn malformed(path: &Path, line: usize, message: impl ToString) -> CliError {
    CliError::Malformed { path: path.to_path_buf(), line, message: message.to_string() }
}

/// Reads one dataset file. Line numbers in errors are 1-based.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| CliError::io(path, e))?,
        None => return Err(malformed(path, 1, "missing header line")),
    };
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| malformed(path, 1, e))?;
    if header.format != DATASET_FORMAT || header.version != FORMAT_VERSION {
        return Err(malformed(path, 1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    if env_hash(&header.env) != header.env_hash {
        return Err(malformed(path, 1, "env_hash does not match the embedded env config"));
    }
    let (f, d) = (header.env.num_fingers, header.env.obs_dim());
    let mut episodes = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| CliError::io(path, e))?;
        let ep: Trajectory = serde_json::from_str(&line).map_err(|e| malformed(path, n, e))?;
        let widths_ok = ep.actions.len() == ep.observations.len()
            && ep.actions.iter().all(|u| u.len() == f)
            && ep.observations.iter().all(|x| x.len() == d);
        if !widths_ok {
            return Err(malformed(path, n, format!("episode is not [T, {f}] actions with [T, {d}] observations")));
        }
        episodes.push(ep);
    }
    Ok(Dataset { env: header.env, episodes })
}

/// Reads and concatenates several files, refusing to mix environments.
pub fn read_datasets(paths: &[PathBuf]) -> Result<Dataset, CliError> {
    let (first, rest) = paths.split_first().ok_or_else(|| CliError::Usage("at least one --data file is required".into()))?;
    let mut out = read_dataset(first)?;
    for p in rest {
        let more = read_dataset(p)?;
        if more.env != out.env {
            return Err(CliError::EnvMismatch { first: first.clone(), other: p.clone() });
        }
        out.episodes.extend(more.episodes);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub env_hash: String,
    pub model: PrecoModel,
    pub params: PrecoParams,
}

impl Checkpoint {
    pub fn new(env: &EnvConfig, seed: u64, model: PrecoModel, params: PrecoParams) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: FORMAT_VERSION, seed, env_hash: env_hash(env), model, params }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_with(path, |w| {
            serde_json::to_writer(&mut *w, self)?;
            writeln!(w)
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != FORMAT_VERSION {
            return Err(malformed(path, 1, format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        ck.model.check_params(&ck.params)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::{collect_passive, collect_random, NoiseKind};
    use crate::preco::PrecoConfig;

    fn short_env() -> EnvConfig {
        EnvConfig { episode_length: 7, obs_noise_std: 0.01, ..EnvConfig::default() }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        let env = short_env();
        let eps = collect_random(NoiseKind::Cor, &env, 4, 2).unwrap();
        write_dataset(&path, &env, &eps).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.env, env);
        assert_eq!(back.episodes, eps);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.starts_with("{\"format\":\"proprio-episodes\",\"version\":1,"));
    }

    #[test]
    fn malformed_lines_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        let env = short_env();
        write_dataset(&path, &env, &collect_passive(&env, 3, 0).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.len() - 40;
        std::fs::write(&path, &text[..cut]).unwrap();
        match read_dataset(&path) {
            Err(CliError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "").unwrap();
        assert!(matches!(read_dataset(&path), Err(CliError::Malformed { line: 1, .. })));
        std::fs::write(&path, text.replacen("\"num_fingers\":4", "\"num_fingers\":3", 1)).unwrap();
        assert!(matches!(read_dataset(&path), Err(CliError::Malformed { line: 1, .. })));
    }

    #[test]
    fn mixed_environments_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        let env = short_env();
        let other = EnvConfig { episode_length: 8, ..env.clone() };
        write_dataset(&a, &env, &collect_passive(&env, 2, 0).unwrap()).unwrap();
        write_dataset(&b, &env, &collect_passive(&env, 3, 1).unwrap()).unwrap();
        write_dataset(&c, &other, &collect_passive(&other, 2, 0).unwrap()).unwrap();
        assert_eq!(read_datasets(&[a.clone(), b]).unwrap().episodes.len(), 5);
        assert!(matches!(read_datasets(&[a, c]), Err(CliError::EnvMismatch { .. })));
        assert_ne!(env_hash(&env), env_hash(&other));
        assert_eq!(env_hash(&env).len(), 64);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let env = short_env();
        let config = PrecoConfig { core_hidden_size: 5, ..PrecoConfig::default() };
        let (m, p) = PrecoModel::init(config, 4, 16, 3).unwrap();
        let ck = Checkpoint::new(&env, 3, m, p);
        ck.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), ck);
        std::fs::write(&path, "{\"format\":1}").unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(CliError::Malformed { .. })));
    }
}
