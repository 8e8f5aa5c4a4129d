//! Observation and sample files, checkpoints and run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::ModeRegion;
use crate::error::{Error, Result};
use crate::hmm::{ModelSpec, ObservationSet, ParamVector, Sequence, Stream, StreamFamily};
use crate::kernels::AdaptConfig;
use crate::priors::{GammaHyper, PriorConfig, StreamPrior};
use crate::pt::{EngineSnapshot, PtConfig, SwapScheme};
use crate::store::SampleStore;
use crate::tempering::{TemperatureLadder, TuneConfig};

pub const COVARIATE_COLUMN: &str = "covariate";

fn load_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Reads `sequence_id,t,<stream names...>[,covariate]`. Rows are grouped
/// by sequence and `t` runs 1, 2, ... within each; empty cells are
/// missing observations. Row numbers in errors are file line numbers.
pub fn load_sequences(path: &Path, spec: &ModelSpec) -> Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut expected: Vec<String> = vec!["sequence_id".into(), "t".into()];
    expected.extend(spec.streams().iter().map(|s| s.name.clone()));
    if spec.has_covariate() {
        expected.push(COVARIATE_COLUMN.into());
    }

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(load_error(path, 1, "file is empty")),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if header != expected {
        return Err(load_error(
            path,
            1,
            format!("header {header:?} does not match expected {expected:?}"),
        ));
    }

    let p = spec.n_streams();
    let levels = spec.covariate_levels() as u32;
    let mut sequences: Vec<Sequence> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for record in records {
        let record = record?;
        let row = record.position().map_or(0, |pos| pos.line() as usize);
        if record.len() != expected.len() {
            return Err(load_error(
                path,
                row,
                format!("{} fields, expected {}", record.len(), expected.len()),
            ));
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(load_error(path, row, "empty sequence_id"));
        }
        let t: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| load_error(path, row, format!("t = {:?} is not a positive integer", &record[1])))?;
        if seen.last().map(String::as_str) != Some(id) {
            if seen.iter().any(|s| s == id) {
                return Err(load_error(
                    path,
                    row,
                    format!("sequence {id:?} resumes after another sequence; rows must be grouped"),
                ));
            }
            seen.push(id.to_string());
            sequences.push(Sequence {
                values: Vec::new(),
                covariates: Vec::new(),
            });
        }
        let seq = sequences.last_mut().expect("pushed above");
        if t != seq.len() + 1 {
            return Err(load_error(
                path,
                row,
                format!("sequence {id:?}: t = {t}, expected {}", seq.len() + 1),
            ));
        }
        let mut values = Vec::with_capacity(p);
        for (k, stream) in spec.streams().iter().enumerate() {
            let cell = record[2 + k].trim();
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let y: f64 = cell
                .parse()
                .map_err(|_| load_error(path, row, format!("{}: {cell:?} is not a number", stream.name)))?;
            let ok = match stream.family {
                StreamFamily::Poisson => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
                StreamFamily::GammaMeanSd => y > 0.0 && y.is_finite(),
            };
            if !ok {
                let need = match stream.family {
                    StreamFamily::Poisson => "a non-negative integer",
                    StreamFamily::GammaMeanSd => "a positive finite value",
                };
                return Err(load_error(path, row, format!("{}: {cell} is not {need}", stream.name)));
            }
            values.push(Some(y));
        }
        let level = if spec.has_covariate() {
            let cell = record[2 + p].trim();
            let z: u32 = cell
                .parse()
                .map_err(|_| load_error(path, row, format!("covariate {cell:?} is not an integer level")))?;
            if z > levels {
                return Err(load_error(
                    path,
                    row,
                    format!("covariate level {z} is outside 0..={levels}"),
                ));
            }
            z
        } else {
            0
        };
        seq.values.push(values);
        seq.covariates.push(level);
    }
    if sequences.is_empty() {
        return Err(load_error(path, 1, "no data rows"));
    }
    let data = ObservationSet::new(sequences);
    data.validate(spec)?;
    Ok(data)
}

/// Writes `data` in the layout read by [`load_sequences`], numbering the
/// sequences from 1.
pub fn write_sequences(path: &Path, spec: &ModelSpec, data: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["sequence_id".into(), "t".into()];
    header.extend(spec.streams().iter().map(|s| s.name.clone()));
    if spec.has_covariate() {
        header.push(COVARIATE_COLUMN.into());
    }
    w.write_record(&header)?;
    for (s, seq) in data.sequences.iter().enumerate() {
        for (t, row) in seq.values.iter().enumerate() {
            let mut rec = vec![(s + 1).to_string(), (t + 1).to_string()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |y| y.to_string())));
            if spec.has_covariate() {
                rec.push(seq.covariates[t].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per draw: `iteration,<coordinates...>`.
pub fn write_samples(store: &SampleStore, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(store.names.iter().cloned());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (it, row) in store.iterations.iter().zip(&store.draws) {
        rec.clear();
        rec.push(it.to_string());
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_samples`]. With `expected` set, the
/// coordinate columns must match it exactly.
pub fn read_samples(path: &Path, expected: Option<&[String]>) -> Result<SampleStore> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("iteration") {
        return Err(load_error(path, 1, "first column must be `iteration`"));
    }
    let names: Vec<String> = header[1..].to_vec();
    if let Some(want) = expected {
        if names != want {
            let missing = want.iter().filter(|n| !names.contains(n)).cloned().collect();
            let extra = names.iter().filter(|n| !want.contains(n)).cloned().collect();
            return Err(Error::Schema { missing, extra });
        }
    }
    let mut store = SampleStore::new(names, Default::default());
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let it: u64 = record[0]
            .parse()
            .map_err(|_| load_error(path, row, format!("bad iteration {:?}", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| load_error(path, row, e.to_string()))?;
        store.push(it, values);
    }
    Ok(store)
}

/// Writes through a temporary sibling file so a crash never leaves a
/// truncated file at `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint<S: Serialize>(snapshot: &EngineSnapshot<S>, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec(snapshot)?)
}

pub fn load_checkpoint<S: DeserializeOwned>(path: &Path) -> Result<EngineSnapshot<S>> {
    let bytes = fs::read(path)?;
    // check the tag first so an old format gets a clear message
    let probe: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: not a checkpoint ({e})", path.display())))?;
    match probe.get("format").and_then(|f| f.as_str()) {
        Some(crate::pt::CHECKPOINT_FORMAT) => {}
        Some(other) => {
            return Err(Error::Checkpoint(format!(
                "{}: format {other:?} is not {:?}",
                path.display(),
                crate::pt::CHECKPOINT_FORMAT
            )))
        }
        None => return Err(Error::Checkpoint(format!("{}: missing format tag", path.display()))),
    }
    serde_json::from_value(probe)
        .map_err(|e| Error::Checkpoint(format!("{}: corrupt checkpoint ({e})", path.display())))
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_states: usize,
    #[serde(default)]
    pub covariate_levels: usize,
    pub streams: Vec<Stream>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedPrior {
    pub rate: GammaHyper,
    pub mean: GammaHyper,
    pub sd: GammaHyper,
}

/// Either one set of emission hyperparameters shared by all states, or
/// explicit per-stream priors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub delta_concentration: Option<Vec<f64>>,
    pub shared: Option<SharedPrior>,
    pub streams: Option<Vec<StreamPrior>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricSection {
    pub beta_hot: f64,
    /// Number of levels above the cold one (`M`).
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtSection {
    pub betas: Option<Vec<f64>>,
    pub geometric: Option<GeometricSection>,
    pub n_iters: u64,
    pub burn_in: u64,
    #[serde(default = "one_u32")]
    pub sweeps_per_swap: u32,
    #[serde(default = "seo")]
    pub scheme: SwapScheme,
    #[serde(default = "one_u64")]
    pub thin: u64,
    #[serde(default)]
    pub retain_all: bool,
    #[serde(default = "yes")]
    pub record_trajectory: bool,
    #[serde(default)]
    pub progress_every: u64,
    #[serde(default)]
    pub adapt: Option<AdaptConfig>,
}

fn one_u32() -> u32 {
    1
}
fn one_u64() -> u64 {
    1
}
fn yes() -> bool {
    true
}
fn seo() -> SwapScheme {
    SwapScheme::Seo
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub lengths: Vec<usize>,
    /// Explicit covariate levels per sequence.
    pub covariates: Option<Vec<Vec<u32>>>,
    /// Alternative to `covariates`: cycle through the levels every this
    /// many steps.
    pub covariate_switch_every: Option<usize>,
    /// Ground truth keyed by coordinate name; drawn from the prior if absent.
    pub truth: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub floor: f64,
    pub pilot_iters: Option<u64>,
    pub target: Option<f64>,
    pub band: Option<(f64, f64)>,
    pub max_adjustments: Option<usize>,
    pub far_factor: Option<f64>,
    /// Candidate hottest temperatures to histogram before tuning.
    #[serde(default)]
    pub candidates: Vec<f64>,
    pub histogram_coordinate: Option<String>,
    #[serde(default = "default_hist_iters")]
    pub histogram_iters: u64,
}

fn default_hist_iters() -> u64 {
    20_000
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    #[serde(default)]
    pub constraint: Vec<String>,
    #[serde(default)]
    pub regions: Vec<ModeRegion>,
    /// Leading retained draws skipped by the running weights.
    #[serde(default)]
    pub burn_in: usize,
    /// Coordinate whose histogram valley is suggested as a mode threshold.
    pub valley_coordinate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Independent runs, one per seed.
    pub seeds: Option<Vec<u64>>,
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSection,
    pub pt: Option<PtSection>,
    #[serde(default)]
    pub io: IoSection,
    pub simulate: Option<SimulateSection>,
    pub tune: Option<TuneSection>,
    pub diagnose: Option<DiagnoseSection>,
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            config_error(&field, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.model.n_states,
            self.model.streams.clone(),
            self.model.covariate_levels,
        )
        .map_err(|e| config_error("model", e.to_string()))
    }

    pub fn prior(&self, spec: &ModelSpec) -> Result<PriorConfig> {
        let p = &self.prior;
        let mut config = match (&p.shared, &p.streams) {
            (Some(_), Some(_)) => {
                return Err(config_error("prior", "give either `shared` or `streams`, not both"))
            }
            (Some(s), None) => PriorConfig::shared(spec, s.rate, s.mean, s.sd),
            (None, Some(streams)) => PriorConfig {
                streams: streams.clone(),
                delta_concentration: vec![1.0; spec.n_states()],
            },
            (None, None) => return Err(config_error("prior", "missing `shared` or `streams`")),
        };
        if let Some(d) = &p.delta_concentration {
            config.delta_concentration = d.clone();
        }
        config.validate(spec)?;
        Ok(config)
    }

    /// Seeds of the independent runs, with `override_seed` replacing them all.
    pub fn run_seeds(&self, override_seed: Option<u64>) -> Result<Vec<u64>> {
        if let Some(s) = override_seed {
            return Ok(vec![s]);
        }
        match (&self.seeds, self.seed) {
            (Some(list), _) if !list.is_empty() => Ok(list.clone()),
            (Some(_), _) => Err(config_error("seeds", "empty seed list")),
            (None, Some(s)) => Ok(vec![s]),
            (None, None) => Err(config_error("seed", "missing `seed` or `seeds`")),
        }
    }

    pub fn ladder(&self) -> Result<TemperatureLadder> {
        let pt = self.pt_section()?;
        match (&pt.betas, &pt.geometric) {
            (Some(_), Some(_)) => Err(config_error("pt", "give either `betas` or `geometric`, not both")),
            (Some(b), None) => TemperatureLadder::new(b.clone()),
            (None, Some(g)) => TemperatureLadder::geometric(g.beta_hot, g.m)
                .map_err(|e| config_error("pt.geometric", e.to_string())),
            (None, None) => Err(config_error("pt.betas", "missing ladder (`betas` or `geometric`)")),
        }
    }

    fn pt_section(&self) -> Result<&PtSection> {
        self.pt.as_ref().ok_or_else(|| config_error("pt", "missing [pt] section"))
    }

    pub fn pt_config(&self, seed: u64) -> Result<PtConfig> {
        let pt = self.pt_section()?;
        let ladder = self.ladder()?;
        let config = PtConfig {
            betas: ladder.betas,
            n_iters: pt.n_iters,
            burn_in: pt.burn_in,
            sweeps_per_swap: pt.sweeps_per_swap,
            scheme: pt.scheme,
            thin: pt.thin,
            seed,
            adapt: pt.adapt.unwrap_or_default(),
            retain_all: pt.retain_all,
            record_trajectory: pt.record_trajectory,
            progress_every: pt.progress_every,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn tune_config(&self, seed: u64) -> Result<TuneConfig> {
        let t = self
            .tune
            .as_ref()
            .ok_or_else(|| config_error("tune", "missing [tune] section"))?;
        let mut c = TuneConfig::new(t.floor, seed);
        if let Some(v) = t.pilot_iters {
            c.pilot_iters = v;
        }
        if let Some(v) = t.target {
            c.target = v;
        }
        if let Some(v) = t.band {
            c.band = v;
        }
        if let Some(v) = t.max_adjustments {
            c.max_adjustments = v;
        }
        if let Some(v) = t.far_factor {
            c.far_factor = v;
        }
        if let Some(pt) = &self.pt {
            c.sweeps_per_swap = pt.sweeps_per_swap;
            c.scheme = pt.scheme;
            if let Some(a) = pt.adapt {
                c.adapt = a;
            }
        }
        Ok(c)
    }

    pub fn data_path(&self, override_path: Option<&Path>) -> Result<PathBuf> {
        override_path
            .map(Path::to_path_buf)
            .or_else(|| self.io.data.clone())
            .ok_or_else(|| config_error("io.data", "no data path given (config `io.data` or --data)"))
    }
}

/// Assembles a parameter vector from values keyed by coordinate name.
pub fn param_vector_from_map(spec: &ModelSpec, values: &BTreeMap<String, f64>) -> Result<ParamVector> {
    let names = spec.coordinate_names();
    let missing: Vec<String> = names.iter().filter(|n| !values.contains_key(*n)).cloned().collect();
    let extra: Vec<String> = values.keys().filter(|k| !names.contains(k)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema { missing, extra });
    }
    let flat: Vec<f64> = names.iter().map(|n| values[n]).collect();
    let theta = ParamVector::unflatten(spec, &flat)?;
    theta.validate(spec)?;
    Ok(theta)
}

pub fn param_vector_to_map(spec: &ModelSpec, theta: &ParamVector) -> BTreeMap<String, f64> {
    spec.coordinate_names().into_iter().zip(theta.flatten()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::simulate;
    use crate::priors::sample_prior;
    use crate::store::StoreMetadata;
    use tempfile::tempdir;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            2,
            vec![
                Stream::new("lunges", StreamFamily::Poisson),
                Stream::new("depth", StreamFamily::GammaMeanSd),
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn single_row_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "sequence_id,t,n\nw1,1,3\n").unwrap();
        let s = ModelSpec::new(1, vec![Stream::new("n", StreamFamily::Poisson)], 0).unwrap();
        let data = load_sequences(&path, &s).unwrap();
        assert_eq!(data.sequences.len(), 1);
        assert_eq!(data.sequences[0].values, vec![vec![Some(3.0)]]);
    }

    #[test]
    fn loader_errors_name_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let s = spec();
        let cases = [
            ("sequence_id,t,lunges,depth,covariate\na,1,1,2.5,0\nb,1,0,3,1\na,2,1,2,0\n", 4),
            ("sequence_id,t,lunges,depth,covariate\na,1,1,2.5,0\na,3,0,3,1\n", 3),
            ("sequence_id,t,lunges,depth,covariate\na,1,1.5,2.5,0\n", 2),
            ("sequence_id,t,lunges,depth,covariate\na,1,1,-2,0\n", 2),
            ("sequence_id,t,lunges,depth,covariate\na,1,1,2,0\na,2,1,2,2\n", 3),
            ("sequence_id,t,lunges,depth\na,1,1,2\n", 1),
            ("sequence_id,t,lunges,depth,covariate\na,1,x,2,0\n", 2),
        ];
        for (text, row) in cases {
            fs::write(&path, text).unwrap();
            match load_sequences(&path, &s) {
                Err(Error::Load { row: r, .. }) => assert_eq!(r, row, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn missing_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "sequence_id,t,lunges,depth,covariate\na,1,,2.5,1\na,2,4,,0\n").unwrap();
        let data = load_sequences(&path, &spec()).unwrap();
        assert_eq!(data.sequences[0].values, vec![vec![None, Some(2.5)], vec![Some(4.0), None]]);
        assert_eq!(data.sequences[0].covariates, vec![1, 0]);
    }

    #[test]
    fn simulate_write_load_round_trip() {
        let s = spec();
        let prior = PriorConfig::shared(&s, GammaHyper::new(2.0, 0.5), GammaHyper::new(2.0, 0.1), GammaHyper::new(2.0, 0.5));
        let theta = sample_prior(&s, &prior, 3).unwrap();
        let cov: Vec<Vec<u32>> = vec![(0..30).map(|t| t % 2).collect(), (0..12).map(|_| 1).collect()];
        let mut sim = simulate(&s, &theta, &[30, 12], Some(&cov), 8).unwrap();
        sim.data.sequences[0].values[4][1] = None;
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_sequences(&path, &s, &sim.data).unwrap();
        assert_eq!(load_sequences(&path, &s).unwrap(), sim.data);
    }

    #[test]
    fn samples_round_trip_bit_exact() {
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let mut store = SampleStore::new(names.clone(), StoreMetadata::default());
        let vals = [0.1 + 0.2, -1e-300, 1.0 / 3.0, f64::MAX, f64::MIN_POSITIVE, -0.0, 123456789.123456789, 5e-324, 2.0];
        for (i, c) in vals.chunks(3).enumerate() {
            store.push(10 * i as u64, c.to_vec());
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_samples(&store, &path).unwrap();
        let back = read_samples(&path, Some(&names)).unwrap();
        assert_eq!(back.iterations, store.iterations);
        for (a, b) in back.draws.iter().flatten().zip(store.draws.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let other = vec!["a".to_string(), "b".into(), "d".into()];
        match read_samples(&path, Some(&other)) {
            Err(Error::Schema { missing, extra }) => {
                assert_eq!(missing, vec!["d".to_string()]);
                assert_eq!(extra, vec!["c".to_string()]);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = spec();
        let store = SampleStore::new(s.coordinate_names(), StoreMetadata::default());
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_samples(&store, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap().len(), s.dimension() + 1);
        assert!(read_samples(&path, None).unwrap().is_empty());
    }

    #[test]
    fn config_parsing() {
        let text = r#"
seeds = [1, 2]
[model]
n_states = 2
covariate_levels = 1
streams = [{ name = "lunges", family = "poisson" }, { name = "depth", family = "gamma_mean_sd" }]
[prior.shared]
rate = { shape = 2.0, rate = 0.5 }
mean = { shape = 2.0, rate = 0.1 }
sd = { shape = 2.0, rate = 0.5 }
[pt]
geometric = { beta_hot = 0.25, m = 2 }
n_iters = 100
burn_in = 10
scheme = "deo"
[io]
data = "d.csv"
[diagnose]
constraint = ["depth.mean[1]", "depth.mean[2]"]
regions = [{ name = "B", coordinate = "depth.mean[2]", lower = 50.0, upper = inf }]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let s = cfg.spec().unwrap();
        assert_eq!(s, spec());
        cfg.prior(&s).unwrap();
        assert_eq!(cfg.run_seeds(None).unwrap(), vec![1, 2]);
        assert_eq!(cfg.run_seeds(Some(9)).unwrap(), vec![9]);
        let pt = cfg.pt_config(1).unwrap();
        assert_eq!(pt.betas.len(), 3);
        assert_eq!(pt.scheme, SwapScheme::Deo);
        assert_eq!(cfg.diagnose.unwrap().regions[0].upper, f64::INFINITY);

        let err = RunConfig::from_toml("seed = 1\n[model]\nn_states = 2\nstreams = []\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn truth_map_round_trip() {
        let s = spec();
        let prior = PriorConfig::shared(&s, GammaHyper::new(2.0, 0.5), GammaHyper::new(2.0, 0.1), GammaHyper::new(2.0, 0.5));
        let theta = sample_prior(&s, &prior, 1).unwrap();
        let map = param_vector_to_map(&s, &theta);
        assert_eq!(param_vector_from_map(&s, &map).unwrap(), theta);
        let mut short = map.clone();
        short.remove("delta[1]");
        assert!(matches!(param_vector_from_map(&s, &short), Err(Error::Schema { .. })));
    }

    #[test]
    fn checkpoint_files() {
        use crate::pt::{PtEngine, PtConfig};
        use crate::toy::ToyTarget;
        let target = ToyTarget::standard_normal();
        let cfg = PtConfig::new(vec![1.0, 0.5], 200, 50, 4);
        let fresh = {
            let mut e = PtEngine::new(&target, cfg.clone()).unwrap();
            e.run_to_end();
            e.finish()
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let e = PtEngine::new(&target, cfg.clone()).unwrap();
        save_checkpoint(&e.snapshot(), &path).unwrap();
        let snap: EngineSnapshot<Vec<f64>> = load_checkpoint(&path).unwrap();
        let mut resumed = PtEngine::resume(&target, snap, cfg).unwrap();
        resumed.run_to_end();
        assert_eq!(resumed.finish().store, fresh.store);

        fs::write(&path, "{\"format\": \"hmm-pt-checkpoint/0\"}").unwrap();
        assert!(matches!(load_checkpoint::<Vec<f64>>(&path), Err(Error::Checkpoint(_))));
        fs::write(&path, "garbage").unwrap();
        assert!(matches!(load_checkpoint::<Vec<f64>>(&path), Err(Error::Checkpoint(_))));
    }
}
