use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution family of one observed data stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamFamily {
    /// Counts, parameterised by a rate.
    Poisson,
    /// Positive reals, parameterised by mean and standard deviation.
    GammaMeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub name: String,
    pub family: StreamFamily,
}

impl Stream {
    pub fn new(name: impl Into<String>, family: StreamFamily) -> Self {
        Stream {
            name: name.into(),
            family,
        }
    }
}

/// Static structure of a multivariate HMM.
///
/// `covariate_levels` is the number of non-baseline levels of the single
/// categorical covariate acting on the transition matrix; zero means a
/// homogeneous chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    n_states: usize,
    streams: Vec<Stream>,
    covariate_levels: usize,
}

impl ModelSpec {
    pub fn new(n_states: usize, streams: Vec<Stream>, covariate_levels: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Model("at least one hidden state is required".into()));
        }
        if streams.is_empty() {
            return Err(Error::Model("at least one observation stream is required".into()));
        }
        for (p, s) in streams.iter().enumerate() {
            if s.name.is_empty() || s.name.contains(['.', '[', ']', ',']) {
                return Err(Error::Model(format!(
                    "stream {p} has an invalid name {:?} (must be non-empty, without '.', '[', ']' or ',')",
                    s.name
                )));
            }
            if streams[..p].iter().any(|o| o.name == s.name) {
                return Err(Error::Model(format!("duplicate stream name {:?}", s.name)));
            }
        }
        Ok(ModelSpec {
            n_states,
            streams,
            covariate_levels,
        })
    }

    /// Convenience constructor naming streams `s1, s2, ...`.
    pub fn with_families(
        n_states: usize,
        families: &[StreamFamily],
        covariate_levels: usize,
    ) -> Result<Self> {
        let streams = families
            .iter()
            .enumerate()
            .map(|(p, &f)| Stream::new(format!("s{}", p + 1), f))
            .collect();
        Self::new(n_states, streams, covariate_levels)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn covariate_levels(&self) -> usize {
        self.covariate_levels
    }

    pub fn has_covariate(&self) -> bool {
        self.covariate_levels > 0
    }

    /// Number of scalar coordinates in a flattened [`ParamVector`].
    pub fn dimension(&self) -> usize {
        let n = self.n_states;
        let off = n * (n - 1);
        let emission: usize = self
            .streams
            .iter()
            .map(|s| match s.family {
                StreamFamily::Poisson => n,
                StreamFamily::GammaMeanSd => 2 * n,
            })
            .sum();
        n + off + off * self.covariate_levels + n + emission
    }

    /// Names of the flattened coordinates, in [`ParamVector::flatten`] order.
    /// State indices are 1-based.
    pub fn coordinate_names(&self) -> Vec<String> {
        let n = self.n_states;
        let mut names = Vec::with_capacity(self.dimension());
        for i in 0..n {
            names.push(format!("delta[{}]", i + 1));
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                names.push(format!("alpha0[{},{}]", i + 1, j + 1));
            }
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                for l in 0..self.covariate_levels {
                    names.push(format!("alpha1[{},{},{}]", i + 1, j + 1, l + 1));
                }
            }
        }
        for i in 0..n {
            names.push(format!("zeta[{}]", i + 1));
        }
        for s in &self.streams {
            match s.family {
                StreamFamily::Poisson => {
                    for i in 0..n {
                        names.push(format!("{}.rate[{}]", s.name, i + 1));
                    }
                }
                StreamFamily::GammaMeanSd => {
                    for i in 0..n {
                        names.push(format!("{}.mean[{}]", s.name, i + 1));
                    }
                    for i in 0..n {
                        names.push(format!("{}.sd[{}]", s.name, i + 1));
                    }
                }
            }
        }
        names
    }

    /// Recovers the model structure from flattened coordinate names.
    pub fn from_coordinate_names(names: &[String]) -> Result<Self> {
        let n_states = names.iter().filter(|n| n.starts_with("delta[")).count();
        if n_states == 0 {
            return Err(Error::Model("no delta[..] coordinates found".into()));
        }
        let n_alpha1 = names.iter().filter(|n| n.starts_with("alpha1[")).count();
        let off = n_states * (n_states - 1);
        let covariate_levels = if off == 0 { 0 } else { n_alpha1 / off };
        let mut streams: Vec<Stream> = Vec::new();
        for name in names {
            let Some((stream, rest)) = name.split_once('.') else {
                continue;
            };
            let family = if rest.starts_with("rate[") {
                StreamFamily::Poisson
            } else if rest.starts_with("mean[") || rest.starts_with("sd[") {
                StreamFamily::GammaMeanSd
            } else {
                return Err(Error::Model(format!("unrecognised coordinate {name:?}")));
            };
            match streams.iter().find(|s| s.name == stream) {
                Some(s) if s.family != family => {
                    return Err(Error::Model(format!("stream {stream:?} mixes families")))
                }
                Some(_) => {}
                None => streams.push(Stream::new(stream, family)),
            }
        }
        let spec = ModelSpec::new(n_states, streams, covariate_levels)?;
        if spec.coordinate_names() != names {
            return Err(Error::Model(
                "coordinate names do not match any model layout".into(),
            ));
        }
        Ok(spec)
    }
}

/// Column index of the `k`-th off-diagonal entry of row `row`.
#[inline]
pub fn offdiag_col(row: usize, k: usize) -> usize {
    if k < row {
        k
    } else {
        k + 1
    }
}

/// Position of column `col` among the off-diagonal entries of row `row`.
#[inline]
pub fn offdiag_index(row: usize, col: usize) -> usize {
    debug_assert_ne!(row, col);
    if col < row {
        col
    } else {
        col - 1
    }
}

/// Per-state emission parameters of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StreamParams {
    Poisson { rate: Vec<f64> },
    GammaMeanSd { mean: Vec<f64>, sd: Vec<f64> },
}

impl StreamParams {
    pub fn family(&self) -> StreamFamily {
        match self {
            StreamParams::Poisson { .. } => StreamFamily::Poisson,
            StreamParams::GammaMeanSd { .. } => StreamFamily::GammaMeanSd,
        }
    }

    pub fn state(&self, state: usize) -> StateEmission {
        match self {
            StreamParams::Poisson { rate } => StateEmission::Poisson { rate: rate[state] },
            StreamParams::GammaMeanSd { mean, sd } => StateEmission::GammaMeanSd {
                mean: mean[state],
                sd: sd[state],
            },
        }
    }

    /// All positive parameters of the stream, in flattening order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        let (a, b): (&[f64], &[f64]) = match self {
            StreamParams::Poisson { rate } => (rate, &[]),
            StreamParams::GammaMeanSd { mean, sd } => (mean, sd),
        };
        a.iter().chain(b.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let (a, b): (&mut [f64], &mut [f64]) = match self {
            StreamParams::Poisson { rate } => (rate, &mut []),
            StreamParams::GammaMeanSd { mean, sd } => (mean, sd),
        };
        a.iter_mut().chain(b.iter_mut())
    }

    fn permute(&self, perm: &[usize]) -> StreamParams {
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        match self {
            StreamParams::Poisson { rate } => StreamParams::Poisson { rate: pick(rate) },
            StreamParams::GammaMeanSd { mean, sd } => StreamParams::GammaMeanSd {
                mean: pick(mean),
                sd: pick(sd),
            },
        }
    }
}

/// Emission parameters of a single state in a single stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateEmission {
    Poisson { rate: f64 },
    GammaMeanSd { mean: f64, sd: f64 },
}

/// One point in parameter space.
///
/// `alpha0[i][k]` holds the baseline working parameter for the transition
/// from state `i` to state [`offdiag_col`]`(i, k)`; `alpha1[i][k][l]` the
/// matching offset for covariate level `l + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub delta: Vec<f64>,
    pub alpha0: Vec<Vec<f64>>,
    pub alpha1: Vec<Vec<Vec<f64>>>,
    pub zeta: Vec<f64>,
    pub emission: Vec<StreamParams>,
}

impl ParamVector {
    /// Uniform initial distribution, zero working parameters and unit
    /// emission parameters.
    pub fn neutral(spec: &ModelSpec) -> Self {
        let n = spec.n_states();
        let l = spec.covariate_levels();
        ParamVector {
            delta: vec![1.0 / n as f64; n],
            alpha0: vec![vec![0.0; n - 1]; n],
            alpha1: vec![vec![vec![0.0; l]; n - 1]; n],
            zeta: vec![0.0; n],
            emission: spec
                .streams()
                .iter()
                .map(|s| match s.family {
                    StreamFamily::Poisson => StreamParams::Poisson { rate: vec![1.0; n] },
                    StreamFamily::GammaMeanSd => StreamParams::GammaMeanSd {
                        mean: vec![1.0; n],
                        sd: vec![1.0; n],
                    },
                })
                .collect(),
        }
    }

    /// Checks shapes against `spec` and the value invariants.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        self.validate_shape(spec)?;
        let bad = |m: String| Err(Error::Params(m));
        if self.delta.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return bad("delta entries must be finite and non-negative".into());
        }
        let sum: f64 = self.delta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("delta sums to {sum}, not 1"));
        }
        let finite = self
            .alpha0
            .iter()
            .flatten()
            .chain(self.alpha1.iter().flatten().flatten())
            .chain(self.zeta.iter())
            .all(|v| v.is_finite());
        if !finite {
            return bad("working parameters must be finite".into());
        }
        for (p, params) in self.emission.iter().enumerate() {
            if params.values().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return bad(format!("stream {p} parameters must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Checks that every block has the dimensions `spec` requires.
    pub fn validate_shape(&self, spec: &ModelSpec) -> Result<()> {
        let n = spec.n_states();
        let l = spec.covariate_levels();
        let bad = |m: String| Err(Error::Params(m));
        if self.delta.len() != n {
            return bad(format!("delta has length {}, expected {n}", self.delta.len()));
        }
        if self.alpha0.len() != n || self.alpha0.iter().any(|r| r.len() != n - 1) {
            return bad(format!("alpha0 must be {n} x {}", n - 1));
        }
        if self.alpha1.len() != n
            || self
                .alpha1
                .iter()
                .any(|r| r.len() != n - 1 || r.iter().any(|c| c.len() != l))
        {
            return bad(format!("alpha1 must be {n} x {} x {l}", n - 1));
        }
        if self.zeta.len() != n {
            return bad(format!("zeta has length {}, expected {n}", self.zeta.len()));
        }
        if self.emission.len() != spec.n_streams() {
            return bad(format!(
                "{} emission blocks for {} streams",
                self.emission.len(),
                spec.n_streams()
            ));
        }
        for (p, (params, stream)) in self.emission.iter().zip(spec.streams()).enumerate() {
            if params.family() != stream.family {
                return bad(format!("stream {p} family mismatch"));
            }
            let len_ok = match params {
                StreamParams::Poisson { rate } => rate.len() == n,
                StreamParams::GammaMeanSd { mean, sd } => mean.len() == n && sd.len() == n,
            };
            if !len_ok {
                return bad(format!("stream {p} needs one parameter set per state"));
            }
        }
        Ok(())
    }

    /// Flattens into the coordinate order of [`ModelSpec::coordinate_names`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.flatten_into(&mut out);
        out
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.delta);
        out.extend(self.alpha0.iter().flatten());
        out.extend(self.alpha1.iter().flatten().flatten());
        out.extend_from_slice(&self.zeta);
        for e in &self.emission {
            out.extend(e.values());
        }
    }

    /// Inverse of [`ParamVector::flatten`].
    pub fn unflatten(spec: &ModelSpec, values: &[f64]) -> Result<Self> {
        if values.len() != spec.dimension() {
            return Err(Error::Params(format!(
                "{} values for a {}-dimensional model",
                values.len(),
                spec.dimension()
            )));
        }
        let n = spec.n_states();
        let l = spec.covariate_levels();
        let mut it = values.iter().copied();
        let mut take = |k: usize| (&mut it).take(k).collect::<Vec<f64>>();
        let delta = take(n);
        let alpha0 = (0..n).map(|_| take(n - 1)).collect();
        let alpha1 = (0..n)
            .map(|_| (0..n - 1).map(|_| take(l)).collect())
            .collect();
        let zeta = take(n);
        let emission = spec
            .streams()
            .iter()
            .map(|s| match s.family {
                StreamFamily::Poisson => StreamParams::Poisson { rate: take(n) },
                StreamFamily::GammaMeanSd => StreamParams::GammaMeanSd {
                    mean: take(n),
                    sd: take(n),
                },
            })
            .collect();
        Ok(ParamVector {
            delta,
            alpha0,
            alpha1,
            zeta,
            emission,
        })
    }

    /// Full latent logit matrix: `z[i][i] = zeta_i`, `z[i][j] = alpha0_ij + zeta_i`.
    pub(crate) fn latent_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.delta.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            self.zeta[i]
                        } else {
                            self.alpha0[i][offdiag_index(i, j)] + self.zeta[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Relabels hidden states: new state `a` is old state `perm[a]`.
    ///
    /// Transition working parameters are permuted through the latent logit
    /// matrix, so the transition matrix at every covariate level, and the
    /// Gumbel prior density, are carried over exactly.
    pub fn permute_states(&self, perm: &[usize]) -> ParamVector {
        let n = self.delta.len();
        debug_assert_eq!(perm.len(), n);
        let z = self.latent_matrix();
        let levels = self.alpha1.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let zeta: Vec<f64> = (0..n).map(|a| z[perm[a]][perm[a]]).collect();
        let mut alpha0 = vec![vec![0.0; n - 1]; n];
        let mut alpha1 = vec![vec![vec![0.0; levels]; n - 1]; n];
        for a in 0..n {
            for k in 0..n - 1 {
                let b = offdiag_col(a, k);
                let (i, j) = (perm[a], perm[b]);
                let old_k = offdiag_index(i, j);
                alpha0[a][k] = z[i][j] - zeta[a];
                alpha1[a][k].clone_from(&self.alpha1[i][old_k]);
            }
        }
        ParamVector {
            delta: perm.iter().map(|&p| self.delta[p]).collect(),
            alpha0,
            alpha1,
            zeta,
            emission: self.emission.iter().map(|e| e.permute(perm)).collect(),
        }
    }
}

/// A single observation sequence: `values[t][p]` is stream `p` at time
/// `t`, `None` when missing; `covariates[t]` is the covariate level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub values: Vec<Vec<Option<f64>>>,
    pub covariates: Vec<u32>,
}

impl Sequence {
    /// A sequence without covariate information (all levels 0).
    pub fn new(values: Vec<Vec<Option<f64>>>) -> Self {
        let t = values.len();
        Sequence {
            values,
            covariates: vec![0; t],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Independent observation sequences sharing one model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSet {
    pub sequences: Vec<Sequence>,
}

impl ObservationSet {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        ObservationSet { sequences }
    }

    pub fn total_len(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        for (w, seq) in self.sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Data(format!("sequence {w} is empty")));
            }
            if seq.covariates.len() != seq.len() {
                return Err(Error::Data(format!(
                    "sequence {w}: {} covariate entries for {} time steps",
                    seq.covariates.len(),
                    seq.len()
                )));
            }
            for (t, row) in seq.values.iter().enumerate() {
                if row.len() != spec.n_streams() {
                    return Err(Error::Data(format!(
                        "sequence {w}, t = {}: {} values for {} streams",
                        t + 1,
                        row.len(),
                        spec.n_streams()
                    )));
                }
                for (y, stream) in row.iter().zip(spec.streams()) {
                    let Some(y) = *y else { continue };
                    let ok = match stream.family {
                        StreamFamily::Poisson => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
                        StreamFamily::GammaMeanSd => y > 0.0 && y.is_finite(),
                    };
                    if !ok {
                        return Err(Error::Data(format!(
                            "sequence {w}, t = {}: value {y} invalid for stream {:?}",
                            t + 1,
                            stream.name
                        )));
                    }
                }
                if seq.covariates[t] as usize > spec.covariate_levels() {
                    return Err(Error::Data(format!(
                        "sequence {w}, t = {}: covariate level {} out of range 0..={}",
                        t + 1,
                        seq.covariates[t],
                        spec.covariate_levels()
                    )));
                }
            }
        }
        Ok(())
    }
}
