use serde::{Deserialize, Serialize};

/// Run settings recorded next to retained draws.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub seed: u64,
    pub betas: Vec<f64>,
    pub burn_in: u64,
    pub thin: u64,
}

/// Retained draws of one chain, one row per kept iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleStore {
    pub names: Vec<String>,
    pub iterations: Vec<u64>,
    pub draws: Vec<Vec<f64>>,
    pub metadata: StoreMetadata,
}

impl SampleStore {
    pub fn new(names: Vec<String>, metadata: StoreMetadata) -> Self {
        SampleStore {
            names,
            iterations: Vec::new(),
            draws: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, iteration: u64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.iterations.push(iteration);
        self.draws.push(row);
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.index_of(name)?;
        Some(self.draws.iter().map(|row| row[k]).collect())
    }

    /// Draws `from..` as a new store with the same names and metadata.
    pub fn tail(&self, from: usize) -> SampleStore {
        let from = from.min(self.len());
        SampleStore {
            names: self.names.clone(),
            iterations: self.iterations[from..].to_vec(),
            draws: self.draws[from..].to_vec(),
            metadata: self.metadata.clone(),
        }
    }
}
