//! Longitudinal cohorts, embedding tables and silver-standard labels.

mod io;
mod silver;

pub use io::{
    load_cohort, load_embeddings, parse_cohort, parse_embeddings, save_cohort, save_embeddings,
    write_cohort, write_embeddings, LoadOptions, SURROGATE_ROW,
};
pub use silver::{attach_silver, silver_cumulative, silver_recurrent, SilverConfig};

use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no patients")]
    NoPatients,
    #[error("labeled block must be prefix (patient {0} is labeled after an unlabeled patient)")]
    LabeledNotPrefix(String),
    #[error("patient {patient}: {msg}")]
    Invalid { patient: String, msg: String },
    #[error("patient {0}: missing surrogate counts")]
    MissingSurrogate(String),
    #[error("patient {0}: missing utilization")]
    MissingUtilization(String),
    #[error("embeddings: {0}")]
    Embedding(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One patient's visit sequence. Visits are fixed-width time bins `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    pub id: String,
    /// `T x p` nonnegative counts, row-major.
    pub features: Vec<f64>,
    pub p: usize,
    pub gold: Option<Vec<u8>>,
    pub silver: Option<Vec<f64>>,
    pub surrogate_counts: Option<Vec<f64>>,
    pub utilization: Option<Vec<f64>>,
}

impl PatientSeries {
    pub fn len(&self) -> usize {
        if self.p == 0 {
            0
        } else {
            self.features.len() / self.p
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn visit(&self, t: usize) -> &[f64] {
        &self.features[t * self.p..(t + 1) * self.p]
    }

    pub fn feature_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.p, self.features.clone())
    }

    pub fn validate(&self, t_max: Option<usize>) -> Result<(), DataError> {
        let invalid = |msg: String| DataError::Invalid {
            patient: self.id.clone(),
            msg,
        };
        let t = self.len();
        if t == 0 || self.features.len() != t * self.p {
            return Err(invalid("empty or ragged feature matrix".into()));
        }
        if let Some(t_max) = t_max {
            if t > t_max {
                return Err(invalid(format!("T={t} exceeds t_max={t_max}")));
            }
        }
        if self.features.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(invalid("negative or non-finite feature count".into()));
        }
        if let Some(g) = &self.gold {
            if g.len() != t || g.iter().any(|&y| y > 1) {
                return Err(invalid("gold labels must be a length-T 0/1 vector".into()));
            }
        }
        if let Some(s) = &self.silver {
            if s.len() != t || s.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(invalid("silver labels must be a length-T vector in [0,1]".into()));
            }
        }
        for (name, col) in [
            ("surrogate counts", &self.surrogate_counts),
            ("utilization", &self.utilization),
        ] {
            if let Some(c) = col {
                if c.len() != t || c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(invalid(format!("{name} must be length-T and nonnegative")));
                }
            }
        }
        Ok(())
    }
}

/// Patients `[0, n_labeled)` carry gold labels, the rest do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientSeries>,
    pub n_labeled: usize,
    pub feature_names: Vec<String>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientSeries>, feature_names: Vec<String>) -> Result<Self, DataError> {
        if patients.is_empty() {
            return Err(DataError::NoPatients);
        }
        let p = feature_names.len();
        let mut n_labeled = 0;
        let mut seen_unlabeled = false;
        for s in &patients {
            if s.p != p {
                return Err(DataError::Invalid {
                    patient: s.id.clone(),
                    msg: format!("feature width {} differs from cohort p={p}", s.p),
                });
            }
            s.validate(None)?;
            match (&s.gold, seen_unlabeled) {
                (Some(_), true) => return Err(DataError::LabeledNotPrefix(s.id.clone())),
                (Some(_), false) => n_labeled += 1,
                (None, _) => seen_unlabeled = true,
            }
        }
        Ok(Self {
            patients,
            n_labeled,
            feature_names,
        })
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn labeled(&self) -> &[PatientSeries] {
        &self.patients[..self.n_labeled]
    }

    pub fn unlabeled(&self) -> &[PatientSeries] {
        &self.patients[self.n_labeled..]
    }

    pub fn n_visits(&self) -> usize {
        self.patients.iter().map(PatientSeries::len).sum()
    }
}

/// Concept embeddings `e_1..e_p` plus the surrogate embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub names: Vec<String>,
    /// `p x q`
    pub features: Tensor,
    pub surrogate: Tensor,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, surrogate: Vec<f64>) -> Result<Self, DataError> {
        let q = surrogate.len();
        if q == 0 {
            return Err(DataError::Embedding("embedding dimension must be at least 1".into()));
        }
        if names.len() != rows.len() || rows.is_empty() {
            return Err(DataError::Embedding("one name per feature row required".into()));
        }
        for (name, row) in names.iter().zip(&rows) {
            if row.len() != q {
                return Err(DataError::Embedding(format!("{name}: expected {q} values, got {}", row.len())));
            }
            if row.iter().all(|&x| x == 0.0) {
                return Err(DataError::Embedding(format!("{name}: all-zero embedding")));
            }
        }
        if surrogate.iter().all(|&x| x == 0.0) {
            return Err(DataError::Embedding("surrogate embedding is all zero".into()));
        }
        let features = Tensor::from_rows(&rows).map_err(|e| DataError::Embedding(e.to_string()))?;
        Ok(Self {
            names,
            features,
            surrogate: Tensor::vector(surrogate),
        })
    }

    pub fn q(&self) -> usize {
        self.surrogate.numel()
    }

    pub fn p(&self) -> usize {
        self.features.rows()
    }

    /// Reorders rows to match `names`; errors when a feature has no embedding.
    pub fn aligned_to(&self, names: &[String]) -> Result<Self, DataError> {
        if names == self.names.as_slice() {
            return Ok(self.clone());
        }
        let rows = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .map(|i| self.features.row(i).to_vec())
                    .ok_or_else(|| DataError::Embedding(format!("no embedding for feature {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(names.to_vec(), rows, self.surrogate.data().to_vec())
    }
}
