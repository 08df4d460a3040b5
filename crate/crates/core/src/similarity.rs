//! Embedding cosine similarity and the combined structural similarity `K`.

use serde::{Deserialize, Serialize};

use crate::fingerprint::{tanimoto, Fingerprint, FingerprintConfig, FingerprintError};
use crate::gnn::{Embedding, GnnError, PredictorModel};
use crate::molgraph::Molecule;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("vector widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("similarity weights must be in [0, 1] and sum to 1, got ({0}, {1})")]
    BadWeights(f64, f64),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Predictor(#[from] GnnError),
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::WidthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Convex weights of the Tanimoto and embedding-cosine terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    alpha_tanimoto: f64,
    alpha_cosine: f64,
}

impl SimilarityWeights {
    pub fn new(alpha_tanimoto: f64, alpha_cosine: f64) -> Result<Self, SimilarityError> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        if !ok(alpha_tanimoto)
            || !ok(alpha_cosine)
            || (alpha_tanimoto + alpha_cosine - 1.0).abs() > 1e-9
        {
            return Err(SimilarityError::BadWeights(alpha_tanimoto, alpha_cosine));
        }
        Ok(SimilarityWeights {
            alpha_tanimoto,
            alpha_cosine,
        })
    }

    pub fn alpha_tanimoto(&self) -> f64 {
        self.alpha_tanimoto
    }

    pub fn alpha_cosine(&self) -> f64 {
        self.alpha_cosine
    }

    /// `α_t·tanimoto + α_c·max(cosine, 0)`.
    pub fn combine(&self, tanimoto: f64, cosine: f64) -> f64 {
        self.alpha_tanimoto * tanimoto + self.alpha_cosine * cosine.max(0.0)
    }
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            alpha_tanimoto: 0.5,
            alpha_cosine: 0.5,
        }
    }
}

/// Combined similarity of two molecules under `model`'s embedding.
pub fn combined_similarity(
    m: &Molecule,
    m2: &Molecule,
    model: &PredictorModel,
    weights: SimilarityWeights,
    fp: FingerprintConfig,
) -> Result<f64, SimilarityError> {
    SimilarityReference::new(m, model, weights, fp)?.similarity(m2, &model.embed(m2)?)
}

/// Precomputed fingerprint and embedding of a fixed molecule, for scoring
/// many candidates against it.
#[derive(Debug, Clone)]
pub struct SimilarityReference {
    fingerprint: Fingerprint,
    embedding: Embedding,
    weights: SimilarityWeights,
    fp: FingerprintConfig,
}

impl SimilarityReference {
    pub fn new(
        m: &Molecule,
        model: &PredictorModel,
        weights: SimilarityWeights,
        fp: FingerprintConfig,
    ) -> Result<Self, SimilarityError> {
        Ok(Self::from_parts(
            fp.fingerprint(m)?,
            model.embed(m)?,
            weights,
            fp,
        ))
    }

    pub fn from_parts(
        fingerprint: Fingerprint,
        embedding: Embedding,
        weights: SimilarityWeights,
        fp: FingerprintConfig,
    ) -> Self {
        SimilarityReference {
            fingerprint,
            embedding,
            weights,
            fp,
        }
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn fingerprint_config(&self) -> FingerprintConfig {
        self.fp
    }

    /// `K` of `other`, whose embedding under the same model is given.
    pub fn similarity(
        &self,
        other: &Molecule,
        embedding: &Embedding,
    ) -> Result<f64, SimilarityError> {
        let t = tanimoto(&self.fingerprint, &self.fp.fingerprint(other)?)?;
        self.similarity_from_fingerprint(t, embedding)
    }

    pub fn similarity_from_fingerprint(
        &self,
        tanimoto: f64,
        embedding: &Embedding,
    ) -> Result<f64, SimilarityError> {
        // An all-zero embedding (every ReLU unit dead) shares nothing with
        // anything except an identical embedding.
        let c = match cosine(self.embedding.as_slice(), embedding.as_slice()) {
            Ok(c) => c,
            Err(SimilarityError::ZeroVector) if self.embedding == *embedding => 1.0,
            Err(SimilarityError::ZeroVector) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(self.weights.combine(tanimoto, c))
    }
}
