//! Labelled feature datasets shared by learners, crowds and trainers.

use crate::curriculum::TextExample;
use crate::error::{Error, Result};

/// Dense feature rows with class labels in `0..n_classes`.
///
/// Optional per-example columns: a planted margin (signed distance to the
/// Bayes boundary, for synthetic tasks) and raw text (for length heuristics).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    planted_margin: Option<Vec<f64>>,
    texts: Option<Vec<TextExample>>,
}

impl Dataset {
    pub fn new(
        n_features: usize,
        n_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("datasets need at least one feature"));
        }
        if n_classes < 2 {
            return Err(Error::invalid(format!(
                "datasets need at least two classes, got {n_classes}"
            )));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value {v}")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!(
                "label {y} outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            n_features,
            n_classes,
            features,
            labels,
            planted_margin: None,
            texts: None,
        })
    }

    pub fn with_planted_margin(mut self, margin: Vec<f64>) -> Result<Self> {
        if margin.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} margins for {} examples",
                margin.len(),
                self.len()
            )));
        }
        self.planted_margin = Some(margin);
        Ok(self)
    }

    pub fn with_texts(mut self, texts: Vec<TextExample>) -> Result<Self> {
        if texts.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} texts for {} examples",
                texts.len(),
                self.len()
            )));
        }
        self.texts = Some(texts);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn planted_margin(&self) -> Option<&[f64]> {
        self.planted_margin.as_deref()
    }

    pub fn texts(&self) -> Option<&[TextExample]> {
        self.texts.as_deref()
    }

    /// Copy of the dataset with `labels` replaced (same length, same alphabet).
    pub fn relabelled(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} examples",
                labels.len(),
                self.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::invalid(format!("label {y} outside 0..{}", self.n_classes)));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&k) = indices.iter().find(|&&k| k >= self.len()) {
            return Err(Error::invalid(format!(
                "index {k} out of range for {} examples",
                self.len()
            )));
        }
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &k in indices {
            features.extend_from_slice(self.row(k));
        }
        Ok(Self {
            n_features: self.n_features,
            n_classes: self.n_classes,
            features,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
            planted_margin: self
                .planted_margin
                .as_ref()
                .map(|m| indices.iter().map(|&k| m[k]).collect()),
            texts: self
                .texts
                .as_ref()
                .map(|t| indices.iter().map(|&k| t[k].clone()).collect()),
        })
    }

    /// Concatenates datasets with matching feature and class counts.
    ///
    /// Optional columns survive only when every part carries them.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut out = Self {
            n_features: first.n_features,
            n_classes: first.n_classes,
            features: Vec::new(),
            labels: Vec::new(),
            planted_margin: parts.iter().all(|p| p.planted_margin.is_some()).then(Vec::new),
            texts: parts.iter().all(|p| p.texts.is_some()).then(Vec::new),
        };
        for p in parts {
            if p.n_features != out.n_features || p.n_classes != out.n_classes {
                return Err(Error::invalid(format!(
                    "cannot concatenate a {}-feature/{}-class dataset with a {}-feature/{}-class one",
                    p.n_features, p.n_classes, out.n_features, out.n_classes
                )));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
            if let (Some(dst), Some(src)) = (out.planted_margin.as_mut(), p.planted_margin.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let (Some(dst), Some(src)) = (out.texts.as_mut(), p.texts.as_ref()) {
                dst.extend(src.iter().cloned());
            }
        }
        Ok(out)
    }
}
