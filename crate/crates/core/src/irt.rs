//! One-parameter logistic (Rasch) model.
//!
//! A model with ability `theta` labels an item with difficulty `b` correctly
//! with probability `1 / (1 + exp(-(theta - b)))`. Responses are collected in a
//! [`ResponseMatrix`] of models × items whose cells are 0/1 or missing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function, evaluated on the non-positive branch so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without cancellation for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that a model of ability `theta` answers an item of difficulty `b` correctly.
pub fn response_probability(theta: f64, b: f64) -> Result<f64> {
    if !theta.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!(
            "response_probability needs finite inputs, got theta={theta}, b={b}"
        )));
    }
    Ok(sigmoid(theta - b))
}

/// Log-probability of a single graded response.
#[inline]
pub fn response_log_prob(correct: bool, theta: f64, b: f64) -> f64 {
    if correct {
        log_sigmoid(theta - b)
    } else {
        log_sigmoid(b - theta)
    }
}

/// One graded response in long form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub model_id: String,
    pub item_id: String,
    #[serde(with = "binary_flag")]
    pub correct: bool,
}

/// Accepts `true`/`false` or `0`/`1` on input, writes `0`/`1`.
mod binary_flag {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        struct Flag;
        impl Visitor<'_> for Flag {
            type Value = bool;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("0, 1, true or false")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> Result<bool, E> {
                Ok(v)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(E::custom(format!("response must be 0 or 1, got {v}"))),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<bool, E> {
                match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(E::custom(format!("response must be 0 or 1, got {v}"))),
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<bool, E> {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(E::custom(format!("response must be 0 or 1, got {v}")))
                }
            }
        }
        d.deserialize_any(Flag)
    }
}

/// Binary graded responses of `J` models to `I` items, row-major by model.
///
/// Cells are `Some(true)` (correct), `Some(false)` (incorrect) or `None`
/// (not administered). Missing cells never enter the likelihood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<Option<bool>>,
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (k, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), k) {
            return Err(Error::invalid(format!(
                "duplicate {what} id `{id}` at positions {prev} and {k}"
            )));
        }
    }
    Ok(())
}

impl ResponseMatrix {
    /// Builds a fully observed matrix; every cell must be 0 or 1.
    pub fn from_dense(
        model_ids: Vec<String>,
        item_ids: Vec<String>,
        rows: &[Vec<u8>],
    ) -> Result<Self> {
        if model_ids.is_empty() || item_ids.is_empty() {
            return Err(Error::invalid("response matrix needs at least one model and one item"));
        }
        if rows.len() != model_ids.len() {
            return Err(Error::invalid(format!(
                "{} rows for {} model ids",
                rows.len(),
                model_ids.len()
            )));
        }
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        let mut cells = Vec::with_capacity(rows.len() * item_ids.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != item_ids.len() {
                return Err(Error::invalid(format!(
                    "row {j} has {} cells, expected {}",
                    row.len(),
                    item_ids.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                match v {
                    0 => cells.push(Some(false)),
                    1 => cells.push(Some(true)),
                    _ => {
                        return Err(Error::invalid(format!(
                            "cell ({j}, {i}) is {v}; responses must be 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            model_ids,
            item_ids,
            cells,
        })
    }

    /// Builds a matrix from row-major cells, where `None` marks a missing response.
    pub fn from_cells(model_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<Option<bool>>) -> Result<Self> {
        if model_ids.is_empty() || item_ids.is_empty() {
            return Err(Error::invalid("response matrix needs at least one model and one item"));
        }
        if cells.len() != model_ids.len() * item_ids.len() {
            return Err(Error::invalid(format!(
                "{} cells for a {}x{} matrix",
                cells.len(),
                model_ids.len(),
                item_ids.len()
            )));
        }
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        Ok(Self {
            model_ids,
            item_ids,
            cells,
        })
    }

    /// Builds a (possibly sparse) matrix from long-form responses.
    ///
    /// Models and items are ordered by first appearance. A repeated
    /// `(model_id, item_id)` pair is rejected.
    pub fn from_responses<I>(responses: I) -> Result<Self>
    where
        I: IntoIterator<Item = Response>,
    {
        let mut model_index: HashMap<String, usize> = HashMap::new();
        let mut item_index: HashMap<String, usize> = HashMap::new();
        let mut model_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut triples = Vec::new();
        for r in responses {
            let j = *model_index.entry(r.model_id.clone()).or_insert_with(|| {
                model_ids.push(r.model_id.clone());
                model_ids.len() - 1
            });
            let i = *item_index.entry(r.item_id.clone()).or_insert_with(|| {
                item_ids.push(r.item_id.clone());
                item_ids.len() - 1
            });
            triples.push((j, i, r.correct));
        }
        if model_ids.is_empty() {
            return Err(Error::invalid("no responses"));
        }
        let n_items = item_ids.len();
        let mut cells = vec![None; model_ids.len() * n_items];
        for (j, i, correct) in triples {
            let cell = &mut cells[j * n_items + i];
            if cell.is_some() {
                return Err(Error::invalid(format!(
                    "duplicate response for model `{}` on item `{}`",
                    model_ids[j], item_ids[i]
                )));
            }
            *cell = Some(correct);
        }
        Ok(Self {
            model_ids,
            item_ids,
            cells,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    #[inline]
    pub fn get(&self, model: usize, item: usize) -> Option<bool> {
        self.cells[model * self.item_ids.len() + item]
    }

    /// Responses of one model, in item order.
    pub fn row(&self, model: usize) -> &[Option<bool>] {
        let n = self.item_ids.len();
        &self.cells[model * n..(model + 1) * n]
    }

    pub fn is_dense(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn n_observed(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Observed cells as `(model, item, correct)`, row-major.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        let n = self.item_ids.len();
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(k, c)| c.map(|z| (k / n, k % n, z)))
    }

    /// Long-form view, row-major, skipping missing cells.
    pub fn to_responses(&self) -> Vec<Response> {
        self.observed()
            .map(|(j, i, z)| Response {
                model_id: self.model_ids[j].clone(),
                item_id: self.item_ids[i].clone(),
                correct: z,
            })
            .collect()
    }

    /// Fraction correct per model over its observed cells (`NaN` for an empty row).
    pub fn row_accuracies(&self) -> Vec<f64> {
        (0..self.n_models())
            .map(|j| {
                let (hits, seen) = self.row(j).iter().flatten().fold((0usize, 0usize), |(h, s), &z| {
                    (h + usize::from(z), s + 1)
                });
                hits as f64 / seen as f64
            })
            .collect()
    }

    /// Items whose observed responses are all identical (or absent).
    pub fn degenerate_items(&self) -> Vec<usize> {
        (0..self.n_items())
            .filter(|&i| {
                let mut col = (0..self.n_models()).filter_map(|j| self.get(j, i));
                match col.next() {
                    None => true,
                    Some(first) => col.all(|z| z == first),
                }
            })
            .collect()
    }
}

/// `log p(Z | thetas, bs)` summed over the observed cells.
pub fn response_log_likelihood(z: &ResponseMatrix, thetas: &[f64], bs: &[f64]) -> Result<f64> {
    if thetas.len() != z.n_models() || bs.len() != z.n_items() {
        return Err(Error::invalid(format!(
            "parameter lengths ({} abilities, {} difficulties) do not match a {}x{} response matrix",
            thetas.len(),
            bs.len(),
            z.n_models(),
            z.n_items()
        )));
    }
    if let Some(bad) = thetas.iter().chain(bs).find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite parameter {bad}")));
    }
    Ok(z
        .observed()
        .map(|(j, i, correct)| response_log_prob(correct, thetas[j], bs[i]))
        .sum())
}

/// Grades predictions against gold labels: 1 where they agree, 0 otherwise.
pub fn grade_responses<L: PartialEq>(predicted: &[L], gold: &[L]) -> Result<Vec<u8>> {
    if predicted.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(gold)
        .map(|(p, g)| u8::from(p == g))
        .collect())
}
