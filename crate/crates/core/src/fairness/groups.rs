use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijection between protected-attribute value tuples and intersection ids.
///
/// Ids are mixed-radix over the attributes in declaration order, the first
/// attribute most significant; labels keep first-seen order. Every tuple of
/// the cartesian product has an id whether or not anyone belongs to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupIndex {
    attributes: Vec<String>,
    labels: Vec<Vec<String>>,
}

impl GroupIndex {
    /// Builds an index from frozen vocabularies.
    pub fn from_vocabularies(attributes: Vec<String>, labels: Vec<Vec<String>>) -> Result<Self> {
        if attributes.is_empty() || attributes.len() != labels.len() {
            return Err(Error::Schema("need one vocabulary per protected attribute".into()));
        }
        if let Some(i) = labels.iter().position(Vec::is_empty) {
            return Err(Error::Schema(format!("protected attribute {:?} has no values", attributes[i])));
        }
        Ok(GroupIndex { attributes, labels })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn labels(&self, attribute: usize) -> &[String] {
        &self.labels[attribute]
    }

    /// `|A| = Π |s_i|`.
    pub fn num_groups(&self) -> usize {
        self.labels.iter().map(Vec::len).product()
    }

    /// Id of a tuple of per-attribute codes.
    pub fn id_of_codes(&self, codes: &[usize]) -> usize {
        codes.iter().zip(&self.labels).fold(0, |acc, (&c, l)| acc * l.len() + c)
    }

    /// Per-attribute codes of an intersection id.
    pub fn codes_of(&self, mut id: usize) -> Vec<usize> {
        let mut codes = vec![0; self.labels.len()];
        for (i, l) in self.labels.iter().enumerate().rev() {
            codes[i] = id % l.len();
            id /= l.len();
        }
        codes
    }

    pub fn code(&self, attribute: usize, value: &str) -> Result<usize> {
        self.labels[attribute].iter().position(|l| l == value).ok_or_else(|| Error::UnknownCategory {
            column: self.attributes[attribute].clone(),
            value: value.to_string(),
        })
    }

    /// Id of one individual's raw protected values.
    pub fn encode_row(&self, values: &[&str]) -> Result<usize> {
        if values.len() != self.attributes.len() {
            return Err(Error::dim("encode_row", format!("{} values for {} attributes", values.len(), self.attributes.len())));
        }
        let codes = values.iter().enumerate().map(|(i, v)| self.code(i, v)).collect::<Result<Vec<_>>>()?;
        Ok(self.id_of_codes(&codes))
    }

    /// Human-readable `attr=value` label of an intersection.
    pub fn group_label(&self, id: usize) -> String {
        self.codes_of(id)
            .iter()
            .enumerate()
            .map(|(i, &c)| format!("{}={}", self.attributes[i], self.labels[i][c]))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Index restricted to one attribute, for marginal audits.
    pub fn marginal(&self, attribute: usize) -> GroupIndex {
        GroupIndex {
            attributes: vec![self.attributes[attribute].clone()],
            labels: vec![self.labels[attribute].clone()],
        }
    }
}

/// Group ids for raw protected columns (one `Vec` per attribute, aligned by
/// individual). Vocabularies are built in first-seen order.
pub fn encode_intersections(names: &[&str], columns: &[Vec<String>]) -> Result<(Vec<usize>, GroupIndex)> {
    if names.len() != columns.len() || names.is_empty() {
        return Err(Error::Schema("need one column per protected attribute".into()));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Data("protected columns differ in length".into()));
    }
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); columns.len()];
    for (col, vocab) in columns.iter().zip(labels.iter_mut()) {
        for v in col {
            if v.is_empty() {
                return Err(Error::Data("missing protected attribute value".into()));
            }
            if !vocab.contains(v) {
                vocab.push(v.clone());
            }
        }
    }
    let index = GroupIndex::from_vocabularies(names.iter().map(|s| s.to_string()).collect(), labels)?;
    let ids = (0..n)
        .map(|r| {
            let row: Vec<&str> = columns.iter().map(|c| c[r].as_str()).collect();
            index.encode_row(&row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, index))
}
