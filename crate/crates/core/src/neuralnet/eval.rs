use super::compute::Workspace;
use super::{argmax, check_data, Architecture, NetError, WeightSet};
use crate::dataset::Dataset;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len())
            .map(|i| self.confusion[i][i])
            .sum()
    }

    /// One line per true class, predicted-class counts separated by commas.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.confusion {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Mean cross-entropy and the argmax report over `data`.
pub(crate) fn score<T: Scalar>(
    arch: &Architecture,
    weights: &WeightSet<T>,
    data: &Dataset<T>,
) -> Result<(f64, EvalReport), NetError> {
    weights.check(arch)?;
    check_data(arch, data)?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let c = arch.num_classes();
    let mut confusion = vec![vec![0u64; c]; c];
    let mut ws = Workspace::new(arch);
    let mut loss = 0.0;
    for i in 0..data.len() {
        ws.forward(arch, weights, data.row(i));
        let label = data.label(i);
        loss += ws.loss(label).to_f64().unwrap_or(f64::NAN);
        confusion[label][argmax(ws.probabilities())] += 1;
    }
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
    Ok((
        loss / data.len() as f64,
        EvalReport {
            accuracy: correct as f64 / data.len() as f64,
            confusion,
        },
    ))
}

/// Argmax predictions (ties toward the lowest class) scored against `test`.
pub fn evaluate<T: Scalar>(
    arch: &Architecture,
    weights: &WeightSet<T>,
    test: &Dataset<T>,
) -> Result<EvalReport, NetError> {
    score(arch, weights, test).map(|(_, report)| report)
}
