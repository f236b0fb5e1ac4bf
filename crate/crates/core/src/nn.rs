//! Dense layers, a plain ReLU MLP and a numerically stable softmax.
//!
//! The scene-graph network and the point-attention sampler both build on
//! these. Weights are stored as `nalgebra` matrices and can be written to and
//! read from a whitespace-separated text block.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::fmt::Write as _;

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    /// Uniform Glorot initialisation, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::random(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    /// Consecutive layers agree on their shared dimension.
    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self
                .layers
                .windows(2)
                .all(|w| w[0].output_dim() == w[1].input_dim())
            && self.layers.iter().all(|l| l.bias.len() == l.output_dim())
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub(crate) fn write_text(&self, out: &mut String) {
        let _ = writeln!(out, "mlp {}", self.layers.len());
        for layer in &self.layers {
            write_matrix(out, &layer.weight);
            write_matrix(
                out,
                &DMatrix::from_column_slice(layer.bias.len(), 1, layer.bias.as_slice()),
            );
        }
    }

    pub(crate) fn read_text(tokens: &mut Tokens<'_>) -> Result<Self, FormatError> {
        tokens.expect("mlp")?;
        let n: usize = tokens.parse()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let weight = read_matrix(tokens)?;
            let bias = read_matrix(tokens)?;
            if bias.ncols() != 1 || bias.nrows() != weight.nrows() {
                return Err(FormatError::Shape(format!(
                    "bias {}x{} does not match weight {}x{}",
                    bias.nrows(),
                    bias.ncols(),
                    weight.nrows(),
                    weight.ncols()
                )));
            }
            layers.push(Linear {
                weight,
                bias: DVector::from_column_slice(bias.as_slice()),
            });
        }
        Ok(Self { layers })
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    let _ = writeln!(out, "mat {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub(crate) fn read_matrix(tokens: &mut Tokens<'_>) -> Result<DMatrix<f64>, FormatError> {
    tokens.expect("mat")?;
    let rows: usize = tokens.parse()?;
    let cols: usize = tokens.parse()?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(tokens.parse::<f64>()?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Whitespace tokenizer over a weight file.
pub(crate) struct Tokens<'a> {
    inner: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            inner: text.split_whitespace(),
        }
    }

    pub fn next_token(&mut self) -> Result<&'a str, FormatError> {
        self.inner.next().ok_or(FormatError::UnexpectedEof)
    }

    pub fn expect(&mut self, word: &str) -> Result<(), FormatError> {
        let tok = self.next_token()?;
        if tok == word {
            Ok(())
        } else {
            Err(FormatError::Unexpected {
                expected: word.to_string(),
                found: tok.to_string(),
            })
        }
    }

    pub fn parse<T: std::str::FromStr>(&mut self) -> Result<T, FormatError> {
        let tok = self.next_token()?;
        tok.parse()
            .map_err(|_| FormatError::BadNumber(tok.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_two_class() {
        let p = softmax(&[1.0, 0.0]);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn mlp_text_roundtrip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::random(&[3, 4, 2], &mut rng);
        let mut s = String::new();
        mlp.write_text(&mut s);
        let back = Mlp::read_text(&mut Tokens::new(&s)).unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn relu_only_between_layers() {
        let mut mlp = Mlp::zeros(&[1, 1, 1]);
        mlp.layers[0].bias[0] = -1.0;
        mlp.layers[1].weight[(0, 0)] = 1.0;
        mlp.layers[1].bias[0] = -2.0;
        // hidden clamps to 0, output keeps its negative bias
        assert_eq!(mlp.forward(&DVector::from_element(1, 0.0))[0], -2.0);
    }
}
