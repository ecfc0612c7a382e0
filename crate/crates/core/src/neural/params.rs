use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ablation, Real};

pub const DEFAULT_PROJECTION: usize = 256;
pub const DEFAULT_HIDDEN: usize = 256;

/// Tensor names in declaration order.
pub const TENSOR_NAMES: [&str; 9] = [
    "q_proj.weight",
    "q_proj.bias",
    "j_proj.weight",
    "j_proj.bias",
    "lstm.w_input",
    "lstm.w_hidden",
    "lstm.bias",
    "out.weight",
    "out.bias",
];

pub(crate) const Q_W: usize = 0;
pub(crate) const Q_B: usize = 1;
pub(crate) const J_W: usize = 2;
pub(crate) const J_B: usize = 3;
pub(crate) const L_WX: usize = 4;
pub(crate) const L_WH: usize = 5;
pub(crate) const L_B: usize = 6;
pub(crate) const O_W: usize = 7;
pub(crate) const O_B: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Dimension of the text vectors.
    pub input_dim: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub ablation: Ablation,
}

impl ModelShape {
    pub fn new(input_dim: usize, ablation: Ablation) -> Self {
        ModelShape {
            input_dim,
            proj_dim: DEFAULT_PROJECTION,
            hidden: DEFAULT_HIDDEN,
            ablation,
        }
    }

    /// Width of one LSTM input step.
    pub fn step_dim(&self) -> usize {
        2 + self.proj_dim
            * (usize::from(self.ablation.use_justification) + usize::from(self.ablation.use_question))
    }

    /// Offset of the justification block inside a step, if present.
    pub(crate) fn justification_offset(&self) -> Option<usize> {
        self.ablation.use_justification.then_some(2)
    }

    pub(crate) fn question_offset(&self) -> Option<usize> {
        self.ablation
            .use_question
            .then(|| 2 + self.proj_dim * usize::from(self.ablation.use_justification))
    }

    /// Row-major shapes of the nine tensors. Projection tensors of a
    /// disabled representation are empty.
    pub fn tensor_shapes(&self) -> [Vec<usize>; 9] {
        let (d, p, h) = (self.input_dim, self.proj_dim, self.hidden);
        let q = usize::from(self.ablation.use_question);
        let j = usize::from(self.ablation.use_justification);
        [
            vec![d * q, p * q],
            vec![p * q],
            vec![d * j, p * j],
            vec![p * j],
            vec![self.step_dim(), 4 * h],
            vec![h, 4 * h],
            vec![4 * h],
            vec![h],
            vec![1],
        ]
    }
}

/// All learned tensors. Weight matrices are stored with one row per input
/// component so a sparse input touches only its own rows. The LSTM blocks
/// are ordered input gate, forget gate, candidate, output gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub shape: ModelShape,
    pub tensors: [Vec<T>; 9],
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(shape: ModelShape) -> Self {
        let tensors = shape
            .tensor_shapes()
            .map(|s| vec![T::zero(); s.iter().product()]);
        ModelParams { shape, tensors }
    }

    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Self {
        let mut params = Self::zeros(shape);
        let (d, p, h) = (shape.input_dim, shape.proj_dim, shape.hidden);
        let mut fill = |t: &mut Vec<T>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in t.iter_mut() {
                *w = T::of(rng.random_range(-bound..bound));
            }
        };
        fill(&mut params.tensors[Q_W], d, p);
        fill(&mut params.tensors[J_W], d, p);
        fill(&mut params.tensors[L_WX], shape.step_dim(), h);
        fill(&mut params.tensors[L_WH], h, h);
        fill(&mut params.tensors[O_W], h, 1);
        for b in &mut params.tensors[L_B][h..2 * h] {
            *b = T::one();
        }
        params
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            shape: self.shape,
            tensors: self
                .tensors
                .each_ref()
                .map(|t| t.iter().map(|&x| U::of(x.as_f64())).collect()),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }
}
