use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng as _;

use crate::rng::Rng;

/// Location of one 2-D tensor inside a flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        &data[self.offset..self.offset + self.len()]
    }

    pub fn view<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(data)).expect("layout is consistent")
    }

    pub fn view_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let len = self.len();
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.offset..self.offset + len])
            .expect("layout is consistent")
    }

    /// Flat view, for `1 x k` bias and gain vectors.
    pub fn vector<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(self.slice(data))
    }

    pub fn vector_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        let len = self.len();
        ArrayViewMut1::from(&mut data[self.offset..self.offset + len])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: TensorRef,
    pub init: Init,
}

/// Named tensors packed back to back in one `Vec<f64>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> TensorRef {
        let tensor = TensorRef {
            offset: self.total,
            rows,
            cols,
        };
        self.total += rows * cols;
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            init,
        });
        tensor
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Draws a fresh parameter vector; entries are filled in layout order.
    pub fn initialize(&self, rng: &mut Rng) -> Vec<f64> {
        let mut data = Vec::with_capacity(self.total);
        for e in &self.entries {
            match e.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    data.extend((0..e.tensor.len()).map(|_| rng.gen_range(-bound..=bound)));
                }
                Init::Ones => data.extend(std::iter::repeat_n(1.0, e.tensor.len())),
                Init::Zeros => data.extend(std::iter::repeat_n(0.0, e.tensor.len())),
            }
        }
        data
    }

    /// Name of the tensor containing flat coordinate `index`.
    pub fn locate(&self, index: usize) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|e| (e.tensor.offset..e.tensor.offset + e.tensor.len()).contains(&index))
            .map(|e| (e.name.as_str(), index - e.tensor.offset))
    }
}
