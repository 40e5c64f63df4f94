use crate::error::TensorError;
use crate::tensor::Tensor;

/// Integer-valued tensor produced by the quantizers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("same volume")
    }
}

/// Round half away from zero, saturating at the `i32` range. NaN maps to 0;
/// callers that care reject non-finite input first.
pub fn quantize_value(x: f32) -> i32 {
    x.round() as i32
}

pub fn quantize(t: &Tensor) -> QuantTensor {
    QuantTensor {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&v| quantize_value(v)).collect(),
    }
}
