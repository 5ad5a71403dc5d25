use super::tensor::Tensor;

/// Which learning rate a parameter trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrGroup {
    /// The base learning rate.
    Base,
    /// The separate learning rate for the decoder's low-rank adapter.
    DecoderAdapter,
}

/// A named tensor that the optimizer may update.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub group: LrGroup,
    /// Set when a backward pass reached this parameter since the last step.
    pub touched: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
            group: LrGroup::Base,
            touched: false,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn with_group(mut self, group: LrGroup) -> Self {
        self.group = group;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
        self.touched = false;
    }
}
