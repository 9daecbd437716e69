//! Gradient tape for reverse-mode differentiation.
//!
//! Operations record a backward step while they run; [`Tape::backward`]
//! replays the steps in reverse, accumulating into each tensor's gradient
//! buffer, then clears the tape. A tape is single-writer: one forward pass
//! followed by one backward pass.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type BackwardStep = Box<dyn Fn()>;

pub struct Tape {
    steps: RefCell<Vec<BackwardStep>>,
    recording: bool,
}

impl Tape {
    /// A recording tape for training passes.
    pub fn new() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A non-recording tape for inference passes: ops compute values only.
    pub fn inference() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.borrow().is_empty()
    }

    /// Records a backward step if this tape is recording and the result
    /// participates in differentiation.
    pub(crate) fn record_for(&self, out: &Tensor, step: BackwardStep) {
        if self.recording && out.requires_grad() {
            self.steps.borrow_mut().push(step);
        }
    }

    /// Marks `out` as requiring grad when any input does, so downstream ops
    /// keep recording. Returns whether the op should register a step.
    pub(crate) fn propagate_requires_grad(&self, inputs: &[&Tensor], out: &Tensor) -> bool {
        let any = inputs.iter().any(|t| t.requires_grad());
        if any {
            out.set_requires_grad(true);
        }
        self.recording && any
    }

    /// Reverse-mode pass from a scalar loss: fills the gradient buffer of
    /// every tensor the recorded ops touched, then clears the tape.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let steps = std::mem::take(&mut *self.steps.borrow_mut());
        if steps.is_empty() {
            return Err(Error::Contract(
                "backward called on an empty tape (no forward pass recorded)".into(),
            ));
        }
        loss.with_grad_mut(|g| g[0] += 1.0);
        for step in steps.iter().rev() {
            step();
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![5.0, -1.0, 2.0]).unwrap();
        let loss = ops::sum(&tape, &x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_twice_without_forward_is_contract_error() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = ops::sum(&tape, &x).unwrap();
        tape.backward(&loss).unwrap();
        let err = tape.backward(&loss).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = ops::mul(&tape, &x, &x).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::inference();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let _ = ops::sum(&tape, &x).unwrap();
        assert!(tape.is_empty());
    }
}
