//! Computation tape: the record of executed operations.

use std::cell::{Cell, RefCell};

use super::{Element, Tensor};
use crate::{Error, Result};

/// Ordered record of executed operations.
///
/// Each recorded step is a closure that reads the output tensor's gradient
/// and accumulates contributions into its inputs' gradients. Topological
/// order is execution order by construction, so [`Tape::backward`] simply
/// replays the steps in reverse. A tape is single-use: replaying it twice
/// without re-running the forward pass is an error, and backward drains the
/// recorded nodes so their captured tensors are freed.
pub struct Tape<T: Element> {
    steps: RefCell<Vec<Box<dyn FnOnce()>>>,
    recording: bool,
    consumed: Cell<bool>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Tape<T> {
    /// A recording tape: ops executed against it register gradient rules.
    pub fn new() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            recording: true,
            consumed: Cell::new(false),
            _marker: std::marker::PhantomData,
        }
    }

    /// A non-recording tape for inference; stays empty no matter what runs.
    pub fn inference() -> Self {
        Tape { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the op feeding these inputs must register a gradient rule.
    pub(crate) fn wants(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.tracked())
    }

    pub(crate) fn record(&self, step: impl FnOnce() + 'static) {
        debug_assert!(self.recording);
        self.steps.borrow_mut().push(Box::new(step));
    }

    /// Seeds `loss.grad = 1` and replays every recorded step in reverse.
    ///
    /// After this call the tape is consumed; a second backward without a new
    /// forward pass is rejected.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::Tape(
                "tape already replayed; re-run the forward pass before backward".into(),
            ));
        }
        if !loss.is_scalar() {
            return Err(Error::Tape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        self.consumed.set(true);
        loss.set_grad(vec![T::one()]);
        let steps: Vec<_> = self.steps.borrow_mut().drain(..).collect();
        for step in steps.into_iter().rev() {
            step();
        }
        Ok(())
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
