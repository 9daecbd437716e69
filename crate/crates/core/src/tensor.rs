//! Dense N-dimensional tensors: the universal currency of every layer.
//!
//! A [`Tensor`] owns a row-major `f64` buffer plus an optional gradient
//! buffer of the same shape. Values are immutable once created; gradient
//! buffers are filled by [`crate::tape::Tape::backward`] and parameter
//! buffers are rewritten in place only by the optimizer between tape passes.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::io::{Read, Write};
use std::rc::Rc;

use crate::error::{Error, Result};

/// Batch/height/width/channel extents of a 4-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!(
                "Shape4 extents must all be >= 1, got [{n},{h},{w},{c}]"
            )));
        }
        Ok(Shape4 { n, h, w, c })
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }
}

static NEXT_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

struct TensorData {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
}

/// A dense row-major tensor handle. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    data: Rc<TensorData>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.data.id,
            self.data.shape,
            self.data.requires_grad.get()
        )
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape(
            "tensor shape must have at least one extent".into(),
        ));
    }
    let mut len = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::Shape(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        len = len
            .checked_mul(e)
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows usize")))?;
    }
    Ok(len)
}

impl Tensor {
    /// Builds a tensor from explicit values. The value count must match the
    /// product of the extents.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let len = checked_len(shape)?;
        if values.len() != len {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                values.len()
            )));
        }
        Ok(Tensor {
            data: Rc::new(TensorData {
                id: NEXT_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
                shape: shape.to_vec(),
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
            }),
        })
    }

    /// Builds a tensor with every element set to `fill`.
    pub fn filled(shape: &[usize], fill: f64) -> Result<Tensor> {
        let len = checked_len(shape)?;
        Tensor::new(shape, vec![fill; len])
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Tensor::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Tensor> {
        Tensor::filled(shape, 1.0)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).expect("scalar shape is valid")
    }

    /// Builds a trainable parameter (requires_grad = true).
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.data.shape
    }

    pub fn ndim(&self) -> usize {
        self.data.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interprets this tensor as 4-D [n,h,w,c].
    pub fn shape4(&self) -> Result<Shape4> {
        match self.data.shape.as_slice() {
            &[n, h, w, c] => Shape4::new(n, h, w, c),
            s => Err(Error::Shape(format!(
                "expected a 4-D tensor, got shape {s:?}"
            ))),
        }
    }

    /// Read-only view of the value buffer.
    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.data.values.borrow()
    }

    /// Owned copy of the value buffer.
    pub fn to_vec(&self) -> Vec<f64> {
        self.data.values.borrow().clone()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        let v = self.data.values.borrow();
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "item() needs a scalar tensor, got shape {:?}",
                self.data.shape
            )));
        }
        Ok(v[0])
    }

    /// Rewrites the value buffer in place. Reserved for the optimizer and
    /// layer state updates between tape passes; never call during a recorded
    /// forward pass.
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.data.values.borrow_mut());
    }

    pub fn requires_grad(&self) -> bool {
        self.data.requires_grad.get()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.data.requires_grad.set(flag);
    }

    /// Owned copy of the gradient buffer, if one has been filled.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.data.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.data.grad.borrow_mut() = None;
    }

    /// Accumulates `delta` into the gradient buffer, allocating zeros first
    /// if the buffer is absent.
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut g = self.data.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                debug_assert_eq!(buf.len(), delta.len());
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => {
                debug_assert_eq!(delta.len(), self.len());
                *g = Some(delta.to_vec());
            }
        }
    }

    /// Runs `f` against a zero-initialized (if absent) gradient buffer.
    pub(crate) fn with_grad_mut(&self, f: impl FnOnce(&mut [f64])) {
        let mut g = self.data.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![0.0; self.len()]);
        }
        f(g.as_mut().unwrap());
    }

    /// Reads the gradient buffer (empty tensors get zeros).
    pub(crate) fn grad_or_zeros(&self) -> Vec<f64> {
        self.data
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.len()])
    }

    /// Two handles to the same storage?
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        let v = self.data.values.borrow();
        for (i, x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Numerical(format!(
                    "{context}: non-finite value {x} at flat index {i} (shape {:?})",
                    self.data.shape
                )));
            }
        }
        Ok(())
    }

    /// Serializes in the fixture dump format: ASCII header
    /// `TEN <ndim> <e1> ... <ek>\n` followed by little-endian 64-bit floats
    /// in row-major order.
    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        let mut header = String::from("TEN ");
        header.push_str(&self.ndim().to_string());
        for e in self.shape() {
            header.push(' ');
            header.push_str(&e.to_string());
        }
        header.push('\n');
        w.write_all(header.as_bytes())?;
        let v = self.data.values.borrow();
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a tensor back from the dump format.
    pub fn read_dump(r: &mut impl Read) -> Result<Tensor> {
        let header = read_ascii_line(r)?;
        let mut parts = header.split_whitespace();
        match parts.next() {
            Some("TEN") => {}
            _ => {
                return Err(Error::Format(format!(
                    "bad tensor magic in header {header:?}"
                )))
            }
        }
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad ndim in header {header:?}")))?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let e: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad extent in header {header:?}")))?;
            shape.push(e);
        }
        if parts.next().is_some() {
            return Err(Error::Format(format!(
                "trailing tokens in header {header:?}"
            )));
        }
        let len = checked_len(&shape)?;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for i in 0..len {
            r.read_exact(&mut buf).map_err(|e| {
                Error::Format(format!(
                    "truncated tensor payload at element {i}/{len}: {e}"
                ))
            })?;
            values.push(f64::from_le_bytes(buf));
        }
        Tensor::new(&shape, values)
    }
}

/// Reads bytes up to and including `\n`, returning the line without it.
pub(crate) fn read_ascii_line(r: &mut impl Read) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|e| Error::Format(format!("truncated header line: {e}")))?;
        if byte[0] == b'\n' {
            break;
        }
        if line.len() > 4096 {
            return Err(Error::Format("header line exceeds 4096 bytes".into()));
        }
        line.push(byte[0]);
    }
    String::from_utf8(line).map_err(|_| Error::Format("header line is not ASCII".into()))
}
