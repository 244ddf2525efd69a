//! Integer vector arithmetic behind the replay engine.
//!
//! The engine only ever touches ciphertext-shaped handles through the
//! [`ArithBackend`] trait, whose operation set is deliberately small:
//! matrix-vector products, element-wise add / clamped subtract, division
//! by plaintext constants, clamped minimum with a constant, scaling by a
//! scalar, summation and concatenation. Every operation the engine issues
//! is independent of the token values flowing through it, which is what
//! makes the pipeline safe to run over homomorphic encryption.
//!
//! Two implementations ship here:
//! * [`ClearBackend`] computes directly on `i64` values.
//! * [`MockBackend`] computes the same values but records an operation
//!   trace and cost account, and round-trips values through opaque blobs
//!   the way an encrypted transport would. It stands in for a real FHE
//!   scheme in tests and benchmarks.
//!
//! Plugging in real encryption means implementing [`ArithBackend`] for a
//! scheme whose handles serialize via the same blob mechanism; nothing in
//! the engine or protocol changes.

use std::sync::Mutex;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArithError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("matrix of {rows}x{cols} cannot multiply vector of length {len}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("division by zero divisor at position {0}")]
    ZeroDivisor(usize),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("value {value} outside the {bits}-bit plaintext range")]
    WidthExceeded { value: i64, bits: u32 },
    #[error("malformed ciphertext blob: {0}")]
    BadBlob(String),
}

/// The operations a backend must provide, dimension info only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    MatVec,
    Add,
    SubClamped,
    DivConst,
    MinConst,
    Scale,
    Sum,
    Concat,
    MulScalar,
    AffineScalar,
}

/// One recorded backend operation: kind and operand shape, never values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpEvent {
    pub kind: OpKind,
    pub rows: usize,
    pub cols: usize,
}

/// Aggregate cost model: operation counts plus multiply-accumulate work.
/// A matrix-vector product on an `r x c` matrix contributes `r * c` MACs;
/// element-wise and scalar operations contribute their operand length.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpAccount {
    pub mat_vec: u64,
    pub add: u64,
    pub sub_clamped: u64,
    pub div_const: u64,
    pub min_const: u64,
    pub scale: u64,
    pub sum: u64,
    pub concat: u64,
    pub mul_scalar: u64,
    pub affine_scalar: u64,
    pub macs: u64,
}

impl OpAccount {
    pub fn total_ops(&self) -> u64 {
        self.mat_vec
            + self.add
            + self.sub_clamped
            + self.div_const
            + self.min_const
            + self.scale
            + self.sum
            + self.concat
            + self.mul_scalar
            + self.affine_scalar
    }

    fn record(&mut self, event: OpEvent) {
        match event.kind {
            OpKind::MatVec => {
                self.mat_vec += 1;
                self.macs += (event.rows * event.cols) as u64;
            }
            OpKind::Add => self.add += 1,
            OpKind::SubClamped => self.sub_clamped += 1,
            OpKind::DivConst => self.div_const += 1,
            OpKind::MinConst => self.min_const += 1,
            OpKind::Scale => self.scale += 1,
            OpKind::Sum => self.sum += 1,
            OpKind::Concat => self.concat += 1,
            OpKind::MulScalar => self.mul_scalar += 1,
            OpKind::AffineScalar => self.affine_scalar += 1,
        }
    }
}

/// Fixed-shape integer arithmetic over opaque vector/scalar handles.
///
/// All operations are total over well-shaped inputs and must be executed
/// unconditionally by callers: branching on decoded values inside the
/// server-side pipeline would leak data.
pub trait ArithBackend {
    type Vector: Clone;
    type Scalar: Clone;
    type Matrix: Clone;

    fn encode_matrix(&self, rows: &[Vec<i64>]) -> Result<Self::Matrix, ArithError>;
    fn encode_vector(&self, values: &[i64]) -> Result<Self::Vector, ArithError>;
    fn encode_scalar(&self, value: i64) -> Result<Self::Scalar, ArithError>;
    fn decode_vector(&self, v: &Self::Vector) -> Result<Vec<i64>, ArithError>;
    fn decode_scalar(&self, s: &Self::Scalar) -> Result<i64, ArithError>;

    /// `m * v` over the integers.
    fn mat_vec(&self, m: &Self::Matrix, v: &Self::Vector) -> Result<Self::Vector, ArithError>;
    /// Element-wise `a + b`.
    fn add(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError>;
    /// Element-wise `max(a - b, 0)`.
    fn sub_clamped(&self, a: &Self::Vector, b: &Self::Vector)
        -> Result<Self::Vector, ArithError>;
    /// Element-wise floor division by plaintext divisors.
    fn div_const(&self, v: &Self::Vector, divisors: &[i64]) -> Result<Self::Vector, ArithError>;
    /// Element-wise `min(v, c)` for a plaintext constant.
    fn min_const(&self, v: &Self::Vector, c: i64) -> Result<Self::Vector, ArithError>;
    /// `v * s` for a scalar handle.
    fn scale(&self, v: &Self::Vector, s: &Self::Scalar) -> Result<Self::Vector, ArithError>;
    /// Sum of all elements.
    fn sum(&self, v: &Self::Vector) -> Result<Self::Scalar, ArithError>;
    fn concat(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError>;
    /// `a * b` on scalar handles.
    fn mul_scalar(&self, a: &Self::Scalar, b: &Self::Scalar)
        -> Result<Self::Scalar, ArithError>;
    /// `c0 + c1 * s` for plaintext constants; covers negation and `1 - s`.
    fn affine_scalar(
        &self,
        c0: i64,
        c1: i64,
        s: &Self::Scalar,
    ) -> Result<Self::Scalar, ArithError>;
}

impl<T: ArithBackend> ArithBackend for &T {
    type Vector = T::Vector;
    type Scalar = T::Scalar;
    type Matrix = T::Matrix;

    fn encode_matrix(&self, rows: &[Vec<i64>]) -> Result<Self::Matrix, ArithError> {
        (*self).encode_matrix(rows)
    }
    fn encode_vector(&self, values: &[i64]) -> Result<Self::Vector, ArithError> {
        (*self).encode_vector(values)
    }
    fn encode_scalar(&self, value: i64) -> Result<Self::Scalar, ArithError> {
        (*self).encode_scalar(value)
    }
    fn decode_vector(&self, v: &Self::Vector) -> Result<Vec<i64>, ArithError> {
        (*self).decode_vector(v)
    }
    fn decode_scalar(&self, s: &Self::Scalar) -> Result<i64, ArithError> {
        (*self).decode_scalar(s)
    }
    fn mat_vec(&self, m: &Self::Matrix, v: &Self::Vector) -> Result<Self::Vector, ArithError> {
        (*self).mat_vec(m, v)
    }
    fn add(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        (*self).add(a, b)
    }
    fn sub_clamped(
        &self,
        a: &Self::Vector,
        b: &Self::Vector,
    ) -> Result<Self::Vector, ArithError> {
        (*self).sub_clamped(a, b)
    }
    fn div_const(&self, v: &Self::Vector, divisors: &[i64]) -> Result<Self::Vector, ArithError> {
        (*self).div_const(v, divisors)
    }
    fn min_const(&self, v: &Self::Vector, c: i64) -> Result<Self::Vector, ArithError> {
        (*self).min_const(v, c)
    }
    fn scale(&self, v: &Self::Vector, s: &Self::Scalar) -> Result<Self::Vector, ArithError> {
        (*self).scale(v, s)
    }
    fn sum(&self, v: &Self::Vector) -> Result<Self::Scalar, ArithError> {
        (*self).sum(v)
    }
    fn concat(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        (*self).concat(a, b)
    }
    fn mul_scalar(&self, a: &Self::Scalar, b: &Self::Scalar) -> Result<Self::Scalar, ArithError> {
        (*self).mul_scalar(a, b)
    }
    fn affine_scalar(
        &self,
        c0: i64,
        c1: i64,
        s: &Self::Scalar,
    ) -> Result<Self::Scalar, ArithError> {
        (*self).affine_scalar(c0, c1, s)
    }
}

fn checked_dot(row: &[i64], v: &[i64]) -> Result<i64, ArithError> {
    let mut acc = 0i64;
    for (a, b) in row.iter().zip(v) {
        acc = a
            .checked_mul(*b)
            .and_then(|p| acc.checked_add(p))
            .ok_or(ArithError::Overflow)?;
    }
    Ok(acc)
}

fn plain_mat_vec(m: &[Vec<i64>], v: &[i64]) -> Result<Vec<i64>, ArithError> {
    let cols = m.first().map(Vec::len).unwrap_or(0);
    if cols != v.len() {
        return Err(ArithError::ShapeMismatch {
            rows: m.len(),
            cols,
            len: v.len(),
        });
    }
    m.iter().map(|row| checked_dot(row, v)).collect()
}

fn zip_check(a: &[i64], b: &[i64]) -> Result<(), ArithError> {
    if a.len() != b.len() {
        return Err(ArithError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Plaintext reference backend: handles are plain integers.
#[derive(Debug, Default, Clone)]
pub struct ClearBackend;

impl ArithBackend for ClearBackend {
    type Vector = Vec<i64>;
    type Scalar = i64;
    type Matrix = Vec<Vec<i64>>;

    fn encode_matrix(&self, rows: &[Vec<i64>]) -> Result<Self::Matrix, ArithError> {
        Ok(rows.to_vec())
    }

    fn encode_vector(&self, values: &[i64]) -> Result<Self::Vector, ArithError> {
        Ok(values.to_vec())
    }

    fn encode_scalar(&self, value: i64) -> Result<Self::Scalar, ArithError> {
        Ok(value)
    }

    fn decode_vector(&self, v: &Self::Vector) -> Result<Vec<i64>, ArithError> {
        Ok(v.clone())
    }

    fn decode_scalar(&self, s: &Self::Scalar) -> Result<i64, ArithError> {
        Ok(*s)
    }

    fn mat_vec(&self, m: &Self::Matrix, v: &Self::Vector) -> Result<Self::Vector, ArithError> {
        plain_mat_vec(m, v)
    }

    fn add(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        zip_check(a, b)?;
        a.iter()
            .zip(b)
            .map(|(x, y)| x.checked_add(*y).ok_or(ArithError::Overflow))
            .collect()
    }

    fn sub_clamped(
        &self,
        a: &Self::Vector,
        b: &Self::Vector,
    ) -> Result<Self::Vector, ArithError> {
        zip_check(a, b)?;
        Ok(a.iter().zip(b).map(|(x, y)| (x - y).max(0)).collect())
    }

    fn div_const(&self, v: &Self::Vector, divisors: &[i64]) -> Result<Self::Vector, ArithError> {
        zip_check(v, divisors)?;
        v.iter()
            .zip(divisors)
            .enumerate()
            .map(|(i, (x, d))| {
                if *d == 0 {
                    Err(ArithError::ZeroDivisor(i))
                } else {
                    Ok(x.div_euclid(*d))
                }
            })
            .collect()
    }

    fn min_const(&self, v: &Self::Vector, c: i64) -> Result<Self::Vector, ArithError> {
        Ok(v.iter().map(|x| (*x).min(c)).collect())
    }

    fn scale(&self, v: &Self::Vector, s: &Self::Scalar) -> Result<Self::Vector, ArithError> {
        v.iter()
            .map(|x| x.checked_mul(*s).ok_or(ArithError::Overflow))
            .collect()
    }

    fn sum(&self, v: &Self::Vector) -> Result<Self::Scalar, ArithError> {
        let mut acc = 0i64;
        for x in v {
            acc = acc.checked_add(*x).ok_or(ArithError::Overflow)?;
        }
        Ok(acc)
    }

    fn concat(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        let mut out = a.clone();
        out.extend_from_slice(b);
        Ok(out)
    }

    fn mul_scalar(&self, a: &Self::Scalar, b: &Self::Scalar) -> Result<Self::Scalar, ArithError> {
        a.checked_mul(*b).ok_or(ArithError::Overflow)
    }

    fn affine_scalar(
        &self,
        c0: i64,
        c1: i64,
        s: &Self::Scalar,
    ) -> Result<Self::Scalar, ArithError> {
        c1.checked_mul(*s)
            .and_then(|p| c0.checked_add(p))
            .ok_or(ArithError::Overflow)
    }
}

/// Opaque handle produced by [`MockBackend`]; the payload is hidden the way
/// a ciphertext would be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockVector(Vec<i64>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockScalar(i64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockMatrix(Vec<Vec<i64>>);

/// Computes the same values as [`ClearBackend`] but behaves like an
/// encrypted backend at the seams: values cross the API as opaque blobs,
/// every operation is appended to a trace, and a cost account tallies the
/// work. Clamping operations assert that their outputs stay inside the
/// configured plaintext bit width, mirroring the headroom check a
/// leveled-encryption parameterization would need.
#[derive(Debug)]
pub struct MockBackend {
    bit_width: u32,
    account: Mutex<OpAccount>,
    trace: Mutex<Vec<OpEvent>>,
}

impl MockBackend {
    pub fn new(bit_width: u32) -> Self {
        MockBackend {
            bit_width,
            account: Mutex::new(OpAccount::default()),
            trace: Mutex::new(Vec::new()),
        }
    }

    /// Smallest width holding every marking entry and divisor.
    pub fn width_for(marking_bound: i64, max_divisor: i64) -> u32 {
        let max = marking_bound.max(max_divisor).max(1) as u64;
        u64::BITS - max.leading_zeros()
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn snapshot_account(&self) -> OpAccount {
        self.account.lock().unwrap().clone()
    }

    pub fn reset_account(&self) {
        *self.account.lock().unwrap() = OpAccount::default();
    }

    /// Drains and returns the recorded operation trace.
    pub fn take_trace(&self) -> Vec<OpEvent> {
        std::mem::take(&mut self.trace.lock().unwrap())
    }

    /// Serializes a vector handle for the wire.
    pub fn export_vector(&self, v: &MockVector) -> String {
        encode_blob(&v.0)
    }

    pub fn import_vector(&self, blob: &str) -> Result<MockVector, ArithError> {
        Ok(MockVector(decode_blob(blob)?))
    }

    pub fn export_scalar(&self, s: &MockScalar) -> String {
        encode_blob(&[s.0])
    }

    pub fn import_scalar(&self, blob: &str) -> Result<MockScalar, ArithError> {
        let values = decode_blob(blob)?;
        if values.len() != 1 {
            return Err(ArithError::BadBlob(format!(
                "scalar blob holds {} values",
                values.len()
            )));
        }
        Ok(MockScalar(values[0]))
    }

    fn record(&self, kind: OpKind, rows: usize, cols: usize) {
        let event = OpEvent { kind, rows, cols };
        self.account.lock().unwrap().record(event);
        self.trace.lock().unwrap().push(event);
    }

    fn check_width(&self, values: &[i64]) -> Result<(), ArithError> {
        let max = (1i64 << self.bit_width) - 1;
        for &v in values {
            if v < 0 || v > max {
                return Err(ArithError::WidthExceeded {
                    value: v,
                    bits: self.bit_width,
                });
            }
        }
        Ok(())
    }
}

fn encode_blob(values: &[i64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn decode_blob(blob: &str) -> Result<Vec<i64>, ArithError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(blob)
        .map_err(|e| ArithError::BadBlob(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(ArithError::BadBlob(format!(
            "{} bytes is not a whole number of words",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl ArithBackend for MockBackend {
    type Vector = MockVector;
    type Scalar = MockScalar;
    type Matrix = MockMatrix;

    fn encode_matrix(&self, rows: &[Vec<i64>]) -> Result<Self::Matrix, ArithError> {
        Ok(MockMatrix(rows.to_vec()))
    }

    fn encode_vector(&self, values: &[i64]) -> Result<Self::Vector, ArithError> {
        self.check_width(values)?;
        Ok(MockVector(values.to_vec()))
    }

    fn encode_scalar(&self, value: i64) -> Result<Self::Scalar, ArithError> {
        Ok(MockScalar(value))
    }

    fn decode_vector(&self, v: &Self::Vector) -> Result<Vec<i64>, ArithError> {
        Ok(v.0.clone())
    }

    fn decode_scalar(&self, s: &Self::Scalar) -> Result<i64, ArithError> {
        Ok(s.0)
    }

    fn mat_vec(&self, m: &Self::Matrix, v: &Self::Vector) -> Result<Self::Vector, ArithError> {
        let cols = m.0.first().map(Vec::len).unwrap_or(0);
        self.record(OpKind::MatVec, m.0.len(), cols);
        Ok(MockVector(plain_mat_vec(&m.0, &v.0)?))
    }

    fn add(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::Add, a.0.len(), 1);
        Ok(MockVector(ClearBackend.add(&a.0, &b.0)?))
    }

    fn sub_clamped(
        &self,
        a: &Self::Vector,
        b: &Self::Vector,
    ) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::SubClamped, a.0.len(), 1);
        let out = ClearBackend.sub_clamped(&a.0, &b.0)?;
        self.check_width(&out)?;
        Ok(MockVector(out))
    }

    fn div_const(&self, v: &Self::Vector, divisors: &[i64]) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::DivConst, v.0.len(), 1);
        let out = ClearBackend.div_const(&v.0, divisors)?;
        self.check_width(&out)?;
        Ok(MockVector(out))
    }

    fn min_const(&self, v: &Self::Vector, c: i64) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::MinConst, v.0.len(), 1);
        let out = ClearBackend.min_const(&v.0, c)?;
        self.check_width(&out)?;
        Ok(MockVector(out))
    }

    fn scale(&self, v: &Self::Vector, s: &Self::Scalar) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::Scale, v.0.len(), 1);
        Ok(MockVector(ClearBackend.scale(&v.0, &s.0)?))
    }

    fn sum(&self, v: &Self::Vector) -> Result<Self::Scalar, ArithError> {
        self.record(OpKind::Sum, v.0.len(), 1);
        Ok(MockScalar(ClearBackend.sum(&v.0)?))
    }

    fn concat(&self, a: &Self::Vector, b: &Self::Vector) -> Result<Self::Vector, ArithError> {
        self.record(OpKind::Concat, a.0.len() + b.0.len(), 1);
        Ok(MockVector(ClearBackend.concat(&a.0, &b.0)?))
    }

    fn mul_scalar(&self, a: &Self::Scalar, b: &Self::Scalar) -> Result<Self::Scalar, ArithError> {
        self.record(OpKind::MulScalar, 1, 1);
        Ok(MockScalar(ClearBackend.mul_scalar(&a.0, &b.0)?))
    }

    fn affine_scalar(
        &self,
        c0: i64,
        c1: i64,
        s: &Self::Scalar,
    ) -> Result<Self::Scalar, ArithError> {
        self.record(OpKind::AffineScalar, 1, 1);
        Ok(MockScalar(ClearBackend.affine_scalar(c0, c1, &s.0)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clear_basics() {
        let b = ClearBackend;
        let m = b
            .encode_matrix(&[vec![1, -1], vec![0, 2], vec![3, 0]])
            .unwrap();
        let v = b.encode_vector(&[2, 5]).unwrap();
        assert_eq!(b.mat_vec(&m, &v).unwrap(), vec![-3, 10, 6]);
        assert_eq!(b.sub_clamped(&vec![3, 1], &vec![1, 4]).unwrap(), vec![2, 0]);
        assert_eq!(b.div_const(&vec![5, 7], &[2, 3]).unwrap(), vec![2, 2]);
        assert_eq!(b.min_const(&vec![0, 5], 1).unwrap(), vec![0, 1]);
        assert_eq!(b.scale(&vec![1, 2], &3).unwrap(), vec![3, 6]);
        assert_eq!(b.sum(&vec![1, 2, 3]).unwrap(), 6);
        assert_eq!(b.concat(&vec![1], &vec![2, 3]).unwrap(), vec![1, 2, 3]);
        assert_eq!(b.mul_scalar(&4, &5).unwrap(), 20);
        assert_eq!(b.affine_scalar(1, -1, &1).unwrap(), 0);
    }

    #[test]
    fn shape_errors() {
        let b = ClearBackend;
        let m = b.encode_matrix(&[vec![1, 2]]).unwrap();
        assert!(matches!(
            b.mat_vec(&m, &vec![1]).unwrap_err(),
            ArithError::ShapeMismatch { .. }
        ));
        assert!(matches!(
            b.add(&vec![1], &vec![1, 2]).unwrap_err(),
            ArithError::LengthMismatch(1, 2)
        ));
        assert!(matches!(
            b.div_const(&vec![1], &[0]).unwrap_err(),
            ArithError::ZeroDivisor(0)
        ));
    }

    #[test]
    fn overflow_detected() {
        let b = ClearBackend;
        assert!(matches!(
            b.scale(&vec![i64::MAX], &2).unwrap_err(),
            ArithError::Overflow
        ));
        assert!(matches!(
            b.sum(&vec![i64::MAX, 1]).unwrap_err(),
            ArithError::Overflow
        ));
    }

    #[test]
    fn width_for_running_example_is_three_bits() {
        assert_eq!(MockBackend::width_for(7, 3), 3);
        assert_eq!(MockBackend::width_for(1, 1), 1);
        assert_eq!(MockBackend::width_for(8, 2), 4);
    }

    #[test]
    fn mock_rejects_out_of_width_inputs() {
        let b = MockBackend::new(3);
        assert!(b.encode_vector(&[0, 7]).is_ok());
        assert!(matches!(
            b.encode_vector(&[8]).unwrap_err(),
            ArithError::WidthExceeded { value: 8, bits: 3 }
        ));
        assert!(matches!(
            b.encode_vector(&[-1]).unwrap_err(),
            ArithError::WidthExceeded { value: -1, bits: 3 }
        ));
    }

    #[test]
    fn mock_trace_and_account() {
        let b = MockBackend::new(3);
        let m = b.encode_matrix(&[vec![1, 1], vec![0, 1]]).unwrap();
        let v = b.encode_vector(&[1, 2]).unwrap();
        let w = b.mat_vec(&m, &v).unwrap();
        let _ = b.add(&w, &v).unwrap();
        let _ = b.sum(&v).unwrap();
        let account = b.snapshot_account();
        assert_eq!(account.mat_vec, 1);
        assert_eq!(account.macs, 4);
        assert_eq!(account.add, 1);
        assert_eq!(account.sum, 1);
        assert_eq!(account.total_ops(), 3);
        let trace = b.take_trace();
        assert_eq!(
            trace,
            vec![
                OpEvent { kind: OpKind::MatVec, rows: 2, cols: 2 },
                OpEvent { kind: OpKind::Add, rows: 2, cols: 1 },
                OpEvent { kind: OpKind::Sum, rows: 2, cols: 1 },
            ]
        );
        assert!(b.take_trace().is_empty());
    }

    #[test]
    fn blob_round_trip() {
        let b = MockBackend::new(3);
        let v = b.encode_vector(&[0, 3, 7]).unwrap();
        let blob = b.export_vector(&v);
        assert_eq!(b.import_vector(&blob).unwrap(), v);
        let s = b.encode_scalar(42).unwrap();
        assert_eq!(b.import_scalar(&b.export_scalar(&s)).unwrap(), s);
        assert!(b.import_vector("not base64!").is_err());
        let bad = base64::engine::general_purpose::STANDARD.encode([1, 2, 3]);
        assert!(matches!(
            b.import_vector(&bad).unwrap_err(),
            ArithError::BadBlob(_)
        ));
    }

    proptest! {
        #[test]
        fn mock_matches_clear(
            a in proptest::collection::vec(0i64..8, 1..9),
            bvals in proptest::collection::vec(0i64..8, 1..9),
            c in 0i64..8,
        ) {
            let n = a.len().min(bvals.len());
            let a = &a[..n].to_vec();
            let bvals = &bvals[..n].to_vec();
            let clear = ClearBackend;
            let mock = MockBackend::new(6);
            let (ma, mb) = (
                mock.encode_vector(a).unwrap(),
                mock.encode_vector(bvals).unwrap(),
            );
            prop_assert_eq!(
                clear.add(a, bvals).unwrap(),
                mock.decode_vector(&mock.add(&ma, &mb).unwrap()).unwrap()
            );
            prop_assert_eq!(
                clear.sub_clamped(a, bvals).unwrap(),
                mock.decode_vector(&mock.sub_clamped(&ma, &mb).unwrap()).unwrap()
            );
            prop_assert_eq!(
                clear.min_const(a, c).unwrap(),
                mock.decode_vector(&mock.min_const(&ma, c).unwrap()).unwrap()
            );
            let divisors: Vec<i64> = bvals.iter().map(|d| d + 1).collect();
            prop_assert_eq!(
                clear.div_const(a, &divisors).unwrap(),
                mock.decode_vector(&mock.div_const(&ma, &divisors).unwrap()).unwrap()
            );
            prop_assert_eq!(
                clear.sum(a).unwrap(),
                mock.decode_scalar(&mock.sum(&ma).unwrap()).unwrap()
            );
        }
    }
}
