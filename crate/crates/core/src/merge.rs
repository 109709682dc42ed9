//! Weight-space merging: compatibility checks, pairwise interpolation,
//! uniform soups and alpha sweeps.
//!
//! Float math is done in 64 bits and rounded once to the output dtype. The
//! pairwise path evaluates `a + alpha * (b - a)` with error-free transforms so
//! results stay within one ulp of the exact value even under cancellation,
//! and both endpoints reproduce their base bit for bit.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_store::{Checkpoint, DType, Tensor};

pub const META_ALPHA: &str = "merge.alpha";
pub const META_BASE_A: &str = "merge.base_a";
pub const META_BASE_B: &str = "merge.base_b";
pub const META_DROPPED: &str = "merge.dropped_keys";
pub const META_NONFINITE: &str = "merge.nonfinite_warnings";
pub const META_SOUP_K: &str = "merge.soup_k";
pub const META_SOUP_BASES: &str = "merge.soup_bases";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyMismatch {
    /// Any structural difference is an error.
    #[default]
    Strict,
    /// Merge only tensors present in both with equal shape and dtype.
    Intersect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntTensorPolicy {
    /// Integer buffers must agree byte for byte.
    #[default]
    RequireEqual,
    /// Keep the first model's integer buffers.
    TakeFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergePolicy {
    pub alpha: f64,
    /// Allows alpha outside `[0, 1]`.
    pub extrapolate: bool,
    pub key_mismatch: KeyMismatch,
    pub int_tensor: IntTensorPolicy,
}

impl MergePolicy {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            extrapolate: false,
            key_mismatch: KeyMismatch::Strict,
            int_tensor: IntTensorPolicy::RequireEqual,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || (!self.extrapolate && !(0.0..=1.0).contains(&self.alpha)) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        Ok(())
    }
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self::new(0.5)
    }
}

/// Structural diff between two checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompatReport {
    pub compatible: bool,
    pub missing_in_a: Vec<String>,
    pub missing_in_b: Vec<String>,
    pub shape_conflicts: Vec<(String, Vec<usize>, Vec<usize>)>,
    pub dtype_conflicts: Vec<(String, DType, DType)>,
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.compatible {
            return f.write_str("compatible");
        }
        let mut parts = Vec::new();
        for name in &self.missing_in_a {
            parts.push(format!("tensor `{name}` missing in first checkpoint"));
        }
        for name in &self.missing_in_b {
            parts.push(format!("tensor `{name}` missing in second checkpoint"));
        }
        for (name, sa, sb) in &self.shape_conflicts {
            parts.push(format!("tensor `{name}` shape {sa:?} vs {sb:?}"));
        }
        for (name, da, db) in &self.dtype_conflicts {
            parts.push(format!("tensor `{name}` dtype {da} vs {db}"));
        }
        f.write_str(&parts.join("; "))
    }
}

pub fn check_compatibility(a: &Checkpoint, b: &Checkpoint) -> CompatReport {
    let mut report = CompatReport::default();
    for (name, ta) in a.tensors() {
        match b.get(name) {
            None => report.missing_in_b.push(name.to_string()),
            Some(tb) => {
                if ta.shape() != tb.shape() {
                    report.shape_conflicts.push((
                        name.to_string(),
                        ta.shape().to_vec(),
                        tb.shape().to_vec(),
                    ));
                }
                if ta.dtype() != tb.dtype() {
                    report
                        .dtype_conflicts
                        .push((name.to_string(), ta.dtype(), tb.dtype()));
                }
            }
        }
    }
    report.missing_in_a = b
        .names()
        .filter(|n| a.get(n).is_none())
        .map(str::to_string)
        .collect();
    report.compatible = report.missing_in_a.is_empty()
        && report.missing_in_b.is_empty()
        && report.shape_conflicts.is_empty()
        && report.dtype_conflicts.is_empty();
    report
}

/// Alphas at which a sweep is evaluated: strictly increasing, from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    alphas: Vec<f64>,
}

impl SweepSpec {
    /// `0, step, 2*step, ..., 1`; `1/step` must be (close to) an integer.
    /// Points are computed as `i / n`, so the endpoints are exact.
    pub fn by_step(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidSweep(format!(
                "step {step} must be in (0, 1]"
            )));
        }
        let n = (1.0 / step).round();
        if (n * step - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSweep(format!(
                "step {step} does not divide [0, 1] evenly"
            )));
        }
        let n = n as usize;
        Ok(Self {
            alphas: (0..=n).map(|i| i as f64 / n as f64).collect(),
        })
    }

    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::InvalidSweep("need at least two alphas".into()));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::InvalidSweep(format!(
                "alphas must start at 0 and end at 1, got {alphas:?}"
            )));
        }
        if alphas
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::InvalidSweep(format!(
                "alphas must be strictly increasing, got {alphas:?}"
            )));
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `base + t * (other - base)` evaluated in double-double precision.
#[inline]
fn lerp_from(base: f64, other: f64, t: f64) -> f64 {
    let (d, d_err) = two_sum(other, -base);
    if !d.is_finite() {
        return (1.0 - t) * base + t * other;
    }
    let (p, p_err) = two_prod(t, d);
    let (s, s_err) = two_sum(base, p);
    s + (s_err + p_err + t * d_err)
}

/// Interpolates one element. Exact at `alpha` 0 and 1 and when `a == b`.
#[inline]
pub fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    if alpha == 0.0 || a.to_bits() == b.to_bits() {
        return a;
    }
    if alpha == 1.0 {
        return b;
    }
    if !(a.is_finite() && b.is_finite()) {
        return a + alpha * (b - a);
    }
    // Interpolate from the nearer endpoint; `1 - alpha` is exact here.
    if alpha <= 0.5 {
        lerp_from(a, b, alpha)
    } else {
        lerp_from(b, a, 1.0 - alpha)
    }
}

/// Compensated (Neumaier) sum in slice order, started from the first element.
fn ordered_sum(values: &[f64]) -> f64 {
    let mut sum = values[0];
    let mut comp = 0.0;
    for &v in &values[1..] {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    if comp == 0.0 || !comp.is_finite() {
        sum
    } else {
        sum + comp
    }
}

fn encode(dtype: DType, shape: &[usize], values: impl Iterator<Item = f64>) -> Tensor {
    let data: Vec<u8> = match dtype {
        DType::F32 => values.flat_map(|v| (v as f32).to_le_bytes()).collect(),
        DType::F64 => values.flat_map(|v| v.to_le_bytes()).collect(),
        DType::I64 => unreachable!("integer tensors are never interpolated"),
    };
    Tensor::from_raw(dtype, shape.to_vec(), data).expect("element count preserved")
}

fn merge_int(name: &str, tensors: &[&Tensor], policy: IntTensorPolicy) -> Result<Tensor> {
    if policy == IntTensorPolicy::RequireEqual
        && tensors[1..].iter().any(|t| t.data() != tensors[0].data())
    {
        return Err(Error::IntTensorMismatch(name.to_string()));
    }
    Ok(tensors[0].clone())
}

struct MergedTensor {
    name: String,
    tensor: Tensor,
    nonfinite: usize,
}

/// Runs per-tensor jobs in parallel; output order and the reported error are
/// the first in canonical name order regardless of scheduling.
fn run_jobs<J, F>(jobs: Vec<J>, f: F) -> Result<Vec<MergedTensor>>
where
    J: Send + Sync,
    F: Fn(&J) -> Result<MergedTensor> + Send + Sync,
{
    let results: Vec<Result<MergedTensor>> = jobs.par_iter().map(&f).collect();
    results.into_iter().collect()
}

fn assemble(merged: Vec<MergedTensor>) -> (Checkpoint, usize) {
    let mut cp = Checkpoint::new();
    let mut nonfinite = 0;
    for m in merged {
        nonfinite += m.nonfinite;
        cp.insert(m.name, m.tensor)
            .expect("names come from a checkpoint and are unique");
    }
    (cp, nonfinite)
}

/// Pairwise interpolation `(1 - alpha) * a + alpha * b` over every tensor.
pub fn merge_pair(a: &Checkpoint, b: &Checkpoint, policy: &MergePolicy) -> Result<Checkpoint> {
    policy.validate()?;
    let report = check_compatibility(a, b);
    if !report.compatible && policy.key_mismatch == KeyMismatch::Strict {
        return Err(Error::IncompatibleCheckpoints(Box::new(report)));
    }

    let jobs: Vec<(&str, &Tensor, &Tensor)> = a
        .tensors()
        .filter_map(|(name, ta)| {
            let tb = b.get(name)?;
            (ta.shape() == tb.shape() && ta.dtype() == tb.dtype()).then_some((name, ta, tb))
        })
        .collect();
    let union = a.len() + report.missing_in_a.len();
    let dropped = union - jobs.len();

    let alpha = policy.alpha;
    let int_policy = policy.int_tensor;
    let merged = run_jobs(jobs, |&(name, ta, tb)| {
        if !ta.dtype().is_float() {
            return Ok(MergedTensor {
                name: name.to_string(),
                tensor: merge_int(name, &[ta, tb], int_policy)?,
                nonfinite: 0,
            });
        }
        let va = ta.to_f64_vec();
        let vb = tb.to_f64_vec();
        let nonfinite = va
            .iter()
            .zip(&vb)
            .filter(|(x, y)| !(x.is_finite() && y.is_finite()))
            .count();
        let values = va.iter().zip(&vb).map(|(&x, &y)| lerp(x, y, alpha));
        Ok(MergedTensor {
            name: name.to_string(),
            tensor: encode(ta.dtype(), ta.shape(), values),
            nonfinite,
        })
    })?;

    let (mut cp, nonfinite) = assemble(merged);
    cp.set_metadata(META_ALPHA, format!("{alpha}"));
    cp.set_metadata(META_BASE_A, a.content_digest());
    cp.set_metadata(META_BASE_B, b.content_digest());
    cp.set_metadata(META_NONFINITE, nonfinite.to_string());
    if policy.key_mismatch == KeyMismatch::Intersect {
        cp.set_metadata(META_DROPPED, dropped.to_string());
    }
    Ok(cp)
}

/// Uniform average of `models`, accumulated in list order.
pub fn merge_soup(models: &[Checkpoint], int_tensor: IntTensorPolicy) -> Result<Checkpoint> {
    let first = models.first().ok_or(Error::EmptyModelList)?;
    for other in &models[1..] {
        let report = check_compatibility(first, other);
        if !report.compatible {
            return Err(Error::IncompatibleCheckpoints(Box::new(report)));
        }
    }

    let k = models.len() as f64;
    let jobs: Vec<&str> = first.names().collect();
    let merged = run_jobs(jobs, |&name| {
        let tensors: Vec<&Tensor> = models.iter().map(|m| m.get(name).unwrap()).collect();
        let head = tensors[0];
        if !head.dtype().is_float() {
            return Ok(MergedTensor {
                name: name.to_string(),
                tensor: merge_int(name, &tensors, int_tensor)?,
                nonfinite: 0,
            });
        }
        let columns: Vec<Vec<f64>> = tensors.iter().map(|t| t.to_f64_vec()).collect();
        let mut nonfinite = 0;
        let mut scratch = vec![0.0; columns.len()];
        let mut values = Vec::with_capacity(head.numel());
        for i in 0..head.numel() {
            for (slot, col) in scratch.iter_mut().zip(&columns) {
                *slot = col[i];
            }
            if scratch.iter().any(|v| !v.is_finite()) {
                nonfinite += 1;
            }
            values.push(if columns.len() == 1 {
                scratch[0]
            } else {
                ordered_sum(&scratch) / k
            });
        }
        Ok(MergedTensor {
            name: name.to_string(),
            tensor: encode(head.dtype(), head.shape(), values.into_iter()),
            nonfinite,
        })
    })?;

    let (mut cp, nonfinite) = assemble(merged);
    cp.set_metadata(META_SOUP_K, models.len().to_string());
    cp.set_metadata(
        META_SOUP_BASES,
        models
            .iter()
            .map(Checkpoint::content_digest)
            .collect::<Vec<_>>()
            .join(","),
    );
    cp.set_metadata(META_NONFINITE, nonfinite.to_string());
    Ok(cp)
}

/// Lazily merged checkpoints along a sweep.
pub struct Sweep<'a> {
    a: &'a Checkpoint,
    b: &'a Checkpoint,
    policy: MergePolicy,
    alphas: std::vec::IntoIter<f64>,
}

impl Iterator for Sweep<'_> {
    type Item = Result<(f64, Checkpoint)>;

    fn next(&mut self) -> Option<Self::Item> {
        let alpha = self.alphas.next()?;
        let policy = self.policy.with_alpha(alpha);
        Some(merge_pair(self.a, self.b, &policy).map(|cp| (alpha, cp)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.alphas.size_hint()
    }
}

impl ExactSizeIterator for Sweep<'_> {}

/// One merged checkpoint per alpha in `spec`, produced on demand. The
/// policy's own alpha is ignored; structural checks run up front.
pub fn sweep<'a>(
    a: &'a Checkpoint,
    b: &'a Checkpoint,
    spec: &SweepSpec,
    policy: &MergePolicy,
) -> Result<Sweep<'a>> {
    if policy.key_mismatch == KeyMismatch::Strict {
        let report = check_compatibility(a, b);
        if !report.compatible {
            return Err(Error::IncompatibleCheckpoints(Box::new(report)));
        }
    }
    Ok(Sweep {
        a,
        b,
        policy: *policy,
        alphas: spec.alphas.clone().into_iter(),
    })
}

/// Float payloads (every float tensor's bytes) of two checkpoints are equal.
pub fn float_payload_eq(x: &Checkpoint, y: &Checkpoint) -> bool {
    let floats = |cp: &Checkpoint| -> Vec<(String, Vec<u8>)> {
        cp.tensors()
            .filter(|(_, t)| t.dtype().is_float())
            .map(|(n, t)| (n.to_string(), t.data().to_vec()))
            .collect()
    };
    floats(x) == floats(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ckpt(tensors: &[(&str, Tensor)]) -> Checkpoint {
        let mut cp = Checkpoint::new();
        for (n, t) in tensors {
            cp.insert(*n, t.clone()).unwrap();
        }
        cp
    }

    fn f64s(v: &[f64]) -> Tensor {
        Tensor::from_f64(vec![v.len()], v).unwrap()
    }

    /// Distance in representable values between two floats of the same dtype.
    fn ulp_distance(dtype: DType, x: f64, y: f64) -> u64 {
        fn ordered(bits: i64) -> i64 {
            if bits < 0 {
                i64::MIN - bits
            } else {
                bits
            }
        }
        match dtype {
            DType::F32 => {
                let o = |v: f64| ordered((v as f32).to_bits() as i32 as i64);
                o(x).abs_diff(o(y))
            }
            _ => {
                let o = |v: f64| ordered(v.to_bits() as i64);
                o(x).abs_diff(o(y))
            }
        }
    }

    #[test]
    fn identical_structure_is_compatible() {
        let a = ckpt(&[("w", f64s(&[1.0]))]);
        let r = check_compatibility(&a, &a);
        assert!(r.compatible);
        assert_eq!(
            r,
            CompatReport {
                compatible: true,
                ..Default::default()
            }
        );
    }

    #[test]
    fn reports_each_kind_of_mismatch() {
        let a = ckpt(&[
            ("w1", f64s(&[1.0])),
            ("w2", f64s(&[1.0])),
            ("m", Tensor::from_f32(vec![3, 4], &[0.0; 12]).unwrap()),
            ("d", f64s(&[1.0])),
        ]);
        let b = ckpt(&[
            ("w1", f64s(&[1.0])),
            ("extra", f64s(&[1.0])),
            ("m", Tensor::from_f32(vec![4, 3], &[0.0; 12]).unwrap()),
            ("d", Tensor::from_f32(vec![1], &[1.0]).unwrap()),
        ]);
        let r = check_compatibility(&a, &b);
        assert!(!r.compatible);
        assert_eq!(r.missing_in_b, vec!["w2"]);
        assert_eq!(r.missing_in_a, vec!["extra"]);
        assert_eq!(
            r.shape_conflicts,
            vec![("m".into(), vec![3, 4], vec![4, 3])]
        );
        assert_eq!(
            r.dtype_conflicts,
            vec![("d".into(), DType::F64, DType::F32)]
        );
    }

    #[test]
    fn midpoint_of_simple_pair() {
        let a = ckpt(&[("w", f64s(&[1.0, 2.0]))]);
        let b = ckpt(&[("w", f64s(&[3.0, 6.0]))]);
        let m = merge_pair(&a, &b, &MergePolicy::new(0.5)).unwrap();
        assert_eq!(m.tensor_values("w").unwrap(), vec![2.0, 4.0]);
        assert_eq!(m.metadata()[META_ALPHA], "0.5");
        assert_eq!(m.metadata()[META_BASE_A], a.content_digest());
        assert_eq!(m.metadata()[META_BASE_B], b.content_digest());
        assert_eq!(m.metadata()[META_NONFINITE], "0");
    }

    #[test]
    fn lerp_small_cases() {
        assert_eq!(lerp(1.0, 3.0, 0.25), 1.5);
        assert_eq!(lerp(-0.0, 0.0, 0.0).to_bits(), (-0.0f64).to_bits());
        assert_eq!(lerp(-0.0, -0.0, 0.7).to_bits(), (-0.0f64).to_bits());
        assert_eq!(lerp(1.0, 1e-17, 1.0), 1e-17);
    }

    #[test]
    fn alpha_range_is_enforced() {
        let a = ckpt(&[("w", f64s(&[0.0]))]);
        for alpha in [-0.1, 1.5, f64::NAN] {
            let err = merge_pair(&a, &a, &MergePolicy::new(alpha)).unwrap_err();
            assert!(matches!(err, Error::AlphaOutOfRange(_)));
        }
        let policy = MergePolicy {
            extrapolate: true,
            ..MergePolicy::new(1.5)
        };
        let b = ckpt(&[("w", f64s(&[2.0]))]);
        assert_eq!(
            merge_pair(&a, &b, &policy)
                .unwrap()
                .tensor_values("w")
                .unwrap(),
            vec![3.0]
        );
    }

    #[test]
    fn strict_rejects_and_intersect_drops() {
        let a = ckpt(&[("w", f64s(&[0.0])), ("only_a", f64s(&[1.0]))]);
        let b = ckpt(&[("w", f64s(&[2.0])), ("only_b", f64s(&[1.0]))]);
        assert!(matches!(
            merge_pair(&a, &b, &MergePolicy::new(0.5)),
            Err(Error::IncompatibleCheckpoints(_))
        ));
        let policy = MergePolicy {
            key_mismatch: KeyMismatch::Intersect,
            ..MergePolicy::new(0.5)
        };
        let m = merge_pair(&a, &b, &policy).unwrap();
        assert_eq!(m.names().collect::<Vec<_>>(), vec!["w"]);
        assert_eq!(m.tensor_values("w").unwrap(), vec![1.0]);
        assert_eq!(m.metadata()[META_DROPPED], "2");
    }

    #[test]
    fn mismatched_dtypes_are_never_promoted() {
        let a = ckpt(&[("w", f64s(&[0.0]))]);
        let b = ckpt(&[("w", Tensor::from_f32(vec![1], &[1.0]).unwrap())]);
        let err = merge_pair(&a, &b, &MergePolicy::new(0.5)).unwrap_err();
        match err {
            Error::IncompatibleCheckpoints(r) => assert_eq!(r.dtype_conflicts.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn int_tensor_policies() {
        let a = ckpt(&[("step", Tensor::from_i64(vec![1], &[10]).unwrap())]);
        let b = ckpt(&[("step", Tensor::from_i64(vec![1], &[20]).unwrap())]);
        assert!(matches!(
            merge_pair(&a, &b, &MergePolicy::new(0.5)),
            Err(Error::IntTensorMismatch(n)) if n == "step"
        ));
        let take_first = MergePolicy {
            int_tensor: IntTensorPolicy::TakeFirst,
            ..MergePolicy::new(0.5)
        };
        let m = merge_pair(&a, &b, &take_first).unwrap();
        assert_eq!(m.tensor("step").unwrap().to_i64_vec().unwrap(), vec![10]);
        assert!(merge_pair(&a, &a, &MergePolicy::new(0.5)).is_ok());
    }

    #[test]
    fn nonfinite_inputs_propagate_with_warning() {
        let a = ckpt(&[("w", f64s(&[f64::NAN, 1.0, f64::INFINITY]))]);
        let b = ckpt(&[("w", f64s(&[0.0, 3.0, 1.0]))]);
        let m = merge_pair(&a, &b, &MergePolicy::new(0.5)).unwrap();
        let v = m.tensor_values("w").unwrap();
        assert!(v[0].is_nan());
        assert_eq!(v[1], 2.0);
        assert!(!v[2].is_finite());
        assert_eq!(m.metadata()[META_NONFINITE], "2");
    }

    #[test]
    fn soup_basics() {
        let mk = |v: f64| ckpt(&[("w", f64s(&[v]))]);
        assert!(matches!(
            merge_soup(&[], IntTensorPolicy::RequireEqual),
            Err(Error::EmptyModelList)
        ));
        let s = merge_soup(&[mk(0.0), mk(3.0), mk(6.0)], IntTensorPolicy::RequireEqual).unwrap();
        assert_eq!(s.tensor_values("w").unwrap(), vec![3.0]);
        assert_eq!(s.metadata()[META_SOUP_K], "3");

        let single = ckpt(&[("w", f64s(&[-0.0, 0.1, f64::MIN_POSITIVE]))]);
        let s1 = merge_soup(std::slice::from_ref(&single), IntTensorPolicy::RequireEqual).unwrap();
        assert!(float_payload_eq(&s1, &single));

        let bad = ckpt(&[("v", f64s(&[0.0]))]);
        assert!(matches!(
            merge_soup(&[mk(0.0), bad], IntTensorPolicy::RequireEqual),
            Err(Error::IncompatibleCheckpoints(_))
        ));
    }

    #[test]
    fn sweep_specs() {
        let s = SweepSpec::by_step(0.1).unwrap();
        assert_eq!(s.len(), 11);
        assert_eq!(s.alphas()[0], 0.0);
        assert_eq!(s.alphas()[10], 1.0);
        for (i, a) in s.alphas().iter().enumerate() {
            assert!((a - i as f64 / 10.0).abs() <= 1e-12);
        }
        assert_eq!(
            SweepSpec::by_step(0.25).unwrap().alphas(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert!(SweepSpec::by_step(0.3).is_err());
        assert!(SweepSpec::by_step(0.0).is_err());
        assert!(SweepSpec::from_alphas(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(SweepSpec::from_alphas(vec![0.1, 1.0]).is_err());
        assert!(SweepSpec::from_alphas(vec![0.0, 0.9]).is_err());
        assert!(SweepSpec::from_alphas(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn sweep_endpoints_are_the_bases() {
        let a = ckpt(&[("w", f64s(&[0.1, -0.0, 7.0]))]);
        let b = ckpt(&[("w", f64s(&[1e-17, 3.0, -2.5]))]);
        let spec = SweepSpec::from_alphas(vec![0.0, 1.0]).unwrap();
        let out: Vec<_> = sweep(&a, &b, &spec, &MergePolicy::default())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(out.len(), 2);
        assert!(float_payload_eq(&out[0].1, &a));
        assert!(float_payload_eq(&out[1].1, &b));
    }

    fn arb_pair(dtype: DType) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        let elem = match dtype {
            DType::F32 => (-1e6f32..1e6f32).prop_map(|v| v as f64).boxed(),
            _ => (-1e6f64..1e6f64).boxed(),
        };
        (1usize..16).prop_flat_map(move |n| {
            (
                prop::collection::vec(elem.clone(), n),
                prop::collection::vec(elem.clone(), n),
            )
        })
    }

    fn pair_ckpts(dtype: DType, va: &[f64], vb: &[f64]) -> (Checkpoint, Checkpoint) {
        let t = |v: &[f64]| match dtype {
            DType::F32 => Tensor::from_f32(
                vec![v.len()],
                &v.iter().map(|&x| x as f32).collect::<Vec<_>>(),
            )
            .unwrap(),
            _ => f64s(v),
        };
        (ckpt(&[("w", t(va))]), ckpt(&[("w", t(vb))]))
    }

    proptest! {
        #[test]
        fn idempotent_and_exact_endpoints(
            (va, vb) in arb_pair(DType::F32),
            alpha in 0.0f64..=1.0,
        ) {
            let (a, b) = pair_ckpts(DType::F32, &va, &vb);
            let same = merge_pair(&a, &a, &MergePolicy::new(alpha)).unwrap();
            prop_assert!(float_payload_eq(&same, &a));
            prop_assert!(float_payload_eq(&merge_pair(&a, &b, &MergePolicy::new(0.0)).unwrap(), &a));
            prop_assert!(float_payload_eq(&merge_pair(&a, &b, &MergePolicy::new(1.0)).unwrap(), &b));
        }

        #[test]
        fn symmetric_within_one_ulp(
            dtype in prop_oneof![Just(DType::F32), Just(DType::F64)],
            seed_pair in arb_pair(DType::F32),
            alpha in 0.0f64..=1.0,
        ) {
            let (va, vb) = seed_pair;
            let (a, b) = pair_ckpts(dtype, &va, &vb);
            // Use an exactly complementary pair; `1 - alpha` rounds for alpha < 0.5.
            let alpha = 1.0 - (1.0 - alpha);
            let ab = merge_pair(&a, &b, &MergePolicy::new(alpha)).unwrap().tensor_values("w").unwrap();
            let ba = merge_pair(&b, &a, &MergePolicy::new(1.0 - alpha)).unwrap().tensor_values("w").unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!(ulp_distance(dtype, *x, *y) <= 1, "{x} vs {y}");
            }
        }

        #[test]
        fn scalar_merge_is_affine_in_alpha(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let (ca, cb) = pair_ckpts(DType::F64, &[a], &[b]);
            let at = |alpha: f64| {
                merge_pair(&ca, &cb, &MergePolicy::new(alpha)).unwrap().tensor_values("w").unwrap()[0]
            };
            // Line through two samples; two further samples must lie on it.
            let (y0, y1) = (at(0.2), at(0.6));
            let slope = (y1 - y0) / 0.4;
            for alpha in [0.4, 0.9] {
                let predicted = y0 + slope * (alpha - 0.2);
                prop_assert!((at(alpha) - predicted).abs() <= 1e-12);
            }
        }
    }
}
