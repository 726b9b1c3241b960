//! The embedded n-dimensional d-order polynomial.
//!
//! For an input row `x` the model evaluates
//!
//! ```text
//! f(x) = W₀ + Σᵢ sum(Wᵢ ∗ x̃ᵢ ⊗ x̃ᵢ ⊗ … ⊗ x̃ᵢ),    x̃ᵢ = x·Lᵢ
//! ```
//!
//! where `Wᵢ` is a dense order-`i` tensor of shape `kᵢ × … × kᵢ` and `Lᵢ` an
//! `n × kᵢ` embedding. Order 1 uses the identity embedding (`k₁ = n`). For
//! orders ≥ 2 the trend column, if any, is dropped before applying `Lᵢ`.
//!
//! The inner sums are evaluated by contracting `Wᵢ` with `x̃ᵢ` one axis at a
//! time; the outer product is never formed.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::dim_reduction::{Fingerprint, ReductionMap};
use crate::error::{check_dims, HopsError, Result};
use crate::features::MinMaxNormalizer;
use crate::numerics::{dot, Matrix};

/// Shape and regularization of a polynomial model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySpec {
    input_dim: usize,
    embed_dims: Vec<usize>,
    trend_column: Option<usize>,
    lambda: Vec<f64>,
}

impl PolySpec {
    /// `embed_dims[i - 1]` is `kᵢ`. `k₁` must be `0` or `input_dim`; a zero
    /// entry removes that order from the model.
    pub fn new(input_dim: usize, embed_dims: Vec<usize>, trend_column: Option<usize>) -> Result<Self> {
        let lambda = vec![0.0; embed_dims.len() + 1];
        let spec = Self {
            input_dim,
            embed_dims,
            trend_column,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// L2 weights `λ₀ … λ_d`.
    pub fn with_lambda(mut self, lambda: Vec<f64>) -> Result<Self> {
        check_dims("PolySpec lambda length", self.embed_dims.len() + 1, lambda.len())?;
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(HopsError::InvalidParameter(
                "L2 weights must be finite and non-negative".into(),
            ));
        }
        self.lambda = lambda;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dims.is_empty() {
            return Err(HopsError::InvalidParameter("max order must be at least 1".into()));
        }
        if self.input_dim == 0 {
            return Err(HopsError::InvalidParameter("input dimension must be positive".into()));
        }
        let k1 = self.embed_dims[0];
        if k1 != 0 && k1 != self.input_dim {
            return Err(HopsError::InvalidParameter(format!(
                "k1 must equal the input dimension {} (or 0), got {k1}",
                self.input_dim
            )));
        }
        if let Some(t) = self.trend_column {
            if t >= self.input_dim {
                return Err(HopsError::InvalidParameter(format!(
                    "trend column {t} out of range for {} inputs",
                    self.input_dim
                )));
            }
        }
        let limit = self.higher_order_source_dims();
        for (i, &k) in self.embed_dims.iter().enumerate().skip(1) {
            if k > limit {
                return Err(HopsError::InvalidParameter(format!(
                    "k{} = {k} exceeds the {limit} available higher-order inputs",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn max_order(&self) -> usize {
        self.embed_dims.len()
    }

    pub fn embed_dims(&self) -> &[usize] {
        &self.embed_dims
    }

    /// `kᵢ` for `order ≥ 1`.
    pub fn k(&self, order: usize) -> usize {
        self.embed_dims[order - 1]
    }

    pub fn trend_column(&self) -> Option<usize> {
        self.trend_column
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Columns feeding orders ≥ 2 (`n`, or `n − 1` with a trend column).
    pub fn higher_order_source_dims(&self) -> usize {
        self.input_dim - usize::from(self.trend_column.is_some())
    }
}

/// `1 + Σᵢ kᵢ^i`.
pub fn param_count(spec: &PolySpec) -> usize {
    param_count_from_dims(&spec.embed_dims)
}

/// [`param_count`] from the raw `(k₁, …, k_d)` list.
pub fn param_count_from_dims(embed_dims: &[usize]) -> usize {
    1 + embed_dims
        .iter()
        .enumerate()
        .map(|(i, &k)| k.pow(i as u32 + 1))
        .sum::<usize>()
}

/// `W₀` plus one dense row-major tensor per order. `tensors[i - 1]` holds
/// `Wᵢ` with `kᵢ^i` entries; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub w0: f64,
    pub tensors: Vec<Vec<f64>>,
}

impl Coefficients {
    pub fn zeros(spec: &PolySpec) -> Self {
        Self {
            w0: 0.0,
            tensors: spec
                .embed_dims
                .iter()
                .enumerate()
                .map(|(i, &k)| vec![0.0; k.pow(i as u32 + 1)])
                .collect(),
        }
    }

    pub fn max_order(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, order: usize) -> &[f64] {
        &self.tensors[order - 1]
    }

    pub fn tensor_mut(&mut self, order: usize) -> &mut [f64] {
        &mut self.tensors[order - 1]
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Coefficients) {
        self.w0 += a * other.w0;
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in t.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    /// `self = a·self + other`.
    pub fn scale_add(&mut self, a: f64, other: &Coefficients) {
        self.w0 = a * self.w0 + other.w0;
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in t.iter_mut().zip(o) {
                *x = a * *x + y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Coefficients {
        Coefficients {
            w0: a * self.w0,
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| a * v).collect())
                .collect(),
        }
    }

    /// Squared Frobenius norm per order, index 0 being `W₀`.
    pub fn norms_sq(&self) -> Vec<f64> {
        std::iter::once(self.w0 * self.w0)
            .chain(self.tensors.iter().map(|t| t.iter().map(|v| v * v).sum()))
            .collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norms_sq().iter().sum()
    }

    /// `Σᵢ λᵢ⟨selfᵢ, otherᵢ⟩`.
    pub fn weighted_dot(&self, other: &Coefficients, lambda: &[f64]) -> f64 {
        let mut acc = lambda[0] * self.w0 * other.w0;
        for (i, (t, o)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if lambda[i + 1] != 0.0 {
                acc += lambda[i + 1] * dot(t, o);
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Contracts `axis` of an order-`order` cube tensor of side `k` with `v`,
/// returning the order-`order − 1` result (row-major).
pub fn contract_mode(tensor: &[f64], k: usize, order: usize, axis: usize, v: &[f64]) -> Vec<f64> {
    assert!(axis < order && v.len() == k && tensor.len() == k.pow(order as u32));
    let inner = k.pow((order - 1 - axis) as u32);
    let outer = k.pow(axis as u32);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for (c, &vc) in v.iter().enumerate() {
            let src = &tensor[(o * k + c) * inner..(o * k + c + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * vc;
            }
        }
    }
    out
}

/// `sum(W ∗ v ⊗ … ⊗ v)` by repeated last-axis contraction, `O(k^order)`.
pub fn contract_full(tensor: &[f64], k: usize, order: usize, v: &[f64]) -> f64 {
    debug_assert_eq!(tensor.len(), k.pow(order as u32));
    if order == 0 {
        return tensor[0];
    }
    let mut buf: Vec<f64> = tensor
        .chunks_exact(k)
        .map(|row| dot(row, v))
        .collect();
    for _ in 1..order {
        buf = buf.chunks_exact(k).map(|row| dot(row, v)).collect();
    }
    buf[0]
}

/// Fitted polynomial: spec, coefficients, embeddings and the normalizer used
/// to produce its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    pub spec: PolySpec,
    pub coeffs: Coefficients,
    /// `reductions[i - 2]` is the map for order `i ≥ 2`; `None` iff `kᵢ = 0`.
    pub reductions: Vec<Option<ReductionMap>>,
    pub normalizer: Option<MinMaxNormalizer>,
    /// Free-form description of the feature set the model expects.
    pub feature_spec: String,
}

impl PolyModel {
    pub fn new(
        spec: PolySpec,
        coeffs: Coefficients,
        reductions: Vec<Option<ReductionMap>>,
    ) -> Result<Self> {
        check_reductions(&spec, &reductions)?;
        check_dims("PolyModel coefficient orders", spec.max_order(), coeffs.max_order())?;
        for order in 1..=spec.max_order() {
            check_dims(
                "PolyModel tensor size",
                spec.k(order).pow(order as u32),
                coeffs.tensor(order).len(),
            )?;
        }
        if !coeffs.is_finite() {
            return Err(HopsError::NonFinite {
                context: "PolyModel coefficients",
                index: 0,
            });
        }
        Ok(Self {
            spec,
            coeffs,
            reductions,
            normalizer: None,
            feature_spec: String::new(),
        })
    }

    pub fn with_normalizer(mut self, normalizer: MinMaxNormalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    pub fn with_feature_spec(mut self, name: impl Into<String>) -> Self {
        self.feature_spec = name.into();
        self
    }

    pub fn reduction(&self, order: usize) -> Option<&ReductionMap> {
        order.checked_sub(2).and_then(|i| self.reductions.get(i)).and_then(Option::as_ref)
    }

    /// Embedded input `x̃ᵢ` for one row.
    fn embed_row(&self, x: &[f64], order: usize) -> Vec<f64> {
        if order == 1 {
            return x.to_vec();
        }
        let map = self.reduction(order).expect("validated at construction");
        let l = map.embed();
        let mut out = vec![0.0; l.cols()];
        let mut src = 0;
        for (j, &xj) in x.iter().enumerate() {
            if Some(j) == self.spec.trend_column {
                continue;
            }
            for (o, &lv) in out.iter_mut().zip(l.row(src)) {
                *o += xj * lv;
            }
            src += 1;
        }
        out
    }

    /// Model value at one normalized feature row.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dims("PolyModel::evaluate input length", self.spec.input_dim, x.len())?;
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(HopsError::NonFinite {
                context: "PolyModel::evaluate input",
                index,
            });
        }
        let mut total = self.coeffs.w0;
        for order in 1..=self.spec.max_order() {
            let k = self.spec.k(order);
            if k == 0 {
                continue;
            }
            let xt = self.embed_row(x, order);
            total += contract_full(self.coeffs.tensor(order), k, order, &xt);
        }
        Ok(total)
    }

    /// Row-wise [`evaluate`](Self::evaluate). Rows are split across threads;
    /// results are assembled by row index.
    pub fn evaluate_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_dims("PolyModel::evaluate_batch columns", self.spec.input_dim, x.cols())?;
        (0..x.rows())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| self.evaluate(x.row(i)))
            .collect()
    }

    /// Applies the stored normalizer, if any, then evaluates every row.
    pub fn predict(&self, x_raw: &Matrix) -> Result<Vec<f64>> {
        match &self.normalizer {
            Some(norm) => self.evaluate_batch(&norm.apply(x_raw)?),
            None => self.evaluate_batch(x_raw),
        }
    }

    /// `Σ_p (ŷ_p − y_p)² + Σᵢ λᵢ‖Wᵢ‖_F²`.
    pub fn loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        check_dims("PolyModel::loss target length", x.rows(), y.len())?;
        let fitted = self.evaluate_batch(x)?;
        let sse: f64 = fitted.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum();
        let penalty: f64 = self
            .coeffs
            .norms_sq()
            .iter()
            .zip(self.spec.lambda())
            .map(|(n, l)| n * l)
            .sum();
        Ok(sse + penalty)
    }
}

pub(crate) fn check_reductions(spec: &PolySpec, reductions: &[Option<ReductionMap>]) -> Result<()> {
    check_dims(
        "reduction count (one per order >= 2)",
        spec.max_order().saturating_sub(1),
        reductions.len(),
    )?;
    for order in 2..=spec.max_order() {
        let k = spec.k(order);
        match (&reductions[order - 2], k) {
            (None, 0) => {}
            (Some(map), k) if k > 0 => {
                check_dims("reduction source dims", spec.higher_order_source_dims(), map.source_dims())?;
                check_dims("reduction target dim", k, map.target_dim())?;
            }
            (None, _) => {
                return Err(HopsError::InvalidParameter(format!(
                    "order {order} has k={k} but no reduction map"
                )))
            }
            (Some(_), _) => {
                return Err(HopsError::InvalidParameter(format!(
                    "order {order} is absent (k=0) but a reduction map was supplied"
                )))
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 8] = b"HOPSMODL";
const FORMAT_VERSION: u32 = 1;

/// Writes the binary model format. All integers and floats little-endian:
///
/// ```text
/// magic        8 bytes  "HOPSMODL"
/// version      u32      = 1
/// feature_spec u32 length + UTF-8 bytes
/// input_dim    u32
/// max_order d  u32
/// k_1 … k_d    d × u32
/// trend        i64      (-1 when absent)
/// lambda       (d+1) × f64
/// w0           f64
/// W_1 … W_d    for each order: u64 count, count × f64 (row-major)
/// reductions   for orders 2…d: u8 present; if 1:
///                u32 source, u32 target, 32-byte sha256, u64 rows,
///                source × target f64 (row-major)
/// normalizer   u8 present; if 1: u32 cols, cols × (f64 min, f64 max)
/// ```
pub fn write_model<W: Write>(model: &PolyModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let name = model.feature_spec.as_bytes();
    put_u32(&mut w, name.len())?;
    w.write_all(name)?;
    let spec = &model.spec;
    put_u32(&mut w, spec.input_dim)?;
    put_u32(&mut w, spec.max_order())?;
    for &k in &spec.embed_dims {
        put_u32(&mut w, k)?;
    }
    let trend = spec.trend_column.map_or(-1i64, |t| t as i64);
    w.write_all(&trend.to_le_bytes())?;
    for &l in &spec.lambda {
        w.write_all(&l.to_le_bytes())?;
    }
    w.write_all(&model.coeffs.w0.to_le_bytes())?;
    for t in &model.coeffs.tensors {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        put_f64s(&mut w, t)?;
    }
    for red in &model.reductions {
        match red {
            None => w.write_all(&[0])?,
            Some(map) => {
                w.write_all(&[1])?;
                put_u32(&mut w, map.source_dims())?;
                put_u32(&mut w, map.target_dim())?;
                w.write_all(&map.fitted_on().sha256)?;
                w.write_all(&map.fitted_on().rows.to_le_bytes())?;
                put_f64s(&mut w, map.embed().data())?;
            }
        }
    }
    match &model.normalizer {
        None => w.write_all(&[0])?,
        Some(norm) => {
            w.write_all(&[1])?;
            put_u32(&mut w, norm.mins().len())?;
            for (lo, hi) in norm.mins().iter().zip(norm.maxs()) {
                w.write_all(&lo.to_le_bytes())?;
                w.write_all(&hi.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a model written by [`write_model`].
pub fn read_model<R: Read>(mut r: R) -> Result<PolyModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(HopsError::ModelFormat("bad magic bytes".into()));
    }
    let version = get_u32(&mut r)?;
    if version != FORMAT_VERSION as usize {
        return Err(HopsError::ModelFormat(format!("unsupported version {version}")));
    }
    let name_len = get_u32(&mut r)?;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let feature_spec =
        String::from_utf8(name).map_err(|_| HopsError::ModelFormat("feature spec is not UTF-8".into()))?;
    let input_dim = get_u32(&mut r)?;
    let d = get_u32(&mut r)?;
    let embed_dims = (0..d).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
    let trend = get_i64(&mut r)?;
    let trend_column = (trend >= 0).then_some(trend as usize);
    let lambda = get_f64s(&mut r, d + 1)?;
    let spec = PolySpec::new(input_dim, embed_dims, trend_column)?.with_lambda(lambda)?;
    let w0 = get_f64(&mut r)?;
    let mut tensors = Vec::with_capacity(d);
    for order in 1..=d {
        let count = get_u64(&mut r)? as usize;
        check_dims("model file tensor size", spec.k(order).pow(order as u32), count)?;
        tensors.push(get_f64s(&mut r, count)?);
    }
    let mut reductions = Vec::new();
    for _ in 2..=d {
        if get_u8(&mut r)? == 0 {
            reductions.push(None);
            continue;
        }
        let source = get_u32(&mut r)?;
        let target = get_u32(&mut r)?;
        let mut sha256 = [0u8; 32];
        r.read_exact(&mut sha256)?;
        let rows = get_u64(&mut r)?;
        let embed = Matrix::new(source, target, get_f64s(&mut r, source * target)?)?;
        reductions.push(Some(ReductionMap::from_embedding(embed, Fingerprint { sha256, rows })?));
    }
    let normalizer = if get_u8(&mut r)? == 1 {
        let cols = get_u32(&mut r)?;
        let mut mins = Vec::with_capacity(cols);
        let mut maxs = Vec::with_capacity(cols);
        for _ in 0..cols {
            mins.push(get_f64(&mut r)?);
            maxs.push(get_f64(&mut r)?);
        }
        Some(MinMaxNormalizer::from_parts(mins, maxs)?)
    } else {
        None
    };
    let mut model = PolyModel::new(spec, Coefficients { w0, tensors }, reductions)?;
    model.normalizer = normalizer;
    model.feature_spec = feature_spec;
    Ok(model)
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| HopsError::ModelFormat(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_i64<R: Read>(r: &mut R) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dim_reduction::fit_reduction;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&PolySpec::new(47, vec![47], None).unwrap()), 48);
        assert_eq!(
            param_count(&PolySpec::new(47, vec![47, 46, 9], Some(0)).unwrap()),
            1 + 47 + 46 * 46 + 729
        );
        assert_eq!(param_count(&PolySpec::new(4, vec![4, 4], None).unwrap()), 21);
    }

    #[test]
    fn param_count_fixed_recency_dims() {
        assert_eq!(param_count_from_dims(&[47, 60, 9]), 4377);
        let spec = PolySpec::new(62, vec![62, 60, 9], Some(0)).unwrap();
        assert_eq!(param_count(&spec), 1 + 62 + 3600 + 729);
    }

    #[test]
    fn spec_validation() {
        assert!(PolySpec::new(5, vec![], None).is_err());
        assert!(PolySpec::new(5, vec![3], None).is_err());
        assert!(PolySpec::new(5, vec![5, 5], Some(0)).is_err());
        assert!(PolySpec::new(5, vec![5, 4, 0], Some(0)).is_ok());
        assert!(PolySpec::new(5, vec![5, 4], Some(5)).is_err());
    }

    #[test]
    fn constant_model() {
        let spec = PolySpec::new(3, vec![3], None).unwrap();
        let mut coeffs = Coefficients::zeros(&spec);
        coeffs.w0 = 2.5;
        let model = PolyModel::new(spec, coeffs, vec![]).unwrap();
        assert_eq!(model.evaluate(&[1.0, -4.0, 9.0]).unwrap(), 2.5);
        let x = Matrix::from_fn(4, 3, |i, j| (i * j) as f64);
        assert_eq!(model.evaluate_batch(&x).unwrap(), vec![2.5; 4]);
    }

    #[test]
    fn linear_unit_coefficient() {
        let spec = PolySpec::new(3, vec![3], None).unwrap();
        let mut coeffs = Coefficients::zeros(&spec);
        coeffs.w0 = 1.0;
        coeffs.tensor_mut(1)[1] = 1.0;
        let model = PolyModel::new(spec, coeffs, vec![]).unwrap();
        assert_eq!(model.evaluate(&[0.3, 0.7, 0.1]).unwrap(), 1.7);
    }

    #[test]
    fn contract_mode_any_axis_order() {
        let mut seed = 7;
        let k = 3;
        let t: Vec<f64> = (0..27).map(|_| lcg(&mut seed)).collect();
        let v: Vec<f64> = (0..3).map(|_| lcg(&mut seed)).collect();
        let full = contract_full(&t, k, 3, &v);
        let a = contract_mode(&t, k, 3, 0, &v);
        let b = contract_mode(&a, k, 2, 1, &v);
        let c = contract_mode(&b, k, 1, 0, &v);
        assert!((c[0] - full).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = PolySpec::new(3, vec![3], None).unwrap();
        let model = PolyModel::new(spec.clone(), Coefficients::zeros(&spec), vec![]).unwrap();
        assert!(model.evaluate(&[1.0]).is_err());
        assert!(model.loss(&Matrix::zeros(2, 3), &[1.0]).is_err());
    }

    #[test]
    fn loss_with_zero_model() {
        let spec = PolySpec::new(2, vec![2], None).unwrap();
        let model = PolyModel::new(spec.clone(), Coefficients::zeros(&spec), vec![]).unwrap();
        let x = Matrix::zeros(3, 2);
        assert_eq!(model.loss(&x, &[1.0, 2.0, 3.0]).unwrap(), 14.0);
    }

    #[test]
    fn penalty_only_on_perfect_fit() {
        let spec = PolySpec::new(1, vec![1], None)
            .unwrap()
            .with_lambda(vec![0.5, 2.0])
            .unwrap();
        let coeffs = Coefficients { w0: 1.0, tensors: vec![vec![3.0]] };
        let model = PolyModel::new(spec, coeffs, vec![]).unwrap();
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let y = [4.0, 7.0];
        assert_eq!(model.loss(&x, &y).unwrap(), 0.5 * 1.0 + 2.0 * 9.0);
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let mut seed = 11;
        let x = Matrix::from_fn(12, 4, |_, _| lcg(&mut seed));
        let spec = PolySpec::new(4, vec![4, 2, 1], Some(3))
            .unwrap()
            .with_lambda(vec![0.0, 0.1, 0.2, 0.3])
            .unwrap();
        let without_trend = x.without_column(3);
        let reductions = vec![
            Some(fit_reduction(&without_trend, 2).unwrap()),
            Some(fit_reduction(&without_trend, 1).unwrap()),
        ];
        let mut coeffs = Coefficients::zeros(&spec);
        coeffs.w0 = lcg(&mut seed);
        for t in coeffs.tensors.iter_mut() {
            for v in t.iter_mut() {
                *v = lcg(&mut seed);
            }
        }
        let model = PolyModel::new(spec, coeffs, reductions)
            .unwrap()
            .with_normalizer(MinMaxNormalizer::from_parts(vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .with_feature_spec("hops47");
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut buf2 = Vec::new();
        write_model(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(HopsError::ModelFormat(_))));
    }
}
