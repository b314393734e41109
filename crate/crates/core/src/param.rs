//! Flat parameter storage shared by every optimizer.
//!
//! A [`ParameterVector`] is one contiguous `Vec<f64>` plus a [`Layout`] that
//! names the per-layer views living inside it. Optimizers only ever see the
//! flat vector; the layer structure is consulted by the network code.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"NGHFPARM";
const CHECKPOINT_VERSION: u32 = 1;

/// A named, row-major matrix view into the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerView {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerView {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered set of views that tile `0..total_len` without gaps or overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    views: Vec<LayerView>,
    total_len: usize,
}

impl Layout {
    pub fn new(views: Vec<LayerView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Layout("layout has no views".into()));
        }
        for v in &views {
            if v.rows == 0 || v.cols == 0 {
                return Err(Error::Layout(format!("view `{}` has a zero dimension", v.name)));
            }
        }
        let mut sorted: Vec<&LayerView> = views.iter().collect();
        sorted.sort_by_key(|v| v.offset);
        let mut cursor = 0;
        for v in sorted {
            if v.offset < cursor {
                return Err(Error::Layout(format!("view `{}` overlaps its predecessor", v.name)));
            }
            if v.offset > cursor {
                return Err(Error::Layout(format!(
                    "gap before view `{}` ({} unassigned entries)",
                    v.name,
                    v.offset - cursor
                )));
            }
            cursor = v.offset + v.len();
        }
        Ok(Self { views, total_len: cursor })
    }

    /// Packs `(name, rows, cols)` shapes back to back.
    pub fn from_shapes<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Result<Self> {
        let mut offset = 0;
        let views = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let v = LayerView { name: name.into(), offset, rows, cols };
                offset += rows * cols;
                v
            })
            .collect();
        Self::new(views)
    }

    /// A single `n × 1` view; used for plain vectors that have no layer structure.
    pub fn flat(n: usize) -> Self {
        Self::from_shapes([("flat", n, 1)]).expect("flat layout with n ≥ 1")
    }

    pub fn views(&self) -> &[LayerView] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&LayerView> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn len(&self) -> usize {
        self.total_len
    }

    pub fn is_empty(&self) -> bool {
        self.total_len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Each entry uniform in `±1/sqrt(cols)` of its view.
    UniformFanIn,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch { expected: layout.len(), actual: values.len() });
        }
        Ok(Self { values, layout })
    }

    /// Convenience for layout-free vectors (solver tests, dense systems).
    /// Panics on an empty vector.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::flat(values.len()));
        Self { values, layout }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn view(&self, name: &str) -> Option<&[f64]> {
        self.layout.view(name).map(|v| &self.values[v.range()])
    }

    /// Same layout, new values. Used when an operator produces a fresh vector.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn check_same_layout(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout {
            Ok(())
        } else {
            Err(Error::LayoutMismatch { expected: self.len(), actual: other.len() })
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { values: self.values.iter().map(|x| a * x).collect(), layout: self.layout.clone() }
    }

    /// In-place `self += a·x`.
    pub fn add_scaled(&mut self, a: f64, x: &Self) -> Result<()> {
        self.check_same_layout(x)?;
        for (s, xi) in self.values.iter_mut().zip(&x.values) {
            *s += a * xi;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.values, &self.values).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.views.len() as u32).to_le_bytes())?;
        for v in &self.layout.views {
            let name = v.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            for n in [v.offset, v.rows, v.cols] {
                w.write_all(&(n as u64).to_le_bytes())?;
            }
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for x in &self.values {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let nviews = read_u32(&mut r)? as usize;
        let mut views = Vec::with_capacity(nviews);
        for _ in 0..nviews {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("view name is not UTF-8".into()))?;
            let offset = read_u64(&mut r)? as usize;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            views.push(LayerView { name, offset, rows, cols });
        }
        let layout = Layout::new(views)?;
        let n = read_u64(&mut r)? as usize;
        if n != layout.len() {
            return Err(Error::Checkpoint(format!("payload has {n} values, layout needs {}", layout.len())));
        }
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::from_values(Arc::new(layout), values)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// A gradient of a criterion averaged over `batch_size` utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: ParameterVector,
    pub batch_size: usize,
}

impl GradientVector {
    pub fn new(values: ParameterVector, batch_size: usize) -> Self {
        Self { values, batch_size }
    }

    /// Averages per-utterance gradients, summing in slice order.
    pub fn mean_of(parts: &[ParameterVector]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let mut acc = first.zeros_like();
        for p in parts {
            acc.add_scaled(1.0, p)?;
        }
        let inv = 1.0 / parts.len() as f64;
        Ok(Self::new(acc.scaled(inv), parts.len()))
    }
}

pub fn init_parameters(layout: Arc<Layout>, seed: u64, scheme: InitScheme) -> ParameterVector {
    let mut values = vec![0.0; layout.len()];
    if scheme == InitScheme::UniformFanIn {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in layout.views() {
            let bound = 1.0 / (v.cols as f64).sqrt();
            for x in &mut values[v.range()] {
                *x = rng.random_range(-bound..=bound);
            }
        }
    }
    ParameterVector { values, layout }
}

/// Returns `a·x + y`.
pub fn axpy(a: f64, x: &ParameterVector, y: &ParameterVector) -> Result<ParameterVector> {
    let mut out = y.clone();
    out.add_scaled(a, x)?;
    Ok(out)
}

pub fn dot(x: &ParameterVector, y: &ParameterVector) -> Result<f64> {
    x.check_same_layout(y)?;
    Ok(dot_slices(&x.values, &y.values))
}

/// Left-to-right summation; the order is fixed so results are reproducible.
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::from_flat(v.to_vec())
    }

    #[test]
    fn zeros_scheme_gives_zero_vector() {
        let layout = Arc::new(Layout::from_shapes([("w", 2, 2)]).unwrap());
        let p = init_parameters(layout, 7, InitScheme::Zeros);
        assert_eq!(p.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn init_is_deterministic() {
        let layout = Arc::new(Layout::from_shapes([("a", 3, 4), ("b", 2, 5)]).unwrap());
        let p1 = init_parameters(layout.clone(), 11, InitScheme::UniformFanIn);
        let p2 = init_parameters(layout.clone(), 11, InitScheme::UniformFanIn);
        let p3 = init_parameters(layout, 12, InitScheme::UniformFanIn);
        assert_eq!(p1.as_slice(), p2.as_slice());
        assert_ne!(p1.as_slice(), p3.as_slice());
    }

    #[test]
    fn uniform_fan_in_respects_bound() {
        let layout = Arc::new(Layout::from_shapes([("w", 100, 50)]).unwrap());
        let p = init_parameters(layout, 3, InitScheme::UniformFanIn);
        let bound = 1.0 / 50f64.sqrt();
        assert!(p.as_slice().iter().all(|x| x.abs() <= bound));
        // should actually use the interval, not collapse to zero
        assert!(p.as_slice().iter().any(|x| x.abs() > 0.5 * bound));
    }

    #[test]
    fn overlapping_views_are_rejected() {
        let views = vec![
            LayerView { name: "a".into(), offset: 0, rows: 2, cols: 2 },
            LayerView { name: "b".into(), offset: 3, rows: 1, cols: 2 },
        ];
        assert!(matches!(Layout::new(views), Err(Error::Layout(_))));
        let gap = vec![
            LayerView { name: "a".into(), offset: 0, rows: 1, cols: 2 },
            LayerView { name: "b".into(), offset: 3, rows: 1, cols: 2 },
        ];
        assert!(Layout::new(gap).is_err());
        assert!(Layout::new(vec![]).is_err());
        assert!(Layout::from_shapes([("z", 0, 3)]).is_err());
    }

    #[test]
    fn axpy_examples() {
        let x = pv(&[1.0, 2.0]);
        let y = pv(&[3.0, 4.0]);
        assert_eq!(axpy(0.0, &x, &y).unwrap().as_slice(), y.as_slice());
        assert_eq!(axpy(1.0, &x, &x.zeros_like()).unwrap().as_slice(), x.as_slice());
        assert_eq!(axpy(2.0, &x, &y).unwrap().as_slice(), &[5.0, 8.0]);
        // inputs untouched
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn dot_examples() {
        let x = pv(&[1.0, 2.0]);
        assert_eq!(dot(&x, &x.zeros_like()).unwrap(), 0.0);
        assert_eq!(dot(&x, &pv(&[3.0, 4.0])).unwrap(), 11.0);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let x = pv(&[1.0, 2.0]);
        let y = pv(&[1.0, 2.0, 3.0]);
        assert!(matches!(dot(&x, &y), Err(Error::LayoutMismatch { .. })));
        assert!(axpy(1.0, &x, &y).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let layout = Arc::new(Layout::from_shapes([("layer0", 3, 5), ("layer1", 2, 4)]).unwrap());
        let mut p = init_parameters(layout, 5, InitScheme::UniformFanIn);
        p.as_mut_slice()[0] = f64::MIN_POSITIVE;
        p.as_mut_slice()[1] = -0.0;
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let q = ParameterVector::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(**q.layout(), **p.layout());
        let bits = |v: &ParameterVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ParameterVector::read_checkpoint(&b"NOTACKPTxxxx"[..]).is_err());
        let p = pv(&[1.0, 2.0]);
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParameterVector::read_checkpoint(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn bilinearity(
            x in prop::collection::vec(-10.0f64..10.0, 6),
            y in prop::collection::vec(-10.0f64..10.0, 6),
            z in prop::collection::vec(-10.0f64..10.0, 6),
            a in -5.0f64..5.0,
        ) {
            let (x, y, z) = (pv(&x), pv(&y), pv(&z));
            let lhs = dot(&axpy(a, &x, &y).unwrap(), &z).unwrap();
            let rhs = a * dot(&x, &z).unwrap() + dot(&y, &z).unwrap();
            let scale = 1.0 + lhs.abs().max(rhs.abs()) + 100.0 * (1.0 + a.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale * 10.0);
            prop_assert_eq!(dot(&x, &y).unwrap(), dot(&y, &x).unwrap());
            prop_assert!(dot(&x, &x).unwrap() >= 0.0);
        }
    }
}
