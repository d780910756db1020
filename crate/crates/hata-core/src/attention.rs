//! Scaled dot-product attention for a single query.
//!
//! Both the dense and the sparse path run the same one-pass online-softmax
//! accumulator over a stream of row indices; the sparse path streams the
//! selected rows straight out of the caches (no gathered copy), and with the
//! full index set it is arithmetic-for-arithmetic the dense computation.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Head geometry: dimension and the 1/√d logit scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnHeadShape {
    pub d: usize,
    pub scale: f64,
}

impl AttnHeadShape {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument { op: "AttnHeadShape", detail: "d must be ≥ 1".into() });
        }
        Ok(AttnHeadShape { d, scale: 1.0 / (d as f64).sqrt() })
    }
}

fn check_shapes(op: &'static str, q: &[f32], keys: &Matrix, values: &Matrix) -> Result<()> {
    if keys.cols() != q.len() || values.cols() != q.len() || keys.rows() != values.rows() {
        return Err(Error::Dimension {
            op,
            detail: format!(
                "q has {} dims, keys {}x{}, values {}x{}",
                q.len(),
                keys.rows(),
                keys.cols(),
                values.rows(),
                values.cols()
            ),
        });
    }
    Ok(())
}

/// Online-softmax accumulation over the given key/value rows, in order.
/// Running max `m`, normalizer `s` and output `o` are kept in f64:
/// a new max rescales the partials by exp(m − l); otherwise the row joins
/// with weight exp(l − m).
fn attend_rows<I>(q: &[f32], keys: &Matrix, values: &Matrix, rows: I) -> Vec<f32>
where
    I: Iterator<Item = usize>,
{
    let shape = AttnHeadShape::new(q.len()).expect("validated");
    let mut m = f64::NEG_INFINITY;
    let mut s = 0.0f64;
    let mut o = vec![0.0f64; q.len()];
    for i in rows {
        let logit = shape.scale * dot64(q, keys.row(i));
        let v = values.row(i);
        if logit > m {
            let rescale = (m - logit).exp(); // 0 on the first row
            s = s * rescale + 1.0;
            for (acc, &vi) in o.iter_mut().zip(v) {
                *acc = *acc * rescale + vi as f64;
            }
            m = logit;
        } else {
            let w = (logit - m).exp();
            s += w;
            for (acc, &vi) in o.iter_mut().zip(v) {
                *acc += w * vi as f64;
            }
        }
    }
    o.iter().map(|&acc| (acc / s) as f32).collect()
}

/// Softmax(q·Kᵀ/√d)·V over the whole cache.
pub fn full_attention(q: &[f32], keys: &Matrix, values: &Matrix) -> Result<Vec<f32>> {
    check_shapes("full_attention", q, keys, values)?;
    if keys.rows() == 0 {
        return Err(Error::Empty { op: "full_attention" });
    }
    Ok(attend_rows(q, keys, values, 0..keys.rows()))
}

/// Attention restricted to the selected cache rows, which must be strictly
/// ascending and in range. Equal to full attention over the gathered rows,
/// but reads them directly from the caches in one streaming pass.
pub fn sparse_attention(
    q: &[f32],
    keys: &Matrix,
    values: &Matrix,
    idx: &[usize],
) -> Result<Vec<f32>> {
    check_shapes("sparse_attention", q, keys, values)?;
    if idx.is_empty() {
        return Err(Error::Empty { op: "sparse_attention" });
    }
    for w in idx.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument {
                op: "sparse_attention",
                detail: format!("indices must be strictly ascending, saw {} then {}", w[0], w[1]),
            });
        }
    }
    let last = *idx.last().expect("nonempty");
    if last >= keys.rows() {
        return Err(Error::IndexOutOfRange { index: last, len: keys.rows() });
    }
    Ok(attend_rows(q, keys, values, idx.iter().copied()))
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}
