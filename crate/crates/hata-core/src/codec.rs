//! Binary code packing.
//!
//! At inference the hash is the hard sign of the projection: bit b of a row's
//! code is 1 iff (x·W)[b] ≥ 0 (sign(0) counts as +1). Bits are packed
//! LSB-first into little-endian 32-bit words, words ordered by ascending bit
//! index, so codes are portable and XOR/popcount-scorable.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::trainer::HashWeights;

/// Bit-packed binary codes: `rbit` bits per row in `rbit/32` words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedCodes {
    rows: usize,
    rbit: usize,
    words: Vec<u32>,
}

impl PackedCodes {
    /// An empty code cache for rows of `rbit` bits.
    pub fn new(rbit: usize) -> Result<Self> {
        check_rbit(rbit)?;
        Ok(PackedCodes { rows: 0, rbit, words: Vec::new() })
    }

    pub fn from_words(rows: usize, rbit: usize, words: Vec<u32>) -> Result<Self> {
        check_rbit(rbit)?;
        if words.len() != rows * rbit / 32 {
            return Err(Error::Dimension {
                op: "PackedCodes::from_words",
                detail: format!(
                    "{} rows × {} bits needs {} words, got {}",
                    rows,
                    rbit,
                    rows * rbit / 32,
                    words.len()
                ),
            });
        }
        Ok(PackedCodes { rows, rbit, words })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rbit(&self) -> usize {
        self.rbit
    }

    pub fn words_per_row(&self) -> usize {
        self.rbit / 32
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.words_per_row();
        &self.words[i * w..(i + 1) * w]
    }

    pub fn push_row(&mut self, words: &[u32]) -> Result<()> {
        if words.len() != self.words_per_row() {
            return Err(Error::Dimension {
                op: "PackedCodes::push_row",
                detail: format!("expected {} words, got {}", self.words_per_row(), words.len()),
            });
        }
        self.words.extend_from_slice(words);
        self.rows += 1;
        Ok(())
    }
}

fn check_rbit(rbit: usize) -> Result<()> {
    if rbit == 0 || !rbit.is_multiple_of(32) {
        return Err(Error::InvalidArgument {
            op: "PackedCodes",
            detail: format!("rbit {} must be a positive multiple of 32", rbit),
        });
    }
    Ok(())
}

/// Encodes one vector into its packed hash code.
///
/// Fused project → sign → pack; the projection accumulates in f32 in the same
/// order as `Matrix::matmul`, so the result is identical to the factored
/// `bit_pack(sign(matmul(x, W)))` path.
pub fn encode_row(x: &[f32], weights: &HashWeights) -> Result<Vec<u32>> {
    if x.len() != weights.d() {
        return Err(Error::Dimension {
            op: "encode_row",
            detail: format!("x has {} dims, W expects {}", x.len(), weights.d()),
        });
    }
    check_rbit(weights.r())?;
    let r = weights.r();
    let mut z = vec![0.0f32; r];
    project_f32(x, weights.matrix(), &mut z);
    Ok(pack_signs(&z))
}

/// Encodes every row of `x`; output has one packed code per input row.
///
/// Streams one row at a time through a reused r-length scratch buffer — no
/// intermediate s×r sign matrix is materialized.
pub fn hash_encode(x: &Matrix, weights: &HashWeights) -> Result<PackedCodes> {
    if x.cols() != weights.d() {
        return Err(Error::Dimension {
            op: "hash_encode",
            detail: format!("input has {} cols, W expects {}", x.cols(), weights.d()),
        });
    }
    check_rbit(weights.r())?;
    let r = weights.r();
    let mut codes = PackedCodes::new(r)?;
    let mut z = vec![0.0f32; r];
    for i in 0..x.rows() {
        project_f32(x.row(i), weights.matrix(), &mut z);
        codes.push_row(&pack_signs(&z))?;
    }
    Ok(codes)
}

fn project_f32(x: &[f32], w: &Matrix, z: &mut [f32]) {
    z.fill(0.0);
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        for (zb, &wb) in z.iter_mut().zip(w.row(a)) {
            *zb += xa * wb;
        }
    }
}

fn pack_signs(z: &[f32]) -> Vec<u32> {
    z.chunks_exact(32)
        .map(|chunk| {
            let mut word = 0u32;
            for (j, &v) in chunk.iter().enumerate() {
                if v >= 0.0 {
                    word |= 1 << j;
                }
            }
            word
        })
        .collect()
}

/// Packs an explicit ±1 sign matrix. Entries other than exactly ±1 are
/// rejected.
pub fn bit_pack(signs: &Matrix) -> Result<PackedCodes> {
    check_rbit(signs.cols())?;
    for (i, &v) in signs.data().iter().enumerate() {
        if v != 1.0 && v != -1.0 {
            return Err(Error::Validation(format!(
                "sign matrix entry {} is {}, expected ±1",
                i, v
            )));
        }
    }
    let mut codes = PackedCodes::new(signs.cols())?;
    for i in 0..signs.rows() {
        codes.push_row(&pack_signs(signs.row(i)))?;
    }
    Ok(codes)
}

/// Inverse of `bit_pack`: a ±1 matrix with +1 where bits are set.
pub fn bit_unpack(codes: &PackedCodes) -> Matrix {
    let mut out = Matrix::zeros(codes.rows(), codes.rbit());
    for i in 0..codes.rows() {
        let row = out.row_mut(i);
        for (w, &word) in codes.row(i).iter().enumerate() {
            for j in 0..32 {
                row[w * 32 + j] = if word >> j & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
    }
    out
}

/// sign(x) with sign(0) = +1, as a ±1 matrix.
pub fn sign_matrix(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if *v >= 0.0 { 1.0 } else { -1.0 };
    }
    out
}
