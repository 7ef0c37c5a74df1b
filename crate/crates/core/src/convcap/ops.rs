//! Dense building blocks shared by the captioner: causal convolution,
//! weight normalization, softmax attention.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("matrix rows differ in length"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Convolution taps laid out `[tap][in][out]`; tap `width − 1` reads the
/// current position, tap `width − 1 − k` reads `k` steps back.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub width: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, d_in: usize, d_out: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::validation("kernel width must be at least 1"));
        }
        if data.len() != width * d_in * d_out {
            return Err(Error::validation(format!(
                "kernel {width}x{d_in}x{d_out} needs {} taps, got {}",
                width * d_in * d_out,
                data.len()
            )));
        }
        Ok(Self {
            width,
            d_in,
            d_out,
            data,
        })
    }
}

pub(crate) fn conv_into(
    x: &[f64],
    len: usize,
    d_in: usize,
    kernel: &[f64],
    width: usize,
    d_out: usize,
    out: &mut [f64],
) {
    for t in 0..len {
        let row = &mut out[t * d_out..(t + 1) * d_out];
        for j in 0..width {
            let back = width - 1 - j;
            if back > t {
                continue;
            }
            let src = &x[(t - back) * d_in..(t - back + 1) * d_in];
            for (d, &xv) in src.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let taps = &kernel[(j * d_in + d) * d_out..(j * d_in + d + 1) * d_out];
                for (o, &k) in row.iter_mut().zip(taps) {
                    *o += k * xv;
                }
            }
        }
    }
}

/// Causal convolution with zero left-padding: output row `t` only sees
/// input rows `≤ t`.
pub fn masked_conv(inputs: &Matrix, kernel: &Kernel) -> Result<Matrix> {
    if inputs.cols != kernel.d_in {
        return Err(Error::validation(format!(
            "input has {} channels, kernel expects {}",
            inputs.cols, kernel.d_in
        )));
    }
    let mut out = Matrix::zeros(inputs.rows, kernel.d_out);
    conv_into(
        &inputs.data,
        inputs.rows,
        kernel.d_in,
        &kernel.data,
        kernel.width,
        kernel.d_out,
        &mut out.data,
    );
    Ok(out)
}

/// `g · v / ‖v‖`.
pub fn weight_norm(v: &[f64], g: f64) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numeric(format!("weight norm of a vector with norm {norm}")));
    }
    let scale = g / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

pub(crate) fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `mᵀ y`.
pub(crate) fn matvec_t(m: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &yr) in y.iter().enumerate().take(rows) {
        if yr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += a * yr;
        }
    }
    out
}

/// `g += u vᵀ`.
pub(crate) fn outer_acc(g: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        for (gi, vi) in g[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *gi += ur * vi;
        }
    }
}

/// Intermediate values of one attention read, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct AttentionRead {
    pub query: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// Projected keys for every cell: `key_proj · cell`.
pub(crate) fn project_cells(cells: &Matrix, key_proj: &[f64], attn_dim: usize) -> Vec<Vec<f64>> {
    (0..cells.rows)
        .map(|g| matvec(key_proj, attn_dim, cells.cols, cells.row(g)))
        .collect()
}

pub(crate) fn attend_projected(state: &[f64], query_proj: &[f64], keys: &[Vec<f64>], cells: &Matrix) -> AttentionRead {
    let attn_dim = keys.first().map_or(0, Vec::len);
    let query = matvec(query_proj, attn_dim, state.len(), state);
    let scale = 1.0 / (attn_dim as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| scale * k.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let weights = softmax(&scores);
    let mut context = vec![0.0; cells.cols];
    for (g, w) in weights.iter().enumerate() {
        for (c, v) in context.iter_mut().zip(cells.row(g)) {
            *c += w * v;
        }
    }
    AttentionRead {
        query,
        weights,
        context,
    }
}

/// Scaled dot-product attention of one state over image cells.
///
/// `query_proj` is `A × D` and `key_proj` is `A × F`; scores are
/// `(Wq s)·(Wk c_g)/√A`. Returns the weighted cell average and the weights.
pub fn attend(query: &[f64], cells: &Matrix, query_proj: &Matrix, key_proj: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if cells.rows == 0 {
        return Err(Error::validation("attention needs at least one cell"));
    }
    if query_proj.cols != query.len() || key_proj.cols != cells.cols || query_proj.rows != key_proj.rows {
        return Err(Error::validation(format!(
            "attention shapes disagree: query {}, cells {}x{}, Wq {}x{}, Wk {}x{}",
            query.len(),
            cells.rows,
            cells.cols,
            query_proj.rows,
            query_proj.cols,
            key_proj.rows,
            key_proj.cols
        )));
    }
    let keys = project_cells(cells, &key_proj.data, key_proj.rows);
    let read = attend_projected(query, &query_proj.data, &keys, cells);
    Ok((read.context, read.weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let (width, d) = (3, 2);
        let mut data = vec![0.0; width * d * d];
        for c in 0..d {
            data[((width - 1) * d + c) * d + c] = 1.0;
        }
        let k = Kernel::new(width, d, d, data).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0], vec![0.5, 6.0]]).unwrap();
        assert_eq!(masked_conv(&x, &k).unwrap(), x);
    }

    #[test]
    fn hand_convolution() {
        // taps over (t−2, t−1, t) = (0.5, 0.25, 0.25), input (1, 2, 4)
        // y0 = .25·1, y1 = .25·1 + .25·2, y2 = .5·1 + .25·2 + .25·4
        let k = Kernel::new(3, 1, 1, vec![0.5, 0.25, 0.25]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        assert_eq!(masked_conv(&x, &k).unwrap().data, vec![0.25, 0.75, 2.0]);
    }

    #[test]
    fn conv_shape_errors() {
        assert!(Kernel::new(0, 1, 1, vec![]).is_err());
        let k = Kernel::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert!(masked_conv(&Matrix::zeros(3, 3), &k).is_err());
    }

    #[test]
    fn weight_norm_cases() {
        assert_eq!(weight_norm(&[3.0, 4.0], 10.0).unwrap(), vec![6.0, 8.0]);
        assert_eq!(weight_norm(&[3.0, 4.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(weight_norm(&[0.6, 0.8], 1.0).unwrap(), vec![0.6, 0.8]);
        assert!(matches!(weight_norm(&[0.0, 0.0], 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn attention_cases() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let same = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let (ctx, w) = attend(&[0.3, -1.0], &same, &eye, &eye).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!((ctx[1] - 2.0).abs() < 1e-15);

        // √2-scaled scores: cell 0 → ln 3, cell 1 → 0
        let s = std::f64::consts::SQRT_2 * 3f64.ln();
        let cells = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let (_, w) = attend(&[s, 0.0], &cells, &eye, &eye).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);

        let one = Matrix::from_rows(&[vec![4.0, 5.0]]).unwrap();
        let (ctx, w) = attend(&[1.0, 1.0], &one, &eye, &eye).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(ctx, vec![4.0, 5.0]);

        assert!(attend(&[1.0], &one, &eye, &eye).is_err());
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, -2.0, 0.5, 700.0]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
