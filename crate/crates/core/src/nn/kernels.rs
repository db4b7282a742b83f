//! Dense kernels. Parallel variants split work by output row, so every output
//! element is accumulated in the same order regardless of thread count.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `[m, k] x [k, n] -> [m, n]`
pub fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(r, out_row): (usize, &mut [f64])| {
        let a_row = &a[r * k..(r + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else if n > 0 {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `[m, n] x [k, n]^T -> [m, k]`
pub fn gemm_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    let row = |(r, out_row): (usize, &mut [f64])| {
        let a_row = &a[r * n..(r + 1) * n];
        for (i, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[i * n..(i + 1) * n];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 0 {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else if k > 0 {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `[m, k]^T x [m, n] -> [k, n]`
pub fn gemm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm(&transpose(a, m, k), b, k, m, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }
    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }
    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
    fn in_len(&self) -> usize {
        self.c_in * self.height * self.width
    }
    fn out_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    /// Column matrix `[c_in * k * k, out_h * out_w]` for one sample.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.kernel);
        let mut cols = vec![0.0; self.patch_len() * oh * ow];
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let iy = y + ky;
                        if iy < self.pad || iy >= self.height + self.pad {
                            continue;
                        }
                        let iy = iy - self.pad;
                        for xo in 0..ow {
                            let ix = xo + kx;
                            if ix < self.pad || ix >= self.width + self.pad {
                                continue;
                            }
                            dst[y * ow + xo] = x[(ci * self.height + iy) * self.width + ix - self.pad];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.kernel);
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let iy = y + ky;
                        if iy < self.pad || iy >= self.height + self.pad {
                            continue;
                        }
                        let iy = iy - self.pad;
                        for xo in 0..ow {
                            let ix = xo + kx;
                            if ix < self.pad || ix >= self.width + self.pad {
                                continue;
                            }
                            dx[(ci * self.height + iy) * self.width + ix - self.pad] += src[y * ow + xo];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (in_len, out_len, hw) = (g.in_len(), g.out_len(), g.out_h() * g.out_w());
    let mut out = vec![0.0; g.batch * out_len];
    out.par_chunks_mut(out_len.max(1))
        .enumerate()
        .for_each(|(b, out_b)| {
            let cols = g.im2col(&x[b * in_len..(b + 1) * in_len]);
            let y = gemm(w, &cols, g.c_out, g.patch_len(), hw);
            out_b.copy_from_slice(&y);
            if let Some(bias) = bias {
                for (co, chunk) in out_b.chunks_mut(hw).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[co]);
                }
            }
        });
    out
}

/// Returns `(dx, dw, dbias)`.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (in_len, out_len, hw, pl) = (g.in_len(), g.out_len(), g.out_h() * g.out_w(), g.patch_len());
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let dyb = &dy[b * out_len..(b + 1) * out_len];
            let cols = g.im2col(xb);
            // dW_b = dy_b [c_out, hw] x cols^T [hw, pl]
            let dw = gemm_bt(dyb, &cols, g.c_out, hw, pl);
            // dcols = W^T [pl, c_out] x dy_b [c_out, hw]
            let dcols = gemm_at(w, dyb, g.c_out, pl, hw);
            let mut dx = vec![0.0; in_len];
            g.col2im(&dcols, &mut dx);
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(g.batch * in_len);
    let mut dw = vec![0.0; g.c_out * pl];
    for (dxb, dwb) in &per_sample {
        dx.extend_from_slice(dxb);
        for (a, b) in dw.iter_mut().zip(dwb) {
            *a += b;
        }
    }
    let mut db = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let start = b * out_len + co * hw;
            db[co] += dy[start..start + hw].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}
