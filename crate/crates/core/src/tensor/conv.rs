//! im2col / col2im lowering and the matrix products behind the convolutions.

use rayon::prelude::*;

use super::Element;

/// Column-chunk width for splitting large products across threads. Chunking
/// is by a fixed width, never by thread count, so every output element is
/// reduced in the same order regardless of parallelism.
const COL_CHUNK: usize = 512;
const PAR_THRESHOLD: usize = 1 << 21;

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Operand<'a, T> {
    pub fn plain(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    /// A `rows × cols` row-major buffer read as its `cols × rows` transpose.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: true }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c (m×n) = a·b + (accumulate ? c : 0)`.
pub(crate) fn matmul<T: Element>(a: Operand<'_, T>, b: Operand<'_, T>, c: &mut [T], accumulate: bool) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "inner dimensions");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::ONE } else { T::ZERO };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::ZERO);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let a_ptr = SendPtr(a.data.as_ptr() as *mut T);
    let b_ptr = SendPtr(b.data.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    let work = m * k * n;
    let chunks = n.div_ceil(COL_CHUNK);
    let run = |chunk: usize| {
        let (a_ptr, b_ptr, c_ptr) = (a_ptr, b_ptr, c_ptr);
        let start = chunk * COL_CHUNK;
        let width = COL_CHUNK.min(n - start);
        // SAFETY: each chunk writes a disjoint column range of `c`; all
        // reads stay inside `a` and `b` whose extents were asserted above.
        unsafe {
            T::gemm_raw(
                m,
                k,
                width,
                T::ONE,
                a_ptr.0,
                rsa,
                csa,
                b_ptr.0.offset(start as isize * csb),
                rsb,
                csb,
                beta,
                c_ptr.0.add(start),
                n as isize,
                1,
            );
        }
    };
    if work >= PAR_THRESHOLD && chunks > 1 && rayon::current_num_threads() > 1 {
        (0..chunks).into_par_iter().for_each(run);
    } else {
        (0..chunks).for_each(run);
    }
}

/// Geometry of a strided convolution from `in_h × in_w` to `out_h × out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source row/column for output position `out` under kernel tap `k`.
    #[inline]
    fn source(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        (out * self.stride + k).checked_sub(self.padding).filter(|&p| p < extent)
    }

    /// Output positions `[lo, hi)` whose tap `k` lands inside `0..extent`,
    /// together with the source index of `lo`.
    #[inline]
    fn valid_span(&self, out_extent: usize, k: usize, extent: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(k).div_ceil(s);
        let reach = extent + self.padding;
        let hi = if reach > k { ((reach - k - 1) / s + 1).min(out_extent) } else { 0 };
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * s + k - self.padding)
    }
}

/// Output extent of a convolution along one axis.
pub(crate) fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub(crate) fn conv_transpose_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&v| v > 0)
}

/// Lowers `x` (`batch × channels × in_h × in_w`) into a
/// `(channels·k·k) × (batch·out_h·out_w)` column matrix.
pub(crate) fn im2col<T: Element>(x: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let area = g.out_area();
    let cols = batch * area;
    let mut out = vec![T::ZERO; g.col_rows() * cols];
    let in_area = g.in_h * g.in_w;
    out.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
        let c = row / (g.kernel * g.kernel);
        let ki = (row / g.kernel) % g.kernel;
        let kj = row % g.kernel;
        let (lo, hi, first) = g.valid_span(g.out_w, kj, g.in_w);
        for b in 0..batch {
            let src = &x[(b * g.channels + c) * in_area..][..in_area];
            let dst = &mut dst[b * area..][..area];
            for oh in 0..g.out_h {
                let Some(ih) = g.source(oh, ki, g.in_h) else {
                    continue;
                };
                let src_row = &src[ih * g.in_w..][..g.in_w];
                let dst_row = &mut dst[oh * g.out_w + lo..oh * g.out_w + hi];
                if g.stride == 1 {
                    dst_row.copy_from_slice(&src_row[first..first + (hi - lo)]);
                } else {
                    for (d, s) in dst_row.iter_mut().zip(src_row[first..].iter().step_by(g.stride)) {
                        *d = *s;
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`im2col`]: scatters columns back into a
/// `batch × channels × in_h × in_w` buffer.
pub(crate) fn col2im<T: Element>(cols: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let area = g.out_area();
    let ncols = batch * area;
    let in_area = g.in_h * g.in_w;
    let mut out = vec![T::ZERO; batch * g.channels * in_area];
    // One task per (batch, channel) plane keeps writes disjoint and the
    // accumulation order fixed.
    out.par_chunks_mut(in_area).enumerate().for_each(|(plane, dst)| {
        let b = plane / g.channels;
        let c = plane % g.channels;
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * ncols + b * area..][..area];
                let (lo, hi, first) = g.valid_span(g.out_w, kj, g.in_w);
                for oh in 0..g.out_h {
                    let Some(ih) = g.source(oh, ki, g.in_h) else {
                        continue;
                    };
                    let dst_row = &mut dst[ih * g.in_w..][..g.in_w];
                    let src_row = &src[oh * g.out_w + lo..oh * g.out_w + hi];
                    for (d, s) in dst_row[first..].iter_mut().step_by(g.stride).zip(src_row) {
                        *d += *s;
                    }
                }
            }
        }
    });
    out
}

/// `batch × channels × area` → `channels × (batch·area)`.
pub(crate) fn to_channel_major<T: Element>(x: &[T], batch: usize, channels: usize, area: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[c * batch * area + b * area..][..area].copy_from_slice(&x[(b * channels + c) * area..][..area]);
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major<T: Element>(x: &[T], batch: usize, channels: usize, area: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(b * channels + c) * area..][..area].copy_from_slice(&x[c * batch * area + b * area..][..area]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let (m, k, n) = (3, 5, 1100);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        matmul(Operand::plain(&a, m, k), Operand::plain(&b, k, n), &mut c, false);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        // a stored transposed (k×m), b stored transposed (n×k)
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![1.0; m * n];
        matmul(Operand::transposed(&at, k, m), Operand::transposed(&bt, n, k), &mut c2, true);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry { channels: 2, in_h: 5, in_w: 4, out_h: 3, out_w: 2, kernel: 3, stride: 2, padding: 1 };
        assert_eq!(conv_out(5, 3, 2, 1), Some(3));
        assert_eq!(conv_out(4, 3, 2, 1), Some(2));
        let batch = 2;
        let x: Vec<f64> = (0..batch * 2 * 20).map(|i| (i as f64 * 0.7).sin()).collect();
        let cols = im2col(&x, batch, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let back = col2im(&y, batch, &g);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_extent_rule() {
        assert_eq!(conv_transpose_out(2, 4, 2, 1), Some(4));
        assert_eq!(conv_transpose_out(16, 4, 2, 1), Some(32));
        assert_eq!(conv_transpose_out(1, 1, 1, 1), None);
    }

    fn naive_im2col(x: &[f64], batch: usize, g: &ConvGeometry) -> Vec<f64> {
        let cols = batch * g.out_area();
        let mut out = vec![0.0; g.col_rows() * cols];
        for row in 0..g.col_rows() {
            let (c, ki, kj) = (row / (g.kernel * g.kernel), (row / g.kernel) % g.kernel, row % g.kernel);
            for b in 0..batch {
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                        let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < g.in_h && (iw as usize) < g.in_w {
                            out[row * cols + b * g.out_area() + oh * g.out_w + ow] =
                                x[((b * g.channels + c) * g.in_h + ih as usize) * g.in_w + iw as usize];
                        }
                    }
                }
            }
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn im2col_matches_naive(
            channels in 1usize..3, in_h in 1usize..9, in_w in 1usize..9,
            kernel in 1usize..5, stride in 1usize..4, padding in 0usize..3, batch in 1usize..3,
        ) {
            let (Some(out_h), Some(out_w)) = (conv_out(in_h, kernel, stride, padding), conv_out(in_w, kernel, stride, padding)) else {
                return Ok(());
            };
            let g = ConvGeometry { channels, in_h, in_w, out_h, out_w, kernel, stride, padding };
            let x: Vec<f64> = (0..batch * channels * in_h * in_w).map(|i| i as f64 + 1.0).collect();
            proptest::prop_assert_eq!(im2col(&x, batch, &g), naive_im2col(&x, batch, &g));
            let y: Vec<f64> = (0..g.col_rows() * batch * g.out_area()).map(|i| (i as f64 * 0.3).cos()).collect();
            let back = col2im(&y, batch, &g);
            let lhs: f64 = naive_im2col(&x, batch, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
