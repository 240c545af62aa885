//! Complex 2-D convolution kernels (im2col + GEMM) shared by the tape primitives.

use super::tensor::C64;

/// Kernel extent, stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    /// Odd square kernel with "same" padding along both axes.
    pub fn same(k: usize, stride: (usize, usize)) -> Self {
        Self {
            kh: k,
            kw: k,
            sh: stride.0,
            sw: stride.1,
            ph: (k - 1) / 2,
            pw: (k - 1) / 2,
        }
    }

    /// Output extent of the forward convolution for an `h × w` input.
    pub fn out_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hh = h + 2 * self.ph;
        let ww = w + 2 * self.pw;
        if hh < self.kh || ww < self.kw {
            return None;
        }
        Some(((hh - self.kh) / self.sh + 1, (ww - self.kw) / self.sw + 1))
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Gathers patches: `cols[(c,ki,kj), (oi,oj)]`, zero outside the input.
pub(crate) fn im2col(x: &[C64], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<C64> {
    let p = ho * wo;
    let mut cols = vec![C64::new(0.0, 0.0); c * g.taps() * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.taps() + ki * g.kw + kj) * p;
                let dst = &mut cols[row..row + p];
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let src_row = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < w {
                            dst[oi * wo + oj] = src_row[jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back onto the image, accumulating.
pub(crate) fn col2im(cols: &[C64], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<C64> {
    let p = ho * wo;
    let mut x = vec![C64::new(0.0, 0.0); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.taps() + ki * g.kw + kj) * p;
                let src = &cols[row..row + p];
                for oi in 0..ho {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < w {
                            dst_row[jj as usize] += src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Strided view of a row-major or transposed matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [C64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [C64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [C64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `out (m×n, row-major) = a (m×k) · b (k×n)`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: Complex64 is repr(C) {re, im} and therefore layout-compatible with [f64; 2];
    // the strides describe matrices that lie within the given slices.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.data.as_ptr() as *const [f64; 2],
            a.rs,
            a.cs,
            b.data.as_ptr() as *const [f64; 2],
            b.rs,
            b.cs,
            [0.0, 0.0],
            out.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    out
}

pub(crate) fn conj(v: &[C64]) -> Vec<C64> {
    v.iter().map(|z| z.conj()).collect()
}

/// Forward convolution. `x: [cin,h,w]`, `w: [cout,cin,kh,kw]` → `[cout,ho,wo]`.
pub(crate) fn conv_forward(x: &[C64], cin: usize, h: usize, w: usize, weight: &[C64], cout: usize, g: &ConvGeom) -> (Vec<C64>, usize, usize) {
    let (ho, wo) = g.out_extent(h, w).expect("validated by caller");
    let cols = im2col(x, cin, h, w, g, ho, wo);
    let q = cin * g.taps();
    let p = ho * wo;
    let y = gemm(cout, q, p, MatRef::rows(weight, q), MatRef::rows(&cols, p));
    (y, ho, wo)
}

/// Returns `(grad_x, grad_w)` for [`conv_forward`] under the `∂L/∂Re + j∂L/∂Im` convention.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[C64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[C64],
    cout: usize,
    g: &ConvGeom,
    grad_y: &[C64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<C64>>, Option<Vec<C64>>) {
    let (ho, wo) = g.out_extent(h, w).expect("validated by caller");
    let q = cin * g.taps();
    let p = ho * wo;
    let gx = need_x.then(|| {
        // cols_grad = W^H · gY
        let wc = conj(weight);
        let gcols = gemm(q, cout, p, MatRef::transposed(&wc, q), MatRef::rows(grad_y, p));
        col2im(&gcols, cin, h, w, g, ho, wo)
    });
    let gw = need_w.then(|| {
        // gW = gY · cols^H
        let cols = conj(&im2col(x, cin, h, w, g, ho, wo));
        gemm(cout, p, q, MatRef::rows(grad_y, p), MatRef::transposed(&cols, p))
    });
    (gx, gw)
}

/// Transposed convolution: the adjoint geometry of a convolution from `[cout,ho,wo]` to `[cin,h,w]`.
/// `x: [cin,h,w]`, `w: [cin,cout,kh,kw]` → `[cout,ho,wo]` where `g` maps `(ho,wo) → (h,w)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_forward(x: &[C64], cin: usize, h: usize, w: usize, weight: &[C64], cout: usize, g: &ConvGeom, ho: usize, wo: usize) -> Vec<C64> {
    let q = cout * g.taps();
    let p = h * w;
    // cols (q×p) = Wᵀ (q×cin) · X (cin×p)
    let cols = gemm(q, cin, p, MatRef::transposed(weight, q), MatRef::rows(x, p));
    col2im(&cols, cout, ho, wo, g, h, w)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_backward(
    x: &[C64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[C64],
    cout: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
    grad_y: &[C64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<C64>>, Option<Vec<C64>>) {
    let q = cout * g.taps();
    let p = h * w;
    let gcols = im2col(grad_y, cout, ho, wo, g, h, w);
    let gx = need_x.then(|| {
        // gX = conj(W) (cin×q) · gcols (q×p)
        let wc = conj(weight);
        gemm(cin, q, p, MatRef::rows(&wc, q), MatRef::rows(&gcols, p))
    });
    let gw = need_w.then(|| {
        // gW = conj(X) (cin×p) · gcolsᵀ (p×q)
        let xc = conj(x);
        gemm(cin, p, q, MatRef::rows(&xc, p), MatRef::transposed(&gcols, p))
    });
    (gx, gw)
}
