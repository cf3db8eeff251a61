//! Bilinear resampling and separable Gaussian smoothing on single planes.

/// Source sampling position for output index `i` (half-pixel centers,
/// clamped at the low border).
#[inline]
fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize of a row-major `in_h x in_w` plane to `out_h x out_w`.
pub fn resize_bilinear(src: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), in_h * in_w);
    if in_h == out_h && in_w == out_w {
        return src.to_vec();
    }
    let cols: Vec<_> = (0..out_w).map(|x| source_coord(x, in_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, ly) = source_coord(y, in_h, out_h);
        let r0 = &src[y0 * in_w..(y0 + 1) * in_w];
        let r1 = &src[y1 * in_w..(y1 + 1) * in_w];
        for &(x0, x1, lx) in &cols {
            let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
            let bottom = r1[x0] * (1.0 - lx) + r1[x1] * lx;
            out.push(top * (1.0 - ly) + bottom * ly);
        }
    }
    out
}

/// Normalized sampled Gaussian with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid
/// for any offset.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn convolve_line(line: &[f64], kernel: &[f64], padded: &mut Vec<f64>, out: &mut [f64]) {
    let n = line.len();
    let radius = (kernel.len() / 2) as isize;
    padded.clear();
    padded.extend((-radius..n as isize + radius).map(|j| line[reflect(j, n)]));
    for (o, window) in out.iter_mut().zip(padded.windows(kernel.len())) {
        let mut acc = 0.0;
        for (&w, &v) in kernel.iter().zip(window) {
            acc += w * v;
        }
        *o = acc;
    }
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let kernel = gaussian_kernel(sigma);
    let mut padded = Vec::new();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        convolve_line(&src[y * w..(y + 1) * w], &kernel, &mut padded, &mut tmp[y * w..(y + 1) * w]);
    }
    let mut out = vec![0.0; h * w];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        convolve_line(&col, &kernel, &mut padded, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}
