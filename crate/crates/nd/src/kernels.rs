//! Forward and backward kernels.
//!
//! Every kernel uses a fixed loop nesting so results are reproducible bit for
//! bit. The graph and the plain evaluator share these functions, which keeps
//! recorded and unrecorded forward passes identical.

use crate::{NdError, Tensor};

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> NdError {
    NdError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

/// Sum of `values` after sorting them, so the result depends only on the
/// multiset of operands and not on their order.
pub fn sorted_sum(values: &[f64]) -> f64 {
    let mut buf = values.to_vec();
    buf.sort_by(f64::total_cmp);
    buf.iter().fold(0.0, |acc, v| acc + v)
}

/// `w·x + b` for `w: [out, in]`, `b: [out]`, `x: [in]`.
pub fn dense(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NdError> {
    let (out, inp) = match *w.shape() {
        [o, i] => (o, i),
        _ => return Err(shape_err("dense", w, x)),
    };
    if x.shape() != [inp] {
        return Err(shape_err("dense", w, x));
    }
    if b.shape() != [out] {
        return Err(shape_err("dense(bias)", w, b));
    }
    let wd = w.data();
    let xd = x.data();
    let mut y = Vec::with_capacity(out);
    for o in 0..out {
        let row = &wd[o * inp..(o + 1) * inp];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(xd) {
            acc += wi * xi;
        }
        y.push(acc + b.data()[o]);
    }
    Ok(Tensor::vector(y))
}

/// Gradients of [`dense`] with respect to `(w, b, x)`.
pub fn dense_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = Tensor::zeros(x.shape());
    let dyd = dy.data();
    {
        let dwd = dw.data_mut();
        for o in 0..out {
            let g = dyd[o];
            for i in 0..inp {
                dwd[o * inp + i] = g * x.data()[i];
            }
        }
    }
    {
        let dxd = dx.data_mut();
        let wd = w.data();
        for o in 0..out {
            let g = dyd[o];
            for i in 0..inp {
                dxd[i] += wd[o * inp + i] * g;
            }
        }
    }
    (dw, dy.clone(), dx)
}

fn conv_dims(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<(usize, usize, usize, usize, usize), NdError> {
    let (co, ci, kh, kw) = match *w.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(shape_err("conv2d", w, x)),
    };
    if kh != kw || kh % 2 == 0 {
        return Err(NdError::EvenKernel { size: kh.max(kw) });
    }
    let (c, h, wd) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(shape_err("conv2d", w, x)),
    };
    if c != ci {
        return Err(shape_err("conv2d", w, x));
    }
    if b.shape() != [co] {
        return Err(shape_err("conv2d(bias)", w, b));
    }
    Ok((co, ci, kh, h, wd))
}

/// Same-padded 2-D cross-correlation. `w: [co, ci, k, k]` with odd `k`,
/// `b: [co]`, `x: [ci, h, w]`; returns `[co, h, w]`.
pub fn conv2d(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NdError> {
    let (co, ci, k, h, wid) = conv_dims(w, b, x)?;
    let pad = (k / 2) as isize;
    let hw = h * wid;
    let mut out = vec![0.0; co * hw];
    let wd = w.data();
    let xd = x.data();
    for o in 0..co {
        let orow_base = o * hw;
        out[orow_base..orow_base + hw].fill(b.data()[o]);
        for i in 0..ci {
            let plane = &xd[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(wid, dx);
                    if x0 >= x1 || y0 >= y1 {
                        continue;
                    }
                    let wv = wd[((o * ci + i) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * wid;
                        let dst = orow_base + y * wid;
                        let src_row = &plane[(src as isize + x0 as isize + dx) as usize
                            ..(src as isize + x1 as isize + dx) as usize];
                        let dst_row = &mut out[dst + x0..dst + x1];
                        for (d, s) in dst_row.iter_mut().zip(src_row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[co, h, wid], out)
}

/// Output positions `p` in `0..n` for which `p + offset` stays in bounds.
fn valid_range(n: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).min(n as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// Gradients of [`conv2d`] with respect to `(w, b, x)`.
pub fn conv2d_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (h, wid) = (x.shape()[1], x.shape()[2]);
    let pad = (k / 2) as isize;
    let hw = h * wid;
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    let mut dx = vec![0.0; x.len()];
    let wd = w.data();
    let xd = x.data();
    let gd = dy.data();
    for o in 0..co {
        let g_plane = &gd[o * hw..(o + 1) * hw];
        db[o] = g_plane.iter().fold(0.0, |a, v| a + v);
        for i in 0..ci {
            let plane = &xd[i * hw..(i + 1) * hw];
            let dplane = &mut dx[i * hw..(i + 1) * hw];
            for ky in 0..k {
                let dyo = ky as isize - pad;
                let (y0, y1) = valid_range(h, dyo);
                for kx in 0..k {
                    let dxo = kx as isize - pad;
                    let (x0, x1) = valid_range(wid, dxo);
                    if x0 >= x1 || y0 >= y1 {
                        continue;
                    }
                    let widx = ((o * ci + i) * k + ky) * k + kx;
                    let wv = wd[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = ((y as isize + dyo) as usize) * wid;
                        let lo = (src as isize + x0 as isize + dxo) as usize;
                        let hi = (src as isize + x1 as isize + dxo) as usize;
                        let g_row = &g_plane[y * wid + x0..y * wid + x1];
                        for (s, g) in plane[lo..hi].iter().zip(g_row) {
                            acc += s * g;
                        }
                        for (d, g) in dplane[lo..hi].iter_mut().zip(g_row) {
                            *d += wv * g;
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    (
        Tensor::new(w.shape(), dw).expect("shape"),
        Tensor::vector(db),
        Tensor::new(x.shape(), dx).expect("shape"),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
    if a.shape() != b.shape() {
        return Err(shape_err("sub", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape(), data)
}

/// Adds `v: [c]` to every spatial position of `x: [c, h, w]`.
pub fn add_channels(x: &Tensor, v: &Tensor) -> Result<Tensor, NdError> {
    let c = match *x.shape() {
        [c, _, _] => c,
        _ => return Err(shape_err("add_channels", x, v)),
    };
    if v.shape() != [c] {
        return Err(shape_err("add_channels", x, v));
    }
    let hw = x.len() / c.max(1);
    let mut data = x.data().to_vec();
    for (ch, plane) in data.chunks_mut(hw.max(1)).enumerate().take(c) {
        let bias = v.data()[ch];
        for p in plane {
            *p += bias;
        }
    }
    Tensor::new(x.shape(), data)
}

pub fn add_channels_backward(x_shape: &[usize], dy: &Tensor) -> Tensor {
    let c = x_shape[0];
    let hw = dy.len() / c.max(1);
    let dv = dy
        .data()
        .chunks(hw.max(1))
        .take(c)
        .map(|plane| plane.iter().fold(0.0, |a, v| a + v))
        .collect();
    Tensor::vector(dv)
}

/// Spatial mean of `x: [c, h, w]`, returning `[c]`.
pub fn mean_pool(x: &Tensor) -> Result<Tensor, NdError> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NdError::Rank {
                op: "mean_pool",
                expected: 3,
                shape: x.shape().to_vec(),
            })
        }
    };
    let hw = h * w;
    let n = hw as f64;
    let out = (0..c)
        .map(|ch| x.data()[ch * hw..(ch + 1) * hw].iter().fold(0.0, |a, v| a + v) / n)
        .collect();
    Ok(Tensor::vector(out))
}

pub fn mean_pool_backward(x_shape: &[usize], dy: &Tensor) -> Tensor {
    let hw = x_shape[1] * x_shape[2];
    let n = hw as f64;
    let mut data = Vec::with_capacity(x_shape.iter().product());
    for &g in dy.data() {
        data.extend(std::iter::repeat_n(g / n, hw));
    }
    Tensor::new(x_shape, data).expect("shape")
}

/// Concatenates `[c_i, h, w]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, NdError> {
    let first = parts.first().ok_or(NdError::Empty { op: "concat_channels" })?;
    let (h, w) = match *first.shape() {
        [_, h, w] => (h, w),
        _ => {
            return Err(NdError::Rank {
                op: "concat_channels",
                expected: 3,
                shape: first.shape().to_vec(),
            })
        }
    };
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        match *p.shape() {
            [pc, ph, pw] if ph == h && pw == w => {
                c += pc;
                data.extend_from_slice(p.data());
            }
            _ => return Err(shape_err("concat_channels", first, p)),
        }
    }
    Tensor::new(&[c, h, w], data)
}

/// Channels `start..start + len` of `x: [c, h, w]`.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor, NdError> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NdError::Rank {
                op: "slice_channels",
                expected: 3,
                shape: x.shape().to_vec(),
            })
        }
    };
    if start + len > c {
        return Err(NdError::OutOfRange {
            op: "slice_channels",
            index: start + len,
            len: c,
        });
    }
    let hw = h * w;
    Tensor::new(&[len, h, w], x.data()[start * hw..(start + len) * hw].to_vec())
}

/// Numerically stable softmax of a vector. Outputs are strictly positive
/// for finite inputs.
pub fn softmax(x: &Tensor) -> Result<Tensor, NdError> {
    if x.shape().len() != 1 {
        return Err(NdError::Rank {
            op: "softmax",
            expected: 1,
            shape: x.shape().to_vec(),
        });
    }
    let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
    let total = exps.iter().fold(0.0, |a, v| a + v);
    Ok(Tensor::vector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let dot = y.data().iter().zip(dy.data()).fold(0.0, |a, (s, g)| a + s * g);
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(s, g)| s * (g - dot))
        .collect();
    Tensor::vector(data)
}

/// Range below which [`minmax_scale`] divides by this floor instead.
pub const MINMAX_FLOOR: f64 = 1e-5;

/// `(x - min x) / (max x - min x)` over the whole tensor.
pub fn minmax_scale(x: &Tensor) -> Result<Tensor, NdError> {
    let (lo, _, hi, _) = extrema(x).ok_or(NdError::Empty { op: "minmax_scale" })?;
    let range = (hi - lo).max(MINMAX_FLOOR);
    Ok(x.map(|v| (v - lo) / range))
}

/// First positions of the minimum and maximum.
fn extrema(x: &Tensor) -> Option<(f64, usize, f64, usize)> {
    let d = x.data();
    let first = *d.first()?;
    let mut out = (first, 0, first, 0);
    for (i, &v) in d.iter().enumerate() {
        if v < out.0 {
            out.0 = v;
            out.1 = i;
        }
        if v > out.2 {
            out.2 = v;
            out.3 = i;
        }
    }
    Some(out)
}

/// Gradient of [`minmax_scale`]; the extrema are routed to their first
/// positions. A floored range is treated as constant.
pub fn minmax_scale_backward(x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let (lo, ilo, hi, ihi) = extrema(x).expect("nonempty");
    let raw = hi - lo;
    let range = raw.max(MINMAX_FLOOR);
    let mut dx = dy.map(|g| g / range);
    let (mut dlo, mut dhi) = (0.0, 0.0);
    for (g, yv) in dy.data().iter().zip(y.data()) {
        if raw >= MINMAX_FLOOR {
            dlo += g * (yv - 1.0);
            dhi -= g * yv;
        } else {
            dlo -= g;
        }
    }
    dx.data_mut()[ilo] += dlo / range;
    dx.data_mut()[ihi] += dhi / range;
    dx
}

/// `out[j] = x[index[j]]` for a vector `x`.
pub fn gather(x: &Tensor, index: &[usize]) -> Result<Tensor, NdError> {
    let n = x.len();
    let mut out = Vec::with_capacity(index.len());
    for &i in index {
        if i >= n {
            return Err(NdError::OutOfRange {
                op: "gather",
                index: i,
                len: n,
            });
        }
        out.push(x.data()[i]);
    }
    Ok(Tensor::vector(out))
}

pub fn gather_backward(x_shape: &[usize], index: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x_shape);
    for (j, &i) in index.iter().enumerate() {
        dx.data_mut()[i] += dy.data()[j];
    }
    dx
}

/// Elementwise sum of equally shaped tensors where, at every element, the
/// operands are sorted before being added. The result is a function of the
/// operand multiset, so permuting `parts` never changes a single bit.
pub fn canonical_sum(parts: &[&Tensor]) -> Result<Tensor, NdError> {
    let first = parts.first().ok_or(NdError::Empty { op: "canonical_sum" })?;
    for p in parts {
        if p.shape() != first.shape() {
            return Err(shape_err("canonical_sum", first, p));
        }
    }
    let mut buf = vec![0.0; parts.len()];
    let data = (0..first.len())
        .map(|i| {
            for (slot, p) in buf.iter_mut().zip(parts) {
                *slot = p.data()[i];
            }
            buf.sort_by(f64::total_cmp);
            buf.iter().fold(0.0, |a, v| a + v)
        })
        .collect();
    Tensor::new(first.shape(), data)
}

/// Sum of all elements, as a scalar.
pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().fold(0.0, |a, v| a + v))
}

/// Inner product with a constant tensor of the same shape.
pub fn dot(x: &Tensor, c: &Tensor) -> Result<Tensor, NdError> {
    if x.shape() != c.shape() {
        return Err(shape_err("dot", x, c));
    }
    Ok(Tensor::scalar(
        x.data().iter().zip(c.data()).fold(0.0, |a, (u, v)| a + u * v),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_kernel_rejected() {
        let w = Tensor::zeros(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        let x = Tensor::zeros(&[1, 4, 4]);
        assert!(matches!(conv2d(&w, &b, &x), Err(NdError::EvenKernel { size: 2 })));
    }

    #[test]
    fn dense_mismatch_names_both_shapes() {
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3]);
        let x = Tensor::zeros(&[4]);
        let msg = dense(&w, &b, &x).unwrap_err().to_string();
        assert!(msg.contains("[3, 2]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn dense_identity_and_constant() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::vector(vec![0.3, -1.7]);
        assert_eq!(dense(&eye, &Tensor::zeros(&[2]), &x).unwrap(), x);
        let c = Tensor::vector(vec![4.0, 5.0]);
        assert_eq!(dense(&Tensor::zeros(&[2, 2]), &c, &x).unwrap(), c);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.data_mut()[4] = 1.0; // (0,0,1,1)
        w.data_mut()[9 + 9 + 9 + 4] = 1.0; // (1,1,1,1)
        let x = Tensor::new(&[2, 3, 5], (0..30).map(|v| v as f64 * 0.1).collect()).unwrap();
        assert_eq!(conv2d(&w, &Tensor::zeros(&[2]), &x).unwrap(), x);
    }

    #[test]
    fn softmax_edge_cases() {
        let u = softmax(&Tensor::vector(vec![0.7; 4])).unwrap();
        assert!(u.data().iter().all(|&p| p == 0.25));
        let logits = [1f64, 2.0, 3.0, 4.0].map(f64::ln).to_vec();
        let a = softmax(&Tensor::vector(logits.clone())).unwrap();
        let b = softmax(&Tensor::vector(logits.iter().map(|v| v + 12.5).collect())).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.data()[3] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn relu_of_nonnegative_is_identity() {
        let x = Tensor::vector(vec![0.0, 1.5, 3.0]);
        assert_eq!(relu(&x), x);
    }

    #[test]
    fn canonical_sum_ignores_operand_order() {
        let a = Tensor::vector(vec![1e16, 0.1]);
        let b = Tensor::vector(vec![1.0, 0.2]);
        let c = Tensor::vector(vec![-1e16, 0.3]);
        let s1 = canonical_sum(&[&a, &b, &c]).unwrap();
        let s2 = canonical_sum(&[&c, &a, &b]).unwrap();
        assert_eq!(s1.data(), s2.data());
    }

    #[test]
    fn valid_range_clips_offsets() {
        assert_eq!(valid_range(5, -1), (1, 5));
        assert_eq!(valid_range(5, 1), (0, 4));
        assert_eq!(valid_range(5, 0), (0, 5));
        assert_eq!(valid_range(1, 2), (0, 0));
    }
}
