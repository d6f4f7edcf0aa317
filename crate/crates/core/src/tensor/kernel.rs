//! Low-level loops shared by the forward and backward passes.

/// `c (+)= op(a) · op(b)` for an `m×k` by `k×n` product. `a_t` means `a` is
/// stored as `k×m`; `b_t` means `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides above address each matrix within its own slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numpy-style broadcast of two shapes (aligned at the trailing axis).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` laid over `out`, zero on broadcast axes.
fn strides_over(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut step = 1;
    for i in (0..src.len()).rev() {
        let axis = rank - src.len() + i;
        if src[i] != 1 {
            strides[axis] = step;
        }
        step *= src[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast
/// result.
pub(crate) fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let la: usize = a.iter().product();
    let lb: usize = b.iter().product();
    if la == total && lb == total {
        for i in 0..total {
            f(i, i, i);
        }
        return;
    }
    let suffix = |s: &[usize], len: usize| {
        let trimmed: Vec<usize> = s.iter().copied().skip_while(|&d| d == 1).collect();
        trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] && len > 0
    };
    if la == total && suffix(b, lb) {
        for i in 0..total {
            f(i, i, i % lb);
        }
        return;
    }
    if lb == total && suffix(a, la) {
        for i in 0..total {
            f(i, i % la, i);
        }
        return;
    }
    let sa = strides_over(a, out);
    let sb = strides_over(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..total {
        f(i, ia, ib);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            ia += sa[axis];
            ib += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            ia -= sa[axis] * out[axis];
            ib -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

/// Copies `data` (shaped `shape`) into the axis order `axes`.
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut src_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(data[offset]);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    out
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn broadcasting_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 1]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_indices_general_case() {
        let mut seen = Vec::new();
        for_each_broadcast(&[2, 3], &[2, 1], &[1, 3], |i, a, b| seen.push((i, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        assert_eq!(permute(&data, &[2, 3], &[1, 0]), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(inverse_axes(&[2, 0, 1]), vec![1, 2, 0]);
    }
}
