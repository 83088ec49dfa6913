//! Dense row-major `f64` tensors and the handful of kernels the mask head needs.
//!
//! Every kernel here is a pure function: it borrows its inputs and returns a
//! freshly allocated result. Summation orders are fixed, so repeated calls on
//! the same inputs are bit-identical.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Default epsilon for [`group_norm`].
pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::invalid(format!(
                "tensor rank must be 1..={MAX_RANK}, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("zero extent in dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", &dims, &[data.len()]));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), vec![value; n]).expect("valid dims")
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = dims.iter().product();
        Self::new(dims.to_vec(), (0..n).map(f).collect()).expect("valid dims")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Interprets the tensor as `C×H×W`.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.dims.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::invalid(format!(
                "expected a C×H×W tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    fn matrix(&self) -> Result<(usize, usize)> {
        match *self.dims.as_slice() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::invalid(format!("expected a matrix, got dims {:?}", self.dims))),
        }
    }

    /// Slice of the `i`-th sub-tensor along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.dims[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Sub-tensor along the leading axis as an owned tensor.
    pub fn select(&self, i: usize) -> Result<Tensor> {
        if self.rank() < 2 || i >= self.dims[0] {
            return Err(Error::invalid(format!(
                "cannot select index {i} from dims {:?}",
                self.dims
            )));
        }
        Tensor::new(self.dims[1..].to_vec(), self.outer(i).to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.dims != first.dims {
                return Err(Error::shape("stack", &first.dims, &p.dims));
            }
            data.extend_from_slice(&p.data);
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        Tensor::new(dims, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(Error::shape("add", &a.dims, &b.dims));
    }
    Ok(Tensor {
        dims: a.dims.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix()?;
    let (k2, n) = b.matrix()?;
    if k != k2 {
        return Err(Error::shape("matmul", &a.dims, &b.dims));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Stride-1 convolution with zero "same" padding.
///
/// `weight` is `O×C×k×k` with `k ∈ {1, 3}`; the output keeps the input's
/// spatial extent.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (o, wc, kh, kw) = match *weight.dims.as_slice() {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => return Err(Error::shape("conv2d", &input.dims, &weight.dims)),
    };
    if wc != c || kh != kw || !(kh == 1 || kh == 3) {
        return Err(Error::shape("conv2d", &input.dims, &weight.dims));
    }
    if bias.len() != o {
        return Err(Error::shape("conv2d bias", &weight.dims, &[bias.len()]));
    }
    let k = kh;
    let pad = (k - 1) / 2;
    let plane = h * w;
    let mut out = Vec::with_capacity(o * plane);
    for (oc, &b) in bias.iter().enumerate() {
        let mut acc = vec![b; plane];
        for ic in 0..c {
            let src = &input.data[ic * plane..(ic + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight.data[((oc * c + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // output (y, x) reads source (y + ky - pad, x + kx - pad)
                    let y_lo = pad.saturating_sub(ky);
                    let y_hi = (h + pad).saturating_sub(ky).min(h);
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (w + pad).saturating_sub(kx).min(w);
                    for y in y_lo..y_hi {
                        let sy = y + ky - pad;
                        let dst = &mut acc[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - pad..sy * w + x_hi + kx - pad];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
        out.extend_from_slice(&acc);
    }
    Tensor::new(vec![o, h, w], out)
}

/// Group normalization over `C×H×W` with biased variance.
pub fn group_norm(input: &Tensor, groups: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("group_norm affine", &[c], &[gamma.len(), beta.len()]));
    }
    let per_group = c / groups;
    let span = per_group * h * w;
    let plane = h * w;
    let mut out = vec![0.0; input.len()];
    for g in 0..groups {
        let xs = &input.data[g * span..(g + 1) * span];
        // shifting by the first element makes constant groups exact
        let pivot = xs[0];
        let n = span as f64;
        let mean = pivot + xs.iter().map(|&v| v - pivot).sum::<f64>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for ch in 0..per_group {
            let cc = g * per_group + ch;
            let base = cc * plane;
            for i in 0..plane {
                out[base + i] = gamma[cc] * ((input.data[base + i] - mean) * inv) + beta[cc];
            }
        }
    }
    Tensor::new(input.dims.clone(), out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Source sample positions for one axis under the half-pixel convention.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers and no corner alignment.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize: output extents must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = &input.data[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
                let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}
