//! Dense 3D convolution kernels. Activations are `[N, C, X, Y, Z]`,
//! convolution weights `[Co, Ci, Kx, Ky, Kz]`, transposed-convolution
//! weights `[Ci, Co, Kx, Ky, Kz]`.
//!
//! Every kernel parallelizes over slices it owns exclusively (forward and
//! input-gradients per (batch, channel), weight-gradients per output
//! channel), so accumulation order is fixed and results are bit-stable
//! across thread counts.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rayon::prelude::*;

fn dims5(shape: &[usize], what: &str) -> [usize; 5] {
    assert_eq!(shape.len(), 5, "{what} must be rank 5, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3], shape[4]]
}

pub(crate) fn conv_out_dim(in_n: usize, k: usize, s: usize, p: usize) -> usize {
    assert!(in_n + 2 * p >= k, "kernel {k} exceeds padded extent {}", in_n + 2 * p);
    (in_n + 2 * p - k) / s + 1
}

pub(crate) fn tconv_out_dim(in_n: usize, k: usize, s: usize, p: usize, op: usize) -> usize {
    assert!(op < s, "output padding must be < stride");
    let full = (in_n - 1) * s + k + op;
    assert!(full > 2 * p, "padding {p} swallows transposed output");
    full - 2 * p
}

/// Valid `idx` range `[lo, hi)` within `[0, count)` such that
/// `idx*s + k - p` lands in `[0, bound)`.
fn srange(k: usize, p: usize, s: usize, bound: usize, count: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let top = bound as isize - 1 + p as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = ((top as usize) / s + 1).min(count);
    if hi <= lo {
        (0, 0)
    } else {
        (lo, hi)
    }
}

pub(crate) fn conv3d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x.shape(), "conv3d input");
    let [co, wci, kx, ky, kz] = dims5(w.shape(), "conv3d weight");
    assert_eq!(ci, wci, "conv3d channel mismatch: input {ci}, weight {wci}");
    let ox = conv_out_dim(xs, kx, stride[0], pad[0]);
    let oy = conv_out_dim(ys, ky, stride[1], pad[1]);
    let oz = conv_out_dim(zs, kz, stride[2], pad[2]);
    let osp = ox * oy * oz;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![F::zero(); n * co * osp];
    out.par_chunks_mut(osp).enumerate().for_each(|(idx, yslice)| {
        let (b, o) = (idx / co, idx % co);
        for c in 0..ci {
            let xbase = (b * ci + c) * xs * ys * zs;
            let wbase = (o * ci + c) * kx * ky * kz;
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], xs, ox);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], ys, oy);
                    for dkz in 0..kz {
                        let wv = wd[wbase + (dkx * ky + dky) * kz + dkz];
                        if wv == F::zero() {
                            continue;
                        }
                        let (lz, hz) = srange(dkz, pad[2], stride[2], zs, oz);
                        if lz == hz {
                            continue;
                        }
                        // nonnegative by construction of the range
                        let iz0 = lz * stride[2] + dkz - pad[2];
                        for a in lx..hx {
                            let ix = a * stride[0] + dkx - pad[0];
                            for bb in ly..hy {
                                let iy = bb * stride[1] + dky - pad[1];
                                let xrow = xbase + (ix * ys + iy) * zs;
                                let yrow = (a * oy + bb) * oz;
                                let mut iz = iz0;
                                for cz in lz..hz {
                                    yslice[yrow + cz] += wv * xd[xrow + iz];
                                    iz += stride[2];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, co, ox, oy, oz], out)
}

pub(crate) fn conv3d_backward_input<F: Scalar>(
    dy: &Tensor<F>,
    w: &Tensor<F>,
    x_shape: &[usize],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x_shape, "conv3d input");
    let [co, _, kx, ky, kz] = dims5(w.shape(), "conv3d weight");
    let [_, _, ox, oy, oz] = dims5(dy.shape(), "conv3d output grad");
    let isp = xs * ys * zs;
    let dyd = dy.data();
    let wd = w.data();
    let mut dx = vec![F::zero(); n * ci * isp];
    dx.par_chunks_mut(isp).enumerate().for_each(|(idx, xslice)| {
        let (b, c) = (idx / ci, idx % ci);
        for o in 0..co {
            let ybase = (b * co + o) * ox * oy * oz;
            let wbase = (o * ci + c) * kx * ky * kz;
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], xs, ox);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], ys, oy);
                    for dkz in 0..kz {
                        let wv = wd[wbase + (dkx * ky + dky) * kz + dkz];
                        if wv == F::zero() {
                            continue;
                        }
                        let (lz, hz) = srange(dkz, pad[2], stride[2], zs, oz);
                        if lz == hz {
                            continue;
                        }
                        let iz0 = lz * stride[2] + dkz - pad[2];
                        for a in lx..hx {
                            let ix = a * stride[0] + dkx - pad[0];
                            for bb in ly..hy {
                                let iy = bb * stride[1] + dky - pad[1];
                                let xrow = (ix * ys + iy) * zs;
                                let yrow = ybase + (a * oy + bb) * oz;
                                let mut iz = iz0;
                                for cz in lz..hz {
                                    xslice[xrow + iz] += wv * dyd[yrow + cz];
                                    iz += stride[2];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(x_shape.to_vec(), dx)
}

pub(crate) fn conv3d_backward_weight<F: Scalar>(
    dy: &Tensor<F>,
    x: &Tensor<F>,
    w_shape: &[usize],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x.shape(), "conv3d input");
    let [co, _, kx, ky, kz] = dims5(w_shape, "conv3d weight");
    let [_, _, ox, oy, oz] = dims5(dy.shape(), "conv3d output grad");
    let wsp = ci * kx * ky * kz;
    let xd = x.data();
    let dyd = dy.data();
    let mut dw = vec![F::zero(); co * wsp];
    dw.par_chunks_mut(wsp).enumerate().for_each(|(o, wslice)| {
        for c in 0..ci {
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], xs, ox);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], ys, oy);
                    for dkz in 0..kz {
                        let (lz, hz) = srange(dkz, pad[2], stride[2], zs, oz);
                        if lz == hz {
                            continue; // gradient stays zero
                        }
                        let iz0 = lz * stride[2] + dkz - pad[2];
                        let mut acc = F::zero();
                        for b in 0..n {
                            let xbase = (b * ci + c) * xs * ys * zs;
                            let ybase = (b * co + o) * ox * oy * oz;
                            for a in lx..hx {
                                let ix = a * stride[0] + dkx - pad[0];
                                for bb in ly..hy {
                                    let iy = bb * stride[1] + dky - pad[1];
                                    let xrow = xbase + (ix * ys + iy) * zs;
                                    let yrow = ybase + (a * oy + bb) * oz;
                                    let mut iz = iz0;
                                    for cz in lz..hz {
                                        acc += dyd[yrow + cz] * xd[xrow + iz];
                                        iz += stride[2];
                                    }
                                }
                            }
                        }
                        wslice[((c * kx + dkx) * ky + dky) * kz + dkz] = acc;
                    }
                }
            }
        }
    });
    Tensor::new(w_shape.to_vec(), dw)
}

pub(crate) fn tconv3d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: [usize; 3],
    pad: [usize; 3],
    out_pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x.shape(), "tconv3d input");
    let [wci, co, kx, ky, kz] = dims5(w.shape(), "tconv3d weight");
    assert_eq!(ci, wci, "tconv3d channel mismatch: input {ci}, weight {wci}");
    let ox = tconv_out_dim(xs, kx, stride[0], pad[0], out_pad[0]);
    let oy = tconv_out_dim(ys, ky, stride[1], pad[1], out_pad[1]);
    let oz = tconv_out_dim(zs, kz, stride[2], pad[2], out_pad[2]);
    let osp = ox * oy * oz;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![F::zero(); n * co * osp];
    out.par_chunks_mut(osp).enumerate().for_each(|(idx, yslice)| {
        let (b, o) = (idx / co, idx % co);
        for c in 0..ci {
            let xbase = (b * ci + c) * xs * ys * zs;
            let wbase = (c * co + o) * kx * ky * kz;
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], ox, xs);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], oy, ys);
                    for dkz in 0..kz {
                        let wv = wd[wbase + (dkx * ky + dky) * kz + dkz];
                        if wv == F::zero() {
                            continue;
                        }
                        let (lz, hz) = srange(dkz, pad[2], stride[2], oz, zs);
                        if lz == hz {
                            continue;
                        }
                        let oz0 = lz * stride[2] + dkz - pad[2];
                        for a in lx..hx {
                            let gx = a * stride[0] + dkx - pad[0];
                            for bb in ly..hy {
                                let gy = bb * stride[1] + dky - pad[1];
                                let xrow = xbase + (a * ys + bb) * zs;
                                let yrow = (gx * oy + gy) * oz;
                                let mut zz = oz0;
                                for cz in lz..hz {
                                    yslice[yrow + zz] += wv * xd[xrow + cz];
                                    zz += stride[2];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, co, ox, oy, oz], out)
}

pub(crate) fn tconv3d_backward_input<F: Scalar>(
    dy: &Tensor<F>,
    w: &Tensor<F>,
    x_shape: &[usize],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x_shape, "tconv3d input");
    let [_, co, kx, ky, kz] = dims5(w.shape(), "tconv3d weight");
    let [_, _, ox, oy, oz] = dims5(dy.shape(), "tconv3d output grad");
    let isp = xs * ys * zs;
    let dyd = dy.data();
    let wd = w.data();
    let mut dx = vec![F::zero(); n * ci * isp];
    dx.par_chunks_mut(isp).enumerate().for_each(|(idx, xslice)| {
        let (b, c) = (idx / ci, idx % ci);
        for o in 0..co {
            let ybase = (b * co + o) * ox * oy * oz;
            let wbase = (c * co + o) * kx * ky * kz;
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], ox, xs);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], oy, ys);
                    for dkz in 0..kz {
                        let wv = wd[wbase + (dkx * ky + dky) * kz + dkz];
                        if wv == F::zero() {
                            continue;
                        }
                        let (lz, hz) = srange(dkz, pad[2], stride[2], oz, zs);
                        if lz == hz {
                            continue;
                        }
                        let oz0 = lz * stride[2] + dkz - pad[2];
                        for a in lx..hx {
                            let gx = a * stride[0] + dkx - pad[0];
                            for bb in ly..hy {
                                let gy = bb * stride[1] + dky - pad[1];
                                let xrow = (a * ys + bb) * zs;
                                let yrow = ybase + (gx * oy + gy) * oz;
                                let mut zz = oz0;
                                for cz in lz..hz {
                                    xslice[xrow + cz] += wv * dyd[yrow + zz];
                                    zz += stride[2];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(x_shape.to_vec(), dx)
}

pub(crate) fn tconv3d_backward_weight<F: Scalar>(
    dy: &Tensor<F>,
    x: &Tensor<F>,
    w_shape: &[usize],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<F> {
    let [n, ci, xs, ys, zs] = dims5(x.shape(), "tconv3d input");
    let [_, co, kx, ky, kz] = dims5(w_shape, "tconv3d weight");
    let [_, _, ox, oy, oz] = dims5(dy.shape(), "tconv3d output grad");
    let wsp = co * kx * ky * kz;
    let xd = x.data();
    let dyd = dy.data();
    let mut dw = vec![F::zero(); ci * wsp];
    dw.par_chunks_mut(wsp).enumerate().for_each(|(c, wslice)| {
        for o in 0..co {
            for dkx in 0..kx {
                let (lx, hx) = srange(dkx, pad[0], stride[0], ox, xs);
                for dky in 0..ky {
                    let (ly, hy) = srange(dky, pad[1], stride[1], oy, ys);
                    for dkz in 0..kz {
                        let (lz, hz) = srange(dkz, pad[2], stride[2], oz, zs);
                        if lz == hz {
                            continue; // gradient stays zero
                        }
                        let oz0 = lz * stride[2] + dkz - pad[2];
                        let mut acc = F::zero();
                        for b in 0..n {
                            let xbase = (b * ci + c) * xs * ys * zs;
                            let ybase = (b * co + o) * ox * oy * oz;
                            for a in lx..hx {
                                let gx = a * stride[0] + dkx - pad[0];
                                for bb in ly..hy {
                                    let gy = bb * stride[1] + dky - pad[1];
                                    let xrow = xbase + (a * ys + bb) * zs;
                                    let yrow = ybase + (gx * oy + gy) * oz;
                                    let mut zz = oz0;
                                    for cz in lz..hz {
                                        acc += dyd[yrow + zz] * xd[xrow + cz];
                                        zz += stride[2];
                                    }
                                }
                            }
                        }
                        wslice[((o * kx + dkx) * ky + dky) * kz + dkz] = acc;
                    }
                }
            }
        }
    });
    Tensor::new(w_shape.to_vec(), dw)
}

/// Disjoint-window max pool; spatial extents must divide by the kernel.
/// Returns pooled values plus the flat input index of each window maximum.
pub(crate) fn max_pool3d_forward<F: Scalar>(
    x: &Tensor<F>,
    k: [usize; 3],
) -> (Tensor<F>, Vec<usize>) {
    let [n, c, xs, ys, zs] = dims5(x.shape(), "max_pool3d input");
    assert!(
        xs % k[0] == 0 && ys % k[1] == 0 && zs % k[2] == 0,
        "pool kernel {k:?} must divide spatial extents [{xs}, {ys}, {zs}]"
    );
    let (ox, oy, oz) = (xs / k[0], ys / k[1], zs / k[2]);
    let osp = ox * oy * oz;
    let isp = xs * ys * zs;
    let xd = x.data();
    let mut out = vec![F::zero(); n * c * osp];
    let mut arg = vec![0usize; n * c * osp];
    out.par_chunks_mut(osp)
        .zip(arg.par_chunks_mut(osp))
        .enumerate()
        .for_each(|(idx, (yslice, aslice))| {
            let ibase = idx * isp;
            for a in 0..ox {
                for bb in 0..oy {
                    for cz in 0..oz {
                        let mut best = F::neg_infinity();
                        let mut best_i = 0usize;
                        for dx in 0..k[0] {
                            let ix = a * k[0] + dx;
                            for dy in 0..k[1] {
                                let iy = bb * k[1] + dy;
                                let row = ibase + (ix * ys + iy) * zs + cz * k[2];
                                for dz in 0..k[2] {
                                    let v = xd[row + dz];
                                    if v > best {
                                        best = v;
                                        best_i = row + dz;
                                    }
                                }
                            }
                        }
                        let oi = (a * oy + bb) * oz + cz;
                        yslice[oi] = best;
                        aslice[oi] = best_i;
                    }
                }
            }
        });
    (Tensor::new(vec![n, c, ox, oy, oz], out), arg)
}

pub(crate) fn max_pool3d_backward<F: Scalar>(
    dy: &Tensor<F>,
    argmax: &[usize],
    x_shape: &[usize],
) -> Tensor<F> {
    let [n, c, xs, ys, zs] = dims5(x_shape, "max_pool3d input");
    let [_, _, ox, oy, oz] = dims5(dy.shape(), "max_pool3d output grad");
    let osp = ox * oy * oz;
    let isp = xs * ys * zs;
    let dyd = dy.data();
    let mut dx = vec![F::zero(); n * c * isp];
    dx.par_chunks_mut(isp).enumerate().for_each(|(idx, xslice)| {
        let ibase = idx * isp;
        let obase = idx * osp;
        for oi in 0..osp {
            xslice[argmax[obase + oi] - ibase] += dyd[obase + oi];
        }
    });
    Tensor::new(x_shape.to_vec(), dx)
}
