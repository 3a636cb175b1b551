//! Forward and reverse passes of the two architectures.
//!
//! Activations are stored channel-major: `a1[(f * T + t) * C + c]`,
//! `z2[g * T + t]`, `p3[g * T1 + u]`, `a4[g * T1 + u]`, `z5[h * T1 + u]`,
//! `flat[h * T2 + v]`.

use super::{ArchitectureKind, EmbedderParams, Gradients};

pub(super) enum Cache {
    Linear,
    Conv {
        a1: Vec<f64>,
        z2: Vec<f64>,
        p3: Vec<f64>,
        a4: Vec<f64>,
        z5: Vec<f64>,
        flat: Vec<f64>,
    },
}

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

fn dense_forward(w: &[f64], b: &[f64], input: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    b.iter()
        .enumerate()
        .map(|(e, &bias)| {
            let row = &w[e * n_in..(e + 1) * n_in];
            bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect()
}

pub(super) fn forward(params: &EmbedderParams, x: &[f64]) -> (Vec<f64>, Cache) {
    let arch = params.arch();
    let p = params.tensors();
    match arch.kind {
        ArchitectureKind::Linear => (dense_forward(&p[0].data, &p[1].data, x), Cache::Linear),
        ArchitectureKind::MiniConv => {
            let (t_len, c_len) = (arch.time_steps, arch.channels);
            let cs = &arch.conv;
            let (f1, dm, f2) = (cs.f1, cs.depth_mult, cs.f2);
            let g_len = f1 * dm;
            let (t1, t2) = arch.pooled_lengths();
            let (w1, w2, b2, w4, w5, b5, w7, b7) = (
                &p[0].data, &p[1].data, &p[2].data, &p[3].data, &p[4].data, &p[5].data, &p[6].data, &p[7].data,
            );

            // Temporal convolution, same padding.
            let kt = cs.temporal_kernel;
            let pad1 = (kt - 1) / 2;
            let mut a1 = vec![0.0; f1 * t_len * c_len];
            for f in 0..f1 {
                for k in 0..kt {
                    let w = w1[f * kt + k];
                    for t in 0..t_len {
                        let src = t + k;
                        if src < pad1 || src - pad1 >= t_len {
                            continue;
                        }
                        let src = src - pad1;
                        let dst = &mut a1[(f * t_len + t) * c_len..(f * t_len + t + 1) * c_len];
                        let xs = &x[src * c_len..(src + 1) * c_len];
                        for (d, s) in dst.iter_mut().zip(xs) {
                            *d += w * s;
                        }
                    }
                }
            }

            // Depthwise spatial convolution over all channels.
            let mut z2 = vec![0.0; g_len * t_len];
            for g in 0..g_len {
                let f = g / dm;
                let w = &w2[g * c_len..(g + 1) * c_len];
                for t in 0..t_len {
                    let row = &a1[(f * t_len + t) * c_len..(f * t_len + t + 1) * c_len];
                    z2[g * t_len + t] = b2[g] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }

            // ELU + average pool 1.
            let p1 = cs.pool1;
            let mut p3 = vec![0.0; g_len * t1];
            for g in 0..g_len {
                for u in 0..t1 {
                    let window = &z2[g * t_len + u * p1..g * t_len + (u + 1) * p1];
                    p3[g * t1 + u] = window.iter().map(|&z| elu(z)).sum::<f64>() / p1 as f64;
                }
            }

            // Depthwise temporal convolution, same padding.
            let ks = cs.sep_kernel;
            let pad2 = (ks - 1) / 2;
            let mut a4 = vec![0.0; g_len * t1];
            for g in 0..g_len {
                for u in 0..t1 {
                    let mut acc = 0.0;
                    for k in 0..ks {
                        let src = u + k;
                        if src >= pad2 && src - pad2 < t1 {
                            acc += w4[g * ks + k] * p3[g * t1 + src - pad2];
                        }
                    }
                    a4[g * t1 + u] = acc;
                }
            }

            // Pointwise convolution.
            let mut z5 = vec![0.0; f2 * t1];
            for h in 0..f2 {
                for u in 0..t1 {
                    z5[h * t1 + u] = b5[h];
                }
                for g in 0..g_len {
                    let w = w5[h * g_len + g];
                    for u in 0..t1 {
                        z5[h * t1 + u] += w * a4[g * t1 + u];
                    }
                }
            }

            // ELU + average pool 2, flattened map-major.
            let p2 = cs.pool2;
            let mut flat = vec![0.0; f2 * t2];
            for h in 0..f2 {
                for v in 0..t2 {
                    let window = &z5[h * t1 + v * p2..h * t1 + (v + 1) * p2];
                    flat[h * t2 + v] = window.iter().map(|&z| elu(z)).sum::<f64>() / p2 as f64;
                }
            }

            let out = dense_forward(w7, b7, &flat);
            (out, Cache::Conv { a1, z2, p3, a4, z5, flat })
        }
    }
}

fn dense_backward(w: &[f64], input: &[f64], g_out: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let n_in = input.len();
    let mut g_in = vec![0.0; n_in];
    for (e, &go) in g_out.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        gb[e] += go;
        let row = &w[e * n_in..(e + 1) * n_in];
        let grow = &mut gw[e * n_in..(e + 1) * n_in];
        for i in 0..n_in {
            grow[i] += go * input[i];
            g_in[i] += go * row[i];
        }
    }
    g_in
}

/// Accumulates d(g_out . f(x))/d(params) into `grads`.
pub(super) fn backward(params: &EmbedderParams, x: &[f64], cache: &Cache, g_out: &[f64], grads: &mut Gradients) {
    let arch = params.arch();
    let p = params.tensors();
    match cache {
        Cache::Linear => {
            let (gw, gb) = grads.split_at_mut(1);
            dense_backward(&p[0].data, x, g_out, &mut gw[0], &mut gb[0]);
        }
        Cache::Conv { a1, z2, p3, a4, z5, flat } => {
            let (t_len, c_len) = (arch.time_steps, arch.channels);
            let cs = &arch.conv;
            let (f1, dm, f2) = (cs.f1, cs.depth_mult, cs.f2);
            let g_len = f1 * dm;
            let (t1, t2) = arch.pooled_lengths();
            let (w2, w4, w5, w7) = (&p[1].data, &p[3].data, &p[4].data, &p[6].data);
            let [g1, g2, gb2, g4, g5, gb5, g7, gb7] = &mut grads[..] else {
                unreachable!("miniconv has eight tensors");
            };

            let g_flat = dense_backward(w7, flat, g_out, g7, gb7);

            // Through pool 2 and ELU.
            let p2 = cs.pool2;
            let mut gz5 = vec![0.0; f2 * t1];
            for h in 0..f2 {
                for v in 0..t2 {
                    let g = g_flat[h * t2 + v] / p2 as f64;
                    for j in 0..p2 {
                        let idx = h * t1 + v * p2 + j;
                        gz5[idx] = g * elu_grad(z5[idx]);
                    }
                }
            }

            // Pointwise.
            let mut ga4 = vec![0.0; g_len * t1];
            for h in 0..f2 {
                let gz = &gz5[h * t1..(h + 1) * t1];
                gb5[h] += gz.iter().sum::<f64>();
                for g in 0..g_len {
                    let act = &a4[g * t1..(g + 1) * t1];
                    g5[h * g_len + g] += gz.iter().zip(act).map(|(a, b)| a * b).sum::<f64>();
                    let w = w5[h * g_len + g];
                    for (dst, &src) in ga4[g * t1..(g + 1) * t1].iter_mut().zip(gz) {
                        *dst += w * src;
                    }
                }
            }

            // Depthwise temporal.
            let ks = cs.sep_kernel;
            let pad2 = (ks - 1) / 2;
            let mut gp3 = vec![0.0; g_len * t1];
            for g in 0..g_len {
                for u in 0..t1 {
                    let go = ga4[g * t1 + u];
                    if go == 0.0 {
                        continue;
                    }
                    for k in 0..ks {
                        let src = u + k;
                        if src >= pad2 && src - pad2 < t1 {
                            let s = g * t1 + src - pad2;
                            g4[g * ks + k] += go * p3[s];
                            gp3[s] += go * w4[g * ks + k];
                        }
                    }
                }
            }

            // Through pool 1 and ELU.
            let p1 = cs.pool1;
            let mut gz2 = vec![0.0; g_len * t_len];
            for g in 0..g_len {
                for u in 0..t1 {
                    let go = gp3[g * t1 + u] / p1 as f64;
                    for j in 0..p1 {
                        let idx = g * t_len + u * p1 + j;
                        gz2[idx] = go * elu_grad(z2[idx]);
                    }
                }
            }

            // Depthwise spatial.
            let mut ga1 = vec![0.0; f1 * t_len * c_len];
            for g in 0..g_len {
                let f = g / dm;
                let w = &w2[g * c_len..(g + 1) * c_len];
                for t in 0..t_len {
                    let go = gz2[g * t_len + t];
                    if go == 0.0 {
                        continue;
                    }
                    gb2[g] += go;
                    let base = (f * t_len + t) * c_len;
                    for c in 0..c_len {
                        g2[g * c_len + c] += go * a1[base + c];
                        ga1[base + c] += go * w[c];
                    }
                }
            }

            // Temporal.
            let kt = cs.temporal_kernel;
            let pad1 = (kt - 1) / 2;
            for f in 0..f1 {
                for k in 0..kt {
                    let mut acc = 0.0;
                    for t in 0..t_len {
                        let src = t + k;
                        if src < pad1 || src - pad1 >= t_len {
                            continue;
                        }
                        let src = src - pad1;
                        let ga = &ga1[(f * t_len + t) * c_len..(f * t_len + t + 1) * c_len];
                        let xs = &x[src * c_len..(src + 1) * c_len];
                        acc += ga.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    }
                    g1[f * kt + k] += acc;
                }
            }
        }
    }
}
