//! Similarity-transform alignment of one pose onto another.
//!
//! The optimal rotation comes from the SVD of the 3x3 cross-covariance with
//! determinant correction, the optimal uniform scale from the singular-value
//! trace, and the translation from the centroids. The SVD is a one-sided
//! Jacobi iteration; the problem is 3x3, so a handful of sweeps converges to
//! machine precision.

#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: [[f64; 3]; 3],
    pub s: [f64; 3],
    pub v: [[f64; 3]; 3],
}

/// `a = u * diag(s) * v^T` with `s` sorted descending and `u`, `v` orthogonal.
pub fn svd3(a: &[[f64; 3]; 3]) -> Svd3 {
    // Work on columns: one-sided Jacobi orthogonalizes the columns of A by
    // right-multiplying rotations, accumulated into V.
    let mut w = *a;
    let mut v = identity();
    for _ in 0..60 {
        let mut off = 0.0f64;
        for p in 0..2 {
            for q in (p + 1)..3 {
                let (app, aqq, apq) = {
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..3 {
                        app += w[i][p] * w[i][p];
                        aqq += w[i][q] * w[i][q];
                        apq += w[i][p] * w[i][q];
                    }
                    (app, aqq, apq)
                };
                off = off.max(apq.abs());
                if apq.abs() <= 1e-30 {
                    continue;
                }
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (sin, cos) = theta.sin_cos();
                for i in 0..3 {
                    let wp = w[i][p];
                    let wq = w[i][q];
                    w[i][p] = cos * wp + sin * wq;
                    w[i][q] = -sin * wp + cos * wq;
                    let vp = v[i][p];
                    let vq = v[i][q];
                    v[i][p] = cos * vp + sin * vq;
                    v[i][q] = -sin * vp + cos * vq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }

    // Singular values are the column norms; sort descending.
    let mut s = [0.0f64; 3];
    for c in 0..3 {
        s[c] = (0..3).map(|i| w[i][c] * w[i][c]).sum::<f64>().sqrt();
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let mut ws = [[0.0; 3]; 3];
    let mut vs = [[0.0; 3]; 3];
    let mut ss = [0.0; 3];
    for (new, &old) in order.iter().enumerate() {
        ss[new] = s[old];
        for i in 0..3 {
            ws[i][new] = w[i][old];
            vs[i][new] = v[i][old];
        }
    }

    // U columns: normalized A-columns; complete degenerate directions to an
    // orthonormal basis.
    let mut u = [[0.0; 3]; 3];
    let s_max = ss[0].max(1e-300);
    for c in 0..3 {
        if ss[c] > 1e-14 * s_max {
            for i in 0..3 {
                u[i][c] = ws[i][c] / ss[c];
            }
        } else {
            let fill = orthonormal_completion(&u, c);
            for i in 0..3 {
                u[i][c] = fill[i];
            }
        }
    }
    Svd3 { u, s: ss, v: vs }
}

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// A unit vector orthogonal to the first `have` columns of `u`.
fn orthonormal_completion(u: &[[f64; 3]; 3], have: usize) -> [f64; 3] {
    let candidates = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for cand in candidates {
        let mut v = cand;
        for c in 0..have {
            let dot: f64 = (0..3).map(|i| v[i] * u[i][c]).sum();
            for i in 0..3 {
                v[i] -= dot * u[i][c];
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
    [0.0, 0.0, 1.0]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Result of aligning a predicted frame onto the ground truth.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Aligned prediction, `joints * 3` flat.
    pub aligned: Vec<f64>,
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub translation: [f64; 3],
    /// True when the configuration was degenerate and the alignment fell
    /// back to plain root alignment.
    pub root_fallback: bool,
}

/// Optimal similarity (or rigid, with `with_scale = false`) transform of
/// `pred` onto `gt`, both `joints * 3` flat arrays. Degenerate point sets
/// (fewer than 3 joints of effective rank < 2) fall back to root alignment.
pub fn procrustes_align(pred: &[f64], gt: &[f64], with_scale: bool) -> Alignment {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len() % 3, 0);
    let n = pred.len() / 3;

    let centroid = |pts: &[f64]| -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in pts.chunks(3) {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        for v in &mut c {
            *v /= n as f64;
        }
        c
    };
    let p_bar = centroid(pred);
    let q_bar = centroid(gt);

    // Cross-covariance of centered target against centered source and the
    // source variance.
    let mut cov = [[0.0f64; 3]; 3];
    let mut var_p = 0.0f64;
    for (p, q) in pred.chunks(3).zip(gt.chunks(3)) {
        let pc = [p[0] - p_bar[0], p[1] - p_bar[1], p[2] - p_bar[2]];
        let qc = [q[0] - q_bar[0], q[1] - q_bar[1], q[2] - q_bar[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += qc[i] * pc[j];
            }
        }
        var_p += pc.iter().map(|x| x * x).sum::<f64>();
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    var_p /= n as f64;

    let decomposition = svd3(&cov);
    let degenerate = n < 3 || var_p <= 1e-18 || decomposition.s[1] <= 1e-12 * decomposition.s[0].max(1e-300);
    if degenerate {
        // Root alignment: translate the prediction's root onto the target's.
        let shift = [gt[0] - pred[0], gt[1] - pred[1], gt[2] - pred[2]];
        let aligned = pred
            .chunks(3)
            .flat_map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
            .collect();
        return Alignment {
            aligned,
            rotation: identity(),
            scale: 1.0,
            translation: shift,
            root_fallback: true,
        };
    }

    let Svd3 { u, s, v } = decomposition;
    let flip = det3(&u) * det3(&v) < 0.0;
    let d_sign = if flip { -1.0 } else { 1.0 };
    // R = U * diag(1, 1, sign) * V^T.
    let mut rotation = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                let dk = if k == 2 { d_sign } else { 1.0 };
                acc += u[i][k] * dk * v[j][k];
            }
            rotation[i][j] = acc;
        }
    }
    let trace_ds = s[0] + s[1] + d_sign * s[2];
    let scale = if with_scale { trace_ds / var_p } else { 1.0 };
    let rotate = |p: &[f64]| -> [f64; 3] {
        [
            rotation[0][0] * p[0] + rotation[0][1] * p[1] + rotation[0][2] * p[2],
            rotation[1][0] * p[0] + rotation[1][1] * p[1] + rotation[1][2] * p[2],
            rotation[2][0] * p[0] + rotation[2][1] * p[1] + rotation[2][2] * p[2],
        ]
    };
    let rp_bar = rotate(&p_bar);
    let translation = [
        q_bar[0] - scale * rp_bar[0],
        q_bar[1] - scale * rp_bar[1],
        q_bar[2] - scale * rp_bar[2],
    ];
    let aligned = pred
        .chunks(3)
        .flat_map(|p| {
            let r = rotate(p);
            [
                scale * r[0] + translation[0],
                scale * r[1] + translation[1],
                scale * r[2] + translation[2],
            ]
        })
        .collect();
    Alignment { aligned, rotation, scale, translation, root_fallback: false }
}
