//! Differentiable voxel renderer: rotate a grid by azimuth/elevation, then
//! project it orthographically along the depth axis with
//! `pixel = 1 − exp(−Σ_depth v)`.
//!
//! Grids are indexed `(d, h, w)`: depth, height (image rows) and width
//! (image columns). Rotation is about the grid center `(N−1)/2` on every
//! axis. The object is first turned by azimuth θ about the height axis,
//!
//! ```text
//! d' = d·cos θ − w·sin θ
//! w' = d·sin θ + w·cos θ
//! ```
//!
//! then tilted by elevation φ about the width axis,
//!
//! ```text
//! d' = d·cos φ − h·sin φ
//! h' = d·sin φ + h·cos φ
//! ```
//!
//! Seen from above (looking along +h), positive θ turns the object
//! counterclockwise. Each output cell pulls its value from the inverse-rotated
//! location in the input; samples outside the grid read as empty.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Edge length of the voxel grid and the rendered images.
pub const GRID: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// `floor(coord + 0.5)`; zero gradient with respect to the pose.
    Nearest,
    /// Eight-neighbor interpolation, differentiable in the pose.
    Trilinear,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Sampling::Nearest),
            "trilinear" => Ok(Sampling::Trilinear),
            other => Err(Error::Config(format!("unknown sampling `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    /// Azimuth in radians.
    pub theta: f64,
    /// Elevation in radians.
    pub phi: f64,
}

impl Pose {
    pub fn azimuth(theta: f64) -> Self {
        Pose { theta, phi: 0.0 }
    }

    pub fn new(theta: f64, phi: f64) -> Self {
        Pose { theta, phi }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    a - two_pi * ((a + PI) / two_pi).floor()
}

/// Cubic occupancy grid with values in `[0, 1]`, stored depth-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    size: usize,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(size: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != size * size * size {
            return Err(Error::DataLength {
                len: values.len(),
                shape: vec![size, size, size],
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("voxel {i} has value {v} outside [0, 1]")));
        }
        Ok(VoxelGrid { size, values })
    }

    pub fn empty(size: usize) -> Self {
        VoxelGrid {
            size,
            values: vec![0.0; size * size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.size + h) * self.size + w
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.values[self.index(d, h, w)]
    }

    pub fn set(&mut self, d: usize, h: usize, w: usize, v: f32) {
        let i = self.index(d, h, w);
        self.values[i] = v.clamp(0.0, 1.0);
    }

    /// `[1, N, N, N]` tensor view of the grid.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::new(data, &[1, self.size, self.size, self.size]).expect("cube")
    }

    /// Reads one grid out of a `[B, N, N, N]` (or `[B, 1, N, N, N]`) tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let n = *t.shape().last().unwrap_or(&0);
        let vol = n * n * n;
        let data = t.data();
        if vol == 0 || data.len() < (index + 1) * vol {
            return Err(Error::ShapeMismatch {
                op: "voxel_grid",
                lhs: t.shape().to_vec(),
                rhs: vec![index + 1, n, n, n],
            });
        }
        let values = data[index * vol..(index + 1) * vol]
            .iter()
            .map(|v| v.as_f64().clamp(0.0, 1.0) as f32)
            .collect();
        VoxelGrid::new(n, values)
    }

    /// Number of voxels strictly above `threshold`.
    pub fn occupied(&self, threshold: f32) -> usize {
        self.values.iter().filter(|&&v| v > threshold).count()
    }

    /// Intersection over union of the voxels strictly above `threshold`.
    pub fn iou(&self, other: &VoxelGrid, threshold: f32) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.values.iter().zip(&other.values) {
            let (a, b) = (a > threshold, b > threshold);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Inverse rotation and its pose derivatives for one example.
#[derive(Clone, Copy, Debug)]
struct InverseRotation {
    ct: f64,
    st: f64,
    cp: f64,
    sp: f64,
    center: f64,
}

struct Sample {
    pos: [f64; 3],
    d_theta: [f64; 3],
    d_phi: [f64; 3],
}

impl InverseRotation {
    fn new(theta: f64, phi: f64, n: usize) -> Self {
        let (theta, phi) = (wrap_angle(theta), wrap_angle(phi));
        InverseRotation {
            ct: theta.cos(),
            st: theta.sin(),
            cp: phi.cos(),
            sp: phi.sin(),
            center: (n as f64 - 1.0) / 2.0,
        }
    }

    /// Source location for output cell `(d, h, w)`.
    fn sample(&self, d: usize, h: usize, w: usize) -> Sample {
        let c = self.center;
        let (pd, ph, pw) = (d as f64 - c, h as f64 - c, w as f64 - c);
        // Undo the elevation, then the azimuth.
        let qd = pd * self.cp + ph * self.sp;
        let qh = -pd * self.sp + ph * self.cp;
        let qw = pw;
        let sd = qd * self.ct + qw * self.st;
        let sw = -qd * self.st + qw * self.ct;
        let dqd_dphi = -pd * self.sp + ph * self.cp;
        let dqh_dphi = -pd * self.cp - ph * self.sp;
        Sample {
            pos: [sd + c, qh + c, sw + c],
            d_theta: [-qd * self.st + qw * self.ct, 0.0, -qd * self.ct - qw * self.st],
            d_phi: [dqd_dphi * self.ct, dqh_dphi, -dqd_dphi * self.st],
        }
    }
}

/// `⌊x⌋` via truncation, for finite `x` within `i64` range.
fn floor_i(x: f64) -> i64 {
    let t = x as i64;
    if (t as f64) > x {
        t - 1
    } else {
        t
    }
}

/// Sample positions along one output row `(d, h, ·)`: affine in `w`.
struct Row {
    base: [f64; 3],
    step: [f64; 3],
}

impl Row {
    fn at(&self, w: usize) -> [f64; 3] {
        let w = w as f64;
        [
            self.base[0] + w * self.step[0],
            self.base[1] + w * self.step[1],
            self.base[2] + w * self.step[2],
        ]
    }
}

impl InverseRotation {
    /// Calls `f` for each output row in `(d, h)` order.
    fn for_each_row(&self, n: usize, mut f: impl FnMut(&Row)) {
        let step = [self.st, 0.0, self.ct];
        for d in 0..n {
            for h in 0..n {
                let base = self.sample(d, h, 0).pos;
                f(&Row { base, step });
            }
        }
    }
}

fn trilinear_value<T: Scalar>(grid: &[T], pos: [f64; 3], n: usize) -> f64 {
    let (d0, h0, w0) = (floor_i(pos[0]), floor_i(pos[1]), floor_i(pos[2]));
    let f = [pos[0] - d0 as f64, pos[1] - h0 as f64, pos[2] - w0 as f64];
    let ni = n as i64;
    let mut acc = 0.0;
    for (dd, wd) in [(0, 1.0 - f[0]), (1, f[0])] {
        let d = d0 + dd;
        if d < 0 || d >= ni || wd == 0.0 {
            continue;
        }
        for (dh, wh) in [(0, 1.0 - f[1]), (1, f[1])] {
            let h = h0 + dh;
            if h < 0 || h >= ni || wh == 0.0 {
                continue;
            }
            let row = ((d * ni + h) * ni) as usize;
            for (dw, ww) in [(0, 1.0 - f[2]), (1, f[2])] {
                let w = w0 + dw;
                if w < 0 || w >= ni {
                    continue;
                }
                acc += wd * wh * ww * grid[row + w as usize].as_f64();
            }
        }
    }
    acc
}

/// Eight trilinear taps: flat index (None if outside) and weight, plus the
/// partial derivative of each weight with respect to the three coordinates.
fn trilinear_taps(pos: [f64; 3], n: usize) -> [(Option<usize>, f64, [f64; 3]); 8] {
    let base = pos.map(f64::floor);
    let frac = [pos[0] - base[0], pos[1] - base[1], pos[2] - base[2]];
    let mut taps = [(None, 0.0, [0.0; 3]); 8];
    for (t, tap) in taps.iter_mut().enumerate() {
        let bits = [(t >> 2) & 1, (t >> 1) & 1, t & 1];
        let mut idx = [0i64; 3];
        let mut w1 = [0.0; 3];
        let mut dw = [0.0; 3];
        for a in 0..3 {
            idx[a] = base[a] as i64 + bits[a] as i64;
            if bits[a] == 1 {
                w1[a] = frac[a];
                dw[a] = 1.0;
            } else {
                w1[a] = 1.0 - frac[a];
                dw[a] = -1.0;
            }
        }
        let inside = idx.iter().all(|&i| i >= 0 && (i as usize) < n);
        let flat = inside.then(|| ((idx[0] as usize * n) + idx[1] as usize) * n + idx[2] as usize);
        let weight = w1[0] * w1[1] * w1[2];
        let grad = [dw[0] * w1[1] * w1[2], w1[0] * dw[1] * w1[2], w1[0] * w1[1] * dw[2]];
        *tap = (flat, weight, grad);
    }
    taps
}

fn nearest_index(pos: [f64; 3], n: usize) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let i = floor_i(pos[a] + 0.5);
        if i < 0 || i >= n as i64 {
            return None;
        }
        idx[a] = i as usize;
    }
    Some((idx[0] * n + idx[1]) * n + idx[2])
}

/// Rotates a batch of grids `[Bv, N, N, N]` by per-example poses
/// `theta: [B]`, `phi: [B]`. `Bv` is either `B` or 1 (one grid seen from `B`
/// poses). Returns `[B, N, N, N]`.
pub fn rotate_voxels<T: Scalar>(v: &Tensor<T>, theta: &Tensor<T>, phi: &Tensor<T>, mode: Sampling) -> Result<Tensor<T>> {
    let s = v.shape().to_vec();
    if s.len() != 4 || s[1] != s[2] || s[2] != s[3] {
        return Err(Error::ShapeMismatch {
            op: "rotate_voxels",
            lhs: s,
            rhs: vec![0, GRID, GRID, GRID],
        });
    }
    let (bv, n) = (s[0], s[1]);
    let b = theta.numel();
    if phi.numel() != b || (bv != b && bv != 1) {
        return Err(Error::ShapeMismatch {
            op: "rotate_voxels",
            lhs: s,
            rhs: vec![b],
        });
    }
    let vol = n * n * n;
    let rotations: Vec<InverseRotation> = theta
        .data()
        .iter()
        .zip(phi.data().iter())
        .map(|(t, p)| InverseRotation::new(t.as_f64(), p.as_f64(), n))
        .collect();
    let grid_of = move |i: usize| if bv == 1 { 0 } else { i };

    let mut out = vec![T::zero(); b * vol];
    // Nearest mode keeps the source index of every output cell for backward.
    let mut nearest = Vec::new();
    {
        let src = v.data();
        for (i, rot) in rotations.iter().enumerate() {
            let grid = &src[grid_of(i) * vol..][..vol];
            let dst = &mut out[i * vol..][..vol];
            match mode {
                Sampling::Nearest => {
                    let start = nearest.len();
                    rot.for_each_row(n, |row| {
                        for w in 0..n {
                            nearest.push(nearest_index(row.at(w), n).map_or(u32::MAX, |k| k as u32));
                        }
                    });
                    for (d, &k) in dst.iter_mut().zip(&nearest[start..]) {
                        if k != u32::MAX {
                            *d = grid[k as usize];
                        }
                    }
                }
                Sampling::Trilinear => {
                    let mut o = 0;
                    rot.for_each_row(n, |row| {
                        for w in 0..n {
                            dst[o] = T::lit(trilinear_value(grid, row.at(w), n));
                            o += 1;
                        }
                    });
                }
            }
        }
    }

    Tensor::from_op(
        out,
        &[b, n, n, n],
        match mode {
            Sampling::Nearest => "rotate_nearest",
            Sampling::Trilinear => "rotate_trilinear",
        },
        vec![v.clone(), theta.clone(), phi.clone()],
        Box::new(move |ctx| {
            let (pv, pt, pp) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
            let mut gv = pv.requires_grad().then(|| vec![T::zero(); pv.numel()]);
            let want_pose = pt.requires_grad() || pp.requires_grad();
            let mut gt = vec![T::zero(); b];
            let mut gp = vec![T::zero(); b];
            let src = pv.data();
            for (i, rot) in rotations.iter().enumerate() {
                let goff = grid_of(i) * vol;
                let g = &ctx.grad[i * vol..][..vol];
                let (mut acc_t, mut acc_p) = (0.0f64, 0.0f64);
                let mut o = 0;
                for d in 0..n {
                    for h in 0..n {
                        for w in 0..n {
                            let go = g[o];
                            o += 1;
                            if go == T::zero() {
                                continue;
                            }
                            match mode {
                                Sampling::Nearest => {
                                    let k = nearest[i * vol + o - 1];
                                    if let (Some(gv), true) = (gv.as_mut(), k != u32::MAX) {
                                        gv[goff + k as usize] += go;
                                    }
                                }
                                Sampling::Trilinear => {
                                    let sample = rot.sample(d, h, w);
                                    let mut dpos = [0.0f64; 3];
                                    for (k, wt, dw) in trilinear_taps(sample.pos, n) {
                                        let Some(k) = k else { continue };
                                        if let Some(gv) = gv.as_mut() {
                                            gv[goff + k] += go * T::lit(wt);
                                        }
                                        if want_pose {
                                            let val = src[goff + k].as_f64();
                                            for a in 0..3 {
                                                dpos[a] += val * dw[a];
                                            }
                                        }
                                    }
                                    if want_pose {
                                        let go = go.as_f64();
                                        for ((dp, dt), df) in dpos.iter().zip(&sample.d_theta).zip(&sample.d_phi) {
                                            acc_t += go * dp * dt;
                                            acc_p += go * dp * df;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gt[i] = T::lit(acc_t);
                gp[i] = T::lit(acc_p);
            }
            vec![
                gv,
                pt.requires_grad().then_some(gt),
                pp.requires_grad().then_some(gp),
            ]
        }),
    )
}

/// Orthographic projection along depth: `[B, N, N, N]` → `[B, N, N]` with
/// `pixel(h, w) = 1 − exp(−Σ_d v(d, h, w))`.
pub fn project<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "project",
            lhs: v.shape().to_vec(),
            rhs: vec![0, GRID, GRID, GRID],
        });
    }
    let s = v.shape().to_vec();
    let (b, depth, plane) = (s[0], s[1], s[2] * s[3]);
    let mut transmit = vec![T::zero(); b * plane];
    {
        let data = v.data();
        for bi in 0..b {
            let acc = &mut transmit[bi * plane..][..plane];
            for d in 0..depth {
                let slice = &data[(bi * depth + d) * plane..][..plane];
                for (a, &x) in acc.iter_mut().zip(slice) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a = (-*a).exp());
        }
    }
    let out = transmit.iter().map(|&t| T::one() - t).collect();
    Tensor::from_op(
        out,
        &[b, s[2], s[3]],
        "project",
        vec![v.clone()],
        Box::new(move |ctx| {
            // ∂pixel/∂v = exp(−Σ_d v)
            let mut g = vec![T::zero(); b * depth * plane];
            for bi in 0..b {
                let gt: Vec<T> = ctx.grad[bi * plane..][..plane]
                    .iter()
                    .zip(&transmit[bi * plane..][..plane])
                    .map(|(&g, &t)| g * t)
                    .collect();
                for d in 0..depth {
                    g[(bi * depth + d) * plane..][..plane].copy_from_slice(&gt);
                }
            }
            vec![Some(g)]
        }),
    )
}

/// Rotate then project. See [`rotate_voxels`] for the batch conventions.
pub fn render<T: Scalar>(v: &Tensor<T>, theta: &Tensor<T>, phi: &Tensor<T>, mode: Sampling) -> Result<Tensor<T>> {
    project(&rotate_voxels(v, theta, phi, mode)?)
}

/// Renders a single grid `[1, N, N, N]` at a fixed pose, returning `[N, N]`.
pub fn render_pose<T: Scalar>(v: &Tensor<T>, pose: Pose, mode: Sampling) -> Result<Tensor<T>> {
    let theta = Tensor::new(vec![T::lit(pose.theta)], &[1])?;
    let phi = Tensor::new(vec![T::lit(pose.phi)], &[1])?;
    let n = *v.shape().last().unwrap_or(&0);
    let img = render(&v.reshape(&[1, n, n, n])?, &theta, &phi, mode)?;
    img.reshape(&[n, n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::NoiseSource;

    fn random_grid(seed: u64, n: usize) -> Tensor<f64> {
        let mut noise = NoiseSource::new(seed);
        Tensor::from_f64(&noise.uniform_vec(n * n * n, 0.0, 1.0), &[1, n, n, n]).unwrap()
    }

    fn angles(t: f64) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::from_f64(&[t], &[1]).unwrap(), Tensor::zeros(&[1]))
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(2.0 * PI), 0.0);
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_rotation_in_both_modes() {
        let v = random_grid(1, 6);
        let (t, p) = angles(0.0);
        for mode in [Sampling::Nearest, Sampling::Trilinear] {
            assert_eq!(rotate_voxels(&v, &t, &p, mode).unwrap().to_vec(), v.to_vec());
        }
    }

    #[test]
    fn quarter_turn_matches_index_mapping() {
        let n = 6;
        let v = random_grid(2, n);
        let (t, p) = angles(PI / 2.0);
        let r = rotate_voxels(&v, &t, &p, Sampling::Nearest).unwrap().to_vec();
        let src = v.to_vec();
        for d in 0..n {
            for h in 0..n {
                for w in 0..n {
                    assert_eq!(r[(d * n + h) * n + w], src[(w * n + h) * n + (n - 1 - d)]);
                }
            }
        }
    }

    #[test]
    fn single_grid_broadcasts_over_poses() {
        let v = random_grid(3, 5);
        let theta = Tensor::from_f64(&[0.0, PI / 2.0, PI], &[3]).unwrap();
        let phi = Tensor::zeros(&[3]);
        let out = rotate_voxels(&v, &theta, &phi, Sampling::Nearest).unwrap();
        assert_eq!(out.shape(), &[3, 5, 5, 5]);
        assert_eq!(&out.to_vec()[..125], &v.to_vec()[..]);
    }

    #[test]
    fn projection_closed_forms() {
        let n = 28;
        let zeros = Tensor::<f64>::zeros(&[1, n, n, n]);
        assert!(project(&zeros).unwrap().to_vec().iter().all(|&p| p == 0.0));

        let mut data = vec![0.0; n * n * n];
        data[0] = 2f64.ln();
        for d in 0..n {
            data[(d * n + 3) * n + 4] = 1.0;
        }
        let img = project(&Tensor::<f64>::from_f64(&data, &[1, n, n, n]).unwrap()).unwrap().to_vec();
        assert!((img[0] - 0.5).abs() < 1e-15);
        let full = img[3 * n + 4];
        assert!((full - (1.0 - (-28f64).exp())).abs() < 1e-15);
        assert!((1.0 - full).abs() < 1e-10 && full < 1.0);
    }

    #[test]
    fn projection_gradient_is_transmittance() {
        let v = Tensor::<f64>::parameter(vec![0.25, 0.5, 0.0, 1.0, 0.1, 0.2, 0.3, 0.4], &[1, 2, 2, 2]).unwrap();
        project(&v).unwrap().sum_all().backward().unwrap();
        let g = v.grad().unwrap();
        let data = v.to_vec();
        for h in 0..2 {
            for w in 0..2 {
                let s: f64 = (0..2).map(|d| data[(d * 2 + h) * 2 + w]).sum();
                for d in 0..2 {
                    assert!((g[(d * 2 + h) * 2 + w] - (-s).exp()).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn nearest_pose_gradient_is_zero() {
        let v = random_grid(4, 5);
        let theta = Tensor::<f64>::parameter(vec![0.3], &[1]).unwrap();
        let phi = Tensor::<f64>::parameter(vec![0.1], &[1]).unwrap();
        render(&v, &theta, &phi, Sampling::Nearest).unwrap().sum_all().backward().unwrap();
        assert_eq!(theta.grad().unwrap(), vec![0.0]);
        assert_eq!(phi.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn voxel_grid_validation_and_iou() {
        assert!(VoxelGrid::new(2, vec![0.0; 7]).is_err());
        assert!(VoxelGrid::new(1, vec![1.5]).is_err());
        let mut a = VoxelGrid::empty(2);
        let mut b = VoxelGrid::empty(2);
        a.set(0, 0, 0, 1.0);
        a.set(1, 1, 1, 1.0);
        b.set(0, 0, 0, 1.0);
        assert_eq!(a.iou(&b, 0.5), 0.5);
        assert_eq!(VoxelGrid::empty(2).iou(&VoxelGrid::empty(2), 0.5), 1.0);
    }
}
