//! The fitting objective and its gradients.
//!
//! The objective is written once over [`Real`]: evaluated with `f64` it is
//! [`total_loss`], evaluated on the tape it yields [`gradients`]. The
//! eikonal term touches every grid node, so it is differentiated by hand
//! instead of being recorded.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FitConfig, LossWeights};
use super::state::{FitState, FrameObservation};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::field::{composite, density_t, stratified_depths, Ray, RenderConfig};
use crate::scalar::{
    dq_from_tangent, mat_cst, mat_mul, norm_sq, qmat, quat_from_rotvec, rotvec_from_quat, sub, vals, Dq, Real, V3,
};
use crate::skinning::{blend_weights, forward_kernel, inverse_kernel, BoneT};
use crate::spatial::KdTree;

/// Unweighted loss terms; `total` is their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub data: f64,
    pub surface: f64,
    pub silhouette: f64,
    pub color: f64,
    pub sparse: f64,
    pub cycle: f64,
    pub reg: f64,
    pub eikonal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const NAMES: [&'static str; 9] = [
        "total",
        "data",
        "surface",
        "silhouette",
        "color",
        "sparse",
        "cycle",
        "reg",
        "eikonal",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.total,
            self.data,
            self.surface,
            self.silhouette,
            self.color,
            self.sparse,
            self.cycle,
            self.reg,
            self.eikonal,
        ]
    }
}

/// Per-frame observation subsets, fixed for a whole fit.
pub(crate) struct FrameData {
    obs: Vec<Vector3<f64>>,
    tree: KdTree,
    cyc: Vec<Vector3<f64>>,
    cyc_colors: Option<Vec<Vector3<f64>>>,
    rays: Vec<(Ray, Vec<f64>, f64)>,
}

pub(crate) struct Prepared {
    frames: Vec<FrameData>,
}

fn subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

impl Prepared {
    pub(crate) fn new(obs: &[FrameObservation], cfg: &FitConfig) -> Result<Self> {
        let frames = obs
            .iter()
            .enumerate()
            .map(|(f, o)| {
                let pts = o.cloud.points();
                if pts.is_empty() {
                    return Err(Error::EmptyCloud);
                }
                let seed = cfg.seed ^ (f as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
                let obs: Vec<_> = subset(pts.len(), cfg.observed_samples, seed)
                    .into_iter()
                    .map(|i| pts[i])
                    .collect();
                let ci = subset(pts.len(), cfg.cycle_samples, seed.rotate_left(29));
                let cyc = ci.iter().map(|&i| pts[i]).collect();
                let cyc_colors = o.cloud.colors().map(|c| ci.iter().map(|&i| c[i]).collect());
                let mut rays = Vec::new();
                if let Some(s) = &o.silhouette {
                    let rc = RenderConfig {
                        samples: cfg.render_samples,
                        beta: cfg.beta_start,
                        seed: cfg.seed,
                    };
                    for (ray, &m) in s.camera.rays(f)?.into_iter().zip(&s.mask) {
                        let depths = stratified_depths(&ray, &rc);
                        rays.push((ray, depths, m));
                    }
                }
                Ok(FrameData {
                    tree: KdTree::new(&obs),
                    obs,
                    cyc,
                    cyc_colors,
                    rays,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { frames })
    }
}

/// All optimized quantities in scalar type `T`.
struct Params<T> {
    bones: Vec<BoneT<T>>,
    poses: Vec<Vec<Dq<T>>>,
    globals: Vec<Dq<T>>,
    delta: Vec<T>,
    sdf: Vec<T>,
    color: Vec<[T; 3]>,
    beta: T,
}

fn v3c<T: Real>(v: &Vector3<f64>) -> V3<T> {
    [T::cst(v.x), T::cst(v.y), T::cst(v.z)]
}

fn weighted_sum<T: Real>(w: &LossWeights, t: &[T; 7]) -> T {
    let ws = [w.data, w.surface, w.silhouette, w.color, w.sparse, w.cycle, w.reg];
    let mut total = T::zero();
    for (wi, ti) in ws.iter().zip(t) {
        if *wi > 0.0 {
            total = total + *ti * *wi;
        }
    }
    total
}

fn mean<T: Real>(items: impl Iterator<Item = T>) -> T {
    let mut acc = T::zero();
    let mut n = 0usize;
    for v in items {
        acc = acc + v;
        n += 1;
    }
    if n == 0 {
        T::zero()
    } else {
        acc / n as f64
    }
}

/// Weighted objective without the eikonal term, and the unweighted terms.
fn objective<T: Real>(
    p: &Params<T>,
    state: &FitState,
    prep: &Prepared,
    cfg: &FitConfig,
    frames: &[usize],
) -> (T, [T; 7]) {
    let w = &cfg.weights;
    let gamma = state.gamma;
    let backend = cfg.backend;
    let dl = *state.delta.lattice();
    let nd = dl.node_count();
    let mut delta = |b: usize, y: V3<T>| dl.interpolate(y, |i| p.delta[b * nd + i]);
    let sdf_at = |y: V3<T>| state.sdf.value_t(y, |i| p.sdf[i]);
    let color_lattice = *state.color.lattice();
    let mut terms = [T::zero(); 7];
    let nf = frames.len().max(1) as f64;

    if w.data > 0.0 && !state.samples.points.is_empty() {
        let s = &state.samples;
        let xs: Vec<V3<T>> = (0..s.points.len())
            .map(|k| {
                let v = v3c::<T>(&s.points[k]);
                let ds = sdf_at(v) - s.values[k];
                let o = s.offsets[k];
                [v[0] - ds * o.x, v[1] - ds * o.y, v[2] - ds * o.z]
            })
            .collect();
        let mut acc = T::zero();
        for &f in frames {
            let fd = &prep.frames[f];
            let fwd: Vec<V3<T>> = xs
                .iter()
                .map(|&x| forward_kernel(backend, &p.bones, &mut delta, gamma, &p.poses[f], &p.globals[f], x).unwrap_or(x))
                .collect();
            let to_obs = mean(fwd.iter().map(|y| {
                let (i, _) = fd.tree.nearest_array(vals(y)).unwrap_or((0, 0.0));
                norm_sq(sub(*y, v3c(&fd.obs[i])))
            }));
            let pred_tree = KdTree::from_arrays(fwd.iter().map(vals).collect());
            let to_pred = mean(fd.obs.iter().map(|o| {
                let (j, _) = pred_tree.nearest(o).unwrap_or((0, 0.0));
                norm_sq(sub(fwd[j], v3c(o)))
            }));
            acc = acc + to_obs + to_pred;
        }
        terms[0] = acc / nf;
    }

    let need_pullback = w.surface > 0.0 || w.cycle > 0.0 || w.color > 0.0;
    if need_pullback {
        let (mut surf, mut cyc, mut col) = (T::zero(), T::zero(), T::zero());
        for &f in frames {
            let fd = &prep.frames[f];
            let (mut s_acc, mut c_acc, mut col_acc) = (T::zero(), T::zero(), T::zero());
            for (k, x) in fd.cyc.iter().enumerate() {
                let xt = v3c::<T>(x);
                let y = inverse_kernel(backend, &p.bones, &mut delta, gamma, &p.poses[f], &p.globals[f], xt).unwrap_or(xt);
                if w.surface > 0.0 {
                    s_acc = s_acc + sdf_at(y).sq();
                }
                if w.cycle > 0.0 {
                    let z = forward_kernel(backend, &p.bones, &mut delta, gamma, &p.poses[f], &p.globals[f], y).unwrap_or(y);
                    c_acc = c_acc + norm_sq(sub(z, xt));
                }
                if let (true, Some(cols)) = (w.color > 0.0, &fd.cyc_colors) {
                    for c in 0..3 {
                        let v = color_lattice.interpolate(y, |i| p.color[i][c]);
                        col_acc = col_acc + (v - cols[k][c]).sq();
                    }
                }
            }
            let n = fd.cyc.len().max(1) as f64;
            surf = surf + s_acc / n;
            cyc = cyc + c_acc / n;
            col = col + col_acc / n;
        }
        terms[1] = surf / nf;
        terms[5] = cyc / nf;
        terms[3] = col / nf;
    }

    if w.silhouette > 0.0 {
        let mut acc = T::zero();
        for &f in frames {
            let fd = &prep.frames[f];
            let per_ray = mean(fd.rays.iter().map(|(ray, depths, mask)| {
                let ext: Vec<T> = depths
                    .iter()
                    .map(|&t| {
                        let x = v3c::<T>(&ray.at(t));
                        let y = inverse_kernel(backend, &p.bones, &mut delta, gamma, &p.poses[f], &p.globals[f], x)
                            .unwrap_or(x);
                        density_t(sdf_at(y), p.beta) / p.beta
                    })
                    .collect();
                let cols = vec![[T::zero(); 3]; ext.len()];
                let (_, opacity) = composite(depths, ray.far, &ext, &cols);
                (opacity - *mask).sq()
            }));
            acc = acc + per_ray;
        }
        terms[2] = acc / nf;
    }

    if w.sparse > 0.0 && !state.assignments.is_empty() {
        let mut num = T::zero();
        let mut den = 0.0;
        for (x, m) in state.sparse_points.iter().zip(&state.assignments) {
            let wts = blend_weights(&p.bones, &mut delta, gamma, v3c(x));
            for (wb, &mb) in wts.iter().zip(m.mask()) {
                if !mb {
                    num = num + wb.sq();
                    den += 1.0;
                }
            }
        }
        if den > 0.0 {
            terms[4] = num / den;
        }
    }

    if w.reg > 0.0 {
        let mut reg = T::zero();
        for b in &p.bones {
            let l = b.prec.map(|v| v.ln());
            let m = (l[0] + l[1] + l[2]) / 3.0;
            reg = reg + ((l[0] - m).sq() + (l[1] - m).sq() + (l[2] - m).sq()) / 3.0;
        }
        for t in 1..p.poses.len() {
            for (a, b) in p.poses[t].iter().zip(&p.poses[t - 1]) {
                let rel = a.compose(&b.inverse());
                reg = reg + norm_sq(rotvec_from_quat(rel.real)) + norm_sq(rel.translation());
            }
        }
        terms[6] = reg;
    }

    (weighted_sum(w, &terms), terms)
}

/// Mean of `(|∇s| - 1)^2` over lattice cells using forward differences,
/// accumulating its gradient with respect to the node values into `grad`.
pub(crate) fn eikonal(state: &FitState, mut grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let lat = state.sdf.lattice();
    let [nx, ny, nz] = lat.resolution();
    let h = lat.spacing();
    let v = state.sdf.values();
    let count = ((nx - 1) * (ny - 1) * (nz - 1)) as f64;
    let mut total = 0.0;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let n = lat.index(i, j, k);
                let nb = [lat.index(i + 1, j, k), lat.index(i, j + 1, k), lat.index(i, j, k + 1)];
                let g = [0, 1, 2].map(|a| (v[nb[a]] - v[n]) / h[a]);
                let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                total += (norm - 1.0).powi(2);
                if let Some(out) = grad.as_deref_mut() {
                    if norm > 0.0 {
                        let r = scale * 2.0 * (norm - 1.0) / norm / count;
                        for a in 0..3 {
                            let d = r * g[a] / h[a];
                            out[nb[a]] += d;
                            out[n] -= d;
                        }
                    }
                }
            }
        }
    }
    total / count
}

fn params_f64(state: &FitState) -> Params<f64> {
    Params {
        bones: state.bones.to_t(),
        poses: state.poses.iter().map(|p| p.bone_dqs()).collect(),
        globals: state.poses.iter().map(|p| p.global_dq()).collect(),
        delta: state.delta.values().to_vec(),
        sdf: state.sdf.values().to_vec(),
        color: state.color.values().to_vec(),
        beta: state.beta,
    }
}

fn breakdown(terms: &[f64; 7], eik: f64, total: f64) -> LossBreakdown {
    LossBreakdown {
        data: terms[0],
        surface: terms[1],
        silhouette: terms[2],
        color: terms[3],
        sparse: terms[4],
        cycle: terms[5],
        reg: terms[6],
        eikonal: eik,
        total,
    }
}

pub(crate) fn evaluate(state: &FitState, prep: &Prepared, cfg: &FitConfig, frames: &[usize]) -> LossBreakdown {
    let p = params_f64(state);
    let (total, terms) = objective(&p, state, prep, cfg, frames);
    let eik = if cfg.weights.eikonal > 0.0 { eikonal(state, None, 0.0) } else { 0.0 };
    breakdown(&terms, eik, total + cfg.weights.eikonal * eik)
}

/// Loss of the state against all frames, with the unweighted terms.
pub fn total_loss(state: &FitState, obs: &[FrameObservation], cfg: &FitConfig) -> Result<(f64, LossBreakdown)> {
    check_frames(state, obs)?;
    let prep = Prepared::new(obs, cfg)?;
    let all: Vec<usize> = (0..obs.len()).collect();
    let b = evaluate(state, &prep, cfg, &all);
    Ok((b.total, b))
}

fn check_frames(state: &FitState, obs: &[FrameObservation]) -> Result<()> {
    if state.poses.len() != obs.len() {
        return Err(Error::invalid(format!(
            "state has {} frames, {} observed",
            state.poses.len(),
            obs.len()
        )));
    }
    Ok(())
}

/// Derivatives of the loss. Orientation, pose and camera entries are with
/// respect to tangent increments applied on the left: `V <- R(w) V`,
/// `T <- exp(xi) T` with `xi = (rotation vector, translation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub centers: Vec<Vector3<f64>>,
    pub orientations: Vec<Vector3<f64>>,
    pub scales: Vec<Vector3<f64>>,
    /// `[frame][bone]`.
    pub poses: Vec<Vec<[f64; 6]>>,
    pub cameras: Vec<[f64; 6]>,
    pub delta: Vec<f64>,
    pub sdf: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub beta: f64,
}

impl Gradients {
    pub const GROUPS: [&'static str; 9] = [
        "centers",
        "orientations",
        "scales",
        "poses",
        "cameras",
        "delta",
        "sdf",
        "color",
        "beta",
    ];

    /// Flat view of one group.
    pub fn group(&self, name: &str) -> Vec<f64> {
        let flat3 = |v: &[Vector3<f64>]| v.iter().flat_map(|g| g.iter().copied().collect::<Vec<_>>()).collect();
        match name {
            "centers" => flat3(&self.centers),
            "orientations" => flat3(&self.orientations),
            "scales" => flat3(&self.scales),
            "poses" => self.poses.iter().flatten().flatten().copied().collect(),
            "cameras" => self.cameras.iter().flatten().copied().collect(),
            "delta" => self.delta.clone(),
            "sdf" => self.sdf.clone(),
            "color" => self.color.iter().flatten().copied().collect(),
            "beta" => vec![self.beta],
            _ => Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        for g in Self::GROUPS {
            if self.group(g).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(g));
            }
        }
        Ok(())
    }
}

fn leaves<const N: usize>(tape: &Tape, v: [f64; N]) -> [Var; N] {
    v.map(|x| tape.leaf(x))
}

/// Loss and gradients restricted to `frames`; gradients of other frames'
/// poses are zero.
pub(crate) fn evaluate_with_gradients(
    state: &FitState,
    prep: &Prepared,
    cfg: &FitConfig,
    frames: &[usize],
) -> Result<(LossBreakdown, Gradients)> {
    let tape = Tape::new();
    let nb = state.bones.len();
    let zero3 = [0.0; 3];
    let centers: Vec<[Var; 3]> = state.bones.bones().iter().map(|b| leaves(&tape, [b.center.x, b.center.y, b.center.z])).collect();
    let orient: Vec<[Var; 3]> = (0..nb).map(|_| leaves(&tape, zero3)).collect();
    let scales: Vec<[Var; 3]> = state.bones.bones().iter().map(|b| leaves(&tape, [b.scale.x, b.scale.y, b.scale.z])).collect();
    let bones: Vec<BoneT<Var>> = state
        .bones
        .bones()
        .iter()
        .enumerate()
        .map(|(b, bone)| {
            let v: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| bone.orientation[(i, j)]));
            BoneT {
                center: centers[b],
                rot: mat_mul(&qmat(quat_from_rotvec(orient[b])), &mat_cst(&v)),
                prec: scales[b],
            }
        })
        .collect();
    let mut pose_leaves: Vec<Vec<[Var; 6]>> = vec![Vec::new(); state.poses.len()];
    let mut camera_leaves: Vec<Option<[Var; 6]>> = vec![None; state.poses.len()];
    for &f in frames {
        pose_leaves[f] = (0..nb).map(|_| leaves(&tape, [0.0; 6])).collect();
        camera_leaves[f] = Some(leaves(&tape, [0.0; 6]));
    }
    let poses: Vec<Vec<Dq<Var>>> = state
        .poses
        .iter()
        .enumerate()
        .map(|(f, p)| {
            p.bone_dqs()
                .iter()
                .enumerate()
                .map(|(b, d)| {
                    let d = Dq::from_f64(d);
                    match pose_leaves[f].get(b) {
                        Some(xi) => dq_from_tangent(*xi).compose(&d),
                        None => d,
                    }
                })
                .collect()
        })
        .collect();
    let globals: Vec<Dq<Var>> = state
        .poses
        .iter()
        .enumerate()
        .map(|(f, p)| {
            let g = Dq::from_f64(&p.global_dq());
            match camera_leaves[f] {
                Some(xi) => dq_from_tangent(xi).compose(&g),
                None => g,
            }
        })
        .collect();
    let delta: Vec<Var> = state.delta.values().iter().map(|&v| tape.leaf(v)).collect();
    let sdf: Vec<Var> = state.sdf.values().iter().map(|&v| tape.leaf(v)).collect();
    let color_active = cfg.weights.color > 0.0 && frames.iter().any(|&f| prep.frames[f].cyc_colors.is_some());
    let color: Vec<[Var; 3]> = if color_active {
        state.color.values().iter().map(|c| leaves(&tape, *c)).collect()
    } else {
        state.color.values().iter().map(|c| c.map(Var::constant)).collect()
    };
    let beta = tape.leaf(state.beta);
    let p = Params {
        bones,
        poses,
        globals,
        delta,
        sdf,
        color,
        beta,
    };
    let (total, terms) = objective(&p, state, prep, cfg, frames);
    let adj = tape.backward(&[(total, 1.0)]);
    let g3 = |v: &[Var; 3]| Vector3::new(adj.of(v[0]), adj.of(v[1]), adj.of(v[2]));
    let mut grads = Gradients {
        centers: centers.iter().map(g3).collect(),
        orientations: orient.iter().map(g3).collect(),
        scales: scales.iter().map(g3).collect(),
        poses: pose_leaves
            .iter()
            .map(|fl| {
                if fl.is_empty() {
                    vec![[0.0; 6]; nb]
                } else {
                    fl.iter().map(|xi| xi.map(|v| adj.of(v))).collect()
                }
            })
            .collect(),
        cameras: camera_leaves
            .iter()
            .map(|c| c.map(|xi| xi.map(|v| adj.of(v))).unwrap_or([0.0; 6]))
            .collect(),
        delta: p.delta.iter().map(|&v| adj.of(v)).collect(),
        sdf: p.sdf.iter().map(|&v| adj.of(v)).collect(),
        color: p.color.iter().map(|c| c.map(|v| adj.of(v))).collect(),
        beta: adj.of(beta),
    };
    let terms_f: [f64; 7] = terms.map(|t| t.val());
    let mut total_f = total.val();
    drop(tape);
    let mut eik = 0.0;
    if cfg.weights.eikonal > 0.0 {
        eik = eikonal(state, Some(&mut grads.sdf), cfg.weights.eikonal);
        total_f += cfg.weights.eikonal * eik;
    }
    grads.check()?;
    Ok((breakdown(&terms_f, eik, total_f), grads))
}

/// Gradients of [`total_loss`] with respect to every parameter group.
pub fn gradients(state: &FitState, obs: &[FrameObservation], cfg: &FitConfig) -> Result<Gradients> {
    check_frames(state, obs)?;
    let prep = Prepared::new(obs, cfg)?;
    let all: Vec<usize> = (0..obs.len()).collect();
    Ok(evaluate_with_gradients(state, &prep, cfg, &all)?.1)
}
