//! Explicit canonical fields: signed distance and color lattices, the
//! Laplace-CDF density, volume rendering along rays and iso-surface
//! extraction.

mod extract;

pub use extract::{extract_mesh, DEFAULT_ISO};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Real, V3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|k| !(min[k] < max[k]) || !min[k].is_finite() || !max[k].is_finite()) {
            return Err(Error::invalid(format!(
                "bounds need min < max per axis, got {min:?} .. {max:?}"
            )));
        }
        Ok(Aabb { min, max })
    }

    /// Cube `[-h, h]^3`.
    pub fn cube(half: f64) -> Result<Self> {
        Aabb::new(Vector3::repeat(-half), Vector3::repeat(half))
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p.sup(&self.min).inf(&self.max)
    }
}

/// A regular lattice of `res[0] x res[1] x res[2]` nodes spanning `bounds`,
/// indexed x-fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    res: [usize; 3],
    bounds: Aabb,
}

impl Lattice {
    pub fn new(res: [usize; 3], bounds: Aabb) -> Result<Self> {
        if res.iter().any(|&r| r < 2) {
            return Err(Error::invalid(format!(
                "lattice resolution must be at least 2 per axis, got {res:?}"
            )));
        }
        Ok(Lattice { res, bounds })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn node_count(&self) -> usize {
        self.res[0] * self.res[1] * self.res[2]
    }

    pub fn spacing(&self) -> Vector3<f64> {
        Vector3::from_fn(|k, _| self.bounds.extent()[k] / (self.res[k] - 1) as f64)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res[0] * (j + self.res[1] * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.spacing();
        self.bounds.min + Vector3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z)
    }

    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.res[0];
        let j = (idx / self.res[0]) % self.res[1];
        let k = idx / (self.res[0] * self.res[1]);
        [i, j, k]
    }

    /// Base cell and in-cell fractions of a point, clamped to the lattice.
    #[inline]
    fn locate(&self, p: [f64; 3]) -> ([usize; 3], [f64; 3], [bool; 3]) {
        let mut base = [0; 3];
        let mut frac = [0.0; 3];
        let mut inside = [true; 3];
        for k in 0..3 {
            let h = (self.bounds.max[k] - self.bounds.min[k]) / (self.res[k] - 1) as f64;
            let u = (p[k] - self.bounds.min[k]) / h;
            let cells = (self.res[k] - 1) as f64;
            let uc = if u.is_nan() { 0.0 } else { u.clamp(0.0, cells) };
            inside[k] = u == uc;
            let b = (uc.floor() as usize).min(self.res[k] - 2);
            base[k] = b;
            frac[k] = uc - b as f64;
        }
        (base, frac, inside)
    }

    /// Trilinear interpolation of node values supplied by `fetch`. Outside
    /// the bounds the query is clamped to the nearest boundary point, so the
    /// derivative along a clamped axis is zero.
    pub fn interpolate<T: Real>(&self, p: V3<T>, mut fetch: impl FnMut(usize) -> T) -> T {
        let pv = [p[0].val(), p[1].val(), p[2].val()];
        let (base, frac, inside) = self.locate(pv);
        let mut f: [T; 3] = [T::zero(); 3];
        for k in 0..3 {
            f[k] = if inside[k] {
                let h = (self.bounds.max[k] - self.bounds.min[k]) / (self.res[k] - 1) as f64;
                let origin = self.bounds.min[k] + base[k] as f64 * h;
                (p[k] - origin) / h
            } else {
                T::cst(frac[k])
            };
        }
        let mut acc = T::zero();
        for corner in 0..8 {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let wx = if di == 1 { f[0] } else { T::one() - f[0] };
            let wy = if dj == 1 { f[1] } else { T::one() - f[1] };
            let wz = if dk == 1 { f[2] } else { T::one() - f[2] };
            let v = fetch(self.index(base[0] + di, base[1] + dj, base[2] + dk));
            acc = acc + wx * wy * wz * v;
        }
        acc
    }

    /// Node indices and trilinear weights of a query (clamped).
    pub fn stencil(&self, p: &Vector3<f64>) -> [(usize, f64); 8] {
        let (base, f, _) = self.locate([p.x, p.y, p.z]);
        let mut out = [(0, 0.0); 8];
        for (corner, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let wx = if di == 1 { f[0] } else { 1.0 - f[0] };
            let wy = if dj == 1 { f[1] } else { 1.0 - f[1] };
            let wz = if dk == 1 { f[2] } else { 1.0 - f[2] };
            *slot = (self.index(base[0] + di, base[1] + dj, base[2] + dk), wx * wy * wz);
        }
        out
    }
}

/// Signed distances (negative inside) on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    lattice: Lattice,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(res: [usize; 3], bounds: Aabb, values: Vec<f64>) -> Result<Self> {
        let lattice = Lattice::new(res, bounds)?;
        if values.len() != lattice.node_count() {
            return Err(Error::invalid(format!(
                "{} values for {} lattice nodes",
                values.len(),
                lattice.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("SDF values must be finite"));
        }
        Ok(SdfGrid { lattice, values })
    }

    /// Sample an analytic field at every node.
    pub fn from_fn(res: [usize; 3], bounds: Aabb, f: impl Fn(&Vector3<f64>) -> f64) -> Result<Self> {
        let lattice = Lattice::new(res, bounds)?;
        let values = (0..lattice.node_count())
            .map(|idx| {
                let [i, j, k] = lattice.node_coords(idx);
                f(&lattice.node_position(i, j, k))
            })
            .collect();
        SdfGrid::new(res, bounds, values)
    }

    /// Sphere of `radius` about the origin.
    pub fn sphere(res: [usize; 3], bounds: Aabb, radius: f64) -> Result<Self> {
        SdfGrid::from_fn(res, bounds, |p| p.norm() - radius)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.lattice.res
    }

    pub fn bounds(&self) -> &Aabb {
        &self.lattice.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replace the node values (same length, finite).
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        *self = SdfGrid::new(self.lattice.res, self.lattice.bounds, values)?;
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Trilinear value; outside the bounds, the value at the nearest
    /// boundary point plus the distance to it.
    pub fn value(&self, p: &Vector3<f64>) -> f64 {
        self.value_t([p.x, p.y, p.z], |i| self.values[i])
    }

    /// Generic evaluation with node values supplied by `fetch`.
    pub(crate) fn value_t<T: Real>(&self, p: V3<T>, fetch: impl FnMut(usize) -> T) -> T {
        let inner = self.lattice.interpolate(p, fetch);
        let b = &self.lattice.bounds;
        let mut out2 = T::zero();
        let mut outside = false;
        for k in 0..3 {
            let v = p[k].val();
            if v < b.min[k] {
                out2 = out2 + (p[k] - b.min[k]).sq();
                outside = true;
            } else if v > b.max[k] {
                out2 = out2 + (p[k] - b.max[k]).sq();
                outside = true;
            }
        }
        if outside {
            inner + out2.sqrt()
        } else {
            inner
        }
    }

    /// Gradient of the trilinear interpolant (one-sided on cell faces).
    pub fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (base, f, inside) = self.lattice.locate([p.x, p.y, p.z]);
        let h = self.lattice.spacing();
        let v = |di: usize, dj: usize, dk: usize| {
            self.values[self.lattice.index(base[0] + di, base[1] + dj, base[2] + dk)]
        };
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let mut g = Vector3::zeros();
        // d/dx: difference of the x-faces, bilinear in (y, z)
        let face = |axis: usize, side: usize| {
            let pick = |c: usize| -> (usize, usize, usize) {
                let mut idx = [0usize; 3];
                idx[axis] = side;
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                idx[a1] = c & 1;
                idx[a2] = (c >> 1) & 1;
                (idx[0], idx[1], idx[2])
            };
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            let val = |c: usize| {
                let (i, j, k) = pick(c);
                v(i, j, k)
            };
            lerp(
                lerp(val(0), val(1), f[a1]),
                lerp(val(2), val(3), f[a1]),
                f[a2],
            )
        };
        for axis in 0..3 {
            g[axis] = (face(axis, 1) - face(axis, 0)) / h[axis];
        }
        // outside the bounds the distance term dominates
        if !inside.iter().all(|&b| b) {
            let c = self.lattice.bounds.clamp(p);
            let d = p - c;
            let n = d.norm();
            if n > 0.0 {
                for axis in 0..3 {
                    if !inside[axis] {
                        g[axis] = d[axis] / n;
                    } else {
                        g[axis] += d[axis] / n;
                    }
                }
            }
        }
        g
    }
}

/// RGB values in `[0,1]` on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorGrid {
    lattice: Lattice,
    values: Vec<[f64; 3]>,
}

impl ColorGrid {
    /// Values are clamped into `[0,1]`.
    pub fn new(res: [usize; 3], bounds: Aabb, values: Vec<[f64; 3]>) -> Result<Self> {
        let lattice = Lattice::new(res, bounds)?;
        if values.len() != lattice.node_count() {
            return Err(Error::invalid(format!(
                "{} colors for {} lattice nodes",
                values.len(),
                lattice.node_count()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("color values must be finite"));
        }
        let values = values
            .into_iter()
            .map(|c| c.map(|v| v.clamp(0.0, 1.0)))
            .collect();
        Ok(ColorGrid { lattice, values })
    }

    pub fn uniform(res: [usize; 3], bounds: Aabb, color: [f64; 3]) -> Result<Self> {
        let n = Lattice::new(res, bounds)?.node_count();
        ColorGrid::new(res, bounds, vec![color; n])
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.values
    }

    pub fn value(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let q = [p.x, p.y, p.z];
        Vector3::from_fn(|c, _| self.lattice.interpolate(q, |i| self.values[i][c]))
    }
}

/// Volume density from a signed distance: the Laplace CDF (zero mean,
/// scale `beta`) evaluated at `-s`. Equal to 1/2 on the surface, tends to 1
/// inside and to 0 outside.
pub fn density(s: f64, beta: f64) -> f64 {
    density_t(s, beta)
}

pub(crate) fn density_t<T: Real>(s: T, beta: T) -> T {
    let u = -s / beta;
    if u.val() <= 0.0 {
        u.exp() * 0.5
    } else {
        T::one() - (-u).exp() * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
    pub frame: usize,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, near: f64, far: f64, frame: usize) -> Result<Self> {
        if ((direction.norm() - 1.0).abs() > 1e-9) || !(0.0 <= near && near < far) {
            return Err(Error::invalid("ray needs a unit direction and 0 <= near < far"));
        }
        Ok(Ray {
            origin,
            direction,
            near,
            far,
            frame,
        })
    }

    /// Ray from `origin` towards `target`, normalising the direction.
    pub fn towards(origin: Vector3<f64>, target: Vector3<f64>, near: f64, far: f64) -> Result<Self> {
        Ray::new(origin, (target - origin).normalize(), near, far, 0)
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub samples: usize,
    pub beta: f64,
    /// Base seed of the per-ray stratified jitter.
    pub seed: u64,
}

impl RenderConfig {
    pub fn new(samples: usize, beta: f64) -> Result<Self> {
        let cfg = RenderConfig {
            samples,
            beta,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || !(self.beta > 0.0) {
            return Err(Error::invalid("render config needs samples >= 2 and beta > 0"));
        }
        Ok(())
    }
}

/// Sample depths along the ray: one jittered sample per stratum, seeded from
/// the config seed and the ray itself so re-rendering is reproducible.
pub fn stratified_depths(ray: &Ray, cfg: &RenderConfig) -> Vec<f64> {
    let mut h: u64 = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [
        ray.origin.x,
        ray.origin.y,
        ray.origin.z,
        ray.direction.x,
        ray.direction.y,
        ray.direction.z,
        ray.near,
        ray.far,
    ] {
        h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3).rotate_left(17);
    }
    h ^= ray.frame as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let step = (ray.far - ray.near) / cfg.samples as f64;
    (0..cfg.samples)
        .map(|n| ray.near + (n as f64 + rng.random::<f64>()) * step)
        .collect()
}

/// Per-sample compositing weights `tau_n = T_n * alpha_n` from
/// front-to-back transmittance.
///
/// `extinction` is the density divided by `beta`, which lets a thin solid
/// become opaque at the sample spacing used for rendering.
pub(crate) fn sample_weights<T: Real>(depths: &[f64], far: f64, extinction: &[T]) -> Vec<T> {
    let mut trans = T::one();
    let mut taus = Vec::with_capacity(depths.len());
    for n in 0..depths.len() {
        let next = if n + 1 < depths.len() { depths[n + 1] } else { far };
        let delta = next - depths[n];
        let alpha = T::one() - (-(extinction[n] * delta)).exp();
        taus.push(trans * alpha);
        trans = trans * (T::one() - alpha);
    }
    taus
}

/// Front-to-back compositing of per-sample densities and colors. Returns
/// `(rgb, opacity)`.
pub(crate) fn composite<T: Real>(depths: &[f64], far: f64, extinction: &[T], colors: &[[T; 3]]) -> ([T; 3], T) {
    let mut rgb = [T::zero(); 3];
    let mut opacity = T::zero();
    for (n, tau) in sample_weights(depths, far, extinction).into_iter().enumerate() {
        for c in 0..3 {
            rgb[c] = rgb[c] + tau * colors[n][c];
        }
        opacity = opacity + tau;
    }
    (rgb, opacity)
}

/// The compositing weight of every sample along `ray`, unclamped. They sum
/// to the ray's opacity.
pub fn ray_weights(
    sdf: &SdfGrid,
    deform: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    ray: &Ray,
    cfg: &RenderConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let depths = stratified_depths(ray, cfg);
    let ext: Vec<f64> = depths
        .iter()
        .map(|&t| density(sdf.value(&deform(&ray.at(t))), cfg.beta) / cfg.beta)
        .collect();
    Ok(sample_weights(&depths, ray.far, &ext))
}

/// Render one ray. `deform` maps each observation-space sample to canonical
/// space before the field lookup.
pub fn render_ray(
    sdf: &SdfGrid,
    color: &ColorGrid,
    deform: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    ray: &Ray,
    cfg: &RenderConfig,
) -> Result<(Vector3<f64>, f64)> {
    cfg.validate()?;
    let depths = stratified_depths(ray, cfg);
    let mut ext = Vec::with_capacity(depths.len());
    let mut cols = Vec::with_capacity(depths.len());
    for &t in &depths {
        let x = deform(&ray.at(t));
        ext.push(density(sdf.value(&x), cfg.beta) / cfg.beta);
        let c = color.value(&x);
        cols.push([c.x, c.y, c.z]);
    }
    let (rgb, opacity) = composite(&depths, ray.far, &ext, &cols);
    Ok((Vector3::from(rgb), opacity.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_sphere_grid(res: usize) -> SdfGrid {
        SdfGrid::sphere([res; 3], Aabb::cube(1.5).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn density_examples() {
        for beta in [1.0, 0.1, 1e-3] {
            assert_eq!(density(0.0, beta), 0.5);
            assert!((density(-10.0 * beta, beta) - (1.0 - 0.5 * (-10f64).exp())).abs() < 1e-12);
            assert!((density(10.0 * beta, beta) - 0.5 * (-10f64).exp()).abs() < 1e-15);
        }
        assert!((density(10.0, 1.0) - 2.27e-5).abs() < 1e-7);
        let mut prev = 1.0;
        for i in -100..100 {
            let d = density(i as f64 * 0.01, 0.1);
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn trilinear_is_exact_for_linear_fields() {
        let b = Aabb::new(Vector3::new(-1.0, 0.0, 2.0), Vector3::new(1.0, 3.0, 5.0)).unwrap();
        let f = |p: &Vector3<f64>| 0.3 * p.x - 1.2 * p.y + 2.0 * p.z + 0.7;
        let g = SdfGrid::from_fn([5, 4, 7], b, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..3.0),
                rng.random_range(2.0..5.0),
            );
            assert!((g.value(&p) - f(&p)).abs() < 1e-12);
            assert!((g.gradient(&p) - Vector3::new(0.3, -1.2, 2.0)).amax() < 1e-10);
        }
        // outside: boundary value plus the distance to the box
        let p = Vector3::new(3.0, 1.0, 3.0);
        assert!((g.value(&p) - (f(&Vector3::new(1.0, 1.0, 3.0)) + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_grids() {
        let b = Aabb::cube(1.0).unwrap();
        assert!(SdfGrid::new([1, 2, 2], b, vec![0.0; 4]).is_err());
        assert!(SdfGrid::new([2, 2, 2], b, vec![0.0; 7]).is_err());
        assert!(SdfGrid::new([2, 2, 2], b, vec![f64::NAN; 8]).is_err());
        assert!(Aabb::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0)).is_err());
        let c = ColorGrid::new([2, 2, 2], b, vec![[2.0, -1.0, 0.5]; 8]).unwrap();
        assert_eq!(c.values()[0], [1.0, 0.0, 0.5]);
    }

    #[test]
    fn opacity_of_rays() {
        let sdf = unit_sphere_grid(64);
        let color = ColorGrid::uniform([2; 3], *sdf.bounds(), [0.2, 0.5, 0.9]).unwrap();
        let id = |p: &Vector3<f64>| *p;
        let cfg = RenderConfig::new(64, 1e-3).unwrap();
        let hit = Ray::towards(Vector3::new(-3.0, 0.1, 0.0), Vector3::new(0.0, 0.1, 0.0), 0.0, 6.0).unwrap();
        let (rgb, op) = render_ray(&sdf, &color, &id, &hit, &cfg).unwrap();
        assert!(op > 0.99, "{op}");
        assert!((rgb - Vector3::new(0.2, 0.5, 0.9) * op).amax() < 1e-6);

        let miss = Ray::towards(Vector3::new(-3.0, 1.4, 0.0), Vector3::new(0.0, 1.4, 0.0), 0.0, 6.0).unwrap();
        let (_, op) = render_ray(&sdf, &color, &id, &miss, &RenderConfig::new(64, 0.01).unwrap()).unwrap();
        assert!(op < 1e-3, "{op}");

        let mut prev = 0.0;
        for beta in [0.1, 0.01, 0.001] {
            let (_, op) = render_ray(&sdf, &color, &id, &hit, &RenderConfig::new(64, beta).unwrap()).unwrap();
            assert!(op >= prev, "{beta}: {op} < {prev}");
            prev = op;
        }
    }

    #[test]
    fn render_is_deterministic_and_seed_dependent() {
        let ray = Ray::towards(Vector3::new(-3.0, 0.0, 0.0), Vector3::zeros(), 0.5, 6.0).unwrap();
        let mut cfg = RenderConfig::new(16, 0.1).unwrap();
        let a = stratified_depths(&ray, &cfg);
        assert_eq!(a, stratified_depths(&ray, &cfg));
        cfg.seed = 9;
        assert_ne!(a, stratified_depths(&ray, &cfg));
        let step = 5.5 / 16.0;
        for (n, t) in a.iter().enumerate() {
            assert!(*t >= 0.5 + n as f64 * step && *t <= 0.5 + (n + 1) as f64 * step);
        }
    }
}
