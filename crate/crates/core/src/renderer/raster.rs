use std::borrow::Cow;
use std::sync::Mutex;

use num_traits::Float;
use rayon::prelude::*;

use super::{fnv_mix, Precision, ProjectedGaussian, RenderConfig, FNV_OFFSET};
use crate::error::{Error, Result};
use crate::geom::CameraIntrinsics;
use crate::image::{Image, Mask};

pub(crate) trait Real: Float + Send + Sync + std::fmt::Debug + 'static {
    fn of(v: f64) -> Self;
    fn wide(self) -> f64;
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn wide(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn wide(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Splat<T> {
    mx: T,
    my: T,
    // conic entries [[a, b], [b, c]]
    a: T,
    b: T,
    c: T,
    depth: T,
    opacity: T,
}

impl<T: Real> Splat<T> {
    fn new(p: &ProjectedGaussian) -> Self {
        Self {
            mx: T::of(p.mean.x),
            my: T::of(p.mean.y),
            a: T::of(p.conic[(0, 0)]),
            b: T::of(p.conic[(0, 1)]),
            c: T::of(p.conic[(1, 1)]),
            depth: T::of(p.depth),
            opacity: T::of(p.opacity),
        }
    }
}

/// Inclusive pixel box `[x0, x1] × [y0, y1]` (possibly empty or off-image)
/// holding every pixel where the splat's `σ` can be within the cutoff. One
/// pixel of margin absorbs rounding in the kernels.
fn cutoff_box(p: &ProjectedGaussian, cutoff: f64) -> [i64; 4] {
    let ex = (2.0 * cutoff * p.cov[(0, 0)]).sqrt() + 1.0;
    let ey = (2.0 * cutoff * p.cov[(1, 1)]).sqrt() + 1.0;
    let lo = |v: f64| v.ceil().clamp(-1e15, 1e15) as i64;
    let hi = |v: f64| v.floor().clamp(-1e15, 1e15) as i64;
    [
        lo(p.mean.x - ex),
        hi(p.mean.x + ex),
        lo(p.mean.y - ey),
        hi(p.mean.y + ey),
    ]
}

#[derive(Debug, Clone, Copy)]
struct KernelParams<T> {
    cutoff: T,
    clamp_max: T,
    t_eps: T,
}

impl<T: Real> KernelParams<T> {
    fn new(cfg: &RenderConfig) -> Self {
        Self {
            cutoff: T::of(cfg.sigma_cutoff),
            clamp_max: T::of(cfg.alpha_clamp_max),
            t_eps: T::of(cfg.transmittance_epsilon),
        }
    }
}

/// Screen ellipse of one splat in f64, used to bound the pixels visited.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    mx: f64,
    my: f64,
    a: f64,
    b: f64,
    c: f64,
    // slightly inflated cutoff so rounding never drops a pixel
    cut: f64,
    bbox: [i64; 4],
}

impl Footprint {
    fn new(p: &ProjectedGaussian, cutoff: f64) -> Self {
        Self {
            mx: p.mean.x,
            my: p.mean.y,
            a: p.conic[(0, 0)],
            b: p.conic[(0, 1)],
            c: p.conic[(1, 1)],
            cut: cutoff * (1.0 + 1e-3) + 1e-9,
            bbox: cutoff_box(p, cutoff),
        }
    }

    /// Inclusive x range of row `y` that may hold pixels within the cutoff,
    /// with one pixel of margin.
    #[inline]
    fn row_span(&self, y: usize) -> Option<(i64, i64)> {
        let [x0, x1, ..] = self.bbox;
        if !(self.a > 0.0) {
            return Some((x0, x1));
        }
        let dy = y as f64 - self.my;
        let disc = self.b * self.b * dy * dy - self.a * (self.c * dy * dy - 2.0 * self.cut);
        if !(disc >= 0.0) {
            return None;
        }
        let r = disc.sqrt() / self.a;
        let center = self.mx - self.b * dy / self.a;
        let lo = (center - r - 1.0).ceil().clamp(-1e15, 1e15) as i64;
        let hi = (center + r + 1.0).floor().clamp(-1e15, 1e15) as i64;
        Some((lo.max(x0), hi.min(x1)))
    }
}

const CLAMPED_BIT: u32 = 1 << 31;

/// Saved fragments of one tile in emission order: ascending slot, then
/// row-major pixel. Slot `s` owns `slot_start[s]..slot_start[s + 1]`.
#[derive(Debug, Clone, Default)]
struct TileRecord {
    slot_start: Vec<u32>,
    /// Local pixel index, `CLAMPED_BIT` set if alpha hit the clamp.
    pixel: Vec<u32>,
    alpha: Vec<f64>,
    transmittance: Vec<f64>,
}

impl TileRecord {
    fn range(&self, slot: usize) -> std::ops::Range<usize> {
        self.slot_start[slot] as usize..self.slot_start[slot + 1] as usize
    }
}

/// One contributor at one pixel, read back from a tile record.
#[derive(Debug, Clone, Copy)]
struct Fragment {
    slot: usize,
    alpha: f64,
    transmittance: f64,
    clamped: bool,
}

#[derive(Debug, Clone, Copy)]
struct TileGrid {
    width: usize,
    height: usize,
    size: usize,
    nx: usize,
    ny: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize, size: usize) -> Self {
        Self {
            width,
            height,
            size,
            nx: width.div_ceil(size),
            ny: height.div_ceil(size),
        }
    }

    fn count(&self) -> usize {
        self.nx * self.ny
    }

    /// Pixel ranges `(x0..x1, y0..y1)` covered by tile `t`.
    fn bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.nx, t / self.nx);
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        (
            x0,
            (x0 + self.size).min(self.width),
            y0,
            (y0 + self.size).min(self.height),
        )
    }

    fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.size) * self.nx + x / self.size
    }
}

/// Everything the backward pass needs to replay compositing in reverse.
#[derive(Debug, Clone)]
pub struct BackwardContext {
    intrinsics: CameraIntrinsics,
    cfg: RenderConfig,
    grid: TileGrid,
    projected: Vec<ProjectedGaussian>,
    tile_lists: Vec<Vec<u32>>,
    records: Option<Vec<TileRecord>>,
    checksum: u64,
}

/// Public view of one contributor at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributorInfo {
    /// Scene index of the Gaussian.
    pub gaussian: usize,
    pub alpha: f64,
    pub transmittance: f64,
    pub sigma: f64,
    /// Pixel center minus splat center.
    pub delta: [f64; 2],
    pub depth: f64,
    pub clamped: bool,
}

/// Digest of the projection results the context was built from.
pub(crate) fn projection_checksum(
    projected: &[ProjectedGaussian],
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> u64 {
    let mut h = fnv_mix(FNV_OFFSET, cfg.digest());
    for v in [k.fx, k.fy, k.cx, k.cy, k.near, k.far] {
        h = fnv_mix(h, v.to_bits());
    }
    h = fnv_mix(h, (k.width as u64) << 32 | k.height as u64);
    for p in projected {
        h = fnv_mix(h, p.visible as u64);
        for v in p.cam_mean.iter() {
            h = fnv_mix(h, v.to_bits());
        }
        if p.visible {
            for v in p.cov.iter() {
                h = fnv_mix(h, v.to_bits());
            }
        }
    }
    h
}

impl BackwardContext {
    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.projected
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn has_saved_contributors(&self) -> bool {
        self.records.is_some()
    }

    /// Saved record of tile `t`, or a fresh recompute of it.
    fn record(&self, t: usize) -> Cow<'_, TileRecord> {
        if let Some(records) = &self.records {
            return Cow::Borrowed(&records[t]);
        }
        let list = &self.tile_lists[t];
        let r = match self.cfg.precision {
            Precision::F64 => {
                let (s, f) = tile_splats::<f64>(&self.projected, list, self.cfg.sigma_cutoff);
                render_tile(&self.grid, t, &s, &f, &KernelParams::new(&self.cfg), true).record
            }
            Precision::F32 => {
                let (s, f) = tile_splats::<f32>(&self.projected, list, self.cfg.sigma_cutoff);
                render_tile(&self.grid, t, &s, &f, &KernelParams::new(&self.cfg), true).record
            }
        };
        Cow::Owned(r.expect("record requested"))
    }

    /// Per local pixel fragment lists of tile `t`, in compositing order.
    fn tile_fragments(&self, t: usize) -> Vec<Vec<Fragment>> {
        let (x0, x1, y0, y1) = self.grid.bounds(t);
        let mut out = vec![Vec::new(); (x1 - x0) * (y1 - y0)];
        let r = self.record(t);
        for slot in 0..self.tile_lists[t].len() {
            for k in r.range(slot) {
                out[(r.pixel[k] & !CLAMPED_BIT) as usize].push(Fragment {
                    slot,
                    alpha: r.alpha[k],
                    transmittance: r.transmittance[k],
                    clamped: r.pixel[k] & CLAMPED_BIT != 0,
                });
            }
        }
        out
    }

    /// Contributors of pixel `(x, y)` in compositing order.
    pub fn pixel_contributors(&self, x: usize, y: usize) -> Vec<ContributorInfo> {
        let t = self.grid.tile_of(x, y);
        let (x0, x1, y0, _) = self.grid.bounds(t);
        let local = (y - y0) * (x1 - x0) + (x - x0);
        let list = &self.tile_lists[t];
        self.tile_fragments(t)[local]
            .iter()
            .map(|f| {
                let p = &self.projected[list[f.slot] as usize];
                let (dx, dy) = (x as f64 - p.mean.x, y as f64 - p.mean.y);
                let sigma = 0.5 * (p.conic[(0, 0)] * dx * dx + p.conic[(1, 1)] * dy * dy)
                    + p.conic[(0, 1)] * dx * dy;
                ContributorInfo {
                    gaussian: p.source,
                    alpha: f.alpha,
                    transmittance: f.transmittance,
                    sigma,
                    delta: [dx, dy],
                    depth: p.depth,
                    clamped: f.clamped,
                }
            })
            .collect()
    }

    /// Hash of every pixel's contributor sequence and clamp flags. Two
    /// renders with equal digests share all hard (non-differentiable)
    /// compositing decisions.
    pub fn topology_digest(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for t in 0..self.grid.count() {
            let list = &self.tile_lists[t];
            for frags in self.tile_fragments(t) {
                h = fnv_mix(h, frags.len() as u64);
                for f in &frags {
                    let src = self.projected[list[f.slot] as usize].source as u64;
                    h = fnv_mix(h, src << 1 | f.clamped as u64);
                }
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Composited depth `Σ d_n α_n T_n`, m.
    pub depth: Image,
    /// Accumulated opacity `Σ α_n T_n`.
    pub alpha: Image,
    /// `depth / alpha` where `alpha > alpha_floor`, else 0.
    pub norm_depth: Image,
    pub mask: Mask,
    pub ctx: BackwardContext,
}

impl RenderOutput {
    pub fn topology_digest(&self) -> u64 {
        let mut h = self.ctx.topology_digest();
        for &m in self.mask.as_slice() {
            h = fnv_mix(h, m as u64);
        }
        h
    }
}

struct TileOutput {
    depth: Vec<f64>,
    alpha: Vec<f64>,
    record: Option<TileRecord>,
}

/// Composites one tile splat-major: each splat in depth order updates the
/// pixels of its footprint. Per pixel the operations and their order match
/// plain front-to-back compositing.
fn render_tile<T: Real>(
    grid: &TileGrid,
    t: usize,
    splats: &[Splat<T>],
    feet: &[Footprint],
    prm: &KernelParams<T>,
    save: bool,
) -> TileOutput {
    let (x0, x1, y0, y1) = grid.bounds(t);
    let tw = x1 - x0;
    let n = tw * (y1 - y0);
    let half = T::of(0.5);
    let one = T::one();
    let mut trans = vec![one; n];
    let mut depth = vec![T::zero(); n];
    let mut alpha = vec![T::zero(); n];
    let mut active = n;
    let mut rec = TileRecord::default();
    if save {
        rec.slot_start.reserve(splats.len() + 1);
        rec.slot_start.push(0);
    }
    for (s, fp) in splats.iter().zip(feet) {
        if active == 0 {
            break;
        }
        let by0 = fp.bbox[2].max(y0 as i64);
        let by1 = fp.bbox[3].min(y1 as i64 - 1);
        for y in by0..=by1 {
            let y = y as usize;
            let Some((sx0, sx1)) = fp.row_span(y) else {
                continue;
            };
            let sx0 = sx0.max(x0 as i64);
            let sx1 = sx1.min(x1 as i64 - 1);
            if sx0 > sx1 {
                continue;
            }
            let row = (y - y0) * tw;
            let dy = T::of(y as f64) - s.my;
            for x in sx0 as usize..=sx1 as usize {
                let i = row + x - x0;
                let tr = trans[i];
                if tr < prm.t_eps {
                    continue;
                }
                let dx = T::of(x as f64) - s.mx;
                let sigma = half * (s.a * dx * dx + s.c * dy * dy) + s.b * dx * dy;
                if !(sigma <= prm.cutoff) || sigma < T::zero() {
                    continue;
                }
                let mut a = s.opacity * (-sigma).exp();
                let clamped = a > prm.clamp_max;
                if clamped {
                    a = prm.clamp_max;
                }
                let w = a * tr;
                depth[i] = depth[i] + s.depth * w;
                alpha[i] = alpha[i] + w;
                if save {
                    rec.pixel.push(i as u32 | if clamped { CLAMPED_BIT } else { 0 });
                    rec.alpha.push(a.wide());
                    rec.transmittance.push(tr.wide());
                }
                let next = tr * (one - a);
                trans[i] = next;
                if next < prm.t_eps {
                    active -= 1;
                }
            }
        }
        if save {
            rec.slot_start.push(rec.pixel.len() as u32);
        }
    }
    let record = save.then(|| {
        rec.slot_start.resize(splats.len() + 1, rec.pixel.len() as u32);
        rec
    });
    TileOutput {
        depth: depth.into_iter().map(Real::wide).collect(),
        alpha: alpha.into_iter().map(Real::wide).collect(),
        record,
    }
}

/// Tile-local splats and footprints, in depth order.
fn tile_splats<T: Real>(
    projected: &[ProjectedGaussian],
    list: &[u32],
    cutoff: f64,
) -> (Vec<Splat<T>>, Vec<Footprint>) {
    (
        list.iter().map(|&i| Splat::new(&projected[i as usize])).collect(),
        list.iter()
            .map(|&i| Footprint::new(&projected[i as usize], cutoff))
            .collect(),
    )
}

fn gather_splats<T: Real>(
    projected: &[ProjectedGaussian],
    tile_lists: &[Vec<u32>],
    cutoff: f64,
) -> Vec<(Vec<Splat<T>>, Vec<Footprint>)> {
    tile_lists
        .par_iter()
        .map(|l| tile_splats(projected, l, cutoff))
        .collect()
}

fn run_tiles<T: Real>(
    grid: &TileGrid,
    projected: &[ProjectedGaussian],
    tile_lists: &[Vec<u32>],
    cfg: &RenderConfig,
) -> Vec<TileOutput> {
    let prm = KernelParams::<T>::new(cfg);
    let splats = gather_splats::<T>(projected, tile_lists, cfg.sigma_cutoff);
    (0..grid.count())
        .into_par_iter()
        .map(|t| {
            let (s, f) = &splats[t];
            render_tile(grid, t, s, f, &prm, cfg.save_contributors)
        })
        .collect()
}
/// Composites depth, alpha and normalized depth from projected splats.
/// Splats are sorted internally by ascending depth, ties by scene index.
pub fn rasterize_depth(
    projected: Vec<ProjectedGaussian>,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    k.validate()?;
    cfg.validate()?;
    let grid = TileGrid::new(k.width, k.height, cfg.tile_size);

    let mut order: Vec<u32> = Vec::new();
    for (i, p) in projected.iter().enumerate() {
        if !p.visible {
            continue;
        }
        if !(p.cov.determinant() > 0.0 && p.cov[(0, 0)] > 0.0) {
            return Err(Error::InternalConsistency(format!(
                "screen covariance of Gaussian {} is not positive definite",
                p.source
            )));
        }
        order.push(i as u32);
    }
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth
            .total_cmp(&pb.depth)
            .then(pa.source.cmp(&pb.source))
    });

    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); grid.count()];
    let (wmax, hmax) = ((k.width - 1) as f64, (k.height - 1) as f64);
    for &i in &order {
        let p = &projected[i as usize];
        // the cutoff box lies inside the radius square and holds every
        // pixel the splat can contribute to
        let [bx0, bx1, by0, by1] = cutoff_box(p, cfg.sigma_cutoff);
        let x0 = ((p.mean.x - p.radius).floor().max(bx0 as f64)).clamp(0.0, wmax);
        let x1 = ((p.mean.x + p.radius).ceil().min(bx1 as f64)).clamp(0.0, wmax);
        let y0 = ((p.mean.y - p.radius).floor().max(by0 as f64)).clamp(0.0, hmax);
        let y1 = ((p.mean.y + p.radius).ceil().min(by1 as f64)).clamp(0.0, hmax);
        if bx1 < 0 || by1 < 0 || bx0 > wmax as i64 || by0 > hmax as i64 {
            continue;
        }
        let (x0, x1, y0, y1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
        for ty in y0 / grid.size..=y1 / grid.size {
            for tx in x0 / grid.size..=x1 / grid.size {
                tile_lists[ty * grid.nx + tx].push(i);
            }
        }
    }

    let tiles = match cfg.precision {
        Precision::F64 => run_tiles::<f64>(&grid, &projected, &tile_lists, cfg),
        Precision::F32 => run_tiles::<f32>(&grid, &projected, &tile_lists, cfg),
    };

    let mut depth = Image::zeros(k.width, k.height);
    let mut alpha = Image::zeros(k.width, k.height);
    let mut norm_depth = Image::zeros(k.width, k.height);
    let mut mask = Mask::new(k.width, k.height, false);
    let mut records = cfg.save_contributors.then(|| Vec::with_capacity(tiles.len()));
    for (t, out) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let (d, a) = (out.depth[i], out.alpha[i]);
                depth.set(x, y, d);
                alpha.set(x, y, a);
                if a > cfg.alpha_floor {
                    norm_depth.set(x, y, d / a);
                    mask.set(x, y, true);
                }
                i += 1;
            }
        }
        if let (Some(rs), Some(r)) = (records.as_mut(), out.record) {
            rs.push(r);
        }
    }

    let checksum = projection_checksum(&projected, k, cfg);
    Ok(RenderOutput {
        depth,
        alpha,
        norm_depth,
        mask,
        ctx: BackwardContext {
            intrinsics: *k,
            cfg: *cfg,
            grid,
            projected,
            tile_lists,
            records,
            checksum,
        },
    })
}

/// Upstream gradient at a pixel w.r.t. the composited depth and alpha.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PixelCotangent {
    pub depth: f64,
    pub alpha: f64,
}

/// Gradient w.r.t. one projected splat's screen parameters:
/// `[mean.x, mean.y, conic00, conic01 (= conic10), conic11, depth]`.
/// The conic entries are per matrix entry; both off-diagonal entries
/// receive the value at index 3.
pub(crate) type SplatGrad = [f64; 6];

fn backward_tile<T: Real>(
    ctx: &BackwardContext,
    t: usize,
    cot: &[PixelCotangent],
    splats: &[Splat<T>],
    feet: &[Footprint],
) -> Result<Vec<SplatGrad>> {
    let grid = &ctx.grid;
    let list = &ctx.tile_lists[t];
    let mut acc = vec![[0.0; 6]; list.len()];
    if list.is_empty() {
        return Ok(acc);
    }
    let (x0, x1, y0, y1) = grid.bounds(t);
    let tw = x1 - x0;
    let n = tw * (y1 - y0);
    let mut g_d = vec![T::zero(); n];
    let mut g_a = vec![T::zero(); n];
    let mut any = false;
    for y in y0..y1 {
        for x in x0..x1 {
            let c = cot[y * grid.width + x];
            let i = (y - y0) * tw + x - x0;
            g_d[i] = T::of(c.depth);
            g_a[i] = T::of(c.alpha);
            any |= c.depth != 0.0 || c.alpha != 0.0;
        }
    }
    if !any {
        return Ok(acc);
    }
    let replayed;
    let record = match &ctx.records {
        Some(records) => &records[t],
        None => {
            let prm = KernelParams::<T>::new(&ctx.cfg);
            replayed = render_tile(grid, t, splats, feet, &prm, true)
                .record
                .expect("record requested");
            &replayed
        }
    };
    let half = T::of(0.5);
    let one = T::one();
    // contributions of fragments behind the current one, per pixel
    let mut suffix_d = vec![T::zero(); n];
    let mut suffix_a = vec![T::zero(); n];
    for slot in (0..list.len()).rev() {
        let s = &splats[slot];
        let a = &mut acc[slot];
        for k in record.range(slot) {
            let code = record.pixel[k];
            let i = (code & !CLAMPED_BIT) as usize;
            let (gd, ga) = (g_d[i], g_a[i]);
            if gd == T::zero() && ga == T::zero() {
                continue;
            }
            let alpha = T::of(record.alpha[k]);
            let tr = T::of(record.transmittance[k]);
            let w = alpha * tr;
            let inv = one / (one - alpha);
            let d_alpha = gd * (s.depth * tr - suffix_d[i] * inv) + ga * (tr - suffix_a[i] * inv);
            let g_depth = gd * w;
            suffix_d[i] = suffix_d[i] + s.depth * w;
            suffix_a[i] = suffix_a[i] + w;
            if !(d_alpha.is_finite() && g_depth.is_finite()) {
                return Err(Error::numeric("compositing gradient", Some((x0 + i % tw, y0 + i / tw))));
            }
            a[5] += g_depth.wide();
            if code & CLAMPED_BIT != 0 {
                continue;
            }
            let g_sigma = -alpha * d_alpha;
            let dx = T::of((x0 + i % tw) as f64) - s.mx;
            let dy = T::of((y0 + i / tw) as f64) - s.my;
            // σ = ½ Δᵀ C Δ with Δ = p - μ
            a[0] += (-g_sigma * (s.a * dx + s.b * dy)).wide();
            a[1] += (-g_sigma * (s.b * dx + s.c * dy)).wide();
            a[2] += (g_sigma * half * dx * dx).wide();
            a[3] += (g_sigma * half * dx * dy).wide();
            a[4] += (g_sigma * half * dy * dy).wide();
        }
    }
    Ok(acc)
}
fn backward_tiles<T: Real>(
    ctx: &BackwardContext,
    cot: &[PixelCotangent],
) -> Result<Vec<SplatGrad>> {
    let splats = gather_splats::<T>(&ctx.projected, &ctx.tile_lists, ctx.cfg.sigma_cutoff);
    let mut total = vec![[0.0; 6]; ctx.projected.len()];
    let merge = |total: &mut Vec<SplatGrad>, t: usize, acc: &[SplatGrad]| {
        for (slot, g) in acc.iter().enumerate() {
            let dst = &mut total[ctx.tile_lists[t][slot] as usize];
            for k in 0..6 {
                dst[k] += g[k];
            }
        }
    };
    if ctx.cfg.deterministic {
        let per_tile: Vec<Result<Vec<SplatGrad>>> = (0..ctx.grid.count())
            .into_par_iter()
            .map(|t| backward_tile(ctx, t, cot, &splats[t].0, &splats[t].1))
            .collect();
        for (t, acc) in per_tile.into_iter().enumerate() {
            merge(&mut total, t, &acc?);
        }
    } else {
        let shared = Mutex::new(total);
        (0..ctx.grid.count()).into_par_iter().try_for_each(|t| {
            let acc = backward_tile(ctx, t, cot, &splats[t].0, &splats[t].1)?;
            merge(&mut shared.lock().expect("poisoned"), t, &acc);
            Ok::<_, Error>(())
        })?;
        total = shared.into_inner().expect("poisoned");
    }
    Ok(total)
}

/// Reverse compositing: per-splat gradients of the screen parameters given
/// per-pixel cotangents on the composited depth and alpha.
pub(crate) fn backward_pixels(
    ctx: &BackwardContext,
    cot: &[PixelCotangent],
) -> Result<Vec<SplatGrad>> {
    debug_assert_eq!(cot.len(), ctx.grid.width * ctx.grid.height);
    match ctx.cfg.precision {
        Precision::F64 => backward_tiles::<f64>(ctx, cot),
        Precision::F32 => backward_tiles::<f32>(ctx, cot),
    }
}
