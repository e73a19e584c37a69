//! Tile-based front-to-back alpha compositing and its reverse pass.

use rayon::prelude::*;

use super::{Real, Splat2D, ALPHA_MAX, ALPHA_MIN, T_MIN};

/// Per-tile splat lists. Splats must already be in depth order; each list
/// inherits that order.
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build<F: Real>(splats: &[Splat2D<F>], width: usize, height: usize, tile_size: usize) -> Self {
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            let [x0, y0, x1, y1] = s.rect;
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            for ty in y0 / tile_size..=(y1 - 1) / tile_size {
                for tx in x0 / tile_size..=(x1 - 1) / tile_size {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self { tile_size, tiles_x, lists }
    }

    fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Screen-space falloff exponent `-½ Δᵀ Q Δ` at a pixel center.
#[inline]
pub(crate) fn falloff<F: Real>(s: &Splat2D<F>, px: F, py: F) -> (F, F, F) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let half = F::of(0.5);
    let power = -half * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    (power, dx, dy)
}

pub(crate) struct TileOutput<F> {
    pub color: Vec<F>,
    pub transmittance: Vec<F>,
    pub count: Vec<u32>,
}

/// Composites one pixel over an ordered splat sequence. Returns
/// `(color, final transmittance, contributing splats)`.
#[inline]
pub(crate) fn composite_pixel<F: Real>(
    splats: &[Splat2D<F>],
    order: impl Iterator<Item = usize>,
    px: F,
    py: F,
    background: [F; 3],
) -> ([F; 3], F, u32) {
    let one = F::one();
    let mut t = one;
    let mut color = [F::zero(); 3];
    let mut count = 0u32;
    let alpha_min = F::of(ALPHA_MIN);
    let alpha_max = F::of(ALPHA_MAX);
    let t_min = F::of(T_MIN);
    for i in order {
        let s = &splats[i];
        let (power, _, _) = falloff(s, px, py);
        if power > F::zero() {
            continue;
        }
        let alpha = (s.alpha * power.exp()).min(alpha_max);
        if alpha < alpha_min {
            continue;
        }
        let next = t * (one - alpha);
        if next < t_min {
            break;
        }
        for c in 0..3 {
            color[c] = color[c] + s.rgb[c] * alpha * t;
        }
        t = next;
        count += 1;
    }
    for c in 0..3 {
        color[c] = color[c] + t * background[c];
    }
    (color, t, count)
}

pub(crate) fn rasterize<F: Real>(
    splats: &[Splat2D<F>],
    bins: &TileBins,
    width: usize,
    height: usize,
    background: [F; 3],
) -> (Vec<F>, Vec<F>, Vec<u32>) {
    let tiles: Vec<TileOutput<F>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = bins.tile_rect(tile, width, height);
            let list = &bins.lists[tile];
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOutput { color: Vec::with_capacity(3 * n), transmittance: Vec::with_capacity(n), count: Vec::with_capacity(n) };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (c, t, k) = composite_pixel(
                        splats,
                        list.iter().map(|&i| i as usize),
                        F::of(x as f64 + 0.5),
                        F::of(y as f64 + 0.5),
                        background,
                    );
                    out.color.extend_from_slice(&c);
                    out.transmittance.push(t);
                    out.count.push(k);
                }
            }
            out
        })
        .collect();

    let mut color = vec![F::zero(); width * height * 3];
    let mut transmittance = vec![F::one(); width * height];
    let mut count = vec![0u32; width * height];
    for (tile, out) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = bins.tile_rect(tile, width, height);
        let w = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * w + (x - x0);
                let px = y * width + x;
                color[3 * px..3 * px + 3].copy_from_slice(&out.color[3 * local..3 * local + 3]);
                transmittance[px] = out.transmittance[local];
                count[px] = out.count[local];
            }
        }
    }
    (color, transmittance, count)
}

/// Screen-space gradient for one splat.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean: [f64; 2],
    /// With respect to `(a, b, c)` in `a dx² + 2b dx dy + c dy²`.
    pub conic: [f64; 3],
    pub alpha: f64,
    pub rgb: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, other: &SplatGrad) {
        for i in 0..2 {
            self.mean[i] += other.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += other.conic[i];
            self.rgb[i] += other.rgb[i];
        }
        self.alpha += other.alpha;
    }
}

struct Contribution<F> {
    slot: usize,
    alpha: F,
    t: F,
    clamped: bool,
    dx: F,
    dy: F,
}

/// Reverse pass: per-splat gradients given `dL/dcolor` for every pixel.
/// Tiles are processed in parallel into private buffers, then summed in tile
/// order so the result does not depend on the worker count.
pub(crate) fn rasterize_backward<F: Real>(
    splats: &[Splat2D<F>],
    bins: &TileBins,
    width: usize,
    height: usize,
    background: [F; 3],
    grad_color: &[F],
) -> Vec<SplatGrad> {
    let per_tile: Vec<Vec<SplatGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut grads = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let (x0, y0, x1, y1) = bins.tile_rect(tile, width, height);
            let mut contribs: Vec<Contribution<F>> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = y * width + x;
                    let g = [grad_color[3 * px], grad_color[3 * px + 1], grad_color[3 * px + 2]];
                    if g.iter().all(|v| *v == F::zero()) {
                        continue;
                    }
                    let pxf = F::of(x as f64 + 0.5);
                    let pyf = F::of(y as f64 + 0.5);
                    contribs.clear();
                    let one = F::one();
                    let mut t = one;
                    for (slot, &si) in list.iter().enumerate() {
                        let s = &splats[si as usize];
                        let (power, dx, dy) = falloff(s, pxf, pyf);
                        if power > F::zero() {
                            continue;
                        }
                        let raw = s.alpha * power.exp();
                        let clamped = raw > F::of(ALPHA_MAX);
                        let alpha = raw.min(F::of(ALPHA_MAX));
                        if alpha < F::of(ALPHA_MIN) {
                            continue;
                        }
                        let next = t * (one - alpha);
                        if next < F::of(T_MIN) {
                            break;
                        }
                        contribs.push(Contribution { slot, alpha, t, clamped, dx, dy });
                        t = next;
                    }
                    let mut rest = [t * background[0], t * background[1], t * background[2]];
                    for c in contribs.iter().rev() {
                        let s = &splats[list[c.slot] as usize];
                        let mut g_alpha = F::zero();
                        let weight = c.alpha * c.t;
                        let out = &mut grads[c.slot];
                        for ch in 0..3 {
                            g_alpha = g_alpha + g[ch] * (s.rgb[ch] * c.t - rest[ch] / (one - c.alpha));
                            out.rgb[ch] += (g[ch] * weight).to64();
                            rest[ch] = rest[ch] + s.rgb[ch] * weight;
                        }
                        if c.clamped {
                            continue;
                        }
                        // α′ = α·exp(power)
                        let falloff_value = c.alpha / s.alpha;
                        out.alpha += (g_alpha * falloff_value).to64();
                        let g_power = g_alpha * c.alpha;
                        let half = F::of(0.5);
                        out.conic[0] += (-half * g_power * c.dx * c.dx).to64();
                        out.conic[1] += (-g_power * c.dx * c.dy).to64();
                        out.conic[2] += (-half * g_power * c.dy * c.dy).to64();
                        out.mean[0] += (g_power * (s.conic[0] * c.dx + s.conic[1] * c.dy)).to64();
                        out.mean[1] += (g_power * (s.conic[2] * c.dy + s.conic[1] * c.dx)).to64();
                    }
                }
            }
            grads
        })
        .collect();

    let mut total = vec![SplatGrad::default(); splats.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            total[bins.lists[tile][slot] as usize].add(g);
        }
    }
    total
}
