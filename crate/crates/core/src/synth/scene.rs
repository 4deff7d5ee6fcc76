use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::config::{Shape, SynthConfig};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Velocity persistence of the random walk.
const MOMENTUM: f64 = 0.8;
/// Pull of the log-scale towards the initial size.
const SCALE_REVERSION: f64 = 0.95;
const MAX_LOG_SCALE: f64 = 0.4;
/// Minimum gap between object boxes, in pixels.
const GAP: f64 = 2.0;
const MIN_COLOR_DISTANCE: f64 = 0.35;
const BACKGROUND_AMPLITUDE: f64 = 0.08;

/// Static look of one object; colors drift frame to frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    pub shape: Shape,
    pub color: [f64; 3],
    pub stripe_color: [f64; 3],
    /// Stripe period in pixels.
    pub stripe_period: f64,
    /// Stripe direction as a unit vector.
    pub stripe_dir: [f64; 2],
}

/// One object in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectState {
    pub bbox: BoundingBox,
    pub appearance: Appearance,
}

/// Smooth textured background.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub base: [f64; 3],
    /// `(kx, ky, phase, channel weight)` sinusoid components.
    pub waves: Vec<[f64; 4]>,
}

impl Background {
    pub fn value(&self, c: usize, x: f64, y: f64) -> f64 {
        let mut v = self.base[c];
        for (i, w) in self.waves.iter().enumerate() {
            let s = (w[0] * x + w[1] * y + w[2]).sin();
            let sign = if (i + c) % 2 == 0 { 1.0 } else { -1.0 };
            v += BACKGROUND_AMPLITUDE * w[3] * sign * s;
        }
        v
    }
}

/// Simulated states of every object over a sequence. Object 0 is the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub canvas_size: usize,
    pub background: Background,
    /// `objects[frame][k]`.
    pub objects: Vec<Vec<ObjectState>>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn target(&self, frame: usize) -> &ObjectState {
        &self.objects[frame][0]
    }
}

fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn random_color(rng: &mut Rng, avoid: &[[f64; 3]]) -> [f64; 3] {
    let mut best = [0.5; 3];
    let mut best_d = -1.0;
    for _ in 0..64 {
        let c = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        let d = avoid
            .iter()
            .map(|a| color_distance(a, &c))
            .fold(f64::INFINITY, f64::min);
        if d >= MIN_COLOR_DISTANCE {
            return c;
        }
        if d > best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn random_appearance(rng: &mut Rng, shape: Shape, avoid: &[[f64; 3]]) -> Appearance {
    let color = random_color(rng, avoid);
    let shade = rng.random_range(0.45..0.75);
    let stripe_color = color.map(|c| {
        if c > 0.5 {
            c * shade
        } else {
            1.0 - (1.0 - c) * shade
        }
    });
    let angle = [0.0, 0.5, 0.25, 0.75][rng.random_range(0..4)] * std::f64::consts::PI;
    Appearance {
        shape,
        color,
        stripe_color,
        stripe_period: rng.random_range(3.0..6.0),
        stripe_dir: [angle.cos(), angle.sin()],
    }
}

fn separated(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x2() + GAP <= b.x1()
        || b.x2() + GAP <= a.x1()
        || a.y2() + GAP <= b.y1()
        || b.y2() + GAP <= a.y1()
}

fn inside(b: &BoundingBox, size: f64) -> bool {
    b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= size && b.y2() <= size
}

/// Reflects `c` so that `[c - half, c + half]` lies in `[0, size]`; flips `v` on a bounce.
fn reflect(c: f64, half: f64, size: f64, v: &mut f64) -> f64 {
    let (lo, hi) = (half, size - half);
    let mut c = c;
    for _ in 0..4 {
        if c < lo {
            c = 2.0 * lo - c;
            *v = v.abs();
        } else if c > hi {
            c = 2.0 * hi - c;
            *v = -v.abs();
        } else {
            break;
        }
    }
    c.clamp(lo, hi)
}

struct Walker {
    state: ObjectState,
    base_w: f64,
    base_h: f64,
    log_scale: f64,
    v: [f64; 2],
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("non-negative sigma")
}

/// Simulates object motion and appearance for instance `id`. Deterministic in
/// `(cfg.seed, id)`.
pub fn simulate(cfg: &SynthConfig, id: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[0x5ce7e, id]);
    let size = cfg.canvas_size as f64;
    let base = [
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
    ];
    let waves = (0..3)
        .map(|_| {
            let freq = rng.random_range(0.03..0.12);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            [
                freq * angle.cos(),
                freq * angle.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let background = Background { base, waves };

    let target_shape = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let mut walkers: Vec<Walker> = Vec::new();
    let mut colors = vec![base];
    for k in 0..=cfg.distractors {
        // distractors share the target's shape half of the time
        let shape = if k == 0 || rng.random_bool(0.5) {
            target_shape
        } else {
            cfg.shapes[rng.random_range(0..cfg.shapes.len())]
        };
        let appearance = random_appearance(&mut rng, shape, &colors);
        colors.push(appearance.color);
        let mut placed = None;
        for _ in 0..10_000 {
            let side = rng.random_range(cfg.object_min_size..=cfg.object_max_size);
            let aspect: f64 = rng.random_range(0.7..1.4);
            let (w, h) = (side * aspect.sqrt(), side / aspect.sqrt());
            let cx = rng.random_range(w / 2.0..=size - w / 2.0);
            let cy = rng.random_range(h / 2.0..=size - h / 2.0);
            let b = BoundingBox::new(cx, cy, w, h)?;
            if walkers.iter().all(|o| separated(&o.state.bbox, &b)) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed
            .ok_or_else(|| Error::Config("could not place objects without overlap".into()))?;
        walkers.push(Walker {
            base_w: bbox.w,
            base_h: bbox.h,
            state: ObjectState { bbox, appearance },
            log_scale: 0.0,
            v: [0.0, 0.0],
        });
    }

    let (nt, ns, na) = (
        normal(cfg.translation_sigma),
        normal(cfg.scale_sigma),
        normal(cfg.appearance_sigma),
    );
    let mut objects = vec![walkers.iter().map(|w| w.state.clone()).collect::<Vec<_>>()];
    for _ in 1..cfg.sequence_length {
        for k in 0..walkers.len() {
            let old = (walkers[k].state.bbox, walkers[k].log_scale, walkers[k].v);
            let w = &mut walkers[k];
            w.v[0] = MOMENTUM * w.v[0] + nt.sample(&mut rng);
            w.v[1] = MOMENTUM * w.v[1] + nt.sample(&mut rng);
            w.log_scale = (SCALE_REVERSION * w.log_scale + ns.sample(&mut rng))
                .clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
            let (bw, bh) = (w.base_w * w.log_scale.exp(), w.base_h * w.log_scale.exp());
            let cx = reflect(w.state.bbox.cx + w.v[0], bw / 2.0, size, &mut w.v[0]);
            let cy = reflect(w.state.bbox.cy + w.v[1], bh / 2.0, size, &mut w.v[1]);
            let proposal = BoundingBox::new(cx, cy, bw, bh)?;
            let clear = inside(&proposal, size)
                && walkers
                    .iter()
                    .enumerate()
                    .all(|(j, o)| j == k || separated(&o.state.bbox, &proposal));
            let w = &mut walkers[k];
            if clear {
                w.state.bbox = proposal;
            } else {
                // stay put and bounce back
                w.state.bbox = old.0;
                w.log_scale = old.1;
                w.v = [-old.2[0], -old.2[1]];
            }
            let a = &mut w.state.appearance;
            for c in 0..3 {
                let d = na.sample(&mut rng);
                a.color[c] = (a.color[c] + d).clamp(0.05, 0.95);
                a.stripe_color[c] = (a.stripe_color[c] + d).clamp(0.02, 0.98);
            }
        }
        objects.push(walkers.iter().map(|w| w.state.clone()).collect());
    }
    Ok(Scene {
        canvas_size: cfg.canvas_size,
        background,
        objects,
    })
}

/// Whether the pixel center `(x, y)` lies inside `obj`.
pub fn covers(obj: &ObjectState, x: f64, y: f64) -> bool {
    let b = &obj.bbox;
    let (dx, dy) = (x - b.cx, y - b.cy);
    match obj.appearance.shape {
        Shape::Rectangle => dx.abs() <= b.w / 2.0 && dy.abs() <= b.h / 2.0,
        Shape::Ellipse => (2.0 * dx / b.w).powi(2) + (2.0 * dy / b.h).powi(2) <= 1.0,
        Shape::Triangle => {
            // apex at the top center, base along the bottom edge
            let t = (y - b.y1()) / b.h;
            (0.0..=1.0).contains(&t) && dx.abs() <= 0.5 * b.w * t
        }
    }
}

fn object_color(obj: &ObjectState, x: f64, y: f64) -> [f64; 3] {
    let a = &obj.appearance;
    let u = (x - obj.bbox.cx) * a.stripe_dir[0] + (y - obj.bbox.cy) * a.stripe_dir[1];
    if (u / a.stripe_period).rem_euclid(1.0) < 0.5 {
        a.color
    } else {
        a.stripe_color
    }
}

/// Rasterises `objects` over `background`. Returns the `[3, S, S]` image and
/// a per-pixel label map (0 background, `k + 1` for `objects[k]`).
pub fn render<T: Scalar>(
    canvas_size: usize,
    background: &Background,
    objects: &[ObjectState],
) -> (Tensor<T>, Vec<u8>) {
    let s = canvas_size;
    let mut data = vec![T::zero(); 3 * s * s];
    let mut labels = vec![0u8; s * s];
    for py in 0..s {
        for px in 0..s {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let k = py * s + px;
            let hit = objects.iter().rposition(|o| covers(o, x, y));
            let rgb = match hit {
                Some(i) => {
                    labels[k] = (i + 1) as u8;
                    object_color(&objects[i], x, y)
                }
                None => [0, 1, 2].map(|c| background.value(c, x, y)),
            };
            for c in 0..3 {
                data[c * s * s + k] = T::lit(rgb[c].clamp(0.0, 1.0));
            }
        }
    }
    (
        Tensor::new(vec![3, s, s], data).expect("consistent shape"),
        labels,
    )
}

/// Renders frame `frame` of `scene`.
pub fn render_frame<T: Scalar>(scene: &Scene, frame: usize) -> (Tensor<T>, Vec<u8>) {
    render(scene.canvas_size, &scene.background, &scene.objects[frame])
}
