use crate::causal::{Condition, TimeOfDay, WeatherState};
use crate::entity::EntityState;
use crate::geom::{Pose, Vec3};
use crate::map::RoadNetwork;
use crate::rng::{draw, to_unit};
use crate::sim::WorldState;

use super::{camera_basis, resolve_camera_pose, CameraSpec, Frame, Modality, Mount, SemanticClass, SensorError};

/// Half width of the centerline marking band.
const MARKING_HALF_WIDTH: f64 = 0.075;
const RAIN_SPECKLE_RATE: f64 = 0.02;
const RAIN_SPECKLE: [u8; 3] = [200, 205, 220];
const LEAF_SIZE: usize = 4;
/// Node bounds are padded so pruning never rejects a ray the exact test accepts.
const BOUNDS_PAD: f64 = 1e-6;

/// What a camera sees at one tick.
#[derive(Debug, Clone)]
pub struct SceneView<'a> {
    pub network: &'a RoadNetwork,
    pub entities: Vec<&'a EntityState>,
    pub weather: WeatherState,
    pub seed: u64,
    pub tick: u64,
}

impl<'a> SceneView<'a> {
    pub fn from_world(world: &'a WorldState, network: &'a RoadNetwork) -> SceneView<'a> {
        SceneView {
            network,
            entities: world.entities.values().map(|e| &e.state).collect(),
            weather: world.weather,
            seed: world.rng_seed,
            tick: world.tick,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveShape {
    /// The z = 0 plane; its class comes from the lane test at the hit point.
    GroundPlane,
    Box {
        center: [f64; 2],
        z0: f64,
        /// Half length, half width, full height.
        extent: [f64; 3],
        yaw: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub class: SemanticClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub prim: usize,
    /// Ray parameter, equal to the perpendicular depth.
    pub t: f64,
    pub class: SemanticClass,
    /// Axis of the face hit: 0 and 1 are sides, 2 is top or bottom.
    pub face: u8,
}

/// Ground plane (when there is a map), then buildings, then entity boxes by id.
pub fn build_primitives(scene: &SceneView<'_>, exclude: Option<&str>) -> Vec<Primitive> {
    let mut out = Vec::new();
    if !scene.network.is_empty() {
        out.push(Primitive {
            shape: PrimitiveShape::GroundPlane,
            class: SemanticClass::Ground,
        });
    }
    for b in &scene.network.buildings {
        out.push(Primitive {
            shape: PrimitiveShape::Box {
                center: b.center,
                z0: 0.0,
                extent: [b.length / 2.0, b.width / 2.0, b.height],
                yaw: b.rotation,
            },
            class: SemanticClass::Building,
        });
    }
    let mut ents: Vec<&EntityState> = scene
        .entities
        .iter()
        .copied()
        .filter(|e| Some(e.id.as_str()) != exclude)
        .collect();
    ents.sort_by(|a, b| a.id.cmp(&b.id));
    for e in ents {
        out.push(Primitive {
            shape: PrimitiveShape::Box {
                center: [e.pose.x, e.pose.y],
                z0: e.pose.z,
                extent: [e.bbox.length / 2.0, e.bbox.width / 2.0, e.bbox.height],
                yaw: e.pose.heading,
            },
            class: SemanticClass::of_entity(e.class),
        });
    }
    out
}

/// First surface along the ray at or beyond `near`, as (t, face axis).
fn intersect(shape: &PrimitiveShape, o: Vec3, d: Vec3, near: f64) -> Option<(f64, u8)> {
    match *shape {
        PrimitiveShape::GroundPlane => {
            if o[2] > 0.0 && d[2] < 0.0 {
                let t = -o[2] / d[2];
                (t >= near).then_some((t, 2))
            } else {
                None
            }
        }
        PrimitiveShape::Box {
            center,
            z0,
            extent,
            yaw,
        } => {
            let (s, c) = yaw.sin_cos();
            let dx = o[0] - center[0];
            let dy = o[1] - center[1];
            let lo = [c * dx + s * dy, -s * dx + c * dy, o[2] - z0];
            let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let bmin = [-extent[0], -extent[1], 0.0];
            let bmax = [extent[0], extent[1], extent[2]];
            let mut tmin = f64::NEG_INFINITY;
            let mut tmax = f64::INFINITY;
            let (mut fmin, mut fmax) = (0u8, 0u8);
            for axis in 0..3 {
                if ld[axis] == 0.0 {
                    if lo[axis] < bmin[axis] || lo[axis] > bmax[axis] {
                        return None;
                    }
                    continue;
                }
                let mut t1 = (bmin[axis] - lo[axis]) / ld[axis];
                let mut t2 = (bmax[axis] - lo[axis]) / ld[axis];
                if t1 > t2 {
                    std::mem::swap(&mut t1, &mut t2);
                }
                if t1 > tmin {
                    tmin = t1;
                    fmin = axis as u8;
                }
                if t2 < tmax {
                    tmax = t2;
                    fmax = axis as u8;
                }
            }
            if tmin > tmax {
                return None;
            }
            if tmin >= near {
                Some((tmin, fmin))
            } else if tmax >= near {
                Some((tmax, fmax))
            } else {
                None
            }
        }
    }
}

fn ground_class(network: &RoadNetwork, p: [f64; 2]) -> SemanticClass {
    let mut class = SemanticClass::Ground;
    for lane in network.lanes.values() {
        let (_, dist) = lane.project(p);
        if dist <= MARKING_HALF_WIDTH {
            return SemanticClass::Marking;
        }
        if dist <= lane.width / 2.0 {
            class = SemanticClass::Road;
        }
    }
    class
}

fn better(candidate: (f64, usize), best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bt, bi)) => candidate.0 < bt || (candidate.0 == bt && candidate.1 < bi),
    }
}

#[derive(Debug, Clone)]
struct Node {
    min: Vec3,
    max: Vec3,
    /// Leaf: range into `order`. Inner: child node indices.
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf(usize, usize),
    Inner(usize, usize),
}

/// Bounding volume hierarchy over the box primitives.
struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

fn box_bounds(shape: &PrimitiveShape) -> Option<(Vec3, Vec3)> {
    let PrimitiveShape::Box {
        center,
        z0,
        extent,
        yaw,
    } = *shape
    else {
        return None;
    };
    let (s, c) = yaw.sin_cos();
    let rx = (c * extent[0]).abs() + (s * extent[1]).abs();
    let ry = (s * extent[0]).abs() + (c * extent[1]).abs();
    Some((
        [center[0] - rx - BOUNDS_PAD, center[1] - ry - BOUNDS_PAD, z0 - BOUNDS_PAD],
        [center[0] + rx + BOUNDS_PAD, center[1] + ry + BOUNDS_PAD, z0 + extent[2] + BOUNDS_PAD],
    ))
}

impl Bvh {
    fn build(prims: &[Primitive]) -> Bvh {
        let mut items: Vec<(usize, Vec3, Vec3)> = prims
            .iter()
            .enumerate()
            .filter_map(|(i, p)| box_bounds(&p.shape).map(|(lo, hi)| (i, lo, hi)))
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: Vec::new(),
        };
        if !items.is_empty() {
            let n = items.len();
            bvh.split(&mut items, 0, n);
            bvh.order = items.iter().map(|x| x.0).collect();
        }
        bvh
    }

    fn split(&mut self, items: &mut [(usize, Vec3, Vec3)], start: usize, end: usize) -> usize {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for (_, lo, hi) in &items[start..end] {
            for k in 0..3 {
                min[k] = min[k].min(lo[k]);
                max[k] = max[k].max(hi[k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            min,
            max,
            kind: NodeKind::Leaf(start, end),
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap_or(0);
        items[start..end].sort_by(|a, b| {
            (a.1[axis] + a.2[axis])
                .total_cmp(&(b.1[axis] + b.2[axis]))
                .then(a.0.cmp(&b.0))
        });
        let mid = (start + end) / 2;
        let left = self.split(items, start, mid);
        let right = self.split(items, mid, end);
        self.nodes[id].kind = NodeKind::Inner(left, right);
        id
    }

    /// Entry parameter of the ray into the node box, if it meets it before `limit`.
    fn enter(node: &Node, o: Vec3, inv: Vec3, limit: f64) -> Option<f64> {
        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        for k in 0..3 {
            if inv[k].is_infinite() {
                if o[k] < node.min[k] || o[k] > node.max[k] {
                    return None;
                }
                continue;
            }
            let mut t1 = (node.min[k] - o[k]) * inv[k];
            let mut t2 = (node.max[k] - o[k]) * inv[k];
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
        }
        (tmin <= tmax && tmax >= 0.0 && tmin <= limit).then_some(tmin)
    }

    fn nearest(
        &self,
        prims: &[Primitive],
        o: Vec3,
        d: Vec3,
        near: f64,
        far: f64,
        best: &mut Option<(f64, usize, u8)>,
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(far, |b| b.0);
            if Self::enter(node, o, inv, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf(a, b) => {
                    for &pi in &self.order[a..b] {
                        if let Some((t, face)) = intersect(&prims[pi].shape, o, d, near) {
                            if t <= far && better((t, pi), best.map(|b| (b.0, b.1))) {
                                *best = Some((t, pi, face));
                            }
                        }
                    }
                }
                NodeKind::Inner(l, r) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
    }
}

/// Unit-forward ray through the center of pixel (u, v); `d . forward == 1`.
fn pixel_ray(spec: &CameraSpec, pose: &Pose, u: u32, v: u32) -> (Vec3, Vec3) {
    let (f, l, up) = camera_basis(pose.heading, spec.pitch);
    let focal = spec.focal_px();
    let cx = f64::from(spec.width) / 2.0;
    let cy = f64::from(spec.height) / 2.0;
    let a = -(f64::from(u) + 0.5 - cx) / focal;
    let b = -(f64::from(v) + 0.5 - cy) / focal;
    let d = [
        f[0] + a * l[0] + b * up[0],
        f[1] + a * l[1] + b * up[1],
        f[2] + a * l[2] + b * up[2],
    ];
    ([pose.x, pose.y, pose.z], d)
}

fn finish_hit(scene: &SceneView<'_>, prims: &[Primitive], o: Vec3, d: Vec3, best: Option<(f64, usize, u8)>) -> Option<Hit> {
    best.map(|(t, prim, face)| {
        let class = match prims[prim].shape {
            PrimitiveShape::GroundPlane => ground_class(scene.network, [o[0] + t * d[0], o[1] + t * d[1]]),
            PrimitiveShape::Box { .. } => prims[prim].class,
        };
        Hit {
            prim,
            t,
            class,
            face,
        }
    })
}

fn mount_exclusion(spec: &CameraSpec) -> Option<&str> {
    match &spec.mount {
        Mount::Entity { entity, .. } => Some(entity.as_str()),
        Mount::Fixed(_) => None,
    }
}

fn camera_pose(spec: &CameraSpec, scene: &SceneView<'_>) -> Result<Pose, SensorError> {
    resolve_camera_pose(spec, |id| scene.entities.iter().copied().find(|e| e.id == id))
}

/// Per-pixel nearest hits, row-major, using the acceleration structure.
pub fn render_hits(spec: &CameraSpec, scene: &SceneView<'_>) -> Result<(Pose, Vec<Option<Hit>>), SensorError> {
    let pose = camera_pose(spec, scene)?;
    let prims = build_primitives(scene, mount_exclusion(spec));
    let bvh = Bvh::build(&prims);
    let ground = prims
        .first()
        .filter(|p| p.shape == PrimitiveShape::GroundPlane)
        .map(|_| 0usize);
    let mut hits = Vec::with_capacity((spec.width * spec.height) as usize);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let (o, d) = pixel_ray(spec, &pose, u, v);
            let mut best = None;
            if let Some(g) = ground {
                if let Some((t, face)) = intersect(&prims[g].shape, o, d, spec.near) {
                    if t <= spec.far {
                        best = Some((t, g, face));
                    }
                }
            }
            bvh.nearest(&prims, o, d, spec.near, spec.far, &mut best);
            hits.push(finish_hit(scene, &prims, o, d, best));
        }
    }
    Ok((pose, hits))
}

/// Reference path: every pixel against every primitive, in index order.
pub fn brute_force_hits(spec: &CameraSpec, scene: &SceneView<'_>) -> Result<(Pose, Vec<Option<Hit>>), SensorError> {
    let pose = camera_pose(spec, scene)?;
    let prims = build_primitives(scene, mount_exclusion(spec));
    let mut hits = Vec::with_capacity((spec.width * spec.height) as usize);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let (o, d) = pixel_ray(spec, &pose, u, v);
            let mut best: Option<(f64, usize, u8)> = None;
            for (i, p) in prims.iter().enumerate() {
                if let Some((t, face)) = intersect(&p.shape, o, d, spec.near) {
                    if t <= spec.far && better((t, i), best.map(|b| (b.0, b.1))) {
                        best = Some((t, i, face));
                    }
                }
            }
            hits.push(finish_hit(scene, &prims, o, d, best));
        }
    }
    Ok((pose, hits))
}

fn lighting(w: &WeatherState) -> f64 {
    let sun = match w.time_of_day {
        TimeOfDay::Day => 1.0,
        TimeOfDay::Dusk => 0.45,
        TimeOfDay::Night => 0.15,
    };
    match w.condition {
        Condition::Clear => sun,
        Condition::Cloudy => sun * 0.85,
        Condition::Rain => sun * 0.85 * (1.0 - 0.3 * w.rain_intensity),
    }
}

fn face_shade(face: u8) -> f64 {
    match face {
        0 => 0.8,
        1 => 0.65,
        _ => 1.0,
    }
}

/// Render the requested modalities (the camera's own list when `None`).
pub fn render(
    spec: &CameraSpec,
    scene: &SceneView<'_>,
    modalities: Option<&[Modality]>,
) -> Result<Frame, SensorError> {
    let wanted = modalities.unwrap_or(&spec.modalities);
    let (pose, hits) = render_hits(spec, scene)?;
    let mut frame = Frame {
        camera_id: spec.id.clone(),
        tick: scene.tick,
        camera_pose: pose,
        width: spec.width,
        height: spec.height,
        rgb: None,
        semantic: None,
        depth: None,
    };
    if wanted.contains(&Modality::Depth) {
        let no_hit = spec.no_hit();
        frame.depth = Some(hits.iter().map(|h| h.map_or(no_hit, |h| h.t as f32)).collect());
    }
    if wanted.contains(&Modality::Semantic) {
        frame.semantic = Some(
            hits.iter()
                .map(|h| h.map_or(SemanticClass::Void.id(), |h| h.class.id()))
                .collect(),
        );
    }
    if wanted.contains(&Modality::Rgb) {
        let light = lighting(&scene.weather);
        let rain = if scene.weather.condition == Condition::Rain {
            scene.weather.rain_intensity
        } else {
            0.0
        };
        let n = u64::from(spec.width) * u64::from(spec.height);
        let mut rgb = Vec::with_capacity(hits.len() * 3);
        for (idx, h) in hits.iter().enumerate() {
            let speckle = rain > 0.0
                && to_unit(draw(scene.seed, "sensor", &spec.id, scene.tick * n + idx as u64))
                    < RAIN_SPECKLE_RATE * rain;
            if speckle {
                rgb.extend_from_slice(&RAIN_SPECKLE);
                continue;
            }
            let (base, shade) = match h {
                Some(h) => (h.class.color(), face_shade(h.face)),
                None => (SemanticClass::Void.color(), 1.0),
            };
            for c in base {
                rgb.push((f64::from(c) * shade * light).round().clamp(0.0, 255.0) as u8);
            }
        }
        frame.rgb = Some(rgb);
    }
    Ok(frame)
}
