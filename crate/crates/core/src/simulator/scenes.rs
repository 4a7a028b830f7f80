//! Procedural scenes: analytic test surfaces and a simplified 3.5" hard drive.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::taxonomy::{
    BEARING, LANDING_TRAY, MAGNET, NUM_CLASSES, PCB, PLATTER, READ_WRITE_HEAD, SATA_CONNECTOR, SATA_POWER_CONNECTOR,
    SCREW, SPINDLE_MOTOR_HUB, TOP_PLATE,
};
use crate::annotations::{mask_to_polygon, AnnotationSet, Instance};
use crate::error::{Error, Result};
use crate::geometry::CalibrationModel;
use crate::image::Image;
use crate::io::read_to_string;

use super::{Background, SceneSpec};

/// Number of distinct procedural drive variants.
pub const HDD_VARIANTS: u32 = 14;

const TABLE: Background = Background {
    height: 560.0,
    albedo: 0.35,
};

fn camera_ray_xy(calib: &CalibrationModel, x: usize, y: usize) -> (f64, f64) {
    let d = calib.camera_ray(x as f64, y as f64);
    (d.x, d.y)
}

fn scene_from_depth(calib: &CalibrationModel, depth: impl Fn(f64, f64) -> f64, albedo: f64) -> SceneSpec {
    let (w, h) = (calib.camera_width, calib.camera_height);
    let height_field = Image::from_fn(w, h, |x, y| {
        let (dx, dy) = camera_ray_xy(calib, x, y);
        depth(dx, dy)
    });
    let mut scene = SceneSpec::uniform(w, h, 0.0, albedo);
    scene.background = Background {
        height: height_field.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        albedo,
    };
    scene.height_field = height_field;
    scene
}

/// Fronto-parallel plane at `depth` mm.
pub fn plane_scene(calib: &CalibrationModel, depth: f64) -> SceneSpec {
    scene_from_depth(calib, |_, _| depth, 1.0)
}

/// Plane `z = depth + slope·X`, rising away from the camera toward +x.
pub fn ramp_scene(calib: &CalibrationModel, depth: f64, slope: f64) -> SceneSpec {
    scene_from_depth(calib, |dx, _| depth / (1.0 - slope * dx), 1.0)
}

/// Sphere of `radius` centered on the optical axis at `center_depth`, in front
/// of a plane at `background_depth`; shadows cast by the sphere are included.
pub fn sphere_scene(calib: &CalibrationModel, radius: f64, center_depth: f64, background_depth: f64) -> SceneSpec {
    let mut scene = scene_from_depth(
        calib,
        |dx, dy| {
            // |t·d − c|² = r² with d = (dx, dy, 1), c = (0, 0, center_depth).
            let a = dx * dx + dy * dy + 1.0;
            let b = -2.0 * center_depth;
            let c = center_depth * center_depth - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return background_depth;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            t.min(background_depth)
        },
        1.0,
    );
    scene.background.height = background_depth;
    scene.cast_shadows = true;
    scene.compute_shadows(calib);
    scene
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveFacing {
    Platter,
    Pcb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    /// Rectangle centered at `(cx, cy)` rotated by `angle` radians.
    Rect { cx: f64, cy: f64, w: f64, h: f64, angle: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { cx, cy, w, h, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                u.abs() <= w / 2.0 && v.abs() <= h / 2.0
            }
        }
    }

    fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Disk { cx, cy, .. } | Shape::Rect { cx, cy, .. } => (cx, cy),
        }
    }
}

/// One flat part of the drive in drive-local millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub class_id: u8,
    pub shape: Shape,
    /// Offset of the part's top face from the drive's reference plane, mm;
    /// negative values are closer to the camera.
    pub depth_offset: f64,
    pub albedo: f64,
    /// Index of the component a screw is mounted on.
    pub parent: Option<usize>,
}

/// A drive as a stack of flat parts, placed in front of the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HddLayout {
    pub facing: DriveFacing,
    pub components: Vec<Component>,
    /// Depth of the drive's reference plane, mm.
    pub depth: f64,
    /// Lateral position of the drive center, mm.
    pub offset: (f64, f64),
    /// In-plane rotation, radians.
    pub yaw: f64,
}

const SCREW_RADIUS: f64 = 2.0;
const SCREW_RISE: f64 = 1.5;

impl HddLayout {
    /// Variant `v`: even variants face the platter side, odd ones the PCB side.
    pub fn variant(v: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + v as u64);
        let facing = if v % 2 == 0 { DriveFacing::Platter } else { DriveFacing::Pcb };
        let depth = rng.random_range(525.0..535.0);
        let offset = (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0));
        let yaw = rng.random_range(-8.0f64..8.0).to_radians();
        let components = match facing {
            DriveFacing::Platter => platter_side(&mut rng),
            DriveFacing::Pcb => pcb_side(&mut rng),
        };
        Self {
            facing,
            components,
            depth,
            offset,
            yaw,
        }
    }

    /// Instance id of component `i` in the rendered scene.
    pub fn instance_id(i: usize) -> u32 {
        i as u32 + 1
    }

    pub fn render(&self, calib: &CalibrationModel) -> SceneSpec {
        let (w, h) = (calib.camera_width, calib.camera_height);
        // Nearest parts first; earlier components win ties.
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        order.sort_by(|&a, &b| self.components[a].depth_offset.total_cmp(&self.components[b].depth_offset));
        let (s, c) = self.yaw.sin_cos();
        let mut scene = SceneSpec::uniform(w, h, TABLE.height, TABLE.albedo);
        scene.num_materials = NUM_CLASSES;
        scene.background = TABLE;
        scene.cast_shadows = true;
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = camera_ray_xy(calib, x, y);
                for &i in &order {
                    let comp = &self.components[i];
                    let z = self.depth + comp.depth_offset;
                    let (wx, wy) = (dx * z - self.offset.0, dy * z - self.offset.1);
                    let (lx, ly) = (wx * c + wy * s, -wx * s + wy * c);
                    if comp.shape.contains(lx, ly) {
                        scene.height_field.set(x, y, z);
                        scene.albedo.set(x, y, comp.albedo);
                        scene.material_index.set(x, y, comp.class_id + 1);
                        scene.instance_index.set(x, y, Self::instance_id(i));
                        break;
                    }
                }
            }
        }
        scene.compute_shadows(calib);
        scene
    }
}

fn screw(cx: f64, cy: f64, parent: usize, parent_offset: f64) -> Component {
    Component {
        class_id: SCREW,
        shape: Shape::Disk {
            cx,
            cy,
            r: SCREW_RADIUS,
        },
        depth_offset: parent_offset - SCREW_RISE,
        albedo: 0.6,
        parent: Some(parent),
    }
}

fn part(class_id: u8, shape: Shape, depth_offset: f64, albedo: f64) -> Component {
    Component {
        class_id,
        shape,
        depth_offset,
        albedo,
        parent: None,
    }
}

fn rect(cx: f64, cy: f64, w: f64, h: f64) -> Shape {
    Shape::Rect { cx, cy, w, h, angle: 0.0 }
}

const DRIVE_W: f64 = 101.6;
const DRIVE_H: f64 = 147.0;

fn platter_side(rng: &mut ChaCha8Rng) -> Vec<Component> {
    let hub = (0.0, -22.0);
    let pivot: (f64, f64) = (33.0, 50.0);
    let tip: (f64, f64) = (rng.random_range(0.0..10.0), rng.random_range(-2.0..10.0));
    let arm_len = (tip.0 - pivot.0).hypot(tip.1 - pivot.1);
    let arm_angle = (tip.1 - pivot.1).atan2(tip.0 - pivot.0);
    let mut c = vec![
        part(TOP_PLATE, rect(0.0, 0.0, DRIVE_W, DRIVE_H), 8.0, 0.7),
        part(
            PLATTER,
            Shape::Disk {
                cx: hub.0,
                cy: hub.1,
                r: 47.0,
            },
            6.0,
            rng.random_range(2.5..4.0),
        ),
        part(
            SPINDLE_MOTOR_HUB,
            Shape::Disk {
                cx: hub.0,
                cy: hub.1,
                r: 12.5,
            },
            1.0,
            0.85,
        ),
        part(
            BEARING,
            Shape::Disk {
                cx: pivot.0,
                cy: pivot.1,
                r: 7.0,
            },
            2.0,
            0.75,
        ),
        part(
            READ_WRITE_HEAD,
            Shape::Rect {
                cx: (pivot.0 + tip.0) / 2.0,
                cy: (pivot.1 + tip.1) / 2.0,
                w: arm_len,
                h: 7.0,
                angle: arm_angle,
            },
            3.0,
            0.9,
        ),
        part(MAGNET, rect(28.0, 62.0, 26.0, 10.0), 2.5, 0.45),
        part(LANDING_TRAY, rect(43.0, 20.0, 5.0, 14.0), 3.5, 0.6),
    ];
    let (top, hub_i, magnet) = (0, 2, 5);
    let hub_screws = if rng.random_bool(0.5) { 6 } else { 8 };
    for k in 0..hub_screws {
        let a = std::f64::consts::TAU * k as f64 / hub_screws as f64;
        c.push(screw(hub.0 + 8.0 * a.cos(), hub.1 + 8.0 * a.sin(), hub_i, 1.0));
    }
    c.push(screw(20.0, 62.0, magnet, 2.5));
    c.push(screw(37.0, 62.0, magnet, 2.5));
    for (x, y) in [(-46.0, 69.0), (46.0, 69.0), (-46.0, -69.0), (46.0, -69.0), (-47.5, 10.0), (47.5, 10.0)] {
        c.push(screw(x, y, top, 8.0));
    }
    c
}

fn pcb_side(rng: &mut ChaCha8Rng) -> Vec<Component> {
    let pcb_h = rng.random_range(100.0..112.0);
    let mut c = vec![
        part(TOP_PLATE, rect(0.0, 0.0, DRIVE_W, DRIVE_H), 0.0, 0.65),
        part(PCB, rect(0.0, 60.0 - pcb_h / 2.0, 92.0, pcb_h), -1.6, 0.35),
        part(
            SPINDLE_MOTOR_HUB,
            Shape::Disk {
                cx: 0.0,
                cy: -22.0,
                r: 13.0,
            },
            -3.0,
            0.8,
        ),
        part(SATA_CONNECTOR, rect(-15.0, 69.5, 22.0, 6.0), -4.0, 0.3),
        part(SATA_POWER_CONNECTOR, rect(12.0, 69.5, 14.0, 6.0), -4.0, 0.3),
    ];
    let (top, pcb) = (0, 1);
    let y_low = 60.0 - pcb_h + 5.0;
    for (x, y) in [(-40.0, y_low), (40.0, y_low), (-40.0, 52.0), (40.0, 52.0), (0.0, 30.0)] {
        if rng.random_bool(0.85) {
            c.push(screw(x, y, pcb, -1.6));
        }
    }
    for (x, y) in [(-46.0, -69.0), (46.0, -69.0)] {
        c.push(screw(x, y, top, 0.0));
    }
    c
}

/// Procedural drive scene for variant `v` (see [`HddLayout::variant`]).
pub fn hdd_scene(calib: &CalibrationModel, v: u32) -> SceneSpec {
    HddLayout::variant(v).render(calib)
}

/// Ground-truth polygon annotations of every visible instance, in instance-id
/// order. Classes come from the material map (`class = material − 1`).
pub fn scene_annotations(scene: &SceneSpec) -> AnnotationSet {
    let (w, h) = (scene.width(), scene.height());
    let mut classes: BTreeMap<u32, u8> = BTreeMap::new();
    for (&inst, &mat) in scene.instance_index.as_slice().iter().zip(scene.material_index.as_slice()) {
        if inst != 0 && mat != 0 {
            classes.entry(inst).or_insert(mat - 1);
        }
    }
    let instances = classes
        .into_iter()
        .filter_map(|(id, class_id)| {
            let mask = scene.instance_index.map(|&i| i == id);
            mask_to_polygon(&mask)
                .ok()
                .filter(|p| p.len() >= 3)
                .map(|polygon| Instance::ground_truth(class_id, polygon))
        })
        .collect();
    AnnotationSet {
        instances,
        image_width: w,
        image_height: h,
    }
}

/// Serializable recipe for a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneDescriptor {
    Plane {
        #[serde(default = "default_depth")]
        depth: f64,
    },
    Ramp {
        #[serde(default = "default_depth")]
        depth: f64,
        #[serde(default = "default_slope")]
        slope: f64,
    },
    Sphere {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_depth")]
        center_depth: f64,
        #[serde(default = "default_sphere_background")]
        background_depth: f64,
    },
    Hdd {
        #[serde(default)]
        variant: u32,
    },
}

fn default_depth() -> f64 {
    500.0
}
fn default_slope() -> f64 {
    0.25
}
fn default_radius() -> f64 {
    40.0
}
fn default_sphere_background() -> f64 {
    540.0
}

impl SceneDescriptor {
    /// Accepts a JSON file path or a shorthand: `plane`, `ramp`, `sphere`,
    /// `hdd` or `hdd:<variant>`.
    pub fn from_arg(arg: &str) -> Result<Self> {
        let (name, param) = match arg.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (arg, None),
        };
        let parse_variant = || -> Result<u32> {
            param
                .map(|p| p.parse().map_err(|_| Error::Parameter(format!("invalid scene variant {p:?}"))))
                .transpose()
                .map(|v| v.unwrap_or(0))
        };
        match name {
            "plane" if param.is_none() => Ok(Self::Plane { depth: default_depth() }),
            "ramp" if param.is_none() => Ok(Self::Ramp {
                depth: default_depth(),
                slope: default_slope(),
            }),
            "sphere" if param.is_none() => Ok(Self::Sphere {
                radius: default_radius(),
                center_depth: default_depth(),
                background_depth: default_sphere_background(),
            }),
            "hdd" => Ok(Self::Hdd {
                variant: parse_variant()?,
            }),
            _ => {
                let path = Path::new(arg);
                if !path.exists() {
                    return Err(Error::Parameter(format!(
                        "unknown scene {arg:?}; expected plane, ramp, sphere, hdd[:N] or a JSON file"
                    )));
                }
                let text = read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::format(arg, Some(format!("line {} column {}", e.line(), e.column())), e.to_string())
                })
            }
        }
    }

    pub fn build(&self, calib: &CalibrationModel) -> Result<SceneSpec> {
        match *self {
            Self::Plane { depth } => Ok(plane_scene(calib, depth)),
            Self::Ramp { depth, slope } => Ok(ramp_scene(calib, depth, slope)),
            Self::Sphere {
                radius,
                center_depth,
                background_depth,
            } => Ok(sphere_scene(calib, radius, center_depth, background_depth)),
            Self::Hdd { variant } if variant < HDD_VARIANTS => Ok(hdd_scene(calib, variant)),
            Self::Hdd { variant } => Err(Error::Parameter(format!(
                "hdd variant {variant} outside 0..{HDD_VARIANTS}"
            ))),
        }
    }
}

impl Component {
    pub fn center(&self) -> (f64, f64) {
        self.shape.center()
    }
}
