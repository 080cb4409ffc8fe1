use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Factor, Scenario, ScenarioSpace};

pub const IMAGE_SIZE: usize = 32;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Disk,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Cross,
        ShapeClass::Ring,
        ShapeClass::Bar,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Cross => "cross",
            ShapeClass::Ring => "ring",
            ShapeClass::Bar => "bar",
        }
    }

    /// Membership test in shape-local coordinates, where the shape fits
    /// inside the unit disk.
    fn contains(self, x: f64, y: f64) -> bool {
        match self {
            ShapeClass::Disk => x * x + y * y <= 1.0,
            ShapeClass::Square => x.abs() <= 0.75 && y.abs() <= 0.75,
            ShapeClass::Triangle => {
                // Equilateral, circumradius 1, apex up.
                let h = 0.5;
                y >= -h && (3f64.sqrt() * x + y <= 1.0) && (-(3f64.sqrt()) * x + y <= 1.0)
            }
            ShapeClass::Cross => {
                (x.abs() <= 1.0 && y.abs() <= 0.3) || (x.abs() <= 0.3 && y.abs() <= 1.0)
            }
            ShapeClass::Ring => {
                let r2 = x * x + y * y;
                (0.36..=1.0).contains(&r2)
            }
            ShapeClass::Bar => x.abs() <= 1.0 && y.abs() <= 0.3,
        }
    }
}

/// An underlying object: a shape class and its nominal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeInstance {
    pub class: ShapeClass,
    /// Nominal diameter as a fraction of image width, in `(0, 0.5]`.
    pub base_size: f64,
    pub instance_id: String,
}

impl ShapeInstance {
    pub fn new(class: ShapeClass, base_size: f64, instance_id: impl Into<String>) -> Result<Self> {
        if !(base_size > 0.0 && base_size <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "base size {base_size} outside (0, 0.5]"
            )));
        }
        Ok(Self {
            class,
            base_size,
            instance_id: instance_id.into(),
        })
    }

    /// One instance per class at base size 0.4.
    pub fn canonical_set() -> Vec<Self> {
        ShapeClass::ALL
            .iter()
            .map(|&c| Self::new(c, 0.4, c.name()).expect("valid size"))
            .collect()
    }

    pub fn label(&self) -> usize {
        self.class.label()
    }
}

/// The six rendering factors, in canonical order: rotation, scale,
/// translate_x, translate_y, foreground_brightness, background_level.
pub fn render_space() -> ScenarioSpace {
    ScenarioSpace::new(vec![
        Factor::new("rotation", 0.0, TAU).expect("valid factor"),
        Factor::new("scale", 0.5, 1.5).expect("valid factor"),
        Factor::new("translate_x", -0.25, 0.25).expect("valid factor"),
        Factor::new("translate_y", -0.25, 0.25).expect("valid factor"),
        Factor::new("foreground_brightness", 0.2, 1.0).expect("valid factor"),
        Factor::new("background_level", 0.0, 0.5).expect("valid factor"),
    ])
    .expect("valid space")
}

/// Grayscale image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Plain (P2) PGM with 8-bit levels.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .map(|p| ((p * 255.0).round() as u8).to_string())
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Rasterizes `instance` under `scenario` (a point of [`render_space`]) with
/// 4×4 supersampling. Coordinates are in image-width units with the origin
/// at the top-left corner.
pub fn render(instance: &ShapeInstance, scenario: &Scenario) -> Image {
    let v = scenario.values();
    let rotation = v[0].rem_euclid(TAU);
    let radius = 0.5 * instance.base_size * v[1];
    let cx = 0.5 + v[2];
    let cy = 0.5 + v[3];
    let foreground = v[4];
    let background = v[5];
    let (sin, cos) = rotation.sin_cos();

    let n = IMAGE_SIZE;
    let pixel = 1.0 / n as f64;
    let sub = pixel / SUPERSAMPLE as f64;
    let reach = radius + pixel * std::f64::consts::SQRT_2;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;

    let mut pixels = vec![background; n * n];
    for py in 0..n {
        let y0 = py as f64 * pixel;
        if (y0 + 0.5 * pixel - cy).abs() > reach {
            continue;
        }
        for px in 0..n {
            let x0 = px as f64 * pixel;
            let (dx, dy) = (x0 + 0.5 * pixel - cx, y0 + 0.5 * pixel - cy);
            if dx * dx + dy * dy > reach * reach {
                continue;
            }
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                let y = y0 + (sy as f64 + 0.5) * sub - cy;
                for sx in 0..SUPERSAMPLE {
                    let x = x0 + (sx as f64 + 0.5) * sub - cx;
                    // Inverse rotation into shape-local coordinates.
                    let lx = (cos * x + sin * y) / radius;
                    let ly = (-sin * x + cos * y) / radius;
                    if instance.class.contains(lx, ly) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let coverage = hits as f64 / total;
                pixels[py * n + px] = background + coverage * (foreground - background);
            }
        }
    }
    Image {
        width: n,
        height: n,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream;
    use std::f64::consts::PI;

    fn scenario(rotation: f64) -> Scenario {
        Scenario::new(vec![rotation, 1.1, 0.03, -0.07, 0.9, 0.1])
    }

    fn max_diff(a: &Image, b: &Image) -> f64 {
        a.pixels
            .iter()
            .zip(&b.pixels)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn disk_is_rotation_invariant() {
        let disk = ShapeInstance::new(ShapeClass::Disk, 0.4, "d").unwrap();
        let a = render(&disk, &scenario(0.0));
        let b = render(&disk, &scenario(PI / 3.0));
        assert!(max_diff(&a, &b) <= 1.0 / 256.0);
    }

    #[test]
    fn full_turn_is_identity() {
        for inst in ShapeInstance::canonical_set() {
            assert_eq!(render(&inst, &scenario(0.0)), render(&inst, &scenario(TAU)));
        }
    }

    #[test]
    fn zero_contrast_is_uniform() {
        for inst in ShapeInstance::canonical_set() {
            let s = Scenario::new(vec![0.4, 1.0, 0.0, 0.0, 0.35, 0.35]);
            let img = render(&inst, &s);
            assert!(img.pixels.iter().all(|p| (p - 0.35).abs() <= 1.0 / 256.0));
        }
    }

    #[test]
    fn non_disk_shapes_change_under_rotation() {
        for inst in ShapeInstance::canonical_set() {
            if matches!(inst.class, ShapeClass::Disk | ShapeClass::Ring) {
                continue;
            }
            let a = render(&inst, &scenario(0.0));
            let b = render(&inst, &scenario(0.5));
            assert!(max_diff(&a, &b) > 0.1, "{:?}", inst.class);
        }
    }

    #[test]
    fn classes_render_differently() {
        let imgs: Vec<Image> = ShapeInstance::canonical_set()
            .iter()
            .map(|i| render(i, &scenario(0.2)))
            .collect();
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert!(max_diff(&imgs[i], &imgs[j]) > 0.1);
            }
        }
    }

    #[test]
    fn pixels_stay_in_unit_interval() {
        let space = render_space();
        let set = ShapeInstance::canonical_set();
        let mut rng = stream(4, 0);
        for k in 0..10_000 {
            let s = space.sample_uniform(&mut rng);
            let img = render(&set[k % set.len()], &s);
            assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn pgm_header_and_size() {
        let img = render(&ShapeInstance::canonical_set()[0], &scenario(0.0));
        let pgm = img.to_pgm();
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("32 32"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 32);
    }

    #[test]
    fn instance_size_is_validated() {
        assert!(ShapeInstance::new(ShapeClass::Bar, 0.0, "x").is_err());
        assert!(ShapeInstance::new(ShapeClass::Bar, 0.6, "x").is_err());
    }
}
