//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use lesionforge::{BinaryMask, Connectivity, Depth, Image, LesionType, PixelDomain, RngStream};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Breadth-first flood fill labeling, numbered in raster order.
pub fn flood_fill_labels(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; (w * h) as usize];
    let offsets: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    let mut next = 0u32;
    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sx as usize, sy as usize) || labels[(sy * w + sx) as usize] != 0 {
                continue;
            }
            next += 1;
            labels[(sy * w + sx) as usize] = next;
            let mut queue = VecDeque::from([(sx, sy)]);
            while let Some((x, y)) = queue.pop_front() {
                for (dx, dy) in offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let i = (ny * w + nx) as usize;
                    if mask.get(nx as usize, ny as usize) && labels[i] == 0 {
                        labels[i] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
    }
    (labels, next)
}

/// True when two labelings describe the same partition (labels may differ).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut ab: HashMap<u32, u32> = HashMap::new();
    let mut ba: HashMap<u32, u32> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Exhaustive pair count: mean over (pos, neg) of [s+ > s-] + 0.5 [s+ == s-].
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut greater, mut ties, mut pairs) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                greater += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    (greater as f64 + 0.5 * ties as f64) / pairs as f64
}

/// `(1-λ)(M·I) + λ(M·L) + (1-M)·I` for one sample, in double precision.
pub fn scalar_mixup(base: f32, patch: f32, mask: u8, lambda: f64) -> f32 {
    let m = mask as f64;
    let i = base as f64;
    let l = patch as f64;
    ((1.0 - lambda) * (m * i) + lambda * (m * l) + (1.0 - m) * i) as f32
}

/// Distance between two floats in units in the last place.
pub fn ulp_distance(a: f32, b: f32) -> u32 {
    let key = |x: f32| {
        let bits = x.to_bits() as i32;
        if bits < 0 {
            i32::MIN - bits
        } else {
            bits
        }
    };
    (key(a) as i64 - key(b) as i64).unsigned_abs() as u32
}

/// Upper-tail p-value of Pearson's chi-square against equal expected counts.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub fn normal_draw(rng: &mut RngStream) -> f64 {
    let u1 = rng.unit().max(f64::MIN_POSITIVE);
    let u2 = rng.unit();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_mask(w: usize, h: usize, density: f64, rng: &mut RngStream) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.bernoulli(density))
}

pub fn ellipse_mask(w: usize, h: usize, rx: f64, ry: f64, tilt: f64) -> BinaryMask {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (s, c) = tilt.sin_cos();
    BinaryMask::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    })
}

/// Fundus-like RGB image: dark frame with a bright textured disk.
pub fn fundus_like(side: usize, seed: u64) -> Image {
    let mut rng = RngStream::new(seed, 1);
    let r = side as f64 * 0.42;
    let c = side as f64 / 2.0;
    let mut samples = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            if dx * dx + dy * dy <= r * r {
                let n = (rng.unit() * 20.0) as u16;
                samples.extend([170 + n, 90 + n / 2, 40 + n / 3]);
            } else {
                samples.extend([0, 0, 0]);
            }
        }
    }
    Image::new(side, side, 3, Depth::U8, PixelDomain::Natural, samples).unwrap()
}

/// Annotated lesion image with four fundus lesion types.
pub fn annotated_fundus(side: usize) -> (Image, Vec<(LesionType, BinaryMask)>) {
    let mut img = fundus_like(side, 99);
    let mut samples = img.samples().to_vec();
    let blob = |cx: f64, cy: f64, r: f64| {
        move |x: usize, y: usize| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            dx * dx + dy * dy <= r * r
        }
    };
    let s = side as f64;
    let ma = {
        let a = blob(0.35 * s, 0.35 * s, 1.5);
        let b = blob(0.6 * s, 0.3 * s, 1.2);
        let c = blob(0.4 * s, 0.65 * s, 1.8);
        BinaryMask::from_fn(side, side, |x, y| a(x, y) || b(x, y) || c(x, y))
    };
    let he = {
        let a = blob(0.55 * s, 0.55 * s, 3.5);
        let b = blob(0.3 * s, 0.5 * s, 2.5);
        BinaryMask::from_fn(side, side, |x, y| a(x, y) || b(x, y))
    };
    let se = BinaryMask::from_fn(side, side, blob(0.7 * s, 0.6 * s, 3.0));
    let ex = BinaryMask::from_fn(side, side, blob(0.5 * s, 0.75 * s, 2.0));
    for y in 0..side {
        for x in 0..side {
            let i = (y * side + x) * 3;
            if ma.get(x, y) || he.get(x, y) {
                samples[i..i + 3].copy_from_slice(&[110, 10, 10]);
            } else if se.get(x, y) || ex.get(x, y) {
                samples[i..i + 3].copy_from_slice(&[250, 240, 150]);
            }
        }
    }
    img = Image::new(side, side, 3, Depth::U8, PixelDomain::Natural, samples).unwrap();
    (
        img,
        vec![
            (LesionType::Ma, ma),
            (LesionType::He, he),
            (LesionType::Se, se),
            (LesionType::Ex, ex),
        ],
    )
}

/// Writes `count` fundus-like normals and a `normals.json` manifest into `dir`.
pub fn write_normals(dir: &Path, count: usize, side: usize) -> PathBuf {
    let img_dir = dir.join("imgs");
    fs::create_dir_all(&img_dir).unwrap();
    let mut entries = Vec::new();
    for i in 0..count {
        let id = format!("normal_{i:03}");
        fundus_like(side, 1000 + i as u64)
            .write_png(img_dir.join(format!("{id}.png")))
            .unwrap();
        entries.push(serde_json::json!({"id": id, "path": format!("imgs/{id}.png")}));
    }
    let manifest = dir.join("normals.json");
    fs::write(&manifest, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    manifest
}

/// SHA-256 over every file's relative path and bytes, in sorted path order.
pub fn tree_hash(root: &Path) -> String {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    let mut h = Sha256::new();
    for (k, v) in files {
        h.update(k.as_bytes());
        h.update((v.len() as u64).to_le_bytes());
        h.update(&v);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
