//! Acceptance suite. Each check covers one criterion at its pinned
//! tolerance and prints a single PASS/FAIL line
//! (`cargo test -p lesionforge --test acceptance`).

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use common::*;
use lesionforge::augment::{
    adjust_brightness, adjust_contrast, apply_random, color_distort, flip, resize_patch, rotate,
};
use lesionforge::dataset::{load_normals, synthesize_dataset, NormalEntry};
use lesionforge::eval::{delong_variance, trapezoid_area};
use lesionforge::lesion_bank::{max_paste_count, sample_paste_count};
use lesionforge::synth::mixup_paste_into;
use lesionforge::*;

fn report(name: &str, checks: &[(bool, String)]) {
    let ok = checks.iter().all(|c| c.0);
    let detail: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
    println!(
        "[{}] {name}: {}",
        if ok { "PASS" } else { "FAIL" },
        detail.join("; ")
    );
    if !ok {
        FAILURES.fetch_add(1, Ordering::SeqCst);
    }
}

static FAILURES: AtomicUsize = AtomicUsize::new(0);

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 8] = [
        ("mixup exactness", mixup_exactness),
        ("ccl oracle equivalence", ccl_oracle_equivalence),
        ("auc oracle equivalence", auc_oracle_equivalence),
        ("delong sanity", delong_sanity),
        ("sampling laws", sampling_laws),
        ("synthesis determinism", synthesis_determinism),
        ("ct windowing", ct_windowing),
        ("augmentation invariants", augmentation_invariants),
    ];
    for (name, check) in criteria {
        if panic::catch_unwind(AssertUnwindSafe(check)).is_err() {
            println!("[FAIL] {name}: panicked");
            FAILURES.fetch_add(1, Ordering::SeqCst);
        }
    }
    let failed = FAILURES.load(Ordering::SeqCst);
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn mixup_exactness() {
    let mut rng = RngStream::new(20240501, 1);
    let (mut triples, mut worst_ulp) = (0usize, 0u32);
    while triples < 10_000 {
        let channels = if rng.bernoulli(0.5) { 3 } else { 1 };
        let (bw, bh) = (4 + rng.below(12), 4 + rng.below(12));
        let (pw, ph) = (1 + rng.below(bw), 1 + rng.below(bh));
        let base = Raster::from_vec(
            bw,
            bh,
            channels,
            (0..bw * bh * channels).map(|_| rng.unit() as f32).collect(),
        )
        .unwrap();
        let mask = random_mask(pw, ph, 0.6, &mut rng);
        let patch = LesionPatch {
            pixels: Raster::from_vec(
                pw,
                ph,
                channels,
                (0..pw * ph * channels).map(|_| rng.unit() as f32).collect(),
            )
            .unwrap(),
            mask: mask.clone(),
            lesion_type: LesionType::Other,
            source_id: "a".into(),
            component_id: 1,
            augmentation_log: vec![],
        };
        let lambda = rng.unit();
        let (x0, y0) = (rng.below(bw - pw + 1), rng.below(bh - ph + 1));
        let mut out = base.clone();
        mixup_paste_into(&mut out, &patch, (x0, y0), lambda).unwrap();
        for y in 0..bh {
            for x in 0..bw {
                let inside = x >= x0 && y >= y0 && x < x0 + pw && y < y0 + ph;
                for c in 0..channels {
                    let expected = if inside {
                        let m = mask.get(x - x0, y - y0) as u8;
                        triples += 1;
                        scalar_mixup(
                            base.get(x, y, c),
                            patch.pixels.get(x - x0, y - y0, c),
                            m,
                            lambda,
                        )
                    } else {
                        base.get(x, y, c)
                    };
                    worst_ulp = worst_ulp.max(ulp_distance(out.get(x, y, c), expected));
                }
            }
        }
    }

    // λ = 0 leaves the quantized base untouched.
    let img = fundus_like(48, 3);
    let mut canvas = img.to_float();
    let patch = LesionPatch {
        pixels: Raster::from_vec(10, 10, 3, vec![0.9; 300]).unwrap(),
        mask: BinaryMask::ones(10, 10),
        lesion_type: LesionType::Ma,
        source_id: "a".into(),
        component_id: 1,
        augmentation_log: vec![],
    };
    mixup_paste_into(&mut canvas, &patch, (20, 17), 0.0).unwrap();
    let identical = quantize(&canvas, Depth::U8) == img;

    report(
        "MixUp exactness",
        &[
            (
                worst_ulp <= 1,
                format!("{triples} pixel triples, worst deviation {worst_ulp} ulp (<= 1)"),
            ),
            (identical, "lambda=0 bit-exact after quantization".into()),
        ],
    );
}

fn ccl_oracle_equivalence() {
    let mut rng = RngStream::new(77, 2);
    let mut masks = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let (w, h) = (1 + rng.below(128), 1 + rng.below(128));
        let density = rng.uniform(0.05, 0.7);
        masks.push(random_mask(w, h, density, &mut rng));
    }
    let start = Instant::now();
    let labelings: Vec<_> = masks
        .iter()
        .map(|m| {
            (
                label_components(m, Connectivity::Four),
                label_components(m, Connectivity::Eight),
            )
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let mut mismatches = 0;
    for (m, (four, eight)) in masks.iter().zip(&labelings) {
        for (conn, lab) in [(Connectivity::Four, four), (Connectivity::Eight, eight)] {
            let (oracle, count) = flood_fill_labels(m, conn);
            if count != lab.count || !same_partition(&oracle, &lab.labels) {
                mismatches += 1;
            }
        }
    }
    report(
        "CCL oracle equivalence",
        &[
            (
                mismatches == 0,
                format!("{mismatches} mismatches over 1000 masks x 2 connectivities"),
            ),
            (
                elapsed < 10.0,
                format!("labeling time {elapsed:.2}s (< 10s)"),
            ),
        ],
    );
}

fn auc_oracle_equivalence() {
    let mut rng = RngStream::new(5, 3);
    let (mut exact_failures, mut worst_trap) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = 2 + rng.below(199);
        let levels = 2 + rng.below(30);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.below(levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.4) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let rank = auc(&set).unwrap();
        if rank != pair_count_auc(&scores, &labels) {
            exact_failures += 1;
        }
        worst_trap = worst_trap.max((trapezoid_area(&roc_curve(&set).unwrap()) - rank).abs());
    }
    report(
        "AUC oracle equivalence",
        &[
            (
                exact_failures == 0,
                format!("{exact_failures} rank/pair-count disagreements in 1000 tied sets"),
            ),
            (
                worst_trap <= 1e-12,
                format!("max |trapezoid - rank| = {worst_trap:.2e} (<= 1e-12)"),
            ),
        ],
    );
}

fn delong_sanity() {
    let mut rng = RngStream::new(2023, 4);
    let n = 100;
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let latent: Vec<f64> = (0..n).map(|_| normal_draw(&mut rng)).collect();
    let a: Vec<f64> = (0..n)
        .map(|i| labels[i] as f64 * 1.0 + latent[i] + 0.5 * normal_draw(&mut rng))
        .collect();
    let b: Vec<f64> = (0..n)
        .map(|i| labels[i] as f64 * 0.6 + latent[i] + 0.8 * normal_draw(&mut rng))
        .collect();
    let sa = ScoredSet::new(a.clone(), labels.clone()).unwrap();
    let sb = ScoredSet::new(b.clone(), labels.clone()).unwrap();

    let same = delong_test(&sa, &sa).unwrap();
    let ab = delong_test(&sa, &sb).unwrap();
    let ba = delong_test(&sb, &sa).unwrap();

    // Stratified case-resampling bootstrap of the AUC and the AUC difference.
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    let mut boot = RngStream::new(2023, 5);
    let (mut aucs, mut diffs) = (Vec::with_capacity(10_000), Vec::with_capacity(10_000));
    for _ in 0..10_000 {
        let mut idx: Vec<usize> = pos.iter().map(|_| pos[boot.below(pos.len())]).collect();
        idx.extend(neg.iter().map(|_| neg[boot.below(neg.len())]));
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let ra = pair_count_auc(&idx.iter().map(|&i| a[i]).collect::<Vec<_>>(), &l);
        let rb = pair_count_auc(&idx.iter().map(|&i| b[i]).collect::<Vec<_>>(), &l);
        aucs.push(ra);
        diffs.push(ra - rb);
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (boot_var, boot_diff_var) = (var(&aucs), var(&diffs));
    let delong_var = delong_variance(&sa).unwrap();
    let rel = (delong_var - boot_var).abs() / boot_var;
    let rel_diff = (ab.variance - boot_diff_var).abs() / boot_diff_var;

    report(
        "DeLong sanity",
        &[
            (
                same.p_value == 1.0 && same.z == 0.0,
                format!("identical scores: z={}, p={}", same.z, same.p_value),
            ),
            (
                ab.z == -ba.z && ab.p_value == ba.p_value,
                format!("swap: z {:.4} / {:.4}, p {:.4}", ab.z, ba.z, ab.p_value),
            ),
            (
                rel <= 0.15,
                format!(
                    "var(AUC) DeLong {delong_var:.3e} vs bootstrap {boot_var:.3e} ({:.1}%)",
                    rel * 100.0
                ),
            ),
            (
                rel_diff <= 0.15,
                format!(
                    "var(diff) DeLong {:.3e} vs bootstrap {boot_diff_var:.3e} ({:.1}%)",
                    ab.variance,
                    rel_diff * 100.0
                ),
            ),
        ],
    );
}

fn sampling_laws() {
    // Paste count N over {1..15} for n_l = 10.
    let mut rng = RngStream::new(11, 6);
    let upper = max_paste_count(10);
    let mut counts = vec![0u64; upper];
    let mut bad_range = 0;
    for _ in 0..100_000 {
        let n = sample_paste_count(10, &mut rng);
        if !(1..=upper).contains(&n) {
            bad_range += 1;
        } else {
            counts[n - 1] += 1;
        }
    }
    let p_count = chi_square_uniform_p(&counts);

    // Top-left positions of a 5x5 patch on a 10x10 base: 6x6 feasible cells.
    let mut cells = vec![0u64; 36];
    for _ in 0..100_000 {
        let (x, y) = choose_position((10, 10), (5, 5), None, &mut rng).unwrap();
        cells[y * 6 + x] += 1;
    }
    let p_pos = chi_square_uniform_p(&cells);

    // Rule frequencies of the grade-conditioned strategy over 10^4 syntheses.
    let (lesion_img, ann) = annotated_fundus(48);
    let bank = extract_patches(&lesion_img, &ann, Connectivity::Eight, "src").unwrap();
    let normal = fundus_like(32, 8);
    let augment = AugmentSpec::preset("none").unwrap();
    let strategy = CompositionStrategy::dr_grades();
    let params = SynthesisParams {
        bank: &bank,
        augment: &augment,
        mixup: MixUpMode::default(),
        strategy: &strategy,
    };
    let mut rules = [0u64; 4];
    for i in 0..10_000u64 {
        let s = synthesize_one(&normal, "n", params, None, &mut RngStream::new(31, i)).unwrap();
        rules[s.rule_index] += 1;
    }
    let freq: Vec<f64> = rules.iter().map(|&c| c as f64 / 10_000.0).collect();
    let target = [0.80, 0.10, 0.05, 0.05];
    let freq_ok = freq.iter().zip(target).all(|(f, t)| (f - t).abs() <= 0.01);

    // Random MixUp coefficient.
    let mode = MixUpMode::Random { lo: 0.5, hi: 0.8 };
    let lambdas: Vec<f64> = (0..100_000).map(|_| mode.draw_lambda(&mut rng)).collect();
    let in_range = lambdas.iter().all(|l| (0.5..=0.8).contains(l));
    let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;

    report(
        "Sampling laws",
        &[
            (
                bad_range == 0 && p_count > 0.01,
                format!("N uniform on 1..={upper}: chi2 p={p_count:.3}"),
            ),
            (
                p_pos > 0.01,
                format!("positions uniform on 6x6: chi2 p={p_pos:.3}"),
            ),
            (
                freq_ok,
                format!("rule frequencies {freq:?} vs {target:?} (+-0.01)"),
            ),
            (
                in_range && (mean - 0.65).abs() <= 0.003,
                format!("lambda in [0.5,0.8]: {in_range}, mean {mean:.5}"),
            ),
        ],
    );
}

fn synthesis_determinism() {
    let work = tempfile::tempdir().unwrap();
    let (lesion_img, ann) = annotated_fundus(64);
    let bank_dir = work.path().join("bank");
    extract_patches(&lesion_img, &ann, Connectivity::Eight, "idrid")
        .unwrap()
        .save(&bank_dir)
        .unwrap();
    let bank = LesionBank::load(&bank_dir).unwrap();
    let normals = load_normals(write_normals(work.path(), 12, 80)).unwrap();

    let mut config = RunConfig::preset("paper-best").unwrap();
    config.seed = 7;
    config.preprocess.size = Some(64);
    let text = config.to_json();

    let run = |name: &str, entries: &[NormalEntry], cfg: &RunConfig, threads: usize| {
        let out = work.path().join(name);
        synthesize_dataset(entries, &bank, cfg, &cfg.to_json(), &out, threads).unwrap();
        tree_hash(&out)
    };
    let reference = run("t1", &normals, &config, 1);
    let again = run("t1b", &normals, &config, 1);
    let threaded = run("t4", &normals, &config, 4);
    let mut shuffled = normals.clone();
    shuffled.reverse();
    shuffled.swap(2, 7);
    let reordered = run("t3s", &shuffled, &config, 3);
    let mut other = config.clone();
    other.seed = 8;
    let reseeded = run("seed8", &normals, &other, 2);
    assert_eq!(text, config.to_json());

    report(
        "Determinism",
        &[
            (reference == again, "repeat run identical".into()),
            (reference == threaded, "1 vs 4 threads identical".into()),
            (
                reference == reordered,
                "shuffled input order identical".into(),
            ),
            (
                reference != reseeded,
                format!("different seed differs (hash {}..)", &reference[..12]),
            ),
        ],
    );
}

fn ct_windowing() {
    let lung = WindowSpec::lung();
    let probe = Image::from_hu(3, 1, &[-1000, -300, 400]).unwrap();
    let edges = window_ct(&probe, &lung).unwrap();
    let hu: Vec<i32> = (-32768..=32767).collect();
    let full = window_ct(&Image::from_hu(hu.len(), 1, &hu).unwrap(), &lung).unwrap();
    let s = full.samples();
    let monotone = s.windows(2).all(|w| w[0] <= w[1]);
    let saturated = hu
        .iter()
        .zip(s)
        .all(|(&h, &v)| (h > -1000 || v == 0) && (h < 400 || v == 255));
    report(
        "CT windowing",
        &[
            (
                edges.samples() == [0, 128, 255],
                format!("-1000/-300/400 HU -> {:?}", edges.samples()),
            ),
            (
                monotone && saturated,
                "monotone with exact 0/255 saturation over all 65536 HU values".into(),
            ),
        ],
    );
}

fn augmentation_invariants() {
    let mut rng = RngStream::new(404, 7);
    let (mut flips_ok, mut zero_ok, mut right_ok, mut binary_ok) = (true, true, true, true);
    let mut worst_round_trip = 0.0f64;
    for trial in 0..300 {
        let channels = if trial % 2 == 0 { 3 } else { 1 };
        let (rx, ry) = (rng.uniform(8.0, 24.0), rng.uniform(8.0, 24.0));
        let (w, h) = (
            (2.0 * rx.max(ry)) as usize + 3,
            (2.0 * rx.max(ry)) as usize + 3,
        );
        let mask = ellipse_mask(w, h, rx, ry, rng.uniform(0.0, std::f64::consts::PI));
        let (x0, y0, bw, bh) = mask.bounding_box().unwrap();
        let patch = LesionPatch {
            pixels: Raster::from_vec(
                bw,
                bh,
                channels,
                (0..bw * bh * channels).map(|_| rng.unit() as f32).collect(),
            )
            .unwrap(),
            mask: mask.crop(x0, y0, bw, bh),
            lesion_type: LesionType::He,
            source_id: "s".into(),
            component_id: trial,
            augmentation_log: vec![],
        };
        let area = patch.mask.area();

        for axis in [Axis::Horizontal, Axis::Vertical] {
            let once = flip(&patch, axis);
            flips_ok &= once.mask.area() == area && flip(&once, axis) == patch;
        }
        zero_ok &= rotate(&patch, 0.0) == patch;
        for deg in [90.0, 180.0, 270.0, -90.0, 360.0] {
            right_ok &= rotate(&patch, deg).mask.area() == area;
        }
        let angle = rng.uniform(0.0, 360.0);
        let back = rotate(&rotate(&patch, angle), -angle);
        worst_round_trip =
            worst_round_trip.max((back.mask.area() as f64 / area as f64 - 1.0).abs());

        let mut outputs = vec![
            rotate(&patch, angle),
            resize_patch(&patch, rng.uniform(0.3, 2.0)),
            adjust_contrast(&patch, rng.uniform(0.0, 2.0)),
            adjust_brightness(&patch, rng.uniform(0.5, 1.5)),
            apply_random(&patch, &AugmentSpec::preset("all").unwrap(), &mut rng),
        ];
        if channels == 3 {
            outputs.push(
                color_distort(&patch, rng.uniform(-180.0, 180.0), rng.uniform(0.0, 2.0)).unwrap(),
            );
        }
        binary_ok &= outputs
            .iter()
            .all(|o| o.mask.bits().iter().all(|&b| b <= 1) && o.validate().is_ok());
    }
    report(
        "Augmentation invariants",
        &[
            (
                flips_ok,
                "double flip bit-exact, flip preserves area".into(),
            ),
            (zero_ok, "0 degree rotation bit-exact".into()),
            (right_ok, "right-angle rotations preserve mask area".into()),
            (binary_ok, "masks binary and tight after every op".into()),
            (
                worst_round_trip <= 0.02,
                format!(
                    "arbitrary-angle round trip worst area drift {:.2}% (<= 2%)",
                    worst_round_trip * 100.0
                ),
            ),
        ],
    );
}
