//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.
//!
//! Set RIBKIT_ACCEPT_ONLY to a comma-separated list of criterion numbers to
//! run a subset.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ribkit::centerline::{extract_centerline, resample, smooth, CenterlineConfig};
use ribkit::diagnostics::Warning;
use ribkit::metrics::{evaluate_case, label_dice, llcd, lscd, nld};
use ribkit::morphology::{connected_components, edt, Connectivity};
use ribkit::nifti::{load_volume, save_volume};
use ribkit::phantom::oracle::{canonical_partition, oracle_cc, oracle_chamfer, oracle_directed_chamfer, oracle_edt};
use ribkit::phantom::{generate, Perturbation, PhantomSpec, Side, Sides};
use ribkit::pipeline::{run_pipeline, CaseOutput, PipelineConfig};
use ribkit::{BinaryMask, Geometry, LabelVolume, ValueKind, Volume, VoxelData};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-100.0..100.0)))
        .collect()
}

fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    let mut p = [0.0; 3];
    (0..n)
        .map(|_| {
            for v in &mut p {
                *v += rng.random_range(-2.0..2.0);
            }
            p
        })
        .collect()
}

fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], density: f64) -> BinaryMask {
    let g = Geometry::new(dims, spacing).unwrap();
    BinaryMask::from_fn(g, |_, _, _| rng.random_bool(density))
}

fn metric_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (na, nb) = (rng.random_range(1..=2000), rng.random_range(1..=2000));
        let a = random_cloud(&mut rng, na);
        let b = random_cloud(&mut rng, nb);
        let d1 = (llcd(&a, &b).unwrap() - oracle_chamfer(&a, &b).unwrap()).abs();
        let d2 = (lscd(&a, &b).unwrap() - oracle_directed_chamfer(&a, &b).unwrap()).abs();
        worst = worst.max(d1).max(d2);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 60.0,
        format!("200 pairs, max |diff| {worst:.3e}, {secs:.1} s"),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Geometry::isotropic([24, 24, 24]).unwrap();
    let lv = LabelVolume::new(g, (0..g.len()).map(|_| rng.random_range(0..=24u8)).collect()).unwrap();
    let dice = label_dice(&lv, &lv).unwrap();
    let dice_ok = dice.per_rib.iter().flatten().all(|&d| d == 1.0) && dice.avg == Some(1.0);

    let mut self_ok = true;
    let mut monotone_ok = true;
    for _ in 0..50 {
        let a = random_walk(&mut rng, 500);
        let b = random_walk(&mut rng, 500);
        self_ok &= llcd(&a, &a).unwrap() == 0.0;
        let mut prev = 0.0;
        for tau in 1..=10 {
            self_ok &= nld(&a, &a, tau as f64).unwrap() == 1.0;
            let v = nld(&a, &b, tau as f64).unwrap();
            monotone_ok &= v >= prev;
            prev = v;
        }
    }
    let hand_ok = llcd(&[[0.0; 3]], &[[3.0, 4.0, 0.0]]).unwrap() == 10.0
        && lscd(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap() == 0.5
        && nld(&[[0.0; 3], [0.0, 0.0, 5.0]], &[[0.0; 3], [0.0, 0.0, 20.0]], 7.0).unwrap() == 0.75;
    check(
        dice_ok && self_ok && monotone_ok && hand_ok,
        format!("dice {dice_ok}, self {self_ok}, nld monotone {monotone_ok}, hand cases {hand_ok}"),
    )
}

fn connected_components_vs_flood_fill() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for k in 0..100 {
        let density = 0.05 + 0.5 * (k as f64 / 99.0);
        let m = random_mask(&mut rng, [64, 64, 64], [1.0; 3], density);
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let fast = canonical_partition(connected_components(&m, conn).ids());
            let slow = canonical_partition(&oracle_cc(&m, conn).unwrap());
            mismatches += (fast != slow) as usize;
        }
    }
    check(mismatches == 0, format!("100 masks x 2 connectivities, {mismatches} mismatches"))
}

fn edt_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let density = 0.5 + 0.45 * (k as f64 / 19.0);
        let m = random_mask(&mut rng, [32, 32, 32], [1.0, 1.0, 2.5], density);
        let fast = edt(&m);
        let slow = oracle_edt(&m).unwrap();
        for (a, b) in fast.values().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-9, format!("20 masks, max |diff| {worst:.3e}"))
}

fn cylinder_centerline() -> Outcome {
    let g = Geometry::isotropic([110, 15, 15]).unwrap();
    let (cy, cz) = (7.0, 7.0);
    let (x0, x1) = (5usize, 104usize); // 100 voxels long
    let m = BinaryMask::from_fn(g, |x, y, z| {
        let (dy, dz) = (y as f64 - cy, z as f64 - cz);
        (x0..=x1).contains(&x) && dy * dy + dz * dz <= 16.0
    });
    let cfg = CenterlineConfig::default();
    let raw = extract_centerline(&m, &cfg).unwrap();
    let smoothed = smooth(&raw, cfg.smooth_window).unwrap();
    let mut worst: f64 = 0.0;
    for p in &smoothed.points {
        if p[0] >= (x0 + 5) as f64 && p[0] <= (x1 - 5) as f64 {
            worst = worst.max(((p[1] - cy).powi(2) + (p[2] - cz).powi(2)).sqrt());
        }
    }
    let n = resample(&smoothed, 500).unwrap().len();
    check(worst <= 1.0 && n == 500, format!("max axis deviation {worst:.3} voxel, {n} points"))
}

fn single_threaded<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn phantom_accuracy() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..10 {
        let p = generate(&PhantomSpec {
            seed,
            ..PhantomSpec::default()
        })
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let out = run_pipeline(&p.volume, &PipelineConfig::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        let r = evaluate_case(&out.labels, &p.labels, &out.centerlines.lines, &p.centerlines, 7.0)
            .map_err(|e| e.to_string())?;
        let (d, a, n) = (
            r.dice_avg.unwrap_or(0.0),
            r.accuracy.all.unwrap_or(0.0),
            r.nld_avg.unwrap_or(0.0),
        );
        ok &= d >= 0.90 && a >= 0.95 && n >= 0.95;
        lines.push(format!("{d:.3}/{a:.3}/{n:.3}"));
    }
    check(ok, format!("dice/acc/nld per seed: {}", lines.join(" ")))
}

fn run_perturbed(p: Perturbation) -> Result<(ribkit::phantom::Phantom, CaseOutput), String> {
    let spec = PhantomSpec {
        seed: 21,
        perturbations: vec![p],
        ..PhantomSpec::default()
    };
    let phantom = generate(&spec).map_err(|e| e.to_string())?;
    let out = run_pipeline(&phantom.volume, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    Ok((phantom, out))
}

fn challenging_cases() -> Outcome {
    let mismatch = |o: &CaseOutput| o.warnings.iter().any(|w| matches!(w, Warning::RibCountMismatch { .. }));

    let (_, metal) = run_perturbed(Perturbation::MetalBridge {
        pair_a: 3,
        pair_b: 4,
        side: Side::Left,
    })?;
    let metal_ok = mismatch(&metal) && metal.ribs_left == 11 && metal.exit_code() == 2;

    let (_, fracture) = run_perturbed(Perturbation::Fracture {
        label: 5,
        gap_voxels: 3,
    })?;
    let fracture_ok = fracture
        .warnings
        .iter()
        .any(|w| matches!(w, Warning::FragmentedRib { label: 5, .. }))
        && fracture.centerlines.lines.len() == 24
        && fracture.exit_code() == 2;

    let (_, missing) = run_perturbed(Perturbation::MissingFloatingRibs { sides: Sides::Right })?;
    let labels = missing.labels.present_labels().len();
    let missing_ok = labels == 23 && mismatch(&missing) && missing.exit_code() == 2;

    check(
        metal_ok && fracture_ok && missing_ok,
        format!(
            "metal bridge left={} exit {}; fracture exit {}; missing floating rib {labels} labels exit {}",
            metal.ribs_left,
            metal.exit_code(),
            fracture.exit_code(),
            missing.exit_code()
        ),
    )
}

fn large_runtime() -> Outcome {
    let spec = PhantomSpec {
        dims: [512, 512, 400],
        tube_radius: 3.0,
        spine_radius: 10.0,
        costal_gap: 8.0,
        seed: 5,
        ..PhantomSpec::default()
    };
    let phantom = generate(&spec).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let out = single_threaded(1, || run_pipeline(&phantom.volume, &cfg)).map_err(|e| e.to_string())?;
    let compute = start.elapsed().as_secs_f64();
    out.write(dir.path(), &cfg).map_err(|e| e.to_string())?;
    let total = start.elapsed().as_secs_f64();
    let lines = &out.centerlines.lines;
    let ok = total <= 80.0 && lines.len() == 24 && lines.values().all(|l| l.len() == 500);
    check(
        ok,
        format!("512x512x400: {compute:.1} s compute, {total:.1} s with output, {} centerlines", lines.len()),
    )
}

fn determinism() -> Outcome {
    let spec = PhantomSpec {
        seed: 9,
        perturbations: vec![Perturbation::HuNoiseShell { sigma: 80.0 }],
        ..PhantomSpec::default()
    };
    let phantom = generate(&spec).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let mut outputs: Vec<BTreeMap<&str, Vec<u8>>> = Vec::new();
    for threads in [1, 8, 1, 8] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = single_threaded(threads, || run_pipeline(&phantom.volume, &cfg)).map_err(|e| e.to_string())?;
        out.write(dir.path(), &cfg).map_err(|e| e.to_string())?;
        let mut files = BTreeMap::new();
        for name in ["mask.nii.gz", "labels.nii.gz", "centerlines.txt", "report.txt"] {
            files.insert(name, std::fs::read(dir.path().join(name)).map_err(|e| e.to_string())?);
        }
        outputs.push(files);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    check(same, format!("4 runs at threads 1/8/1/8, identical artifacts: {same}"))
}

fn nifti_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = Geometry::new([17, 13, 9], [0.7, 0.8, 2.5]).unwrap();
    let volumes = [
        Volume::new(g, VoxelData::I16((0..g.len()).map(|_| rng.random()).collect()), ValueKind::Hu).unwrap(),
        Volume::new(g, VoxelData::U8((0..g.len()).map(|_| rng.random()).collect()), ValueKind::Hu).unwrap(),
    ];
    let mut ok = true;
    for (k, v) in volumes.iter().enumerate() {
        for ext in ["nii", "nii.gz"] {
            let path = dir.path().join(format!("v{k}.{ext}"));
            save_volume(v, &path).map_err(|e| e.to_string())?;
            let back = load_volume(&path).map_err(|e| e.to_string())?;
            ok &= back.data() == v.data() && back.geometry() == v.geometry();
        }
    }
    check(ok, format!("int16 and uint8, plain and gzip, spacing {:.3?}: {ok}", g.spacing()))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("RIBKIT_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle equivalence", metric_oracle_equivalence),
        ("metric identities", metric_identities),
        ("connected components vs flood fill", connected_components_vs_flood_fill),
        ("EDT exactness", edt_exactness),
        ("cylinder centerline", cylinder_centerline),
        ("phantom end-to-end accuracy", phantom_accuracy),
        ("challenging cases", challenging_cases),
        ("512x512x400 runtime", large_runtime),
        ("determinism across thread counts", determinism),
        ("NIfTI round trip", nifti_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

