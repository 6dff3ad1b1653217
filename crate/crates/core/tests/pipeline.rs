//! Whole pipeline on synthetic phantoms.

use volmerge::harness::{
    evaluate, run_pipeline, sweep_gamma, sweep_overlap, InputNormalization, PipelineConfig, SweepInputs,
};
use volmerge::metrics::Psnr;
use volmerge::phantom::{make_phantom, PhantomSpec};
use volmerge::predict::PredictorSpec;
use volmerge::{normalize_ct, BinaryMask};

const DIMS: [usize; 3] = [40, 48, 44];
const TILE: [usize; 3] = [16, 24, 24];

fn config(p: f64, gamma: f64) -> PipelineConfig {
    PipelineConfig {
        tile: TILE,
        overlap: [p; 3],
        gamma,
        ..PipelineConfig::default()
    }
}

#[test]
fn identity_reproduces_input_inside_mask() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 3)).unwrap();
    let identity = "identity".parse::<PredictorSpec>().unwrap().build(1).unwrap();
    let (normalized, _) = normalize_ct(&ph.ct).unwrap();
    for p in [0.0, 0.3, 0.5, 0.7] {
        for gamma in [0.5, 0.9, 1.0, 1.5] {
            let out = run_pipeline(&ph.ct, &ph.mask, identity.as_ref(), &config(p, gamma)).unwrap();
            let (back, _) = normalize_ct(&out.volume).unwrap();
            let mut worst = 0.0f32;
            for (i, (&a, &b)) in back.values().iter().zip(normalized.values()).enumerate() {
                if ph.mask.bits()[i] {
                    worst = worst.max((a - b).abs());
                }
            }
            assert!(worst <= 1e-5, "p {p} gamma {gamma}: {worst}");
        }
    }
}

#[test]
fn identity_metrics_report_identical() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 4)).unwrap();
    let identity = PredictorSpec::Identity.build(1).unwrap();
    let out = run_pipeline(&ph.ct, &ph.mask, identity.as_ref(), &config(0.5, 1.0)).unwrap();
    let report = evaluate(&out, &ph.ct, &ph.mask).unwrap();
    assert!(report.mae < 1e-3, "{}", report.mae);
    assert_eq!(report.voxels_evaluated, ph.mask.count());
    if report.mae == 0.0 {
        assert_eq!(report.psnr, Psnr::Identical);
    }
}

#[test]
fn mri_input_with_fixed_offset() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 5)).unwrap();
    let raw_mri = ph.mri.try_map(|v| v * 1000.0).unwrap();
    // predictor maps normalized MRI straight to normalized CT of a constant tissue
    let predictor = PredictorSpec::Constant(0.52).build(1).unwrap();
    let cfg = PipelineConfig {
        normalization: InputNormalization::Mri { ct_offset: -1000.0 },
        ..config(0.5, 1.0)
    };
    let out = run_pipeline(&raw_mri, &ph.mask, predictor.as_ref(), &cfg).unwrap();
    for (i, v) in out.volume.values().iter().enumerate() {
        if ph.mask.bits()[i] {
            assert!((v - 40.0).abs() < 1e-3, "{v}");
        }
    }
}

#[test]
fn empty_mask_yields_fill_everywhere() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 6)).unwrap();
    let empty = BinaryMask::empty(DIMS).unwrap();
    let identity = PredictorSpec::Identity.build(1).unwrap();
    let out = run_pipeline(&ph.ct, &empty, identity.as_ref(), &config(0.5, 1.0)).unwrap();
    assert_eq!(out.plan.retained_count(), 0);
    assert!(out.volume.values().iter().all(|&v| v == -1000.0));
}

#[test]
fn overlap_suppresses_edge_bias() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 7)).unwrap();
    let biased = "edge-bias:0.05,2".parse::<PredictorSpec>().unwrap().build(1).unwrap();
    let run = |p| {
        let out = run_pipeline(&ph.ct, &ph.mask, biased.as_ref(), &config(p, 1.0)).unwrap();
        evaluate(&out, &ph.ct, &ph.mask).unwrap()
    };
    let hard = run(0.0);
    let soft = run(0.5);
    assert!(soft.mae < hard.mae, "{} vs {}", soft.mae, hard.mae);
    let (s0, s5) = (hard.seam_gradient_mean.unwrap(), soft.seam_gradient_mean.unwrap());
    assert!(s5 <= 0.8 * s0, "{s5} vs {s0}");
}

#[test]
fn worker_count_does_not_change_output() {
    let ph = make_phantom(&PhantomSpec::new(DIMS, 8)).unwrap();
    let biased = "edge-bias:0.05,2".parse::<PredictorSpec>().unwrap().build(1).unwrap();
    let run = |workers| {
        let cfg = PipelineConfig {
            workers,
            ..config(0.6, 0.8)
        };
        let v = run_pipeline(&ph.ct, &ph.mask, biased.as_ref(), &cfg).unwrap().volume;
        v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sweeps_cover_requested_values() {
    let ph = make_phantom(&PhantomSpec::new([24, 24, 24], 9)).unwrap();
    let biased = "edge-bias:0.05,2".parse::<PredictorSpec>().unwrap().build(1).unwrap();
    let inputs = SweepInputs {
        input: &ph.ct,
        mask: &ph.mask,
        reference: &ph.ct,
        predictor: biased.as_ref(),
        base: PipelineConfig {
            tile: [8, 8, 8],
            ..config(0.5, 1.0)
        },
    };
    let g = sweep_gamma(&inputs, &[1.5, 0.5, 1.0, 0.5]).unwrap();
    assert_eq!(g.rows.iter().map(|r| r.gamma).collect::<Vec<_>>(), vec![0.5, 1.0, 1.5]);
    let o = sweep_overlap(&inputs, &[0.0, 0.3, 0.6, 0.9]).unwrap();
    assert!(o.rows.windows(2).all(|w| w[0].retained_tiles <= w[1].retained_tiles));
    let mut csv = Vec::new();
    o.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text
        .starts_with("# volmerge sweep-overlap v1\noverlap,retained_tiles,mae_hu,psnr_db,seam_gradient,wall_time_s\n"));
    assert_eq!(text.lines().count(), 6);
}
