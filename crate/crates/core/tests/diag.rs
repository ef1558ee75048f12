//! Manual diagnostics for probe capacity and training dynamics.
//! Run: `cargo test -p equilearn --test diag -- --ignored --nocapture`

use equilearn::data::{generate_dataset, ProceduralDatasetSpec};
use equilearn::eval::{
    build_eval_pairs, eval_equivariance, train_linear_classifier, train_regression_probe,
    FeatureSource, FrozenEncoder, LinearProbeConfig, ProbeConfig,
};
use equilearn::image::TransformKind;
use equilearn::trainer::{pretrain, read_metrics, TrainConfig};

#[test]
#[ignore]
fn diagnostics() {
    let n: usize = std::env::var("DIAG_N").ok().and_then(|v| v.parse().ok()).unwrap_or(2000);
    let epochs: usize =
        std::env::var("DIAG_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(10);
    let spec = ProceduralDatasetSpec { n, ..Default::default() };
    let ds = generate_dataset(&spec, 20260810).unwrap();

    // 1. Pixel-feature reference: how much rotation signal does the probe
    //    recover from raw pixels at several widths?
    for width in [24usize, 48, 96] {
        let pairs = build_eval_pairs(&ds, TransformKind::Rotation, 32, 1280, 7, |imgs| {
            Ok(imgs.iter().map(|im| im.data().to_vec()).collect())
        })
        .unwrap();
        let cfg = ProbeConfig { hidden_width: width, ..Default::default() };
        let out = train_regression_probe(&pairs, &cfg).unwrap();
        println!("pixel probe width {width}: R2(rot) = {:.4}", out.mean_r2);
    }

    // 2. Train lambda=1 and inspect loss trajectory.
    let mut cfg = TrainConfig { seed: 1, epochs, ..Default::default() };
    cfg.augment.out_side = cfg.encoder.side;
    let dir = tempfile::tempdir().unwrap();
    let out = pretrain(&cfg, &ds, dir.path(), None).unwrap();
    let rows = read_metrics(&out.metrics_path).unwrap();
    for r in rows.iter().take(3) {
        println!(
            "step {:4}: l_ssl {:.4} (inv {:.5} var {:.5} cov {:.6}) l_recon {:.5}",
            r.step, r.l_ssl, r.l_inv_term, r.l_var_term, r.l_cov_term, r.l_recon
        );
    }
    for r in rows.iter().rev().take(3).collect::<Vec<_>>().iter().rev() {
        println!(
            "step {:4}: l_ssl {:.4} (inv {:.5} var {:.5} cov {:.6}) l_recon {:.5}",
            r.step, r.l_ssl, r.l_inv_term, r.l_var_term, r.l_cov_term, r.l_recon
        );
    }

    let frozen = FrozenEncoder::from_checkpoint(&out.final_checkpoint).unwrap();

    // 3. Rotation probes from different feature sources and widths.
    for (label, source) in [
        ("cls+mean", FeatureSource::ClsMeanConcat),
        ("mean", FeatureSource::MeanPatch),
        ("cls", FeatureSource::Cls),
    ] {
        let pairs = build_eval_pairs(&ds, TransformKind::Rotation, 32, 1280, 7, |imgs| {
            frozen.features(imgs, source)
        })
        .unwrap();
        for width in [24usize, 64] {
            let cfg = ProbeConfig { hidden_width: width, ..Default::default() };
            let out = train_regression_probe(&pairs, &cfg).unwrap();
            println!("encoder probe {label} width {width}: R2(rot) = {:.4}", out.mean_r2);
        }
    }
    let rot = eval_equivariance(&frozen, &ds, TransformKind::Rotation, &ProbeConfig::default())
        .unwrap();
    println!("default-path R2(rot) = {:.4}", rot.r2);

    // 4. Classification probes from cls vs pooled features, pixel reference.
    let labels = ds.labels.clone().unwrap();
    let imgs: Vec<_> = (0..ds.len()).map(|i| ds.image(i).unwrap()).collect();
    for (label, source) in [("cls", FeatureSource::Cls), ("mean", FeatureSource::MeanPatch)] {
        let feats = frozen.features(&imgs, source).unwrap();
        let acc =
            train_linear_classifier(&feats, &labels, &LinearProbeConfig::default()).unwrap();
        println!("linear probe on {label}: acc = {acc:.4}");
    }
    let pixel_feats: Vec<Vec<f32>> = imgs.iter().map(|im| im.data().to_vec()).collect();
    let acc =
        train_linear_classifier(&pixel_feats, &labels, &LinearProbeConfig::default()).unwrap();
    println!("linear probe on raw pixels: acc = {acc:.4}");
}
