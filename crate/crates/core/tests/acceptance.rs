//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Full-scale absolute accuracy numbers are out of reach on
//! a desk machine (no large pretrained backbones, no GPU fine-tuning), so
//! the criteria are property-based and directional, with every tolerance
//! pinned here in code.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siftfuse::attack::{self, AttackConfig, FusedTarget, LinearProbe, VariantSpec};
use siftfuse::backbone::{pixels_tensor, BackboneKind};
use siftfuse::data::checkpoint::{encode, load_checkpoint, save_checkpoint, Checkpoint, HistoryRow};
use siftfuse::data::shapes::make_synthetic_shapes;
use siftfuse::data::synth;
use siftfuse::data::DataError;
use siftfuse::gat;
use siftfuse::graph::{self, NormalizationStats};
use siftfuse::image::ImageTensor;
use siftfuse::model::{self, FusedModelConfig, TrainHyper};
use siftfuse::sift::{self, SiftConfig};
use siftfuse::tensor::check::{central_diff, central_diff_at};
use siftfuse::tensor::{NamedTensors, ParamSet, Tensor};

/// Runs a criterion body and prints a single PASS/FAIL line.
fn criterion(number: u32, name: &str, body: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    match result {
        Ok(()) => println!("ACCEPTANCE {number} ({name}): PASS"),
        Err(cause) => {
            let msg = cause
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| cause.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            println!("ACCEPTANCE {number} ({name}): FAIL — {msg}");
            std::panic::resume_unwind(cause);
        }
    }
}

#[test]
fn criterion_1_scope() {
    criterion(1, "scope: desk-scale substitutes for full-scale table numbers", || {
        // Absolute accuracies from large pretrained backbones are not
        // reproducible here by design; the remaining criteria pin the
        // property-based and directional substitutes. Nothing to measure.
    });
}

// ---------------------------------------------------------------------
// Criterion 2: gradient suite.
// ---------------------------------------------------------------------

/// Scalar objective builder; must be deterministic given the trial RNG.
type ObjectiveFn = Box<dyn Fn(&Tensor, &mut ChaCha8Rng) -> Tensor>;

/// One differentiable op under test: a leaf shape and its objective.
struct OpCase {
    name: &'static str,
    leaf_shape: Vec<usize>,
    build: ObjectiveFn,
}

fn probe_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let v: Vec<f32> = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.5..1.5)
        })
        .collect();
    Tensor::from_vec(&[n], v).unwrap()
}

fn positive_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()
}

/// Random-sign weighted-mean objective: keeps the scalar small (so f32
/// rounding noise stays at the 1e-7 scale) while gradients stay O(1) for
/// the finite-difference comparison.
fn weigh(out: Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let n = out.len();
    let flat = out.reshape(&[n]).unwrap();
    flat.mul(&probe_vec(rng, n)).unwrap().sum_all().scale(1.0 / n as f32)
}

fn op_cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let mut case = |name: &'static str, leaf_shape: &[usize], build: ObjectiveFn| {
        cases.push(OpCase { name, leaf_shape: leaf_shape.to_vec(), build });
    };

    case("add.lhs", &[6], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(x.add(&other).unwrap(), rng)
    }));
    case("add.rhs", &[6], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(other.add(x).unwrap(), rng)
    }));
    case("sub.lhs", &[6], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(x.sub(&other).unwrap(), rng)
    }));
    case("sub.rhs", &[6], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(other.sub(x).unwrap(), rng)
    }));
    case("mul.lhs", &[6], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(x.mul(&other).unwrap(), rng)
    }));
    case("scale", &[6], Box::new(|x, rng| weigh(x.scale(rng.gen_range(0.5..2.0)), rng)));
    case("add_scalar", &[6], Box::new(|x, rng| weigh(x.add_scalar(rng.gen_range(-1.0..1.0)), rng)));
    case("add_row_bias.x", &[3, 4], Box::new(|x, rng| {
        let b = Tensor::from_vec(&[4], positive_vec(rng, 4)).unwrap();
        weigh(x.add_row_bias(&b).unwrap(), rng)
    }));
    case("add_row_bias.b", &[4], Box::new(|b, rng| {
        let x = Tensor::from_vec(&[3, 4], positive_vec(rng, 12)).unwrap();
        weigh(x.add_row_bias(b).unwrap(), rng)
    }));
    case("add_channel_bias.b", &[2], Box::new(|b, rng| {
        let x = Tensor::from_vec(&[2, 3, 3], positive_vec(rng, 18)).unwrap();
        weigh(x.add_channel_bias(b).unwrap(), rng)
    }));
    case("matmul.lhs", &[3, 4], Box::new(|a, rng| {
        let b = Tensor::from_vec(&[4, 2], positive_vec(rng, 8)).unwrap();
        weigh(a.matmul(&b).unwrap(), rng)
    }));
    case("matmul.rhs", &[4, 2], Box::new(|b, rng| {
        let a = Tensor::from_vec(&[3, 4], positive_vec(rng, 12)).unwrap();
        weigh(a.matmul(b).unwrap(), rng)
    }));
    case("transpose", &[3, 4], Box::new(|x, rng| weigh(x.transpose().unwrap(), rng)));
    case("reshape", &[6], Box::new(|x, rng| weigh(x.reshape(&[2, 3]).unwrap(), rng)));
    case("concat0", &[4], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[3], positive_vec(rng, 3)).unwrap();
        weigh(x.concat(&other, 0).unwrap(), rng)
    }));
    case("concat1", &[2, 2], Box::new(|x, rng| {
        let other = Tensor::from_vec(&[2, 3], positive_vec(rng, 6)).unwrap();
        weigh(x.concat(&other, 1).unwrap(), rng)
    }));
    case("slice_cols", &[3, 5], Box::new(|x, rng| weigh(x.slice_cols(1, 3).unwrap(), rng)));
    case("gather_rows", &[4, 3], Box::new(|x, rng| {
        weigh(x.gather_rows(&[2, 0, 2, 3]).unwrap(), rng)
    }));
    case("scale_rows.x", &[3, 4], Box::new(|x, rng| {
        let s = Tensor::from_vec(&[3], positive_vec(rng, 3)).unwrap();
        weigh(x.scale_rows(&s).unwrap(), rng)
    }));
    case("scale_rows.s", &[3], Box::new(|s, rng| {
        let x = Tensor::from_vec(&[3, 4], positive_vec(rng, 12)).unwrap();
        weigh(x.scale_rows(s).unwrap(), rng)
    }));
    case("sum_all", &[7], Box::new(|x, rng| weigh(x.sum_all(), rng)));
    case("reduce_mean.1d", &[6], Box::new(|x, rng| weigh(x.reduce_mean(0).unwrap(), rng)));
    case("reduce_mean.rows", &[3, 4], Box::new(|x, rng| weigh(x.reduce_mean(0).unwrap(), rng)));
    case("reduce_mean.cols", &[3, 4], Box::new(|x, rng| weigh(x.reduce_mean(1).unwrap(), rng)));
    case("reduce_max", &[3, 4], Box::new(|x, rng| weigh(x.reduce_max(1).unwrap(), rng)));
    case("relu", &[8], Box::new(|x, rng| weigh(x.relu(), rng)));
    case("leaky_relu", &[8], Box::new(|x, rng| weigh(x.leaky_relu(0.2), rng)));
    case("conv2d.x", &[2, 5, 5], Box::new(|x, rng| {
        let k = Tensor::from_vec(&[3, 2, 3, 3], positive_vec(rng, 54)).unwrap();
        weigh(x.conv2d(&k, 1, 1).unwrap(), rng)
    }));
    case("conv2d.k", &[3, 2, 3, 3], Box::new(|k, rng| {
        let x = Tensor::from_vec(&[2, 5, 5], positive_vec(rng, 50)).unwrap();
        weigh(x.conv2d(k, 1, 1).unwrap(), rng)
    }));
    case("conv2d.stride2", &[1, 5, 5], Box::new(|x, rng| {
        let k = Tensor::from_vec(&[2, 1, 3, 3], positive_vec(rng, 18)).unwrap();
        weigh(x.conv2d(&k, 2, 1).unwrap(), rng)
    }));
    case("avg_pool2d", &[2, 4, 4], Box::new(|x, rng| weigh(x.avg_pool2d(2).unwrap(), rng)));
    case("patchify", &[3, 4, 4], Box::new(|x, rng| weigh(x.patchify(2).unwrap(), rng)));
    case("softmax_rows", &[3, 4], Box::new(|x, rng| weigh(x.softmax_rows().unwrap(), rng)));
    case("segment_softmax", &[6], Box::new(|x, rng| {
        weigh(x.segment_softmax(&[0, 1, 0, 2, 1, 0]).unwrap(), rng)
    }));
    case("segment_sum", &[5, 3], Box::new(|x, rng| {
        weigh(x.segment_sum(&[1, 0, 2, 1, 1], 3).unwrap(), rng)
    }));
    case("layer_norm.x", &[3, 6], Box::new(|x, rng| {
        let g = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        let b = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(x.layer_norm(&g, &b).unwrap(), rng)
    }));
    case("layer_norm.gain", &[6], Box::new(|g, rng| {
        let x = Tensor::from_vec(&[3, 6], positive_vec(rng, 18)).unwrap();
        let b = Tensor::from_vec(&[6], positive_vec(rng, 6)).unwrap();
        weigh(x.layer_norm(g, &b).unwrap(), rng)
    }));
    case("softmax_cross_entropy", &[2, 3], Box::new(|x, _| {
        x.softmax_cross_entropy(&[2, 0]).unwrap()
    }));
    cases
}

#[test]
fn criterion_2_gradient_suite() {
    criterion(2, "finite-difference gradient suite", || {
        let started = Instant::now();
        // Central differences on an f32 forward pass trade rounding noise
        // (shrinks with a larger step) against truncation (grows with it),
        // so each entry may agree at either step. The absolute floor covers
        // the irreducible rounding noise of near-zero gradients.
        const STEPS: [f32; 2] = [1e-3, 1e-2];
        const RTOL: f32 = 1e-3;
        const ATOL: f32 = 5e-4;

        for op in op_cases() {
            let n = op.leaf_shape.iter().product::<usize>();
            for trial in 0..3u64 {
                let trial_seed = 1000 + trial * 77;
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                // Inputs away from relu/max kinks: positive with margin > step.
                let values = positive_vec(&mut rng, n);

                let leaf = Tensor::param(&op.leaf_shape, values.clone()).unwrap();
                let mut rng_a = ChaCha8Rng::seed_from_u64(trial_seed ^ 0xabcd);
                let objective = (op.build)(&leaf, &mut rng_a);
                objective.backward().unwrap();
                let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; n]);

                let fds: Vec<Vec<f32>> = STEPS
                    .iter()
                    .map(|&h| {
                        central_diff(&values, h, |vals| {
                            let leaf =
                                Tensor::from_vec(&op.leaf_shape, vals.to_vec()).unwrap();
                            let mut rng_b = ChaCha8Rng::seed_from_u64(trial_seed ^ 0xabcd);
                            (op.build)(&leaf, &mut rng_b).item()
                        })
                    })
                    .collect();
                for (i, &a) in analytic.iter().enumerate() {
                    let ok = fds.iter().any(|fd| {
                        let b = fd[i];
                        (a - b).abs() <= ATOL + RTOL * a.abs().max(b.abs())
                    });
                    assert!(
                        ok,
                        "{} trial {trial} entry {i}: analytic {a} vs fd {:?}",
                        op.name,
                        fds.iter().map(|fd| fd[i]).collect::<Vec<_>>()
                    );
                }
            }
        }

        // End-to-end: full fused loss against finite differences on the
        // strongest-gradient entry of representative parameters, for both
        // backbones. The step is swept because deep f32 paths trade
        // truncation against rounding noise.
        for backbone in [BackboneKind::Vit, BackboneKind::Cnn] {
            let ds = make_synthetic_shapes(2, 1, 64, 4, 900);
            let cfg = FusedModelConfig::new(backbone, true, 4);
            let params = model::init_params(&cfg, 901);
            let sets: Vec<_> = ds
                .train
                .iter()
                .map(|(img, _)| sift::extract(img, &cfg.sift).unwrap())
                .collect();
            let stats =
                graph::compute_normalization_stats(sets.iter().map(|s| s.as_slice())).unwrap();
            let batch = &ds.train[..1];

            let loss = model::batch_loss(batch, &params, &cfg, &stats, None).unwrap();
            loss.backward().unwrap();

            let probes: &[&str] = match backbone {
                BackboneKind::Vit => &["head.w2", "head.w1", "vit.patch.w", "gat.layer0.head0.w"],
                BackboneKind::Cnn => &["head.w2", "cnn.block2.w", "gat.layer4.head1.w"],
            };
            for name in probes {
                let tensor = params.get(name);
                let grad = tensor.grad().unwrap_or_else(|| panic!("no grad for {name}"));
                let (idx, _) = grad
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .unwrap();
                let values = tensor.values().to_vec();
                let eval = |vals: &[f32]| -> f32 {
                    let mut snapshot = params.snapshot();
                    snapshot.get_mut(*name).unwrap().1 = vals.to_vec();
                    let local = ParamSet::from_snapshot(&snapshot);
                    model::batch_loss(batch, &local, &cfg, &stats, None).unwrap().item()
                };
                let best = [1e-3f32, 3e-3, 1e-2]
                    .iter()
                    .map(|&h| {
                        let fd = central_diff_at(&values, idx, h, eval);
                        (grad[idx] - fd).abs() / grad[idx].abs().max(fd.abs()).max(1e-3)
                    })
                    .fold(f32::INFINITY, f32::min);
                assert!(
                    best <= 1e-2,
                    "end-to-end {:?} {name}[{idx}]: rel err {best}",
                    backbone
                );
            }
        }

        let elapsed = started.elapsed().as_secs_f64();
        println!("gradient suite ran in {elapsed:.1}s");
        assert!(elapsed <= 60.0, "gradient suite took {elapsed:.1}s (limit 60s)");
    });
}

// ---------------------------------------------------------------------
// Criterion 3: oracle equivalence.
// ---------------------------------------------------------------------

#[test]
fn criterion_3_oracle_equivalence() {
    criterion(3, "knn / GAT / FGSM oracle equivalence", || {
        // k-NN against an independent brute-force oracle, 100 random sets.
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        for trial in 0..100 {
            let n = rng.gen_range(1..=50);
            let k = rng.gen_range(1..=8);
            let coords: Vec<(f32, f32)> = (0..n)
                .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let got = graph::knn_edges(&coords, k);
            let expect = knn_oracle(&coords, k);
            assert_eq!(got, expect, "knn trial {trial} (n {n}, k {k})");
        }

        // GAT layer against a dense per-node loop, 20 random graphs.
        let gat_cfg = gat::GatConfig {
            n_layers: 1,
            heads: 3,
            head_dim: 4,
            input_dim: 7,
            output_dim: 12,
            attention_slope: 0.2,
        };
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
            let n = rng.gen_range(2..=8);
            let mut params = ParamSet::new();
            gat::init_gat_params(&mut params, &gat_cfg, &mut rng);
            let rows: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let coords: Vec<(f32, f32)> = (0..n)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let edges = graph::knn_edges(&coords, 2);
            let h = Tensor::from_vec(&[n, 7], rows.concat()).unwrap();
            let out = gat::gat_layer_forward(&h, &edges, &params, &gat_cfg, 0, true).unwrap();
            let expect = gat_dense_oracle(&rows, &edges, &params, &gat_cfg);
            for i in 0..n {
                for j in 0..12 {
                    let a = out.values()[i * 12 + j];
                    let b = expect[i][j];
                    assert!(
                        (a - b).abs() <= 1e-5,
                        "gat trial {trial} node {i} dim {j}: {a} vs {b}"
                    );
                }
            }
        }

        // FGSM achieves the analytic worst case of a frozen linear probe.
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let n = 3 * 16 * 16;
        let weights: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
        let probe = LinearProbe { weights, offset: 0.1 };
        let img = ImageTensor::new(16, 16, 3, data);
        let atk = AttackConfig { epsilon: 0.05, ..AttackConfig::default() };
        let before = attack::AttackTarget::loss(&probe, &img, 0).unwrap();
        let adv = attack::fgsm(&probe, &img, 0, &atk).unwrap();
        let after = attack::AttackTarget::loss(&probe, &adv, 0).unwrap();
        let achieved = after - before;
        let analytic = probe.worst_case_gain(0.05);
        assert!(
            (achieved - analytic).abs() <= 1e-4,
            "FGSM gain {achieved} vs analytic {analytic}"
        );
    });
}

fn knn_oracle(coords: &[(f32, f32)], k: usize) -> Vec<(u32, u32)> {
    let n = coords.len();
    let mut out = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut all: Vec<(f32, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i].0 - coords[j].0;
                let dy = coords[i].1 - coords[j].1;
                (dx * dx + dy * dy, j)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in all.iter().take(k.min(n.saturating_sub(1))) {
            out.insert((i as u32, j as u32));
            out.insert((j as u32, i as u32));
        }
    }
    out.into_iter().collect()
}

/// Dense per-node reference for one GAT layer (self-loops appended).
fn gat_dense_oracle(
    rows: &[Vec<f32>],
    edges: &[(u32, u32)],
    params: &ParamSet,
    cfg: &gat::GatConfig,
) -> Vec<Vec<f32>> {
    let n = rows.len();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in edges {
        incoming[d as usize].push(s as usize);
    }
    for (i, inc) in incoming.iter_mut().enumerate() {
        inc.push(i);
    }
    let mut out = vec![Vec::new(); n];
    for head in 0..cfg.heads {
        let w = params.get(&format!("gat.layer0.head{head}.w"));
        let a = params.get(&format!("gat.layer0.head{head}.a"));
        let (in_dim, hd) = (w.shape()[0], w.shape()[1]);
        let project = |x: &[f32]| -> Vec<f32> {
            (0..hd)
                .map(|j| (0..in_dim).map(|i| x[i] * w.values()[i * hd + j]).sum())
                .collect()
        };
        let hw: Vec<Vec<f32>> = rows.iter().map(|r| project(r)).collect();
        for i in 0..n {
            let logits: Vec<f32> = incoming[i]
                .iter()
                .map(|&j| {
                    let mut e = 0.0f32;
                    for t in 0..hd {
                        e += a.values()[t] * hw[i][t] + a.values()[hd + t] * hw[j][t];
                    }
                    if e > 0.0 {
                        e
                    } else {
                        cfg.attention_slope * e
                    }
                })
                .collect();
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f32 = exps.iter().sum();
            let mut agg = vec![0.0f32; hd];
            for (t, &j) in incoming[i].iter().enumerate() {
                for d in 0..hd {
                    agg[d] += exps[t] / total * hw[j][d];
                }
            }
            out[i].extend(agg);
        }
    }
    for row in &mut out {
        for v in row {
            *v = v.max(0.0);
        }
    }
    out
}

// ---------------------------------------------------------------------
// Criterion 4: SIFT property suite.
// ---------------------------------------------------------------------

#[test]
fn criterion_4_sift_properties() {
    criterion(4, "SIFT descriptor/stability properties", || {
        let cfg = SiftConfig::default();

        // Descriptor norms and nonnegativity across varied images.
        for img in [
            synth::checkerboard(64, 7),
            synth::gaussian_blob(64, 30.0, 26.0, 3.0),
            make_synthetic_shapes(1, 0, 64, 4, 41).train[0].0.clone(),
        ] {
            let kps = sift::extract(&img, &cfg).unwrap();
            assert!(!kps.is_empty());
            for (_, desc) in &kps {
                let norm: f32 = desc.values().iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((norm - 1.0).abs() <= 1e-5, "descriptor norm {norm}");
                assert!(desc.values().iter().all(|&v| v >= 0.0));
            }
        }

        // Translation equivariance within 0.5 px.
        let blob = synth::gaussian_blob(64, 27.0, 30.0, 3.0);
        let shifted = synth::shift_image(&blob, 4, -3);
        let a = sift::extract(&blob, &cfg).unwrap();
        let b = sift::extract(&shifted, &cfg).unwrap();
        assert!(!a.is_empty() && !b.is_empty());
        let mut matched = 0;
        for (kp, _) in &a {
            let best = b
                .iter()
                .map(|(p, _)| {
                    ((p.x - kp.x - 4.0).powi(2) + (p.y - kp.y + 3.0).powi(2)).sqrt()
                })
                .fold(f32::INFINITY, f32::min);
            if best.is_finite() {
                assert!(best <= 0.5, "translated keypoint off by {best:.3} px");
                matched += 1;
            }
        }
        assert!(matched > 0);

        // Constant and near-constant images are total and empty.
        for level in [0.0, 0.37, 1.0] {
            let img = ImageTensor::constant(64, 64, 3, level);
            assert!(sift::extract(&img, &cfg).unwrap().is_empty());
        }
        let mut near = ImageTensor::constant(64, 64, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for v in near.data_mut() {
            *v += rng.gen_range(-0.001..0.001);
        }
        assert!(sift::extract(&near, &cfg).unwrap().is_empty());

        // Stability inequality on the checkerboard oracle at 8/255 noise:
        // matched descriptors move far less than the underlying pixels.
        let board = synth::checkerboard(64, 7);
        let reports =
            sift::measure_keypoint_stability(&board, &cfg, &[8.0 / 255.0], 17).unwrap();
        let r = &reports[0];
        assert!(r.repeatability > 0.5, "too few matches ({})", r.repeatability);
        assert!(r.mean_pixel_distance > 0.0);
        let ratio = r.mean_descriptor_distance / r.mean_pixel_distance;
        println!(
            "stability at 8/255: repeatability {:.3}, desc {:.4}, pixel {:.4}, ratio {ratio:.4}",
            r.repeatability, r.mean_descriptor_distance, r.mean_pixel_distance
        );
        assert!(ratio < 1.0, "descriptor/pixel distance ratio {ratio} not < 1");
    });
}

// ---------------------------------------------------------------------
// Criterion 5: attack soundness.
// ---------------------------------------------------------------------

#[test]
fn criterion_5_attack_soundness() {
    criterion(5, "adversarial budget and clean-row soundness", || {
        let ds = make_synthetic_shapes(32, 8, 64, 4, 50);
        let cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
        let hyper = TrainHyper {
            epochs: 2,
            seed: 50,
            flip_augment: false,
            log: false,
            ..TrainHyper::default()
        };
        let out = model::train(&ds, &cfg, &hyper, None).unwrap();
        let target = FusedTarget { params: &out.params, cfg: &cfg, stats: &out.stats };

        // Every emitted adversarial example respects the ball and the range.
        for (i, (img, label)) in ds.test.iter().enumerate() {
            for (ei, eps) in [0.0f32, 0.01, 0.05].into_iter().enumerate() {
                let atk = AttackConfig {
                    epsilon: eps,
                    seed: 77 + (i * 3 + ei) as u64,
                    ..AttackConfig::default()
                };
                for adv in [
                    attack::fgsm(&target, img, *label, &atk).unwrap(),
                    attack::pgd(&target, img, *label, &atk).unwrap(),
                ] {
                    for (a, b) in adv.data().iter().zip(img.data()) {
                        assert!((a - b).abs() <= eps + 1e-6, "budget violated at eps {eps}");
                        assert!((0.0..=1.0).contains(a), "range violated");
                    }
                    if eps == 0.0 {
                        assert_eq!(adv.data(), img.data(), "zero budget must be identity");
                    }
                }
            }
        }

        // The epsilon-zero sweep row equals the clean evaluation exactly.
        let variants = [VariantSpec {
            name: "fused".into(),
            params: &out.params,
            cfg: &cfg,
            stats: &out.stats,
        }];
        let atk = AttackConfig { seed: 50, ..AttackConfig::default() };
        let report = attack::sweep(&ds.test, &variants, &[0.01], &atk, "shapes").unwrap();
        let clean = model::evaluate(&ds.test, &out.params, &cfg, &out.stats, None).unwrap();
        assert_eq!(report.accuracy_of("fused", 0.0), Some(clean));
    });
}

// ---------------------------------------------------------------------
// Criterion 6: directional robustness reproduction.
// ---------------------------------------------------------------------

#[test]
fn criterion_6_directional_robustness() {
    criterion(6, "fused beats baseline under attack at matched clean accuracy", || {
        let started = Instant::now();
        let ds = make_synthetic_shapes(2000, 500, 64, 4, 17);
        let hyper = TrainHyper {
            epochs: 15,
            seed: 17,
            early_stop_val_acc: Some(0.97),
            log: true,
            ..TrainHyper::default()
        };
        let fused_cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
        let base_cfg = FusedModelConfig::new(BackboneKind::Vit, false, 4);

        println!("training fused variant");
        let fused = model::train(&ds, &fused_cfg, &hyper, None).unwrap();
        println!("training baseline variant");
        let baseline = model::train(&ds, &base_cfg, &hyper, None).unwrap();

        let variants = [
            VariantSpec {
                name: "fused".into(),
                params: &fused.params,
                cfg: &fused_cfg,
                stats: &fused.stats,
            },
            VariantSpec {
                name: "baseline".into(),
                params: &baseline.params,
                cfg: &base_cfg,
                stats: &baseline.stats,
            },
        ];
        // The three mid-grid epsilons carry the margin requirement; the
        // grid endpoint 0.1 anchors the monotonicity check.
        let grid = [0.0056, 0.01, 0.0178, 0.1];
        let margin_eps = &grid[..3];
        let atk = AttackConfig { seed: 17, ..AttackConfig::default() };
        let report = attack::sweep(&ds.test, &variants, &grid, &atk, "shapes").unwrap();
        print!("{}", report.to_csv());

        assert_eq!(report.rows.len(), (grid.len() + 1) * 2, "one row per epsilon and variant");

        let fused_clean = report.accuracy_of("fused", 0.0).unwrap();
        let base_clean = report.accuracy_of("baseline", 0.0).unwrap();
        // (a) At most a marginal clean-accuracy drop from adding the branch.
        assert!(
            fused_clean >= base_clean - 0.03,
            "clean accuracy dropped too far: fused {fused_clean} vs baseline {base_clean}"
        );
        // Fused variant must also be genuinely trained on this corpus.
        assert!(fused_clean >= 0.90, "fused clean accuracy {fused_clean} below 0.90");
        // (b) A uniform robustness advantage across the mid-grid epsilons.
        for &eps in margin_eps {
            let f = report.accuracy_of("fused", eps).unwrap();
            let b = report.accuracy_of("baseline", eps).unwrap();
            assert!(
                f >= b + 0.10,
                "at eps {eps}: fused {f} vs baseline {b} (need +10 points)"
            );
        }
        // Endpoint monotonicity at epsilon 0.1; intermediate epsilons may
        // wobble (random-start attacks occasionally flip samples correct).
        for variant in ["fused", "baseline"] {
            let clean = report.accuracy_of(variant, 0.0).unwrap();
            let worst = report.accuracy_of(variant, 0.1).unwrap();
            assert!(
                worst <= clean,
                "{variant}: accuracy at max epsilon {worst} exceeds clean {clean}"
            );
        }

        // Budget: 30 minutes on four cores, pro-rated when fewer are up.
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let limit = 1800.0 * 4.0 / (cores.min(4) as f64);
        let elapsed = started.elapsed().as_secs_f64();
        println!("reference run took {elapsed:.0}s on {cores} cores (limit {limit:.0}s)");
        assert!(elapsed <= limit, "reference run took {elapsed:.0}s (limit {limit:.0}s)");
    });
}

// ---------------------------------------------------------------------
// Criterion 7: determinism.
// ---------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    criterion(7, "byte-identical train and sweep outputs across runs", || {
        let run = || -> (String, String) {
            let ds = make_synthetic_shapes(48, 12, 64, 4, 123);
            let cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
            let hyper = TrainHyper {
                epochs: 2,
                batch_size: 16,
                seed: 123,
                log: false,
                ..TrainHyper::default()
            };
            let out = model::train(&ds, &cfg, &hyper, None).unwrap();
            let mut history_csv = String::from("epoch,loss,val_acc\n");
            for HistoryRow { epoch, loss, val_acc } in &out.history {
                history_csv.push_str(&format!("{epoch},{loss},{val_acc}\n"));
            }
            let variants = [VariantSpec {
                name: "fused".into(),
                params: &out.params,
                cfg: &cfg,
                stats: &out.stats,
            }];
            let atk = AttackConfig { seed: 123, ..AttackConfig::default() };
            let report =
                attack::sweep(&ds.test, &variants, &[0.005, 0.02], &atk, "shapes").unwrap();
            (history_csv, report.to_csv())
        };
        let (history_a, report_a) = run();
        let (history_b, report_b) = run();
        assert_eq!(history_a, history_b, "training history differs between runs");
        assert_eq!(report_a, report_b, "sweep report differs between runs");
    });
}

// ---------------------------------------------------------------------
// Criterion 8: persistence.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_persistence() {
    criterion(8, "bit-exact checkpoints with corruption detection", || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
        let params = model::init_params(&cfg, 7);
        let ck = Checkpoint {
            config_digest: cfg.digest(),
            tensors: params.snapshot(),
            stats: NormalizationStats {
                mu_x: 31.0,
                mu_y: 33.0,
                sigma_x: 9.0,
                sigma_y: 8.0,
                eps: 1e-6,
            },
            history: vec![HistoryRow { epoch: 1, loss: 1.2, val_acc: 0.5 }],
        };
        let p1 = dir.path().join("a.sgck");
        let p2 = dir.path().join("b.sgck");
        save_checkpoint(&p1, &ck).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ck, "checkpoint round trip must be exact");
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "save-load-save must be byte identical"
        );

        // Flip each of a spread of byte positions; every one must surface as
        // a digest error (magic/version corruption has its own variants).
        let bytes = encode(&ck);
        for pos in [6usize, 20, bytes.len() / 2, bytes.len() - 9] {
            let mut corrupted = bytes.clone();
            corrupted[pos] ^= 0x10;
            let path = dir.path().join(format!("c{pos}.sgck"));
            std::fs::write(&path, &corrupted).unwrap();
            assert!(
                matches!(load_checkpoint(&path), Err(DataError::DigestMismatch { .. })),
                "corruption at byte {pos} went undetected"
            );
        }
    });
}

// ---------------------------------------------------------------------
// Supporting invariants exercised at acceptance level.
// ---------------------------------------------------------------------

/// The fused model's pixel gradient must not see the graph branch, while
/// parameter gradients must reach it.
#[test]
fn gradient_contract_holds_end_to_end() {
    let ds = make_synthetic_shapes(2, 1, 64, 4, 60);
    let cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
    let params = model::init_params(&cfg, 61);
    let sets: Vec<_> =
        ds.train.iter().map(|(img, _)| sift::extract(img, &cfg.sift).unwrap()).collect();
    let stats = graph::compute_normalization_stats(sets.iter().map(|s| s.as_slice())).unwrap();
    let (img, label) = &ds.train[0];

    let pixel_grad = |frozen: Option<&graph::KeypointGraph>| -> Vec<f32> {
        let pixels = pixels_tensor(img, true).unwrap();
        let logits = model::forward_logits(img, &pixels, &params, &cfg, &stats, frozen).unwrap();
        logits.softmax_cross_entropy(&[*label]).unwrap().backward().unwrap();
        pixels.grad().unwrap()
    };
    let recomputed = pixel_grad(None);
    let g = graph::build_graph(img, &cfg.sift, &stats, cfg.k).unwrap();
    let frozen = pixel_grad(Some(&g));
    assert_eq!(recomputed, frozen);

    // Parameters of the graph encoder do receive gradient.
    params.zero_grads();
    let loss = model::batch_loss(&ds.train[..1], &params, &cfg, &stats, None).unwrap();
    loss.backward().unwrap();
    let gat_grad = params.get("gat.layer0.head0.w").grad().unwrap();
    assert!(gat_grad.iter().any(|&v| v != 0.0));
}

/// NamedTensors snapshot of a trained model reloads into an identical
/// evaluator (ties persistence to the model path).
#[test]
fn checkpoint_reload_preserves_predictions() {
    let ds = make_synthetic_shapes(16, 4, 64, 4, 70);
    let cfg = FusedModelConfig::new(BackboneKind::Vit, true, 4);
    let hyper =
        TrainHyper { epochs: 1, seed: 71, flip_augment: false, log: false, ..TrainHyper::default() };
    let out = model::train(&ds, &cfg, &hyper, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.sgck");
    save_checkpoint(
        &path,
        &Checkpoint {
            config_digest: cfg.digest(),
            tensors: out.params.snapshot(),
            stats: out.stats,
            history: out.history.clone(),
        },
    )
    .unwrap();
    let ck = load_checkpoint(&path).unwrap();
    ck.expect_config(cfg.digest()).unwrap();
    let reloaded = ParamSet::from_snapshot(&ck.tensors);
    for (img, _) in &ds.test {
        let a = model::forward(img, &out.params, &cfg, &out.stats).unwrap();
        let b = model::forward(img, &reloaded, &cfg, &ck.stats).unwrap();
        assert_eq!(a.logits, b.logits);
    }
    let _: NamedTensors = ck.tensors;
}
