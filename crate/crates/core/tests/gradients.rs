//! Tape gradients against central finite differences, 10 random instances per op.

use mentor_core::autodiff::gradcheck::{check_gradients, weighted_sum};
use mentor_core::autodiff::{Tape, Var};
use mentor_core::tensor::Tensor;
use mentor_core::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-3;
const INSTANCES: u64 = 10;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so kinks (relu, abs) are never straddled.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Pairwise-distinct values (gaps ≥ 0.02) so max/min selections are stable under ±EPS.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.02 - 0.5).collect();
    values.shuffle(rng);
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn run<F>(name: &str, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for instance in 0..INSTANCES {
        let inputs = make(&mut rng);
        let report = check_gradients(&inputs, EPS, f).unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{name} instance {instance}: {report:?}"
        );
    }
}

#[test]
fn elementwise_ops() {
    run("add", 1, |r| vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y)
    });
    run("sub", 2, |r| vec![uniform(&[5], r), uniform(&[5], r)], |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted_sum(t, y)
    });
    run("mul", 3, |r| vec![uniform(&[2, 3], r), uniform(&[2, 3], r)], |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y)
    });
    run("scale", 4, |r| vec![uniform(&[6], r)], |t, v| {
        let y = t.scale(v[0], -2.5);
        weighted_sum(t, y)
    });
    run("square", 5, |r| vec![uniform(&[6], r)], |t, v| {
        let y = t.square(v[0]);
        weighted_sum(t, y)
    });
    run("abs", 6, |r| vec![away_from_zero(&[6], r)], |t, v| {
        let y = t.abs(v[0]);
        weighted_sum(t, y)
    });
    run("sum", 7, |r| vec![uniform(&[2, 5], r)], |t, v| {
        let s = t.sum(v[0]);
        Ok(t.square(s))
    });
    run("mean", 8, |r| vec![uniform(&[2, 5], r)], |t, v| {
        let s = t.mean(v[0]);
        Ok(t.square(s))
    });
}

#[test]
fn activations() {
    run("relu", 10, |r| vec![away_from_zero(&[2, 7], r)], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y)
    });
    run("sigmoid", 11, |r| vec![uniform(&[2, 7], r)], |t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y)
    });
    run("softmax axis 1", 12, |r| vec![uniform(&[3, 4], r)], |t, v| {
        let y = t.softmax(v[0], 1)?;
        weighted_sum(t, y)
    });
    run("softmax axis 0", 13, |r| vec![uniform(&[3, 2, 2], r)], |t, v| {
        let y = t.softmax(v[0], 0)?;
        weighted_sum(t, y)
    });
    run("maxpool2x", 14, |r| vec![distinct(&[2, 2, 4, 6], r)], |t, v| {
        let y = t.maxpool2x(v[0])?;
        weighted_sum(t, y)
    });
}

#[test]
fn dense_and_convolution() {
    run(
        "linear",
        20,
        |r| vec![uniform(&[3, 4], r), uniform(&[4, 2], r), uniform(&[2], r)],
        |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        },
    );
    run(
        "conv2d",
        21,
        |r| vec![uniform(&[2, 3, 5, 5], r), uniform(&[4, 3, 3, 3], r)],
        |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1)?;
            weighted_sum(t, y)
        },
    );
    run(
        "conv2d strided with bias",
        22,
        |r| {
            vec![
                uniform(&[1, 2, 6, 7], r),
                uniform(&[3, 2, 3, 2], r),
                uniform(&[3], r),
            ]
        },
        |t, v| {
            let y = t.conv2d_bias(v[0], v[1], v[2], 2, 1)?;
            weighted_sum(t, y)
        },
    );
    run("upsample_nearest2x", 23, |r| vec![uniform(&[2, 2, 3, 3], r)], |t, v| {
        let y = t.upsample_nearest2x(v[0])?;
        weighted_sum(t, y)
    });
    run(
        "concat_channels",
        24,
        |r| vec![uniform(&[2, 1, 3, 3], r), uniform(&[2, 2, 3, 3], r)],
        |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            weighted_sum(t, y)
        },
    );
    run("global_avg_pool", 25, |r| vec![uniform(&[2, 3, 4, 4], r)], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        weighted_sum(t, y)
    });
}

#[test]
fn loss_building_blocks() {
    run("cross_entropy", 30, |r| vec![uniform(&[5, 3], r)], |t, v| {
        t.cross_entropy(v[0], &[0, 2, 1, 1, 0])
    });
    run(
        "class_map",
        31,
        |r| vec![uniform(&[3, 4, 2, 2], r), uniform(&[4, 2], r)],
        |t, v| {
            let y = t.class_map(v[0], v[1], &[1, 0, 1])?;
            weighted_sum(t, y)
        },
    );
    run("minmax_normalize", 32, |r| vec![distinct(&[2, 1, 3, 3], r)], |t, v| {
        let y = t.minmax_normalize(v[0], 1e-6)?;
        weighted_sum(t, y)
    });
}

#[test]
fn composite_encoder_decoder_chain() {
    run(
        "conv-relu-pool-up-sigmoid",
        40,
        |r| {
            vec![
                uniform(&[2, 1, 4, 4], r),
                uniform(&[2, 1, 3, 3], r),
                uniform(&[2], r),
                uniform(&[1, 3, 3, 3], r),
            ]
        },
        |t, v| {
            let h = t.conv2d_bias(v[0], v[1], v[2], 1, 1)?;
            let h = t.sigmoid(h);
            let p = t.maxpool2x(h)?;
            let u = t.upsample_nearest2x(p)?;
            let cat = t.concat_channels(u, v[0])?;
            let o = t.conv2d(cat, v[3], 1, 1)?;
            let s = t.sigmoid(o);
            weighted_sum(t, s)
        },
    );
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..10 {
        let x0 = uniform(&[1, 2, 4, 4], &mut rng);
        let k0 = uniform(&[3, 2, 3, 3], &mut rng);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));

        let grads = |wa: f64, wb: f64| {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(x0.clone(), true);
            let k = t.leaf(k0.clone(), true);
            let y = t.conv2d(x, k, 1, 1).unwrap();
            let l1 = t.mean(y);
            let sq = t.sigmoid(y);
            let l2 = t.sum(sq);
            let s1 = t.scale(l1, wa);
            let s2 = t.scale(l2, wb);
            let loss = t.add(s1, s2).unwrap();
            t.backward(loss).unwrap();
            [t.grad(x).unwrap().clone(), t.grad(k).unwrap().clone()]
        };
        let combined = grads(a, b);
        let only1 = grads(1.0, 0.0);
        let only2 = grads(0.0, 1.0);
        for i in 0..2 {
            for ((c, g1), g2) in combined[i]
                .data()
                .iter()
                .zip(only1[i].data())
                .zip(only2[i].data())
            {
                assert!((c - (a * g1 + b * g2)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn gradients_are_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let x0: Tensor<f32> = uniform(&[2, 1, 8, 8], &mut rng).cast();
    let k0: Tensor<f32> = uniform(&[4, 1, 3, 3], &mut rng).cast();
    let once = || {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(x0.clone(), true);
        let k = t.leaf(k0.clone(), true);
        let y = t.conv2d(x, k, 1, 1).unwrap();
        let y = t.relu(y);
        let p = t.maxpool2x(y).unwrap();
        let loss = t.mean(p);
        t.backward(loss).unwrap();
        (
            t.value(loss).clone(),
            t.grad(x).unwrap().clone(),
            t.grad(k).unwrap().clone(),
        )
    };
    let (a, b) = (once(), once());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
    assert_eq!(a.2.data(), b.2.data());
}

#[test]
fn training_objectives() {
    use mentor_core::losses::{joint_loss, mentor_pretrain_loss, salience_dissimilarity, Dissimilarity, PixelNormalization};

    let maps = |r: &mut ChaCha8Rng| {
        let pred = uniform(&[3, 1, 4, 4], r);
        let human = Tensor::from_fn(vec![3, 1, 4, 4], |_| r.random_range(0.0..1.0));
        vec![pred, human]
    };
    // L1 needs pred - human away from zero; shift the prediction by a random sign.
    let l1_maps = |r: &mut ChaCha8Rng| {
        let human = Tensor::from_fn(vec![3, 1, 4, 4], |_| r.random_range(0.0..1.0));
        let offset = away_from_zero(&[3, 1, 4, 4], r);
        let pred = Tensor::new(
            vec![3, 1, 4, 4],
            human.data().iter().zip(offset.data()).map(|(h, o)| h + o).collect(),
        )
        .unwrap();
        vec![pred, human]
    };
    run("dissimilarity mse", 70, maps, |t, v| salience_dissimilarity(t, v[0], v[1], Dissimilarity::Mse));
    run("dissimilarity l1", 71, l1_maps, |t, v| salience_dissimilarity(t, v[0], v[1], Dissimilarity::L1));
    run("pretrain per-pixel", 72, maps, |t, v| mentor_pretrain_loss(t, v[0], v[1], PixelNormalization::PerPixel));
    run("pretrain raw", 73, maps, |t, v| mentor_pretrain_loss(t, v[0], v[1], PixelNormalization::Raw));

    let joint_inputs = |r: &mut ChaCha8Rng| {
        let mut v = vec![uniform(&[3, 2], r)];
        v.extend(maps(r));
        v
    };
    for (i, alpha) in [0.0, 0.3, 0.5, 1.0].into_iter().enumerate() {
        run("joint mse", 80 + i as u64, joint_inputs, move |t, v| {
            joint_loss(t, v[0], &[1, 0, 1], v[1], v[2], alpha, Dissimilarity::Mse)
        });
    }
    // joint loss through the CAM path: features and head weights both receive gradient
    run(
        "joint through cam",
        90,
        |r| {
            vec![
                uniform(&[3, 4, 2, 2], r),
                uniform(&[4, 2], r),
                uniform(&[2], r),
                Tensor::from_fn(vec![3, 1, 2, 2], |_| r.random_range(0.0..1.0)),
            ]
        },
        |t, v| {
            let pooled = t.global_avg_pool(v[0])?;
            let logits = t.linear(pooled, v[1], v[2])?;
            let cam = t.class_map(v[0], v[1], &[1, 1, 0])?;
            let cam = t.sigmoid(cam);
            joint_loss(t, logits, &[1, 1, 0], cam, v[3], 0.5, Dissimilarity::Mse)
        },
    );
}
