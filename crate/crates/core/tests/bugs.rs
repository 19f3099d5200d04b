use std::collections::BTreeSet;

use debugbench::attribution::{attribute, AttributionContext, MethodSpec};
use debugbench::bugs::{
    cascading_randomization, inject, inject_all, ood_pairing, BugKind, BugSpec, Pipeline, TestTransform,
};
use debugbench::data::{gen_glyphs, gen_shapes, Source};
use debugbench::nn::{preset, Network, OutputKind, ScoreTarget, TrainConfig};

fn net(seed: u64) -> Network {
    Network::build(
        &[16, 16, 3],
        3,
        &preset("mini-cnn", 3, OutputKind::Softmax).unwrap(),
        seed,
    )
    .unwrap()
}

fn pipeline() -> Pipeline {
    Pipeline::new(
        Some(gen_shapes(1, 30, 3, 16).unwrap()),
        Some(gen_shapes(2, 9, 3, 16).unwrap()),
        Some(net(4)),
        TrainConfig::default(),
    )
}

fn ctx() -> AttributionContext {
    AttributionContext {
        target: ScoreTarget::Logit,
        seed: 9,
        baseline_pool: Vec::new(),
        domain_min: 0.0,
    }
}

fn methods() -> Vec<MethodSpec> {
    ["grad", "intgrad", "lrp-eps"]
        .iter()
        .map(|m| MethodSpec::from_id(m).unwrap())
        .collect()
}

#[test]
fn each_bug_touches_only_its_component() {
    let p = pipeline();
    let spurious = inject(
        &BugSpec::new(
            BugKind::Spurious {
                mapping: None,
                fraction: 1.0,
            },
            3,
        ),
        &p,
    )
    .unwrap();
    assert_eq!(spurious.network, p.network);
    assert_ne!(spurious.train_data, p.train_data);
    assert_ne!(spurious.test_data, p.test_data);
    for (a, b) in p
        .train_data
        .as_ref()
        .unwrap()
        .examples
        .iter()
        .zip(&spurious.train_data.as_ref().unwrap().examples)
    {
        assert_eq!(a.label, b.label);
    }

    let reinit = inject(&BugSpec::new(BugKind::Reinit { top: 2, layers: None }, 3), &p).unwrap();
    assert_eq!((&reinit.train_data, &reinit.test_data), (&p.train_data, &p.test_data));
    let (before, after) = (p.network.as_ref().unwrap(), reinit.network.as_ref().unwrap());
    let top: BTreeSet<_> = before.parameterized_indices().into_iter().rev().take(2).collect();
    for (i, (a, b)) in before.layers().iter().zip(after.layers()).enumerate() {
        assert_eq!(a == b, !top.contains(&i), "layer {i}");
    }

    let frozen = inject(&BugSpec::new(BugKind::Frozen { layers: vec![0] }, 0), &p).unwrap();
    assert_eq!(frozen.network, p.network);
    assert!(frozen.train_config.frozen.contains(&0));

    let test_time = inject(
        &BugSpec::new(
            BugKind::PreprocessMismatch {
                transform: TestTransform::Rescale255,
            },
            0,
        ),
        &p,
    )
    .unwrap();
    assert_eq!((&test_time.train_data, &test_time.network), (&p.train_data, &p.network));
    let x = &p.test_data.as_ref().unwrap().examples[0].image;
    let y = test_time.prepare_input(x);
    assert!(x
        .data()
        .iter()
        .zip(y.data())
        .all(|(a, b)| (a * 255.0 - b).abs() < 1e-12));
}

#[test]
fn bugs_compose_in_order() {
    let p = pipeline();
    let specs = [
        BugSpec::new(BugKind::LabelFlip { fraction: 0.2 }, 1),
        BugSpec::new(BugKind::Reinit { top: 1, layers: None }, 2),
    ];
    let both = inject_all(&specs, &p).unwrap();
    let stepwise = inject(&specs[1], &inject(&specs[0], &p).unwrap()).unwrap();
    assert_eq!(both.train_data, stepwise.train_data);
    assert_eq!(both.network, stepwise.network);
    let labels: Vec<_> = both.applied.iter().map(|b| b.label()).collect();
    assert_eq!(labels, ["label_flip", "reinit"]);
}

#[test]
fn cascade_is_cumulative_and_starts_from_the_original() {
    let n = net(5);
    let test = gen_shapes(2, 3, 3, 16).unwrap();
    let inputs: Vec<_> = test
        .examples
        .iter()
        .map(|e| (e.image.clone(), n.predict(&e.image).unwrap()))
        .collect();
    let stages = cascading_randomization(&n, &inputs, &methods(), 17, &ctx(), None).unwrap();
    let layers = n.parameterized_indices();
    assert_eq!(stages.len(), layers.len() + 1);
    for (k, stage) in stages.iter().enumerate() {
        assert_eq!(stage.depth, k);
        let expected: BTreeSet<_> = layers.iter().rev().take(k).copied().collect();
        assert_eq!(stage.reinitialized, expected);
        if k > 0 {
            assert!(stages[k - 1].reinitialized.is_subset(&stage.reinitialized));
        }
    }
    for (i, (x, class)) in inputs.iter().enumerate() {
        for (j, m) in methods().iter().enumerate() {
            assert_eq!(stages[0].maps[i][j], attribute(&n, x, *class, m, &ctx()).unwrap());
            assert!(stages[1..].iter().all(|s| s.maps[i][j].class == *class));
        }
    }
    let capped = cascading_randomization(&n, &inputs[..1], &methods()[..1], 17, &ctx(), Some(2)).unwrap();
    assert_eq!(capped.len(), 3);
    assert_eq!(capped[2].maps[0][0], stages[2].maps[0][0]);
}

#[test]
fn ood_pairing_with_itself_is_identity() {
    let n = net(6);
    let inputs: Vec<_> = gen_shapes(7, 4, 3, 16)
        .unwrap()
        .examples
        .into_iter()
        .map(|e| e.image)
        .collect();
    let rows = ood_pairing(&n, &[&n], &inputs, &methods(), &ctx()).unwrap();
    assert_eq!(rows.len(), inputs.len() * methods().len());
    for row in &rows {
        assert_eq!(row.out_domain, vec![row.in_domain.clone()]);
    }
}

#[test]
fn ood_adapts_channels_for_grey_networks() {
    let grey = Network::build(
        &[16, 16, 1],
        10,
        &preset("mini-cnn", 10, OutputKind::Softmax).unwrap(),
        2,
    )
    .unwrap();
    let inputs: Vec<_> = gen_shapes(7, 3, 3, 16)
        .unwrap()
        .examples
        .into_iter()
        .map(|e| e.image)
        .collect();
    let rows = ood_pairing(&net(6), &[&grey], &inputs, &methods(), &ctx()).unwrap();
    for row in rows {
        assert_eq!(row.in_domain.values.shape(), &[16, 16, 3]);
        assert_eq!(row.out_domain[0].values.shape(), &[16, 16, 1]);
    }

    let p = Pipeline::new(
        None,
        Some(gen_glyphs(3, 10, 16).unwrap()),
        Some(net(6)),
        TrainConfig::default(),
    );
    let spec = BugSpec::new(
        BugKind::Ood {
            train_domain: Source::Glyphs {
                seed: 1,
                n: 20,
                image_size: 16,
            },
            test_inputs: None,
        },
        0,
    );
    let moved = inject(&spec, &p).unwrap();
    let test = moved.test_data.unwrap();
    assert_eq!(test.len(), 10);
    assert_eq!(test.image_shape().unwrap(), &[16, 16, 3]);
}
