use viewgrid_core::model::{Head, Network};
use viewgrid_core::synthdata::{generate_dataset, DatasetConfig, Split};
use viewgrid_core::trainer::{accuracy, evaluate, train, train_on, Experiment};
use viewgrid_core::{Error, Tensor};

fn small(head: Head) -> Experiment {
    let mut exp = Experiment {
        synthdata: DatasetConfig {
            train_per_class: 8,
            test_seen_per_class: 4,
            test_unseen_per_class: 4,
            ..DatasetConfig::default()
        },
        ..Experiment::default()
    };
    exp.model.head = head;
    exp.model.channels = 4;
    exp.model.grid = 8;
    exp.model.head_channels = 4;
    exp.train.epochs = 2;
    exp.train.batch_size = 8;
    exp
}

#[test]
fn training_is_bitwise_deterministic() {
    for head in [Head::BaselineNone, Head::Multiview2d, Head::World3d] {
        let exp = small(head);
        let (net_a, a) = train(&exp).unwrap();
        let (net_b, b) = train(&exp).unwrap();
        assert_eq!(a, b, "{}", head.as_str());
        assert_eq!(net_a.store, net_b.store, "{}", head.as_str());
    }
}

#[test]
fn balanced_batches_are_deterministic_too() {
    let mut exp = small(Head::Multiview2d);
    exp.train.balanced = true;
    assert_eq!(train(&exp).unwrap().1, train(&exp).unwrap().1);
}

#[test]
fn untrained_network_is_near_chance() {
    let mut exp = Experiment::default();
    exp.model.head = Head::BaselineNone;
    exp.train.epochs = 0;
    let (_, m) = train(&exp).unwrap();
    assert!(m.epochs.is_empty());
    for acc in [m.accuracy.train_seen, m.accuracy.test_seen, m.accuracy.test_unseen] {
        assert!((acc - 0.2).abs() <= 0.15, "{acc}");
    }
}

#[test]
fn constant_logits_score_the_favoured_class_frequency() {
    let ds = generate_dataset(&small(Head::BaselineNone).synthdata).unwrap();
    let mut net = Network::new(&small(Head::BaselineNone).model, 0).unwrap();
    for p in net.store.iter_mut() {
        if p.name == "head.fc.weight" {
            p.value.fill(0.0);
        } else if p.name == "head.fc.bias" {
            p.value = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        }
    }
    for split in Split::ALL {
        let samples = ds.split(split);
        let freq = samples.iter().filter(|s| s.class == 2).count() as f64 / samples.len() as f64;
        assert_eq!(evaluate(&net, &ds, split).unwrap(), freq);
    }
    assert!(matches!(accuracy(&net, &[]), Err(Error::EmptySplit(_))));
}

#[test]
fn supervised_baseline_fits_the_seen_views() {
    let mut exp = Experiment::default();
    exp.model.head = Head::BaselineNone;
    exp.loss.lambda1 = 0.0;
    exp.loss.lambda2 = 0.0;
    let mut losses = Vec::new();
    let ds = generate_dataset(&exp.synthdata).unwrap();
    let (_, m) = train_on(&exp, &ds, |_, e| losses.push(e.loss)).unwrap();
    assert!(m.accuracy.train_seen >= 0.95, "{:?}", m.accuracy);
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn diverging_run_aborts_with_context() {
    let mut exp = small(Head::BaselineNone);
    exp.train.lr = 1e200;
    exp.train.momentum = 0.0;
    match train(&exp) {
        Err(Error::NanLoss { epoch, batch }) => assert!(epoch < 2 && batch < 5),
        other => panic!("expected a NaN abort, got {other:?}"),
    }
}

#[test]
fn empty_split_is_an_error() {
    let mut exp = small(Head::BaselineNone);
    exp.synthdata.test_unseen_per_class = 0;
    let ds = generate_dataset(&exp.synthdata).unwrap();
    let net = Network::new(&exp.model, 0).unwrap();
    assert!(matches!(evaluate(&net, &ds, Split::TestUnseen), Err(Error::EmptySplit(_))));
}
