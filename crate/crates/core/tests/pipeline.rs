use filterprune::harness::{metrics_csv, train, TrainConfig, METRICS_HEADER};
use filterprune::prune::{num_to_prune, PruneSchedule};

fn config(prune: &str) -> TrainConfig {
    TrainConfig::from_json(&format!(
        r#"{{"arch":{{"arch":"resnet","n":1,"widths":[4,8,8],"classes":4,"input":[3,8,8]}},
            "dataset":{{"synthetic":{{"classes":4,"n":16,"dim":8,"seed":2}}}},
            "epochs":5,"batch_size":16,"seed":9,"record_wall_time":false{prune}}}"#
    ))
    .unwrap()
}

#[test]
fn unpruned_run_leaves_model_whole() {
    let out = train(&config("")).unwrap();
    assert!(out.mask.is_empty());
    assert_eq!(out.compact.model, out.model);
    assert_eq!(out.metrics.len(), 5);
    assert!(out.metrics.iter().all(|r| r.rate == 0.0 && r.gap == 0.0));
}

#[test]
fn asymptotic_log_follows_schedule() {
    let cfg = config(r#","prune":{"mode":"asymptotic-soft","P_goal":0.5,"D":0.4,"epoch_max":5}"#);
    let out = train(&cfg).unwrap();
    let s = PruneSchedule::for_config(cfg.prune.as_ref().unwrap()).unwrap();
    assert_eq!(out.metrics.len(), cfg.epochs);
    let layers = out.model.prunable_layers().len();
    for r in &out.metrics {
        assert_eq!(r.rate, s.rate_at(r.epoch).unwrap());
        if r.pruned_count == 0 {
            assert_eq!(r.gap, 0.0);
        }
        assert!((r.gap - (r.acc_after - r.acc_before)).abs() < 1e-12);
        // widths 4 and 8, one layer each of conv1/conv2 per block
        let expect: usize = out
            .model
            .prunable_layers()
            .iter()
            .map(|id| num_to_prune(out.model.conv(id).unwrap().out_channels(), r.rate, Default::default()))
            .sum();
        assert_eq!(r.pruned_count, expect, "epoch {}", r.epoch);
    }
    assert_eq!(layers, 6);
    assert!(out.equivalence_error <= 1e-5);
    assert!(out.compact.model.param_count() < out.model.param_count());
    let csv = metrics_csv(&out.metrics);
    assert!(csv.starts_with(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn interval_skips_epochs_but_prunes_at_the_end() {
    let cfg = config(r#","prune":{"mode":"soft","P_goal":0.5,"epoch_max":5,"interval":2}"#);
    let out = train(&cfg).unwrap();
    let pruned: Vec<usize> = out.metrics.iter().filter(|r| r.pruned_count > 0).map(|r| r.epoch).collect();
    assert_eq!(pruned, vec![2, 4, 5]);
    assert_eq!(out.mask_history.len(), 3);
    assert_eq!(out.mask.epoch, 5);
}

#[test]
fn hard_pruning_trains_the_small_model() {
    let cfg = config(r#","prune":{"mode":"hard","P_goal":0.5,"epoch_max":5}"#);
    let out = train(&cfg).unwrap();
    assert_eq!(out.mask.pruned_count(), 2 + 2 + 4 + 4 + 4 + 4);
    assert_eq!(out.model.conv("s1.b0.conv1").unwrap().out_channels(), 2);
    assert!(out.metrics.iter().all(|r| r.pruned_count == 0 && r.rate == 0.5));
    assert_eq!(out.compact.model, out.model);
}

#[test]
fn divergence_is_reported_with_epoch() {
    let mut cfg = config("");
    cfg.lr_schedule = Some(vec![(0, 1e30)]);
    match train(&cfg) {
        Err(filterprune::Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_accuracy)),
    }
}
