use deluge::analysis::{cldc_overhead, count_flops, count_params};
use deluge::model::{ModelSpec, ZOO_NAMES};
use deluge::{Model, Rng};

fn classes(name: &str) -> usize {
    if ["delugenet-92", "delugenet-104", "delugenet-122"].contains(&name) {
        1000
    } else {
        100
    }
}

#[test]
fn analytic_count_equals_registry_for_every_zoo_model() {
    for &name in ZOO_NAMES {
        let spec = ModelSpec::zoo(name, classes(name)).unwrap();
        let analytic = count_params(&spec).unwrap().total_params as usize;
        let model = Model::build(&spec, &mut Rng::new(0)).unwrap();
        assert_eq!(analytic, model.param_count(), "{name}");
    }
}

#[test]
fn imagenet_overheads_are_small() {
    for name in ["delugenet-92", "delugenet-104", "delugenet-122"] {
        let (p, f) = cldc_overhead(&ModelSpec::zoo(name, 1000).unwrap()).unwrap();
        assert!((0.001..=0.05).contains(&p), "{name} params {p}");
        assert!((0.001..=0.05).contains(&f), "{name} flops {f}");
    }
}

#[test]
fn flops_scale_with_resolution() {
    let spec = ModelSpec::zoo("delugenet-146", 100).unwrap();
    let at = |s| count_flops(&spec, deluge::Shape4::new(1, 3, s, s)).unwrap();
    let (small, native) = (at(16), at(32));
    assert_eq!(small.total_params, native.total_params);
    // everything but the classifier scales with the pixel count
    let ratio = native.total_flops as f64 / small.total_flops as f64;
    assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
}

#[test]
fn records_have_one_row_per_layer() {
    let spec = ModelSpec::zoo("tiny", 10).unwrap();
    let report = count_params(&spec).unwrap();
    let mut buf = Vec::new();
    report.write_records(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("name,params,macs,flops\nstem.conv,"));
    assert_eq!(text.lines().count(), report.rows.len() + 1);
    let table = report.to_string();
    assert!(table.lines().last().unwrap().starts_with("params "));
}
