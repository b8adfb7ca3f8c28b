mod common;

use rgbd_sod::autograd::{ParamStore, Tape, Tensor, Var};
use rgbd_sod::backbone::*;
use rgbd_sod::dsam::DsamFusion;

fn config() -> BackboneConfig {
    let mut c = BackboneConfig::tiny((64, 64));
    c.rgb_channels = [4, 6, 8, 8, 8];
    c.depth_channels = [2, 3, 4, 4, 4];
    c
}

fn ones_masks<'t>(tape: &'t Tape, c: &BackboneConfig, regions: usize) -> Vec<Vec<Var<'t>>> {
    (0..STAGES)
        .map(|s| {
            let (h, w) = c.stage_size(s);
            (0..regions).map(|_| tape.constant(Tensor::full(&[1, h, w], 1.0))).collect()
        })
        .collect()
}

#[test]
fn pyramid_shapes() {
    let c = config();
    let mut store = ParamStore::new();
    let dsam = DsamSpec { regions: 2, fusion: DsamFusion::Mul };
    let (rgb, depth) = build_backbones(&c, Some(dsam), &mut store, &mut common::rng(0)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let mut r = common::rng(1);
    let image = tape.constant(common::random_tensor(&[3, 64, 64], &mut r));
    let d = tape.constant(common::random_tensor(&[1, 64, 64], &mut r));
    let rp = rgb.forward(image, &ones_masks(&tape, &c, 2), &bound).unwrap();
    let dp = depth.forward(d, &bound).unwrap();
    for s in 0..STAGES {
        let side = 64 >> s;
        assert_eq!(rp.levels[s].shape(), vec![c.rgb_channels[s], side, side]);
        assert_eq!(dp.levels[s].shape(), vec![c.depth_channels[s], side, side]);
    }
    assert_eq!(rp.levels[4].shape()[1], 4);
}

#[test]
fn zero_image_gives_zero_pyramid() {
    let c = config();
    let mut store = ParamStore::new();
    let dsam = DsamSpec { regions: 3, fusion: DsamFusion::Mul };
    let (rgb, _) = build_backbones(&c, Some(dsam), &mut store, &mut common::rng(2)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let p = rgb.forward(tape.constant(Tensor::zeros(&[3, 64, 64])), &ones_masks(&tape, &c, 3), &bound).unwrap();
    for level in &p.levels {
        assert!(level.value().data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn constant_depth_gives_constant_first_stage() {
    let c = config();
    let mut store = ParamStore::new();
    let (_, depth) = build_backbones(&c, None, &mut store, &mut common::rng(3)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let p = depth.forward(tape.constant(Tensor::full(&[1, 64, 64], 0.4)), &bound).unwrap();
    let v = p.levels[0].value();
    for plane in v.data().chunks(64 * 64) {
        assert!(plane.iter().all(|x| (x - plane[0]).abs() <= 1e-12));
    }
}

#[test]
fn zeroed_dsam_matches_plain_stream() {
    let c = config();
    let mut with = ParamStore::new();
    let dsam = DsamSpec { regions: 2, fusion: DsamFusion::Concat };
    let (rgb_d, _) = build_backbones(&c, Some(dsam), &mut with, &mut common::rng(4)).unwrap();
    for b in rgb_d.dsam.as_ref().unwrap() {
        b.zero(&mut with);
    }
    let mut plain = ParamStore::new();
    let (rgb_p, _) = build_backbones(&c, None, &mut plain, &mut common::rng(5)).unwrap();
    for id in plain.ids().collect::<Vec<_>>() {
        let src = with.find(plain.name(id)).unwrap();
        plain.set(id, with.get(src).clone());
    }
    let image = common::random_tensor(&[3, 64, 64], &mut common::rng(6)).map(f64::abs);
    let tape = Tape::new();
    let bw = with.bind(&tape, false);
    let bp = plain.bind(&tape, false);
    let a = rgb_d.forward(tape.constant(image.clone()), &ones_masks(&tape, &c, 2), &bw).unwrap();
    let b = rgb_p.forward(tape.constant(image), &[], &bp).unwrap();
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert!(x.value().bit_eq(&y.value()));
    }
}

#[test]
fn size_and_shape_errors() {
    let mut bad = config();
    bad.input_size = (60, 64);
    assert!(bad.validate().is_err());
    assert!(build_backbones(&bad, None, &mut ParamStore::new(), &mut common::rng(0)).is_err());
    let mut zero = config();
    zero.depth_channels[2] = 0;
    assert!(zero.validate().is_err());

    let c = config();
    let mut store = ParamStore::new();
    let dsam = DsamSpec { regions: 1, fusion: DsamFusion::Mul };
    let (rgb, depth) = build_backbones(&c, Some(dsam), &mut store, &mut common::rng(0)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let gray = tape.constant(Tensor::zeros(&[1, 64, 64]));
    assert!(rgb.forward(gray, &ones_masks(&tape, &c, 1), &bound).is_err());
    assert!(rgb.forward(tape.constant(Tensor::zeros(&[3, 64, 64])), &[], &bound).is_err());
    assert!(depth.forward(tape.constant(Tensor::zeros(&[3, 64, 64])), &bound).is_err());
}

#[test]
fn vgg_layout_parameter_count() {
    let mut store = ParamStore::new();
    let c = BackboneConfig::vgg19((32, 32));
    build_backbones(&c, None, &mut store, &mut common::rng(0)).unwrap();
    let convs = store.ids().filter(|&id| store.name(id).starts_with("rgb.") && store.name(id).ends_with(".w")).count();
    assert_eq!(convs, 16);
}
