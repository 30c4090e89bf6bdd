use std::path::PathBuf;

use layerstack::cli::{load_scene, LoadedScene};
use layerstack::composite::{chain_decompose, component_membership, Ball};
use layerstack::layers::{coefficient_eval, sandwich_verify, stack_interior, LayerError, StackOptions};
use layerstack::verify::radius_ladder;

fn fixture(name: &str) -> LoadedScene {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", &format!("{name}.toml")].iter().collect();
    load_scene(&p).unwrap()
}

fn ball(l: &LoadedScene) -> Ball {
    Ball::new(l.file.query.center.as_ref().unwrap(), radius_ladder(&l.scene.budget).r0)
}

#[test]
fn nested_interface_matches_circle_in_anchor_frame() {
    let l = fixture("nested-2");
    let b = ball(&l);
    let st = stack_interior(&l.scene, &b, &StackOptions::default()).unwrap();
    assert!(st.sides_swapped);
    let g = st.graph(0).unwrap();
    // ∂B_500 seen from outside: the anchor axis points away from the core,
    // so the core lies below y¹ = −(d − 500) − … with d the center's radius.
    let c = &st.center;
    for idx in 0..st.grid.len() {
        let y = vec![g.graph.values()[idx], st.grid.coords(idx)[0]];
        let p = st.to_ambient(&y);
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        assert!((r - 500.0).abs() < 1e-10, "{r}");
    }
    let rho = (c[0] * c[0] + c[1] * c[1]).sqrt();
    assert!((g.graph.value_at_center() + (rho - 500.0)).abs() < 1e-12);
}

#[test]
fn chains_of_fixtures() {
    let cases = [
        ("nested-2", vec!["matrix", "core"], vec![]),
        ("nested-3", vec!["matrix", "shell", "core"], vec![]),
        ("twin-children", vec!["matrix", "left"], vec!["right"]),
        ("blob-in-ball", vec!["matrix", "blob"], vec![]),
        ("boundary-half-space", vec!["body", "inclusion"], vec![]),
    ];
    for (name, plus, minus) in cases {
        let l = fixture(name);
        let c = chain_decompose(&l.scene, &ball(&l)).unwrap();
        let ids = |v: &[usize]| v.iter().map(|&i| l.scene.id(i).to_string()).collect::<Vec<_>>();
        assert_eq!(ids(&c.plus), plus, "{name}");
        assert_eq!(ids(&c.minus), minus, "{name}");
    }
}

#[test]
fn coefficients_via_stack_match_membership() {
    for name in ["nested-3", "twin-children"] {
        let l = fixture(name);
        let b = ball(&l);
        let st = stack_interior(&l.scene, &b, &StackOptions::default()).unwrap();
        let mut off_band = 0;
        for p in b.samples(10_000, 77) {
            match coefficient_eval(&l.coefficients, &st, &l.scene, &p) {
                Ok(c) => {
                    let j = component_membership(&l.scene, &p).unwrap();
                    assert_eq!(c, &l.coefficients.tables[&j]);
                    off_band += 1;
                }
                Err(LayerError::OnInterface { .. }) => {}
                Err(e) => panic!("{name}: {e}"),
            }
        }
        assert!(off_band > 9_000);
    }
}

#[test]
fn coarser_grids_still_sandwich() {
    let l = fixture("blob-in-ball");
    let st = stack_interior(&l.scene, &ball(&l), &StackOptions { grid_res: 33, force: false }).unwrap();
    assert!(sandwich_verify(&st, &l.scene, 10_000, 5).pass);
}

#[test]
fn ball_leaving_container_is_refused() {
    let l = fixture("nested-2");
    let b = Ball::new(&[1000.0 - 5e-7, 0.0], radius_ladder(&l.scene.budget).r0);
    assert!(matches!(stack_interior(&l.scene, &b, &StackOptions::default()), Err(LayerError::BallLeavesContainer)));
}
