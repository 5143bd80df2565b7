use serde_json::Value;
use sharpmin_web::{double_well_json, moons_json, perturbation_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn sam_leaves_the_sharp_well_and_sgd_stays() {
    let v = parse(double_well_json(0.5, 0.02, 0.9, 400, 0.1).unwrap());
    let last = |k: &str| v[k].as_array().unwrap().last().unwrap().as_f64().unwrap();
    assert_eq!(v["sgd"].as_array().unwrap().len(), 401);
    assert!(last("sgd").abs() < 0.1, "{}", last("sgd"));
    assert!(
        (last("sam") - v["flat_min"].as_f64().unwrap()).abs() < 0.5,
        "{}",
        last("sam")
    );
    assert!(double_well_json(0.5, -1.0, 0.0, 10, 0.0).is_err());
}

#[test]
fn perturbation_sits_on_the_ball_and_attains_the_dual_norm() {
    let (gx, gy, rho) = (3.0_f64, -4.0_f64, 0.5);
    for (p, dual) in [
        ("2", 5.0),
        ("inf", 7.0),
        (
            "4",
            (3f64.powf(4.0 / 3.0) + 4f64.powf(4.0 / 3.0)).powf(0.75),
        ),
    ] {
        let v = parse(perturbation_json(gx, gy, rho, p).unwrap());
        assert!(
            (v["gain"].as_f64().unwrap() - rho * dual).abs() < 1e-9,
            "p={p}"
        );
        assert_eq!(v["ball"].as_array().unwrap().len(), 257);
    }
    assert!(perturbation_json(1.0, 1.0, 0.1, "0.5").is_err());
}

#[test]
fn moons_boundary_has_the_requested_grid() {
    let v = parse(moons_json(0.05, 3, 1, 12).unwrap());
    let grid = v["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 144);
    assert!(grid.iter().all(|c| c.as_u64().unwrap() < 2));
    assert!(v["test_err"].as_f64().unwrap() < 0.5);
    assert!(v["lambda_max"].as_f64().unwrap().is_finite());
    assert!(moons_json(0.05, 3, 1, 1).is_err());
}
