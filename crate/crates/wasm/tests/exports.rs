use serde_json::Value;
use slowfast_wasm::{measure_histogram_json, paths_json, rate_table_json};

#[test]
fn rate_table_fits_the_declared_exponent() {
    let v: Value = serde_json::from_str(&rate_table_json(1.0, 0.0, 4, 10, 1.0).unwrap()).unwrap();
    assert_eq!(v["epsilons"].as_array().unwrap().len(), 7);
    assert!((v["fitted_exponent"].as_f64().unwrap() - 1.0).abs() < 0.1);
    assert!(rate_table_json(1.0, 0.0, 4, 5, 1.0).is_err());
    assert!(rate_table_json(1.0, -2.0, 4, 8, 1.0).is_err());
}

#[test]
fn paths_share_the_slow_noise() {
    let model = r#"{"id":"example1","c0":1.0,"beta":0.0}"#;
    let v: Value = serde_json::from_str(&paths_json(model, 0.01, 1.0, 20, 3, 5).unwrap()).unwrap();
    let (x, bar) = (v["coupled"].as_array().unwrap(), v["averaged"].as_array().unwrap());
    assert_eq!(x.len(), 3);
    assert_eq!(x[0].as_array().unwrap().len(), 21);
    // the gap is O(√ε) while the paths themselves are O(1)
    let gap =
        x[0].as_array().unwrap().iter().zip(bar[0].as_array().unwrap()).map(|(a, b)| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs()).fold(0.0, f64::max);
    assert!(gap < 0.5, "{gap}");
    assert!(paths_json(r#"{"id":"nonlinear-1d"}"#, 0.01, 1.0, 4, 1, 1).is_err());
    assert!(paths_json("not json", 0.01, 1.0, 4, 1, 1).is_err());
}

#[test]
fn histogram_is_a_density() {
    let model = r#"{"id":"example1","c0":1.0,"beta":0.5}"#;
    let v: Value = serde_json::from_str(&measure_histogram_json(model, 0.0, 2.0, 4000, 30, 9).unwrap()).unwrap();
    let edges: Vec<f64> = v["edges"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    let density: Vec<f64> = v["density"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    assert_eq!(edges.len(), density.len() + 1);
    let mass: f64 = density.iter().zip(edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    assert!((v["variance"].as_f64().unwrap() - 0.5).abs() < 0.05);
}
