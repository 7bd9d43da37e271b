//! Loading, saving and round-tripping the fixture network and spec files.

use std::path::PathBuf;

use preimage::model::{load_network, save_network, NetworkFormat};
use preimage::{fixtures, Error, Network, OutputSpec};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

const NETS: [(&str, fn() -> Network); 3] = [
    ("f1", fixtures::f1),
    ("f2", fixtures::f2),
    ("f3", fixtures::f3),
];

#[test]
fn f1_json_has_expected_shape() {
    let net = load_network(fixture("f1.json"), NetworkFormat::Json).unwrap();
    assert_eq!(net.layers().len(), 2);
    assert_eq!(
        (net.input_dim(), net.layers()[0].rows(), net.output_dim()),
        (2, 2, 1)
    );
}

#[test]
fn f1_forward_matches_hand_evaluation() {
    let net = load_network(fixture("f1.json"), NetworkFormat::Json).unwrap();
    // h = (0.25 - 0.5, 0.25 + 0.5 - 1) = (-0.25, -0.25): both inactive
    assert_eq!(net.forward(&[0.25, 0.5]).unwrap(), vec![0.25]);
    // h = (0.3, 0.5): y = 0.3 - 0.5 + 0.25
    let y = net.forward(&[0.9, 0.6]).unwrap()[0];
    assert!((y - 0.05).abs() < 1e-15);
}

#[test]
fn fixture_files_match_generators() {
    for (name, make) in NETS {
        let want = make();
        for (ext, fmt) in [("json", NetworkFormat::Json), ("nnet", NetworkFormat::Nnet)] {
            let got = load_network(fixture(&format!("{name}.{ext}")), fmt).unwrap();
            assert_eq!(got.layers(), want.layers(), "{name}.{ext}");
        }
    }
}

#[test]
fn serialize_of_load_reproduces_file() {
    for (name, _) in NETS {
        let json = std::fs::read_to_string(fixture(&format!("{name}.json"))).unwrap();
        assert_eq!(Network::from_json(&json).unwrap().to_json().unwrap(), json);
        let nnet = std::fs::read_to_string(fixture(&format!("{name}.nnet"))).unwrap();
        assert_eq!(Network::from_nnet(&nnet).unwrap().to_nnet(), nnet);
    }
}

#[test]
fn save_then_load_is_bit_faithful() {
    let dir = tempfile::tempdir().unwrap();
    for (name, make) in NETS {
        let net = make();
        for (ext, fmt) in [("json", NetworkFormat::Json), ("nnet", NetworkFormat::Nnet)] {
            let path = dir.path().join(format!("{name}.{ext}"));
            save_network(&net, &path, fmt).unwrap();
            assert_eq!(NetworkFormat::from_path(&path), fmt);
            let back = load_network(&path, fmt).unwrap();
            for (a, b) in back.layers().iter().zip(net.layers()) {
                assert!(a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                assert!(a.bias.iter().zip(b.bias.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}

#[test]
fn spec_files_load() {
    let s: OutputSpec =
        serde_json::from_str(&std::fs::read_to_string(fixture("f1_spec.json")).unwrap()).unwrap();
    assert_eq!(s, fixtures::f1_spec());
    for (k, want) in fixtures::f2_specs().iter().enumerate() {
        let text = std::fs::read_to_string(fixture(&format!("f2_spec{k}.json"))).unwrap();
        let s: OutputSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(&s, want);
        assert_eq!(s.len(), 3);
    }
}

#[test]
fn missing_file_is_io_error() {
    let r = load_network(fixture("does_not_exist.json"), NetworkFormat::Json);
    assert!(matches!(r, Err(Error::Io(_))));
}

#[test]
fn nnet_declared_sizes_must_match_weights() {
    let mut lines: Vec<String> = std::fs::read_to_string(fixture("f1.nnet"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    // claim a hidden layer of width 3 while only two rows follow
    lines[2] = "2,3,1,".into();
    lines[1] = "2,2,1,3,".into();
    let r = Network::from_nnet(&lines.join("\n"));
    assert!(matches!(r, Err(Error::Validation(_)) | Err(Error::Parse { .. })), "{r:?}");
}

#[test]
fn nnet_bad_number_names_line() {
    let text = std::fs::read_to_string(fixture("f1.nnet"))
        .unwrap()
        .replace("0.25,", "zero,");
    match Network::from_nnet(&text) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 14),
        other => panic!("expected parse error, got {other:?}"),
    }
}
