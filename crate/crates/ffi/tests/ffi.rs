use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tacforge_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tf_last_error_message()) }.to_string_lossy().into_owned()
}

const TYPICAL: [f64; 15] = [20.0, 1.2, 1.0, 4.5, 0.25, 0.01, 0.3, 0.7, 0.6, 0.15, 0.005, 0.8, 0.85, 0.15, 0.1];

#[test]
fn count_params() {
    assert_eq!(tf_count_params(2, 1000), 4_013_001);
}

#[test]
fn dtw_and_errors() {
    let a = [0.0, 1.0, 2.0];
    let b = [0.0, 2.0];
    let mut d = -1.0;
    assert_eq!(unsafe { tf_dtw(a.as_ptr(), 3, b.as_ptr(), 2, &mut d) }, TfStatus::TF_OK);
    assert_eq!(d, 1.0);
    assert_eq!(last_error(), "");
    assert_eq!(unsafe { tf_dtw(a.as_ptr(), 0, b.as_ptr(), 2, &mut d) }, TfStatus::TF_INVALID_ARGUMENT);
    assert!(last_error().contains("empty"));
    assert_eq!(unsafe { tf_dtw(ptr::null(), 3, b.as_ptr(), 2, &mut d) }, TfStatus::TF_NULL_POINTER);
}

#[test]
fn interpolation_with_buffer_negotiation() {
    let t = [16.0, 22.0, 28.0];
    let v = [5.0, 3.0, 1.0];
    let mut len = 0usize;
    let st = unsafe { tf_midpoint_interpolate(t.as_ptr(), v.as_ptr(), 3, 10.0, ptr::null_mut(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, TfStatus::TF_BUFFER_TOO_SMALL);
    assert_eq!(len, 5);
    let (mut ot, mut ov) = (vec![0.0; len], vec![0.0; len]);
    let st = unsafe { tf_midpoint_interpolate(t.as_ptr(), v.as_ptr(), 3, 10.0, ot.as_mut_ptr(), ov.as_mut_ptr(), len, &mut len) };
    assert_eq!(st, TfStatus::TF_OK);
    assert_eq!(ot, [16.0, 19.0, 22.0, 25.0, 28.0]);
    assert_eq!(ov, [5.0, 4.0, 3.0, 2.0, 1.0]);
}

#[test]
fn simulate_then_fit_pinned() {
    let (mut idif, mut myo, mut mcif) = ([0.0; 23], [0.0; 23], [0.0; 23]);
    let st = unsafe { tf_simulate_scan(TYPICAL.as_ptr(), 0.0, 1, idif.as_mut_ptr(), myo.as_mut_ptr(), mcif.as_mut_ptr()) };
    assert_eq!(st, TfStatus::TF_OK);
    assert!(mcif.iter().any(|&v| v > 0.0));
    // All parameters pinned: the fit must reproduce the simulation exactly.
    let (mut p, mut m, mut cost) = ([0.0; 15], [0.0; 23], -1.0);
    let st = unsafe {
        tf_fit_mcif(idif.as_ptr(), myo.as_ptr(), TYPICAL.as_ptr(), TYPICAL.as_ptr(), 1, 10, 0, p.as_mut_ptr(), m.as_mut_ptr(), &mut cost)
    };
    assert_eq!(st, TfStatus::TF_OK, "{}", last_error());
    assert_eq!(p, TYPICAL);
    assert_eq!(m, mcif);
    assert_eq!(cost, 0.0);

    let mut bad = TYPICAL;
    bad[7] = -1.0;
    let st = unsafe { tf_simulate_scan(bad.as_ptr(), 0.0, 1, idif.as_mut_ptr(), myo.as_mut_ptr(), mcif.as_mut_ptr()) };
    assert_eq!(st, TfStatus::TF_INVALID_ARGUMENT);
}

#[test]
fn model_handle_lifecycle() {
    use tacforge::seqnet::{save_checkpoint, LstmModel, LstmWeights, TrainConfig};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let weights = LstmWeights::init(2, 6, 3);
    let model = LstmModel::from_weights(weights.clone(), TrainConfig { hidden_units: 6, ..Default::default() });
    save_checkpoint(&model, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tf_model_load(c_path.as_ptr(), &mut handle) }, TfStatus::TF_OK);
    assert_eq!(unsafe { tf_model_hidden_units(handle) }, 6);
    let idif = [0.1, 0.5, 1.0, 0.6];
    let myo = [0.0, 0.1, 0.2, 0.3];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { tf_model_predict(handle, idif.as_ptr(), myo.as_ptr(), 4, out.as_mut_ptr()) }, TfStatus::TF_OK);
    let seq = ndarray::Array2::from_shape_fn((4, 2), |(k, c)| if c == 0 { idif[k] } else { myo[k] });
    let expect = tacforge::seqnet::predict_sequence(&weights, seq.view()).unwrap();
    assert_eq!(out.to_vec(), expect);
    unsafe { tf_model_free(handle) };
    unsafe { tf_model_free(ptr::null_mut()) };

    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tf_model_load(missing.as_ptr(), &mut handle) }, TfStatus::TF_IO_ERROR);
    assert_eq!(unsafe { tf_model_predict(ptr::null(), idif.as_ptr(), myo.as_ptr(), 4, out.as_mut_ptr()) }, TfStatus::TF_NULL_POINTER);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tacforge.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for name in ["tf_dtw", "tf_model_load", "tf_model_free", "tf_model_predict", "tf_fit_mcif", "TF_OK", "typedef struct TfModel TfModel"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, "#include \"tacforge.h\"\nint main(void) { return (int)tf_count_params(2, 8) == 0; }\n").unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found; syntax check skipped"),
    }
}
