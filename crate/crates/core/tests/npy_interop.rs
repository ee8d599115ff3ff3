use deepif::tensor_io::{load_matrix_auto, save_matrix_npy};
use deepif::FeatureMatrix;

/// Writes an NPY v1.0 file byte by byte, the way numpy lays it out.
fn handwritten_npy(descr: &str, shape: (usize, usize), payload: &[u8]) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': ({}, {}), }}",
        shape.0, shape.1
    );
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

#[test]
fn float32_file_is_read_bit_exact() {
    let values: Vec<f32> = (0..15)
        .map(|i| (i as f32 - 7.0) * 0.1 + f32::EPSILON * i as f32)
        .collect();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.npy");
    std::fs::write(&path, handwritten_npy("<f4", (3, 5), &payload)).unwrap();

    let m = load_matrix_auto(&path).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (3, 5));
    for (i, v) in values.iter().enumerate() {
        assert_eq!((m.get(i / 5, i % 5) as f32).to_bits(), v.to_bits());
    }
}

#[test]
fn float64_file_is_read_bit_exact() {
    let values: Vec<f64> = (0..6).map(|i| 1.0 / (i as f64 + 3.0)).collect();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.npy");
    std::fs::write(&path, handwritten_npy("<f8", (2, 3), &payload)).unwrap();
    let m = load_matrix_auto(&path).unwrap();
    assert_eq!(m.as_slice(), values.as_slice());
}

#[test]
fn written_files_match_the_handwritten_layout() {
    let values = vec![0.5f32, -1.25, 3.0, 1e-3];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("y.npy");
    save_matrix_npy(&path, &FeatureMatrix::new(values.clone(), 2, 2).unwrap()).unwrap();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        handwritten_npy("<f4", (2, 2), &payload)
    );
}
