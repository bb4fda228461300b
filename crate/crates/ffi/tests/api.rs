use std::ffi::{CStr, CString};
use std::ptr;

use stma_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(stma_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn tensor_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.stma").to_str().unwrap()).unwrap();
    let shape = [2usize, 3];
    let data = [1.0, -2.0, 3.5, 0.0, 1e-300, 7.0];
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(stma_tensor_new(shape.as_ptr(), 2, data.as_ptr(), &mut t), StmaStatus::Ok);
        assert_eq!(stma_tensor_write(t, path.as_ptr()), StmaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(stma_tensor_read(path.as_ptr(), &mut back), StmaStatus::Ok);
        let (mut rank, mut numel) = (0, 0);
        stma_tensor_rank(back, &mut rank);
        stma_tensor_numel(back, &mut numel);
        assert_eq!((rank, numel), (2, 6));
        let mut dims = [0usize; 2];
        assert_eq!(stma_tensor_shape(back, dims.as_mut_ptr(), 2), StmaStatus::Ok);
        assert_eq!(dims, shape);
        let mut out = [0.0; 6];
        assert_eq!(stma_tensor_copy_data(back, out.as_mut_ptr(), 6), StmaStatus::Ok);
        assert_eq!(out, data);
        assert_eq!(stma_tensor_copy_data(back, out.as_mut_ptr(), 5), StmaStatus::InvalidArgument);
        stma_tensor_free(t);
        stma_tensor_free(back);
        stma_tensor_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(stma_tensor_new(ptr::null(), 2, ptr::null(), &mut t), StmaStatus::NullPointer);
        assert!(last_error().contains("shape"));
        let mut rank = 0;
        assert_eq!(stma_tensor_rank(ptr::null(), &mut rank), StmaStatus::NullPointer);
        let missing = CString::new("/nonexistent/x.stma").unwrap();
        assert_eq!(stma_tensor_read(missing.as_ptr(), &mut t), StmaStatus::Io);
        let bad = CString::new("mode=sideways").unwrap();
        let mut seg = ptr::null_mut();
        assert_eq!(stma_segmenter_new(bad.as_ptr(), &mut seg), StmaStatus::Parse);
        assert!(last_error().contains("sideways"));
        let ok = CString::new("seed=1").unwrap();
        assert_eq!(stma_segmenter_new(ok.as_ptr(), &mut seg), StmaStatus::Ok);
        assert_eq!(last_error(), "");
        stma_segmenter_free(seg);
    }
}

fn tiny_config() -> CString {
    CString::new("height=32\nwidth=32\nchannels=16\nheads=2\nblocks=1\nvalue_channels=8\nseed=4\n").unwrap()
}

#[test]
fn segmenter_tracks_a_video() {
    let (h, w) = (32usize, 32usize);
    let rgb: Vec<u8> = (0..h * w * 3).map(|i| (i * 37 % 251) as u8).collect();
    let ids: Vec<u8> = (0..h * w).map(|i| u8::from((8..20).contains(&(i / w)) && (4..16).contains(&(i % w)))).collect();
    unsafe {
        let mut seg = ptr::null_mut();
        assert_eq!(stma_segmenter_new(tiny_config().as_ptr(), &mut seg), StmaStatus::Ok);
        let (mut gh, mut gw) = (0, 0);
        stma_segmenter_geometry(seg, &mut gh, &mut gw);
        assert_eq!((gh, gw), (h, w));
        let mut out = vec![9u8; h * w];
        assert_eq!(stma_segmenter_step(seg, rgb.as_ptr(), h, w, out.as_mut_ptr()), StmaStatus::InvalidArgument);
        assert_eq!(stma_segmenter_init(seg, rgb.as_ptr(), ids.as_ptr(), h, w, 1), StmaStatus::Ok);
        for _ in 0..4 {
            assert_eq!(stma_segmenter_step(seg, rgb.as_ptr(), h, w, out.as_mut_ptr()), StmaStatus::Ok);
            assert!(out.iter().all(|&v| v <= 1));
        }
        let (mut s, mut t) = (0, 0);
        stma_segmenter_memory_sizes(seg, &mut s, &mut t);
        assert!(s >= 1 && t == 5);
        assert_eq!(stma_segmenter_step(seg, rgb.as_ptr(), 16, 16, out.as_mut_ptr()), StmaStatus::InvalidArgument);
        assert_eq!(stma_segmenter_init(seg, rgb.as_ptr(), ids.as_ptr(), h, w, 0), StmaStatus::Contract);
        stma_segmenter_free(seg);
    }
}

#[test]
fn metrics_over_raw_masks() {
    let (h, w) = (20usize, 20usize);
    let square = |x0: usize| -> Vec<u8> {
        (0..h * w).map(|i| u8::from((5..15).contains(&(i / w)) && (x0..x0 + 10).contains(&(i % w)))).collect()
    };
    let (a, b) = (square(0), square(5));
    let (mut j, mut f) = (0.0, 0.0);
    unsafe {
        assert_eq!(stma_region_similarity(a.as_ptr(), b.as_ptr(), h, w, 1, &mut j), StmaStatus::Ok);
        assert_eq!(stma_contour_accuracy(a.as_ptr(), a.as_ptr(), h, w, 1, 0, &mut f), StmaStatus::Ok);
        assert_eq!(stma_region_similarity(a.as_ptr(), b.as_ptr(), h, w, 0, &mut j), StmaStatus::Contract);
    }
    assert_eq!(j, 1.0 / 3.0);
    assert_eq!(f, 1.0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(stma_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
