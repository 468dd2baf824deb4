use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qburst::protocol::Records;
use qburst::tracefile::{read_header, read_trace_file, write_trace_file, Encoding, TraceFile, HEADER_LEN};
use qburst::Error;

#[test]
fn million_iq_records_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let iq: Vec<[f32; 2]> = (0..1_000_000).map(|_| [rng.random(), rng.random::<f32>() - 0.5]).collect();
    let f = TraceFile::new(73.6, Records::Iq(iq)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.qrtrc");
    write_trace_file(&path, &f).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), (HEADER_LEN + 8_000_000) as u64);
    let h = read_header(&path).unwrap();
    assert_eq!((h.sampling_period_ns, h.count, h.encoding), (73_600, 1_000_000, Encoding::Iq));
    assert_eq!(read_trace_file(&path).unwrap(), f);
}

#[test]
fn bit_packing_is_lsb_first() {
    let f = TraceFile::new(40.0, Records::Binary(vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 1])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.qrtrc");
    write_trace_file(&path, &f).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..6], b"QRTRC1");
    assert_eq!(&bytes[HEADER_LEN..], &[0b0000_0001, 0b0000_0010]);
}

#[test]
fn trailing_garbage_is_reported_at_payload_end() {
    let f = TraceFile::new(40.0, Records::Binary(vec![0; 16])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.qrtrc");
    write_trace_file(&path, &f).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes.push(0xff);
    fs::write(&path, &bytes).unwrap();
    match read_trace_file(&path) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, (HEADER_LEN + 2) as u64),
        other => panic!("{other:?}"),
    }
}
