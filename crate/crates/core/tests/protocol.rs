use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::os::unix::net::UnixStream;
use std::sync::Arc;
use std::thread;

use finercam_core::backend::protocol::{read_frame, serve_connection, write_frame, Frame, Message, ReadOutcome};
use finercam_core::backend::{BackendError, BackendKind, ExternalBackend, ModelBackend, ToyCnn};
use finercam_core::fixtures::{random_image, toy_cnn, TOY_INPUT};
use finercam_core::grid::Grid;
use finercam_core::tensor_store::TensorFile;

fn unix_backend(net: ToyCnn) -> (ExternalBackend, thread::JoinHandle<()>) {
    let (client, server) = UnixStream::pair().unwrap();
    let handle = thread::spawn(move || {
        let mut reader = BufReader::new(server.try_clone().unwrap());
        let mut writer = server;
        serve_connection(&net, &mut reader, &mut writer).unwrap();
    });
    let reader = client.try_clone().unwrap();
    (ExternalBackend::connect(Box::new(reader), Box::new(client)).unwrap(), handle)
}

#[test]
fn external_backend_matches_local_bitwise() {
    let net = toy_cnn(21);
    let (remote, handle) = unix_backend(net.clone());
    assert_eq!(remote.descriptor().kind, BackendKind::External);
    assert_eq!(remote.descriptor().layer_names, net.descriptor().layer_names);
    assert!(!remote.supports_gradients());
    for seed in 0..5 {
        let image = random_image(seed, TOY_INPUT);
        for layer in ["block1", "block3"] {
            let a = remote.forward(&image, layer).unwrap();
            let b = net.forward(&image, layer).unwrap();
            assert_eq!(a.features.to_tensor().encode(), b.features.to_tensor().encode());
            assert_eq!(a.logits, b.logits);
        }
        let mask = Grid::new(12, 12, (0..144).map(|i| (i % 7) as f32 / 6.0).collect()).unwrap();
        assert_eq!(remote.masked_forward(&image, &mask).unwrap(), net.masked_forward(&image, &mask).unwrap());
        let ones = Grid::filled(12, 12, 1.0);
        assert_eq!(remote.masked_forward(&image, &ones).unwrap(), net.logits(&image).unwrap());
    }
    drop(remote);
    handle.join().unwrap();
}

#[test]
fn remote_errors_are_reported() {
    let (remote, _handle) = unix_backend(toy_cnn(2));
    let image = random_image(1, TOY_INPUT);
    assert!(matches!(remote.forward(&image, "block9"), Err(BackendError::UnknownLayer(_))));
    let small = random_image(1, [4, 4, 3]);
    assert!(matches!(remote.forward(&small, "block1"), Err(BackendError::Shape(_))));
    assert!(matches!(remote.masked_forward(&image, &Grid::zeros(3, 3)), Err(BackendError::Shape(_))));
    // The connection survives client-side rejections.
    assert!(remote.logits(&image).is_ok());
}

#[test]
fn server_answers_bad_requests_with_error_frames() {
    let net = toy_cnn(3);
    let (client, server) = UnixStream::pair().unwrap();
    let handle = thread::spawn(move || {
        let mut reader = BufReader::new(server.try_clone().unwrap());
        let mut writer = server;
        serve_connection(&net, &mut reader, &mut writer).unwrap();
    });
    let mut writer = client.try_clone().unwrap();
    let mut reader = BufReader::new(client);
    let expect_error = |code: &str, reader: &mut BufReader<UnixStream>| match read_frame(reader).unwrap() {
        ReadOutcome::Frame(Frame {
            message: Message::Error { code: got, .. },
            ..
        }) => assert_eq!(got, code),
        other => panic!("expected {code}, got {other:?}"),
    };

    writer.write_all(b"this is not json\n").unwrap();
    expect_error("malformed_message", &mut reader);

    writer.write_all(b"{\"type\":\"teleport\"}\n").unwrap();
    expect_error("malformed_message", &mut reader);

    write_frame(&mut writer, &Frame::new(Message::Forward { layer: None })).unwrap();
    expect_error("bad_request", &mut reader);

    let wrong = random_image(0, [5, 5, 3]).to_f32_tensor();
    write_frame(&mut writer, &Frame::new(Message::Forward { layer: None }).with_tensor("image", wrong)).unwrap();
    expect_error("shape_mismatch", &mut reader);

    let img = random_image(0, TOY_INPUT).to_f32_tensor();
    let frame = Frame::new(Message::Forward { layer: Some("nope".into()) }).with_tensor("image", img);
    write_frame(&mut writer, &frame).unwrap();
    expect_error("unknown_layer", &mut reader);

    // A payload that is not FCT is consumed by its declared length.
    writer.write_all(b"{\"type\":\"masked_forward\",\"tensors\":[{\"name\":\"image\",\"bytes\":4}]}\nXXXX").unwrap();
    expect_error("bad_tensor", &mut reader);

    // u8 images are accepted and scaled by 1/255.
    let u8_img = random_image(4, TOY_INPUT).to_u8_tensor();
    write_frame(&mut writer, &Frame::new(Message::Forward { layer: None }).with_tensor("image", u8_img)).unwrap();
    match read_frame(&mut reader).unwrap() {
        ReadOutcome::Frame(f) => {
            assert_eq!(f.tensor("features").unwrap().shape(), &[8, 3, 3]);
            assert_eq!(f.tensor("logits").unwrap().shape(), &[6]);
        }
        other => panic!("{other:?}"),
    }
    drop(writer);
    drop(reader);
    handle.join().unwrap();
}

#[test]
fn tcp_transport_round_trips_tensors() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let net = Arc::new(toy_cnn(8));
    let served = Arc::clone(&net);
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        serve_connection(&*served, &mut reader, &mut writer).unwrap();
    });
    let remote = ExternalBackend::connect_tcp(&addr).unwrap();
    let image = random_image(9, TOY_INPUT);
    assert_eq!(remote.logits(&image).unwrap(), net.logits(&image).unwrap());
    drop(remote);
    handle.join().unwrap();
}

#[test]
fn frames_preserve_tensor_bytes() {
    let tensors = [
        TensorFile::from_f32(vec![2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e30, -7.25]).unwrap(),
        TensorFile::from_f64(vec![1], vec![std::f64::consts::PI]).unwrap(),
        TensorFile::from_u8(vec![2, 2, 1], vec![0, 255, 7, 128]).unwrap(),
    ];
    let mut frame = Frame::new(Message::MaskedForward);
    for (i, t) in tensors.iter().enumerate() {
        frame = frame.with_tensor(&format!("t{i}"), t.clone());
    }
    let mut buf = Vec::new();
    write_frame(&mut buf, &frame).unwrap();
    let mut cursor = std::io::Cursor::new(buf);
    match read_frame(&mut cursor).unwrap() {
        ReadOutcome::Frame(back) => {
            for (i, t) in tensors.iter().enumerate() {
                assert_eq!(back.tensor(&format!("t{i}")).unwrap().encode(), t.encode());
            }
        }
        other => panic!("{other:?}"),
    }
    let mut rest = String::new();
    assert_eq!(cursor.read_line(&mut rest).unwrap(), 0);
}
