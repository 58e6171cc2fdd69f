use std::fs;
use std::io::Read;
use std::net::TcpListener;
use std::thread;

use roadinspect::data::{generate_scene, load_dataset, write_sample, CameraModel, Pose, SceneSpec};
use roadinspect::model::{load_weights, save_weights, Network, NetworkConfig, Variant};
use roadinspect::sim::{
    canonical_scene, canonical_start, BufferedSink, MemorySink, NodeId, OracleDetector, ReportSink, SimConfig, Simulation,
    SocketSink, TopicName,
};
use roadinspect::Tensor;

fn small_sample(id: &str) -> roadinspect::data::Sample {
    let cam = CameraModel { size: 32, ..CameraModel::default() };
    let mut s = generate_scene(&SceneSpec::straight(20.0, 1), &cam, &Pose::new(0.0, 0.0, 3.0, 0.0)).unwrap();
    s.id = id.into();
    s
}

#[test]
fn dataset_loading_skips_and_names_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_sample(&small_sample("good"), d).unwrap();
    write_sample(&small_sample("badlabel"), d).unwrap();
    fs::write(d.join("badlabel.txt"), "2 0.5 0.5 1.5 0.2\n").unwrap();
    write_sample(&small_sample("nolabel"), d).unwrap();
    fs::remove_file(d.join("nolabel.txt")).unwrap();
    fs::write(d.join("broken.ppm"), b"P6\n4 4\n255\nshort").unwrap();
    fs::write(d.join("broken.txt"), "").unwrap();

    let (samples, skipped) = load_dataset(d).unwrap();
    assert_eq!(samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["good"]);
    assert_eq!(skipped.len(), 3);
    let text = skipped.to_string();
    for name in ["badlabel.txt", "nolabel.ppm", "broken.ppm"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn socket_sink_frames_records_with_length_prefix() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut conn, _) = listener.accept().unwrap();
        let mut records = Vec::new();
        for _ in 0..2 {
            let mut len = [0u8; 4];
            conn.read_exact(&mut len).unwrap();
            let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
            conn.read_exact(&mut body).unwrap();
            records.push(String::from_utf8(body).unwrap());
        }
        records
    });
    let mut sink = SocketSink::new(addr);
    sink.send("1.000 0 pothole 0.5 0.5 0.1 0.1 1 frame_000000.ppm").unwrap();
    sink.send("2.000 1 cracks 0.4 0.5 0.2 0.1 1 frame_000001.ppm").unwrap();
    sink.flush().unwrap();
    let got = server.join().unwrap();
    assert_eq!(got[0], "1.000 0 pothole 0.5 0.5 0.1 0.1 1 frame_000000.ppm");
    assert!(got[1].starts_with("2.000 1 cracks"));
}

#[test]
fn unreachable_server_buffers_reports_instead_of_failing() {
    // Bind then drop to get a port with nothing listening.
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let cfg = SimConfig { start: canonical_start(), ..Default::default() };
    let sink = BufferedSink::new(Box::new(SocketSink::new(addr)), 3);
    let mut sim = Simulation::new(canonical_scene(1), cfg, Box::new(OracleDetector), sink).unwrap();
    let summary = sim.run().unwrap();
    assert_eq!(summary.reports.len(), 5);
    assert_eq!(summary.sink_dropped, 2);
    assert!(summary.landed);
}

#[test]
fn reset_restores_the_initial_state() {
    let start = canonical_start();
    let cfg = SimConfig { start, ..Default::default() };
    let mut sim =
        Simulation::new(canonical_scene(1), cfg, Box::new(OracleDetector), BufferedSink::new(Box::new(MemorySink::default()), 8))
            .unwrap();
    sim.node01.start(0.0).unwrap();
    for _ in 0..100 {
        sim.step().unwrap();
    }
    assert!(sim.node02.state().flying);
    assert!(sim.node02.state().x > 1.0);
    sim.node01.reset(sim.sim_time()).unwrap();
    sim.step().unwrap();
    assert_eq!(sim.node02.state(), start);
}

#[test]
fn corrupt_payloads_are_counted_and_skipped() {
    let cfg = SimConfig { start: canonical_start(), ..Default::default() };
    let mut sim =
        Simulation::new(canonical_scene(1), cfg, Box::new(OracleDetector), BufferedSink::new(Box::new(MemorySink::default()), 8))
            .unwrap();
    sim.bus.publish(NodeId::Node02, TopicName::ImageRaw, 0.0, vec![1, 2, 3]).unwrap();
    sim.bus.publish(NodeId::Node01, TopicName::CmdVel, 0.0, vec![0; 5]).unwrap();
    sim.step().unwrap();
    assert_eq!(sim.node01.decode_failures, 1);
    assert_eq!(sim.node02.decode_failures, 1);
    assert!(sim.node01.track.is_empty());
}

#[test]
fn weights_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig::preset_scaled(Variant::Improved, 3, 2, 32, 2).unwrap();
    let a = Network::new(cfg.clone(), 1).unwrap();
    let mut b = Network::new(cfg, 2).unwrap();
    let img = Tensor::filled(&[3, 32, 32], 0.3);
    assert_ne!(a.forward(&img).unwrap(), b.forward(&img).unwrap());
    let path = dir.path().join("w.rhwt");
    save_weights(&a, &path).unwrap();
    load_weights(&mut b, &path).unwrap();
    assert_eq!(a.forward(&img).unwrap(), b.forward(&img).unwrap());

    let other = NetworkConfig::preset_scaled(Variant::Default, 3, 2, 32, 2).unwrap();
    let mut c = Network::new(other, 1).unwrap();
    assert!(load_weights(&mut c, &path).is_err());
}
