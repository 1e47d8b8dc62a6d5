use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use cloudedge_transport::*;

const T: Duration = Duration::from_secs(5);

fn serve_once(expected: u64) -> (std::net::SocketAddr, thread::JoinHandle<Result<Session, SessionError>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        Session::accept(stream, Hello::new(Role::Cloud, expected), expected, T)
    });
    (addr, h)
}

#[test]
fn matched_handshake_then_messages_both_ways() {
    let (addr, server) = serve_once(77);
    let mut client = Session::connect(addr, Hello::new(Role::Edge, 77), T).unwrap();
    assert_eq!(client.peer.role, Role::Cloud);
    let mut server = server.join().unwrap().unwrap();
    assert_eq!(server.peer.role, Role::Edge);

    client.send(&Message::WeightsRequest { have_version: NO_VERSION }).unwrap();
    client.send(&Message::Heartbeat).unwrap();
    assert_eq!(
        server.recv(Some(T)).unwrap(),
        Some(Message::WeightsRequest { have_version: NO_VERSION })
    );
    assert_eq!(server.recv(Some(T)).unwrap(), Some(Message::Heartbeat));

    let blob = vec![0xAB; 200_000];
    server.send(&Message::Weights(blob.clone())).unwrap();
    assert_eq!(client.recv(Some(T)).unwrap(), Some(Message::Weights(blob)));
    assert_eq!(client.recv(Some(Duration::from_millis(20))).unwrap(), None);
}

#[test]
fn mismatched_spec_is_refused() {
    let (addr, server) = serve_once(1);
    let err = Session::connect(addr, Hello::new(Role::Edge, 2), T).unwrap_err();
    assert!(matches!(err, SessionError::Refused(HelloStatus::SpecMismatch)));
    assert!(matches!(
        server.join().unwrap(),
        Err(SessionError::Refused(HelloStatus::SpecMismatch))
    ));
}

#[test]
fn closed_peer_is_reported() {
    let (addr, server) = serve_once(3);
    let client = Session::connect(addr, Hello::new(Role::Edge, 3), T).unwrap();
    let mut server = server.join().unwrap().unwrap();
    drop(client);
    assert!(matches!(server.recv(Some(T)), Err(SessionError::Closed)));
}

#[test]
fn retry_waits_for_late_server() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let server = thread::spawn(move || {
        thread::sleep(Duration::from_millis(150));
        let listener = TcpListener::bind(addr).unwrap();
        let (stream, _) = listener.accept().unwrap();
        Session::accept(stream, Hello::new(Role::Cloud, 9), 9, T).map(|_| ())
    });
    let s = Session::connect_with_retry(addr, Hello::new(Role::Edge, 9), T, 20, Duration::from_millis(20));
    assert!(s.is_ok());
    server.join().unwrap().unwrap();
}
