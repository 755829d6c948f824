use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;

use keep_core::servingkit::{compose_serving_knowledge, KnowledgeSnapshot, FOUND_ITEM, FOUND_UC, FOUND_USER};
use keep_gkc::protocol::{decode_frame, encode_frame, read_frame, ERROR_PROTOCOL, HEADER_LEN, MAX_PAYLOAD};
use keep_gkc::{Client, EntryStatus, Frame, Quadruple, Server, VersionStore, VERSION_LATEST};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USERS: u64 = 40;
const ITEMS: u64 = 30;
const CATS: u32 = 4;

/// Every value of version `v` is tagged with `v` so a response can be traced
/// back to the snapshot it came from.
fn tagged_snapshot(v: u32) -> KnowledgeSnapshot {
    let mut s = KnowledgeSnapshot::new(v, 3, 2, v as u64);
    let t = v as f32;
    for u in 0..USERS {
        s.insert_user(u, vec![t, u as f32, t * 0.5 + u as f32]).unwrap();
    }
    for i in 0..ITEMS {
        s.insert_item(i, vec![t, -(i as f32), 1.0 / (1.0 + i as f32 + t)]).unwrap();
    }
    for u in (0..USERS).step_by(2) {
        for c in 0..CATS {
            s.insert_user_category(u, c, vec![t, (u * 10 + c as u64) as f32]).unwrap();
        }
    }
    s
}

fn offline(s: &KnowledgeSnapshot, q: &Quadruple) -> (u8, Vec<f32>) {
    let zero_d = vec![0.0; s.dim()];
    let zero_uc = vec![0.0; s.uc_dim()];
    let mut mask = 0;
    let ku = s.users().get(&q.user).inspect(|_| mask |= FOUND_USER).unwrap_or(&zero_d);
    let ki = s.items().get(&q.item).inspect(|_| mask |= FOUND_ITEM).unwrap_or(&zero_d);
    let kuc = s
        .user_categories()
        .get(&(q.user, q.category))
        .inspect(|_| mask |= FOUND_UC)
        .unwrap_or(&zero_uc);
    (mask, compose_serving_knowledge(ku, ki, kuc).unwrap())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn random_quad(rng: &mut impl Rng, version: u32) -> Quadruple {
    Quadruple {
        // a few ids beyond the tables exercise the missing-key path
        user: rng.gen_range(0..USERS + 5),
        item: rng.gen_range(0..ITEMS + 5),
        category: rng.gen_range(0..CATS + 1),
        version,
    }
}

fn start(store: Arc<VersionStore>) -> keep_gkc::ServerHandle {
    Server::bind("127.0.0.1:0", store, None).unwrap().spawn().unwrap()
}

#[test]
fn six_publishes_retain_versions_two_to_six() {
    let store = Arc::new(VersionStore::default());
    for v in 1..=6 {
        store.publish(tagged_snapshot(v)).unwrap();
    }
    assert_eq!(store.versions(), vec![2, 3, 4, 5, 6]);
    let h = start(store);
    let mut c = Client::connect(h.addr()).unwrap();
    let qs: Vec<Quadruple> = (1..=6).map(|v| Quadruple { user: 1, item: 1, category: 0, version: v }).collect();
    let r = c.lookup(&qs).unwrap();
    assert_eq!(r.entries[0].status, EntryStatus::VersionGone);
    for (k, e) in r.entries.iter().enumerate().skip(1) {
        assert_eq!(e.status, EntryStatus::Ok);
        assert_eq!(e.values[0], (k + 1) as f32);
    }
}

#[test]
fn served_vectors_match_offline_compose() {
    let store = Arc::new(VersionStore::default());
    let snaps: Vec<KnowledgeSnapshot> = (1..=3).map(tagged_snapshot).collect();
    for s in &snaps {
        store.publish(s.clone()).unwrap();
    }
    let h = start(store);
    let mut c = Client::connect(h.addr()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let qs: Vec<Quadruple> = (0..10_000).map(|_| {
        let v = rng.gen_range(1..=3);
        random_quad(&mut rng, v)
    }).collect();
    let r = c.lookup(&qs).unwrap();
    assert_eq!(r.entries.len(), qs.len());
    for (q, e) in qs.iter().zip(&r.entries) {
        let (mask, want) = offline(&snaps[q.version as usize - 1], q);
        assert_eq!(e.found, mask, "{q:?}");
        assert_eq!(bits(&e.values), bits(&want), "{q:?}");
    }
}

#[test]
fn unknown_user_keeps_item_slot() {
    let store = VersionStore::default();
    store.publish(tagged_snapshot(1)).unwrap();
    let r = store.lookup_batch(&[Quadruple { user: 999, item: 2, category: 0, version: 1 }]);
    let e = &r.entries[0];
    assert_eq!(e.found, FOUND_ITEM);
    assert_eq!(e.values[..3], [0.0; 3]);
    assert_eq!(e.values[3..6], [1.0, -2.0, 1.0 / 4.0]);
    assert_eq!(e.values[6..], [0.0; 5]);
}

#[test]
fn large_batch_keeps_request_order() {
    let store = Arc::new(VersionStore::default());
    store.publish(tagged_snapshot(1)).unwrap();
    let h = start(store);
    let mut c = Client::connect(h.addr()).unwrap();
    let qs: Vec<Quadruple> = (0..1000).map(|k| Quadruple { user: k % USERS, item: k % ITEMS, category: 0, version: 1 }).collect();
    let r = c.lookup(&qs).unwrap();
    assert_eq!(r.entries.len(), 1000);
    for (k, e) in r.entries.iter().enumerate() {
        assert_eq!(e.values[1], (k as u64 % USERS) as f32);
        assert_eq!(e.values[4], -((k as u64 % ITEMS) as f32));
    }
}

#[test]
fn readers_see_one_snapshot_per_response_during_publishes() {
    const READERS: usize = 8;
    const BATCHES: usize = 125;
    const BATCH: usize = 100;
    let store = Arc::new(VersionStore::default());
    for v in 1..=3 {
        store.publish(tagged_snapshot(v)).unwrap();
    }
    let h = start(store.clone());
    let oracle: Arc<Vec<KnowledgeSnapshot>> = Arc::new((0..=20).map(tagged_snapshot).collect());
    let violations = Arc::new(AtomicUsize::new(0));
    let lookups = Arc::new(AtomicUsize::new(0));
    let go = Arc::new(Barrier::new(READERS + 1));
    let readers: Vec<_> = (0..READERS)
        .map(|r| {
            let (oracle, violations, lookups, go) = (oracle.clone(), violations.clone(), lookups.clone(), go.clone());
            let addr = h.addr();
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                let mut c = Client::connect(addr).unwrap();
                go.wait();
                for b in 0..BATCHES {
                    // alternate between following the latest and pinned versions
                    let qs: Vec<Quadruple> = (0..BATCH)
                        .map(|_| {
                            let v = if b % 2 == 0 { VERSION_LATEST } else { rng.gen_range(1..=20) };
                            random_quad(&mut rng, v)
                        })
                        .collect();
                    let resp = c.lookup(&qs).unwrap();
                    let mut seen_latest = None;
                    for (q, e) in qs.iter().zip(&resp.entries) {
                        lookups.fetch_add(1, Ordering::Relaxed);
                        if e.status == EntryStatus::VersionGone {
                            if q.version == VERSION_LATEST {
                                violations.fetch_add(1, Ordering::Relaxed);
                            }
                            continue;
                        }
                        let v = if q.version != VERSION_LATEST {
                            q.version
                        } else if e.found & FOUND_USER != 0 {
                            e.values[0] as u32
                        } else if e.found & FOUND_ITEM != 0 {
                            e.values[3] as u32
                        } else {
                            // nothing found: all zeros under every version
                            if e.values.iter().any(|&x| x != 0.0) {
                                violations.fetch_add(1, Ordering::Relaxed);
                            }
                            continue;
                        };
                        if q.version == VERSION_LATEST && *seen_latest.get_or_insert(v) != v {
                            violations.fetch_add(1, Ordering::Relaxed);
                        }
                        if v as usize >= oracle.len() {
                            violations.fetch_add(1, Ordering::Relaxed);
                            continue;
                        }
                        let (mask, want) = offline(&oracle[v as usize], q);
                        if e.found != mask || bits(&e.values) != bits(&want) {
                            violations.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            })
        })
        .collect();
    go.wait();
    for v in 4..=20 {
        store.publish(tagged_snapshot(v)).unwrap();
        thread::yield_now();
    }
    for r in readers {
        r.join().unwrap();
    }
    assert_eq!(lookups.load(Ordering::Relaxed), READERS * BATCHES * BATCH);
    assert_eq!(violations.load(Ordering::Relaxed), 0);
    assert_eq!(store.versions(), vec![16, 17, 18, 19, 20]);
}

#[test]
fn oversized_frame_gets_protocol_error_then_close() {
    let h = start(Arc::new(VersionStore::default()));
    let mut s = TcpStream::connect(h.addr()).unwrap();
    let mut frame = encode_frame(&Frame::LookupRequest(vec![]));
    frame[5..9].copy_from_slice(&(MAX_PAYLOAD as u32 + 1).to_le_bytes());
    s.write_all(&frame[..HEADER_LEN]).unwrap();
    match read_frame(&mut s).unwrap() {
        Some(Frame::Error { code, .. }) => assert_eq!(code, ERROR_PROTOCOL),
        other => panic!("expected an error frame, got {other:?}"),
    }
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
}

#[test]
fn publish_notice_loads_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    for v in [1, 2] {
        tagged_snapshot(v).write(&dir.path().join(KnowledgeSnapshot::file_name(v))).unwrap();
    }
    let store = Arc::new(VersionStore::default());
    let h = Server::bind("127.0.0.1:0", store.clone(), Some(dir.path().to_path_buf())).unwrap().spawn().unwrap();
    let mut c = Client::connect(h.addr()).unwrap();
    assert_eq!(c.publish(1).unwrap(), 1);
    assert_eq!(c.publish(2).unwrap(), 2);
    assert!(c.publish(2).is_err());
    assert!(c.publish(9).is_err());
    // the connection survives rejected publishes
    assert_eq!(c.lookup(&[Quadruple { user: 0, item: 0, category: 0, version: 2 }]).unwrap().entries[0].values[0], 2.0);
    assert_eq!(store.versions(), vec![1, 2]);
}

#[test]
fn load_dir_keeps_newest() {
    let dir = tempfile::tempdir().unwrap();
    for v in 1..=7 {
        tagged_snapshot(v).write(&dir.path().join(KnowledgeSnapshot::file_name(v))).unwrap();
    }
    let store = VersionStore::default();
    assert_eq!(store.load_dir(dir.path()).unwrap(), vec![3, 4, 5, 6, 7]);
}

#[test]
fn codec_round_trip_matches_bytes() {
    let f = Frame::Error { code: 2, message: "nope ✗".into() };
    let b = encode_frame(&f);
    assert_eq!(decode_frame(&b).unwrap(), f);
}
