use keep_gkc::protocol::{decode_frame, encode_frame};
use keep_gkc::{EntryStatus, Frame, LookupEntry, LookupResponse, Quadruple};
use proptest::prelude::*;

fn quad() -> impl Strategy<Value = Quadruple> {
    (any::<u64>(), any::<u64>(), any::<u32>(), any::<u32>()).prop_map(|(user, item, category, version)| Quadruple {
        user,
        item,
        category,
        version,
    })
}

fn response() -> impl Strategy<Value = LookupResponse> {
    (0u32..6).prop_flat_map(|dim| {
        let entry = (any::<bool>(), 0u8..8, prop::collection::vec(any::<u32>(), dim as usize)).prop_map(|(gone, found, raw)| {
            LookupEntry {
                status: if gone { EntryStatus::VersionGone } else { EntryStatus::Ok },
                found,
                // arbitrary bit patterns, NaN payloads included
                values: raw.into_iter().map(f32::from_bits).collect(),
            }
        });
        prop::collection::vec(entry, 0..20).prop_map(move |entries| LookupResponse { dim, entries })
    })
}

fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        prop::collection::vec(quad(), 0..30).prop_map(Frame::LookupRequest),
        response().prop_map(Frame::LookupResponse),
        any::<u32>().prop_map(|version| Frame::PublishNotice { version }),
        (any::<u8>(), ".{0,40}").prop_map(|(code, message)| Frame::Error { code, message }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frames_round_trip_byte_identically(f in frame()) {
        let bytes = encode_frame(&f);
        let back = decode_frame(&bytes).unwrap();
        prop_assert_eq!(encode_frame(&back), bytes);
    }
}

proptest! {
    #[test]
    fn truncated_frames_are_rejected(f in frame(), cut in 1usize..64) {
        let bytes = encode_frame(&f);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_frame(&bytes[..keep]).is_err());
    }
}
