use std::collections::HashMap;

use mhcl_core::messages::{Kind, MalformedMessage};
use mhcl_core::{Body, Direction, HostAddress, MhclMessage, NodeId};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn arb_body() -> impl Strategy<Value = Body> {
    prop_oneof![
        (any::<u16>(), 1u16..).prop_map(|(f, s)| Body::Dio { first: HostAddress(f), size: s }),
        any::<u16>().prop_map(|a| Body::DioAck { acked_seq: a }),
        any::<u16>().prop_map(|c| Body::Dao { count: c }),
        any::<u16>().prop_map(|a| Body::DaoAck { acked_seq: a }),
        (any::<u16>(), any::<bool>()).prop_map(|(d, up)| Body::AppData {
            dest: HostAddress(d),
            direction: if up { Direction::Up } else { Direction::Down },
        }),
    ]
}

fn arb_msg() -> impl Strategy<Value = MhclMessage> {
    (any::<u16>(), any::<u16>(), any::<u16>(), arb_body()).prop_map(|(s, d, q, body)| MhclMessage {
        src: NodeId(s),
        dst: NodeId(d),
        seq: q,
        body,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip(m in arb_msg()) {
        let bytes = m.encode();
        prop_assert_eq!(bytes.len(), m.kind().encoded_len());
        prop_assert_eq!(MhclMessage::decode(&bytes), Ok(m));
    }

    #[test]
    fn distinct_messages_distinct_bytes(a in arb_msg(), b in arb_msg()) {
        prop_assert_eq!(a == b, a.encode() == b.encode());
    }

    #[test]
    fn truncation_is_rejected(m in arb_msg(), cut in any::<prop::sample::Index>()) {
        let bytes = m.encode();
        let n = cut.index(bytes.len());
        let is_truncated = matches!(MhclMessage::decode(&bytes[..n]), Err(MalformedMessage::Truncated { .. }));
        prop_assert!(is_truncated);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..16)) {
        if let Ok(m) = MhclMessage::decode(&bytes) {
            prop_assert_eq!(m.encode(), bytes);
        }
    }
}

#[test]
fn one_length_per_kind() {
    let mut seen: HashMap<Kind, usize> = HashMap::new();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..10_000 {
        let m = arb_msg().new_tree(&mut runner).unwrap().current();
        let len = m.encode().len();
        assert_eq!(*seen.entry(m.kind()).or_insert(len), len);
    }
    assert_eq!(seen.len(), 5);
}
