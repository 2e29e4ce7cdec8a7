use kavguard::kav_store::{read_kav, write_kav, KavReader};
use kavguard::KavDataset;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = KavDataset> {
    (1u32..6, 1u32..5, any::<bool>()).prop_flat_map(|(dim, classes, logits)| {
        let record = (
            prop::option::of(0..classes),
            prop::collection::vec(any::<f32>(), classes as usize),
            prop::collection::vec(any::<f32>(), dim as usize),
        );
        prop::collection::vec(record, 0..20).prop_map(move |rows| {
            let mut d = KavDataset::new(dim, classes, logits).unwrap();
            for (label, l, kav) in rows {
                d.push(label, logits.then_some(l), kav).unwrap();
            }
            d
        })
    })
}

/// Label, logit bits and kav bits of one record.
type RecordBits = (Option<u32>, Option<Vec<u32>>, Vec<u32>);

fn bits(d: &KavDataset) -> Vec<RecordBits> {
    d.records()
        .iter()
        .map(|r| {
            (
                r.label,
                r.logits
                    .as_ref()
                    .map(|l| l.iter().map(|v| v.to_bits()).collect()),
                r.kav.iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

proptest! {
    #[test]
    fn binary_round_trip_is_bit_exact(d in dataset()) {
        let mut buf = Vec::new();
        let n = write_kav(&d, &mut buf).unwrap();
        prop_assert_eq!(n, d.header().file_len());
        prop_assert_eq!(buf.len() as u64, n);
        let back = read_kav(&buf[..]).unwrap();
        prop_assert_eq!(back.header(), d.header());
        // NaN payloads compare by bits, not by value
        prop_assert_eq!(bits(&back), bits(&d));

        let mut again = Vec::new();
        write_kav(&back, &mut again).unwrap();
        prop_assert_eq!(&again, &buf);

        let streamed = KavReader::new(&buf[..]).unwrap().collect::<Result<Vec<_>, _>>().unwrap();
        prop_assert_eq!(streamed.len(), d.len());
    }
}
