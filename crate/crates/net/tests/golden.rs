//! Bit-exact layout checks against fixtures produced by the independent
//! reference generator (`tests/data/gen_golden.py`).

use msight_net::v2x::{decode, encode, PerceptionMessage, WireVehicle};

const EMPTY: &[u8] = include_bytes!("data/empty.bin");
const TWO_VEHICLES: &[u8] = include_bytes!("data/two_vehicles.bin");

#[test]
fn empty_message_matches_the_reference_bytes() {
    let msg = PerceptionMessage {
        seq: 7,
        producer_ts_ms: 1_666_372_800_123,
        frame_ts_ms: 1_666_372_800_000,
        vehicles: vec![],
    };
    assert_eq!(encode(&msg).unwrap(), EMPTY);
}

#[test]
fn two_vehicle_message_matches_the_reference_bytes() {
    let msg = PerceptionMessage {
        seq: 42,
        producer_ts_ms: 1_666_372_800_455,
        frame_ts_ms: 1_666_372_800_400,
        vehicles: vec![
            WireVehicle {
                id: 11,
                class: 0,
                lat_deg: 42.2808100,
                lon_deg: -83.7430200,
                heading_deg: 123.4,
                speed_mps: 8.76,
                predicted: vec![(42.2808400, -83.7430000), (42.2808700, -83.7429800)],
            },
            WireVehicle {
                id: 12,
                class: 1,
                lat_deg: 42.2806500,
                lon_deg: -83.7432100,
                heading_deg: 271.05,
                speed_mps: 4.50,
                predicted: vec![(42.2806200, -83.7432400), (42.2805900, -83.7432700)],
            },
        ],
    };
    assert_eq!(encode(&msg).unwrap(), TWO_VEHICLES);
}

#[test]
fn reference_bytes_decode_to_the_expected_fields() {
    let msg = decode(TWO_VEHICLES).unwrap();
    assert_eq!(msg.seq, 42);
    assert_eq!(msg.vehicles.len(), 2);
    assert_eq!(msg.vehicles[0].id, 11);
    assert_eq!(msg.vehicles[1].class, 1);
    assert!((msg.vehicles[0].lat_deg - 42.2808100).abs() < 1e-7);
    assert!((msg.vehicles[1].speed_mps - 4.50).abs() < 0.01);
    assert_eq!(msg.vehicles[0].predicted.len(), 2);
}
