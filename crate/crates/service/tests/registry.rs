use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use stallwatch_service::registry::{Registry, RegistryError, StallStatus, Summary};
use stallwatch_service::{BBox, CameraConfig};
use url::Url;

fn cam(id: &str, lot: &str) -> CameraConfig {
    CameraConfig::new(id, lot, Url::parse("http://127.0.0.1:1/snapshot").unwrap())
}

fn seeded(stalls: u32) -> Registry {
    let r = Registry::open_in_memory().unwrap();
    r.upsert_lot("A", "Lot A").unwrap();
    r.upsert_camera(&cam("c1", "A")).unwrap();
    for id in (1..=stalls).rev() {
        r.upsert_stall("A", id, BBox::new(id * 10, 0, 8, 8), "c1")
            .unwrap();
    }
    r
}

#[test]
fn lot_status_is_ordered_and_blob_free_by_default() {
    let r = seeded(3);
    r.record_observation("A", 2, vec![7; 20], 0.8, Utc::now())
        .unwrap();
    let stalls = r.lot_status("A", false).unwrap();
    assert_eq!(
        stalls.iter().map(|s| s.stall_id).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    assert!(stalls.iter().all(|s| s.blob.is_empty()));
    let with = r.lot_status("A", true).unwrap();
    assert_eq!(with[1].blob, vec![7; 20]);
}

#[test]
fn empty_lot_has_empty_status_and_zero_summary() {
    let r = Registry::open_in_memory().unwrap();
    r.upsert_lot("E", "empty").unwrap();
    assert!(r.lot_status("E", false).unwrap().is_empty());
    assert_eq!(
        r.summary("E").unwrap(),
        Summary {
            free: 0,
            total: 0,
            unknown: 0
        }
    );
}

#[test]
fn summary_counts_mixed_statuses() {
    let r = seeded(3);
    r.record_observation("A", 1, vec![], 0.1, Utc::now())
        .unwrap();
    r.record_observation("A", 2, vec![], 0.9, Utc::now())
        .unwrap();
    assert_eq!(
        r.summary("A").unwrap(),
        Summary {
            free: 1,
            total: 3,
            unknown: 1
        }
    );
}

#[test]
fn all_vacant_means_free_equals_total() {
    let r = seeded(4);
    for id in 1..=4 {
        r.record_observation("A", id, vec![], 0.0, Utc::now())
            .unwrap();
    }
    let s = r.summary("A").unwrap();
    assert_eq!(s.free, s.total);
}

#[test]
fn upsert_twice_keeps_one_row_with_second_bbox() {
    let r = seeded(0);
    r.upsert_stall("A", 5, BBox::new(0, 0, 4, 4), "c1").unwrap();
    r.upsert_stall("A", 5, BBox::new(2, 3, 6, 7), "c1").unwrap();
    let all = r.lot_status("A", false).unwrap();
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].bbox, BBox::new(2, 3, 6, 7));
}

#[test]
fn validation_and_not_found_errors() {
    let r = seeded(1);
    assert!(matches!(
        r.upsert_stall("A", 2, BBox::new(0, 0, 0, 4), "c1"),
        Err(RegistryError::InvalidBbox(_))
    ));
    assert!(matches!(
        r.upsert_stall("Z", 2, BBox::new(0, 0, 4, 4), "c1"),
        Err(RegistryError::LotNotFound(_))
    ));
    assert!(matches!(
        r.record_observation("A", 99, vec![], 0.5, Utc::now()),
        Err(RegistryError::StallNotFound { stall_id: 99, .. })
    ));
    assert!(matches!(r.summary("Z"), Err(RegistryError::LotNotFound(_))));
    assert!(matches!(
        r.lot_status("Z", false),
        Err(RegistryError::LotNotFound(_))
    ));
    assert!(matches!(
        r.upsert_stall("A", 3, BBox::new(0, 0, 4, 4), "nope"),
        Err(RegistryError::CameraNotFound(_))
    ));
}

#[test]
fn latest_observation_wins() {
    let r = seeded(1);
    let t0 = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
    r.record_observation("A", 1, vec![1, 1], 0.9, t0).unwrap();
    let s = r
        .record_observation("A", 1, vec![2, 2, 2], 0.2, t0 + Duration::seconds(10))
        .unwrap();
    assert_eq!(s.status, StallStatus::Vacant);
    assert_eq!(s.blob, vec![2, 2, 2]);
    assert_eq!(s.updated_at, t0 + Duration::seconds(10));
}

#[test]
fn round_trip_is_field_identical() {
    let r = seeded(1);
    let blob: Vec<u8> = (0..=255).collect();
    let t = Utc.with_ymd_and_hms(2024, 1, 2, 3, 4, 5).unwrap() + Duration::microseconds(678_901);
    let written = r.record_observation("A", 1, blob.clone(), 0.75, t).unwrap();
    let read = r.get_stall("A", 1, true).unwrap();
    assert_eq!(written, read);
    assert_eq!(read.blob, blob);
    assert_eq!(read.updated_at, t);
}

#[test]
fn records_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let t = Utc.with_ymd_and_hms(2024, 1, 2, 3, 4, 5).unwrap();
    {
        let r = Registry::open_dir(dir.path()).unwrap();
        r.upsert_lot("A", "Lot A").unwrap();
        r.upsert_camera(&cam("c1", "A")).unwrap();
        r.upsert_stall("A", 1, BBox::new(1, 2, 3, 4), "c1").unwrap();
        r.record_observation("A", 1, vec![9, 8, 7], 0.9, t).unwrap();
    }
    let r = Registry::open_dir(dir.path()).unwrap();
    let s = r.get_stall("A", 1, true).unwrap();
    assert_eq!(s.status, StallStatus::Occupied);
    assert_eq!(s.blob, vec![9, 8, 7]);
    assert_eq!(s.updated_at, t);
    assert_eq!(r.list_cameras().unwrap(), vec![cam("c1", "A")]);
    assert_eq!(r.list_lots().unwrap()[0].camera_ids, vec!["c1".to_string()]);
}

#[test]
fn stale_marks_only_old_observations_of_that_camera() {
    let r = seeded(2);
    r.upsert_camera(&cam("c2", "A")).unwrap();
    r.upsert_stall("A", 3, BBox::new(0, 0, 4, 4), "c2").unwrap();
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    r.record_observation("A", 1, vec![], 0.9, t0).unwrap();
    r.record_observation("A", 2, vec![], 0.9, t0 + Duration::seconds(20))
        .unwrap();
    r.record_observation("A", 3, vec![], 0.9, t0).unwrap();
    let n = r
        .mark_stale("c1", t0 + Duration::seconds(10), t0 + Duration::seconds(40))
        .unwrap();
    assert_eq!(n, 1);
    let s = r.lot_status("A", false).unwrap();
    assert_eq!(
        s.iter().map(|x| x.status).collect::<Vec<_>>(),
        vec![
            StallStatus::Unknown,
            StallStatus::Occupied,
            StallStatus::Occupied
        ]
    );
}

#[test]
fn delete_removes_stall() {
    let r = seeded(2);
    r.delete_stall("A", 1).unwrap();
    assert_eq!(r.lot_status("A", false).unwrap().len(), 1);
    assert!(matches!(
        r.delete_stall("A", 1),
        Err(RegistryError::StallNotFound { .. })
    ));
}

proptest! {
    #[test]
    fn summary_partitions_total(probs in prop::collection::vec(prop::option::of(0.0f32..=1.0), 0..30)) {
        let r = seeded(probs.len() as u32);
        for (i, p) in probs.iter().enumerate() {
            if let Some(p) = p {
                r.record_observation("A", i as u32 + 1, vec![], *p, Utc::now()).unwrap();
            }
        }
        let s = r.summary("A").unwrap();
        let stalls = r.lot_status("A", false).unwrap();
        let occupied = stalls.iter().filter(|x| x.status == StallStatus::Occupied).count() as u32;
        prop_assert_eq!(s.free + occupied + s.unknown, s.total);
        prop_assert_eq!(s.total as usize, probs.len());
        let expected_free = probs.iter().filter(|p| matches!(p, Some(v) if *v < 0.5)).count() as u32;
        prop_assert_eq!(s.free, expected_free);
    }
}
