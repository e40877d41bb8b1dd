use std::collections::BTreeMap;

use dzof_core::ingest::{
    aggregate_flows, filter_segmented, parse_scd, PlatformTable, RejectReason, ScdSchema, StudyWeek,
};

const PLATFORMS: &str = "platform_id,stop_id,lon,lat\n\
101,S1,116.30,39.90\n\
101,S2,116.30,39.90\n\
102,S3,116.31,39.91\n\
103,S4,116.32,39.92\n";

/// 10,000 data lines over three platforms with three corrupt lines at fixed
/// positions. Returns the text and the hand-tallied segmented counts keyed by
/// (platform, day, hour, direction).
type Tally = BTreeMap<(u32, usize, usize, char), u64>;

fn scd_text() -> (String, Tally, Vec<u64>) {
    let stops = [("S1", 101), ("S2", 101), ("S3", 102), ("S4", 103)];
    let mut text =
        String::from("card_id,timestamp,line_id,stop_id,direction,card_type,txn_seq,pricing\n");
    let mut tally = BTreeMap::new();
    let corrupt_at = [17usize, 4_242, 9_999];
    let mut corrupt_lines = Vec::new();
    for i in 0..10_000usize {
        let line_no = i as u64 + 2;
        if let Some(k) = corrupt_at.iter().position(|&c| c == i) {
            corrupt_lines.push(line_no);
            text.push_str(match k {
                0 => "c0,not-a-time,L1,S1,B,ordinary,1,seg\n",
                1 => "c0,2008-04-07 08:00,L1,S1,X,ordinary,1,seg\n",
                _ => "c0,2008-04-07 08:00,L1\n",
            });
            continue;
        }
        let (stop, pid) = stops[i % stops.len()];
        let day = (i / 7) % 7;
        let hour = (i * 13) % 24;
        let dir = if i % 5 < 3 { 'B' } else { 'A' };
        // Every fourth boarding is a one-ticket swipe, which the filter drops.
        let pricing = if dir == 'B' && i % 4 == 0 {
            "one"
        } else {
            "seg"
        };
        text.push_str(&format!(
            "c{i},2008-04-{:02} {hour:02}:{:02},L{},{stop},{dir},student,{i},{pricing}\n",
            7 + day,
            i % 60,
            i % 9
        ));
        if pricing == "seg" {
            *tally.entry((pid, day, hour, dir)).or_insert(0) += 1;
        }
    }
    (text, tally, corrupt_lines)
}

#[test]
fn ten_thousand_lines_with_three_corrupt() {
    let (text, tally, corrupt_lines) = scd_text();
    let week = StudyWeek::default();
    let out = parse_scd(text.as_bytes(), &ScdSchema::default(), &week).unwrap();
    assert_eq!(out.records.len(), 9_997);
    assert_eq!(
        out.rejects.iter().map(|r| r.line).collect::<Vec<_>>(),
        corrupt_lines
    );
    let counts = out.reject_counts();
    assert_eq!(counts[&RejectReason::BadTimestamp], 1);
    assert_eq!(counts[&RejectReason::BadDirection], 1);
    assert_eq!(counts[&RejectReason::MalformedLine], 1);

    let (kept, report) = filter_segmented(out.records);
    assert_eq!(report.retained + report.dropped, 9_997);
    let platforms = PlatformTable::from_csv(PLATFORMS.as_bytes()).unwrap();
    let (cube, agg) = aggregate_flows(&kept, &platforms, &week).unwrap();
    assert_eq!(agg.orphans, 0);

    for (p, pid) in platforms.ids().into_iter().enumerate() {
        for d in 0..7 {
            for h in 0..24 {
                let want = |dir| tally.get(&(pid, d, h, dir)).copied().unwrap_or(0);
                assert_eq!(cube.inflow(p, d, h), want('B'), "inflow {pid} d{d} h{h}");
                assert_eq!(cube.outflow(p, d, h), want('A'), "outflow {pid} d{d} h{h}");
            }
        }
    }
    let total: u64 = tally.values().sum();
    assert_eq!(cube.total_inflow() + cube.total_outflow(), total);
}

#[test]
fn stops_of_one_platform_are_merged() {
    let text = "card_id,timestamp,line_id,stop_id,direction,card_type,txn_seq,pricing\n\
        a,2008-04-07 08:10,L1,S1,B,ordinary,1,seg\n\
        b,2008-04-07 08:20,L2,S2,B,ordinary,2,seg\n\
        c,2008-04-07 08:30,L2,S9,B,ordinary,3,seg\n";
    let week = StudyWeek::default();
    let out = parse_scd(text.as_bytes(), &ScdSchema::default(), &week).unwrap();
    let platforms = PlatformTable::from_csv(PLATFORMS.as_bytes()).unwrap();
    let (cube, agg) = aggregate_flows(&out.records, &platforms, &week).unwrap();
    assert_eq!(cube.inflow(0, 0, 8), 2);
    assert_eq!(agg.orphans, 1);
}
