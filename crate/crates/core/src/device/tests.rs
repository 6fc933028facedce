use proptest::prelude::*;

use super::*;
use crate::isa::{gen_act, gen_pre, gen_rd, gen_wr};

const CLK_PS: u64 = 2500;

fn small_geometry() -> DeviceGeometry {
    DeviceGeometry::new(2, 64, 16, 8).unwrap()
}

fn device_at(temperature: f64) -> Device {
    build_device(
        small_geometry(),
        ModuleProfile::preset("A").unwrap(),
        temperature,
        17,
    )
    .unwrap()
}

fn tick(dev: &mut Device, cycles: u64) {
    let t = dev.now_ps() + cycles * CLK_PS;
    dev.set_time_ps(t).unwrap();
}

fn write_row(dev: &mut Device, bank: u32, row: u32, pattern: u8) {
    dev.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    for col in 0..dev.geometry().num_columns {
        tick(dev, 1);
        dev.step_command(&gen_wr(bank, col, pattern).unwrap(), IssueContext::default())
            .unwrap();
    }
    tick(dev, 1);
    dev.step_command(&gen_pre(bank).unwrap(), IssueContext::default())
        .unwrap();
}

fn read_row_with(dev: &mut Device, bank: u32, row: u32, trcd: Option<u64>) -> Vec<u8> {
    dev.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    let mut out = Vec::new();
    for col in 0..dev.geometry().num_columns {
        tick(dev, 1);
        let ctx = IssueContext {
            trcd_used: trcd,
            tras_used: None,
        };
        let o = dev.step_command(&gen_rd(bank, col).unwrap(), ctx).unwrap();
        assert_eq!(o.fault, None);
        out.extend(o.data.unwrap());
    }
    tick(dev, 1);
    dev.step_command(&gen_pre(bank).unwrap(), IssueContext::default())
        .unwrap();
    out
}

fn read_row(dev: &mut Device, bank: u32, row: u32) -> Vec<u8> {
    read_row_with(dev, bank, row, None)
}

fn advance_ms(dev: &mut Device, ms: f64) {
    let t = dev.now_ps() + (ms * PS_PER_MS as f64) as u64;
    dev.set_time_ps(t).unwrap();
}

fn weakest_cells(dev: &Device, bank: u32, row: u32, n: usize) -> Vec<Cell> {
    let mut v = Vec::new();
    dev.cells()
        .for_each_below(bank, row, f64::INFINITY, |c| {
            if v.len() < n {
                v.push(c)
            }
        });
    v
}

fn charged_pattern(dev: &Device, bank: u32, row: u32, bit: u32) -> u8 {
    if dev.cells().is_true_cell(bank, row, bit) {
        0xFF
    } else {
        0x00
    }
}

#[test]
fn single_cell_oracle() {
    // Interval halfway between the two weakest cells: exactly one cell lost.
    let mut dev = device_at(50.0);
    let (bank, row) = (1, 9);
    let w = weakest_cells(&dev, bank, row, 2);
    let interval = (w[0].retention_ms + w[1].retention_ms) / 2.0;
    for (pattern, expect) in [
        (charged_pattern(&dev, bank, row, w[0].bit), 1),
        (!charged_pattern(&dev, bank, row, w[0].bit), 0),
    ] {
        let mut d = dev.fresh();
        write_row(&mut d, bank, row, pattern);
        advance_ms(&mut d, interval);
        let got = read_row(&mut d, bank, row);
        let expected = vec![pattern; got.len()];
        assert_eq!(count_erroneous_bytes(&expected, &got).unwrap(), expect);
        if expect == 1 {
            let byte = (w[0].bit / 8) as usize;
            assert_eq!(got[byte] ^ pattern, 1 << (w[0].bit % 8));
        }
    }
    // Just below the weakest cell nothing fails.
    let pattern = charged_pattern(&dev, bank, row, w[0].bit);
    write_row(&mut dev, bank, row, pattern);
    advance_ms(&mut dev, w[0].retention_ms * 0.99);
    let got = read_row(&mut dev, bank, row);
    assert_eq!(count_erroneous_bytes(&vec![pattern; got.len()], &got).unwrap(), 0);
}

#[test]
fn temperature_halves_retention() {
    let base = device_at(50.0);
    let (bank, row) = (0, 3);
    let w = weakest_cells(&base, bank, row, 1)[0];
    let pattern = charged_pattern(&base, bank, row, w.bit);
    let hot = build_device(
        small_geometry(),
        ModuleProfile::preset("A").unwrap(),
        60.0,
        17,
    )
    .unwrap();
    let eff = effective_retention(w.retention_ms, 60.0, 1.0, hot.profile());
    assert!((eff - w.retention_ms / 2.0).abs() < 1e-9);
    for (factor, lost) in [(0.98, false), (1.02, true)] {
        let mut d = hot.fresh();
        write_row(&mut d, bank, row, pattern);
        advance_ms(&mut d, eff * factor);
        let got = read_row(&mut d, bank, row);
        let byte = (w.bit / 8) as usize;
        assert_eq!(got[byte] != pattern, lost, "factor {factor}");
    }
}

#[test]
fn loss_is_destructive_until_rewritten() {
    let mut dev = device_at(50.0);
    let (bank, row) = (0, 0);
    let w = weakest_cells(&dev, bank, row, 1)[0];
    let pattern = charged_pattern(&dev, bank, row, w.bit);
    write_row(&mut dev, bank, row, pattern);
    advance_ms(&mut dev, w.retention_ms * 1.5);
    let first = read_row(&mut dev, bank, row);
    // The read restored the row, but the lost value stays lost.
    tick(&mut dev, 100);
    let second = read_row(&mut dev, bank, row);
    assert_eq!(first, second);
    assert_ne!(first, vec![pattern; first.len()]);
    write_row(&mut dev, bank, row, pattern);
    tick(&mut dev, 100);
    assert_eq!(read_row(&mut dev, bank, row), vec![pattern; first.len()]);
}

#[test]
fn lost_cells_read_their_discharged_value() {
    let mut dev = device_at(50.0);
    let (bank, row) = (1, 1);
    write_row(&mut dev, bank, row, 0xFF);
    // Far beyond every cell's retention.
    advance_ms(&mut dev, 1e9);
    let got = read_row(&mut dev, bank, row);
    let bytes = dev.geometry().row_bytes();
    assert_eq!(got, dev.cells().discharged_bytes(bank, row, 0..bytes));
}

#[test]
fn short_tras_reduces_restore_level() {
    let mut dev = device_at(50.0);
    let (bank, row) = (0, 5);
    let min = dev.profile().min_safe_tras as u64;
    write_row(&mut dev, bank, row, 0xAA);
    dev.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    tick(&mut dev, min - 1);
    let ctx = IssueContext {
        trcd_used: None,
        tras_used: Some(min - 1),
    };
    dev.step_command(&gen_pre(bank).unwrap(), ctx).unwrap();
    let level = dev.restore_level(bank, row).unwrap();
    assert!((level - (min - 1) as f64 / min as f64).abs() < 1e-12);

    // A full-tRAS activation restores completely.
    dev.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    tick(&mut dev, min);
    let ctx = IssueContext {
        trcd_used: None,
        tras_used: Some(min + 3),
    };
    dev.step_command(&gen_pre(bank).unwrap(), ctx).unwrap();
    assert_eq!(dev.restore_level(bank, row).unwrap(), 1.0);
}

#[test]
fn partial_restore_shortens_retention() {
    let base = device_at(50.0);
    let (bank, row) = (1, 20);
    let min = base.profile().min_safe_tras as u64;
    let level = (min - 1) as f64 / min as f64;
    let w = weakest_cells(&base, bank, row, 1)[0];
    let pattern = charged_pattern(&base, bank, row, w.bit);
    let interval = w.retention_ms * (level + 1.0) / 2.0;
    for (tras, lost) in [(min, false), (min - 1, true)] {
        let mut d = base.fresh();
        write_row(&mut d, bank, row, pattern);
        d.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
            .unwrap();
        tick(&mut d, tras);
        let ctx = IssueContext {
            trcd_used: None,
            tras_used: Some(tras),
        };
        d.step_command(&gen_pre(bank).unwrap(), ctx).unwrap();
        advance_ms(&mut d, interval);
        let got = read_row(&mut d, bank, row);
        assert_eq!(got[(w.bit / 8) as usize] != pattern, lost, "tras {tras}");
    }
}

#[test]
fn tras_below_two_corrupts_row() {
    let mut dev = device_at(50.0);
    let (bank, row) = (0, 7);
    write_row(&mut dev, bank, row, 0x5A);
    dev.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    tick(&mut dev, 1);
    let ctx = IssueContext {
        trcd_used: None,
        tras_used: Some(1),
    };
    dev.step_command(&gen_pre(bank).unwrap(), ctx).unwrap();
    tick(&mut dev, 10);
    let got = read_row(&mut dev, bank, row);
    let bytes = dev.geometry().row_bytes();
    assert_eq!(got, dev.cells().discharged_bytes(bank, row, 0..bytes));
}

#[test]
fn trcd_regions() {
    let base = build_device(small_geometry(), ModuleProfile::preset("C").unwrap(), 80.0, 17).unwrap();
    let (bank, row) = (0, 11);
    let p = base.profile().clone();
    let min = p.min_safe_trcd as u64;
    let scale = p.retention_scale(80.0);
    // Just short of the first retention failure in the row.
    let interval = 0.9 * weakest_cells(&base, bank, row, 1)[0].retention_ms * scale;
    let run = |trcd: u64, pattern: u8| {
        let mut d = base.fresh();
        write_row(&mut d, bank, row, pattern);
        advance_ms(&mut d, interval);
        read_row_with(&mut d, bank, row, Some(trcd))
    };
    for pattern in [0x00, 0xFF, 0xAA] {
        let n = base.geometry().row_bytes();
        let expected = vec![pattern; n];
        assert_eq!(run(min, pattern), expected);
        assert_eq!(run(min + 1, pattern), expected);
        let all_wrong = run(min - 2, pattern);
        assert!(all_wrong.iter().all(|&b| b == !pattern));

        // Marginal: cells holding less than q0 of their charge misread.
        let decay = interval / scale;
        let threshold = decay / (1.0 - p.marginal_charge_threshold);
        let mut oracle = expected.clone();
        base.cells().for_each_below(bank, row, threshold, |c| {
            oracle[(c.bit / 8) as usize] ^= 1 << (c.bit % 8);
        });
        assert_ne!(oracle, expected);
        assert_eq!(run(min - 1, pattern), oracle, "pattern {pattern:#x}");
    }
}

#[test]
fn full_threshold_profile_fails_every_byte_below_min() {
    let base = device_at(80.0);
    let min = base.profile().min_safe_trcd as u64;
    assert_eq!(base.profile().marginal_charge_threshold, 1.0);
    for interval in [0.001, 64.0, 5000.0] {
        let mut d = base.fresh();
        write_row(&mut d, 1, 4, 0x55);
        advance_ms(&mut d, interval);
        let got = read_row_with(&mut d, 1, 4, Some(min - 1));
        let expected = vec![0x55; got.len()];
        assert_eq!(count_erroneous_bytes(&expected, &got).unwrap(), got.len());
    }
}

#[test]
fn marginal_errors_include_safe_errors() {
    // Long interval: some cells are lost outright. The marginal read keeps
    // those errors and adds more.
    let base = build_device(small_geometry(), ModuleProfile::preset("C").unwrap(), 80.0, 5).unwrap();
    let min = base.profile().min_safe_trcd as u64;
    for pattern in [0x00, 0xFF, 0x5A] {
        let read = |trcd| {
            let mut d = base.fresh();
            write_row(&mut d, 0, 30, pattern);
            advance_ms(&mut d, 700.0);
            read_row_with(&mut d, 0, 30, Some(trcd))
        };
        let safe = read(min);
        let marginal = read(min - 1);
        let mut extra = 0;
        for (s, m) in safe.iter().zip(&marginal) {
            let (se, me) = (s ^ pattern, m ^ pattern);
            assert_eq!(se & me, se);
            extra += (me & !se).count_ones();
        }
        assert!(extra > 0);
        assert!(safe.iter().any(|&b| b != pattern));
    }
}

#[test]
fn marginal_read_ignores_columns_written_after_act() {
    let base = device_at(80.0);
    let (bank, row) = (1, 2);
    let min = base.profile().min_safe_trcd as u64;
    let mut d = base.fresh();
    write_row(&mut d, bank, row, 0xFF);
    advance_ms(&mut d, 1e6);
    d.step_command(&gen_act(bank, row).unwrap(), IssueContext::default())
        .unwrap();
    tick(&mut d, 1);
    d.step_command(&gen_wr(bank, 0, 0x3C).unwrap(), IssueContext::default())
        .unwrap();
    let ctx = IssueContext {
        trcd_used: Some(min - 1),
        tras_used: None,
    };
    let o = d.step_command(&gen_rd(bank, 0).unwrap(), ctx).unwrap();
    assert_eq!(o.data.unwrap(), vec![0x3C; 8]);
}

#[test]
fn protocol_faults() {
    let mut dev = device_at(50.0);
    let ctx = IssueContext::default();
    let o = dev.step_command(&gen_rd(0, 0).unwrap(), ctx).unwrap();
    assert_eq!(o.fault, Some(ProtocolFault::ColumnOnIdleBank));
    assert_eq!(o.data.unwrap(), dev.cells().discharged_bytes(0, 0, 0..8));
    let o = dev.step_command(&gen_wr(0, 0, 1).unwrap(), ctx).unwrap();
    assert_eq!(o.fault, Some(ProtocolFault::ColumnOnIdleBank));
    dev.step_command(&gen_act(0, 3).unwrap(), ctx).unwrap();
    let o = dev.step_command(&gen_act(0, 4).unwrap(), ctx).unwrap();
    assert_eq!(o.fault, Some(ProtocolFault::ActOnActiveBank));
    assert_eq!(dev.open_row(0), Some(3));
    dev.step_command(&gen_pre(0).unwrap(), ctx).unwrap();
    assert_eq!(
        dev.step_command(&gen_pre(0).unwrap(), ctx).unwrap(),
        CommandOutcome::default()
    );
    assert!(matches!(
        dev.step_command(&Instruction::End, ctx),
        Err(DeviceError::NotACommand(_))
    ));
    assert!(matches!(
        dev.step_command(&gen_act(2, 0).unwrap(), ctx),
        Err(DeviceError::Geometry(_))
    ));
}

#[test]
fn construction_errors() {
    let p = ModuleProfile::preset("A").unwrap();
    assert!(matches!(
        build_device(small_geometry(), p.clone(), 121.0, 0),
        Err(DeviceError::Temperature(_))
    ));
    assert!(matches!(
        build_device(small_geometry(), p.clone(), -1.0, 0),
        Err(DeviceError::Temperature(_))
    ));
    let bad = ModuleProfile {
        min_safe_trcd: 0,
        ..p
    };
    assert!(matches!(
        build_device(small_geometry(), bad, 50.0, 0),
        Err(DeviceError::Profile(_))
    ));
    let mut dev = device_at(50.0);
    dev.set_time_ps(10).unwrap();
    assert!(matches!(
        dev.set_time_ps(5),
        Err(DeviceError::TimeReversed { .. })
    ));
    assert!(count_erroneous_bytes(&[1, 2], &[1]).is_err());
    assert_eq!(count_erroneous_bytes(&[1, 2, 3], &[1, 0, 0]).unwrap(), 2);
}

#[test]
fn ref_restores_round_robin_and_skips_open_rows() {
    let g = DeviceGeometry::new(2, 16384, 4, 8).unwrap();
    let mut dev = build_device(g, ModuleProfile::preset("A").unwrap(), 50.0, 1).unwrap();
    dev.step_command(&gen_act(1, 1).unwrap(), IssueContext::default())
        .unwrap();
    dev.set_time_ps(1_000_000).unwrap();
    dev.step_command(&Instruction::Ref, IssueContext::default())
        .unwrap();
    // Two rows per slot with 16384 rows.
    for (bank, row, refreshed) in [(0, 0, true), (0, 1, true), (0, 2, false), (1, 0, true), (1, 1, false)] {
        let e = dev.elapsed_since_restore_ms(bank, row).unwrap();
        assert_eq!(e == 0.0, refreshed, "bank {bank} row {row}");
    }
    dev.step_command(&Instruction::Ref, IssueContext::default())
        .unwrap();
    assert_eq!(dev.elapsed_since_restore_ms(0, 2).unwrap(), 0.0);
}

#[test]
fn fresh_device_shares_cells_but_not_state() {
    let mut dev = device_at(50.0);
    write_row(&mut dev, 0, 0, 0xEE);
    let fresh = dev.fresh();
    assert!(Arc::ptr_eq(dev.cells(), fresh.cells()));
    assert_eq!(fresh.now_ps(), 0);
    let mut fresh = fresh;
    let ground = fresh.cells().discharged_bytes(0, 0, 0..128);
    assert_eq!(fresh.stored_row(0, 0).unwrap(), ground);
}

fn row_snapshot(dev: &Device) -> Vec<(u64, u64, u64)> {
    dev.rows
        .iter()
        .map(|r| {
            (
                r.last_restore_ps,
                r.restore_level.to_bits(),
                r.pending_loss_ms.to_bits(),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_refresh_matches_stepwise(
        preissued in 0u32..8192,
        count in 0u64..20_000,
        period in 1u64..5_000_000,
        rows in 1u32..40,
        setup in proptest::collection::vec((0u32..40, 1u64..10, 0u64..1_000_000), 0..8),
    ) {
        let g = DeviceGeometry::new(2, rows.max(1) * 300, 1, 1).unwrap();
        let mut dev = build_device(g, ModuleProfile::preset("B").unwrap(), 85.0, 3).unwrap();
        // Irregular starting state: partial restores at assorted times.
        for (row, tras, at) in setup {
            let row = row % g.num_rows;
            let t = dev.now_ps() + at;
            dev.set_time_ps(t).unwrap();
            dev.step_command(&gen_act(0, row).unwrap(), IssueContext::default()).unwrap();
            let ctx = IssueContext { trcd_used: None, tras_used: Some(tras) };
            dev.step_command(&gen_pre(0).unwrap(), ctx).unwrap();
        }
        dev.step_command(&gen_act(1, 0).unwrap(), IssueContext::default()).unwrap();
        dev.refresh_slot = preissued;
        let first = dev.now_ps() + 7;

        let mut stepped = dev.clone();
        for k in 0..count {
            stepped.set_time_ps(first + k * period).unwrap();
            stepped.step_command(&Instruction::Ref, IssueContext::default()).unwrap();
        }
        let mut analytic = dev.clone();
        analytic.apply_periodic_refresh(first, period, count);

        prop_assert_eq!(stepped.refresh_slot, analytic.refresh_slot);
        prop_assert!(row_snapshot(&stepped) == row_snapshot(&analytic));
    }

    #[test]
    fn pattern_symmetry(seed in 0u64..1000, row in 0u32..64, ms in 100.0f64..200_000.0) {
        // Complementary patterns fail on disjoint cell sets whose union is
        // every cell below the interval.
        let dev = build_device(small_geometry(), ModuleProfile::preset("C").unwrap(), 50.0, seed).unwrap();
        let mut lost = Vec::new();
        for pattern in [0x00u8, 0xFF] {
            let mut d = dev.fresh();
            write_row(&mut d, 0, row, pattern);
            advance_ms(&mut d, ms);
            let got = read_row(&mut d, 0, row);
            let bits: u32 = got.iter().map(|b| (b ^ pattern).count_ones()).sum();
            lost.push(bits);
        }
        let total = dev.cells().count_below(0, row, ms);
        prop_assert_eq!(lost[0] as usize + lost[1] as usize, total);
    }
}
